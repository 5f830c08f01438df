//! Seeded synthetic inputs with known ground truth.
//!
//! Every generator draws from its own ChaCha8 stream keyed by
//! `(plan.seed, stream id)`, so corpus, panel, migration, covariate and
//! annotation generation never share random state and a change to one plan
//! section leaves the others byte-identical. Corpus records each get their
//! own stream and are generated in parallel.
//!
//! Corpus text is slot-filled from a small vocabulary that contains no
//! country alias. Planted aliases are the only resolvable mentions; trap
//! sentences (masked phrases, demonyms, excluded territories, e-mail
//! addresses and copyright tails) must all come out empty.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_covariates, write_jsonl, AnnotationRecord, AuthorEntry, CorpusError, CountryYearCovariates, MigrationEvent,
    PublicationRecord, Taxonomy,
};
use crate::econo::{Panel, PanelObservation};
use crate::gazetteer::GazetteerSource;
use crate::iso3::Iso3;

const STREAM_PANEL: u64 = 2;
const STREAM_MIGRATION: u64 = 3;
const STREAM_ANNOTATIONS: u64 = 4;
const STREAM_COVARIATES: u64 = 5;
/// Record `i` of the corpus uses stream `STREAM_CORPUS_BASE + i`.
const STREAM_CORPUS_BASE: u64 = 1 << 32;

/// Generator for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------- plan

fn iso_list(codes: &[&str]) -> Vec<Iso3> {
    codes.iter().map(|c| Iso3::new(c).expect("static code")).collect()
}

/// Countries oversampled in plants and affiliations by default: the
/// treated groups and their regional controls.
pub const DEFAULT_FOCUS: [&str; 20] = [
    "EGY", "TUN", "LBY", "SYR", "YEM", "BHR", "JOR", "KWT", "MAR", "OMN", "DZA", "IRQ", "LBN", "SAU", "ARE", "QAT",
    "IRN", "ISR", "PSE", "TUR",
];

pub const DEFAULT_TRAP_PHRASES: [&str; 7] =
    ["US dollar", "Congo Red", "New Mexico", "Michael Jordan", "guinea pig", "New South Wales", "Hong Kong dollar"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPlan {
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusPlan,
    #[serde(default)]
    pub panel: PanelPlan,
    #[serde(default)]
    pub migration: MigrationPlan,
    #[serde(default)]
    pub annotations: AnnotationPlan,
}

/// Explicit entry of the mention plant table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantEntry {
    /// Record index, `0..n_publications`.
    pub record: usize,
    pub countries: BTreeSet<Iso3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapPlan {
    /// Share of records carrying at least one trap; trapped records are
    /// spread evenly so the realized count is exactly ⌊n·rate⌋.
    pub rate: f64,
    /// Phrases that the gazetteer masks.
    pub phrases: Vec<String>,
    pub copyright_tails: bool,
    pub demonyms: bool,
    pub excluded_territories: bool,
    pub emails: bool,
}

impl Default for TrapPlan {
    fn default() -> Self {
        TrapPlan {
            rate: 0.2,
            phrases: DEFAULT_TRAP_PHRASES.iter().map(|s| s.to_string()).collect(),
            copyright_tails: true,
            demonyms: true,
            excluded_territories: true,
            emails: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPlan {
    pub n_publications: usize,
    pub years: (i32, i32),
    /// Probability that a record without an explicit plant gets any.
    pub plant_rate: f64,
    pub max_plants: usize,
    pub focus: Vec<Iso3>,
    /// Probability that a drawn country comes from `focus`.
    pub focus_share: f64,
    pub plants: Vec<PlantEntry>,
    pub traps: TrapPlan,
    pub max_authors: usize,
    pub unaffiliated_rate: f64,
    pub funder_rate: f64,
    /// Share of records carrying topic keywords.
    pub topic_rate: f64,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        CorpusPlan {
            n_publications: 1000,
            years: (2002, 2019),
            plant_rate: 0.85,
            max_plants: 3,
            focus: iso_list(&DEFAULT_FOCUS),
            focus_share: 0.5,
            plants: Vec::new(),
            traps: TrapPlan::default(),
            max_authors: 4,
            unaffiliated_rate: 0.05,
            funder_rate: 0.3,
            topic_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupPlan {
    pub countries: usize,
    pub beta: f64,
    /// Differential linear trend, per year relative to the event year.
    pub trend: f64,
}

impl Default for GroupPlan {
    fn default() -> Self {
        GroupPlan { countries: 20, beta: 0.25, trend: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelPlan {
    pub years: (i32, i32),
    pub event_year: i32,
    pub groups: BTreeMap<String, GroupPlan>,
    pub n_controls: usize,
    pub noise_sd: f64,
    /// One coefficient per generated covariate.
    pub theta: Vec<f64>,
    pub country_effect_sd: f64,
    pub year_effect_sd: f64,
}

impl Default for PanelPlan {
    fn default() -> Self {
        PanelPlan {
            years: (2002, 2019),
            event_year: 2011,
            groups: BTreeMap::from([("GO".to_string(), GroupPlan::default())]),
            n_controls: 40,
            noise_sd: 0.1,
            theta: vec![0.3],
            country_effect_sd: 1.0,
            year_effect_sd: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPlan {
    pub origin: Iso3,
    pub destination: Iso3,
    pub from: i32,
    pub to: i32,
    pub per_year: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationPlan {
    pub scholars: usize,
    pub years: (i32, i32),
    /// Countries scholars move between; empty means the corpus focus list.
    pub pool: Vec<Iso3>,
    /// Planted deterministic flows on top of the random background.
    pub flows: Vec<FlowPlan>,
}

impl Default for MigrationPlan {
    fn default() -> Self {
        MigrationPlan { scholars: 300, years: (2002, 2019), pool: Vec::new(), flows: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationPlan {
    pub n: usize,
    /// Records where the second coder departs from the gold set.
    pub disagreements: usize,
}

impl Default for AnnotationPlan {
    fn default() -> Self {
        AnnotationPlan { n: 100, disagreements: 11 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid plan: {}", .0.join("; "))]
    Plan(Vec<String>),
    #[error("plan file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Largest synthetic panel grid (codes `QMA`..`QZZ`).
pub const MAX_PANEL_COUNTRIES: usize = 14 * 26;

impl SynthPlan {
    pub fn from_toml_str(text: &str) -> Result<SynthPlan, SynthError> {
        let plan: SynthPlan = toml::from_str(text)?;
        let problems = plan.problems();
        if problems.is_empty() {
            Ok(plan)
        } else {
            Err(SynthError::Plan(problems))
        }
    }

    pub fn from_path(path: &Path) -> Result<SynthPlan, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
        SynthPlan::from_toml_str(&text)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.corpus;
        if c.years.0 > c.years.1 {
            out.push(format!("corpus.years {:?} is reversed", c.years));
        }
        for (name, p) in [
            ("plant_rate", c.plant_rate),
            ("focus_share", c.focus_share),
            ("unaffiliated_rate", c.unaffiliated_rate),
            ("funder_rate", c.funder_rate),
            ("topic_rate", c.topic_rate),
            ("traps.rate", c.traps.rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("corpus.{name} = {p} is not a probability"));
            }
        }
        if c.max_authors == 0 {
            out.push("corpus.max_authors must be at least 1".into());
        }
        let mut seen = BTreeSet::new();
        for p in &c.plants {
            if p.record >= c.n_publications {
                out.push(format!("corpus.plants: record {} is outside 0..{}", p.record, c.n_publications));
            }
            if !seen.insert(p.record) {
                out.push(format!("corpus.plants: record {} listed twice", p.record));
            }
        }
        let pn = &self.panel;
        if pn.years.1 - pn.years.0 < 1 {
            out.push(format!("panel.years {:?} needs at least two periods", pn.years));
        }
        if !(pn.years.0 < pn.event_year && pn.event_year <= pn.years.1) {
            out.push(format!("panel.event_year {} must leave pre and post years inside {:?}", pn.event_year, pn.years));
        }
        if pn.groups.is_empty() {
            out.push("panel.groups is empty".into());
        }
        for (g, gp) in &pn.groups {
            if gp.countries < 2 {
                out.push(format!("panel.groups.{g} needs at least 2 countries"));
            }
        }
        if pn.n_controls < 2 {
            out.push("panel.n_controls must be at least 2".into());
        }
        let total = pn.n_controls + pn.groups.values().map(|g| g.countries).sum::<usize>();
        if total > MAX_PANEL_COUNTRIES {
            out.push(format!("panel grid of {total} countries exceeds {MAX_PANEL_COUNTRIES}"));
        }
        if !(pn.noise_sd >= 0.0 && pn.noise_sd.is_finite()) {
            out.push(format!("panel.noise_sd = {} must be finite and non-negative", pn.noise_sd));
        }
        let m = &self.migration;
        if m.years.0 > m.years.1 {
            out.push(format!("migration.years {:?} is reversed", m.years));
        }
        for f in &m.flows {
            if f.origin == f.destination || f.from > f.to {
                out.push(format!(
                    "migration.flows: {}→{} {}..{} is not a valid flow",
                    f.origin, f.destination, f.from, f.to
                ));
            }
        }
        let a = &self.annotations;
        if a.disagreements > a.n {
            out.push(format!("annotations.disagreements {} exceeds n {}", a.disagreements, a.n));
        }
        out
    }
}

// ---------------------------------------------------------------- text

const TOPICS: [&str; 16] = [
    "water scarcity",
    "labour markets",
    "public health",
    "energy transition",
    "urban growth",
    "higher education",
    "food security",
    "trade policy",
    "climate adaptation",
    "digital governance",
    "youth unemployment",
    "social protection",
    "renewable power",
    "maternal care",
    "student mobility",
    "hospital capacity",
];

/// Topic phrases picked up by the default topic query.
const EVENT_TOPICS: [&str; 4] =
    ["the Arab Spring", "Arab uprisings", "civil unrest in North Africa", "protests in the Middle East"];

const METHODS: [&str; 8] = ["panel", "survey", "case", "network", "cohort", "mixed methods", "spatial", "qualitative"];

const OPENERS: [&str; 4] = [
    "We study {t} with a {m} design.",
    "This {m} study examines {t}.",
    "We revisit {t} using {m} evidence.",
    "Recent work on {t} motivates this {m} analysis.",
];

const CLOSERS: [&str; 4] = [
    "Results inform debates on {t}.",
    "Implications for {t} are discussed.",
    "Data quality checks are reported.",
    "Limitations and extensions are outlined.",
];

const PLANT_SENTENCES: [&str; 4] = [
    "Evidence from {a} is reviewed.",
    "Case material covers {a}.",
    "Survey waves were fielded in {a}.",
    "We compare outcomes across {a} and peer settings.",
];

const TITLE_TEMPLATES: [&str; 3] = ["{T} in {a}: a {m} study", "{T} and reform in {a}", "Evidence on {t} from {a}"];
const PLAIN_TITLES: [&str; 3] = ["{T}: a {m} study", "Rethinking {t}", "{T} under pressure"];

const PHRASE_SENTENCES: [&str; 3] =
    ["Auxiliary notes mention {p}.", "A side remark concerns {p}.", "Footnotes cite {p}."];
const DEMONYM_SENTENCES: [&str; 2] = ["{d} respondents were interviewed.", "Several {d} experts reviewed drafts."];
const EXCLUDED_SENTENCES: [&str; 2] =
    ["A comparison with {x} is left for later work.", "Data on {x} were unavailable."];
const EMAIL_SENTENCES: [&str; 2] = ["Correspondence: team@lab.org.", "Contact: data@survey.net for replication files."];
const TAILS: [&str; 4] = [
    " © {y} Elsevier Ltd. All rights reserved. {a}.",
    " Copyright (c) {y} Springer Nature, {a}.",
    " @ {y} Wiley Periodicals LLC, {a}.",
    " © The Authors {y}. Published by Taylor & Francis, {a}.",
];

/// Every fixed word or phrase used by the templates, for vocabulary checks.
pub fn template_vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = Vec::new();
    for set in [
        &TOPICS[..],
        &EVENT_TOPICS,
        &METHODS,
        &OPENERS,
        &CLOSERS,
        &PLANT_SENTENCES,
        &TITLE_TEMPLATES,
        &PLAIN_TITLES,
        &PHRASE_SENTENCES,
        &DEMONYM_SENTENCES,
        &EXCLUDED_SENTENCES,
        &EMAIL_SENTENCES,
        &TAILS,
    ] {
        v.extend_from_slice(set);
    }
    v
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in slots {
        s = s.replace(k, v);
    }
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// True when `needle` occurs in `text` between word boundaries.
/// `fold` compares case-insensitively (Unicode lowercase of both sides).
pub fn occurs_bounded(text: &str, needle: &str, fold: bool) -> bool {
    let (hay, pat) =
        if fold { (text.to_lowercase(), needle.to_lowercase()) } else { (text.to_string(), needle.to_string()) };
    if pat.is_empty() {
        return false;
    }
    hay.match_indices(&pat).any(|(i, m)| {
        let left = hay[..i].chars().last().is_none_or(|c| !c.is_alphanumeric());
        let right = hay[i + m.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        left && right
    })
}

/// Whether any alias of any gazetteer entry occurs in `text`.
pub fn contains_any_alias(text: &str, source: &GazetteerSource) -> bool {
    source.entries.iter().any(|e| {
        e.aliases.iter().any(|a| occurs_bounded(text, a, true))
            || e.case_sensitive_aliases.iter().any(|a| occurs_bounded(text, a, false))
    })
}

/// Aliases safe to plant for `iso`: the alias contains no other entry's
/// alias starting to its left that could win resolution.
struct AliasBook {
    /// Active (not excluded) countries with their plantable aliases.
    plantable: BTreeMap<Iso3, Vec<String>>,
    /// Aliases of excluded territories that contain no active alias.
    excluded_aliases: Vec<String>,
    /// Demonyms containing no alias at all.
    demonyms: Vec<String>,
    /// Per country, the areas (code/100) that suppress it.
    suppress: BTreeMap<Iso3, Vec<u16>>,
}

impl AliasBook {
    fn new(source: &GazetteerSource) -> AliasBook {
        let excluded = source.excluded_set();
        let active = GazetteerSource {
            entries: source.entries.iter().filter(|e| !excluded.contains(&e.iso3)).cloned().collect(),
            ..Default::default()
        };
        let mut plantable = BTreeMap::new();
        for e in &active.entries {
            let others = GazetteerSource {
                entries: source.entries.iter().filter(|o| o.iso3 != e.iso3).cloned().collect(),
                ..Default::default()
            };
            let all = e.aliases.iter().chain(&e.case_sensitive_aliases);
            let ok: Vec<String> = all.filter(|a| !contains_any_alias(a, &others)).cloned().collect();
            if !ok.is_empty() {
                plantable.insert(e.iso3, ok);
            }
        }
        let excluded_aliases = source
            .entries
            .iter()
            .filter(|e| excluded.contains(&e.iso3))
            .flat_map(|e| e.aliases.iter().chain(&e.case_sensitive_aliases))
            .filter(|a| {
                !contains_any_alias(a, &active)
                    && !source.exclusion_phrases.iter().any(|p| occurs_bounded(a, &p.phrase, true))
            })
            .cloned()
            .collect();
        let demonyms = source
            .entries
            .iter()
            .flat_map(|e| e.demonyms.iter())
            .filter(|d| !contains_any_alias(d, source))
            .cloned()
            .collect();
        let suppress = source
            .conditional_suppressions
            .iter()
            .map(|s| (s.iso3, s.suppressed_asjc_areas.iter().map(|a| a / 100).collect()))
            .collect();
        AliasBook { plantable, excluded_aliases, demonyms, suppress }
    }

    fn suppressed(&self, iso: Iso3, areas: &[u16]) -> bool {
        self.suppress.get(&iso).is_some_and(|s| areas.iter().any(|a| s.contains(&(a / 100))))
    }
}

// ---------------------------------------------------------------- corpus

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<PublicationRecord>,
    /// The realized plant table: record id → countries planted.
    pub gold: BTreeMap<String, BTreeSet<Iso3>>,
    /// Ids of records carrying at least one trap.
    pub trapped: BTreeSet<String>,
}

pub fn record_id(i: usize) -> String {
    format!("syn-{i:07}")
}

fn is_trapped(i: usize, rate: f64) -> bool {
    ((i + 1) as f64 * rate).floor() > (i as f64 * rate).floor()
}

struct CorpusCtx<'a> {
    plan: &'a CorpusPlan,
    book: AliasBook,
    active: Vec<Iso3>,
    focus: Vec<Iso3>,
    /// Every gazetteer country, excluded ones included, for affiliations.
    all: Vec<Iso3>,
    area_bases: Vec<u16>,
    explicit: BTreeMap<usize, BTreeSet<Iso3>>,
}

impl CorpusCtx<'_> {
    fn draw_country(&self, rng: &mut ChaCha8Rng, pool_all: &[Iso3]) -> Iso3 {
        if !self.focus.is_empty() && rng.random_bool(self.plan.focus_share) {
            *self.focus.choose(rng).expect("non-empty")
        } else {
            *pool_all.choose(rng).expect("non-empty")
        }
    }

    fn record(&self, seed: u64, i: usize) -> (PublicationRecord, BTreeSet<Iso3>, bool) {
        let plan = self.plan;
        let mut rng = stream_rng(seed, STREAM_CORPUS_BASE + i as u64);
        let id = record_id(i);
        let year = rng.random_range(plan.years.0..=plan.years.1);

        let n_areas = rng.random_range(1..=2);
        let mut subject_areas: Vec<u16> =
            (0..n_areas).map(|_| self.area_bases.choose(&mut rng).expect("areas") + rng.random_range(0..30)).collect();
        subject_areas.sort_unstable();
        subject_areas.dedup();

        let planted: BTreeSet<Iso3> = match self.explicit.get(&i) {
            Some(p) => p.clone(),
            None if rng.random_bool(plan.plant_rate) && plan.max_plants > 0 => {
                let k = rng.random_range(1..=plan.max_plants);
                let mut set = BTreeSet::new();
                for _ in 0..k * 4 {
                    if set.len() == k {
                        break;
                    }
                    let c = self.draw_country(&mut rng, &self.active);
                    if self.book.plantable.contains_key(&c) && !self.book.suppressed(c, &subject_areas) {
                        set.insert(c);
                    }
                }
                set
            }
            None => BTreeSet::new(),
        };
        let mut order: Vec<Iso3> = planted.iter().copied().collect();
        order.shuffle(&mut rng);
        let mut aliases: Vec<String> =
            order.iter().map(|c| self.book.plantable[c].choose(&mut rng).expect("alias").clone()).collect();

        let topic = if rng.random_bool(plan.topic_rate) {
            *EVENT_TOPICS.choose(&mut rng).expect("topics")
        } else {
            *TOPICS.choose(&mut rng).expect("topics")
        };
        let method = *METHODS.choose(&mut rng).expect("methods");
        let cap = capitalize(topic);

        let title = if !aliases.is_empty() && rng.random_bool(0.4) {
            let a = aliases.remove(0);
            fill(
                TITLE_TEMPLATES.choose(&mut rng).expect("t"),
                &[("{T}", &cap), ("{t}", topic), ("{m}", method), ("{a}", &a)],
            )
        } else {
            fill(PLAIN_TITLES.choose(&mut rng).expect("t"), &[("{T}", &cap), ("{t}", topic), ("{m}", method)])
        };

        let mut sentences = vec![fill(OPENERS.choose(&mut rng).expect("o"), &[("{t}", topic), ("{m}", method)])];
        for a in &aliases {
            sentences.push(fill(PLANT_SENTENCES.choose(&mut rng).expect("p"), &[("{a}", a)]));
        }

        let trapped = is_trapped(i, plan.traps.rate);
        let mut tail = String::new();
        let mut email = None;
        if trapped {
            let traps = &plan.traps;
            let mut kinds: Vec<u8> = Vec::new();
            if !traps.phrases.is_empty() {
                kinds.push(0);
            }
            if traps.demonyms && !self.book.demonyms.is_empty() {
                kinds.push(1);
            }
            if traps.excluded_territories && !self.book.excluded_aliases.is_empty() {
                kinds.push(2);
            }
            if traps.emails {
                kinds.push(3);
            }
            if traps.copyright_tails {
                kinds.push(4);
            }
            let n_traps = rng.random_range(1..=2).min(kinds.len());
            kinds.shuffle(&mut rng);
            for kind in kinds.into_iter().take(n_traps) {
                match kind {
                    0 => {
                        let p = traps.phrases.choose(&mut rng).expect("phrase");
                        sentences.push(fill(PHRASE_SENTENCES.choose(&mut rng).expect("s"), &[("{p}", p)]));
                    }
                    1 => {
                        let d = self.book.demonyms.choose(&mut rng).expect("demonym");
                        sentences.push(fill(DEMONYM_SENTENCES.choose(&mut rng).expect("s"), &[("{d}", d)]));
                    }
                    2 => {
                        let x = self.book.excluded_aliases.choose(&mut rng).expect("excluded");
                        sentences.push(fill(EXCLUDED_SENTENCES.choose(&mut rng).expect("s"), &[("{x}", x)]));
                    }
                    3 => email = Some(*EMAIL_SENTENCES.choose(&mut rng).expect("s")),
                    _ => {
                        let c = *self.active.choose(&mut rng).expect("active");
                        let a =
                            self.book.plantable.get(&c).and_then(|v| v.choose(&mut rng)).cloned().unwrap_or_default();
                        let y = rng.random_range(plan.years.0..=plan.years.1).to_string();
                        tail = fill(TAILS.choose(&mut rng).expect("tail"), &[("{y}", &y), ("{a}", &a)]);
                    }
                }
            }
        }
        sentences.push(fill(CLOSERS.choose(&mut rng).expect("c"), &[("{t}", topic)]));
        if let Some(e) = email {
            sentences.push(e.to_string());
        }
        let abstract_text = sentences.join(" ") + &tail;

        let n_authors = rng.random_range(1..=plan.max_authors);
        let authors = (0..n_authors)
            .map(|_| {
                let affiliation_countries = if rng.random_bool(plan.unaffiliated_rate) {
                    Vec::new()
                } else {
                    let k = if rng.random_bool(0.85) { 1 } else { 2 };
                    let mut v: Vec<Iso3> = (0..k).map(|_| self.draw_country(&mut rng, &self.all)).collect();
                    v.sort();
                    v.dedup();
                    v
                };
                let pool = (plan.n_publications / 2).max(1);
                AuthorEntry { author_id: format!("au-{:06}", rng.random_range(0..pool)), affiliation_countries }
            })
            .collect();
        let funder_countries = if rng.random_bool(plan.funder_rate) {
            let mut v: Vec<Iso3> =
                (0..rng.random_range(1..=2)).map(|_| self.draw_country(&mut rng, &self.all)).collect();
            v.sort();
            v.dedup();
            v
        } else {
            Vec::new()
        };
        let keywords = if EVENT_TOPICS.contains(&topic) { vec!["Arab Spring".to_string()] } else { Vec::new() };
        let rec = PublicationRecord {
            id,
            year,
            title,
            abstract_text,
            subject_areas,
            authors,
            funder_countries,
            language: "en".into(),
            keywords,
        };
        (rec, planted, trapped)
    }
}

/// Social sciences; suppresses no country in the bundled gazetteer.
const NEUTRAL_AREA: u16 = 3300;

/// Generate the corpus and its plant table. Explicit plants naming an
/// excluded territory or a country without a plantable alias are left out
/// of both text and gold, and areas that would suppress an explicit plant
/// are dropped, so gold always equals what a correct extractor returns.
pub fn generate_corpus(plan: &SynthPlan, source: &GazetteerSource) -> SynthCorpus {
    let book = AliasBook::new(source);
    let excluded = source.excluded_set();
    let active: Vec<Iso3> = book.plantable.keys().copied().collect();
    let focus: Vec<Iso3> = plan.corpus.focus.iter().copied().filter(|c| book.plantable.contains_key(c)).collect();
    let all: Vec<Iso3> = source.entries.iter().map(|e| e.iso3).collect();
    let area_bases: Vec<u16> = Taxonomy::default().areas().map(|(code, _)| code).collect();
    let explicit = plan
        .corpus
        .plants
        .iter()
        .map(|p| {
            (
                p.record,
                p.countries
                    .iter()
                    .copied()
                    .filter(|c| !excluded.contains(c) && book.plantable.contains_key(c))
                    .collect(),
            )
        })
        .collect();
    let ctx = CorpusCtx { plan: &plan.corpus, book, active, focus, all, area_bases, explicit };

    let generated: Vec<(PublicationRecord, BTreeSet<Iso3>, bool)> =
        (0..plan.corpus.n_publications).into_par_iter().map(|i| ctx.record(plan.seed, i)).collect();

    let mut out =
        SynthCorpus { records: Vec::with_capacity(generated.len()), gold: BTreeMap::new(), trapped: BTreeSet::new() };
    for (mut rec, planted, trapped) in generated {
        // An explicit plant suppressed by the drawn areas: drop those areas
        // rather than the plant, falling back to a neutral area.
        if planted.iter().any(|c| ctx.book.suppressed(*c, &rec.subject_areas)) {
            rec.subject_areas.retain(|a| !planted.iter().any(|c| ctx.book.suppressed(*c, &[*a])));
            if rec.subject_areas.is_empty() {
                rec.subject_areas = vec![NEUTRAL_AREA];
            }
        }
        if trapped {
            out.trapped.insert(rec.id.clone());
        }
        out.gold.insert(rec.id.clone(), planted);
        out.records.push(rec);
    }
    out
}

// ---------------------------------------------------------------- panel

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub beta: BTreeMap<String, f64>,
    pub trend: BTreeMap<String, f64>,
    pub theta: Vec<f64>,
    pub noise_sd: f64,
    pub event_year: i32,
    pub groups: BTreeMap<String, BTreeSet<Iso3>>,
    pub controls: BTreeSet<Iso3>,
    pub country_effects: BTreeMap<Iso3, f64>,
    pub year_effects: BTreeMap<i32, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPanel {
    pub panel: Panel,
    pub truth: PanelTruth,
}

/// Synthetic country code `n` in the user-assigned range `QMA`..`QZZ`.
pub fn synthetic_code(n: usize) -> Iso3 {
    assert!(n < MAX_PANEL_COUNTRIES, "synthetic code {n} out of range");
    let a = b'M' + (n / 26) as u8;
    let b = b'A' + (n % 26) as u8;
    Iso3::new(std::str::from_utf8(&[b'Q', a, b]).expect("ascii")).expect("valid code")
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

/// outcome = γ_i + λ_t + Σ_g β_g·Post·Treat_g + Σ_g δ_g·(t−E)·Treat_g + θ·X + ε.
///
/// Covariates follow a country level, a country-specific drift and
/// idiosyncratic noise so they vary within country beyond the year effects.
pub fn generate_panel(plan: &SynthPlan) -> SynthPanel {
    let p = &plan.panel;
    let mut rng = stream_rng(plan.seed, STREAM_PANEL);
    let years: Vec<i32> = (p.years.0..=p.years.1).collect();
    let span = (years.len().max(2) - 1) as f64;

    let mut groups: BTreeMap<String, BTreeSet<Iso3>> = BTreeMap::new();
    let mut assignment: Vec<(Iso3, Option<String>)> = Vec::new();
    let mut next = 0;
    for (g, gp) in &p.groups {
        for _ in 0..gp.countries {
            let c = synthetic_code(next);
            next += 1;
            groups.entry(g.clone()).or_default().insert(c);
            assignment.push((c, Some(g.clone())));
        }
    }
    let mut controls = BTreeSet::new();
    for _ in 0..p.n_controls {
        let c = synthetic_code(next);
        next += 1;
        controls.insert(c);
        assignment.push((c, None));
    }

    let fe = normal(p.country_effect_sd);
    let ye = normal(p.year_effect_sd);
    let noise = normal(p.noise_sd);
    let unit = normal(1.0);
    let year_effects: BTreeMap<i32, f64> = years.iter().map(|&t| (t, ye.sample(&mut rng))).collect();

    let k = p.theta.len();
    let mut country_effects = BTreeMap::new();
    let mut rows = Vec::with_capacity(assignment.len() * years.len());
    for (c, group) in &assignment {
        let gamma = fe.sample(&mut rng);
        country_effects.insert(*c, gamma);
        let levels: Vec<(f64, f64)> = (0..k).map(|_| (unit.sample(&mut rng), 0.5 * unit.sample(&mut rng))).collect();
        let (beta, trend) = match group {
            Some(g) => (p.groups[g].beta, p.groups[g].trend),
            None => (0.0, 0.0),
        };
        for &t in &years {
            let post = t >= p.event_year;
            let x: Vec<f64> = levels
                .iter()
                .map(|(a, b)| a + b * (t - p.years.0) as f64 / span + 0.5 * unit.sample(&mut rng))
                .collect();
            let treat = if group.is_some() { 1.0 } else { 0.0 };
            let mut y = gamma + year_effects[&t] + beta * treat * if post { 1.0 } else { 0.0 };
            y += trend * treat * (t - p.event_year) as f64;
            y += x.iter().zip(&p.theta).map(|(x, th)| x * th).sum::<f64>();
            y += noise.sample(&mut rng);
            rows.push(PanelObservation { country: *c, year: t, outcome: y, covariates: x, group: group.clone(), post });
        }
    }
    let panel =
        Panel { measure: "synthetic".into(), covariate_names: (1..=k).map(|j| format!("x{j}")).collect(), rows };
    let truth = PanelTruth {
        beta: p.groups.iter().map(|(g, gp)| (g.clone(), gp.beta)).collect(),
        trend: p.groups.iter().map(|(g, gp)| (g.clone(), gp.trend)).collect(),
        theta: p.theta.clone(),
        noise_sd: p.noise_sd,
        event_year: p.event_year,
        groups,
        controls,
        country_effects,
        year_effects,
    };
    SynthPanel { panel, truth }
}

// ---------------------------------------------------------------- migration, covariates, annotations

/// Random background moves plus the planted flows, sorted by
/// (year, scholar, origin, destination).
pub fn generate_migrations(plan: &SynthPlan) -> Vec<MigrationEvent> {
    let m = &plan.migration;
    let mut rng = stream_rng(plan.seed, STREAM_MIGRATION);
    let pool: Vec<Iso3> = if m.pool.is_empty() { plan.corpus.focus.clone() } else { m.pool.clone() };
    let mut events = Vec::new();
    if pool.len() >= 2 {
        for s in 0..m.scholars {
            let scholar_id = format!("sch-{s:06}");
            let mut here = *pool.choose(&mut rng).expect("pool");
            let mut years: Vec<i32> =
                (0..rng.random_range(0..=2)).map(|_| rng.random_range(m.years.0..=m.years.1)).collect();
            years.sort_unstable();
            for year in years {
                let mut there = *pool.choose(&mut rng).expect("pool");
                while there == here {
                    there = *pool.choose(&mut rng).expect("pool");
                }
                events.push(MigrationEvent { scholar_id: scholar_id.clone(), year, origin: here, destination: there });
                here = there;
            }
        }
    }
    for (fi, f) in m.flows.iter().enumerate() {
        for year in f.from..=f.to {
            for k in 0..f.per_year {
                events.push(MigrationEvent {
                    scholar_id: format!("flow{fi}-{year}-{k:05}"),
                    year,
                    origin: f.origin,
                    destination: f.destination,
                });
            }
        }
    }
    events.sort_by(|a, b| {
        (a.year, &a.scholar_id, a.origin, a.destination).cmp(&(b.year, &b.scholar_id, b.origin, b.destination))
    });
    events
}

/// Country-year covariates for `countries` over `years`: log-normal
/// levels with country-specific growth and noise.
pub fn generate_covariates(seed: u64, countries: &BTreeSet<Iso3>, years: (i32, i32)) -> Vec<CountryYearCovariates> {
    let mut rng = stream_rng(seed, STREAM_COVARIATES);
    let unit = normal(1.0);
    let mut out = Vec::new();
    for &country in countries {
        let gdp0 = 8.5 + 1.2 * unit.sample(&mut rng);
        let gdp_g = 0.02 + 0.02 * unit.sample(&mut rng);
        let pop0 = 16.0 + 1.5 * unit.sample(&mut rng);
        let pop_g = 0.015 + 0.01 * unit.sample(&mut rng);
        let res_share = -7.0 + 0.8 * unit.sample(&mut rng);
        let stock_share = -2.0 + 0.5 * unit.sample(&mut rng);
        for (k, year) in (years.0..=years.1).enumerate() {
            let t = k as f64;
            let gdp = (gdp0 + gdp_g * t + 0.03 * unit.sample(&mut rng)).exp();
            let lpop = pop0 + pop_g * t + 0.005 * unit.sample(&mut rng);
            let lres = lpop + res_share + 0.02 * t + 0.05 * unit.sample(&mut rng);
            let lstock = lres + stock_share + 0.05 * unit.sample(&mut rng);
            out.push(CountryYearCovariates {
                country,
                year,
                gdp_per_capita: (gdp * 100.0).round() / 100.0,
                population: lpop.exp().round().max(1.0) as u64,
                researcher_population: lres.exp().round().max(1.0) as u64,
                scholar_stock: lstock.exp().round().max(1.0) as u64,
            });
        }
    }
    out
}

/// Two-coder annotations of the first `n` gold records (by id). Coder A
/// reproduces gold; coder B departs from it on exactly `disagreements`
/// records by adding or removing one country.
pub fn generate_annotations(
    plan: &SynthPlan,
    gold: &BTreeMap<String, BTreeSet<Iso3>>,
    candidates: &[Iso3],
) -> Vec<AnnotationRecord> {
    let a = &plan.annotations;
    let mut rng = stream_rng(plan.seed, STREAM_ANNOTATIONS);
    let picked: Vec<(&String, &BTreeSet<Iso3>)> = gold.iter().take(a.n).collect();
    let mut flip: Vec<usize> = (0..picked.len()).collect();
    flip.shuffle(&mut rng);
    let flip: BTreeSet<usize> = flip.into_iter().take(a.disagreements).collect();
    picked
        .into_iter()
        .enumerate()
        .map(|(i, (id, g))| {
            let mut b = g.clone();
            if flip.contains(&i) {
                let fresh: Vec<Iso3> = candidates.iter().copied().filter(|c| !g.contains(c)).collect();
                if !g.is_empty() && (fresh.is_empty() || rng.random_bool(0.5)) {
                    let drop = *g.iter().collect::<Vec<_>>().choose(&mut rng).expect("non-empty");
                    b.remove(drop);
                } else if let Some(add) = fresh.choose(&mut rng) {
                    b.insert(*add);
                }
            }
            AnnotationRecord { publication_id: id.clone(), coder_a: g.clone(), coder_b: b }
        })
        .collect()
}

// ---------------------------------------------------------------- files

/// File names written by [`write_fixture_data`].
pub const FIXTURE_FILES: [&str; 8] = [
    "publications.jsonl",
    "gold.jsonl",
    "annotations.jsonl",
    "migrations.jsonl",
    "covariates.csv",
    "gazetteer.toml",
    "panel.csv",
    "panel_truth.json",
];

#[derive(Serialize)]
struct GoldLine<'a> {
    publication_id: &'a str,
    countries: &'a BTreeSet<Iso3>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, SynthError> {
    fs::File::create(path).map(BufWriter::new).map_err(|source| SynthError::Io { path: path.into(), source })
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.into(), source }
}

/// Write every synthetic input for `plan` into `dir`. Covariates cover
/// every active gazetteer country over the corpus years.
pub fn write_fixture_data(plan: &SynthPlan, source: &GazetteerSource, dir: &Path) -> Result<SynthCorpus, SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let corpus = generate_corpus(plan, source);

    let path = dir.join("publications.jsonl");
    write_jsonl(create(&path)?, &corpus.records)?;

    let path = dir.join("gold.jsonl");
    let lines: Vec<GoldLine> =
        corpus.gold.iter().map(|(id, c)| GoldLine { publication_id: id, countries: c }).collect();
    write_jsonl(create(&path)?, &lines)?;

    let excluded = source.excluded_set();
    let active: Vec<Iso3> = source.entries.iter().map(|e| e.iso3).filter(|c| !excluded.contains(c)).collect();
    let path = dir.join("annotations.jsonl");
    write_jsonl(create(&path)?, &generate_annotations(plan, &corpus.gold, &active))?;

    let path = dir.join("migrations.jsonl");
    write_jsonl(create(&path)?, &generate_migrations(plan))?;

    let path = dir.join("covariates.csv");
    let countries: BTreeSet<Iso3> = active.iter().copied().collect();
    write_covariates(create(&path)?, &generate_covariates(plan.seed, &countries, plan.corpus.years))?;

    let path = dir.join("gazetteer.toml");
    let text = source.to_toml_string().map_err(|e| SynthError::Plan(vec![e.to_string()]))?;
    fs::write(&path, text).map_err(io_err(&path))?;

    let sp = generate_panel(plan);
    let path = dir.join("panel.csv");
    crate::econo::write_panel_csv(create(&path)?, std::slice::from_ref(&sp.panel))
        .map_err(|e| SynthError::Plan(vec![e.to_string()]))?;
    let path = dir.join("panel_truth.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &sp.truth)?;
    w.write_all(b"\n").map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econo::did_estimate;
    use crate::extract::{extract_corpus, ExtractOptions};
    use crate::gazetteer::CompiledGazetteer;

    fn plan(n: usize) -> SynthPlan {
        SynthPlan {
            seed: 7,
            corpus: CorpusPlan { n_publications: n, ..Default::default() },
            panel: PanelPlan::default(),
            migration: MigrationPlan::default(),
            annotations: AnnotationPlan::default(),
        }
    }

    #[test]
    fn vocabulary_has_no_alias() {
        let src = GazetteerSource::default_source();
        for v in template_vocabulary() {
            let bare = v.replace(['{', '}'], " ");
            assert!(!contains_any_alias(&bare, &src), "{v}");
        }
    }

    #[test]
    fn empty_plan_gives_empty_corpus() {
        let c = generate_corpus(&plan(0), &GazetteerSource::default_source());
        assert!(c.records.is_empty() && c.gold.is_empty());
    }

    #[test]
    fn deterministic_and_gold_recovered() {
        let src = GazetteerSource::default_source();
        let a = generate_corpus(&plan(1000), &src);
        let b = generate_corpus(&plan(1000), &src);
        assert_eq!(a, b);
        assert_eq!(a.trapped.len(), 200);
        let gaz = CompiledGazetteer::compile(&src).unwrap();
        let got = extract_corpus(&a.records, &gaz, &ExtractOptions::default());
        for m in got {
            assert_eq!(m.mentioned, a.gold[&m.publication_id], "{}", m.publication_id);
        }
    }

    #[test]
    fn explicit_plant_with_congo_red() {
        let src = GazetteerSource::default_source();
        let mut p = plan(5);
        p.corpus.plants = vec![PlantEntry { record: 4, countries: BTreeSet::from([Iso3::new("EGY").unwrap()]) }];
        p.corpus.traps = TrapPlan { rate: 1.0, phrases: vec!["Congo Red".into()], ..Default::default() };
        let c = generate_corpus(&p, &src);
        let gaz = CompiledGazetteer::compile(&src).unwrap();
        let r = &c.records[4];
        let m = crate::extract::extract_mentions(r, &gaz);
        assert_eq!(m.mentioned, BTreeSet::from([Iso3::new("EGY").unwrap()]));
        assert_eq!(c.gold[&r.id], m.mentioned);
    }

    #[test]
    fn noiseless_panel_recovers_beta() {
        let mut p = plan(0);
        p.panel.noise_sd = 0.0;
        let sp = generate_panel(&p);
        let r = did_estimate(&sp.panel, &["GO".to_string()]).unwrap();
        assert!((r.group("GO").unwrap().beta - 0.25).abs() < 1e-10);
    }

    #[test]
    fn streams_are_independent() {
        let mut p = plan(50);
        let a = generate_panel(&p);
        p.corpus.n_publications = 70;
        p.migration.scholars = 10;
        assert_eq!(generate_panel(&p), a);
    }

    #[test]
    fn annotations_disagree_exactly() {
        let src = GazetteerSource::default_source();
        let p = plan(300);
        let c = generate_corpus(&p, &src);
        let cands: Vec<Iso3> = iso_list(&DEFAULT_FOCUS);
        let ann = generate_annotations(&p, &c.gold, &cands);
        assert_eq!(ann.len(), 100);
        assert_eq!(ann.iter().filter(|a| a.coder_a != a.coder_b).count(), 11);
    }

    #[test]
    fn planted_flow_counts() {
        let mut p = plan(0);
        p.migration.scholars = 0;
        p.migration.flows = vec![FlowPlan {
            origin: Iso3::new("EGY").unwrap(),
            destination: Iso3::new("SAU").unwrap(),
            from: 2011,
            to: 2019,
            per_year: 162,
        }];
        let ev = generate_migrations(&p);
        assert_eq!(ev.len(), 162 * 9);
    }

    #[test]
    fn plan_problems() {
        let mut p = plan(10);
        p.panel.n_controls = 1;
        p.annotations.disagreements = 500;
        p.corpus.plants = vec![PlantEntry { record: 10, countries: BTreeSet::new() }];
        assert_eq!(p.problems().len(), 3);
        assert!(SynthPlan::from_toml_str("seed = 1\n[corpus]\nn_publications = 3\n").is_ok());
        assert!(SynthPlan::from_toml_str("seed = 1\nbogus = 2\n").is_err());
    }
}
