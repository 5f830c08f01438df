//! End-to-end runs driven by one TOML config.
//!
//! Stages run in dependency order: load → extract → network → metrics →
//! eval, and load → cem → panel → did. A failed stage is recorded in the
//! manifest and every stage depending on it is skipped. Outputs are pure
//! functions of the inputs; only `manifest.json` carries run-specific data
//! (stage timings, worker count) and it is the sidecar that records the
//! config hash and a SHA-256 of every other output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    load_corpus, load_covariates, write_jsonl, AnnotationRecord, CountryYearCovariates, Diagnostic, LoadOptions,
    MigrationEvent, PublicationRecord, Severity, Taxonomy,
};
use crate::econo::{
    build_panel, cem_match, did_estimate, parallel_trends_test, pre_period_summaries, write_panel_csv, CemResult,
    Covariate, DidResult, Outcome, Panel, PanelDiagnostics, PanelSpec, PretrendResult, ZeroPolicy, DEFAULT_CUTPOINTS,
};
use crate::eval::{evaluate, EvalReport};
use crate::extract::{extract_corpus, ExtractOptions, MentionResult, TopicQuery};
use crate::gazetteer::{CompiledGazetteer, GazetteerSource};
use crate::iso3::Iso3;
use crate::metrics::{
    attention_table, delta_avg_annual, flag_hyperprolific, net_migration_rate, normalized_rank_change, rank_countries,
    signed_rank_test, Alternative, AttentionSplit, GroupSpec, PeriodSpec, SignedRankResult,
};
use crate::network::{
    build_attention, build_funding, build_migration, write_edges_csv, BuildStats, DirectedCountryNetwork,
    NetworkOptions,
};

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "GEOSCHOLAR_WORKERS";

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub publications: PathBuf,
    pub covariates: PathBuf,
    /// Defaults to the bundled gazetteer.
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    /// Defaults to the bundled subject-area table.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub migrations: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
}

/// Which countries serve as controls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSpec {
    /// Every country with covariates outside the treated groups.
    #[default]
    World,
    /// An explicit regional roster.
    Mena { countries: BTreeSet<Iso3> },
    /// Countries matched to the treated set by coarsened exact matching
    /// over the world pool.
    Cem {
        #[serde(default)]
        cutpoints: Option<Vec<f64>>,
        /// Defaults to the analysis covariates.
        #[serde(default)]
        covariates: Option<Vec<Covariate>>,
    },
}

fn default_outcomes() -> Vec<Outcome> {
    Outcome::ALL.to_vec()
}

fn default_covariates() -> Vec<Covariate> {
    vec![Covariate::LogGdpPerCapita, Covariate::LogPopulation]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<Outcome>,
    #[serde(default)]
    pub zero_policy: ZeroPolicy,
    #[serde(default = "default_covariates")]
    pub covariates: Vec<Covariate>,
    /// Split networks by discipline (half-counted areas).
    #[serde(default)]
    pub stratify: bool,
    /// Boolean keyword query; `"default"` selects the built-in one.
    #[serde(default)]
    pub topic_query: Option<String>,
    /// Build networks only from records matching the topic query.
    #[serde(default)]
    pub topic_filter: bool,
    /// Publication years loaded; defaults to the span of the periods.
    #[serde(default)]
    pub year_window: Option<(i32, i32)>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            outcomes: default_outcomes(),
            zero_policy: ZeroPolicy::default(),
            covariates: default_covariates(),
            stratify: false,
            topic_query: None,
            topic_filter: false,
            year_window: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    #[serde(default)]
    pub periods: PeriodSpec,
    #[serde(default)]
    pub groups: GroupSpec,
    #[serde(default)]
    pub controls: ControlSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against: the config file's.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    ParseConfig(#[from] toml::de::Error),
    #[error("config is invalid:\n{}", render_diagnostics(.0))]
    Invalid(Vec<ConfigDiagnostic>),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<RunConfig, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig, PipelineError> {
        let text =
            fs::read_to_string(path).map_err(|source| PipelineError::ReadConfig { path: path.into(), source })?;
        RunConfig::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Worker count by precedence: flag, then `GEOSCHOLAR_WORKERS`, then
    /// the config file, then 1.
    pub fn resolve_workers(&self, flag: Option<usize>) -> usize {
        let env = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
        flag.or(env).or(self.workers).unwrap_or(1).max(1)
    }

    pub fn year_window(&self) -> (i32, i32) {
        self.analysis.year_window.unwrap_or((self.periods.pre.0, self.periods.post.1))
    }

    pub fn topic_query(&self) -> Option<Result<TopicQuery, String>> {
        self.analysis.topic_query.as_deref().map(|q| {
            if q.trim().eq_ignore_ascii_case("default") {
                Ok(TopicQuery::default_query())
            } else {
                TopicQuery::parse(q).map_err(|e| e.to_string())
            }
        })
    }

    /// SHA-256 over everything that determines outputs: inputs, periods,
    /// groups, controls and analysis. Worker count and output directory
    /// are left out since they never change output bytes.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            inputs: &'a InputPaths,
            periods: &'a PeriodSpec,
            groups: &'a GroupSpec,
            controls: &'a ControlSpec,
            analysis: &'a AnalysisSpec,
        }
        let view = View {
            inputs: &self.inputs,
            periods: &self.periods,
            groups: &self.groups,
            controls: &self.controls,
            analysis: &self.analysis,
        };
        sha256_hex(serde_json::to_string(&view).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDiagnostic {
    pub severity: Severity,
    pub message: String,
}

fn render_diagnostics(d: &[ConfigDiagnostic]) -> String {
    d.iter()
        .map(|d| format!("  {}: {}", if d.severity == Severity::Error { "error" } else { "warning" }, d.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConfigDiagnostic {
    fn error(message: impl Into<String>) -> Self {
        ConfigDiagnostic { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        ConfigDiagnostic { severity: Severity::Warning, message: message.into() }
    }
}

pub fn has_errors(d: &[ConfigDiagnostic]) -> bool {
    d.iter().any(|d| d.severity == Severity::Error)
}

fn load_gazetteer(cfg: &RunConfig) -> Result<GazetteerSource, String> {
    match &cfg.inputs.gazetteer {
        None => Ok(GazetteerSource::default_source()),
        Some(p) => {
            let path = cfg.resolve(p);
            let text = fs::read_to_string(&path).map_err(|e| format!("gazetteer {}: {e}", path.display()))?;
            let src =
                GazetteerSource::from_toml_str(&text).map_err(|e| format!("gazetteer {}: {e}", path.display()))?;
            src.validate().map_err(|e| format!("gazetteer {}: {e}", path.display()))?;
            Ok(src)
        }
    }
}

fn load_taxonomy(cfg: &RunConfig) -> Result<Taxonomy, String> {
    match &cfg.inputs.taxonomy {
        None => Ok(Taxonomy::default()),
        Some(p) => {
            let path = cfg.resolve(p);
            let text = fs::read_to_string(&path).map_err(|e| format!("taxonomy {}: {e}", path.display()))?;
            Taxonomy::from_toml_str(&text).map_err(|e| format!("taxonomy {}: {e}", path.display()))
        }
    }
}

/// Every referential and invariant check, without side effects.
pub fn validate(cfg: &RunConfig) -> Vec<ConfigDiagnostic> {
    let mut out = Vec::new();
    let mut need = |label: &str, p: Option<&PathBuf>| {
        if let Some(p) = p {
            let path = cfg.resolve(p);
            if !path.is_file() {
                out.push(ConfigDiagnostic::error(format!("inputs.{label}: file {} does not exist", path.display())));
            }
        }
    };
    need("publications", Some(&cfg.inputs.publications));
    need("covariates", Some(&cfg.inputs.covariates));
    need("gazetteer", cfg.inputs.gazetteer.as_ref());
    need("taxonomy", cfg.inputs.taxonomy.as_ref());
    need("migrations", cfg.inputs.migrations.as_ref());
    need("annotations", cfg.inputs.annotations.as_ref());

    out.extend(cfg.periods.problems().into_iter().map(ConfigDiagnostic::error));
    let (y0, y1) = cfg.year_window();
    if y0 > cfg.periods.pre.0 || y1 < cfg.periods.post.1 {
        out.push(ConfigDiagnostic::warning(format!(
            "analysis.year_window {y0}–{y1} does not cover the periods; uncovered years read as zero attention"
        )));
    }

    if cfg.groups.0.is_empty() {
        out.push(ConfigDiagnostic::error("GroupSpec: no treatment groups"));
    }
    for (label, members) in &cfg.groups.0 {
        if members.is_empty() {
            out.push(ConfigDiagnostic::error(format!("GroupSpec: group {label} is empty")));
        }
    }
    for (c, labels) in cfg.groups.overlaps() {
        out.push(ConfigDiagnostic::error(format!("GroupSpec: {c} is in several groups ({})", labels.join(", "))));
    }

    let gaz = load_gazetteer(cfg);
    match &gaz {
        Err(e) if cfg.inputs.gazetteer.as_ref().is_some_and(|p| cfg.resolve(p).is_file()) => {
            out.push(ConfigDiagnostic::error(e.clone()))
        }
        _ => {}
    }
    let excluded = gaz.as_ref().map(|g| g.excluded_set()).unwrap_or_default();
    for (label, members) in &cfg.groups.0 {
        for c in members {
            if excluded.contains(c) {
                out.push(ConfigDiagnostic::warning(format!(
                    "GroupSpec: group {label} contains {c}, which the gazetteer excludes; it will have no attention"
                )));
            }
            if !c.is_assigned() {
                out.push(ConfigDiagnostic::warning(format!("GroupSpec: {c} is not an assigned ISO 3166-1 code")));
            }
        }
    }

    match &cfg.controls {
        ControlSpec::World => {}
        ControlSpec::Mena { countries } => {
            if countries.len() < 2 {
                out.push(ConfigDiagnostic::error("controls: the roster needs at least 2 countries"));
            }
            let treated = cfg.groups.members();
            for c in countries {
                if treated.contains(c) {
                    out.push(ConfigDiagnostic::error(format!("controls: {c} is also a treated country")));
                }
                if excluded.contains(c) {
                    out.push(ConfigDiagnostic::warning(format!("controls: {c} is excluded by the gazetteer")));
                }
            }
        }
        ControlSpec::Cem { cutpoints, covariates } => {
            if let Some(c) = cutpoints {
                if c.len() < 2 || c.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
                    out.push(ConfigDiagnostic::error(
                        "controls.cutpoints must be strictly increasing with at least two values",
                    ));
                }
            }
            if covariates.as_ref().is_some_and(|c| c.is_empty()) {
                out.push(ConfigDiagnostic::error("controls.covariates is empty"));
            }
        }
    }

    if cfg.analysis.outcomes.is_empty() {
        out.push(ConfigDiagnostic::error("analysis.outcomes is empty"));
    }
    if let ZeroPolicy::Offset(e) = cfg.analysis.zero_policy {
        if !(e > 0.0 && e.is_finite()) {
            out.push(ConfigDiagnostic::error(format!("analysis.zero_policy offset {e} must be positive")));
        }
    }
    if let Some(Err(e)) = cfg.topic_query() {
        out.push(ConfigDiagnostic::error(format!("analysis.topic_query: {e}")));
    }
    if cfg.analysis.topic_filter && cfg.analysis.topic_query.is_none() {
        out.push(ConfigDiagnostic::error("analysis.topic_filter needs analysis.topic_query"));
    }
    if cfg.workers == Some(0) {
        out.push(ConfigDiagnostic::error("workers must be at least 1"));
    }
    if let Err(e) = load_taxonomy(cfg) {
        if cfg.inputs.taxonomy.as_ref().is_some_and(|p| cfg.resolve(p).is_file()) {
            out.push(ConfigDiagnostic::error(e));
        }
    }
    out
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub millis: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub gazetteer_hash: String,
    pub workers: usize,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// SHA-256 of each output file, by file name.
    pub outputs: BTreeMap<String, String>,
    /// Counts of diagnostics by source.
    pub diagnostics: BTreeMap<String, usize>,
    pub config_diagnostics: Vec<ConfigDiagnostic>,
}

impl RunManifest {
    pub fn ok(&self) -> bool {
        self.stages.iter().all(|s| s.status != StageStatus::Failed)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------- outputs

pub const METRICS_HEADER: [&str; 6] = ["country", "year", "domestic", "foreign", "total", "ratio"];
pub const RANKS_HEADER: [&str; 7] = ["country", "pre_mean", "post_mean", "delta", "rank_pre", "rank_post", "nrc"];
pub const HYPERPROLIFIC_HEADER: [&str; 3] = ["author_id", "year", "papers"];
pub const MIGRATION_HEADER: [&str; 6] = ["country", "year", "inflow", "outflow", "stock", "net_rate"];

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| e.to_string())?;
    for r in rows {
        w.write_record(&r).map_err(|e| e.to_string())?;
    }
    w.into_inner().map_err(|e| e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `metrics.csv`: attention split per target country and year.
pub fn metrics_csv(table: &BTreeMap<Iso3, BTreeMap<i32, AttentionSplit>>) -> Result<Vec<u8>, String> {
    let rows = table.iter().flat_map(|(c, years)| {
        years.iter().map(move |(y, s)| {
            vec![
                c.to_string(),
                y.to_string(),
                s.domestic.to_string(),
                s.foreign.to_string(),
                (s.domestic + s.foreign).to_string(),
                opt(s.ratio),
            ]
        })
    });
    csv_bytes(&METRICS_HEADER, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub country: Iso3,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub delta: f64,
    pub rank_pre: usize,
    pub rank_post: usize,
    pub nrc: f64,
}

/// Mean annual total attention before and after, ranks and NRC over every
/// country receiving attention in the table (years without attention read
/// as zero).
pub fn rank_rows(table: &BTreeMap<Iso3, BTreeMap<i32, AttentionSplit>>, periods: &PeriodSpec) -> Vec<RankRow> {
    let mut pre = BTreeMap::new();
    let mut post = BTreeMap::new();
    for (c, years) in table {
        let series: BTreeMap<i32, f64> = years.iter().map(|(y, s)| (*y, s.domestic + s.foreign)).collect();
        let d = delta_avg_annual(&series, periods);
        let n_pre = periods.pre_years().count() as f64;
        let pre_mean = periods.pre_years().map(|y| series.get(&y).copied().unwrap_or(0.0)).sum::<f64>() / n_pre;
        pre.insert(*c, pre_mean);
        post.insert(*c, pre_mean + d.value);
    }
    let n = pre.len();
    let rp = rank_countries(&pre);
    let rq = rank_countries(&post);
    let nrc = normalized_rank_change(&pre, &post, n);
    pre.iter()
        .map(|(c, &pm)| RankRow {
            country: *c,
            pre_mean: pm,
            post_mean: post[c],
            delta: post[c] - pm,
            rank_pre: rp[c],
            rank_post: rq[c],
            nrc: nrc[c],
        })
        .collect()
}

pub fn ranks_csv(rows: &[RankRow]) -> Result<Vec<u8>, String> {
    csv_bytes(
        &RANKS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.country.to_string(),
                r.pre_mean.to_string(),
                r.post_mean.to_string(),
                r.delta.to_string(),
                r.rank_pre.to_string(),
                r.rank_post.to_string(),
                r.nrc.to_string(),
            ]
        }),
    )
}

fn migration_csv(net: &DirectedCountryNetwork, covariates: &[CountryYearCovariates]) -> Result<Vec<u8>, String> {
    let stock: BTreeMap<(Iso3, i32), u64> = covariates.iter().map(|c| ((c.country, c.year), c.scholar_stock)).collect();
    let mut flows: BTreeMap<(Iso3, i32), (f64, f64)> = BTreeMap::new();
    for (key, edges) in &net.slices {
        for (&(o, d), &w) in edges {
            flows.entry((d, key.year)).or_default().0 += w;
            flows.entry((o, key.year)).or_default().1 += w;
        }
    }
    let rows = flows.into_iter().map(|((c, y), (inflow, outflow))| {
        let s = stock.get(&(c, y)).copied();
        vec![
            c.to_string(),
            y.to_string(),
            inflow.to_string(),
            outflow.to_string(),
            s.map(|v| v.to_string()).unwrap_or_default(),
            opt(s.and_then(|s| net_migration_rate(inflow, outflow, s as f64))),
        ]
    });
    csv_bytes(&MIGRATION_HEADER, rows)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, String> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| e.to_string())?;
    b.push(b'\n');
    Ok(b)
}

/// Headline numbers per treatment group for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
    pub within_r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrend_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrend_violated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEstimates {
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub summary: Vec<GroupSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub did: Option<DidResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrend: Option<PretrendResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrend_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidReport {
    pub groups: BTreeMap<String, BTreeSet<Iso3>>,
    pub controls: BTreeSet<Iso3>,
    pub event_year: i32,
    pub outcomes: Vec<OutcomeEstimates>,
}

fn estimate_outcome(panel: &Panel, groups: &[String], event_year: i32) -> OutcomeEstimates {
    let outcome = panel.measure.parse().unwrap_or(Outcome::Total);
    let mut est =
        OutcomeEstimates { outcome, error: None, summary: Vec::new(), did: None, pretrend: None, pretrend_error: None };
    // Groups with no rows (e.g. every treated country unmatched) are left
    // out rather than failing the others.
    let present: Vec<String> =
        groups.iter().filter(|g| panel.rows.iter().any(|r| r.group.as_ref() == Some(*g))).cloned().collect();
    let did = match did_estimate(panel, &present) {
        Ok(d) => d,
        Err(e) => {
            est.error = Some(e.to_string());
            return est;
        }
    };
    match parallel_trends_test(panel, &present, event_year) {
        Ok(p) => est.pretrend = Some(p),
        Err(e) => est.pretrend_error = Some(e.to_string()),
    }
    for c in &did.treatment {
        let group = c.name.strip_prefix("post_x_").unwrap_or(&c.name).to_string();
        let pt = est.pretrend.as_ref().and_then(|p| p.groups.iter().find(|g| g.group == group));
        est.summary.push(GroupSummary {
            group,
            beta: c.beta,
            se: c.se,
            p_value: c.p_value,
            within_r2: did.within_r2,
            pretrend_p: pt.map(|p| p.p_value),
            pretrend_violated: pt.map(|p| p.violated),
        });
    }
    est.did = Some(did);
    est
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub records: usize,
    pub with_mentions: usize,
    pub mentions: usize,
    pub masked_spans: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic_matches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub extraction: Option<ExtractionSummary>,
    pub attention: Option<BuildStats>,
    pub funding: Option<BuildStats>,
    pub attention_total_weight: Option<f64>,
    pub migration_events_skipped: Option<usize>,
    /// One-sided signed-rank test of post − pre mean attention over every
    /// ranked country.
    pub attention_increase: Option<SignedRankResult>,
    pub panel_diagnostics: BTreeMap<String, PanelDiagnostics>,
    pub eval: Option<EvalReport>,
}

// ---------------------------------------------------------------- runner

struct Runner {
    out_dir: PathBuf,
    stages: Vec<StageRecord>,
    outputs: BTreeMap<String, String>,
}

impl Runner {
    /// Run `f` as stage `name` if `ready`; record status and timing.
    fn stage<T>(&mut self, name: &str, ready: bool, f: impl FnOnce(&mut Self) -> Result<T, String>) -> Option<T> {
        if !ready {
            self.stages.push(StageRecord {
                name: name.into(),
                status: StageStatus::Skipped,
                millis: 0.0,
                detail: None,
            });
            return None;
        }
        let t0 = Instant::now();
        let r = f(self);
        let millis = t0.elapsed().as_secs_f64() * 1e3;
        let (status, detail, value) = match r {
            Ok(v) => (StageStatus::Ok, None, Some(v)),
            Err(e) => (StageStatus::Failed, Some(e), None),
        };
        self.stages.push(StageRecord { name: name.into(), status, millis, detail });
        value
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.stages.push(StageRecord {
            name: name.into(),
            status: StageStatus::Skipped,
            millis: 0.0,
            detail: Some(why.into()),
        });
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), String> {
        let path = self.out_dir.join(file);
        fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        self.outputs.insert(file.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

struct Loaded {
    records: Vec<PublicationRecord>,
    covariates: Vec<CountryYearCovariates>,
    migrations: Option<Vec<MigrationEvent>>,
    annotations: Option<Vec<AnnotationRecord>>,
    taxonomy: Taxonomy,
}

fn count_diags(diagnostics: &mut BTreeMap<String, usize>, label: &str, d: &[Diagnostic]) {
    let errors = d.iter().filter(|d| d.severity == Severity::Error).count();
    diagnostics.insert(format!("{label}.errors"), errors);
    diagnostics.insert(format!("{label}.warnings"), d.len() - errors);
}

/// Control roster and, for CEM, the treated countries kept.
fn control_roster(
    cfg: &RunConfig,
    covariates: &[CountryYearCovariates],
    excluded: &BTreeSet<Iso3>,
    cem: Option<&CemResult>,
) -> (BTreeSet<Iso3>, GroupSpec) {
    let treated = cfg.groups.members();
    match &cfg.controls {
        ControlSpec::World => {
            let pool = covariates
                .iter()
                .map(|c| c.country)
                .filter(|c| !treated.contains(c) && !excluded.contains(c))
                .collect();
            (pool, cfg.groups.clone())
        }
        ControlSpec::Mena { countries } => (countries.clone(), cfg.groups.clone()),
        ControlSpec::Cem { .. } => {
            let cem = cem.expect("cem result present when controls use it");
            let groups = cfg
                .groups
                .0
                .iter()
                .map(|(g, m)| (g.clone(), m.intersection(&cem.matched_treated).copied().collect()))
                .collect();
            (cem.matched_controls.clone(), GroupSpec(groups))
        }
    }
}

/// Execute every stage and write outputs plus `manifest.json` into the
/// output directory. Validation errors abort before any stage runs.
pub fn run_pipeline(cfg: &RunConfig, workers: usize) -> Result<RunManifest, PipelineError> {
    let config_diagnostics = validate(cfg);
    if has_errors(&config_diagnostics) {
        return Err(PipelineError::Invalid(config_diagnostics));
    }
    let out_dir = cfg.output_path();
    fs::create_dir_all(&out_dir).map_err(|source| PipelineError::Write { path: out_dir.clone(), source })?;

    let mut run = Runner { out_dir: out_dir.clone(), stages: Vec::new(), outputs: BTreeMap::new() };
    let mut diagnostics = BTreeMap::new();
    let mut input_hashes = BTreeMap::new();
    let mut report = RunReport {
        extraction: None,
        attention: None,
        funding: None,
        attention_total_weight: None,
        migration_events_skipped: None,
        attention_increase: None,
        panel_diagnostics: BTreeMap::new(),
        eval: None,
    };

    let gaz_src = load_gazetteer(cfg).map_err(|e| PipelineError::Invalid(vec![ConfigDiagnostic::error(e)]))?;
    let gaz = CompiledGazetteer::compile(&gaz_src)
        .map_err(|e| PipelineError::Invalid(vec![ConfigDiagnostic::error(format!("gazetteer: {e}"))]))?;
    let excluded = gaz_src.excluded_set();

    // load
    let loaded = run.stage("load", true, |_| {
        let opts = LoadOptions { year_window: cfg.year_window() };
        let mut hash_file = |label: &str, p: &Path| -> Result<(), String> {
            let path = cfg.resolve(p);
            let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            input_hashes.insert(label.to_string(), sha256_hex(&bytes));
            Ok(())
        };
        hash_file("publications", &cfg.inputs.publications)?;
        hash_file("covariates", &cfg.inputs.covariates)?;
        for (label, p) in [
            ("gazetteer", &cfg.inputs.gazetteer),
            ("taxonomy", &cfg.inputs.taxonomy),
            ("migrations", &cfg.inputs.migrations),
            ("annotations", &cfg.inputs.annotations),
        ] {
            if let Some(p) = p {
                hash_file(label, p)?;
            }
        }
        let pubs = load_corpus::<PublicationRecord>(&cfg.resolve(&cfg.inputs.publications), &opts)
            .map_err(|e| e.to_string())?;
        count_diags(&mut diagnostics, "publications", &pubs.diagnostics);
        let cov = load_covariates(&cfg.resolve(&cfg.inputs.covariates)).map_err(|e| e.to_string())?;
        count_diags(&mut diagnostics, "covariates", &cov.diagnostics);
        let migrations = match &cfg.inputs.migrations {
            Some(p) => {
                let m = load_corpus::<MigrationEvent>(&cfg.resolve(p), &opts).map_err(|e| e.to_string())?;
                count_diags(&mut diagnostics, "migrations", &m.diagnostics);
                Some(m.records)
            }
            None => None,
        };
        let annotations = match &cfg.inputs.annotations {
            Some(p) => {
                let a = load_corpus::<AnnotationRecord>(&cfg.resolve(p), &opts).map_err(|e| e.to_string())?;
                count_diags(&mut diagnostics, "annotations", &a.diagnostics);
                Some(a.records)
            }
            None => None,
        };
        let taxonomy = load_taxonomy(cfg)?;
        Ok(Loaded { records: pubs.records, covariates: cov.records, migrations, annotations, taxonomy })
    });

    // extract
    let query = cfg.topic_query().transpose().expect("validated");
    let mentions = run.stage("extract", loaded.is_some(), |run| {
        let l = loaded.as_ref().expect("ready");
        let m = extract_corpus(&l.records, &gaz, &ExtractOptions { workers, topic_query: query.as_ref() });
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &m).map_err(|e| e.to_string())?;
        run.write("mentions.jsonl", &buf)?;
        report.extraction = Some(ExtractionSummary {
            records: m.len(),
            with_mentions: m.iter().filter(|r| !r.mentioned.is_empty()).count(),
            mentions: m.iter().map(|r| r.mentioned.len()).sum(),
            masked_spans: m.iter().map(|r| r.masked_spans.len()).sum(),
            topic_matches: query.as_ref().map(|_| m.iter().filter(|r| r.topic_match == Some(true)).count()),
        });
        Ok(m)
    });

    // network
    let networks = run.stage("network", mentions.is_some(), |run| {
        let l = loaded.as_ref().expect("ready");
        let m: &[MentionResult] = mentions.as_ref().expect("ready");
        let selected: Vec<PublicationRecord>;
        let records: &[PublicationRecord] = if cfg.analysis.topic_filter {
            let keep: BTreeSet<&str> =
                m.iter().filter(|r| r.topic_match == Some(true)).map(|r| r.publication_id.as_str()).collect();
            selected = l.records.iter().filter(|r| keep.contains(r.id.as_str())).cloned().collect();
            &selected
        } else {
            &l.records
        };
        let opts =
            NetworkOptions { taxonomy: &l.taxonomy, excluded: &excluded, stratify: cfg.analysis.stratify, workers };
        let (att, att_stats) = build_attention(records, m, &opts);
        let (fund, fund_stats) = build_funding(records, m, &opts);
        for (file, net) in [("edges_attention.csv", &att), ("edges_funding.csv", &fund)] {
            let mut buf = Vec::new();
            write_edges_csv(&mut buf, net).map_err(|e| e.to_string())?;
            run.write(file, &buf)?;
        }
        let migration = match &l.migrations {
            Some(events) => {
                let (net, skipped) = build_migration(events, &excluded);
                let mut buf = Vec::new();
                write_edges_csv(&mut buf, &net).map_err(|e| e.to_string())?;
                run.write("edges_migration.csv", &buf)?;
                report.migration_events_skipped = Some(skipped);
                Some(net)
            }
            None => None,
        };
        report.attention_total_weight = Some(att.total_weight());
        report.attention = Some(att_stats);
        report.funding = Some(fund_stats);
        Ok((att, migration))
    });

    // metrics
    let table = run.stage("metrics", networks.is_some(), |run| {
        let l = loaded.as_ref().expect("ready");
        let (att, migration) = networks.as_ref().expect("ready");
        let table = attention_table(&att.collapse_disciplines());
        run.write("metrics.csv", &metrics_csv(&table)?)?;
        let ranks = rank_rows(&table, &cfg.periods);
        run.write("ranks.csv", &ranks_csv(&ranks)?)?;
        let deltas: Vec<f64> = ranks.iter().map(|r| r.delta).collect();
        report.attention_increase = signed_rank_test(&deltas, Alternative::Greater).ok();
        let flags = flag_hyperprolific(&l.records);
        let rows =
            flags.iter().flat_map(|(a, ys)| ys.iter().map(move |(y, n)| vec![a.clone(), y.to_string(), n.to_string()]));
        run.write("hyperprolific.csv", &csv_bytes(&HYPERPROLIFIC_HEADER, rows)?)?;
        if let Some(net) = migration {
            run.write("migration.csv", &migration_csv(net, &l.covariates)?)?;
        }
        Ok(table)
    });

    // eval
    match loaded.as_ref().and_then(|l| l.annotations.as_ref()) {
        Some(ann) => {
            run.stage("eval", mentions.is_some(), |_| {
                let r = evaluate(mentions.as_ref().expect("ready"), ann).map_err(|e| e.to_string())?;
                report.eval = Some(r);
                Ok(())
            });
        }
        None => run.skip("eval", "no annotations configured"),
    }

    // cem: always computed over the world pool as a diagnostic; it feeds
    // the panel only when controls use it.
    let cem_needed = matches!(cfg.controls, ControlSpec::Cem { .. });
    let cem = run.stage("cem", loaded.is_some(), |run| {
        let l = loaded.as_ref().expect("ready");
        let (cutpoints, which) = match &cfg.controls {
            ControlSpec::Cem { cutpoints, covariates } => (
                cutpoints.clone().unwrap_or_else(|| DEFAULT_CUTPOINTS.to_vec()),
                covariates.clone().unwrap_or_else(|| cfg.analysis.covariates.clone()),
            ),
            _ => (DEFAULT_CUTPOINTS.to_vec(), cfg.analysis.covariates.clone()),
        };
        let candidates: BTreeSet<Iso3> =
            l.covariates.iter().map(|c| c.country).filter(|c| !excluded.contains(c)).collect();
        let summaries = pre_period_summaries(&l.covariates, &candidates, &cfg.periods, &which);
        let names: Vec<String> = which.iter().map(|c| c.as_str().to_string()).collect();
        let r = cem_match(&summaries, &names, &cfg.groups.members(), &cutpoints).map_err(|e| e.to_string())?;
        run.write("cem.json", &json_bytes(&r)?)?;
        Ok(r)
    });

    // panel
    let panel_ready = table.is_some() && (!cem_needed || cem.is_some());
    let panels = run.stage("panel", panel_ready, |run| {
        let l = loaded.as_ref().expect("ready");
        let (controls, groups) = control_roster(cfg, &l.covariates, &excluded, cem.as_ref());
        let mut panels = Vec::new();
        for &outcome in &cfg.analysis.outcomes {
            let spec = PanelSpec {
                groups: &groups,
                controls: &controls,
                periods: &cfg.periods,
                outcome,
                zero_policy: cfg.analysis.zero_policy,
                covariates: &cfg.analysis.covariates,
            };
            let (panel, diag) = build_panel(table.as_ref().expect("ready"), &l.covariates, &spec);
            diagnostics.insert(format!("panel.{}.zero_outcome_dropped", outcome.as_str()), diag.zero_outcome_dropped);
            diagnostics.insert(format!("panel.{}.missing_covariates", outcome.as_str()), diag.missing_covariates.len());
            report.panel_diagnostics.insert(outcome.as_str().to_string(), diag);
            panels.push(panel);
        }
        let mut buf = Vec::new();
        write_panel_csv(&mut buf, &panels).map_err(|e| e.to_string())?;
        run.write("panel.csv", &buf)?;
        Ok((panels, controls, groups))
    });

    // did
    run.stage("did", panels.is_some(), |run| {
        let (panels, controls, groups) = panels.as_ref().expect("ready");
        let labels = groups.labels();
        let outcomes: Vec<OutcomeEstimates> =
            panels.iter().map(|p| estimate_outcome(p, &labels, cfg.periods.event_year)).collect();
        let failures: Vec<String> =
            outcomes.iter().filter_map(|o| o.error.as_ref().map(|e| format!("{}: {e}", o.outcome.as_str()))).collect();
        let rep = DidReport {
            groups: groups.0.clone(),
            controls: controls.clone(),
            event_year: cfg.periods.event_year,
            outcomes,
        };
        run.write("did.json", &json_bytes(&rep)?)?;
        if failures.is_empty() {
            Ok(())
        } else {
            Err(failures.join("; "))
        }
    });

    let report_bytes = json_bytes(&report).map_err(|e| PipelineError::Invalid(vec![ConfigDiagnostic::error(e)]))?;
    run.write("report.json", &report_bytes)
        .map_err(|e| PipelineError::Write { path: out_dir.join("report.json"), source: std::io::Error::other(e) })?;

    let manifest = RunManifest {
        config_hash: cfg.hash(),
        gazetteer_hash: gaz.source_hash().to_string(),
        workers,
        inputs: input_hashes,
        stages: run.stages,
        outputs: run.outputs,
        diagnostics,
        config_diagnostics,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let bytes = json_bytes(&manifest).expect("manifest serializes");
    fs::write(&path, bytes).map_err(|source| PipelineError::Write { path, source })?;
    Ok(manifest)
}

// ---------------------------------------------------------------- fixture

/// Config text for a fixture directory written by [`write_reference_fixture`].
pub fn fixture_config_text(mena_controls: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "output_dir = \"out\"");
    let _ = writeln!(s, "workers = 1\n");
    let _ = writeln!(s, "[inputs]");
    for (k, f) in [
        ("publications", "publications.jsonl"),
        ("covariates", "covariates.csv"),
        ("gazetteer", "gazetteer.toml"),
        ("migrations", "migrations.jsonl"),
        ("annotations", "annotations.jsonl"),
    ] {
        let _ = writeln!(s, "{k} = \"{f}\"");
    }
    let _ = writeln!(s, "\n[periods]\npre = [2002, 2010]\npost = [2011, 2019]\nevent_year = 2011\n");
    let _ = writeln!(s, "[groups]\nGO = [\"EGY\", \"TUN\"]\nCW = [\"LBY\", \"SYR\", \"YEM\"]\nGC = [\"BHR\", \"JOR\", \"KWT\", \"MAR\", \"OMN\"]\n");
    if mena_controls {
        let _ = writeln!(
            s,
            "[controls]\nkind = \"mena\"\ncountries = [\"ARE\", \"DZA\", \"IRN\", \"IRQ\", \"ISR\", \"LBN\", \"PSE\", \"QAT\", \"SAU\", \"TUR\"]\n"
        );
    } else {
        let _ = writeln!(s, "[controls]\nkind = \"world\"\n");
    }
    let _ = writeln!(s, "[analysis]\noutcomes = [\"total\", \"domestic\", \"foreign\"]\nzero_policy = \"drop\"");
    let _ = writeln!(s, "covariates = [\"log_gdp_per_capita\", \"log_population\"]\ntopic_query = \"default\"");
    s
}

/// Plan of the reference fixture: 3,000 records oversampling the region,
/// a planted EGY→SAU flow of 162 scholars a year after 2011.
pub fn reference_plan() -> crate::synth::SynthPlan {
    use crate::synth::*;
    let egy = Iso3::new("EGY").expect("code");
    let sau = Iso3::new("SAU").expect("code");
    SynthPlan {
        seed: 20110125,
        corpus: CorpusPlan {
            n_publications: 3000,
            plants: vec![PlantEntry { record: 0, countries: BTreeSet::from([egy]) }],
            ..Default::default()
        },
        panel: PanelPlan::default(),
        migration: MigrationPlan {
            flows: vec![FlowPlan { origin: egy, destination: sau, from: 2011, to: 2019, per_year: 162 }],
            ..Default::default()
        },
        annotations: AnnotationPlan::default(),
    }
}

/// Write the synthetic inputs of `plan` plus `run.toml` into `dir`.
pub fn write_reference_fixture(
    plan: &crate::synth::SynthPlan,
    dir: &Path,
) -> Result<PathBuf, crate::synth::SynthError> {
    crate::synth::write_fixture_data(plan, &GazetteerSource::default_source(), dir)?;
    let path = dir.join("run.toml");
    fs::write(&path, fixture_config_text(true))
        .map_err(|source| crate::synth::SynthError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_in(dir: &Path, extra: &str) -> RunConfig {
        let text = format!("[inputs]\npublications = \"p.jsonl\"\ncovariates = \"c.csv\"\n{extra}");
        RunConfig::from_toml_str(&text, dir).unwrap()
    }

    #[test]
    fn missing_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = validate(&cfg_in(dir.path(), ""));
        assert_eq!(d.iter().filter(|d| d.severity == Severity::Error).count(), 2);
        assert!(d[1].message.contains("covariates"));
    }

    #[test]
    fn valid_config_has_no_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.jsonl"), "").unwrap();
        fs::write(dir.path().join("c.csv"), "").unwrap();
        assert_eq!(validate(&cfg_in(dir.path(), "")), vec![]);
    }

    #[test]
    fn overlapping_periods_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.jsonl"), "").unwrap();
        fs::write(dir.path().join("c.csv"), "").unwrap();
        let cfg = cfg_in(dir.path(), "[periods]\npre = [2002, 2012]\npost = [2011, 2019]\nevent_year = 2013\n");
        let d = validate(&cfg);
        assert!(d.iter().all(|d| d.message.starts_with("PeriodSpec")), "{d:?}");
        assert!(!d.is_empty());
    }

    #[test]
    fn excluded_group_member_warns() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.jsonl"), "").unwrap();
        fs::write(dir.path().join("c.csv"), "").unwrap();
        let cfg = cfg_in(dir.path(), "[groups]\nGO = [\"EGY\", \"CYP\"]\n");
        let d = validate(&cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
        assert!(d[0].message.contains("CYP"));
    }

    #[test]
    fn worker_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(dir.path(), "");
        let cfg = RunConfig { workers: Some(3), ..cfg };
        // The environment is process-wide; only the flag path is checked
        // here, the env path in the CLI tests.
        assert_eq!(cfg.resolve_workers(Some(5)), 5);
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let dir = tempfile::tempdir().unwrap();
        let a = cfg_in(dir.path(), "");
        let b = RunConfig { workers: Some(8), output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { controls: ControlSpec::Mena { countries: BTreeSet::new() }, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn control_spec_toml() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(dir.path(), "[controls]\nkind = \"cem\"\ncutpoints = [-1.0, 0.0, 1.0]\n");
        assert_eq!(cfg.controls, ControlSpec::Cem { cutpoints: Some(vec![-1.0, 0.0, 1.0]), covariates: None });
        let cfg = cfg_in(dir.path(), "[analysis]\nzero_policy = { offset = 1.0 }\n");
        assert_eq!(cfg.analysis.zero_policy, ZeroPolicy::Offset(1.0));
    }
}
