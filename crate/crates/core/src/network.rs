//! Directed country networks: attention, funding and migration.
//!
//! Attention follows a bipartite construction: a paper links its authors'
//! affiliation countries (sources) to the countries it mentions (targets).
//! The projection uses fractional counting so each contributing paper adds
//! exactly 1 to the network: every author with at least one resolvable
//! affiliation carries an equal share, split evenly across that author's
//! countries, and each source share is split evenly across the mentions.
//! Authors with no resolvable affiliation are left out, which is the same
//! as renormalising over the resolvable ones.
//!
//! Excluded territories never appear as a source or a target. Papers whose
//! subject areas all fall in excluded disciplines contribute nothing, in
//! both stratified and unstratified networks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{discipline_weights, Discipline, MigrationEvent, PublicationRecord, Taxonomy};
use crate::extract::MentionResult;
use crate::iso3::Iso3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Attention,
    Funding,
    Migration,
}

impl NetworkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetworkKind::Attention => "attention",
            NetworkKind::Funding => "funding",
            NetworkKind::Migration => "migration",
        }
    }
}

impl std::str::FromStr for NetworkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attention" => Ok(NetworkKind::Attention),
            "funding" => Ok(NetworkKind::Funding),
            "migration" => Ok(NetworkKind::Migration),
            other => Err(format!("unknown network kind `{other}`")),
        }
    }
}

/// A yearly slice, optionally restricted to one discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceKey {
    pub year: i32,
    pub discipline: Option<Discipline>,
}

/// (source, target) → weight.
pub type EdgeMap = BTreeMap<(Iso3, Iso3), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedCountryNetwork {
    pub kind: NetworkKind,
    pub slices: BTreeMap<SliceKey, EdgeMap>,
}

impl DirectedCountryNetwork {
    pub fn new(kind: NetworkKind) -> Self {
        DirectedCountryNetwork { kind, slices: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.slices.values().all(|s| s.is_empty())
    }

    /// Every country appearing as a source or target.
    pub fn nodes(&self) -> BTreeSet<Iso3> {
        self.slices.values().flat_map(|s| s.keys().flat_map(|(a, b)| [*a, *b])).collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.slices.keys().map(|k| k.year).collect()
    }

    pub fn is_stratified(&self) -> bool {
        self.slices.keys().any(|k| k.discipline.is_some())
    }

    pub fn total_weight(&self) -> f64 {
        self.slices.values().flat_map(|s| s.values()).sum()
    }

    fn add(&mut self, key: SliceKey, src: Iso3, dst: Iso3, w: f64) {
        *self.slices.entry(key).or_default().entry((src, dst)).or_insert(0.0) += w;
    }

    /// Add every edge of `other` into `self`.
    pub fn merge(&mut self, other: &DirectedCountryNetwork) {
        for (key, edges) in &other.slices {
            for (&(s, t), &w) in edges {
                self.add(*key, s, t, w);
            }
        }
    }

    /// Sum discipline slices into plain yearly slices.
    pub fn collapse_disciplines(&self) -> DirectedCountryNetwork {
        let mut out = DirectedCountryNetwork::new(self.kind);
        for (key, edges) in &self.slices {
            for (&(s, t), &w) in edges {
                out.add(SliceKey { year: key.year, discipline: None }, s, t, w);
            }
        }
        out
    }
}

/// Per-paper bookkeeping from a network build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub papers: usize,
    /// Papers adding weight 1 to the network.
    pub contributing: usize,
    pub no_mentions: usize,
    pub no_source: usize,
    /// Papers only in excluded disciplines.
    pub excluded_discipline: usize,
    /// Records with no extraction result.
    pub missing_result: usize,
}

fn targets(mentions: &BTreeSet<Iso3>, excluded: &BTreeSet<Iso3>) -> Vec<Iso3> {
    mentions.iter().filter(|c| !excluded.contains(c)).copied().collect()
}

fn spread(sources: &BTreeMap<Iso3, f64>, targets: &[Iso3]) -> EdgeMap {
    let mut out = EdgeMap::new();
    if targets.is_empty() {
        return out;
    }
    let share = 1.0 / targets.len() as f64;
    for (&src, &w) in sources {
        for &dst in targets {
            *out.entry((src, dst)).or_insert(0.0) += w * share;
        }
    }
    out
}

/// Attention edges contributed by one paper; empty when no author
/// resolves to a country or nothing is mentioned.
pub fn paper_edge_weights(record: &PublicationRecord, mentions: &BTreeSet<Iso3>, excluded: &BTreeSet<Iso3>) -> EdgeMap {
    let resolved: Vec<BTreeSet<Iso3>> = record
        .authors
        .iter()
        .map(|a| a.affiliation_countries.iter().filter(|c| !excluded.contains(c)).copied().collect::<BTreeSet<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    let mut sources = BTreeMap::new();
    for affils in &resolved {
        let w = 1.0 / (resolved.len() * affils.len()) as f64;
        for &c in affils {
            *sources.entry(c).or_insert(0.0) += w;
        }
    }
    spread(&sources, &targets(mentions, excluded))
}

/// Funding edges contributed by one paper: each funder country carries an
/// equal share, split evenly across the mentions.
pub fn funding_edge_weights(
    record: &PublicationRecord,
    mentions: &BTreeSet<Iso3>,
    excluded: &BTreeSet<Iso3>,
) -> EdgeMap {
    let funders: BTreeSet<Iso3> = record.funder_countries.iter().filter(|c| !excluded.contains(c)).copied().collect();
    let w = 1.0 / funders.len() as f64;
    let sources: BTreeMap<Iso3, f64> = funders.into_iter().map(|c| (c, w)).collect();
    spread(&sources, &targets(mentions, excluded))
}

#[derive(Debug, Clone, Copy)]
pub struct NetworkOptions<'a> {
    pub taxonomy: &'a Taxonomy,
    pub excluded: &'a BTreeSet<Iso3>,
    pub stratify: bool,
    pub workers: usize,
}

enum Outcome {
    Edges(Vec<(SliceKey, EdgeMap)>),
    MissingResult,
    NoMentions,
    ExcludedDiscipline,
    NoSource,
}

fn build(
    kind: NetworkKind,
    records: &[PublicationRecord],
    mentions: &[MentionResult],
    opts: &NetworkOptions<'_>,
    edges_of: fn(&PublicationRecord, &BTreeSet<Iso3>, &BTreeSet<Iso3>) -> EdgeMap,
) -> (DirectedCountryNetwork, BuildStats) {
    let by_id: BTreeMap<&str, &MentionResult> = mentions.iter().map(|m| (m.publication_id.as_str(), m)).collect();
    let mut order: Vec<&PublicationRecord> = records.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let per_paper: Vec<Outcome> = crate::with_workers(opts.workers, || {
        order
            .par_iter()
            .map(|r| {
                let Some(m) = by_id.get(r.id.as_str()) else { return Outcome::MissingResult };
                if targets(&m.mentioned, opts.excluded).is_empty() {
                    return Outcome::NoMentions;
                }
                let dw = discipline_weights(r, opts.taxonomy);
                if dw.weights.is_empty() {
                    return Outcome::ExcludedDiscipline;
                }
                let edges = edges_of(r, &m.mentioned, opts.excluded);
                if edges.is_empty() {
                    return Outcome::NoSource;
                }
                if opts.stratify {
                    Outcome::Edges(
                        dw.weights
                            .iter()
                            .map(|(&d, &w)| {
                                let scaled = edges.iter().map(|(k, v)| (*k, v * w)).collect();
                                (SliceKey { year: r.year, discipline: Some(d) }, scaled)
                            })
                            .collect(),
                    )
                } else {
                    Outcome::Edges(vec![(SliceKey { year: r.year, discipline: None }, edges)])
                }
            })
            .collect()
    });

    // Sequential accumulation in publication-id order keeps float sums
    // independent of the worker count.
    let mut net = DirectedCountryNetwork::new(kind);
    let mut stats = BuildStats { papers: records.len(), ..Default::default() };
    for outcome in per_paper {
        match outcome {
            Outcome::Edges(slices) => {
                stats.contributing += 1;
                for (key, edges) in slices {
                    for ((s, t), w) in edges {
                        net.add(key, s, t, w);
                    }
                }
            }
            Outcome::MissingResult => stats.missing_result += 1,
            Outcome::NoMentions => stats.no_mentions += 1,
            Outcome::ExcludedDiscipline => stats.excluded_discipline += 1,
            Outcome::NoSource => stats.no_source += 1,
        }
    }
    (net, stats)
}

/// Scholarly attention: affiliation countries → mentioned countries.
pub fn build_attention(
    records: &[PublicationRecord],
    mentions: &[MentionResult],
    opts: &NetworkOptions<'_>,
) -> (DirectedCountryNetwork, BuildStats) {
    build(NetworkKind::Attention, records, mentions, opts, paper_edge_weights)
}

/// Scholarly funding: funder countries → mentioned countries.
pub fn build_funding(
    records: &[PublicationRecord],
    mentions: &[MentionResult],
    opts: &NetworkOptions<'_>,
) -> (DirectedCountryNetwork, BuildStats) {
    build(NetworkKind::Funding, records, mentions, opts, funding_edge_weights)
}

/// Scholar migration counts per (year, origin → destination). Events
/// touching an excluded territory are skipped; their number is returned.
pub fn build_migration(events: &[MigrationEvent], excluded: &BTreeSet<Iso3>) -> (DirectedCountryNetwork, usize) {
    let mut counts: BTreeMap<SliceKey, BTreeMap<(Iso3, Iso3), u64>> = BTreeMap::new();
    let mut skipped = 0;
    for e in events {
        if excluded.contains(&e.origin) || excluded.contains(&e.destination) {
            skipped += 1;
            continue;
        }
        *counts
            .entry(SliceKey { year: e.year, discipline: None })
            .or_default()
            .entry((e.origin, e.destination))
            .or_insert(0) += 1;
    }
    let slices = counts.into_iter().map(|(k, m)| (k, m.into_iter().map(|(e, n)| (e, n as f64)).collect())).collect();
    (DirectedCountryNetwork { kind: NetworkKind::Migration, slices }, skipped)
}

// ---------------------------------------------------------------- CSV

pub const EDGES_HEADER: [&str; 5] = ["year", "discipline", "source", "target", "weight"];

#[derive(Debug, thiserror::Error)]
pub enum EdgesError {
    #[error("edges file: {0}")]
    Csv(#[from] csv::Error),
    #[error("edges file header must be `{}`", EDGES_HEADER.join(","))]
    Header,
    #[error("edges file line {line}: {message}")]
    Row { line: u64, message: String },
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    year: i32,
    discipline: String,
    source: Iso3,
    target: Iso3,
    weight: f64,
}

/// Write edges sorted by (year, discipline, source, target); the
/// discipline column is empty for unstratified slices.
pub fn write_edges_csv<W: Write>(out: W, net: &DirectedCountryNetwork) -> Result<(), EdgesError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(EDGES_HEADER)?;
    for (key, edges) in &net.slices {
        for (&(source, target), &weight) in edges {
            w.serialize(EdgeRow {
                year: key.year,
                discipline: key.discipline.map_or(String::new(), |d| d.as_str().to_string()),
                source,
                target,
                weight,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_edges_csv<R: Read>(input: R, kind: NetworkKind) -> Result<DirectedCountryNetwork, EdgesError> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(EDGES_HEADER) {
        return Err(EdgesError::Header);
    }
    let mut net = DirectedCountryNetwork::new(kind);
    for row in rdr.deserialize::<EdgeRow>() {
        let row = row?;
        let discipline = if row.discipline.is_empty() {
            None
        } else {
            Some(Discipline::parse(&row.discipline).ok_or_else(|| EdgesError::Row {
                line: 0,
                message: format!("unknown discipline `{}`", row.discipline),
            })?)
        };
        if !(row.weight.is_finite() && row.weight >= 0.0) {
            return Err(EdgesError::Row {
                line: 0,
                message: format!("weight {} is not a non-negative number", row.weight),
            });
        }
        net.add(SliceKey { year: row.year, discipline }, row.source, row.target, row.weight);
    }
    Ok(net)
}
