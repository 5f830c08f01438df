//! Record formats and JSONL/CSV ingestion.
//!
//! Every input file is read line by line. Lines that fail to parse or
//! validate become [`Diagnostic`]s carrying their 1-based line number and
//! are skipped; the remaining records are returned. Duplicate keys are the
//! one hard error, since they make downstream joins ambiguous.

mod taxonomy;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::iso3::Iso3;

pub use taxonomy::{discipline_weights, AreaInfo, Discipline, DisciplineWeights, Taxonomy, TaxonomyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorEntry {
    pub author_id: String,
    #[serde(default)]
    pub affiliation_countries: Vec<Iso3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub id: String,
    pub year: i32,
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    pub subject_areas: Vec<u16>,
    pub authors: Vec<AuthorEntry>,
    #[serde(default)]
    pub funder_countries: Vec<Iso3>,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub publication_id: String,
    pub coder_a: BTreeSet<Iso3>,
    pub coder_b: BTreeSet<Iso3>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub scholar_id: String,
    pub year: i32,
    pub origin: Iso3,
    pub destination: Iso3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryYearCovariates {
    pub country: Iso3,
    pub year: i32,
    pub gdp_per_capita: f64,
    pub population: u64,
    pub researcher_population: u64,
    pub scholar_stock: u64,
}

/// Header of `covariates.csv`, in column order.
pub const COVARIATES_HEADER: [&str; 6] =
    ["country", "year", "gdp_per_capita", "population", "researcher_population", "scholar_stock"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A per-line problem found while loading. Errors mean the line was
/// skipped; warnings mean it was kept with something dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<Diagnostic>,
}

impl<T> Loaded<T> {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{kind}: duplicate key `{key}` on line {line} (first seen on line {first_line})")]
    Duplicate { kind: CorpusKind, key: String, line: usize, first_line: usize },
    #[error("covariates header must be `{expected}`, found `{found}`")]
    CovariatesHeader { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Write(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Publications,
    Annotations,
    Migrations,
    Covariates,
}

impl std::fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusKind::Publications => "publications",
            CorpusKind::Annotations => "annotations",
            CorpusKind::Migrations => "migrations",
            CorpusKind::Covariates => "covariates",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Inclusive publication-year window.
    pub year_window: (i32, i32),
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { year_window: (2002, 2019) }
    }
}

/// A record type that can be loaded from a JSONL file.
pub trait CorpusRecord: Sized {
    const KIND: CorpusKind;
    type Raw: DeserializeOwned;

    /// Turn a parsed line into a record. `Err` skips the line; anything
    /// pushed onto `warnings` is reported while keeping the record.
    fn validate(raw: Self::Raw, opts: &LoadOptions, warnings: &mut Vec<String>) -> Result<Self, String>;

    /// Uniqueness key, if the kind has one.
    fn key(&self) -> Option<String>;
}

#[derive(Deserialize)]
pub struct RawAuthor {
    author_id: String,
    #[serde(default)]
    affiliation_countries: Vec<String>,
}

#[derive(Deserialize)]
pub struct RawPublication {
    id: String,
    year: i32,
    #[serde(default, deserialize_with = "null_as_empty")]
    title: String,
    #[serde(rename = "abstract", default, deserialize_with = "null_as_empty")]
    abstract_text: String,
    #[serde(default)]
    subject_areas: Vec<u16>,
    #[serde(default)]
    authors: Vec<RawAuthor>,
    #[serde(default)]
    funder_countries: Vec<String>,
    #[serde(default = "default_language")]
    language: String,
    #[serde(default)]
    keywords: Vec<String>,
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

/// Parse country codes, dropping malformed or unassigned ones with a
/// warning and removing duplicates while keeping first-seen order.
fn clean_codes(raw: &[String], what: &str, warnings: &mut Vec<String>) -> Vec<Iso3> {
    let mut out: Vec<Iso3> = Vec::with_capacity(raw.len());
    for s in raw {
        match Iso3::new(s) {
            Ok(code) if code.is_assigned() => {
                if !out.contains(&code) {
                    out.push(code);
                }
            }
            _ => warnings.push(format!("unknown country code `{s}` in {what} dropped")),
        }
    }
    out
}

impl CorpusRecord for PublicationRecord {
    const KIND: CorpusKind = CorpusKind::Publications;
    type Raw = RawPublication;

    fn validate(raw: RawPublication, opts: &LoadOptions, warnings: &mut Vec<String>) -> Result<Self, String> {
        if raw.id.is_empty() {
            return Err("empty id".into());
        }
        let (lo, hi) = opts.year_window;
        if raw.year < lo || raw.year > hi {
            return Err(format!("year {} outside window {lo}-{hi}", raw.year));
        }
        if raw.subject_areas.is_empty() {
            return Err("subject_areas is empty".into());
        }
        let authors = raw
            .authors
            .into_iter()
            .map(|a| {
                let what = format!("affiliations of author {}", a.author_id);
                AuthorEntry {
                    affiliation_countries: clean_codes(&a.affiliation_countries, &what, warnings),
                    author_id: a.author_id,
                }
            })
            .collect();
        Ok(PublicationRecord {
            funder_countries: clean_codes(&raw.funder_countries, "funder_countries", warnings),
            id: raw.id,
            year: raw.year,
            title: raw.title,
            abstract_text: raw.abstract_text,
            subject_areas: raw.subject_areas,
            authors,
            language: raw.language,
            keywords: raw.keywords,
        })
    }

    fn key(&self) -> Option<String> {
        Some(self.id.clone())
    }
}

#[derive(Deserialize)]
pub struct RawAnnotation {
    publication_id: String,
    coder_a: Vec<String>,
    coder_b: Vec<String>,
}

impl CorpusRecord for AnnotationRecord {
    const KIND: CorpusKind = CorpusKind::Annotations;
    type Raw = RawAnnotation;

    fn validate(raw: RawAnnotation, _: &LoadOptions, warnings: &mut Vec<String>) -> Result<Self, String> {
        Ok(AnnotationRecord {
            coder_a: clean_codes(&raw.coder_a, "coder_a", warnings).into_iter().collect(),
            coder_b: clean_codes(&raw.coder_b, "coder_b", warnings).into_iter().collect(),
            publication_id: raw.publication_id,
        })
    }

    fn key(&self) -> Option<String> {
        Some(self.publication_id.clone())
    }
}

#[derive(Deserialize)]
pub struct RawMigration {
    scholar_id: String,
    year: i32,
    origin: String,
    destination: String,
}

impl CorpusRecord for MigrationEvent {
    const KIND: CorpusKind = CorpusKind::Migrations;
    type Raw = RawMigration;

    fn validate(raw: RawMigration, _: &LoadOptions, _: &mut Vec<String>) -> Result<Self, String> {
        let code = |s: &str| match Iso3::new(s) {
            Ok(c) if c.is_assigned() => Ok(c),
            _ => Err(format!("unknown country code `{s}`")),
        };
        let origin = code(&raw.origin)?;
        let destination = code(&raw.destination)?;
        if origin == destination {
            return Err(format!("origin equals destination ({origin})"));
        }
        Ok(MigrationEvent { scholar_id: raw.scholar_id, year: raw.year, origin, destination })
    }

    fn key(&self) -> Option<String> {
        None
    }
}

/// Load a JSONL file of `T` records.
pub fn load_corpus<T: CorpusRecord>(path: &Path, opts: &LoadOptions) -> Result<Loaded<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_corpus(BufReader::new(file), opts).map_err(|e| match e {
        CorpusError::Write(source) => CorpusError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Same as [`load_corpus`] over any reader.
pub fn parse_corpus<T: CorpusRecord, R: BufRead>(reader: R, opts: &LoadOptions) -> Result<Loaded<T>, CorpusError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut warnings = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: T::Raw = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                diagnostics.push(Diagnostic {
                    line: line_no,
                    severity: Severity::Error,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        warnings.clear();
        let record = match T::validate(raw, opts, &mut warnings) {
            Ok(r) => r,
            Err(message) => {
                diagnostics.push(Diagnostic { line: line_no, severity: Severity::Error, message });
                continue;
            }
        };
        diagnostics.extend(warnings.drain(..).map(|message| Diagnostic {
            line: line_no,
            severity: Severity::Warning,
            message,
        }));
        if let Some(key) = record.key() {
            if let Some(&first_line) = seen.get(&key) {
                return Err(CorpusError::Duplicate { kind: T::KIND, key, line: line_no, first_line });
            }
            seen.insert(key, line_no);
        }
        records.push(record);
    }
    Ok(Loaded { records, diagnostics })
}

/// Write records as JSON lines.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, records: &[T]) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RawCovariates {
    country: String,
    year: i32,
    gdp_per_capita: f64,
    population: f64,
    researcher_population: f64,
    scholar_stock: f64,
}

fn as_count(value: f64, field: &str, positive: bool) -> Result<u64, String> {
    let ok = value.is_finite() && value.fract() == 0.0 && if positive { value > 0.0 } else { value >= 0.0 };
    if !ok {
        let want = if positive { "a positive integer" } else { "a non-negative integer" };
        return Err(format!("{field} must be {want}, got {value}"));
    }
    Ok(value as u64)
}

/// Load `covariates.csv`. The header must match [`COVARIATES_HEADER`].
pub fn load_covariates(path: &Path) -> Result<Loaded<CountryYearCovariates>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_covariates(file)
}

pub fn parse_covariates<R: Read>(reader: R) -> Result<Loaded<CountryYearCovariates>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != COVARIATES_HEADER {
        return Err(CorpusError::CovariatesHeader { expected: COVARIATES_HEADER.join(","), found: header.join(",") });
    }
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<(Iso3, i32), usize> = HashMap::new();
    for row in rdr.deserialize::<RawCovariates>() {
        // Header is line 1.
        let line = records.len() + diagnostics.len() + 2;
        let result = row.map_err(|e| e.to_string()).and_then(|raw| {
            let country = Iso3::new(&raw.country).map_err(|e| e.to_string())?;
            if !(raw.gdp_per_capita.is_finite() && raw.gdp_per_capita > 0.0) {
                return Err(format!("gdp_per_capita must be positive, got {}", raw.gdp_per_capita));
            }
            Ok(CountryYearCovariates {
                country,
                year: raw.year,
                gdp_per_capita: raw.gdp_per_capita,
                population: as_count(raw.population, "population", true)?,
                researcher_population: as_count(raw.researcher_population, "researcher_population", false)?,
                scholar_stock: as_count(raw.scholar_stock, "scholar_stock", false)?,
            })
        });
        match result {
            Ok(rec) => {
                let key = (rec.country, rec.year);
                if let Some(&first_line) = seen.get(&key) {
                    return Err(CorpusError::Duplicate {
                        kind: CorpusKind::Covariates,
                        key: format!("{},{}", key.0, key.1),
                        line,
                        first_line,
                    });
                }
                seen.insert(key, line);
                records.push(rec);
            }
            Err(message) => diagnostics.push(Diagnostic { line, severity: Severity::Error, message }),
        }
    }
    Ok(Loaded { records, diagnostics })
}

pub fn write_covariates<W: Write>(out: W, rows: &[CountryYearCovariates]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COVARIATES_HEADER)?;
    for r in rows {
        w.write_record([
            r.country.to_string(),
            r.year.to_string(),
            r.gdp_per_capita.to_string(),
            r.population.to_string(),
            r.researcher_population.to_string(),
            r.scholar_stock.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"id":"p1","year":2012,"title":"Water in Egypt","abstract":"","subject_areas":[2300],"authors":[{"author_id":"a1","affiliation_countries":["EGY"]}],"funder_countries":[],"language":"en"}"#;

    fn pubs(text: &str) -> Result<Loaded<PublicationRecord>, CorpusError> {
        parse_corpus(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn single_valid_line() {
        let loaded = pubs(VALID).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert!(loaded.diagnostics.is_empty());
        assert_eq!(loaded.records[0].authors[0].affiliation_countries, vec![Iso3::new("EGY").unwrap()]);
    }

    #[test]
    fn empty_file() {
        let loaded = pubs("").unwrap();
        assert!(loaded.records.is_empty());
        assert!(loaded.diagnostics.is_empty());
    }

    #[test]
    fn malformed_line_reported_with_line_number() {
        let lines = [
            VALID.to_string(),
            VALID.replace("\"p1\"", "\"p2\""),
            VALID.replace("\"p1\"", "\"p3\""),
            "{\"id\": \"p4\", \"year\": ".to_string(),
        ];
        let loaded = pubs(&lines.join("\n")).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.diagnostics.len(), 1);
        assert_eq!(loaded.diagnostics[0].line, 4);
        assert_eq!(loaded.diagnostics[0].severity, Severity::Error);
    }

    #[test]
    fn duplicate_id_is_hard_error() {
        let text = format!("{VALID}\n{VALID}");
        match pubs(&text) {
            Err(CorpusError::Duplicate { key, line, first_line, .. }) => {
                assert_eq!((key.as_str(), line, first_line), ("p1", 2, 1));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_code_dropped_with_warning() {
        let text = VALID.replace("[\"EGY\"]", "[\"EGY\",\"ZZZ\",\"egy\",\"EGY\"]");
        let loaded = pubs(&text).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.records[0].authors[0].affiliation_countries.len(), 1);
        assert_eq!(loaded.diagnostics.len(), 2);
        assert!(loaded.diagnostics.iter().all(|d| d.severity == Severity::Warning && d.line == 1));
    }

    #[test]
    fn missing_abstract_becomes_empty() {
        let text = VALID.replace(",\"abstract\":\"\"", "");
        let loaded = pubs(&text).unwrap();
        assert_eq!(loaded.records[0].abstract_text, "");
        let text = VALID.replace("\"abstract\":\"\"", "\"abstract\":null");
        assert_eq!(pubs(&text).unwrap().records[0].abstract_text, "");
    }

    #[test]
    fn out_of_window_and_empty_areas_rejected() {
        let a = VALID.replace("2012", "1999");
        let b = VALID.replace("[2300]", "[]");
        let loaded = pubs(&format!("{a}\n{b}")).unwrap();
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.errors().count(), 2);
    }

    #[test]
    fn migration_self_loop_rejected() {
        let text = "{\"scholar_id\":\"s\",\"year\":2013,\"origin\":\"EGY\",\"destination\":\"EGY\"}\n\
                    {\"scholar_id\":\"s\",\"year\":2013,\"origin\":\"EGY\",\"destination\":\"SAU\"}";
        let loaded: Loaded<MigrationEvent> = parse_corpus(text.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.diagnostics[0].line, 1);
    }

    #[test]
    fn covariates_parse_and_reject() {
        let text = "country,year,gdp_per_capita,population,researcher_population,scholar_stock\n\
                    EGY,2010,2600.5,82000000,50000,12000\n\
                    TUN,2010,-1,11000000,5000,3000\n";
        let loaded = parse_covariates(text.as_bytes()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.diagnostics[0].line, 3);

        let dup = "country,year,gdp_per_capita,population,researcher_population,scholar_stock\n\
                   EGY,2010,1,1,1,1\nEGY,2010,1,1,1,1\n";
        assert!(matches!(parse_covariates(dup.as_bytes()), Err(CorpusError::Duplicate { .. })));

        let bad = "country,year\nEGY,2010\n";
        assert!(matches!(parse_covariates(bad.as_bytes()), Err(CorpusError::CovariatesHeader { .. })));
    }
}
