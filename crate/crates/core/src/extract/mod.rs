//! Country-mention extraction.
//!
//! Rule order per record: strip the copyright tail from the abstract, mask
//! exclusion phrases, match aliases, drop excluded territories, then drop
//! countries suppressed for one of the record's subject areas.

mod query;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PublicationRecord;
use crate::gazetteer::{AliasHit, CompiledGazetteer};
use crate::iso3::Iso3;

pub use query::{QueryError, TopicQuery, DEFAULT_TOPIC_QUERY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub iso3: Iso3,
    pub field: Field,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MaskReason {
    ExclusionPhrase { phrase: String },
    ExcludedTerritory,
    SubjectSuppression { area: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSpan {
    pub iso3: Iso3,
    pub field: Field,
    pub start: usize,
    pub end: usize,
    #[serde(flatten)]
    pub reason: MaskReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionResult {
    pub publication_id: String,
    pub mentioned: BTreeSet<Iso3>,
    pub spans: Vec<MentionSpan>,
    pub masked_spans: Vec<MaskedSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_match: Option<bool>,
}

pub(crate) const PUBLISHER_TOKENS: [&str; 10] = [
    "elsevier",
    "springer",
    "wiley",
    "taylor & francis",
    "taylor and francis",
    "sage publications",
    "oxford university press",
    "cambridge university press",
    "published by",
    "all rights reserved",
];

/// Window after an `@` searched for a year or publisher token.
pub(crate) const AT_WINDOW_CHARS: usize = 40;

/// A four-digit 19xx/20xx year lying inside `rest[..window]` and not
/// adjacent to further digits.
fn has_year(rest: &[u8], window: usize) -> bool {
    (0..window.saturating_sub(3)).any(|i| {
        rest[i..i + 4].iter().all(u8::is_ascii_digit)
            && (&rest[i..i + 2] == b"19" || &rest[i..i + 2] == b"20")
            && (i == 0 || !rest[i - 1].is_ascii_digit())
            && rest.get(i + 4).is_none_or(|c| !c.is_ascii_digit())
    })
}

fn at_marker_qualifies(rest: &str) -> bool {
    let end = rest.char_indices().nth(AT_WINDOW_CHARS).map_or(rest.len(), |(i, _)| i);
    if has_year(rest.as_bytes(), end) {
        return true;
    }
    let lower = rest[..end].to_ascii_lowercase();
    PUBLISHER_TOKENS.iter().any(|t| lower.contains(t))
}

/// Byte offset where the copyright tail starts, if any.
pub fn copyright_cut(text: &str) -> Option<usize> {
    const LONG: &str = "copyright (c)";
    let bytes = text.as_bytes();
    for (i, ch) in text.char_indices() {
        match ch {
            '©' => return Some(i),
            '@' if at_marker_qualifies(&text[i + 1..]) => return Some(i),
            'c' | 'C'
                if bytes.len() - i >= LONG.len() && bytes[i..i + LONG.len()].eq_ignore_ascii_case(LONG.as_bytes()) =>
            {
                return Some(i)
            }
            _ => {}
        }
    }
    None
}

/// Drop everything from the first copyright marker onwards.
///
/// Markers are `©`, `Copyright (C)` (any case) and `@` when a four-digit
/// year or a publisher token follows within 40 characters. A bare `@`, as
/// in an e-mail address, is left alone.
pub fn strip_copyright(text: &str) -> &str {
    match copyright_cut(text) {
        Some(i) => &text[..i],
        None => text,
    }
}

fn scan_field(gaz: &CompiledGazetteer, record: &PublicationRecord, field: Field, text: &str, out: &mut MentionResult) {
    let scan = gaz.scan(text);
    let overlaps_kept = |h: &AliasHit| scan.hits.iter().any(|k| k.start < h.end && h.start < k.end);
    for h in &scan.masked {
        if overlaps_kept(h) {
            continue;
        }
        let phrase = scan
            .masks
            .iter()
            .filter(|(r, _)| r.start < h.end && h.start < r.end)
            .min_by_key(|(r, idx)| (r.start, *idx))
            .map(|(_, idx)| gaz.phrase(*idx).to_string())
            .unwrap_or_default();
        out.masked_spans.push(MaskedSpan {
            iso3: h.iso3,
            field,
            start: h.start,
            end: h.end,
            reason: MaskReason::ExclusionPhrase { phrase },
        });
    }
    for h in scan.hits {
        let reason = if gaz.is_excluded(h.iso3) {
            Some(MaskReason::ExcludedTerritory)
        } else {
            gaz.suppressed_by(h.iso3, &record.subject_areas).map(|area| MaskReason::SubjectSuppression { area })
        };
        match reason {
            Some(reason) => {
                out.masked_spans.push(MaskedSpan { iso3: h.iso3, field, start: h.start, end: h.end, reason })
            }
            None => {
                out.mentioned.insert(h.iso3);
                out.spans.push(MentionSpan { iso3: h.iso3, field, start: h.start, end: h.end });
            }
        }
    }
}

/// Countries mentioned in a record's title and (copyright-stripped) abstract.
pub fn extract_mentions(record: &PublicationRecord, gaz: &CompiledGazetteer) -> MentionResult {
    let mut out = MentionResult {
        publication_id: record.id.clone(),
        mentioned: BTreeSet::new(),
        spans: Vec::new(),
        masked_spans: Vec::new(),
        topic_match: None,
    };
    scan_field(gaz, record, Field::Title, &record.title, &mut out);
    scan_field(gaz, record, Field::Abstract, strip_copyright(&record.abstract_text), &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions<'a> {
    pub workers: usize,
    pub topic_query: Option<&'a TopicQuery>,
}

impl Default for ExtractOptions<'_> {
    fn default() -> Self {
        ExtractOptions { workers: 1, topic_query: None }
    }
}

/// Extract every record in parallel. Output is sorted by publication id
/// and does not depend on the worker count.
pub fn extract_corpus(
    records: &[PublicationRecord],
    gaz: &CompiledGazetteer,
    opts: &ExtractOptions<'_>,
) -> Vec<MentionResult> {
    let mut results: Vec<MentionResult> = crate::with_workers(opts.workers, || {
        records
            .par_iter()
            .map(|r| {
                let mut m = extract_mentions(r, gaz);
                if let Some(q) = opts.topic_query {
                    m.topic_match = Some(q.matches(r));
                }
                m
            })
            .collect()
    });
    results.sort_by(|a, b| a.publication_id.cmp(&b.publication_id));
    results
}

/// Read `mentions.jsonl` as written by the extract stage. Blank lines are
/// skipped; any other unparsable line is an error naming its line number.
pub fn read_mentions<R: std::io::BufRead>(reader: R) -> Result<Vec<MentionResult>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AuthorEntry;
    use crate::gazetteer::GazetteerSource;

    fn gaz() -> CompiledGazetteer {
        CompiledGazetteer::compile(&GazetteerSource::default_source()).unwrap()
    }

    fn rec(title: &str, abstract_text: &str, areas: &[u16]) -> PublicationRecord {
        PublicationRecord {
            id: "p".into(),
            year: 2012,
            title: title.into(),
            abstract_text: abstract_text.into(),
            subject_areas: areas.to_vec(),
            authors: vec![AuthorEntry { author_id: "a".into(), affiliation_countries: vec![] }],
            funder_countries: vec![],
            language: "en".into(),
            keywords: vec![],
        }
    }

    fn codes(m: &MentionResult) -> Vec<&str> {
        m.mentioned.iter().map(|c| c.as_str()).collect()
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_copyright("Results are robust. © 2015 Elsevier, Netherlands."), "Results are robust. ");
        assert_eq!(strip_copyright("no marker here"), "no marker here");
        assert_eq!(strip_copyright("A. Copyright (C) 2010 B. Egypt."), "A. ");
        assert_eq!(strip_copyright("A. COPYRIGHT (c) B."), "A. ");
    }

    #[test]
    fn at_sign_needs_year_or_publisher() {
        assert_eq!(strip_copyright("mail me at x@uni.edu for data"), "mail me at x@uni.edu for data");
        assert_eq!(strip_copyright("Done. @ 2014 Some Press. Egypt"), "Done. ");
        assert_eq!(strip_copyright("Done. @ Springer Nature. Egypt"), "Done. ");
        assert_eq!(strip_copyright("x@y 20151 things"), "x@y 20151 things");
    }

    #[test]
    fn strip_is_idempotent() {
        for t in ["a @ 2015 b © c", "x@y.z then Copyright (C) 1999", "none"] {
            let once = strip_copyright(t);
            assert_eq!(strip_copyright(once), once);
        }
    }

    #[test]
    fn egypt_and_jordan_in_environmental_science() {
        let m = extract_mentions(&rec("Water scarcity in Egypt and northern Jordan", "", &[2300]), &gaz());
        assert_eq!(codes(&m), vec!["EGY", "JOR"]);
        assert_eq!(m.spans.len(), 2);
    }

    #[test]
    fn jordan_suppressed_in_mathematics() {
        let m = extract_mentions(&rec("Jordan normal form of nilpotent matrices", "", &[2602]), &gaz());
        assert!(m.mentioned.is_empty());
        assert_eq!(m.masked_spans[0].reason, MaskReason::SubjectSuppression { area: 2600 });
    }

    #[test]
    fn congo_red_is_masked() {
        let m = extract_mentions(&rec("Dye removal", "We study adsorption of Congo Red dye on clay.", &[1600]), &gaz());
        assert!(m.mentioned.is_empty());
        assert!(
            matches!(m.masked_spans[0].reason, MaskReason::ExclusionPhrase { ref phrase } if phrase == "Congo Red")
        );
    }

    #[test]
    fn excluded_territory_dropped() {
        let m = extract_mentions(&rec("Fieldwork in Cyprus and Greece", "", &[3300]), &gaz());
        assert_eq!(codes(&m), vec!["GRC"]);
        assert_eq!(m.masked_spans[0].reason, MaskReason::ExcludedTerritory);
    }

    #[test]
    fn copyright_tail_not_extracted_and_title_not_stripped() {
        let m = extract_mentions(
            &rec("Tunisia © survey", "Findings for Libya. © 2016 Elsevier Ltd, United Kingdom.", &[3300]),
            &gaz(),
        );
        assert_eq!(codes(&m), vec!["LBY", "TUN"]);
    }

    #[test]
    fn spans_point_at_aliases() {
        let r = rec("Egypt", "Migration from Syria to Turkey.", &[3300]);
        let m = extract_mentions(&r, &gaz());
        for s in &m.spans {
            let text = match s.field {
                Field::Title => &r.title,
                Field::Abstract => &r.abstract_text,
            };
            assert!(!text[s.start..s.end].is_empty());
        }
        assert_eq!(codes(&m), vec!["EGY", "SYR", "TUR"]);
    }

    #[test]
    fn corpus_empty_and_sorted() {
        let g = gaz();
        assert!(extract_corpus(&[], &g, &ExtractOptions::default()).is_empty());
        let mut a = rec("Egypt", "", &[3300]);
        a.id = "b".into();
        let mut b = rec("Oman", "", &[3300]);
        b.id = "a".into();
        let out = extract_corpus(&[a, b], &g, &ExtractOptions { workers: 4, topic_query: None });
        assert_eq!(out[0].publication_id, "a");
        assert_eq!(out[1].publication_id, "b");
    }
}
