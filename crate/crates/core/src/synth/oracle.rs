//! Deliberately naive reference implementations.
//!
//! Each oracle re-derives a result from first principles with no shared
//! code paths beyond plain data types, trading speed for obviousness:
//! extraction scans every alias at every position, edge weights enumerate
//! (author, affiliation, mention) triples, OLS solves the normal equations
//! of an explicit dummy-variable design, and matching enumerates every bin
//! signature.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::corpus::PublicationRecord;
use crate::econo::Panel;
use crate::extract::{Field, MaskReason, MaskedSpan, MentionResult, MentionSpan};
use crate::gazetteer::GazetteerSource;
use crate::iso3::Iso3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("normal equations are singular")]
    Singular,
    #[error("design has {rows} rows but outcome has {len}")]
    Shape { rows: usize, len: usize },
}

// ---------------------------------------------------------------- extraction

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn edge_left(text: &str, i: usize) -> bool {
    match text[..i].chars().last() {
        None => true,
        Some(c) => !is_word_char(c),
    }
}

fn edge_right(text: &str, i: usize) -> bool {
    match text[i..].chars().next() {
        None => true,
        Some(c) => !is_word_char(c),
    }
}

fn eq_at(text: &str, i: usize, needle: &str, fold: bool) -> bool {
    let hay = text.as_bytes();
    let n = needle.as_bytes();
    if i + n.len() > hay.len() {
        return false;
    }
    (0..n.len()).all(|k| if fold { hay[i + k].eq_ignore_ascii_case(&n[k]) } else { hay[i + k] == n[k] })
}

fn positions(text: &str) -> impl Iterator<Item = usize> + '_ {
    (0..=text.len()).filter(move |&i| text.is_char_boundary(i))
}

fn naive_strip(text: &str) -> &str {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if c == '©' {
            return &text[..i];
        }
        if eq_at(text, i, "copyright (c)", true) {
            return &text[..i];
        }
        if c == '@' {
            let after: Vec<(usize, char)> = chars[k + 1..].to_vec();
            let window_end = after.get(40).map_or(text.len(), |&(j, _)| j);
            let window = &text[i + 1..window_end];
            let bytes = text.as_bytes();
            let mut year = false;
            for s in i + 1..window_end {
                if s + 4 > window_end {
                    break;
                }
                let four = &bytes[s..s + 4];
                let digits = four.iter().all(|b| b.is_ascii_digit());
                let century = four.starts_with(b"19") || four.starts_with(b"20");
                let left_ok = !bytes[s - 1].is_ascii_digit();
                let right_ok = s + 4 == bytes.len() || !bytes[s + 4].is_ascii_digit();
                if digits && century && left_ok && right_ok {
                    year = true;
                }
            }
            let publisher =
                crate::extract::PUBLISHER_TOKENS.iter().any(|t| positions(window).any(|p| eq_at(window, p, t, true)));
            if year || publisher {
                return &text[..i];
            }
        }
    }
    text
}

struct Alias<'a> {
    text: &'a str,
    fold: bool,
    iso3: Iso3,
}

fn naive_field(
    source: &GazetteerSource,
    aliases: &[Alias<'_>],
    excluded: &BTreeSet<Iso3>,
    record: &PublicationRecord,
    field: Field,
    text: &str,
    out: &mut MentionResult,
) {
    // Every phrase occurrence starting at a word boundary masks its bytes.
    let mut masks: Vec<(usize, usize, usize)> = Vec::new();
    for (idx, p) in source.exclusion_phrases.iter().enumerate() {
        for i in positions(text) {
            if edge_left(text, i) && eq_at(text, i, &p.phrase, true) {
                masks.push((i, i + p.phrase.len(), idx));
            }
        }
    }

    let mut candidates: Vec<(usize, usize, Iso3)> = Vec::new();
    let mut masked: Vec<(usize, usize, Iso3)> = Vec::new();
    for a in aliases {
        for i in positions(text) {
            let j = i + a.text.len();
            if !eq_at(text, i, a.text, a.fold) || !edge_left(text, i) || !edge_right(text, j) {
                continue;
            }
            if masks.iter().any(|&(s, e, _)| s < j && i < e) {
                if !masked.contains(&(i, j, a.iso3)) {
                    masked.push((i, j, a.iso3));
                }
            } else {
                candidates.push((i, j, a.iso3));
            }
        }
    }

    // Leftmost-longest: repeatedly take the earliest-starting, then longest,
    // candidate that does not overlap anything taken so far.
    let mut kept: Vec<(usize, usize, Iso3)> = Vec::new();
    let mut cursor = 0;
    loop {
        let next = candidates
            .iter()
            .filter(|c| c.0 >= cursor)
            .min_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)).then(x.2.cmp(&y.2)));
        match next {
            Some(&c) => {
                kept.push(c);
                cursor = c.1;
            }
            None => break,
        }
    }

    masked.sort();
    for &(s, e, iso3) in &masked {
        if kept.iter().any(|k| k.0 < e && s < k.1) {
            continue;
        }
        let phrase = masks
            .iter()
            .filter(|m| m.0 < e && s < m.1)
            .min_by_key(|m| (m.0, m.2))
            .map(|m| source.exclusion_phrases[m.2].phrase.clone())
            .unwrap_or_default();
        out.masked_spans.push(MaskedSpan {
            iso3,
            field,
            start: s,
            end: e,
            reason: MaskReason::ExclusionPhrase { phrase },
        });
    }

    for &(s, e, iso3) in &kept {
        let mut reason = None;
        if excluded.contains(&iso3) {
            reason = Some(MaskReason::ExcludedTerritory);
        } else if let Some(sup) = source.conditional_suppressions.iter().find(|x| x.iso3 == iso3) {
            'outer: for &code in &record.subject_areas {
                for &area in &sup.suppressed_asjc_areas {
                    if code / 100 == area / 100 {
                        reason = Some(MaskReason::SubjectSuppression { area });
                        break 'outer;
                    }
                }
            }
        }
        match reason {
            Some(reason) => out.masked_spans.push(MaskedSpan { iso3, field, start: s, end: e, reason }),
            None => {
                out.mentioned.insert(iso3);
                out.spans.push(MentionSpan { iso3, field, start: s, end: e });
            }
        }
    }
}

/// Brute-force extraction: every alias compared at every character
/// position of every field. Output sorted by publication id.
pub fn oracle_extract(records: &[PublicationRecord], source: &GazetteerSource) -> Vec<MentionResult> {
    let mut aliases = Vec::new();
    for e in &source.entries {
        aliases.extend(e.aliases.iter().map(|a| Alias { text: a, fold: true, iso3: e.iso3 }));
        aliases.extend(e.case_sensitive_aliases.iter().map(|a| Alias { text: a, fold: false, iso3: e.iso3 }));
    }
    let excluded: BTreeSet<Iso3> = source.excluded_iso3.iter().map(|x| x.iso3).collect();
    let mut out: Vec<MentionResult> = records
        .iter()
        .map(|r| {
            let mut m = MentionResult {
                publication_id: r.id.clone(),
                mentioned: BTreeSet::new(),
                spans: vec![],
                masked_spans: vec![],
                topic_match: None,
            };
            naive_field(source, &aliases, &excluded, r, Field::Title, &r.title, &mut m);
            naive_field(source, &aliases, &excluded, r, Field::Abstract, naive_strip(&r.abstract_text), &mut m);
            m
        })
        .collect();
    out.sort_by(|a, b| a.publication_id.cmp(&b.publication_id));
    out
}

// ---------------------------------------------------------------- networks

/// Attention edges of one paper by enumerating (author, affiliation,
/// mention) triples, each weighted 1/(n_resolved_authors · n_affils ·
/// n_mentions). Excluded countries are dropped from both layers first.
pub fn oracle_edge_weights(
    record: &PublicationRecord,
    mentions: &BTreeSet<Iso3>,
    excluded: &BTreeSet<Iso3>,
) -> BTreeMap<(Iso3, Iso3), f64> {
    let targets: Vec<Iso3> = mentions.iter().filter(|c| !excluded.contains(c)).copied().collect();
    let authors: Vec<BTreeSet<Iso3>> = record
        .authors
        .iter()
        .map(|a| a.affiliation_countries.iter().filter(|c| !excluded.contains(c)).copied().collect::<BTreeSet<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    let mut out = BTreeMap::new();
    for affils in &authors {
        for src in affils {
            for dst in &targets {
                let w = 1.0 / (authors.len() * affils.len() * targets.len()) as f64;
                *out.entry((*src, *dst)).or_insert(0.0) += w;
            }
        }
    }
    out
}

// ---------------------------------------------------------------- regression

/// OLS by solving `(XᵀX) β = Xᵀy`.
pub fn oracle_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, OracleError> {
    if x.nrows() != y.len() {
        return Err(OracleError::Shape { rows: x.nrows(), len: y.len() });
    }
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    if let Some(ch) = xtx.clone().cholesky() {
        let beta = ch.solve(&xty);
        if beta.iter().all(|v| v.is_finite()) {
            return Ok(beta);
        }
    }
    xtx.lu().solve(&xty).ok_or(OracleError::Singular)
}

/// Least-squares dummy-variable design for a DiD panel.
///
/// Columns, in order: one `Post×Treat_g` per entry of `groups`, the panel
/// covariates, year dummies for every year but the first, and one dummy
/// per country (which together span the intercept).
pub fn lsdv_design(panel: &Panel, groups: &[String]) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let years: BTreeSet<i32> = panel.rows.iter().map(|r| r.year).collect();
    let years: Vec<i32> = years.into_iter().skip(1).collect();
    let countries: BTreeSet<Iso3> = panel.rows.iter().map(|r| r.country).collect();
    let countries: Vec<Iso3> = countries.into_iter().collect();

    let mut names: Vec<String> = groups.iter().map(|g| format!("post_x_{g}")).collect();
    names.extend(panel.covariate_names.iter().cloned());
    names.extend(years.iter().map(|y| format!("year_{y}")));
    names.extend(countries.iter().map(|c| format!("country_{c}")));

    let k = names.len();
    let mut x = DMatrix::zeros(panel.rows.len(), k);
    let mut y = DVector::zeros(panel.rows.len());
    for (i, r) in panel.rows.iter().enumerate() {
        y[i] = r.outcome;
        let mut col = 0;
        for g in groups {
            x[(i, col)] = if r.post && r.group.as_deref() == Some(g.as_str()) { 1.0 } else { 0.0 };
            col += 1;
        }
        for v in &r.covariates {
            x[(i, col)] = *v;
            col += 1;
        }
        for yr in &years {
            x[(i, col)] = if r.year == *yr { 1.0 } else { 0.0 };
            col += 1;
        }
        for c in &countries {
            x[(i, col)] = if r.country == *c { 1.0 } else { 0.0 };
            col += 1;
        }
    }
    (x, y, names)
}

// ---------------------------------------------------------------- matching

/// Retained strata by exhaustive enumeration of every bin signature.
///
/// Returns signature → (treated, controls) for signatures holding at least
/// one of each. Bins are right-closed intervals between consecutive
/// cutpoints, indexed from 0.
pub fn oracle_cem(
    summaries: &BTreeMap<Iso3, Vec<f64>>,
    treated: &BTreeSet<Iso3>,
    cutpoints: &[f64],
) -> BTreeMap<Vec<usize>, (BTreeSet<Iso3>, BTreeSet<Iso3>)> {
    let n_cov = summaries.values().next().map_or(0, Vec::len);
    let n = summaries.len() as f64;
    let mut z: BTreeMap<Iso3, Vec<f64>> = summaries.keys().map(|c| (*c, Vec::new())).collect();
    for j in 0..n_cov {
        let mean = summaries.values().map(|v| v[j]).sum::<f64>() / n;
        let var = summaries.values().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        for (c, v) in summaries {
            z.get_mut(c).unwrap().push((v[j] - mean) / var.sqrt());
        }
    }
    let n_bins = cutpoints.len() - 1;
    let in_bin = |v: f64, b: usize| v > cutpoints[b] && v <= cutpoints[b + 1];

    let mut out = BTreeMap::new();
    let total = n_bins.pow(n_cov as u32);
    for code in 0..total {
        let mut sig = Vec::with_capacity(n_cov);
        let mut rest = code;
        for _ in 0..n_cov {
            sig.push(rest % n_bins);
            rest /= n_bins;
        }
        let members: Vec<Iso3> =
            z.iter().filter(|(_, zs)| zs.iter().zip(&sig).all(|(&v, &b)| in_bin(v, b))).map(|(c, _)| *c).collect();
        let t: BTreeSet<Iso3> = members.iter().filter(|c| treated.contains(c)).copied().collect();
        let k: BTreeSet<Iso3> = members.iter().filter(|c| !treated.contains(c)).copied().collect();
        if !t.is_empty() && !k.is_empty() {
            out.insert(sig, (t, k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AuthorEntry;

    fn iso(s: &str) -> Iso3 {
        Iso3::new(s).unwrap()
    }

    #[test]
    fn ols_slope_and_intercept() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        assert!((oracle_ols(&x, &y).unwrap()[0] - 2.0).abs() < 1e-12);

        let ones = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        assert!((oracle_ols(&ones, &y).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ols_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(oracle_ols(&x, &y), Err(OracleError::Singular));
    }

    #[test]
    fn fig9_triples() {
        let rec = PublicationRecord {
            id: "f".into(),
            year: 2012,
            title: String::new(),
            abstract_text: String::new(),
            subject_areas: vec![3300],
            authors: vec![
                AuthorEntry { author_id: "jane".into(), affiliation_countries: vec![iso("AAA"), iso("CCC")] },
                AuthorEntry { author_id: "john".into(), affiliation_countries: vec![iso("CCC")] },
            ],
            funder_countries: vec![],
            language: "en".into(),
            keywords: vec![],
        };
        let m = BTreeSet::from([iso("AAA"), iso("BBB")]);
        let e = oracle_edge_weights(&rec, &m, &BTreeSet::new());
        assert_eq!(e[&(iso("AAA"), iso("AAA"))], 0.125);
        assert_eq!(e[&(iso("CCC"), iso("BBB"))], 0.375);
    }

    #[test]
    fn naive_strip_matches_examples() {
        assert_eq!(naive_strip("Results are robust. © 2015 Elsevier, Netherlands."), "Results are robust. ");
        assert_eq!(naive_strip("A. Copyright (C) 2010 B. Egypt."), "A. ");
        assert_eq!(naive_strip("mail me at x@uni.edu"), "mail me at x@uni.edu");
        assert_eq!(naive_strip("x@y 20151 things"), "x@y 20151 things");
    }

    #[test]
    fn cem_one_covariate() {
        let cuts = [f64::NEG_INFINITY, -3.0, -1.5, -0.75, 0.75, 1.5, 3.0, f64::INFINITY];
        let s = BTreeMap::from([
            (iso("AAA"), vec![0.0]),
            (iso("BBB"), vec![0.1]),
            (iso("CCC"), vec![-0.1]),
            (iso("DDD"), vec![10.0]),
        ]);
        let strata = oracle_cem(&s, &BTreeSet::from([iso("AAA")]), &cuts);
        assert_eq!(strata.len(), 1);
        assert_eq!(strata.values().next().unwrap().1, BTreeSet::from([iso("BBB"), iso("CCC")]));
    }
}
