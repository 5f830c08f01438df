//! Scoring extraction output against two-coder annotations.
//!
//! Two gold standards are derived from the coders: the union of their sets
//! (lenient) and the intersection (strict). Both are scored with the
//! exact-match ratio and the average Jaccard similarity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotationRecord;
use crate::extract::MentionResult;
use crate::iso3::Iso3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction and gold lists differ in length ({pred} vs {gold})")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("nothing to score")]
    Empty,
    #[error("annotation for `{0}` has no extraction result")]
    MissingPrediction(String),
}

fn check_lengths(pred: usize, gold: usize) -> Result<(), EvalError> {
    if pred != gold {
        return Err(EvalError::LengthMismatch { pred, gold });
    }
    if pred == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Jaccard similarity of two sets; two empty sets agree perfectly.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Share of pairs whose sets are identical.
pub fn exact_match_ratio<T: Ord>(pred: &[BTreeSet<T>], gold: &[BTreeSet<T>]) -> Result<f64, EvalError> {
    check_lengths(pred.len(), gold.len())?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean Jaccard similarity over pairs.
pub fn average_jaccard<T: Ord>(pred: &[BTreeSet<T>], gold: &[BTreeSet<T>]) -> Result<f64, EvalError> {
    check_lengths(pred.len(), gold.len())?;
    let total: f64 = pred.iter().zip(gold).map(|(p, g)| jaccard(p, g)).sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub ids: Vec<String>,
    pub union: Vec<BTreeSet<Iso3>>,
    pub intersection: Vec<BTreeSet<Iso3>>,
    pub agreement: f64,
}

/// Union and intersection gold sets plus the coders' exact agreement rate.
pub fn build_baselines(annotations: &[AnnotationRecord]) -> Result<Baselines, EvalError> {
    if annotations.is_empty() {
        return Err(EvalError::Empty);
    }
    let a: Vec<BTreeSet<Iso3>> = annotations.iter().map(|r| r.coder_a.clone()).collect();
    let b: Vec<BTreeSet<Iso3>> = annotations.iter().map(|r| r.coder_b.clone()).collect();
    Ok(Baselines {
        ids: annotations.iter().map(|r| r.publication_id.clone()).collect(),
        union: annotations.iter().map(|r| r.coder_a.union(&r.coder_b).copied().collect()).collect(),
        intersection: annotations.iter().map(|r| r.coder_a.intersection(&r.coder_b).copied().collect()).collect(),
        agreement: exact_match_ratio(&a, &b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    pub predicted: BTreeSet<Iso3>,
    pub gold_union: BTreeSet<Iso3>,
    pub gold_intersection: BTreeSet<Iso3>,
    pub jaccard_union: f64,
    pub jaccard_intersection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy_union: f64,
    pub accuracy_intersection: f64,
    pub jaccard_union: f64,
    pub jaccard_intersection: f64,
    pub intercoder_agreement: f64,
    pub per_record: Vec<RecordScore>,
}

/// Score every annotated record. Records without annotations are ignored;
/// annotations without an extraction result are an error.
pub fn evaluate(mentions: &[MentionResult], annotations: &[AnnotationRecord]) -> Result<EvalReport, EvalError> {
    let by_id: BTreeMap<&str, &MentionResult> = mentions.iter().map(|m| (m.publication_id.as_str(), m)).collect();
    let base = build_baselines(annotations)?;
    let mut predicted = Vec::with_capacity(annotations.len());
    for id in &base.ids {
        let m = by_id.get(id.as_str()).ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        predicted.push(m.mentioned.clone());
    }
    let per_record = base
        .ids
        .iter()
        .zip(&predicted)
        .zip(base.union.iter().zip(&base.intersection))
        .map(|((id, p), (u, i))| RecordScore {
            id: id.clone(),
            predicted: p.clone(),
            gold_union: u.clone(),
            gold_intersection: i.clone(),
            jaccard_union: jaccard(p, u),
            jaccard_intersection: jaccard(p, i),
        })
        .collect();
    Ok(EvalReport {
        n: predicted.len(),
        accuracy_union: exact_match_ratio(&predicted, &base.union)?,
        accuracy_intersection: exact_match_ratio(&predicted, &base.intersection)?,
        jaccard_union: average_jaccard(&predicted, &base.union)?,
        jaccard_intersection: average_jaccard(&predicted, &base.intersection)?,
        intercoder_agreement: base.agreement,
        per_record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn iso(items: &[&str]) -> BTreeSet<Iso3> {
        items.iter().map(|s| Iso3::new(s).unwrap()).collect()
    }

    #[test]
    fn exact_match_examples() {
        let g = vec![set(&["A"]), set(&[]), set(&["B", "C"]), set(&["D"])];
        assert_eq!(exact_match_ratio(&g, &g).unwrap(), 1.0);
        let mut p = g.clone();
        p[3] = set(&["E"]);
        assert_eq!(exact_match_ratio(&p, &g).unwrap(), 0.75);
        assert_eq!(exact_match_ratio(&[set(&["A", "B"])], &[set(&["B", "C"])]).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(average_jaccard(&[set(&["A", "B"])], &[set(&["B", "C"])]).unwrap(), 1.0 / 3.0);
        assert_eq!(average_jaccard(&[set(&["A", "B"])], &[set(&["A", "B"])]).unwrap(), 1.0);
        assert_eq!(average_jaccard(&[set(&["A"])], &[set(&["B"])]).unwrap(), 0.0);
        assert_eq!(average_jaccard(&[set(&[])], &[set(&[])]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert_eq!(exact_match_ratio(&[set(&["A"])], &[]), Err(EvalError::LengthMismatch { pred: 1, gold: 0 }));
        assert_eq!(average_jaccard::<String>(&[], &[]), Err(EvalError::Empty));
    }

    fn ann(id: &str, a: &[&str], b: &[&str]) -> AnnotationRecord {
        AnnotationRecord { publication_id: id.into(), coder_a: iso(a), coder_b: iso(b) }
    }

    #[test]
    fn baselines_union_intersection() {
        let b = build_baselines(&[ann("p", &["EGY"], &["EGY", "TUN"])]).unwrap();
        assert_eq!(b.union[0], iso(&["EGY", "TUN"]));
        assert_eq!(b.intersection[0], iso(&["EGY"]));
        assert_eq!(b.agreement, 0.0);

        let same = build_baselines(&[ann("p", &["EGY"], &["EGY"]), ann("q", &[], &[])]).unwrap();
        assert_eq!(same.agreement, 1.0);
        assert_eq!(same.union, same.intersection);
    }

    #[test]
    fn eleven_disagreements_in_a_hundred() {
        let anns: Vec<_> = (0..100)
            .map(|i| {
                if i < 11 {
                    ann(&format!("p{i}"), &["EGY"], &["EGY", "LBY"])
                } else {
                    ann(&format!("p{i}"), &["TUN"], &["TUN"])
                }
            })
            .collect();
        assert_eq!(build_baselines(&anns).unwrap().agreement, 0.89);
    }

    #[test]
    fn report_scores_against_both_baselines() {
        let m = MentionResult {
            publication_id: "p".into(),
            mentioned: iso(&["EGY"]),
            spans: vec![],
            masked_spans: vec![],
            topic_match: None,
        };
        let r = evaluate(&[m], &[ann("p", &["EGY"], &["EGY", "TUN"])]).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.accuracy_union, 0.0);
        assert_eq!(r.accuracy_intersection, 1.0);
        assert_eq!(r.jaccard_union, 0.5);
        assert_eq!(r.per_record[0].jaccard_intersection, 1.0);
        assert_eq!(evaluate(&[], &[ann("x", &[], &[])]), Err(EvalError::MissingPrediction("x".into())));
    }
}
