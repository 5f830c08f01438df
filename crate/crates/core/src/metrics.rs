//! Scalar and ranked quantities over networks and series: received
//! attention, domestic/foreign splits, pre/post deltas, normalized rank
//! change, net migration rate, hyperprolific authors, correlations and
//! the Wilcoxon signed-rank test.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::corpus::PublicationRecord;
use crate::iso3::Iso3;
use crate::network::DirectedCountryNetwork;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("{0} has zero variance; the correlation is undefined")]
    ZeroVariance(&'static str),
    #[error("every difference is zero; the test is undefined")]
    AllZero,
}

/// Pre- and post-event year windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub pre: (i32, i32),
    pub post: (i32, i32),
    pub event_year: i32,
}

impl Default for PeriodSpec {
    fn default() -> Self {
        PeriodSpec { pre: (2002, 2010), post: (2011, 2019), event_year: 2011 }
    }
}

impl PeriodSpec {
    pub fn pre_years(&self) -> RangeInclusive<i32> {
        self.pre.0..=self.pre.1
    }

    pub fn post_years(&self) -> RangeInclusive<i32> {
        self.post.0..=self.post.1
    }

    /// Problems with the spec, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.pre.0 > self.pre.1 || self.post.0 > self.post.1 {
            out.push("PeriodSpec: a range ends before it starts".to_string());
        }
        if self.pre.1 >= self.post.0 {
            out.push(format!(
                "PeriodSpec: pre {}–{} overlaps or follows post {}–{}",
                self.pre.0, self.pre.1, self.post.0, self.post.1
            ));
        }
        if self.event_year <= self.pre.1 || self.event_year > self.post.0 {
            out.push(format!(
                "PeriodSpec: event year {} must fall after pre and at the start of post",
                self.event_year
            ));
        }
        out
    }
}

/// Treatment group label → member countries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec(pub BTreeMap<String, BTreeSet<Iso3>>);

impl Default for GroupSpec {
    fn default() -> Self {
        let g = |codes: &[&str]| codes.iter().map(|c| Iso3::new(c).expect("static code")).collect();
        GroupSpec(BTreeMap::from([
            ("GO".to_string(), g(&["EGY", "TUN"])),
            ("CW".to_string(), g(&["LBY", "SYR", "YEM"])),
            ("GC".to_string(), g(&["BHR", "JOR", "KWT", "MAR", "OMN"])),
        ]))
    }
}

impl GroupSpec {
    pub fn group_of(&self, c: Iso3) -> Option<&str> {
        self.0.iter().find(|(_, m)| m.contains(&c)).map(|(k, _)| k.as_str())
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    pub fn members(&self) -> BTreeSet<Iso3> {
        self.0.values().flatten().copied().collect()
    }

    /// Countries listed in more than one group.
    pub fn overlaps(&self) -> Vec<(Iso3, Vec<String>)> {
        let mut seen: BTreeMap<Iso3, Vec<String>> = BTreeMap::new();
        for (label, members) in &self.0 {
            for c in members {
                seen.entry(*c).or_default().push(label.clone());
            }
        }
        seen.into_iter().filter(|(_, v)| v.len() > 1).collect()
    }
}

// ---------------------------------------------------------------- attention

/// Weight received by `target` in `year`, summed over discipline slices.
pub fn total_attention(net: &DirectedCountryNetwork, target: Iso3, year: i32) -> f64 {
    net.slices
        .iter()
        .filter(|(k, _)| k.year == year)
        .flat_map(|(_, e)| e.iter())
        .filter(|((_, t), _)| *t == target)
        .map(|(_, w)| w)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSplit {
    pub domestic: f64,
    pub foreign: f64,
    /// foreign / domestic; `None` when there is no domestic attention.
    pub ratio: Option<f64>,
}

/// Self-loop versus inbound attention for one country-year.
pub fn split_domestic_foreign(net: &DirectedCountryNetwork, target: Iso3, year: i32) -> AttentionSplit {
    let mut domestic = 0.0;
    let mut foreign = 0.0;
    for (_, edges) in net.slices.iter().filter(|(k, _)| k.year == year) {
        for (&(s, t), &w) in edges {
            if t == target {
                if s == target {
                    domestic += w;
                } else {
                    foreign += w;
                }
            }
        }
    }
    AttentionSplit { domestic, foreign, ratio: (domestic != 0.0).then(|| foreign / domestic) }
}

/// Per-country attention by year in one pass: target → year → split.
pub fn attention_table(net: &DirectedCountryNetwork) -> BTreeMap<Iso3, BTreeMap<i32, AttentionSplit>> {
    let mut acc: BTreeMap<Iso3, BTreeMap<i32, (f64, f64)>> = BTreeMap::new();
    for (key, edges) in &net.slices {
        for (&(s, t), &w) in edges {
            let slot = acc.entry(t).or_default().entry(key.year).or_insert((0.0, 0.0));
            if s == t {
                slot.0 += w;
            } else {
                slot.1 += w;
            }
        }
    }
    acc.into_iter()
        .map(|(c, years)| {
            let years = years
                .into_iter()
                .map(|(y, (d, f))| (y, AttentionSplit { domestic: d, foreign: f, ratio: (d != 0.0).then(|| f / d) }))
                .collect();
            (c, years)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub value: f64,
    /// Years in either window absent from the series, read as 0.
    pub missing_years: Vec<i32>,
}

/// Mean over the post window minus mean over the pre window.
pub fn delta_avg_annual(series: &BTreeMap<i32, f64>, periods: &PeriodSpec) -> Delta {
    let mut missing = Vec::new();
    let mut mean = |range: RangeInclusive<i32>| {
        let n = range.clone().count() as f64;
        let sum: f64 = range
            .map(|y| {
                series.get(&y).copied().unwrap_or_else(|| {
                    missing.push(y);
                    0.0
                })
            })
            .sum();
        sum / n
    };
    let pre = mean(periods.pre_years());
    let post = mean(periods.post_years());
    Delta { value: post - pre, missing_years: missing }
}

// ---------------------------------------------------------------- ranks

/// Rank 1 is the largest value; ties go to the lexicographically smaller code.
pub fn rank_countries(values: &BTreeMap<Iso3, f64>) -> BTreeMap<Iso3, usize> {
    let mut order: Vec<(&Iso3, &f64)> = values.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    order.into_iter().enumerate().map(|(i, (c, _))| (*c, i + 1)).collect()
}

/// NRC for one country. Δr = r_pre − r_post, so improving toward rank 1 is
/// positive; divided by N − r_pre, or by 1 for the country ranked last.
pub fn nrc_from_ranks(r_pre: usize, r_post: usize, n: usize) -> f64 {
    let delta = r_pre as f64 - r_post as f64;
    let denom = if r_pre >= n { 1.0 } else { (n - r_pre) as f64 };
    delta / denom
}

/// Normalized rank change over countries present in both maps.
pub fn normalized_rank_change(
    pre_values: &BTreeMap<Iso3, f64>,
    post_values: &BTreeMap<Iso3, f64>,
    n: usize,
) -> BTreeMap<Iso3, f64> {
    let pre = rank_countries(pre_values);
    let post = rank_countries(post_values);
    pre.iter().filter_map(|(c, &r)| post.get(c).map(|&q| (*c, nrc_from_ranks(r, q, n)))).collect()
}

/// (inflow − outflow) / stock; `None` when the stock is zero.
pub fn net_migration_rate(inflow: f64, outflow: f64, stock: f64) -> Option<f64> {
    (stock > 0.0).then(|| (inflow - outflow) / stock)
}

/// Papers per (author, year) above which an author is hyperprolific.
pub const HYPERPROLIFIC_LIMIT: usize = 72;

/// Authors with more than 72 records in some calendar year.
pub fn flag_hyperprolific(records: &[PublicationRecord]) -> BTreeMap<String, Vec<(i32, usize)>> {
    let mut counts: BTreeMap<(&str, i32), usize> = BTreeMap::new();
    for r in records {
        let ids: BTreeSet<&str> = r.authors.iter().map(|a| a.author_id.as_str()).collect();
        for id in ids {
            *counts.entry((id, r.year)).or_insert(0) += 1;
        }
    }
    let mut out: BTreeMap<String, Vec<(i32, usize)>> = BTreeMap::new();
    for ((id, year), n) in counts {
        if n > HYPERPROLIFIC_LIMIT {
            out.entry(id.to_string()).or_default().push((year, n));
        }
    }
    out
}

// ---------------------------------------------------------------- statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson or Spearman correlation with a two-sided t-approximation
/// p-value on n − 2 degrees of freedom.
pub fn correlate(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<Correlation, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFew { need: 3, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let r = match method {
        CorrelationMethod::Pearson => pearson(x, y)?,
        CorrelationMethod::Spearman => pearson(&average_ranks(x), &average_ranks(y))?,
    };
    let df = (x.len() - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { coefficient: r, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedRankResult {
    /// Sum of ranks of positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Largest sample size handled by the exact null distribution.
pub const SIGNED_RANK_EXACT_MAX: usize = 25;

/// Wilcoxon signed-rank test. Zeros are dropped and tied magnitudes share
/// average ranks. For n ≤ 25 the p-value comes from the exact permutation
/// distribution of W+ given the observed ranks; above that a normal
/// approximation with tie and continuity correction is used.
pub fn signed_rank_test(deltas: &[f64], alternative: Alternative) -> Result<SignedRankResult, MetricsError> {
    if deltas.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() && !deltas.is_empty() {
        return Err(MetricsError::AllZero);
    }
    if nz.len() < 5 {
        return Err(MetricsError::TooFew { need: 5, got: nz.len() });
    }
    let n = nz.len();
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= SIGNED_RANK_EXACT_MAX {
        // Ranks are multiples of 1/2, so count subsets by doubled rank sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut ways = vec![0f64; max + 1];
        ways[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                ways[s] += ways[s - r];
            }
        }
        let total = 2f64.powi(n as i32);
        let w = (w_plus * 2.0).round() as usize;
        let upper = ways[w..].iter().sum::<f64>() / total;
        let lower = ways[..=w].iter().sum::<f64>() / total;
        let p = match alternative {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(SignedRankResult { statistic: w_plus, p_value: p, n, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let upper = normal.sf((w_plus - mean - 0.5) / sd);
    let lower = normal.cdf((w_plus - mean + 0.5) / sd);
    let p = match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    };
    Ok(SignedRankResult { statistic: w_plus, p_value: p, n, exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AuthorEntry;
    use crate::network::{NetworkKind, SliceKey};
    use proptest::prelude::*;

    fn iso(s: &str) -> Iso3 {
        Iso3::new(s).unwrap()
    }

    fn net(edges: &[(&str, &str, f64)]) -> DirectedCountryNetwork {
        let mut n = DirectedCountryNetwork::new(NetworkKind::Attention);
        let slice = n.slices.entry(SliceKey { year: 2012, discipline: None }).or_default();
        for &(s, t, w) in edges {
            slice.insert((iso(s), iso(t)), w);
        }
        n
    }

    #[test]
    fn total_attention_examples() {
        let n = net(&[("AAA", "XXX", 0.3), ("BBB", "XXX", 0.7)]);
        assert_eq!(total_attention(&n, iso("XXX"), 2012), 1.0);
        assert_eq!(total_attention(&n, iso("AAA"), 2012), 0.0);
        let fig9 = net(&[("AAA", "AAA", 0.125), ("AAA", "BBB", 0.125), ("CCC", "AAA", 0.375), ("CCC", "BBB", 0.375)]);
        assert_eq!(total_attention(&fig9, iso("AAA"), 2012), 0.5);
        assert_eq!(total_attention(&fig9, iso("BBB"), 2012), 0.5);
    }

    #[test]
    fn split_examples() {
        let n = net(&[("XXX", "XXX", 0.6), ("AAA", "XXX", 0.3)]);
        let s = split_domestic_foreign(&n, iso("XXX"), 2012);
        assert_eq!((s.domestic, s.foreign), (0.6, 0.3));
        assert!((s.ratio.unwrap() - 0.5).abs() < 1e-15);
        let s = split_domestic_foreign(&net(&[("AAA", "XXX", 1.0)]), iso("XXX"), 2012);
        assert_eq!((s.domestic, s.foreign, s.ratio), (0.0, 1.0, None));
        let s = split_domestic_foreign(&net(&[]), iso("XXX"), 2012);
        assert_eq!((s.domestic, s.foreign, s.ratio), (0.0, 0.0, None));
    }

    #[test]
    fn delta_examples() {
        let p = PeriodSpec::default();
        let constant: BTreeMap<i32, f64> = (2002..=2019).map(|y| (y, 5.0)).collect();
        assert_eq!(delta_avg_annual(&constant, &p).value, 0.0);
        let step: BTreeMap<i32, f64> = (2002..=2019).map(|y| (y, if y < 2011 { 1.0 } else { 3.0 })).collect();
        assert_eq!(delta_avg_annual(&step, &p).value, 2.0);
        let usa: BTreeMap<i32, f64> = (2002..=2019).map(|y| (y, if y < 2011 { 100.0 } else { 272.3 })).collect();
        assert!((delta_avg_annual(&usa, &p).value - 172.3).abs() < 1e-9);
        let gap = BTreeMap::from([(2002, 1.0)]);
        assert_eq!(delta_avg_annual(&gap, &p).missing_years.len(), 17);
    }

    #[test]
    fn rank_examples() {
        let r = rank_countries(&BTreeMap::from([(iso("AAA"), 3.0), (iso("BBB"), 1.0), (iso("CCC"), 2.0)]));
        assert_eq!(r, BTreeMap::from([(iso("AAA"), 1), (iso("CCC"), 2), (iso("BBB"), 3)]));
        let r = rank_countries(&BTreeMap::from([(iso("BBB"), 2.0), (iso("AAA"), 2.0)]));
        assert_eq!(r, BTreeMap::from([(iso("AAA"), 1), (iso("BBB"), 2)]));
        assert_eq!(rank_countries(&BTreeMap::from([(iso("AAA"), 0.0)]))[&iso("AAA")], 1);
    }

    #[test]
    fn nrc_examples() {
        assert_eq!(nrc_from_ranks(2, 1, 147), 1.0 / 145.0);
        assert_eq!(nrc_from_ranks(10, 10, 147), 0.0);
        assert_eq!(nrc_from_ranks(147, 146, 147), 1.0);
    }

    #[test]
    fn nmr_examples() {
        assert_eq!(net_migration_rate(12.0, 4.0, 200.0), Some(0.04));
        assert_eq!(net_migration_rate(5.0, 5.0, 10.0), Some(0.0));
        assert_eq!(net_migration_rate(0.0, 10.0, 100.0), Some(-0.1));
        assert_eq!(net_migration_rate(1.0, 0.0, 0.0), None);
    }

    fn papers(author: &str, year: i32, n: usize) -> Vec<PublicationRecord> {
        (0..n)
            .map(|i| PublicationRecord {
                id: format!("{author}{year}{i}"),
                year,
                title: String::new(),
                abstract_text: String::new(),
                subject_areas: vec![3300],
                authors: vec![AuthorEntry { author_id: author.into(), affiliation_countries: vec![] }],
                funder_countries: vec![],
                language: "en".into(),
                keywords: vec![],
            })
            .collect()
    }

    #[test]
    fn hyperprolific_boundary() {
        assert!(flag_hyperprolific(&papers("a", 2015, 72)).is_empty());
        assert_eq!(flag_hyperprolific(&papers("a", 2015, 73))["a"], vec![(2015, 73)]);
        let mut two = papers("a", 2014, 40);
        two.extend(papers("a", 2015, 40));
        assert!(flag_hyperprolific(&two).is_empty());
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(correlate(&x, &y, CorrelationMethod::Pearson).unwrap().coefficient, 1.0);
        let cube: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert_eq!(correlate(&x, &cube, CorrelationMethod::Spearman).unwrap().coefficient, 1.0);
        assert!(correlate(&x, &cube, CorrelationMethod::Pearson).unwrap().coefficient < 1.0);
        assert_eq!(correlate(&x, &[1.0; 10], CorrelationMethod::Pearson), Err(MetricsError::ZeroVariance("y")));
    }

    #[test]
    fn spearman_matches_hand_ranks() {
        // 20 points with ties; ranks computed by counting.
        let x: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 5) % 13) as f64 + 0.5 * (i % 3) as f64).collect();
        let brute = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (brute(&x), brute(&y));
        let m = 10.5;
        let num: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
        let den =
            (rx.iter().map(|a| (a - m).powi(2)).sum::<f64>() * ry.iter().map(|b| (b - m).powi(2)).sum::<f64>()).sqrt();
        let got = correlate(&x, &y, CorrelationMethod::Spearman).unwrap().coefficient;
        assert!((got - num / den).abs() < 1e-12);
    }

    #[test]
    fn signed_rank_examples() {
        let pos: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = signed_rank_test(&pos, Alternative::Greater).unwrap();
        assert!((r.p_value - 1.0 / 1024.0).abs() < 1e-15);
        assert!(r.exact);

        let sym = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0];
        let r = signed_rank_test(&sym, Alternative::Greater).unwrap();
        assert!((r.p_value - 0.5).abs() < 0.1);

        assert_eq!(
            signed_rank_test(&[1.0, 2.0, 3.0, 4.0, 0.0], Alternative::Greater),
            Err(MetricsError::TooFew { need: 5, got: 4 })
        );
        assert_eq!(signed_rank_test(&[0.0; 6], Alternative::Greater), Err(MetricsError::AllZero));
    }

    #[test]
    fn signed_rank_exact_matches_enumeration() {
        let d = [0.5, -1.2, 2.0, 2.0, -0.3, 1.1, 0.7, -2.0, 3.3];
        let ranks = average_ranks(&d.iter().map(|v: &f64| v.abs()).collect::<Vec<_>>());
        let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let mut ge = 0usize;
        for mask in 0..(1usize << n) {
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if s >= w - 1e-9 {
                ge += 1;
            }
        }
        let got = signed_rank_test(&d, Alternative::Greater).unwrap();
        assert!((got.p_value - ge as f64 / (1usize << n) as f64).abs() < 1e-12);
    }

    #[test]
    fn signed_rank_normal_branch() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 4 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = signed_rank_test(&d, Alternative::Greater).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.01);
        let two = signed_rank_test(&d, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 2.0 * r.p_value).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rank_scale_invariant(vals in proptest::collection::vec(0u32..1000, 1..30), c in 1u32..1000) {
            // Integer values keep the scaled products exact.
            let code = |i: usize| Iso3::new(&format!("A{}{}", (b'A' + (i / 26) as u8) as char, (b'A' + (i % 26) as u8) as char)).unwrap();
            let a: BTreeMap<Iso3, f64> = vals.iter().enumerate().map(|(i, v)| (code(i), *v as f64)).collect();
            let b: BTreeMap<Iso3, f64> = vals.iter().enumerate().map(|(i, v)| (code(i), (*v as f64) * c as f64 / 7.0)).collect();
            prop_assert_eq!(rank_countries(&a), rank_countries(&b));
        }

        #[test]
        fn correlation_symmetric_and_self(x in proptest::collection::vec(-1e3f64..1e3, 3..30), y in proptest::collection::vec(-1e3f64..1e3, 3..30)) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            for m in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
                if let Ok(c) = correlate(x, x, m) {
                    prop_assert!((c.coefficient - 1.0).abs() < 1e-12);
                }
                if let (Ok(a), Ok(b)) = (correlate(x, y, m), correlate(y, x, m)) {
                    prop_assert!((a.coefficient - b.coefficient).abs() < 1e-12);
                }
            }
        }
    }
}
