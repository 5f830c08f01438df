//! Coarsened exact matching on pre-period country summaries.
//!
//! Each covariate is z-scored over the pooled candidate set (sample
//! standard deviation), coarsened by fixed cutpoints into right-closed
//! bins, and countries sharing a full bin signature form a stratum. Only
//! strata holding at least one treated and one control country are kept.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Covariate, EconoError};
use crate::corpus::CountryYearCovariates;
use crate::iso3::Iso3;
use crate::metrics::PeriodSpec;

/// Cutpoints on the z scale; seven right-closed bins.
pub const DEFAULT_CUTPOINTS: [f64; 8] = [f64::NEG_INFINITY, -3.0, -1.5, -0.75, 0.75, 1.5, 3.0, f64::INFINITY];

/// Column means and sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Scaler {
    /// Fit on every candidate. A constant covariate is an error.
    pub fn fit(summaries: &BTreeMap<Iso3, Vec<f64>>, names: &[String]) -> Result<Scaler, EconoError> {
        let n = summaries.len() as f64;
        let mut means = Vec::with_capacity(names.len());
        let mut sds = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let mean = summaries.values().map(|v| v[j]).sum::<f64>() / n;
            let var = summaries.values().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var.is_nan() || var <= 0.0 {
                return Err(EconoError::ZeroVariance(name.clone()));
            }
            means.push(mean);
            sds.push(var.sqrt());
        }
        Ok(Scaler { names: names.to_vec(), means, sds })
    }

    pub fn z(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.means).zip(&self.sds).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Index of the right-closed bin (cut[b], cut[b+1]] holding `z`.
pub fn bin_index(z: f64, cutpoints: &[f64]) -> Option<usize> {
    cutpoints.windows(2).position(|w| z > w[0] && z <= w[1])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CemStratum {
    pub signature: Vec<usize>,
    pub treated: BTreeSet<Iso3>,
    pub controls: BTreeSet<Iso3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CemRole {
    Treated,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CemDrop {
    pub country: Iso3,
    pub role: CemRole,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemResult {
    pub covariate_names: Vec<String>,
    pub cutpoints: Vec<f64>,
    pub scaler: Scaler,
    pub matched_controls: BTreeSet<Iso3>,
    pub matched_treated: BTreeSet<Iso3>,
    /// Retained strata, ordered by signature.
    pub strata: Vec<CemStratum>,
    pub dropped: Vec<CemDrop>,
}

fn check_cutpoints(cutpoints: &[f64]) -> Result<(), EconoError> {
    if cutpoints.len() < 2 || cutpoints.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(EconoError::BadCutpoints);
    }
    Ok(())
}

/// Match with z-scores computed over all candidates in `summaries`.
pub fn cem_match(
    summaries: &BTreeMap<Iso3, Vec<f64>>,
    names: &[String],
    treated: &BTreeSet<Iso3>,
    cutpoints: &[f64],
) -> Result<CemResult, EconoError> {
    check_cutpoints(cutpoints)?;
    let scaler = Scaler::fit(summaries, names)?;
    cem_match_with_scaler(summaries, &scaler, treated, cutpoints)
}

/// Match with a given standardization, e.g. one fitted on a larger pool.
pub fn cem_match_with_scaler(
    summaries: &BTreeMap<Iso3, Vec<f64>>,
    scaler: &Scaler,
    treated: &BTreeSet<Iso3>,
    cutpoints: &[f64],
) -> Result<CemResult, EconoError> {
    check_cutpoints(cutpoints)?;
    let mut dropped = Vec::new();
    for &t in treated {
        if !summaries.contains_key(&t) {
            dropped.push(CemDrop { country: t, role: CemRole::Treated, reason: "no pre-period covariates".into() });
        }
    }

    let mut cells: BTreeMap<Vec<usize>, (BTreeSet<Iso3>, BTreeSet<Iso3>)> = BTreeMap::new();
    for (&c, v) in summaries {
        let role = if treated.contains(&c) { CemRole::Treated } else { CemRole::Control };
        if v.len() != scaler.names.len() {
            return Err(EconoError::CovariateCount { expected: scaler.names.len(), got: v.len() });
        }
        let sig: Option<Vec<usize>> = scaler.z(v).into_iter().map(|z| bin_index(z, cutpoints)).collect();
        let Some(sig) = sig else {
            dropped.push(CemDrop { country: c, role, reason: "z-score outside the cutpoint range".into() });
            continue;
        };
        let cell = cells.entry(sig).or_default();
        match role {
            CemRole::Treated => cell.0.insert(c),
            CemRole::Control => cell.1.insert(c),
        };
    }

    let mut strata = Vec::new();
    for (signature, (t, k)) in cells {
        if t.is_empty() || k.is_empty() {
            let (role, members, reason) = if t.is_empty() {
                (CemRole::Control, k, "stratum has no treated country")
            } else {
                (CemRole::Treated, t, "stratum has no control country")
            };
            dropped.extend(members.into_iter().map(|country| CemDrop { country, role, reason: reason.into() }));
        } else {
            strata.push(CemStratum { signature, treated: t, controls: k });
        }
    }
    dropped.sort_by_key(|d| d.country);
    Ok(CemResult {
        covariate_names: scaler.names.clone(),
        cutpoints: cutpoints.to_vec(),
        scaler: scaler.clone(),
        matched_controls: strata.iter().flat_map(|s| s.controls.iter().copied()).collect(),
        matched_treated: strata.iter().flat_map(|s| s.treated.iter().copied()).collect(),
        strata,
        dropped,
    })
}

/// Pre-period average of each logged covariate per candidate country.
/// Countries lacking a finite value for every pre year are left out.
pub fn pre_period_summaries(
    covariates: &[CountryYearCovariates],
    candidates: &BTreeSet<Iso3>,
    periods: &PeriodSpec,
    which: &[Covariate],
) -> BTreeMap<Iso3, Vec<f64>> {
    let mut by_country: BTreeMap<Iso3, BTreeMap<i32, &CountryYearCovariates>> = BTreeMap::new();
    for c in covariates.iter().filter(|c| candidates.contains(&c.country) && periods.pre_years().contains(&c.year)) {
        by_country.entry(c.country).or_default().insert(c.year, c);
    }
    let n_years = periods.pre_years().count();
    by_country
        .into_iter()
        .filter(|(_, years)| years.len() == n_years)
        .filter_map(|(country, years)| {
            let means: Vec<f64> =
                which.iter().map(|k| years.values().map(|c| k.value(c)).sum::<f64>() / n_years as f64).collect();
            means.iter().all(|v| v.is_finite()).then_some((country, means))
        })
        .collect()
}
