//! Two-way fixed-effects difference-in-differences and its diagnostics.
//!
//! Model: log y_it = α_i + λ_t + Σ_s β_s·Post_t·Treat_is + θ·X_it + ε_it.
//! Country effects are absorbed by demeaning within country; year effects
//! enter as dummies (first year dropped). Rows are sorted by (country,
//! year) before anything else, so row order never affects the estimates.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::ols::{demean, ols_cluster_robust, OlsFit};
use super::{EconoError, Panel, PanelObservation};
use crate::iso3::Iso3;

/// Conventional VIF threshold for acceptable collinearity.
pub const VIF_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
}

fn t_dist(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom")
}

impl Coefficient {
    fn new(name: String, beta: f64, se: f64, df: f64) -> Self {
        let t = beta / se;
        let p_value = if se > 0.0 { (2.0 * t_dist(df).sf(t.abs())).min(1.0) } else { f64::NAN };
        Coefficient { name, beta, se, t, p_value }
    }

    /// Two-sided confidence interval at `level` with `df` degrees of freedom.
    pub fn ci(&self, level: f64, df: f64) -> (f64, f64) {
        let q = t_dist(df).inverse_cdf(0.5 + level / 2.0);
        (self.beta - q * self.se, self.beta + q * self.se)
    }
}

/// Variance inflation factor, or the columns making it infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vif {
    Finite(f64),
    Infinite { collinear_with: Vec<String> },
}

impl Vif {
    pub fn value(&self) -> f64 {
        match self {
            Vif::Finite(v) => *v,
            Vif::Infinite { .. } => f64::INFINITY,
        }
    }

    /// Below the conventional threshold of 5.
    pub fn passes(&self) -> bool {
        self.value() < VIF_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidResult {
    /// One `Post×Treat` coefficient per treatment group, in input order.
    pub treatment: Vec<Coefficient>,
    pub covariates: Vec<Coefficient>,
    pub year_effects: Vec<Coefficient>,
    pub within_r2: f64,
    pub n_obs: usize,
    pub n_countries: usize,
    pub n_clusters: usize,
    /// Degrees of freedom for t tests: clusters − 1.
    pub df: usize,
    /// Largest VIF among the treatment columns of the within design.
    pub vif_post: Vif,
    /// Cluster-robust Wald F test that every slope is zero; `None` when
    /// the covariance is singular (more regressors than clusters).
    pub f_stat_p: Option<f64>,
}

impl DidResult {
    pub fn group(&self, label: &str) -> Option<&Coefficient> {
        self.treatment.iter().find(|c| c.name == label)
    }
}

struct Prepared {
    rows: Vec<PanelObservation>,
    clusters: Vec<usize>,
    n_clusters: usize,
}

fn prepare(panel: &Panel, groups: &[String]) -> Result<Prepared, EconoError> {
    let mut rows = panel.rows.clone();
    rows.sort_by(|a, b| a.country.cmp(&b.country).then(a.year.cmp(&b.year)));
    if rows.is_empty() {
        return Err(EconoError::NoRows);
    }
    for w in rows.windows(2) {
        if w[0].country == w[1].country && w[0].year == w[1].year {
            return Err(EconoError::DuplicateRow { country: w[0].country, year: w[0].year });
        }
    }
    let k = panel.covariate_names.len();
    let mut arms: BTreeMap<Option<&str>, BTreeSet<Iso3>> = BTreeMap::new();
    for r in &rows {
        if r.covariates.len() != k {
            return Err(EconoError::CovariateCount { expected: k, got: r.covariates.len() });
        }
        if !r.outcome.is_finite() || r.covariates.iter().any(|v| !v.is_finite()) {
            return Err(EconoError::NonFinite { country: r.country, year: r.year });
        }
        if let Some(g) = &r.group {
            if !groups.contains(g) {
                return Err(EconoError::UnknownGroup(g.clone()));
            }
        }
        arms.entry(r.group.as_deref()).or_default().insert(r.country);
    }
    let control = arms.get(&None).map_or(0, BTreeSet::len);
    if control < 2 {
        return Err(EconoError::InsufficientClusters { arm: "control".into(), found: control });
    }
    for g in groups {
        let found = arms.get(&Some(g.as_str())).map_or(0, BTreeSet::len);
        if found < 2 {
            return Err(EconoError::InsufficientClusters { arm: g.clone(), found });
        }
    }
    let mut clusters = Vec::with_capacity(rows.len());
    let mut n_clusters = 0;
    for (i, r) in rows.iter().enumerate() {
        if i > 0 && rows[i - 1].country != r.country {
            n_clusters += 1;
        }
        clusters.push(n_clusters);
    }
    Ok(Prepared { rows, clusters, n_clusters: n_clusters + 1 })
}

fn design(
    rows: &[PanelObservation],
    names: Vec<String>,
    width: usize,
    fill: impl Fn(&PanelObservation, &mut [f64]),
) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let mut x = DMatrix::zeros(rows.len(), width);
    let mut buf = vec![0.0; width];
    for (i, r) in rows.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        fill(r, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.outcome));
    (x, y, names)
}

fn did_columns(prep: &Prepared, panel: &Panel, groups: &[String]) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let years: BTreeSet<i32> = prep.rows.iter().map(|r| r.year).collect();
    let years: Vec<i32> = years.into_iter().skip(1).collect();
    let mut names: Vec<String> = groups.to_vec();
    names.extend(panel.covariate_names.iter().cloned());
    names.extend(years.iter().map(|y| format!("year_{y}")));
    let (ng, nc) = (groups.len(), panel.covariate_names.len());
    let width = names.len();
    let (mut x, mut y, names) = design(&prep.rows, names, width, |r, out| {
        if r.post {
            if let Some(s) = groups.iter().position(|g| Some(g) == r.group.as_ref()) {
                out[s] = 1.0;
            }
        }
        out[ng..ng + nc].copy_from_slice(&r.covariates);
        if let Some(t) = years.iter().position(|&yr| yr == r.year) {
            out[ng + nc + t] = 1.0;
        }
    });
    demean(&mut x, &prep.clusters, prep.n_clusters);
    let mut ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    demean(&mut ym, &prep.clusters, prep.n_clusters);
    y.copy_from(&ym.column(0));
    (x, y, names)
}

/// Design matrix, outcome vector and column names.
pub type Design = (DMatrix<f64>, DVector<f64>, Vec<String>);

/// The demeaned DiD design: columns are one `Post×Treat` per group, the
/// covariates, then year dummies for every year but the first. Also
/// returns the demeaned outcome and the column names.
pub fn within_design(panel: &Panel, groups: &[String]) -> Result<Design, EconoError> {
    let prep = prepare(panel, groups)?;
    Ok(did_columns(&prep, panel, groups))
}

fn coefficients(fit: &OlsFit, names: &[String], range: std::ops::Range<usize>, df: f64) -> Vec<Coefficient> {
    range.map(|j| Coefficient::new(names[j].clone(), fit.beta[j], fit.vcov[(j, j)].sqrt(), df)).collect()
}

fn squared_correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab * sab / (saa * sbb)
}

fn wald_f_p(fit: &OlsFit, df: f64) -> Option<f64> {
    let k = fit.beta.len();
    if k == 0 || k as f64 > df {
        return None;
    }
    let inv = fit.vcov.clone().try_inverse()?;
    let w = (fit.beta.transpose() * inv * &fit.beta)[(0, 0)];
    if !w.is_finite() || w < 0.0 {
        return None;
    }
    let dist = FisherSnedecor::new(k as f64, df).ok()?;
    Some(dist.sf(w / k as f64))
}

/// Two-way fixed-effects DiD with one treatment effect per group.
pub fn did_estimate(panel: &Panel, groups: &[String]) -> Result<DidResult, EconoError> {
    let prep = prepare(panel, groups)?;
    let (x, y, names) = did_columns(&prep, panel, groups);
    let fit = ols_cluster_robust(&x, &y, &prep.clusters, prep.n_clusters, &names)?;
    let df = (prep.n_clusters - 1) as f64;
    let (ng, nc) = (groups.len(), panel.covariate_names.len());

    let vif_post = (0..ng)
        .map(|j| vif(&x, &names, j))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .max_by(|a, b| a.value().total_cmp(&b.value()))
        .unwrap_or(Vif::Finite(1.0));

    Ok(DidResult {
        treatment: coefficients(&fit, &names, 0..ng, df),
        covariates: coefficients(&fit, &names, ng..ng + nc, df),
        year_effects: coefficients(&fit, &names, ng + nc..names.len(), df),
        within_r2: squared_correlation(&fit.fitted, &y),
        n_obs: prep.rows.len(),
        n_countries: prep.n_clusters,
        n_clusters: prep.n_clusters,
        df: prep.n_clusters - 1,
        vif_post,
        f_stat_p: wald_f_p(&fit, df),
    })
}

/// VIF of column `focus`: 1/(1−R²) from regressing it, with an
/// intercept, on every other column.
pub fn vif(columns: &DMatrix<f64>, names: &[String], focus: usize) -> Result<Vif, EconoError> {
    let (n, k) = columns.shape();
    if k < 2 {
        return Err(EconoError::TooFewColumns { need: 2, got: k });
    }
    let target = columns.column(focus).clone_owned();
    let mut others = DMatrix::from_element(n, k, 1.0);
    let mut other_names = vec!["(intercept)".to_string()];
    for (c, j) in (1..).zip((0..k).filter(|&j| j != focus)) {
        others.set_column(c, &columns.column(j));
        other_names.push(names[j].clone());
    }
    let mean = target.sum() / n as f64;
    let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        return Ok(Vif::Infinite { collinear_with: vec!["(intercept)".into()] });
    }

    // Least squares via QR; a dependent regressor set is dropped column by
    // column so the fit of the focus column is still defined.
    let mut keep: Vec<usize> = Vec::new();
    for j in 0..k {
        let mut trial = keep.clone();
        trial.push(j);
        let sub = others.select_columns(&trial);
        let r = sub.clone().qr().r();
        let last = trial.len() - 1;
        if r[(last, last)].abs() > 1e-9 * sub.column(last).norm().max(f64::MIN_POSITIVE) {
            keep = trial;
        }
    }
    let sub = others.select_columns(&keep);
    let qr = sub.clone().qr();
    let beta = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * &target))
        .ok_or(EconoError::Collinear(other_names.clone()))?;
    let resid = &target - sub * &beta;
    let rss: f64 = resid.norm_squared();
    let r2 = 1.0 - rss / tss;
    if rss <= 1e-12 * tss {
        let collinear_with = keep
            .iter()
            .zip(beta.iter())
            .filter(|(&j, b)| j > 0 && b.abs() > 1e-9)
            .map(|(&j, _)| other_names[j].clone())
            .collect();
        return Ok(Vif::Infinite { collinear_with });
    }
    Ok(Vif::Finite(1.0 / (1.0 - r2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendCoef {
    pub group: String,
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
    /// Significant differential pre-trend at α = 0.05.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendResult {
    pub groups: Vec<PretrendCoef>,
    pub common_trend: Coefficient,
    pub n_obs: usize,
    pub n_clusters: usize,
}

/// Significance level for the pre-trend test.
pub const PRETREND_ALPHA: f64 = 0.05;

/// Parallel-trends pre-test on rows before `event_year`: outcome on
/// (t−E)·Treat_s per group, a common (t−E) trend and the covariates,
/// with country fixed effects and clustered errors.
pub fn parallel_trends_test(panel: &Panel, groups: &[String], event_year: i32) -> Result<PretrendResult, EconoError> {
    let pre = Panel { rows: panel.rows.iter().filter(|r| r.year < event_year).cloned().collect(), ..panel.clone() };
    let prep = prepare(&pre, groups)?;
    let (ng, nc) = (groups.len(), pre.covariate_names.len());
    let mut names: Vec<String> = groups.iter().map(|g| format!("trend_x_{g}")).collect();
    names.push("trend".into());
    names.extend(pre.covariate_names.iter().cloned());
    let width = names.len();
    let (mut x, y, names) = design(&prep.rows, names, width, |r, out| {
        let t = (r.year - event_year) as f64;
        if let Some(s) = groups.iter().position(|g| Some(g) == r.group.as_ref()) {
            out[s] = t;
        }
        out[ng] = t;
        out[ng + 1..ng + 1 + nc].copy_from_slice(&r.covariates);
    });
    demean(&mut x, &prep.clusters, prep.n_clusters);
    let mut ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    demean(&mut ym, &prep.clusters, prep.n_clusters);
    let y = ym.column(0).clone_owned();
    let fit = ols_cluster_robust(&x, &y, &prep.clusters, prep.n_clusters, &names)?;
    let df = (prep.n_clusters - 1) as f64;
    let coefs = coefficients(&fit, &names, 0..ng + 1, df);
    Ok(PretrendResult {
        groups: groups
            .iter()
            .zip(&coefs)
            .map(|(g, c)| PretrendCoef {
                group: g.clone(),
                beta: c.beta,
                se: c.se,
                p_value: c.p_value,
                violated: c.p_value < PRETREND_ALPHA,
            })
            .collect(),
        common_trend: coefs[ng].clone(),
        n_obs: prep.rows.len(),
        n_clusters: prep.n_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(i: usize) -> Iso3 {
        Iso3::new(&format!("Q{}{}", (b'A' + (i / 26) as u8) as char, (b'A' + (i % 26) as u8) as char)).unwrap()
    }

    /// Deterministic panel: 3 treated in GO, 5 controls, 2002–2019,
    /// y = γ_i + λ_t + β·Post·Treat + 0.5·x + trend·(t−2011)·Treat, with
    /// λ_t curved or linear.
    fn toy_with(beta: f64, trend: f64, curved: bool) -> Panel {
        let mut rows = Vec::new();
        for i in 0..8 {
            for year in 2002..=2019 {
                let treated = i < 3;
                let x = ((i * 7 + year as usize * 3) % 11) as f64 / 10.0;
                let post = year >= 2011;
                let y = i as f64 * 0.3
                    + if curved { ((year - 2002) as f64 * 0.17).sin() } else { 0.04 * year as f64 }
                    + if treated && post { beta } else { 0.0 }
                    + if treated { trend * (year - 2011) as f64 } else { 0.0 }
                    + 0.5 * x;
                rows.push(PanelObservation {
                    country: code(i),
                    year,
                    outcome: y,
                    covariates: vec![x],
                    group: treated.then(|| "GO".to_string()),
                    post,
                });
            }
        }
        Panel { measure: "total".into(), covariate_names: vec!["x".into()], rows }
    }

    fn toy(beta: f64, trend: f64) -> Panel {
        toy_with(beta, trend, true)
    }

    #[test]
    fn noiseless_recovery() {
        let r = did_estimate(&toy(0.25, 0.0), &["GO".into()]).unwrap();
        assert!((r.treatment[0].beta - 0.25).abs() < 1e-10);
        assert!((r.covariates[0].beta - 0.5).abs() < 1e-10);
        assert_eq!(r.n_clusters, 8);
        assert!((r.within_r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn row_order_irrelevant() {
        let p = toy(0.1, 0.0);
        let mut q = p.clone();
        q.rows.reverse();
        assert_eq!(did_estimate(&p, &["GO".into()]).unwrap(), did_estimate(&q, &["GO".into()]).unwrap());
    }

    #[test]
    fn preconditions() {
        let p = toy(0.1, 0.0);
        let few = p.without(&BTreeSet::from([code(0), code(1)]));
        assert_eq!(
            did_estimate(&few, &["GO".into()]).unwrap_err(),
            EconoError::InsufficientClusters { arm: "GO".into(), found: 1 }
        );
        assert_eq!(did_estimate(&p, &[]).unwrap_err(), EconoError::UnknownGroup("GO".into()));

        let mut dup = p.clone();
        dup.rows.push(dup.rows[0].clone());
        assert!(matches!(did_estimate(&dup, &["GO".into()]), Err(EconoError::DuplicateRow { .. })));
    }

    #[test]
    fn time_invariant_covariate_is_collinear() {
        let mut p = toy(0.1, 0.0);
        for r in &mut p.rows {
            r.covariates[0] = r.country.as_str().as_bytes()[2] as f64;
        }
        assert_eq!(did_estimate(&p, &["GO".into()]).unwrap_err(), EconoError::Collinear(vec!["x".into()]));
    }

    #[test]
    fn pretrend_detects_slope() {
        let flat = parallel_trends_test(&toy_with(0.3, 0.0, false), &["GO".into()], 2011).unwrap();
        assert!(flat.groups[0].beta.abs() < 1e-10);
        let sloped = parallel_trends_test(&toy_with(0.3, 0.1, false), &["GO".into()], 2011).unwrap();
        assert!((sloped.groups[0].beta - 0.1).abs() < 1e-10);
        assert_eq!(sloped.n_obs, 8 * 9);
    }

    #[test]
    fn vif_examples() {
        let n = 200;
        let a: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 53) % 97) as f64).collect();
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];

        // Centered, exactly orthogonal columns.
        let mut m = DMatrix::zeros(4, 2);
        m.set_column(0, &DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]));
        m.set_column(1, &DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]));
        assert!((vif(&m, &names, 0).unwrap().value() - 1.0).abs() < 1e-12);

        let mut dup = DMatrix::zeros(n, 3);
        dup.set_column(0, &DVector::from_vec(a.clone()));
        dup.set_column(1, &DVector::from_vec(b.clone()));
        dup.set_column(2, &DVector::from_vec(a.clone()));
        assert_eq!(vif(&dup, &names, 0).unwrap(), Vif::Infinite { collinear_with: vec!["c".into()] });
        assert!(!vif(&dup, &names, 0).unwrap().passes());
    }
}
