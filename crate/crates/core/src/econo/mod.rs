//! Panel assembly and causal estimation: two-way fixed-effects
//! difference-in-differences with country-clustered errors, the
//! parallel-trends pre-test, variance inflation factors and coarsened exact
//! matching.

mod cem;
mod did;
mod ols;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::CountryYearCovariates;
use crate::iso3::Iso3;
use crate::metrics::{AttentionSplit, GroupSpec, PeriodSpec};

pub use cem::{
    bin_index, cem_match, cem_match_with_scaler, pre_period_summaries, CemDrop, CemResult, CemRole, CemStratum, Scaler,
    DEFAULT_CUTPOINTS,
};
pub use did::{
    did_estimate, parallel_trends_test, vif, within_design, Coefficient, Design, DidResult, PretrendCoef,
    PretrendResult, Vif, PRETREND_ALPHA, VIF_THRESHOLD,
};
pub use ols::{ols_cluster_robust, OlsFit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EconoError {
    #[error("panel has no rows")]
    NoRows,
    #[error("arm `{arm}` has {found} cluster(s); at least 2 are required")]
    InsufficientClusters { arm: String, found: usize },
    #[error("design is rank deficient; collinear column(s): {}", .0.join(", "))]
    Collinear(Vec<String>),
    #[error("panel row group `{0}` is not among the estimated treatment groups")]
    UnknownGroup(String),
    #[error("duplicate panel row for {country} {year}")]
    DuplicateRow { country: Iso3, year: i32 },
    #[error("non-finite value in panel row {country} {year}")]
    NonFinite { country: Iso3, year: i32 },
    #[error("row has {got} covariates, panel declares {expected}")]
    CovariateCount { expected: usize, got: usize },
    #[error("covariate `{0}` has zero variance across candidates")]
    ZeroVariance(String),
    #[error("cutpoints must be strictly increasing with at least two entries")]
    BadCutpoints,
    #[error("need at least {need} columns, got {got}")]
    TooFewColumns { need: usize, got: usize },
}

/// Which attention quantity becomes the panel outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Total,
    Domestic,
    Foreign,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Total, Outcome::Domestic, Outcome::Foreign];

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Total => "total",
            Outcome::Domestic => "domestic",
            Outcome::Foreign => "foreign",
        }
    }

    pub fn of(&self, s: &AttentionSplit) -> f64 {
        match self {
            Outcome::Total => s.domestic + s.foreign,
            Outcome::Domestic => s.domestic,
            Outcome::Foreign => s.foreign,
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Outcome::ALL.into_iter().find(|o| o.as_str() == s).ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Handling of zero outcomes before taking logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroPolicy {
    /// Remove the row and count it.
    #[default]
    Drop,
    /// Use log(y + ε) for every row.
    Offset(f64),
}

/// Country-year covariates available to the regressions, all logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    LogGdpPerCapita,
    LogPopulation,
    LogResearcherPopulation,
}

impl Covariate {
    pub const ALL: [Covariate; 3] =
        [Covariate::LogGdpPerCapita, Covariate::LogPopulation, Covariate::LogResearcherPopulation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Covariate::LogGdpPerCapita => "log_gdp_per_capita",
            Covariate::LogPopulation => "log_population",
            Covariate::LogResearcherPopulation => "log_researcher_population",
        }
    }

    pub fn value(&self, c: &CountryYearCovariates) -> f64 {
        match self {
            Covariate::LogGdpPerCapita => c.gdp_per_capita.ln(),
            Covariate::LogPopulation => (c.population as f64).ln(),
            Covariate::LogResearcherPopulation => (c.researcher_population as f64).ln(),
        }
    }
}

impl std::str::FromStr for Covariate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Covariate::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown covariate `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub country: Iso3,
    pub year: i32,
    pub outcome: f64,
    /// In the order of [`Panel::covariate_names`].
    pub covariates: Vec<f64>,
    /// Treatment group label; `None` for controls.
    pub group: Option<String>,
    pub post: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub measure: String,
    pub covariate_names: Vec<String>,
    pub rows: Vec<PanelObservation>,
}

impl Panel {
    pub fn countries(&self) -> BTreeSet<Iso3> {
        self.rows.iter().map(|r| r.country).collect()
    }

    pub fn group_labels(&self) -> Vec<String> {
        let labels: BTreeSet<&String> = self.rows.iter().filter_map(|r| r.group.as_ref()).collect();
        labels.into_iter().cloned().collect()
    }

    /// The same panel without rows for the given countries.
    pub fn without(&self, drop: &BTreeSet<Iso3>) -> Panel {
        Panel { rows: self.rows.iter().filter(|r| !drop.contains(&r.country)).cloned().collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelDiagnostics {
    pub zero_outcome_dropped: usize,
    /// Country-years with no covariate row; dropped.
    pub missing_covariates: Vec<(Iso3, i32)>,
    /// Country-years whose logged covariates are not finite; dropped.
    pub invalid_covariates: Vec<(Iso3, i32)>,
}

/// Inputs selecting the panel's rows and columns.
#[derive(Debug, Clone)]
pub struct PanelSpec<'a> {
    pub groups: &'a GroupSpec,
    /// Control roster; treated countries listed here stay treated.
    pub controls: &'a BTreeSet<Iso3>,
    pub periods: &'a PeriodSpec,
    pub outcome: Outcome,
    pub zero_policy: ZeroPolicy,
    pub covariates: &'a [Covariate],
}

/// Country-year panel of logged outcomes over the pre and post windows.
/// Missing attention reads as zero and follows the zero policy.
pub fn build_panel(
    attention: &BTreeMap<Iso3, BTreeMap<i32, AttentionSplit>>,
    covariates: &[CountryYearCovariates],
    spec: &PanelSpec<'_>,
) -> (Panel, PanelDiagnostics) {
    let cov: BTreeMap<(Iso3, i32), &CountryYearCovariates> =
        covariates.iter().map(|c| ((c.country, c.year), c)).collect();
    let mut countries: BTreeSet<Iso3> = spec.groups.members();
    countries.extend(spec.controls.iter().copied());

    let mut diag = PanelDiagnostics::default();
    let mut rows = Vec::new();
    for &country in &countries {
        let group = spec.groups.group_of(country).map(str::to_string);
        for year in spec.periods.pre.0..=spec.periods.post.1 {
            if year > spec.periods.pre.1 && year < spec.periods.post.0 {
                continue;
            }
            let y = attention.get(&country).and_then(|m| m.get(&year)).map_or(0.0, |s| spec.outcome.of(s));
            let outcome = match spec.zero_policy {
                ZeroPolicy::Drop if y <= 0.0 => {
                    diag.zero_outcome_dropped += 1;
                    continue;
                }
                ZeroPolicy::Drop => y.ln(),
                ZeroPolicy::Offset(eps) => (y + eps).ln(),
            };
            let Some(c) = cov.get(&(country, year)) else {
                diag.missing_covariates.push((country, year));
                continue;
            };
            let values: Vec<f64> = spec.covariates.iter().map(|k| k.value(c)).collect();
            if values.iter().any(|v| !v.is_finite()) {
                diag.invalid_covariates.push((country, year));
                continue;
            }
            rows.push(PanelObservation {
                country,
                year,
                outcome,
                covariates: values,
                group: group.clone(),
                post: year >= spec.periods.event_year,
            });
        }
    }
    let panel = Panel {
        measure: spec.outcome.as_str().to_string(),
        covariate_names: spec.covariates.iter().map(|c| c.as_str().to_string()).collect(),
        rows,
    };
    (panel, diag)
}

// ---------------------------------------------------------------- CSV

pub const PANEL_FIXED_COLUMNS: [&str; 6] = ["measure", "country", "year", "group", "post", "outcome"];

#[derive(Debug, thiserror::Error)]
pub enum PanelIoError {
    #[error("panel file: {0}")]
    Csv(#[from] csv::Error),
    #[error("panel header must start with `{}`", PANEL_FIXED_COLUMNS.join(","))]
    Header,
    #[error("panel file line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("panels written together must share covariate columns")]
    MixedCovariates,
}

/// Write one or more panels (e.g. one per measure) into a single CSV.
pub fn write_panel_csv<W: Write>(out: W, panels: &[Panel]) -> Result<(), PanelIoError> {
    let names = panels.first().map(|p| p.covariate_names.clone()).unwrap_or_default();
    if panels.iter().any(|p| p.covariate_names != names) {
        return Err(PanelIoError::MixedCovariates);
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = PANEL_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(names);
    w.write_record(&header)?;
    for p in panels {
        for r in &p.rows {
            let mut rec = vec![
                p.measure.clone(),
                r.country.to_string(),
                r.year.to_string(),
                r.group.clone().unwrap_or_default(),
                if r.post { "1" } else { "0" }.to_string(),
                r.outcome.to_string(),
            ];
            rec.extend(r.covariates.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Read every panel in a CSV, keyed by measure.
pub fn read_panel_csv<R: Read>(input: R) -> Result<BTreeMap<String, Panel>, PanelIoError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < PANEL_FIXED_COLUMNS.len() || header.iter().zip(PANEL_FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(PanelIoError::Header);
    }
    let names: Vec<String> = header.iter().skip(PANEL_FIXED_COLUMNS.len()).map(str::to_string).collect();
    let mut out: BTreeMap<String, Panel> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| PanelIoError::Row { line, message };
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(format!("`{}` is not a number", &rec[i])));
        let country = Iso3::new(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let year: i32 = rec[2].parse().map_err(|_| bad(format!("`{}` is not a year", &rec[2])))?;
        let post = match &rec[4] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("post must be 0 or 1, got `{other}`"))),
        };
        let covariates = (PANEL_FIXED_COLUMNS.len()..rec.len()).map(num).collect::<Result<Vec<_>, _>>()?;
        let row = PanelObservation {
            country,
            year,
            outcome: num(5)?,
            covariates,
            group: (!rec[3].is_empty()).then(|| rec[3].to_string()),
            post,
        };
        out.entry(rec[0].to_string())
            .or_insert_with(|| Panel { measure: rec[0].to_string(), covariate_names: names.clone(), rows: Vec::new() })
            .rows
            .push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(s: &str) -> Iso3 {
        Iso3::new(s).unwrap()
    }

    fn cov(c: &str, year: i32) -> CountryYearCovariates {
        CountryYearCovariates {
            country: iso(c),
            year,
            gdp_per_capita: 1000.0,
            population: 5_000_000,
            researcher_population: 2000,
            scholar_stock: 300,
        }
    }

    fn split(total: f64) -> AttentionSplit {
        AttentionSplit { domestic: total, foreign: 0.0, ratio: None }
    }

    fn one_country(y: f64, policy: ZeroPolicy) -> (Panel, PanelDiagnostics) {
        let groups = GroupSpec(BTreeMap::from([("GO".into(), BTreeSet::from([iso("EGY")]))]));
        let periods = PeriodSpec { pre: (2010, 2010), post: (2011, 2011), event_year: 2011 };
        let att = BTreeMap::from([(iso("EGY"), BTreeMap::from([(2010, split(y)), (2011, split(1.0))]))]);
        let covs = vec![cov("EGY", 2010), cov("EGY", 2011)];
        let controls = BTreeSet::new();
        let spec = PanelSpec {
            groups: &groups,
            controls: &controls,
            periods: &periods,
            outcome: Outcome::Total,
            zero_policy: policy,
            covariates: &[Covariate::LogGdpPerCapita],
        };
        build_panel(&att, &covs, &spec)
    }

    #[test]
    fn outcome_logs_and_zero_policy() {
        let (p, d) = one_country(1.0, ZeroPolicy::Drop);
        assert_eq!(p.rows[0].outcome, 0.0);
        assert_eq!(d.zero_outcome_dropped, 0);
        assert!(!p.rows[0].post && p.rows[1].post);

        let (p, d) = one_country(0.0, ZeroPolicy::Drop);
        assert_eq!(p.rows.len(), 1);
        assert_eq!(d.zero_outcome_dropped, 1);

        let (p, _) = one_country(0.0, ZeroPolicy::Offset(1e-3));
        assert_eq!(p.rows[0].outcome, 1e-3f64.ln());
    }

    #[test]
    fn covariate_gaps_listed() {
        let groups = GroupSpec(BTreeMap::from([("GO".into(), BTreeSet::from([iso("EGY")]))]));
        let periods = PeriodSpec { pre: (2010, 2010), post: (2011, 2011), event_year: 2011 };
        let att = BTreeMap::from([(iso("EGY"), BTreeMap::from([(2010, split(2.0)), (2011, split(1.0))]))]);
        let controls = BTreeSet::new();
        let spec = PanelSpec {
            groups: &groups,
            controls: &controls,
            periods: &periods,
            outcome: Outcome::Total,
            zero_policy: ZeroPolicy::Drop,
            covariates: &[],
        };
        let (p, d) = build_panel(&att, &[cov("EGY", 2011)], &spec);
        assert_eq!(p.rows.len(), 1);
        assert_eq!(d.missing_covariates, vec![(iso("EGY"), 2010)]);
    }

    #[test]
    fn csv_round_trip() {
        let (p, _) = one_country(2.5, ZeroPolicy::Drop);
        let mut buf = Vec::new();
        write_panel_csv(&mut buf, std::slice::from_ref(&p)).unwrap();
        assert!(
            String::from_utf8_lossy(&buf).starts_with("measure,country,year,group,post,outcome,log_gdp_per_capita\n")
        );
        let back = read_panel_csv(&buf[..]).unwrap();
        assert_eq!(back["total"], p);
    }
}
