use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use geoscholar::econo::{cem_match, cem_match_with_scaler, did_estimate, vif, Vif, DEFAULT_CUTPOINTS};
use geoscholar::extract::{extract_corpus, strip_copyright, ExtractOptions};
use geoscholar::gazetteer::{CompiledGazetteer, GazetteerSource};
use geoscholar::metrics::{correlate, rank_countries, CorrelationMethod};
use geoscholar::synth::{generate_corpus, generate_panel, CorpusPlan, PanelPlan, SynthPlan};
use geoscholar::Iso3;

fn plan(seed: u64, n: usize, panel: PanelPlan) -> SynthPlan {
    SynthPlan {
        seed,
        corpus: CorpusPlan { n_publications: n, ..Default::default() },
        panel,
        migration: Default::default(),
        annotations: Default::default(),
    }
}

fn code(i: usize) -> Iso3 {
    Iso3::new(&format!("Q{}{}", (b'M' + (i / 26) as u8) as char, (b'A' + (i % 26) as u8) as char)).unwrap()
}

#[test]
fn vif_of_correlated_column_near_closed_form() {
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let other: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    // corr² = 0.81 when the noise variance is 1 − 0.81.
    let noise_sd = (1.0f64 - 0.81).sqrt();
    let focus: Vec<f64> = other
        .iter()
        .map(|o| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.9 * o + noise_sd * e
        })
        .collect();
    let m = DMatrix::from_fn(n, 2, |i, j| if j == 0 { focus[i] } else { other[i] });
    let Vif::Finite(v) = vif(&m, &["focus".into(), "other".into()], 0).unwrap() else { panic!("infinite") };
    assert!((v - 1.0 / (1.0 - 0.81)).abs() < 0.1, "vif {v}");
}

#[test]
fn cem_is_idempotent_on_matched_subset() {
    let names: Vec<String> = vec!["a".into(), "b".into()];
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let summaries: BTreeMap<Iso3, Vec<f64>> =
            (0..40).map(|i| (code(i), (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())).collect();
        let treated: BTreeSet<Iso3> = (0..10).map(code).collect();
        let first = cem_match(&summaries, &names, &treated, &DEFAULT_CUTPOINTS).unwrap();
        let kept: BTreeMap<Iso3, Vec<f64>> = summaries
            .iter()
            .filter(|(c, _)| first.matched_treated.contains(c) || first.matched_controls.contains(c))
            .map(|(c, v)| (*c, v.clone()))
            .collect();
        let again = cem_match_with_scaler(&kept, &first.scaler, &first.matched_treated, &DEFAULT_CUTPOINTS).unwrap();
        assert_eq!(first.strata, again.strata, "seed {seed}");
    }
}

#[test]
fn cluster_count_is_country_count() {
    let sp = generate_panel(&plan(3, 0, PanelPlan::default()));
    let r = did_estimate(&sp.panel, &["GO".to_string()]).unwrap();
    assert_eq!(r.n_clusters, sp.panel.countries().len());
    assert_eq!(r.n_countries, r.n_clusters);
}

#[test]
fn extraction_independent_of_workers() {
    let src = GazetteerSource::default_source();
    let gaz = CompiledGazetteer::compile(&src).unwrap();
    let corpus = generate_corpus(&plan(5, 2000, PanelPlan::default()), &src);
    let one = extract_corpus(&corpus.records, &gaz, &ExtractOptions { workers: 1, topic_query: None });
    let many = extract_corpus(&corpus.records, &gaz, &ExtractOptions { workers: 8, topic_query: None });
    assert_eq!(one, many);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outcome_shift_leaves_beta(seed in 0u64..1000, c in -5.0f64..5.0) {
        let sp = generate_panel(&plan(seed, 0, PanelPlan::default()));
        let labels = ["GO".to_string()];
        let base = did_estimate(&sp.panel, &labels).unwrap();
        let mut shifted = sp.panel.clone();
        for r in &mut shifted.rows {
            r.outcome += c;
        }
        let moved = did_estimate(&shifted, &labels).unwrap();
        prop_assert!((base.treatment[0].beta - moved.treatment[0].beta).abs() < 1e-9);
        prop_assert!((base.treatment[0].se - moved.treatment[0].se).abs() < 1e-9);
    }

    #[test]
    fn rank_is_scale_invariant(values in prop::collection::vec(0.0f64..100.0, 1..40), c in 0.01f64..100.0) {
        let m: BTreeMap<Iso3, f64> = values.iter().enumerate().map(|(i, v)| (code(i), *v)).collect();
        let scaled: BTreeMap<Iso3, f64> = m.iter().map(|(k, v)| (*k, v * c)).collect();
        prop_assert_eq!(rank_countries(&m), rank_countries(&scaled));
    }

    #[test]
    fn correlate_symmetric_and_self_one(xs in prop::collection::vec(-1e3f64..1e3, 3..30), ys in prop::collection::vec(-1e3f64..1e3, 3..30)) {
        let n = xs.len().min(ys.len());
        let (x, y) = (&xs[..n], &ys[..n]);
        for method in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
            if let Ok(r) = correlate(x, x, method) {
                prop_assert!((r.coefficient - 1.0).abs() < 1e-9);
            }
            match (correlate(x, y, method), correlate(y, x, method)) {
                (Ok(a), Ok(b)) => prop_assert!((a.coefficient - b.coefficient).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn strip_copyright_is_idempotent(s in "[ a-zA-Z0-9.,@©()]{0,80}") {
        let once = strip_copyright(&s);
        prop_assert_eq!(strip_copyright(once), once);
    }
}
