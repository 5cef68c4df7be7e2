mod common;

use aftmed::aft::{self, AftFit, AftSpec, LinearFit, TimeScale, EXPOSURE, INTERCEPT, MEDIATOR};
use aftmed::mediation::{self, BootstrapConfig, Contrast, MediationEstimates};
use aftmed::simulate::{CensoringScheme, SimScenario, Simulator};
use aftmed::survdata::{Dataset, Subject};
use aftmed::StandardLaw;
use common::{dataset, Mix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn full_fit(beta_a: f64, beta_m: f64, var_beta_m: f64) -> AftFit {
    let mut cov = DMatrix::zeros(4, 4);
    cov[(2, 2)] = var_beta_m;
    AftFit {
        spec: AftSpec::full(StandardLaw::Normal, TimeScale::Identity),
        names: vec![INTERCEPT.into(), EXPOSURE.into(), MEDIATOR.into()],
        coefficients: vec![0.0, beta_a, beta_m],
        log_scale: 0.0,
        covariance: Some(cov),
        loglik: 0.0,
        converged: true,
        iterations: 1,
        max_abs_score: 0.0,
        floored_intervals: 0,
    }
}

fn reduced_fit(tau_a: f64) -> AftFit {
    AftFit {
        spec: AftSpec::reduced(StandardLaw::Normal, TimeScale::Identity),
        names: vec![INTERCEPT.into(), EXPOSURE.into()],
        coefficients: vec![0.0, tau_a],
        covariance: None,
        ..full_fit(0.0, 0.0, 0.0)
    }
}

fn mediator_fit(alpha_a: f64, var_alpha_a: f64) -> LinearFit {
    let mut cov = DMatrix::zeros(2, 2);
    cov[(1, 1)] = var_alpha_a;
    LinearFit {
        names: vec![INTERCEPT.into(), EXPOSURE.into()],
        coefficients: vec![0.0, alpha_a],
        residual_sd: 1.0,
        covariance: cov,
    }
}

#[test]
fn worked_effect_values() {
    let c = Contrast::default();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    assert!(close(mediation::product_nie(&mediator_fit(-0.5, 0.0), &full_fit(4.0, -4.0, 0.0), c).unwrap(), 2.0));
    assert!(close(mediation::product_nie(&mediator_fit(0.7, 0.0), &full_fit(4.0, 0.0, 0.0), c).unwrap(), 0.0));
    assert!(close(mediation::product_nie(&mediator_fit(-0.3, 0.0), &full_fit(0.5, -0.6, 0.0), c).unwrap(), 0.18));
    assert!(close(mediation::difference_nie(&reduced_fit(4.14), &full_fit(4.14, -1.0, 0.0), c).unwrap(), 0.0));
    assert!(close(mediation::difference_nie(&reduced_fit(7.04), &full_fit(4.14, -1.0, 0.0), c).unwrap(), 2.90));
    assert!(close(mediation::difference_nie(&reduced_fit(0.70), &full_fit(0.48, -1.0, 0.0), c).unwrap(), 0.22));
    assert!(close(mediation::nde(&full_fit(4.14, -1.0, 0.0), c), 4.14));
    assert_eq!(mediation::nde(&full_fit(4.14, -1.0, 0.0), Contrast::new(1.0, 1.0)), 0.0);
    assert!(close(mediation::nde(&full_fit(0.48, -1.0, 0.0), Contrast::new(0.0, 1.0)), -0.48));
    let se = mediation::delta_se_product(&mediator_fit(1.0, 0.01), &full_fit(0.0, 2.0, 0.04)).unwrap();
    assert!((se - 0.08f64.sqrt()).abs() < 1e-12);
    let zero = mediation::delta_se_product(&mediator_fit(0.0, 0.01), &full_fit(0.0, 0.0, 0.04)).unwrap();
    assert_eq!(zero, 0.0);
}

#[test]
fn mediator_must_be_in_the_full_model() {
    let c = Contrast::default();
    assert!(mediation::product_nie(&mediator_fit(-0.5, 0.0), &reduced_fit(1.0), c).is_err());
    assert!(mediation::difference_nie(&reduced_fit(1.0), &reduced_fit(1.0), c).is_err());
}

fn identities_hold(e: &MediationEstimates) {
    assert!((e.total_product - (e.nde + e.nie_product)).abs() <= 1e-12);
    assert!((e.nie_difference - (e.total_difference - e.nde)).abs() <= 1e-12);
    assert!(e.se_nde >= 0.0 && e.se_nie_product >= 0.0 && e.se_total_difference >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identities_and_antisymmetry(
        seed in 0u64..10_000,
        law in prop::sample::select(vec![StandardLaw::Normal, StandardLaw::ExtremeValueMin]),
        a in -2.0f64..2.0,
        a_star in -2.0f64..2.0,
    ) {
        let data = dataset(seed, 150, Mix::ALL);
        let spec = AftSpec::full(law, TimeScale::Log);
        let c = Contrast::new(a, a_star);
        let fwd = mediation::analyze(&data, &spec, c, None).unwrap();
        let back = mediation::analyze(&data, &spec, c.reversed(), None).unwrap();
        identities_hold(&fwd);
        identities_hold(&back);
        for (x, y) in [
            (fwd.nde, back.nde),
            (fwd.nie_product, back.nie_product),
            (fwd.nie_difference, back.nie_difference),
            (fwd.total_product, back.total_product),
            (fwd.total_difference, back.total_difference),
        ] {
            prop_assert_eq!(x, -y);
        }
        prop_assert_eq!(fwd.se_nie_product, back.se_nie_product);
    }

    #[test]
    fn covariate_location_shift_changes_nothing(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let data = dataset(seed, 150, Mix::ALL);
        let moved = data
            .map_subjects(|s| Subject { covariates: s.covariates.iter().map(|z| z + shift).collect(), ..s.clone() })
            .unwrap();
        let spec = AftSpec::full(StandardLaw::ExtremeValueMin, TimeScale::Log);
        let a = mediation::analyze(&data, &spec, Contrast::default(), None).unwrap();
        let b = mediation::analyze(&moved, &spec, Contrast::default(), None).unwrap();
        for (x, y) in [(a.nde, b.nde), (a.nie_product, b.nie_product), (a.nie_difference, b.nie_difference)] {
            prop_assert!((x - y).abs() < 1e-8, "{} vs {}", x, y);
        }
    }

    #[test]
    fn uncensored_normal_estimators_coincide(seed in 0u64..10_000, n in 20usize..400) {
        let data = dataset(seed, n, Mix { covariates: 1, ..Mix::EXACT });
        for scale in [TimeScale::Log, TimeScale::Identity] {
            let e = mediation::analyze(&data, &AftSpec::full(StandardLaw::Normal, scale), Contrast::default(), None).unwrap();
            prop_assert!((e.nie_product - e.nie_difference).abs() < 1e-8);
        }
    }
}

#[test]
fn null_contrast_gives_zero_effects() {
    let data = dataset(5, 200, Mix::ALL);
    let spec = AftSpec::full(StandardLaw::ExtremeValueMin, TimeScale::Log);
    let e = mediation::analyze(&data, &spec, Contrast::new(1.0, 1.0), None).unwrap();
    for v in [e.nde, e.nie_product, e.nie_difference, e.total_product, e.total_difference] {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn weibull_runs_flag_the_reduced_total() {
    let data = dataset(6, 200, Mix::ALL);
    let w = mediation::analyze(&data, &AftSpec::full(StandardLaw::ExtremeValueMin, TimeScale::Log), Contrast::default(), None).unwrap();
    let n = mediation::analyze(&data, &AftSpec::full(StandardLaw::Normal, TimeScale::Log), Contrast::default(), None).unwrap();
    assert!(w.total_difference_flagged);
    assert!(!n.total_difference_flagged);
}

fn bootstrap_ses(data: &Dataset, spec: &AftSpec, seed: u64, replicates: usize) -> MediationEstimates {
    let cfg = BootstrapConfig {
        replicates,
        seed,
        level: 0.95,
    };
    mediation::analyze(data, spec, Contrast::default(), Some(&cfg)).unwrap()
}

#[test]
fn bootstrap_is_reproducible_and_seed_stable() {
    let data = dataset(8, 400, Mix::ALL);
    let spec = AftSpec::full(StandardLaw::ExtremeValueMin, TimeScale::Log);
    let a = bootstrap_ses(&data, &spec, 11, 500);
    let again = bootstrap_ses(&data, &spec, 11, 500);
    let b = bootstrap_ses(&data, &spec, 12, 500);
    identities_hold(&a);
    assert_eq!(a.se_nie_difference.map(f64::to_bits), again.se_nie_difference.map(f64::to_bits));
    assert_eq!(a.bootstrap, again.bootstrap);
    for (x, y) in [(a.se_nie_difference, b.se_nie_difference), (a.se_total_product, b.se_total_product)] {
        let (x, y) = (x.unwrap(), y.unwrap());
        assert!((x - y).abs() / x.max(y) < 0.15, "{x} vs {y}");
    }
    assert_eq!(a.bootstrap_dropped, Some(0));
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn delta_standard_error_matches_monte_carlo_spread() {
    let sim = Simulator::new(SimScenario::normal(CensoringScheme::None)).unwrap();
    let spec = sim.scenario().fit_spec();
    let runs: Vec<MediationEstimates> = (0..1000)
        .map(|r| mediation::analyze(&sim.generate(4000, r), &spec, Contrast::default(), None).unwrap())
        .collect();
    let spread = sd(&runs.iter().map(|e| e.nie_product).collect::<Vec<_>>());
    let mean_se = runs.iter().map(|e| e.se_nie_product).sum::<f64>() / runs.len() as f64;
    assert!((mean_se / spread - 1.0).abs() < 0.15, "delta {mean_se} vs MC {spread}");
}

#[test]
fn bootstrap_standard_error_matches_monte_carlo_spread() {
    let sim = Simulator::new(SimScenario::normal(CensoringScheme::RightOnly { target_fraction: 0.7 })).unwrap();
    let spec = sim.scenario().fit_spec();
    let diffs: Vec<f64> = (0..1000)
        .map(|r| mediation::analyze(&sim.generate(800, r), &spec, Contrast::default(), None).unwrap().nie_difference)
        .collect();
    let spread = sd(&diffs);
    let boot = bootstrap_ses(&sim.generate(800, 0), &spec, 3, 500).se_nie_difference.unwrap();
    assert!((boot / spread - 1.0).abs() < 0.20, "bootstrap {boot} vs MC {spread}");
}

#[test]
fn null_mediator_path_gives_null_indirect_effects() {
    let mut s = SimScenario::weibull(CensoringScheme::None);
    s.mediator_exposure = 0.0;
    let sim = Simulator::new(s).unwrap();
    let spec = sim.scenario().fit_spec();
    let runs: Vec<MediationEstimates> = (0..100)
        .map(|r| mediation::analyze(&sim.generate(4000, r), &spec, Contrast::default(), None).unwrap())
        .collect();
    for pick in [|e: &MediationEstimates| e.nie_product, |e: &MediationEstimates| e.nie_difference] {
        let v: Vec<f64> = runs.iter().map(pick).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 3.0 * sd(&v) / (v.len() as f64).sqrt(), "{mean}");
    }
}

#[test]
fn fitted_models_expose_the_paths() {
    let data = dataset(9, 300, Mix::ALL);
    let spec = AftSpec::full(StandardLaw::ExtremeValueMin, TimeScale::Log);
    let e = mediation::analyze(&data, &spec, Contrast::default(), None).unwrap();
    let full = aft::fit(&spec, &data, None).unwrap();
    assert_eq!(e.beta_m, full.coefficient(MEDIATOR).unwrap());
    assert_eq!(e.nie_product, e.alpha_a * e.beta_m);
    assert_eq!(e.effects().len(), 5);
}
