#![allow(dead_code)]

use aftmed::survdata::{Dataset, Subject, SurvivalOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which observation types a generated dataset mixes.
#[derive(Debug, Clone, Copy)]
pub struct Mix {
    pub right: bool,
    pub interval: bool,
    pub truncated: bool,
    pub covariates: usize,
}

impl Mix {
    pub const EXACT: Mix = Mix {
        right: false,
        interval: false,
        truncated: false,
        covariates: 0,
    };
    pub const ALL: Mix = Mix {
        right: true,
        interval: true,
        truncated: true,
        covariates: 1,
    };
}

/// Log-scale data with a modest signal, mixing observation types by row.
pub fn dataset(seed: u64, n: usize, mix: Mix) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let a = f64::from(rng.random_bool(0.5));
            let m = -0.4 * a + rng.random_range(-1.0..1.0);
            let z: Vec<f64> = (0..mix.covariates).map(|_| rng.random_range(0.0..2.0)).collect();
            let zsum: f64 = z.iter().sum();
            let y = 1.0 + 0.5 * a - 0.6 * m + 0.2 * zsum + 0.4 * rng.random_range(-1.5..1.5);
            let t = y.exp();
            let outcome = match i % 4 {
                1 if mix.right => SurvivalOutcome::right_censored(t * 0.8),
                2 if mix.interval => SurvivalOutcome::interval(t * 0.7, t * 1.4),
                _ => SurvivalOutcome::exact(t),
            }
            .unwrap();
            let outcome = if mix.truncated && i % 3 == 0 {
                outcome.truncated_at(0.25 * outcome.observed_time()).unwrap()
            } else {
                outcome
            };
            Subject {
                outcome,
                exposure: a,
                mediator: m,
                covariates: z,
            }
        })
        .collect();
    let names = (0..mix.covariates).map(|j| format!("z{j}")).collect();
    Dataset::new(subjects, names).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
