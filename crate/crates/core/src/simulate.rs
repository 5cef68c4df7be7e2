//! Monte Carlo studies of the product and difference estimators: data
//! generators, censoring mechanisms, the replicate runner and tidy output.

use crate::aft::{AftSpec, TimeScale};
use crate::distributions::StandardLaw;
use crate::mediation::{Contrast, MediationFits};
use crate::rng::{self, Stream};
use crate::score_oracle::Censoring as OracleCensoring;
use crate::survdata::{DataError, Dataset, Subject, SurvivalOutcome};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

const PILOT_DRAWS: usize = 1_000_000;
const CALIBRATION_TOLERANCE: f64 = 0.02;
const TIME_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("could not calibrate censoring to {target} (reached {achieved})")]
    Calibration { target: f64, achieved: f64 },
    #[error("{failed} of {total} replicates at n = {n} did not converge (limit 1%)")]
    Nonconvergence { n: usize, failed: usize, total: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CensoringScheme {
    None,
    RightOnly {
        target_fraction: f64,
    },
    RightAndInterval {
        target_fraction: f64,
        lengths: Vec<f64>,
        probabilities: Vec<f64>,
    },
}

impl CensoringScheme {
    pub fn default_interval(target_fraction: f64) -> Self {
        CensoringScheme::RightAndInterval {
            target_fraction,
            lengths: vec![0.5, 1.0, 2.0, 4.0],
            probabilities: vec![0.25, 0.4, 0.25, 0.1],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CensoringScheme::None => "none",
            CensoringScheme::RightOnly { .. } => "right",
            CensoringScheme::RightAndInterval { .. } => "right_interval",
        }
    }

    fn target(&self) -> Option<f64> {
        match self {
            CensoringScheme::None => None,
            CensoringScheme::RightOnly { target_fraction } | CensoringScheme::RightAndInterval { target_fraction, .. } => {
                Some(*target_fraction)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    pub outcome_law: StandardLaw,
    pub time_scale: TimeScale,
    pub mediator_intercept: f64,
    pub mediator_exposure: f64,
    pub mediator_sd: f64,
    pub outcome_intercept: f64,
    pub outcome_exposure: f64,
    pub outcome_mediator: f64,
    pub scale: f64,
    pub exposure_prob: f64,
    pub censoring: CensoringScheme,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

impl SimScenario {
    /// Normal time (not log time) with unit variance; mediator effect −4.
    pub fn normal(censoring: CensoringScheme) -> Self {
        Self {
            name: format!("normal_{}", censoring.label()),
            outcome_law: StandardLaw::Normal,
            time_scale: TimeScale::Identity,
            mediator_intercept: 0.0,
            mediator_exposure: -0.5,
            mediator_sd: 1.0,
            outcome_intercept: 180.0,
            outcome_exposure: 4.0,
            outcome_mediator: -4.0,
            scale: 1.0,
            exposure_prob: 0.5,
            censoring,
            sample_sizes: vec![800, 4000],
            replicates: 1000,
            seed: 20240601,
        }
    }

    /// Weibull time: extreme-value residual on the log scale with σ = 0.25.
    pub fn weibull(censoring: CensoringScheme) -> Self {
        Self {
            name: format!("weibull_{}", censoring.label()),
            outcome_law: StandardLaw::ExtremeValueMin,
            time_scale: TimeScale::Log,
            mediator_intercept: 0.0,
            mediator_exposure: -0.3,
            mediator_sd: 1.0,
            outcome_intercept: 4.0,
            outcome_exposure: 0.5,
            outcome_mediator: -0.6,
            scale: 0.25,
            exposure_prob: 0.5,
            censoring,
            sample_sizes: vec![800, 4000],
            replicates: 1000,
            seed: 20240601,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let s: SimScenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.exposure_prob > 0.0 && self.exposure_prob < 1.0) {
            return bad("exposure_prob must lie in (0, 1)".into());
        }
        if !(self.scale > 0.0) || !(self.mediator_sd > 0.0) {
            return bad("scale and mediator_sd must be positive".into());
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 2) {
            return bad("every sample size must be at least 2".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if let Some(t) = self.censoring.target() {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("target_fraction {t} must lie in (0, 1)"));
            }
        }
        if let CensoringScheme::RightAndInterval { lengths, probabilities, .. } = &self.censoring {
            if lengths.is_empty() || lengths.len() != probabilities.len() {
                return bad("interval lengths and probabilities must be nonempty and of equal length".into());
            }
            if lengths.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                return bad("interval lengths must be finite and nonnegative".into());
            }
            if probabilities.iter().any(|&p| !(p >= 0.0)) || (probabilities.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("interval probabilities must be nonnegative and sum to 1".into());
            }
        }
        Ok(())
    }

    pub fn fit_spec(&self) -> AftSpec {
        AftSpec::full(self.outcome_law, self.time_scale)
    }

    /// True natural indirect effect for the contrast (1, 0).
    pub fn true_indirect(&self) -> f64 {
        self.mediator_exposure * self.outcome_mediator
    }

    /// True reduced-model exposure coefficient.
    pub fn true_total(&self) -> f64 {
        self.outcome_exposure + self.outcome_mediator * self.mediator_exposure
    }

    /// Standard deviation of the response `β₀ + βₐA + βₘM + σε`.
    pub fn marginal_sd(&self) -> f64 {
        let p = self.exposure_prob;
        let tau = self.true_total();
        let var = tau * tau * p * (1.0 - p)
            + (self.outcome_mediator * self.mediator_sd).powi(2)
            + self.scale * self.scale * self.outcome_law.variance();
        var.sqrt()
    }

    /// Scale of the censoring law on the response scale: the marginal
    /// outcome sd for normal data, the outcome σ for extreme-value data.
    pub fn censoring_scale(&self) -> f64 {
        match self.outcome_law {
            StandardLaw::Normal => self.marginal_sd(),
            StandardLaw::ExtremeValueMin => self.scale,
        }
    }
}

/// Latent draws for one subject.
#[derive(Debug, Clone, Copy)]
struct Latent {
    exposure: f64,
    mediator: f64,
    response: f64,
}

fn draw_latent<R: Rng>(s: &SimScenario, rng: &mut R) -> Latent {
    let exposure = if rng.random::<f64>() < s.exposure_prob { 1.0 } else { 0.0 };
    let xi: f64 = rng.sample(StandardNormal);
    let mediator = s.mediator_intercept + s.mediator_exposure * exposure + s.mediator_sd * xi;
    let eps = s.outcome_law.draw(rng);
    let response = s.outcome_intercept + s.outcome_exposure * exposure + s.outcome_mediator * mediator + s.scale * eps;
    Latent {
        exposure,
        mediator,
        response,
    }
}

fn to_time(scale: TimeScale, y: f64) -> f64 {
    match scale {
        TimeScale::Log => y.exp(),
        TimeScale::Identity => y,
    }
    .max(TIME_FLOOR)
}

/// Right censoring: the time is observed when it does not exceed the
/// censoring time.
pub fn apply_right_censoring(times: &[f64], censor_times: &[f64]) -> Vec<SurvivalOutcome> {
    times
        .iter()
        .zip(censor_times)
        .map(|(&t, &c)| {
            if t <= c {
                SurvivalOutcome::exact(t).expect("positive time")
            } else {
                SurvivalOutcome::right_censored(c.max(TIME_FLOOR)).expect("positive time")
            }
        })
        .collect()
}

/// Replaces each exact time `t` by `(t − U·L, t + (1 − U)·L)` with `L` drawn
/// from the categorical length law; `L = 0` leaves the time exact.
///
/// When `follow_up` is given, the upper bound is capped at the subject's end
/// of follow-up. An event seen before censoring cannot be detected at a visit
/// after it, and without the cap the interval likelihood no longer matches
/// how the data arose.
pub fn apply_interval_censoring<R: Rng>(
    outcomes: &mut [SurvivalOutcome],
    follow_up: Option<&[f64]>,
    lengths: &[f64],
    probabilities: &[f64],
    rng: &mut R,
) {
    let pick = WeightedIndex::new(probabilities).expect("validated probabilities");
    for (i, o) in outcomes.iter_mut().enumerate() {
        if o.is_right_censored() {
            continue;
        }
        let t = o.observed_time();
        let len = lengths[pick.sample(rng)];
        let u: f64 = rng.random();
        if len == 0.0 {
            continue;
        }
        let lower = (t - u * len).max(TIME_FLOOR);
        let mut upper = t + (1.0 - u) * len;
        if let Some(c) = follow_up {
            upper = upper.min(c[i]);
        }
        if lower < t && t < upper {
            *o = SurvivalOutcome::interval(lower, upper).expect("ordered bounds");
        }
    }
}

/// A scenario with its censoring law calibrated once.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: SimScenario,
    censor_location: Option<f64>,
    pilot_fraction: Option<f64>,
}

impl Simulator {
    pub fn new(scenario: SimScenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let (censor_location, pilot_fraction) = match scenario.censoring.target() {
            None => (None, None),
            Some(target) => {
                let (loc, frac) = calibrate(&scenario, target)?;
                (Some(loc), Some(frac))
            }
        };
        Ok(Self {
            scenario,
            censor_location,
            pilot_fraction,
        })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    /// Location of the censoring law on the response scale.
    pub fn censor_location(&self) -> Option<f64> {
        self.censor_location
    }

    pub fn pilot_fraction(&self) -> Option<f64> {
        self.pilot_fraction
    }

    /// The censoring law in the form the score oracle takes.
    pub fn oracle_censoring(&self) -> OracleCensoring {
        match self.censor_location {
            None => OracleCensoring::None,
            Some(location) => OracleCensoring::Random {
                law: self.scenario.outcome_law,
                location,
                scale: self.scenario.censoring_scale(),
            },
        }
    }

    /// Dataset for replicate `index` at sample size `n`.
    pub fn generate(&self, n: usize, index: u64) -> Dataset {
        let s = &self.scenario;
        let mut rng = rng::stream(s.seed, Stream::Simulation, ((n as u64) << 32) | index);
        let latent: Vec<Latent> = (0..n).map(|_| draw_latent(s, &mut rng)).collect();
        let times: Vec<f64> = latent.iter().map(|l| to_time(s.time_scale, l.response)).collect();
        let censor: Option<Vec<f64>> = self.censor_location.map(|loc| {
            let kappa = s.censoring_scale();
            (0..n)
                .map(|_| to_time(s.time_scale, loc + kappa * s.outcome_law.draw(&mut rng)))
                .collect()
        });
        let mut outcomes = match &censor {
            None => times.iter().map(|&t| SurvivalOutcome::exact(t).expect("positive time")).collect(),
            Some(c) => apply_right_censoring(&times, c),
        };
        if let CensoringScheme::RightAndInterval { lengths, probabilities, .. } = &s.censoring {
            apply_interval_censoring(&mut outcomes, censor.as_deref(), lengths, probabilities, &mut rng);
        }
        let subjects = latent
            .iter()
            .zip(outcomes)
            .map(|(l, outcome)| Subject {
                outcome,
                exposure: l.exposure,
                mediator: l.mediator,
                covariates: Vec::new(),
            })
            .collect();
        Dataset::new(subjects, Vec::new()).expect("generated data are valid")
    }
}

/// Bisection on the censoring location against a fixed pilot sample.
fn calibrate(s: &SimScenario, target: f64) -> Result<(f64, f64), SimError> {
    let mut rng = rng::stream(s.seed, Stream::Calibration, 0);
    let kappa = s.censoring_scale();
    let pilot: Vec<(f64, f64)> = (0..PILOT_DRAWS)
        .map(|_| {
            let y = draw_latent(s, &mut rng).response;
            (y, kappa * s.outcome_law.draw(&mut rng))
        })
        .collect();
    let fraction = |loc: f64| pilot.iter().filter(|(y, e)| *y > loc + e).count() as f64 / PILOT_DRAWS as f64;
    let spread = s.marginal_sd() + kappa;
    let (mut lo, mut hi) = (s.outcome_intercept - 20.0 * spread, s.outcome_intercept + 20.0 * spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let loc = 0.5 * (lo + hi);
    let achieved = fraction(loc);
    if (achieved - target).abs() > CALIBRATION_TOLERANCE {
        return Err(SimError::Calibration { target, achieved });
    }
    Ok((loc, achieved))
}

/// One replicate's estimates for the contrast (1, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: u64,
    pub converged: bool,
    pub nde: f64,
    pub nie_product: f64,
    pub nie_difference: f64,
    pub total_reduced: f64,
    pub right_censored_fraction: f64,
    pub interval_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: String,
    pub n: usize,
    pub true_indirect: f64,
    pub true_total: f64,
    pub mean_nie_product: f64,
    pub mean_nie_difference: f64,
    pub abs_prop_difference: f64,
    pub prop_bias_product: f64,
    pub prop_bias_difference: f64,
    pub var_nie_product: f64,
    pub var_nie_difference: f64,
    pub mean_total_reduced: f64,
    pub sd_total_reduced: f64,
    /// Largest per-replicate `|nie_product − nie_difference|`.
    pub max_abs_paired_difference: f64,
    pub mean_right_censored: f64,
    pub mean_interval: f64,
    pub replicate_count: usize,
    pub nonconverged_count: usize,
}

impl SimSummary {
    /// (metric, value) pairs in output order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_nie_product", self.mean_nie_product),
            ("mean_nie_difference", self.mean_nie_difference),
            ("abs_prop_difference", self.abs_prop_difference),
            ("prop_bias_product", self.prop_bias_product),
            ("prop_bias_difference", self.prop_bias_difference),
            ("var_nie_product", self.var_nie_product),
            ("var_nie_difference", self.var_nie_difference),
            ("mean_total_reduced", self.mean_total_reduced),
            ("sd_total_reduced", self.sd_total_reduced),
            ("max_abs_paired_difference", self.max_abs_paired_difference),
            ("mean_right_censored", self.mean_right_censored),
            ("mean_interval", self.mean_interval),
            ("replicate_count", self.replicate_count as f64),
            ("nonconverged_count", self.nonconverged_count as f64),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub summaries: Vec<SimSummary>,
    pub replicates: Vec<ReplicateRecord>,
    pub censor_location: Option<f64>,
    pub pilot_fraction: Option<f64>,
}

impl SimRun {
    pub fn summary(&self, n: usize) -> Option<&SimSummary> {
        self.summaries.iter().find(|s| s.n == n)
    }
}

fn replicate(sim: &Simulator, n: usize, index: u64) -> ReplicateRecord {
    let data = sim.generate(n, index);
    let summary = data.summarize();
    let spec = sim.scenario.fit_spec();
    let base = ReplicateRecord {
        n,
        replicate: index,
        converged: false,
        nde: f64::NAN,
        nie_product: f64::NAN,
        nie_difference: f64::NAN,
        total_reduced: f64::NAN,
        right_censored_fraction: summary.right_fraction(),
        interval_fraction: summary.interval_fraction(),
    };
    let Ok(fits) = MediationFits::fit(&data, &spec, None) else {
        return base;
    };
    if !fits.converged() {
        return base;
    }
    match fits.point_estimates(Contrast::default()) {
        Ok([nde, nie_p, nie_d, _, total_d]) => ReplicateRecord {
            converged: true,
            nde,
            nie_product: nie_p,
            nie_difference: nie_d,
            total_reduced: total_d,
            ..base
        },
        Err(_) => base,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Summarizes an ordered replicate log for one sample size.
pub fn summarize(scenario: &SimScenario, n: usize, records: &[ReplicateRecord]) -> SimSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.converged).collect();
    let col = |f: fn(&ReplicateRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let nie_p = col(|r| r.nie_product);
    let nie_d = col(|r| r.nie_difference);
    let tot = col(|r| r.total_reduced);
    let ie = scenario.true_indirect();
    let (mp, md) = (mean(&nie_p), mean(&nie_d));
    let all = |f: fn(&ReplicateRecord) -> f64| mean(&records.iter().map(f).collect::<Vec<_>>());
    SimSummary {
        scenario: scenario.name.clone(),
        n,
        true_indirect: ie,
        true_total: scenario.true_total(),
        mean_nie_product: mp,
        mean_nie_difference: md,
        abs_prop_difference: (mp - md).abs() / mp.abs(),
        prop_bias_product: (mp - ie).abs() / ie.abs(),
        prop_bias_difference: (md - ie).abs() / ie.abs(),
        var_nie_product: variance(&nie_p),
        var_nie_difference: variance(&nie_d),
        mean_total_reduced: mean(&tot),
        sd_total_reduced: variance(&tot).sqrt(),
        max_abs_paired_difference: ok
            .iter()
            .map(|r| (r.nie_product - r.nie_difference).abs())
            .fold(0.0, f64::max),
        mean_right_censored: all(|r| r.right_censored_fraction),
        mean_interval: all(|r| r.interval_fraction),
        replicate_count: ok.len(),
        nonconverged_count: records.len() - ok.len(),
    }
}

/// Runs every sample size of the scenario. Replicates are evaluated in
/// parallel and reduced in index order.
pub fn run(scenario: &SimScenario) -> Result<SimRun, SimError> {
    let sim = Simulator::new(scenario.clone())?;
    run_with(&sim)
}

pub fn run_with(sim: &Simulator) -> Result<SimRun, SimError> {
    let s = sim.scenario();
    let mut summaries = Vec::new();
    let mut log = Vec::new();
    for &n in &s.sample_sizes {
        let records: Vec<ReplicateRecord> = (0..s.replicates as u64)
            .into_par_iter()
            .map(|i| replicate(sim, n, i))
            .collect();
        let failed = records.iter().filter(|r| !r.converged).count();
        if failed * 100 > records.len() || failed == records.len() {
            return Err(SimError::Nonconvergence {
                n,
                failed,
                total: records.len(),
            });
        }
        summaries.push(summarize(s, n, &records));
        log.extend(records);
    }
    Ok(SimRun {
        summaries,
        replicates: log,
        censor_location: sim.censor_location(),
        pilot_fraction: sim.pilot_fraction(),
    })
}

/// Tidy `scenario,n,metric,value` rows.
pub fn write_figure_data<W: Write>(summaries: &[SimSummary], out: &mut W) -> Result<(), SimError> {
    writeln!(out, "scenario,n,metric,value")?;
    for s in summaries {
        for (metric, value) in s.metrics() {
            writeln!(out, "{},{},{},{}", s.scenario, s.n, metric, value)?;
        }
    }
    Ok(())
}

pub fn emit_figure_data(summaries: &[SimSummary], path: &Path) -> Result<(), SimError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_figure_data(summaries, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn write_replicates<W: Write>(records: &[ReplicateRecord], out: &mut W) -> Result<(), SimError> {
    writeln!(
        out,
        "n,replicate,converged,nde,nie_product,nie_difference,total_reduced,right_censored_fraction,interval_fraction"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.replicate,
            r.converged,
            r.nde,
            r.nie_product,
            r.nie_difference,
            r.total_reduced,
            r.right_censored_fraction,
            r.interval_fraction
        )?;
    }
    Ok(())
}
