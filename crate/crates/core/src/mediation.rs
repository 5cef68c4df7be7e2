//! Natural direct and indirect effects from a linear mediator model and two
//! AFT outcome models, with delta-method and bootstrap uncertainty.
//!
//! The effects are causal only under the usual no-unmeasured-confounding
//! conditions for exposure–outcome, exposure–mediator and mediator–outcome
//! relations, and with no mediator–outcome confounder affected by exposure.
//! Nothing here checks those assumptions.

use crate::aft::{self, AftError, AftFit, AftSpec, LinearFit, EXPOSURE, MEDIATOR};
use crate::distributions::StandardLaw;
use crate::rng::{self, Stream};
use crate::special::norm_quantile;
use crate::survdata::Dataset;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediationError {
    #[error(transparent)]
    Fit(#[from] AftError),
    #[error("{model} model did not converge")]
    NotConverged { model: &'static str },
    #[error("covariance of the {0} model is unavailable")]
    CovarianceUnavailable(&'static str),
    #[error("{dropped} of {requested} bootstrap replicates failed, more than the 5% allowed")]
    ExcessiveBootstrapFailures { dropped: usize, requested: usize },
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// Exposure levels `(a, a*)` being compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub a: f64,
    pub a_star: f64,
}

impl Contrast {
    pub fn new(a: f64, a_star: f64) -> Self {
        Self { a, a_star }
    }

    pub fn delta(&self) -> f64 {
        self.a - self.a_star
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.a_star, self.a)
    }
}

impl Default for Contrast {
    fn default() -> Self {
        Self::new(1.0, 0.0)
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.a, self.a_star)
    }
}

impl FromStr for Contrast {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(format!("expected `a,a*`, got `{s}`"));
        }
        let parse = |p: &str| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{p}` is not a finite number"))
        };
        Ok(Self::new(parse(parts[0])?, parse(parts[1])?))
    }
}

fn coef(fit: &AftFit, name: &str) -> Result<f64, MediationError> {
    fit.coefficient(name).ok_or(MediationError::Fit(AftError::MediatorAbsent))
}

pub fn product_nie(mediator_fit: &LinearFit, full_fit: &AftFit, contrast: Contrast) -> Result<f64, MediationError> {
    let alpha_a = mediator_fit
        .coefficient(EXPOSURE)
        .ok_or(AftError::DesignMismatch)?;
    let beta_m = coef(full_fit, MEDIATOR)?;
    Ok(alpha_a * beta_m * contrast.delta())
}

fn check_nested(reduced: &AftFit, full: &AftFit) -> Result<(), MediationError> {
    let stripped: Vec<&String> = full.names.iter().filter(|n| *n != MEDIATOR).collect();
    let same = reduced.index_of(MEDIATOR).is_none()
        && full.index_of(MEDIATOR).is_some()
        && stripped.len() == reduced.names.len()
        && stripped.iter().zip(&reduced.names).all(|(a, b)| *a == b);
    if same {
        Ok(())
    } else {
        Err(AftError::DesignMismatch.into())
    }
}

pub fn difference_nie(reduced_fit: &AftFit, full_fit: &AftFit, contrast: Contrast) -> Result<f64, MediationError> {
    check_nested(reduced_fit, full_fit)?;
    let tau_a = coef(reduced_fit, EXPOSURE)?;
    let beta_a = coef(full_fit, EXPOSURE)?;
    Ok((tau_a - beta_a) * contrast.delta())
}

pub fn nde(full_fit: &AftFit, contrast: Contrast) -> f64 {
    full_fit.coefficient(EXPOSURE).unwrap_or(0.0) * contrast.delta()
}

/// `sqrt(αₐ² var(β̂ₘ) + βₘ² var(α̂ₐ))`. The two models are fitted separately,
/// so no cross-covariance term is included.
pub fn delta_se_product(mediator_fit: &LinearFit, full_fit: &AftFit) -> Result<f64, MediationError> {
    let alpha_a = mediator_fit.coefficient(EXPOSURE).ok_or(AftError::DesignMismatch)?;
    let var_alpha = mediator_fit.variance(EXPOSURE).ok_or(AftError::DesignMismatch)?;
    let beta_m = coef(full_fit, MEDIATOR)?;
    let var_beta = full_fit
        .variance(MEDIATOR)
        .ok_or(MediationError::CovarianceUnavailable("full"))?;
    Ok(delta_se(alpha_a, var_beta, beta_m, var_alpha))
}

/// The product-rule delta formula on raw numbers.
pub fn delta_se(alpha_a: f64, var_beta_m: f64, beta_m: f64, var_alpha_a: f64) -> f64 {
    (alpha_a * alpha_a * var_beta_m + beta_m * beta_m * var_alpha_a).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            seed: 1,
            level: 0.95,
        }
    }
}

/// Percentile summary of one bootstrapped statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub intervals: Vec<BootstrapInterval>,
    pub used: usize,
    pub dropped: usize,
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Nonparametric bootstrap over `n` units. `statistic` receives resampled
/// indices and returns a fixed-length vector, or `None` when the replicate
/// fails. Each replicate draws from its own stream, and results are reduced
/// in replicate order, so the output does not depend on the thread count.
pub fn bootstrap_statistics<F>(n: usize, config: &BootstrapConfig, statistic: F) -> Result<BootstrapResult, MediationError>
where
    F: Fn(&[usize]) -> Option<Vec<f64>> + Sync,
{
    if config.replicates < 2 {
        return Err(MediationError::TooFewReplicates(config.replicates));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(MediationError::InvalidLevel(config.level));
    }
    let draws: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(config.seed, Stream::Bootstrap, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            statistic(&idx)
        })
        .collect();
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let dropped = config.replicates - kept.len();
    if dropped * 20 > config.replicates || kept.len() < 2 {
        return Err(MediationError::ExcessiveBootstrapFailures {
            dropped,
            requested: config.replicates,
        });
    }
    let width = kept[0].len();
    let tail = 0.5 * (1.0 - config.level);
    let intervals = (0..width)
        .map(|j| {
            let mut col: Vec<f64> = kept.iter().map(|row| row[j]).collect();
            let se = sample_sd(&col);
            col.sort_by(f64::total_cmp);
            BootstrapInterval {
                se,
                lower: quantile_sorted(&col, tail),
                upper: quantile_sorted(&col, 1.0 - tail),
            }
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        used: kept.len(),
        dropped,
    })
}

/// One effect with its uncertainty summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub se: Option<f64>,
    /// `estimate ± z·se` when an SE is available.
    pub normal_ci: Option<(f64, f64)>,
    pub bootstrap: Option<BootstrapInterval>,
    /// Time ratio `exp(estimate)` and exponentiated normal CI.
    pub time_ratio: f64,
    pub time_ratio_ci: Option<(f64, f64)>,
}

impl Effect {
    fn new(estimate: f64, se: Option<f64>, z: f64, bootstrap: Option<BootstrapInterval>) -> Self {
        let normal_ci = se.map(|s| (estimate - z * s, estimate + z * s));
        Self {
            estimate,
            se,
            normal_ci,
            bootstrap,
            time_ratio: estimate.exp(),
            time_ratio_ci: normal_ci.map(|(l, u)| (l.exp(), u.exp())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationEstimates {
    pub contrast: Contrast,
    pub law: StandardLaw,
    pub nde: f64,
    pub nie_product: f64,
    pub nie_difference: f64,
    pub total_product: f64,
    pub total_difference: f64,
    pub se_nde: f64,
    pub se_nie_product: f64,
    pub se_nie_difference: Option<f64>,
    pub se_total_product: Option<f64>,
    pub se_total_difference: f64,
    pub ci_level: f64,
    /// The reduced-model total effect is not consistent under censoring when
    /// its residual law is not collapsible (anything but normal).
    pub total_difference_flagged: bool,
    pub alpha_a: f64,
    pub beta_a: f64,
    pub beta_m: f64,
    pub tau_a: f64,
    pub bootstrap_used: Option<usize>,
    pub bootstrap_dropped: Option<usize>,
    pub bootstrap: Option<Vec<BootstrapInterval>>,
}

impl MediationEstimates {
    /// Rows in the order Direct, Indirect (difference), Indirect (product),
    /// Total (difference), Total (product).
    pub fn effects(&self) -> [(&'static str, Effect); 5] {
        let z = norm_quantile(0.5 + 0.5 * self.ci_level);
        let b = |i: usize| self.bootstrap.as_ref().map(|v| v[i]);
        [
            ("Direct", Effect::new(self.nde, Some(self.se_nde), z, b(0))),
            ("Indirect (difference)", Effect::new(self.nie_difference, self.se_nie_difference, z, b(2))),
            ("Indirect (product)", Effect::new(self.nie_product, Some(self.se_nie_product), z, b(1))),
            ("Total (difference)", Effect::new(self.total_difference, Some(self.se_total_difference), z, b(4))),
            ("Total (product)", Effect::new(self.total_product, self.se_total_product, z, b(3))),
        ]
    }
}

/// The three fitted models behind one analysis.
#[derive(Debug, Clone)]
pub struct MediationFits {
    pub full: AftFit,
    pub reduced: AftFit,
    pub mediator: LinearFit,
}

impl MediationFits {
    pub fn fit(dataset: &Dataset, full_spec: &AftSpec, init: Option<&MediationFits>) -> Result<Self, MediationError> {
        let reduced_spec = AftSpec::reduced(full_spec.law(), full_spec.time_scale());
        let full = aft::fit(full_spec, dataset, init.map(|m| m.full.params()).as_ref())?;
        let reduced = aft::fit(&reduced_spec, dataset, init.map(|m| m.reduced.params()).as_ref())?;
        let mediator = aft::fit_linear(dataset)?;
        Ok(Self { full, reduced, mediator })
    }

    pub fn converged(&self) -> bool {
        self.full.converged && self.reduced.converged
    }

    /// (nde, nie_product, nie_difference, total_product, total_difference)
    pub fn point_estimates(&self, contrast: Contrast) -> Result<[f64; 5], MediationError> {
        check_nested(&self.reduced, &self.full)?;
        let d = contrast.delta();
        let nde = nde(&self.full, contrast);
        let nie_p = product_nie(&self.mediator, &self.full, contrast)?;
        let total_d = coef(&self.reduced, EXPOSURE)? * d;
        Ok([nde, nie_p, total_d - nde, nde + nie_p, total_d])
    }
}

/// Fits the full, reduced and mediator models and assembles all effects.
/// With a bootstrap config, every replicate refits all three models.
pub fn analyze(
    dataset: &Dataset,
    spec: &AftSpec,
    contrast: Contrast,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<MediationEstimates, MediationError> {
    let fits = MediationFits::fit(dataset, spec, None)?;
    if !fits.full.converged {
        return Err(MediationError::NotConverged { model: "full" });
    }
    if !fits.reduced.converged {
        return Err(MediationError::NotConverged { model: "reduced" });
    }
    let [nde, nie_product, nie_difference, total_product, total_difference] = fits.point_estimates(contrast)?;
    let d = contrast.delta().abs();
    let var_beta_a = fits
        .full
        .variance(EXPOSURE)
        .ok_or(MediationError::CovarianceUnavailable("full"))?;
    let var_tau_a = fits
        .reduced
        .variance(EXPOSURE)
        .ok_or(MediationError::CovarianceUnavailable("reduced"))?;
    let se_nie_product = delta_se_product(&fits.mediator, &fits.full)? * d;

    let boot = match bootstrap {
        Some(cfg) => Some(bootstrap_statistics(dataset.len(), cfg, |idx| {
            let resampled = dataset.resample(idx)?;
            let f = MediationFits::fit(&resampled, spec, Some(&fits)).ok()?;
            if !f.converged() {
                return None;
            }
            f.point_estimates(contrast).ok().map(|v| v.to_vec())
        })?),
        None => None,
    };

    Ok(MediationEstimates {
        contrast,
        law: spec.law(),
        nde,
        nie_product,
        nie_difference,
        total_product,
        total_difference,
        se_nde: var_beta_a.max(0.0).sqrt() * d,
        se_nie_product,
        se_nie_difference: boot.as_ref().map(|b| b.intervals[2].se),
        se_total_product: boot.as_ref().map(|b| b.intervals[3].se),
        se_total_difference: var_tau_a.max(0.0).sqrt() * d,
        ci_level: bootstrap.map_or(0.95, |c| c.level),
        total_difference_flagged: spec.law() != StandardLaw::Normal,
        alpha_a: fits.mediator.coefficient(EXPOSURE).unwrap_or(f64::NAN),
        beta_a: fits.full.coefficient(EXPOSURE).unwrap_or(f64::NAN),
        beta_m: fits.full.coefficient(MEDIATOR).unwrap_or(f64::NAN),
        tau_a: fits.reduced.coefficient(EXPOSURE).unwrap_or(f64::NAN),
        bootstrap_used: boot.as_ref().map(|b| b.used),
        bootstrap_dropped: boot.as_ref().map(|b| b.dropped),
        bootstrap: boot.map(|b| b.intervals),
    })
}
