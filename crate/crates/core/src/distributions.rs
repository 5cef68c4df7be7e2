//! Standardized residual laws for AFT likelihoods.
//!
//! `StandardNormal` and `ExtremeValueMin` are evaluated in closed form. The
//! `Convolved` law is the distribution of `σ·ε + β_m·ξ` with `ε` drawn from a
//! standard component law and `ξ ~ N(0, sd²)`; it is the residual law that a
//! mediator-free (reduced) AFT model actually faces once the mediator has been
//! marginalized out, and it is evaluated by adaptive quadrature over `ε`.

use crate::quadrature::{integrate_pieces, QuadratureError, Tolerance};
use crate::special::{
    norm_cdf, norm_hazard, norm_log_cdf, norm_log_pdf, norm_log_sf, norm_pdf, norm_quantile,
    norm_sf, EULER_GAMMA,
};
use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("degenerate convolution: mediator coefficient is zero, use the outcome component law directly")]
    DegenerateConvolution,
    #[error("invalid law parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("unknown error law `{0}`")]
    UnknownLaw(String),
}

/// The closed-form laws; also the component laws a convolution can be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardLaw {
    Normal,
    ExtremeValueMin,
}

impl StandardLaw {
    pub fn log_density(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_log_pdf(x),
            StandardLaw::ExtremeValueMin => x - x.exp(),
        }
    }

    pub fn density(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_pdf(x),
            StandardLaw::ExtremeValueMin => (x - x.exp()).exp(),
        }
    }

    /// `f'(x) / f(x)`
    pub fn score(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => -x,
            StandardLaw::ExtremeValueMin => 1.0 - x.exp(),
        }
    }

    pub fn density_derivative(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => -x * norm_pdf(x),
            StandardLaw::ExtremeValueMin => (1.0 - x.exp()) * (x - x.exp()).exp(),
        }
    }

    pub fn survival(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_sf(x),
            StandardLaw::ExtremeValueMin => (-x.exp()).exp(),
        }
    }

    pub fn log_survival(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_log_sf(x),
            StandardLaw::ExtremeValueMin => -x.exp(),
        }
    }

    pub fn log_cdf(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_log_cdf(x),
            StandardLaw::ExtremeValueMin => (-(-x.exp()).exp_m1()).ln(),
        }
    }

    /// `f(x) / S(x)`
    pub fn hazard(self, x: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_hazard(x),
            StandardLaw::ExtremeValueMin => x.exp(),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            StandardLaw::Normal => norm_quantile(p),
            StandardLaw::ExtremeValueMin => (-(-p).ln_1p()).ln(),
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            StandardLaw::Normal => 0.0,
            StandardLaw::ExtremeValueMin => -EULER_GAMMA,
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            StandardLaw::Normal => 1.0,
            StandardLaw::ExtremeValueMin => PI * PI / 6.0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            StandardLaw::Normal => rng.sample(StandardNormal),
            StandardLaw::ExtremeValueMin => {
                let u: f64 = rng.sample(Open01);
                (-(-u).ln_1p()).ln()
            }
        }
    }
}

/// Law of `outcome_scale·ε + mediator_coef·ξ`, `ε ~ outcome`, `ξ ~ N(0, mediator_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convolution {
    outcome: StandardLaw,
    outcome_scale: f64,
    mediator_coef: f64,
    mediator_sd: f64,
}

impl Convolution {
    pub fn outcome(&self) -> StandardLaw {
        self.outcome
    }
    pub fn outcome_scale(&self) -> f64 {
        self.outcome_scale
    }
    pub fn mediator_coef(&self) -> f64 {
        self.mediator_coef
    }
    pub fn mediator_sd(&self) -> f64 {
        self.mediator_sd
    }

    /// Standard deviation of the normal summand `β_m·ξ`.
    fn kernel_sd(&self) -> f64 {
        self.mediator_coef.abs() * self.mediator_sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorLaw {
    StandardNormal,
    ExtremeValueMin,
    Convolved(Convolution),
}

impl fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorLaw::StandardNormal => write!(f, "normal"),
            ErrorLaw::ExtremeValueMin => write!(f, "extreme_value_min"),
            ErrorLaw::Convolved(c) => write!(
                f,
                "convolved({:?}, scale={}, coef={}, sd={})",
                c.outcome, c.outcome_scale, c.mediator_coef, c.mediator_sd
            ),
        }
    }
}

impl From<StandardLaw> for ErrorLaw {
    fn from(law: StandardLaw) -> Self {
        match law {
            StandardLaw::Normal => ErrorLaw::StandardNormal,
            StandardLaw::ExtremeValueMin => ErrorLaw::ExtremeValueMin,
        }
    }
}

/// Integrand family for the convolution quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Kernel {
    Density,
    Survival,
    Cdf,
}

const CONV_TOL: Tolerance = Tolerance {
    abs: 1e-16,
    rel: 1e-12,
    max_subdivisions: 400,
};

impl ErrorLaw {
    pub fn convolved(
        outcome: StandardLaw,
        outcome_scale: f64,
        mediator_coef: f64,
        mediator_sd: f64,
    ) -> Result<Self, DistributionError> {
        if mediator_coef == 0.0 {
            return Err(DistributionError::DegenerateConvolution);
        }
        if !mediator_coef.is_finite() {
            return Err(DistributionError::InvalidParameter {
                name: "mediator_coef",
                value: mediator_coef,
            });
        }
        if !(outcome_scale > 0.0 && outcome_scale.is_finite()) {
            return Err(DistributionError::InvalidParameter {
                name: "outcome_scale",
                value: outcome_scale,
            });
        }
        if !(mediator_sd > 0.0 && mediator_sd.is_finite()) {
            return Err(DistributionError::InvalidParameter {
                name: "mediator_sd",
                value: mediator_sd,
            });
        }
        Ok(ErrorLaw::Convolved(Convolution {
            outcome,
            outcome_scale,
            mediator_coef,
            mediator_sd,
        }))
    }

    /// Parses the CLI law names.
    pub fn from_name(name: &str) -> Result<Self, DistributionError> {
        match name.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" | "lognormal" => Ok(ErrorLaw::StandardNormal),
            "weibull" | "extreme" | "extreme_value" | "extreme_value_min" | "gumbel" => {
                Ok(ErrorLaw::ExtremeValueMin)
            }
            other => Err(DistributionError::UnknownLaw(other.to_string())),
        }
    }

    /// The closed-form law, if this is not a convolution.
    pub fn standard(&self) -> Option<StandardLaw> {
        match self {
            ErrorLaw::StandardNormal => Some(StandardLaw::Normal),
            ErrorLaw::ExtremeValueMin => Some(StandardLaw::ExtremeValueMin),
            ErrorLaw::Convolved(_) => None,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self.standard() {
            Some(law) => law.density(x),
            None => self.log_density(x).exp(),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => convolved_log(c, Kernel::Density, x).max(FLOOR_LN),
            _ => self.standard().unwrap().log_density(x),
        }
    }

    pub fn density_derivative(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => convolved_derivative(c, x),
            _ => self.standard().unwrap().density_derivative(x),
        }
    }

    /// `f'(x) / f(x)`.
    pub fn score(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => {
                let d = convolved_derivative(c, x);
                d / self.density(x).max(DENSITY_FLOOR)
            }
            _ => self.standard().unwrap().score(x),
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(_) => self.log_survival(x).exp(),
            _ => self.standard().unwrap().survival(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    pub fn log_survival(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => convolved_log(c, Kernel::Survival, x),
            _ => self.standard().unwrap().log_survival(x),
        }
    }

    pub fn log_cdf(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => convolved_log(c, Kernel::Cdf, x),
            _ => self.standard().unwrap().log_cdf(x),
        }
    }

    pub fn hazard(&self, x: f64) -> f64 {
        match self {
            ErrorLaw::Convolved(_) => (self.log_density(x) - self.log_survival(x)).exp(),
            _ => self.standard().unwrap().hazard(x),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        match self {
            ErrorLaw::Convolved(c) => {
                let centre = c.outcome_scale * c.outcome.mean();
                let spread = self.variance().sqrt();
                let (mut lo, mut hi) = (centre - spread, centre + spread);
                while self.log_cdf(lo) > p.ln() {
                    lo -= 2.0 * (hi - lo);
                }
                while self.log_survival(hi) > (-p).ln_1p() {
                    hi += 2.0 * (hi - lo);
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let below = if p < 0.5 {
                        self.log_cdf(mid) < p.ln()
                    } else {
                        self.log_survival(mid) > (-p).ln_1p()
                    };
                    if below {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            _ => self.standard().unwrap().quantile(p),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => c.outcome_scale * c.outcome.mean(),
            _ => self.standard().unwrap().mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => {
                c.outcome_scale.powi(2) * c.outcome.variance() + c.kernel_sd().powi(2)
            }
            _ => self.standard().unwrap().variance(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::Convolved(c) => {
                let e = c.outcome.draw(rng);
                let xi: f64 = rng.sample(StandardNormal);
                c.outcome_scale * e + c.mediator_coef * c.mediator_sd * xi
            }
            _ => self.standard().unwrap().draw(rng),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

impl Distribution<f64> for ErrorLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.draw(rng)
    }
}

pub(crate) const DENSITY_FLOOR: f64 = 1e-300;
const FLOOR_LN: f64 = -690.775_527_898_213_7;

/// Log of the convolution integrand `g(e)·K(z(e))`, `z = (x − σe)/b`.
fn log_integrand(c: &Convolution, kernel: Kernel, x: f64, e: f64) -> f64 {
    let b = c.kernel_sd();
    let z = (x - c.outcome_scale * e) / b;
    let lk = match kernel {
        Kernel::Density => norm_log_pdf(z) - b.ln(),
        Kernel::Survival => norm_log_sf(z),
        Kernel::Cdf => norm_log_cdf(z),
    };
    c.outcome.log_density(e) + lk
}

/// Derivative in `e` of [`log_integrand`]; strictly decreasing because both
/// factors are log-concave.
fn log_integrand_slope(c: &Convolution, kernel: Kernel, x: f64, e: f64) -> f64 {
    let b = c.kernel_sd();
    let s = c.outcome_scale;
    let z = (x - s * e) / b;
    let dk = match kernel {
        Kernel::Density => -z,
        Kernel::Survival => -norm_hazard(z),
        Kernel::Cdf => norm_hazard(-z),
    };
    c.outcome.score(e) - (s / b) * dk
}

struct Partition {
    peak: f64,
    points: Vec<f64>,
}

/// Locates the mode of the log-concave integrand and lays out breakpoints
/// that widen geometrically until the integrand has fallen by `e^-48`.
fn partition(c: &Convolution, kernel: Kernel, x: f64) -> Partition {
    let slope = |e: f64| log_integrand_slope(c, kernel, x, e);
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut step = 2.0;
    while slope(lo) <= 0.0 && step < 1e12 {
        hi = lo;
        lo -= step;
        step *= 2.0;
    }
    let mut step = 2.0;
    while slope(hi) >= 0.0 && step < 1e12 {
        lo = hi;
        hi += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-10 * (1.0 + mid.abs()) {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let peak = log_integrand(c, kernel, x, mode);
    let h = 1e-4 * (1.0 + mode.abs());
    let curvature = (slope(mode + h) - slope(mode - h)) / (2.0 * h);
    let width = if curvature < 0.0 {
        (1.0 / (-curvature).sqrt()).clamp(1e-8, 1e3)
    } else {
        1.0
    };
    const DROP: f64 = 48.0;
    let mut right = vec![mode];
    let mut step = width;
    loop {
        let next = mode + step;
        right.push(next);
        if log_integrand(c, kernel, x, next) < peak - DROP || step > 1e5 {
            break;
        }
        step *= 2.0;
    }
    let mut left = Vec::new();
    let mut step = width;
    loop {
        let next = mode - step;
        left.push(next);
        if log_integrand(c, kernel, x, next) < peak - DROP || step > 1e5 {
            break;
        }
        step *= 2.0;
    }
    left.reverse();
    left.extend(right);
    Partition { peak, points: left }
}

fn integral_value(r: Result<crate::quadrature::Integral, QuadratureError>) -> f64 {
    match r {
        Ok(v) => v.value,
        Err(QuadratureError::NotConverged { value, .. }) => value,
        Err(QuadratureError::NonFinite(_)) => f64::NAN,
    }
}

fn convolved_log(c: &Convolution, kernel: Kernel, x: f64) -> f64 {
    let part = partition(c, kernel, x);
    let peak = part.peak;
    let v = integral_value(integrate_pieces(
        |e| (log_integrand(c, kernel, x, e) - peak).exp(),
        &part.points,
        CONV_TOL,
    ));
    peak + v.ln()
}

fn convolved_derivative(c: &Convolution, x: f64) -> f64 {
    let b = c.kernel_sd();
    let part = partition(c, Kernel::Density, x);
    let peak = part.peak;
    let v = integral_value(integrate_pieces(
        |e| {
            let z = (x - c.outcome_scale * e) / b;
            (-z / b) * (log_integrand(c, Kernel::Density, x, e) - peak).exp()
        },
        &part.points,
        CONV_TOL,
    ));
    v * peak.exp()
}

/// Survival of `σ·ε + b·Z` without quadrature when both components are normal.
#[allow(dead_code)]
pub(crate) fn normal_sum_survival(scale: f64, b: f64, x: f64) -> f64 {
    norm_sf(x / (scale * scale + b * b).sqrt())
}

#[allow(dead_code)]
pub(crate) fn normal_sum_cdf(scale: f64, b: f64, x: f64) -> f64 {
    norm_cdf(x / (scale * scale + b * b).sqrt())
}
