//! Limiting expected score of a misspecified AFT model with a binary
//! regressor, evaluated by quadrature.
//!
//! The data follow `Y = α + βX + r` with `r` drawn from the true residual
//! law; the analyst fits `Y = ᾱ + β̄X + s·e` with `e` from an assumed standard
//! law. For each `x` the expected η-score `H(x)` is an integral over the true
//! residual, and with `P(X = 1) = p` the β-score net of its projection on the
//! intercept score is `p(1 − p)(H(1) − H(0))`. That quantity vanishes without
//! censoring or truncation whenever `β̄ = β`, and under correct specification
//! at the truth, but not in general.

use crate::distributions::{ErrorLaw, StandardLaw};
use crate::quadrature::{integrate_pieces, Integral, QuadratureError, Tolerance};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreOracleError {
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pseudo-true parameter search stalled after {iterations} iterations (max |E[U]| = {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Censoring of the response `Y` (log time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    None,
    /// Every subject is censored at the same point.
    Fixed { point: f64 },
    /// `log C = location + scale·η`, η from `law`, independent of everything else.
    Random {
        law: StandardLaw,
        location: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBiasConfig {
    /// Law of the true residual before `true_scale` is applied.
    pub true_law: ErrorLaw,
    pub true_scale: f64,
    pub assumed_law: StandardLaw,
    pub truth: Line,
    pub probe: Line,
    /// Assumed-law log scale at the probe; `None` profiles it out.
    pub probe_log_scale: Option<f64>,
    pub exposure_prob: f64,
    pub censoring: Censoring,
    /// Left-truncation point on the response scale.
    pub truncation: Option<f64>,
}

impl ScoreBiasConfig {
    /// The reduced model of the Weibull scenario fitted with an extreme-value
    /// law: true residual `0.25ε − 0.6ξ`, `(α, β) = (4, 0.68)`.
    pub fn weibull_reduced(censoring: Censoring) -> Self {
        let (sigma, beta_m, alpha_a, beta_a) = (0.25, -0.6, -0.3, 0.5);
        let truth = Line {
            intercept: 4.0,
            slope: beta_a + beta_m * alpha_a,
        };
        Self {
            true_law: ErrorLaw::convolved(StandardLaw::ExtremeValueMin, sigma, beta_m, 1.0)
                .expect("nonzero mediator coefficient"),
            true_scale: 1.0,
            assumed_law: StandardLaw::ExtremeValueMin,
            truth,
            probe: truth,
            probe_log_scale: None,
            exposure_prob: 0.5,
            censoring,
            truncation: None,
        }
    }

    fn validate(&self) -> Result<(), ScoreOracleError> {
        let bad = |m: &str| Err(ScoreOracleError::InvalidConfig(m.to_string()));
        if !(self.exposure_prob > 0.0 && self.exposure_prob < 1.0) {
            return bad("exposure probability must lie in (0, 1)");
        }
        if !(self.true_scale > 0.0 && self.true_scale.is_finite()) {
            return bad("true scale must be positive");
        }
        if let Censoring::Random { law, location, scale } = self.censoring {
            if !(scale > 0.0) {
                return bad("censoring scale must be positive");
            }
            if let Some(v) = self.truncation {
                if law.survival((v - location) / scale) <= 0.0 {
                    return bad("censoring law has no mass above the truncation point");
                }
            }
        }
        if let (Censoring::Fixed { point }, Some(v)) = (self.censoring, self.truncation) {
            if point <= v {
                return bad("censoring point must exceed the truncation point");
            }
        }
        let finite = [self.truth.intercept, self.truth.slope, self.probe.intercept, self.probe.slope];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    fn true_mean(&self, x: f64) -> f64 {
        self.truth.intercept + self.truth.slope * x
    }

    fn residual_log_density(&self, r: f64) -> f64 {
        self.true_law.log_density(r / self.true_scale) - self.true_scale.ln()
    }

    fn residual_survival(&self, r: f64) -> f64 {
        self.true_law.survival(r / self.true_scale)
    }

    /// Marginal (over X) quantile of the true response.
    pub fn marginal_quantile(&self, q: f64) -> f64 {
        let p = self.exposure_prob;
        let cdf = |y: f64| {
            (1.0 - p) * self.true_law.cdf((y - self.true_mean(0.0)) / self.true_scale)
                + p * self.true_law.cdf((y - self.true_mean(1.0)) / self.true_scale)
        };
        let centre = self.truth.intercept + p * self.truth.slope + self.true_scale * self.true_law.mean();
        let spread = self.true_scale * self.true_law.variance().sqrt() + self.truth.slope.abs();
        let (mut lo, mut hi) = (centre - spread, centre + spread);
        while cdf(lo) > q {
            lo -= spread;
        }
        while cdf(hi) < q {
            hi += spread;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBiasResult {
    /// `p(1 − p)(H(1) − H(0))`, with `p` the exposure prevalence among
    /// observed subjects.
    pub expected_score_beta: f64,
    pub expected_score_alpha: f64,
    pub expected_score_log_scale: f64,
    pub probe_log_scale: f64,
    pub quadrature_abs_error: f64,
    pub evaluations: usize,
}

/// Pseudo-true parameters of the assumed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSolution {
    pub intercept: f64,
    pub slope: f64,
    pub log_scale: f64,
    pub iterations: usize,
    pub max_abs_score: f64,
}

/// Expected η- and ln s-scores for one exposure level, before any weighting
/// by the exposure distribution.
#[derive(Debug, Clone, Copy)]
struct Conditional {
    eta: f64,
    log_scale: f64,
    observed_mass: f64,
    err: f64,
    evals: usize,
}

struct Evaluator<'a> {
    cfg: &'a ScoreBiasConfig,
    tol: Tolerance,
    spread: f64,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &'a ScoreBiasConfig, tolerance: f64) -> Self {
        Self {
            cfg,
            tol: Tolerance::new(tolerance, 1e-12),
            spread: cfg.true_scale * cfg.true_law.variance().sqrt(),
        }
    }

    /// Walks outward from `start` until `|f|` falls below `1e-30` and keeps
    /// falling.
    fn reach(&self, f: &impl Fn(f64) -> f64, start: f64, dir: f64) -> f64 {
        let mut step = 0.5 * self.spread;
        let mut x = start;
        let mut prev = f(x).abs();
        for _ in 0..200 {
            x += dir * step;
            let v = f(x).abs();
            if v < 1e-30 && v <= prev {
                return x;
            }
            prev = v;
            step *= 1.3;
        }
        x
    }

    fn breakpoints(&self, lo: f64, hi: f64, centre: f64) -> Vec<f64> {
        let mut pts = vec![lo, hi];
        for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
            let p = centre + k * self.spread;
            if p > lo && p < hi {
                pts.push(p);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    fn integrate(&self, f: impl Fn(f64) -> f64, lo_limit: f64, hi_limit: f64, centre: f64) -> Result<Integral, QuadratureError> {
        let anchor = centre.clamp(lo_limit.max(-1e300), hi_limit.min(1e300));
        let lo = if lo_limit.is_finite() { lo_limit } else { self.reach(&f, anchor, -1.0) };
        let hi = if hi_limit.is_finite() { hi_limit } else { self.reach(&f, anchor, 1.0) };
        if hi <= lo {
            return Ok(Integral::ZERO);
        }
        integrate_pieces(f, &self.breakpoints(lo, hi, anchor), self.tol)
    }

    fn conditional(&self, x: f64, m: f64, log_s: f64) -> Result<Conditional, QuadratureError> {
        let cfg = self.cfg;
        let g = cfg.assumed_law;
        let s = log_s.exp();
        let mu = cfg.true_mean(x);
        let centre = cfg.true_scale * cfg.true_law.mean();
        let z_of = |r: f64| (mu + r - m) / s;
        let r_lo = cfg.truncation.map_or(f64::NEG_INFINITY, |v| v - mu);
        // follow-up only starts at entry, so a random censoring time is
        // conditioned to exceed the truncation point
        let entry_mass = match (cfg.censoring, cfg.truncation) {
            (Censoring::Random { law, location, scale }, Some(v)) => law.survival((v - location) / scale),
            _ => 1.0,
        };
        let (r_hi, weight): (f64, Box<dyn Fn(f64) -> f64 + '_>) = match cfg.censoring {
            Censoring::None => (f64::INFINITY, Box::new(|_| 1.0)),
            Censoring::Fixed { point } => (point - mu, Box::new(|_| 1.0)),
            Censoring::Random { law, location, scale } => (
                f64::INFINITY,
                Box::new(move |r: f64| law.survival((mu + r - location) / scale) / entry_mass),
            ),
        };
        let dens = |r: f64| self.cfg.residual_log_density(r).exp();

        let exact_eta = self.integrate(
            |r| {
                let w = weight(r);
                if w == 0.0 {
                    return 0.0;
                }
                -g.score(z_of(r)) / s * w * dens(r)
            },
            r_lo,
            r_hi,
            centre,
        )?;
        let exact_ls = self.integrate(
            |r| {
                let w = weight(r);
                if w == 0.0 {
                    return 0.0;
                }
                let z = z_of(r);
                (-1.0 - z * g.score(z)) * w * dens(r)
            },
            r_lo,
            r_hi,
            centre,
        )?;

        let mut eta = exact_eta.value;
        let mut ls = exact_ls.value;
        let mut err = exact_eta.abs_error + exact_ls.abs_error;
        let mut evals = exact_eta.evaluations + exact_ls.evaluations;

        match cfg.censoring {
            Censoring::None => {}
            Censoring::Fixed { point } => {
                let surv = if point - mu <= r_lo {
                    0.0
                } else {
                    cfg.residual_survival(point - mu)
                };
                if surv > 0.0 {
                    let zc = (point - m) / s;
                    let h = g.hazard(zc);
                    eta += surv * h / s;
                    ls += surv * zc * h;
                }
            }
            Censoring::Random { law, location, scale } => {
                // density of the censoring time on the response scale, truncated from below
                let kc = |y: f64| law.density((y - location) / scale) / (scale * entry_mass);
                let surv_at = |y: f64| {
                    if y - mu <= r_lo {
                        0.0
                    } else {
                        cfg.residual_survival(y - mu)
                    }
                };
                let y_lo = cfg.truncation.unwrap_or(f64::NEG_INFINITY);
                let c_centre = location + scale * law.mean();
                let cens_eta = self.integrate(
                    |y| {
                        let k = kc(y);
                        if k == 0.0 {
                            return 0.0;
                        }
                        k * surv_at(y) * g.hazard((y - m) / s) / s
                    },
                    y_lo,
                    f64::INFINITY,
                    c_centre,
                )?;
                let cens_ls = self.integrate(
                    |y| {
                        let k = kc(y);
                        if k == 0.0 {
                            return 0.0;
                        }
                        let zc = (y - m) / s;
                        k * surv_at(y) * zc * g.hazard(zc)
                    },
                    y_lo,
                    f64::INFINITY,
                    c_centre,
                )?;
                eta += cens_eta.value;
                ls += cens_ls.value;
                err += cens_eta.abs_error + cens_ls.abs_error;
                evals += cens_eta.evaluations + cens_ls.evaluations;
            }
        }

        let mut observed_mass = 1.0;
        if let Some(v) = cfg.truncation {
            observed_mass = cfg.residual_survival(v - mu);
            let zv = (v - m) / s;
            let h = g.hazard(zv);
            eta = eta / observed_mass - h / s;
            ls = ls / observed_mass - zv * h;
            err /= observed_mass;
        }
        Ok(Conditional {
            eta,
            log_scale: ls,
            observed_mass,
            err,
            evals,
        })
    }

    /// Expected (α, β, ln s) scores per observed subject, plus the
    /// projected β-score.
    fn scores(&self, a: f64, b: f64, log_s: f64) -> Result<([f64; 3], f64, f64, usize), QuadratureError> {
        let c0 = self.conditional(0.0, a, log_s)?;
        let c1 = self.conditional(1.0, a + b, log_s)?;
        let p = self.cfg.exposure_prob;
        let w1 = p * c1.observed_mass;
        let w0 = (1.0 - p) * c0.observed_mass;
        let p_obs = w1 / (w0 + w1);
        let u_alpha = (1.0 - p_obs) * c0.eta + p_obs * c1.eta;
        let u_beta = p_obs * c1.eta;
        let u_ls = (1.0 - p_obs) * c0.log_scale + p_obs * c1.log_scale;
        let projected = p_obs * (1.0 - p_obs) * (c1.eta - c0.eta);
        Ok(([u_alpha, u_beta, u_ls], projected, c0.err + c1.err, c0.evals + c1.evals))
    }

    /// Solves the expected ln s-score for the scale at fixed location.
    fn profile_scale(&self, a: f64, b: f64) -> Result<f64, ScoreOracleError> {
        let g = self.cfg.assumed_law;
        let mut ls = (self.spread / g.variance().sqrt()).ln();
        for _ in 0..100 {
            let f = self.scores(a, b, ls)?.0[2];
            if f.abs() < 1e-12 {
                return Ok(ls);
            }
            let h = 1e-5;
            let d = (self.scores(a, b, ls + h)?.0[2] - self.scores(a, b, ls - h)?.0[2]) / (2.0 * h);
            let step = if d < 0.0 { -f / d } else { f.signum() * 0.5 };
            ls += step.clamp(-1.0, 1.0);
            if step.abs() < 1e-13 {
                return Ok(ls);
            }
        }
        Err(ScoreOracleError::NotConverged {
            iterations: 100,
            residual: self.scores(a, b, ls)?.0[2].abs(),
        })
    }
}

fn evaluate(config: &ScoreBiasConfig, tolerance: f64) -> Result<ScoreBiasResult, ScoreOracleError> {
    config.validate()?;
    let ev = Evaluator::new(config, tolerance);
    let (a, b) = (config.probe.intercept, config.probe.slope);
    let ls = match config.probe_log_scale {
        Some(v) => v,
        None => ev.profile_scale(a, b)?,
    };
    let (u, projected, err, evals) = ev.scores(a, b, ls)?;
    Ok(ScoreBiasResult {
        expected_score_beta: projected,
        expected_score_alpha: u[0],
        expected_score_log_scale: u[2],
        probe_log_scale: ls,
        quadrature_abs_error: err,
        evaluations: evals,
    })
}

/// Expected score under right censoring; truncation in the config is ignored.
pub fn expected_score_right_censoring(config: &ScoreBiasConfig, tolerance: f64) -> Result<ScoreBiasResult, ScoreOracleError> {
    let cfg = ScoreBiasConfig {
        truncation: None,
        ..config.clone()
    };
    evaluate(&cfg, tolerance)
}

/// Expected score under left truncation at `config.truncation` without
/// censoring.
pub fn expected_score_left_truncation(config: &ScoreBiasConfig, tolerance: f64) -> Result<ScoreBiasResult, ScoreOracleError> {
    let cfg = ScoreBiasConfig {
        censoring: Censoring::None,
        ..config.clone()
    };
    evaluate(&cfg, tolerance)
}

/// Expected score with whatever censoring and truncation the config holds.
pub fn expected_score(config: &ScoreBiasConfig, tolerance: f64) -> Result<ScoreBiasResult, ScoreOracleError> {
    evaluate(config, tolerance)
}

/// Damped Newton on all three expected score equations, giving the limit of
/// the misspecified maximum likelihood estimator.
pub fn mle_limit_probe(config: &ScoreBiasConfig, tolerance: f64) -> Result<ProbeSolution, ScoreOracleError> {
    solve(config, tolerance, &[0, 1, 2])
}

/// Holds the slope at the probe value and solves the intercept and scale
/// equations, so the slope score can be read off at the profiled intercept.
pub fn profile_intercept(config: &ScoreBiasConfig, tolerance: f64) -> Result<ProbeSolution, ScoreOracleError> {
    solve(config, tolerance, &[0, 2])
}

fn solve(config: &ScoreBiasConfig, tolerance: f64, free: &[usize]) -> Result<ProbeSolution, ScoreOracleError> {
    config.validate()?;
    let ev = Evaluator::new(config, tolerance);
    let mut theta = [
        config.probe.intercept,
        config.probe.slope,
        match config.probe_log_scale {
            Some(v) => v,
            None => ev.profile_scale(config.probe.intercept, config.probe.slope)?,
        },
    ];
    let f = |t: &[f64; 3]| ev.scores(t[0], t[1], t[2]).map(|r| r.0);
    let norm = |u: &[f64; 3]| free.iter().fold(0.0f64, |m, &i| m.max(u[i].abs()));
    let k = free.len();
    let mut u = f(&theta)?;
    const MAX_ITER: usize = 60;
    let solution = |theta: [f64; 3], iterations, max_abs_score| ProbeSolution {
        intercept: theta[0],
        slope: theta[1],
        log_scale: theta[2],
        iterations,
        max_abs_score,
    };
    for it in 0..MAX_ITER {
        if norm(&u) < 1e-11 {
            return Ok(solution(theta, it, norm(&u)));
        }
        let h = 1e-5;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
        for (c, &j) in free.iter().enumerate() {
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let (up, um) = (f(&tp)?, f(&tm)?);
            for (r, &i) in free.iter().enumerate() {
                jac[(r, c)] = (up[i] - um[i]) / (2.0 * h);
            }
        }
        let rhs = nalgebra::DVector::from_iterator(k, free.iter().map(|&i| -u[i]));
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Err(ScoreOracleError::NotConverged {
                iterations: it,
                residual: norm(&u),
            });
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = theta;
            for (c, &j) in free.iter().enumerate() {
                cand[j] += step * delta[c];
            }
            let uc = f(&cand)?;
            if norm(&uc) < norm(&u) {
                theta = cand;
                u = uc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = norm(&u);
    if residual < 1e-9 {
        return Ok(solution(theta, MAX_ITER, residual));
    }
    Err(ScoreOracleError::NotConverged {
        iterations: MAX_ITER,
        residual,
    })
}
