//! Maximum likelihood for parametric AFT models `y = xβ + σε`, where `y` is
//! the log event time (or the time itself on the identity scale) and `ε`
//! follows a standard residual law.
//!
//! Exact, right-censored, interval-censored and left-truncated observations
//! are supported. Fitting uses Newton steps with step halving; the Hessian is
//! the finite-difference Jacobian of the analytic score.

use crate::distributions::{ErrorLaw, StandardLaw};
use crate::special::{log_diff_exp, EULER_GAMMA};
use crate::survdata::{Dataset, Status};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const INTERCEPT: &str = "(Intercept)";
pub const EXPOSURE: &str = "exposure";
pub const MEDIATOR: &str = "mediator";

const MAX_ITERATIONS: usize = 200;
const SCORE_TOL: f64 = 1e-8;
const LOGLIK_REL_TOL: f64 = 1e-12;
const MAX_HALVINGS: usize = 50;
const FD_STEP: f64 = 1e-6;
const INTERVAL_FLOOR_LN: f64 = -690.775_527_898_213_7; // ln(1e-300)

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AftError {
    #[error("design matrix is rank deficient: column `{column}` is a linear combination of earlier columns")]
    RankDeficient { column: String },
    #[error("the {0} law cannot be fitted; choose normal or extreme_value_min")]
    UnsupportedLaw(String),
    #[error("parameter vector has {found} entries, design needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite parameter value")]
    NonFiniteParameter,
    #[error("log-likelihood is not finite at the initial values")]
    NonFiniteInit,
    #[error("the outcome model does not include the mediator")]
    MediatorAbsent,
    #[error("models do not share the same exposure and covariate design")]
    DesignMismatch,
}

/// Response transformation applied to observed times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// `y = ln t`; the usual AFT (Weibull, log-normal).
    Log,
    /// `y = t`; a linear model for the time itself (Gaussian survival regression).
    Identity,
}

impl TimeScale {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            TimeScale::Log => t.ln(),
            TimeScale::Identity => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AftSpec {
    law: StandardLaw,
    time_scale: TimeScale,
    include_mediator: bool,
}

impl AftSpec {
    pub fn new(law: ErrorLaw, time_scale: TimeScale, include_mediator: bool) -> Result<Self, AftError> {
        let law = law
            .standard()
            .ok_or_else(|| AftError::UnsupportedLaw(law.to_string()))?;
        Ok(Self {
            law,
            time_scale,
            include_mediator,
        })
    }

    /// Outcome on exposure, mediator and covariates.
    pub fn full(law: StandardLaw, time_scale: TimeScale) -> Self {
        Self {
            law,
            time_scale,
            include_mediator: true,
        }
    }

    /// Outcome on exposure and covariates only.
    pub fn reduced(law: StandardLaw, time_scale: TimeScale) -> Self {
        Self {
            law,
            time_scale,
            include_mediator: false,
        }
    }

    pub fn law(&self) -> StandardLaw {
        self.law
    }
    pub fn time_scale(&self) -> TimeScale {
        self.time_scale
    }
    pub fn includes_mediator(&self) -> bool {
        self.include_mediator
    }
}

/// Regression coefficients plus `ln σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftParams {
    pub coefficients: Vec<f64>,
    pub log_scale: f64,
}

impl AftParams {
    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.coefficients.clone();
        v.push(self.log_scale);
        v
    }

    fn from_slice(theta: &[f64]) -> Self {
        let (coef, ls) = theta.split_at(theta.len() - 1);
        Self {
            coefficients: coef.to_vec(),
            log_scale: ls[0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AftFit {
    pub spec: AftSpec,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_scale: f64,
    /// Inverse observed information over (coefficients, ln σ); `None` when the
    /// negative Hessian could not be inverted.
    pub covariance: Option<DMatrix<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    /// Interval terms whose probability mass underflowed and was floored.
    pub floored_intervals: usize,
}

impl AftFit {
    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.coefficients[i])
    }

    pub fn variance(&self, name: &str) -> Option<f64> {
        let i = self.index_of(name)?;
        self.covariance.as_ref().map(|c| c[(i, i)])
    }

    /// Standard errors for the coefficients followed by ln σ.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }

    pub fn params(&self) -> AftParams {
        AftParams {
            coefficients: self.coefficients.clone(),
            log_scale: self.log_scale,
        }
    }
}

/// Ordinary least squares fit of the mediator model.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Residual standard deviation with divisor `n − p`.
    pub residual_sd: f64,
    pub covariance: DMatrix<f64>,
}

impl LinearFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn variance(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.covariance[(i, i)])
    }
}

/// Row-major design matrix with named columns.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn build(dataset: &Dataset, include_mediator: bool) -> Self {
        let mut names = vec![INTERCEPT.to_string(), EXPOSURE.to_string()];
        if include_mediator {
            names.push(MEDIATOR.to_string());
        }
        names.extend(dataset.covariate_names().iter().cloned());
        let cols = names.len();
        let mut data = Vec::with_capacity(dataset.len() * cols);
        for s in dataset.subjects() {
            data.push(1.0);
            data.push(s.exposure);
            if include_mediator {
                data.push(s.mediator);
            }
            data.extend_from_slice(&s.covariates);
        }
        Self {
            names,
            rows: dataset.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Modified Gram–Schmidt; names the first column that is (numerically) in
    /// the span of the columns before it.
    pub fn check_rank(&self) -> Result<(), AftError> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 0..self.cols {
            let mut v: Vec<f64> = (0..self.rows).map(|i| self.row(i)[j]).collect();
            let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0 {
                return Err(AftError::RankDeficient {
                    column: self.names[j].clone(),
                });
            }
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Obs {
    Exact(f64),
    Right(f64),
    Interval(f64, f64),
}

/// Per-observation log-likelihood and its derivatives in (η, ln σ).
#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    ll: f64,
    d_eta: f64,
    d_log_scale: f64,
    floored: bool,
}

fn observation_terms(law: StandardLaw, obs: Obs, trunc: Option<f64>, eta: f64, log_scale: f64) -> Terms {
    let sigma = log_scale.exp();
    let mut t = match obs {
        Obs::Exact(y) => {
            let z = (y - eta) / sigma;
            let psi = law.score(z);
            Terms {
                ll: law.log_density(z) - log_scale,
                d_eta: -psi / sigma,
                d_log_scale: -1.0 - z * psi,
                floored: false,
            }
        }
        Obs::Right(y) => {
            let z = (y - eta) / sigma;
            let h = law.hazard(z);
            Terms {
                ll: law.log_survival(z),
                d_eta: h / sigma,
                d_log_scale: z * h,
                floored: false,
            }
        }
        Obs::Interval(yl, yr) => {
            let zl = (yl - eta) / sigma;
            let zr = (yr - eta) / sigma;
            // take the difference on whichever tail is smaller to avoid cancellation
            let lsl = law.log_survival(zl);
            let lfr = law.log_cdf(zr);
            let mut log_mass = if lsl < lfr {
                log_diff_exp(lsl, law.log_survival(zr))
            } else {
                log_diff_exp(lfr, law.log_cdf(zl))
            };
            let mut floored = false;
            if !(log_mass > INTERVAL_FLOOR_LN) {
                log_mass = INTERVAL_FLOOR_LN;
                floored = true;
            }
            let rl = (law.log_density(zl) - log_mass).exp();
            let rr = (law.log_density(zr) - log_mass).exp();
            Terms {
                ll: log_mass,
                d_eta: (rl - rr) / sigma,
                d_log_scale: zl * rl - zr * rr,
                floored,
            }
        }
    };
    if let Some(v) = trunc {
        let zv = (v - eta) / sigma;
        let h = law.hazard(zv);
        t.ll -= law.log_survival(zv);
        t.d_eta -= h / sigma;
        t.d_log_scale -= zv * h;
    }
    t
}

/// A dataset prepared for repeated likelihood evaluation under one spec.
pub struct Problem {
    spec: AftSpec,
    design: Design,
    obs: Vec<Obs>,
    trunc: Vec<Option<f64>>,
}

impl Problem {
    pub fn new(spec: &AftSpec, dataset: &Dataset) -> Self {
        let design = Design::build(dataset, spec.include_mediator);
        let ts = spec.time_scale;
        let obs = dataset
            .subjects()
            .iter()
            .map(|s| match s.outcome.status() {
                Status::Exact(t) => Obs::Exact(ts.apply(t)),
                Status::RightCensored(c) => Obs::Right(ts.apply(c)),
                Status::IntervalCensored { lower, upper } => {
                    Obs::Interval(ts.apply(lower), ts.apply(upper))
                }
            })
            .collect();
        let trunc = dataset
            .subjects()
            .iter()
            .map(|s| s.outcome.truncation().map(|v| ts.apply(v)))
            .collect();
        Self {
            spec: *spec,
            design,
            obs,
            trunc,
        }
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn dim(&self) -> usize {
        self.design.cols + 1
    }

    fn check(&self, theta: &[f64]) -> Result<(), AftError> {
        if theta.len() != self.dim() {
            return Err(AftError::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(AftError::NonFiniteParameter);
        }
        Ok(())
    }

    #[inline]
    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    #[inline]
    fn terms(&self, i: usize, eta: f64, log_scale: f64) -> Terms {
        observation_terms(self.spec.law, self.obs[i], self.trunc[i], eta, log_scale)
    }

    /// Sum of log-likelihood contributions and the number of floored intervals.
    pub fn loglik_detailed(&self, theta: &[f64]) -> Result<(f64, usize), AftError> {
        self.check(theta)?;
        let (beta, ls) = theta.split_at(theta.len() - 1);
        let mut total = 0.0;
        let mut floored = 0;
        for i in 0..self.obs.len() {
            let t = self.terms(i, self.eta(i, beta), ls[0]);
            total += t.ll;
            floored += t.floored as usize;
        }
        Ok((total, floored))
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<f64, AftError> {
        self.loglik_detailed(theta).map(|(v, _)| v)
    }

    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>, AftError> {
        self.check(theta)?;
        let p = self.design.cols;
        let (beta, ls) = theta.split_at(p);
        let mut g = vec![0.0; p + 1];
        for i in 0..self.obs.len() {
            let t = self.terms(i, self.eta(i, beta), ls[0]);
            for (gj, xj) in g.iter_mut().zip(self.design.row(i)) {
                *gj += t.d_eta * xj;
            }
            g[p] += t.d_log_scale;
        }
        Ok(g)
    }

    /// Hessian from central differences of each observation's analytic score
    /// in (η, ln σ), assembled through the design and symmetrized.
    pub fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>, AftError> {
        self.check(theta)?;
        let p = self.design.cols;
        let (beta, ls) = theta.split_at(p);
        let ls = ls[0];
        let h = FD_STEP;
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        for i in 0..self.obs.len() {
            let eta = self.eta(i, beta);
            let ep = self.terms(i, eta + h, ls);
            let em = self.terms(i, eta - h, ls);
            let sp = self.terms(i, eta, ls + h);
            let sm = self.terms(i, eta, ls - h);
            let a = (ep.d_eta - em.d_eta) / (2.0 * h);
            let b = 0.5 * ((sp.d_eta - sm.d_eta) + (ep.d_log_scale - em.d_log_scale)) / (2.0 * h);
            let c = (sp.d_log_scale - sm.d_log_scale) / (2.0 * h);
            let x = self.design.row(i);
            for j in 0..p {
                for k in 0..=j {
                    hess[(j, k)] += a * x[j] * x[k];
                }
                hess[(p, j)] += b * x[j];
            }
            hess[(p, p)] += c;
        }
        for j in 0..=p {
            for k in 0..j {
                hess[(k, j)] = hess[(j, k)];
            }
        }
        Ok(hess)
    }

    /// Least-squares start treating censored times as observed (interval
    /// bounds averaged on the response scale), moment-matched to the law.
    pub fn initial(&self) -> Result<Vec<f64>, AftError> {
        let y: Vec<f64> = self
            .obs
            .iter()
            .map(|o| match *o {
                Obs::Exact(y) | Obs::Right(y) => y,
                Obs::Interval(l, r) => 0.5 * (l + r),
            })
            .collect();
        let (mut beta, rss) = least_squares(&self.design, &y)?;
        let mut sd = (rss / self.design.rows as f64).sqrt();
        if !(sd > 1e-8) {
            sd = 1.0;
        }
        let sigma = match self.spec.law {
            StandardLaw::Normal => sd,
            StandardLaw::ExtremeValueMin => {
                let sigma = sd * 6.0f64.sqrt() / PI;
                beta[0] += EULER_GAMMA * sigma;
                sigma
            }
        };
        beta.push(sigma.ln());
        Ok(beta)
    }
}

/// OLS coefficients and residual sum of squares.
pub fn least_squares(design: &Design, y: &[f64]) -> Result<(Vec<f64>, f64), AftError> {
    design.check_rank()?;
    let x = design.to_matrix();
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let chol = xtx.cholesky().ok_or_else(|| AftError::RankDeficient {
        column: design.names.last().cloned().unwrap_or_default(),
    })?;
    let beta = chol.solve(&xty);
    let resid = &yv - &x * &beta;
    Ok((beta.iter().copied().collect(), resid.norm_squared()))
}

pub fn loglik(spec: &AftSpec, params: &AftParams, dataset: &Dataset) -> Result<f64, AftError> {
    Problem::new(spec, dataset).loglik(&params.to_vec())
}

pub fn score(spec: &AftSpec, params: &AftParams, dataset: &Dataset) -> Result<Vec<f64>, AftError> {
    Problem::new(spec, dataset).score(&params.to_vec())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `(−H) δ = g`, adding a ridge when `−H` is not positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let neg = -hess.clone();
    let g = DVector::from_column_slice(grad);
    if let Some(ch) = neg.clone().cholesky() {
        return ch.solve(&g).iter().copied().collect();
    }
    let scale = (0..neg.nrows()).map(|i| neg[(i, i)].abs()).fold(1e-8, f64::max);
    let mut lambda = 1e-6 * scale;
    for _ in 0..40 {
        let damped = &neg + DMatrix::<f64>::identity(neg.nrows(), neg.ncols()) * lambda;
        if let Some(ch) = damped.cholesky() {
            return ch.solve(&g).iter().copied().collect();
        }
        lambda *= 10.0;
    }
    grad.iter().map(|x| x / scale).collect()
}

fn invert_information(hess: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let neg = -hess.clone();
    let inv = neg.cholesky()?.inverse();
    let sym = (&inv + inv.transpose()) * 0.5;
    sym.iter().all(|v| v.is_finite()).then_some(sym)
}

pub fn fit(spec: &AftSpec, dataset: &Dataset, init: Option<&AftParams>) -> Result<AftFit, AftError> {
    let problem = Problem::new(spec, dataset);
    problem.design().check_rank()?;
    let mut theta = match init {
        Some(p) => p.to_vec(),
        None => problem.initial()?,
    };
    problem.check(&theta)?;
    let mut ll = problem.loglik(&theta)?;
    let mut inflations = 0;
    while !ll.is_finite() {
        if inflations == MAX_HALVINGS {
            return Err(AftError::NonFiniteInit);
        }
        // a wider scale keeps every residual inside the law's support numerically
        let last = theta.len() - 1;
        theta[last] += std::f64::consts::LN_2;
        ll = problem.loglik(&theta)?;
        inflations += 1;
    }

    let mut converged = false;
    let mut iterations = 0;
    let mut rel_change = f64::INFINITY;
    let mut grad = problem.score(&theta)?;
    let mut hess = problem.hessian(&theta)?;
    while iterations < MAX_ITERATIONS {
        if max_abs(&grad) < SCORE_TOL && rel_change < LOGLIK_REL_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let delta = newton_direction(&hess, &grad);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + step * d).collect();
            if let Ok(v) = problem.loglik(&cand) {
                if v.is_finite() && v >= ll - 1e-13 * ll.abs().max(1.0) {
                    accepted = Some((cand, v));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            // no ascent direction left at working precision
            converged = max_abs(&grad) < SCORE_TOL.sqrt();
            break;
        };
        rel_change = (v - ll).abs() / ll.abs().max(1e-300);
        theta = cand;
        ll = v;
        grad = problem.score(&theta)?;
        hess = problem.hessian(&theta)?;
    }
    if !converged && max_abs(&grad) < SCORE_TOL && rel_change < LOGLIK_REL_TOL {
        converged = true;
    }
    let (ll, floored) = problem.loglik_detailed(&theta)?;
    let params = AftParams::from_slice(&theta);
    Ok(AftFit {
        spec: *spec,
        names: problem.design.names.clone(),
        coefficients: params.coefficients,
        log_scale: params.log_scale,
        covariance: invert_information(&hess),
        loglik: ll,
        converged,
        iterations,
        max_abs_score: max_abs(&grad),
        floored_intervals: floored,
    })
}

/// OLS of the mediator on exposure and covariates.
pub fn fit_linear(dataset: &Dataset) -> Result<LinearFit, AftError> {
    let design = Design::build(dataset, false);
    let y: Vec<f64> = dataset.subjects().iter().map(|s| s.mediator).collect();
    let (coefficients, rss) = least_squares(&design, &y)?;
    let dof = (design.rows as f64 - design.cols as f64).max(1.0);
    let s2 = rss / dof;
    let x = design.to_matrix();
    let xtx_inv = (x.transpose() * &x)
        .cholesky()
        .ok_or_else(|| AftError::RankDeficient {
            column: design.names.last().cloned().unwrap_or_default(),
        })?
        .inverse();
    Ok(LinearFit {
        names: design.names,
        coefficients,
        residual_sd: s2.sqrt(),
        covariance: xtx_inv * s2,
    })
}
