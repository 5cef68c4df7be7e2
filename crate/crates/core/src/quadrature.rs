//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not reach tolerance {tolerance:e} after {subdivisions} subdivisions (estimated error {error:e})")]
    NotConverged {
        tolerance: f64,
        subdivisions: usize,
        error: f64,
        value: f64,
    },
    #[error("integrand produced a non-finite value at x = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

impl Integral {
    pub const ZERO: Integral = Integral {
        value: 0.0,
        abs_error: 0.0,
        evaluations: 0,
    };

    pub fn add(self, other: Integral) -> Integral {
        Integral {
            value: self.value + other.value,
            abs_error: self.abs_error + other.abs_error,
            evaluations: self.evaluations + other.evaluations,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_subdivisions: 2000,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-12)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment, QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite(center));
    }
    let mut kronrod_sum = fc * WGK[7];
    let mut gauss_sum = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite(center - dx));
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite(center + dx));
        }
        kronrod_sum += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss_sum += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod_sum * half;
    let error = ((kronrod_sum - gauss_sum) * half).abs();
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[a, b]` until the summed error estimate falls below
/// `max(tol.abs, tol.rel * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<Integral, QuadratureError> {
    if a == b {
        return Ok(Integral::ZERO);
    }
    if b < a {
        let r = integrate(f, b, a, tol)?;
        return Ok(Integral {
            value: -r.value,
            ..r
        });
    }
    let mut evaluations = 15;
    let first = kronrod(&mut f, a, b)?;
    let mut value = first.value;
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut subdivisions = 0;
    while error > tol.abs.max(tol.rel * value.abs()) {
        if subdivisions >= tol.max_subdivisions {
            return Err(QuadratureError::NotConverged {
                tolerance: tol.abs.max(tol.rel * value.abs()),
                subdivisions,
                error,
                value,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine precision; keep its estimate
            heap.push(Segment { error: 0.0, ..worst });
            subdivisions += 1;
            error = heap.iter().map(|s| s.error).sum();
            if error == 0.0 {
                break;
            }
            continue;
        }
        let left = kronrod(&mut f, worst.a, mid)?;
        let right = kronrod(&mut f, mid, worst.b)?;
        evaluations += 30;
        subdivisions += 1;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if subdivisions % 64 == 0 {
            // resum to shed accumulated cancellation in the running totals
            value = heap.iter().map(|s| s.value).sum();
            error = heap.iter().map(|s| s.error).sum();
        }
    }
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Integral {
        value,
        abs_error: error,
        evaluations,
    })
}

/// Integrates over consecutive breakpoints `points[0] < points[1] < ...`,
/// splitting the absolute tolerance evenly across pieces.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    tol: Tolerance,
) -> Result<Integral, QuadratureError> {
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    let piece_tol = Tolerance {
        abs: tol.abs / pieces,
        ..tol
    };
    let mut total = Integral::ZERO;
    for w in points.windows(2) {
        total = total.add(integrate(&mut f, w[0], w[1], piece_tol)?);
    }
    Ok(total)
}
