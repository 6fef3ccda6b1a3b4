//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands on a
//! single smooth interval. Callers split at breakpoints; nothing here ever
//! integrates across one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{OcError, Result};

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

// Gauss weights for the Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F>(f: &F, a: f64, b: f64, dim: usize) -> Result<Piece>
where
    F: Fn(f64) -> Vec<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut accumulate = |t: f64, wk: f64, wg: Option<f64>| -> Result<()> {
        let v = f(t);
        if v.len() != dim {
            return Err(OcError::dim("quadrature integrand", dim, v.len()));
        }
        for (k, vi) in v.iter().enumerate() {
            if !vi.is_finite() {
                return Err(OcError::Quadrature {
                    start: a,
                    end: b,
                    estimate: f64::INFINITY,
                });
            }
            kronrod[k] += wk * vi;
            if let Some(w) = wg {
                gauss[k] += w * vi;
            }
        }
        Ok(())
    };
    accumulate(center, WGK[7], Some(WG[3]))?;
    for j in 0..7 {
        let wg = if j % 2 == 1 { Some(WG[j / 2]) } else { None };
        let dx = half * XGK[j];
        accumulate(center - dx, WGK[j], wg)?;
        accumulate(center + dx, WGK[j], wg)?;
    }
    let mut error: f64 = 0.0;
    for k in 0..dim {
        kronrod[k] *= half;
        gauss[k] *= half;
        error = error.max((kronrod[k] - gauss[k]).abs());
    }
    Ok(Piece {
        a,
        b,
        value: kronrod,
        error,
    })
}

/// Integrates a `dim`-valued function over `[a, b]` (where `a <= b`) with
/// global adaptive bisection until the summed error estimate is below
/// `opts.abs_tol`.
pub fn integrate_vec<F>(f: F, a: f64, b: f64, dim: usize, opts: &QuadratureOptions) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Vec<f64>,
{
    if b < a {
        return Err(OcError::domain(format!("integration bounds reversed: {a} > {b}")));
    }
    if b == a {
        return Ok(vec![0.0; dim]);
    }
    let mut heap = BinaryHeap::new();
    let first = gk15(&f, a, b, dim)?;
    let mut total_error = first.error;
    heap.push(first);
    while total_error > opts.abs_tol {
        if heap.len() >= opts.max_intervals {
            let worst = heap.peek().expect("non-empty heap");
            return Err(OcError::Quadrature {
                start: worst.a,
                end: worst.b,
                estimate: total_error,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(OcError::Quadrature {
                start: worst.a,
                end: worst.b,
                estimate: total_error,
            });
        }
        let left = gk15(&f, worst.a, mid, dim)?;
        let right = gk15(&f, mid, worst.b, dim)?;
        total_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Sum in interval order so the result does not depend on heap layout.
    let mut pieces = heap.into_vec();
    pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut out = vec![0.0; dim];
    for p in &pieces {
        for (o, v) in out.iter_mut().zip(&p.value) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn integrate_scalar<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate_vec(|t| vec![f(t)], a, b, 1, opts).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_interval_length() {
        let kron: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        let gauss: f64 = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
        assert!((kron - 2.0).abs() < 1e-15);
        assert!((gauss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_on_high_degree_polynomial() {
        // Kronrod-15 is exact through degree 22.
        let v = integrate_scalar(|t| t.powi(20), 0.0, 1.0, &QuadratureOptions::default()).unwrap();
        assert!((v - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn linear_integrand() {
        let v = integrate_scalar(|t| 2.0 * t, 0.0, 1.0, &QuadratureOptions::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_needs_subdivision() {
        let v = integrate_scalar(|t| (40.0 * t).sin(), 0.0, 3.0, &QuadratureOptions::default()).unwrap();
        let exact = (1.0 - (120.0f64).cos()) / 40.0;
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn reversed_bounds_rejected() {
        assert!(integrate_scalar(|t| t, 1.0, 0.0, &QuadratureOptions::default()).is_err());
    }

    #[test]
    fn nan_integrand_reports_quadrature_error() {
        let err = integrate_scalar(|_| f64::NAN, 0.0, 1.0, &QuadratureOptions::default()).unwrap_err();
        assert!(matches!(err, OcError::Quadrature { .. }));
    }
}
