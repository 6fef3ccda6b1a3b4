//! Dormand–Prince 5(4) integrator for one smooth interval.
//!
//! Dense output is produced by re-stepping from the nearest accepted node, so
//! any interior query carries the same local accuracy as an accepted step.

use std::sync::Arc;

use crate::error::{OcError, Result};

pub type Rhs = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Abort when the sup-norm of the state exceeds this bound.
    pub guard: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 200_000,
            guard: Some(1e12),
        }
    }
}

struct Step {
    y: Vec<f64>,
    err: Vec<f64>,
    k7: Vec<f64>,
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

fn dopri_step(rhs: &Rhs, t: f64, y: &[f64], k1: &[f64], h: f64) -> Step {
    let k2 = rhs(t + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = rhs(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = rhs(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = rhs(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = rhs(
        t + h,
        &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y_new = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = rhs(t + h, &y_new);
    let err = (0..y.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Step { y: y_new, err, k7 }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &OdeOptions) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / err.len() as f64).sqrt()
}

fn check_state(t: f64, y: &[f64], opts: &OdeOptions) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OcError::Integration {
            time: t,
            reason: "non-finite state".into(),
        });
    }
    if let Some(bound) = opts.guard {
        let norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm > bound {
            return Err(OcError::Integration {
                time: t,
                reason: format!("state norm {norm:e} left the guard region (bound {bound:e})"),
            });
        }
    }
    Ok(())
}

/// Solution of `y' = rhs(t, y)` on `[t0, t1]` (or `[t1, t0]` when integrating
/// backward), evaluable anywhere on that interval.
#[derive(Clone)]
pub struct DenseSolution {
    rhs: Rhs,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl std::fmt::Debug for DenseSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseSolution")
            .field("t_start", &self.times.first())
            .field("t_end", &self.times.last())
            .field("steps", &(self.times.len() - 1))
            .finish()
    }
}

impl DenseSolution {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("at least one node")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("at least one node")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.times
    }

    /// State at `t`; values outside the interval are clamped to its ends.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let forward = self.end_time() >= self.start_time();
        let n = self.times.len();
        if n == 1 {
            return self.states[0].clone();
        }
        // Index of the last node not past t in the integration direction.
        let k = if forward {
            if t <= self.times[0] {
                return self.states[0].clone();
            }
            if t >= self.times[n - 1] {
                return self.states[n - 1].clone();
            }
            self.times.partition_point(|&s| s <= t) - 1
        } else {
            if t >= self.times[0] {
                return self.states[0].clone();
            }
            if t <= self.times[n - 1] {
                return self.states[n - 1].clone();
            }
            self.times.partition_point(|&s| s >= t) - 1
        };
        let tk = self.times[k];
        if t == tk {
            return self.states[k].clone();
        }
        dopri_step(&self.rhs, tk, &self.states[k], &self.slopes[k], t - tk).y
    }

    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        (self.rhs)(t, &self.eval(t))
    }
}

pub fn integrate(rhs: Rhs, t0: f64, t1: f64, y0: Vec<f64>, opts: &OdeOptions) -> Result<DenseSolution> {
    check_state(t0, &y0, opts)?;
    let k1 = rhs(t0, &y0);
    if k1.len() != y0.len() {
        return Err(OcError::dim("ode right-hand side", y0.len(), k1.len()));
    }
    let mut sol = DenseSolution {
        rhs: rhs.clone(),
        times: vec![t0],
        states: vec![y0],
        slopes: vec![k1],
    };
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(sol);
    }
    let dir = span.signum();
    let length = span.abs();

    // Hairer's starting step heuristic.
    let y = &sol.states[0];
    let k = &sol.slopes[0];
    let scale: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(k);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(length);
    let probe = axpy(y, dir * h, &[(1.0, k)]);
    let k_probe = rhs(t0 + dir * h, &probe);
    let diff: Vec<f64> = k_probe.iter().zip(k).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    h = (100.0 * h).min(h1).min(length);

    let mut t = t0;
    let mut steps = 0usize;
    let mut last_rejected = false;
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        if steps >= opts.max_steps {
            return Err(OcError::Integration {
                time: t,
                reason: format!("maximum number of steps ({}) exceeded", opts.max_steps),
            });
        }
        steps += 1;
        let mut last = false;
        if h >= remaining || remaining - h <= 1e-14 * length {
            h = remaining;
            last = true;
        }
        let idx = sol.times.len() - 1;
        let step = dopri_step(&rhs, t, &sol.states[idx], &sol.slopes[idx], dir * h);
        let err = error_norm(&step.err, &sol.states[idx], &step.y, opts);
        if !err.is_finite() {
            h *= 0.25;
            if h < 1e-14 * length {
                return Err(OcError::Integration {
                    time: t,
                    reason: "step size underflow (non-finite error estimate)".into(),
                });
            }
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            let t_new = if last { t1 } else { t + dir * h };
            check_state(t_new, &step.y, opts)?;
            t = t_new;
            sol.times.push(t);
            sol.states.push(step.y);
            sol.slopes.push(step.k7);
            let mut factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            factor = factor.clamp(0.2, 5.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            h *= factor;
            last_rejected = false;
            if last {
                break;
            }
        } else {
            let factor = (0.9 * err.powf(-0.2)).max(0.2);
            h *= factor;
            last_rejected = true;
            if h < 1e-14 * length.max(1.0) {
                return Err(OcError::Integration {
                    time: t,
                    reason: "step size underflow".into(),
                });
            }
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let rhs: Rhs = Arc::new(|_, y| vec![y[0]]);
        let sol = integrate(rhs, 0.0, 1.0, vec![1.0], &OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - std::f64::consts::E).abs() < 1e-10);
        // Dense output in the middle of a step.
        for &t in &[0.123, 0.5, 0.777] {
            assert!((sol.eval(t)[0] - f64::exp(t)).abs() < 1e-11);
        }
    }

    #[test]
    fn backward_integration() {
        let rhs: Rhs = Arc::new(|_, y| vec![-y[0]]);
        let sol = integrate(rhs, 2.0, 0.0, vec![1.0], &OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - f64::exp(2.0)).abs() < 1e-9);
        assert!((sol.eval(1.0)[0] - f64::exp(1.0)).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let rhs: Rhs = Arc::new(|_, y| vec![y[1], -y[0]]);
        let sol = integrate(rhs, 0.0, 10.0, vec![1.0, 0.0], &OdeOptions::default()).unwrap();
        let y = sol.final_state();
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn blow_up_hits_guard() {
        let rhs: Rhs = Arc::new(|_, y| vec![y[0] * y[0]]);
        let err = integrate(rhs, 0.0, 2.0, vec![1.0], &OdeOptions::default()).unwrap_err();
        match err {
            OcError::Integration { time, .. } => assert!(time < 1.0 + 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
