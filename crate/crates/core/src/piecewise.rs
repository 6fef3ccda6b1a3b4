//! Piecewise-continuous and piecewise-C¹ functions on `[0, T]`.
//!
//! A function is stored as one closed-form evaluator per grid interval. Each
//! evaluator is valid on the *closed* interval, so its value at an interval end
//! is the exact one-sided limit there. This is what lets controls, states and
//! adjoints carry exact jump information at breakpoints.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{OcError, Result};
use crate::quadrature::{integrate_vec, QuadratureOptions};

pub type SegmentFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Relative tolerance under which two breakpoints are considered equal.
pub const BREAKPOINT_TOL: f64 = 1e-12;

/// Samples per segment used by norm estimates.
pub const NORM_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    horizon: f64,
    breakpoints: Vec<f64>,
}

impl Grid {
    /// Grid with no interior breakpoints.
    pub fn trivial(horizon: f64) -> Result<Self> {
        Self::from_breakpoints(vec![0.0, horizon])
    }

    /// Builds a grid from interior breakpoints, which are sorted and deduplicated.
    pub fn with_interior(horizon: f64, interior: &[f64]) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(OcError::domain(format!("horizon must be positive, got {horizon}")));
        }
        let tol = BREAKPOINT_TOL * horizon;
        let mut pts: Vec<f64> = interior.to_vec();
        if pts.iter().any(|t| !t.is_finite()) {
            return Err(OcError::domain("non-finite breakpoint"));
        }
        pts.sort_by(f64::total_cmp);
        let mut out = vec![0.0];
        for t in pts {
            if t <= tol || t >= horizon - tol {
                if t < -tol || t > horizon + tol {
                    return Err(OcError::domain(format!("breakpoint {t} outside [0, {horizon}]")));
                }
                continue;
            }
            if t - out.last().copied().unwrap_or(0.0) > tol {
                out.push(t);
            }
        }
        out.push(horizon);
        Ok(Self {
            horizon,
            breakpoints: out,
        })
    }

    /// Builds a grid from the full breakpoint list `0 = τ₀ < … < τ_{k+1} = T`.
    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(OcError::domain("a grid needs at least the two end points"));
        }
        let horizon = *breakpoints.last().unwrap();
        if breakpoints[0] != 0.0 {
            return Err(OcError::domain("first breakpoint must be 0"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(OcError::domain(format!("horizon must be positive, got {horizon}")));
        }
        let tol = BREAKPOINT_TOL * horizon;
        for w in breakpoints.windows(2) {
            if !(w[1] - w[0] > tol) {
                return Err(OcError::domain(format!(
                    "breakpoints must be strictly increasing (gap {} between {} and {})",
                    w[1] - w[0],
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self {
            horizon,
            breakpoints,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn interior(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    pub fn num_segments(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn segment_bounds(&self, i: usize) -> (f64, f64) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    pub fn min_gap(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the breakpoint within tolerance of `t`, if any.
    pub fn breakpoint_index(&self, t: f64) -> Option<usize> {
        let tol = BREAKPOINT_TOL * self.horizon;
        let k = self.breakpoints.partition_point(|&s| s < t - tol);
        (k < self.breakpoints.len() && (self.breakpoints[k] - t).abs() <= tol).then_some(k)
    }

    /// Segment `i` with `τ_i ≤ t < τ_{i+1}`; `T` maps to the last segment.
    pub fn segment_of(&self, t: f64) -> usize {
        let k = self.breakpoints.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.num_segments() - 1)
    }

    /// Segment of `self` that contains the segment `[a, b]` of a refinement.
    fn containing_segment(&self, a: f64, b: f64) -> usize {
        self.segment_of(0.5 * (a + b))
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = BREAKPOINT_TOL * self.horizon;
        t >= -tol && t <= self.horizon + tol
    }

    /// Sample times: every breakpoint plus `per_segment - 1` interior points per
    /// segment.
    pub fn sample_times(&self, per_segment: usize) -> Vec<f64> {
        let per = per_segment.max(1);
        let mut out = Vec::with_capacity(self.num_segments() * per + 1);
        for i in 0..self.num_segments() {
            let (a, b) = self.segment_bounds(i);
            for j in 0..per {
                out.push(a + (b - a) * j as f64 / per as f64);
            }
        }
        out.push(self.horizon);
        out
    }
}

/// Union of the breakpoints of two grids on the same horizon.
pub fn merge_grids(g1: &Grid, g2: &Grid) -> Result<Grid> {
    let tol = BREAKPOINT_TOL * g1.horizon.max(g2.horizon);
    if (g1.horizon - g2.horizon).abs() > tol {
        return Err(OcError::domain(format!(
            "cannot merge grids with horizons {} and {}",
            g1.horizon, g2.horizon
        )));
    }
    let mut pts: Vec<f64> = g1.interior().iter().chain(g2.interior()).copied().collect();
    pts.sort_by(f64::total_cmp);
    Grid::with_interior(g1.horizon, &pts)
}

pub fn merge_all(grids: &[&Grid]) -> Result<Grid> {
    let mut out = grids
        .first()
        .map(|g| (*g).clone())
        .ok_or_else(|| OcError::domain("no grids to merge"))?;
    for g in &grids[1..] {
        out = merge_grids(&out, g)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Auto,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Right-continuous on `[0, T[` and left-continuous at `T`.
    NormalizedRight,
    /// Arbitrary values at breakpoints.
    Raw,
}

#[derive(Clone)]
pub struct PiecewiseFn {
    grid: Grid,
    dim: usize,
    segments: Vec<SegmentFn>,
    right_limits: Vec<Vec<f64>>,
    left_limits: Vec<Vec<f64>>,
    normalization: Normalization,
    point_values: Option<Vec<Vec<f64>>>,
}

impl std::fmt::Debug for PiecewiseFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PiecewiseFn")
            .field("breakpoints", &self.grid.breakpoints)
            .field("dim", &self.dim)
            .field("normalization", &self.normalization)
            .finish()
    }
}

fn check_vec(v: &[f64], dim: usize, context: &str) -> Result<()> {
    if v.len() != dim {
        return Err(OcError::dim(context, dim, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(OcError::domain(format!("{context}: non-finite value")));
    }
    Ok(())
}

impl PiecewiseFn {
    /// Normalized-right function from per-segment evaluators.
    pub fn new(grid: Grid, dim: usize, segments: Vec<SegmentFn>) -> Result<Self> {
        if segments.len() != grid.num_segments() {
            return Err(OcError::dim("piecewise segments", grid.num_segments(), segments.len()));
        }
        let mut right_limits = Vec::with_capacity(segments.len());
        let mut left_limits = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let (a, b) = grid.segment_bounds(i);
            let r = seg(a);
            let l = seg(b);
            check_vec(&r, dim, "right limit")?;
            check_vec(&l, dim, "left limit")?;
            right_limits.push(r);
            left_limits.push(l);
        }
        Ok(Self {
            grid,
            dim,
            segments,
            right_limits,
            left_limits,
            normalization: Normalization::NormalizedRight,
            point_values: None,
        })
    }

    /// A function with explicitly prescribed values at every breakpoint.
    pub fn raw(grid: Grid, dim: usize, segments: Vec<SegmentFn>, point_values: Vec<Vec<f64>>) -> Result<Self> {
        if point_values.len() != grid.breakpoints().len() {
            return Err(OcError::dim("breakpoint values", grid.breakpoints().len(), point_values.len()));
        }
        for v in &point_values {
            check_vec(v, dim, "breakpoint value")?;
        }
        let mut f = Self::new(grid, dim, segments)?;
        f.normalization = Normalization::Raw;
        f.point_values = Some(point_values);
        Ok(f)
    }

    pub fn constant(horizon: f64, value: Vec<f64>) -> Result<Self> {
        let dim = value.len();
        let v = Arc::new(value);
        Self::new(Grid::trivial(horizon)?, dim, vec![Arc::new(move |_| (*v).clone())])
    }

    /// Piecewise-constant function with `values[i]` on segment `i`.
    pub fn step(grid: Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map(Vec::len).unwrap_or(0);
        let segments = values
            .into_iter()
            .map(|v| -> SegmentFn { Arc::new(move |_| v.clone()) })
            .collect();
        Self::new(grid, dim, segments)
    }

    /// Single-segment function from a closure valid on all of `[0, T]`.
    pub fn from_fn(horizon: f64, dim: usize, f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Result<Self> {
        Self::new(Grid::trivial(horizon)?, dim, vec![Arc::new(f)])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn segment(&self, i: usize) -> &SegmentFn {
        &self.segments[i]
    }

    pub fn segments(&self) -> &[SegmentFn] {
        &self.segments
    }

    /// One-sided limit from the right at breakpoint `k` (for `k < K+1`).
    pub fn right_limit(&self, k: usize) -> &[f64] {
        let k = k.min(self.right_limits.len() - 1);
        &self.right_limits[k]
    }

    /// One-sided limit from the left at breakpoint `k` (for `k ≥ 1`).
    pub fn left_limit(&self, k: usize) -> &[f64] {
        let k = k.max(1) - 1;
        &self.left_limits[k]
    }

    /// Largest jump `‖f(τ⁺) − f(τ⁻)‖` over interior breakpoints.
    pub fn max_jump(&self) -> f64 {
        (1..self.grid.num_segments())
            .map(|k| norm(&sub(self.right_limit(k), self.left_limit(k))))
            .fold(0.0, f64::max)
    }

    pub fn eval(&self, t: f64, side: Side) -> Result<Vec<f64>> {
        if !self.grid.contains(t) || !t.is_finite() {
            return Err(OcError::domain(format!("t = {t} outside [0, {}]", self.grid.horizon)));
        }
        Ok(self.eval_unchecked(t, side))
    }

    /// Evaluation with `t` clamped into `[0, T]`.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        self.eval_unchecked(t.clamp(0.0, self.grid.horizon), Side::Auto)
    }

    fn eval_unchecked(&self, t: f64, side: Side) -> Vec<f64> {
        let last = self.grid.breakpoints.len() - 1;
        if let Some(k) = self.grid.breakpoint_index(t) {
            let use_right = match side {
                Side::Right => k < last,
                Side::Left => k == 0,
                Side::Auto => match self.normalization {
                    Normalization::NormalizedRight => k < last,
                    Normalization::Raw => {
                        return self.point_values.as_ref().expect("raw values")[k].clone();
                    }
                },
            };
            return if use_right {
                self.right_limits[k].clone()
            } else {
                self.left_limits[k - 1].clone()
            };
        }
        let i = self.grid.segment_of(t);
        (self.segments[i])(t)
    }

    /// Value on segment `i` at `t`, which may be either end of that segment.
    pub fn eval_on_segment(&self, i: usize, t: f64) -> Vec<f64> {
        (self.segments[i])(t)
    }

    /// Returns the normalized-right representative of this function.
    pub fn normalized(&self) -> PiecewiseFn {
        let mut out = self.clone();
        out.normalization = Normalization::NormalizedRight;
        out.point_values = None;
        out
    }

    /// Re-expresses the function on a refinement of its grid.
    pub fn on_grid(&self, grid: &Grid) -> Result<PiecewiseFn> {
        let mapping = refinement_map(&self.grid, grid)?;
        let segments = mapping.iter().map(|&i| self.segments[i].clone()).collect();
        let mut out = PiecewiseFn::new(grid.clone(), self.dim, segments)?;
        if self.normalization == Normalization::Raw {
            let values = grid
                .breakpoints()
                .iter()
                .map(|&t| self.eval_unchecked(t, Side::Auto))
                .collect();
            out.normalization = Normalization::Raw;
            out.point_values = Some(values);
        }
        Ok(out)
    }

    /// Pointwise combination of several functions on their merged grid.
    pub fn combine(
        inputs: &[&PiecewiseFn],
        dim: usize,
        f: impl Fn(f64, &[Vec<f64>]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<PiecewiseFn> {
        let grids: Vec<&Grid> = inputs.iter().map(|p| &p.grid).collect();
        let grid = merge_all(&grids)?;
        let f = Arc::new(f);
        let mut segments: Vec<SegmentFn> = Vec::with_capacity(grid.num_segments());
        for j in 0..grid.num_segments() {
            let (a, b) = grid.segment_bounds(j);
            let parts: Vec<SegmentFn> = inputs
                .iter()
                .map(|p| p.segments[p.grid.containing_segment(a, b)].clone())
                .collect();
            let f = f.clone();
            segments.push(Arc::new(move |t| {
                let vals: Vec<Vec<f64>> = parts.iter().map(|s| s(t)).collect();
                f(t, &vals)
            }));
        }
        PiecewiseFn::new(grid, dim, segments)
    }

    pub fn integrate(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        self.integrate_with(s, t, &QuadratureOptions::default())
    }

    /// Per-segment quadrature of `∫ₛᵗ f`.
    pub fn integrate_with(&self, s: f64, t: f64, opts: &QuadratureOptions) -> Result<Vec<f64>> {
        if s > t {
            return Err(OcError::domain(format!("integration interval reversed: {s} > {t}")));
        }
        if !self.grid.contains(s) || !self.grid.contains(t) {
            return Err(OcError::domain(format!(
                "integration interval [{s}, {t}] outside [0, {}]",
                self.grid.horizon
            )));
        }
        let mut total = vec![0.0; self.dim];
        for i in 0..self.grid.num_segments() {
            let (a, b) = self.grid.segment_bounds(i);
            let lo = a.max(s);
            let hi = b.min(t);
            if hi <= lo {
                continue;
            }
            let seg = &self.segments[i];
            let part = integrate_vec(|r| seg(r), lo, hi, self.dim, opts)?;
            for (o, p) in total.iter_mut().zip(part) {
                *o += p;
            }
        }
        Ok(total)
    }

    /// Sample points `(t, value)` covering both one-sided limits at every
    /// breakpoint and `per_segment` points inside each segment.
    fn norm_samples(&self, per_segment: usize) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        for i in 0..self.grid.num_segments() {
            let (a, b) = self.grid.segment_bounds(i);
            out.push((a, self.right_limits[i].clone()));
            for j in 1..per_segment {
                let t = a + (b - a) * j as f64 / per_segment as f64;
                out.push((t, (self.segments[i])(t)));
            }
            out.push((b, self.left_limits[i].clone()));
        }
        out
    }

    /// Sampled estimate of `sup_t e^{−Lt} ‖f(t)‖` (a lower bound on the true
    /// supremum). `L = 0` gives the sup norm.
    pub fn bielecki_norm(&self, lipschitz: f64) -> Result<f64> {
        if !(lipschitz >= 0.0) {
            return Err(OcError::domain(format!("Bielecki weight must be nonnegative, got {lipschitz}")));
        }
        Ok(self
            .norm_samples(NORM_SAMPLES)
            .into_iter()
            .map(|(t, v)| (-lipschitz * t).exp() * norm(&v))
            .fold(0.0, f64::max))
    }

    pub fn sup_norm(&self) -> f64 {
        self.bielecki_norm(0.0).expect("zero weight is valid")
    }

    /// JSON dump `{"T", "breakpoints", "samples": [[t, side, value…], …]}` with
    /// 17 significant digits. Breakpoints contribute one `"right"` sample for
    /// the segment they start and one `"left"` sample for the segment they end.
    pub fn to_json(&self, per_segment: usize) -> String {
        let per = per_segment.max(1);
        let mut s = String::new();
        let _ = write!(s, "{{\"T\":{},\"breakpoints\":[", fmt_real(self.grid.horizon));
        let bps: Vec<String> = self.grid.breakpoints.iter().map(|&v| fmt_real(v)).collect();
        s.push_str(&bps.join(","));
        s.push_str("],\"samples\":[");
        let mut rows = Vec::new();
        let row = |t: f64, side: &str, v: &[f64]| -> String {
            let mut r = format!("[{},\"{}\"", fmt_real(t), side);
            for x in v {
                r.push(',');
                r.push_str(&fmt_real(*x));
            }
            r.push(']');
            r
        };
        for i in 0..self.grid.num_segments() {
            let (a, b) = self.grid.segment_bounds(i);
            rows.push(row(a, "right", &self.right_limits[i]));
            for j in 1..per {
                let t = a + (b - a) * j as f64 / per as f64;
                rows.push(row(t, "auto", &(self.segments[i])(t)));
            }
            rows.push(row(b, "left", &self.left_limits[i]));
        }
        s.push_str(&rows.join(","));
        s.push_str("]}");
        s
    }

    /// Reads a sample dump back as a piecewise-linear interpolant. One-sided
    /// limits at breakpoints are reproduced exactly; interior values are only
    /// as good as the sampling density.
    pub fn from_json(src: &str) -> Result<PiecewiseFn> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Dump {
            #[serde(rename = "T")]
            horizon: f64,
            breakpoints: Vec<f64>,
            samples: Vec<Vec<serde_json::Value>>,
        }
        let dump: Dump = serde_json::from_str(src).map_err(|e| OcError::Config(format!("piecewise json: {e}")))?;
        let grid = Grid::from_breakpoints(dump.breakpoints)?;
        if (grid.horizon - dump.horizon).abs() > BREAKPOINT_TOL * dump.horizon {
            return Err(OcError::Config("piecewise json: T does not match last breakpoint".into()));
        }
        let mut per_segment: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); grid.num_segments()];
        let mut dim = None;
        for row in &dump.samples {
            if row.len() < 2 {
                return Err(OcError::Config("piecewise json: sample row too short".into()));
            }
            let t = row[0]
                .as_f64()
                .ok_or_else(|| OcError::Config("piecewise json: sample time must be a number".into()))?;
            let side = row[1]
                .as_str()
                .ok_or_else(|| OcError::Config("piecewise json: side must be a string".into()))?;
            let v: Vec<f64> = row[2..]
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| OcError::Config("piecewise json: non-numeric value".into())))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(OcError::dim("piecewise json sample", d, v.len())),
                _ => {}
            }
            let seg = match (side, grid.breakpoint_index(t)) {
                ("left", Some(k)) if k > 0 => k - 1,
                ("right", Some(k)) if k < grid.num_segments() => k,
                ("auto", _) => grid.segment_of(t),
                (other, _) => {
                    return Err(OcError::Config(format!("piecewise json: bad side `{other}` at t = {t}")));
                }
            };
            per_segment[seg].push((t, v));
        }
        let dim = dim.unwrap_or(0);
        let mut segments: Vec<SegmentFn> = Vec::new();
        for (i, mut pts) in per_segment.into_iter().enumerate() {
            if pts.is_empty() {
                return Err(OcError::Config(format!("piecewise json: segment {i} has no samples")));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            segments.push(Arc::new(move |t| linear_interp(&pts, t)));
        }
        PiecewiseFn::new(grid, dim, segments)
    }
}

fn linear_interp(pts: &[(f64, Vec<f64>)], t: f64) -> Vec<f64> {
    if pts.len() == 1 || t <= pts[0].0 {
        return pts[0].1.clone();
    }
    let k = pts.partition_point(|p| p.0 <= t);
    if k >= pts.len() {
        return pts[pts.len() - 1].1.clone();
    }
    let (t0, v0) = &pts[k - 1];
    let (t1, v1) = &pts[k];
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    v0.iter().zip(v1).map(|(a, b)| a + w * (b - a)).collect()
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// For each segment of `fine`, the index of the segment of `coarse` containing it.
fn refinement_map(coarse: &Grid, fine: &Grid) -> Result<Vec<usize>> {
    let tol = BREAKPOINT_TOL * coarse.horizon;
    if (coarse.horizon - fine.horizon).abs() > tol {
        return Err(OcError::domain("grid horizons differ"));
    }
    for &t in coarse.interior() {
        if fine.breakpoint_index(t).is_none() {
            return Err(OcError::domain(format!("grid is not a refinement: missing breakpoint {t}")));
        }
    }
    Ok((0..fine.num_segments())
        .map(|j| {
            let (a, b) = fine.segment_bounds(j);
            coarse.containing_segment(a, b)
        })
        .collect())
}

/// Continuous function whose restriction to each grid interval is C¹.
#[derive(Clone)]
pub struct PiecewiseC1Fn {
    value: PiecewiseFn,
    derivative: Vec<SegmentFn>,
}

impl std::fmt::Debug for PiecewiseC1Fn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PiecewiseC1Fn")
            .field("breakpoints", &self.value.grid.breakpoints)
            .field("dim", &self.value.dim)
            .finish()
    }
}

/// Maximum admissible relative jump for a function declared continuous.
pub const CONTINUITY_TOL: f64 = 1e-9;

impl PiecewiseC1Fn {
    pub fn new(grid: Grid, dim: usize, values: Vec<SegmentFn>, derivatives: Vec<SegmentFn>) -> Result<Self> {
        if derivatives.len() != grid.num_segments() {
            return Err(OcError::dim("derivative segments", grid.num_segments(), derivatives.len()));
        }
        let value = PiecewiseFn::new(grid, dim, values)?;
        for k in 1..value.grid.num_segments() {
            let l = value.left_limit(k);
            let r = value.right_limit(k);
            let scale = 1.0 + norm(l).max(norm(r));
            if norm(&sub(l, r)) > CONTINUITY_TOL * scale {
                return Err(OcError::domain(format!(
                    "piecewise-C1 function jumps at t = {} by {:e}",
                    value.grid.breakpoints[k],
                    norm(&sub(l, r))
                )));
            }
        }
        for (i, d) in derivatives.iter().enumerate() {
            let (a, b) = value.grid.segment_bounds(i);
            check_vec(&d(a), dim, "derivative right limit")?;
            check_vec(&d(b), dim, "derivative left limit")?;
        }
        Ok(Self {
            value,
            derivative: derivatives,
        })
    }

    pub fn constant(horizon: f64, value: Vec<f64>) -> Result<Self> {
        let dim = value.len();
        let v = Arc::new(value);
        Self::new(
            Grid::trivial(horizon)?,
            dim,
            vec![Arc::new(move |_| (*v).clone())],
            vec![Arc::new(move |_| vec![0.0; dim])],
        )
    }

    /// Single-segment function from closed-form value and derivative.
    pub fn from_fns(
        horizon: f64,
        dim: usize,
        value: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        derivative: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(Grid::trivial(horizon)?, dim, vec![Arc::new(value)], vec![Arc::new(derivative)])
    }

    pub fn grid(&self) -> &Grid {
        self.value.grid()
    }

    pub fn horizon(&self) -> f64 {
        self.value.horizon()
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    pub fn as_piecewise(&self) -> &PiecewiseFn {
        &self.value
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.value.eval(t, Side::Auto)
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        self.value.value_at(t)
    }

    pub fn value_segment(&self, i: usize) -> &SegmentFn {
        self.value.segment(i)
    }

    pub fn derivative_segment(&self, i: usize) -> &SegmentFn {
        &self.derivative[i]
    }

    /// The extended derivative: `x'` off the grid, right derivatives at
    /// `τ₀ … τ_k`, and the left derivative at `T`.
    pub fn extended_derivative(&self) -> PiecewiseFn {
        PiecewiseFn::new(self.value.grid.clone(), self.value.dim, self.derivative.clone())
            .expect("derivative segments validated at construction")
    }

    pub fn on_grid(&self, grid: &Grid) -> Result<PiecewiseC1Fn> {
        let mapping = refinement_map(self.grid(), grid)?;
        PiecewiseC1Fn::new(
            grid.clone(),
            self.dim(),
            mapping.iter().map(|&i| self.value.segments[i].clone()).collect(),
            mapping.iter().map(|&i| self.derivative[i].clone()).collect(),
        )
    }

    /// `a·x + b·y` on the merged grid.
    pub fn linear_combination(a: f64, x: &PiecewiseC1Fn, b: f64, y: &PiecewiseC1Fn) -> Result<PiecewiseC1Fn> {
        if x.dim() != y.dim() {
            return Err(OcError::dim("linear combination", x.dim(), y.dim()));
        }
        let grid = merge_grids(x.grid(), y.grid())?;
        let mut values: Vec<SegmentFn> = Vec::new();
        let mut derivs: Vec<SegmentFn> = Vec::new();
        for j in 0..grid.num_segments() {
            let (lo, hi) = grid.segment_bounds(j);
            let ix = x.grid().containing_segment(lo, hi);
            let iy = y.grid().containing_segment(lo, hi);
            let (xv, yv) = (x.value.segments[ix].clone(), y.value.segments[iy].clone());
            let (xd, yd) = (x.derivative[ix].clone(), y.derivative[iy].clone());
            values.push(Arc::new(move |t| lin(a, &xv(t), b, &yv(t))));
            derivs.push(Arc::new(move |t| lin(a, &xd(t), b, &yd(t))));
        }
        PiecewiseC1Fn::new(grid, x.dim(), values, derivs)
    }
}

pub(crate) fn lin(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

pub(crate) fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p - q).collect()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Folding from +0.0 keeps the empty product +0.0 (`sum` gives −0.0).
    x.iter().zip(y).fold(0.0, |acc, (p, q)| acc + p * q)
}
