//! Problem files (JSON or TOML).
//!
//! A file either names a builtin (`builtin = "steering"`, or a builtin name in
//! `f0`) or defines the problem with expressions:
//!
//! ```toml
//! state_dim = 1
//! control_dim = 1
//! param_dim = 1
//! horizon = 1.0
//! xi0 = [0.0]
//! f0 = "-(u1^2)/2"
//! f = ["u1"]
//! g = []              # g0, g1, ..., gm; empty means g0 = 0, m = 0
//! h = ["x1 - p1"]
//! control_box = { lower = [-5.0], upper = [5.0] }   # omit for an open set
//! deriv_mode = "dual-ad"                          # or "central-fd", "analytic"
//! ```
//!
//! Optional run settings: `pi`, `dpi`, `control` (one expression in `t` and
//! `p<i>` per control component, or `{ breakpoints, values }` steps),
//! `guess` (`{ p0, mu }` for shooting), `spikes` (`[{ time, value }]`) and
//! `amplitudes` (one amplitude vector per level). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builtins::{self, BUILTIN_NAMES};
use crate::error::{OcError, Result};
use crate::exprdiff::{bind_problem, parse, ExprDims, ExprSources, Point, Scope};
use crate::flow::SpikeList;
use crate::piecewise::{Grid, PiecewiseFn};
use crate::problem::{BolzaProblem, ControlSet, DerivMode, InitialState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSpec {
    Exprs(Vec<String>),
    Steps { breakpoints: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    pub time: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootingGuess {
    #[serde(default)]
    pub p0: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: Option<String>,
    pub builtin: Option<String>,
    pub state_dim: Option<usize>,
    pub control_dim: Option<usize>,
    pub param_dim: Option<usize>,
    pub horizon: Option<f64>,
    pub xi0: Option<Vec<f64>>,
    pub f0: Option<String>,
    pub f: Option<Vec<String>>,
    pub g: Option<Vec<String>>,
    pub h: Option<Vec<String>>,
    pub control_box: Option<BoxBounds>,
    /// Half-width of the search cube used by maximum-principle scans when
    /// the control set is open.
    pub scan_radius: Option<f64>,
    pub deriv_mode: Option<DerivMode>,
    pub pi: Option<Vec<f64>>,
    pub dpi: Option<Vec<f64>>,
    pub control: Option<ControlSpec>,
    pub guess: Option<ShootingGuess>,
    pub spikes: Option<Vec<SpikeSpec>>,
    pub amplitudes: Option<Vec<Vec<f64>>>,
}

impl ProblemFile {
    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| OcError::Config(format!("invalid JSON problem file: {e}")))
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| OcError::Config(format!("invalid TOML problem file: {e}")))
    }

    /// Reads a file; `.toml` files are TOML, everything else JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| OcError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&src)
        } else {
            Self::from_json(&src)
        }
    }

    /// The builtin the file refers to, if any.
    pub fn builtin_name(&self) -> Option<&str> {
        self.builtin
            .as_deref()
            .or_else(|| self.f0.as_deref().filter(|s| BUILTIN_NAMES.contains(&s.trim())).map(str::trim))
    }

    /// Builds the problem described by the file.
    pub fn problem(&self) -> Result<BolzaProblem> {
        let mut problem = match self.builtin_name() {
            Some(name) => self.builtin_problem(name)?,
            None => self.expression_problem()?,
        };
        if let Some(r) = self.scan_radius {
            if !(r > 0.0) {
                return Err(OcError::Config("scan_radius must be positive".into()));
            }
            if let ControlSet::Open { scan_radius } = &mut problem.control_set {
                *scan_radius = r;
            }
        }
        Ok(problem)
    }

    fn builtin_problem(&self, name: &str) -> Result<BolzaProblem> {
        let extra = [
            ("state_dim", self.state_dim.is_some()),
            ("control_dim", self.control_dim.is_some()),
            ("param_dim", self.param_dim.is_some()),
            ("f", self.f.is_some()),
            ("g", self.g.is_some()),
            ("h", self.h.is_some()),
            ("control_box", self.control_box.is_some()),
            ("deriv_mode", self.deriv_mode.is_some()),
            ("name", self.name.is_some()),
        ];
        if let Some((key, _)) = extra.iter().find(|(_, set)| *set) {
            return Err(OcError::Config(format!("`{key}` cannot be combined with builtin `{name}`")));
        }
        if self.builtin.is_some() && self.f0.is_some() {
            return Err(OcError::Config(format!("`f0` cannot be combined with builtin `{name}`")));
        }
        let mut problem = builtins::by_name(name)?;
        if let Some(t) = self.horizon {
            check_horizon(t)?;
            problem.horizon = t;
        }
        if let Some(xi0) = &self.xi0 {
            if xi0.len() != problem.dims().state {
                return Err(OcError::Config(format!(
                    "xi0 has {} entries but `{name}` has state dimension {}",
                    xi0.len(),
                    problem.dims().state
                )));
            }
            problem.initial = InitialState::Fixed(xi0.clone());
        }
        Ok(problem)
    }

    fn expression_problem(&self) -> Result<BolzaProblem> {
        let missing = |k: &str| OcError::Config(format!("missing required key `{k}`"));
        let dims = ExprDims {
            state: self.state_dim.ok_or_else(|| missing("state_dim"))?,
            control: self.control_dim.ok_or_else(|| missing("control_dim"))?,
            param: self.param_dim.unwrap_or(0),
        };
        let horizon = self.horizon.ok_or_else(|| missing("horizon"))?;
        check_horizon(horizon)?;
        let src = ExprSources {
            f0: self.f0.clone().ok_or_else(|| missing("f0"))?,
            f: self.f.clone().ok_or_else(|| missing("f"))?,
            g: self.g.clone().unwrap_or_default(),
            h: self.h.clone().unwrap_or_default(),
        };
        let control_set = match &self.control_box {
            Some(b) => {
                if b.lower.iter().zip(&b.upper).any(|(a, c)| a > c) {
                    return Err(OcError::Config("control_box lower bound exceeds upper bound".into()));
                }
                ControlSet::Box {
                    lower: b.lower.clone(),
                    upper: b.upper.clone(),
                }
            }
            None => ControlSet::open(),
        };
        let xi0 = self.xi0.clone().ok_or_else(|| missing("xi0"))?;
        bind_problem(
            self.name.as_deref().unwrap_or("expr"),
            &src,
            dims,
            horizon,
            xi0,
            control_set,
            self.deriv_mode.unwrap_or(DerivMode::DualAd),
        )
    }

    /// `pi` from the file, or zeros.
    pub fn parameter(&self, problem: &BolzaProblem) -> Result<Vec<f64>> {
        let np = problem.dims().param;
        let pi = self.pi.clone().unwrap_or_else(|| vec![0.0; np]);
        check_len("pi", &pi, np)?;
        Ok(pi)
    }

    /// `dpi` from the file, or the first unit vector (empty without
    /// parameters).
    pub fn direction(&self, problem: &BolzaProblem) -> Result<Vec<f64>> {
        let np = problem.dims().param;
        let dpi = self.dpi.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; np];
            if let Some(first) = e.first_mut() {
                *first = 1.0;
            }
            e
        });
        check_len("dpi", &dpi, np)?;
        Ok(dpi)
    }

    /// The candidate control, if the file gives one.
    pub fn candidate_control(&self, problem: &BolzaProblem, pi: &[f64]) -> Result<Option<PiecewiseFn>> {
        let Some(spec) = &self.control else {
            return Ok(None);
        };
        let mu = problem.dims().control;
        let horizon = problem.horizon;
        let u = match spec {
            ControlSpec::Exprs(srcs) => {
                if srcs.len() != mu {
                    return Err(OcError::Config(format!("control has {} expressions, expected {mu}", srcs.len())));
                }
                let scope = Scope::running(0, 0, pi.len());
                let exprs = srcs
                    .iter()
                    .map(|s| parse(s, &scope).map_err(|e| OcError::Config(format!("control: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let pi = pi.to_vec();
                let at = |t| Point { t, x: &[], u: &[], p: &pi };
                for e in &exprs {
                    e.eval(&at(0.0), None).map_err(|e| OcError::Config(format!("control: {e}")))?;
                }
                let pi = pi.clone();
                PiecewiseFn::from_fn(horizon, mu, move |t| {
                    let at = Point { t, x: &[], u: &[], p: &pi };
                    exprs.iter().map(|e| e.eval(&at, None).unwrap_or(f64::NAN)).collect()
                })?
            }
            ControlSpec::Steps { breakpoints, values } => {
                let grid = Grid::with_interior(horizon, breakpoints).map_err(|e| OcError::Config(format!("control: {e}")))?;
                if values.iter().any(|v| v.len() != mu) {
                    return Err(OcError::Config(format!("control step values must have {mu} entries")));
                }
                PiecewiseFn::step(grid, values.clone()).map_err(|e| OcError::Config(format!("control: {e}")))?
            }
        };
        Ok(Some(u))
    }

    pub fn shooting_guess(&self, problem: &BolzaProblem) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = problem.dims();
        let g = self.guess.clone().unwrap_or_default();
        let p0 = if g.p0.is_empty() { vec![0.0; d.state] } else { g.p0 };
        let mu = if g.mu.is_empty() { vec![0.0; d.equalities] } else { g.mu };
        check_len("guess.p0", &p0, d.state)?;
        check_len("guess.mu", &mu, d.equalities)?;
        Ok((p0, mu))
    }

    pub fn spike_list(&self, problem: &BolzaProblem) -> Result<SpikeList> {
        let spikes = self
            .spikes
            .as_ref()
            .ok_or_else(|| OcError::Config("needle study needs `spikes`".into()))?;
        SpikeList::new(
            spikes.iter().map(|s| (s.time, s.value.clone())).collect(),
            problem.horizon,
            &problem.control_set,
        )
        .map_err(|e| OcError::Config(format!("spikes: {e}")))
    }

    /// Amplitude levels from the file, or six geometric levels with ratio
    /// 1/16 spread evenly over the spikes.
    pub fn amplitude_levels(&self, spikes: &SpikeList) -> Result<Vec<Vec<f64>>> {
        if let Some(levels) = &self.amplitudes {
            for a in levels {
                check_len("amplitudes", a, spikes.len())?;
            }
            return Ok(levels.clone());
        }
        let base = (0.5 * spikes.delta()).min(0.06 * spikes.horizon());
        let n = spikes.len() as f64;
        Ok((0..6)
            .map(|k| vec![base * 16f64.powi(-k) / n; spikes.len()])
            .collect())
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(OcError::Config(format!("horizon must be positive and finite, got {t}")))
    }
}

fn check_len(key: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(OcError::Config(format!("`{key}` has {} entries, expected {expected}", v.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_by_key_and_by_f0() {
        let a = ProblemFile::from_json(r#"{"builtin": "steering", "pi": [1.0]}"#).unwrap();
        assert_eq!(a.problem().unwrap().name, "steering");
        let b = ProblemFile::from_toml("f0 = \"constant_drift\"").unwrap();
        assert_eq!(b.problem().unwrap().name, "constant_drift");
    }

    #[test]
    fn expression_file_toml() {
        let src = r#"
state_dim = 1
control_dim = 1
param_dim = 1
horizon = 1.0
xi0 = [0.0]
f0 = "-(u1^2)/2"
f = ["u1"]
h = ["x1 - p1"]
control = ["p1"]
"#;
        let file = ProblemFile::from_toml(src).unwrap();
        let p = file.problem().unwrap();
        assert_eq!(p.dims().equalities, 1);
        assert_eq!(p.model.deriv_mode(), DerivMode::DualAd);
        let u = file.candidate_control(&p, &[0.7]).unwrap().unwrap();
        assert_eq!(u.value_at(0.3), vec![0.7]);
    }

    #[test]
    fn rejects_unknown_and_conflicting_keys() {
        assert!(matches!(
            ProblemFile::from_json(r#"{"builtin": "steering", "horizn": 1}"#),
            Err(OcError::Config(_))
        ));
        let f = ProblemFile::from_json(r#"{"builtin": "steering", "f": ["u1"]}"#).unwrap();
        assert!(matches!(f.problem(), Err(OcError::Config(_))));
        let f = ProblemFile::from_json(r#"{"builtin": "nope"}"#).unwrap();
        assert!(matches!(f.problem(), Err(OcError::Config(_))));
        let f = ProblemFile::from_json(r#"{"state_dim": 1, "control_dim": 1, "horizon": 1, "xi0": [0], "f0": "u2", "f": ["u1"]}"#).unwrap();
        assert!(matches!(f.problem(), Err(OcError::Config(_))));
    }

    #[test]
    fn default_amplitude_levels() {
        let f = ProblemFile::from_json(
            r#"{"builtin": "lq_scalar", "spikes": [{"time": 0.2, "value": [1]}, {"time": 0.5, "value": [-1]}, {"time": 0.7, "value": [0.5]}]}"#,
        )
        .unwrap();
        let p = f.problem().unwrap();
        let levels = f.amplitude_levels(&f.spike_list(&p).unwrap()).unwrap();
        assert_eq!(levels.len(), 6);
        let total: f64 = levels[0].iter().sum();
        assert!((total - 0.06).abs() < 1e-15);
    }
}
