use std::path::Path;

use octool_core::config::ProblemFile;
use octool_core::envelope::{
    adjoint_continuity_scan, envelope_directional, frechet_continuity_check, multiplier_continuity_scan, value_fd_oracle,
    AnalyticFamily, ContinuityScan, ScanOptions, ShootingFamily, SolutionFamily,
};
use octool_core::flow::{expansion_residual_study, first_order_map, simulate as simulate_process, SpikeList};
use octool_core::pmp::{shooting_solve, verify_certificate, CertificateInputs, ShootingOptions, ShootingResult};
use octool_core::problem::{criterion, validate_process};
use octool_core::{BolzaProblem, OcError, Process};
use serde_json::{json, Value};

use crate::output::{csv_rows, emit, header, names};
use crate::{Common, EnvelopeArgs, Failure, NeedleArgs};

const SAMPLES_PER_SEGMENT: usize = 16;
const FD_STEPS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

struct Loaded {
    file: ProblemFile,
    problem: BolzaProblem,
    pi: Vec<f64>,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let file = ProblemFile::load(&common.problem)?;
    let problem = file.problem()?;
    let pi = match &common.pi {
        Some(pi) => {
            let np = problem.dims().param;
            if pi.len() != np {
                return Err(OcError::Config(format!("--pi has {} entries, expected {np}", pi.len())).into());
            }
            pi.clone()
        }
        None => file.parameter(&problem)?,
    };
    Ok(Loaded { file, problem, pi })
}

fn shooting_options(common: &Common) -> ShootingOptions {
    let mut opts = ShootingOptions::default();
    if let Some(tol) = common.tol {
        opts.tol = tol;
    }
    opts
}

fn shoot_from(l: &Loaded, common: &Common) -> Result<ShootingResult, Failure> {
    let (p0, mu) = l.file.shooting_guess(&l.problem)?;
    Ok(shooting_solve(&l.problem, &l.pi, (&p0, &mu), &shooting_options(common))?)
}

/// The process to work on: the file's control if it has one, otherwise the
/// shooting solution.
fn candidate(l: &Loaded, common: &Common) -> Result<(Process, Option<ShootingResult>), Failure> {
    match l.file.candidate_control(&l.problem, &l.pi)? {
        Some(u) => Ok((simulate_process(&l.problem, &u, &l.pi)?, None)),
        None => {
            let r = shoot_from(l, common)?;
            Ok((r.process.clone(), Some(r)))
        }
    }
}

fn trajectory_csv(problem: &BolzaProblem, proc: &Process) -> Result<String, Failure> {
    let d = problem.dims();
    let (grid, _) = proc.segments()?;
    let mut head = vec!["t".to_string()];
    head.extend(names("x", d.state));
    head.extend(names("u", d.control));
    let rows = grid.sample_times(SAMPLES_PER_SEGMENT).into_iter().map(|t| {
        let mut r = vec![t];
        r.extend(proc.x.value_at(t));
        r.extend(proc.u.value_at(t));
        r
    });
    Ok(csv_rows(&head, rows))
}

fn trajectory_json(proc: &Process) -> Result<Value, Failure> {
    let (grid, _) = proc.segments()?;
    let samples: Vec<Value> = grid
        .sample_times(SAMPLES_PER_SEGMENT)
        .into_iter()
        .map(|t| json!({"t": t, "x": proc.x.value_at(t), "u": proc.u.value_at(t)}))
        .collect();
    Ok(json!({"breakpoints": grid.breakpoints(), "samples": samples}))
}

pub fn simulate(common: &Common) -> Result<u8, Failure> {
    let l = load(common)?;
    let (proc, shot) = candidate(&l, common)?;
    let j = criterion(&l.problem, &proc)?;
    let feas = validate_process(&l.problem, &proc, l.problem.feasibility_tol)?;
    let mut rep = header("simulate", common, &l.problem, &l.pi, json!({}));
    rep.insert("control_source".into(), json!(if shot.is_some() { "shooting" } else { "file" }));
    rep.insert("criterion".into(), json!(j));
    rep.insert("feasibility".into(), json!(feas));
    rep.insert("trajectory".into(), trajectory_json(&proc)?);
    emit(common, rep, vec![("trajectory.csv", trajectory_csv(&l.problem, &proc)?)])?;
    Ok(0)
}

pub fn verify(common: &Common) -> Result<u8, Failure> {
    let l = load(common)?;
    let (proc, shot) = candidate(&l, common)?;
    let mut inputs = CertificateInputs {
        seed: common.seed,
        ..CertificateInputs::default()
    };
    if let Some(tol) = common.tol {
        inputs.tol = tol;
    }
    if let Some(r) = &shot {
        inputs.multipliers = Some(r.multipliers.clone());
        inputs.adjoint = Some(r.adjoint.clone());
    }
    let cert = verify_certificate(&l.problem, &proc, &inputs);
    let code = cert.exit_code();
    let mut rep = header("verify", common, &l.problem, &l.pi, json!({"certificate_tol": inputs.tol}));
    rep.insert("control_source".into(), json!(if shot.is_some() { "shooting" } else { "file" }));
    rep.insert("criterion".into(), json!(criterion(&l.problem, &proc).ok()));
    rep.insert("exit_code".into(), json!(code));
    rep.insert("certificate".into(), serde_json::to_value(&cert).expect("certificate serializes"));
    let n = l.problem.dims().state;
    let mut head = vec!["t".to_string()];
    head.extend(names("p", n));
    let adj_csv = csv_rows(
        &head,
        cert.adjoint_samples.iter().map(|(t, p)| std::iter::once(*t).chain(p.iter().copied()).collect()),
    );
    emit(common, rep, vec![("adjoint.csv", adj_csv), ("trajectory.csv", trajectory_csv(&l.problem, &proc)?)])?;
    Ok(code as u8)
}

fn family(l: &Loaded, common: &Common) -> Result<Box<dyn SolutionFamily>, Failure> {
    if l.file.builtin_name().is_some() {
        return Ok(Box::new(AnalyticFamily::builtin(&l.problem)));
    }
    let (p0, mu) = l.file.shooting_guess(&l.problem)?;
    Ok(Box::new(ShootingFamily::new(&l.problem, &l.pi, (&p0, &mu), shooting_options(common))?))
}

fn scan_json(scan: &ContinuityScan) -> Value {
    serde_json::from_str(&scan.to_json()).expect("scan JSON parses")
}

pub fn envelope(args: &EnvelopeArgs) -> Result<u8, Failure> {
    let common = &args.common;
    let l = load(common)?;
    let dpi = match &args.dpi {
        Some(d) => {
            let np = l.problem.dims().param;
            if d.len() != np {
                return Err(OcError::Config(format!("--dpi has {} entries, expected {np}", d.len())).into());
            }
            d.clone()
        }
        None => l.file.direction(&l.problem)?,
    };
    let fam = family(&l, common)?;
    let report = envelope_directional(&l.problem, fam.as_ref(), &l.pi, &dpi)?;
    let table = value_fd_oracle(&l.problem, fam.as_ref(), &l.pi, &dpi, &FD_STEPS)?;
    let mut rep = header("envelope", common, &l.problem, &l.pi, json!({"fd_steps": FD_STEPS}));
    rep.insert("envelope".into(), json!(report));
    rep.insert("fd_table".into(), json!(table));
    rep.insert("fd_order_against_envelope".into(), json!(table.order_against(report.total)));

    let mut csv = vec![(
        "fd_table.csv",
        csv_rows(
            &["h".into(), "forward".into(), "central".into(), "forward_error".into()],
            table.rows.iter().map(|r| {
                let f = r.forward.unwrap_or(f64::NAN);
                vec![r.h, f, r.central.unwrap_or(f64::NAN), (f - report.total).abs()]
            }),
        ),
    )];
    let opts = ScanOptions {
        seed: common.seed,
        ..ScanOptions::default()
    };
    let scans: [(bool, &str, &str, ScanFn); 3] = [
        (args.scan_multipliers, "scan_multipliers", "scan_multipliers.csv", multiplier_continuity_scan),
        (args.scan_adjoint, "scan_adjoint", "scan_adjoint.csv", adjoint_continuity_scan),
        (args.scan_gradient, "scan_gradient", "scan_gradient.csv", frechet_continuity_check),
    ];
    for (on, key, file, f) in scans {
        if on {
            let scan = f(&l.problem, fam.as_ref(), &l.pi, &opts)?;
            rep.insert(key.into(), scan_json(&scan));
            csv.push((file, scan.to_csv()));
        }
    }
    if let Some(path) = &args.needle {
        let spikes = read_spike_file(path, &l.problem)?;
        let proc = fam.solve(&l.pi)?.process;
        let (study, csv_body) = needle_report(&l.problem, &proc, &spikes.0, &spikes.1)?;
        rep.insert("needle_study".into(), study);
        csv.push(("needle_residuals.csv", csv_body));
    }
    emit(common, rep, csv)?;
    Ok(0)
}

type ScanFn = fn(&BolzaProblem, &dyn SolutionFamily, &[f64], &ScanOptions) -> octool_core::Result<ContinuityScan>;

/// Reads the `spikes` and `amplitudes` keys of a spike file (same formats as
/// problem files).
fn read_spike_file(path: &Path, problem: &BolzaProblem) -> Result<(SpikeList, Vec<Vec<f64>>), Failure> {
    let file = ProblemFile::load(path)?;
    let list = file.spike_list(problem)?;
    let levels = file.amplitude_levels(&list)?;
    Ok((list, levels))
}

fn needle_report(problem: &BolzaProblem, proc: &Process, spikes: &SpikeList, levels: &[Vec<f64>]) -> Result<(Value, String), Failure> {
    let map = first_order_map(problem, proc, spikes)?;
    let study = expansion_residual_study(problem, proc, spikes, levels)?;
    let columns: Vec<Vec<f64>> = (0..map.ncols()).map(|j| map.column(j).iter().copied().collect()).collect();
    let v = json!({
        "spikes": spikes.spikes(),
        "delta": if spikes.delta().is_finite() { Some(spikes.delta()) } else { None },
        "first_order_map_columns": columns,
        "study": study,
    });
    Ok((v, study.to_csv()))
}

pub fn needle_study(args: &NeedleArgs) -> Result<u8, Failure> {
    let common = &args.common;
    let l = load(common)?;
    let (spikes, levels) = match &args.needle {
        Some(path) => read_spike_file(path, &l.problem)?,
        None => {
            let s = l.file.spike_list(&l.problem)?;
            let levels = l.file.amplitude_levels(&s)?;
            (s, levels)
        }
    };
    let (proc, shot) = candidate(&l, common)?;
    let (study, csv_body) = needle_report(&l.problem, &proc, &spikes, &levels)?;
    let mut rep = header("needle-study", common, &l.problem, &l.pi, json!({}));
    rep.insert("control_source".into(), json!(if shot.is_some() { "shooting" } else { "file" }));
    rep.insert("needle_study".into(), study);
    emit(common, rep, vec![("needle_residuals.csv", csv_body)])?;
    Ok(0)
}

pub fn shoot(common: &Common) -> Result<u8, Failure> {
    let l = load(common)?;
    let r = shoot_from(&l, common)?;
    let opts = shooting_options(common);
    let mut rep = header("shoot", common, &l.problem, &l.pi, json!({"shooting_tol": opts.tol}));
    rep.insert("iterations".into(), json!(r.iterations));
    rep.insert("residual_history".into(), json!(r.residual_history));
    rep.insert("initial_adjoint".into(), json!(r.adjoint.initial()));
    rep.insert("multipliers".into(), json!(r.multipliers));
    rep.insert("criterion".into(), json!(criterion(&l.problem, &r.process)?));
    rep.insert("trajectory".into(), trajectory_json(&r.process)?);
    emit(common, rep, vec![("trajectory.csv", trajectory_csv(&l.problem, &r.process)?)])?;
    Ok(0)
}
