//! Maximum-principle machinery: adjoint integration, multipliers,
//! qualification conditions, certificates and indirect shooting.

mod adjoint;
mod certificate;
mod multipliers;
mod qualification;
mod shooting;

pub use adjoint::{adjoint_backward, adjoint_residual, AdjointPath, COLLOCATION_SAMPLES};
pub use certificate::{
    control_stationarity, nonvanishing_scan, verify_certificate, CertificateInputs, ConditionCheck, NonvanishingMode,
    NonvanishingReport, PmpCertificate, Verdict, MP_GRID_POINTS, MP_MULTISTARTS, NONVANISHING_SAMPLES, TIME_SAMPLES,
};
pub use multipliers::{
    compute_multipliers, solve_multipliers_li, solve_multipliers_li_with, solve_multipliers_sphere, transversality_covector,
    Multipliers, Regime, MULTIPLIER_TOL, RANK_TOL,
};
pub use qualification::{check_qualification, nnls, surjectivity_scan, QualificationMode, QualificationReport, ACTIVE_TOL};
pub use shooting::{recover_control, shooting_solve, ShootingOptions, ShootingResult};
