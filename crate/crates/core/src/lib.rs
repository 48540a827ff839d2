//! Numerical laboratory for complex Monge-Ampère equations on flat tori.
//!
//! The crate solves the elliptic equation `MA_theta(phi) = e^phi f dV` and the
//! parabolic flow `(omega_t + dd^c phi_t)^n = e^{phi_dot + F(t, x, phi)} f dV`
//! with spectral derivatives, builds the explicit barriers used in their
//! stability estimates, and checks those estimates numerically.

pub mod barriers;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod families;
pub mod forcing;
pub mod grid;
pub mod hermitian;
pub mod krylov;
pub mod ma;
pub mod oracles;
pub mod parabolic;
pub mod report;
pub mod spectral;

pub use barriers::{
    elliptic_barrier, parabolic_barrier, uniform_bound_barriers, varying_form_rescale,
    BarrierConstants,
};
pub use elliptic::{
    build_reference_density, default_tolerance, solve_exponential, solve_exponential_with,
    solve_normalized, solve_normalized_compatible, ReferenceDensity, SolveReport, SolverOptions,
};
pub use error::{MaError, Result};
pub use experiments::{
    elliptic_stability_run, interpolation_check, parabolic_stability_run, varying_forms_run,
    verify_barriers, FlowData, PerturbationFamily, PerturbationMode, RandomFlowInstance,
    StabilityReport, StabilityRow,
};
pub use families::FieldSpec;
pub use forcing::ForcingSpec;
pub use grid::{ScalarField, TorusGrid};
pub use hermitian::{form_distance, interpolate_family, HermMat, HermitianForm};
pub use ma::{
    is_theta_psh, lp_norm, ma_density, ma_density_relative, oscillation, positive_part, Density,
    NormalizedVolume,
};
pub use oracles::{
    comparison_elliptic, comparison_parabolic, domination_check, oracle_suite, OracleVerdict, VerdictRow,
};
pub use parabolic::{
    classify_residual, evolve, evolve_until, phi_dot_bound_check, phi_dot_constants, resume,
    FlowCheckpoint, FlowOptions, FlowProblem, FlowTrajectory, FormFamily, PhiDotBoundReport,
    ResidualClass,
};
pub use num_complex::Complex64;
pub use spectral::{complex_hessian, HermitianField};
