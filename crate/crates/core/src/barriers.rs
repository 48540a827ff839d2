//! Explicit sub- and supersolutions built from known solutions.

use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};
use crate::forcing::ForcingSpec;
use crate::grid::ScalarField;
use crate::parabolic::{FlowStats, FlowTrajectory};

const LOG2: f64 = std::f64::consts::LN_2;

/// Constants of the barrier constructions, serialized next to experiment
/// manifests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstants {
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "B")]
    pub b: f64,
    /// `sup (G - F)_+` over `[0,T] x X x [inf phi, sup phi]`.
    #[serde(rename = "M")]
    pub m: f64,
    /// `sup (G - F)_+` over `[0,T] x X x R`; may be infinite.
    #[serde(rename = "M_all_r", with = "extended_real")]
    pub m_all_r: f64,
    #[serde(rename = "M0")]
    pub big_m0: f64,
    #[serde(rename = "M1")]
    pub big_m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "N")]
    pub n_level: f64,
    pub m0: f64,
    pub m1: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    pub a_lower: f64,
    #[serde(rename = "A_upper")]
    pub a_upper: f64,
    /// Observed `sup |rho|` of the auxiliary solution.
    pub rho_sup: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
}

/// JSON has no infinity; store it as `null`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn check_reference(rho: &ScalarField) -> Result<()> {
    let top = rho.max();
    if top.abs() > 1e-12 {
        return Err(MaError::Precondition(format!(
            "auxiliary potential must have sup 0, got {top}"
        )));
    }
    Ok(())
}

/// `phi_eps = (1 - eps) phi + eps rho + eps inf phi + n log(1 - eps)`.
pub fn elliptic_barrier(phi: &ScalarField, rho: &ScalarField, eps: f64) -> Result<ScalarField> {
    if !(0.0..1.0).contains(&eps) {
        return Err(MaError::Domain(format!("eps = {eps} must lie in [0, 1)")));
    }
    check_reference(rho)?;
    let n = phi.grid().n_complex() as f64;
    let c2 = -phi.min();
    let shift = -c2 * eps + n * (1.0 - eps).ln();
    phi.zip_map(rho, |p, r| (1.0 - eps) * p + eps * r + shift)
}

/// `eps = (e^{sup phi} ||(g - f)_+||_p / kappa)^{1/n}`, where `kappa` is the
/// volume of the form relative to `dV`.
pub fn elliptic_epsilon(sup_phi: f64, gap_pos_p: f64, n: usize, kappa: f64) -> f64 {
    (sup_phi.exp() * gap_pos_p / kappa).powf(1.0 / n as f64)
}

/// Quantities read off the subsolution trajectory and the two forcings.
#[derive(Debug, Clone, Copy)]
pub struct ParabolicInputs<'a> {
    pub trajectory: &'a FlowTrajectory,
    pub forcing_f: &'a ForcingSpec,
    pub forcing_g: &'a ForcingSpec,
    /// `||(g - f)_+||_p`
    pub gap_pos_p: f64,
    pub t_final: f64,
}

/// Constants `m0, m1, M0, M1, N, M, B, M2, delta` of the parabolic barrier.
///
/// `B = max(L |m0| - m1 + 2n log 2, 0)` and `M2 = N + max(L |M0|, M1)` absorb
/// negative `m0`, `M0`.
pub fn parabolic_constants(inputs: &ParabolicInputs) -> BarrierConstants {
    let traj = inputs.trajectory;
    let n = traj.final_phi().grid().n_complex() as f64;
    let (m0, big_m0) = traj.phi_range();
    let (m1, big_m1) = traj.phi_dot_range();
    let times = (0.0, inputs.t_final);
    let l = inputs.forcing_f.lipschitz().max(inputs.forcing_g.lipschitz());
    let m = inputs.forcing_f.sup_positive_excess(inputs.forcing_g, times, Some((m0, big_m0)));
    let m_all_r = inputs.forcing_f.sup_positive_excess(inputs.forcing_g, times, None);
    let n_level = inputs.forcing_g.sup_at_level(times, big_m0);
    let b = (l * m0.abs() - m1 + 2.0 * n * LOG2).max(0.0);
    let m2 = n_level + (l * big_m0.abs()).max(big_m1);
    let delta = inputs.gap_pos_p.powf(1.0 / n) * (m2 / n).exp();
    BarrierConstants {
        delta,
        b,
        m,
        m_all_r,
        big_m0,
        big_m1,
        m2,
        n_level,
        m0,
        m1,
        ..Default::default()
    }
}

/// `phi_delta(t) = (1 - delta) phi(t) + delta rho + n log(1 - delta) - B delta t - M t`
/// with `phi_dot_delta = (1 - delta) phi_dot - B delta - M`.
pub fn parabolic_barrier(
    trajectory: &FlowTrajectory,
    rho: &ScalarField,
    constants: &BarrierConstants,
) -> Result<FlowTrajectory> {
    let delta = constants.delta;
    if !(delta >= 0.0) {
        return Err(MaError::Domain(format!("delta = {delta} must be non-negative")));
    }
    if delta >= 0.5 {
        return Err(MaError::CoarseBranch { delta });
    }
    check_reference(rho)?;
    let n = rho.grid().n_complex() as f64;
    let (b, m) = (constants.b, constants.m);
    let mut snapshots = Vec::with_capacity(trajectory.len());
    let mut phi_dot = Vec::with_capacity(trajectory.len());
    for ((t, phi), dot) in trajectory.times.iter().zip(&trajectory.snapshots).zip(&trajectory.phi_dot) {
        let shift = n * (1.0 - delta).ln() - b * delta * t - m * t;
        snapshots.push(phi.zip_map(rho, |p, r| (1.0 - delta) * p + delta * r + shift)?);
        phi_dot.push(dot.scale(1.0 - delta).add_scalar(-b * delta - m));
    }
    Ok(FlowTrajectory {
        times: trajectory.times.clone(),
        snapshots,
        phi_dot,
        stats: FlowStats::default(),
    })
}

/// Inputs of the uniform barriers `u <= phi <= v`.
#[derive(Debug, Clone, Copy)]
pub struct UniformInputs<'a> {
    /// Solution of `MA_theta(rho) = C0 f dV`, `sup rho = 0`.
    pub rho: &'a ScalarField,
    pub phi0: &'a ScalarField,
    pub forcing: &'a ForcingSpec,
    /// `(a, A)` with `a theta <= omega_t <= A theta`.
    pub pinching: (f64, f64),
    pub c0: f64,
    pub t_final: f64,
}

/// `u = a rho - C1 - max(C3 - n log a - log C0, 0) t` and
/// `v = A rho + C2 + max(-C4 + n log A + log C0, 0) t`, sampled at `times`,
/// together with the constants used.
pub fn uniform_bound_barriers(
    inputs: &UniformInputs,
    times: &[f64],
) -> Result<(FlowTrajectory, FlowTrajectory, BarrierConstants)> {
    let (a, big_a) = inputs.pinching;
    if !(a > 0.0) || !(big_a >= a) {
        return Err(MaError::Domain(format!("invalid pinching constants ({a}, {big_a})")));
    }
    if !(inputs.c0 > 0.0) {
        return Err(MaError::Domain(format!("C0 = {} must be positive", inputs.c0)));
    }
    check_reference(inputs.rho)?;
    let rho = inputs.rho;
    let phi0 = inputs.phi0;
    let n = rho.grid().n_complex() as f64;
    let c1 = rho.zip_map(phi0, |r, p| a * r - p)?.max();
    let c2 = phi0.zip_map(rho, |p, r| p - big_a * r)?.max();
    let (c4, c3) = inputs.forcing.range_along((0.0, inputs.t_final), phi0);
    let u_rate = (c3 - n * a.ln() - inputs.c0.ln()).max(0.0);
    let v_rate = (-c4 + n * big_a.ln() + inputs.c0.ln()).max(0.0);
    let a_rho = rho.scale(a);
    let big_a_rho = rho.scale(big_a);
    let mut u = FlowTrajectory {
        times: times.to_vec(),
        snapshots: Vec::new(),
        phi_dot: Vec::new(),
        stats: FlowStats::default(),
    };
    let mut v = u.clone();
    for &t in times {
        u.snapshots.push(a_rho.add_scalar(-c1 - u_rate * t));
        u.phi_dot.push(ScalarField::constant(*rho.grid(), -u_rate));
        v.snapshots.push(big_a_rho.add_scalar(c2 + v_rate * t));
        v.phi_dot.push(ScalarField::constant(*rho.grid(), v_rate));
    }
    let constants = BarrierConstants {
        c0: inputs.c0,
        c1,
        c2,
        c3,
        c4,
        a_lower: a,
        a_upper: big_a,
        ..Default::default()
    };
    Ok((u, v, constants))
}

/// `psi_c = (1 - c) psi + n log(1 - c) + c inf psi`.
pub fn varying_form_rescale(psi: &ScalarField, c: f64) -> Result<ScalarField> {
    if !(0.0..=0.5).contains(&c) {
        return Err(MaError::Domain(format!("c = {c} must lie in [0, 1/2]")));
    }
    let n = psi.grid().n_complex() as f64;
    let shift = n * (1.0 - c).ln() + c * psi.min();
    Ok(psi.scale(1.0 - c).add_scalar(shift))
}

/// Smallest `c >= 0` with `(1 - c) omega <= theta`.
pub fn rescale_parameter(
    omega: &crate::hermitian::HermitianForm,
    theta: &crate::hermitian::HermitianForm,
) -> f64 {
    (1.0 - theta.relative_eigenvalues(omega)[0]).max(0.0)
}
