//! Method-of-lines integration of the flow
//! `phi_dot = log(det(g_t + H(phi)) / det(g_ref)) - log f - F(t, x, phi)`.
//!
//! Time stepping uses the Bogacki-Shampine 3(2) pair with a PI step-size
//! controller. Steps land exactly on snapshot times, and `phi_dot` is stored
//! from the right-hand side at each snapshot rather than differenced.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MaError, Result};
use crate::forcing::ForcingSpec;
use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::{family_derivative_bound, interpolate_family, HermitianForm};
use crate::ma::Density;
use crate::spectral::{hessian_at, Spectral};

/// Relative slack accepted when checking `reference <= omega`.
const ORDER_SLACK: f64 = 1e-12;

/// `omega_t`, linear in `t` on `[0, duration]` and constant afterwards, with
/// a fixed reference form `theta <= omega_t` defining `dV`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormFamily {
    start: HermitianForm,
    end: HermitianForm,
    duration: f64,
    reference: HermitianForm,
}

impl FormFamily {
    pub fn constant(theta: HermitianForm) -> Self {
        Self {
            start: theta,
            end: theta,
            duration: 1.0,
            reference: theta,
        }
    }

    /// Constant family `omega` with volume taken from `reference`.
    pub fn constant_over(omega: HermitianForm, reference: HermitianForm) -> Result<Self> {
        Self::linear(omega, omega, 1.0, reference)
    }

    pub fn linear(
        start: HermitianForm,
        end: HermitianForm,
        duration: f64,
        reference: HermitianForm,
    ) -> Result<Self> {
        if start.n() != end.n() || start.n() != reference.n() {
            return Err(MaError::Domain("family forms have different dimensions".into()));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(MaError::Domain(format!("family duration {duration} must be positive")));
        }
        for form in [&start, &end] {
            let lo = form.relative_eigenvalues(&reference)[0];
            if lo < 1.0 - ORDER_SLACK {
                return Err(MaError::Domain(format!(
                    "reference form is not below the family (relative eigenvalue {lo})"
                )));
            }
        }
        Ok(Self {
            start,
            end,
            duration,
            reference,
        })
    }

    pub fn n(&self) -> usize {
        self.reference.n()
    }

    pub fn reference(&self) -> &HermitianForm {
        &self.reference
    }

    pub fn start(&self) -> &HermitianForm {
        &self.start
    }

    pub fn end(&self) -> &HermitianForm {
        &self.end
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn is_constant(&self) -> bool {
        self.start == self.end
    }

    pub fn at(&self, t: f64) -> HermitianForm {
        if self.is_constant() {
            return self.start;
        }
        let s = (t / self.duration).clamp(0.0, 1.0);
        interpolate_family(&self.start, &self.end, s).expect("convex combination of positive forms")
    }

    /// `(a, A)` with `a theta <= omega_t <= A theta`. The extremes of the
    /// relative eigenvalues along a segment sit at its endpoints.
    pub fn pinching(&self) -> (f64, f64) {
        let mut a = f64::INFINITY;
        let mut big_a: f64 = 0.0;
        for form in [&self.start, &self.end] {
            let ev = form.relative_eigenvalues(&self.reference);
            a = a.min(ev[0]);
            big_a = big_a.max(ev[self.n() - 1]);
        }
        (a, big_a)
    }

    /// Smallest `B` with `-B omega_t <= d/dt omega_t <= B omega_t`.
    pub fn derivative_bound(&self) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        family_derivative_bound(&self.start, &self.end, self.duration).expect("validated family")
    }
}

/// Data `(omega_t, F, f)` of one flow.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub family: FormFamily,
    pub forcing: ForcingSpec,
    pub f: Density,
}

impl FlowProblem {
    pub fn new(family: FormFamily, forcing: ForcingSpec, f: Density) -> Result<Self> {
        forcing.validate()?;
        if family.n() != f.grid().n_complex() {
            return Err(MaError::Domain("family and density dimensions differ".into()));
        }
        Ok(Self { family, forcing, f })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.f.grid()
    }

    /// Right-hand side of the flow, `None` if `omega_t + dd^c phi` fails to
    /// be positive definite somewhere.
    fn rhs(&self, spectral: &Spectral, log_f: &[f64], t: f64, phi: &[f64]) -> Option<Vec<f64>> {
        let comps = spectral.hessian_components(phi);
        let g = *self.family.at(t).matrix();
        let inv_ref = 1.0 / self.family.reference().det();
        let c = self.forcing.coefficients();
        let grid = self.grid();
        let base = c.beta * t + c.gamma;
        let mut out = Vec::with_capacity(phi.len());
        for i in 0..phi.len() {
            let a = g.add(&hessian_at(&comps, i));
            if !(a.min_eigenvalue() > 0.0) {
                return None;
            }
            let mut forcing = c.alpha * phi[i] + base;
            if c.sigma != 0.0 {
                forcing += c.sigma * (std::f64::consts::TAU * grid.position(i, 0)).sin();
            }
            out.push((a.det() * inv_ref).ln() - log_f[i] - forcing);
        }
        Some(out)
    }

    /// Pointwise `(LHS - RHS, RHS - LHS)` minima of the equation at one time,
    /// with `LHS = det(g_t + H(phi)) / det(g_ref)` and
    /// `RHS = exp(phi_dot + F(t, x, phi)) f`. `None` if `phi` is not
    /// `omega_t`-psh.
    pub fn residual_margins(&self, t: f64, phi: &ScalarField, phi_dot: &ScalarField) -> Result<Option<(f64, f64)>> {
        phi.check_same_grid(self.f.field())?;
        phi_dot.check_same_grid(self.f.field())?;
        let spectral = Spectral::for_grid(self.grid());
        let comps = spectral.hessian_components(phi.values());
        let g = *self.family.at(t).matrix();
        let inv_ref = 1.0 / self.family.reference().det();
        let forcing = self.forcing.eval_field(t, phi);
        let f = self.f.field().values();
        let mut sub = f64::INFINITY;
        let mut sup = f64::INFINITY;
        for i in 0..phi.values().len() {
            let a = g.add(&hessian_at(&comps, i));
            if a.min_eigenvalue() < -crate::ma::MATRIX_ORDER_TOL {
                return Ok(None);
            }
            let lhs = a.det() * inv_ref;
            let rhs = (phi_dot.values()[i] + forcing[i]).exp() * f[i];
            sub = sub.min(lhs - rhs);
            sup = sup.min(rhs - lhs);
        }
        Ok(Some((sub, sup)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualClass {
    Subsolution,
    Supersolution,
    Solution,
    Neither,
}

/// Compares both sides of the equation pointwise with absolute tolerance `tol`.
pub fn classify_residual(
    problem: &FlowProblem,
    t: f64,
    phi: &ScalarField,
    phi_dot: &ScalarField,
    tol: f64,
) -> Result<ResidualClass> {
    let Some((sub, sup)) = problem.residual_margins(t, phi, phi_dot)? else {
        return Ok(ResidualClass::Neither);
    };
    Ok(match (sub >= -tol, sup >= -tol) {
        (true, true) => ResidualClass::Solution,
        (true, false) => ResidualClass::Subsolution,
        (false, true) => ResidualClass::Supersolution,
        (false, false) => ResidualClass::Neither,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowOptions {
    pub t_final: f64,
    /// Initial step.
    pub dt: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Number of snapshot intervals; snapshots sit at `t_final * k / snapshots`.
    pub snapshots: usize,
    pub max_steps: usize,
}

impl FlowOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            dt_max: t_final,
            dt_min: 1e-12,
            rtol: 1e-7,
            atol: 1e-9,
            snapshots: 100,
            max_steps: 5_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.t_final) {
            return Err(MaError::Domain(format!("final time {} must be positive", self.t_final)));
        }
        if !positive(self.dt) || !positive(self.dt_max) || !positive(self.dt_min) {
            return Err(MaError::Domain("time steps must be positive".into()));
        }
        if !positive(self.rtol) || !positive(self.atol) {
            return Err(MaError::Domain("integration tolerances must be positive".into()));
        }
        if self.snapshots == 0 {
            return Err(MaError::Domain("at least one snapshot interval is required".into()));
        }
        Ok(())
    }

    pub fn snapshot_time(&self, k: usize) -> f64 {
        if k == self.snapshots {
            self.t_final
        } else {
            self.t_final * (k as f64 / self.snapshots as f64)
        }
    }

    fn snapshot_index(&self, t: f64) -> Option<usize> {
        let k = (t / self.t_final * self.snapshots as f64).round();
        if k < 0.0 || k > self.snapshots as f64 {
            return None;
        }
        let k = k as usize;
        (self.snapshot_time(k) == t).then_some(k)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStats {
    pub accepted: usize,
    pub rejected: usize,
    pub positivity_rejections: usize,
    pub rhs_evaluations: usize,
}

/// Snapshots of `phi_t` and `phi_dot_t` at increasing times.
#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
    pub phi_dot: Vec<ScalarField>,
    pub stats: FlowStats,
}

impl FlowTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_phi(&self) -> &ScalarField {
        self.snapshots.last().expect("trajectory has snapshots")
    }

    /// `(inf, sup)` of `phi` over all snapshots.
    pub fn phi_range(&self) -> (f64, f64) {
        range_of(&self.snapshots)
    }

    /// `(inf, sup)` of `phi_dot` over all snapshots.
    pub fn phi_dot_range(&self) -> (f64, f64) {
        range_of(&self.phi_dot)
    }

    /// Writes a manifest with times and SHA-256 digests plus one MAFLD1 file
    /// per snapshot field.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (k, ((t, phi), dot)) in self.times.iter().zip(&self.snapshots).zip(&self.phi_dot).enumerate() {
            let phi_name = format!("phi_{k:05}.mafld");
            let dot_name = format!("phi_dot_{k:05}.mafld");
            let phi_bytes = phi.to_mafld1();
            let dot_bytes = dot.to_mafld1();
            fs::write(dir.join(&phi_name), &phi_bytes)?;
            fs::write(dir.join(&dot_name), &dot_bytes)?;
            entries.push(SnapshotEntry {
                time: *t,
                phi: phi_name,
                phi_sha256: hex::encode(Sha256::digest(&phi_bytes)),
                phi_dot: dot_name,
                phi_dot_sha256: hex::encode(Sha256::digest(&dot_bytes)),
            });
        }
        let grid = self.final_phi().grid();
        let manifest = TrajectoryManifest {
            n: grid.n_complex(),
            res: grid.resolution(),
            times: self.times.clone(),
            snapshots: entries,
            stats: self.stats,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads a directory written by [`FlowTrajectory::write_dir`], checking
    /// every digest.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: TrajectoryManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let load = |name: &str, digest: &str| -> Result<ScalarField> {
            let bytes = fs::read(dir.join(name))?;
            if hex::encode(Sha256::digest(&bytes)) != digest {
                return Err(MaError::Format(format!("digest mismatch for {name}")));
            }
            ScalarField::from_mafld1(&bytes)
        };
        let mut snapshots = Vec::new();
        let mut phi_dot = Vec::new();
        for e in &manifest.snapshots {
            snapshots.push(load(&e.phi, &e.phi_sha256)?);
            phi_dot.push(load(&e.phi_dot, &e.phi_dot_sha256)?);
        }
        let times: Vec<f64> = manifest.snapshots.iter().map(|e| e.time).collect();
        if times != manifest.times {
            return Err(MaError::Format("manifest times disagree with snapshot entries".into()));
        }
        Ok(Self {
            times,
            snapshots,
            phi_dot,
            stats: manifest.stats,
        })
    }
}

fn range_of(fields: &[ScalarField]) -> (f64, f64) {
    fields.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
        (lo.min(f.min()), hi.max(f.max()))
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotEntry {
    time: f64,
    phi: String,
    phi_sha256: String,
    phi_dot: String,
    phi_dot_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryManifest {
    n: usize,
    res: usize,
    times: Vec<f64>,
    snapshots: Vec<SnapshotEntry>,
    stats: FlowStats,
}

/// Full integrator state; resuming from it reproduces the uninterrupted run.
#[derive(Debug, Clone)]
pub struct FlowCheckpoint {
    pub t: f64,
    pub phi: ScalarField,
    pub phi_dot: ScalarField,
    pub dt_next: f64,
    pub err_prev: f64,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trajectory: FlowTrajectory,
    pub checkpoint: FlowCheckpoint,
}

/// Integrates from `phi0` at `t = 0` to `opts.t_final`.
pub fn evolve(problem: &FlowProblem, phi0: &ScalarField, opts: &FlowOptions) -> Result<FlowTrajectory> {
    Ok(evolve_until(problem, phi0, opts, opts.t_final)?.trajectory)
}

/// Integrates from `t = 0` to the snapshot time `t_stop`.
pub fn evolve_until(
    problem: &FlowProblem,
    phi0: &ScalarField,
    opts: &FlowOptions,
    t_stop: f64,
) -> Result<FlowRun> {
    opts.validate()?;
    phi0.check_same_grid(problem.f.field())?;
    let spectral = Spectral::for_grid(problem.grid());
    let log_f = problem.f.log_values();
    let k1 = problem.rhs(&spectral, &log_f, 0.0, phi0.values()).ok_or_else(|| {
        MaError::Positivity("initial potential is not strictly psh for omega_0".into())
    })?;
    let state = State {
        t: 0.0,
        y: phi0.values().to_vec(),
        k1,
        dt_next: opts.dt.min(opts.dt_max),
        err_prev: 1.0,
    };
    integrate(problem, &spectral, &log_f, state, opts, t_stop, 1)
}

/// Continues a run from `checkpoint` to the snapshot time `t_stop`, with the
/// same options as the run that produced the checkpoint.
pub fn resume(
    problem: &FlowProblem,
    checkpoint: &FlowCheckpoint,
    opts: &FlowOptions,
    t_stop: f64,
) -> Result<FlowRun> {
    opts.validate()?;
    checkpoint.phi.check_same_grid(problem.f.field())?;
    let spectral = Spectral::for_grid(problem.grid());
    let log_f = problem.f.log_values();
    let state = State {
        t: checkpoint.t,
        y: checkpoint.phi.values().to_vec(),
        k1: checkpoint.phi_dot.values().to_vec(),
        dt_next: checkpoint.dt_next,
        err_prev: checkpoint.err_prev,
    };
    integrate(problem, &spectral, &log_f, state, opts, t_stop, 0)
}

struct State {
    t: f64,
    y: Vec<f64>,
    /// Right-hand side at `(t, y)`.
    k1: Vec<f64>,
    dt_next: f64,
    err_prev: f64,
}

fn integrate(
    problem: &FlowProblem,
    spectral: &Spectral,
    log_f: &[f64],
    mut st: State,
    opts: &FlowOptions,
    t_stop: f64,
    rhs_evaluations: usize,
) -> Result<FlowRun> {
    let grid = *problem.grid();
    let start_k = opts
        .snapshot_index(st.t)
        .ok_or_else(|| MaError::Domain(format!("start time {} is not a snapshot time", st.t)))?;
    let stop_k = opts
        .snapshot_index(t_stop)
        .ok_or_else(|| MaError::Domain(format!("stop time {t_stop} is not a snapshot time")))?;
    if stop_k < start_k {
        return Err(MaError::Domain("stop time precedes start time".into()));
    }
    let field = |v: &[f64]| ScalarField::new(grid, v.to_vec());
    let mut traj = FlowTrajectory {
        times: vec![st.t],
        snapshots: vec![field(&st.y)?],
        phi_dot: vec![field(&st.k1)?],
        stats: FlowStats {
            rhs_evaluations,
            ..Default::default()
        },
    };
    let len = st.y.len();
    let mut y2 = vec![0.0; len];
    let mut y3 = vec![0.0; len];
    let mut y_new = vec![0.0; len];

    for k in start_k + 1..=stop_k {
        let target = opts.snapshot_time(k);
        while st.t < target {
            if traj.stats.accepted + traj.stats.rejected >= opts.max_steps {
                return Err(MaError::Integration {
                    t: st.t,
                    reason: format!("step budget {} exhausted", opts.max_steps),
                });
            }
            let mut h = st.dt_next.min(opts.dt_max);
            let landing = st.t + 1.1 * h >= target;
            if landing {
                h = target - st.t;
            }
            if h < opts.dt_min {
                return Err(MaError::Integration {
                    t: st.t,
                    reason: format!("step {h:e} below minimum {:e}", opts.dt_min),
                });
            }
            let t_new = if landing { target } else { st.t + h };

            let stages = (|| {
                for i in 0..len {
                    y2[i] = st.y[i] + 0.5 * h * st.k1[i];
                }
                let k2 = problem.rhs(spectral, log_f, st.t + 0.5 * h, &y2)?;
                for i in 0..len {
                    y3[i] = st.y[i] + 0.75 * h * k2[i];
                }
                let k3 = problem.rhs(spectral, log_f, st.t + 0.75 * h, &y3)?;
                for i in 0..len {
                    y_new[i] = st.y[i] + h * (2.0 / 9.0 * st.k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]);
                }
                let k4 = problem.rhs(spectral, log_f, t_new, &y_new)?;
                Some((k2, k3, k4))
            })();
            traj.stats.rhs_evaluations += 3;

            let Some((k2, k3, k4)) = stages else {
                traj.stats.rejected += 1;
                traj.stats.positivity_rejections += 1;
                st.dt_next = 0.5 * h;
                continue;
            };

            let mut err: f64 = 0.0;
            for i in 0..len {
                let e = h * (-5.0 / 72.0 * st.k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i] - 0.125 * k4[i]);
                let scale = opts.atol + opts.rtol * st.y[i].abs().max(y_new[i].abs());
                err = err.max(e.abs() / scale);
            }
            if !err.is_finite() {
                traj.stats.rejected += 1;
                st.dt_next = 0.5 * h;
                continue;
            }
            if err > 1.0 {
                traj.stats.rejected += 1;
                st.dt_next = h * (0.9 * err.powf(-1.0 / 3.0)).max(0.2);
                continue;
            }
            let err = err.max(1e-10);
            let factor = (0.9 * err.powf(-0.7 / 3.0) * st.err_prev.powf(0.4 / 3.0)).clamp(0.2, 5.0);
            st.dt_next = (h * factor).min(opts.dt_max);
            st.err_prev = err;
            st.t = t_new;
            std::mem::swap(&mut st.y, &mut y_new);
            st.k1 = k4;
            traj.stats.accepted += 1;
        }
        traj.times.push(st.t);
        traj.snapshots.push(field(&st.y)?);
        traj.phi_dot.push(field(&st.k1)?);
    }

    let checkpoint = FlowCheckpoint {
        t: st.t,
        phi: field(&st.y)?,
        phi_dot: field(&st.k1)?,
        dt_next: st.dt_next,
        err_prev: st.err_prev,
    };
    Ok(FlowRun {
        trajectory: traj,
        checkpoint,
    })
}

/// Outcome of scanning a trajectory for the quantities
/// `H = phi_dot - B1 phi - (C + 1) t` and `G = phi_dot + B1 phi + (C + 1) t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhiDotBoundReport {
    pub b0: f64,
    pub b1: f64,
    pub c: f64,
    pub h_max: f64,
    /// `max(sup phi_dot_0 - B1 inf phi_0, B0 B1)`
    pub h_bound: f64,
    /// `h_bound - h_max`
    pub margin: f64,
    pub g_min: f64,
    /// `min(inf phi_dot_0 + B1 inf phi_0, -B0 B1)`
    pub g_bound: f64,
    /// `g_min - g_bound`; observed only, not asserted.
    pub lower_margin: f64,
}

/// Constants `(B1, C)` for the upper bound on `phi_dot`: `B1` dominates both
/// `|d omega_t / dt|` relative to `omega_t` and `|dF/dr|`, and
/// `C = n B1 + sup |dF/dt|` bounds the drift terms.
pub fn phi_dot_constants(problem: &FlowProblem) -> (f64, f64) {
    let b1 = problem.family.derivative_bound().max(problem.forcing.dr().abs());
    let c = problem.family.n() as f64 * b1 + problem.forcing.sup_abs_dt();
    (b1, c)
}

pub fn phi_dot_bound_check(trajectory: &FlowTrajectory, b1: f64, c: f64) -> PhiDotBoundReport {
    let (lo, hi) = trajectory.phi_range();
    let b0 = lo.abs().max(hi.abs());
    let mut h_max = f64::NEG_INFINITY;
    let mut g_min = f64::INFINITY;
    for ((t, phi), dot) in trajectory.times.iter().zip(&trajectory.snapshots).zip(&trajectory.phi_dot) {
        for (p, d) in phi.values().iter().zip(dot.values()) {
            h_max = h_max.max(d - b1 * p - (c + 1.0) * t);
            g_min = g_min.min(d + b1 * p + (c + 1.0) * t);
        }
    }
    let phi0 = &trajectory.snapshots[0];
    let dot0 = &trajectory.phi_dot[0];
    let h_bound = (dot0.max() - b1 * phi0.min()).max(b0 * b1);
    let g_bound = (dot0.min() + b1 * phi0.min()).min(-b0 * b1);
    PhiDotBoundReport {
        b0,
        b1,
        c,
        h_max,
        h_bound,
        margin: h_bound - h_max,
        g_min,
        g_bound,
        lower_margin: g_min - g_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::solve_exponential;
    use crate::hermitian::HermMat;
    use num_complex::Complex64;
    use std::f64::consts::TAU;

    fn unit(grid: TorusGrid) -> Density {
        Density::new(ScalarField::constant(grid, 1.0), 2.0).unwrap()
    }

    fn smooth_density(grid: TorusGrid) -> Density {
        let raw = ScalarField::from_fn(grid, |x| (0.3 * (TAU * x[0]).sin() + 0.2 * (TAU * x[1]).cos()).exp()).unwrap();
        let mean = raw.mean();
        Density::new(raw.scale(1.0 / mean), 2.0).unwrap()
    }

    fn problem(grid: TorusGrid, f: Density, forcing: ForcingSpec) -> FlowProblem {
        FlowProblem::new(FormFamily::constant(HermitianForm::identity(grid.n_complex())), forcing, f).unwrap()
    }

    #[test]
    fn zero_is_stationary() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(g, unit(g), ForcingSpec::LinearR { alpha: 1.0 });
        let traj = evolve(&p, &ScalarField::zeros(g), &FlowOptions::new(1.0, 1e-3)).unwrap();
        assert_eq!(traj.len(), 101);
        assert_eq!(traj.times[100], 1.0);
        assert!(traj.snapshots.iter().all(|s| s.sup_norm() == 0.0));
    }

    #[test]
    fn constant_start_decays_exponentially() {
        let g = TorusGrid::new(1, 8).unwrap();
        let p = problem(g, unit(g), ForcingSpec::LinearR { alpha: 1.0 });
        let c = 0.8;
        let traj = evolve(&p, &ScalarField::constant(g, c), &FlowOptions::new(2.0, 1e-3)).unwrap();
        for (t, phi) in traj.times.iter().zip(&traj.snapshots) {
            let exact = c * (-t).exp();
            assert!(phi.values().iter().all(|v| (v - exact).abs() < 1e-6));
        }
    }

    #[test]
    fn phi_dot_matches_rhs_and_differences() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(g, smooth_density(g), ForcingSpec::LinearR { alpha: 1.0 });
        let mut opts = FlowOptions::new(0.5, 1e-3);
        opts.snapshots = 500;
        let traj = evolve(&p, &ScalarField::zeros(g), &opts).unwrap();
        for k in [0, 10, 250, 500] {
            let class = classify_residual(&p, traj.times[k], &traj.snapshots[k], &traj.phi_dot[k], 1e-12).unwrap();
            assert_eq!(class, ResidualClass::Solution);
        }
        for k in 1..traj.len() - 1 {
            let dt = traj.times[k + 1] - traj.times[k - 1];
            let diff = traj.snapshots[k + 1].sub(&traj.snapshots[k - 1]).unwrap().scale(1.0 / dt);
            assert!(diff.sup_distance(&traj.phi_dot[k]).unwrap() < 5.0 * dt);
        }
    }

    #[test]
    fn long_time_limit_solves_elliptic_equation() {
        let g = TorusGrid::new(1, 16).unwrap();
        let f = smooth_density(g);
        let p = problem(g, f.clone(), ForcingSpec::LinearR { alpha: 1.0 });
        let mut opts = FlowOptions::new(12.0, 1e-3);
        opts.snapshots = 12;
        let traj = evolve(&p, &ScalarField::zeros(g), &opts).unwrap();
        let stationary = solve_exponential(&HermitianForm::identity(1), &f, 1e-10).unwrap();
        assert!(traj.final_phi().sup_distance(stationary.solution()).unwrap() <= 1e-4);
    }

    #[test]
    fn shifted_start_keeps_its_offset_bound() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(g, smooth_density(g), ForcingSpec::LinearR { alpha: 1.0 });
        let phi0 = ScalarField::from_fn(g, |x| 0.05 * (TAU * x[0]).cos()).unwrap();
        let opts = FlowOptions::new(1.0, 1e-3);
        let a = evolve(&p, &phi0, &opts).unwrap();
        let b = evolve(&p, &phi0.add_scalar(0.3), &opts).unwrap();
        for (u, v) in a.snapshots.iter().zip(&b.snapshots) {
            assert!(u.sub(v).unwrap().max() <= 1e-6);
            assert!(v.sub(u).unwrap().max() <= 0.3 + 1e-6);
        }
    }

    #[test]
    fn checkpoint_resume_is_bitwise() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(
            g,
            smooth_density(g),
            ForcingSpec::Affine {
                alpha: 0.5,
                beta: 0.2,
                gamma: 0.0,
            },
        );
        let phi0 = ScalarField::from_fn(g, |x| 0.1 * (TAU * x[1]).sin()).unwrap();
        let opts = FlowOptions::new(1.0, 1e-2);
        let direct = evolve(&p, &phi0, &opts).unwrap();
        let first = evolve_until(&p, &phi0, &opts, 0.5).unwrap();
        let second = resume(&p, &first.checkpoint, &opts, 1.0).unwrap().trajectory;
        assert_eq!(second.times, direct.times[50..]);
        for (a, b) in second.snapshots.iter().zip(&direct.snapshots[50..]) {
            assert!(a.sup_distance(b).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn varying_family_stays_psh() {
        let g = TorusGrid::new(2, 8).unwrap();
        let theta = HermitianForm::identity(2);
        let end = HermitianForm::new(HermMat::new2(1.4, 1.2, Complex64::new(0.1, 0.05))).unwrap();
        let family = FormFamily::linear(theta, end, 1.0, theta).unwrap();
        let f = Density::new(
            ScalarField::from_fn(g, |x| 1.0 + 0.2 * (TAU * x[0]).sin() * (TAU * x[3]).cos()).unwrap(),
            2.0,
        )
        .unwrap();
        let p = FlowProblem::new(family, ForcingSpec::LinearR { alpha: 1.0 }, f).unwrap();
        let mut opts = FlowOptions::new(1.0, 1e-3);
        opts.snapshots = 10;
        let traj = evolve(&p, &ScalarField::zeros(g), &opts).unwrap();
        for phi in &traj.snapshots {
            assert!(crate::ma::is_theta_psh(&theta, phi, 1e-6).unwrap());
        }
        let (a, big_a) = family.pinching();
        assert!((a - 1.0).abs() < 1e-12 && big_a > 1.4);
    }

    #[test]
    fn family_rejects_form_below_reference() {
        let theta = HermitianForm::identity(1);
        let small = HermitianForm::new(HermMat::new1(0.5)).unwrap();
        assert!(FormFamily::linear(small, theta, 1.0, theta).is_err());
    }

    #[test]
    fn shifting_down_gives_subsolution() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(g, unit(g), ForcingSpec::LinearR { alpha: 1.0 });
        let zero = ScalarField::zeros(g);
        assert_eq!(classify_residual(&p, 0.0, &zero, &zero, 1e-12).unwrap(), ResidualClass::Solution);
        let down = zero.add_scalar(-0.2);
        assert_eq!(classify_residual(&p, 0.0, &down, &zero, 1e-12).unwrap(), ResidualClass::Subsolution);
        assert_eq!(
            classify_residual(&p, 0.0, &zero.add_scalar(0.2), &zero, 1e-12).unwrap(),
            ResidualClass::Supersolution
        );
        let bad = ScalarField::from_fn(g, |x| (TAU * x[0]).cos()).unwrap();
        assert_eq!(classify_residual(&p, 0.0, &bad, &zero, 1e-12).unwrap(), ResidualClass::Neither);
    }

    #[test]
    fn phi_dot_bound_for_stationary_flow() {
        let g = TorusGrid::new(1, 8).unwrap();
        let p = problem(g, unit(g), ForcingSpec::LinearR { alpha: 1.0 });
        let traj = evolve(&p, &ScalarField::zeros(g), &FlowOptions::new(1.0, 1e-3)).unwrap();
        let (b1, c) = phi_dot_constants(&p);
        let report = phi_dot_bound_check(&traj, b1, c);
        assert_eq!(report.h_max, 0.0);
        assert!(report.margin >= 0.0);
    }

    #[test]
    fn phi_dot_bound_on_nontrivial_flow() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = problem(g, smooth_density(g), ForcingSpec::LinearR { alpha: 1.0 });
        let phi0 = ScalarField::from_fn(g, |x| 0.05 * (TAU * x[0]).sin()).unwrap();
        let traj = evolve(&p, &phi0, &FlowOptions::new(1.0, 1e-3)).unwrap();
        let (b1, c) = phi_dot_constants(&p);
        assert!(phi_dot_bound_check(&traj, b1, c).margin >= -1e-9);
    }

    #[test]
    fn trajectory_round_trip() {
        let g = TorusGrid::new(1, 8).unwrap();
        let p = problem(g, smooth_density(g), ForcingSpec::LinearR { alpha: 1.0 });
        let mut opts = FlowOptions::new(0.2, 1e-3);
        opts.snapshots = 4;
        let traj = evolve(&p, &ScalarField::zeros(g), &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        traj.write_dir(dir.path()).unwrap();
        let back = FlowTrajectory::read_dir(dir.path()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.snapshots[4].values(), traj.snapshots[4].values());

        let path = dir.path().join("phi_00002.mafld");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(FlowTrajectory::read_dir(dir.path()), Err(MaError::Format(_))));
    }

    #[test]
    fn stop_time_must_be_snapshot() {
        let g = TorusGrid::new(1, 8).unwrap();
        let p = problem(g, unit(g), ForcingSpec::Zero);
        let opts = FlowOptions::new(1.0, 1e-3);
        assert!(evolve_until(&p, &ScalarField::zeros(g), &opts, 0.123).is_err());
    }
}
