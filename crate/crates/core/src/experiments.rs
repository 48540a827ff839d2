//! Stability experiments: solve perturbed problems, assemble both sides of
//! the stability estimates and report margins.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barriers::{
    elliptic_barrier, elliptic_epsilon, parabolic_barrier, parabolic_constants, rescale_parameter,
    uniform_bound_barriers, varying_form_rescale, BarrierConstants, ParabolicInputs, UniformInputs,
};
use crate::elliptic::{
    build_reference_density, default_tolerance, solve_exponential, solve_exponential_with,
    solve_normalized_compatible, SolverOptions,
};
use crate::error::{MaError, Result};
use crate::families::{random_density, random_forcing, random_psh};
use crate::forcing::ForcingSpec;
use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::{form_distance, HermitianForm};
use crate::ma::{lp_norm, ma_density, oscillation, positive_part, Density, NormalizedVolume};
use crate::parabolic::{
    classify_residual, evolve, phi_dot_bound_check, phi_dot_constants, FlowOptions, FlowProblem,
    FlowTrajectory, FormFamily, ResidualClass,
};

const LOG2: f64 = std::f64::consts::LN_2;

/// Slack added to flow-based bounds for time-integration error.
pub const FLOW_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// `g = max(f + s h, floor)`
    Additive,
    /// `g = e^{s h} f`
    Multiplicative,
}

#[derive(Debug, Clone)]
pub struct PerturbationFamily {
    pub base: Density,
    pub direction: ScalarField,
    pub scales: Vec<f64>,
    pub mode: PerturbationMode,
}

impl PerturbationFamily {
    pub fn new(base: Density, direction: ScalarField, mut scales: Vec<f64>, mode: PerturbationMode) -> Result<Self> {
        direction.check_same_grid(base.field())?;
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(MaError::Domain("perturbation scales must be finite and non-negative".into()));
        }
        scales.sort_by(f64::total_cmp);
        Ok(Self {
            base,
            direction,
            scales,
            mode,
        })
    }

    pub fn density_at(&self, s: f64) -> Result<Density> {
        let f = &self.base;
        let field = match self.mode {
            PerturbationMode::Additive => {
                let floor = f.floor();
                f.field().zip_map(&self.direction, |a, h| (a + s * h).max(floor))?
            }
            PerturbationMode::Multiplicative => f.field().zip_map(&self.direction, |a, h| (s * h).exp() * a)?,
        };
        Density::with_floor(field, f.p(), f.floor())
    }
}

/// One line of a stability report; CSV columns follow the field order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub s: f64,
    /// `||f - g||_p`
    pub lp_gap: f64,
    /// `||(g - f)_+||_p`
    pub lp_gap_pos: f64,
    pub sup_diff: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// No positive gap: the comparison principle alone applies.
    Comparison,
    /// Small gap: barrier construction.
    Perturbation,
    /// Large gap: trivial oscillation bound.
    Coarse,
}

/// Bound on `sup(sub - sup)` in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideDetail {
    pub gap_pos_p: f64,
    pub branch: Branch,
    /// `eps` (elliptic) or `delta` (parabolic).
    pub parameter: f64,
    pub rho_sup: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicDetail {
    pub sup_initial_diff: f64,
    /// `sup |F - G|` over `[0,T] x X x I`.
    pub forcing_diff: f64,
    /// `sup |F - G|` over `[0,T] x X x R`; `None` when infinite.
    pub forcing_diff_all_r: Option<f64>,
    /// Stability constant `A`.
    pub a: f64,
    pub constants_forward: BarrierConstants,
    pub constants_backward: BarrierConstants,
    /// `min(phi - u, v - phi)` over both flows.
    pub sandwich_margin: f64,
    /// Upper `phi_dot` bound margin over both flows.
    pub phi_dot_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowDetail {
    pub s: f64,
    /// `sup_diff / bound`
    pub ratio: f64,
    pub forward: SideDetail,
    pub backward: SideDetail,
    /// `d(omega, theta)` for varying-form runs.
    pub distance: Option<f64>,
    pub parabolic: Option<ParabolicDetail>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: String,
    pub rows: Vec<StabilityRow>,
    pub details: Vec<RowDetail>,
    /// Log-log slope of `sup_diff` against `lp_gap` on the three smallest
    /// positive scales.
    pub fitted_exponent: Option<f64>,
    pub complete: bool,
    pub failures: Vec<String>,
}

impl StabilityReport {
    fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            rows: Vec::new(),
            details: Vec::new(),
            fitted_exponent: None,
            complete: true,
            failures: Vec::new(),
        }
    }

    /// Complete and every margin non-negative.
    pub fn passed(&self) -> bool {
        self.complete && self.rows.iter().all(|r| r.margin >= 0.0)
    }

    /// Concatenates reports of the same kind, rows sorted by `s`, and refits
    /// the exponent.
    pub fn merge(parts: Vec<StabilityReport>) -> Option<StabilityReport> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?;
        for part in iter {
            out.rows.extend(part.rows);
            out.details.extend(part.details);
            out.complete &= part.complete;
            out.failures.extend(part.failures);
        }
        let mut order: Vec<usize> = (0..out.rows.len()).collect();
        order.sort_by(|&a, &b| out.rows[a].s.total_cmp(&out.rows[b].s));
        out.rows = order.iter().map(|&i| out.rows[i]).collect();
        out.details = order.iter().map(|&i| out.details[i]).collect();
        out.fit();
        Some(out)
    }

    pub fn worst_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, row: StabilityRow, detail: RowDetail) {
        if !(row.margin >= 0.0) {
            self.failures.push(format!(
                "margin {:e} at s = {}: sup_diff {:e}, bound {:e}, forward {:?}, backward {:?}",
                row.margin, row.s, row.sup_diff, row.bound, detail.forward, detail.backward
            ));
        }
        self.rows.push(row);
        self.details.push(detail);
    }

    fn fit(&mut self) {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.lp_gap > 0.0 && r.sup_diff > 0.0)
            .take(3)
            .map(|r| (r.lp_gap.ln(), r.sup_diff.ln()))
            .collect();
        self.fitted_exponent = least_squares_slope(&pts);
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn sup_abs_diff(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.sup_distance(b)
}

/// Bound on `sup(sub - sup)` when `MA_form(sub) >= e^sub f_sub dV` and
/// `MA_form(sup) <= e^sup f_sup dV`, with `kappa` the volume of `form`
/// relative to `dV`. Assembled from the barrier
/// `sub_eps = (1 - eps) sub + eps rho + eps inf sub + n log(1 - eps)`:
/// `(sup|rho| + osc sub + max(-inf sup, 0) + 2n) eps`.
pub fn semi_stability_bound(
    sub: &ScalarField,
    f_sub: &Density,
    sup: &ScalarField,
    f_sup: &Density,
    form: &HermitianForm,
    kappa: f64,
    tol: f64,
) -> Result<SideDetail> {
    let grid = *sub.grid();
    let n = grid.n_complex();
    let p = f_sub.p().min(f_sup.p());
    let dv = NormalizedVolume::new(grid);
    let gap = positive_part(&f_sup.field().sub(f_sub.field())?);
    let gap_pos_p = lp_norm(&gap, p, &dv)?;
    if gap_pos_p == 0.0 {
        return Ok(SideDetail {
            gap_pos_p,
            branch: Branch::Comparison,
            parameter: 0.0,
            rho_sup: 0.0,
            bound: 0.0,
        });
    }
    let eps = elliptic_epsilon(sub.max(), gap_pos_p, n, kappa);
    if eps >= 0.5 {
        let spread = sub.max() - sup.min();
        return Ok(SideDetail {
            gap_pos_p,
            branch: Branch::Coarse,
            parameter: eps,
            rho_sup: f64::NAN,
            bound: (2.0 * spread * eps).max(spread),
        });
    }
    let reference = build_reference_density(f_sub, f_sup, p)?;
    let rho = solve_normalized_compatible(form, &reference.h, tol)?.into_solution();
    let rho_sup = rho.sup_norm();
    let coefficient = rho_sup + oscillation(sub) + (-sup.min()).max(0.0) + 2.0 * n as f64;
    Ok(SideDetail {
        gap_pos_p,
        branch: Branch::Perturbation,
        parameter: eps,
        rho_sup,
        bound: coefficient * eps,
    })
}

/// Two-sided elliptic stability over a perturbation family.
pub fn elliptic_stability_run(
    family: &PerturbationFamily,
    p: f64,
    theta: &HermitianForm,
    tol: f64,
) -> Result<StabilityReport> {
    if !(p > 1.0) {
        return Err(MaError::Domain(format!("exponent p = {p} must exceed 1")));
    }
    let mut report = StabilityReport::new("stability-elliptic");
    let f = Density::with_floor(family.base.field().clone(), p, family.base.floor())?;
    let phi = match solve_exponential(theta, &f, tol) {
        Ok(r) => r.into_solution(),
        Err(e) => {
            report.complete = false;
            report.failures.push(format!("base solve failed: {e}"));
            return Ok(report);
        }
    };
    let dv = NormalizedVolume::new(*f.grid());
    let results: Vec<Result<(StabilityRow, RowDetail)>> = family
        .scales
        .par_iter()
        .map(|&s| {
            let g = Density::with_floor(family.density_at(s)?.field().clone(), p, f.floor())?;
            let psi = solve_exponential(theta, &g, tol)?.into_solution();
            let forward = semi_stability_bound(&phi, &f, &psi, &g, theta, 1.0, tol)?;
            let backward = semi_stability_bound(&psi, &g, &phi, &f, theta, 1.0, tol)?;
            let sup_diff = sup_abs_diff(&phi, &psi)?;
            let bound = forward.bound.max(backward.bound) + 10.0 * tol;
            let lp_gap = lp_norm(&f.field().sub(g.field())?, p, &dv)?;
            Ok((
                StabilityRow {
                    s,
                    lp_gap,
                    lp_gap_pos: forward.gap_pos_p,
                    sup_diff,
                    bound,
                    margin: bound - sup_diff,
                },
                RowDetail {
                    s,
                    ratio: ratio(sup_diff, bound),
                    forward,
                    backward,
                    distance: None,
                    parabolic: None,
                },
            ))
        })
        .collect();
    for (s, r) in family.scales.iter().zip(results) {
        match r {
            Ok((row, detail)) => report.push(row, detail),
            Err(e) => {
                report.complete = false;
                report.failures.push(format!("scale {s}: {e}"));
            }
        }
    }
    report.fit();
    Ok(report)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationVerdict {
    pub r: f64,
    pub p: f64,
    pub t: f64,
    pub norm_1: f64,
    pub norm_r: f64,
    pub norm_p: f64,
    /// `||h||_1^{(1-t)/r} ||h||_p^{tp/r}`
    pub rhs: f64,
    /// `(rhs - norm_r) / rhs`, zero when both vanish.
    pub relative_margin: f64,
    pub holds: bool,
    /// `eps` with `(1 - t)/r = n/(n + eps)`.
    pub eps: f64,
    /// `||h||_r^{1/n}` against `||h||_p^{tp/(rn)} ||h||_1^{1/(n + eps)}`.
    pub consequence_lhs: f64,
    pub consequence_rhs: f64,
    pub consequence_holds: bool,
}

/// Hoelder interpolation of `||h||_r` between `||h||_1` and `||h||_p`.
pub fn interpolation_check(h: &ScalarField, p: f64, r: f64, n: usize) -> Result<InterpolationVerdict> {
    if !(1.0 < r && r < p) {
        return Err(MaError::Domain(format!("need 1 < r < p, got r = {r}, p = {p}")));
    }
    let dv = NormalizedVolume::new(*h.grid());
    let t = (r - 1.0) / (p - 1.0);
    let norm_1 = lp_norm(h, 1.0, &dv)?;
    let norm_r = lp_norm(h, r, &dv)?;
    let norm_p = lp_norm(h, p, &dv)?;
    let rhs = norm_1.powf((1.0 - t) / r) * norm_p.powf(t * p / r);
    let rel_tol = 1e-10;
    let holds = norm_r <= rhs * (1.0 + rel_tol);
    let relative_margin = if rhs > 0.0 { (rhs - norm_r) / rhs } else { 0.0 };
    let nf = n as f64;
    let e = (1.0 - t) / r;
    let eps = nf / e - nf;
    let consequence_lhs = norm_r.powf(1.0 / nf);
    let consequence_rhs = norm_p.powf(t * p / (r * nf)) * norm_1.powf(1.0 / (nf + eps));
    Ok(InterpolationVerdict {
        r,
        p,
        t,
        norm_1,
        norm_r,
        norm_p,
        rhs,
        relative_margin,
        holds,
        eps,
        consequence_lhs,
        consequence_rhs,
        consequence_holds: consequence_lhs <= consequence_rhs * (1.0 + rel_tol),
    })
}

/// Stability with both the density and the reference form perturbed:
/// `MA_theta(phi) = e^phi f dV`, `MA_omega(psi) = e^psi g dV`, `dV` from
/// `theta`. One row with `s = d(omega, theta)`.
pub fn varying_forms_run(
    f: &Density,
    g: &Density,
    theta: &HermitianForm,
    omega: &HermitianForm,
    p: f64,
    tol: f64,
) -> Result<StabilityReport> {
    if !(p > 1.0) {
        return Err(MaError::Domain(format!("exponent p = {p} must exceed 1")));
    }
    let mut report = StabilityReport::new("varying-forms");
    let d = form_distance(omega, theta)?;
    let f = Density::with_floor(f.field().clone(), p, f.floor())?;
    let g = Density::with_floor(g.field().clone(), p, g.floor())?;
    let mut omega_opts = SolverOptions::new(tol);
    omega_opts.reference = Some(*theta);
    let (phi, psi) = rayon::join(
        || solve_exponential(theta, &f, tol),
        || solve_exponential_with(omega, &g, &omega_opts),
    );
    let (phi, psi) = match (phi, psi) {
        (Ok(a), Ok(b)) => (a.into_solution(), b.into_solution()),
        (a, b) => {
            report.complete = false;
            for e in [a.err(), b.err()].into_iter().flatten() {
                report.failures.push(format!("solve failed: {e}"));
            }
            return Ok(report);
        }
    };
    let n = theta.n() as f64;
    let kappa = omega.det() / theta.det();
    // psi <= phi + ...: psi_c is a theta-subsolution for g
    let c_fwd = rescale_parameter(omega, theta);
    let forward = if c_fwd <= 0.5 {
        let psi_c = varying_form_rescale(&psi, c_fwd)?;
        let mut side = semi_stability_bound(&psi_c, &g, &phi, &f, theta, 1.0, tol)?;
        side.bound += c_fwd * oscillation(&psi) - n * (1.0 - c_fwd).ln();
        side
    } else {
        coarse_side(&psi, &phi)
    };
    // phi <= psi + ...: phi_c is an omega-subsolution for f
    let c_bwd = rescale_parameter(theta, omega);
    let backward = if c_bwd <= 0.5 {
        let phi_c = varying_form_rescale(&phi, c_bwd)?;
        let mut side = semi_stability_bound(&phi_c, &f, &psi, &g, omega, kappa, tol)?;
        side.bound += c_bwd * oscillation(&phi) - n * (1.0 - c_bwd).ln();
        side
    } else {
        coarse_side(&phi, &psi)
    };
    let dv = NormalizedVolume::new(*f.grid());
    let lp_gap = lp_norm(&f.field().sub(g.field())?, p, &dv)?;
    let sup_diff = sup_abs_diff(&phi, &psi)?;
    let bound = forward.bound.max(backward.bound) + 10.0 * tol;
    report.push(
        StabilityRow {
            s: d,
            lp_gap,
            lp_gap_pos: lp_norm(&positive_part(&g.field().sub(f.field())?), p, &dv)?,
            sup_diff,
            bound,
            margin: bound - sup_diff,
        },
        RowDetail {
            s: d,
            ratio: ratio(sup_diff, bound),
            forward,
            backward,
            distance: Some(d),
            parabolic: None,
        },
    );
    Ok(report)
}

fn coarse_side(sub: &ScalarField, sup: &ScalarField) -> SideDetail {
    SideDetail {
        gap_pos_p: f64::NAN,
        branch: Branch::Coarse,
        parameter: f64::NAN,
        rho_sup: f64::NAN,
        bound: sub.max() - sup.min(),
    }
}

/// Constant `C` with `bound = C (gap^{1/n} + d)` for a varying-forms row.
pub fn varying_forms_constant(row: &StabilityRow, n: usize) -> f64 {
    let denom = row.lp_gap.powf(1.0 / n as f64) + row.s;
    if denom > 0.0 {
        row.bound / denom
    } else {
        0.0
    }
}

/// Data `(F, f, phi0)` of one flow.
#[derive(Debug, Clone)]
pub struct FlowData {
    pub forcing: ForcingSpec,
    pub f: Density,
    pub phi0: ScalarField,
}

struct SideOutcome {
    detail: SideDetail,
    constants: BarrierConstants,
    /// Stability constant `A` of this direction.
    a: f64,
}

/// Bound on `sup(phi - psi)` for `phi` solving data `(F, f)` and `psi`
/// solving `(G, g)`.
fn parabolic_side(
    phi: &FlowTrajectory,
    a: &FlowData,
    psi: &FlowTrajectory,
    b: &FlowData,
    theta: &HermitianForm,
    t_final: f64,
    p: f64,
) -> Result<SideOutcome> {
    let grid = *a.f.grid();
    let n = grid.n_complex() as f64;
    let dv = NormalizedVolume::new(grid);
    let gap_pos_p = lp_norm(&positive_part(&b.f.field().sub(a.f.field())?), p, &dv)?;
    let mut constants = parabolic_constants(&ParabolicInputs {
        trajectory: phi,
        forcing_f: &a.forcing,
        forcing_g: &b.forcing,
        gap_pos_p,
        t_final,
    });
    let initial = phi.snapshots[0].sub(&psi.snapshots[0])?.max().max(0.0);
    let base = initial + t_final * constants.m;
    let (branch, rho_sup, big_a) = if gap_pos_p == 0.0 {
        (Branch::Comparison, 0.0, 0.0)
    } else if constants.delta < 0.5 {
        let reference = build_reference_density(&a.f, &b.f, p)?;
        let rho = solve_normalized_compatible(theta, &reference.h, default_tolerance(grid.n_complex()))?.into_solution();
        let rho_sup = rho.sup_norm();
        constants.rho_sup = rho_sup;
        constants.a1 = (constants.big_m0 + rho_sup + 2.0 * n * LOG2 + constants.b * t_final + (-constants.m0).max(0.0))
            * (constants.m2 / n).exp();
        (Branch::Perturbation, rho_sup, constants.a1)
    } else {
        let (_, sup_phi) = phi.phi_range();
        let (inf_psi, _) = psi.phi_range();
        constants.a2 = 2.0 * (sup_phi - inf_psi).max(0.0) * (constants.m2 / n).exp();
        (Branch::Coarse, f64::NAN, constants.a2)
    };
    let bound = base + big_a * gap_pos_p.powf(1.0 / n);
    Ok(SideOutcome {
        detail: SideDetail {
            gap_pos_p,
            branch,
            parameter: constants.delta,
            rho_sup,
            bound,
        },
        constants,
        a: big_a,
    })
}

/// `min over snapshots of min(phi - u, v - phi)` for the uniform barriers
/// of one flow.
fn sandwich_margin(problem: &FlowProblem, traj: &FlowTrajectory, t_final: f64) -> Result<(f64, BarrierConstants)> {
    let grid = *problem.grid();
    let theta = *problem.family.reference();
    let dv = NormalizedVolume::new(grid);
    let c0 = 1.0 / dv.integrate(problem.f.field());
    let rho = solve_normalized_compatible(&theta, &problem.f.field().scale(c0), default_tolerance(grid.n_complex()))?
        .into_solution();
    let (u, v, constants) = uniform_bound_barriers(
        &UniformInputs {
            rho: &rho,
            phi0: &traj.snapshots[0],
            forcing: &problem.forcing,
            pinching: problem.family.pinching(),
            c0,
            t_final,
        },
        &traj.times,
    )?;
    let mut margin = f64::INFINITY;
    for k in 0..traj.len() {
        let phi = &traj.snapshots[k];
        margin = margin.min(phi.sub(&u.snapshots[k])?.min());
        margin = margin.min(v.snapshots[k].sub(phi)?.min());
    }
    Ok((margin, constants))
}

/// Two flows with data `(F, f, phi0)` and `(G, g, psi0)` on a common form
/// family; one row comparing `sup |phi - psi|` with
/// `sup|phi0 - psi0| + T sup_I |F - G| + A ||g - f||_p^{1/n}`.
pub fn parabolic_stability_run(
    a: &FlowData,
    b: &FlowData,
    family: &FormFamily,
    opts: &FlowOptions,
    p: f64,
    s: f64,
) -> Result<StabilityReport> {
    if !(p > 1.0) {
        return Err(MaError::Domain(format!("exponent p = {p} must exceed 1")));
    }
    let mut report = StabilityReport::new("stability-parabolic");
    let fa = Density::with_floor(a.f.field().clone(), p, a.f.floor())?;
    let fb = Density::with_floor(b.f.field().clone(), p, b.f.floor())?;
    let a = FlowData { f: fa, ..a.clone() };
    let b = FlowData { f: fb, ..b.clone() };
    let pa = FlowProblem::new(*family, a.forcing, a.f.clone())?;
    let pb = FlowProblem::new(*family, b.forcing, b.f.clone())?;
    let (ta, tb) = rayon::join(|| evolve(&pa, &a.phi0, opts), || evolve(&pb, &b.phi0, opts));
    let (phi, psi) = match (ta, tb) {
        (Ok(x), Ok(y)) => (x, y),
        (x, y) => {
            report.complete = false;
            for e in [x.err(), y.err()].into_iter().flatten() {
                report.failures.push(format!("flow failed: {e}"));
            }
            return Ok(report);
        }
    };
    let t_final = opts.t_final;
    let theta = *family.reference();
    let fwd = parabolic_side(&phi, &a, &psi, &b, &theta, t_final, p)?;
    let bwd = parabolic_side(&psi, &b, &phi, &a, &theta, t_final, p)?;

    let mut sup_diff: f64 = 0.0;
    for (x, y) in phi.snapshots.iter().zip(&psi.snapshots) {
        sup_diff = sup_diff.max(sup_abs_diff(x, y)?);
    }
    let n = theta.n() as f64;
    let dv = NormalizedVolume::new(*a.f.grid());
    let lp_gap = lp_norm(&a.f.field().sub(b.f.field())?, p, &dv)?;
    let (lo_a, hi_a) = phi.phi_range();
    let (lo_b, hi_b) = psi.phi_range();
    let interval = (lo_a.min(lo_b), hi_a.max(hi_b));
    let forcing_diff = a.forcing.sup_abs_difference(&b.forcing, (0.0, t_final), Some(interval));
    let forcing_diff_all_r = a.forcing.sup_abs_difference(&b.forcing, (0.0, t_final), None);
    let big_a = fwd.a.max(bwd.a);
    let initial = phi.snapshots[0].sup_distance(&psi.snapshots[0])?;
    let gap_term = if lp_gap > 0.0 { big_a * lp_gap.powf(1.0 / n) } else { 0.0 };
    let bound = initial + t_final * forcing_diff + gap_term + FLOW_SLACK;

    let (sand_a, _) = sandwich_margin(&pa, &phi, t_final)?;
    let (sand_b, _) = sandwich_margin(&pb, &psi, t_final)?;
    let (b1a, ca) = phi_dot_constants(&pa);
    let (b1b, cb) = phi_dot_constants(&pb);
    let dot_margin = phi_dot_bound_check(&phi, b1a, ca)
        .margin
        .min(phi_dot_bound_check(&psi, b1b, cb).margin);

    report.push(
        StabilityRow {
            s,
            lp_gap,
            lp_gap_pos: fwd.detail.gap_pos_p,
            sup_diff,
            bound,
            margin: bound - sup_diff,
        },
        RowDetail {
            s,
            ratio: ratio(sup_diff, bound),
            forward: fwd.detail,
            backward: bwd.detail,
            distance: None,
            parabolic: Some(ParabolicDetail {
                sup_initial_diff: initial,
                forcing_diff,
                forcing_diff_all_r: forcing_diff_all_r.is_finite().then_some(forcing_diff_all_r),
                a: big_a,
                constants_forward: fwd.constants,
                constants_backward: bwd.constants,
                sandwich_margin: sand_a.min(sand_b),
                phi_dot_margin: dot_margin,
            }),
        },
    );
    Ok(report)
}

/// Randomized admissible data for two flows on a constant or linear family.
#[derive(Debug, Clone)]
pub struct RandomFlowInstance {
    pub family: FormFamily,
    pub a: FlowData,
    pub b: FlowData,
}

impl RandomFlowInstance {
    /// Draws data with densities `e^{0.3 X} f`, perturbation `g = e^{0.05 Y} f`,
    /// forcings with coefficients up to `0.3`, and small psh initial data.
    pub fn draw(grid: TorusGrid, p: f64, varying_family: bool, rng: &mut impl Rng) -> Result<Self> {
        let n = grid.n_complex();
        let theta = HermitianForm::identity(n);
        let family = if varying_family {
            let end = theta.scaled(1.0 + rng.gen_range(0.0..0.3))?;
            FormFamily::linear(theta, end, 1.0, theta)?
        } else {
            FormFamily::constant(theta)
        };
        let f = random_density(grid, 0.3, p, rng)?;
        let bump = random_density(grid, 0.05, p, rng)?;
        let g = Density::new(f.field().zip_map(bump.field(), |x, y| x * y)?, p)?;
        let phi0 = random_psh(grid, &theta, 2, 0.3, rng)?;
        let psi0 = random_psh(grid, &theta, 2, 0.3, rng)?.add_scalar(rng.gen_range(-0.1..0.1));
        Ok(Self {
            family,
            a: FlowData {
                forcing: random_forcing(0.3, rng),
                f,
                phi0,
            },
            b: FlowData {
                forcing: random_forcing(0.3, rng),
                f: g,
                phi0: psi0,
            },
        })
    }
}

/// Pointwise checks of every barrier construction on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierChecks {
    /// `min(MA(phi_eps) - e^{phi_eps} g)`; `None` on the coarse branch.
    pub eps_margin: Option<f64>,
    pub eps: f64,
    /// Worst subsolution margin of `phi_delta` for `(G, g)`; `None` on the
    /// coarse branch.
    pub delta_margin: Option<f64>,
    pub delta: f64,
    /// `min(phi - u, v - phi)` over the trajectory.
    pub sandwich_margin: f64,
    pub u_is_subsolution: bool,
    pub v_is_supersolution: bool,
    pub phi_dot_margin: f64,
}

impl BarrierChecks {
    /// All applicable checks hold at the given tolerances.
    pub fn passed(&self, pointwise_tol: f64, sandwich_tol: f64) -> bool {
        self.eps_margin.map_or(true, |m| m >= -pointwise_tol)
            && self.delta_margin.map_or(true, |m| m >= -pointwise_tol)
            && self.sandwich_margin >= -sandwich_tol
            && self.u_is_subsolution
            && self.v_is_supersolution
            && self.phi_dot_margin >= -sandwich_tol
    }
}

/// Builds `phi_eps`, `phi_delta`, `u`, `v` and `H` for `instance` and
/// evaluates each inequality they are constructed to satisfy.
pub fn verify_barriers(
    instance: &RandomFlowInstance,
    opts: &FlowOptions,
    p: f64,
    pointwise_tol: f64,
) -> Result<BarrierChecks> {
    let theta = *instance.family.reference();
    let grid = *instance.a.f.grid();
    let n = grid.n_complex();
    let tol = default_tolerance(n);
    let (fa, fb) = (&instance.a.f, &instance.b.f);

    // elliptic barrier for (f, g)
    let phi = solve_exponential(&theta, fa, tol)?.into_solution();
    let gap = lp_norm(
        &positive_part(&fb.field().sub(fa.field())?),
        p,
        &NormalizedVolume::new(grid),
    )?;
    let eps = elliptic_epsilon(phi.max(), gap, n, 1.0);
    let eps_margin = if gap > 0.0 && eps < 0.5 {
        let reference = build_reference_density(fa, fb, p)?;
        let rho = solve_normalized_compatible(&theta, &reference.h, tol)?.into_solution();
        let barrier = elliptic_barrier(&phi, &rho, eps)?;
        let lhs = ma_density(&theta, &barrier)?;
        let rhs = barrier.zip_map(fb.field(), |b, g| b.exp() * g)?;
        Some(lhs.sub(&rhs)?.min())
    } else {
        None
    };

    // parabolic barrier for (F, f) -> (G, g)
    let pa = FlowProblem::new(instance.family, instance.a.forcing, fa.clone())?;
    let pb = FlowProblem::new(instance.family, instance.b.forcing, fb.clone())?;
    let traj = evolve(&pa, &instance.a.phi0, opts)?;
    let constants = parabolic_constants(&ParabolicInputs {
        trajectory: &traj,
        forcing_f: &instance.a.forcing,
        forcing_g: &instance.b.forcing,
        gap_pos_p: gap,
        t_final: opts.t_final,
    });
    let delta_margin = if gap > 0.0 && constants.delta < 0.5 {
        let reference = build_reference_density(fa, fb, p)?;
        let rho = solve_normalized_compatible(&theta, &reference.h, tol)?.into_solution();
        let barrier = parabolic_barrier(&traj, &rho, &constants)?;
        let mut worst = f64::INFINITY;
        for k in 0..barrier.len() {
            let (sub, _) = pb
                .residual_margins(barrier.times[k], &barrier.snapshots[k], &barrier.phi_dot[k])?
                .ok_or_else(|| MaError::Positivity("barrier left the psh cone".into()))?;
            worst = worst.min(sub);
        }
        Some(worst)
    } else {
        None
    };

    // uniform barriers u <= phi <= v
    let t_final = opts.t_final;
    let dv = NormalizedVolume::new(grid);
    let c0 = 1.0 / dv.integrate(fa.field());
    let rho_c0 = solve_normalized_compatible(&theta, &fa.field().scale(c0), tol)?.into_solution();
    let (u, v, k) = uniform_bound_barriers(
        &UniformInputs {
            rho: &rho_c0,
            phi0: &traj.snapshots[0],
            forcing: &instance.a.forcing,
            pinching: instance.family.pinching(),
            c0,
            t_final,
        },
        &traj.times,
    )?;
    let big_a_family = FormFamily::constant_over(theta.scaled(k.a_upper)?, theta)?;
    let pv = FlowProblem::new(big_a_family, instance.a.forcing, fa.clone())?;
    let mut sandwich = f64::INFINITY;
    let mut u_sub = true;
    let mut v_sup = true;
    for i in 0..traj.len() {
        let t = traj.times[i];
        sandwich = sandwich.min(traj.snapshots[i].sub(&u.snapshots[i])?.min());
        sandwich = sandwich.min(v.snapshots[i].sub(&traj.snapshots[i])?.min());
        u_sub &= matches!(
            classify_residual(&pa, t, &u.snapshots[i], &u.phi_dot[i], pointwise_tol)?,
            ResidualClass::Subsolution | ResidualClass::Solution
        );
        v_sup &= matches!(
            classify_residual(&pv, t, &v.snapshots[i], &v.phi_dot[i], pointwise_tol)?,
            ResidualClass::Supersolution | ResidualClass::Solution
        );
    }

    let (b1, c) = phi_dot_constants(&pa);
    let dot = phi_dot_bound_check(&traj, b1, c);
    Ok(BarrierChecks {
        eps_margin,
        eps,
        delta_margin,
        delta: constants.delta,
        sandwich_margin: sandwich,
        u_is_subsolution: u_sub,
        v_is_supersolution: v_sup,
        phi_dot_margin: dot.margin,
    })
}
