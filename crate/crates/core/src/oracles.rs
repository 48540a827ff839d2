//! Comparison and domination principles as checkable predicates on grid data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{default_tolerance, solve_exponential};
use crate::error::{MaError, Result};
use crate::families::{random_density, random_forcing, random_psh, random_trig};
use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::HermitianForm;
use crate::ma::{ma_density, Density, NormalizedVolume, MATRIX_ORDER_TOL};
use crate::parabolic::{classify_residual, evolve, FlowOptions, FlowProblem, FlowTrajectory, FormFamily, ResidualClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub index: usize,
    pub time_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    /// `worst_margin >= -tolerance`
    pub passed: bool,
    pub hypothesis_met: bool,
    /// Most negative slack of the conclusion.
    pub worst_margin: f64,
    pub witness: Witness,
}

impl OracleVerdict {
    /// Hypothesis holds but the conclusion fails.
    pub fn is_counterexample(&self) -> bool {
        self.hypothesis_met && !self.passed
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
}

fn is_psh(theta: &HermitianForm, phi: &ScalarField) -> Result<bool> {
    crate::ma::is_theta_psh(theta, phi, MATRIX_ORDER_TOL)
}

/// Checks `u <= v + tol` given `e^{-u} MA(u) >= e^{-v} MA(v) - tol`.
pub fn comparison_elliptic(
    u: &ScalarField,
    v: &ScalarField,
    theta: &HermitianForm,
    tol: f64,
) -> Result<OracleVerdict> {
    u.check_same_grid(v)?;
    let hypothesis_met = is_psh(theta, u)? && is_psh(theta, v)? && {
        let mu = ma_density(theta, u)?;
        let mv = ma_density(theta, v)?;
        (0..u.values().len()).all(|i| {
            (-u.values()[i]).exp() * mu.values()[i] >= (-v.values()[i]).exp() * mv.values()[i] - tol
        })
    };
    let (index, worst_margin) = argmin(v.values().iter().zip(u.values()).map(|(b, a)| b - a));
    Ok(OracleVerdict {
        passed: worst_margin >= -tol,
        hypothesis_met,
        worst_margin,
        witness: Witness {
            index,
            time_index: None,
        },
    })
}

/// Checks `u >= v - tol` on the cells where `mask` is true, given that
/// `u - v >= -tol` on the inner collar of the mask (cells with a neighbor
/// outside it) and that `MA(u)` puts less than half a cell of mass on
/// `{u < v - tol}` inside the mask.
pub fn domination_check(
    u: &ScalarField,
    v: &ScalarField,
    mask: &[bool],
    theta: &HermitianForm,
    tol: f64,
) -> Result<OracleVerdict> {
    u.check_same_grid(v)?;
    let grid = *u.grid();
    if mask.len() != grid.len() {
        return Err(MaError::Domain(format!(
            "mask has {} cells, grid has {}",
            mask.len(),
            grid.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(MaError::Domain("domain mask is empty".into()));
    }
    let (uv, vv) = (u.values(), v.values());
    let collar_ok = (0..grid.len())
        .filter(|&i| mask[i])
        .filter(|&i| {
            (0..grid.real_dim()).any(|axis| [-1, 1].iter().any(|&o| !mask[grid.neighbor(i, axis, o)]))
        })
        .all(|i| uv[i] - vv[i] >= -tol);
    let dv = NormalizedVolume::new(grid);
    let hypothesis_met = collar_ok && is_psh(theta, u)? && is_psh(theta, v)? && {
        let mu = ma_density(theta, u)?;
        let mass: f64 = (0..grid.len())
            .filter(|&i| mask[i] && uv[i] < vv[i] - tol)
            .map(|i| mu.values()[i] * dv.weight())
            .sum();
        mass < 0.5 * dv.weight()
    };
    let (index, worst_margin) = argmin(
        (0..grid.len()).map(|i| if mask[i] { uv[i] - vv[i] } else { f64::INFINITY }),
    );
    Ok(OracleVerdict {
        passed: worst_margin >= -tol,
        hypothesis_met,
        worst_margin,
        witness: Witness {
            index,
            time_index: None,
        },
    })
}

/// Checks `sup (phi - psi) <= sup (phi_0 - psi_0)_+ + tol` over the snapshot
/// times shared by both trajectories, given that `sub` is a subsolution and
/// `sup` a supersolution (to `class_tol`) at every shared time.
pub fn comparison_parabolic(
    sub: &FlowTrajectory,
    sup: &FlowTrajectory,
    problem: &FlowProblem,
    class_tol: f64,
    tol: f64,
) -> Result<OracleVerdict> {
    let shared: Vec<(usize, usize)> = sub
        .times
        .iter()
        .enumerate()
        .filter_map(|(i, t)| sup.times.iter().position(|s| s == t).map(|j| (i, j)))
        .collect();
    if shared.is_empty() || sub.times[0] != sup.times[0] {
        return Err(MaError::Domain("trajectories share no initial snapshot".into()));
    }
    let mut hypothesis_met = true;
    for &(i, j) in &shared {
        let t = sub.times[i];
        let a = classify_residual(problem, t, &sub.snapshots[i], &sub.phi_dot[i], class_tol)?;
        let b = classify_residual(problem, t, &sup.snapshots[j], &sup.phi_dot[j], class_tol)?;
        hypothesis_met &= matches!(a, ResidualClass::Subsolution | ResidualClass::Solution)
            && matches!(b, ResidualClass::Supersolution | ResidualClass::Solution);
    }
    let bound = sub.snapshots[0].sub(&sup.snapshots[0])?.max().max(0.0);
    let mut worst = (f64::INFINITY, 0, 0);
    for &(i, j) in &shared {
        let (idx, m) = argmin(
            sub.snapshots[i]
                .values()
                .iter()
                .zip(sup.snapshots[j].values())
                .map(|(a, b)| bound - (a - b)),
        );
        if m < worst.0 {
            worst = (m, idx, i);
        }
    }
    Ok(OracleVerdict {
        passed: worst.0 >= -tol,
        hypothesis_met,
        worst_margin: worst.0,
        witness: Witness {
            index: worst.1,
            time_index: Some(worst.2),
        },
    })
}

/// Expected outcome of one oracle sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Hypothesis holds, so the conclusion must hold.
    Pass,
    /// Negative control `v = u - 0.2`: the conclusion must fail by `0.2`.
    Violation,
}

/// One line of the verdict CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub oracle: &'static str,
    pub sample: usize,
    pub expected: Expectation,
    pub hypothesis_met: bool,
    pub passed: bool,
    pub worst_margin: f64,
    pub witness_index: usize,
    /// Outcome matches the expectation.
    pub ok: bool,
}

/// Shift of the negative controls.
pub const NEGATIVE_CONTROL_SHIFT: f64 = 0.2;

/// Seeded randomized run of every oracle: `samples` elliptic comparison
/// pairs from ordered densities, `samples / 4` domination pairs on a random
/// half-torus mask, `max(samples / 20, 2)` parabolic comparisons of flows
/// started from shifted data, and `max(samples / 10, 1)` negative controls.
pub fn oracle_suite(grid: TorusGrid, samples: usize, seed: u64) -> Result<Vec<VerdictRow>> {
    let n = grid.n_complex();
    let theta = HermitianForm::identity(n);
    let tol = default_tolerance(n);
    let check_tol = 100.0 * tol;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let draws: Vec<(Density, Density, u64)> = (0..samples.max(1))
        .map(|_| -> Result<_> {
            let f_v = random_density(grid, 0.3, 2.0, &mut rng)?;
            let lift = random_trig(grid, 2, &mut rng)?;
            let a = rng.gen_range(0.05..0.5);
            let f_u = Density::new(f_v.field().zip_map(&lift, |f, y| f * (1.0 + a * 0.5 * (1.0 + y)))?, 2.0)?;
            Ok((f_u, f_v, rng.gen()))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<Result<(ScalarField, ScalarField)>> = draws
        .par_iter()
        .map(|(f_u, f_v, _)| {
            let u = solve_exponential(&theta, f_u, tol)?.into_solution();
            let v = solve_exponential(&theta, f_v, tol)?.into_solution();
            Ok((u, v))
        })
        .collect();
    let pairs: Vec<(ScalarField, ScalarField)> = pairs.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut push = |oracle, sample, expected, v: OracleVerdict| {
        let ok = match expected {
            Expectation::Pass => v.hypothesis_met && v.passed,
            Expectation::Violation => !v.passed && (v.worst_margin + NEGATIVE_CONTROL_SHIFT).abs() <= 1e-6,
        };
        rows.push(VerdictRow {
            oracle,
            sample,
            expected,
            hypothesis_met: v.hypothesis_met,
            passed: v.passed,
            worst_margin: v.worst_margin,
            witness_index: v.witness.index,
            ok,
        });
    };
    for (k, (u, v)) in pairs.iter().enumerate() {
        push("comparison_elliptic", k, Expectation::Pass, comparison_elliptic(u, v, &theta, check_tol)?);
    }
    for (k, (u, v)) in pairs.iter().take(samples / 4).enumerate() {
        let mut mrng = ChaCha8Rng::seed_from_u64(draws[k].2);
        let axis = mrng.gen_range(0..grid.real_dim());
        let start = mrng.gen_range(0.0..1.0);
        let mask: Vec<bool> = (0..grid.len())
            .map(|i| (grid.position(i, axis) - start).rem_euclid(1.0) < 0.5)
            .collect();
        // v solves with the smaller density, so v >= u: dominate u by v
        push("domination", k, Expectation::Pass, domination_check(v, u, &mask, &theta, check_tol)?);
    }
    for (k, (u, _)) in pairs.iter().take((samples / 10).max(1)).enumerate() {
        push(
            "comparison_elliptic_negative",
            k,
            Expectation::Violation,
            comparison_elliptic(u, &u.add_scalar(-NEGATIVE_CONTROL_SHIFT), &theta, 1e-9)?,
        );
    }
    let flows = (samples / 20).max(2);
    let mut opts = FlowOptions::new(0.5, 1e-3);
    opts.snapshots = 10;
    for k in 0..flows {
        let (f, _, s) = &draws[k % draws.len()];
        let mut frng = ChaCha8Rng::seed_from_u64(*s);
        let forcing = random_forcing(1.0, &mut frng);
        let problem = FlowProblem::new(FormFamily::constant(theta), forcing, f.clone())?;
        let phi0 = random_psh(grid, &theta, 2, 0.5, &mut frng)?;
        let shift = frng.gen_range(0.0..0.5);
        let (a, b) = rayon::join(
            || evolve(&problem, &phi0, &opts),
            || evolve(&problem, &phi0.add_scalar(shift), &opts),
        );
        let (a, b) = (a?, b?);
        push(
            "comparison_parabolic",
            k,
            Expectation::Pass,
            comparison_parabolic(&b, &a, &problem, 1e-6, FLOW_TOL)?,
        );
    }
    Ok(rows)
}

/// Tolerance of parabolic oracle conclusions, covering time-integration error.
pub const FLOW_TOL: f64 = 1e-6;
