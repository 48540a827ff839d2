//! Newton-Krylov solvers for `MA_theta(phi) = e^phi f dV` and for the
//! normalized problem `MA_theta(rho) = h dV`, `sup rho = 0`.
//!
//! Both are solved in logarithmic form. A Newton step `psi` solves the
//! linearization `tr((g + H(phi))^{-1} H(psi)) - psi = -R` (exponential case)
//! by GMRES, preconditioned with the constant-coefficient operator obtained
//! by averaging `(g + H(phi))^{-1}` over the torus, which is diagonal in
//! Fourier space. A halving line search keeps `g + H(phi)` positive definite.

use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};
use crate::grid::ScalarField;
use crate::hermitian::{HermMat, HermitianForm};
use crate::krylov::{gmres, GmresOptions};
use crate::ma::{lp_norm, ma_density, positive_part, Density, NormalizedVolume};
use crate::spectral::{hessian_at, Spectral};

/// Default residual tolerance: `1e-9` for `n = 1`, `1e-7` for `n = 2`.
pub fn default_tolerance(n_complex: usize) -> f64 {
    if n_complex == 1 {
        1e-9
    } else {
        1e-7
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Option<ScalarField>,
    pub iterations: usize,
    pub final_residual_sup: f64,
    #[serde(rename = "damping_history")]
    pub newton_damping_history: Vec<f64>,
    /// Contract residual before each Newton step, then the final one.
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    /// Normalized problem only: the solution satisfies `MA(rho) = e^c h`
    /// with this `c`.
    #[serde(skip)]
    pub log_shift: f64,
}

impl SolveReport {
    pub fn solution(&self) -> &ScalarField {
        self.solution.as_ref().expect("report carries its solution")
    }

    pub fn into_solution(self) -> ScalarField {
        self.solution.expect("report carries its solution")
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub min_damping: f64,
    /// Form whose volume normalizes `dV`; `None` means the equation's own form.
    pub reference: Option<HermitianForm>,
    pub initial_guess: Option<ScalarField>,
    /// Re-solve from a second start and require agreement to `10 tol`.
    pub verify_uniqueness: bool,
}

impl SolverOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_newton: 60,
            min_damping: 1.0 / 1024.0 / 1024.0,
            reference: None,
            initial_guess: None,
            verify_uniqueness: true,
        }
    }
}

enum Problem<'a> {
    /// `log ma - phi - log f`
    Exponential { f: &'a [f64], log_f: Vec<f64> },
    /// `log ma - log h`, solved on mean-zero increments plus a scalar
    Normalized { h: &'a [f64], log_h: Vec<f64> },
}

/// State of the iterate at one Newton point.
struct Linearization {
    inv: Vec<HermMat>,
    log_residual: Vec<f64>,
    contract_residual: f64,
}

struct Newton<'a> {
    form: HermitianForm,
    ref_det: f64,
    spectral: std::sync::Arc<Spectral>,
    problem: Problem<'a>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl<'a> Newton<'a> {
    /// `None` when `g + H(phi)` is not positive definite somewhere.
    fn linearize(&self, phi: &[f64], shift: f64) -> Option<Linearization> {
        let comps = self.spectral.hessian_components(phi);
        let g = self.form.matrix();
        let len = phi.len();
        let mut ma = Vec::with_capacity(len);
        let mut inv = Vec::with_capacity(len);
        for i in 0..len {
            let a = g.add(&hessian_at(&comps, i));
            if !(a.min_eigenvalue() > 0.0) {
                return None;
            }
            ma.push(a.det() / self.ref_det);
            inv.push(a.inverse());
        }
        let (log_residual, contract): (Vec<f64>, Vec<f64>) = match &self.problem {
            Problem::Exponential { f, log_f } => (0..len)
                .map(|i| {
                    (
                        ma[i].ln() - phi[i] - log_f[i],
                        ma[i] - phi[i].exp() * f[i],
                    )
                })
                .unzip(),
            Problem::Normalized { h, log_h } => (0..len)
                .map(|i| (ma[i].ln() - log_h[i] - shift, ma[i] - shift.exp() * h[i]))
                .unzip(),
        };
        Some(Linearization {
            inv,
            log_residual,
            contract_residual: sup(&contract),
        })
    }

    fn trace_apply(&self, inv: &[HermMat], v: &[f64]) -> Vec<f64> {
        let comps = self.spectral.hessian_components(v);
        let n = self.form.n();
        (0..v.len())
            .map(|i| {
                if n == 1 {
                    inv[i].diag[0] * comps[0][i]
                } else {
                    inv[i].trace_product(&hessian_at(&comps, i))
                }
            })
            .collect()
    }

    /// Newton increment for the field and for the shift.
    fn step(&self, lin: &Linearization) -> (Vec<f64>, f64) {
        let len = lin.inv.len();
        let n = self.form.n();
        let mut mean = HermMat::zero(n);
        for m in &lin.inv {
            mean = mean.add(m);
        }
        mean = mean.scale(1.0 / len as f64);
        let mut symbol = self.spectral.trace_symbol(&mean);
        let normalized = matches!(self.problem, Problem::Normalized { .. });
        if !normalized {
            symbol.iter_mut().for_each(|s| *s -= 1.0);
        }
        let rhs: Vec<f64> = lin.log_residual.iter().map(|r| -r).collect();
        let rel_tol = sup(&lin.log_residual).clamp(1e-13, 1e-2);
        let opts = GmresOptions {
            rel_tol,
            ..Default::default()
        };
        let precond = |v: &[f64]| self.spectral.divide_by_symbol(v, &symbol);
        if normalized {
            // unknown v = (mean-zero increment) + (scalar in the mean)
            let apply = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let centered: Vec<f64> = v.iter().map(|x| x - m).collect();
                let mut out = self.trace_apply(&lin.inv, &centered);
                out.iter_mut().for_each(|o| *o += m);
                out
            };
            let (v, _) = gmres(apply, precond, &rhs, &opts);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| x - m).collect(), -m)
        } else {
            let apply = |v: &[f64]| {
                let mut out = self.trace_apply(&lin.inv, v);
                out.iter_mut().zip(v).for_each(|(o, x)| *o -= x);
                out
            };
            (gmres(apply, precond, &rhs, &opts).0, 0.0)
        }
    }

    fn run(&self, mut phi: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        let mut shift = 0.0;
        let mut lin = self.linearize(&phi, shift).ok_or_else(|| {
            MaError::Positivity("initial guess is not strictly psh for the form".into())
        })?;
        let mut damping = Vec::new();
        let mut history = vec![lin.contract_residual];
        let mut iterations = 0;
        loop {
            if lin.contract_residual <= opts.tol {
                // one extra Newton step, kept only if it helps
                let (delta, d_shift) = self.step(&lin);
                let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| p + d).collect();
                if let Some(next) = self.linearize(&trial, shift + d_shift) {
                    if next.contract_residual < lin.contract_residual {
                        phi = trial;
                        shift += d_shift;
                        lin = next;
                        damping.push(1.0);
                        iterations += 1;
                        history.push(lin.contract_residual);
                    }
                }
                break;
            }
            if iterations >= opts.max_newton {
                return Err(MaError::Convergence {
                    iterations,
                    residual: lin.contract_residual,
                    history,
                });
            }
            let (delta, d_shift) = self.step(&lin);
            let merit = rms(&lin.log_residual);
            let mut alpha = 1.0;
            let mut saw_positive = false;
            let accepted = loop {
                let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| p + alpha * d).collect();
                if let Some(next) = self.linearize(&trial, shift + alpha * d_shift) {
                    saw_positive = true;
                    if rms(&next.log_residual) <= (1.0 - 1e-4 * alpha) * merit
                        || next.contract_residual <= opts.tol
                    {
                        break Some((trial, alpha * d_shift, next));
                    }
                }
                alpha *= 0.5;
                if alpha < opts.min_damping {
                    break None;
                }
            };
            let Some((trial, accepted_shift, next)) = accepted else {
                if !saw_positive {
                    return Err(MaError::Positivity(format!(
                        "no damped step keeps the form positive (residual {:e})",
                        lin.contract_residual
                    )));
                }
                return Err(MaError::Convergence {
                    iterations,
                    residual: lin.contract_residual,
                    history,
                });
            };
            phi = trial;
            shift += accepted_shift;
            lin = next;
            damping.push(alpha);
            iterations += 1;
            history.push(lin.contract_residual);
        }
        let report = SolveReport {
            solution: None,
            iterations,
            final_residual_sup: lin.contract_residual,
            newton_damping_history: damping,
            residual_history: history,
            log_shift: shift,
        };
        Ok((phi, report))
    }
}

/// Solves `MA_theta(phi) = e^phi f dV` with default options.
pub fn solve_exponential(theta: &HermitianForm, f: &Density, tol: f64) -> Result<SolveReport> {
    solve_exponential_with(theta, f, &SolverOptions::new(tol))
}

pub fn solve_exponential_with(
    theta: &HermitianForm,
    f: &Density,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return Err(MaError::Domain(format!("tolerance {} must be positive", opts.tol)));
    }
    let grid = *f.grid();
    if theta.n() != grid.n_complex() {
        return Err(MaError::Domain("form and density dimensions differ".into()));
    }
    let reference = opts.reference.unwrap_or(*theta);
    let newton = Newton {
        form: *theta,
        ref_det: reference.det(),
        spectral: Spectral::for_grid(&grid),
        problem: Problem::Exponential {
            f: f.field().values(),
            log_f: f.log_values(),
        },
    };
    let start = match &opts.initial_guess {
        Some(g) => {
            g.check_same_grid(f.field())?;
            g.values().to_vec()
        }
        None => vec![0.0; grid.len()],
    };
    let (phi, mut report) = newton.run(start, opts)?;
    if opts.verify_uniqueness {
        // constant start chosen to differ from the default zero guess
        let log_mean = f.log_values().iter().sum::<f64>() / grid.len() as f64;
        let ratio_shift = (reference.det() / theta.det()).ln();
        let alt = vec![0.5 - log_mean - ratio_shift; grid.len()];
        let (phi_alt, _) = newton.run(alt, opts)?;
        let difference = phi
            .iter()
            .zip(&phi_alt)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if difference > 10.0 * opts.tol {
            return Err(MaError::NonUnique { difference });
        }
    }
    report.solution = Some(ScalarField::new(grid, phi)?);
    Ok(report)
}

/// Solves `MA_theta(rho) = h dV` with `max rho = 0`.
///
/// Fails with [`MaError::Incompatible`] when the discrete operator's mass
/// defect keeps the residual above `tol`; [`solve_normalized_compatible`]
/// returns that solution instead.
pub fn solve_normalized(theta: &HermitianForm, h: &ScalarField, tol: f64) -> Result<SolveReport> {
    let mut report = solve_normalized_compatible(theta, h, tol)?;
    let ma = ma_density(theta, report.solution())?;
    let residual = ma.sub(h)?.sup_norm();
    if residual > tol {
        return Err(MaError::Incompatible {
            log_shift: report.log_shift,
            residual,
        });
    }
    report.final_residual_sup = residual;
    Ok(report)
}

/// Solves `MA_theta(rho) = e^c h dV`, `max rho = 0`, for `rho` and the
/// constant `c` (reported as `log_shift`).
///
/// On a grid the total mass of `MA_theta(rho)` can exceed one by the energy
/// of the Nyquist modes of `rho`, so `c >= 0` up to roundoff and the
/// solution is a subsolution of the exact problem.
pub fn solve_normalized_compatible(theta: &HermitianForm, h: &ScalarField, tol: f64) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(MaError::Domain(format!("tolerance {tol} must be positive")));
    }
    let grid = *h.grid();
    if theta.n() != grid.n_complex() {
        return Err(MaError::Domain("form and density dimensions differ".into()));
    }
    let mass = NormalizedVolume::new(grid).integrate(h);
    if (mass - 1.0).abs() > 1e-10 {
        return Err(MaError::Precondition(format!(
            "density mass {mass} differs from 1 by more than 1e-10"
        )));
    }
    if !(h.min() > 0.0) {
        return Err(MaError::Precondition(format!(
            "density minimum {} is not positive",
            h.min()
        )));
    }
    let newton = Newton {
        form: *theta,
        ref_det: theta.det(),
        spectral: Spectral::for_grid(&grid),
        problem: Problem::Normalized {
            h: h.values(),
            log_h: h.values().iter().map(|v| v.ln()).collect(),
        },
    };
    let opts = SolverOptions {
        verify_uniqueness: false,
        ..SolverOptions::new(tol)
    };
    let (rho, mut report) = newton.run(vec![0.0; grid.len()], &opts)?;
    let top = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = rho.iter().map(|v| v - top).collect();
    report.solution = Some(ScalarField::new(grid, shifted)?);
    Ok(report)
}

/// Right-hand side `h = a + (g - f)_+ / ||(g - f)_+||_p` of the auxiliary
/// problem, with `a` chosen so that `h` has unit mass.
#[derive(Debug, Clone)]
pub struct ReferenceDensity {
    pub h: ScalarField,
    pub a: f64,
    /// `||(g - f)_+||_p`
    pub gap_pos_p: f64,
    /// `||(g - f)_+||_1`
    pub gap_pos_1: f64,
}

pub fn build_reference_density(f: &Density, g: &Density, p: f64) -> Result<ReferenceDensity> {
    if !(p > 1.0) {
        return Err(MaError::Domain(format!("exponent p = {p} must exceed 1")));
    }
    let gap = positive_part(&g.field().sub(f.field())?);
    let dv = NormalizedVolume::new(*f.grid());
    let gap_pos_p = lp_norm(&gap, p, &dv)?;
    if gap_pos_p == 0.0 {
        return Err(MaError::Degenerate("(g - f)_+ vanishes identically".into()));
    }
    let gap_pos_1 = lp_norm(&gap, 1.0, &dv)?;
    let a = (1.0 - gap_pos_1 / gap_pos_p).clamp(0.0, 1.0);
    let h = gap.scale(1.0 / gap_pos_p).add_scalar(a);
    Ok(ReferenceDensity {
        h,
        a,
        gap_pos_p,
        gap_pos_1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::ma::{is_theta_psh, ma_density};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn exp_product(grid: TorusGrid, amp: f64) -> Density {
        let raw = ScalarField::from_fn(grid, |x| (amp * (TAU * x[0]).sin() * (TAU * x[1]).cos()).exp()).unwrap();
        let mean = raw.mean();
        Density::new(raw.scale(1.0 / mean), 2.0).unwrap()
    }

    #[test]
    fn unit_density_gives_zero() {
        for n in [1, 2] {
            let g = TorusGrid::new(n, if n == 1 { 32 } else { 8 }).unwrap();
            let f = Density::new(ScalarField::constant(g, 1.0), 2.0).unwrap();
            let rep = solve_exponential(&HermitianForm::identity(n), &f, default_tolerance(n)).unwrap();
            assert!(rep.solution().sup_norm() <= 1e-12);
        }
    }

    #[test]
    fn shift_identity() {
        let g = TorusGrid::new(1, 32).unwrap();
        let f = exp_product(g, 0.3);
        let theta = HermitianForm::identity(1);
        let phi = solve_exponential(&theta, &f, 1e-10).unwrap().into_solution();
        let c = 0.7;
        let psi = solve_exponential(&theta, &f.scaled_exp(c).unwrap(), 1e-10)
            .unwrap()
            .into_solution();
        let diff = phi.sub(&psi).unwrap();
        assert!(diff.values().iter().all(|d| (d - c).abs() < 1e-9));
    }

    #[test]
    fn residual_checked_independently() {
        let g = TorusGrid::new(1, 32).unwrap();
        let f = exp_product(g, 0.3);
        let theta = HermitianForm::identity(1);
        let rep = solve_exponential(&theta, &f, 1e-9).unwrap();
        let phi = rep.solution();
        // recompute both sides through the public operator
        let lhs = ma_density(&theta, phi).unwrap();
        let rhs = phi.zip_map(f.field(), |p, f| p.exp() * f).unwrap();
        assert!(lhs.sup_distance(&rhs).unwrap() <= 1e-8);
        assert!(rep.final_residual_sup <= 1e-9);
        assert!(is_theta_psh(&theta, phi, 1e-8).unwrap());
    }

    #[test]
    fn newton_tail_is_quadratic() {
        let g = TorusGrid::new(1, 32).unwrap();
        let f = exp_product(g, 0.8);
        let rep = solve_exponential(&HermitianForm::identity(1), &f, 1e-11).unwrap();
        let tail: Vec<f64> = rep.residual_history.iter().copied().filter(|&r| r < 1e-3).collect();
        for w in tail.windows(2).rev().take(3) {
            let (prev, next) = (w[0], w[1]);
            assert!(next <= 100.0 * prev * prev + 1e-13, "{prev:e} -> {next:e}");
        }
    }

    #[test]
    fn monotone_in_density() {
        let g = TorusGrid::new(1, 16).unwrap();
        let theta = HermitianForm::identity(1);
        let f = exp_product(g, 0.4);
        let bump = ScalarField::from_fn(g, |x| 0.3 * (TAU * x[1]).cos().powi(2)).unwrap();
        let f_big = Density::new(f.field().add(&bump).unwrap(), 2.0).unwrap();
        let tol = 1e-9;
        let phi = solve_exponential(&theta, &f, tol).unwrap().into_solution();
        let phi_big = solve_exponential(&theta, &f_big, tol).unwrap().into_solution();
        for (a, b) in phi_big.values().iter().zip(phi.values()) {
            assert!(*a <= b + 10.0 * tol);
        }
    }

    #[test]
    fn two_dim_general_form() {
        let g = TorusGrid::new(2, 8).unwrap();
        let theta = HermitianForm::new(HermMat::new2(1.1, 0.9, Complex64::new(0.1, -0.2))).unwrap();
        let f = Density::new(
            ScalarField::from_fn(g, |x| 1.0 + 0.2 * (TAU * x[0]).sin() * (TAU * x[2]).cos()).unwrap(),
            2.0,
        )
        .unwrap();
        let rep = solve_exponential(&theta, &f, 1e-7).unwrap();
        let lhs = ma_density(&theta, rep.solution()).unwrap();
        let rhs = rep.solution().zip_map(f.field(), |p, f| p.exp() * f).unwrap();
        assert!(lhs.sup_distance(&rhs).unwrap() <= 1e-7);
    }

    #[test]
    fn normalized_trivial_and_sine() {
        let g = TorusGrid::new(1, 32).unwrap();
        let theta = HermitianForm::identity(1);
        let rep = solve_normalized(&theta, &ScalarField::constant(g, 1.0), 1e-9).unwrap();
        assert!(rep.solution().sup_norm() <= 1e-14);

        let h = ScalarField::from_fn(g, |x| 1.0 + 0.2 * (TAU * x[0]).sin()).unwrap();
        let rep = solve_normalized(&theta, &h, 1e-9).unwrap();
        assert_eq!(rep.solution().max(), 0.0);
        let lhs = ma_density(&theta, rep.solution()).unwrap();
        assert!(lhs.sup_distance(&h).unwrap() <= 1e-9);
    }

    #[test]
    fn normalized_is_translation_equivariant() {
        let g = TorusGrid::new(1, 32).unwrap();
        let theta = HermitianForm::identity(1);
        let h = ScalarField::from_fn(g, |x| 1.0 + 0.3 * (TAU * x[0]).sin() * (TAU * x[1]).cos()).unwrap();
        let shift = [5, -3];
        let rho = solve_normalized(&theta, &h, 1e-10).unwrap().into_solution();
        let rho_shift = solve_normalized(&theta, &h.translate(&shift).unwrap(), 1e-10)
            .unwrap()
            .into_solution();
        assert!(rho.translate(&shift).unwrap().sup_distance(&rho_shift).unwrap() <= 1e-8);
    }

    #[test]
    fn normalized_rejects_bad_mass() {
        let g = TorusGrid::new(1, 16).unwrap();
        let err = solve_normalized(&HermitianForm::identity(1), &ScalarField::constant(g, 1.1), 1e-9);
        assert!(matches!(err, Err(MaError::Precondition(_))));
    }

    #[test]
    fn reference_density_cases() {
        let g = TorusGrid::new(1, 16).unwrap();
        let f = Density::new(ScalarField::constant(g, 1.0), 2.0).unwrap();
        let g_const = Density::new(ScalarField::constant(g, 1.5), 2.0).unwrap();
        let r = build_reference_density(&f, &g_const, 2.0).unwrap();
        assert!(r.a.abs() < 1e-15);
        assert!(r.h.values().iter().all(|v| (v - 1.0).abs() < 1e-14));

        let smaller = Density::new(ScalarField::constant(g, 0.5), 2.0).unwrap();
        assert!(matches!(
            build_reference_density(&f, &smaller, 2.0),
            Err(MaError::Degenerate(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dv = NormalizedVolume::new(g);
        for _ in 0..20 {
            let mk = |rng: &mut ChaCha8Rng| {
                Density::new(
                    ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap(),
                    3.0,
                )
                .unwrap()
            };
            let (f, gg) = (mk(&mut rng), mk(&mut rng));
            let r = build_reference_density(&f, &gg, 3.0).unwrap();
            // direct quadrature
            let gap: Vec<f64> = gg.field().values().iter().zip(f.field().values()).map(|(a, b)| (a - b).max(0.0)).collect();
            let l1 = gap.iter().sum::<f64>() / gap.len() as f64;
            let lp = (gap.iter().map(|v| v.powi(3)).sum::<f64>() / gap.len() as f64).cbrt();
            assert!((r.a - (1.0 - l1 / lp)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.a));
            assert!((dv.integrate(&r.h) - 1.0).abs() < 1e-10);
            assert!(lp_norm(&r.h, 3.0, &dv).unwrap() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn rough_density_needs_a_nonnegative_shift() {
        let g = TorusGrid::new(2, 8).unwrap();
        let theta = HermitianForm::identity(2);
        let raw = ScalarField::from_fn(g, |x| 1.0 + ((TAU * x[0]).sin() * (TAU * x[3]).cos()).max(0.0)).unwrap();
        let h = raw.scale(1.0 / raw.mean());
        let report = solve_normalized_compatible(&theta, &h, 1e-7).unwrap();
        assert!(report.log_shift > 0.0);
        let rho = report.solution();
        assert_eq!(rho.max(), 0.0);
        let expected = h.scale(report.log_shift.exp());
        assert!(ma_density(&theta, rho).unwrap().sub(&expected).unwrap().sup_norm() <= 1e-7);
        assert!(matches!(
            solve_normalized(&theta, &h, 1e-7),
            Err(MaError::Incompatible { .. })
        ));
    }
}
