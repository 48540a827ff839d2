use std::fmt::Write as _;

use malab_core::form_distance;
use malab_core::krylov::GmresOptions;

use crate::config::{Kind, Resolved, RunConfig};

fn human_bytes(bytes: f64) -> String {
    const UNITS: [&str; 4] = ["B", "KiB", "MiB", "GiB"];
    let mut v = bytes;
    let mut unit = 0;
    while v >= 1024.0 && unit + 1 < UNITS.len() {
        v /= 1024.0;
        unit += 1;
    }
    format!("{v:.1} {}", UNITS[unit])
}

/// Fields alive during one Newton-GMRES solve: the Krylov basis plus the
/// Hessian components and a handful of work vectors.
fn solve_fields(n: usize) -> usize {
    GmresOptions::default().restart + 1 + 4 * n * n + 12
}

/// Human-readable plan of what `run` would compute. Deterministic in the
/// configuration, so a manifest reproduces the plan of its run.
pub fn describe(config: &RunConfig, r: &Resolved) -> String {
    let mut out = String::new();
    let grid = r.grid;
    let n = grid.n_complex();
    let points = grid.len();
    let field_bytes = (points * 8) as f64;
    let _ = writeln!(out, "experiment: {}", r.kind);
    let _ = writeln!(
        out,
        "grid: n = {n}, resolution {} per axis, {} real axes, {points} points, spacing {}",
        grid.resolution(),
        grid.real_dim(),
        grid.spacing()
    );
    let _ = writeln!(out, "theta: det {:.6}", r.theta.det());
    if let Some(omega) = &r.omega {
        let d = form_distance(omega, &r.theta).unwrap_or(f64::NAN);
        let _ = writeln!(out, "omega: det {:.6}, d(omega, theta) = {d:.6}", omega.det());
    }
    let _ = writeln!(out, "p = {}, Newton tolerance {:e}", config.p, r.tol);

    let mut solves = 0usize;
    let mut concurrent = 1usize;
    let mut stored_fields = 2usize;
    match r.kind {
        Kind::SolveElliptic => {
            solves = 1;
            let _ = writeln!(out, "solve MA_theta(phi) = e^phi f dV, then a uniqueness re-solve from a constant start");
        }
        Kind::SolveNormalized => {
            solves = 1;
            let _ = writeln!(out, "solve MA_theta(rho) = h dV with h = f / mean(f), normalized to sup rho = 0");
        }
        Kind::Evolve | Kind::StabilityParabolic => {
            let forcing = &config.forcing;
            let _ = writeln!(
                out,
                "forcing F: {forcing:?}, L = {}, monotone in r: {}",
                forcing.lipschitz(),
                forcing.monotone_in_r()
            );
            if let Some(b) = &config.forcing_b {
                let _ = writeln!(out, "forcing G: {b:?}, L = {}", b.lipschitz());
            }
            let family_bound = r.family(config.t_final).map_or(f64::NAN, |f| f.derivative_bound());
            let b1 = family_bound.max(forcing.dr().abs());
            let _ = writeln!(
                out,
                "B1 = {b1}, C = n B1 + sup|dF/dt| = {}",
                n as f64 * b1 + forcing.sup_abs_dt()
            );
            let _ = writeln!(
                out,
                "time: T = {}, initial dt = {}, {} snapshots, step-count estimate <= {} at the initial step (adaptive)",
                config.t_final,
                config.dt,
                config.snapshots,
                (config.t_final / config.dt).ceil() as u64
            );
            stored_fields = 2 * (config.snapshots + 1);
            if r.kind == Kind::StabilityParabolic {
                let rows = if config.direction.is_some() { config.scales.len() } else { 1 };
                let _ = writeln!(out, "flows: 2 per row x {rows} rows = {}", 2 * rows);
                concurrent = 2;
                stored_fields *= 2;
                solves = 4 * rows;
                let _ = writeln!(out, "reference solves: up to {solves} (barrier rho and uniform-bound rho per flow)");
            } else {
                let _ = writeln!(out, "flows: 1");
            }
        }
        Kind::StabilityElliptic => {
            let k = config.scales.len();
            solves = 2 * k;
            let _ = writeln!(out, "perturbation mode {:?}, {k} scales", config.mode);
            let _ = writeln!(out, "planned solves: 2 per scale x {k} = {solves} (phi for f is shared across scales)");
            for s in &config.scales {
                let _ = writeln!(out, "  s = {s:e}: solve (theta, f) and (theta, g_s)");
            }
            let _ = writeln!(out, "reference solves: up to {} (one per direction and scale)", 2 * k);
            concurrent = k.max(1);
        }
        Kind::VaryingForms => {
            solves = 2;
            let _ = writeln!(out, "planned solves: 2 ((theta, f) and (omega, g) against the theta volume)");
            let _ = writeln!(out, "reference solves: up to 2");
            concurrent = 2;
        }
        Kind::VerifyOracles => {
            let s = config.samples;
            solves = 2 * s;
            let _ = writeln!(
                out,
                "oracle samples: {s} elliptic comparison pairs ({solves} solves), {} domination, {} negative controls, {} parabolic pairs, seed {}",
                s / 4,
                (s / 10).max(1),
                (s / 20).max(2),
                config.seed
            );
        }
    }
    let memory = field_bytes * (solve_fields(n) * concurrent + stored_fields) as f64;
    let _ = writeln!(out, "total solves: {solves}");
    let _ = writeln!(out, "predicted memory: {}", human_bytes(memory));
    out
}
