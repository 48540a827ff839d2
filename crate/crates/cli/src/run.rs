use std::path::Path;

use malab_core::experiments::{
    varying_forms_constant, FlowData, PerturbationFamily, StabilityReport, FLOW_SLACK,
};
use malab_core::report::{stability_svg, write_csv, write_json, write_rows_csv};
use malab_core::{
    elliptic_stability_run, evolve, oracle_suite, parabolic_stability_run, phi_dot_bound_check,
    phi_dot_constants, solve_exponential, solve_normalized, varying_forms_run, Density, FlowOptions,
    FlowProblem, NormalizedVolume, ScalarField,
};
use serde_json::json;

use crate::config::{Kind, Resolved, RunConfig};

pub struct Outcome {
    /// Every asserted margin holds.
    pub passed: bool,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn field(&mut self, name: &str, field: &ScalarField) -> malab_core::Result<()> {
        field.write_mafld1(self.dir.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> malab_core::Result<()> {
        write_json(value, self.dir.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn report(&mut self, report: &StabilityReport, svg: bool) -> malab_core::Result<()> {
        write_rows_csv(&report.rows, self.dir.join("report.csv"))?;
        self.outputs.push("report.csv".into());
        self.json("report.json", report)?;
        if svg {
            if let Some(text) = stability_svg(report) {
                std::fs::write(self.dir.join("report.svg"), text)?;
                self.outputs.push("report.svg".into());
            }
        }
        Ok(())
    }
}

fn flow_options(config: &RunConfig) -> FlowOptions {
    let mut opts = FlowOptions::new(config.t_final, config.dt);
    opts.snapshots = config.snapshots;
    opts
}

fn report_summary(report: &StabilityReport) -> serde_json::Value {
    json!({
        "rows": report.rows.len(),
        "complete": report.complete,
        "worst_margin": report.worst_margin(),
        "fitted_exponent": report.fitted_exponent,
        "failures": report.failures,
    })
}

pub fn execute(config: &RunConfig, r: &Resolved, dir: &Path) -> malab_core::Result<Outcome> {
    let mut w = Writer {
        dir,
        outputs: Vec::new(),
    };
    let grid = r.grid;
    let (passed, summary) = match r.kind {
        Kind::SolveElliptic => {
            let report = solve_exponential(&r.theta, &r.f, r.tol)?;
            let phi = report.solution();
            w.field("density.mafld", r.f.field())?;
            w.field("phi.mafld", phi)?;
            w.json("solve_report.json", &report)?;
            let summary = json!({
                "sup_norm": phi.sup_norm(),
                "min": phi.min(),
                "max": phi.max(),
                "iterations": report.iterations,
                "final_residual_sup": report.final_residual_sup,
            });
            (true, summary)
        }
        Kind::SolveNormalized => {
            let mass = NormalizedVolume::new(grid).integrate(r.f.field());
            let h = r.f.field().scale(1.0 / mass);
            let report = solve_normalized(&r.theta, &h, r.tol)?;
            w.field("density.mafld", &h)?;
            w.field("rho.mafld", report.solution())?;
            w.json("solve_report.json", &report)?;
            let summary = json!({
                "input_mass": mass,
                "log_shift": report.log_shift,
                "sup_norm": report.solution().sup_norm(),
                "iterations": report.iterations,
                "final_residual_sup": report.final_residual_sup,
            });
            (true, summary)
        }
        Kind::Evolve => {
            let family = r.family(config.t_final)?;
            let problem = FlowProblem::new(family, config.forcing, r.f.clone())?;
            let phi0 = config.phi0.build(grid)?;
            let traj = evolve(&problem, &phi0, &flow_options(config))?;
            traj.write_dir(dir.join("trajectory"))?;
            w.outputs.push("trajectory/manifest.json".into());
            w.field("phi_final.mafld", traj.final_phi())?;
            let (b1, c) = phi_dot_constants(&problem);
            let check = phi_dot_bound_check(&traj, b1, c);
            w.json("phi_dot_bound.json", &check)?;
            let summary = json!({
                "snapshots": traj.len(),
                "stats": traj.stats,
                "final_sup_norm": traj.final_phi().sup_norm(),
                "phi_dot_margin": check.margin,
            });
            (check.margin >= -FLOW_SLACK, summary)
        }
        Kind::StabilityElliptic => {
            let direction = config.direction.as_ref().expect("validated").build(grid)?;
            let family = PerturbationFamily::new(r.f.clone(), direction, config.scales.clone(), config.mode)?;
            let report = elliptic_stability_run(&family, config.p, &r.theta, r.tol)?;
            w.report(&report, config.svg)?;
            (report.passed(), report_summary(&report))
        }
        Kind::StabilityParabolic => {
            let family = r.family(config.t_final)?;
            let opts = flow_options(config);
            let a = FlowData {
                forcing: config.forcing,
                f: r.f.clone(),
                phi0: config.phi0.build(grid)?,
            };
            let b_forcing = config.forcing_b.unwrap_or(config.forcing);
            let psi0 = config.psi0.as_ref().unwrap_or(&config.phi0).build(grid)?;
            let rows: Vec<(f64, Density)> = match &config.direction {
                Some(d) => {
                    let pf = PerturbationFamily::new(r.f.clone(), d.build(grid)?, config.scales.clone(), config.mode)?;
                    pf.scales.iter().map(|&s| Ok((s, pf.density_at(s)?))).collect::<malab_core::Result<_>>()?
                }
                None => vec![(0.0, r.g.clone())],
            };
            let mut parts = Vec::with_capacity(rows.len());
            for (s, g) in rows {
                let b = FlowData {
                    forcing: b_forcing,
                    f: g,
                    phi0: psi0.clone(),
                };
                parts.push(parabolic_stability_run(&a, &b, &family, &opts, config.p, s)?);
            }
            let report = StabilityReport::merge(parts).expect("at least one row");
            w.report(&report, config.svg)?;
            (report.passed(), report_summary(&report))
        }
        Kind::VaryingForms => {
            let omega = r.omega.expect("validated");
            let report = varying_forms_run(&r.f, &r.g, &r.theta, &omega, config.p, r.tol)?;
            w.report(&report, config.svg)?;
            let mut summary = report_summary(&report);
            if let Some(row) = report.rows.first() {
                summary["distance"] = json!(row.s);
                summary["constant"] = json!(varying_forms_constant(row, grid.n_complex()));
            }
            (report.passed(), summary)
        }
        Kind::VerifyOracles => {
            let rows = oracle_suite(grid, config.samples, config.seed)?;
            write_csv(&rows, dir.join("verdicts.csv"))?;
            w.outputs.push("verdicts.csv".into());
            let failures = rows.iter().filter(|r| !r.ok).count();
            let summary = json!({
                "verdicts": rows.len(),
                "failures": failures,
                "counterexamples": rows.iter().filter(|r| r.hypothesis_met && !r.passed).count(),
            });
            (failures == 0, summary)
        }
    };
    Ok(Outcome {
        passed,
        outputs: w.outputs,
        summary,
    })
}
