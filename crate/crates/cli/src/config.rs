//! Run configuration: a JSON document naming the experiment kind and its
//! data in terms of the built-in field and forcing families.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use malab_core::experiments::PerturbationMode;
use malab_core::hermitian::HermMat;
use malab_core::{default_tolerance, Complex64, Density, FieldSpec, ForcingSpec, FormFamily, HermitianForm, TorusGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SolveElliptic,
    SolveNormalized,
    Evolve,
    StabilityElliptic,
    StabilityParabolic,
    VaryingForms,
    VerifyOracles,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::SolveElliptic,
        Kind::SolveNormalized,
        Kind::Evolve,
        Kind::StabilityElliptic,
        Kind::StabilityParabolic,
        Kind::VaryingForms,
        Kind::VerifyOracles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::SolveElliptic => "solve-elliptic",
            Kind::SolveNormalized => "solve-normalized",
            Kind::Evolve => "evolve",
            Kind::StabilityElliptic => "stability-elliptic",
            Kind::StabilityParabolic => "stability-parabolic",
            Kind::VaryingForms => "varying-forms",
            Kind::VerifyOracles => "verify-oracles",
        }
    }

    pub fn from_name(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub resolution: usize,
}

/// A constant Hermitian form: either a multiple of the identity or explicit
/// diagonal entries plus the real and imaginary parts of the `(1, 2)` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormConfig {
    Scalar(f64),
    Matrix {
        diag: Vec<f64>,
        #[serde(default)]
        off: [f64; 2],
    },
}

impl FormConfig {
    pub fn build(&self, n: usize) -> anyhow::Result<HermitianForm> {
        let mat = match self {
            FormConfig::Scalar(c) => return Ok(HermitianForm::identity(n).scaled(*c)?),
            FormConfig::Matrix { diag, off } => {
                if diag.len() != n {
                    bail!("form needs {n} diagonal entries, got {}", diag.len());
                }
                if n == 1 {
                    if *off != [0.0, 0.0] {
                        bail!("a 1x1 form has no off-diagonal entry");
                    }
                    HermMat::new1(diag[0])
                } else {
                    HermMat::new2(diag[0], diag[1], Complex64::new(off[0], off[1]))
                }
            }
        };
        Ok(HermitianForm::new(mat)?)
    }
}

fn identity_form() -> FormConfig {
    FormConfig::Scalar(1.0)
}

fn unit_density() -> FieldSpec {
    FieldSpec::Constant { value: 1.0 }
}

fn zero_field() -> FieldSpec {
    FieldSpec::Constant { value: 0.0 }
}

fn default_p() -> f64 {
    2.0
}

fn default_t_final() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_snapshots() -> usize {
    100
}

fn default_samples() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_mode() -> PerturbationMode {
    PerturbationMode::Additive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    pub grid: GridConfig,
    #[serde(default = "identity_form")]
    pub theta: FormConfig,
    /// Second form: target of `varying-forms`, end of a linear family for
    /// flows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<FormConfig>,
    #[serde(default = "unit_density")]
    pub density: FieldSpec,
    /// Second density `g`; defaults to `density`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_b: Option<FieldSpec>,
    /// Perturbation direction `h` for scale sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<FieldSpec>,
    #[serde(default = "default_mode")]
    pub mode: PerturbationMode,
    #[serde(default)]
    pub scales: Vec<f64>,
    #[serde(default = "default_forcing")]
    pub forcing: ForcingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing_b: Option<ForcingSpec>,
    #[serde(default = "zero_field")]
    pub phi0: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi0: Option<FieldSpec>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Newton tolerance; defaults per complex dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Initial time step of the adaptive integrator.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_true")]
    pub svg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_forcing() -> ForcingSpec {
    ForcingSpec::Zero
}

/// Configuration errors map to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Data of a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: Kind,
    pub grid: TorusGrid,
    pub theta: HermitianForm,
    pub omega: Option<HermitianForm>,
    pub f: Density,
    pub g: Density,
    pub tol: f64,
}

impl Resolved {
    /// Form family of the flows: constant `theta`, or the linear path from
    /// `theta` to `omega` over `[0, t_final]` against the `theta` volume.
    pub fn family(&self, t_final: f64) -> malab_core::Result<FormFamily> {
        match &self.omega {
            Some(omega) => FormFamily::linear(self.theta, *omega, t_final, self.theta),
            None => Ok(FormFamily::constant(self.theta)),
        }
    }
}

impl RunConfig {
    /// Reads a configuration, or the `config` entry of a run manifest.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(inner) if value.get("malab_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Validates every field used by the experiment kind.
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        self.resolve_inner().map_err(|e| match e.downcast::<UsageError>() {
            Ok(u) => u.into(),
            Err(other) => usage(format!("{other:#}")),
        })
    }

    fn resolve_inner(&self) -> anyhow::Result<Resolved> {
        let kind = self.kind.ok_or_else(|| usage("configuration has no experiment kind"))?;
        if !(self.p > 1.0) {
            bail!(usage(format!("p = {} must exceed 1", self.p)));
        }
        let grid = TorusGrid::new(self.grid.n, self.grid.resolution)?;
        let n = grid.n_complex();
        let theta = self.theta.build(n).context("theta")?;
        let omega = self.omega.as_ref().map(|o| o.build(n)).transpose().context("omega")?;
        let f = Density::new(self.density.build(grid)?, self.p).context("density")?;
        let g = match &self.density_b {
            Some(spec) => Density::new(spec.build(grid)?, self.p).context("density_b")?,
            None => f.clone(),
        };
        if let Some(d) = &self.direction {
            d.build(grid).context("direction")?;
        }
        self.phi0.build(grid).context("phi0")?;
        if let Some(psi0) = &self.psi0 {
            psi0.build(grid).context("psi0")?;
        }
        self.forcing.validate().context("forcing")?;
        if let Some(b) = &self.forcing_b {
            b.validate().context("forcing_b")?;
        }
        let tol = self.tol.unwrap_or_else(|| default_tolerance(n));
        if !(tol > 0.0) {
            bail!("tol = {tol} must be positive");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) || !(self.dt > 0.0 && self.dt <= self.t_final) {
            bail!("need 0 < dt <= t_final, got dt = {}, t_final = {}", self.dt, self.t_final);
        }
        if self.snapshots == 0 {
            bail!("snapshots must be positive");
        }
        if self.scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            bail!("scales must be finite and non-negative");
        }
        match kind {
            Kind::StabilityElliptic => {
                if self.direction.is_none() || self.scales.is_empty() {
                    bail!("stability-elliptic needs a direction and at least one scale");
                }
            }
            Kind::VaryingForms if omega.is_none() => bail!("varying-forms needs omega"),
            Kind::StabilityParabolic if self.direction.is_some() && self.scales.is_empty() => {
                bail!("a direction needs at least one scale")
            }
            Kind::VerifyOracles if self.samples == 0 => bail!("samples must be positive"),
            _ => {}
        }
        if let (Kind::Evolve | Kind::StabilityParabolic, Some(o)) = (kind, &omega) {
            FormFamily::linear(theta, *o, self.t_final, theta).context("omega must dominate theta for flows")?;
        }
        Ok(Resolved {
            kind,
            grid,
            theta,
            omega,
            f,
            g,
            tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":16}}"#);
        let r = c.resolve().unwrap();
        assert_eq!(r.kind, Kind::SolveElliptic);
        assert_eq!(r.f.field().values()[0], 1.0);
        assert_eq!(r.tol, 1e-9);
    }

    #[test]
    fn bad_p_is_usage_error() {
        let c = parse(r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":16},"p":0.5}"#);
        assert!(c.resolve().unwrap_err().is::<UsageError>());
    }

    #[test]
    fn unknown_family_rejected() {
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"kind":"evolve","grid":{"n":1,"resolution":16},"forcing":{"family":"cubic"}}"#
        )
        .is_err());
    }

    #[test]
    fn general_form_parses() {
        let c = parse(r#"{"kind":"solve-elliptic","grid":{"n":2,"resolution":8},"theta":{"diag":[1.0,2.0],"off":[0.1,0.2]}}"#);
        let r = c.resolve().unwrap();
        assert!((r.theta.det() - (2.0 - 0.05)).abs() < 1e-12);
        let bad = parse(r#"{"kind":"solve-elliptic","grid":{"n":2,"resolution":8},"theta":{"diag":[1.0,-2.0]}}"#);
        assert!(bad.resolve().unwrap_err().is::<UsageError>());
    }
}
