//! Forcing terms `F(t, x, r)` of the parabolic equation.
//!
//! Every built-in family has the form `F = alpha r + beta t + gamma +
//! sigma sin(2 pi x1)`, so suprema over boxes in `(t, r)` are attained at
//! corners and can be computed exactly.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    Zero,
    LinearR {
        alpha: f64,
    },
    Affine {
        alpha: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default)]
        gamma: f64,
    },
    SpatialSine {
        #[serde(default)]
        alpha: f64,
        sigma: f64,
    },
}

/// Coefficients `(alpha, beta, gamma, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl ForcingSpec {
    pub fn coefficients(&self) -> ForcingCoefficients {
        let (alpha, beta, gamma, sigma) = match *self {
            ForcingSpec::Zero => (0.0, 0.0, 0.0, 0.0),
            ForcingSpec::LinearR { alpha } => (alpha, 0.0, 0.0, 0.0),
            ForcingSpec::Affine { alpha, beta, gamma } => (alpha, beta, gamma, 0.0),
            ForcingSpec::SpatialSine { alpha, sigma } => (alpha, 0.0, 0.0, sigma),
        };
        ForcingCoefficients {
            alpha,
            beta,
            gamma,
            sigma,
        }
    }

    /// Rejects non-finite coefficients and forcings decreasing in `r`.
    pub fn validate(&self) -> Result<()> {
        let c = self.coefficients();
        if ![c.alpha, c.beta, c.gamma, c.sigma].iter().all(|v| v.is_finite()) {
            return Err(MaError::Domain(format!("non-finite forcing coefficient in {self:?}")));
        }
        if !self.monotone_in_r() {
            return Err(MaError::Domain(format!(
                "forcing must be non-decreasing in r, got alpha = {}",
                c.alpha
            )));
        }
        Ok(())
    }

    pub fn monotone_in_r(&self) -> bool {
        self.coefficients().alpha >= 0.0
    }

    /// `L` with `|F(t1,x,r1) - F(t2,x,r2)| <= L (|r1 - r2| + |t1 - t2|)`.
    pub fn lipschitz(&self) -> f64 {
        let c = self.coefficients();
        c.alpha.abs().max(c.beta.abs())
    }

    /// `dF/dr`, constant for the built-in families.
    pub fn dr(&self) -> f64 {
        self.coefficients().alpha
    }

    /// `sup |dF/dt|`.
    pub fn sup_abs_dt(&self) -> f64 {
        self.coefficients().beta.abs()
    }

    /// `F(t, x, r)` where `x1` is the first real coordinate of `x`.
    pub fn eval(&self, t: f64, x1: f64, r: f64) -> f64 {
        let c = self.coefficients();
        let mut v = c.alpha * r + c.beta * t + c.gamma;
        if c.sigma != 0.0 {
            v += c.sigma * (TAU * x1).sin();
        }
        v
    }

    /// `F(t, x, phi(x))` at every grid point.
    pub fn eval_field(&self, t: f64, phi: &ScalarField) -> Vec<f64> {
        let grid = phi.grid();
        let c = self.coefficients();
        let base = c.beta * t + c.gamma;
        phi.values()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut v = c.alpha * r + base;
                if c.sigma != 0.0 {
                    v += c.sigma * (TAU * grid.position(i, 0)).sin();
                }
                v
            })
            .collect()
    }

    /// `sup (other - self)_+` over `t` in `times`, all `x`, and `r` in
    /// `r_range` (all of `R` when `None`, possibly infinite).
    pub fn sup_positive_excess(
        &self,
        other: &ForcingSpec,
        times: (f64, f64),
        r_range: Option<(f64, f64)>,
    ) -> f64 {
        let a = self.coefficients();
        let b = other.coefficients();
        let d_alpha = b.alpha - a.alpha;
        let d_beta = b.beta - a.beta;
        let r_part = match r_range {
            Some((lo, hi)) => (d_alpha * lo).max(d_alpha * hi),
            None if d_alpha == 0.0 => 0.0,
            None => f64::INFINITY,
        };
        let t_part = (d_beta * times.0).max(d_beta * times.1);
        let s_part = (b.sigma - a.sigma).abs();
        (r_part + t_part + (b.gamma - a.gamma) + s_part).max(0.0)
    }

    /// `sup |other - self|` over the same box.
    pub fn sup_abs_difference(
        &self,
        other: &ForcingSpec,
        times: (f64, f64),
        r_range: Option<(f64, f64)>,
    ) -> f64 {
        self.sup_positive_excess(other, times, r_range)
            .max(other.sup_positive_excess(self, times, r_range))
    }

    /// `sup_{t in times, x} F(t, x, r)` at a fixed level `r`.
    pub fn sup_at_level(&self, times: (f64, f64), r: f64) -> f64 {
        let c = self.coefficients();
        c.alpha * r + (c.beta * times.0).max(c.beta * times.1) + c.gamma + c.sigma.abs()
    }

    /// `(inf, sup)` of `F(t, x, phi(x))` over `t` in `times` and the grid.
    pub fn range_along(&self, times: (f64, f64), phi: &ScalarField) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in [times.0, times.1] {
            for v in self.eval_field(t, phi) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}
