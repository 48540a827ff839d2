//! The complex Monge-Ampère operator and the measure-theoretic vocabulary
//! around it: normalized volume, `L^p` norms, oscillation, densities.

use crate::error::{MaError, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::HermitianForm;
use crate::spectral::{complex_hessian, HermitianField};

/// Absolute tolerance for matrix-order comparisons.
pub const MATRIX_ORDER_TOL: f64 = 1e-10;

/// Default lower bound for admissible densities.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-6;

/// Uniform probability measure on the grid (trapezoidal rule on the torus).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedVolume {
    grid: TorusGrid,
    weight: f64,
}

impl NormalizedVolume {
    pub fn new(grid: TorusGrid) -> Self {
        Self {
            grid,
            weight: 1.0 / grid.len() as f64,
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn integrate(&self, h: &ScalarField) -> f64 {
        h.values().iter().sum::<f64>() * self.weight
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.weight
    }
}

/// A strictly positive density with a reference integrability exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    field: ScalarField,
    p: f64,
    floor: f64,
}

impl Density {
    pub fn new(field: ScalarField, p: f64) -> Result<Self> {
        Self::with_floor(field, p, DEFAULT_DENSITY_FLOOR)
    }

    pub fn with_floor(field: ScalarField, p: f64, floor: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(MaError::Domain(format!("density exponent p = {p} must exceed 1")));
        }
        if !(floor > 0.0) {
            return Err(MaError::Domain(format!("density floor {floor} must be positive")));
        }
        let min = field.min();
        if min < floor {
            return Err(MaError::Domain(format!(
                "density minimum {min} is below the floor {floor}"
            )));
        }
        Ok(Self { field, p, floor })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn grid(&self) -> &TorusGrid {
        self.field.grid()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `e^c f`.
    pub fn scaled_exp(&self, c: f64) -> Result<Self> {
        Self::with_floor(self.field.scale(c.exp()), self.p, self.floor.min(self.field.min() * c.exp()))
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.field.values().iter().map(|v| v.ln()).collect()
    }
}

/// Pointwise `det(g_form + H(phi)) / det(g_reference)`.
///
/// With `reference == form` this is the density of `MA_form(phi)` against the
/// normalized volume, total mass 1. A different reference keeps `dV` tied to
/// the volume of the reference form, so forms larger than the reference carry
/// proportionally more mass.
pub fn ma_density_relative(
    form: &HermitianForm,
    reference: &HermitianForm,
    phi: &ScalarField,
) -> Result<ScalarField> {
    check_dims(form, phi)?;
    let h = complex_hessian(phi);
    Ok(ma_density_from_hessian(form, reference, &h))
}

pub(crate) fn ma_density_from_hessian(
    form: &HermitianForm,
    reference: &HermitianForm,
    h: &HermitianField,
) -> ScalarField {
    let g = form.matrix();
    let inv_ref = 1.0 / reference.det();
    let values = (0..h.len()).map(|i| g.add(&h.at(i)).det() * inv_ref).collect();
    ScalarField::from_vec_unchecked(*h.grid(), values)
}

/// Density of `MA_theta(phi)` against the normalized volume.
pub fn ma_density(theta: &HermitianForm, phi: &ScalarField) -> Result<ScalarField> {
    ma_density_relative(theta, theta, phi)
}

/// Smallest eigenvalue of `g + H(phi)` over the grid.
pub fn min_form_eigenvalue(theta: &HermitianForm, phi: &ScalarField) -> Result<f64> {
    check_dims(theta, phi)?;
    let h = complex_hessian(phi);
    Ok(min_eigenvalue_from_hessian(theta, &h))
}

pub(crate) fn min_eigenvalue_from_hessian(theta: &HermitianForm, h: &HermitianField) -> f64 {
    let g = theta.matrix();
    (0..h.len())
        .map(|i| g.add(&h.at(i)).min_eigenvalue())
        .fold(f64::INFINITY, f64::min)
}

/// Whether `theta + dd^c phi >= -tol` at every grid point.
pub fn is_theta_psh(theta: &HermitianForm, phi: &ScalarField, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(MaError::Domain(format!("tolerance {tol} must be non-negative")));
    }
    Ok(min_form_eigenvalue(theta, phi)? >= -tol)
}

/// `(integral |h|^p dV)^{1/p}`.
pub fn lp_norm(h: &ScalarField, p: f64, dv: &NormalizedVolume) -> Result<f64> {
    lp_norm_values(h.values(), p, dv)
}

pub(crate) fn lp_norm_values(values: &[f64], p: f64, dv: &NormalizedVolume) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(MaError::Domain(format!("L^p exponent {p} must be >= 1")));
    }
    if p == 1.0 {
        return Ok(dv.integrate_values(&values.iter().map(|v| v.abs()).collect::<Vec<_>>()));
    }
    // scale out the maximum to avoid overflow for large p
    let m = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = values.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>() * dv.weight();
    Ok(m * s.powf(1.0 / p))
}

/// `sup phi - inf phi`.
pub fn oscillation(phi: &ScalarField) -> f64 {
    phi.max() - phi.min()
}

/// Pointwise `max(h, 0)`.
pub fn positive_part(h: &ScalarField) -> ScalarField {
    ScalarField::from_vec_unchecked(*h.grid(), h.values().iter().map(|v| v.max(0.0)).collect())
}

fn check_dims(form: &HermitianForm, phi: &ScalarField) -> Result<()> {
    if form.n() != phi.grid().n_complex() {
        return Err(MaError::Domain(format!(
            "form has dimension {}, field lives on a torus of dimension {}",
            form.n(),
            phi.grid().n_complex()
        )));
    }
    Ok(())
}
