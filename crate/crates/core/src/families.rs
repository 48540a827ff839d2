//! Built-in field families used by configurations, tests and experiments.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};
use crate::forcing::ForcingSpec;
use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::HermitianForm;
use crate::ma::Density;
use crate::spectral::complex_hessian;

/// A scalar field described by a family tag and its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `offset + amplitude sin(2 pi frequency x_axis + phase)`
    Sine {
        amplitude: f64,
        #[serde(default)]
        axis: usize,
        #[serde(default = "one")]
        frequency: u32,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `exp(amplitude sin(2 pi x1) cos(2 pi y1))`
    ExpProduct {
        amplitude: f64,
    },
    /// `offset + amplitude exp(-|x - center|^2 / (2 width^2))`, periodic distance.
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude * (random trigonometric sum of max mode `modes`,
    /// normalized to sup norm 1)`, reproducible from `seed`.
    Random {
        amplitude: f64,
        modes: u32,
        seed: u64,
        #[serde(default)]
        offset: f64,
    },
}

fn one() -> u32 {
    1
}

impl FieldSpec {
    pub fn build(&self, grid: TorusGrid) -> Result<ScalarField> {
        let d = grid.real_dim();
        match self {
            FieldSpec::Constant { value } => ScalarField::new(grid, vec![*value; grid.len()]),
            FieldSpec::Sine {
                amplitude,
                axis,
                frequency,
                phase,
                offset,
            } => {
                if *axis >= d {
                    return Err(MaError::Domain(format!("axis {axis} outside 0..{d}")));
                }
                let k = *frequency as f64;
                ScalarField::from_fn(grid, |x| offset + amplitude * (TAU * k * x[*axis] + phase).sin())
            }
            FieldSpec::ExpProduct { amplitude } => {
                ScalarField::from_fn(grid, |x| (amplitude * (TAU * x[0]).sin() * (TAU * x[1]).cos()).exp())
            }
            FieldSpec::Bump {
                amplitude,
                center,
                width,
                offset,
            } => {
                if center.len() != d {
                    return Err(MaError::Domain(format!("bump center needs {d} coordinates")));
                }
                if !(*width > 0.0) {
                    return Err(MaError::Domain(format!("bump width {width} must be positive")));
                }
                ScalarField::from_fn(grid, |x| {
                    let r2: f64 = x
                        .iter()
                        .zip(center)
                        .map(|(a, c)| {
                            let t = (a - c).rem_euclid(1.0);
                            t.min(1.0 - t).powi(2)
                        })
                        .sum();
                    offset + amplitude * (-r2 / (2.0 * width * width)).exp()
                })
            }
            FieldSpec::Random {
                amplitude,
                modes,
                seed,
                offset,
            } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let raw = random_trig(grid, *modes, &mut rng)?;
                Ok(raw.scale(*amplitude).add_scalar(*offset))
            }
        }
    }
}

/// Random trigonometric polynomial with wavenumbers in `[-modes, modes]` per
/// axis, decaying coefficients, zero mean and sup norm 1.
pub fn random_trig(grid: TorusGrid, modes: u32, rng: &mut impl Rng) -> Result<ScalarField> {
    let d = grid.real_dim();
    let m = modes.max(1) as i32;
    let terms: Vec<(Vec<f64>, f64, f64)> = (0..3 * d)
        .map(|_| {
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-m..=m) as f64).collect();
            let norm: f64 = k.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            (k, rng.gen_range(-1.0..1.0) / norm, rng.gen_range(0.0..TAU))
        })
        .collect();
    let raw = ScalarField::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(k, c, ph)| {
                let arg: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
                c * (TAU * arg + ph).sin()
            })
            .sum()
    })?;
    let centered = raw.add_scalar(-raw.mean());
    let s = centered.sup_norm();
    Ok(if s > 0.0 { centered.scale(1.0 / s) } else { centered })
}

/// Random strictly `theta`-psh potential: a random trigonometric sum scaled
/// so that the smallest eigenvalue of `g + H` stays at least
/// `(1 - strength) lambda_min(g)`.
pub fn random_psh(
    grid: TorusGrid,
    theta: &HermitianForm,
    modes: u32,
    strength: f64,
    rng: &mut impl Rng,
) -> Result<ScalarField> {
    let raw = random_trig(grid, modes, rng)?;
    let h = complex_hessian(&raw);
    let worst = (0..h.len())
        .map(|i| {
            let m = h.at(i);
            m.min_eigenvalue().abs().max(m.max_eigenvalue().abs())
        })
        .fold(0.0_f64, f64::max);
    let lambda = theta.matrix().min_eigenvalue();
    let scale = if worst > 0.0 { strength * lambda / worst } else { 0.0 };
    Ok(raw.scale(scale))
}

/// Positive density `exp(amplitude * random)`, rescaled to unit mean.
pub fn random_density(grid: TorusGrid, amplitude: f64, p: f64, rng: &mut impl Rng) -> Result<Density> {
    let raw = random_trig(grid, 2, rng)?.map(|v| (amplitude * v).exp())?;
    let mean = raw.mean();
    Density::new(raw.scale(1.0 / mean), p)
}

/// Random admissible forcing from the built-in families with coefficients
/// bounded by `scale`.
pub fn random_forcing(scale: f64, rng: &mut impl Rng) -> ForcingSpec {
    match rng.gen_range(0..4) {
        0 => ForcingSpec::Zero,
        1 => ForcingSpec::LinearR {
            alpha: rng.gen_range(0.0..=scale),
        },
        2 => ForcingSpec::Affine {
            alpha: rng.gen_range(0.0..=scale),
            beta: rng.gen_range(-scale..=scale),
            gamma: rng.gen_range(-scale..=scale),
        },
        _ => ForcingSpec::SpatialSine {
            alpha: rng.gen_range(0.0..=scale),
            sigma: rng.gen_range(-scale..=scale),
        },
    }
}
