//! Fourier calculus on the torus grid.
//!
//! Every derivative operator here is a real, even Fourier multiplier, so two
//! real outputs can share one complex inverse transform: the first in the
//! real part, the second in the imaginary part.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{ScalarField, TorusGrid};
use crate::hermitian::HermMat;

/// Multipliers of the complex Hessian components. `n = 1`: `[H11]`;
/// `n = 2`: `[H11, H22, Re H12, Im H12]`.
#[derive(Debug)]
struct HessianSymbols {
    comps: Vec<Vec<f64>>,
}

/// FFT plans and wavenumber tables for one grid shape.
pub struct Spectral {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    symbols: HessianSymbols,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

fn cache() -> &'static Mutex<HashMap<TorusGrid, Arc<Spectral>>> {
    static CACHE: OnceLock<Mutex<HashMap<TorusGrid, Arc<Spectral>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Signed wavenumber of FFT index `i` on `res` points.
pub(crate) fn wavenumber(i: usize, res: usize) -> i64 {
    if i <= res / 2 {
        i as i64
    } else {
        i as i64 - res as i64
    }
}

impl Spectral {
    /// Shared plan for `grid`, built on first use.
    pub fn for_grid(grid: &TorusGrid) -> Arc<Spectral> {
        let mut map = cache().lock().expect("spectral cache poisoned");
        map.entry(*grid)
            .or_insert_with(|| Arc::new(Spectral::build(*grid)))
            .clone()
    }

    fn build(grid: TorusGrid) -> Self {
        let res = grid.resolution();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(res);
        let inv = planner.plan_fft_inverse(res);
        let symbols = HessianSymbols::build(&grid);
        Self {
            grid,
            fwd,
            inv,
            symbols,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let res = self.grid.resolution();
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let dim = self.grid.real_dim();
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); res];
        for axis in 0..dim - 1 {
            let stride = self.grid.stride(axis);
            let block = stride * res;
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let norm = 1.0 / data.len() as f64;
            for v in data.iter_mut() {
                *v *= norm;
            }
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform of `m_a * spec + i * m_b * spec`; returns the two
    /// real fields.
    fn inverse_pair(&self, spec: &[Complex64], m_a: &[f64], m_b: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut data: Vec<Complex64> = match m_b {
            Some(m_b) => spec
                .iter()
                .zip(m_a)
                .zip(m_b)
                .map(|((s, a), b)| s * a + i * s * b)
                .collect(),
            None => spec.iter().zip(m_a).map(|(s, a)| s * a).collect(),
        };
        self.transform(&mut data, true);
        let re = data.iter().map(|c| c.re).collect();
        let im = if m_b.is_some() {
            data.iter().map(|c| c.im).collect()
        } else {
            Vec::new()
        };
        (re, im)
    }

    /// Applies a real even multiplier `symbol` to `values`.
    pub fn apply_multiplier(&self, values: &[f64], symbol: impl Fn(&[i64], &[bool]) -> f64) -> Vec<f64> {
        let spec = self.forward(values);
        let m: Vec<f64> = (0..spec.len())
            .map(|idx| {
                let (k, nyq) = self.mode(idx);
                symbol(&k, &nyq)
            })
            .collect();
        self.inverse_pair(&spec, &m, None).0
    }

    /// Wavenumber vector and Nyquist flags of spectral index `idx`.
    pub fn mode(&self, idx: usize) -> (Vec<i64>, Vec<bool>) {
        let res = self.grid.resolution();
        let dim = self.grid.real_dim();
        let mut k = Vec::with_capacity(dim);
        let mut nyq = Vec::with_capacity(dim);
        for a in 0..dim {
            let c = self.grid.coord(idx, a);
            k.push(wavenumber(c, res));
            nyq.push(c == res / 2);
        }
        (k, nyq)
    }

    /// Complex Hessian components of `values` (see [`HermitianField`]).
    pub(crate) fn hessian_components(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let spec = self.forward(values);
        let s = &self.symbols.comps;
        if self.grid.n_complex() == 1 {
            vec![self.inverse_pair(&spec, &s[0], None).0]
        } else {
            let (h11, h22) = self.inverse_pair(&spec, &s[0], Some(&s[1]));
            let (re12, im12) = self.inverse_pair(&spec, &s[2], Some(&s[3]));
            vec![h11, h22, re12, im12]
        }
    }

    /// Symbol of `tr(B H(.))` for a constant Hermitian `B`, per spectral index.
    pub(crate) fn trace_symbol(&self, b: &HermMat) -> Vec<f64> {
        let s = &self.symbols.comps;
        (0..self.grid.len())
            .map(|i| {
                if self.grid.n_complex() == 1 {
                    b.diag[0] * s[0][i]
                } else {
                    let h = HermMat::new2(s[0][i], s[1][i], Complex64::new(s[2][i], s[3][i]));
                    b.trace_product(&h)
                }
            })
            .collect()
    }

    /// Solves `symbol * u = rhs` mode by mode; modes with zero symbol map
    /// through unchanged.
    pub(crate) fn divide_by_symbol(&self, rhs: &[f64], symbol: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(rhs);
        for (s, &m) in spec.iter_mut().zip(symbol) {
            if m != 0.0 {
                *s /= m;
            }
        }
        self.transform(&mut spec, true);
        spec.iter().map(|c| c.re).collect()
    }
}

/// Complex Hessian at grid point `i` from the output of
/// [`Spectral::hessian_components`].
pub(crate) fn hessian_at(comps: &[Vec<f64>], i: usize) -> HermMat {
    if comps.len() == 1 {
        HermMat::new1(comps[0][i])
    } else {
        HermMat::new2(comps[0][i], comps[1][i], Complex64::new(comps[2][i], comps[3][i]))
    }
}

impl HessianSymbols {
    fn build(grid: &TorusGrid) -> Self {
        let res = grid.resolution();
        let n = grid.n_complex();
        let len = grid.len();
        let ncomp = if n == 1 { 1 } else { 4 };
        let mut comps = vec![vec![0.0; len]; ncomp];
        let pi2 = PI * PI;
        for idx in 0..len {
            let k = |a: usize| wavenumber(grid.coord(idx, a), res) as f64;
            let nyq = |a: usize| grid.coord(idx, a) == res / 2;
            // product k_a k_b of two distinct first derivatives; the Nyquist
            // mode of a first derivative is dropped to keep the output real
            let cross = |a: usize, b: usize| {
                if nyq(a) || nyq(b) {
                    0.0
                } else {
                    k(a) * k(b)
                }
            };
            for j in 0..n {
                let (x, y) = (2 * j, 2 * j + 1);
                comps[j][idx] = -pi2 * (k(x) * k(x) + k(y) * k(y));
            }
            if n == 2 {
                comps[2][idx] = -pi2 * (cross(0, 2) + cross(1, 3));
                comps[3][idx] = -pi2 * (cross(0, 3) - cross(1, 2));
            }
        }
        Self { comps }
    }
}

/// Pointwise complex Hessian `d^2 phi / dz_j dzbar_k` of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianField {
    grid: TorusGrid,
    comps: Vec<Vec<f64>>,
}

impl HermitianField {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn at(&self, idx: usize) -> HermMat {
        if self.grid.n_complex() == 1 {
            HermMat::new1(self.comps[0][idx])
        } else {
            HermMat::new2(
                self.comps[0][idx],
                self.comps[1][idx],
                Complex64::new(self.comps[2][idx], self.comps[3][idx]),
            )
        }
    }

    /// Diagonal entry `(j, j)` as a real field.
    pub fn diagonal(&self, j: usize) -> &[f64] {
        &self.comps[j]
    }

    /// Real and imaginary parts of entry `(0, 1)` (`n = 2` only).
    pub fn off_diagonal(&self) -> Option<(&[f64], &[f64])> {
        (self.grid.n_complex() == 2).then(|| (self.comps[2].as_slice(), self.comps[3].as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Complex Hessian of `phi`, computed spectrally.
pub fn complex_hessian(phi: &ScalarField) -> HermitianField {
    let spectral = Spectral::for_grid(phi.grid());
    HermitianField {
        grid: *phi.grid(),
        comps: spectral.hessian_components(phi.values()),
    }
}
