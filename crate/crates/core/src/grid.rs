//! Flat complex tori and real-valued grid functions on them.
//!
//! A torus of complex dimension `n` is sampled on a uniform grid with
//! `resolution` points along each of its `2n` real axes, period 1 per axis.
//! Axes are ordered `x_1, y_1, x_2, y_2` where `z_j = x_j + i y_j`, and values
//! are stored row-major with the last axis varying fastest.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n_complex: usize,
    resolution: usize,
}

impl TorusGrid {
    pub fn new(n_complex: usize, resolution: usize) -> Result<Self> {
        if !(1..=2).contains(&n_complex) {
            return Err(MaError::Grid(format!(
                "complex dimension must be 1 or 2, got {n_complex}"
            )));
        }
        if resolution < 8 || resolution % 2 != 0 {
            return Err(MaError::Grid(format!(
                "resolution must be even and >= 8, got {resolution}"
            )));
        }
        Ok(Self {
            n_complex,
            resolution,
        })
    }

    pub fn n_complex(&self) -> usize {
        self.n_complex
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn real_dim(&self) -> usize {
        2 * self.n_complex
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.real_dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride (in flat index units) of real axis `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.resolution.pow((self.real_dim() - 1 - axis) as u32)
    }

    /// Integer coordinate of flat index `idx` along `axis`.
    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.resolution
    }

    /// Position in `[0,1)` of flat index `idx` along `axis`.
    pub fn position(&self, idx: usize, axis: usize) -> f64 {
        self.coord(idx, axis) as f64 * self.spacing()
    }

    /// All real coordinates of point `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.real_dim()).map(|a| self.position(idx, a)).collect()
    }

    /// Flat index of the neighbour `idx + offset * e_axis`, periodically wrapped.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let res = self.resolution as isize;
        let c = self.coord(idx, axis) as isize;
        let shifted = (c + offset).rem_euclid(res) as usize;
        idx - self.coord(idx, axis) * self.stride(axis) + shifted * self.stride(axis)
    }
}

/// A finite real function sampled on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MaError::Field(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MaError::Field(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_vec_unchecked(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every grid point; `f` receives the real coordinates.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Pointwise map; errors if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Self::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        Self::from_vec_unchecked(self.grid, self.values.iter().map(|v| v + c).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_vec_unchecked(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    /// `sup |self - other|`.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Periodic translation by whole grid cells: `out(x) = self(x - shift)`.
    pub fn translate(&self, shift: &[isize]) -> Result<Self> {
        if shift.len() != self.grid.real_dim() {
            return Err(MaError::Domain(format!(
                "shift has {} components, grid has {} axes",
                shift.len(),
                self.grid.real_dim()
            )));
        }
        let mut out = vec![0.0; self.values.len()];
        for (idx, &v) in self.values.iter().enumerate() {
            let mut target = idx;
            for (axis, &s) in shift.iter().enumerate() {
                target = self.grid.neighbor(target, axis, s);
            }
            out[target] = v;
        }
        Ok(Self::from_vec_unchecked(self.grid, out))
    }

    pub(crate) fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(MaError::Field(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Encodes the field in the `MAFLD1` format.
    pub fn to_mafld1(&self) -> Vec<u8> {
        let header = format!(
            "MAFLD1 n={} res={}\n",
            self.grid.n_complex(),
            self.grid.resolution()
        );
        let mut out = Vec::with_capacity(header.len() + 8 * self.values.len());
        out.extend_from_slice(header.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_mafld1(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| MaError::Format("missing MAFLD1 header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| MaError::Format("header is not ASCII".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("MAFLD1") {
            return Err(MaError::Format(format!("bad magic in header {header:?}")));
        }
        let mut field = |key: &str| -> Result<usize> {
            let part = parts
                .next()
                .ok_or_else(|| MaError::Format(format!("header missing {key}")))?;
            part.strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| MaError::Format(format!("bad header entry {part:?}")))
        };
        let n = field("n")?;
        let res = field("res")?;
        if parts.next().is_some() {
            return Err(MaError::Format(format!("trailing header data in {header:?}")));
        }
        let grid = TorusGrid::new(n, res)?;
        let body = &bytes[newline + 1..];
        if body.len() != 8 * grid.len() {
            return Err(MaError::Format(format!(
                "expected {} payload bytes, found {}",
                8 * grid.len(),
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(grid, values)
    }

    pub fn write_mafld1(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_mafld1())?;
        Ok(())
    }

    pub fn read_mafld1(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_mafld1(&bytes)
    }
}
