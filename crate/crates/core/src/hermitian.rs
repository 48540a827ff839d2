//! Hermitian matrices of size 1 or 2 and constant Kähler forms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};

/// A Hermitian matrix of size 1 or 2: real diagonal plus one off-diagonal
/// entry `(0,1)`; entry `(1,0)` is its conjugate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermMat {
    pub n: usize,
    pub diag: [f64; 2],
    pub off: Complex64,
}

impl HermMat {
    pub fn new1(a: f64) -> Self {
        Self {
            n: 1,
            diag: [a, 0.0],
            off: Complex64::new(0.0, 0.0),
        }
    }

    pub fn new2(a11: f64, a22: f64, a12: Complex64) -> Self {
        Self {
            n: 2,
            diag: [a11, a22],
            off: a12,
        }
    }

    pub fn identity(n: usize) -> Self {
        match n {
            1 => Self::new1(1.0),
            _ => Self::new2(1.0, 1.0, Complex64::new(0.0, 0.0)),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::identity(n).scale(0.0)
    }

    pub fn entry(&self, j: usize, k: usize) -> Complex64 {
        match (j, k) {
            (0, 0) => self.diag[0].into(),
            (1, 1) => self.diag[1].into(),
            (0, 1) => self.off,
            (1, 0) => self.off.conj(),
            _ => panic!("index ({j},{k}) out of range"),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            diag: [self.diag[0] * c, self.diag[1] * c],
            off: self.off * c,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            diag: [self.diag[0] + other.diag[0], self.diag[1] + other.diag[1]],
            off: self.off + other.off,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn trace(&self) -> f64 {
        match self.n {
            1 => self.diag[0],
            _ => self.diag[0] + self.diag[1],
        }
    }

    pub fn det(&self) -> f64 {
        match self.n {
            1 => self.diag[0],
            _ => self.diag[0] * self.diag[1] - self.off.norm_sqr(),
        }
    }

    /// Eigenvalues in ascending order (one entry is unused when `n == 1`).
    pub fn eigenvalues(&self) -> [f64; 2] {
        match self.n {
            1 => [self.diag[0], self.diag[0]],
            _ => {
                let mean = 0.5 * (self.diag[0] + self.diag[1]);
                let half = 0.5 * (self.diag[0] - self.diag[1]);
                let r = (half * half + self.off.norm_sqr()).sqrt();
                [mean - r, mean + r]
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[1]
    }

    /// Inverse; the caller guarantees a nonzero determinant.
    pub fn inverse(&self) -> Self {
        match self.n {
            1 => Self::new1(1.0 / self.diag[0]),
            _ => {
                let d = self.det();
                Self::new2(self.diag[1] / d, self.diag[0] / d, -self.off / d)
            }
        }
    }

    /// `tr(self * other)`, real for Hermitian arguments.
    pub fn trace_product(&self, other: &Self) -> f64 {
        match self.n {
            1 => self.diag[0] * other.diag[0],
            _ => {
                self.diag[0] * other.diag[0]
                    + self.diag[1] * other.diag[1]
                    + 2.0 * (self.off * other.off.conj()).re
            }
        }
    }

    /// Roots `lambda` of `det(self - lambda * base) = 0`, ascending; `base`
    /// must be positive definite.
    pub fn generalized_eigenvalues(&self, base: &Self) -> [f64; 2] {
        match self.n {
            1 => {
                let l = self.diag[0] / base.diag[0];
                [l, l]
            }
            _ => {
                // det(A - l B) = det B l^2 - b l + det A
                let a = base.det();
                let b = self.diag[0] * base.diag[1] + self.diag[1] * base.diag[0]
                    - 2.0 * (self.off * base.off.conj()).re;
                let c = self.det();
                let disc = (b * b - 4.0 * a * c).max(0.0);
                let q = -0.5 * (-b - b.signum() * disc.sqrt());
                let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
                if r1 <= r2 {
                    [r1, r2]
                } else {
                    [r2, r1]
                }
            }
        }
    }

    pub fn is_hermitian_finite(&self) -> bool {
        self.diag[0].is_finite() && self.diag[1].is_finite() && self.off.re.is_finite() && self.off.im.is_finite()
    }
}

/// Serialized shape of a [`HermitianForm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FormRepr {
    n: usize,
    diag: Vec<f64>,
    #[serde(default)]
    off: [f64; 2],
}

/// A constant positive-definite Hermitian matrix: a flat Kähler form on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FormRepr", into = "FormRepr")]
pub struct HermitianForm {
    mat: HermMat,
}

impl TryFrom<FormRepr> for HermitianForm {
    type Error = MaError;

    fn try_from(r: FormRepr) -> Result<Self> {
        let mat = match (r.n, r.diag.as_slice()) {
            (1, [a]) => HermMat::new1(*a),
            (2, [a, b]) => HermMat::new2(*a, *b, Complex64::new(r.off[0], r.off[1])),
            _ => {
                return Err(MaError::Domain(format!(
                    "form needs n in {{1,2}} and n diagonal entries, got n={} diag={:?}",
                    r.n, r.diag
                )))
            }
        };
        HermitianForm::new(mat)
    }
}

impl From<HermitianForm> for FormRepr {
    fn from(f: HermitianForm) -> Self {
        FormRepr {
            n: f.mat.n,
            diag: f.mat.diag[..f.mat.n].to_vec(),
            off: [f.mat.off.re, f.mat.off.im],
        }
    }
}

impl HermitianForm {
    pub fn new(mat: HermMat) -> Result<Self> {
        if !mat.is_hermitian_finite() {
            return Err(MaError::Domain("form has non-finite entries".into()));
        }
        if mat.min_eigenvalue() <= 0.0 {
            return Err(MaError::Domain(format!(
                "form is not positive definite (smallest eigenvalue {})",
                mat.min_eigenvalue()
            )));
        }
        Ok(Self { mat })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mat: HermMat::identity(n),
        }
    }

    pub fn matrix(&self) -> &HermMat {
        &self.mat
    }

    pub fn n(&self) -> usize {
        self.mat.n
    }

    pub fn det(&self) -> f64 {
        self.mat.det()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.mat.scale(c))
    }

    /// Generalized eigenvalues of `self` relative to `base`.
    pub fn relative_eigenvalues(&self, base: &HermitianForm) -> [f64; 2] {
        self.mat.generalized_eigenvalues(&base.mat)
    }
}

/// `inf { t > 0 : e^{-t} omega <= theta <= e^t omega }`.
pub fn form_distance(omega: &HermitianForm, theta: &HermitianForm) -> Result<f64> {
    if omega.n() != theta.n() {
        return Err(MaError::Domain("forms have different dimensions".into()));
    }
    let [lo, hi] = theta.relative_eigenvalues(omega);
    Ok(lo.ln().abs().max(hi.ln().abs()))
}

/// `(1 - t) omega0 + t omega1`.
pub fn interpolate_family(
    omega0: &HermitianForm,
    omega1: &HermitianForm,
    t: f64,
) -> Result<HermitianForm> {
    if !(0.0..=1.0).contains(&t) {
        return Err(MaError::Domain(format!("interpolation parameter {t} outside [0,1]")));
    }
    if omega0.n() != omega1.n() {
        return Err(MaError::Domain("forms have different dimensions".into()));
    }
    if t == 0.0 {
        return Ok(*omega0);
    }
    if t == 1.0 {
        return Ok(*omega1);
    }
    HermitianForm::new(omega0.mat.scale(1.0 - t).add(&omega1.mat.scale(t)))
}

/// Smallest `B` with `-B omega_t <= d/dt omega_t <= B omega_t` for the linear
/// family `omega_t = interpolate_family(omega0, omega1, t / duration)`, `t` in
/// `[0, duration]`.
///
/// With `D = omega1 - omega0` and `nu` an eigenvalue of `D` relative to
/// `omega0`, the eigenvalues of `D` relative to `omega0 + s D` are
/// `nu / (1 + nu s)`, monotone in `s`, so the extremes sit at `s = 0, 1`.
pub fn family_derivative_bound(
    omega0: &HermitianForm,
    omega1: &HermitianForm,
    duration: f64,
) -> Result<f64> {
    if duration <= 0.0 {
        return Err(MaError::Domain(format!("duration {duration} must be positive")));
    }
    let d = omega1.mat.sub(&omega0.mat);
    let nus = d.generalized_eigenvalues(&omega0.mat);
    let mut b: f64 = 0.0;
    for &nu in &nus[..omega0.n()] {
        for s in [0.0, 1.0] {
            b = b.max((nu / (1.0 + nu * s)).abs());
        }
    }
    Ok(b / duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_form(rng: &mut ChaCha8Rng) -> HermitianForm {
        loop {
            let m = HermMat::new2(
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..3.0),
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
            if let Ok(f) = HermitianForm::new(m) {
                return f;
            }
        }
    }

    fn psd(m: &HermMat) -> bool {
        m.min_eigenvalue() >= -1e-13
    }

    /// Smallest t on a scan grid with e^{-t} omega <= theta <= e^t omega.
    fn brute_force_distance(omega: &HermitianForm, theta: &HermitianForm) -> f64 {
        let ok = |t: f64| {
            psd(&theta.mat.sub(&omega.mat.scale((-t).exp())))
                && psd(&omega.mat.scale(t.exp()).sub(&theta.mat))
        };
        // coarse scan, then a fine scan inside the bracketing cell
        let coarse = 1e-3;
        let mut t = 0.0;
        while !ok(t) {
            t += coarse;
        }
        let mut lo = (t - coarse).max(0.0);
        let fine = 1e-7;
        while !ok(lo) {
            lo += fine;
        }
        lo
    }

    #[test]
    fn eigen_and_det() {
        let m = HermMat::new2(2.0, 3.0, Complex64::new(1.0, 1.0));
        let [a, b] = m.eigenvalues();
        assert!((a * b - m.det()).abs() < 1e-12);
        assert!((a + b - m.trace()).abs() < 1e-12);
        let inv = m.inverse();
        assert!((inv.trace_product(&m) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(HermitianForm::new(HermMat::new1(0.0)).is_err());
        assert!(HermitianForm::new(HermMat::new2(1.0, 1.0, Complex64::new(1.5, 0.0))).is_err());
    }

    #[test]
    fn distance_identity_and_scaling() {
        let theta = HermitianForm::new(HermMat::new2(1.3, 0.7, Complex64::new(0.2, -0.1))).unwrap();
        assert_eq!(form_distance(&theta, &theta).unwrap(), 0.0);
        let two = theta.scaled(2.0).unwrap();
        assert!((form_distance(&two, &theta).unwrap() - 2f64.ln()).abs() < 1e-14);
        let t1 = HermitianForm::identity(1);
        assert!((form_distance(&t1.scaled(2.0).unwrap(), &t1).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn distance_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (a, b) = (random_form(&mut rng), random_form(&mut rng));
            let d = form_distance(&a, &b).unwrap();
            let scan = brute_force_distance(&a, &b);
            assert!((d - scan).abs() < 1e-6, "d={d} scan={scan}");
        }
    }

    #[test]
    fn distance_symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b, c) = (random_form(&mut rng), random_form(&mut rng), random_form(&mut rng));
            let ab = form_distance(&a, &b).unwrap();
            assert!((ab - form_distance(&b, &a).unwrap()).abs() < 1e-12);
            let ac = form_distance(&a, &c).unwrap();
            let bc = form_distance(&b, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints_and_linearity() {
        let theta = HermitianForm::new(HermMat::new2(1.0, 2.0, Complex64::new(0.3, 0.1))).unwrap();
        let twice = theta.scaled(2.0).unwrap();
        assert_eq!(interpolate_family(&theta, &twice, 0.0).unwrap(), theta);
        assert_eq!(interpolate_family(&theta, &twice, 1.0).unwrap(), twice);
        let mid = interpolate_family(&theta, &twice, 0.5).unwrap();
        let expect = theta.scaled(1.5).unwrap();
        assert!(mid.matrix().sub(expect.matrix()).eigenvalues().iter().all(|e| e.abs() < 1e-15));
        assert!(interpolate_family(&theta, &twice, 1.5).is_err());
        assert!(interpolate_family(&theta, &twice, -0.1).is_err());
    }

    #[test]
    fn derivative_bound_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = (random_form(&mut rng), random_form(&mut rng));
            let bound = family_derivative_bound(&a, &b, 2.0).unwrap();
            let dot = b.mat.sub(&a.mat).scale(0.5);
            let mut sampled: f64 = 0.0;
            for i in 0..=1000 {
                let w = interpolate_family(&a, &b, i as f64 / 1000.0).unwrap();
                let [lo, hi] = dot.generalized_eigenvalues(w.matrix());
                sampled = sampled.max(lo.abs()).max(hi.abs());
            }
            assert!(sampled <= bound * (1.0 + 1e-12));
            assert!(sampled >= bound * (1.0 - 1e-9));
        }
    }

    #[test]
    fn form_json_round_trip() {
        let f = HermitianForm::new(HermMat::new2(1.0, 2.0, Complex64::new(0.3, -0.1))).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<HermitianForm>(&s).unwrap(), f);
        assert!(serde_json::from_str::<HermitianForm>(r#"{"n":1,"diag":[-1.0]}"#).is_err());
    }
}
