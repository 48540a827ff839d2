//! Restarted GMRES with right preconditioning.

/// Outcome of a GMRES solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 40,
            max_iterations: 400,
            rel_tol: 1e-10,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` starting from `x = 0`, where `apply(v)` is `A v` and
/// `precond(v)` approximates `A^{-1} v`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: &GmresOptions,
) -> (Vec<f64>, GmresStats) {
    let len = b.len();
    let mut x = vec![0.0; len];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return (
            x,
            GmresStats {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut rel = 1.0;
    let mut r = b.to_vec();

    while total < opts.max_iterations {
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= opts.rel_tol {
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut z_basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        // Hessenberg columns, Givens rotations, rotated rhs
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![beta];

        let mut k = 0;
        while k < m && total < opts.max_iterations {
            let z = precond(&basis[k]);
            let mut w = apply(&z);
            z_basis.push(z);
            let mut col = vec![0.0; k + 2];
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hij * vj;
                }
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for i in 0..k {
                let tmp = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = tmp;
            }
            let denom = col[k].hypot(col[k + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (col[k] / denom, col[k + 1] / denom) };
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            total += 1;
            k += 1;
            rel = g[k].abs() / b_norm;
            if rel <= opts.rel_tol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }

        // back substitution on the k x k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yi, z) in y.iter().zip(&z_basis) {
            for (xj, zj) in x.iter_mut().zip(z) {
                *xj += yi * zj;
            }
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm(&r) / b_norm;
        if rel <= opts.rel_tol {
            break;
        }
    }
    (
        x,
        GmresStats {
            iterations: total,
            relative_residual: rel,
            converged: rel <= opts.rel_tol,
        },
    )
}
