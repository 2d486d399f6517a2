//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `e^{iθ}`.
#[inline]
pub fn cis(theta: f64) -> Complex64 {
    Complex64::new(theta.cos(), theta.sin())
}

/// Singular value decomposition `A = U diag(σ) V†` with σ descending.
pub struct Svd {
    pub u: CMat,
    pub sigma: Vec<f64>,
    pub v_t: CMat,
}

impl Svd {
    pub fn new(a: &CMat) -> Svd {
        let svd = a.clone().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let u_raw = svd.u.expect("requested U");
        let v_raw = svd.v_t.expect("requested V^H");
        let k = order.len();
        let mut u = CMat::zeros(a.nrows(), k);
        let mut v_t = CMat::zeros(k, a.ncols());
        let mut sigma = Vec::with_capacity(k);
        for (dst, &src) in order.iter().enumerate() {
            u.set_column(dst, &u_raw.column(src));
            v_t.set_row(dst, &v_raw.row(src));
            sigma.push(svd.singular_values[src]);
        }
        Svd { u, sigma, v_t }
    }

    /// `U f(D) V†` where `f` is applied to each singular value.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> CMat {
        let mut scaled = self.u.clone();
        for (j, &s) in self.sigma.iter().enumerate() {
            let c = f(s);
            scaled.column_mut(j).scale_mut(c);
        }
        scaled * &self.v_t
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `H^q` for Hermitian positive semidefinite `H`; tiny negative eigenvalues
/// from rounding are clamped to zero.
pub fn psd_power(h: &CMat, q: f64) -> CMat {
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut v = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = if lam > 0.0 { lam.powf(q) } else { 0.0 };
        v.column_mut(j).scale_mut(w);
    }
    v * eig.eigenvectors.adjoint()
}

/// Largest entrywise modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Kronecker product `A ⊗ B` with row index `i * rows(B) + s`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nonnegative least squares `min ‖Ax − b‖₂` subject to `x ≥ 0`
/// (Lawson–Hanson active-set method).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0) * b.norm().max(1.0);
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = least_squares(&sub, b);
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z_sub[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = x[j] - z_sub[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z_sub[k] - x[j]);
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Minimum-norm least squares through the SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("SVD factors were requested")
}
