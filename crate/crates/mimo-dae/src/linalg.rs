//! Small-scale complex linear algebra for the frozen network layers.
//!
//! Everything here is sized for the 2x2 channel: a closed-form complex SVD,
//! the diagonal pseudo-inverse, and the complex-to-real block embedding that
//! lets complex matrices act inside a real-valued network.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix in row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be >= 1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        let m = Self { rows, cols, data };
        if !m.is_finite() {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..self.cols {
                    acc += self[(r, k)] * other[(k, c)];
                }
                out[(r, c)] = acc;
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for r in 0..self.rows {
            for (k, xk) in x.iter().enumerate() {
                out[r] += self[(r, k)] * xk;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ||A - B||_F, for residual checks.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_column(&mut self, col: usize, factor: Complex64) {
        for r in 0..self.rows {
            self[(r, col)] *= factor;
        }
    }

    pub fn column(&self, col: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, col)]).collect()
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// SVD factors H = U * diag(lambda) * V^H with lambda sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: ComplexMatrix,
    pub lambda: Vec<f64>,
    pub v: ComplexMatrix,
}

impl SvdFactors {
    /// Rebuild U * diag(lambda) * V^H.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n_r = self.u.rows();
        let n_t = self.v.rows();
        let k = self.lambda.len();
        let mut scaled = ComplexMatrix::zeros(n_r, n_t);
        // U * diag(lambda) zero-padded to n_r x n_t, then times V^H.
        for r in 0..n_r {
            for c in 0..k.min(n_t) {
                scaled[(r, c)] = self.u[(r, c)] * self.lambda[c];
            }
        }
        scaled.mul(&self.v.hermitian()).expect("shape fixed by construction")
    }
}

// Entries below this magnitude do not anchor the column phase convention.
const PHASE_EPS: f64 = 1e-12;

/// Closed-form SVD of a 2x2 complex matrix.
///
/// Works from the eigen-decomposition of H^H * H with quadratic-formula
/// roots, so the result is deterministic for a given input. The gauge
/// freedom is fixed by rotating each column of V so that its first entry
/// above `PHASE_EPS` in magnitude is real and non-negative.
pub fn svd(h: &ComplexMatrix) -> Result<SvdFactors> {
    if h.rows() != 2 || h.cols() != 2 {
        return Err(Error::InvalidInput(format!(
            "svd supports 2x2 matrices only, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if !h.is_finite() {
        return Err(Error::InvalidInput("svd input must be finite".into()));
    }

    let norm = h.frobenius_norm();
    if norm == 0.0 {
        return Ok(SvdFactors {
            u: ComplexMatrix::identity(2),
            lambda: vec![0.0, 0.0],
            v: ComplexMatrix::identity(2),
        });
    }

    // Gram matrix G = H^H H = [[a, b], [conj(b), c]] is Hermitian PSD.
    let g = h.hermitian().mul(h)?;
    let a = g[(0, 0)].re;
    let c = g[(1, 1)].re;
    let b = g[(0, 1)];

    let disc = ((a - c).powi(2) + 4.0 * b.norm_sqr()).sqrt();
    let mu1 = 0.5 * (a + c + disc);
    // det(G)/mu1 avoids the cancellation in (a + c - disc)/2 for small mu2.
    let det = (a * c - b.norm_sqr()).max(0.0);
    let mu2 = if mu1 > 0.0 { (det / mu1).max(0.0) } else { 0.0 };

    // Eigenvector of G for mu1; pick the better-conditioned closed form.
    let cand1 = [b, Complex64::new(mu1 - a, 0.0)];
    let cand2 = [Complex64::new(mu1 - c, 0.0), b.conj()];
    let n1 = cand1[0].norm_sqr() + cand1[1].norm_sqr();
    let n2 = cand2[0].norm_sqr() + cand2[1].norm_sqr();
    let v1 = if n1 >= n2 && n1 > 0.0 {
        let s = 1.0 / n1.sqrt();
        [cand1[0] * s, cand1[1] * s]
    } else if n2 > 0.0 {
        let s = 1.0 / n2.sqrt();
        [cand2[0] * s, cand2[1] * s]
    } else {
        // G is a multiple of the identity; any orthonormal basis works.
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    };
    // Orthonormal complement, exact up to rounding.
    let v2 = [-v1[1].conj(), v1[0].conj()];

    let lambda1 = mu1.sqrt();
    let lambda2 = mu2.sqrt();

    let mut v = ComplexMatrix::zeros(2, 2);
    v[(0, 0)] = v1[0];
    v[(1, 0)] = v1[1];
    v[(0, 1)] = v2[0];
    v[(1, 1)] = v2[1];

    // u_i = H v_i / lambda_i where the singular value carries weight;
    // otherwise complete an orthonormal basis.
    let hv1 = h.mul_vec(&[v1[0], v1[1]])?;
    let mut u1 = [hv1[0] / lambda1, hv1[1] / lambda1];
    normalize2(&mut u1);

    let u2 = if lambda2 > lambda1 * 1e-15 {
        let hv2 = h.mul_vec(&[v2[0], v2[1]])?;
        let mut u2 = [hv2[0] / lambda2, hv2[1] / lambda2];
        // Re-orthogonalize against u1; the raw quotient loses orthogonality
        // when the singular values are far apart.
        let proj = u1[0].conj() * u2[0] + u1[1].conj() * u2[1];
        u2[0] -= proj * u1[0];
        u2[1] -= proj * u1[1];
        normalize2(&mut u2);
        u2
    } else {
        [-u1[1].conj(), u1[0].conj()]
    };

    let mut u = ComplexMatrix::zeros(2, 2);
    u[(0, 0)] = u1[0];
    u[(1, 0)] = u1[1];
    u[(0, 1)] = u2[0];
    u[(1, 1)] = u2[1];

    // Phase convention: first non-negligible entry of each V column made
    // real non-negative, compensating in U so U diag V^H is unchanged.
    for col in 0..2 {
        let anchor = (0..2)
            .map(|r| v[(r, col)])
            .find(|z| z.norm() > PHASE_EPS)
            .unwrap_or(Complex64::new(1.0, 0.0));
        let correction = (anchor / anchor.norm()).conj();
        v.scale_column(col, correction);
        u.scale_column(col, correction);
    }

    Ok(SvdFactors { u, lambda: vec![lambda1, lambda2], v })
}

fn normalize2(v: &mut [Complex64; 2]) {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if n > 0.0 {
        v[0] /= n;
        v[1] /= n;
    }
}

/// Pseudo-inverse of a non-negative diagonal: 1/x above `tol`, else 0.
pub fn pinv_diag(lambda: &[f64], tol: f64) -> Result<Vec<f64>> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput("pinv tolerance must be finite and >= 0".into()));
    }
    let mut out = Vec::with_capacity(lambda.len());
    for &x in lambda {
        if x < 0.0 || !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "pinv_diag expects non-negative finite entries, got {x}"
            )));
        }
        out.push(if x > tol { 1.0 / x } else { 0.0 });
    }
    Ok(out)
}

/// Default threshold below which a singular value is treated as zero.
pub const PINV_TOL: f64 = 1e-12;

/// Real block embedding [[Re, -Im], [Im, Re]] of a complex matrix.
///
/// Acting on stacked (Re; Im) vectors this reproduces complex
/// multiplication, which is how the frozen complex layers run inside the
/// real-valued network.
pub fn complex_to_real_block(m: &ComplexMatrix) -> Array2<f64> {
    let (r, c) = (m.rows(), m.cols());
    let mut out = Array2::<f64>::zeros((2 * r, 2 * c));
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
            out[(i + r, j + c)] = z.re;
        }
    }
    out
}

/// Stack a complex vector as (Re; Im).
pub fn complex_vec_to_real(z: &[Complex64]) -> Array1<f64> {
    let n = z.len();
    let mut out = Array1::<f64>::zeros(2 * n);
    for (i, zi) in z.iter().enumerate() {
        out[i] = zi.re;
        out[i + n] = zi.im;
    }
    out
}

/// Inverse of [`complex_vec_to_real`].
pub fn real_vec_to_complex(x: &[f64]) -> Vec<Complex64> {
    assert!(x.len() % 2 == 0, "stacked real vector must have even length");
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[i + n])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cm(rows: usize, cols: usize, entries: &[(f64, f64)]) -> ComplexMatrix {
        let data = entries.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        ComplexMatrix::new(rows, cols, data).unwrap()
    }

    fn random_cn01(rng: &mut ChaCha12Rng) -> ComplexMatrix {
        use rand_distr::StandardNormal;
        let mut data = Vec::with_capacity(4);
        for _ in 0..4 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            data.push(Complex64::new(re * 0.5f64.sqrt(), im * 0.5f64.sqrt()));
        }
        ComplexMatrix::new(2, 2, data).unwrap()
    }

    fn unitarity_error(m: &ComplexMatrix) -> f64 {
        let gram = m.hermitian().mul(m).unwrap();
        gram.frobenius_distance(&ComplexMatrix::identity(m.cols()))
    }

    #[test]
    fn svd_identity_has_unit_singular_values() {
        let f = svd(&ComplexMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(f.lambda[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.lambda[1], 1.0, epsilon = 1e-14);
        let recon = f.reconstruct();
        assert!(recon.frobenius_distance(&ComplexMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn svd_diagonal_sorts_magnitudes() {
        let h = cm(2, 2, &[(3.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 4.0)]);
        let f = svd(&h).unwrap();
        assert_abs_diff_eq!(f.lambda[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.lambda[1], 3.0, epsilon = 1e-12);
        assert!(f.reconstruct().frobenius_distance(&h) < 1e-12);
    }

    #[test]
    fn svd_random_channels_reconstruct() {
        // Reconstruction is its own oracle: U diag(lambda) V^H must give H back.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let h = random_cn01(&mut rng);
            let f = svd(&h).unwrap();
            let rel = f.reconstruct().frobenius_distance(&h) / h.frobenius_norm();
            assert!(rel < 1e-10, "reconstruction error {rel}");
            assert!(unitarity_error(&f.u) < 1e-10);
            assert!(unitarity_error(&f.v) < 1e-10);
            assert!(f.lambda[0] >= f.lambda[1] && f.lambda[1] >= 0.0);
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let h = random_cn01(&mut rng);
        let f1 = svd(&h).unwrap();
        let f2 = svd(&h).unwrap();
        assert_eq!(f1.u, f2.u);
        assert_eq!(f1.v, f2.v);
        assert_eq!(f1.lambda, f2.lambda);
    }

    #[test]
    fn svd_phase_convention_fixes_v_columns() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..100 {
            let f = svd(&random_cn01(&mut rng)).unwrap();
            for col in 0..2 {
                let anchor = f.v.column(col).into_iter().find(|z| z.norm() > 1e-12).unwrap();
                assert!(anchor.im.abs() < 1e-12 && anchor.re >= 0.0, "anchor {anchor}");
            }
        }
    }

    #[test]
    fn svd_rank_deficient_input() {
        // Rank-one outer product: second singular value must be ~0.
        let h = cm(2, 2, &[(1.0, 1.0), (2.0, -1.0), (2.0, 2.0), (4.0, -2.0)]);
        let f = svd(&h).unwrap();
        assert!(f.lambda[1] < 1e-10 * f.lambda[0]);
        assert!(f.reconstruct().frobenius_distance(&h) / h.frobenius_norm() < 1e-10);
        assert!(unitarity_error(&f.u) < 1e-10);
    }

    #[test]
    fn svd_rejects_wrong_shape() {
        let m = ComplexMatrix::identity(3);
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        let data = vec![Complex64::new(f64::NAN, 0.0); 4];
        assert!(matches!(ComplexMatrix::new(2, 2, data), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_diag_basic() {
        assert_eq!(pinv_diag(&[2.0, 1.0], 1e-12).unwrap(), vec![0.5, 1.0]);
        assert_eq!(pinv_diag(&[1.0, 0.0], 1e-12).unwrap(), vec![1.0, 0.0]);
        // Sub-threshold entries are zeroed instead of exploding.
        assert_eq!(pinv_diag(&[2.0, 1e-15], 1e-12).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn pinv_diag_rejects_negative() {
        assert!(matches!(pinv_diag(&[-1.0], 1e-12), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_diag_is_involutive_above_tol() {
        let xs = [0.3, 1.0, 2.5, 1e6];
        let once = pinv_diag(&xs, PINV_TOL).unwrap();
        let twice = pinv_diag(&once, PINV_TOL).unwrap();
        for (orig, back) in xs.iter().zip(&twice) {
            assert_abs_diff_eq!(orig, back, epsilon = 1e-12);
        }
    }

    #[test]
    fn embed_imaginary_unit() {
        let m = cm(1, 1, &[(0.0, 1.0)]);
        let e = complex_to_real_block(&m);
        assert_eq!(e.shape(), &[2, 2]);
        assert_eq!(e[(0, 0)], 0.0);
        assert_eq!(e[(0, 1)], -1.0);
        assert_eq!(e[(1, 0)], 1.0);
        assert_eq!(e[(1, 1)], 0.0);
    }

    #[test]
    fn embed_identity() {
        let e = complex_to_real_block(&ComplexMatrix::identity(2));
        assert_eq!(e, Array2::<f64>::eye(4));
    }

    #[test]
    fn embed_matches_complex_multiply() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..100 {
            let m = random_cn01(&mut rng);
            let z: Vec<Complex64> = (0..2)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let direct = m.mul_vec(&z).unwrap();
            let embedded = complex_to_real_block(&m).dot(&complex_vec_to_real(&z));
            let back = real_vec_to_complex(embedded.as_slice().unwrap());
            for (d, b) in direct.iter().zip(&back) {
                assert!((d - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_is_ring_homomorphism() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        for _ in 0..50 {
            let a = random_cn01(&mut rng);
            let b = random_cn01(&mut rng);
            let lhs = complex_to_real_block(&a.mul(&b).unwrap());
            let rhs = complex_to_real_block(&a).dot(&complex_to_real_block(&b));
            let err = (&lhs - &rhs).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err < 1e-12, "embedding not multiplicative: {err}");
        }
    }

    #[test]
    fn real_complex_round_trip() {
        let z = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 3.0)];
        let r = complex_vec_to_real(&z);
        assert_eq!(r.as_slice().unwrap(), &[1.0, 0.5, -2.0, 3.0]);
        assert_eq!(real_vec_to_complex(r.as_slice().unwrap()), z);
    }
}
