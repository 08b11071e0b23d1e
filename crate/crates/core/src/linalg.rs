//! Dense complex matrices and a cyclic Jacobi Hermitian eigensolver.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!("matrix dimensions must be >= 1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::contract(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `A - B`, same shape.
    pub fn sub(&self, other: &ComplexMatrix) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::contract("shape mismatch in subtraction"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `||A - A*||_F / ||A||_F`; zero for the zero matrix.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt() / norm
    }

    /// Block-diagonal assembly of equally shaped blocks.
    pub fn block_diag(blocks: &[ComplexMatrix]) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::contract("empty block list"))?;
        let (r, c) = (first.rows, first.cols);
        if blocks.iter().any(|b| b.rows != r || b.cols != c) {
            return Err(Error::contract("all blocks must share the same dimensions"));
        }
        let n = blocks.len();
        let mut out = Self::zeros(r * n, c * n);
        for (k, b) in blocks.iter().enumerate() {
            for i in 0..r {
                for j in 0..c {
                    out[(k * r + i, k * c + j)] = b[(i, j)];
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `H H*`, a Hermitian PSD matrix of size rows x rows.
pub fn gram(h: &ComplexMatrix) -> ComplexMatrix {
    let n = h.rows;
    let mut g = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..h.cols {
                acc += h[(i, k)] * h[(j, k)].conj();
            }
            if i == j {
                acc.im = 0.0;
            }
            g[(i, j)] = acc;
            g[(j, i)] = acc.conj();
        }
    }
    g
}

/// Spectral decomposition `A = Q diag(eigenvalues) Q*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermitianEigenResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: ComplexMatrix,
    /// `||A - Q L Q*||_F / ||A||_F`.
    pub residual: f64,
}

const HERMITIAN_TOL: f64 = 1e-12;
const OFF_DIAG_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100;

fn check_hermitian(a: &ComplexMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::contract(format!("matrix is {}x{}, not square", a.rows, a.cols)));
    }
    let defect = a.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::contract(format!(
            "matrix is not Hermitian (relative defect {defect:.3e})"
        )));
    }
    Ok(())
}

fn off_diag_mass(a: &ComplexMatrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.rows {
        for j in 0..a.cols {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Cyclic Jacobi sweeps; `vecs` accumulates the rotations when present.
fn jacobi(a: &mut ComplexMatrix, mut vecs: Option<&mut ComplexMatrix>) {
    let n = a.rows;
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return;
    }
    // The diagonal must be exactly real for the rotation algebra below.
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    for _ in 0..MAX_SWEEPS {
        if off_diag_mass(a) < OFF_DIAG_TOL * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 || r < 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = [[c, s], [-s e^{-i phi}, c e^{-i phi}]] on the (p, q) plane.
                let gpp = Complex64::new(c, 0.0);
                let gpq = Complex64::new(s, 0.0);
                let gqp = -phase.conj() * s;
                let gqq = phase.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * gpp + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
                if let Some(v) = vecs.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * gpp + vkq * gqp;
                        v[(k, q)] = vkp * gpq + vkq * gqq;
                    }
                }
            }
        }
    }
}

/// Full eigendecomposition of a Hermitian matrix.
pub fn eigen_hermitian(a: &ComplexMatrix) -> Result<HermitianEigenResult> {
    check_hermitian(a)?;
    let n = a.rows;
    let mut work = a.clone();
    let mut v = ComplexMatrix::identity(n);
    jacobi(&mut work, Some(&mut v));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work[(i, i)].re.total_cmp(&work[(j, j)].re));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| work[(i, i)].re).collect();
    let mut q = ComplexMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            q[(k, new)] = v[(k, old)];
        }
    }

    let recon = q
        .matmul(&ComplexMatrix::diag(&eigenvalues))?
        .matmul(&q.conj_transpose())?;
    let norm = a.frobenius_norm();
    let residual = if norm == 0.0 {
        0.0
    } else {
        a.sub(&recon)?.frobenius_norm() / norm
    };
    Ok(HermitianEigenResult {
        eigenvalues,
        eigenvectors: q,
        residual,
    })
}

/// Eigenvalues only (ascending), skipping eigenvector accumulation.
pub fn eigenvalues_hermitian(a: &ComplexMatrix) -> Result<Vec<f64>> {
    check_hermitian(a)?;
    let n = a.rows;
    if n == 1 {
        return Ok(vec![a[(0, 0)].re]);
    }
    let mut work = a.clone();
    jacobi(&mut work, None);
    let mut eig: Vec<f64> = (0..n).map(|i| work[(i, i)].re).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Determinant via LU with partial pivoting.
pub fn det(a: &ComplexMatrix) -> Result<Complex64> {
    if !a.is_square() {
        return Err(Error::contract("determinant of a non-square matrix"));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm()))
            .unwrap_or(col);
        if m[(pivot, col)].norm() == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            det = -det;
        }
        let d = m[(col, col)];
        det *= d;
        for i in col + 1..n {
            let f = m[(i, col)] / d;
            if f.norm() == 0.0 {
                continue;
            }
            for k in col..n {
                let sub = f * m[(col, k)];
                m[(i, k)] -= sub;
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, s: &mut RandomStream) -> ComplexMatrix {
        let data = (0..rows * cols)
            .map(|_| {
                let re: f64 = StandardNormal.sample(s);
                let im: f64 = StandardNormal.sample(s);
                Complex64::new(re, im)
            })
            .collect();
        ComplexMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn gram_small_cases() {
        let one = ComplexMatrix::from_real(1, 1, &[1.0]).unwrap();
        assert_eq!(gram(&one), one);
        assert_eq!(gram(&ComplexMatrix::identity(2)), ComplexMatrix::identity(2));
    }

    #[test]
    fn gram_matches_triple_loop() {
        let mut s = RandomStream::new(1, "gram");
        let h = random_matrix(3, 2, &mut s);
        let g = gram(&h);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    acc += h[(i, k)] * h[(j, k)].conj();
                }
                assert!((g[(i, j)] - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn diag_eigen() {
        let r = eigen_hermitian(&ComplexMatrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0, 3.0]);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((r.eigenvectors[(i, j)].norm() - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_two_by_two() {
        let a = ComplexMatrix::from_real(2, 2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let r = eigen_hermitian(&a).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((r.eigenvalues[1] - 3.0).abs() < 1e-14);
        assert!(r.residual < 1e-14);
    }

    #[test]
    fn non_hermitian_rejected() {
        let a = ComplexMatrix::from_real(2, 2, &[1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(eigen_hermitian(&a), Err(Error::Contract(_))));
        let b = ComplexMatrix::from_real(2, 3, &[0.0; 6]).unwrap();
        assert!(matches!(eigenvalues_hermitian(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn det_identity_six_by_six() {
        let mut s = RandomStream::new(2, "det6");
        let h = random_matrix(6, 6, &mut s);
        let a = gram(&h);
        let r = eigen_hermitian(&a).unwrap();
        let lhs = det(&ComplexMatrix::identity(6).sub(&scale(&a, -1.0)).unwrap()).unwrap();
        let rhs: f64 = r.eigenvalues.iter().map(|l| 1.0 + l).product();
        assert!((lhs.re - rhs).abs() <= 1e-9 * rhs);
        assert!(lhs.im.abs() <= 1e-9 * rhs);
    }

    fn scale(a: &ComplexMatrix, f: f64) -> ComplexMatrix {
        let data = a.data().iter().map(|z| z * f).collect();
        ComplexMatrix::new(a.rows(), a.cols(), data).unwrap()
    }

    #[test]
    fn det_lu_known_values() {
        let a = ComplexMatrix::from_real(3, 3, &[2.0, 0.0, 1.0, 1.0, 3.0, 2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((det(&a).unwrap().re - 6.0).abs() < 1e-13);
        let p = ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(det(&p).unwrap().re, -1.0);
    }

    #[test]
    fn zero_matrix_eigen() {
        let r = eigen_hermitian(&ComplexMatrix::zeros(3, 3)).unwrap();
        assert_eq!(r.eigenvalues, vec![0.0; 3]);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn block_diag_shapes() {
        let a = ComplexMatrix::identity(2);
        let b = ComplexMatrix::from_real(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = ComplexMatrix::block_diag(&[a, b]).unwrap();
        assert_eq!((d.rows(), d.cols()), (4, 4));
        assert_eq!(d[(3, 3)].re, 4.0);
        assert_eq!(d[(0, 3)].re, 0.0);
        assert!(ComplexMatrix::block_diag(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn eigen_invariants(n in 1usize..12, m in 1usize..12, seed in any::<u64>()) {
            let mut s = RandomStream::new(seed, "prop-eigen");
            let h = random_matrix(n, m, &mut s);
            let a = gram(&h);
            let r = eigen_hermitian(&a).unwrap();
            prop_assert!(r.residual <= 1e-10);
            let lmax = r.eigenvalues[n - 1];
            for w in r.eigenvalues.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for &l in &r.eigenvalues {
                prop_assert!(l >= -1e-10 * lmax.max(1.0));
            }
            let tr = a.trace().re;
            let sum: f64 = r.eigenvalues.iter().sum();
            prop_assert!((sum - tr).abs() <= 1e-9 * tr);
            let qq = r.eigenvectors.conj_transpose().matmul(&r.eigenvectors).unwrap();
            prop_assert!(qq.sub(&ComplexMatrix::identity(n)).unwrap().frobenius_norm() <= 1e-10);
            let only = eigenvalues_hermitian(&a).unwrap();
            for (x, y) in only.iter().zip(&r.eigenvalues) {
                prop_assert!((x - y).abs() <= 1e-12 * lmax.max(1.0));
            }
        }
    }
}
