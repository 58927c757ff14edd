//! Small dense linear algebra: row-major matrices, power-iteration spectral
//! norm, cyclic Jacobi eigendecomposition, and the symmetric square root.
//!
//! This is deliberately not a general-purpose library; it covers exactly the
//! kernels the attention statistics need, deterministically, at d <= 768.

use crate::error::{Error, Result};
use crate::rng::mix64;
use serde::{Deserialize, Serialize};

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch(
                    "ragged rows in matrix literal".into(),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    /// Diagonal matrix from its diagonal entries.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = diag[i];
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&self, alpha: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("matrix subtraction".into()));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("matrix addition".into()));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = a.mul_add(*s, *d);
                }
            }
        }
        Ok(out)
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// y = M^T x
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "transposed matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (yj, &mij) in y.iter_mut().zip(self.row(i)) {
                *yj = xi.mul_add(mij, *yj);
            }
        }
        Ok(y)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// Symmetry defect relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

// Matrices serialize as nested row arrays so config files stay readable.
impl Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ia = a.chunks_exact(4);
    let mut ib = b.chunks_exact(4);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        for i in 0..4 {
            acc[i] = ca[i].mul_add(cb[i], acc[i]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ia.remainder().iter().zip(ib.remainder()) {
        tail = x.mul_add(*y, tail);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest singular value via power iteration on M^T M.
///
/// For symmetric PSD input this is the largest eigenvalue. Deterministic:
/// the start vector is a fixed pseudo-random direction.
pub fn spectral_norm(m: &Mat) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::invalid("spectral_norm: non-finite matrix entries"));
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(0.0);
    }
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 10_000;

    // Fixed start vector with no special alignment to coordinate axes.
    let mut v: Vec<f64> = (0..m.cols)
        .map(|i| 1.0 + (mix64(i as u64) >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut sigma = 0.0f64;
    // Compare estimates eight iterations apart so slow geometric convergence
    // is not mistaken for a stall.
    let mut history = [f64::INFINITY; 8];
    for it in 0..MAX_ITER {
        let w = m.matvec(&v)?;
        sigma = norm2(&w);
        if sigma == 0.0 {
            return Ok(0.0);
        }
        if !sigma.is_finite() {
            return Err(Error::numeric(format!(
                "spectral_norm: overflow after {it} iterations"
            )));
        }
        let z = m.matvec_t(&w)?;
        let nz = norm2(&z);
        if nz == 0.0 {
            return Ok(sigma);
        }
        v = z;
        v.iter_mut().for_each(|x| *x /= nz);

        let old = history[it % 8];
        history[it % 8] = sigma;
        if (sigma - old).abs() <= TOL * sigma.max(f64::MIN_POSITIVE) {
            return Ok(sigma);
        }
    }
    // Value-converged even if the vector still wanders inside a nearly
    // degenerate top eigenspace.
    let drift = history
        .iter()
        .fold(0.0f64, |a, &h| a.max((sigma - h).abs()));
    if drift <= 1e-9 * sigma.max(f64::MIN_POSITIVE) {
        return Ok(sigma);
    }
    Err(Error::numeric(format!(
        "spectral_norm: no convergence after {MAX_ITER} iterations"
    )))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi with threshold
/// sweeps. Returns (eigenvalues, eigenvectors); columns of the eigenvector
/// matrix satisfy S = V diag(lambda) V^T.
pub fn sym_eigen(s: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch("sym_eigen: matrix not square".into()));
    }
    if !s.is_finite() {
        return Err(Error::invalid("sym_eigen: non-finite matrix entries"));
    }
    let n = s.rows;
    let mut a = s.clone();
    // Work on the symmetrized copy so tiny asymmetries cannot bias rotations.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, m);
            a.set(j, i, m);
        }
    }
    let mut v = Mat::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    const MAX_SWEEPS: usize = 64;
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j).powi(2);
            }
        }
        if off.sqrt() <= 1e-15 * scale * (n as f64) {
            break;
        }
        // Skip rotations that cannot reduce the off-diagonal mass meaningfully
        // in early sweeps.
        let thresh = if sweep < 3 {
            0.2 * off.sqrt() / (n as f64)
        } else {
            0.0
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= thresh {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // Apply the rotation to rows/cols p and q.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
        if sweep + 1 == MAX_SWEEPS {
            return Err(Error::numeric(
                "sym_eigen: Jacobi did not converge in 64 sweeps",
            ));
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    Ok((eig, v))
}

/// Symmetric PSD square root: R with R R = S.
///
/// Eigenvalues in [-1e-10 * ||S||, 0) are clamped to zero; anything more
/// negative rejects the input.
pub fn symmetric_sqrt(s: &Mat) -> Result<Mat> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(
            "symmetric_sqrt: matrix not square".into(),
        ));
    }
    if s.symmetry_defect() > 1e-12 {
        return Err(Error::invalid(format!(
            "symmetric_sqrt: matrix not symmetric (relative defect {:.3e})",
            s.symmetry_defect()
        )));
    }
    let (eig, v) = sym_eigen(s)?;
    let scale = eig.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut sqrt_eig = Vec::with_capacity(eig.len());
    for &lam in &eig {
        if lam < -1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!(
                "symmetric_sqrt: negative eigenvalue {lam:.6e}"
            )));
        }
        sqrt_eig.push(lam.max(0.0).sqrt());
    }
    // R = V sqrt(D) V^T, then exact symmetrization to kill rounding skew.
    let n = s.rows;
    let mut r = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc = (v.get(i, k) * sqrt_eig[k]).mul_add(v.get(j, k), acc);
            }
            r.set(i, j, acc);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (r.get(i, j) + r.get(j, i));
            r.set(i, j, m);
            r.set(j, i, m);
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_psd(n: usize, seed: u64) -> Mat {
        let mut rng = crate::rng::stream(seed, &[0xEE]);
        let mut b = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        b.transpose().matmul(&b).unwrap()
    }

    #[test]
    fn spectral_norm_identity() {
        assert_eq!(spectral_norm(&Mat::identity(3)).unwrap(), 1.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let m = Mat::from_diag(&[1.0, 4.0]);
        assert!((spectral_norm(&m).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_rejects_non_finite() {
        let m = Mat::from_vec(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]).unwrap();
        assert!(spectral_norm(&m).is_err());
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        assert_eq!(spectral_norm(&Mat::zeros(5, 5)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        for seed in 0..20u64 {
            let s = random_psd(8, seed);
            let (eig, _) = sym_eigen(&s).unwrap();
            let lam_max = eig.iter().cloned().fold(f64::MIN, f64::max);
            let got = spectral_norm(&s).unwrap();
            assert!(
                (got - lam_max).abs() <= 1e-10 * lam_max,
                "seed {seed}: {got} vs {lam_max}"
            );
        }
    }

    #[test]
    fn spectral_norm_general_matrix_matches_svd_via_gram() {
        // For general M the largest singular value is sqrt(lambda_max(M^T M)).
        let mut rng = crate::rng::stream(7, &[0xAB]);
        for _ in 0..10 {
            let mut m = Mat::zeros(6, 4);
            for i in 0..6 {
                for j in 0..4 {
                    m.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
                }
            }
            let gram = m.transpose().matmul(&m).unwrap();
            let (eig, _) = sym_eigen(&gram).unwrap();
            let want = eig.iter().cloned().fold(f64::MIN, f64::max).max(0.0).sqrt();
            let got = spectral_norm(&m).unwrap();
            assert!((got - want).abs() <= 1e-10 * want.max(1e-300));
        }
    }

    #[test]
    fn symmetric_sqrt_diagonal() {
        let s = Mat::from_diag(&[4.0, 9.0]);
        let r = symmetric_sqrt(&s).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((r.get(1, 1) - 3.0).abs() < 1e-12);
        assert!(r.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_sqrt_identity() {
        let r = symmetric_sqrt(&Mat::identity(4)).unwrap();
        assert!((&r.sub(&Mat::identity(4)).unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn symmetric_sqrt_two_by_two() {
        let s = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = symmetric_sqrt(&s).unwrap();
        let rr = r.matmul(&r).unwrap();
        let defect = rr.sub(&s).unwrap().frobenius_norm() / s.frobenius_norm();
        assert!(defect < 1e-10, "defect {defect}");
        // Frozen expected values: eigenvalues 3 and 1 give
        // R = [[(sqrt3+1)/2, (sqrt3-1)/2], [(sqrt3-1)/2, (sqrt3+1)/2]].
        let s3 = 3.0f64.sqrt();
        assert!((r.get(0, 0) - (s3 + 1.0) / 2.0).abs() < 1e-12);
        assert!((r.get(0, 1) - (s3 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_sqrt_rejects_negative_eigenvalue() {
        let s = Mat::from_diag(&[1.0, -0.5]);
        assert!(symmetric_sqrt(&s).is_err());
    }

    #[test]
    fn symmetric_sqrt_rejects_asymmetric() {
        let s = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(symmetric_sqrt(&s).is_err());
    }

    #[test]
    fn sym_eigen_reconstructs() {
        for seed in 0..10u64 {
            let s = random_psd(12, seed);
            let (eig, v) = sym_eigen(&s).unwrap();
            let recon = v
                .matmul(&Mat::from_diag(&eig))
                .unwrap()
                .matmul(&v.transpose())
                .unwrap();
            let defect = recon.sub(&s).unwrap().frobenius_norm() / s.frobenius_norm();
            assert!(defect < 1e-12, "seed {seed}: defect {defect}");
        }
    }

    proptest! {
        #[test]
        fn spectral_norm_absolute_homogeneity(alpha in -8.0f64..8.0, seed in 0u64..50) {
            let m = random_psd(5, seed);
            let base = spectral_norm(&m).unwrap();
            let scaled = spectral_norm(&m.scale(alpha)).unwrap();
            let want = alpha.abs() * base;
            prop_assert!((scaled - want).abs() <= 1e-12 * want.max(1e-12));
        }

        #[test]
        fn sqrt_of_square_recovers(seed in 0u64..40) {
            // sqrt(R R) = R for PSD R.
            let s = random_psd(4, seed);
            let r = symmetric_sqrt(&s).unwrap();
            let back = symmetric_sqrt(&r.matmul(&r).unwrap()).unwrap();
            let defect = back.sub(&r).unwrap().max_abs() / r.max_abs().max(1e-300);
            prop_assert!(defect < 1e-8, "defect {}", defect);
        }
    }
}
