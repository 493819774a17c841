//! Dense linear-algebra kernels: a row-major matrix, Cholesky, a Jacobi
//! symmetric eigensolver, sign-corrected reduced QR and a Lyapunov solver.
//!
//! Everything runs in `f64`. The matrices involved are either tall and thin
//! (particle matrices, `P × d`) or small and square (`d × d`), so plain loops
//! are adequate.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Unchecked serialized form; shape is validated on conversion.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::from_vec(r.rows, r.cols, r.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix buffer",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // `chunks_exact(0)` panics, so zero-width matrices yield empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for (a, b) in self.row_iter().zip(other.row_iter()) {
            for (i, &ai) in a.iter().enumerate() {
                let o = out.row_mut(i);
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mat_vec shape mismatch");
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `½(A + Aᵀ)`.
    pub fn sym(&self) -> Self {
        assert_eq!(self.rows, self.cols, "sym requires a square matrix");
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "frobenius_dot shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Relative asymmetry `‖A − Aᵀ‖_F / ‖A‖_F` (0 for the zero matrix).
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.frobenius_norm();
        if n == 0.0 {
            return 0.0;
        }
        self.sub(&self.transpose()).frobenius_norm() / n
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (mj, v) in m.iter_mut().zip(r) {
                *mj += v;
            }
        }
        let n = self.rows as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Subtracts the column means from every row.
    pub fn centered(&self) -> Self {
        let mean = self.column_means();
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    }

    /// Population covariance `(1/n) Σ (xᵢ − x̄)(xᵢ − x̄)ᵀ`.
    pub fn covariance(&self) -> Self {
        let c = self.centered();
        c.t_matmul(&c).scaled(1.0 / self.rows as f64)
    }

    /// Keeps the rows listed in `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cholesky factorization `A = L·Lᵀ` of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactorization {
    pub original: Matrix,
    pub chol: Matrix,
}

impl SpdFactorization {
    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        solve_lower(&self.chol, b)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = solve_lower(&self.chol, b);
        solve_lower_transpose(&self.chol, &y)
    }
}

/// Cholesky factorization reading the lower triangle of `a`.
pub fn cholesky(a: &Matrix) -> Result<SpdFactorization> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "cholesky (square)",
            expected: n,
            found: a.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactorization {
        original: a.clone(),
        chol: l,
    })
}

pub(crate) fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

pub(crate) fn solve_lower_transpose(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Symmetric eigendecomposition `A = Q·diag(λ)·Qᵀ`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the eigenvector of `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let ql = Matrix::from_fn(q.rows(), q.cols(), |i, j| q[(i, j)] * self.eigenvalues[j]);
        ql.matmul_t(q)
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver. The input is symmetrized before iterating.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "sym_eig (square)",
            expected: n,
            found: a.cols(),
        });
    }
    let mut m = a.sym();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();
    if scale == 0.0 {
        return Ok(SymEig {
            eigenvalues: vec![0.0; n],
            eigenvectors: v,
        });
    }
    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let residual = off(&m);
        if residual <= 1e-15 * scale {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                residual: residual / scale,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Reduced Householder QR `A = Q·R` of a tall matrix with `diag(R) > 0`.
///
/// Fails with [`Error::RankDeficient`] when some `|R_jj| < 1e−12·‖A‖_F`.
pub fn reduced_qr_signfix(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (p, d) = a.shape();
    if p < d {
        return Err(Error::DimensionMismatch {
            context: "reduced QR (rows >= cols)",
            expected: d,
            found: p,
        });
    }
    let threshold = 1e-12 * a.frobenius_norm();
    // Work column-major: one contiguous Vec per column.
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut r = Matrix::zeros(d, d);

    for j in 0..d {
        let x = &cols[j][j..];
        let alpha_norm = norm(x);
        let alpha = if x[0] >= 0.0 { -alpha_norm } else { alpha_norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm > 0.0 {
            v.iter_mut().for_each(|e| *e /= vnorm);
        }
        // Apply H = I − 2vvᵀ to the remaining columns.
        for col in cols.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let proj = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= proj * vi;
            }
        }
        for (k, col) in cols.iter().enumerate().skip(j) {
            r[(j, k)] = col[j];
        }
        reflectors.push(v);
    }

    for j in 0..d {
        if !(r[(j, j)].abs() >= threshold) || threshold == 0.0 {
            return Err(Error::RankDeficient {
                column: j,
                value: r[(j, j)].abs(),
                threshold,
            });
        }
    }

    // Q = H_0 ⋯ H_{d−1} · [I_d; 0].
    let mut qcols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, v) in reflectors.iter().enumerate().rev() {
        for col in qcols.iter_mut() {
            let tail = &mut col[j..];
            let proj = 2.0 * dot(v, tail);
            if proj != 0.0 {
                for (t, vi) in tail.iter_mut().zip(v) {
                    *t -= proj * vi;
                }
            }
        }
    }

    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for k in 0..d {
                r[(j, k)] = -r[(j, k)];
            }
            qcols[j].iter_mut().for_each(|e| *e = -*e);
        }
    }
    let q = Matrix::from_fn(p, d, |i, j| qcols[j][i]);
    Ok((q, r))
}

/// Solves `S·X + X·S = B` for symmetric `S ≻ 0` and symmetric `B` in the
/// eigenbasis of `S`.
pub fn lyapunov_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    if b.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "lyapunov right-hand side",
            expected: n,
            found: b.rows(),
        });
    }
    let eig = sym_eig(s)?;
    let min = eig.eigenvalues.first().copied().unwrap_or(1.0);
    let max = eig.eigenvalues.last().copied().unwrap_or(1.0);
    if !(min > 0.0) || min < 1e-12 * max {
        return Err(Error::IllConditioned { min, max });
    }
    let q = &eig.eigenvectors;
    let bt = q.t_matmul(&b.sym()).matmul(q);
    let xt = Matrix::from_fn(n, n, |i, j| {
        bt[(i, j)] / (eig.eigenvalues[i] + eig.eigenvalues[j])
    });
    Ok(q.matmul(&xt).matmul_t(q).sym())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = random_matrix(rng, n, n);
        a.t_matmul(&a).add(&Matrix::identity(n).scaled(0.1 * n as f64))
    }

    #[test]
    fn cholesky_trivial_cases() {
        let f = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(f.chol, Matrix::identity(2));
        let f = cholesky(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(f.chol, Matrix::from_diag(&[2.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=50 {
            let a = random_spd(&mut rng, n);
            let l = cholesky(&a).unwrap().chol;
            let err = l.matmul_t(&l).sub(&a).frobenius_norm() / a.frobenius_norm();
            assert!(err <= 1e-12, "n = {n}, err = {err:e}");
            for i in 0..n {
                assert!(l[(i, i)] > 0.0);
                for j in i + 1..n {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
        assert!(matches!(
            cholesky(&Matrix::zeros(2, 2)),
            Err(Error::NotPositiveDefinite { pivot: 0, .. })
        ));
    }

    #[test]
    fn spd_solve_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(&mut rng, 6);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = a.mat_vec(&x);
        let sol = cholesky(&a).unwrap().solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-10);
        }
    }

    #[test]
    fn sym_eig_trivial_cases() {
        let e = sym_eig(&Matrix::from_diag(&[1.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 2.0]);
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((e.eigenvectors[(i, j)].abs() - expected).abs() < 1e-15);
            }
        }
        let e = sym_eig(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 3, 5, 10, 30, 50] {
            let a = random_matrix(&mut rng, n, n).sym();
            let e = sym_eig(&a).unwrap();
            let err = e.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
            assert!(err <= 1e-10, "n = {n}: {err:e}");
            let q = &e.eigenvectors;
            let orth = q.t_matmul(q).sub(&Matrix::identity(n)).frobenius_norm();
            assert!(orth <= 1e-12, "n = {n}: orth {orth:e}");
            assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn qr_trivial_cases() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]]).unwrap();
        let (q, r) = reduced_qr_signfix(&a).unwrap();
        let q_expected = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(q.sub(&q_expected).max_abs() < 1e-15);
        assert!(r.sub(&Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = Matrix::from_rows(&[[s, 0.0], [s, 0.0], [0.0, 1.0]]).unwrap();
        let (q, r) = reduced_qr_signfix(&a).unwrap();
        assert!(q.sub(&a).max_abs() < 1e-15);
        assert!(r.sub(&Matrix::identity(2)).max_abs() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (p, d) in [(3, 2), (10, 3), (50, 10), (200, 7), (5, 5)] {
            let a = random_matrix(&mut rng, p, d);
            let (q, r) = reduced_qr_signfix(&a).unwrap();
            let err = q.matmul(&r).sub(&a).frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm());
            let orth = q.t_matmul(&q).sub(&Matrix::identity(d)).frobenius_norm();
            assert!(orth <= 1e-10);
            for j in 0..d {
                assert!(r[(j, j)] > 0.0);
                for i in j + 1..d {
                    assert_eq!(r[(i, j)], 0.0);
                }
            }
            let (q2, _) = reduced_qr_signfix(&q).unwrap();
            assert!(q2.sub(&q).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn qr_detects_rank_deficiency() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        assert!(matches!(
            reduced_qr_signfix(&a),
            Err(Error::RankDeficient { column: 1, .. })
        ));
        assert!(matches!(
            reduced_qr_signfix(&Matrix::zeros(4, 2)),
            Err(Error::RankDeficient { column: 0, .. })
        ));
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let b = Matrix::identity(3).scaled(2.0);
        let x = lyapunov_solve(&Matrix::identity(3), &b).unwrap();
        assert!(x.sub(&Matrix::identity(3)).max_abs() < 1e-15);
        let x = lyapunov_solve(&Matrix::from_diag(&[1.0, 2.0]), &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(x.max_abs(), 0.0);
    }

    #[test]
    fn lyapunov_rejects_ill_conditioned() {
        let s = Matrix::from_diag(&[1e-14, 1.0]);
        assert!(matches!(
            lyapunov_solve(&s, &Matrix::identity(2)),
            Err(Error::IllConditioned { .. })
        ));
        let s = Matrix::from_diag(&[-1.0, 1.0]);
        assert!(lyapunov_solve(&s, &Matrix::identity(2)).is_err());
    }

    #[test]
    fn lyapunov_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 4, 9, 20] {
            let s = random_spd(&mut rng, n);
            let b = random_matrix(&mut rng, n, n).sym();
            let x = lyapunov_solve(&s, &b).unwrap();
            let res = s.matmul(&x).add(&x.matmul(&s)).sub(&b).frobenius_norm();
            assert!(res <= 1e-10 * b.frobenius_norm(), "n = {n}: {res:e}");
            assert_eq!(x.asymmetry(), 0.0);
        }
    }

    #[test]
    fn covariance_uses_population_convention() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        assert_eq!(x.covariance()[(0, 0)], 1.0);
        assert_eq!(x.column_means(), vec![2.0]);
    }
}
