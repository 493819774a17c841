//! Whitening and the centered scaled Stiefel set
//! `M_P = {Y ∈ ℝ^{P×d} : 1ᵀY = 0, YᵀY = P·I}`.
//!
//! A particle matrix `Z` has empirical mean `μ*` and (population) covariance
//! `Σ* = L*L*ᵀ` exactly when its whitened image `Y = (Z − 1μ*ᵀ)L*^{-ᵀ}` lies
//! on `M_P`.

use crate::error::{Error, Result};
use crate::gmm::TrainingSet;
use crate::numerics::{reduced_qr_signfix, solve_lower, Matrix};

/// Mean-residual tolerance, relative to `√P · max(1, max|Y|)`.
pub const MEAN_TOLERANCE: f64 = 1e-8;
/// Gram-residual tolerance, relative to `P`.
pub const GRAM_TOLERANCE: f64 = 1e-6;

/// The affine map between particle space and whitened space.
#[derive(Clone, Debug)]
pub struct WhiteningMap {
    mean: Vec<f64>,
    chol: Matrix,
    chol_inv_t: Matrix,
}

impl WhiteningMap {
    /// Builds the map from a target mean and the lower Cholesky factor of
    /// the target covariance.
    pub fn new(mean: Vec<f64>, chol: Matrix) -> Result<Self> {
        let d = mean.len();
        if chol.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "whitening factor",
                expected: d,
                found: chol.rows(),
            });
        }
        for i in 0..d {
            let v = chol[(i, i)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: i, value: v });
            }
        }
        // Columns of L⁻¹ are L⁻¹eⱼ; stored transposed.
        let mut inv = Matrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = solve_lower(&chol, &e);
            for (i, v) in col.into_iter().enumerate() {
                inv.row_mut(j)[i] = v;
            }
        }
        Ok(Self {
            mean,
            chol,
            chol_inv_t: inv,
        })
    }

    /// Target moments of a training set.
    ///
    /// A singular covariance is rejected; run the data through
    /// [`crate::datasets::partial_whiten`] first.
    pub fn from_training_set(ts: &TrainingSet) -> Result<Self> {
        Self::new(ts.mean().to_vec(), ts.cholesky_factor()?.clone())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Lower-triangular `L*`.
    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    /// `L*^{-ᵀ}`.
    pub fn chol_inv_t(&self) -> &Matrix {
        &self.chol_inv_t
    }

    /// `Y = (Z − 1μ*ᵀ)L*^{-ᵀ}`.
    pub fn whiten(&self, z: &Matrix) -> Result<Matrix> {
        self.check_cols(z)?;
        Ok(center_at(z, &self.mean).matmul(&self.chol_inv_t))
    }

    /// `Z = 1μ*ᵀ + Y L*ᵀ`.
    pub fn unwhiten(&self, y: &Matrix) -> Result<Matrix> {
        self.check_cols(y)?;
        let mut z = y.matmul_t(&self.chol);
        for row in z.as_mut_slice().chunks_exact_mut(self.dim().max(1)) {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(z)
    }

    /// `G_Y = G_Z L*`.
    pub fn pullback_gradient(&self, g_z: &Matrix) -> Result<Matrix> {
        self.check_cols(g_z)?;
        Ok(g_z.matmul(&self.chol))
    }

    fn check_cols(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "particle matrix columns",
                expected: self.dim(),
                found: m.cols(),
            });
        }
        Ok(())
    }
}

/// Constraint residuals of a particle matrix in whitened coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    /// `‖1ᵀY‖∞`.
    pub mean: f64,
    /// `‖YᵀY − P·I‖_F`.
    pub gram: f64,
}

/// Residuals of an arbitrary `P×d` matrix.
pub fn residuals(y: &Matrix) -> Residuals {
    let p = y.rows() as f64;
    let d = y.cols();
    let mut sums = vec![0.0; d];
    for row in y.row_iter() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let mean = sums.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gram = y.t_matmul(y).sub(&Matrix::identity(d).scaled(p)).frobenius_norm();
    Residuals { mean, gram }
}

/// A point of `M_P`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    y: Matrix,
}

impl ManifoldPoint {
    /// Validates `P ≥ d+1` and the constraint residuals.
    pub fn new(y: Matrix) -> Result<Self> {
        check_particle_count(y.rows(), y.cols())?;
        if !y.is_finite() {
            return Err(Error::InvalidConfig("particle matrix has non-finite entries".into()));
        }
        let r = residuals(&y);
        let p = y.rows() as f64;
        let scale = y.max_abs().max(1.0);
        if r.mean > MEAN_TOLERANCE * p.sqrt() * scale || r.gram > GRAM_TOLERANCE * p {
            return Err(Error::InvalidConfig(format!(
                "matrix is not on the constraint set (mean residual {:e}, Gram residual {:e})",
                r.mean, r.gram
            )));
        }
        Ok(Self { y })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.y
    }

    pub fn into_matrix(self) -> Matrix {
        self.y
    }

    pub fn particles(&self) -> usize {
        self.y.rows()
    }

    pub fn dim(&self) -> usize {
        self.y.cols()
    }

    pub fn residuals(&self) -> Residuals {
        residuals(&self.y)
    }

    /// Tangent projection `Π_Y(A) = Π_St(Π_ctr(A))`, where `Π_ctr` removes
    /// column means and `Π_St(B) = B − Y·sym(YᵀB)/P`.
    pub fn project_tangent(&self, a: &Matrix) -> Matrix {
        let p = self.y.rows() as f64;
        let mut t = center(a);
        let s = self.y.t_matmul(&t).sym().scaled(1.0 / p);
        t.axpy(-1.0, &self.y.matmul(&s));
        t
    }
}

/// `P ≥ d+1` is needed for a centered `P×d` matrix to have full column rank.
pub fn check_particle_count(p: usize, d: usize) -> Result<()> {
    if p < d + 1 {
        return Err(Error::InvalidConfig(format!(
            "need at least d+1 = {} particles, got P = {p}",
            d + 1
        )));
    }
    Ok(())
}

/// Subtracts the column means.
pub fn center(a: &Matrix) -> Matrix {
    center_at(a, &a.column_means())
}

/// Subtracts a fixed vector from every row.
pub fn center_at(a: &Matrix, mean: &[f64]) -> Matrix {
    let mut c = a.clone();
    if a.cols() > 0 {
        for row in c.as_mut_slice().chunks_exact_mut(a.cols()) {
            for (v, m) in row.iter_mut().zip(mean) {
                *v -= m;
            }
        }
    }
    c
}

/// `R(Ỹ) = √P·Q` with `Π_ctr(Ỹ) = QR` and `diag(R) > 0`.
pub fn retract(y: &Matrix) -> Result<ManifoldPoint> {
    check_particle_count(y.rows(), y.cols())?;
    let c = center(y);
    let (q, _) = reduced_qr_signfix(&c)?;
    let mut q = q.scaled((y.rows() as f64).sqrt());
    // Remove the O(ε) column sums left by the factorization.
    q = center(&q);
    Ok(ManifoldPoint { y: q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_map(rng: &mut ChaCha8Rng, d: usize) -> WhiteningMap {
        let mean: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let chol = Matrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 + rng.random::<f64>()
            } else if j < i {
                rng.sample(StandardNormal)
            } else {
                0.0
            }
        });
        WhiteningMap::new(mean, chol).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, p: usize, d: usize) -> ManifoldPoint {
        retract(&gaussian(rng, p, d)).unwrap()
    }

    #[test]
    fn whitening_trivial_cases() {
        let map = WhiteningMap::new(vec![1.0, -2.0], Matrix::from_rows(&[[2.0, 0.0], [0.5, 1.0]]).unwrap()).unwrap();
        let z = Matrix::from_rows(&[[1.0, -2.0], [1.0, -2.0], [1.0, -2.0]]).unwrap();
        assert_eq!(map.whiten(&z).unwrap().max_abs(), 0.0);
        let id = WhiteningMap::new(vec![0.0; 3], Matrix::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gaussian(&mut rng, 7, 3);
        assert_eq!(id.whiten(&z).unwrap(), z);
        assert_eq!(id.pullback_gradient(&z).unwrap(), z);
        assert_eq!(map.pullback_gradient(&Matrix::zeros(4, 2)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn whitening_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [1, 2, 5, 12] {
            let map = random_map(&mut rng, d);
            let z = gaussian(&mut rng, 30, d);
            let back = map.unwhiten(&map.whiten(&z).unwrap()).unwrap();
            assert!(back.sub(&z).frobenius_norm() <= 1e-10 * z.frobenius_norm());
        }
    }

    #[test]
    fn projection_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_point(&mut rng, 10, 3);
        let constant = Matrix::from_fn(10, 3, |_, j| j as f64 + 0.5);
        assert!(y.project_tangent(&constant).max_abs() < 1e-14);
        assert!(y.project_tangent(y.as_matrix()).max_abs() < 1e-12);
    }

    #[test]
    fn projection_is_tangent_idempotent_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (p, d) in [(3, 2), (10, 3), (200, 5)] {
            let y = random_point(&mut rng, p, d);
            let a = gaussian(&mut rng, p, d);
            let b = gaussian(&mut rng, p, d);
            let t = y.project_tangent(&a);
            let scale = a.frobenius_norm();
            let r = residuals(&t);
            assert!(r.mean <= 1e-8 * scale);
            let skew = y.as_matrix().t_matmul(&t);
            assert!(skew.add(&skew.transpose()).max_abs() <= 1e-8 * scale);
            assert!(y.project_tangent(&t).sub(&t).max_abs() <= 1e-10 * scale);
            let lhs = t.frobenius_dot(&b);
            let rhs = a.frobenius_dot(&y.project_tangent(&b));
            assert!((lhs - rhs).abs() <= 1e-10 * scale * b.frobenius_norm());
        }
    }

    #[test]
    fn retraction_fixes_points_and_removes_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_point(&mut rng, 20, 4);
        let r = retract(y.as_matrix()).unwrap();
        assert!(r.as_matrix().sub(y.as_matrix()).max_abs() <= 1e-10);
        let r2 = retract(&y.as_matrix().scaled(2.0)).unwrap();
        assert!(r2.as_matrix().sub(y.as_matrix()).max_abs() <= 1e-10);
        let perturbed = y.as_matrix().add(&gaussian(&mut rng, 20, 4).scaled(0.01));
        let r3 = retract(&perturbed).unwrap();
        assert!(ManifoldPoint::new(r3.as_matrix().clone()).is_ok());
        let r4 = retract(r3.as_matrix()).unwrap();
        assert!(r4.as_matrix().sub(r3.as_matrix()).max_abs() <= 1e-10);
    }

    #[test]
    fn retraction_rejects_collapse_and_small_p() {
        let collapsed = Matrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(retract(&collapsed), Err(Error::RankDeficient { .. })));
        assert!(retract(&Matrix::zeros(2, 2)).is_err());
        assert!(ManifoldPoint::new(Matrix::identity(2)).is_err());
    }

    #[test]
    fn constraints_match_moments_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 3;
        let map = random_map(&mut rng, d);
        let sigma = map.chol().matmul_t(map.chol());
        let y = random_point(&mut rng, 50, d);
        let z = map.unwhiten(y.as_matrix()).unwrap();
        let mean = z.column_means();
        for (a, b) in mean.iter().zip(map.mean()) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(z.covariance().sub(&sigma).max_abs() <= 1e-10);

        // A matrix off the set maps to wrong moments.
        let off = gaussian(&mut rng, 50, d);
        assert!(ManifoldPoint::new(off.clone()).is_err());
        let z = map.unwhiten(&off).unwrap();
        assert!(z.covariance().sub(&sigma).max_abs() > 1e-3);
    }

    #[test]
    fn pullback_matches_directional_derivative() {
        // V(z) = Σᵢ ½ zᵢᵀAzᵢ + bᵀzᵢ, G_Z rows A zᵢ + b.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 3;
        let map = random_map(&mut rng, d);
        let a = gaussian(&mut rng, d, d).sym();
        let b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let energy = |y: &Matrix| -> f64 {
            let z = map.unwhiten(y).unwrap();
            z.row_iter()
                .map(|zi| {
                    let az = a.mat_vec(zi);
                    0.5 * zi.iter().zip(&az).map(|(u, v)| u * v).sum::<f64>()
                        + zi.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>()
                })
                .sum()
        };
        let y = gaussian(&mut rng, 8, d);
        let h = gaussian(&mut rng, 8, d);
        let z = map.unwhiten(&y).unwrap();
        let mut gz = Matrix::zeros(8, d);
        for i in 0..8 {
            let az = a.mat_vec(z.row(i));
            for j in 0..d {
                gz.row_mut(i)[j] = az[j] + b[j];
            }
        }
        let gy = map.pullback_gradient(&gz).unwrap();
        let eps = 1e-5;
        let fd = (energy(&y.add(&h.scaled(eps))) - energy(&y.add(&h.scaled(-eps)))) / (2.0 * eps);
        let exact = gy.frobenius_dot(&h);
        assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0));
    }
}
