//! Exponential tilting of the smoothed target.
//!
//! The moment-matched density is
//! `p(z) ∝ exp(−V(z) − λᵀz − ½(z−μ*)ᵀΛ(z−μ*))` with `(λ, Λ)` chosen so that
//! its mean and covariance equal `(μ*, Σ*)`. They satisfy
//! `λ = −E_p[g]` and `Σ*Λ + ΛΣ* = 2(I − sym C)` with `C = E_p[(Z−μ*)g(Z)ᵀ]`.
//!
//! This module provides the training-set estimator of `(λ, Λ)`, the
//! resulting class energies with a minimum-energy classifier, and a 2D
//! quadrature solver for the exact parameters.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{
    gmm_log_density, posterior_mean, potential_with_noise, score_with_noise, smoothed_score,
    smoothed_score_excluding, SmoothingConfig, TrainingSet,
};
use crate::numerics::{cholesky, lyapunov_solve, Matrix};
use crate::rng::{fill_standard_normal, Purpose, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical,
    LeaveOneOut,
    SelfConsistent,
}

/// How `g` is evaluated at the training points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    #[default]
    Empirical,
    /// `g^{(−i)}(xᵢ)` from the mixture without `xᵢ`.
    LeaveOneOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltingParams {
    pub lambda: Vec<f64>,
    /// Symmetric `Λ`, row-major.
    pub capital_lambda: Matrix,
    pub zeta: f64,
    pub provenance: Provenance,
}

impl TiltingParams {
    pub fn zero(d: usize) -> Self {
        Self {
            lambda: vec![0.0; d],
            capital_lambda: Matrix::zeros(d, d),
            zeta: 0.0,
            provenance: Provenance::Empirical,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `λᵀz + ½(z−μ)ᵀΛ(z−μ)`.
    pub fn tilt(&self, mu: &[f64], z: &[f64]) -> f64 {
        let u: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
        let lu = self.capital_lambda.mat_vec(&u);
        let lin: f64 = self.lambda.iter().zip(z).map(|(a, b)| a * b).sum();
        lin + 0.5 * u.iter().zip(&lu).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Gradient of [`TiltingParams::tilt`]: `λ + Λ(z−μ)`.
    pub fn tilt_gradient(&self, mu: &[f64], z: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
        let lu = self.capital_lambda.mat_vec(&u);
        self.lambda.iter().zip(&lu).map(|(a, b)| a + b).collect()
    }
}

/// `1e−6·tr(Σ*)/d`.
pub fn default_zeta(sigma: &Matrix) -> f64 {
    1e-6 * sigma.trace() / sigma.rows().max(1) as f64
}

/// Solves `(Σ+ζI)Λ + Λ(Σ+ζI) = 2(I − sym C)`.
pub fn solve_capital_lambda(sigma: &Matrix, c: &Matrix, zeta: f64) -> Result<Matrix> {
    let d = sigma.rows();
    let s = sigma.add(&Matrix::identity(d).scaled(zeta));
    let b = Matrix::identity(d).sub(&c.sym()).scaled(2.0);
    lyapunov_solve(&s, &b)
}

/// `λ̂` and `Ĉ` from the negative scores `g(xᵢ)` (one row per point).
pub fn empirical_moments(points: &Matrix, mean: &[f64], scores: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if scores.shape() != points.shape() {
        return Err(Error::DimensionMismatch {
            context: "score rows",
            expected: points.rows(),
            found: scores.rows(),
        });
    }
    let n = points.rows() as f64;
    let d = points.cols();
    let mut lambda = vec![0.0; d];
    let mut c = Matrix::zeros(d, d);
    for (x, g) in points.row_iter().zip(scores.row_iter()) {
        for a in 0..d {
            lambda[a] -= g[a] / n;
            let u = x[a] - mean[a];
            let row = c.row_mut(a);
            for b in 0..d {
                row[b] += u * g[b] / n;
            }
        }
    }
    Ok((lambda, c))
}

/// The estimator given precomputed scores at the training points.
pub fn estimate_tilting_from_scores(
    ts: &TrainingSet,
    scores: &Matrix,
    zeta: f64,
    provenance: Provenance,
) -> Result<TiltingParams> {
    if !(zeta >= 0.0) {
        return Err(Error::InvalidConfig(format!("zeta must be nonnegative, got {zeta}")));
    }
    let (lambda, c) = empirical_moments(ts.points(), ts.mean(), scores)?;
    Ok(TiltingParams {
        lambda,
        capital_lambda: solve_capital_lambda(ts.cov(), &c, zeta)?,
        zeta,
        provenance,
    })
}

/// Scores `g(xᵢ)` (or `g^{(−i)}(xᵢ)`), point `i` drawing from `key.stream(i)`.
pub fn training_scores(ts: &TrainingSet, cfg: &SmoothingConfig, mode: EstimatorMode, key: StreamKey) -> Result<Matrix> {
    cfg.validate()?;
    if mode == EstimatorMode::LeaveOneOut && ts.len() < 2 {
        return Err(Error::InvalidConfig(
            "leave-one-out estimation needs at least two training points".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..ts.len())
        .into_par_iter()
        .map(|i| {
            let x = ts.points().row(i);
            let mut rng = key.stream(i as u64);
            match mode {
                EstimatorMode::Empirical => smoothed_score(ts, cfg, x, &mut rng),
                EstimatorMode::LeaveOneOut => smoothed_score_excluding(ts, cfg, i, x, &mut rng),
            }
        })
        .collect::<Result<_>>()?;
    Matrix::from_vec(ts.len(), ts.dim(), rows.concat())
}

/// `λ̂ = −mean ĝ(xᵢ)` and `Λ̂` from the regularized Lyapunov equation.
/// `zeta = None` uses [`default_zeta`].
pub fn estimate_tilting(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    zeta: Option<f64>,
    mode: EstimatorMode,
    seed: u64,
) -> Result<TiltingParams> {
    let zeta = zeta.unwrap_or_else(|| default_zeta(ts.cov()));
    let scores = training_scores(ts, cfg, mode, StreamKey::new(seed, Purpose::Tilting))?;
    let provenance = match mode {
        EstimatorMode::Empirical => Provenance::Empirical,
        EstimatorMode::LeaveOneOut => Provenance::LeaveOneOut,
    };
    estimate_tilting_from_scores(ts, &scores, zeta, provenance)
}

/// One class of the minimum-energy classifier.
///
/// The smoothing noise of the potential estimate is drawn once and frozen,
/// so energies and decisions are deterministic.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub ts: TrainingSet,
    pub cfg: SmoothingConfig,
    pub params: TiltingParams,
    /// One row per antithetic pair.
    pub noise: Matrix,
    pub bias: f64,
}

/// Serialized form of an [`EnergyModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModelFile {
    pub points: Matrix,
    pub smoothing: SmoothingConfig,
    pub params: TiltingParams,
    pub noise: Matrix,
    pub bias: f64,
}

impl EnergyModel {
    /// Estimates the tilt and freezes `M/2` noise directions.
    pub fn build(ts: TrainingSet, cfg: SmoothingConfig, zeta: Option<f64>, mode: EstimatorMode, seed: u64) -> Result<Self> {
        let params = estimate_tilting(&ts, &cfg, zeta, mode, seed)?;
        let mut noise = Matrix::zeros(if cfg.sigma > 0.0 { cfg.pairs() } else { 0 }, ts.dim());
        let mut rng = StreamKey::new(seed, Purpose::FrozenPotential).stream(0);
        fill_standard_normal(&mut rng, noise.as_mut_slice());
        Ok(Self {
            ts,
            cfg,
            params,
            noise,
            bias: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.ts.dim()
    }

    /// `E(z) = V̂(z) + λᵀz + ½(z−μ*)ᵀΛ(z−μ*)`.
    pub fn energy(&self, z: &[f64]) -> Result<f64> {
        let v = potential_with_noise(&self.ts, &self.cfg, &self.noise, z)?;
        Ok(v + self.params.tilt(self.ts.mean(), z))
    }

    /// `∇E(z)`.
    pub fn energy_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let g = score_with_noise(&self.ts, &self.cfg, &self.noise, z)?;
        let t = self.params.tilt_gradient(self.ts.mean(), z);
        Ok(g.iter().zip(&t).map(|(a, b)| a + b).collect())
    }

    pub fn to_file(&self) -> EnergyModelFile {
        EnergyModelFile {
            points: self.ts.points().clone(),
            smoothing: self.cfg,
            params: self.params.clone(),
            noise: self.noise.clone(),
            bias: self.bias,
        }
    }

    pub fn from_file(f: EnergyModelFile) -> Result<Self> {
        f.smoothing.validate()?;
        let ts = TrainingSet::new(f.points)?;
        let d = ts.dim();
        if f.params.dim() != d || f.params.capital_lambda.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "tilting parameters",
                expected: d,
                found: f.params.dim(),
            });
        }
        if f.noise.rows() > 0 && f.noise.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "frozen noise",
                expected: d,
                found: f.noise.cols(),
            });
        }
        if !f.bias.is_finite() {
            return Err(Error::InvalidConfig("model bias must be finite".into()));
        }
        Ok(Self {
            ts,
            cfg: f.smoothing,
            params: f.params,
            noise: f.noise,
            bias: f.bias,
        })
    }
}

/// Energy of a single model at `z`.
pub fn mm_energy(model: &EnergyModel, z: &[f64]) -> Result<f64> {
    model.energy(z)
}

fn check_models(models: &[EnergyModel]) -> Result<usize> {
    let d = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one class model is required".into()))?
        .dim();
    for m in models {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "class model dimension",
                expected: d,
                found: m.dim(),
            });
        }
    }
    Ok(d)
}

/// Energies `E_c(zᵢ)` without biases, one row per query.
pub fn energy_table(models: &[EnergyModel], queries: &Matrix) -> Result<Matrix> {
    let d = check_models(models)?;
    if queries.cols() != d {
        return Err(Error::DimensionMismatch {
            context: "query columns",
            expected: d,
            found: queries.cols(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..queries.rows())
        .into_par_iter()
        .map(|i| models.iter().map(|m| m.energy(queries.row(i))).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    Matrix::from_vec(queries.rows(), models.len(), rows.concat())
}

fn argmin_with_bias(energies: &[f64], biases: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (c, (e, b)) in energies.iter().zip(biases).enumerate() {
        let v = e + b;
        if v < best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

/// `argmin_c E_c(z) + b_c`, ties to the lowest class index.
pub fn ecm_classify(models: &[EnergyModel], z: &[f64]) -> Result<usize> {
    check_models(models)?;
    let e: Vec<f64> = models.iter().map(|m| m.energy(z)).collect::<Result<_>>()?;
    Ok(argmin_with_bias(&e, models.iter().map(|m| m.bias)))
}

/// Labels for every row of `queries`.
pub fn ecm_classify_batch(models: &[EnergyModel], queries: &Matrix) -> Result<Vec<usize>> {
    let table = energy_table(models, queries)?;
    Ok(table
        .row_iter()
        .map(|e| argmin_with_bias(e, models.iter().map(|m| m.bias)))
        .collect())
}

/// Mean cross-entropy of logits `−E − b` against `labels`.
pub fn cross_entropy(energies: &Matrix, biases: &[f64], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (e, &y) in energies.row_iter().zip(labels) {
        let logits: Vec<f64> = e.iter().zip(biases).map(|(e, b)| -e - b).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len().max(1) as f64
}

/// Biases minimizing the cross-entropy of logits `−E_c − b_c` by gradient
/// descent with the energies held fixed. Biases start at zero and keep zero
/// mean.
pub fn calibrate_biases_from_energies(energies: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    let k = energies.cols();
    if labels.len() != energies.rows() {
        return Err(Error::DimensionMismatch {
            context: "validation labels",
            expected: energies.rows(),
            found: labels.len(),
        });
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidConfig(format!("label {y} out of range for {k} classes")));
        }
        counts[y] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidConfig(
            "bias calibration needs at least one validation sample per class".into(),
        ));
    }
    let mut b = vec![0.0; k];
    if k == 1 {
        return Ok(b);
    }
    let n = labels.len() as f64;
    // The softmax cross-entropy gradient is 1/2-Lipschitz in the logits.
    let step = 1.0;
    let mut grad = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for _ in 0..10_000 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (e, &y) in energies.row_iter().zip(labels) {
            let max = e
                .iter()
                .zip(&b)
                .map(|(e, b)| -e - b)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for ((p, e), bc) in probs.iter_mut().zip(e).zip(&b) {
                *p = (-e - bc - max).exp();
                s += *p;
            }
            for (c, p) in probs.iter().enumerate() {
                grad[c] += (f64::from(u8::from(c == y)) - p / s) / n;
            }
        }
        if grad.iter().all(|g| g.abs() < 1e-8) {
            break;
        }
        for (bc, g) in b.iter_mut().zip(&grad) {
            *bc -= step * g;
        }
    }
    Ok(b)
}

/// Calibrates and stores the biases of `models` on a labelled validation set.
pub fn calibrate_biases(models: &mut [EnergyModel], validation: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    let table = energy_table(models, validation)?;
    let b = calibrate_biases_from_energies(&table, labels)?;
    for (m, bc) in models.iter_mut().zip(&b) {
        m.bias = *bc;
    }
    Ok(b)
}

/// A regular 2D grid, nodes `x_min + i·dx` for `i < nx` (likewise `y`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 || !(x.1 > x.0) || !(y.1 > y.0) {
            return Err(Error::InvalidConfig("grid needs at least 2×2 nodes on a nonempty box".into()));
        }
        Ok(Self {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            nx,
            ny,
        })
    }

    /// The data bounding box widened by `6δ + 6σ` on every side, with node
    /// spacing at most `spacing`.
    pub fn covering(ts: &TrainingSet, cfg: &SmoothingConfig, spacing: f64) -> Result<Self> {
        if ts.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "grid quadrature dimension",
                expected: 2,
                found: ts.dim(),
            });
        }
        let margin = 6.0 * cfg.delta + 6.0 * cfg.sigma;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for r in ts.points().row_iter() {
            for j in 0..2 {
                lo[j] = lo[j].min(r[j]);
                hi[j] = hi[j].max(r[j]);
            }
        }
        let n = |j: usize| ((hi[j] - lo[j] + 2.0 * margin) / spacing).ceil() as usize + 1;
        Self::new((lo[0] - margin, hi[0] + margin), (lo[1] - margin, hi[1] + margin), n(0), n(1))
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of node `k = iy·nx + ix`.
    pub fn node(&self, k: usize) -> [f64; 2] {
        let (iy, ix) = (k / self.nx, k % self.nx);
        [self.x_min + ix as f64 * self.dx(), self.y_min + iy as f64 * self.dy()]
    }

    /// Trapezoid weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        let (iy, ix) = (k / self.nx, k % self.nx);
        let edge = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        edge(ix, self.nx) * edge(iy, self.ny) * self.dx() * self.dy()
    }
}

/// `V` and `g = ∇V` tabulated on a grid.
#[derive(Clone, Debug)]
pub struct GridPotential {
    pub spec: GridSpec,
    pub v: Vec<f64>,
    pub g: Vec<[f64; 2]>,
}

/// How the smoothed potential is tabulated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialMethod {
    /// Antithetic estimate with `pairs` noise directions shared by all nodes,
    /// so the tabulated `g` is the exact gradient of the tabulated `V`.
    MonteCarlo { pairs: usize, seed: u64 },
    /// `V = −(log p̂^δ ⋆ φ_σ)` and `g = −(∇log p̂^δ ⋆ φ_σ)` by discrete
    /// Gaussian convolution on a padded copy of the grid.
    Convolution,
}

impl GridPotential {
    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 2]) -> (f64, [f64; 2]) + Sync) -> Self {
        let (v, g): (Vec<f64>, Vec<[f64; 2]>) = (0..spec.len()).into_par_iter().map(|k| f(spec.node(k))).unzip();
        Self { spec, v, g }
    }

    /// `V(z) = ½(z−m)ᵀA(z−m)`, `g = A(z−m)`.
    pub fn quadratic(spec: GridSpec, a: &Matrix, m: [f64; 2]) -> Self {
        let a = [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]];
        Self::from_fn(spec, |z| {
            let u = [z[0] - m[0], z[1] - m[1]];
            let g = [a[0][0] * u[0] + a[0][1] * u[1], a[1][0] * u[0] + a[1][1] * u[1]];
            (0.5 * (u[0] * g[0] + u[1] * g[1]), g)
        })
    }

    /// The smoothed potential of a 2D training set.
    pub fn smoothed(ts: &TrainingSet, cfg: &SmoothingConfig, spec: GridSpec, method: PotentialMethod) -> Result<Self> {
        cfg.validate()?;
        if ts.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "grid quadrature dimension",
                expected: 2,
                found: ts.dim(),
            });
        }
        match method {
            PotentialMethod::MonteCarlo { pairs, seed } => {
                let mut noise = Matrix::zeros(if cfg.sigma > 0.0 { pairs } else { 0 }, 2);
                fill_standard_normal(
                    &mut StreamKey::new(seed, Purpose::FrozenPotential).stream(1),
                    noise.as_mut_slice(),
                );
                let vals: Vec<(f64, [f64; 2])> = (0..spec.len())
                    .into_par_iter()
                    .map(|k| {
                        let z = spec.node(k);
                        let v = potential_with_noise(ts, cfg, &noise, &z)?;
                        let g = score_with_noise(ts, cfg, &noise, &z)?;
                        Ok((v, [g[0], g[1]]))
                    })
                    .collect::<Result<_>>()?;
                let (v, g) = vals.into_iter().unzip();
                Ok(Self { spec, v, g })
            }
            PotentialMethod::Convolution => convolved_potential(ts, cfg, spec),
        }
    }
}

fn gaussian_kernel(sigma: f64, h: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let half = (7.0 * sigma / h).ceil() as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|k| (-(k as f64 * h).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn convolved_potential(ts: &TrainingSet, cfg: &SmoothingConfig, spec: GridSpec) -> Result<GridPotential> {
    let (dx, dy) = (spec.dx(), spec.dy());
    let kx = gaussian_kernel(cfg.sigma, dx);
    let ky = gaussian_kernel(cfg.sigma, dy);
    let (px, py) = (kx.len() / 2, ky.len() / 2);
    let (fx, fy) = (spec.nx + 2 * px, spec.ny + 2 * py);
    let x0 = spec.x_min - px as f64 * dx;
    let y0 = spec.y_min - py as f64 * dy;
    let d2 = cfg.delta * cfg.delta;

    // Fields −log p̂, −∂₁log p̂, −∂₂log p̂ on the padded grid.
    let fine: Vec<[f64; 3]> = (0..fx * fy)
        .into_par_iter()
        .map(|k| {
            let z = [x0 + (k % fx) as f64 * dx, y0 + (k / fx) as f64 * dy];
            let l = gmm_log_density(ts, cfg.delta, &z)?;
            let c = posterior_mean(ts, cfg.delta, &z)?;
            Ok([-l, (z[0] - c[0]) / d2, (z[1] - c[1]) / d2])
        })
        .collect::<Result<_>>()?;

    // Along x: fy rows of length spec.nx.
    let along_x: Vec<[f64; 3]> = (0..fy * spec.nx)
        .into_par_iter()
        .map(|k| {
            let (iy, ix) = (k / spec.nx, k % spec.nx);
            let mut acc = [0.0; 3];
            for (t, w) in kx.iter().enumerate() {
                let f = &fine[iy * fx + ix + t];
                for c in 0..3 {
                    acc[c] += w * f[c];
                }
            }
            acc
        })
        .collect();
    let out: Vec<[f64; 3]> = (0..spec.len())
        .into_par_iter()
        .map(|k| {
            let (iy, ix) = (k / spec.nx, k % spec.nx);
            let mut acc = [0.0; 3];
            for (t, w) in ky.iter().enumerate() {
                let f = &along_x[(iy + t) * spec.nx + ix];
                for c in 0..3 {
                    acc[c] += w * f[c];
                }
            }
            acc
        })
        .collect();
    Ok(GridPotential {
        spec,
        v: out.iter().map(|f| f[0]).collect(),
        g: out.iter().map(|f| [f[1], f[2]]).collect(),
    })
}

/// A density tabulated on a grid, normalized under the trapezoid rule.
#[derive(Clone, Debug)]
pub struct GridDensity {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `exp(log_values)`.
    pub fn from_log(spec: GridSpec, log_values: &[f64]) -> Result<Self> {
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidConfig("grid log-density has no finite maximum".into()));
        }
        let mut values: Vec<f64> = log_values.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = values.iter().enumerate().map(|(k, p)| p * spec.weight(k)).sum();
        values.iter_mut().for_each(|p| *p /= z);
        Ok(Self { spec, values })
    }

    /// `∫ f p` by the trapezoid rule.
    pub fn expect<const K: usize>(&self, f: impl Fn(usize, [f64; 2]) -> [f64; K]) -> [f64; K] {
        let mut acc = [0.0; K];
        for (k, p) in self.values.iter().enumerate() {
            let w = p * self.spec.weight(k);
            if w == 0.0 {
                continue;
            }
            let v = f(k, self.spec.node(k));
            for j in 0..K {
                acc[j] += w * v[j];
            }
        }
        acc
    }

    /// Mean and covariance under the trapezoid rule.
    pub fn moments(&self) -> (Vec<f64>, Matrix) {
        let m = self.expect(|_, z| z);
        let s = self.expect(|_, z| {
            let u = [z[0] - m[0], z[1] - m[1]];
            [u[0] * u[0], u[0] * u[1], u[1] * u[1]]
        });
        (m.to_vec(), Matrix::from_rows(&[[s[0], s[1]], [s[1], s[2]]]).expect("2×2"))
    }

    /// Draws `n` points: a node by two-stage inverse CDF over the trapezoid
    /// masses, then uniform jitter within its cell.
    pub fn sample(&self, n: usize, key: StreamKey) -> Matrix {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let mass: Vec<f64> = self.values.iter().enumerate().map(|(k, p)| p * self.spec.weight(k)).collect();
        let mut col_cdf = vec![0.0; nx];
        let mut acc = 0.0;
        for (ix, c) in col_cdf.iter_mut().enumerate() {
            acc += (0..ny).map(|iy| mass[iy * nx + ix]).sum::<f64>();
            *c = acc;
        }
        let mut out = Matrix::zeros(n, 2);
        let (dx, dy) = (self.spec.dx(), self.spec.dy());
        for i in 0..n {
            let mut rng = key.stream(i as u64);
            let u = rng.random::<f64>() * col_cdf[nx - 1];
            let ix = col_cdf.partition_point(|&c| c <= u).min(nx - 1);
            let col_total: f64 = (0..ny).map(|iy| mass[iy * nx + ix]).sum();
            let target = rng.random::<f64>() * col_total;
            let mut run = 0.0;
            let mut iy = ny - 1;
            for j in 0..ny {
                run += mass[j * nx + ix];
                if run > target {
                    iy = j;
                    break;
                }
            }
            let node = self.spec.node(iy * nx + ix);
            let row = out.row_mut(i);
            row[0] = node[0] + (rng.random::<f64>() - 0.5) * dx;
            row[1] = node[1] + (rng.random::<f64>() - 0.5) * dy;
        }
        out
    }
}

/// `p ∝ exp(−V − λᵀz − ½(z−μ)ᵀΛ(z−μ))` on the grid of `pot`.
pub fn tilted_density(pot: &GridPotential, params: &TiltingParams, mu: &[f64]) -> Result<GridDensity> {
    let logs: Vec<f64> = (0..pot.spec.len())
        .map(|k| -pot.v[k] - params.tilt(mu, &pot.spec.node(k)))
        .collect();
    GridDensity::from_log(pot.spec, &logs)
}

/// The tilted density of a 2D training set on `spec`.
pub fn grid_density_2d(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    params: &TiltingParams,
    spec: GridSpec,
    method: PotentialMethod,
) -> Result<GridDensity> {
    let pot = GridPotential::smoothed(ts, cfg, spec, method)?;
    tilted_density(&pot, params, ts.mean())
}

/// `(E_p[g], E_p[(Z−μ)gᵀ])` by quadrature.
pub fn score_expectations(density: &GridDensity, pot: &GridPotential, mu: &[f64]) -> (Vec<f64>, Matrix) {
    let e = density.expect(|k, z| {
        let g = pot.g[k];
        let u = [z[0] - mu[0], z[1] - mu[1]];
        [g[0], g[1], u[0] * g[0], u[0] * g[1], u[1] * g[0], u[1] * g[1]]
    });
    (vec![e[0], e[1]], Matrix::from_rows(&[[e[2], e[3]], [e[4], e[5]]]).expect("2×2"))
}

/// Iteration used to reach the self-consistent parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointMethod {
    /// Newton's method on the convex dual
    /// `Φ(λ, Λ) = log Z(λ, Λ) + λᵀμ* + ½tr(ΛΣ*)`, whose stationarity
    /// conditions are exactly the moment constraints.
    #[default]
    DualNewton,
    /// Damped substitution into the tilting identities.
    Picard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfConsistentOptions {
    pub method: FixedPointMethod,
    /// Picard mixing weight of the new iterate.
    pub damping: f64,
    pub max_iters: usize,
    /// Convergence threshold on the parameter change (max norm).
    pub tolerance: f64,
}

impl Default for SelfConsistentOptions {
    fn default() -> Self {
        Self {
            method: FixedPointMethod::DualNewton,
            damping: 0.5,
            max_iters: 200,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelfConsistentSolution {
    pub params: TiltingParams,
    pub density: GridDensity,
    pub iterations: usize,
    /// `‖λ + E_p[g]‖∞` at the solution.
    pub lambda_residual: f64,
    /// `‖Σ*Λ + ΛΣ* − 2(I − sym C)‖_F` at the solution.
    pub lyapunov_residual: f64,
}

fn params_from_theta(theta: &[f64; 5]) -> TiltingParams {
    TiltingParams {
        lambda: vec![theta[0], theta[1]],
        capital_lambda: Matrix::from_rows(&[[theta[2], theta[4]], [theta[4], theta[3]]]).expect("2×2"),
        zeta: 0.0,
        provenance: Provenance::SelfConsistent,
    }
}

fn theta_from_params(p: &TiltingParams) -> [f64; 5] {
    let l = &p.capital_lambda;
    [p.lambda[0], p.lambda[1], l[(0, 0)], l[(1, 1)], 0.5 * (l[(0, 1)] + l[(1, 0)])]
}

/// `(Φ, ∇Φ, ∇²Φ)` for the dual with statistics
/// `T = (z₁, z₂, ½u₁², ½u₂², u₁u₂)`, `u = z − μ*`.
fn dual(pot: &GridPotential, theta: &[f64; 5], mu: &[f64], sigma: &Matrix) -> (f64, [f64; 5], [[f64; 5]; 5]) {
    let spec = pot.spec;
    let stats = |z: [f64; 2]| {
        let u = [z[0] - mu[0], z[1] - mu[1]];
        [z[0], z[1], 0.5 * u[0] * u[0], 0.5 * u[1] * u[1], u[0] * u[1]]
    };
    let logs: Vec<f64> = (0..spec.len())
        .map(|k| {
            let t = stats(spec.node(k));
            -pot.v[k] - (0..5).map(|j| theta[j] * t[j]).sum::<f64>()
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m1 = [0.0; 5];
    let mut m2 = [[0.0; 5]; 5];
    for (k, l) in logs.iter().enumerate() {
        let w = (l - max).exp() * spec.weight(k);
        if w == 0.0 {
            continue;
        }
        let t = stats(spec.node(k));
        z += w;
        for a in 0..5 {
            m1[a] += w * t[a];
            for b in 0..5 {
                m2[a][b] += w * t[a] * t[b];
            }
        }
    }
    let target = [mu[0], mu[1], 0.5 * sigma[(0, 0)], 0.5 * sigma[(1, 1)], sigma[(0, 1)]];
    let mut grad = [0.0; 5];
    let mut hess = [[0.0; 5]; 5];
    for a in 0..5 {
        m1[a] /= z;
        grad[a] = target[a] - m1[a];
    }
    for a in 0..5 {
        for b in 0..5 {
            hess[a][b] = m2[a][b] / z - m1[a] * m1[b];
        }
    }
    let phi = max + z.ln() + (0..5).map(|j| theta[j] * target[j]).sum::<f64>();
    (phi, grad, hess)
}

/// Solves the tilting identities on a tabulated potential with target
/// moments `(μ*, Σ*)`.
pub fn solve_selfconsistent_on_grid(
    pot: &GridPotential,
    mu: &[f64],
    sigma: &Matrix,
    opts: &SelfConsistentOptions,
) -> Result<SelfConsistentSolution> {
    if mu.len() != 2 || sigma.shape() != (2, 2) {
        return Err(Error::DimensionMismatch {
            context: "grid quadrature dimension",
            expected: 2,
            found: mu.len(),
        });
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
    }
    let mut theta = [0.0; 5];
    let mut last_change = f64::INFINITY;
    let mut converged_at = None;
    for it in 1..=opts.max_iters {
        let next = match opts.method {
            FixedPointMethod::DualNewton => {
                let (phi, grad, hess) = dual(pot, &theta, mu, sigma);
                let h = Matrix::from_fn(5, 5, |a, b| hess[a][b]);
                let step = cholesky(&h)?.solve(&grad.map(|g| -g));
                let slope: f64 = (0..5).map(|j| grad[j] * step[j]).sum();
                let mut t = 1.0;
                loop {
                    let cand: [f64; 5] = std::array::from_fn(|j| theta[j] + t * step[j]);
                    let (phi_c, _, _) = dual(pot, &cand, mu, sigma);
                    if phi_c.is_finite() && phi_c <= phi + 1e-4 * t * slope {
                        break cand;
                    }
                    t *= 0.5;
                    if t < 1e-12 {
                        break cand;
                    }
                }
            }
            FixedPointMethod::Picard => {
                let params = params_from_theta(&theta);
                let density = tilted_density(pot, &params, mu)?;
                let (eg, c) = score_expectations(&density, pot, mu);
                let lam = solve_capital_lambda(sigma, &c, 0.0)?;
                let fresh = theta_from_params(&TiltingParams {
                    lambda: eg.iter().map(|v| -v).collect(),
                    capital_lambda: lam,
                    zeta: 0.0,
                    provenance: Provenance::SelfConsistent,
                });
                std::array::from_fn(|j| (1.0 - opts.damping) * theta[j] + opts.damping * fresh[j])
            }
        };
        last_change = (0..5).fold(0.0_f64, |a, j| a.max((next[j] - theta[j]).abs()));
        theta = next;
        if !last_change.is_finite() {
            break;
        }
        if last_change < opts.tolerance {
            converged_at = Some(it);
            break;
        }
    }
    let Some(iterations) = converged_at else {
        return Err(Error::NoConvergence {
            iterations: opts.max_iters,
            residual: last_change,
        });
    };
    let params = params_from_theta(&theta);
    let density = tilted_density(pot, &params, mu)?;
    let (eg, c) = score_expectations(&density, pot, mu);
    let lambda_residual = params
        .lambda
        .iter()
        .zip(&eg)
        .fold(0.0_f64, |a, (l, g)| a.max((l + g).abs()));
    let l = &params.capital_lambda;
    let lyapunov_residual = sigma
        .matmul(l)
        .add(&l.matmul(sigma))
        .sub(&Matrix::identity(2).sub(&c.sym()).scaled(2.0))
        .frobenius_norm();
    Ok(SelfConsistentSolution {
        params,
        density,
        iterations,
        lambda_residual,
        lyapunov_residual,
    })
}

/// Self-consistent tilting parameters of a 2D training set.
pub fn solve_tilting_selfconsistent_2d(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    spec: GridSpec,
    method: PotentialMethod,
    opts: &SelfConsistentOptions,
) -> Result<SelfConsistentSolution> {
    let pot = GridPotential::smoothed(ts, cfg, spec, method)?;
    solve_selfconsistent_on_grid(&pot, ts.mean(), ts.cov(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sym_eig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_set(seed: u64, n: usize, d: usize) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainingSet::new(Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    /// Rescales a point cloud to mean 0 and covariance exactly I.
    fn standardized(seed: u64, n: usize, d: usize) -> TrainingSet {
        let raw = normal_set(seed, n, d);
        let l = raw.cholesky_factor().unwrap().clone();
        let map = crate::manifold::WhiteningMap::new(raw.mean().to_vec(), l).unwrap();
        TrainingSet::new(map.whiten(raw.points()).unwrap()).unwrap()
    }

    #[test]
    fn affine_score_gives_zero_tilt() {
        let ts = standardized(1, 40, 3);
        let scores = ts.points().clone();
        let p = estimate_tilting_from_scores(&ts, &scores, 0.0, Provenance::Empirical).unwrap();
        assert!(p.lambda.iter().all(|v| v.abs() < 1e-12));
        assert!(p.capital_lambda.max_abs() < 1e-10);
    }

    #[test]
    fn estimator_matches_direct_sums() {
        let ts = normal_set(2, 30, 2);
        let cfg = SmoothingConfig::new(0.4, 0.0, 2).unwrap();
        let p = estimate_tilting(&ts, &cfg, Some(0.0), EstimatorMode::Empirical, 0).unwrap();
        let mut lambda = [0.0; 2];
        let mut c = [[0.0; 2]; 2];
        for i in 0..30 {
            let x = ts.points().row(i);
            let s = crate::gmm::gmm_score(&ts, 0.4, x).unwrap();
            for a in 0..2 {
                lambda[a] += s[a] / 30.0;
                for b in 0..2 {
                    c[a][b] += (x[a] - ts.mean()[a]) * (-s[b]) / 30.0;
                }
            }
        }
        for a in 0..2 {
            assert!((p.lambda[a] - lambda[a]).abs() < 1e-10);
        }
        let cm = Matrix::from_rows(&c).unwrap();
        let expected = solve_capital_lambda(ts.cov(), &cm, 0.0).unwrap();
        assert!(p.capital_lambda.sub(&expected).max_abs() < 1e-10);
        assert_eq!(p.capital_lambda.asymmetry(), 0.0);
        let s = ts.cov();
        let res = s.matmul(&p.capital_lambda).add(&p.capital_lambda.matmul(s)).sub(&Matrix::identity(2).sub(&cm.sym()).scaled(2.0));
        assert!(res.frobenius_norm() < 1e-10);
    }

    #[test]
    fn leave_one_out_needs_two_points() {
        let ts = TrainingSet::from_rows(&[[0.0, 1.0]]).unwrap();
        let cfg = SmoothingConfig::new(0.4, 0.1, 2).unwrap();
        assert!(estimate_tilting(&ts, &cfg, None, EstimatorMode::LeaveOneOut, 0).is_err());
        let ts = normal_set(3, 20, 2);
        let p = estimate_tilting(&ts, &cfg, None, EstimatorMode::LeaveOneOut, 0).unwrap();
        assert_eq!(p.provenance, Provenance::LeaveOneOut);
    }

    fn point_model(x: [f64; 2]) -> EnergyModel {
        let ts = TrainingSet::from_rows(&[x, [x[0] + 0.1, x[1]], [x[0], x[1] + 0.1]]).unwrap();
        EnergyModel::build(ts, SmoothingConfig::new(0.2, 0.0, 2).unwrap(), None, EstimatorMode::Empirical, 0).unwrap()
    }

    #[test]
    fn classifier_picks_nearest_class_and_breaks_ties_low() {
        let models = vec![point_model([0.0, 0.0]), point_model([20.0, 20.0])];
        assert_eq!(ecm_classify(&models, &[0.0, 0.0]).unwrap(), 0);
        assert_eq!(ecm_classify(&models, &[20.0, 20.0]).unwrap(), 1);
        let same = vec![point_model([1.0, 1.0]), point_model([1.0, 1.0])];
        assert_eq!(ecm_classify(&same, &[3.0, -2.0]).unwrap(), 0);
    }

    #[test]
    fn classifier_ignores_common_bias_shift() {
        let mut models = vec![point_model([0.0, 0.0]), point_model([3.0, 1.0])];
        let q = Matrix::from_fn(40, 2, |i, j| (i as f64 * 0.37 + j as f64 * 1.3).sin() * 3.0);
        let before = ecm_classify_batch(&models, &q).unwrap();
        for m in &mut models {
            m.bias += 123.0;
        }
        assert_eq!(ecm_classify_batch(&models, &q).unwrap(), before);
    }

    #[test]
    fn calibration_does_not_increase_cross_entropy() {
        let energies = Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.2], [2.0, 0.0], [0.1, 0.3], [1.0, 1.5]]).unwrap();
        let labels = [1, 1, 1, 0, 1];
        let before = cross_entropy(&energies, &[0.0, 0.0], &labels);
        let b = calibrate_biases_from_energies(&energies, &labels).unwrap();
        assert!(cross_entropy(&energies, &b, &labels) <= before);
        let single = calibrate_biases_from_energies(&Matrix::from_rows(&[[1.0], [2.0]]).unwrap(), &[0, 0]).unwrap();
        assert_eq!(single, vec![0.0]);
        assert!(calibrate_biases_from_energies(&energies, &[1, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn untilted_density_is_the_mixture() {
        let ts = TrainingSet::from_rows(&[[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]]).unwrap();
        let cfg = SmoothingConfig::new(0.3, 0.0, 2).unwrap();
        let spec = GridSpec::covering(&ts, &cfg, 0.05).unwrap();
        for method in [PotentialMethod::Convolution, PotentialMethod::MonteCarlo { pairs: 4, seed: 1 }] {
            let dens = grid_density_2d(&ts, &cfg, &TiltingParams::zero(2), spec, method).unwrap();
            let raw: Vec<f64> = (0..spec.len())
                .map(|k| gmm_log_density(&ts, 0.3, &spec.node(k)).unwrap().exp())
                .collect();
            let k0 = spec.len() / 2;
            let ratio = dens.values[k0] / raw[k0];
            for k in 0..spec.len() {
                assert!((dens.values[k] - ratio * raw[k]).abs() <= 1e-8 * dens.values[k].max(1e-300) + 1e-300);
            }
            // The mixture integrates to one on a covering grid.
            assert!((ratio - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_point_density_centers_on_the_point() {
        let ts = TrainingSet::from_rows(&[[0.3, -0.2]]).unwrap();
        let cfg = SmoothingConfig::new(0.2, 0.0, 2).unwrap();
        let spec = GridSpec::covering(&ts, &cfg, 0.02).unwrap();
        let dens = grid_density_2d(&ts, &cfg, &TiltingParams::zero(2), spec, PotentialMethod::Convolution).unwrap();
        let (m, c) = dens.moments();
        assert!((m[0] - 0.3).abs() < 0.02 && (m[1] + 0.2).abs() < 0.02);
        assert!((c[(0, 0)] - 0.04).abs() < 1e-3);
    }

    #[test]
    fn convolution_matches_monte_carlo_potential_gradient() {
        // Both tabulations estimate the same smoothed field.
        let ts = TrainingSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let cfg = SmoothingConfig::new(0.3, 0.2, 2).unwrap();
        let spec = GridSpec::new((-0.5, 1.5), (-0.5, 1.5), 41, 41).unwrap();
        let conv = GridPotential::smoothed(&ts, &cfg, spec, PotentialMethod::Convolution).unwrap();
        let mc = GridPotential::smoothed(&ts, &cfg, spec, PotentialMethod::MonteCarlo { pairs: 4000, seed: 3 }).unwrap();
        let k = 20 * 41 + 20;
        for j in 0..2 {
            assert!((conv.g[k][j] - mc.g[k][j]).abs() < 0.1, "{:?} vs {:?}", conv.g[k], mc.g[k]);
        }
    }

    #[test]
    fn standard_gaussian_potential_needs_no_tilt() {
        let spec = GridSpec::new((-8.0, 8.0), (-8.0, 8.0), 161, 161).unwrap();
        let pot = GridPotential::quadratic(spec, &Matrix::identity(2), [0.0, 0.0]);
        for method in [FixedPointMethod::DualNewton, FixedPointMethod::Picard] {
            let opts = SelfConsistentOptions { method, ..Default::default() };
            let sol = solve_selfconsistent_on_grid(&pot, &[0.0, 0.0], &Matrix::identity(2), &opts).unwrap();
            assert!(sol.iterations <= 2);
            assert!(sol.params.lambda.iter().all(|v| v.abs() < 1e-8));
            assert!(sol.params.capital_lambda.max_abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_potential_solution_equals_empirical_estimate() {
        let ts = normal_set(4, 200, 2);
        let a = Matrix::from_rows(&[[2.0, 0.3], [0.3, 0.7]]).unwrap();
        let m = [0.4, -0.3];
        let spec = GridSpec::new((-9.0, 9.0), (-9.0, 9.0), 361, 361).unwrap();
        let pot = GridPotential::quadratic(spec, &a, m);
        let sol = solve_selfconsistent_on_grid(&pot, ts.mean(), ts.cov(), &SelfConsistentOptions::default()).unwrap();
        let scores = Matrix::from_fn(200, 2, |i, j| {
            let x = ts.points().row(i);
            a[(j, 0)] * (x[0] - m[0]) + a[(j, 1)] * (x[1] - m[1])
        });
        let est = estimate_tilting_from_scores(&ts, &scores, 0.0, Provenance::Empirical).unwrap();
        for j in 0..2 {
            assert!((sol.params.lambda[j] - est.lambda[j]).abs() < 1e-6);
        }
        assert!(sol.params.capital_lambda.sub(&est.capital_lambda).max_abs() < 1e-6);
        let eig = sym_eig(&sol.params.capital_lambda.add(&a)).unwrap();
        assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn grid_sampler_reproduces_moments() {
        let spec = GridSpec::new((-6.0, 6.0), (-6.0, 6.0), 241, 241).unwrap();
        let pot = GridPotential::quadratic(spec, &Matrix::from_rows(&[[1.0, 0.0], [0.0, 4.0]]).unwrap(), [1.0, 0.0]);
        let dens = tilted_density(&pot, &TiltingParams::zero(2), &[0.0, 0.0]).unwrap();
        let s = dens.sample(20_000, StreamKey::new(0, Purpose::Sampling));
        let m = s.column_means();
        let c = s.covariance();
        assert!((m[0] - 1.0).abs() < 0.03 && m[1].abs() < 0.02);
        assert!((c[(0, 0)] - 1.0).abs() < 0.05 && (c[(1, 1)] - 0.25).abs() < 0.02);
    }
}
