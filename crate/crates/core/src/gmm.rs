//! The isotropic Gaussian mixture `p̂^δ` over training points, its closed-form
//! score, and antithetic Monte Carlo estimates of the smoothed potential
//! `V(z) = −E log p̂^δ(z + σε)` and of its gradient `g = ∇V`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, squared_distance, Matrix};
use crate::rng::{fill_standard_normal, StreamKey};

/// Terms whose exponent lies this far below the largest one are below f64
/// resolution of the normalizer for any realistic training-set size.
const EXP_CUTOFF: f64 = -50.0;

/// Training points with cached empirical moments.
///
/// The covariance uses the `1/N` (population) normalization.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    points: Matrix,
    mean: Vec<f64>,
    cov: Matrix,
    chol: Option<Matrix>,
}

impl TrainingSet {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::InvalidConfig(
                "training set needs at least one point of positive dimension".into(),
            ));
        }
        if !points.is_finite() {
            return Err(Error::InvalidConfig("training set has non-finite entries".into()));
        }
        let mean = points.column_means();
        let cov = points.covariance();
        let chol = cholesky(&cov).ok().map(|f| f.chol);
        Ok(Self {
            points,
            mean,
            cov,
            chol,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn points(&self) -> &Matrix {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Cholesky factor `L*` of the covariance; fails when the covariance is
    /// not positive definite.
    pub fn cholesky_factor(&self) -> Result<&Matrix> {
        match &self.chol {
            Some(l) => Ok(l),
            None => Err(cholesky(&self.cov).err().unwrap_or(Error::NotPositiveDefinite {
                pivot: 0,
                value: 0.0,
            })),
        }
    }

    /// Largest distance of a training point from the origin.
    pub fn max_norm(&self) -> f64 {
        self.points
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Mixture bandwidth `δ`, smoothing bandwidth `σ` and Monte Carlo count `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub delta: f64,
    pub sigma: f64,
    pub mc_samples: usize,
}

impl SmoothingConfig {
    pub fn new(delta: f64, sigma: f64, mc_samples: usize) -> Result<Self> {
        let cfg = Self {
            delta,
            sigma,
            mc_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidConfig(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.mc_samples < 2 || self.mc_samples % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "mc_samples must be even and >= 2 (antithetic pairs), got {}",
                self.mc_samples
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn pairs(&self) -> usize {
        self.mc_samples / 2
    }
}

/// Reusable buffers for the per-query kernels.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch {
    pub logits: Vec<f64>,
    pub eps: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
}

impl Scratch {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            logits: vec![0.0; n],
            eps: vec![0.0; d],
            y: vec![0.0; d],
            c: vec![0.0; d],
        }
    }
}

/// Second softmax pass shared by every estimator: given logits for the
/// members (in member order), writes `c = Σ ωᵢ eᵢ xᵢ / Σ ωᵢ eᵢ` with
/// `eᵢ = exp(lᵢ − max)` and returns `(max, Σ ωᵢ eᵢ)`.
#[inline]
pub(crate) fn softmax_mean_from_logits(
    points: &Matrix,
    members: impl Iterator<Item = (usize, f64)>,
    logits: &[f64],
    c: &mut [f64],
) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    c.iter_mut().for_each(|v| *v = 0.0);
    let mut t0 = 0.0;
    for ((i, omega), &l) in members.zip(logits) {
        let t = l - max;
        if t > EXP_CUTOFF {
            let w = omega * t.exp();
            t0 += w;
            for (cj, xj) in c.iter_mut().zip(points.row(i)) {
                *cj += w * xj;
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= t0);
    (max, t0)
}

/// Weighted softmax mean at an explicit query `y`. Returns `log Σ ωᵢ exp(lᵢ)`.
#[inline]
pub(crate) fn weighted_softmax_mean<I>(
    points: &Matrix,
    members: I,
    delta: f64,
    y: &[f64],
    logits: &mut Vec<f64>,
    c: &mut [f64],
) -> f64
where
    I: Iterator<Item = (usize, f64)> + Clone,
{
    let inv = 1.0 / (2.0 * delta * delta);
    logits.clear();
    logits.extend(
        members
            .clone()
            .map(|(i, _)| -squared_distance(y, points.row(i)) * inv),
    );
    let (max, t0) = softmax_mean_from_logits(points, members, logits, c);
    max + t0.ln()
}

#[inline]
fn members(n: usize, exclude: Option<usize>) -> impl Iterator<Item = (usize, f64)> + Clone {
    (0..n).filter(move |&i| Some(i) != exclude).map(|i| (i, 1.0))
}

fn check_query(ts: &TrainingSet, z: &[f64]) -> Result<()> {
    if z.len() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "query point",
            expected: ts.dim(),
            found: z.len(),
        });
    }
    Ok(())
}

fn check_exclusion(ts: &TrainingSet, exclude: Option<usize>) -> Result<()> {
    if let Some(i) = exclude {
        if ts.len() < 2 {
            return Err(Error::InvalidConfig(
                "leave-one-out mixture needs at least two training points".into(),
            ));
        }
        if i >= ts.len() {
            return Err(Error::DimensionMismatch {
                context: "excluded training index",
                expected: ts.len(),
                found: i,
            });
        }
    }
    Ok(())
}

fn log_density_with(
    ts: &TrainingSet,
    delta: f64,
    exclude: Option<usize>,
    z: &[f64],
    scratch: &mut Scratch,
) -> f64 {
    let n = ts.len() - usize::from(exclude.is_some());
    let d = ts.dim() as f64;
    let lse = weighted_softmax_mean(
        ts.points(),
        members(ts.len(), exclude),
        delta,
        z,
        &mut scratch.logits,
        &mut scratch.c,
    );
    lse - (n as f64).ln() - 0.5 * d * (2.0 * PI * delta * delta).ln()
}

/// `log p̂^δ(z)` with log-sum-exp stabilization.
pub fn gmm_log_density(ts: &TrainingSet, delta: f64, z: &[f64]) -> Result<f64> {
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    Ok(log_density_with(ts, delta, None, z, &mut scratch))
}

/// Softmax-weighted mean `c(z)` of the training points.
pub fn posterior_mean(ts: &TrainingSet, delta: f64, z: &[f64]) -> Result<Vec<f64>> {
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    weighted_softmax_mean(
        ts.points(),
        members(ts.len(), None),
        delta,
        z,
        &mut scratch.logits,
        &mut scratch.c,
    );
    Ok(scratch.c)
}

/// Closed-form score `∇log p̂^δ(z) = (c(z) − z)/δ²`.
pub fn gmm_score(ts: &TrainingSet, delta: f64, z: &[f64]) -> Result<Vec<f64>> {
    let c = posterior_mean(ts, delta, z)?;
    let d2 = delta * delta;
    Ok(c.iter().zip(z).map(|(ci, zi)| (ci - zi) / d2).collect())
}

/// Core antithetic estimator of `g(z)`, writing into `out`.
///
/// `ĝ(z) = (z − c̄)/δ²` with `c̄` the mean of `c(z ± σεᵣ)` over the `M/2`
/// pairs. The perturbation itself cancels within each pair, so only the
/// posterior means carry noise. With `σ = 0` no randomness is consumed.
pub(crate) fn smoothed_score_into<R: Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    exclude: Option<usize>,
    z: &[f64],
    rng: &mut R,
    scratch: &mut Scratch,
    out: &mut [f64],
) {
    let d2 = cfg.delta * cfg.delta;
    let points = ts.points();
    let n = ts.len();
    if cfg.sigma == 0.0 {
        weighted_softmax_mean(points, members(n, exclude), cfg.delta, z, &mut scratch.logits, &mut scratch.c);
        for ((o, zi), ci) in out.iter_mut().zip(z).zip(&scratch.c) {
            *o = (zi - ci) / d2;
        }
        return;
    }
    let mut cbar = vec![0.0; z.len()];
    for _ in 0..cfg.pairs() {
        fill_standard_normal(rng, &mut scratch.eps);
        for sign in [1.0, -1.0] {
            for ((yi, zi), ei) in scratch.y.iter_mut().zip(z).zip(&scratch.eps) {
                *yi = zi + sign * cfg.sigma * ei;
            }
            weighted_softmax_mean(
                points,
                members(n, exclude),
                cfg.delta,
                &scratch.y,
                &mut scratch.logits,
                &mut scratch.c,
            );
            for (b, ci) in cbar.iter_mut().zip(&scratch.c) {
                *b += ci;
            }
        }
    }
    let m = cfg.mc_samples as f64;
    for ((o, zi), b) in out.iter_mut().zip(z).zip(&cbar) {
        *o = (zi - b / m) / d2;
    }
}

/// Antithetic Monte Carlo estimate of the negative smoothed score `g(z)`.
pub fn smoothed_score<R: Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    z: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    let mut out = vec![0.0; ts.dim()];
    smoothed_score_into(ts, cfg, None, z, rng, &mut scratch, &mut out);
    Ok(out)
}

/// `g^{(−i)}(z)`: the smoothed score of the mixture without training point `i`.
pub fn smoothed_score_excluding<R: Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    exclude: usize,
    z: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_query(ts, z)?;
    check_exclusion(ts, Some(exclude))?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    let mut out = vec![0.0; ts.dim()];
    smoothed_score_into(ts, cfg, Some(exclude), z, rng, &mut scratch, &mut out);
    Ok(out)
}

/// Antithetic Monte Carlo estimate of `V(z)`, drawing noise exactly as
/// [`smoothed_score`] does so that shared-noise finite differences of this
/// estimate reproduce the score estimate.
pub fn smoothed_potential<R: Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    z: &[f64],
    rng: &mut R,
) -> Result<f64> {
    cfg.validate()?;
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    if cfg.sigma == 0.0 {
        return Ok(-log_density_with(ts, cfg.delta, None, z, &mut scratch));
    }
    let mut acc = 0.0;
    let mut y = vec![0.0; z.len()];
    for _ in 0..cfg.pairs() {
        fill_standard_normal(rng, &mut scratch.eps);
        for sign in [1.0, -1.0] {
            for ((yi, zi), ei) in y.iter_mut().zip(z).zip(&scratch.eps) {
                *yi = zi + sign * cfg.sigma * ei;
            }
            acc += log_density_with(ts, cfg.delta, None, &y, &mut scratch);
        }
    }
    Ok(-acc / cfg.mc_samples as f64)
}

/// `V̂(z)` evaluated with a fixed set of noise directions (one per pair).
pub fn potential_with_noise(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    noise: &Matrix,
    z: &[f64],
) -> Result<f64> {
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    if cfg.sigma == 0.0 || noise.rows() == 0 {
        return Ok(-log_density_with(ts, cfg.delta, None, z, &mut scratch));
    }
    if noise.cols() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "frozen noise",
            expected: ts.dim(),
            found: noise.cols(),
        });
    }
    let mut acc = 0.0;
    let mut y = vec![0.0; z.len()];
    for eps in noise.row_iter() {
        for sign in [1.0, -1.0] {
            for ((yi, zi), ei) in y.iter_mut().zip(z).zip(eps) {
                *yi = zi + sign * cfg.sigma * ei;
            }
            acc += log_density_with(ts, cfg.delta, None, &y, &mut scratch);
        }
    }
    Ok(-acc / (2 * noise.rows()) as f64)
}

/// `ĝ(z)` evaluated with a fixed set of noise directions; the exact gradient
/// of [`potential_with_noise`].
pub fn score_with_noise(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    noise: &Matrix,
    z: &[f64],
) -> Result<Vec<f64>> {
    check_query(ts, z)?;
    let mut scratch = Scratch::new(ts.len(), ts.dim());
    let d2 = cfg.delta * cfg.delta;
    if cfg.sigma == 0.0 || noise.rows() == 0 {
        weighted_softmax_mean(ts.points(), members(ts.len(), None), cfg.delta, z, &mut scratch.logits, &mut scratch.c);
        return Ok(z.iter().zip(&scratch.c).map(|(zi, ci)| (zi - ci) / d2).collect());
    }
    let mut cbar = vec![0.0; z.len()];
    let mut y = vec![0.0; z.len()];
    for eps in noise.row_iter() {
        for sign in [1.0, -1.0] {
            for ((yi, zi), ei) in y.iter_mut().zip(z).zip(eps) {
                *yi = zi + sign * cfg.sigma * ei;
            }
            weighted_softmax_mean(ts.points(), members(ts.len(), None), cfg.delta, &y, &mut scratch.logits, &mut scratch.c);
            for (b, ci) in cbar.iter_mut().zip(&scratch.c) {
                *b += ci;
            }
        }
    }
    let m = (2 * noise.rows()) as f64;
    Ok(z.iter().zip(&cbar).map(|(zi, b)| (zi - b / m) / d2).collect())
}

/// Row-stacked negative smoothed scores of a batch of queries.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub values: Matrix,
}

impl ScoreBatch {
    /// Mean Euclidean norm of the rows.
    pub fn mean_norm(&self) -> f64 {
        let v = &self.values;
        if v.rows() == 0 {
            return 0.0;
        }
        v.row_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / v.rows() as f64
    }
}

/// Evaluates [`smoothed_score`] on every row of `z`; row `i` draws from
/// substream `key.stream(i)`.
pub fn score_batch(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    z: &Matrix,
    key: StreamKey,
) -> Result<ScoreBatch> {
    let indices: Vec<u64> = (0..z.rows() as u64).collect();
    score_batch_with_indices(ts, cfg, z, key, &indices)
}

/// Like [`score_batch`] but row `i` draws from `key.stream(indices[i])`.
pub fn score_batch_with_indices(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    z: &Matrix,
    key: StreamKey,
    indices: &[u64],
) -> Result<ScoreBatch> {
    cfg.validate()?;
    if z.cols() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "score batch columns",
            expected: ts.dim(),
            found: z.cols(),
        });
    }
    if indices.len() != z.rows() {
        return Err(Error::DimensionMismatch {
            context: "substream indices",
            expected: z.rows(),
            found: indices.len(),
        });
    }
    let d = ts.dim();
    let mut values = Matrix::zeros(z.rows(), d);
    if d > 0 {
        values
            .as_mut_slice()
            .par_chunks_mut(d)
            .zip(indices.par_iter())
            .enumerate()
            .for_each_init(
                || Scratch::new(ts.len(), d),
                |scratch, (i, (out, &stream))| {
                    let mut rng = key.stream(stream);
                    smoothed_score_into(ts, cfg, None, z.row(i), &mut rng, scratch, out);
                },
            );
    }
    Ok(ScoreBatch { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_set(seed: u64, n: usize, d: usize) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainingSet::new(Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn single_gaussian_at_mode() {
        for d in [1, 2, 5] {
            let ts = TrainingSet::new(Matrix::zeros(1, d)).unwrap();
            let v = gmm_log_density(&ts, 1.0, &vec![0.0; d]).unwrap();
            let expected = -(d as f64 / 2.0) * (2.0 * PI).ln();
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_pair_matches_single_component_at_unit_distance() {
        let ts = TrainingSet::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let single = TrainingSet::from_rows(&[[1.0, 0.0]]).unwrap();
        let a = gmm_log_density(&ts, 1.0, &[0.0, 0.0]).unwrap();
        let b = gmm_log_density(&single, 1.0, &[0.0, 0.0]).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert_eq!(gmm_score(&ts, 1.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_component_score() {
        let ts = TrainingSet::new(Matrix::zeros(1, 2)).unwrap();
        assert_eq!(gmm_score(&ts, 1.0, &[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn log_density_matches_direct_sum() {
        let ts = random_set(11, 10, 2);
        let delta = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let z: Vec<f64> = (0..2).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut sum = 0.0;
            for x in ts.points().row_iter() {
                let r2 = squared_distance(&z, x);
                sum += (-r2 / (2.0 * delta * delta)).exp() / (2.0 * PI * delta * delta);
            }
            let direct = (sum / 10.0).ln();
            let v = gmm_log_density(&ts, delta, &z).unwrap();
            assert!((v - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn far_query_stays_finite() {
        let ts = random_set(13, 5, 3);
        let z = [1e3, -1e3, 5e2];
        assert!(gmm_log_density(&ts, 0.01, &z).unwrap().is_finite());
        assert!(gmm_score(&ts, 0.01, &z).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigma_zero_is_exact_and_consumes_no_randomness() {
        let ts = random_set(14, 20, 3);
        let cfg = SmoothingConfig::new(0.5, 0.0, 8).unwrap();
        let z = [0.3, -0.2, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = smoothed_score(&ts, &cfg, &z, &mut rng).unwrap();
        let s = gmm_score(&ts, 0.5, &z).unwrap();
        for (gi, si) in g.iter().zip(&s) {
            assert_eq!(*gi, -si);
        }
        let v = smoothed_potential(&ts, &cfg, &z, &mut rng).unwrap();
        assert_eq!(v, -gmm_log_density(&ts, 0.5, &z).unwrap());
        let untouched: u64 = rng.random();
        let fresh: u64 = ChaCha8Rng::seed_from_u64(1).random();
        assert_eq!(untouched, fresh);
    }

    #[test]
    fn antithetic_pairs_are_exact_for_a_single_component() {
        let ts = TrainingSet::new(Matrix::zeros(1, 3)).unwrap();
        for (sigma, m, seed) in [(0.3, 2, 1), (1.7, 10, 2), (5.0, 64, 3)] {
            let cfg = SmoothingConfig::new(0.4, sigma, m).unwrap();
            let z = [0.5, -1.25, 2.0];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = smoothed_score(&ts, &cfg, &z, &mut rng).unwrap();
            for (gi, zi) in g.iter().zip(&z) {
                assert_eq!(*gi, zi / (0.4 * 0.4));
            }
        }
    }

    #[test]
    fn single_component_potential_with_fixed_noise() {
        let ts = TrainingSet::new(Matrix::zeros(1, 2)).unwrap();
        let cfg = SmoothingConfig::new(0.5, 0.3, 4).unwrap();
        let z = [0.2, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = smoothed_potential(&ts, &cfg, &z, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut acc = 0.0;
        for _ in 0..2 {
            let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            for s in [1.0, -1.0] {
                let y: Vec<f64> = z.iter().zip(&e).map(|(zi, ei)| zi + s * 0.3 * ei).collect();
                let r2 = y.iter().map(|v| v * v).sum::<f64>();
                acc += -r2 / (2.0 * 0.25) - (2.0 * PI * 0.25).ln();
            }
        }
        assert!((v + acc / 4.0).abs() < 1e-13);
    }

    #[test]
    fn posterior_mean_in_convex_hull_bound() {
        let ts = random_set(15, 30, 4);
        let r = ts.max_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let c = posterior_mean(&ts, 0.3, &z).unwrap();
            let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(nc <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn score_batch_rows_match_single_queries() {
        let ts = random_set(17, 25, 2);
        let cfg = SmoothingConfig::new(0.3, 0.2, 6).unwrap();
        let z = Matrix::from_fn(7, 2, |i, j| (i as f64 - 3.0) * 0.5 + j as f64);
        let key = StreamKey::new(5, Purpose::Smoothing).at_iteration(2);
        let batch = score_batch(&ts, &cfg, &z, key).unwrap();
        for i in 0..7 {
            let g = smoothed_score(&ts, &cfg, z.row(i), &mut key.stream(i as u64)).unwrap();
            assert_eq!(batch.values.row(i), &g[..]);
        }
        assert_eq!(batch, score_batch(&ts, &cfg, &z, key).unwrap());
    }

    #[test]
    fn leave_one_out_matches_reduced_mixture() {
        let ts = random_set(18, 6, 2);
        let cfg = SmoothingConfig::new(0.4, 0.25, 4).unwrap();
        let rows: Vec<Vec<f64>> = (0..6).filter(|&i| i != 2).map(|i| ts.points().row(i).to_vec()).collect();
        let reduced = TrainingSet::from_rows(&rows).unwrap();
        let z = [0.1, 0.2];
        let a = smoothed_score_excluding(&ts, &cfg, 2, &z, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = smoothed_score(&reduced, &cfg, &z, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let single = TrainingSet::new(Matrix::zeros(1, 2)).unwrap();
        assert!(smoothed_score_excluding(&single, &cfg, 0, &z, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SmoothingConfig::new(0.0, 0.1, 2).is_err());
        assert!(SmoothingConfig::new(0.1, -0.1, 2).is_err());
        assert!(SmoothingConfig::new(0.1, 0.1, 3).is_err());
        assert!(SmoothingConfig::new(0.1, 0.1, 0).is_err());
        assert!(SmoothingConfig::new(0.1, 0.0, 2).is_ok());
    }
}
