//! Local nearest-neighbour estimator of the negative smoothed score.
//!
//! For a query `z` the estimator keeps the `K` exact nearest training points
//! `A_K(z)`, adds `L` points `B_L(z)` drawn uniformly without replacement from
//! the rest, and reweights the latter by `(N − K)/L` so that the local sums
//! `T̂₀ = Σ ωᵢ eᵢ` and `T̂₁ = Σ ωᵢ eᵢ xᵢ` are unbiased for the full sums.
//!
//! When the local subset is smaller than the ambient dimension (`K + L < d`)
//! the smoothing noise only enters the local softmax through the inner
//! products `ηₐ = ⟨ε, νₐ⟩`, which are sampled directly as `η ~ N(0, G)` with
//! `G` the Gram matrix of the selected points. Within an antithetic pair
//! `y± = z ± σε` the perturbation cancels from `y⁺ + y⁻ = 2z`, so the ambient
//! directions orthogonal to the selected points never need to be drawn.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{softmax_mean_from_logits, weighted_softmax_mean, ScoreBatch, SmoothingConfig, TrainingSet};
use crate::numerics::{cholesky, dot, squared_distance, Matrix};
use crate::rng::{fill_standard_normal, StreamKey};

/// Exact Euclidean K-nearest-neighbour queries by linear scan.
///
/// Ties are broken by ascending training index.
#[derive(Clone, Debug)]
pub struct NeighborIndex<'a> {
    ts: &'a TrainingSet,
}

impl<'a> NeighborIndex<'a> {
    pub fn build(ts: &'a TrainingSet) -> Self {
        Self { ts }
    }

    pub fn training_set(&self) -> &'a TrainingSet {
        self.ts
    }

    /// The `k` nearest training indices ordered by nondecreasing distance.
    pub fn knn(&self, z: &[f64], k: usize) -> Vec<usize> {
        let points = self.ts.points();
        let mut dist: Vec<(f64, usize)> = points
            .row_iter()
            .enumerate()
            .map(|(i, x)| (squared_distance(z, x), i))
            .collect();
        let k = k.min(dist.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() && k > 0 {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        dist.truncate(k);
        dist.sort_unstable_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }
}

/// How the smoothing noise is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    /// Projected when `K + L < d`, ambient otherwise.
    #[default]
    Auto,
    Ambient,
    Projected,
}

/// The selected local subset `U(z) = A_K(z) ∪ B_L(z)` with its weights.
#[derive(Clone, Debug)]
pub struct LocalSubset {
    /// Exact nearest neighbours, nondecreasing distance.
    pub nearest: Vec<usize>,
    /// Uniform draws from the complement, ascending index.
    pub random: Vec<usize>,
    /// Weight applied to every member of `random`: `(N − K)/L`.
    pub random_weight: f64,
    /// Gram matrix `⟨νₐ, ν_b⟩` of the members in [`LocalSubset::members`]
    /// order, present when `K + L < d`.
    pub gram: Option<Matrix>,
}

impl LocalSubset {
    /// Members `(index, weight)` sorted by ascending training index.
    pub fn members(&self) -> Vec<(usize, f64)> {
        let mut m: Vec<(usize, f64)> = self
            .nearest
            .iter()
            .map(|&i| (i, 1.0))
            .chain(self.random.iter().map(|&i| (i, self.random_weight)))
            .collect();
        m.sort_unstable_by_key(|&(i, _)| i);
        m
    }

    pub fn len(&self) -> usize {
        self.nearest.len() + self.random.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corrected local sums `(T̂₀, T̂₁)` at `y`, each term scaled by
    /// `exp(−shift)` so that callers can compare against full sums on a
    /// common scale.
    pub fn corrected_sums(&self, ts: &TrainingSet, delta: f64, y: &[f64], shift: f64) -> (f64, Vec<f64>) {
        let inv = 1.0 / (2.0 * delta * delta);
        let mut t0 = 0.0;
        let mut t1 = vec![0.0; ts.dim()];
        for (i, omega) in self.members() {
            let x = ts.points().row(i);
            let w = omega * (-squared_distance(y, x) * inv - shift).exp();
            t0 += w;
            for (t, xj) in t1.iter_mut().zip(x) {
                *t += w * xj;
            }
        }
        (t0, t1)
    }
}

/// Chooses `A_K(z)` exactly and `B_L(z)` uniformly without replacement.
///
/// No randomness is consumed when `L = 0` or `L = N − K` (the complement is
/// taken whole).
pub fn select_local_subset<R: Rng + ?Sized>(
    idx: &NeighborIndex<'_>,
    z: &[f64],
    k: usize,
    l: usize,
    rng: &mut R,
) -> Result<LocalSubset> {
    let ts = idx.training_set();
    let n = ts.len();
    if k == 0 || k + l > n {
        return Err(Error::InvalidBudget { k, l, n });
    }
    if z.len() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "query point",
            expected: ts.dim(),
            found: z.len(),
        });
    }
    let nearest = idx.knn(z, k);
    let mut in_nearest = vec![false; n];
    for &i in &nearest {
        in_nearest[i] = true;
    }
    let complement: Vec<usize> = (0..n).filter(|&i| !in_nearest[i]).collect();
    let mut random: Vec<usize> = if l == complement.len() {
        complement
    } else if l == 0 {
        Vec::new()
    } else {
        index::sample(rng, complement.len(), l)
            .into_iter()
            .map(|j| complement[j])
            .collect()
    };
    random.sort_unstable();
    let random_weight = if l == 0 { 0.0 } else { (n - k) as f64 / l as f64 };
    let m = k + l;
    let mut subset = LocalSubset {
        nearest,
        random,
        random_weight,
        gram: None,
    };
    if m < ts.dim() {
        let members = subset.members();
        let pts = ts.points();
        subset.gram = Some(Matrix::from_fn(m, m, |a, b| {
            dot(pts.row(members[a].0), pts.row(members[b].0))
        }));
    }
    Ok(subset)
}

/// Lower-triangular factor of `G + 1e−10·tr(G)/m·I`.
fn jittered_gram_factor(gram: &Matrix) -> Result<Matrix> {
    let m = gram.rows();
    let jitter = 1e-10 * gram.trace() / m as f64;
    let jitter = if jitter > 0.0 { jitter } else { 1e-300 };
    let g = gram.add(&Matrix::identity(m).scaled(jitter));
    Ok(cholesky(&g)?.chol)
}

/// Samples `η ~ N(0, G)` given the lower factor of `G`.
pub fn sample_projected_noise<R: Rng + ?Sized>(gram_factor: &Matrix, rng: &mut R, out: &mut [f64]) {
    let m = gram_factor.rows();
    let mut xi = vec![0.0; m];
    fill_standard_normal(rng, &mut xi);
    for (a, o) in out.iter_mut().enumerate() {
        *o = (0..=a).map(|b| gram_factor[(a, b)] * xi[b]).sum();
    }
}

/// Options for [`nn_smoothed_score`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborBudget {
    pub k: usize,
    pub l: usize,
    pub regime: NoiseRegime,
}

impl NeighborBudget {
    pub fn new(k: usize, l: usize) -> Self {
        Self {
            k,
            l,
            regime: NoiseRegime::Auto,
        }
    }
}

/// Nearest-neighbour estimate of `g(z)`.
///
/// The subset is drawn first from `rng`, then the `M/2` noise directions.
/// With `L = N − K` and ambient noise this reproduces
/// [`crate::gmm::smoothed_score`] bit for bit under a shared stream.
pub fn nn_smoothed_score<R: Rng + ?Sized>(
    idx: &NeighborIndex<'_>,
    cfg: &SmoothingConfig,
    budget: NeighborBudget,
    z: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let ts = idx.training_set();
    let subset = select_local_subset(idx, z, budget.k, budget.l, rng)?;
    local_score(ts, cfg, &subset, budget.regime, z, rng)
}

/// Antithetic estimate of `g(z)` from an already selected subset.
pub fn local_score<R: Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    subset: &LocalSubset,
    regime: NoiseRegime,
    z: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = ts.dim();
    let d2 = cfg.delta * cfg.delta;
    let points = ts.points();
    let members = subset.members();
    let m = members.len();
    let mut logits = Vec::with_capacity(m);
    let mut c = vec![0.0; d];

    let check = |t0: f64| -> Result<()> {
        if t0 > 0.0 && t0.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateDenominator)
        }
    };

    if cfg.sigma == 0.0 {
        let lse = weighted_softmax_mean(points, members.iter().copied(), cfg.delta, z, &mut logits, &mut c);
        if !lse.is_finite() {
            return Err(Error::DegenerateDenominator);
        }
        return Ok(z.iter().zip(&c).map(|(zi, ci)| (zi - ci) / d2).collect());
    }

    let projected = match regime {
        NoiseRegime::Auto => m < d,
        NoiseRegime::Ambient => false,
        NoiseRegime::Projected => true,
    };
    let mut cbar = vec![0.0; d];

    if projected {
        let gram = match &subset.gram {
            Some(g) => g.clone(),
            None => Matrix::from_fn(m, m, |a, b| dot(points.row(members[a].0), points.row(members[b].0))),
        };
        let factor = jittered_gram_factor(&gram)?;
        let inv = 1.0 / (2.0 * d2);
        let base: Vec<f64> = members
            .iter()
            .map(|&(i, _)| -squared_distance(z, points.row(i)) * inv)
            .collect();
        let mut eta = vec![0.0; m];
        let scale = cfg.sigma / d2;
        for _ in 0..cfg.pairs() {
            sample_projected_noise(&factor, rng, &mut eta);
            for sign in [1.0, -1.0] {
                logits.clear();
                logits.extend(base.iter().zip(&eta).map(|(b, e)| b + sign * scale * e));
                let (_, t0) = softmax_mean_from_logits(points, members.iter().copied(), &logits, &mut c);
                check(t0)?;
                for (b, ci) in cbar.iter_mut().zip(&c) {
                    *b += ci;
                }
            }
        }
    } else {
        let mut eps = vec![0.0; d];
        let mut y = vec![0.0; d];
        for _ in 0..cfg.pairs() {
            fill_standard_normal(rng, &mut eps);
            for sign in [1.0, -1.0] {
                for ((yi, zi), ei) in y.iter_mut().zip(z).zip(&eps) {
                    *yi = zi + sign * cfg.sigma * ei;
                }
                let lse = weighted_softmax_mean(points, members.iter().copied(), cfg.delta, &y, &mut logits, &mut c);
                if !lse.is_finite() {
                    return Err(Error::DegenerateDenominator);
                }
                for (b, ci) in cbar.iter_mut().zip(&c) {
                    *b += ci;
                }
            }
        }
    }
    let mc = cfg.mc_samples as f64;
    Ok(z.iter().zip(&cbar).map(|(zi, b)| (zi - b / mc) / d2).collect())
}

/// Evaluates [`nn_smoothed_score`] on every row of `z`; row `i` draws its
/// subset and noise from `key.stream(i)`.
pub fn nn_score_batch(
    idx: &NeighborIndex<'_>,
    cfg: &SmoothingConfig,
    budget: NeighborBudget,
    z: &Matrix,
    key: StreamKey,
) -> Result<ScoreBatch> {
    let ts = idx.training_set();
    if z.cols() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "score batch columns",
            expected: ts.dim(),
            found: z.cols(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..z.rows())
        .into_par_iter()
        .map(|i| nn_smoothed_score(idx, cfg, budget, z.row(i), &mut key.stream(i as u64)))
        .collect::<Result<_>>()?;
    let values = Matrix::from_vec(z.rows(), ts.dim(), rows.concat())?;
    Ok(ScoreBatch { values })
}
