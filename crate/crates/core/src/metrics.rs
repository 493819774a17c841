//! Sample-quality metrics: sliced Wasserstein-2, polynomial-kernel KID,
//! k-NN Recall and the duplicate rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, squared_distance, Matrix};
use crate::rng::{fill_standard_normal, Purpose, StreamKey};

/// A single metric value with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub config: serde_json::Value,
    pub sample_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn check_same_dim(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "metric inputs",
            expected: a.cols(),
            found: b.cols(),
        });
    }
    Ok(())
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg.into()))
    }
}

/// Unit directions drawn as normalized Gaussians from `(seed, Projection)`.
pub fn random_directions(count: usize, d: usize, seed: u64) -> Matrix {
    let mut dirs = Matrix::zeros(count, d);
    let mut rng = StreamKey::new(seed, Purpose::Projection).stream(0);
    for i in 0..count {
        let row = dirs.row_mut(i);
        loop {
            fill_standard_normal(&mut rng, row);
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    dirs
}

/// Squared 1D W2 between two empirical measures given sorted atoms:
/// the integral of the squared difference of quantile functions, which are
/// piecewise constant between the breakpoints `i/n` and `j/m`.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    // Breakpoints scaled by n·m are the integers (i+1)·m and (j+1)·n.
    let (mut i, mut j, mut u) = (0, 0, 0usize);
    let mut acc = 0.0;
    while i < n && j < m {
        let (ea, eb) = ((i + 1) * m, (j + 1) * n);
        let next = ea.min(eb);
        let diff = a[i] - b[j];
        acc += (next - u) as f64 * diff * diff;
        u = next;
        if ea == next {
            i += 1;
        }
        if eb == next {
            j += 1;
        }
    }
    acc / (n * m) as f64
}

/// `SW2(A, B) = sqrt(mean over θ of W2²(θᵀA, θᵀB))`.
pub fn sliced_w2(a: &Matrix, b: &Matrix, projections: usize, seed: u64) -> Result<f64> {
    check_same_dim(a, b)?;
    require(a.rows() >= 1 && b.rows() >= 1, "SW2 needs nonempty sample sets")?;
    require(projections >= 1, "SW2 needs at least one projection")?;
    let dirs = random_directions(projections, a.cols(), seed);
    Ok(sliced_w2_with_directions(a, b, &dirs))
}

/// [`sliced_w2`] with caller-provided unit directions (one per row).
pub fn sliced_w2_with_directions(a: &Matrix, b: &Matrix, dirs: &Matrix) -> f64 {
    let total: f64 = (0..dirs.rows())
        .into_par_iter()
        .map(|k| {
            let theta = dirs.row(k);
            let mut pa: Vec<f64> = a.row_iter().map(|x| dot(x, theta)).collect();
            let mut pb: Vec<f64> = b.row_iter().map(|x| dot(x, theta)).collect();
            pa.sort_unstable_by(f64::total_cmp);
            pb.sort_unstable_by(f64::total_cmp);
            w2_squared_sorted(&pa, &pb)
        })
        .sum();
    (total / dirs.rows() as f64).sqrt()
}

/// `k(x, y) = (xᵀy/f + 1)³`.
fn poly_kernel(x: &[f64], y: &[f64], f: f64) -> f64 {
    (dot(x, y) / f + 1.0).powi(3)
}

/// Unbiased MMD² with the cubic polynomial kernel.
pub fn kid_poly(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_dim(a, b)?;
    let (n, m) = (a.rows(), b.rows());
    require(n >= 2 && m >= 2, "KID needs at least two samples per set")?;
    let f = a.cols() as f64;
    let within = |x: &Matrix| -> f64 {
        let r = x.rows();
        let s: f64 = (0..r)
            .into_par_iter()
            .map(|i| (0..r).filter(|&j| j != i).map(|j| poly_kernel(x.row(i), x.row(j), f)).sum::<f64>())
            .sum();
        s / (r * (r - 1)) as f64
    };
    let cross: f64 = (0..n)
        .into_par_iter()
        .map(|i| (0..m).map(|j| poly_kernel(a.row(i), b.row(j), f)).sum::<f64>())
        .sum::<f64>()
        / (n * m) as f64;
    Ok(within(a) + within(b) - 2.0 * cross)
}

/// Distance from each row of `x` to its `k`-th nearest other row.
pub fn kth_neighbor_distances(x: &Matrix, k: usize) -> Vec<f64> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..x.rows())
                .filter(|&j| j != i)
                .map(|j| squared_distance(x.row(i), x.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

/// Distance from each row of `queries` to the nearest row of `reference`.
pub fn nearest_distances(queries: &Matrix, reference: &Matrix) -> Vec<f64> {
    (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            reference
                .row_iter()
                .map(|r| squared_distance(queries.row(i), r))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Fraction of test points whose ball, of radius equal to the distance to
/// their `k`-th nearest other test point, strictly contains a generated point.
pub fn recall_knn(test: &Matrix, generated: &Matrix, k: usize) -> Result<f64> {
    check_same_dim(test, generated)?;
    require(k >= 1 && test.rows() >= k + 1, "Recall needs at least k+1 test points")?;
    let radii = kth_neighbor_distances(test, k);
    let nearest = nearest_distances(test, generated);
    let covered = radii.iter().zip(&nearest).filter(|(r, d)| d < r).count();
    Ok(covered as f64 / test.rows() as f64)
}

/// Percentile with linear interpolation between order statistics
/// (position `p/100·(n−1)` in the sorted sample).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Fraction of generated points closer to the training set than the `p`-th
/// percentile of within-training nearest-neighbour distances.
pub fn dup_rate(train: &Matrix, generated: &Matrix, p: f64) -> Result<f64> {
    check_same_dim(train, generated)?;
    require(train.rows() >= 2, "DupRate needs at least two training points")?;
    require((0.0..=100.0).contains(&p), "percentile must lie in [0, 100]")?;
    require(generated.rows() >= 1, "DupRate needs generated samples")?;
    let tau = dup_threshold(train, p);
    let nearest = nearest_distances(generated, train);
    Ok(nearest.iter().filter(|&&d| d < tau).count() as f64 / generated.rows() as f64)
}

/// The DupRate threshold `τ`.
pub fn dup_threshold(train: &Matrix, p: f64) -> f64 {
    percentile(&kth_neighbor_distances(train, 1), p)
}
