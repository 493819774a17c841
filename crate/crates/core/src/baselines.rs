//! Comparison samplers: the σ-smoothed closed-form flow (σ-CFDM) and
//! unconstrained kinetic Langevin dynamics with the BAOAB splitting.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{smoothed_score, softmax_mean_from_logits, SmoothingConfig, TrainingSet};
use crate::numerics::{squared_distance, Matrix};
use crate::rng::{fill_standard_normal, Purpose, StreamKey};
use crate::sampler::sample_mixture;
use crate::tilting::TiltingParams;

/// Mean scale `a(t)` and standard deviation `b(t)` of the time-indexed
/// mixture `p_t = (1/N) Σ N(a(t)xᵢ, b(t)²I)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `a = t`, `b = 1 − t`; noise at `t = 0`, data at `t = 1`.
    #[default]
    Straight,
    /// Forward Ornstein–Uhlenbeck process: `a = e^{−αt}`, `b² = (1 − e^{−2αt})/α`;
    /// data at `t = 0`.
    Ou { alpha: f64 },
}

impl Schedule {
    pub fn a(&self, t: f64) -> f64 {
        match *self {
            Self::Straight => t,
            Self::Ou { alpha } => (-alpha * t).exp(),
        }
    }

    pub fn b(&self, t: f64) -> f64 {
        match *self {
            Self::Straight => 1.0 - t,
            Self::Ou { alpha } => ((1.0 - (-2.0 * alpha * t).exp()) / alpha).sqrt(),
        }
    }

    fn a_dot(&self, t: f64) -> f64 {
        match *self {
            Self::Straight => 1.0,
            Self::Ou { alpha } => -alpha * (-alpha * t).exp(),
        }
    }

    fn b_dot(&self, t: f64) -> f64 {
        match *self {
            Self::Straight => -1.0,
            Self::Ou { alpha } => (-2.0 * alpha * t).exp() / self.b(t),
        }
    }

    /// Probability-flow velocity `ȧ E[x|z] + ḃ E[ε|z]` given the score `s`.
    /// For the straight schedule this is `(z + (1 − t)s)/t`.
    pub fn velocity(&self, t: f64, z: &[f64], s: &[f64], out: &mut [f64]) {
        let (a, b) = (self.a(t), self.b(t));
        let (ad, bd) = (self.a_dot(t), self.b_dot(t));
        for ((o, zi), si) in out.iter_mut().zip(z).zip(s) {
            let x = (zi + b * b * si) / a;
            let eps = (zi - a * x) / b;
            *o = ad * x + bd * eps;
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Ou { alpha } = *self {
            if !(alpha > 0.0) {
                return Err(Error::InvalidConfig("OU schedule needs alpha > 0".into()));
            }
        }
        Ok(())
    }
}

/// Softmax mean `c_t(z) = Σ wᵢᵗ(z) a(t)xᵢ`; returns `log Σ exp(logitᵢ)`.
fn time_indexed_mean(ts: &TrainingSet, schedule: &Schedule, t: f64, z: &[f64], logits: &mut Vec<f64>, c: &mut [f64]) -> f64 {
    let (a, b) = (schedule.a(t), schedule.b(t));
    let inv = 1.0 / (2.0 * b * b);
    logits.clear();
    let mut scaled = vec![0.0; z.len()];
    for x in ts.points().row_iter() {
        for (s, xi) in scaled.iter_mut().zip(x) {
            *s = a * xi;
        }
        logits.push(-squared_distance(z, &scaled) * inv);
    }
    let members = (0..ts.len()).map(|i| (i, 1.0));
    let (max, t0) = softmax_mean_from_logits(ts.points(), members, logits, c);
    c.iter_mut().for_each(|v| *v *= a);
    max + t0.ln()
}

/// `log Σⱼ exp(−‖z − a(t)xⱼ‖²/(2b(t)²))`; its gradient is the time-indexed
/// score.
pub fn time_indexed_log_partition(ts: &TrainingSet, schedule: &Schedule, t: f64, z: &[f64]) -> f64 {
    let mut logits = Vec::with_capacity(ts.len());
    let mut c = vec![0.0; ts.dim()];
    time_indexed_mean(ts, schedule, t, z, &mut logits, &mut c)
}

/// `∇log p_t(z) = (c_t(z) − z)/b(t)²`.
pub fn time_indexed_score(ts: &TrainingSet, schedule: &Schedule, t: f64, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != ts.dim() {
        return Err(Error::DimensionMismatch {
            context: "query point",
            expected: ts.dim(),
            found: z.len(),
        });
    }
    let b = schedule.b(t);
    if !(b > 0.0) {
        return Err(Error::InvalidConfig(format!("schedule std must be positive, b({t}) = {b}")));
    }
    let mut logits = Vec::with_capacity(ts.len());
    let mut c = vec![0.0; ts.dim()];
    time_indexed_mean(ts, schedule, t, z, &mut logits, &mut c);
    Ok(c.iter().zip(z).map(|(ci, zi)| (ci - zi) / (b * b)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfdmConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    pub sigma: f64,
    pub mc_samples: usize,
    #[serde(default)]
    pub schedule: Schedule,
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    100
}
fn default_t_start() -> f64 {
    0.01
}
fn default_t_end() -> f64 {
    0.99
}

impl CfdmConfig {
    pub fn new(sigma: f64, mc_samples: usize, particles: usize, seed: u64) -> Self {
        Self {
            steps: default_steps(),
            t_start: default_t_start(),
            t_end: default_t_end(),
            sigma,
            mc_samples,
            schedule: Schedule::Straight,
            particles,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0 < self.t_start && self.t_start < self.t_end && self.t_end < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_start < t_end < 1, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || self.mc_samples < 2 || self.mc_samples % 2 != 0 {
            return Err(Error::InvalidConfig(
                "sigma must be nonnegative and mc_samples even and at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Times at which the velocity is evaluated, in integration order.
    /// `Δt = (t_end − t_start)/steps`; the OU schedule runs backwards.
    pub fn times(&self) -> Vec<f64> {
        let dt = (self.t_end - self.t_start) / self.steps as f64;
        (0..self.steps)
            .map(|k| match self.schedule {
                Schedule::Straight => self.t_start + k as f64 * dt,
                Schedule::Ou { .. } => self.t_end - k as f64 * dt,
            })
            .collect()
    }
}

/// Smoothed time-indexed score at one particle, also returning the mean
/// `c̄` of the posterior means over the antithetic perturbations.
fn smoothed_time_score<R: rand::Rng + ?Sized>(
    ts: &TrainingSet,
    cfg: &CfdmConfig,
    t: f64,
    z: &[f64],
    rng: &mut R,
    score: &mut [f64],
    cbar: &mut [f64],
) {
    let d = z.len();
    let b2 = cfg.schedule.b(t).powi(2);
    let mut logits = Vec::with_capacity(ts.len());
    let mut c = vec![0.0; d];
    cbar.iter_mut().for_each(|v| *v = 0.0);
    if cfg.sigma == 0.0 {
        time_indexed_mean(ts, &cfg.schedule, t, z, &mut logits, cbar);
    } else {
        let mut eps = vec![0.0; d];
        let mut y = vec![0.0; d];
        for _ in 0..cfg.mc_samples / 2 {
            fill_standard_normal(rng, &mut eps);
            for sign in [1.0, -1.0] {
                for ((yi, zi), ei) in y.iter_mut().zip(z).zip(&eps) {
                    *yi = zi + sign * cfg.sigma * ei;
                }
                time_indexed_mean(ts, &cfg.schedule, t, &y, &mut logits, &mut c);
                for (b, ci) in cbar.iter_mut().zip(&c) {
                    *b += ci;
                }
            }
        }
        cbar.iter_mut().for_each(|v| *v /= cfg.mc_samples as f64);
    }
    for ((s, ci), zi) in score.iter_mut().zip(cbar.iter()).zip(z) {
        *s = (ci - zi) / b2;
    }
}

/// σ-CFDM sampling by explicit Euler steps of the probability-flow ODE.
///
/// `observe(step, t, a(t), centroids)` sees, before each update, the
/// averaged posterior means `c̄` of every particle.
pub fn sigma_cfdm_run_with(
    ts: &TrainingSet,
    cfg: &CfdmConfig,
    mut observe: impl FnMut(usize, f64, f64, &Matrix),
) -> Result<Matrix> {
    cfg.validate()?;
    let (p, d) = (cfg.particles, ts.dim());
    let mut z = Matrix::zeros(p, d);
    let init = StreamKey::new(cfg.seed, Purpose::Init);
    z.as_mut_slice()
        .par_chunks_mut(d.max(1))
        .enumerate()
        .for_each(|(i, row)| fill_standard_normal(&mut init.stream(i as u64), row));
    let dt = (cfg.t_end - cfg.t_start) / cfg.steps as f64;
    let direction = match cfg.schedule {
        Schedule::Straight => 1.0,
        Schedule::Ou { .. } => -1.0,
    };
    let mut centroids = Matrix::zeros(p, d);
    for (k, t) in cfg.times().into_iter().enumerate() {
        let key = StreamKey::new(cfg.seed, Purpose::Smoothing).at_iteration(k as u64);
        z.as_mut_slice()
            .par_chunks_mut(d.max(1))
            .zip(centroids.as_mut_slice().par_chunks_mut(d.max(1)))
            .enumerate()
            .for_each(|(i, (row, cb))| {
                let mut rng = key.stream(i as u64);
                let mut s = vec![0.0; d];
                smoothed_time_score(ts, cfg, t, row, &mut rng, &mut s, cb);
                let mut v = vec![0.0; d];
                cfg.schedule.velocity(t, row, &s, &mut v);
                for (zi, vi) in row.iter_mut().zip(&v) {
                    *zi += direction * dt * vi;
                }
            });
        observe(k, t, cfg.schedule.a(t), &centroids);
        if !z.is_finite() {
            return Err(Error::NonFiniteState {
                iteration: k + 1,
                step_size: dt,
                delta: cfg.schedule.b(t),
            });
        }
    }
    Ok(z)
}

pub fn sigma_cfdm_run(ts: &TrainingSet, cfg: &CfdmConfig) -> Result<Matrix> {
    sigma_cfdm_run_with(ts, cfg, |_, _, _, _| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaoabConfig {
    pub step_size: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    pub iterations: usize,
    pub particles: usize,
    /// Steps discarded before accumulating [`BaoabStats`].
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_friction() -> f64 {
    1.0
}

impl BaoabConfig {
    pub fn new(step_size: f64, iterations: usize, particles: usize, seed: u64) -> Self {
        Self {
            step_size,
            friction: default_friction(),
            iterations,
            particles,
            burn_in: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.friction > 0.0) || !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(
                "BAOAB needs positive friction and a positive finite step size".into(),
            ));
        }
        Ok(())
    }
}

/// Time averages over all particles and post-burn-in steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BaoabStats {
    pub samples: usize,
    pub position_mean: Vec<f64>,
    /// Centered at `position_mean`.
    pub position_cov: Matrix,
    /// `E[ppᵀ]`; the identity at the exact stationary law.
    pub momentum_second_moment: Matrix,
}

#[derive(Clone, Debug)]
pub struct BaoabOutput {
    pub positions: Matrix,
    pub momenta: Matrix,
    pub stats: Option<BaoabStats>,
}

/// BAOAB with unit mass and temperature for an arbitrary force.
///
/// `force(step, particle, q, out)` writes the force at `q`; `step` counts
/// force evaluations (`0` is the initial one). Initial momenta are
/// standard normal.
pub fn baoab_with_force(
    init: &Matrix,
    cfg: &BaoabConfig,
    force: impl Fn(usize, usize, &[f64], &mut [f64]) -> Result<()> + Sync,
) -> Result<BaoabOutput> {
    cfg.validate()?;
    let (p, d) = init.shape();
    let h = cfg.step_size;
    let c1 = (-cfg.friction * h).exp();
    let c2 = (1.0 - c1 * c1).sqrt();
    let mom_key = StreamKey::new(cfg.seed, Purpose::Momentum);
    let noise_key = StreamKey::new(cfg.seed, Purpose::LangevinNoise);
    let accumulate = cfg.iterations > cfg.burn_in;

    struct Particle {
        q: Vec<f64>,
        p: Vec<f64>,
        sum_q: Vec<f64>,
        sum_qq: Vec<f64>,
        sum_pp: Vec<f64>,
    }

    let particles: Vec<Particle> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut q = init.row(i).to_vec();
            let mut mom = vec![0.0; d];
            fill_standard_normal(&mut mom_key.stream(i as u64), &mut mom);
            let mut f = vec![0.0; d];
            force(0, i, &q, &mut f)?;
            let mut sum_q = vec![0.0; d];
            let mut sum_qq = vec![0.0; d * d];
            let mut sum_pp = vec![0.0; d * d];
            for k in 0..cfg.iterations {
                for j in 0..d {
                    mom[j] += 0.5 * h * f[j];
                    q[j] += 0.5 * h * mom[j];
                }
                let mut rng = noise_key.at_iteration(k as u64).stream(i as u64);
                for m in mom.iter_mut() {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *m = c1 * *m + c2 * xi;
                }
                for j in 0..d {
                    q[j] += 0.5 * h * mom[j];
                }
                force(k + 1, i, &q, &mut f)?;
                for j in 0..d {
                    mom[j] += 0.5 * h * f[j];
                }
                if !q.iter().chain(&mom).all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteState {
                        iteration: k + 1,
                        step_size: h,
                        delta: f64::NAN,
                    });
                }
                if accumulate && k >= cfg.burn_in {
                    for a in 0..d {
                        sum_q[a] += q[a];
                        for b in 0..d {
                            sum_qq[a * d + b] += q[a] * q[b];
                            sum_pp[a * d + b] += mom[a] * mom[b];
                        }
                    }
                }
            }
            Ok(Particle {
                q,
                p: mom,
                sum_q,
                sum_qq,
                sum_pp,
            })
        })
        .collect::<Result<_>>()?;

    let mut positions = Matrix::zeros(p, d);
    let mut momenta = Matrix::zeros(p, d);
    for (i, part) in particles.iter().enumerate() {
        positions.row_mut(i).copy_from_slice(&part.q);
        momenta.row_mut(i).copy_from_slice(&part.p);
    }
    let stats = accumulate.then(|| {
        let n = (p * (cfg.iterations - cfg.burn_in)) as f64;
        let mut mean = vec![0.0; d];
        let mut qq = vec![0.0; d * d];
        let mut pp = vec![0.0; d * d];
        for part in &particles {
            for a in 0..d {
                mean[a] += part.sum_q[a] / n;
            }
            for (acc, v) in qq.iter_mut().zip(&part.sum_qq) {
                *acc += v / n;
            }
            for (acc, v) in pp.iter_mut().zip(&part.sum_pp) {
                *acc += v / n;
            }
        }
        BaoabStats {
            samples: n as usize,
            position_cov: Matrix::from_fn(d, d, |a, b| qq[a * d + b] - mean[a] * mean[b]),
            momentum_second_moment: Matrix::from_fn(d, d, |a, b| pp[a * d + b]),
            position_mean: mean,
        }
    });
    Ok(BaoabOutput {
        positions,
        momenta,
        stats,
    })
}

/// Kinetic Langevin targeting `exp(−V − λᵀz − ½(z−μ*)ᵀΛ(z−μ*))`, with
/// positions initialized from `p̂^δ` and a fresh smoothed-score estimate at
/// every force evaluation.
pub fn kinetic_langevin_baoab(
    ts: &TrainingSet,
    cfg: &SmoothingConfig,
    params: &TiltingParams,
    bcfg: &BaoabConfig,
) -> Result<BaoabOutput> {
    cfg.validate()?;
    let d = ts.dim();
    if params.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "tilting parameters",
            expected: d,
            found: params.dim(),
        });
    }
    if !params.lambda.iter().all(|v| v.is_finite()) || !params.capital_lambda.is_finite() {
        return Err(Error::InvalidConfig("tilting parameters must be finite".into()));
    }
    let init = sample_mixture(ts, cfg.delta, bcfg.particles, StreamKey::new(bcfg.seed, Purpose::Init));
    let key = StreamKey::new(bcfg.seed, Purpose::Smoothing);
    let mu = ts.mean();
    let out = baoab_with_force(&init, bcfg, |k, i, q, f| {
        let g = smoothed_score(ts, cfg, q, &mut key.at_iteration(k as u64).stream(i as u64))?;
        let t = params.tilt_gradient(mu, q);
        for ((fj, gj), tj) in f.iter_mut().zip(&g).zip(&t) {
            *fj = -(gj + tj);
        }
        Ok(())
    });
    match out {
        Err(Error::NonFiniteState { iteration, step_size, .. }) => Err(Error::NonFiniteState {
            iteration,
            step_size,
            delta: cfg.delta,
        }),
        other => other,
    }
}
