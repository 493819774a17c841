//! The moment-matched, score-smoothed overdamped Langevin sampler.
//!
//! Particles live in whitened coordinates on `M_P`. Each iteration maps them
//! back to data space, estimates the negative smoothed score, pulls it back,
//! projects drift and noise onto the tangent space, takes a Langevin step and
//! retracts. Empirical mean and covariance of the particles therefore equal
//! the training moments after every iteration.
//!
//! Random streams: initial particle `i` uses `(seed, Init, attempt, i)`, the
//! score of particle `i` at iteration `k` uses `(seed, Smoothing, k, i)`, and
//! the Langevin noise row `i` drawn for step `k` uses
//! `(seed, LangevinNoise, k + 1, i)`; the carried noise at start uses
//! iteration `0`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{score_batch, ScoreBatch, SmoothingConfig, TrainingSet};
use crate::manifold::{check_particle_count, residuals, retract, ManifoldPoint, WhiteningMap};
use crate::nn_score::{nn_score_batch, NeighborBudget, NeighborIndex, NoiseRegime};
use crate::numerics::Matrix;
use crate::rng::{fill_standard_normal, Purpose, StreamKey};

/// Langevin discretization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Leimkuhler–Matthews: noise `√(h/2)(Ξ_prev + Ξ_k)`.
    #[default]
    #[serde(rename = "lm")]
    LeimkuhlerMatthews,
    /// Euler–Maruyama: noise `√(2h)·Ξ_k`.
    #[serde(rename = "em")]
    EulerMaruyama,
}

/// Which score estimator drives the particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreMode {
    #[default]
    Full,
    NearestNeighbor {
        k: usize,
        l: usize,
        #[serde(default)]
        regime: NoiseRegime,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub iterations: usize,
    #[serde(default)]
    pub scheme: Scheme,
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score_mode: ScoreMode,
}

impl SamplerConfig {
    pub fn new(step_size: f64, iterations: usize, particles: usize, seed: u64) -> Self {
        Self {
            step_size,
            iterations,
            scheme: Scheme::default(),
            particles,
            seed,
            score_mode: ScoreMode::Full,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step size must be finite and nonnegative, got {}",
                self.step_size
            )));
        }
        check_particle_count(self.particles, d)
    }
}

/// State carried between iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub y: ManifoldPoint,
    /// Ambient Gaussian noise reused by the next LM step.
    pub xi_prev: Matrix,
    pub iteration: usize,
}

/// Per-iteration record. Iteration `0` is the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// `‖mean(Z) − μ*‖∞` in data coordinates.
    pub mean_residual: f64,
    /// `‖YᵀY − P·I‖_F`.
    pub gram_residual: f64,
    /// Mean Euclidean norm of the score estimates used in the step
    /// (zero at initialization).
    pub mean_score_norm: f64,
    pub elapsed_seconds: f64,
}

/// Final samples with the per-iteration history.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub samples: Matrix,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub total_seconds: f64,
}

/// The pre-retraction update `Ỹ` from projected drift and noise.
///
/// `xi_prev` is ignored by Euler–Maruyama.
pub fn constrained_update(
    y: &ManifoldPoint,
    g_y: &Matrix,
    xi_prev: &Matrix,
    xi_k: &Matrix,
    h: f64,
    scheme: Scheme,
) -> Matrix {
    let mut next = y.as_matrix().clone();
    next.axpy(-h, &y.project_tangent(g_y));
    match scheme {
        Scheme::LeimkuhlerMatthews => {
            let c = (0.5 * h).sqrt();
            next.axpy(c, &y.project_tangent(xi_prev));
            next.axpy(c, &y.project_tangent(xi_k));
        }
        Scheme::EulerMaruyama => {
            next.axpy((2.0 * h).sqrt(), &y.project_tangent(xi_k));
        }
    }
    next
}

/// Standard normal `P×d` matrix, row `i` from `key.stream(i)`.
pub fn noise_matrix(key: StreamKey, p: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(p, d);
    if d > 0 {
        m.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, row)| fill_standard_normal(&mut key.stream(i as u64), row));
    }
    m
}

/// Samples `P` points from `p̂^δ`: a uniformly chosen training point plus
/// `δ·N(0, I)`.
pub fn sample_mixture(ts: &TrainingSet, delta: f64, p: usize, key: StreamKey) -> Matrix {
    let d = ts.dim();
    let mut z = Matrix::zeros(p, d);
    if d > 0 {
        z.as_mut_slice().par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            let mut rng = key.stream(i as u64);
            let idx = rng.random_range(0..ts.len());
            fill_standard_normal(&mut rng, row);
            for (v, x) in row.iter_mut().zip(ts.points().row(idx)) {
                *v = x + delta * *v;
            }
        });
    }
    z
}

/// One configured sampler run over a fixed training set.
pub struct Sampler<'a> {
    ts: &'a TrainingSet,
    cfg: SmoothingConfig,
    scfg: SamplerConfig,
    map: WhiteningMap,
    index: NeighborIndex<'a>,
}

impl<'a> Sampler<'a> {
    pub fn new(ts: &'a TrainingSet, cfg: SmoothingConfig, scfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        scfg.validate(ts.dim())?;
        if let ScoreMode::NearestNeighbor { k, l, .. } = scfg.score_mode {
            if k == 0 || k + l > ts.len() {
                return Err(Error::InvalidBudget { k, l, n: ts.len() });
            }
        }
        let map = WhiteningMap::from_training_set(ts)?;
        Ok(Self {
            ts,
            cfg,
            scfg,
            map,
            index: NeighborIndex::build(ts),
        })
    }

    pub fn map(&self) -> &WhiteningMap {
        &self.map
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.scfg
    }

    fn key(&self, purpose: Purpose) -> StreamKey {
        StreamKey::new(self.scfg.seed, purpose)
    }

    /// Initial particles drawn from `p̂^δ`, whitened and retracted.
    pub fn init(&self) -> Result<ParticleState> {
        let p = self.scfg.particles;
        let d = self.ts.dim();
        let mut attempt = 0;
        let y = loop {
            let key = self.key(Purpose::Init).at_iteration(attempt);
            let z0 = sample_mixture(self.ts, self.cfg.delta, p, key);
            match retract(&self.map.whiten(&z0)?) {
                Ok(y) => break y,
                Err(Error::RankDeficient { .. }) if attempt == 0 => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        let xi_prev = noise_matrix(self.key(Purpose::LangevinNoise).at_iteration(0), p, d);
        Ok(ParticleState {
            y,
            xi_prev,
            iteration: 0,
        })
    }

    /// Negative smoothed scores at the data-space particles for iteration `k`.
    pub fn scores(&self, z: &Matrix, iteration: usize) -> Result<ScoreBatch> {
        let key = self.key(Purpose::Smoothing).at_iteration(iteration as u64);
        match self.scfg.score_mode {
            ScoreMode::Full => score_batch(self.ts, &self.cfg, z, key),
            ScoreMode::NearestNeighbor { k, l, regime } => nn_score_batch(
                &self.index,
                &self.cfg,
                NeighborBudget { k, l, regime },
                z,
                key,
            ),
        }
    }

    /// Advances one iteration. Returns the new state and the mean score norm.
    pub fn step(&self, state: &ParticleState) -> Result<(ParticleState, f64)> {
        let k = state.iteration;
        let h = self.scfg.step_size;
        let p = self.scfg.particles;
        let d = self.ts.dim();
        let diverged = || Error::NonFiniteState {
            iteration: k + 1,
            step_size: h,
            delta: self.cfg.delta,
        };
        let z = self.map.unwhiten(state.y.as_matrix())?;
        let g = self.scores(&z, k)?;
        if !g.values.is_finite() {
            return Err(diverged());
        }
        let g_y = self.map.pullback_gradient(&g.values)?;
        let xi_k = noise_matrix(self.key(Purpose::LangevinNoise).at_iteration(k as u64 + 1), p, d);
        let next = constrained_update(&state.y, &g_y, &state.xi_prev, &xi_k, h, self.scfg.scheme);
        if !next.is_finite() {
            return Err(diverged());
        }
        let y = match retract(&next) {
            Ok(y) => y,
            Err(Error::RankDeficient { .. }) if next.max_abs() > 1e150 => return Err(diverged()),
            Err(e) => return Err(e),
        };
        if !y.as_matrix().is_finite() {
            return Err(diverged());
        }
        Ok((
            ParticleState {
                y,
                xi_prev: xi_k,
                iteration: k + 1,
            },
            g.mean_norm(),
        ))
    }

    /// Constraint diagnostics of a state.
    pub fn diagnose(&self, state: &ParticleState, mean_score_norm: f64, elapsed: f64) -> Result<IterationDiagnostics> {
        let z = self.map.unwhiten(state.y.as_matrix())?;
        let mean_residual = z
            .column_means()
            .iter()
            .zip(self.map.mean())
            .fold(0.0_f64, |a, (m, t)| a.max((m - t).abs()));
        Ok(IterationDiagnostics {
            iteration: state.iteration,
            mean_residual,
            gram_residual: residuals(state.y.as_matrix()).gram,
            mean_score_norm,
            elapsed_seconds: elapsed,
        })
    }

    /// Runs all configured iterations.
    pub fn run(&self) -> Result<RunOutput> {
        self.run_with(|_, _| {})
    }

    /// Runs all iterations, calling `observe` on the initial state and after
    /// every step.
    pub fn run_with(&self, mut observe: impl FnMut(&ParticleState, &IterationDiagnostics)) -> Result<RunOutput> {
        let start = Instant::now();
        let mut state = self.init()?;
        let diag = self.diagnose(&state, 0.0, start.elapsed().as_secs_f64())?;
        observe(&state, &diag);
        let mut diagnostics = vec![diag];
        for _ in 0..self.scfg.iterations {
            let t = Instant::now();
            let (next, norm) = self.step(&state)?;
            state = next;
            let diag = self.diagnose(&state, norm, t.elapsed().as_secs_f64())?;
            observe(&state, &diag);
            diagnostics.push(diag);
        }
        Ok(RunOutput {
            samples: self.map.unwhiten(state.y.as_matrix())?,
            diagnostics,
            total_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Convenience wrapper: build a [`Sampler`] and run it.
pub fn run(ts: &TrainingSet, cfg: &SmoothingConfig, scfg: &SamplerConfig) -> Result<RunOutput> {
    Sampler::new(ts, *cfg, scfg.clone())?.run()
}
