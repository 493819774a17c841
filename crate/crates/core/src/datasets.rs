//! Synthetic 2D training sets, CSV input/output and partial whitening.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::TrainingSet;
use crate::numerics::{sym_eig, Matrix};
use crate::rng::{Purpose, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Uniform on the 8 dark cells of a 4×4 board covering `[−4, 4]²`.
    Checkerboard,
    /// Two interleaved Archimedean arms, 2 turns each, radius up to 4.
    TwoSpirals,
    /// Points on the unit circle.
    Circle,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Self::Checkerboard),
            "two_spirals" | "spirals" => Ok(Self::TwoSpirals),
            "circle" => Ok(Self::Circle),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset kind `{other}` (expected checkerboard, two_spirals or circle)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset2DSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Gaussian jitter; defaults to 0.05 for spirals and 0 otherwise.
    #[serde(default)]
    pub noise: Option<f64>,
    /// Circle only: evenly spaced angles instead of uniform draws.
    #[serde(default = "default_true")]
    pub equispaced: bool,
}

fn default_true() -> bool {
    true
}

impl Dataset2DSpec {
    pub fn new(kind: DatasetKind, n_samples: usize, seed: u64) -> Self {
        Self {
            kind,
            n_samples,
            seed,
            noise: None,
            equispaced: true,
        }
    }

    pub fn noise_std(&self) -> f64 {
        self.noise.unwrap_or(match self.kind {
            DatasetKind::TwoSpirals => 0.05,
            _ => 0.0,
        })
    }
}

pub const CHECKERBOARD_EXTENT: f64 = 4.0;

/// Whether `p` lies in a dark cell, i.e. cell `(i, j)` with `i + j` even.
pub fn in_dark_cell(p: [f64; 2]) -> bool {
    let cell = |v: f64| ((v + CHECKERBOARD_EXTENT) / 2.0).floor().clamp(0.0, 3.0) as i64;
    p.iter().all(|v| v.abs() <= CHECKERBOARD_EXTENT) && (cell(p[0]) + cell(p[1])) % 2 == 0
}

/// Generates a 2D training set; a pure function of the spec.
pub fn generate_2d(spec: &Dataset2DSpec) -> Result<TrainingSet> {
    let n = spec.n_samples;
    if n == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let noise = spec.noise_std();
    if !(noise >= 0.0) {
        return Err(Error::InvalidConfig("noise must be nonnegative".into()));
    }
    let mut rng = StreamKey::new(spec.seed, Purpose::Dataset).stream(spec.kind as u64);
    let mut pts = Matrix::zeros(n, 2);
    for i in 0..n {
        let (x, y) = match spec.kind {
            DatasetKind::Checkerboard => {
                let dark = rng.random_range(0..8);
                let row = dark / 2;
                let col = 2 * (dark % 2) + row % 2;
                let x = -4.0 + 2.0 * col as f64 + 2.0 * rng.random::<f64>();
                let y = -4.0 + 2.0 * row as f64 + 2.0 * rng.random::<f64>();
                (x, y)
            }
            DatasetKind::TwoSpirals => {
                // √u spreads points evenly along the arm.
                let t = rng.random::<f64>().sqrt();
                let r = 4.0 * t;
                let theta = 2.0 * PI * 2.0 * t;
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                (sign * r * theta.cos(), sign * r * theta.sin())
            }
            DatasetKind::Circle => {
                let theta = if spec.equispaced {
                    2.0 * PI * i as f64 / n as f64
                } else {
                    2.0 * PI * rng.random::<f64>()
                };
                (theta.cos(), theta.sin())
            }
        };
        let row = pts.row_mut(i);
        row[0] = x;
        row[1] = y;
        if noise > 0.0 {
            row[0] += noise * rng.sample::<f64, _>(StandardNormal);
            row[1] += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    TrainingSet::new(pts)
}

/// Reads a rectangular numeric CSV. A first row with any non-numeric field
/// is treated as a header.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv_matrix(&text)
}

pub fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: line + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if line == 0 && parsed.iter().any(|v| v.is_err()) {
            continue;
        }
        match cols {
            None => cols = Some(parsed.len()),
            Some(c) if c != parsed.len() => {
                return Err(Error::Parse {
                    row: line + 1,
                    column: parsed.len().min(c) + 1,
                    message: format!("expected {c} fields, found {}", parsed.len()),
                })
            }
            _ => {}
        }
        for (j, v) in parsed.into_iter().enumerate() {
            data.push(v.map_err(|e| Error::Parse {
                row: line + 1,
                column: j + 1,
                message: format!("`{}`: {e}", &record[j]),
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        row: 0,
        column: 0,
        message: "no numeric rows".into(),
    })?;
    Matrix::from_vec(rows, cols, data)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TrainingSet> {
    TrainingSet::new(read_csv_matrix(path)?)
}

/// Writes one row per line with 17 significant digits, so that reading the
/// file back gives bit-identical values.
pub fn save_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), m)
}

/// [`save_csv`] to an arbitrary writer.
pub fn write_csv<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Whitening with the largest eigenvalues capped before inversion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartialWhitening {
    pub mean: Vec<f64>,
    /// Eigenvectors as columns, ordered by descending eigenvalue.
    pub eigenvectors: Matrix,
    /// Descending, uncapped.
    pub eigenvalues: Vec<f64>,
    /// Descending, with the top `cap_k` replaced by `eigenvalues[cap_k]`.
    pub capped: Vec<f64>,
    pub cap_k: usize,
}

const WHITENING_FLOOR: f64 = 1e-12;

impl PartialWhitening {
    pub fn fit(data: &Matrix, cap_k: usize) -> Result<Self> {
        let d = data.cols();
        if cap_k >= d {
            return Err(Error::InvalidConfig(format!("cap_k = {cap_k} must be below d = {d}")));
        }
        let eig = sym_eig(&data.covariance())?;
        let order: Vec<usize> = (0..d).rev().collect();
        let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let eigenvectors = Matrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
        let mut capped = eigenvalues.clone();
        let cap = eigenvalues[cap_k];
        for v in capped.iter_mut().take(cap_k) {
            *v = cap;
        }
        Ok(Self {
            mean: data.column_means(),
            eigenvectors,
            eigenvalues,
            capped,
            cap_k,
        })
    }

    fn scales(&self) -> Vec<f64> {
        self.capped.iter().map(|l| 1.0 / (l.max(0.0) + WHITENING_FLOOR).sqrt()).collect()
    }

    /// `y = S·Vᵀ(x − μ)` row by row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let s = self.scales();
        let mut y = crate::manifold::center_at(x, &self.mean).matmul(&self.eigenvectors);
        scale_columns(&mut y, &s);
        Ok(y)
    }

    /// `x = μ + V·S⁻¹y` row by row.
    pub fn inverse(&self, y: &Matrix) -> Result<Matrix> {
        self.check(y)?;
        let inv: Vec<f64> = self.scales().iter().map(|s| 1.0 / s).collect();
        let mut t = y.clone();
        scale_columns(&mut t, &inv);
        let mut x = t.matmul_t(&self.eigenvectors);
        for row in x.as_mut_slice().chunks_exact_mut(self.mean.len()) {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(x)
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "partial whitening input",
                expected: self.mean.len(),
                found: m.cols(),
            });
        }
        Ok(())
    }
}

fn scale_columns(m: &mut Matrix, s: &[f64]) {
    if s.is_empty() {
        return;
    }
    for row in m.as_mut_slice().chunks_exact_mut(s.len()) {
        for (v, f) in row.iter_mut().zip(s) {
            *v *= f;
        }
    }
}

/// Fits the capped whitening on `ts` and returns it with the transformed set.
pub fn partial_whiten(ts: &TrainingSet, cap_k: usize) -> Result<(PartialWhitening, TrainingSet)> {
    let pw = PartialWhitening::fit(ts.points(), cap_k)?;
    let y = pw.forward(ts.points())?;
    Ok((pw, TrainingSet::new(y)?))
}
