//! `mmsold` command-line frontend.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 when the
//! configuration, flags or input files are invalid.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmsold_core::baselines::{kinetic_langevin_baoab, sigma_cfdm_run, BaoabConfig, CfdmConfig};
use mmsold_core::datasets::{generate_2d, load_csv, read_csv_matrix, save_csv, write_csv, Dataset2DSpec, DatasetKind};
use mmsold_core::metrics::{dup_rate, kid_poly, recall_knn, sliced_w2, MetricReport};
use mmsold_core::sampler::{IterationDiagnostics, Sampler, SamplerConfig};
use mmsold_core::tilting::{
    calibrate_biases, ecm_classify_batch, estimate_tilting, grid_density_2d, solve_tilting_selfconsistent_2d,
    EnergyModel, EnergyModelFile, EstimatorMode, GridSpec, PotentialMethod, SelfConsistentOptions, TiltingParams,
};
use mmsold_core::{Error, Matrix, SmoothingConfig, TrainingSet};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "mmsold", version, about = "Training-free generative sampling with moment-matched score-smoothed Langevin dynamics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory (depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a 2D toy dataset as CSV (stdout unless --out is given).
    Gen2d(Gen2dArgs),
    /// Run a sampler from a JSON run configuration.
    Sample(SampleArgs),
    /// Evaluate sample-quality metrics and print a JSON report.
    Eval(EvalArgs),
    /// Estimate tilting parameters of a training set.
    Tilt(TiltArgs),
    /// Fit one energy model per class for minimum-energy classification.
    EcmFit(EcmFitArgs),
    /// Classify query points with fitted energy models.
    Classify(ClassifyArgs),
    /// Tabulate the tilted density of a 2D training set on a grid.
    Density(DensityArgs),
    /// Replay a step-size × iteration-count grid and report metrics per cell.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Checkerboard,
    #[value(alias = "two-spirals")]
    Spirals,
    Circle,
}

impl From<KindArg> for DatasetKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Checkerboard => DatasetKind::Checkerboard,
            KindArg::Spirals => DatasetKind::TwoSpirals,
            KindArg::Circle => DatasetKind::Circle,
        }
    }
}

#[derive(Args)]
struct Gen2dArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    n: usize,
    /// Gaussian jitter (defaults to 0.05 for spirals, 0 otherwise).
    #[arg(long)]
    noise: Option<f64>,
    /// Circle only: evenly spaced angles.
    #[arg(long)]
    equispaced: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MetricKind {
    Sw2,
    Kid,
    Recall,
    Dup,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Training set, required by the dup metric.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sw2")]
    metrics: Vec<MetricKind>,
    #[command(flatten)]
    params: MetricParams,
}

#[derive(Args, Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricParams {
    /// SW2 projection count.
    #[arg(long, default_value_t = 512)]
    #[serde(default = "default_projections")]
    projections: usize,
    /// Recall neighbourhood size.
    #[arg(long, default_value_t = 3)]
    #[serde(default = "default_k")]
    k: usize,
    /// DupRate percentile.
    #[arg(long, default_value_t = 5.0)]
    #[serde(default = "default_percentile")]
    percentile: f64,
}

fn default_projections() -> usize {
    512
}
fn default_k() -> usize {
    3
}
fn default_percentile() -> f64 {
    5.0
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            projections: default_projections(),
            k: default_k(),
            percentile: default_percentile(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Empirical,
    LeaveOneOut,
}

impl From<ModeArg> for EstimatorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Empirical => EstimatorMode::Empirical,
            ModeArg::LeaveOneOut => EstimatorMode::LeaveOneOut,
        }
    }
}

#[derive(Args)]
struct SmoothingArgs {
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    sigma: f64,
    /// Monte Carlo sample count (even).
    #[arg(long, default_value_t = 8)]
    mc: usize,
}

impl SmoothingArgs {
    fn config(&self) -> Result<SmoothingConfig, Failure> {
        SmoothingConfig::new(self.delta, self.sigma, self.mc).map_err(Failure::config)
    }
}

#[derive(Args)]
struct TiltArgs {
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Lyapunov regularizer (default 1e−6·tr Σ*/d).
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, value_enum, default_value = "empirical")]
    mode: ModeArg,
}

#[derive(Args)]
struct EcmFitArgs {
    /// Training CSV of each class, in label order.
    #[arg(long = "class", required = true)]
    classes: Vec<PathBuf>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, value_enum, default_value = "empirical")]
    mode: ModeArg,
    /// Labelled validation CSV (last column is the class label) used to
    /// calibrate the biases.
    #[arg(long)]
    validation: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Directory written by `ecm-fit`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    queries: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiltSource {
    /// Parameters solving the moment constraints on the grid.
    SelfConsistent,
    /// Parameters estimated from scores at the training points.
    Empirical,
    /// No tilt: the naive smoothed target.
    None,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Grid spacing.
    #[arg(long, default_value_t = 0.02)]
    spacing: f64,
    #[arg(long, value_enum, default_value = "self-consistent")]
    tilt: TiltSource,
}

#[derive(Args)]
struct SweepArgs {
    /// Base MM-SOLD run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    step_sizes: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    iterations: Vec<usize>,
}

/// A failed command: message and exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }

    /// Invalid-input errors map to 2, everything else to 1.
    fn classify(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidBudget { .. }
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. }
            | Error::Json(_) => Self::config(e),
            _ => Self::runtime(e),
        }
    }
}

fn input<T>(what: &Path, r: mmsold_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::config(format!("{}: {e}", what.display())))
}

fn write_output(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Writes `text` to `out`, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_output(p, text),
        None => io::stdout().write_all(text.as_bytes()).map_err(Failure::runtime),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Gen2d(a) => cmd_gen2d(a, &cli.common),
        Command::Sample(a) => cmd_sample(a, &cli.common),
        Command::Eval(a) => cmd_eval(a, &cli.common),
        Command::Tilt(a) => cmd_tilt(a, &cli.common),
        Command::EcmFit(a) => cmd_ecm_fit(a, &cli.common),
        Command::Classify(a) => cmd_classify(a, &cli.common),
        Command::Density(a) => cmd_density(a, &cli.common),
        Command::Sweep(a) => cmd_sweep(a, &cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_gen2d(a: &Gen2dArgs, common: &Common) -> Result<(), Failure> {
    let spec = Dataset2DSpec {
        kind: a.kind.into(),
        n_samples: a.n,
        seed: common.seed.unwrap_or(0),
        noise: a.noise,
        equispaced: a.equispaced,
    };
    let ts = generate_2d(&spec).map_err(Failure::config)?;
    match &common.out {
        Some(p) => save_csv(p, ts.points()).map_err(|e| Failure::runtime(format!("{}: {e}", p.display()))),
        None => write_csv(io::stdout().lock(), ts.points()).map_err(Failure::runtime),
    }
}

/// Where the training set of a run comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum DatasetSource {
    /// A CSV file, relative paths resolved against the config file.
    Csv(PathBuf),
    Generate(Dataset2DSpec),
}

impl DatasetSource {
    fn load(&self, base: &Path) -> Result<TrainingSet, Failure> {
        match self {
            DatasetSource::Csv(p) => {
                let path = base.join(p);
                input(&path, load_csv(&path))
            }
            DatasetSource::Generate(spec) => generate_2d(spec).map_err(Failure::config),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Method {
    Mmsold,
    Cfdm,
    Baoab,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TiltingSection {
    #[serde(default)]
    zeta: Option<f64>,
    #[serde(default)]
    mode: EstimatorMode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    reference: DatasetSource,
    #[serde(default = "default_metric_list")]
    metrics: Vec<MetricKind>,
    #[serde(default)]
    params: MetricParams,
}

fn default_metric_list() -> Vec<MetricKind> {
    vec![MetricKind::Sw2]
}

/// JSON run configuration of `sample` and `sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    dataset: DatasetSource,
    method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smoothing: Option<SmoothingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampler: Option<SamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cfdm: Option<CfdmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baoab: Option<BaoabConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tilting: Option<TiltingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsSection>,
    /// Overrides the seeds of the method sections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

fn missing(section: &str, method: Method) -> Failure {
    Failure::config(format!("method {method:?} needs a \"{section}\" section"))
}

impl RunConfig {
    fn read(path: &Path) -> Result<(Self, PathBuf), Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Applies `--seed`, then the top-level seed, to every method section.
    fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            if let Some(c) = self.sampler.as_mut() {
                c.seed = s;
            }
            if let Some(c) = self.cfdm.as_mut() {
                c.seed = s;
            }
            if let Some(c) = self.baoab.as_mut() {
                c.seed = s;
            }
        }
    }

    /// Checks everything that can be checked before computing.
    fn validate(&self, ts: &TrainingSet) -> Result<(), Failure> {
        let d = ts.dim();
        match self.method {
            Method::Mmsold => {
                let s = self.smoothing.ok_or_else(|| missing("smoothing", self.method))?;
                s.validate().map_err(Failure::config)?;
                let sc = self.sampler.as_ref().ok_or_else(|| missing("sampler", self.method))?;
                sc.validate(d).map_err(Failure::config)?;
            }
            Method::Cfdm => {
                self.cfdm
                    .as_ref()
                    .ok_or_else(|| missing("cfdm", self.method))?
                    .validate()
                    .map_err(Failure::config)?;
            }
            Method::Baoab => {
                let s = self.smoothing.ok_or_else(|| missing("smoothing", self.method))?;
                s.validate().map_err(Failure::config)?;
                self.baoab
                    .as_ref()
                    .ok_or_else(|| missing("baoab", self.method))?
                    .validate()
                    .map_err(Failure::config)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    method: Method,
    config: &'a RunConfig,
    seed: Option<u64>,
    threads: usize,
    training_points: usize,
    dimension: usize,
    total_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<&'a [IterationDiagnostics]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tilting: Option<&'a TiltingParams>,
}

fn cmd_sample(a: &SampleArgs, common: &Common) -> Result<(), Failure> {
    let (mut cfg, base) = RunConfig::read(&a.config)?;
    cfg.resolve_seed(common.seed);
    let ts = cfg.dataset.load(&base)?;
    cfg.validate(&ts)?;
    let reference = match &cfg.metrics {
        Some(m) => Some(m.reference.load(&base)?),
        None => None,
    };
    let out_dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("mmsold-out"));
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }

    let start = Instant::now();
    let mut diagnostics = None;
    let mut tilting = None;
    let samples = match cfg.method {
        Method::Mmsold => {
            let sampler = Sampler::new(&ts, cfg.smoothing.expect("validated"), cfg.sampler.clone().expect("validated"))
                .map_err(Failure::classify)?;
            let out = sampler.run().map_err(Failure::runtime)?;
            diagnostics = Some(out.diagnostics);
            out.samples
        }
        Method::Cfdm => sigma_cfdm_run(&ts, cfg.cfdm.as_ref().expect("validated")).map_err(Failure::runtime)?,
        Method::Baoab => {
            let s = cfg.smoothing.expect("validated");
            let bc = cfg.baoab.as_ref().expect("validated");
            let t = cfg.tilting.unwrap_or_default();
            let params = estimate_tilting(&ts, &s, t.zeta, t.mode, bc.seed).map_err(Failure::runtime)?;
            let out = kinetic_langevin_baoab(&ts, &s, &params, bc).map_err(Failure::runtime)?;
            tilting = Some(params);
            out.positions
        }
    };
    let total_seconds = start.elapsed().as_secs_f64();

    ensure_dir(&out_dir)?;
    let samples_path = out_dir.join("samples.csv");
    save_csv(&samples_path, &samples).map_err(|e| Failure::runtime(format!("{}: {e}", samples_path.display())))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        method: cfg.method,
        config: &cfg,
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        training_points: ts.len(),
        dimension: ts.dim(),
        total_seconds,
        diagnostics: diagnostics.as_deref(),
        tilting: tilting.as_ref(),
    };
    write_output(&out_dir.join("manifest.json"), &to_json(&manifest))?;
    write_output(&out_dir.join("config.json"), &to_json(&cfg))?;
    if let (Some(m), Some(reference)) = (&cfg.metrics, reference) {
        let reports = compute_metrics(&samples, reference.points(), Some(ts.points()), &m.metrics, &m.params, cfg.seed.unwrap_or(0))?;
        write_output(&out_dir.join("metrics.json"), &to_json(&reports))?;
    }
    Ok(())
}

fn compute_metrics(
    samples: &Matrix,
    reference: &Matrix,
    train: Option<&Matrix>,
    kinds: &[MetricKind],
    params: &MetricParams,
    seed: u64,
) -> Result<Vec<MetricReport>, Failure> {
    if samples.cols() != reference.cols() {
        return Err(Failure::classify(Error::DimensionMismatch {
            context: "samples vs reference",
            expected: reference.cols(),
            found: samples.cols(),
        }));
    }
    kinds
        .iter()
        .map(|kind| {
            let (value, config, sizes, seed) = match kind {
                MetricKind::Sw2 => (
                    sliced_w2(samples, reference, params.projections, seed),
                    serde_json::json!({ "projections": params.projections }),
                    vec![samples.rows(), reference.rows()],
                    Some(seed),
                ),
                MetricKind::Kid => (
                    kid_poly(samples, reference),
                    serde_json::json!({ "kernel": "(x·y/f + 1)^3" }),
                    vec![samples.rows(), reference.rows()],
                    None,
                ),
                MetricKind::Recall => (
                    recall_knn(reference, samples, params.k),
                    serde_json::json!({ "k": params.k }),
                    vec![reference.rows(), samples.rows()],
                    None,
                ),
                MetricKind::Dup => {
                    let train = train.ok_or_else(|| Failure::config("the dup metric needs --train"))?;
                    (
                        dup_rate(train, samples, params.percentile),
                        serde_json::json!({ "percentile": params.percentile }),
                        vec![train.rows(), samples.rows()],
                        None,
                    )
                }
            };
            Ok(MetricReport {
                metric: format!("{kind:?}").to_lowercase(),
                value: value.map_err(Failure::classify)?,
                config,
                sample_sizes: sizes,
                seed,
            })
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs, common: &Common) -> Result<(), Failure> {
    let samples = input(&a.samples, read_csv_matrix(&a.samples))?;
    let reference = input(&a.reference, read_csv_matrix(&a.reference))?;
    let train = match &a.train {
        Some(p) => Some(input(p, read_csv_matrix(p))?),
        None => None,
    };
    let reports = compute_metrics(&samples, &reference, train.as_ref(), &a.metrics, &a.params, common.seed.unwrap_or(0))?;
    emit(common.out.as_deref(), &to_json(&reports))
}

fn cmd_tilt(a: &TiltArgs, common: &Common) -> Result<(), Failure> {
    let ts = input(&a.train, load_csv(&a.train))?;
    let cfg = a.smoothing.config()?;
    let params =
        estimate_tilting(&ts, &cfg, a.zeta, a.mode.into(), common.seed.unwrap_or(0)).map_err(Failure::classify)?;
    emit(common.out.as_deref(), &to_json(&params))
}

fn model_path(dir: &Path, class: usize) -> PathBuf {
    dir.join(format!("class_{class}.json"))
}

/// Splits a labelled CSV into points and integer labels (last column).
fn split_labels(path: &Path, m: &Matrix, classes: usize) -> Result<(Matrix, Vec<usize>), Failure> {
    if m.cols() < 2 {
        return Err(Failure::config(format!("{}: needs at least one feature column and a label column", path.display())));
    }
    let d = m.cols() - 1;
    let mut labels = Vec::with_capacity(m.rows());
    for (i, row) in m.row_iter().enumerate() {
        let l = row[d];
        if l < 0.0 || l.fract() != 0.0 || l as usize >= classes {
            return Err(Failure::config(format!("{}: row {}: invalid class label {l}", path.display(), i + 1)));
        }
        labels.push(l as usize);
    }
    let points = Matrix::from_fn(m.rows(), d, |i, j| m[(i, j)]);
    Ok((points, labels))
}

fn cmd_ecm_fit(a: &EcmFitArgs, common: &Common) -> Result<(), Failure> {
    let cfg = a.smoothing.config()?;
    let seed = common.seed.unwrap_or(0);
    let mut models = Vec::with_capacity(a.classes.len());
    for (c, path) in a.classes.iter().enumerate() {
        let ts = input(path, load_csv(path))?;
        let model = EnergyModel::build(ts, cfg, a.zeta, a.mode.into(), seed.wrapping_add(c as u64))
            .map_err(Failure::classify)?;
        models.push(model);
    }
    if let Some(path) = &a.validation {
        let raw = input(path, read_csv_matrix(path))?;
        let (points, labels) = split_labels(path, &raw, models.len())?;
        calibrate_biases(&mut models, &points, &labels).map_err(Failure::classify)?;
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("mmsold-models"));
    ensure_dir(&dir)?;
    for (c, m) in models.iter().enumerate() {
        write_output(&model_path(&dir, c), &to_json(&m.to_file()))?;
    }
    Ok(())
}

fn load_models(dir: &Path) -> Result<Vec<EnergyModel>, Failure> {
    let mut models = Vec::new();
    loop {
        let path = model_path(dir, models.len());
        if !path.exists() {
            break;
        }
        let text = fs::read_to_string(&path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let file: EnergyModelFile =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        models.push(EnergyModel::from_file(file).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?);
    }
    if models.is_empty() {
        return Err(Failure::config(format!("{}: no class_0.json model file", dir.display())));
    }
    Ok(models)
}

fn cmd_classify(a: &ClassifyArgs, common: &Common) -> Result<(), Failure> {
    let models = load_models(&a.models)?;
    let queries = input(&a.queries, read_csv_matrix(&a.queries))?;
    let labels = ecm_classify_batch(&models, &queries).map_err(Failure::classify)?;
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    emit(common.out.as_deref(), &text)
}

fn cmd_density(a: &DensityArgs, common: &Common) -> Result<(), Failure> {
    let ts = input(&a.train, load_csv(&a.train))?;
    let cfg = a.smoothing.config()?;
    let spec = GridSpec::covering(&ts, &cfg, a.spacing).map_err(Failure::classify)?;
    let method = PotentialMethod::Convolution;
    let density = match a.tilt {
        TiltSource::SelfConsistent => {
            solve_tilting_selfconsistent_2d(&ts, &cfg, spec, method, &SelfConsistentOptions::default())
                .map_err(Failure::classify)?
                .density
        }
        TiltSource::Empirical => {
            let params = estimate_tilting(&ts, &cfg, None, EstimatorMode::Empirical, common.seed.unwrap_or(0))
                .map_err(Failure::classify)?;
            grid_density_2d(&ts, &cfg, &params, spec, method).map_err(Failure::classify)?
        }
        TiltSource::None => {
            grid_density_2d(&ts, &cfg, &TiltingParams::zero(2), spec, method).map_err(Failure::classify)?
        }
    };
    let mut text = String::from("x,y,density\n");
    for (k, p) in density.values.iter().enumerate() {
        let [x, y] = spec.node(k);
        text.push_str(&format!("{x:.16e},{y:.16e},{p:.16e}\n"));
    }
    emit(common.out.as_deref(), &text)
}

#[derive(Serialize)]
struct SweepCell {
    step_size: f64,
    iterations: usize,
    max_mean_residual: f64,
    max_gram_residual: f64,
    reports: Vec<MetricReport>,
}

fn cmd_sweep(a: &SweepArgs, common: &Common) -> Result<(), Failure> {
    let (mut cfg, base) = RunConfig::read(&a.config)?;
    if cfg.method != Method::Mmsold {
        return Err(Failure::config("sweep replays MM-SOLD runs only"));
    }
    cfg.resolve_seed(common.seed);
    let ts = cfg.dataset.load(&base)?;
    cfg.validate(&ts)?;
    let metrics = cfg
        .metrics
        .clone()
        .ok_or_else(|| Failure::config("sweep needs a \"metrics\" section with a reference"))?;
    let reference = metrics.reference.load(&base)?;
    let out_dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("mmsold-sweep"));
    ensure_dir(&out_dir)?;
    let t_max = a.iterations.iter().copied().max().unwrap_or(0);
    let smoothing = cfg.smoothing.expect("validated");
    let seed = cfg.seed.unwrap_or(0);
    for &h in &a.step_sizes {
        // Every shorter run is a prefix of the longest one.
        let mut scfg = cfg.sampler.clone().expect("validated");
        scfg.step_size = h;
        scfg.iterations = t_max;
        let sampler = Sampler::new(&ts, smoothing, scfg).map_err(Failure::classify)?;
        let mut worst = (0.0_f64, 0.0_f64);
        let mut failure = None;
        sampler
            .run_with(|state, diag| {
                worst = (worst.0.max(diag.mean_residual), worst.1.max(diag.gram_residual));
                if failure.is_some() || !a.iterations.contains(&diag.iteration) {
                    return;
                }
                let cell = sampler
                    .map()
                    .unwhiten(state.y.as_matrix())
                    .map_err(Failure::runtime)
                    .and_then(|z| {
                        compute_metrics(&z, reference.points(), Some(ts.points()), &metrics.metrics, &metrics.params, seed)
                    })
                    .and_then(|reports| {
                        let cell = SweepCell {
                            step_size: h,
                            iterations: diag.iteration,
                            max_mean_residual: worst.0,
                            max_gram_residual: worst.1,
                            reports,
                        };
                        let name = format!("cell_T{}_h{h:e}.json", diag.iteration);
                        write_output(&out_dir.join(name), &to_json(&cell))
                    });
                if let Err(f) = cell {
                    failure = Some(f);
                }
            })
            .map_err(Failure::runtime)?;
        if let Some(f) = failure {
            return Err(f);
        }
    }
    Ok(())
}
