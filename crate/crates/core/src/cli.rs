//! Command-line frontend.
//!
//! Every command that produces a run (design, evaluate, ablate-noise) writes
//! into `<out>/<command>-<hash>/`, where the hash covers the resolved
//! configuration, the dataset bytes and the crate version. Files in a run
//! directory are written once: rerunning with the same configuration leaves
//! them untouched, and a differing rewrite is refused. Wall times are the one
//! exception and are appended to `timing.csv`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{
    convex_hull, inject_sim_error, load_grid, save_grid, synth_field, FieldKind, GridConfig, GridDataset,
    MANIFEST_FILE, VALUES_FILE,
};
use crate::design::{
    fit_with_fixed_design, imse_design, lhs_design, mes_design, mil_design, uniform_design, FitResult,
    OptimizerConfig, SensorDesign,
};
use crate::error::{Error, Result};
use crate::evalsuite::design_distance;
use crate::experiment::{ablate_noise, evaluate_design, summarize_ablation, AblationCell, EvalOptions};
use crate::kernels::KernelSpec;

/// Kernel used when neither the config nor `--kernel` names one. Spatial
/// lengthscales are in normalized (unit-square) coordinates, the temporal
/// lengthscale in time steps.
pub fn default_kernel() -> KernelSpec {
    KernelSpec::separable(KernelSpec::matern32(1.0, &[0.2, 0.2]), KernelSpec::matern32(1.0, &[12.0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mil,
    Uniform,
    Lhs,
    Mes,
    Imse,
}

impl Strategy {
    fn name(self) -> &'static str {
        match self {
            Strategy::Mil => "mil",
            Strategy::Uniform => "uniform",
            Strategy::Lhs => "lhs",
            Strategy::Mes => "mes",
            Strategy::Imse => "imse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum KindArg {
    SeparableGp,
    TwoRegime,
}

impl From<KindArg> for FieldKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::SeparableGp => FieldKind::SeparableGp,
            KindArg::TwoRegime => FieldKind::TwoRegime,
        }
    }
}

/// Half-open range of time-step indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: usize,
    pub end: usize,
}

impl std::str::FromStr for TimeRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(TimeRange { start: parse(a)?, end: parse(b)? })
    }
}

/// Synthetic dataset generated in memory instead of read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: FieldKind,
    pub grid: GridConfig,
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// Everything that determines the outputs of a run. Loaded from `--config`
/// and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub generator: Option<GeneratorSpec>,
    pub kernel: Option<KernelSpec>,
    pub strategy: Option<Strategy>,
    pub n_sensors: Option<usize>,
    pub seeds: Vec<u64>,
    pub optimizer: OptimizerConfig,
    pub fixed: Option<PathBuf>,
    pub train_range: Option<TimeRange>,
    pub test_range: Option<TimeRange>,
    pub out: Option<PathBuf>,
    /// Simulator-error grid for `ablate-noise`.
    pub ablation: Option<AblationGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub ell_s: Vec<f64>,
    pub ell_t: Vec<f64>,
    pub var: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid { ell_s: vec![0.1, 1.0], ell_t: vec![1.0, 24.0], var: vec![0.0, 0.25, 1.0] }
    }
}

impl AblationGrid {
    fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for &ell_s in &self.ell_s {
            for &ell_t in &self.ell_t {
                for &var in &self.var {
                    out.push(AblationCell { ell_s, ell_t, var });
                }
            }
        }
        out
    }
}

#[derive(Debug, Parser)]
#[command(name = "milsense", version, about = "Sensor network design by minimizing information loss")]
struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, or inject simulator error into one.
    GenData(GenDataArgs),
    /// Place sensors with one strategy over a list of seeds.
    Design(DesignArgs),
    /// Score a design on a held-out time range.
    Evaluate(EvaluateArgs),
    /// Simulator-error ablation for MIL.
    AblateNoise(AblateArgs),
    /// Assignment distance between two designs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory (manifest.json + values.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Kernel JSON used to initialize hyperparameters.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    train_range: Option<TimeRange>,
    #[arg(long)]
    test_range: Option<TimeRange>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Base directory; the run goes in a subdirectory named by config hash.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum, conflicts_with = "input")]
    kind: Option<KindArg>,
    #[arg(long, default_value_t = 100)]
    ns: usize,
    #[arg(long, default_value_t = 168)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Existing dataset to inject simulator error into.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, requires = "input", default_value_t = 0.0)]
    noise_var: f64,
    #[arg(long, default_value_t = 0.1)]
    ell_s: f64,
    #[arg(long, default_value_t = 1.0)]
    ell_t: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DesignArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    /// Total number of sensors, fixed ones included.
    #[arg(long)]
    n: Option<usize>,
    /// Seeds to run; repeat the flag or separate with commas.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Design whose locations must be kept.
    #[arg(long)]
    fixed: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long)]
    design: PathBuf,
    /// Fitted hyperparameters; refitted on the training range when absent.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Second design to compare against by assignment distance.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Grid indices whose error time series are written; defaults to the sensors.
    #[arg(long, value_delimiter = ',')]
    locations: Vec<usize>,
    /// Absolute error counted as extreme, in value units.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    ell_s: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    ell_t: Vec<f64>,
    #[arg(long = "var", value_delimiter = ',')]
    vars: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error with the exit code it should produce.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { code: error.exit_code(), error }
    }
}

fn numerical(error: Error) -> Failure {
    let code = if matches!(error, Error::Io(_)) { 2 } else { 3 };
    Failure { code, error }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

/// Sizes the global worker pool from `MILSENSE_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MILSENSE_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::input(format!("MILSENSE_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let base = match &cli.config {
        Some(p) => serde_json::from_str::<ExperimentConfig>(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&base, a),
        Command::Design(a) => cmd_design(base, a),
        Command::Evaluate(a) => cmd_evaluate(base, a),
        Command::AblateNoise(a) => cmd_ablate_noise(base, a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn read_kernel(path: &Path) -> Result<KernelSpec> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn read_design(path: &Path) -> Result<SensorDesign> {
    SensorDesign::from_json(&fs::read_to_string(path)?)
}

fn cmd_gen_data(base: &ExperimentConfig, a: GenDataArgs) -> CliResult<()> {
    let ds = if let Some(input) = &a.input {
        inject_sim_error(&load_grid(input)?, a.ell_s, a.ell_t, a.noise_var, a.seed)?
    } else {
        let (kind, grid, kernel, seed) = match (a.kind, &base.generator) {
            (None, Some(g)) => (g.kind, g.grid.clone(), g.kernel.clone(), g.seed),
            (kind, _) => {
                let grid = GridConfig { dt: a.dt, noise_std: a.noise_std, amplitude: a.amplitude, ..GridConfig::new(a.ns, a.nt) };
                (kind.map_or(FieldKind::TwoRegime, Into::into), grid, None, a.seed)
            }
        };
        let kernel = match &a.kernel {
            Some(p) => read_kernel(p)?,
            None => kernel.or_else(|| base.kernel.clone()).unwrap_or_else(default_kernel),
        };
        synth_field(kind, &grid, &kernel, seed).map_err(numerical)?
    };
    save_grid(&ds, &a.out)?;
    let (lo, hi) = value_range(&ds);
    println!(
        "wrote {}: N_s = {}, N_t = {}, values in [{lo:.4}, {hi:.4}] {}",
        a.out.display(),
        ds.n_space(),
        ds.n_time(),
        ds.metadata.units.value
    );
    Ok(())
}

fn value_range(ds: &GridDataset) -> (f64, f64) {
    ds.values
        .iter()
        .zip(ds.mask.iter())
        .filter(|(_, m)| **m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)))
}

fn apply_common(cfg: &mut ExperimentConfig, a: &DataArgs) -> Result<()> {
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(k) = &a.kernel {
        cfg.kernel = Some(read_kernel(k)?);
    }
    if a.train_range.is_some() {
        cfg.train_range = a.train_range;
    }
    if a.test_range.is_some() {
        cfg.test_range = a.test_range;
    }
    if let Some(m) = a.max_iters {
        cfg.optimizer.max_iters = m;
    }
    if let Some(r) = a.restarts {
        cfg.optimizer.restarts = r;
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    Ok(())
}

/// Loaded dataset plus the bytes that identify it.
struct Loaded {
    data: GridDataset,
    digest: String,
}

fn load_data(cfg: &ExperimentConfig) -> CliResult<Loaded> {
    if let Some(dir) = &cfg.data {
        let data = load_grid(dir)?;
        let mut h = Sha256::new();
        h.update(fs::read(dir.join(MANIFEST_FILE))?);
        h.update(fs::read(dir.join(VALUES_FILE))?);
        return Ok(Loaded { data, digest: hex::encode(h.finalize()) });
    }
    if let Some(g) = &cfg.generator {
        let kernel = g.kernel.clone().unwrap_or_else(default_kernel);
        let data = synth_field(g.kind, &g.grid, &kernel, g.seed).map_err(numerical)?;
        return Ok(Loaded { data, digest: String::new() });
    }
    Err(Error::input("no dataset: pass --data or put a generator in --config").into())
}

/// Sensor budget checks that belong to the input, not to the optimizer.
fn check_budget(train: &GridDataset, n: usize, fixed: Option<&SensorDesign>) -> Result<()> {
    if n == 0 || n > train.n_space() {
        return Err(Error::input(format!("--n must be between 1 and the {} grid points, got {n}", train.n_space())));
    }
    if let Some(f) = fixed {
        f.grid_indices(&train.spatial_locations)?;
        if f.len() > n {
            return Err(Error::input(format!("{} fixed sensors exceed --n {n}", f.len())));
        }
    }
    Ok(())
}

fn split(data: &GridDataset, cfg: &ExperimentConfig) -> Result<(GridDataset, GridDataset)> {
    let nt = data.n_time();
    let train = cfg.train_range.unwrap_or(TimeRange { start: 0, end: nt / 2 });
    let test = cfg.test_range.unwrap_or(TimeRange { start: nt / 2, end: nt });
    Ok((data.time_slice(train.start..train.end)?, data.time_slice(test.start..test.end)?))
}

/// Creates `<out>/<command>-<hash>` for the resolved config.
fn run_dir(command: &str, cfg: &ExperimentConfig, digest: &str) -> CliResult<PathBuf> {
    let out = cfg.out.clone().ok_or_else(|| Error::input("--out is required"))?;
    // The output location itself is not part of the run's identity.
    let resolved = ExperimentConfig { out: None, ..cfg.clone() };
    let key = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": resolved,
        "data": digest,
    });
    let hash = hex::encode(&Sha256::digest(serde_json::to_vec(&key)?)[..8]);
    let dir = out.join(format!("{command}-{hash}"));
    fs::create_dir_all(&dir)?;
    write_once(&dir.join("config.json"), &to_json(&resolved)?)?;
    Ok(dir)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Writes `contents` unless the file already holds exactly that.
fn write_once(path: &Path, contents: &str) -> Result<()> {
    match fs::read(path) {
        Ok(old) if old == contents.as_bytes() => Ok(()),
        Ok(_) => Err(Error::input(format!("{} exists with different contents", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fs::write(path, contents)?),
        Err(e) => Err(e.into()),
    }
}

fn append_timing(dir: &Path, rows: &[(String, f64)]) -> Result<()> {
    let path = dir.join("timing.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        writeln!(f, "run,wall_time[s]")?;
    }
    for (k, t) in rows {
        writeln!(f, "{k},{t:.3}")?;
    }
    Ok(())
}

fn cmd_design(mut cfg: ExperimentConfig, a: DesignArgs) -> CliResult<()> {
    apply_common(&mut cfg, &a.common)?;
    if let Some(s) = a.strategy {
        cfg.strategy = Some(s);
    }
    if let Some(n) = a.n {
        cfg.n_sensors = Some(n);
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    if let Some(f) = &a.fixed {
        cfg.fixed = Some(f.clone());
    }
    if cfg.seeds.is_empty() {
        cfg.seeds = vec![cfg.optimizer.seed];
    }
    let strategy = cfg.strategy.ok_or_else(|| Error::input("--strategy is required"))?;
    let n = cfg.n_sensors.ok_or_else(|| Error::input("--n is required"))?;
    let fixed = cfg.fixed.as_deref().map(read_design).transpose()?;
    let loaded = load_data(&cfg)?;
    let (train, _) = split(&loaded.data, &cfg)?;
    check_budget(&train, n, fixed.as_ref())?;
    let kernel = cfg.kernel.clone().unwrap_or_else(default_kernel);
    let dir = run_dir("design", &cfg, &loaded.digest)?;

    let results: Vec<CliResult<(u64, SensorDesign, FitResult, f64)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let oc = OptimizerConfig { seed, ..cfg.optimizer.clone() };
            let (design, fit) = run_strategy(strategy, &train, &kernel, n, fixed.as_ref(), &oc).map_err(numerical)?;
            write_once(&dir.join(format!("design_seed{seed}.json")), &design.to_json()?)?;
            write_once(&dir.join(format!("fit_seed{seed}.json")), &to_json(&fit)?)?;
            Ok((seed, design, fit, start.elapsed().as_secs_f64()))
        })
        .collect();
    let results: Vec<_> = results.into_iter().collect::<CliResult<_>>()?;

    let mut summary = String::from("seed,n_sensors,elbo[nats]\n");
    for (seed, design, fit, _) in &results {
        writeln!(summary, "{seed},{},{}", design.len(), fit.elbo).unwrap();
    }
    write_once(&dir.join("summary.csv"), &summary)?;
    append_timing(&dir, &results.iter().map(|r| (format!("seed{}", r.0), r.3)).collect::<Vec<_>>())?;
    for (seed, _, fit, t) in &results {
        println!("{} seed {seed}: elbo = {:.6}, {t:.2} s", strategy.name(), fit.elbo);
    }
    println!("{}", dir.display());
    Ok(())
}

/// Runs one strategy; every strategy also returns hyperparameters fitted on
/// `train`, with its design held fixed for the non-MIL strategies.
pub fn run_strategy(
    strategy: Strategy,
    train: &GridDataset,
    kernel: &KernelSpec,
    n: usize,
    fixed: Option<&SensorDesign>,
    cfg: &OptimizerConfig,
) -> Result<(SensorDesign, FitResult)> {
    let grid = &train.spatial_locations;
    let keep = |d: SensorDesign| -> Result<SensorDesign> {
        match fixed {
            None => Ok(d),
            Some(f) => {
                // Baselines ignore the fixed sensors when sampling; drop their duplicates.
                let mut locations = f.locations.clone();
                locations.extend(d.locations.into_iter().filter(|p| !f.locations.contains(p)));
                locations.truncate(n);
                let mut flags = vec![true; f.len()];
                flags.resize(locations.len(), false);
                Ok(SensorDesign { locations, fixed: flags, ..d })
            }
        }
    };
    let design = match strategy {
        Strategy::Mil => return mil_design(train, kernel, n, fixed, cfg),
        Strategy::Uniform => keep(uniform_design(grid, n, cfg.seed)?)?,
        Strategy::Lhs => keep(lhs_design(grid, n, cfg.seed)?)?,
        Strategy::Mes | Strategy::Imse => {
            let init = fixed.cloned().unwrap_or_else(|| SensorDesign::new(strategy.name(), cfg.seed, Vec::new()));
            let n_add = n.checked_sub(init.len()).filter(|k| *k > 0).ok_or_else(|| {
                Error::input(format!("--n {n} leaves no room beside {} fixed sensors", init.len()))
            })?;
            // Hyperparameters come from a fit on a uniform design of the same size.
            let pilot = uniform_design(grid, n, cfg.seed)?;
            let pilot_fit = fit_with_fixed_design(train, kernel, &pilot, cfg)?;
            match strategy {
                Strategy::Mes => {
                    let hull = convex_hull(grid)?;
                    mes_design(train, &pilot_fit, n_add, &init, &hull, cfg)?
                }
                _ => imse_design(train, &pilot_fit, n_add, &init, None, cfg)?,
            }
        }
    };
    let fit = fit_with_fixed_design(train, kernel, &design, cfg)?;
    Ok((design, fit))
}

fn cmd_evaluate(mut cfg: ExperimentConfig, a: EvaluateArgs) -> CliResult<()> {
    apply_common(&mut cfg, &a.common)?;
    let design = read_design(&a.design)?;
    let other = a.compare.as_deref().map(read_design).transpose()?;
    let given_fit: Option<FitResult> = match &a.fit {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let loaded = load_data(&cfg)?;
    let (train, test) = split(&loaded.data, &cfg)?;
    let idx = design.grid_indices(&train.spatial_locations)?;
    let named = if a.locations.is_empty() { idx.clone() } else { a.locations.clone() };
    if let Some(&bad) = named.iter().find(|&&j| j >= train.n_space()) {
        return Err(Error::input(format!("location index {bad} is outside the grid")).into());
    }

    // The run is identified by everything that feeds it, inputs included.
    let mut digest = loaded.digest.clone();
    digest.push_str(&design.to_json()?);
    if let Some(f) = &given_fit {
        digest.push_str(&to_json(f)?);
    }
    if let Some(o) = &other {
        digest.push_str(&o.to_json()?);
    }
    write!(digest, "{named:?}{}", a.threshold).unwrap();
    let dir = run_dir("evaluate", &cfg, &digest)?;

    let kernel = cfg.kernel.clone().unwrap_or_else(default_kernel);
    let fit = match given_fit {
        Some(f) => f,
        None => fit_with_fixed_design(&train, &kernel, &design, &cfg.optimizer).map_err(numerical)?,
    };
    let opts = EvalOptions { threshold: a.threshold, ..EvalOptions::default() };
    let eval = evaluate_design(&train, &test, &design, &fit, opts).map_err(numerical)?;
    let units = &train.metadata.units;
    let (vu, tu, su) = (&units.value, &units.time, &units.space);

    write_once(&dir.join("report.json"), &to_json(&eval.report)?)?;
    if a.fit.is_none() {
        write_once(&dir.join("fit.json"), &to_json(&fit)?)?;
    }
    write_once(&dir.join("calibration.csv"), &eval.report.calibration_csv())?;

    let mut s = format!("x1[{su}],x2[{su}],rmse[{vu}]\n");
    for (p, r) in test.spatial_locations.iter().zip(&eval.rmse_per_location) {
        writeln!(s, "{},{},{r}", p[0], p[1]).unwrap();
    }
    write_once(&dir.join("rmse_per_location.csv"), &s)?;

    let mut s = format!("x1[{su}],x2[{su}],extreme_error_rate,max_abs_error[{vu}]\n");
    for (j, p) in test.spatial_locations.iter().enumerate() {
        let max = (0..test.n_time())
            .filter(|&t| test.mask[(t, j)])
            .map(|t| (eval.mean[(t, j)] - test.values[(t, j)]).abs())
            .fold(0.0, f64::max);
        writeln!(s, "{},{},{},{max}", p[0], p[1], eval.report.extreme_error_rate[j]).unwrap();
    }
    write_once(&dir.join("extreme_error_map.csv"), &s)?;

    let mut s = format!("t[{tu}],location,x1[{su}],x2[{su}],truth[{vu}],mean[{vu}],sd[{vu}],error[{vu}]\n");
    for &j in &named {
        let p = test.spatial_locations[j];
        for t in (0..test.n_time()).filter(|&t| test.mask[(t, j)]) {
            let (y, m) = (test.values[(t, j)], eval.mean[(t, j)]);
            writeln!(s, "{},{j},{},{},{y},{m},{},{}", test.times[t], p[0], p[1], eval.var[(t, j)].sqrt(), m - y).unwrap();
        }
    }
    write_once(&dir.join("error_series.csv"), &s)?;

    if let Some(o) = &other {
        write_once(&dir.join("distance.json"), &to_json(&design_distance(&design, o)?)?)?;
    }
    println!(
        "rmse = {:.6} {vu}, npll = {:.6}, miscalibration area = {:.6}",
        eval.report.rmse, eval.report.npll, eval.report.miscalibration_area
    );
    println!("{}", dir.display());
    Ok(())
}

fn cmd_ablate_noise(mut cfg: ExperimentConfig, a: AblateArgs) -> CliResult<()> {
    apply_common(&mut cfg, &a.common)?;
    if let Some(n) = a.n {
        cfg.n_sensors = Some(n);
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    let mut grid = cfg.ablation.clone().unwrap_or_default();
    if !a.ell_s.is_empty() {
        grid.ell_s = a.ell_s.clone();
    }
    if !a.ell_t.is_empty() {
        grid.ell_t = a.ell_t.clone();
    }
    if !a.vars.is_empty() {
        grid.var = a.vars.clone();
    }
    cfg.ablation = Some(grid.clone());
    cfg.strategy = Some(Strategy::Mil);
    let n = *cfg.n_sensors.get_or_insert(9);
    if cfg.seeds.is_empty() {
        cfg.seeds = (0..10).collect();
    }
    let loaded = load_data(&cfg)?;
    let (train, test) = split(&loaded.data, &cfg)?;
    check_budget(&train, n, None)?;
    let kernel = cfg.kernel.clone().unwrap_or_else(default_kernel);
    let mut digest = loaded.digest.clone();
    write!(digest, "{}", a.threshold).unwrap();
    let dir = run_dir("ablate-noise", &cfg, &digest)?;

    let start = Instant::now();
    let opts = EvalOptions { threshold: a.threshold, ..EvalOptions::default() };
    let (golden, rows) =
        ablate_noise(&train, &test, &kernel, n, &grid.cells(), &cfg.seeds, &cfg.optimizer, opts).map_err(numerical)?;
    let units = &train.metadata.units;
    let (vu, tu) = (&units.value, &units.time);

    write_once(&dir.join("golden_fit.json"), &to_json(&golden)?)?;
    let mut s = format!("ell_s[normalized],ell_t[{tu}],var[{vu}^2],seed,rmse[{vu}],npll[nats]\n");
    for r in &rows {
        writeln!(s, "{},{},{},{},{},{}", r.ell_s, r.ell_t, r.var, r.seed, r.rmse, r.npll).unwrap();
    }
    write_once(&dir.join("ablation.csv"), &s)?;
    let mut s = format!(
        "ell_s[normalized],ell_t[{tu}],var[{vu}^2],n,rmse_mean[{vu}],rmse_std[{vu}],npll_mean[nats],npll_std[nats]\n"
    );
    for c in summarize_ablation(&rows) {
        writeln!(s, "{},{},{},{},{},{},{},{}", c.ell_s, c.ell_t, c.var, c.n, c.rmse_mean, c.rmse_std, c.npll_mean, c.npll_std)
            .unwrap();
    }
    write_once(&dir.join("ablation_summary.csv"), &s)?;
    append_timing(&dir, &[("ablation".into(), start.elapsed().as_secs_f64())])?;
    print!("{s}");
    println!("{}", dir.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let d = design_distance(&read_design(&a.a)?, &read_design(&a.b)?)?;
    let json = to_json(&d)?;
    match &a.out {
        Some(p) => write_once(p, &json)?,
        None => print!("{json}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_range_parsing() {
        assert_eq!("3..10".parse::<TimeRange>().unwrap(), TimeRange { start: 3, end: 10 });
        assert!("3-10".parse::<TimeRange>().is_err());
        assert!("a..1".parse::<TimeRange>().is_err());
    }

    #[test]
    fn config_round_trip_and_unknown_fields() {
        let cfg = ExperimentConfig {
            strategy: Some(Strategy::Lhs),
            n_sensors: Some(4),
            seeds: vec![1, 2],
            kernel: Some(default_kernel()),
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"strategy":"mil","bogus":1}"#).is_err());
    }

    #[test]
    fn write_once_refuses_changes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_once(&p, "x").unwrap();
        write_once(&p, "x").unwrap();
        assert!(write_once(&p, "y").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["milsense", "gen-data", "--kind", "two_regime"]), 1);
        assert_eq!(run(["milsense", "frobnicate"]), 1);
        assert_eq!(run(["milsense", "--help"]), 0);
    }
}
