//! Command-line interface.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 fit failure,
//! 4 every sweep cell failed, 5 a check failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checks::{run_suite, Suite};
use crate::error::Error;
use crate::evaluation::{fit_method, mean_model_norm, sweep, MethodConfig, SweepConfig};
use crate::exec::Exec;
use crate::manipulator::{build_lpv_model, ManipulatorParams};
use crate::model::{AffineLpvModel, TrajectoryDataset};
use crate::reducer::Method;
use crate::simulation::{generate_reference, generate_scheduling_data, ReferenceSpec};

/// Environment variable naming the directory searched for config files.
pub const CONFIG_DIR_ENV: &str = "LPV_SDR_CONFIG_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_SWEEP: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "lpv-sdr", version, about = "Scheduling dimension reduction for affine LPV models")]
pub struct Cli {
    /// Run every data-parallel kernel on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the manipulator scheduling dataset and LPV model.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset CSV path; the sidecar and model JSON are written next to it.
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Fit one reduction and write the reducer and reduced model.
    Reduce {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        nphi: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit a grid of methods and scheduling sizes and write a report.
    Sweep {
        /// Comma-separated, e.g. `pca,kpca,ae,dnn`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        methods: Vec<String>,
        /// Inclusive range `A..B`.
        #[arg(long = "nphi-range")]
        nphi_range: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the self-check suites.
    Check {
        /// embedding, gradients, centering or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Generate the benchmark dataset, sweep every method and write the report.
    ReproduceBenchmark {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "nphi-max", default_value_t = 10)]
        nphi_max: usize,
        /// Overrides the reference duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Overrides the epoch count of both neural methods.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// `generate` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub reference: ReferenceSpec,
    pub params: ManipulatorParams,
    /// Overrides `reference.duration`.
    pub duration: Option<f64>,
    /// Overrides `reference.sample_time`.
    pub sample_time: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            reference: ReferenceSpec::reference_1(),
            params: ManipulatorParams::default(),
            duration: None,
            sample_time: None,
        }
    }
}

impl GenerateConfig {
    pub fn spec(&self) -> ReferenceSpec {
        let mut spec = self.reference.clone();
        if let Some(d) = self.duration {
            spec.duration = d;
        }
        if let Some(t) = self.sample_time {
            spec.sample_time = t;
        }
        spec
    }
}

/// `reduce` and `sweep` configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub methods: MethodConfig,
    pub open_loop_horizon: Option<f64>,
    pub trace_points: Option<usize>,
    /// Used when no dataset file is given.
    pub generate: GenerateConfig,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn fit(e: Error) -> Self {
        Self {
            code: EXIT_FIT,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn resolve_config(path: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    match path {
        Some(p) => {
            if p.is_relative() && !p.exists() {
                if let Some(d) = &dir {
                    let candidate = d.join(p);
                    if candidate.exists() {
                        return Some(candidate);
                    }
                }
            }
            Some(p.to_path_buf())
        }
        None => dir.map(|d| d.join(default_name)).filter(|p| p.exists()),
    }
}

/// Overlays `user` onto `base`. Objects merge key by key, except tagged
/// objects (with a `kind` key) which replace the default outright.
fn merge_json(base: &mut serde_json::Value, user: serde_json::Value) {
    use serde_json::Value;
    match (base, user) {
        (Value::Object(b), Value::Object(u)) if !u.contains_key("kind") => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn load_config<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>, default_name: &str) -> CliResult<T> {
    let Some(path) = resolve_config(path, default_name) else {
        return Ok(T::default());
    };
    let bad = |e: &dyn std::fmt::Display| Failure::usage(format!("config {}: {e}", path.display()));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let user: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
    if !user.is_object() {
        return Err(bad(&"expected a JSON object"));
    }
    // Partial nested sections keep the defaults of their own method.
    let mut merged = serde_json::to_value(T::default()).map_err(|e| bad(&e))?;
    merge_json(&mut merged, user);
    serde_json::from_value(merged).map_err(|e| bad(&e))
}

fn model_path(csv: &Path) -> PathBuf {
    csv.with_extension("model.json")
}

fn generate_data(cfg: &GenerateConfig, exec: Exec) -> CliResult<(AffineLpvModel, TrajectoryDataset)> {
    let spec = cfg.spec();
    spec.validate().map_err(|e| Failure::usage(format!("config: {e}")))?;
    let reference = generate_reference(&spec).map_err(|e| Failure::usage(e.to_string()))?;
    let dataset = generate_scheduling_data(&cfg.params, &reference, exec).map_err(Failure::fit)?;
    Ok((build_lpv_model(&cfg.params), dataset))
}

fn load_inputs(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    model: Option<&Path>,
    exec: Exec,
) -> CliResult<(AffineLpvModel, TrajectoryDataset)> {
    let dataset_path = dataset.map(Path::to_path_buf).or_else(|| cfg.dataset.clone());
    let model_file = model.map(Path::to_path_buf).or_else(|| cfg.model.clone());
    match dataset_path {
        Some(csv) => {
            let ds = TrajectoryDataset::load(&csv)
                .map_err(|e| Failure::usage(format!("dataset {}: {e}", csv.display())))?;
            let mpath = model_file.unwrap_or_else(|| model_path(&csv));
            let model = AffineLpvModel::load(&mpath)
                .map_err(|e| Failure::usage(format!("model {}: {e}", mpath.display())))?;
            ds.check_model(&model).map_err(|e| Failure::usage(e.to_string()))?;
            Ok((model, ds))
        }
        None => {
            let (default_model, ds) = generate_data(&cfg.generate, exec)?;
            let model = match model_file {
                Some(p) => AffineLpvModel::load(&p)
                    .map_err(|e| Failure::usage(format!("model {}: {e}", p.display())))?,
                None => default_model,
            };
            ds.check_model(&model).map_err(|e| Failure::usage(e.to_string()))?;
            Ok((model, ds))
        }
    }
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_FIT,
        message: format!("write failed: {e}"),
    }
}

fn cmd_generate(config: Option<&Path>, out: &Path, exec: Exec) -> CliResult<()> {
    let cfg: GenerateConfig = load_config(config, "generate.json")?;
    let (model, dataset) = generate_data(&cfg, exec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    dataset.save(out).map_err(io)?;
    model.save(model_path(out)).map_err(io)?;
    println!("N={} n_rho={}", dataset.n_samples(), dataset.n_rho());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_reduce(
    method: Method,
    nphi: usize,
    config: Option<&Path>,
    out: &Path,
    seed: u64,
    dataset: Option<&Path>,
    model: Option<&Path>,
    exec: Exec,
) -> CliResult<()> {
    let cfg: RunConfig = load_config(config, "reduce.json")?;
    let (model, ds) = load_inputs(&cfg, dataset, model, exec)?;
    let fitted = fit_method(&model, &ds, method, nphi, seed, &cfg.methods, exec).map_err(Failure::fit)?;
    std::fs::create_dir_all(out).map_err(io)?;
    let reducer_json = serde_json::to_string_pretty(&fitted.reducer).map_err(io)?;
    std::fs::write(out.join("reducer.json"), reducer_json).map_err(io)?;
    fitted.reduced_model.save(out.join("reduced_model.json")).map_err(io)?;
    let base = mean_model_norm(&model, ds.gamma()).map_err(Failure::fit)?;
    println!(
        "method={} n_phi={} cost={:.12e} relative_cost={:.12e}",
        method,
        nphi,
        fitted.cost,
        if base > 0.0 { fitted.cost / base } else { 0.0 }
    );
    Ok(())
}

fn parse_range(s: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::usage(format!("invalid n_phi range '{s}', expected A..B"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn parse_methods(list: &[String]) -> CliResult<Vec<Method>> {
    let methods = list
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Method>().map_err(|e| Failure::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Failure::usage("the method list is empty"));
    }
    Ok(methods)
}

fn run_sweep(
    model: &AffineLpvModel,
    ds: &TrajectoryDataset,
    cfg: SweepConfig,
    out: &Path,
    exec: Exec,
) -> CliResult<()> {
    let report = sweep(model, ds, &cfg, exec).map_err(|e| Failure::usage(e.to_string()))?;
    let (json, csv) = report.write(out).map_err(io)?;
    for cell in &report.cells {
        match cell.min_cost {
            Some(c) => println!("{} n_phi={} min_cost={:.6e}", cell.method, cell.n_phi, c),
            None => println!("{} n_phi={} failed: {}", cell.method, cell.n_phi, cell.failures.join("; ")),
        }
    }
    println!("wrote {} and {}", json.display(), csv.display());
    if !report.any_succeeded() {
        return Err(Failure {
            code: EXIT_SWEEP,
            message: "every sweep cell failed".into(),
        });
    }
    Ok(())
}

fn sweep_config(cfg: &RunConfig, methods: Vec<Method>, n_phi: Vec<usize>, seeds: usize, seed: u64, jobs: usize) -> SweepConfig {
    let defaults = SweepConfig::default();
    SweepConfig {
        methods,
        n_phi,
        seeds,
        base_seed: seed,
        jobs: jobs.max(1),
        methods_config: cfg.methods.clone(),
        open_loop_horizon: cfg.open_loop_horizon.unwrap_or(defaults.open_loop_horizon),
        trace_points: cfg.trace_points.unwrap_or(defaults.trace_points),
    }
}

fn cmd_check(suite: &str, exec: Exec) -> CliResult<()> {
    let suite: Suite = suite.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let results = run_suite(suite, exec).map_err(|e| Failure {
        code: EXIT_CHECK,
        message: e.to_string(),
    })?;
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            message: format!("failed properties: {}", failed.join(", ")),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_reproduce(
    out: &Path,
    seed: u64,
    seeds: usize,
    jobs: usize,
    nphi_max: usize,
    duration: Option<f64>,
    epochs: Option<usize>,
    config: Option<&Path>,
    exec: Exec,
) -> CliResult<()> {
    let mut cfg: RunConfig = load_config(config, "reproduce.json")?;
    if let Some(d) = duration {
        cfg.generate.duration = Some(d);
    }
    if let Some(e) = epochs {
        cfg.methods.ae.train.epochs = e;
        cfg.methods.dnn.train.epochs = e;
    }
    if nphi_max == 0 {
        return Err(Failure::usage("--nphi-max must be at least 1"));
    }
    let (model, ds) = generate_data(&cfg.generate, exec)?;
    std::fs::create_dir_all(out).map_err(io)?;
    let csv = out.join("dataset.csv");
    ds.save(&csv).map_err(io)?;
    model.save(model_path(&csv)).map_err(io)?;
    println!("N={} n_rho={}", ds.n_samples(), ds.n_rho());
    let n_phi = (1..=nphi_max.min(ds.n_rho())).collect();
    let scfg = sweep_config(&cfg, Method::ALL.to_vec(), n_phi, seeds, seed, jobs);
    run_sweep(&model, &ds, scfg, out, exec)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Generate { config, out } => cmd_generate(config.as_deref(), &out, exec),
        Command::Reduce {
            method,
            nphi,
            config,
            out,
            seed,
            dataset,
            model,
        } => cmd_reduce(method, nphi, config.as_deref(), &out, seed, dataset.as_deref(), model.as_deref(), exec),
        Command::Sweep {
            methods,
            nphi_range,
            seeds,
            seed,
            out,
            jobs,
            config,
            dataset,
            model,
        } => {
            let methods = parse_methods(&methods)?;
            let n_phi = parse_range(&nphi_range)?;
            if seeds == 0 {
                return Err(Failure::usage("--seeds must be at least 1"));
            }
            let cfg: RunConfig = load_config(config.as_deref(), "sweep.json")?;
            let (model, ds) = load_inputs(&cfg, dataset.as_deref(), model.as_deref(), exec)?;
            if n_phi.iter().any(|&k| k > ds.n_rho()) {
                return Err(Failure::usage(format!("n_phi range exceeds n_rho = {}", ds.n_rho())));
            }
            let scfg = sweep_config(&cfg, methods, n_phi, seeds, seed, jobs);
            run_sweep(&model, &ds, scfg, &out, exec)
        }
        Command::Check { suite } => cmd_check(&suite, exec),
        Command::ReproduceBenchmark {
            out,
            seed,
            seeds,
            jobs,
            nphi_max,
            duration,
            epochs,
            config,
        } => cmd_reproduce(&out, seed, seeds, jobs, nphi_max, duration, epochs, config.as_deref(), exec),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
