//! Costs, ε checks, open-loop comparisons and method sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ae::{fit_ae, AeConfig, AeReducer};
use crate::dnn::{fit_dnn, DnnConfig, DnnReducer};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kpca::{fit_kpca_basis, KernelSpec, KpcaBasis, KpcaReducer};
use crate::model::{vectorize, AffineLpvModel, TrajectoryDataset};
use crate::nn::TrainTrace;
use crate::pca::{fit_pca, PcaReducer};
use crate::reducer::{Method, SchedulingMap};
use crate::refit::fit_affine_matrices;
use crate::simulation::{default_excitation, simulate_lpv, LpvSimulation};

fn check_pair(model: &AffineLpvModel, reduced: &AffineLpvModel, gamma: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<()> {
    if model.rows() != reduced.rows() || model.cols() != reduced.cols() {
        return Err(Error::dim("reduced model has different matrix dimensions"));
    }
    if gamma.nrows() != model.n_rho() || phi.nrows() != reduced.n_rho() {
        return Err(Error::dim(format!(
            "data rows ({}, {}) do not match scheduling dimensions ({}, {})",
            gamma.nrows(),
            phi.nrows(),
            model.n_rho(),
            reduced.n_rho()
        )));
    }
    if gamma.ncols() != phi.ncols() || gamma.ncols() == 0 {
        return Err(Error::dim("scheduling and latent data need the same nonzero sample count"));
    }
    Ok(())
}

/// `vec(M(ρ_j) − M̂(φ_j))` for every sample, one column each.
fn vectorized_residuals(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_pair(model, reduced, gamma, phi)?;
    let offset = vectorize(model.m0()) - vectorize(reduced.m0());
    let mut r = model.coeff_matrix() * gamma - reduced.coeff_matrix() * phi;
    for mut col in r.column_iter_mut() {
        col += &offset;
    }
    Ok(r)
}

/// `(1/N) Σ_j ‖M(ρ_j) − M̂(φ_j)‖²_F`.
pub fn frobenius_cost(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<f64> {
    let r = vectorized_residuals(model, reduced, gamma, phi)?;
    Ok(r.norm_squared() / gamma.ncols() as f64)
}

/// `‖M(ρ_j) − M̂(φ_j)‖_F` per sample.
pub fn sample_errors(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let r = vectorized_residuals(model, reduced, gamma, phi)?;
    Ok(r.column_iter().map(|c| c.norm()).collect())
}

/// Mean `‖M(ρ_j)‖²_F`, the scale costs are compared against.
pub fn mean_model_norm(model: &AffineLpvModel, gamma: &DMatrix<f64>) -> Result<f64> {
    if gamma.nrows() != model.n_rho() || gamma.ncols() == 0 {
        return Err(Error::dim("scheduling data does not match the model"));
    }
    let mut full = model.coeff_matrix() * gamma;
    let m0 = vectorize(model.m0());
    for mut col in full.column_iter_mut() {
        col += &m0;
    }
    Ok(full.norm_squared() / gamma.ncols() as f64)
}

/// Schedule, input, initial state and the full-model response.
type OpenLoopBaseline = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, LpvSimulation);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCheck {
    pub passed: bool,
    pub worst_index: usize,
    pub worst_error: f64,
}

/// Passes iff every sample error is strictly below `epsilon`.
pub fn epsilon_check(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    epsilon: f64,
) -> Result<EpsilonCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let errors = sample_errors(model, reduced, gamma, phi)?;
    let (worst_index, worst_error) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(EpsilonCheck {
        passed: worst_error < epsilon,
        worst_index,
        worst_error,
    })
}

/// `√(Σ_k |z_k|²) / √(Σ_k |w_k|²)` over equally long sampled signals
/// (channels × samples). The sample time cancels and is not needed.
pub fn signal_gain_ratio(z: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    if z.ncols() != w.ncols() {
        return Err(Error::dim(format!(
            "signals have {} and {} samples",
            z.ncols(),
            w.ncols()
        )));
    }
    let den = w.norm();
    if !(den > 0.0) {
        return Err(Error::invalid("reference signal has zero energy"));
    }
    Ok(z.norm() / den)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopError {
    pub output_rms: f64,
    pub output_peak: f64,
    pub state_rms: f64,
    pub state_peak: f64,
}

fn difference_norms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let d = a - b;
    let peak = d.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    (d.norm() / (d.ncols() as f64).sqrt(), peak)
}

fn compare_simulations(full: &LpvSimulation, reduced: &LpvSimulation) -> OpenLoopError {
    let (output_rms, output_peak) = difference_norms(&full.outputs, &reduced.outputs);
    let (state_rms, state_peak) = difference_norms(&full.states, &reduced.states);
    OpenLoopError {
        output_rms,
        output_peak,
        state_rms,
        state_peak,
    }
}

/// Simulates the full model on `schedule` and the reduced model on
/// `map(schedule)` under the same input and initial state.
#[allow(clippy::too_many_arguments)]
pub fn open_loop_error(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    map: &dyn SchedulingMap,
    schedule: &DMatrix<f64>,
    input: &DMatrix<f64>,
    x0: &DVector<f64>,
    sample_time: f64,
    exec: Exec,
) -> Result<OpenLoopError> {
    let full = simulate_lpv(model, schedule, input, x0, sample_time)?;
    let phi = map.map_batch(schedule, exec)?;
    let red = simulate_lpv(reduced, &phi, input, x0, sample_time)?;
    Ok(compare_simulations(&full, &red))
}

/// Schedule, input and zero initial state for an open-loop comparison over
/// the first `horizon` seconds of a dataset.
pub fn open_loop_setup(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    horizon: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("open-loop horizon must be positive"));
    }
    let ts = dataset.sample_time();
    let k = ((horizon / ts).round() as usize + 1).min(dataset.n_samples());
    let schedule = dataset.gamma().columns(0, k).into_owned();
    let input = DMatrix::from_fn(model.nu(), k, |i, j| {
        let u = default_excitation(j as f64 * ts);
        u.get(i).copied().unwrap_or(0.0)
    });
    Ok((schedule, input, DVector::zeros(model.nx())))
}

/// A fitted reducer of any method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Reducer {
    Pca(PcaReducer),
    Kpca(KpcaReducer),
    Ae(AeReducer),
    Dnn(DnnReducer),
}

impl Reducer {
    pub fn method(&self) -> Method {
        match self {
            Reducer::Pca(_) => Method::Pca,
            Reducer::Kpca(_) => Method::Kpca,
            Reducer::Ae(_) => Method::Ae,
            Reducer::Dnn(_) => Method::Dnn,
        }
    }

    fn inner(&self) -> &dyn SchedulingMap {
        match self {
            Reducer::Pca(r) => r,
            Reducer::Kpca(r) => r,
            Reducer::Ae(r) => r,
            Reducer::Dnn(r) => r,
        }
    }
}

impl SchedulingMap for Reducer {
    fn n_rho(&self) -> usize {
        self.inner().n_rho()
    }

    fn n_phi(&self) -> usize {
        self.inner().n_phi()
    }

    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner().map(rho)
    }
}

/// Per-method settings shared by `reduce` and `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub kpca_kernel: KernelSpec,
    pub ae: AeConfig,
    pub dnn: DnnConfig,
    /// Refit `M̂_0` together with the `M̂_i` (KPCA and AE).
    pub include_intercept: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            kpca_kernel: KernelSpec::default(),
            ae: AeConfig::default(),
            dnn: DnnConfig::default(),
            include_intercept: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub reducer: Reducer,
    pub reduced_model: AffineLpvModel,
    pub cost: f64,
    pub trace: Option<TrainTrace>,
    pub discarded_negative: Option<usize>,
    pub rank_deficient: Option<bool>,
    pub warm_started: Option<bool>,
}

/// Fits one reduction and its reduced model. `seed` drives AE/DNN init.
pub fn fit_method(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    method: Method,
    n_phi: usize,
    seed: u64,
    config: &MethodConfig,
    exec: Exec,
) -> Result<Fitted> {
    fit_with_cache(model, dataset, method, n_phi, seed, config, exec, None)
}

#[allow(clippy::too_many_arguments)]
fn fit_with_cache(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    method: Method,
    n_phi: usize,
    seed: u64,
    config: &MethodConfig,
    exec: Exec,
    kpca_basis: Option<&KpcaBasis>,
) -> Result<Fitted> {
    dataset.check_model(model)?;
    let gamma = dataset.gamma();
    let mut fitted = match method {
        Method::Pca => {
            let r = fit_pca(dataset, n_phi)?;
            let reduced_model = r.reduced_model(model)?;
            Fitted {
                reducer: Reducer::Pca(r),
                reduced_model,
                cost: 0.0,
                trace: None,
                discarded_negative: None,
                rank_deficient: None,
                warm_started: None,
            }
        }
        Method::Kpca => {
            let r = match kpca_basis {
                Some(b) => b.reducer(n_phi)?,
                None => fit_kpca_basis(dataset, &config.kpca_kernel, exec)?.reducer(n_phi)?,
            };
            let phi = r.map_batch(gamma, exec)?;
            let refit = fit_affine_matrices(model, gamma, &phi, config.include_intercept)?;
            Fitted {
                discarded_negative: Some(r.discarded_negative()),
                reducer: Reducer::Kpca(r),
                reduced_model: refit.model,
                cost: 0.0,
                trace: None,
                rank_deficient: Some(refit.rank_deficient),
                warm_started: None,
            }
        }
        Method::Ae => {
            let mut cfg = config.ae.clone();
            cfg.train.rng_seed = seed;
            let fit = fit_ae(dataset, n_phi, &cfg, exec)?;
            let refit = fit.reducer.reduced_model(model, gamma, config.include_intercept, exec)?;
            Fitted {
                reducer: Reducer::Ae(fit.reducer),
                reduced_model: refit.model,
                cost: 0.0,
                trace: Some(fit.trace),
                discarded_negative: None,
                rank_deficient: Some(refit.rank_deficient),
                warm_started: None,
            }
        }
        Method::Dnn => {
            let mut cfg = config.dnn.clone();
            cfg.train.rng_seed = seed;
            let fit = fit_dnn(model, dataset, n_phi, &cfg, exec)?;
            let reduced_model = fit.reducer.extract_reduced_model()?;
            Fitted {
                reducer: Reducer::Dnn(fit.reducer),
                reduced_model,
                cost: 0.0,
                trace: Some(fit.trace),
                discarded_negative: None,
                rank_deficient: None,
                warm_started: Some(fit.warm_started),
            }
        }
    };
    let phi = fitted.reducer.map_batch(gamma, exec)?;
    fitted.cost = frobenius_cost(model, &fitted.reduced_model, gamma, &phi)?;
    Ok(fitted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub n_phi: Vec<usize>,
    /// Runs per cell for AE and DNN; PCA and KPCA run once.
    pub seeds: usize,
    pub base_seed: u64,
    /// Worker threads for independent cells; 1 runs them in order.
    pub jobs: usize,
    pub methods_config: MethodConfig,
    /// Seconds of open-loop simulation per cell; 0 disables it.
    pub open_loop_horizon: f64,
    /// Loss-trace points kept per run.
    pub trace_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            n_phi: (1..=10).collect(),
            seeds: 5,
            base_seed: 0,
            jobs: 1,
            methods_config: MethodConfig::default(),
            open_loop_horizon: 5.0,
            trace_points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub n_phi: usize,
    pub status: CellStatus,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<String>,
    pub min_cost: Option<f64>,
    pub median_cost: Option<f64>,
    pub best_seed: Option<u64>,
    pub fit_seconds: f64,
    pub discarded_negative: Option<usize>,
    pub rank_deficient: Option<bool>,
    pub warm_started: Option<bool>,
    /// Open-loop differences for the best run.
    pub open_loop: Option<OpenLoopError>,
    /// `γ` of the best run's reduced-model output against the input.
    pub gain_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset_sha256: String,
    pub n_rho: usize,
    pub n_samples: usize,
    pub sample_time: f64,
    pub mean_model_norm: f64,
    /// `γ` of the full model's open-loop output against the input.
    pub full_gain_ratio: Option<f64>,
    pub config: SweepConfig,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<CellReport>,
}

pub fn dataset_hash(dataset: &TrajectoryDataset) -> Result<String> {
    let digest = Sha256::digest(dataset.to_csv_string()?.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn subsample(trace: &[f64], points: usize) -> Vec<f64> {
    if points == 0 || trace.is_empty() {
        return Vec::new();
    }
    if trace.len() <= points {
        return trace.to_vec();
    }
    (0..points)
        .map(|i| trace[i * (trace.len() - 1) / (points - 1).max(1)])
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

struct Job {
    cell: usize,
    seed: u64,
}

struct JobOutcome {
    seed: u64,
    result: std::result::Result<(Fitted, Option<OpenLoopError>, Option<f64>), String>,
    seconds: f64,
}

struct SweepContext<'a> {
    model: &'a AffineLpvModel,
    dataset: &'a TrajectoryDataset,
    config: &'a SweepConfig,
    exec: Exec,
    kpca: OnceLock<std::result::Result<KpcaBasis, String>>,
    open_loop: Option<OpenLoopBaseline>,
}

impl SweepContext<'_> {
    fn run(&self, method: Method, n_phi: usize, seed: u64) -> Result<(Fitted, Option<OpenLoopError>, Option<f64>)> {
        let mc = &self.config.methods_config;
        let basis = if method == Method::Kpca {
            let cached = self
                .kpca
                .get_or_init(|| fit_kpca_basis(self.dataset, &mc.kpca_kernel, self.exec).map_err(|e| e.to_string()));
            Some(cached.as_ref().map_err(|e| Error::invalid(e.clone()))?)
        } else {
            None
        };
        let fitted = fit_with_cache(self.model, self.dataset, method, n_phi, seed, mc, self.exec, basis)?;
        let (ol, gain) = match &self.open_loop {
            Some((schedule, input, x0, full)) => {
                let phi = fitted.reducer.map_batch(schedule, self.exec)?;
                let red = simulate_lpv(&fitted.reduced_model, &phi, input, x0, self.dataset.sample_time())?;
                let gain = signal_gain_ratio(&red.outputs, input).ok();
                (Some(compare_simulations(full, &red)), gain)
            }
            None => (None, None),
        };
        Ok((fitted, ol, gain))
    }
}

/// Fits every (method, n_φ) cell; per-cell failures are recorded, not fatal.
pub fn sweep(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    config: &SweepConfig,
    exec: Exec,
) -> Result<EvaluationReport> {
    if config.methods.is_empty() || config.n_phi.is_empty() {
        return Err(Error::invalid("sweep needs at least one method and one n_phi"));
    }
    if config.seeds == 0 {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    dataset.check_model(model)?;
    let mut full_gain = None;
    let open_loop = if config.open_loop_horizon > 0.0 {
        let (schedule, input, x0) = open_loop_setup(model, dataset, config.open_loop_horizon)?;
        let full = simulate_lpv(model, &schedule, &input, &x0, dataset.sample_time())?;
        full_gain = signal_gain_ratio(&full.outputs, &input).ok();
        Some((schedule, input, x0, full))
    } else {
        None
    };

    let cells: Vec<(Method, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| config.n_phi.iter().map(move |&k| (m, k)))
        .collect();
    let mut jobs = Vec::new();
    for (c, &(m, _)) in cells.iter().enumerate() {
        let runs = if m.is_stochastic() { config.seeds } else { 1 };
        for s in 0..runs {
            jobs.push(Job {
                cell: c,
                seed: config.base_seed + s as u64,
            });
        }
    }

    let inner_exec = if config.jobs > 1 { Exec::Sequential } else { exec };
    let ctx = SweepContext {
        model,
        dataset,
        config,
        exec: inner_exec,
        kpca: OnceLock::new(),
        open_loop,
    };
    let run_job = |j: &Job| {
        let (m, k) = cells[j.cell];
        let start = Instant::now();
        let result = ctx.run(m, k, j.seed).map_err(|e| e.to_string());
        JobOutcome {
            seed: j.seed,
            result,
            seconds: start.elapsed().as_secs_f64(),
        }
    };
    let outcomes = run_jobs(&jobs, config.jobs, &run_job)?;

    let mut reports = Vec::with_capacity(cells.len());
    for (c, &(method, n_phi)) in cells.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        let mut seconds = 0.0;
        let mut best: Option<(f64, &Fitted, Option<OpenLoopError>, Option<f64>, u64)> = None;
        for (job, out) in jobs.iter().zip(&outcomes).filter(|(j, _)| j.cell == c) {
            seconds += out.seconds;
            match &out.result {
                Ok((fitted, ol, gain)) => {
                    let trace = fitted
                        .trace
                        .as_ref()
                        .map(|t| subsample(&t.data_losses, config.trace_points))
                        .unwrap_or_default();
                    runs.push(RunRecord {
                        seed: job.seed,
                        cost: fitted.cost,
                        trace,
                    });
                    if best.as_ref().is_none_or(|b| fitted.cost < b.0) {
                        best = Some((fitted.cost, fitted, *ol, *gain, out.seed));
                    }
                }
                Err(e) => failures.push(format!("seed {}: {e}", job.seed)),
            }
        }
        let mut costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
        costs.sort_by(f64::total_cmp);
        reports.push(CellReport {
            method,
            n_phi,
            status: if runs.is_empty() { CellStatus::Failed } else { CellStatus::Ok },
            min_cost: costs.first().copied(),
            median_cost: (!costs.is_empty()).then(|| median(&costs)),
            best_seed: best.as_ref().map(|b| b.4),
            fit_seconds: seconds,
            discarded_negative: best.as_ref().and_then(|b| b.1.discarded_negative),
            rank_deficient: best.as_ref().and_then(|b| b.1.rank_deficient),
            warm_started: best.as_ref().and_then(|b| b.1.warm_started),
            open_loop: best.as_ref().and_then(|b| b.2),
            gain_ratio: best.as_ref().and_then(|b| b.3),
            runs,
            failures,
        });
    }

    Ok(EvaluationReport {
        metadata: ReportMetadata {
            dataset_sha256: dataset_hash(dataset)?,
            n_rho: dataset.n_rho(),
            n_samples: dataset.n_samples(),
            sample_time: dataset.sample_time(),
            mean_model_norm: mean_model_norm(model, dataset.gamma())?,
            full_gain_ratio: full_gain,
            config: config.clone(),
            note: "open-loop errors and gain ratios are open-loop substitutes; closed-loop L2 gains are not computed"
                .to_string(),
        },
        cells: reports,
    })
}

#[cfg(feature = "parallel")]
fn run_jobs<F>(jobs: &[Job], threads: usize, f: &F) -> Result<Vec<JobOutcome>>
where
    F: Fn(&Job) -> JobOutcome + Sync,
{
    use rayon::prelude::*;
    if threads <= 1 {
        return Ok(jobs.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<F>(jobs: &[Job], _threads: usize, f: &F) -> Result<Vec<JobOutcome>>
where
    F: Fn(&Job) -> JobOutcome + Sync,
{
    Ok(jobs.iter().map(f).collect())
}

fn fmt_opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn sci(v: f64) -> String {
    format!("{v:.12e}")
}

impl EvaluationReport {
    pub fn cell(&self, method: Method, n_phi: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.n_phi == n_phi)
    }

    pub fn any_succeeded(&self) -> bool {
        self.cells.iter().any(|c| c.status == CellStatus::Ok)
    }

    /// One row per cell. Wall-clock times are left out so the file is
    /// reproducible.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "n_phi",
            "status",
            "runs",
            "min_cost",
            "median_cost",
            "relative_min_cost",
            "best_seed",
            "discarded_negative",
            "rank_deficient",
            "warm_started",
            "open_loop_output_rms",
            "open_loop_output_peak",
            "gain_ratio",
            "failures",
        ])?;
        let base = self.metadata.mean_model_norm;
        for c in &self.cells {
            w.write_record([
                c.method.name().to_string(),
                c.n_phi.to_string(),
                match c.status {
                    CellStatus::Ok => "ok".to_string(),
                    CellStatus::Failed => "failed".to_string(),
                },
                c.runs.len().to_string(),
                fmt_opt(c.min_cost, sci),
                fmt_opt(c.median_cost, sci),
                fmt_opt(c.min_cost.filter(|_| base > 0.0), |v| sci(v / base)),
                fmt_opt(c.best_seed, |s| s.to_string()),
                fmt_opt(c.discarded_negative, |d| d.to_string()),
                fmt_opt(c.rank_deficient, |b| b.to_string()),
                fmt_opt(c.warm_started, |b| b.to_string()),
                fmt_opt(c.open_loop, |o| sci(o.output_rms)),
                fmt_opt(c.open_loop, |o| sci(o.output_peak)),
                fmt_opt(c.gain_ratio, sci),
                c.failures.join("; "),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        std::fs::write(&json, self.to_json()?)?;
        std::fs::write(&csv, self.to_csv()?)?;
        Ok((json, csv))
    }
}
