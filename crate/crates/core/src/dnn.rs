//! ReLU encoder composed with a linear matrix-mapping layer. The weights of the
//! last layer are the reduced model: column `i` is `vec(M̂_i)` and the bias
//! shifts `vec(M̂_0)` away from `vec(M_0)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{rows, vectorize, AffineLpvModel, Normalizer, TrajectoryDataset};
use crate::nn::{self, Activation, DenseLayer, FeedforwardNet, TrainConfig, TrainTrace};
use crate::pca::fit_pca;
use crate::reducer::SchedulingMap;
use crate::refit::variation_targets;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnnConfig {
    /// Widths of the hidden relu layers before the latent layer.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Start from the PCA solution (needs every hidden width ≥ n_φ).
    pub warm_start: bool,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![5],
            train: TrainConfig {
                weight_decay: 1e-6,
                ..TrainConfig::default()
            },
            warm_start: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnnReducer {
    encoder: FeedforwardNet,
    matrix_layer: DenseLayer,
    normalizer: Normalizer,
    #[serde(with = "rows")]
    base_m0: DMatrix<f64>,
    nx: usize,
    nu: usize,
    ny: usize,
}

#[derive(Clone, Debug)]
pub struct DnnFit {
    pub reducer: DnnReducer,
    pub trace: TrainTrace,
    pub warm_started: bool,
    /// Frobenius cost of the initial parameters.
    pub initial_cost: f64,
}

/// Output data matrix `Λ`, one column `Σ_i vec(M_i) ρ_{j,i}` per sample.
pub fn build_targets(model: &AffineLpvModel, dataset: &TrajectoryDataset) -> Result<DMatrix<f64>> {
    dataset.check_model(model)?;
    variation_targets(model, dataset.gamma())
}

fn widths(n_rho: usize, hidden: &[usize], n_phi: usize, nu: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 3);
    w.push(n_rho);
    w.extend_from_slice(hidden);
    w.push(n_phi);
    w.push(nu);
    w
}

fn activations(hidden: usize) -> Vec<Activation> {
    let mut a = vec![Activation::Relu; hidden + 1];
    a.push(Activation::Linear);
    a
}

/// Network reproducing the PCA reduced model exactly on the normalized box.
///
/// The first layer computes `relu(u_kᵀx + c_k)` with `c_k = ‖u_k‖₁`, which is
/// never negative for `x ∈ [−1, 1]^{n_ρ}`. Later relu layers pass the first
/// `n_φ` units through unchanged and the matrix layer absorbs the shift.
/// Spare hidden units start with random inputs and zero outputs.
fn warm_start_net(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    hidden: &[usize],
    n_phi: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<FeedforwardNet>> {
    if hidden.iter().any(|&h| h < n_phi) {
        return Ok(None);
    }
    let pca = fit_pca(dataset, n_phi)?;
    let reduced = pca.reduced_model(model)?;
    let u = pca.basis();
    let shift = DVector::from_fn(n_phi, |k, _| u.column(k).lp_norm(1));

    let all = widths(dataset.n_rho(), hidden, n_phi, model.vec_len());
    let acts = activations(hidden.len());
    let mut layers = Vec::with_capacity(all.len() - 1);
    for (k, pair) in all.windows(2).enumerate() {
        let (inputs, outputs) = (pair[0], pair[1]);
        let mut layer = DenseLayer::glorot(inputs, outputs, acts[k], rng);
        if k + 1 == all.len() - 1 {
            let w_hat = reduced.coeff_matrix();
            let b = vectorize(reduced.m0()) - vectorize(model.m0()) - &w_hat * &shift;
            layer.weights = w_hat;
            layer.bias = b;
        } else {
            // Rows past n_φ keep their random weights; their outgoing columns
            // are zeroed by the next layer.
            for i in 0..outputs.min(n_phi) {
                layer.weights.row_mut(i).fill(0.0);
            }
            layer.bias.fill(0.0);
            for j in n_phi..inputs {
                layer.weights.column_mut(j).fill(0.0);
            }
            for i in 0..n_phi {
                if k == 0 {
                    layer.weights.row_mut(i).copy_from(&u.column(i).transpose());
                    layer.bias[i] = shift[i];
                } else {
                    layer.weights[(i, i)] = 1.0;
                }
            }
        }
        layers.push(layer);
    }
    Ok(Some(FeedforwardNet::new(layers)?))
}

pub fn fit_dnn(
    model: &AffineLpvModel,
    dataset: &TrajectoryDataset,
    n_phi: usize,
    config: &DnnConfig,
    exec: Exec,
) -> Result<DnnFit> {
    if n_phi == 0 {
        return Err(Error::invalid("n_phi must be at least 1"));
    }
    if config.hidden.contains(&0) {
        return Err(Error::invalid("hidden layer widths must be positive"));
    }
    config.train.validate()?;
    let targets = build_targets(model, dataset)?;
    let normalizer = Normalizer::fit(dataset.gamma())?;
    let inputs = normalizer.apply_matrix(dataset.gamma())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.rng_seed);

    let mut warm_started = false;
    let mut net = if config.warm_start {
        match warm_start_net(model, dataset, &config.hidden, n_phi, &mut rng)? {
            Some(net) => {
                warm_started = true;
                net
            }
            None => {
                log::warn!(
                    "warm start needs hidden widths >= n_phi = {n_phi}; falling back to random init"
                );
                FeedforwardNet::random(
                    &widths(dataset.n_rho(), &config.hidden, n_phi, model.vec_len()),
                    &activations(config.hidden.len()),
                    &mut rng,
                )?
            }
        }
    } else {
        FeedforwardNet::random(
            &widths(dataset.n_rho(), &config.hidden, n_phi, model.vec_len()),
            &activations(config.hidden.len()),
            &mut rng,
        )?
    };

    let mean = targets.column_mean();
    let constant = targets.column_iter().all(|c| c == mean);
    let (trace, initial_cost) = if constant {
        // Nothing to explain: the bias alone reproduces every sample.
        let last = net.layers().len() - 1;
        let layer = &mut net.layers_mut()[last];
        layer.weights.fill(0.0);
        layer.bias.copy_from(&mean);
        (TrainTrace::default(), 0.0)
    } else {
        let start = nn::evaluate_loss(&net, &inputs, &targets, &config.train, exec)?.data;
        (nn::train(&mut net, &inputs, &targets, &config.train, exec)?, start)
    };

    let mut layers = net.into_layers();
    let matrix_layer = layers.pop().expect("at least two layers");
    Ok(DnnFit {
        reducer: DnnReducer {
            encoder: FeedforwardNet::new(layers)?,
            matrix_layer,
            normalizer,
            base_m0: model.m0().clone(),
            nx: model.nx(),
            nu: model.nu(),
            ny: model.ny(),
        },
        trace,
        warm_started,
        initial_cost,
    })
}

impl DnnReducer {
    pub fn encoder(&self) -> &FeedforwardNet {
        &self.encoder
    }

    pub fn matrix_layer(&self) -> &DenseLayer {
        &self.matrix_layer
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Reads the reduced model off the matrix layer; no refit.
    pub fn extract_reduced_model(&self) -> Result<AffineLpvModel> {
        let m0 = vectorize(&self.base_m0) + &self.matrix_layer.bias;
        AffineLpvModel::from_vectorized(self.nx, self.nu, self.ny, &m0, &self.matrix_layer.weights)
    }
}

impl SchedulingMap for DnnReducer {
    fn n_rho(&self) -> usize {
        self.encoder.input_dim()
    }

    fn n_phi(&self) -> usize {
        self.encoder.output_dim()
    }

    /// `φ = encoder(normalize(ρ))`.
    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        self.encoder.predict_vector(&self.normalizer.apply(rho)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manipulator::{build_lpv_model, ManipulatorParams};
    use crate::nn::OptimizerKind;
    use rand::Rng;

    fn small_problem(n: usize) -> (AffineLpvModel, TrajectoryDataset) {
        let model = build_lpv_model(&ManipulatorParams::default());
        let gamma = DMatrix::from_fn(10, n, |i, j| {
            let t = j as f64 * 0.07;
            (t * (0.5 + 0.2 * i as f64)).sin() + 0.3 * (1.3 * t + i as f64).cos()
        });
        (model, TrajectoryDataset::new(gamma, 0.07).unwrap())
    }

    fn quick(epochs: usize) -> DnnConfig {
        DnnConfig {
            train: TrainConfig {
                epochs,
                ..DnnConfig::default().train
            },
            ..DnnConfig::default()
        }
    }

    fn frob_cost(model: &AffineLpvModel, reduced: &AffineLpvModel, r: &DnnReducer, gamma: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for j in 0..gamma.ncols() {
            let rho = gamma.column(j).into_owned();
            let phi = r.map(&rho).unwrap();
            total += (model.eval(&rho).unwrap() - reduced.eval(&phi).unwrap()).norm_squared();
        }
        total / gamma.ncols() as f64
    }

    #[test]
    fn targets_subtract_m0() {
        let (model, ds) = small_problem(20);
        let lam = build_targets(&model, &ds).unwrap();
        assert_eq!(lam.nrows(), 36);
        for j in 0..20 {
            let rho = ds.sample(j);
            let oracle = vectorize(&(model.eval(&rho).unwrap() - model.m0()));
            assert!((lam.column(j) - oracle).abs().max() < 1e-12);
        }
    }

    #[test]
    fn trains_below_variance_baseline_and_extraction_matches_loss() {
        let (model, ds) = small_problem(300);
        let fit = fit_dnn(&model, &ds, 1, &quick(800), Exec::Parallel).unwrap();
        let lam = build_targets(&model, &ds).unwrap();
        let mean = lam.column_mean();
        let variance: f64 = lam.column_iter().map(|c| (c - &mean).norm_squared()).sum::<f64>() / 300.0;
        let reduced = fit.reducer.extract_reduced_model().unwrap();
        let cost = frob_cost(&model, &reduced, &fit.reducer, ds.gamma());
        assert!(cost.is_finite() && cost < variance, "cost {cost} vs variance {variance}");
        let rel = (cost - fit.trace.final_loss.data).abs() / fit.trace.final_loss.data;
        assert!(rel < 1e-10, "relative mismatch {rel}");
        let phi = fit.reducer.map_batch(ds.gamma(), Exec::Sequential).unwrap();
        assert!(phi.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn warm_start_reproduces_pca_and_never_loses_to_it() {
        let (model, ds) = small_problem(250);
        let pca = fit_pca(&ds, 2).unwrap();
        let pca_model = pca.reduced_model(&model).unwrap();
        let mut pca_cost = 0.0;
        for j in 0..ds.n_samples() {
            let rho = ds.sample(j);
            let phi = pca.map(&rho).unwrap();
            pca_cost += (model.eval(&rho).unwrap() - pca_model.eval(&phi).unwrap()).norm_squared();
        }
        pca_cost /= ds.n_samples() as f64;

        let mut cfg = quick(300);
        cfg.warm_start = true;
        cfg.train.monotone = true;
        let fit = fit_dnn(&model, &ds, 2, &cfg, Exec::Sequential).unwrap();
        assert!(fit.warm_started);
        assert!(fit.initial_cost <= pca_cost + 1e-6, "{} vs {pca_cost}", fit.initial_cost);
        assert!(fit.trace.final_loss.data <= pca_cost + 1e-12);
        assert!(fit.trace.data_losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn warm_start_falls_back_when_too_narrow() {
        let (model, ds) = small_problem(60);
        let mut cfg = quick(5);
        cfg.warm_start = true;
        cfg.hidden = vec![2];
        let fit = fit_dnn(&model, &ds, 3, &cfg, Exec::Sequential).unwrap();
        assert!(!fit.warm_started);
    }

    #[test]
    fn zero_variance_dataset_gives_zero_cost() {
        let model = build_lpv_model(&ManipulatorParams::default());
        let ds = TrajectoryDataset::new(DMatrix::zeros(10, 30), 0.1).unwrap();
        let fit = fit_dnn(&model, &ds, 1, &quick(50), Exec::Sequential).unwrap();
        assert_eq!(fit.initial_cost, 0.0);
        let reduced = fit.reducer.extract_reduced_model().unwrap();
        assert_eq!(reduced.m0(), model.m0());
        assert!(reduced.coeffs().iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn map_matches_manual_composition() {
        let (model, ds) = small_problem(40);
        let mut cfg = quick(10);
        cfg.hidden = vec![4, 3];
        cfg.train.optimizer = OptimizerKind::Adam;
        let fit = fit_dnn(&model, &ds, 2, &cfg, Exec::Sequential).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = DVector::from_fn(10, |_, _| rng.gen_range(-1.5..1.5));
        let mut x = fit.reducer.normalizer().apply(&rho).unwrap();
        for l in fit.reducer.encoder().layers() {
            x = (&l.weights * &x + &l.bias).map(|z| z.max(0.0));
        }
        let phi = fit.reducer.map(&rho).unwrap();
        assert!((phi - &x).abs().max() < 1e-12);

        // Evaluating the extracted model is b + Wφ reshaped.
        let reduced = fit.reducer.extract_reduced_model().unwrap();
        let layer = fit.reducer.matrix_layer();
        let expected = vectorize(model.m0()) + &layer.bias + &layer.weights * &x;
        assert!((vectorize(&reduced.eval(&x).unwrap()) - expected).abs().max() < 1e-12);
    }

    #[test]
    fn fixed_seed_is_deterministic_and_serializes() {
        let (model, ds) = small_problem(80);
        let cfg = quick(40);
        let a = fit_dnn(&model, &ds, 2, &cfg, Exec::Parallel).unwrap();
        let b = fit_dnn(&model, &ds, 2, &cfg, Exec::Sequential).unwrap();
        assert_eq!(a.reducer, b.reducer);
        let json = serde_json::to_string(&a.reducer).unwrap();
        let back: DnnReducer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a.reducer);
    }
}
