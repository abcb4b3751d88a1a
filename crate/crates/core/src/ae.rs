//! Two-layer autoencoder reduction. The reduced model comes from an affine
//! refit on the encoded data.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{AffineLpvModel, Normalizer, TrajectoryDataset};
use crate::nn::{self, Activation, DenseLayer, FeedforwardNet, OptimizerKind, TrainConfig, TrainTrace};
use crate::reducer::SchedulingMap;
use crate::refit::{fit_affine_matrices, RefitResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub train: TrainConfig,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 0.01,
                epochs: 3000,
                weight_decay: 1e-5,
                sparsity_weight: 0.5,
                ..TrainConfig::default()
            },
        }
    }
}

/// Affine map `r = center + half_width·x` from `[−1, 1]` into the logsig range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeRescaler {
    pub center: f64,
    pub half_width: f64,
}

impl Default for RangeRescaler {
    /// `[−1, 1] → [0.1, 0.9]`.
    fn default() -> Self {
        Self {
            center: 0.5,
            half_width: 0.4,
        }
    }
}

impl RangeRescaler {
    pub fn apply(&self, x: f64) -> f64 {
        self.center + self.half_width * x
    }

    pub fn invert(&self, r: f64) -> f64 {
        (r - self.center) / self.half_width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeReducer {
    encoder: DenseLayer,
    decoder: DenseLayer,
    rescaler: RangeRescaler,
    normalizer: Normalizer,
}

#[derive(Clone, Debug)]
pub struct AeFit {
    pub reducer: AeReducer,
    pub trace: TrainTrace,
}

pub fn fit_ae(dataset: &TrajectoryDataset, n_phi: usize, config: &AeConfig, exec: Exec) -> Result<AeFit> {
    let n_rho = dataset.n_rho();
    if n_phi == 0 || n_phi > n_rho {
        return Err(Error::invalid(format!("n_phi must lie in 1..={n_rho}, got {n_phi}")));
    }
    let normalizer = Normalizer::fit(dataset.gamma())?;
    let rescaler = RangeRescaler::default();
    let data = normalizer
        .apply_matrix(dataset.gamma())?
        .map(|x| rescaler.apply(x));

    let mut rng = ChaCha8Rng::seed_from_u64(config.train.rng_seed);
    let mut net = FeedforwardNet::random(
        &[n_rho, n_phi, n_rho],
        &[Activation::Logsig, Activation::Logsig],
        &mut rng,
    )?;
    let trace = nn::train(&mut net, &data, &data, &config.train, exec)?;
    let mut layers = net.into_layers().into_iter();
    let encoder = layers.next().expect("two layers");
    let decoder = layers.next().expect("two layers");
    Ok(AeFit {
        reducer: AeReducer {
            encoder,
            decoder,
            rescaler,
            normalizer,
        },
        trace,
    })
}

impl AeReducer {
    pub fn encoder(&self) -> &DenseLayer {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseLayer {
        &self.decoder
    }

    pub fn rescaler(&self) -> RangeRescaler {
        self.rescaler
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// `ρ̂ = denormalize(unrescale(logsig(W₂φ + b₂)))`.
    pub fn inverse(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.decoder.inputs() {
            return Err(Error::dim(format!(
                "phi has length {}, decoder expects {}",
                phi.len(),
                self.decoder.inputs()
            )));
        }
        let r = self.decoder.forward_vector(phi).map(|v| self.rescaler.invert(v));
        self.normalizer.invert(&r)
    }

    /// Mean squared reconstruction error per coordinate, measured in the
    /// rescaled space the network is trained in.
    pub fn reconstruction_mse(&self, gamma: &DMatrix<f64>, exec: Exec) -> Result<f64> {
        let phi = self.map_batch(gamma, exec)?;
        let mut total = 0.0;
        for j in 0..gamma.ncols() {
            let target = self
                .normalizer
                .apply(&gamma.column(j).into_owned())?
                .map(|v| self.rescaler.apply(v));
            let out = self.decoder.forward_vector(&phi.column(j).into_owned());
            total += (out - target).norm_squared();
        }
        Ok(total / (gamma.len().max(1)) as f64)
    }

    /// Same error in physical units of `ρ`.
    pub fn physical_mse(&self, gamma: &DMatrix<f64>, exec: Exec) -> Result<f64> {
        let phi = self.map_batch(gamma, exec)?;
        let mut total = 0.0;
        for j in 0..gamma.ncols() {
            let rho_hat = self.inverse(&phi.column(j).into_owned())?;
            total += (rho_hat - gamma.column(j)).norm_squared();
        }
        Ok(total / (gamma.len().max(1)) as f64)
    }

    /// Refits affine matrices on the encoded data.
    pub fn reduced_model(
        &self,
        model: &AffineLpvModel,
        gamma: &DMatrix<f64>,
        include_intercept: bool,
        exec: Exec,
    ) -> Result<RefitResult> {
        let phi = self.map_batch(gamma, exec)?;
        fit_affine_matrices(model, gamma, &phi, include_intercept)
    }
}

impl SchedulingMap for AeReducer {
    fn n_rho(&self) -> usize {
        self.encoder.inputs()
    }

    fn n_phi(&self) -> usize {
        self.encoder.outputs()
    }

    /// `φ = logsig(W₁·rescale(normalize(ρ)) + b₁)`.
    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.normalizer.apply(rho)?.map(|v| self.rescaler.apply(v));
        Ok(self.encoder.forward_vector(&x))
    }
}
