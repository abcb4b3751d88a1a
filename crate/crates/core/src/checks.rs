//! Self-check suites run by `lpv-sdr check`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kpca::{center_kernel, kernel_matrix, KernelSpec};
use crate::manipulator::{embedding_consistency_check, sample_operating_box, ManipulatorParams};
use crate::nn::{finite_difference_check, Activation, FeedforwardNet, TrainConfig};

pub const EMBEDDING_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const CENTERING_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Embedding,
    Gradients,
    Centering,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Suite::Embedding),
            "gradients" => Ok(Suite::Gradients),
            "centering" => Ok(Suite::Centering),
            "all" => Ok(Suite::All),
            other => Err(Error::invalid(format!(
                "unknown suite '{other}' (expected embedding, gradients, centering or all)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn property(name: &str, value: f64, tolerance: f64) -> PropertyResult {
    PropertyResult {
        name: name.to_string(),
        passed: value < tolerance,
        value,
        tolerance,
    }
}

/// Residual of the LPV embedding of the arm over random operating points.
pub fn embedding_suite(exec: Exec) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = sample_operating_box(&mut rng, 1000);
    let residual = embedding_consistency_check(&ManipulatorParams::default(), &samples, exec)?;
    Ok(vec![property("embedding-consistency", residual, EMBEDDING_TOL)])
}

/// Resamples input columns until every relu preactivation is at least
/// `margin` away from the kink.
pub fn nudge_off_kinks<R: Rng>(net: &FeedforwardNet, inputs: &mut DMatrix<f64>, margin: f64, rng: &mut R) -> Result<()> {
    for j in 0..inputs.ncols() {
        for _attempt in 0..10_000 {
            let pass = net.forward(&inputs.columns(j, 1).into_owned())?;
            let near = net
                .layers()
                .iter()
                .zip(&pass.pre)
                .filter(|(l, _)| l.activation == Activation::Relu)
                .any(|(_, z)| z.iter().any(|v| v.abs() < margin));
            if !near {
                break;
            }
            for v in inputs.column_mut(j).iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    Ok(())
}

/// Backprop against central differences for a DNN-shaped net with `n_phi`
/// latent units.
pub fn gradient_check(n_phi: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = FeedforwardNet::random(
        &[10, 5, n_phi, 36],
        &[Activation::Relu, Activation::Relu, Activation::Linear],
        &mut rng,
    )?;
    let mut x = DMatrix::from_fn(10, 20, |_, _| rng.gen_range(-1.0..1.0));
    nudge_off_kinks(&net, &mut x, 1e-3, &mut rng)?;
    let y = DMatrix::from_fn(36, 20, |_, _| rng.gen_range(-1.0..1.0));
    let cfg = TrainConfig {
        weight_decay: 1e-3,
        ..TrainConfig::default()
    };
    Ok(finite_difference_check(&net, &x, &y, &cfg, 1e-6)?.max_relative_error)
}

pub fn autoencoder_gradient_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = FeedforwardNet::random(&[10, 3, 10], &[Activation::Logsig, Activation::Logsig], &mut rng)?;
    let x = DMatrix::from_fn(10, 20, |_, _| rng.gen_range(0.1..0.9));
    let cfg = TrainConfig {
        weight_decay: 1e-3,
        sparsity_weight: 0.5,
        ..TrainConfig::default()
    };
    Ok(finite_difference_check(&net, &x, &x, &cfg, 1e-6)?.max_relative_error)
}

pub fn gradient_suite() -> Result<Vec<PropertyResult>> {
    Ok(vec![
        property("gradient-10-5-1-36", gradient_check(1, 11)?, GRADIENT_TOL),
        property("gradient-10-5-2-36", gradient_check(2, 12)?, GRADIENT_TOL),
        property("gradient-autoencoder-sparse", autoencoder_gradient_check(13)?, GRADIENT_TOL),
    ])
}

/// Row and column sums of a centered kernel matrix on random points.
pub fn centering_suite(exec: Exec) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points = DMatrix::from_fn(10, 200, |_, _| rng.gen_range(-1.0..1.0));
    let mut out = Vec::new();
    for (name, spec) in [
        ("centering-sigmoid", KernelSpec::default()),
        ("centering-rbf", KernelSpec::rbf(0.5)),
        ("centering-polynomial", KernelSpec::polynomial(2, 1.0)),
    ] {
        let kc = center_kernel(&kernel_matrix(&spec, &points, exec)?);
        let rows = kc.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        let cols = kc.column_iter().map(|c| c.sum().abs()).fold(0.0, f64::max);
        out.push(property(name, rows.max(cols), CENTERING_TOL));
    }
    Ok(out)
}

pub fn run_suite(suite: Suite, exec: Exec) -> Result<Vec<PropertyResult>> {
    Ok(match suite {
        Suite::Embedding => embedding_suite(exec)?,
        Suite::Gradients => gradient_suite()?,
        Suite::Centering => centering_suite(exec)?,
        Suite::All => {
            let mut all = embedding_suite(exec)?;
            all.extend(gradient_suite()?);
            all.extend(centering_suite(exec)?);
            all
        }
    })
}
