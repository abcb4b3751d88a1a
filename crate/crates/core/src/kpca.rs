//! Kernel PCA scheduling reduction.
//!
//! The kernel matrix of the normalized training data is centered in feature
//! space, eigendecomposed, and the leading positive eigenvectors scaled by
//! `1/√λ` give the projection coefficients. New points are centered with the
//! training statistics before projection. There is no inverse map; reduced
//! models come from [`crate::refit`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{rows, vector, Normalizer, TrajectoryDataset};
use crate::reducer::SchedulingMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `tanh(κ xᵀy + ι)`
    Sigmoid,
    /// `exp(−‖x − y‖² / κ²)`
    Rbf,
    /// `(xᵀy + ι)^κ`
    Polynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub kappa: f64,
    #[serde(default)]
    pub iota: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Sigmoid,
            kappa: 0.1,
            iota: 0.1,
        }
    }
}

impl KernelSpec {
    pub fn sigmoid(kappa: f64, iota: f64) -> Self {
        Self {
            kind: KernelKind::Sigmoid,
            kappa,
            iota,
        }
    }

    pub fn rbf(kappa: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            kappa,
            iota: 0.0,
        }
    }

    pub fn polynomial(degree: u32, iota: f64) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            kappa: degree as f64,
            iota,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() || !self.iota.is_finite() {
            return Err(Error::invalid("kernel hyperparameters must be finite"));
        }
        match self.kind {
            KernelKind::Rbf if self.kappa == 0.0 => {
                Err(Error::invalid("rbf kernel needs kappa != 0"))
            }
            KernelKind::Polynomial if !(self.kappa >= 1.0 && self.kappa.fract() == 0.0) => Err(
                Error::invalid("polynomial kernel needs a positive integer degree kappa"),
            ),
            _ => Ok(()),
        }
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Sigmoid => (self.kappa * dot(x, y) + self.iota).tanh(),
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (self.kappa * self.kappa)).exp()
            }
            KernelKind::Polynomial => (dot(x, y) + self.iota).powi(self.kappa as i32),
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Kernel matrix `K_ij = k(x_i, x_j)` over the columns of `points`.
pub fn kernel_matrix(spec: &KernelSpec, points: &DMatrix<f64>, exec: Exec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = points.ncols();
    let rows_out = exec.map(n, |i| {
        let xi = points.column(i);
        (0..n)
            .map(|j| spec.eval_unchecked(xi.as_slice(), points.column(j).as_slice()))
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(n, n, |i, j| rows_out[i][j]))
}

/// Row means and grand mean of a square matrix.
fn centering_stats(k: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let n = k.nrows() as f64;
    let row_means = DVector::from_iterator(k.nrows(), k.row_iter().map(|r| r.sum() / n));
    let grand = row_means.sum() / n;
    (row_means, grand)
}

/// `K_c = K − 1_N K − K 1_N + 1_N K 1_N`.
pub fn center_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (rm, g) = centering_stats(k);
    let col_means = DVector::from_iterator(
        k.ncols(),
        k.column_iter().map(|c| c.sum() / k.nrows() as f64),
    );
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - col_means[j] - rm[i] + g)
}

/// Every positive eigenpair of the centered kernel matrix, before truncation.
#[derive(Clone, Debug)]
pub struct KpcaBasis {
    kernel: KernelSpec,
    normalizer: Normalizer,
    training_points: DMatrix<f64>,
    row_means: DVector<f64>,
    grand_mean: f64,
    /// Positive eigenvalues, nonincreasing.
    eigenvalues: Vec<f64>,
    /// Unit eigenvectors matching `eigenvalues`, one per column.
    eigenvectors: DMatrix<f64>,
    discarded_negative: usize,
}

pub fn fit_kpca_basis(dataset: &TrajectoryDataset, kernel: &KernelSpec, exec: Exec) -> Result<KpcaBasis> {
    kernel.validate()?;
    let normalizer = Normalizer::fit(dataset.gamma())?;
    let points = normalizer.apply_matrix(dataset.gamma())?;
    let k = kernel_matrix(kernel, &points, exec)?;
    let (row_means, grand_mean) = centering_stats(&k);
    let kc = center_kernel(&k);
    let n = kc.nrows();
    // Numerical-rank cutoff; ‖K‖_F bounds the spectral norm and centering
    // noise grows with it.
    let tol = n as f64 * f64::EPSILON * k.norm().max(f64::MIN_POSITIVE);

    let eig = SymmetricEigen::new(kc);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let positive: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    let discarded_negative = eig.eigenvalues.iter().filter(|&&l| l < -tol).count();
    let mut eigenvectors = DMatrix::zeros(n, positive.len());
    for (dst, &src) in positive.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        // Same sign convention as PCA: largest-magnitude entry positive.
        let pivot = v.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        if pivot < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(dst, &v);
    }
    Ok(KpcaBasis {
        kernel: *kernel,
        normalizer,
        training_points: points,
        row_means,
        grand_mean,
        eigenvalues: positive.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors,
        discarded_negative,
    })
}

impl KpcaBasis {
    pub fn positive_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn discarded_negative(&self) -> usize {
        self.discarded_negative
    }

    /// Keeps the leading `n_phi` components.
    pub fn reducer(&self, n_phi: usize) -> Result<KpcaReducer> {
        if n_phi == 0 {
            return Err(Error::invalid("n_phi must be at least 1"));
        }
        if n_phi > self.eigenvalues.len() {
            return Err(Error::InsufficientEigenvalues {
                requested: n_phi,
                available: self.eigenvalues.len(),
            });
        }
        let mut alphas = self.eigenvectors.columns(0, n_phi).into_owned();
        for (l, mut col) in alphas.column_iter_mut().enumerate() {
            col /= self.eigenvalues[l].sqrt();
        }
        Ok(KpcaReducer {
            kernel: self.kernel,
            normalizer: self.normalizer.clone(),
            training_points: self.training_points.clone(),
            alphas,
            eigenvalues: self.eigenvalues[..n_phi].to_vec(),
            row_means: self.row_means.clone(),
            grand_mean: self.grand_mean,
            discarded_negative: self.discarded_negative,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaReducer {
    kernel: KernelSpec,
    normalizer: Normalizer,
    /// Normalized training samples, one per column.
    #[serde(with = "rows")]
    training_points: DMatrix<f64>,
    /// `N × n_φ`, columns `α_l / √λ_l`.
    #[serde(with = "rows")]
    alphas: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    #[serde(with = "vector")]
    row_means: DVector<f64>,
    grand_mean: f64,
    discarded_negative: usize,
}

pub fn fit_kpca(
    dataset: &TrajectoryDataset,
    kernel: &KernelSpec,
    n_phi: usize,
    exec: Exec,
) -> Result<KpcaReducer> {
    fit_kpca_basis(dataset, kernel, exec)?.reducer(n_phi)
}

impl KpcaReducer {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn alphas(&self) -> &DMatrix<f64> {
        &self.alphas
    }

    pub fn discarded_negative(&self) -> usize {
        self.discarded_negative
    }

    pub fn n_training(&self) -> usize {
        self.training_points.ncols()
    }

    /// Training-statistics centered kernel vector of a normalized point.
    fn centered_kernel_vector(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.training_points.ncols();
        let kt = DVector::from_iterator(
            n,
            self.training_points
                .column_iter()
                .map(|c| self.kernel.eval_unchecked(c.as_slice(), x.as_slice())),
        );
        let mean_kt = kt.sum() / n as f64;
        DVector::from_fn(n, |i, _| kt[i] - self.row_means[i] - mean_kt + self.grand_mean)
    }
}

impl SchedulingMap for KpcaReducer {
    fn n_rho(&self) -> usize {
        self.training_points.nrows()
    }

    fn n_phi(&self) -> usize {
        self.alphas.ncols()
    }

    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.normalizer.apply(rho)?;
        Ok(self.alphas.tr_mul(&self.centered_kernel_vector(&x)))
    }
}
