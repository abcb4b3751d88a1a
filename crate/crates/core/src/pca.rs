//! PCA scheduling reduction: truncated SVD of the normalized data matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rows, vectorize, AffineLpvModel, Normalizer, TrajectoryDataset};
use crate::reducer::SchedulingMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReducer {
    /// `U_s`, `n_ρ × n_φ` with orthonormal columns.
    #[serde(with = "rows")]
    basis: DMatrix<f64>,
    /// All `n_ρ` singular values of the normalized data, nonincreasing.
    singular_values: Vec<f64>,
    normalizer: Normalizer,
}

/// Left singular vectors and singular values sorted nonincreasing, with each
/// column's largest-magnitude entry made positive. Always returns `rows`
/// singular values (zero padded when there are fewer samples than rows).
pub fn sorted_svd(data: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (r, n) = data.shape();
    let padded = if n < r {
        let mut p = DMatrix::zeros(r, r);
        p.view_mut((0, 0), (r, n)).copy_from(data);
        p
    } else {
        data.clone()
    };
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(r, r);
    let mut values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate().take(r) {
        let mut col = u.column(src).into_owned();
        let pivot = col.iter().copied().fold(0.0f64, |best, v| {
            if v.abs() > best.abs() {
                v
            } else {
                best
            }
        });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(dst, &col);
        values.push(svd.singular_values[src]);
    }
    (basis, values)
}

pub fn fit_pca(dataset: &TrajectoryDataset, n_phi: usize) -> Result<PcaReducer> {
    let n_rho = dataset.n_rho();
    if n_phi == 0 || n_phi > n_rho {
        return Err(Error::invalid(format!(
            "n_phi must lie in 1..={n_rho}, got {n_phi}"
        )));
    }
    let normalizer = Normalizer::fit(dataset.gamma())?;
    let gn = normalizer.apply_matrix(dataset.gamma())?;
    let (u, singular_values) = sorted_svd(&gn);
    Ok(PcaReducer {
        basis: u.columns(0, n_phi).into_owned(),
        singular_values,
        normalizer,
    })
}

impl PcaReducer {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// `ρ̂ = denormalize(U_s φ)`.
    pub fn inverse(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.basis.ncols() {
            return Err(Error::dim(format!(
                "phi has length {}, reducer has n_phi = {}",
                phi.len(),
                self.basis.ncols()
            )));
        }
        self.normalizer.invert(&(&self.basis * phi))
    }

    /// Closed-form reduced model through `M̂(φ) = M(ρ̂(φ))`.
    pub fn reduced_model(&self, model: &AffineLpvModel) -> Result<AffineLpvModel> {
        if model.n_rho() != self.basis.nrows() {
            return Err(Error::dim("model n_rho differs from the reducer"));
        }
        let w = model.coeff_matrix();
        let m0 = vectorize(model.m0()) + &w * self.normalizer.offset();
        let scaled = w * DMatrix::from_diagonal(self.normalizer.scale()) * &self.basis;
        AffineLpvModel::from_vectorized(model.nx(), model.nu(), model.ny(), &m0, &scaled)
    }
}

impl SchedulingMap for PcaReducer {
    fn n_rho(&self) -> usize {
        self.basis.nrows()
    }

    fn n_phi(&self) -> usize {
        self.basis.ncols()
    }

    /// `φ = U_sᵀ normalize(ρ)`.
    fn map(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.basis.tr_mul(&self.normalizer.apply(rho)?))
    }
}
