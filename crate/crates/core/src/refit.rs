//! Least-squares fit of reduced affine matrices on latent data.
//!
//! Minimizes `(1/N) Σ_j ‖M(ρ_j) − M̂(φ_j)‖²_F` over `vec(M̂_1 … M̂_k)` and,
//! optionally, an intercept shifting `M̂_0` away from `M_0`. In vectorized form
//! this is `min ‖Λ − Ŵ Φ − b 1ᵀ‖²_F` with `Λ_{*,j} = Σ_i vec(M_i) ρ_{j,i}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{vectorize, AffineLpvModel};

#[derive(Clone, Debug)]
pub struct RefitResult {
    pub model: AffineLpvModel,
    /// Attained mean squared Frobenius cost.
    pub cost: f64,
    /// Numerical rank of the regressor `[Φ; 1]`.
    pub rank: usize,
    /// True when the regressor was rank deficient and the minimum-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

/// Output data matrix `Λ` (`ν × N`) of the unnormalized scheduling data.
pub fn variation_targets(model: &AffineLpvModel, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gamma.nrows() != model.n_rho() {
        return Err(Error::dim(format!(
            "data has {} rows, model has n_rho = {}",
            gamma.nrows(),
            model.n_rho()
        )));
    }
    Ok(model.coeff_matrix() * gamma)
}

pub fn fit_affine_matrices(
    model: &AffineLpvModel,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    include_intercept: bool,
) -> Result<RefitResult> {
    let n = gamma.ncols();
    if phi.ncols() != n {
        return Err(Error::dim(format!(
            "latent data has {} columns, scheduling data has {n}",
            phi.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("refit needs at least one sample"));
    }
    let targets = variation_targets(model, gamma)?;
    let k = phi.nrows();
    let p = k + usize::from(include_intercept);
    let nu = model.vec_len();

    // Design matrix Zᵀ (N × p); solve Zᵀ Θ ≈ Λᵀ by SVD.
    let mut design = DMatrix::zeros(n, p);
    design.view_mut((0, 0), (n, k)).copy_from(&phi.transpose());
    if include_intercept {
        design.column_mut(k).fill(1.0);
    }
    let (theta, rank) = if p == 0 {
        (DMatrix::zeros(0, nu), 0)
    } else {
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = (n.max(p) as f64) * f64::EPSILON * smax;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let theta = svd
            .solve(&targets.transpose(), tol)
            .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
        (theta, rank)
    };

    let weights = theta.rows(0, k).transpose();
    let bias = if include_intercept {
        theta.row(k).transpose()
    } else {
        DVector::zeros(nu)
    };
    let m0_vec = vectorize(model.m0()) + &bias;
    let reduced = AffineLpvModel::from_vectorized(model.nx(), model.nu(), model.ny(), &m0_vec, &weights)?;

    let mut residual = targets - &weights * phi;
    for mut col in residual.column_iter_mut() {
        col -= &bias;
    }
    let cost = residual.norm_squared() / n as f64;
    Ok(RefitResult {
        model: reduced,
        cost,
        rank,
        rank_deficient: rank < p,
    })
}
