mod common;

use common::{gauss_solve, random_matrix, random_model, to_rows};
use lpv_sdr::evaluation::frobenius_cost;
use lpv_sdr::model::vectorize;
use lpv_sdr::refit::{fit_affine_matrices, variation_targets};
use lpv_sdr::AffineLpvModel;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[Θ] = (Z Zᵀ)⁻¹ Z Λᵀ` with `Z = [Φ; 1]`, solved by elimination.
fn normal_equations(model: &AffineLpvModel, gamma: &DMatrix<f64>, phi: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = gamma.ncols();
    let k = phi.nrows();
    let lam = variation_targets(model, gamma).unwrap();
    let z = |i: usize, j: usize| if i < k { phi[(i, j)] } else { 1.0 };
    let zzt: Vec<Vec<f64>> = (0..=k)
        .map(|a| (0..=k).map(|b| (0..n).map(|j| z(a, j) * z(b, j)).sum()).collect())
        .collect();
    let rhs: Vec<Vec<f64>> = (0..=k)
        .map(|a| (0..lam.nrows()).map(|r| (0..n).map(|j| z(a, j) * lam[(r, j)]).sum()).collect())
        .collect();
    gauss_solve(&zzt, &rhs)
}

#[test]
fn matches_normal_equations_oracle() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_rho = rng.gen_range(2..6);
        let k = rng.gen_range(1..=n_rho);
        let n = rng.gen_range(15..40);
        let model = random_model(seed, n_rho);
        let gamma = random_matrix(&mut rng, n_rho, n);
        let phi = random_matrix(&mut rng, k, n);
        let fit = fit_affine_matrices(&model, &gamma, &phi, true).unwrap();
        let theta = normal_equations(&model, &gamma, &phi);
        let w = fit.model.coeff_matrix();
        let b = vectorize(fit.model.m0()) - vectorize(model.m0());
        for i in 0..k {
            for r in 0..w.nrows() {
                assert!((w[(r, i)] - theta[i][r]).abs() < 1e-8, "seed {seed}");
            }
        }
        for r in 0..b.len() {
            assert!((b[r] - theta[k][r]).abs() < 1e-8, "seed {seed}");
        }
    }
}

#[test]
fn residual_is_orthogonal_to_regressors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(9, 4);
    let gamma = random_matrix(&mut rng, 4, 50);
    let phi = random_matrix(&mut rng, 2, 50);
    let fit = fit_affine_matrices(&model, &gamma, &phi, true).unwrap();
    let lam = variation_targets(&model, &gamma).unwrap();
    let b = vectorize(fit.model.m0()) - vectorize(model.m0());
    let mut resid = lam - fit.model.coeff_matrix() * &phi;
    for mut c in resid.column_iter_mut() {
        c -= &b;
    }
    let scale = resid.norm();
    assert!((&resid * phi.transpose()).amax() < 1e-10 * scale.max(1.0));
    assert!(resid.column_sum().amax() < 1e-10 * scale.max(1.0));
    let m = to_rows(&resid);
    assert_eq!(m.len(), 9);
}

#[test]
fn no_perturbation_lowers_the_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_model(3, 5);
    let gamma = random_matrix(&mut rng, 5, 60);
    let phi = random_matrix(&mut rng, 3, 60);
    let fit = fit_affine_matrices(&model, &gamma, &phi, true).unwrap();
    let best = frobenius_cost(&model, &fit.model, &gamma, &phi).unwrap();
    assert!((best - fit.cost).abs() < 1e-12 * best.max(1.0));
    let w = fit.model.coeff_matrix();
    let m0 = vectorize(fit.model.m0());
    for trial in 0..100 {
        let scale = 10f64.powi(-(trial % 6));
        let dw = random_matrix(&mut rng, w.nrows(), w.ncols()) * scale;
        let db = random_matrix(&mut rng, m0.len(), 1).column(0) * scale;
        let perturbed = AffineLpvModel::from_vectorized(2, 1, 1, &(&m0 + db), &(&w + dw)).unwrap();
        let cost = frobenius_cost(&model, &perturbed, &gamma, &phi).unwrap();
        assert!(cost >= best, "trial {trial}: {cost} < {best}");
    }
}

#[test]
fn adding_latent_rows_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_model(5, 6);
    let gamma = random_matrix(&mut rng, 6, 80);
    let phi = random_matrix(&mut rng, 4, 80);
    let mut last = f64::INFINITY;
    for k in 0..=4 {
        let sub = phi.rows(0, k).into_owned();
        let cost = fit_affine_matrices(&model, &gamma, &sub, true).unwrap().cost;
        assert!(cost <= last + 1e-12);
        last = cost;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// An invertible reparameterization of the latent data cannot change the
    /// attainable cost.
    #[test]
    fn cost_is_invariant_under_invertible_latent_maps(seed in 0u64..1000, shift in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(seed, 4);
        let gamma = random_matrix(&mut rng, 4, 40);
        let phi = random_matrix(&mut rng, 2, 40);
        let t = random_matrix(&mut rng, 2, 2) + DMatrix::identity(2, 2) * 3.0;
        let mut mapped = &t * &phi;
        mapped.add_scalar_mut(shift);
        let a = fit_affine_matrices(&model, &gamma, &phi, true).unwrap().cost;
        let b = fit_affine_matrices(&model, &gamma, &mapped, true).unwrap().cost;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }
}
