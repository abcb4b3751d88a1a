mod common;

use common::{benchmark, jacobi_eigen, to_rows};
use lpv_sdr::evaluation::{frobenius_cost, mean_model_norm};
use lpv_sdr::pca::fit_pca;
use lpv_sdr::{Exec, SchedulingMap};
use nalgebra::DMatrix;

#[test]
fn basis_matches_jacobi_gram_eigenvectors() {
    let (_model, ds) = benchmark();
    let pca = fit_pca(&ds, 10).unwrap();
    let gn = pca.normalizer().apply_matrix(ds.gamma()).unwrap();
    let gram = &gn * gn.transpose();
    let (vals, vecs) = jacobi_eigen(&to_rows(&gram));
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let sv = pca.singular_values();
    let top = vals[order[0]];
    for (l, &i) in order.iter().enumerate() {
        assert!((sv[l] * sv[l] - vals[i]).abs() < 1e-9 * top, "eigenvalue {l}");
        // Only compare well-separated directions.
        let gap = order
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (vals[j] - vals[i]).abs())
            .fold(f64::INFINITY, f64::min);
        if gap > 1e-6 * top {
            let dot: f64 = (0..10).map(|r| vecs[r][i] * pca.basis()[(r, l)]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "vector {l}: |dot| = {}", dot.abs());
        }
    }
}

#[test]
fn truncation_error_is_the_discarded_energy() {
    let (_model, ds) = benchmark();
    let gn = {
        let p = fit_pca(&ds, 1).unwrap();
        p.normalizer().apply_matrix(ds.gamma()).unwrap()
    };
    for k in 1..=10 {
        let pca = fit_pca(&ds, k).unwrap();
        let u = pca.basis();
        let recon = u * (u.transpose() * &gn);
        let err = (&gn - recon).norm_squared();
        let discarded: f64 = pca.singular_values()[k..].iter().map(|s| s * s).sum();
        let total = gn.norm_squared();
        assert!((err - discarded).abs() < 1e-9 * total, "k={k}: {err} vs {discarded}");
    }
}

#[test]
fn basis_is_orthonormal() {
    let (_model, ds) = benchmark();
    let pca = fit_pca(&ds, 6).unwrap();
    let g = pca.basis().transpose() * pca.basis();
    assert!((g - DMatrix::identity(6, 6)).amax() < 1e-12);
}

#[test]
fn reduced_cost_is_nonincreasing_and_lossless_at_full_width() {
    let (model, ds) = benchmark();
    let scale = mean_model_norm(&model, ds.gamma()).unwrap();
    let mut last = f64::INFINITY;
    for k in 1..=10 {
        let pca = fit_pca(&ds, k).unwrap();
        let reduced = pca.reduced_model(&model).unwrap();
        let phi = pca.map_batch(ds.gamma(), Exec::Parallel).unwrap();
        let cost = frobenius_cost(&model, &reduced, ds.gamma(), &phi).unwrap();
        assert!(cost <= last + 1e-12 * scale, "k={k}: {cost} > {last}");
        last = cost;
    }
    assert!(last < 1e-12, "full-width cost {last}");
}

#[test]
fn inverse_of_map_projects_onto_the_basis() {
    let (_model, ds) = benchmark();
    let pca = fit_pca(&ds, 10).unwrap();
    for j in (0..ds.n_samples()).step_by(97) {
        let rho = ds.sample(j);
        let back = pca.inverse(&pca.map(&rho).unwrap()).unwrap();
        assert!((back - rho).amax() < 1e-12);
    }
}
