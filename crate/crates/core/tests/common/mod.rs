#![allow(dead_code)]

use lpv_sdr::manipulator::{build_lpv_model, ManipulatorParams};
use lpv_sdr::simulation::{generate_reference, generate_scheduling_data, ReferenceSpec};
use lpv_sdr::{AffineLpvModel, Exec, TrajectoryDataset};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default manipulator model and the 20 s, 0.01 s dataset.
pub fn benchmark() -> (AffineLpvModel, TrajectoryDataset) {
    benchmark_with(ReferenceSpec::reference_1())
}

pub fn benchmark_with(spec: ReferenceSpec) -> (AffineLpvModel, TrajectoryDataset) {
    let p = ManipulatorParams::default();
    let reference = generate_reference(&spec).unwrap();
    let ds = generate_scheduling_data(&p, &reference, Exec::Parallel).unwrap();
    (build_lpv_model(&p), ds)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| a[i].iter().chain(b[i].iter()).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / aug[col][col];
                for k in col..n + m {
                    aug[row][k] -= f * aug[col][k];
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..m).map(|k| aug[i][n + k] / aug[i][i]).collect())
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (columns), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random affine model with 2 states, 1 input, 1 output.
pub fn random_model(seed: u64, n_rho: usize) -> AffineLpvModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0 = random_matrix(&mut rng, 3, 3);
    let coeffs = (0..n_rho).map(|_| random_matrix(&mut rng, 3, 3)).collect();
    AffineLpvModel::new(2, 1, 1, m0, coeffs).unwrap()
}
