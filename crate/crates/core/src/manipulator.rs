//! Two-link planar robot manipulator: nonlinear dynamics, its exact affine LPV
//! embedding and the 10-dimensional scheduling map.
//!
//! Equation of motion: `M(q) q̈ + C(q, q̇) + g(q) = n τ` with
//!
//! ```text
//! M = [a, b cosΔ; b cosΔ, c]
//! C = [ b sinΔ q̇2² + f q̇1;  −b sinΔ q̇1² + f (q̇2 − q̇1)]
//! g = [−d sin q1; −e sin q2]
//! ```
//!
//! where `Δ = q1 − q2`. The state is `x = (q1, q2, q̇1, q̇2)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::AffineLpvModel;

pub const NX: usize = 4;
pub const NU: usize = 2;
pub const NY: usize = 2;
pub const N_RHO: usize = 10;

/// Lumped physical constants of the arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ManipulatorParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
    n: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
    n: f64,
}

impl TryFrom<RawParams> for ManipulatorParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        ManipulatorParams::new(r.a, r.b, r.c, r.d, r.e, r.f, r.n)
    }
}

impl From<ManipulatorParams> for RawParams {
    fn from(p: ManipulatorParams) -> Self {
        RawParams {
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
            e: p.e,
            f: p.f,
            n: p.n,
        }
    }
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            a: 5.6794,
            b: 1.473,
            c: 1.7985,
            d: 0.4,
            e: 0.4,
            f: 2.0,
            n: 1.0,
        }
    }
}

impl ManipulatorParams {
    /// Rejects parameter sets whose mass matrix can become singular.
    #[allow(clippy::too_many_arguments)]
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64, n: f64) -> Result<Self> {
        if [a, b, c, d, e, f, n].iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("manipulator parameters must be finite"));
        }
        if a * c - b * b <= 0.0 {
            return Err(Error::invalid(format!(
                "a*c - b^2 = {} must be positive for an invertible mass matrix",
                a * c - b * b
            )));
        }
        Ok(Self { a, b, c, d, e, f, n })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn e(&self) -> f64 {
        self.e
    }
    pub fn f(&self) -> f64 {
        self.f
    }
    pub fn n(&self) -> f64 {
        self.n
    }

    /// Mass-matrix determinant `a·c − b²cos²Δ`.
    pub fn mass_determinant(&self, q1: f64, q2: f64) -> f64 {
        let cd = (q1 - q2).cos();
        self.a * self.c - self.b * self.b * cd * cd
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorState {
    pub q1: f64,
    pub q2: f64,
    pub dq1: f64,
    pub dq2: f64,
}

impl ManipulatorState {
    pub fn new(q1: f64, q2: f64, dq1: f64, dq2: f64) -> Self {
        Self { q1, q2, dq1, dq2 }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [q1, q2, dq1, dq2] => Ok(Self::new(*q1, *q2, *dq1, *dq2)),
            _ => Err(Error::dim(format!("state has {} entries, expected 4", x.len()))),
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.q1, self.q2, self.dq1, self.dq2])
    }

    pub fn is_finite(&self) -> bool {
        [self.q1, self.q2, self.dq1, self.dq2]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Unnormalized `sin(z)/z`, equal to 1 at 0.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

fn dynamics_signed(p: &ManipulatorParams, x: &ManipulatorState, tau: [f64; 2], gsign: f64) -> [f64; 4] {
    let (sd, cd) = (x.q1 - x.q2).sin_cos();
    let h = p.a * p.c - p.b * p.b * cd * cd;
    let coriolis = [
        p.b * sd * x.dq2 * x.dq2 + p.f * x.dq1,
        -p.b * sd * x.dq1 * x.dq1 + p.f * (x.dq2 - x.dq1),
    ];
    let gravity = [-p.d * x.q1.sin(), -p.e * x.q2.sin()];
    let r = [
        p.n * tau[0] - coriolis[0] - gsign * gravity[0],
        p.n * tau[1] - coriolis[1] - gsign * gravity[1],
    ];
    // Closed-form inverse of the 2x2 mass matrix.
    let ddq1 = (p.c * r[0] - p.b * cd * r[1]) / h;
    let ddq2 = (-p.b * cd * r[0] + p.a * r[1]) / h;
    [x.dq1, x.dq2, ddq1, ddq2]
}

/// State derivative `(q̇, M⁻¹(nτ − C − g))`.
pub fn dynamics(p: &ManipulatorParams, x: &ManipulatorState, tau: [f64; 2]) -> Result<[f64; 4]> {
    if !x.is_finite() || tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("non-finite manipulator state or torque"));
    }
    Ok(dynamics_signed(p, x, tau, 1.0))
}

/// [`dynamics`] without the finiteness check, for integrator inner loops.
pub fn dynamics_unchecked(p: &ManipulatorParams, x: &ManipulatorState, tau: [f64; 2]) -> [f64; 4] {
    dynamics_signed(p, x, tau, 1.0)
}

/// The scheduling map `η(x)` with 10 entries.
pub fn scheduling_map(p: &ManipulatorParams, x: &ManipulatorState) -> [f64; N_RHO] {
    let (a, b, c, f) = (p.a, p.b, p.c, p.f);
    let (sd, cd) = (x.q1 - x.q2).sin_cos();
    let h = a * c - b * b * cd * cd;
    let (s1, s2) = (sinc(x.q1), sinc(x.q2));
    [
        1.0 / h,
        cd / h,
        s1 / h,
        cd * s2 / h,
        (-b * b * sd * cd * x.dq1 - (c + b * cd) * f) / h,
        (-c * sd * x.dq2 + cd * f) / h,
        cd * s1 / h,
        s2 / h,
        (a * b * sd * x.dq1 + f * (a + b * cd)) / h,
        (b * b * sd * cd * x.dq2 - a * f) / h,
    ]
}

/// The affine LPV embedding with `n_ρ = 10`, `nx = 4`, `nu = 2`, `ny = 2`.
pub fn build_lpv_model(p: &ManipulatorParams) -> AffineLpvModel {
    let (a, b, c, d, e, n) = (p.a, p.b, p.c, p.d, p.e, p.n);
    let dim = NX + NY;
    let mut m0 = DMatrix::zeros(dim, NX + NU);
    m0[(0, 2)] = 1.0;
    m0[(1, 3)] = 1.0;
    m0[(4, 0)] = 1.0;
    m0[(5, 1)] = 1.0;
    // (coefficient index, [(row, col, value)]) with B columns offset by NX.
    let entries: [&[(usize, usize, f64)]; N_RHO] = [
        &[(2, 4, c * n), (3, 5, a * n)],
        &[(2, 5, -b * n), (3, 4, -b * n)],
        &[(2, 0, c * d)],
        &[(2, 1, -b * e)],
        &[(2, 2, 1.0)],
        &[(2, 3, b)],
        &[(3, 0, -b * d)],
        &[(3, 1, a * e)],
        &[(3, 2, 1.0)],
        &[(3, 3, 1.0)],
    ];
    let coeffs = entries
        .iter()
        .map(|list| {
            let mut m = DMatrix::zeros(dim, NX + NU);
            for &(r, col, v) in list.iter() {
                m[(r, col)] = v;
            }
            m
        })
        .collect();
    AffineLpvModel::new(NX, NU, NY, m0, coeffs).expect("manipulator model shapes are consistent")
}

fn lpv_residual(
    model: &AffineLpvModel,
    p: &ManipulatorParams,
    x: &ManipulatorState,
    tau: [f64; 2],
    gsign: f64,
) -> f64 {
    let rho = DVector::from_row_slice(&scheduling_map(p, x));
    let m = model.eval(&rho).expect("n_rho matches");
    let mut xu = x.to_vector().as_slice().to_vec();
    xu.extend_from_slice(&tau);
    let lin = m.view((0, 0), (NX, NX + NU)) * DVector::from_vec(xu);
    let f = dynamics_signed(p, x, tau, gsign);
    (0..NX).map(|i| (f[i] - lin[i]).abs()).fold(0.0, f64::max)
}

/// Max over samples of `‖f(x, τ) − (A(η(x))x + B(η(x))τ)‖_∞`.
pub fn embedding_consistency_check(
    p: &ManipulatorParams,
    samples: &[(ManipulatorState, [f64; 2])],
    exec: Exec,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("embedding check needs at least one sample"));
    }
    let model = build_lpv_model(p);
    let res = exec.map(samples.len(), |i| {
        let (x, tau) = &samples[i];
        lpv_residual(&model, p, x, *tau, 1.0)
    });
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// Operating box used for random sampling: `q ∈ [−π, π]²`, `q̇ ∈ [−3, 3]²`,
/// `τ ∈ [−10, 10]²`.
pub fn sample_operating_box<R: Rng>(rng: &mut R, count: usize) -> Vec<(ManipulatorState, [f64; 2])> {
    use std::f64::consts::PI;
    (0..count)
        .map(|_| {
            let x = ManipulatorState::new(
                rng.gen_range(-PI..=PI),
                rng.gen_range(-PI..=PI),
                rng.gen_range(-3.0..=3.0),
                rng.gen_range(-3.0..=3.0),
            );
            (x, [rng.gen_range(-10.0..=10.0), rng.gen_range(-10.0..=10.0)])
        })
        .collect()
}
