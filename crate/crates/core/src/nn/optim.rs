//! First-order optimizers over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adabound,
}

/// Lower and upper AdaBound step-size bounds at step `t ≥ 1`.
pub fn adabound_bounds(final_lr: f64, beta2: f64, t: u64) -> (f64, f64) {
    let gamma = 1.0 - beta2;
    let t = t as f64;
    (
        final_lr * (1.0 - 1.0 / (gamma * t + 1.0)),
        final_lr * (1.0 + 1.0 / (gamma * t)),
    )
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Optimizer together with its per-parameter state. Cloning snapshots it.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    final_lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: Moments,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        n_params: usize,
        lr: f64,
        final_lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        Self {
            kind,
            lr,
            final_lr,
            beta1,
            beta2,
            eps,
            state: Moments::new(n_params),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.t
    }

    /// Scales the base rate and, for AdaBound, the final rate with it.
    pub fn scale_learning_rate(&mut self, factor: f64) {
        self.lr *= factor;
        self.final_lr *= factor;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        assert_eq!(params.len(), self.state.m.len(), "optimizer sized for another network");
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam | OptimizerKind::Adabound => {
                let s = &mut self.state;
                s.t += 1;
                let t = s.t;
                let bc1 = 1.0 - self.beta1.powf(t as f64);
                let bc2 = 1.0 - self.beta2.powf(t as f64);
                let bounds = adabound_bounds(self.final_lr, self.beta2, t);
                for i in 0..params.len() {
                    let g = grads[i];
                    s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
                    s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = s.m[i] / bc1;
                    let v_hat = s.v[i] / bc2;
                    let mut rate = self.lr / (v_hat.sqrt() + self.eps);
                    if self.kind == OptimizerKind::Adabound {
                        rate = rate.clamp(bounds.0, bounds.1);
                    }
                    params[i] -= rate * m_hat;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adabound(n: usize) -> Optimizer {
        Optimizer::new(OptimizerKind::Adabound, n, 1e-3, 0.1, 0.9, 0.999, 1e-8)
    }

    #[test]
    fn bounds_pinch_to_final_rate() {
        let (lo, hi) = adabound_bounds(0.1, 0.999, 1_000_000);
        assert!((lo - 0.1).abs() / 0.1 < 2e-3);
        assert!((hi - 0.1).abs() / 0.1 < 2e-3);
        let (lo1, hi1) = adabound_bounds(0.1, 0.999, 1);
        assert!(lo1 < 1e-3 && hi1 > 100.0);
    }

    #[test]
    fn first_step_by_hand() {
        // t = 1: m̂ = g, v̂ = g², rate = lr / (|g| + eps) = 0.002 lies inside
        // [0.1 (1 − 1/1.001), 0.1 (1 + 1/0.001)], so Δp = −0.002 · 0.5.
        let mut opt = adabound(1);
        let mut p = [1.0];
        opt.step(&mut p, &[0.5]);
        let rate: f64 = 1e-3 / (0.5 + 1e-8);
        assert!((p[0] - (1.0 - rate * 0.5)).abs() < 1e-15);

        // A tiny gradient makes lr/√v̂ huge; it is clipped to the upper bound.
        let mut opt = adabound(1);
        let mut p = [0.0];
        opt.step(&mut p, &[1e-9]);
        let (_, hi) = adabound_bounds(0.1, 0.999, 1);
        assert!((p[0] + hi * 1e-9).abs() < 1e-20);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::Adabound] {
            let mut opt = Optimizer::new(kind, 3, 1e-2, 0.1, 0.9, 0.999, 1e-8);
            let mut p = [1.0, -2.0, 3.0];
            opt.step(&mut p, &[0.0; 3]);
            assert_eq!(p, [1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn snapshot_restores_state() {
        let mut opt = adabound(2);
        let mut p = [0.0, 0.0];
        opt.step(&mut p, &[1.0, -1.0]);
        let snap = opt.clone();
        opt.step(&mut p, &[0.3, 0.3]);
        assert_ne!(opt, snap);
        assert_eq!(snap.steps_taken(), 1);
    }
}
