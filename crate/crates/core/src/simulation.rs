//! Fixed-step integration, reference trajectories and scheduling data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manipulator::{self, ManipulatorParams, ManipulatorState};
use crate::model::{split_blocks, AffineLpvModel, TrajectoryDataset, TrajectorySource};

/// Number of steps `duration / sample_time`, which must be integral.
pub fn step_count(sample_time: f64, duration: f64) -> Result<usize> {
    if !(sample_time > 0.0 && sample_time.is_finite()) {
        return Err(Error::invalid(format!("sample time must be positive, got {sample_time}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    let ratio = duration / sample_time;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "duration {duration} is not an integer multiple of sample time {sample_time}"
        )));
    }
    Ok(steps as usize)
}

/// States sampled at `t = 0, T_s, …, duration`, one column per instant.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
}

/// Classic fourth-order Runge–Kutta with step `sample_time`.
///
/// `field(t, x, u)` is the state derivative and `input(t)` the input signal,
/// evaluated at the stage times.
pub fn integrate_rk4<F, U>(
    field: F,
    x0: &DVector<f64>,
    input: U,
    sample_time: f64,
    duration: f64,
) -> Result<StateTrajectory>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
    U: Fn(f64) -> DVector<f64>,
{
    let steps = step_count(sample_time, duration)?;
    rk4_steps(|t, x| field(t, x, &input(t)), x0, sample_time, steps)
}

fn rk4_steps<F>(field: F, x0: &DVector<f64>, h: f64, steps: usize) -> Result<StateTrajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut states = DMatrix::zeros(x0.len(), steps + 1);
    states.set_column(0, x0);
    let mut x = x0.clone();
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = field(t, &x);
        let k2 = field(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = field(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = field(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = (k + 1) as f64 * h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t_next });
        }
        states.set_column(k + 1, &x);
        times.push(t_next);
    }
    Ok(StateTrajectory { times, states })
}

/// One term `amplitude · sin(frequency · t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Knot `(t, [q1, q2])` of a piecewise-linear reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub q: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceKind {
    SinusoidSum { channels: [Vec<Sinusoid>; 2] },
    /// Starts at `+amplitude`, switches sign every half period.
    SquareWave { period: f64, amplitude: [f64; 2] },
    /// Linear interpolation between knots, held constant outside them.
    PiecewiseLinear { knots: Vec<Knot> },
}

/// Joint-space reference description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    #[serde(flatten)]
    pub kind: ReferenceKind,
    pub duration: f64,
    pub sample_time: f64,
}

pub const DEFAULT_SAMPLE_TIME: f64 = 0.01;
pub const DEFAULT_DURATION: f64 = 20.0;

fn sines(terms: &[(f64, f64, f64)]) -> Vec<Sinusoid> {
    terms
        .iter()
        .map(|&(amplitude, frequency, phase)| Sinusoid {
            amplitude,
            frequency,
            phase,
        })
        .collect()
}

impl ReferenceSpec {
    /// Data-generating reference: two sinusoids per joint.
    pub fn reference_1() -> Self {
        Self {
            kind: ReferenceKind::SinusoidSum {
                channels: [
                    sines(&[(0.8, 0.5, 0.0), (0.3, 1.0, 0.4)]),
                    sines(&[(0.6, 0.7, 1.0), (0.3, 0.3, 0.0)]),
                ],
            },
            duration: DEFAULT_DURATION,
            sample_time: DEFAULT_SAMPLE_TIME,
        }
    }

    /// Same family as [`Self::reference_1`] with other frequencies and phases.
    pub fn reference_2() -> Self {
        Self {
            kind: ReferenceKind::SinusoidSum {
                channels: [
                    sines(&[(0.7, 0.6, 0.5), (0.3, 0.9, 1.2)]),
                    sines(&[(0.6, 0.8, 2.0), (0.25, 0.4, 0.7)]),
                ],
            },
            duration: DEFAULT_DURATION,
            sample_time: DEFAULT_SAMPLE_TIME,
        }
    }

    /// Square wave on q1 (period 8 s, amplitude 1 rad), q2 held at zero.
    pub fn reference_3() -> Self {
        Self {
            kind: ReferenceKind::SquareWave {
                period: 8.0,
                amplitude: [1.0, 0.0],
            },
            duration: DEFAULT_DURATION,
            sample_time: DEFAULT_SAMPLE_TIME,
        }
    }

    pub fn validate(&self) -> Result<usize> {
        let steps = step_count(self.sample_time, self.duration)?;
        match &self.kind {
            ReferenceKind::SinusoidSum { channels } => {
                let finite = channels
                    .iter()
                    .flatten()
                    .all(|s| s.amplitude.is_finite() && s.frequency.is_finite() && s.phase.is_finite());
                if !finite {
                    return Err(Error::invalid("sinusoid parameters must be finite"));
                }
            }
            ReferenceKind::SquareWave { period, amplitude } => {
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::invalid("square-wave period must be positive"));
                }
                if amplitude.iter().any(|a| !a.is_finite()) {
                    return Err(Error::invalid("square-wave amplitude must be finite"));
                }
            }
            ReferenceKind::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(Error::invalid("piecewise-linear reference needs knots"));
                }
                if knots.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(Error::invalid("knot times must be strictly increasing"));
                }
            }
        }
        Ok(steps)
    }

    /// Position and velocity of both joints at time `t`.
    pub fn evaluate(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let mut q = [0.0; 2];
        let mut dq = [0.0; 2];
        match &self.kind {
            ReferenceKind::SinusoidSum { channels } => {
                for (ch, terms) in channels.iter().enumerate() {
                    for s in terms {
                        let arg = s.frequency * t + s.phase;
                        q[ch] += s.amplitude * arg.sin();
                        dq[ch] += s.amplitude * s.frequency * arg.cos();
                    }
                }
            }
            ReferenceKind::SquareWave { period, amplitude } => {
                let phase = t.rem_euclid(*period);
                let sign = if phase < 0.5 * period { 1.0 } else { -1.0 };
                q = [amplitude[0] * sign, amplitude[1] * sign];
            }
            ReferenceKind::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t < first.t {
                    q = first.q;
                } else if t >= last.t {
                    q = last.q;
                } else {
                    let i = knots.partition_point(|k| k.t <= t) - 1;
                    let (k0, k1) = (knots[i], knots[i + 1]);
                    let w = (t - k0.t) / (k1.t - k0.t);
                    for ch in 0..2 {
                        let slope = (k1.q[ch] - k0.q[ch]) / (k1.t - k0.t);
                        q[ch] = k0.q[ch] + w * (k1.q[ch] - k0.q[ch]);
                        dq[ch] = slope;
                    }
                }
            }
        }
        (q, dq)
    }
}

/// Sampled reference positions and velocities (`2 × K` each).
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub q: DMatrix<f64>,
    pub dq: DMatrix<f64>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> ManipulatorState {
        ManipulatorState::new(self.q[(0, k)], self.q[(1, k)], self.dq[(0, k)], self.dq[(1, k)])
    }

    pub fn sample_time(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            DEFAULT_SAMPLE_TIME
        }
    }
}

pub fn generate_reference(spec: &ReferenceSpec) -> Result<ReferenceTrajectory> {
    let steps = spec.validate()?;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * spec.sample_time).collect();
    let mut q = DMatrix::zeros(2, steps + 1);
    let mut dq = DMatrix::zeros(2, steps + 1);
    for (k, &t) in times.iter().enumerate() {
        let (qk, dqk) = spec.evaluate(t);
        for ch in 0..2 {
            q[(ch, k)] = qk[ch];
            dq[(ch, k)] = dqk[ch];
        }
    }
    Ok(ReferenceTrajectory { times, q, dq })
}

/// `Γ` with column `k` equal to `η(x_ref(k·T_s))`.
pub fn generate_scheduling_data(
    params: &ManipulatorParams,
    reference: &ReferenceTrajectory,
    exec: Exec,
) -> Result<TrajectoryDataset> {
    if reference.is_empty() {
        return Err(Error::invalid("empty reference trajectory"));
    }
    let cols = exec.map(reference.len(), |k| {
        manipulator::scheduling_map(params, &reference.state(k))
    });
    let gamma = DMatrix::from_fn(manipulator::N_RHO, cols.len(), |i, k| cols[k][i]);
    let states = DMatrix::from_fn(4, reference.len(), |i, k| {
        if i < 2 {
            reference.q[(i, k)]
        } else {
            reference.dq[(i - 2, k)]
        }
    });
    TrajectoryDataset::new(gamma, reference.sample_time())?.with_source(TrajectorySource {
        states,
        inputs: None,
    })
}

/// Simulated LPV trajectories: `nx × K` states and `ny × K` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LpvSimulation {
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
}

/// Integrates `ẋ = A(σ)x + B(σ)u` with zero-order-hold schedule and input.
///
/// Column `k` of `schedule` and `input` is held on `[k·T_s, (k+1)·T_s)`.
pub fn simulate_lpv(
    model: &AffineLpvModel,
    schedule: &DMatrix<f64>,
    input: &DMatrix<f64>,
    x0: &DVector<f64>,
    sample_time: f64,
) -> Result<LpvSimulation> {
    let k_len = schedule.ncols();
    if input.ncols() != k_len {
        return Err(Error::dim(format!(
            "schedule has {k_len} samples, input has {}",
            input.ncols()
        )));
    }
    if schedule.nrows() != model.n_rho() || input.nrows() != model.nu() || x0.len() != model.nx() {
        return Err(Error::dim("schedule, input or x0 does not match the model"));
    }
    if k_len == 0 {
        return Err(Error::invalid("empty schedule"));
    }
    if !(sample_time > 0.0) {
        return Err(Error::invalid("sample time must be positive"));
    }
    let (nx, nu, ny) = (model.nx(), model.nu(), model.ny());
    let blocks = (0..k_len)
        .map(|k| split_blocks(&model.eval(&schedule.column(k).into_owned())?, nx, nu, ny))
        .collect::<Result<Vec<_>>>()?;
    let h = sample_time;
    let mut states = DMatrix::zeros(nx, k_len);
    states.set_column(0, x0);
    let mut x = x0.clone();
    for k in 0..k_len - 1 {
        let bl = &blocks[k];
        let bu = &bl.b * input.column(k);
        let f = |z: &DVector<f64>| &bl.a * z + &bu;
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (0.5 * h)));
        let k3 = f(&(&x + &k2 * (0.5 * h)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * h,
            });
        }
        states.set_column(k + 1, &x);
    }
    let mut outputs = DMatrix::zeros(ny, k_len);
    for k in 0..k_len {
        let y = &blocks[k].c * states.column(k) + &blocks[k].d * input.column(k);
        outputs.set_column(k, &y);
    }
    Ok(LpvSimulation { states, outputs })
}

/// Simulates the nonlinear arm under a torque signal.
pub fn simulate_manipulator<U>(
    params: &ManipulatorParams,
    x0: &ManipulatorState,
    torque: U,
    sample_time: f64,
    duration: f64,
) -> Result<StateTrajectory>
where
    U: Fn(f64) -> [f64; 2],
{
    let field = |_t: f64, x: &DVector<f64>, u: &DVector<f64>| {
        let s = ManipulatorState::new(x[0], x[1], x[2], x[3]);
        DVector::from_row_slice(&manipulator::dynamics_unchecked(params, &s, [u[0], u[1]]))
    };
    integrate_rk4(
        field,
        &x0.to_vector(),
        |t| DVector::from_row_slice(&torque(t)),
        sample_time,
        duration,
    )
}

/// Writes `time, channel_0, …` rows.
pub fn trajectory_csv(times: &[f64], channels: &DMatrix<f64>, names: &[&str]) -> Result<String> {
    if channels.ncols() != times.len() || names.len() != channels.nrows() {
        return Err(Error::dim("trajectory columns or names do not match"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (k, t) in times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(channels.column(k).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

/// A smooth open-loop torque excitation used by the open-loop comparisons.
pub fn default_excitation(t: f64) -> [f64; 2] {
    [0.5 * (1.3 * t).sin(), 0.3 * (0.7 * t + 0.25 * PI).cos()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field() {
        let x0 = DVector::from_vec(vec![1.5, -2.0]);
        let tr = integrate_rk4(
            |_, x, _| DVector::zeros(x.len()),
            &x0,
            |_| DVector::zeros(0),
            0.1,
            1.0,
        )
        .unwrap();
        assert_eq!(tr.states.ncols(), 11);
        for c in tr.states.column_iter() {
            assert_eq!(c, x0);
        }
    }

    #[test]
    fn exponential_decay() {
        let tr = integrate_rk4(
            |_, x, _| -x,
            &DVector::from_vec(vec![1.0]),
            |_| DVector::zeros(0),
            0.01,
            1.0,
        )
        .unwrap();
        let last = tr.states[(0, tr.states.ncols() - 1)];
        assert!((last - (-1.0f64).exp()).abs() < 1e-8);
        assert!((last - 0.367879).abs() < 1e-6);
        assert!((tr.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_reports_time() {
        let err = integrate_rk4(
            |_, x, _| x.map(|v| v * v * 1e150),
            &DVector::from_vec(vec![1e100]),
            |_| DVector::zeros(0),
            0.1,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BlowUp { time } if time > 0.0));
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(0.01, 20.0).unwrap(), 2000);
        assert!(step_count(0.01, 0.0).is_err());
        assert!(step_count(0.0, 1.0).is_err());
        assert!(step_count(0.3, 1.0).is_err());
    }

    #[test]
    fn sinusoid_velocity_is_analytic() {
        let spec = ReferenceSpec {
            kind: ReferenceKind::SinusoidSum {
                channels: [sines(&[(0.7, 0.9, 0.0)]), vec![]],
            },
            duration: 2.0,
            sample_time: 0.5,
        };
        let r = generate_reference(&spec).unwrap();
        for (k, t) in r.times.iter().enumerate() {
            assert_eq!(r.q[(0, k)], 0.7 * (0.9 * t).sin());
            assert_eq!(r.dq[(0, k)], 0.7 * 0.9 * (0.9 * t).cos());
            assert_eq!(r.q[(1, k)], 0.0);
        }
    }

    #[test]
    fn square_wave_values() {
        let r = generate_reference(&ReferenceSpec::reference_3()).unwrap();
        assert!(r.q.row(0).iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(r.q.row(0).iter().any(|&v| v == -1.0));
        assert!(r.q.row(1).iter().all(|&v| v == 0.0));
        assert!(r.dq.iter().all(|&v| v == 0.0));
        // First half period positive, second negative.
        assert_eq!(r.q[(0, 100)], 1.0);
        assert_eq!(r.q[(0, 500)], -1.0);
    }

    #[test]
    fn zero_amplitude_reference_is_zero() {
        let spec = ReferenceSpec {
            kind: ReferenceKind::SinusoidSum {
                channels: [sines(&[(0.0, 1.0, 0.3)]), sines(&[(0.0, 0.2, 0.0)])],
            },
            duration: 1.0,
            sample_time: 0.1,
        };
        let r = generate_reference(&spec).unwrap();
        assert!(r.q.iter().chain(r.dq.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn piecewise_linear_reference() {
        let spec = ReferenceSpec {
            kind: ReferenceKind::PiecewiseLinear {
                knots: vec![
                    Knot { t: 0.0, q: [0.0, 0.0] },
                    Knot { t: 1.0, q: [1.0, -2.0] },
                ],
            },
            duration: 2.0,
            sample_time: 0.25,
        };
        let r = generate_reference(&spec).unwrap();
        assert_eq!(r.q[(0, 2)], 0.5);
        assert_eq!(r.dq[(1, 2)], -2.0);
        assert_eq!(r.q[(1, 8)], -2.0);
        assert_eq!(r.dq[(1, 8)], 0.0);
    }

    #[test]
    fn reference_spec_json() {
        let spec = ReferenceSpec::reference_1();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"sinusoid-sum\""));
        assert_eq!(serde_json::from_str::<ReferenceSpec>(&json).unwrap(), spec);
        let unknown = r#"{"kind":"chirp","duration":1.0,"sample_time":0.1}"#;
        assert!(serde_json::from_str::<ReferenceSpec>(unknown).is_err());
    }

    #[test]
    fn scheduling_data_shape_and_zero_reference() {
        let p = ManipulatorParams::default();
        let r = generate_reference(&ReferenceSpec::reference_1()).unwrap();
        let ds = generate_scheduling_data(&p, &r, Exec::Parallel).unwrap();
        assert_eq!((ds.n_rho(), ds.n_samples()), (10, 2001));
        let seq = generate_scheduling_data(&p, &r, Exec::Sequential).unwrap();
        assert_eq!(ds, seq);
        let n = crate::model::Normalizer::fit(ds.gamma()).unwrap();
        let gn = n.apply_matrix(ds.gamma()).unwrap();
        assert!(gn.iter().all(|v| v.abs() <= 1.0 + 1e-12));

        let zero = ReferenceSpec {
            kind: ReferenceKind::SquareWave {
                period: 1.0,
                amplitude: [0.0, 0.0],
            },
            duration: 1.0,
            sample_time: 0.1,
        };
        let ds = generate_scheduling_data(&p, &generate_reference(&zero).unwrap(), Exec::Sequential)
            .unwrap();
        let eta0 = manipulator::scheduling_map(&p, &ManipulatorState::default());
        for c in ds.gamma().column_iter() {
            assert_eq!(c.as_slice(), &eta0);
        }
    }

    fn random_lti(seed: u64) -> AffineLpvModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m0 = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..3 {
            m0[(i, i)] -= 2.0;
        }
        let m1 = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-0.3..0.3));
        AffineLpvModel::new(3, 1, 1, m0, vec![m1]).unwrap()
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let model = random_lti(1);
        let sim = simulate_lpv(
            &model,
            &DMatrix::from_element(1, 50, 0.3),
            &DMatrix::zeros(1, 50),
            &DVector::zeros(3),
            0.01,
        )
        .unwrap();
        assert!(sim.states.iter().chain(sim.outputs.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_schedule_matches_matrix_exponential() {
        let model = random_lti(9);
        let sigma = 0.7;
        let m = model.eval(&DVector::from_vec(vec![sigma])).unwrap();
        let bl = split_blocks(&m, 3, 1, 1).unwrap();
        let h = 0.01;
        let k_len = 501;
        let x0 = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let sim = simulate_lpv(
            &model,
            &DMatrix::from_element(1, k_len, sigma),
            &DMatrix::from_element(1, k_len, 1.0),
            &x0,
            h,
        )
        .unwrap();
        // Augmented exponential exp([[A, B], [0, 0]] t) gives the exact step response.
        let mut aug = DMatrix::zeros(4, 4);
        aug.view_mut((0, 0), (3, 3)).copy_from(&bl.a);
        aug.view_mut((0, 3), (3, 1)).copy_from(&bl.b);
        let t = (k_len - 1) as f64 * h;
        let phi = (aug * t).exp();
        let exact = phi.view((0, 0), (3, 3)) * &x0 + phi.view((0, 3), (3, 1)) * 1.0;
        let got = sim.states.column(k_len - 1);
        assert!((got - exact).abs().max() < 1e-6);
    }

    #[test]
    fn simulate_lpv_rejects_mismatch() {
        let model = random_lti(2);
        assert!(simulate_lpv(
            &model,
            &DMatrix::zeros(1, 10),
            &DMatrix::zeros(1, 9),
            &DVector::zeros(3),
            0.01
        )
        .is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let text = trajectory_csv(&[0.0, 0.5], &DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), &["q1"])
            .unwrap();
        assert_eq!(text, "time,q1\n0,1\n0.5,2\n");
    }
}
