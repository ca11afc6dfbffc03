//! Monte Carlo ground truth: diffusive measurement records, the true
//! conditioned state and sampled intervention outcomes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_step_with, FilterState, StepMap};
use crate::model::{outcome_probabilities, conditioned_update_index, validate, ExperimentSpec};
use crate::qlinalg::{eigvalsh, CMatrix};
use crate::scalar::Real;

/// Minimum eigenvalue below which a simulated state is considered broken.
pub const POSITIVITY_ABORT: f64 = -1e-6;

/// Revealed (or sampled) outcome of an intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub index: usize,
    pub tau: f64,
    pub step: usize,
    pub label: String,
}

/// Homodyne readout on a uniform grid. Increment `i` covers `(t_i, t_{i+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord<T> {
    dt: T,
    channels: usize,
    n_steps: usize,
    // step-major: increments[i * channels + k]
    increments: Vec<T>,
    pub intervention_log: Vec<InterventionOutcome>,
}

impl<T: Real> MeasurementRecord<T> {
    pub fn new(dt: T, channels: usize, increments: Vec<T>) -> Result<Self> {
        if dt.is_nan() || dt <= T::zero() {
            return Err(Error::GridMisalignment(format!("non-positive dt {dt}")));
        }
        if channels == 0 && !increments.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "MeasurementRecord::new",
                expected: 0,
                found: increments.len(),
            });
        }
        if channels > 0 && !increments.len().is_multiple_of(channels) {
            return Err(Error::DimensionMismatch {
                context: "MeasurementRecord::new",
                expected: channels,
                found: increments.len() % channels,
            });
        }
        if let Some(i) = increments.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: i / channels.max(1) });
        }
        let n_steps = increments.len().checked_div(channels).unwrap_or(0);
        Ok(Self {
            dt,
            channels,
            n_steps,
            increments,
            intervention_log: Vec::new(),
        })
    }

    /// Channel-major construction, `per_channel[k][i]`.
    pub fn from_channels(dt: T, per_channel: &[Vec<T>]) -> Result<Self> {
        let channels = per_channel.len();
        let n = per_channel.first().map_or(0, Vec::len);
        if per_channel.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "MeasurementRecord::from_channels",
                expected: n,
                found: per_channel.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0),
            });
        }
        let mut inc = Vec::with_capacity(n * channels);
        for i in 0..n {
            for c in per_channel {
                inc.push(c[i]);
            }
        }
        Self::new(dt, channels, inc)
    }

    /// Record with `n_steps` steps and no channels, for unmonitored systems.
    pub fn empty(dt: T, n_steps: usize) -> Self {
        Self {
            dt,
            channels: 0,
            n_steps,
            increments: Vec::new(),
            intervention_log: vec![],
        }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> T {
        self.dt * T::from_usize(self.n_steps()).unwrap()
    }

    /// Increments of every channel at step `i`.
    #[inline]
    pub fn step(&self, i: usize) -> &[T] {
        &self.increments[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channel(&self, k: usize) -> Vec<T> {
        (0..self.n_steps()).map(|i| self.increments[i * self.channels + k]).collect()
    }

    /// Grid time `t_i = i·dt`.
    pub fn grid_time(&self, i: usize) -> T {
        self.dt * T::from_usize(i).unwrap()
    }

    /// Grid time at the end of increment `i`.
    pub fn time_after(&self, i: usize) -> T {
        self.dt * T::from_usize(i + 1).unwrap()
    }

    /// Restriction to steps `0..n`.
    pub fn truncated(&self, n: usize) -> Self {
        let mut r = self.clone();
        r.n_steps = n.min(self.n_steps);
        r.increments.truncate(r.n_steps * self.channels);
        r.intervention_log.retain(|o| o.step <= n);
        r
    }
}

/// Gaussian increments `dW ~ N(0, dt)` from a reproducible stream.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    rng: ChaCha20Rng,
    std: f64,
}

impl IncrementStream {
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

impl Iterator for IncrementStream {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let z: f64 = self.rng.sample(StandardNormal);
        Some(z * self.std)
    }
}

fn stream(seed: u64, stream_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Independent, reproducible stream of Wiener increments for trajectory
/// `index` of an ensemble seeded with `seed`.
pub fn derive_rng(seed: u64, index: u64, dt: f64) -> IncrementStream {
    IncrementStream {
        rng: stream(seed, index << 1),
        std: dt.sqrt(),
    }
}

/// Uniform stream used for sampling intervention outcomes of trajectory
/// `index`; disjoint from the increment stream.
pub fn outcome_rng(seed: u64, index: u64) -> ChaCha20Rng {
    stream(seed, (index << 1) | 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub store_states: bool,
    /// Copy sampled outcomes into the record's intervention log.
    pub reveal_outcomes: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            store_states: true,
            reveal_outcomes: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult<T> {
    pub record: MeasurementRecord<T>,
    /// Conditioned state at every grid time `t_0..=t_n` (after any
    /// intervention applied at that time).
    pub true_states: Option<Vec<CMatrix<T>>>,
    pub hidden_outcomes: Vec<InterventionOutcome>,
}

impl<T: Real> TrajectoryResult<T> {
    pub fn final_state(&self) -> Option<&CMatrix<T>> {
        self.true_states.as_ref().and_then(|s| s.last())
    }
}

/// Simulates trajectory `index` of `spec`: the conditioned state is advanced
/// with the filter step on increments `dY_k = √η_k λ_k dt + dW_k`, where
/// `λ_k = tr{ρ (L_k + L_k†)}` is evaluated at the start of the step.
pub fn simulate<T: Real>(spec: &ExperimentSpec<T>, index: u64, opts: SimulationOptions) -> Result<TrajectoryResult<T>> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    let model = &spec.model;
    let n = spec.n_steps();
    let channels = model.channels();
    let dt = spec.dt;
    let (steps, _) = spec.intervention_steps();
    let sqrt_eta: Vec<T> = model.efficiencies.iter().map(|e| e.sqrt()).collect();
    let hermitian_x: Vec<CMatrix<T>> = model.couplings.iter().map(|l| l + &l.adjoint()).collect();

    let map = StepMap::new(model, dt)?;
    let mut noise = derive_rng(spec.seed, index, dt.as_f64());
    let mut uniforms = outcome_rng(spec.seed, index);
    let mut state = FilterState::normalized(spec.initial_state.clone(), T::zero());
    let mut increments = Vec::with_capacity(n * channels);
    let mut stored = opts.store_states.then(|| Vec::with_capacity(n + 1));
    let mut outcomes = Vec::new();
    let mut dy = vec![T::zero(); channels];

    for i in 0..=n {
        if let Some(k) = steps.iter().position(|&s| s == i) {
            let iv = &spec.interventions[k];
            let probs = outcome_probabilities(iv, &state.rho)?;
            let u: f64 = uniforms.random();
            let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (m, p) in probs.iter().enumerate() {
                acc += p.as_f64();
                if u * total < acc {
                    chosen = m;
                    break;
                }
            }
            state.rho = conditioned_update_index(iv, &state.rho, chosen)?;
            outcomes.push(InterventionOutcome {
                index: k,
                tau: (T::from_usize(i).unwrap() * dt).as_f64(),
                step: i,
                label: iv.outcomes[chosen].label.clone(),
            });
        }
        if let Some(s) = stored.as_mut() {
            s.push(state.rho.clone());
        }
        if i == n {
            break;
        }
        for k in 0..channels {
            let lambda = state.rho.trace_product(&hermitian_x[k]).re;
            let dw = T::lit(noise.next().unwrap());
            dy[k] = sqrt_eta[k] * lambda * dt + dw;
        }
        increments.extend_from_slice(&dy);
        state = filter_step_with(&state, &dy, &map)?;
        let min_eig = eigvalsh(&state.rho)?[0];
        if min_eig.as_f64() < POSITIVITY_ABORT {
            return Err(Error::PositivityLost {
                step: i + 1,
                min_eigenvalue: min_eig.as_f64(),
            });
        }
    }

    let mut record = if channels == 0 {
        MeasurementRecord::empty(dt, n)
    } else {
        MeasurementRecord::new(dt, channels, increments)?
    };
    if opts.reveal_outcomes {
        record.intervention_log = outcomes.clone();
    }
    Ok(TrajectoryResult {
        record,
        true_states: stored,
        hidden_outcomes: outcomes,
    })
}

/// Simulates trajectories `0..count` in parallel; results are ordered by index.
pub fn simulate_ensemble<T: Real>(
    spec: &ExperimentSpec<T>,
    count: usize,
    opts: SimulationOptions,
) -> Vec<Result<TrajectoryResult<T>>> {
    (0..count as u64).into_par_iter().map(|i| simulate(spec, i, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InterventionSpec, OpenSystemModel};
    use crate::qlinalg::{pauli, trace_distance};

    fn spec(model: OpenSystemModel<f64>, horizon: f64, dt: f64) -> ExperimentSpec<f64> {
        ExperimentSpec {
            model,
            horizon,
            dt,
            interventions: vec![],
            initial_state: pauli::plus_state(),
            seed: 42,
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = derive_rng(42, 0, 1.0).take(100).collect();
        let b: Vec<f64> = derive_rng(42, 0, 1.0).take(100).collect();
        let c: Vec<f64> = derive_rng(42, 1, 1.0).take(100).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn increment_statistics() {
        let dt = 1e-3;
        let n = 100_000;
        let draws: Vec<f64> = derive_rng(42, 0, dt).take(n).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // mean of N(0, dt) within 4 standard errors
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn decoupled_bath_leaves_state_unchanged() {
        let m = OpenSystemModel::ideal(CMatrix::zeros(2, 2), vec![CMatrix::zeros(2, 2)]);
        let s = spec(m, 0.1, 1e-3);
        let r = simulate(&s, 0, SimulationOptions::default()).unwrap();
        for st in r.true_states.as_ref().unwrap() {
            assert!(st.max_abs_diff(&s.initial_state) < 1e-15);
        }
        let expected: Vec<f64> = derive_rng(42, 0, 1e-3).take(100).collect();
        assert_eq!(r.record.channel(0), expected);
    }

    #[test]
    fn zero_efficiency_record_is_pure_noise() {
        let m = OpenSystemModel::new(CMatrix::zeros(2, 2), vec![pauli::z()], vec![0.0]);
        let mut s = spec(m, 10.0, 1e-3);
        s.initial_state = CMatrix::basis_projector(2, 0);
        let r = simulate(&s, 3, SimulationOptions { store_states: false, reveal_outcomes: false }).unwrap();
        let dy = r.record.channel(0);
        let n = dy.len() as f64;
        let mean = dy.iter().sum::<f64>() / n;
        let var = dy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (1e-3 / n).sqrt());
        assert!((var / 1e-3 - 1.0).abs() < 0.05);
    }

    #[test]
    fn trace_is_preserved() {
        let m = OpenSystemModel::ideal(pauli::x::<f64>().scale_real(0.5), vec![pauli::lower()]);
        let s = spec(m, 1.0, 1e-3);
        let r = simulate(&s, 0, SimulationOptions::default()).unwrap();
        for st in r.true_states.unwrap() {
            assert!((st.trace().re - 1.0).abs() < 1e-6);
            assert!(st.trace().im.abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = OpenSystemModel::ideal(CMatrix::zeros(2, 2), vec![pauli::z()]);
        let s = spec(m, 0.5, 1e-3);
        let a = simulate(&s, 5, SimulationOptions::default()).unwrap();
        let b = simulate(&s, 5, SimulationOptions::default()).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.true_states, b.true_states);
    }

    #[test]
    fn sampled_outcomes_are_revealed_on_request() {
        let m = OpenSystemModel::ideal(CMatrix::zeros(2, 2), vec![pauli::z()]);
        let mut s = spec(m, 0.5, 1e-2);
        s.interventions.push(InterventionSpec::computational_basis(
            0.25,
            CMatrix::basis_projector(2, 0),
            pauli::cnot(),
        ));
        let r = simulate(&s, 0, SimulationOptions { store_states: true, reveal_outcomes: true }).unwrap();
        assert_eq!(r.hidden_outcomes.len(), 1);
        assert_eq!(r.record.intervention_log, r.hidden_outcomes);
        assert_eq!(r.hidden_outcomes[0].step, 25);
        // CNOT readout collapses the system onto the reported basis state
        let m: usize = r.hidden_outcomes[0].label.parse().unwrap();
        let st = &r.true_states.unwrap()[25];
        assert!(trace_distance(st, &CMatrix::basis_projector(2, m)).unwrap() < 1e-12);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let m = OpenSystemModel::new(CMatrix::zeros(2, 2), vec![pauli::z()], vec![2.0]);
        let s = spec(m, 0.5, 1e-2);
        assert!(matches!(simulate(&s, 0, SimulationOptions::default()), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn record_shape_checks() {
        assert!(MeasurementRecord::new(0.1, 2, vec![0.0; 3]).is_err());
        assert!(MeasurementRecord::new(0.1, 1, vec![f64::NAN]).is_err());
        let r = MeasurementRecord::from_channels(0.1, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(r.step(1), &[2.0, 4.0]);
        assert_eq!(r.channel(1), vec![3.0, 4.0]);
        assert_eq!(r.n_steps(), 2);
        assert_eq!(MeasurementRecord::<f64>::empty(0.1, 7).n_steps(), 7);
    }
}
