//! Backward effect operators and retrodiction of concealed intervention
//! outcomes from the full measurement record.
//!
//! Grid convention: increment `i` covers `(t_i, t_{i+1}]`. An intervention
//! snapped to step `j` acts after increments `0..j` and before increment `j`,
//! so the increment at the intervention step belongs to the future segment.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{check_record, rebalance, run_filter, StepMap};
use crate::model::{cp_map_dual, cp_map_index, outcome_probabilities, ExperimentSpec, InterventionSpec, OpenSystemModel, Violation};
use crate::qlinalg::{tensor_product, CMatrix};
use crate::scalar::Real;
use crate::trajectory::MeasurementRecord;

/// Smallest admissible retrodiction denominator.
pub const MIN_NORMALIZER: f64 = 1e-300;

/// Per-step linear maps of a record: the unnormalized forward state update
/// and its Heisenberg dual. Implemented for diffusive records and for the
/// discrete collision model.
pub trait StepKernel<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn forward(&self, i: usize, rho: &CMatrix<T>) -> Result<CMatrix<T>>;
    fn backward(&self, i: usize, effect: &CMatrix<T>) -> Result<CMatrix<T>>;
}

/// Kernel of a homodyne record under a model.
#[derive(Debug, Clone)]
pub struct DiffusiveKernel<'a, T> {
    map: StepMap<T>,
    record: &'a MeasurementRecord<T>,
}

impl<'a, T: Real> DiffusiveKernel<'a, T> {
    pub fn new(model: &OpenSystemModel<T>, record: &'a MeasurementRecord<T>) -> Result<Self> {
        if record.channels() != model.channels() {
            return Err(Error::DimensionMismatch {
                context: "record channels",
                expected: model.channels(),
                found: record.channels(),
            });
        }
        Ok(Self {
            map: StepMap::new(model, record.dt())?,
            record,
        })
    }

    pub fn map(&self) -> &StepMap<T> {
        &self.map
    }
}

impl<T: Real> StepKernel<T> for DiffusiveKernel<'_, T> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn n_steps(&self) -> usize {
        self.record.n_steps()
    }

    fn forward(&self, i: usize, rho: &CMatrix<T>) -> Result<CMatrix<T>> {
        self.map.forward(rho, self.record.step(i))
    }

    fn backward(&self, i: usize, effect: &CMatrix<T>) -> Result<CMatrix<T>> {
        self.map.adjoint(effect, self.record.step(i))
    }
}

/// Backward effect step `E(T, t) ↦ E(T, t - dt)` consuming the increment on
/// `(t - dt, t]`. This is the exact dual of the filter step, so
/// `tr{ρ_t E(T, t)}` is constant along the grid; to Itô order it reads
/// `E + ℒ(E) dt + Σ_k √η_k (E L_k + L_k† E) dY_k`.
pub fn backward_effect_step<T: Real>(effect: &CMatrix<T>, dy: &[T], model: &OpenSystemModel<T>, dt: T) -> Result<CMatrix<T>> {
    if dy.len() != model.channels() {
        return Err(Error::DimensionMismatch {
            context: "measurement increments",
            expected: model.channels(),
            found: dy.len(),
        });
    }
    let next = StepMap::new(model, dt)?.adjoint(effect, dy)?;
    if !next.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(next)
}

/// Plain Euler increment `E + ℒ(E) dt + Σ_k √η_k (E L_k + L_k† E) dY_k`.
/// Kept for comparison studies.
pub fn backward_effect_step_euler<T: Real>(effect: &CMatrix<T>, dy: &[T], model: &OpenSystemModel<T>, dt: T) -> Result<CMatrix<T>> {
    effect.require_dim(model.dim(), "effect")?;
    let mut out = effect.clone();
    out.add_scaled_real(dt, &crate::filter::heisenberg_lindbladian(model, effect));
    for ((l, &eta), &y) in model.couplings.iter().zip(&model.efficiencies).zip(dy) {
        let el = effect.matmul(l);
        let w = eta.sqrt() * y;
        out.add_scaled_real(w, &el);
        out.add_scaled_real(w, &el.adjoint());
    }
    Ok(out)
}

/// Grid index of time `t`, if `t` lies on the grid of `record`.
pub fn grid_index<T: Real>(record: &MeasurementRecord<T>, t: T) -> Result<usize> {
    let x = (t / record.dt()).as_f64();
    let i = x.round();
    if !(i >= 0.0 && (x - i).abs() <= 1e-9 * x.abs().max(1.0) && i as usize <= record.n_steps()) {
        return Err(Error::GridMisalignment(format!(
            "t = {t} is not a grid time of a record with dt = {} and {} steps",
            record.dt(),
            record.n_steps()
        )));
    }
    Ok(i as usize)
}

/// Time-ordered product `A(dY_{i2-1}) ⋯ A(dY_{i1})` of single-step Kraus
/// factors between grid steps `i1 ≤ i2`.
pub fn forward_propagator_steps<T: Real>(record: &MeasurementRecord<T>, map: &StepMap<T>, i1: usize, i2: usize) -> Result<CMatrix<T>> {
    if i1 > i2 || i2 > record.n_steps() {
        return Err(Error::GridMisalignment(format!(
            "invalid step range {i1}..{i2} for a record of {} steps",
            record.n_steps()
        )));
    }
    let mut f = CMatrix::identity(map.dim());
    for i in i1..i2 {
        f = map.kraus(record.step(i))?.matmul(&f);
    }
    Ok(f)
}

/// Forward propagator `F^Y(t2, t1)` on the record grid.
pub fn forward_propagator<T: Real>(record: &MeasurementRecord<T>, model: &OpenSystemModel<T>, t1: T, t2: T) -> Result<CMatrix<T>> {
    let i1 = grid_index(record, t1)?;
    let i2 = grid_index(record, t2)?;
    if i1 > i2 {
        return Err(Error::GridMisalignment(format!("t1 = {t1} exceeds t2 = {t2}")));
    }
    forward_propagator_steps(record, &StepMap::new(model, record.dt())?, i1, i2)
}

/// `E^Y(T, t_i)` at every grid time, stored as `exp(log_scales[i]) · effects[i]`.
#[derive(Debug, Clone)]
pub struct EffectTrajectory<T> {
    pub times: Vec<T>,
    pub effects: Vec<CMatrix<T>>,
    pub log_scales: Vec<T>,
    pub horizon: T,
}

/// Backward pass from `E(T, T) = I` over the whole record (no interventions).
pub fn effect_trajectory<T: Real>(record: &MeasurementRecord<T>, model: &OpenSystemModel<T>) -> Result<EffectTrajectory<T>> {
    let kernel = DiffusiveKernel::new(model, record)?;
    let n = record.n_steps();
    let mut effects = vec![CMatrix::identity(model.dim()); n + 1];
    let mut log_scales = vec![T::zero(); n + 1];
    let mut e = CMatrix::identity(model.dim());
    let mut log = T::zero();
    for i in (0..n).rev() {
        e = kernel.backward(i, &e)?;
        rebalance(&mut e, &mut log, i)?;
        effects[i] = e.clone();
        log_scales[i] = log;
    }
    Ok(EffectTrajectory {
        times: (0..=n).map(|i| record.grid_time(i)).collect(),
        effects,
        log_scales,
        horizon: record.horizon(),
    })
}

/// Retrodicted outcome distribution. For a joint table over several
/// interventions, `labels[j]` lists the outcome of each concealed
/// intervention (in `interventions` order) for entry `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrodictionResult<T> {
    pub interventions: Vec<usize>,
    pub taus: Vec<T>,
    pub labels: Vec<Vec<String>>,
    pub probabilities: Vec<T>,
    /// Denominator (record likelihood up to a model-independent constant),
    /// `exp(log_normalizer)`; may underflow for long records.
    pub normalizer: T,
    pub log_normalizer: T,
}

impl<T: Real> RetrodictionResult<T> {
    /// Probability of a single-intervention outcome label.
    pub fn probability(&self, label: &str) -> Option<T> {
        self.labels
            .iter()
            .position(|l| l.len() == 1 && l[0] == label)
            .map(|j| self.probabilities[j])
    }

    /// Marginal distribution of the `k`-th retrodicted intervention.
    pub fn marginal(&self, k: usize) -> Vec<(String, T)> {
        let mut out: Vec<(String, T)> = Vec::new();
        for (labels, &p) in self.labels.iter().zip(&self.probabilities) {
            match out.iter_mut().find(|(l, _)| *l == labels[k]) {
                Some(entry) => entry.1 = entry.1 + p,
                None => out.push((labels[k].clone(), p)),
            }
        }
        out
    }
}

/// Normalizes weights given as `w_j · exp(log_j)`.
fn normalize<T: Real>(weights: &[(T, T)]) -> Result<(Vec<T>, T)> {
    let max_log = weights
        .iter()
        .filter(|(w, _)| *w > T::zero())
        .map(|&(_, l)| l)
        .fold(T::neg_infinity(), T::max);
    if !max_log.is_finite() {
        return Err(Error::ZeroNormalizer { value: 0.0 });
    }
    let scaled: Vec<T> = weights
        .iter()
        .map(|&(w, l)| if w > T::zero() { w * (l - max_log).exp() } else { T::zero() })
        .collect();
    let total: T = scaled.iter().copied().sum();
    let log_normalizer = total.ln() + max_log;
    if !log_normalizer.is_finite() || log_normalizer.as_f64() <= MIN_NORMALIZER.ln() {
        return Err(Error::ZeroNormalizer {
            value: log_normalizer.as_f64().exp(),
        });
    }
    Ok((scaled.into_iter().map(|w| w / total).collect(), log_normalizer))
}

fn propagate_forward<T: Real, K: StepKernel<T>>(kernel: &K, rho: &mut CMatrix<T>, log: &mut T, range: std::ops::Range<usize>) -> Result<()> {
    for i in range {
        *rho = kernel.forward(i, rho)?;
        rebalance(rho, log, i + 1)?;
    }
    Ok(())
}

fn propagate_backward<T: Real, K: StepKernel<T>>(kernel: &K, e: &mut CMatrix<T>, log: &mut T, range: std::ops::Range<usize>) -> Result<()> {
    for i in range.rev() {
        *e = kernel.backward(i, e)?;
        rebalance(e, log, i)?;
    }
    Ok(())
}

/// Single concealed intervention at grid step `step`:
///
/// `p(m) ∝ tr{ (ρ_τ ⊗ ρ_probe) V† (E(T, τ) ⊗ P_m) V }`
///
/// with `ρ_τ` the unnormalized forward state from `rho0` and `E(T, τ)` the
/// backward effect from the identity at `T`, both on the kernel's record.
pub fn retrodict_single_with<T: Real, K: StepKernel<T>>(
    kernel: &K,
    intervention: &InterventionSpec<T>,
    step: usize,
    rho0: &CMatrix<T>,
) -> Result<(Vec<T>, T)> {
    let n = kernel.n_steps();
    if step > n {
        return Err(Error::GridMisalignment(format!("intervention step {step} beyond {n} steps")));
    }
    let d = kernel.dim();
    let mut rho = rho0.clone();
    let mut rho_log = T::zero();
    propagate_forward(kernel, &mut rho, &mut rho_log, 0..step)?;
    let mut e = CMatrix::identity(d);
    let mut e_log = T::zero();
    propagate_backward(kernel, &mut e, &mut e_log, step..n)?;

    let joint = tensor_product(&rho, &intervention.probe_state);
    let weights = intervention
        .outcomes
        .iter()
        .map(|o| {
            let pulled = tensor_product(&e, &o.projector).adjoint_sandwich(&intervention.coupling);
            (joint.trace_product(&pulled).re.max(T::zero()), rho_log + e_log)
        })
        .collect::<Vec<_>>();
    normalize(&weights)
}

fn intervention_order<T: Real>(spec: &ExperimentSpec<T>) -> Vec<(usize, usize)> {
    let (steps, _) = spec.intervention_steps();
    let mut order: Vec<(usize, usize)> = steps.into_iter().enumerate().map(|(k, s)| (s, k)).collect();
    order.sort();
    order
}

/// Joint retrodiction over all interventions of `spec`. `revealed[k]` fixes
/// the outcome index of intervention `k`; the table ranges over the others.
///
/// For every outcome tuple the nested backward expression
/// `tr{ρ₀ 𝒢₀(Φ₁†(𝒢₁(Φ₂†(⋯ 𝒢_r(I)))))}` is evaluated, where `𝒢_k` pulls an
/// effect back over the record segment `[τ_k, τ_{k+1})` and
/// `Φ_k†(E) = tr_probe{(I ⊗ ρ_probe,k) V_k† (E ⊗ P_{m_k}) V_k}`. Tracing out
/// each fresh probe as soon as its coupling is undone equals carrying
/// `P_{m_k}` on the `k`-th factor of the joint probe space.
pub fn retrodict_multi_with<T: Real, K: StepKernel<T>>(
    kernel: &K,
    spec: &ExperimentSpec<T>,
    revealed: &[Option<usize>],
    rho0: &CMatrix<T>,
) -> Result<RetrodictionResult<T>> {
    let r = spec.interventions.len();
    if revealed.len() != r {
        return Err(Error::DimensionMismatch {
            context: "revealed outcomes",
            expected: r,
            found: revealed.len(),
        });
    }
    let n = kernel.n_steps();
    let order = intervention_order(spec);
    if let Some(&(s, _)) = order.last() {
        if s > n {
            return Err(Error::GridMisalignment(format!("intervention step {s} beyond {n} steps")));
        }
    }
    let concealed: Vec<usize> = (0..r).filter(|&k| revealed[k].is_none()).collect();
    if concealed.is_empty() {
        return Err(Error::InvalidSpec(vec![Violation::new(
            "interventions",
            "no concealed intervention to retrodict",
            0.0,
        )]));
    }

    // forward to the first intervention
    let first = order.first().map_or(n, |&(s, _)| s);
    let mut rho = rho0.clone();
    let mut rho_log = T::zero();
    propagate_forward(kernel, &mut rho, &mut rho_log, 0..first)?;

    // enumerate outcome tuples over concealed interventions
    let sizes: Vec<usize> = concealed.iter().map(|&k| spec.interventions[k].outcomes.len()).collect();
    let count: usize = sizes.iter().product();
    let tuples: Vec<Vec<usize>> = (0..count)
        .map(|mut j| {
            let mut t = vec![0; sizes.len()];
            for c in (0..sizes.len()).rev() {
                t[c] = j % sizes[c];
                j /= sizes[c];
            }
            t
        })
        .collect();

    let weights: Vec<(T, T)> = tuples
        .par_iter()
        .map(|tuple| {
            let mut outcome = revealed.to_vec();
            for (c, &k) in concealed.iter().enumerate() {
                outcome[k] = Some(tuple[c]);
            }
            let mut e = CMatrix::identity(kernel.dim());
            let mut log = T::zero();
            let mut end = n;
            for &(s, k) in order.iter().rev() {
                propagate_backward(kernel, &mut e, &mut log, s..end)?;
                e = cp_map_dual(&spec.interventions[k], &e, outcome[k].expect("filled"))?.hermitian_part();
                if e.trace().re <= T::zero() {
                    return Ok((T::zero(), T::zero()));
                }
                rebalance(&mut e, &mut log, s)?;
                end = s;
            }
            Ok((rho.trace_product(&e).re.max(T::zero()), rho_log + log))
        })
        .collect::<Result<_>>()?;

    let (probabilities, log_normalizer) = normalize(&weights)?;
    let labels = tuples
        .iter()
        .map(|t| {
            concealed
                .iter()
                .zip(t)
                .map(|(&k, &m)| spec.interventions[k].outcomes[m].label.clone())
                .collect()
        })
        .collect();
    Ok(RetrodictionResult {
        taus: concealed.iter().map(|&k| spec.interventions[k].tau).collect(),
        interventions: concealed,
        labels,
        probabilities,
        normalizer: log_normalizer.exp(),
        log_normalizer,
    })
}

fn check_inputs<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<()> {
    let violations = crate::model::validate(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    check_record(record, spec)
}

/// Retrodiction of the single concealed intervention of `spec` from the
/// full record.
pub fn retrodict_single<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<RetrodictionResult<T>> {
    check_inputs(record, spec)?;
    if spec.interventions.len() != 1 {
        return Err(Error::InvalidSpec(vec![Violation::new(
            "interventions",
            format!("single-time retrodiction needs exactly one intervention, found {}", spec.interventions.len()),
            spec.interventions.len() as f64,
        )]));
    }
    let iv = &spec.interventions[0];
    let (steps, _) = spec.intervention_steps();
    let kernel = DiffusiveKernel::new(&spec.model, record)?;
    let (probabilities, log_normalizer) = retrodict_single_with(&kernel, iv, steps[0], &spec.initial_state)?;
    Ok(RetrodictionResult {
        interventions: vec![0],
        taus: vec![iv.tau],
        labels: iv.labels().into_iter().map(|l| vec![l]).collect(),
        probabilities,
        normalizer: log_normalizer.exp(),
        log_normalizer,
    })
}

/// Joint retrodiction of all interventions of `spec`, all concealed.
pub fn retrodict_multi<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<RetrodictionResult<T>> {
    check_inputs(record, spec)?;
    let kernel = DiffusiveKernel::new(&spec.model, record)?;
    retrodict_multi_with(&kernel, spec, &vec![None; spec.interventions.len()], &spec.initial_state)
}

/// Outcome indices of interventions whose labels appear in the record's
/// intervention log.
pub fn revealed_outcomes<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<Vec<Option<usize>>> {
    let mut revealed = vec![None; spec.interventions.len()];
    for o in &record.intervention_log {
        let iv = spec.interventions.get(o.index).ok_or_else(|| {
            Error::InvalidSpec(vec![Violation::new(
                "intervention_log",
                format!("logged outcome refers to missing intervention {}", o.index),
                o.index as f64,
            )])
        })?;
        revealed[o.index] = Some(iv.outcome_index(&o.label)?);
    }
    Ok(revealed)
}

/// Retrodiction of every intervention not revealed in the record's log,
/// conditioned on the revealed ones and the full record.
pub fn retrodict<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<RetrodictionResult<T>> {
    check_inputs(record, spec)?;
    let revealed = revealed_outcomes(record, spec)?;
    let kernel = DiffusiveKernel::new(&spec.model, record)?;
    retrodict_multi_with(&kernel, spec, &revealed, &spec.initial_state)
}

/// Born-rule prediction of intervention `k` from the record up to its time
/// only (all other interventions must precede it and be revealed).
pub fn filtered_predictor<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>, k: usize, revealed: &[String]) -> Result<Vec<T>> {
    check_inputs(record, spec)?;
    let (steps, _) = spec.intervention_steps();
    let step = *steps.get(k).ok_or(Error::MissingOutcome { index: k })?;
    let truncated = record.truncated(step);
    let mut partial = spec.clone();
    partial.interventions.truncate(k);
    partial.horizon = truncated.horizon();
    let states = run_filter(&truncated, &partial, revealed)?;
    outcome_probabilities(&spec.interventions[k], &states.last().expect("at least one state").rho)
}

/// Forward state and backward effect at a grid time, each stored as
/// `exp(log_scale) · matrix`.
#[derive(Debug, Clone)]
pub struct PastState<T> {
    pub t: T,
    pub rho: CMatrix<T>,
    pub rho_log_scale: T,
    pub effect: CMatrix<T>,
    pub effect_log_scale: T,
}

impl<T: Real> PastState<T> {
    /// `log tr{ρ_t E(T, t)}`, the record log-likelihood; constant in `t`.
    pub fn log_likelihood(&self) -> T {
        self.rho.trace_product(&self.effect).re.ln() + self.rho_log_scale + self.effect_log_scale
    }
}

/// `(ρ_t, E(T, t))` at every grid time.
///
/// Revealed interventions enter through `Φ_m` forward and `Φ_m†` backward;
/// concealed ones through the nonselective map `Σ_m Φ_m`. At an intervention
/// time the forward state is the post-intervention one and the effect covers
/// the record after it.
pub fn past_state_series<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<Vec<PastState<T>>> {
    check_inputs(record, spec)?;
    let revealed = revealed_outcomes(record, spec)?;
    let kernel = DiffusiveKernel::new(&spec.model, record)?;
    let n = record.n_steps();
    let (steps, _) = spec.intervention_steps();
    let at_step = |i: usize| -> Vec<usize> { (0..steps.len()).filter(|&k| steps[k] == i).collect() };
    let outcomes_of = |k: usize| -> Vec<usize> {
        match revealed[k] {
            Some(m) => vec![m],
            None => (0..spec.interventions[k].outcomes.len()).collect(),
        }
    };

    let mut forward = Vec::with_capacity(n + 1);
    let mut rho = spec.initial_state.clone();
    let mut log = T::zero();
    for i in 0..=n {
        for k in at_step(i) {
            let mut next = CMatrix::zeros(rho.rows(), rho.cols());
            for m in outcomes_of(k) {
                next += &cp_map_index(&spec.interventions[k], &rho, m)?;
            }
            rho = next;
            rebalance(&mut rho, &mut log, i)?;
        }
        forward.push((rho.clone(), log));
        if i < n {
            propagate_forward(&kernel, &mut rho, &mut log, i..i + 1)?;
        }
    }

    let mut backward = vec![(CMatrix::identity(spec.dim()), T::zero()); n + 1];
    let mut e = CMatrix::identity(spec.dim());
    let mut elog = T::zero();
    for i in (0..=n).rev() {
        if i < n {
            propagate_backward(&kernel, &mut e, &mut elog, i..i + 1)?;
        }
        backward[i] = (e.clone(), elog);
        for k in at_step(i).into_iter().rev() {
            let mut next = CMatrix::zeros(e.rows(), e.cols());
            for m in outcomes_of(k) {
                next += &cp_map_dual(&spec.interventions[k], &e, m)?.hermitian_part();
            }
            e = next;
            rebalance(&mut e, &mut elog, i)?;
        }
    }

    Ok(forward
        .into_iter()
        .zip(backward)
        .enumerate()
        .map(|(i, ((rho, rho_log_scale), (effect, effect_log_scale)))| PastState {
            t: record.grid_time(i),
            rho,
            rho_log_scale,
            effect,
            effect_log_scale,
        })
        .collect())
}

/// `(ρ_t, E(T, t))` at a single grid time.
pub fn past_state_pair<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>, t: T) -> Result<PastState<T>> {
    check_record(record, spec)?;
    let i = grid_index(record, t)?;
    let mut series = past_state_series(record, spec)?;
    Ok(series.swap_remove(i))
}
