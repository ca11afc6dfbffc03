//! Forward estimation: the nonlinear (normalized) quantum filter, the linear
//! Belavkin–Zakai equation for the unnormalized state, and piecewise filtering
//! through revealed intervention outcomes.
//!
//! Hamiltonian convention: `dρ = -i[H, ρ] dt + …`, paired with
//! `K = -½ Σ L†L - iH` in the propagators, so that `L = 0` gives
//! `ρ_t = e^{-iHt} ρ_0 e^{iHt}`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::model::{conditioned_update, ExperimentSpec, OpenSystemModel};
use crate::qlinalg::{exp_minus_i_hermitian, CMatrix};
use crate::scalar::Real;
use crate::trajectory::MeasurementRecord;

/// Natural-log bound on the trace of an unnormalized state before it is
/// rescaled into range.
pub const LOG_TRACE_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Normalized,
    Unnormalized,
}

/// Filter state at time `t`. In unnormalized mode the represented operator is
/// `exp(log_scale) · rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T> {
    pub rho: CMatrix<T>,
    pub log_scale: T,
    pub t: T,
    pub mode: FilterMode,
}

impl<T: Real> FilterState<T> {
    pub fn normalized(rho: CMatrix<T>, t: T) -> Self {
        Self {
            rho,
            log_scale: T::zero(),
            t,
            mode: FilterMode::Normalized,
        }
    }

    pub fn unnormalized(rho: CMatrix<T>, t: T) -> Self {
        Self {
            rho,
            log_scale: T::zero(),
            t,
            mode: FilterMode::Unnormalized,
        }
    }

    /// `ρ / tr ρ`
    pub fn normalized_rho(&self) -> CMatrix<T> {
        let tr = self.rho.trace().re;
        self.rho.scale_real(T::one() / tr)
    }

    /// `log tr` of the represented operator (the record log-likelihood up to
    /// a model-independent constant in unnormalized mode).
    pub fn log_trace(&self) -> T {
        self.rho.trace().re.ln() + self.log_scale
    }

    pub fn expectation(&self, observable: &CMatrix<T>) -> T {
        self.normalized_rho().trace_product(observable).re
    }
}

fn minus_i<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), -T::one())
}

/// `-i[H, ρ]`, exactly Hermitian for Hermitian `ρ`.
pub fn hamiltonian_term<T: Real>(model: &OpenSystemModel<T>, rho: &CMatrix<T>) -> CMatrix<T> {
    let hr = model.hamiltonian.matmul(rho);
    (&hr - &hr.adjoint()).scale(minus_i())
}

/// `D(ρ) = Σ_k (L_k ρ L_k† - ½ L_k†L_k ρ - ½ ρ L_k†L_k)`
pub fn dissipator<T: Real>(model: &OpenSystemModel<T>, rho: &CMatrix<T>) -> Result<CMatrix<T>> {
    let d = rho.require_square("dissipator")?;
    model.hamiltonian.require_dim(d, "dissipator")?;
    let mut out = CMatrix::zeros(d, d);
    let half = T::lit(0.5);
    for l in &model.couplings {
        l.require_dim(d, "dissipator coupling")?;
        let lr = l.matmul(rho);
        let jump = lr.matmul_adjoint(l);
        out += &jump.hermitian_part();
        let ldl_r = l.adjoint_matmul(&lr);
        // -½(L†Lρ + ρL†L) = -½(X + X†) with X = L†Lρ
        out.add_scaled_real(-half, &ldl_r);
        out.add_scaled_real(-half, &ldl_r.adjoint());
    }
    Ok(out)
}

/// Schrödinger-picture generator `-i[H, ρ] + D(ρ)`.
pub fn lindbladian<T: Real>(model: &OpenSystemModel<T>, rho: &CMatrix<T>) -> Result<CMatrix<T>> {
    let mut out = dissipator(model, rho)?;
    out += &hamiltonian_term(model, rho);
    Ok(out)
}

/// Heisenberg-picture generator `ℒX = Σ_k L_k† X L_k + X K + K† X`.
pub fn heisenberg_lindbladian<T: Real>(model: &OpenSystemModel<T>, x: &CMatrix<T>) -> CMatrix<T> {
    let k = model.k_operator();
    let xk = x.matmul(&k);
    let mut out = &xk + &xk.adjoint();
    for l in &model.couplings {
        out += &x.adjoint_sandwich(l).hermitian_part();
    }
    out
}

fn check_increments<T: Real>(model: &OpenSystemModel<T>, dy: &[T]) -> Result<()> {
    if dy.len() != model.channels() {
        return Err(Error::DimensionMismatch {
            context: "measurement increments",
            expected: model.channels(),
            found: dy.len(),
        });
    }
    Ok(())
}

/// Discrete step of the conditioned dynamics on a fixed grid, in Kraus form:
///
/// `ρ ↦ A(dY) ρ A(dY)† + Σ_k B_k ρ B_k†`
///
/// with `A(dY) = e^{-iH dt}(I - ½ Σ_k L_k†L_k dt + Σ_k √η_k L_k dY_k)` and
/// `B_k = e^{-iH dt} √((1-η_k) dt) L_k`.
///
/// Expanding with `dY² → dt` gives
/// `ρ + (-i[H,ρ] + D(ρ)) dt + Σ_k √η_k (L_kρ + ρL_k†) dY_k`, the linear
/// (Zakai) increment; the map is completely positive for every `dY`, exact
/// when `L = 0`, and its adjoint is the backward effect step.
#[derive(Debug, Clone)]
pub struct StepMap<T> {
    dt: T,
    unitary: Option<CMatrix<T>>,
    drift: CMatrix<T>,
    monitored: Vec<CMatrix<T>>,
    unmonitored: Vec<CMatrix<T>>,
}

impl<T: Real> StepMap<T> {
    pub fn new(model: &OpenSystemModel<T>, dt: T) -> Result<Self> {
        let d = model.hamiltonian.require_square("hamiltonian")?;
        let unitary = if model.hamiltonian.max_abs() == T::zero() {
            None
        } else {
            Some(exp_minus_i_hermitian(&model.hamiltonian.hermitian_part(), dt)?)
        };
        let mut drift = CMatrix::identity(d);
        let mut monitored = Vec::with_capacity(model.channels());
        let mut unmonitored = Vec::new();
        for (l, &eta) in model.couplings.iter().zip(&model.efficiencies) {
            l.require_dim(d, "coupling")?;
            drift.add_scaled_real(-T::lit(0.5) * dt, &l.adjoint_matmul(l));
            monitored.push(l.scale_real(eta.sqrt()));
            let lost = T::one() - eta;
            if lost > T::zero() {
                let b = l.scale_real((lost * dt).sqrt());
                unmonitored.push(match &unitary {
                    Some(u) => u.matmul(&b),
                    None => b,
                });
            }
        }
        Ok(Self {
            dt,
            unitary,
            drift,
            monitored,
            unmonitored,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.drift.rows()
    }

    pub fn channels(&self) -> usize {
        self.monitored.len()
    }

    /// `A(dY)`, the record-dependent Kraus operator. For unit efficiencies
    /// this is the single-step factor of the forward propagator.
    pub fn kraus(&self, dy: &[T]) -> Result<CMatrix<T>> {
        if dy.len() != self.channels() {
            return Err(Error::DimensionMismatch {
                context: "measurement increments",
                expected: self.channels(),
                found: dy.len(),
            });
        }
        let mut a = self.drift.clone();
        for (l, &y) in self.monitored.iter().zip(dy) {
            a.add_scaled_real(y, l);
        }
        Ok(match &self.unitary {
            Some(u) => u.matmul(&a),
            None => a,
        })
    }

    /// Unrecorded fraction of each channel, `Σ_k B_k ρ B_k†`.
    fn add_unmonitored(&self, rho: &CMatrix<T>, out: &mut CMatrix<T>) {
        for b in &self.unmonitored {
            *out += &rho.sandwich(b);
        }
    }

    pub fn forward(&self, rho: &CMatrix<T>, dy: &[T]) -> Result<CMatrix<T>> {
        rho.require_dim(self.dim(), "state")?;
        let a = self.kraus(dy)?;
        let mut out = rho.sandwich(&a);
        self.add_unmonitored(rho, &mut out);
        Ok(out.hermitian_part())
    }

    /// Heisenberg dual of [`StepMap::forward`]:
    /// `E ↦ A(dY)† E A(dY) + Σ_k B_k† E B_k`.
    pub fn adjoint(&self, effect: &CMatrix<T>, dy: &[T]) -> Result<CMatrix<T>> {
        effect.require_dim(self.dim(), "effect")?;
        let a = self.kraus(dy)?;
        let mut out = effect.adjoint_sandwich(&a);
        for b in &self.unmonitored {
            out += &effect.adjoint_sandwich(b);
        }
        Ok(out.hermitian_part())
    }
}

/// One step of the linear (Belavkin–Zakai) equation, without rescaling.
/// See [`StepMap`] for the discretization.
pub fn zakai_map<T: Real>(model: &OpenSystemModel<T>, rho: &CMatrix<T>, dy: &[T], dt: T) -> Result<CMatrix<T>> {
    check_increments(model, dy)?;
    StepMap::new(model, dt)?.forward(rho, dy)
}

/// Plain Euler–Maruyama increment of the linear equation,
/// `ρ + (-i[H,ρ] + D(ρ)) dt + Σ_k √η_k (L_k ρ + ρ L_k†) dY_k`.
/// Not positivity preserving; kept for comparison studies.
pub fn zakai_map_euler<T: Real>(model: &OpenSystemModel<T>, rho: &CMatrix<T>, dy: &[T], dt: T) -> Result<CMatrix<T>> {
    rho.require_dim(model.dim(), "filter state")?;
    check_increments(model, dy)?;
    let mut out = rho.clone();
    out.add_scaled_real(dt, &lindbladian(model, rho)?);
    for ((l, &eta), &dyk) in model.couplings.iter().zip(&model.efficiencies).zip(dy) {
        let lr = l.matmul(rho);
        let w = eta.sqrt() * dyk;
        out.add_scaled_real(w, &lr);
        out.add_scaled_real(w, &lr.adjoint());
    }
    Ok(out)
}

fn step_index<T: Real>(t: T, dt: T) -> usize {
    (t / dt).round().to_usize().unwrap_or(0)
}

fn renormalized<T: Real>(next: CMatrix<T>, t: T, step: usize) -> Result<FilterState<T>> {
    let tr = next.trace().re;
    if !next.is_finite() || !tr.is_finite() {
        return Err(Error::NonFinite { step });
    }
    if tr <= T::zero() {
        return Err(Error::NonPositiveTrace { step, trace: tr.as_f64() });
    }
    Ok(FilterState::normalized(next.scale_real(T::one() / tr), t))
}

/// Normalized filter step with a prebuilt [`StepMap`].
pub fn filter_step_with<T: Real>(state: &FilterState<T>, dy: &[T], map: &StepMap<T>) -> Result<FilterState<T>> {
    let next = map.forward(&state.rho, dy)?;
    renormalized(next, state.t + map.dt(), step_index(state.t, map.dt()) + 1)
}

/// Normalized filter step.
///
/// The state is pushed through [`StepMap`] and renormalized to unit trace.
/// To Itô order this is the innovations form
/// `-i[H,ρ]dt + D(ρ)dt + Σ √η_k (L_kρ + ρL_k† − λ_kρ) dI_k` with
/// `dI_k = dY_k − √η_k λ_k dt`, and it coincides step for step with the
/// normalized Zakai solution.
pub fn filter_step<T: Real>(state: &FilterState<T>, dy: &[T], model: &OpenSystemModel<T>, dt: T) -> Result<FilterState<T>> {
    check_increments(model, dy)?;
    filter_step_with(state, dy, &StepMap::new(model, dt)?)
}

/// Direct Euler discretization of the innovations-driven equation,
/// `ρ + (-i[H,ρ] + D(ρ)) dt + Σ √η_k (L_kρ + ρL_k† − λ_kρ)(dY_k − √η_k λ_k dt)`,
/// followed by renormalization. Kept for comparison studies.
pub fn filter_step_innovations<T: Real>(
    state: &FilterState<T>,
    dy: &[T],
    model: &OpenSystemModel<T>,
    dt: T,
) -> Result<FilterState<T>> {
    let rho = &state.rho;
    rho.require_dim(model.dim(), "filter state")?;
    check_increments(model, dy)?;
    let mut next = rho.clone();
    next.add_scaled_real(dt, &lindbladian(model, rho)?);
    for ((l, &eta), &dyk) in model.couplings.iter().zip(&model.efficiencies).zip(dy) {
        let lr = l.matmul(rho);
        let mut g = &lr + &lr.adjoint();
        let lambda = g.trace().re;
        g.add_scaled_real(-lambda, rho);
        let s = eta.sqrt();
        next.add_scaled_real(s * (dyk - s * lambda * dt), &g);
    }
    renormalized(next.hermitian_part(), state.t + dt, step_index(state.t, dt) + 1)
}

/// Moves the trace of `m` into `log_scale` once it leaves
/// `(e^-30, e^30)`.
pub(crate) fn rebalance<T: Real>(m: &mut CMatrix<T>, log_scale: &mut T, step: usize) -> Result<()> {
    let tr = m.trace().re;
    if !m.is_finite() || !tr.is_finite() {
        return Err(Error::NonFinite { step });
    }
    if tr <= T::zero() {
        return Err(Error::NonPositiveTrace { step, trace: tr.as_f64() });
    }
    let lt = tr.ln();
    if lt.abs().as_f64() > LOG_TRACE_BOUND {
        m.scale_in_place(T::one() / tr);
        *log_scale = *log_scale + lt;
    }
    Ok(())
}

/// Unnormalized step with a prebuilt [`StepMap`].
pub fn zakai_step_with<T: Real>(state: &FilterState<T>, dy: &[T], map: &StepMap<T>) -> Result<FilterState<T>> {
    let mut next = map.forward(&state.rho, dy)?;
    let mut log_scale = state.log_scale;
    rebalance(&mut next, &mut log_scale, step_index(state.t, map.dt()) + 1)?;
    Ok(FilterState {
        rho: next,
        log_scale,
        t: state.t + map.dt(),
        mode: FilterMode::Unnormalized,
    })
}

/// Unnormalized (Belavkin–Zakai) step with log-scale range control.
pub fn zakai_step<T: Real>(state: &FilterState<T>, dy: &[T], model: &OpenSystemModel<T>, dt: T) -> Result<FilterState<T>> {
    check_increments(model, dy)?;
    zakai_step_with(state, dy, &StepMap::new(model, dt)?)
}

pub(crate) fn check_record<T: Real>(record: &MeasurementRecord<T>, spec: &ExperimentSpec<T>) -> Result<()> {
    if record.channels() != spec.model.channels() {
        return Err(Error::DimensionMismatch {
            context: "record channels",
            expected: spec.model.channels(),
            found: record.channels(),
        });
    }
    let rel = ((record.dt() - spec.dt) / spec.dt).abs();
    if rel.as_f64() > 1e-9 {
        return Err(Error::GridMisalignment(format!(
            "record dt {} differs from spec dt {}",
            record.dt(),
            spec.dt
        )));
    }
    if record.n_steps() != spec.n_steps() {
        return Err(Error::GridMisalignment(format!(
            "record has {} steps, spec expects {}",
            record.n_steps(),
            spec.n_steps()
        )));
    }
    Ok(())
}

/// Runs the normalized filter over the whole record, applying the revealed
/// outcome of every intervention at its grid time.
///
/// Returns the state at each grid time `t_0..=t_n`; at an intervention time
/// the stored state is the post-update one.
pub fn run_filter<T: Real>(
    record: &MeasurementRecord<T>,
    spec: &ExperimentSpec<T>,
    revealed: &[String],
) -> Result<Vec<FilterState<T>>> {
    run_filter_from(record, spec, revealed, spec.initial_state.clone())
}

/// [`run_filter`] started from an arbitrary (possibly wrong) initial state.
pub fn run_filter_from<T: Real>(
    record: &MeasurementRecord<T>,
    spec: &ExperimentSpec<T>,
    revealed: &[String],
    rho0: CMatrix<T>,
) -> Result<Vec<FilterState<T>>> {
    check_record(record, spec)?;
    if revealed.len() < spec.interventions.len() {
        return Err(Error::MissingOutcome { index: revealed.len() });
    }
    let (steps, _) = spec.intervention_steps();
    let n = record.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    let map = StepMap::new(&spec.model, record.dt())?;
    let mut state = FilterState::normalized(rho0, T::zero());
    for i in 0..=n {
        if let Some(k) = steps.iter().position(|&s| s == i) {
            state.rho = conditioned_update(&spec.interventions[k], &state.rho, &revealed[k]).map_err(|e| match e {
                Error::ZeroProbabilityOutcome { label, probability } => Error::ZeroProbabilityOutcome {
                    label: format!("{label} (intervention {k} at t={})", state.t),
                    probability,
                },
                other => other,
            })?;
        }
        out.push(state.clone());
        if i == n {
            break;
        }
        state = filter_step_with(&state, record.step(i), &map)?;
    }
    Ok(out)
}

/// Unnormalized filter over the record with no interventions.
pub fn run_zakai<T: Real>(record: &MeasurementRecord<T>, model: &OpenSystemModel<T>, rho0: CMatrix<T>) -> Result<Vec<FilterState<T>>> {
    let n = record.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    let map = StepMap::new(model, record.dt())?;
    let mut state = FilterState::unnormalized(rho0, T::zero());
    out.push(state.clone());
    for i in 0..n {
        state = zakai_step_with(&state, record.step(i), &map)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// `tr(ρ̂ O_j)` for every state and observable.
pub fn expectations<T: Real>(states: &[FilterState<T>], observables: &[CMatrix<T>]) -> Vec<Vec<T>> {
    states
        .iter()
        .map(|s| {
            let rho = s.normalized_rho();
            observables.iter().map(|o| rho.trace_product(o).re).collect()
        })
        .collect()
}
