//! Open-system model, intervention specifications and the CP maps of an
//! indirect (probe-mediated) measurement.

use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlinalg::{check_psd, hermitian_norm, partial_trace, tensor_product, CMatrix, HilbertFactorization};
use crate::scalar::Real;

/// Outcomes whose probability is at or below this value are treated as
/// impossible when conditioning.
pub const ZERO_PROBABILITY: f64 = 1e-12;

const VALIDATION_TOL: f64 = 1e-10;

/// System Hamiltonian, monitored couplings `L_k` and detection efficiencies.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSystemModel<T> {
    pub hamiltonian: CMatrix<T>,
    pub couplings: Vec<CMatrix<T>>,
    pub efficiencies: Vec<T>,
}

impl<T: Real> OpenSystemModel<T> {
    pub fn new(hamiltonian: CMatrix<T>, couplings: Vec<CMatrix<T>>, efficiencies: Vec<T>) -> Self {
        Self {
            hamiltonian,
            couplings,
            efficiencies,
        }
    }

    /// Model with unit efficiency on every channel.
    pub fn ideal(hamiltonian: CMatrix<T>, couplings: Vec<CMatrix<T>>) -> Self {
        let efficiencies = vec![T::one(); couplings.len()];
        Self::new(hamiltonian, couplings, efficiencies)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.rows()
    }

    pub fn channels(&self) -> usize {
        self.couplings.len()
    }

    /// `K = -½ Σ L†L - iH`
    pub fn k_operator(&self) -> CMatrix<T> {
        let mut k = self.hamiltonian.scale(Complex::new(T::zero(), -T::one()));
        for l in &self.couplings {
            k.add_scaled_real(T::lit(-0.5), &l.adjoint_matmul(l));
        }
        k
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let d = self.hamiltonian.rows();
        if !self.hamiltonian.is_square() {
            v.push(Violation::new("model.hamiltonian", "not square", self.hamiltonian.cols() as f64));
        } else {
            let defect = self.hamiltonian.hermitian_defect().as_f64();
            if defect > VALIDATION_TOL || !self.hamiltonian.is_finite() {
                v.push(Violation::new("model.hamiltonian", "not Hermitian", defect));
            }
        }
        for (k, l) in self.couplings.iter().enumerate() {
            if l.rows() != d || l.cols() != d {
                v.push(Violation::new(
                    format!("model.couplings[{k}]"),
                    format!("shape {}x{} does not match system dimension {d}", l.rows(), l.cols()),
                    (l.rows() as f64 - d as f64).abs().max((l.cols() as f64 - d as f64).abs()),
                ));
            } else if !l.is_finite() {
                v.push(Violation::new(format!("model.couplings[{k}]"), "non-finite entries", f64::NAN));
            }
        }
        if self.efficiencies.len() != self.couplings.len() {
            v.push(Violation::new(
                "model.efficiencies",
                format!("length {} differs from {} couplings", self.efficiencies.len(), self.couplings.len()),
                (self.efficiencies.len() as f64 - self.couplings.len() as f64).abs(),
            ));
        }
        for (k, &eta) in self.efficiencies.iter().enumerate() {
            let e = eta.as_f64();
            if !(0.0..=1.0).contains(&e) {
                let defect = if e < 0.0 { -e } else { e - 1.0 };
                v.push(Violation::new(
                    format!("model.efficiencies[{k}]"),
                    format!("efficiency {e} out of range [0, 1]"),
                    defect,
                ));
            }
        }
        v
    }
}

/// One labelled outcome of a projective probe measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub label: String,
    pub projector: CMatrix<T>,
}

/// Instantaneous indirect measurement: a fresh probe in `probe_state` is
/// coupled to the system by `coupling` at time `tau` and then measured.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec<T> {
    pub tau: T,
    pub probe_state: CMatrix<T>,
    /// Unitary on `system ⊗ probe` (system first).
    pub coupling: CMatrix<T>,
    pub outcomes: Vec<Outcome<T>>,
}

impl<T: Real> InterventionSpec<T> {
    pub fn probe_dim(&self) -> usize {
        self.probe_state.rows()
    }

    pub fn labels(&self) -> Vec<String> {
        self.outcomes.iter().map(|o| o.label.clone()).collect()
    }

    pub fn outcome_index(&self, label: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o.label == label)
            .ok_or_else(|| Error::UnknownOutcome(label.to_string()))
    }

    /// Measurement in the computational basis of the probe, labelled `"0"`,
    /// `"1"`, ...
    pub fn computational_basis(tau: T, probe_state: CMatrix<T>, coupling: CMatrix<T>) -> Self {
        let p = probe_state.rows();
        let outcomes = (0..p)
            .map(|m| Outcome {
                label: m.to_string(),
                projector: CMatrix::basis_projector(p, m),
            })
            .collect();
        Self {
            tau,
            probe_state,
            coupling,
            outcomes,
        }
    }

    /// Invariants of the intervention itself, independent of the time grid.
    pub fn validate(&self, system_dim: usize, field: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        let p = self.probe_state.rows();
        let tol = T::lit(VALIDATION_TOL);
        if !self.probe_state.is_square() {
            v.push(Violation::new(format!("{field}.probe_state"), "not square", self.probe_state.cols() as f64));
            return v;
        }
        let tr_defect = (self.probe_state.trace() - Complex::new(T::one(), T::zero())).norm().as_f64();
        if tr_defect > VALIDATION_TOL {
            v.push(Violation::new(format!("{field}.probe_state"), "trace differs from 1", tr_defect));
        }
        match check_psd(&self.probe_state, tol) {
            Ok(r) if !r.ok => v.push(Violation::new(
                format!("{field}.probe_state"),
                "not positive semi-definite",
                -r.min_eigenvalue.as_f64(),
            )),
            Err(Error::NotHermitian { defect, .. }) => {
                v.push(Violation::new(format!("{field}.probe_state"), "not Hermitian", defect))
            }
            _ => {}
        }

        let n = system_dim * p;
        if self.coupling.rows() != n || self.coupling.cols() != n {
            v.push(Violation::new(
                format!("{field}.coupling"),
                format!("shape {}x{} does not match system ⊗ probe dimension {n}", self.coupling.rows(), self.coupling.cols()),
                (self.coupling.rows() as f64 - n as f64).abs(),
            ));
        } else {
            let defect = unitarity_defect(&self.coupling);
            if defect > VALIDATION_TOL {
                v.push(Violation::new(format!("{field}.coupling"), "not unitary (‖V†V − I‖₂)", defect));
            }
        }

        if self.outcomes.is_empty() {
            v.push(Violation::new(format!("{field}.outcomes"), "no outcomes", 1.0));
            return v;
        }
        let mut sum = CMatrix::<T>::zeros(p, p);
        let mut shapes_ok = true;
        for (m, o) in self.outcomes.iter().enumerate() {
            let f = format!("{field}.outcomes[{m}]");
            if o.projector.rows() != p || o.projector.cols() != p {
                v.push(Violation::new(f, "projector shape does not match probe", o.projector.rows() as f64));
                shapes_ok = false;
                continue;
            }
            if self.outcomes[..m].iter().any(|x| x.label == o.label) {
                v.push(Violation::new(f.clone(), format!("duplicate label '{}'", o.label), 0.0));
            }
            let idem = o.projector.matmul(&o.projector).max_abs_diff(&o.projector).as_f64();
            let herm = o.projector.hermitian_defect().as_f64();
            if idem.max(herm) > VALIDATION_TOL {
                v.push(Violation::new(f.clone(), "not an orthogonal projector", idem.max(herm)));
            }
            for (m2, o2) in self.outcomes.iter().enumerate().skip(m + 1) {
                if o2.projector.rows() == p && o2.projector.cols() == p {
                    let overlap = o.projector.matmul(&o2.projector).max_abs().as_f64();
                    if overlap > VALIDATION_TOL {
                        v.push(Violation::new(
                            format!("{field}.outcomes[{m},{m2}]"),
                            "projectors not mutually orthogonal",
                            overlap,
                        ));
                    }
                }
            }
            sum += &o.projector;
        }
        if shapes_ok {
            let defect = sum.max_abs_diff(&CMatrix::identity(p)).as_f64();
            if defect > VALIDATION_TOL {
                v.push(Violation::new(format!("{field}.outcomes"), "projectors do not sum to identity", defect));
            }
        }
        v
    }
}

/// Spectral norm of `V†V − I`.
pub fn unitarity_defect<T: Real>(v: &CMatrix<T>) -> f64 {
    let n = v.rows();
    let g = &v.adjoint_matmul(v) - &CMatrix::identity(n);
    hermitian_norm(&g).map(|x| x.as_f64()).unwrap_or(f64::INFINITY)
}

/// A model, a time grid, time-ordered interventions and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec<T> {
    pub model: OpenSystemModel<T>,
    pub horizon: T,
    pub dt: T,
    pub interventions: Vec<InterventionSpec<T>>,
    pub initial_state: CMatrix<T>,
    pub seed: u64,
}

/// Record of an intervention time moved onto the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapNote {
    pub index: usize,
    pub requested_tau: f64,
    pub snapped_tau: f64,
    pub step: usize,
}

impl<T: Real> ExperimentSpec<T> {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().to_usize().unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Grid index `j` of each intervention: the update is applied to the
    /// state at `t_j = j·dt`, after increments `0..j` and before increment
    /// `j`. Off-grid times are snapped to the nearest grid point and
    /// reported.
    pub fn intervention_steps(&self) -> (Vec<usize>, Vec<SnapNote>) {
        let mut steps = Vec::with_capacity(self.interventions.len());
        let mut notes = Vec::new();
        for (i, iv) in self.interventions.iter().enumerate() {
            let (step, snapped) = snap_to_grid(iv.tau, self.dt);
            if (snapped - iv.tau).abs() > self.dt * T::lit(1e-9) {
                notes.push(SnapNote {
                    index: i,
                    requested_tau: iv.tau.as_f64(),
                    snapped_tau: snapped.as_f64(),
                    step,
                });
            }
            steps.push(step);
        }
        (steps, notes)
    }
}

/// Nearest grid index and grid time for `tau`.
pub fn snap_to_grid<T: Real>(tau: T, dt: T) -> (usize, T) {
    let j = (tau / dt).round().max(T::zero());
    (j.to_usize().unwrap_or(0), j * dt)
}

/// A single invariant violation with the measured defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
    pub defect: f64,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>, defect: f64) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
            defect,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (defect {:e})", self.field, self.message, self.defect)
    }
}

/// Checks every invariant of an experiment. Never fails; an empty list means
/// the spec is valid.
pub fn validate<T: Real>(spec: &ExperimentSpec<T>) -> Vec<Violation> {
    let mut v = spec.model.validate();
    let d = spec.model.dim();
    let dt = spec.dt.as_f64();
    let horizon = spec.horizon.as_f64();
    if !dt.is_finite() || dt <= 0.0 {
        v.push(Violation::new("dt", "time step must be positive", dt));
    }
    if !horizon.is_finite() || horizon < dt {
        v.push(Violation::new("horizon", "horizon must be at least one time step", dt - horizon));
    } else if dt > 0.0 {
        let n = (horizon / dt).round();
        let defect = (n * dt - horizon).abs();
        if defect > 1e-9 * horizon {
            v.push(Violation::new("horizon", "horizon is not a multiple of dt", defect));
        }
    }

    let rho = &spec.initial_state;
    if rho.rows() != d || rho.cols() != d {
        v.push(Violation::new(
            "initial_state",
            format!("shape {}x{} does not match system dimension {d}", rho.rows(), rho.cols()),
            (rho.rows() as f64 - d as f64).abs(),
        ));
    } else {
        let tr_defect = (rho.trace() - Complex::new(T::one(), T::zero())).norm().as_f64();
        if tr_defect > VALIDATION_TOL {
            v.push(Violation::new("initial_state", "trace differs from 1", tr_defect));
        }
        match check_psd(rho, T::lit(VALIDATION_TOL)) {
            Ok(r) if !r.ok => v.push(Violation::new(
                "initial_state",
                "not positive semi-definite",
                -r.min_eigenvalue.as_f64(),
            )),
            Err(Error::NotHermitian { defect, .. }) => v.push(Violation::new("initial_state", "not Hermitian", defect)),
            _ => {}
        }
    }

    let n_steps = spec.n_steps();
    let (steps, _) = spec.intervention_steps();
    for (i, iv) in spec.interventions.iter().enumerate() {
        let field = format!("interventions[{i}]");
        v.extend(iv.validate(d, &field));
        let tau = iv.tau.as_f64();
        if !(tau > 0.0 && tau < horizon) {
            v.push(Violation::new(format!("{field}.tau"), "must satisfy 0 < tau < horizon", tau));
        } else if steps[i] == 0 || steps[i] >= n_steps {
            v.push(Violation::new(
                format!("{field}.tau"),
                "snaps to the boundary of the grid",
                tau,
            ));
        }
        if i > 0 && steps[i] <= steps[i - 1] {
            v.push(Violation::new(
                format!("{field}.tau"),
                "intervention times must be strictly increasing on the grid",
                (spec.interventions[i - 1].tau - iv.tau).as_f64(),
            ));
        }
    }
    v
}

/// Unnormalized post-measurement system state for outcome `label`:
/// `Φ_m(ρ) = tr_probe{ V (ρ ⊗ ρ_probe) V† (I ⊗ P_m) }`.
pub fn cp_map<T: Real>(spec: &InterventionSpec<T>, rho: &CMatrix<T>, label: &str) -> Result<CMatrix<T>> {
    let m = spec.outcome_index(label)?;
    cp_map_index(spec, rho, m)
}

/// [`cp_map`] addressed by outcome index.
pub fn cp_map_index<T: Real>(spec: &InterventionSpec<T>, rho: &CMatrix<T>, m: usize) -> Result<CMatrix<T>> {
    let d = rho.require_square("cp_map")?;
    let p = spec.probe_dim();
    spec.coupling.require_dim(d * p, "cp_map coupling")?;
    let projector = &spec
        .outcomes
        .get(m)
        .ok_or_else(|| Error::UnknownOutcome(m.to_string()))?
        .projector;
    let joint = tensor_product(rho, &spec.probe_state).sandwich(&spec.coupling);
    // the (I ⊗ P) X (I ⊗ P) form has the same probe partial trace and is PSD by construction
    let ip = tensor_product(&CMatrix::identity(d), projector);
    let projected = joint.sandwich(&ip);
    let f = HilbertFactorization::new(vec![d, p])?;
    partial_trace(&projected, &f, &[0])
}

/// Heisenberg dual of [`cp_map_index`]: `tr{Φ_m(ρ) E} = tr{ρ Φ_m†(E)}` with
/// `Φ_m†(E) = tr_probe{ (I ⊗ ρ_probe) V† (E ⊗ P_m) V }`.
pub fn cp_map_dual<T: Real>(spec: &InterventionSpec<T>, effect: &CMatrix<T>, m: usize) -> Result<CMatrix<T>> {
    let d = effect.require_square("cp_map_dual")?;
    let p = spec.probe_dim();
    spec.coupling.require_dim(d * p, "cp_map_dual coupling")?;
    let projector = &spec
        .outcomes
        .get(m)
        .ok_or_else(|| Error::UnknownOutcome(m.to_string()))?
        .projector;
    let pulled = tensor_product(effect, projector).adjoint_sandwich(&spec.coupling);
    let weighted = tensor_product(&CMatrix::identity(d), &spec.probe_state).matmul(&pulled);
    let f = HilbertFactorization::new(vec![d, p])?;
    partial_trace(&weighted, &f, &[0])
}

/// Bayesian state update on observing `label`: `Φ_m(ρ) / tr Φ_m(ρ)`.
pub fn conditioned_update<T: Real>(spec: &InterventionSpec<T>, rho: &CMatrix<T>, label: &str) -> Result<CMatrix<T>> {
    let m = spec.outcome_index(label)?;
    conditioned_update_index(spec, rho, m)
}

pub fn conditioned_update_index<T: Real>(spec: &InterventionSpec<T>, rho: &CMatrix<T>, m: usize) -> Result<CMatrix<T>> {
    let phi = cp_map_index(spec, rho, m)?;
    let p = phi.trace().re;
    if p.as_f64() <= ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityOutcome {
            label: spec.outcomes[m].label.clone(),
            probability: p.as_f64(),
        });
    }
    Ok(phi.scale_real(T::one() / p))
}

/// Born probabilities `tr Φ_m(ρ)` of every outcome.
pub fn outcome_probabilities<T: Real>(spec: &InterventionSpec<T>, rho: &CMatrix<T>) -> Result<Vec<T>> {
    (0..spec.outcomes.len())
        .map(|m| cp_map_index(spec, rho, m).map(|x| x.trace().re))
        .collect()
}
