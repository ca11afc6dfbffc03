//! Exact reference: a discrete collision model in which the system meets a
//! fresh qubit ancilla per channel and time step, each ancilla is read out in
//! the `σ_x` basis, and interventions couple fresh probes. All record and
//! probe projections commute, so conditioning is plain Bayes in a finite
//! Hilbert space.
//!
//! Global factor order: system, ancillas (step-major, channel-minor), probes.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{cp_map_index, ExperimentSpec, InterventionSpec, Violation};
use crate::qlinalg::{apply_local, eigh, embed, exp_minus_i_hermitian, partial_trace_vector, pauli, CMatrix, HilbertFactorization};
use crate::scalar::{Real, C};
use crate::smoother::StepKernel;
use crate::trajectory::MeasurementRecord;

/// Largest global Hilbert space dimension the state-vector oracle will build.
pub const DIM_CAP: usize = 1 << 14;
/// Largest dimension for dense global operators (Heisenberg pictures).
pub const DENSE_CAP: usize = 1 << 11;

const ENSEMBLE_CUTOFF: f64 = 1e-15;

/// Ancilla readout outcomes of one record: `outcomes[i * channels + c]` is
/// `+1` or `-1`. `interventions[k]` is the revealed outcome index of
/// intervention `k`, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteRecord {
    pub channels: usize,
    pub outcomes: Vec<i8>,
    pub interventions: Vec<Option<usize>>,
}

impl DiscreteRecord {
    pub fn n_steps(&self) -> usize {
        self.outcomes.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn step(&self, i: usize) -> &[i8] {
        &self.outcomes[i * self.channels..(i + 1) * self.channels]
    }

    /// Same record with every intervention concealed.
    pub fn concealed(&self) -> Self {
        Self {
            interventions: vec![None; self.interventions.len()],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteModel<T> {
    dim: usize,
    channels: usize,
    n_steps: usize,
    dt: T,
    step_unitary: CMatrix<T>,
    kraus: Vec<CMatrix<T>>,
    pub interventions: Vec<(usize, InterventionSpec<T>)>,
    pub initial_state: CMatrix<T>,
}

fn outcome_code(outcomes: &[i8]) -> usize {
    outcomes
        .iter()
        .enumerate()
        .map(|(c, &o)| usize::from(o < 0) << c)
        .sum()
}

impl<T: Real> DiscreteModel<T> {
    /// Collision-model discretization of `spec` on its own grid. Requires
    /// unit efficiencies.
    ///
    /// `U_step = exp(Σ_k √dt (L_k ⊗ σ⁺_k − L_k† ⊗ σ⁻_k) − i H dt)`, with
    /// `σ⁺ = |1⟩⟨0|` and every ancilla prepared in `|0⟩`.
    pub fn from_spec(spec: &ExperimentSpec<T>) -> Result<Self> {
        let mut violations = crate::model::validate(spec);
        for (k, &eta) in spec.model.efficiencies.iter().enumerate() {
            if (eta - T::one()).abs().as_f64() > 1e-12 {
                violations.push(Violation::new(
                    format!("efficiencies[{k}]"),
                    "the collision model requires unit efficiency",
                    eta.as_f64(),
                ));
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvalidSpec(violations));
        }
        let d = spec.dim();
        let nc = spec.model.channels();
        let dt = spec.dt;
        let mut dims = vec![d];
        dims.extend(std::iter::repeat_n(2, nc));
        let f = HilbertFactorization::new(dims)?;
        let sdt = dt.sqrt();
        let mut generator = embed(&spec.model.hamiltonian.scale_real(dt), &f, &[0])?;
        for (c, l) in spec.model.couplings.iter().enumerate() {
            let up = crate::qlinalg::tensor_product(l, &pauli::raise());
            let g = (&up - &up.adjoint()).scale(C::new(T::zero(), sdt));
            generator += &embed(&g, &f, &[0, 1 + c])?.hermitian_part();
        }
        // exp(G) with G = -i·(H dt) + √dt(L⊗σ⁺ − L†⊗σ⁻) = -i·generator
        let step_unitary = exp_minus_i_hermitian(&generator, T::one())?;

        let na = 1usize << nc;
        let half = T::lit(0.5);
        let amp = |o: bool| if o { -half.sqrt() } else { half.sqrt() };
        let kraus = (0..na)
            .map(|code| {
                CMatrix::from_fn(d, d, |i, j| {
                    let mut acc = C::new(T::zero(), T::zero());
                    for a in 0..na {
                        // ⟨o| = ⊗_c (⟨0| ± ⟨1|)/√2
                        let mut w = T::one();
                        for c in 0..nc {
                            let bit = (a >> (nc - 1 - c)) & 1;
                            let neg = (code >> c) & 1 == 1;
                            w = w * if bit == 1 { amp(neg) } else { half.sqrt() };
                        }
                        acc = acc + step_unitary[(i * na + a, j * na)] * w;
                    }
                    acc
                })
            })
            .collect();

        let (steps, _) = spec.intervention_steps();
        if steps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSpec(vec![Violation::new(
                "interventions",
                "interventions must be listed in time order",
                0.0,
            )]));
        }
        let interventions = steps.into_iter().zip(spec.interventions.iter().cloned()).collect();
        Ok(Self {
            dim: d,
            channels: nc,
            n_steps: spec.n_steps(),
            dt,
            step_unitary,
            kraus,
            interventions,
            initial_state: spec.initial_state.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn step_unitary(&self) -> &CMatrix<T> {
        &self.step_unitary
    }

    /// `K_o = ⟨o| U_step |0⟩` for the per-channel outcomes `o ∈ {±1}`.
    pub fn kraus(&self, outcomes: &[i8]) -> &CMatrix<T> {
        &self.kraus[outcome_code(outcomes)]
    }

    /// Global factorization and its total dimension.
    pub fn factorization(&self) -> Result<HilbertFactorization> {
        let mut dims = vec![self.dim];
        dims.extend(std::iter::repeat_n(2, self.n_steps * self.channels));
        dims.extend(self.interventions.iter().map(|(_, iv)| iv.probe_dim()));
        let total = dims.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x));
        match total {
            Some(t) if t <= DIM_CAP => HilbertFactorization::new(dims),
            _ => Err(Error::DimensionCap {
                dim: total.unwrap_or(usize::MAX),
                cap: DIM_CAP,
            }),
        }
    }

    fn ancilla(&self, step: usize, channel: usize) -> usize {
        1 + step * self.channels + channel
    }

    fn probe(&self, k: usize) -> usize {
        1 + self.n_steps * self.channels + k
    }

    fn step_targets(&self, step: usize) -> Vec<usize> {
        let mut t = vec![0];
        t.extend((0..self.channels).map(|c| self.ancilla(step, c)));
        t
    }

    fn check_record(&self, record: &DiscreteRecord) -> Result<()> {
        if record.channels != self.channels || record.n_steps() != self.n_steps {
            return Err(Error::DimensionMismatch {
                context: "discrete record length",
                expected: self.n_steps * self.channels,
                found: record.outcomes.len(),
            });
        }
        if record.interventions.len() != self.interventions.len() {
            return Err(Error::DimensionMismatch {
                context: "discrete record interventions",
                expected: self.interventions.len(),
                found: record.interventions.len(),
            });
        }
        if record.outcomes.iter().any(|&o| o != 1 && o != -1) {
            return Err(Error::Parse("discrete outcomes must be +1 or -1".into()));
        }
        Ok(())
    }

    /// Every record of the model's length with the given intervention
    /// revelation pattern.
    pub fn all_records(&self, interventions: &[Option<usize>]) -> Vec<DiscreteRecord> {
        let bits = self.n_steps * self.channels;
        (0..1usize << bits)
            .map(|code| DiscreteRecord {
                channels: self.channels,
                outcomes: (0..bits).map(|b| if (code >> b) & 1 == 1 { -1 } else { 1 }).collect(),
                interventions: interventions.to_vec(),
            })
            .collect()
    }

    /// Samples a record (and the intervention outcomes) from the model by
    /// sequential exact conditioning. Intervention outcomes are returned
    /// revealed.
    pub fn sample_record<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DiscreteRecord> {
        let mut rho = self.initial_state.clone();
        let mut outcomes = Vec::with_capacity(self.n_steps * self.channels);
        let mut revealed = Vec::with_capacity(self.interventions.len());
        let na = 1usize << self.channels;
        let mut k = 0;
        for i in 0..=self.n_steps {
            while k < self.interventions.len() && self.interventions[k].0 == i {
                let iv = &self.interventions[k].1;
                let branches: Vec<CMatrix<T>> =
                    (0..iv.outcomes.len()).map(|m| cp_map_index(iv, &rho, m)).collect::<Result<_>>()?;
                let m = pick(rng, branches.iter().map(|b| b.trace().re.as_f64()));
                rho = normalized(&branches[m])?;
                revealed.push(Some(m));
                k += 1;
            }
            if i == self.n_steps {
                break;
            }
            let branches: Vec<CMatrix<T>> = (0..na).map(|code| rho.sandwich(&self.kraus[code])).collect();
            let code = pick(rng, branches.iter().map(|b| b.trace().re.as_f64()));
            rho = normalized(&branches[code])?;
            outcomes.extend((0..self.channels).map(|c| if (code >> c) & 1 == 1 { -1 } else { 1 }));
        }
        Ok(DiscreteRecord {
            channels: self.channels,
            outcomes,
            interventions: revealed,
        })
    }

    /// Continuous-record surrogate `dY = o·√dt`.
    pub fn to_measurement_record(&self, record: &DiscreteRecord) -> Result<MeasurementRecord<T>> {
        self.check_record(record)?;
        let s = self.dt.sqrt();
        let inc = record.outcomes.iter().map(|&o| T::lit(f64::from(o)) * s).collect();
        if self.channels == 0 {
            return Ok(MeasurementRecord::empty(self.dt, self.n_steps));
        }
        MeasurementRecord::new(self.dt, self.channels, inc)
    }

    pub fn kernel<'a>(&'a self, record: &'a DiscreteRecord) -> Result<KrausKernel<'a, T>> {
        self.check_record(record)?;
        Ok(KrausKernel { model: self, record })
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().map(|w| w.max(0.0)).sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        let w = w.max(0.0);
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

fn normalized<T: Real>(m: &CMatrix<T>) -> Result<CMatrix<T>> {
    let tr = m.trace().re;
    if tr.as_f64() <= 0.0 {
        return Err(Error::ZeroProbabilityRecord);
    }
    Ok(m.scale_real(T::one() / tr))
}

/// Per-step maps `ρ ↦ K_o ρ K_o†` and `E ↦ K_o† E K_o` of a discrete record.
#[derive(Debug, Clone, Copy)]
pub struct KrausKernel<'a, T> {
    model: &'a DiscreteModel<T>,
    record: &'a DiscreteRecord,
}

impl<T: Real> StepKernel<T> for KrausKernel<'_, T> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn n_steps(&self) -> usize {
        self.model.n_steps
    }

    fn forward(&self, i: usize, rho: &CMatrix<T>) -> Result<CMatrix<T>> {
        Ok(rho.sandwich(self.model.kraus(self.record.step(i))))
    }

    fn backward(&self, i: usize, effect: &CMatrix<T>) -> Result<CMatrix<T>> {
        Ok(effect.adjoint_sandwich(self.model.kraus(self.record.step(i))))
    }
}

/// Sequential Kraus filter: normalized system state at the final time,
/// conditioned on the ancilla record and on every revealed intervention
/// outcome; concealed interventions act through `Σ_m Φ_m`.
pub fn kraus_filter<T: Real>(dm: &DiscreteModel<T>, record: &DiscreteRecord) -> Result<CMatrix<T>> {
    Ok(kraus_filter_states(dm, record)?.pop().expect("n_steps + 1 states"))
}

/// [`kraus_filter`] state at every grid time (post-intervention).
pub fn kraus_filter_states<T: Real>(dm: &DiscreteModel<T>, record: &DiscreteRecord) -> Result<Vec<CMatrix<T>>> {
    dm.check_record(record)?;
    let mut rho = dm.initial_state.clone();
    let mut out = Vec::with_capacity(dm.n_steps + 1);
    let mut k = 0;
    for i in 0..=dm.n_steps {
        while k < dm.interventions.len() && dm.interventions[k].0 == i {
            let iv = &dm.interventions[k].1;
            rho = match record.interventions[k] {
                Some(m) => cp_map_index(iv, &rho, m)?,
                None => {
                    let mut sum = CMatrix::zeros(dm.dim, dm.dim);
                    for m in 0..iv.outcomes.len() {
                        sum += &cp_map_index(iv, &rho, m)?;
                    }
                    sum
                }
            };
            rho = normalized(&rho)?;
            k += 1;
        }
        out.push(rho.clone());
        if i == dm.n_steps {
            break;
        }
        rho = normalized(&rho.sandwich(dm.kraus(record.step(i))))?;
    }
    Ok(out)
}

/// Global state as a weighted ensemble of pure states.
#[derive(Debug, Clone)]
pub struct GlobalState<T> {
    pub factorization: HilbertFactorization,
    pub members: Vec<(T, Vec<C<T>>)>,
}

impl<T: Real> GlobalState<T> {
    /// Dense global density matrix (only for small spaces).
    pub fn density(&self) -> Result<CMatrix<T>> {
        let n = self.factorization.total();
        if n > DENSE_CAP {
            return Err(Error::DimensionCap { dim: n, cap: DENSE_CAP });
        }
        let mut rho = CMatrix::zeros(n, n);
        for (w, psi) in &self.members {
            rho.add_scaled_real(*w, &CMatrix::ket_bra(psi));
        }
        Ok(rho)
    }
}

fn ensemble<T: Real>(rho: &CMatrix<T>) -> Result<Vec<(T, Vec<C<T>>)>> {
    let (values, vectors) = eigh(rho)?;
    let n = rho.rows();
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &w)| w.as_f64() > ENSEMBLE_CUTOFF)
        .map(|(j, &w)| (w, (0..n).map(|i| vectors[(i, j)]).collect()))
        .collect())
}

fn kron_vec<T: Real>(a: &[C<T>], b: &[C<T>]) -> Vec<C<T>> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// Runs the collision model: at each grid step the interventions scheduled
/// there act first, then the step unitary couples the system to that step's
/// ancillas; interventions at the final time act last.
pub fn build_global_state<T: Real>(dm: &DiscreteModel<T>) -> Result<GlobalState<T>> {
    let f = dm.factorization()?;
    let mut members = ensemble(&dm.initial_state)?;
    let mut ground = vec![C::new(T::zero(), T::zero()); 1 << (dm.n_steps * dm.channels)];
    ground[0] = C::new(T::one(), T::zero());
    members = members.into_iter().map(|(w, v)| (w, kron_vec(&v, &ground))).collect();
    for (_, iv) in &dm.interventions {
        let probe = ensemble(&iv.probe_state)?;
        members = members
            .iter()
            .flat_map(|(w, v)| probe.iter().map(move |(pw, pv)| (*w * *pw, kron_vec(v, pv))))
            .collect();
    }

    let members = members
        .into_par_iter()
        .map(|(w, mut psi)| {
            let mut k = 0;
            for i in 0..=dm.n_steps {
                while k < dm.interventions.len() && dm.interventions[k].0 == i {
                    psi = apply_local(&psi, &f, &[0, dm.probe(k)], &dm.interventions[k].1.coupling)?;
                    k += 1;
                }
                if i < dm.n_steps {
                    psi = apply_local(&psi, &f, &dm.step_targets(i), &dm.step_unitary)?;
                }
            }
            Ok((w, psi))
        })
        .collect::<Result<_>>()?;
    Ok(GlobalState { factorization: f, members })
}

fn readout_projector<T: Real>(o: i8) -> CMatrix<T> {
    if o > 0 {
        pauli::plus_state()
    } else {
        pauli::minus_state()
    }
}

/// `Π_record Π_probes ψ` for one ensemble member; `probe_outcomes[k] = None`
/// leaves probe `k` unmeasured.
fn project<T: Real>(dm: &DiscreteModel<T>, f: &HilbertFactorization, psi: &[C<T>], record: &DiscreteRecord, probe_outcomes: &[Option<usize>]) -> Result<Vec<C<T>>> {
    let mut out = psi.to_vec();
    for i in 0..dm.n_steps {
        for (c, &o) in record.step(i).iter().enumerate() {
            out = apply_local(&out, f, &[dm.ancilla(i, c)], &readout_projector(o))?;
        }
    }
    for (k, m) in probe_outcomes.iter().enumerate() {
        if let Some(m) = m {
            out = apply_local(&out, f, &[dm.probe(k)], &dm.interventions[k].1.outcomes[*m].projector)?;
        }
    }
    Ok(out)
}

fn norm_sqr<T: Real>(v: &[C<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Exact joint probability `tr{ρ_global Π_record Π_probes}`.
pub fn joint_probability<T: Real>(dm: &DiscreteModel<T>, global: &GlobalState<T>, record: &DiscreteRecord, probe_outcomes: &[Option<usize>]) -> Result<T> {
    dm.check_record(record)?;
    global.members.iter().try_fold(T::zero(), |acc, (w, psi)| {
        Ok(acc + *w * norm_sqr(&project(dm, &global.factorization, psi, record, probe_outcomes)?))
    })
}

/// Exact conditional distribution of the concealed interventions of
/// `record` given the ancilla record and the revealed interventions:
/// `tr{ρ Π_record Π_query} / tr{ρ Π_record}`. Entries are ordered like
/// the joint tables of the smoother (row-major over concealed interventions).
pub fn exact_conditional<T: Real>(dm: &DiscreteModel<T>, global: &GlobalState<T>, record: &DiscreteRecord) -> Result<Vec<T>> {
    let concealed: Vec<usize> = (0..record.interventions.len()).filter(|&k| record.interventions[k].is_none()).collect();
    let denominator = joint_probability(dm, global, record, &record.interventions)?;
    if denominator.as_f64() <= 0.0 {
        return Err(Error::ZeroProbabilityRecord);
    }
    let sizes: Vec<usize> = concealed.iter().map(|&k| dm.interventions[k].1.outcomes.len()).collect();
    let count: usize = sizes.iter().product();
    (0..count)
        .map(|mut j| {
            let mut query = record.interventions.clone();
            for c in (0..concealed.len()).rev() {
                query[concealed[c]] = Some(j % sizes[c]);
                j /= sizes[c];
            }
            Ok(joint_probability(dm, global, record, &query)? / denominator)
        })
        .collect()
}

/// Exact reduced system state at the final time given the record and the
/// revealed interventions.
pub fn exact_conditional_state<T: Real>(dm: &DiscreteModel<T>, global: &GlobalState<T>, record: &DiscreteRecord) -> Result<CMatrix<T>> {
    dm.check_record(record)?;
    let mut rho = CMatrix::zeros(dm.dim, dm.dim);
    for (w, psi) in &global.members {
        let projected = project(dm, &global.factorization, psi, record, &record.interventions)?;
        rho.add_scaled_real(*w, &partial_trace_vector(&projected, &global.factorization, &[0])?);
    }
    normalized(&rho)
}

/// Heisenberg-picture operators of the collision model on the dense global
/// space.
#[derive(Debug, Clone)]
pub struct HeisenbergPicture<T> {
    factorization: HilbertFactorization,
    /// `Ũ(t_i)` for `i = 0..=n`, each including interventions at `t_i`.
    unitaries: Vec<CMatrix<T>>,
    /// `Ỹ_{i,c}` for every step and channel.
    pub records: Vec<CMatrix<T>>,
    /// `P̃_{k,m}` for every intervention and outcome.
    pub probes: Vec<Vec<CMatrix<T>>>,
}

impl<T: Real> HeisenbergPicture<T> {
    pub fn new(dm: &DiscreteModel<T>) -> Result<Self> {
        let f = dm.factorization()?;
        let n = f.total();
        if n > DENSE_CAP {
            return Err(Error::DimensionCap { dim: n, cap: DENSE_CAP });
        }
        let mut u = CMatrix::identity(n);
        let mut unitaries = Vec::with_capacity(dm.n_steps + 1);
        let mut probes = Vec::with_capacity(dm.interventions.len());
        let mut records = Vec::with_capacity(dm.n_steps * dm.channels);
        let mut k = 0;
        for i in 0..=dm.n_steps {
            while k < dm.interventions.len() && dm.interventions[k].0 == i {
                let (_, iv) = &dm.interventions[k];
                u = embed(&iv.coupling, &f, &[0, dm.probe(k)])?.matmul(&u);
                probes.push(
                    iv.outcomes
                        .iter()
                        .map(|o| Ok(embed(&o.projector, &f, &[dm.probe(k)])?.adjoint_sandwich(&u)))
                        .collect::<Result<Vec<_>>>()?,
                );
                k += 1;
            }
            unitaries.push(u.clone());
            if i < dm.n_steps {
                u = embed(&dm.step_unitary, &f, &dm.step_targets(i))?.matmul(&u);
                for c in 0..dm.channels {
                    records.push(embed(&pauli::x(), &f, &[dm.ancilla(i, c)])?.adjoint_sandwich(&u));
                }
            }
        }
        Ok(Self {
            factorization: f,
            unitaries,
            records,
            probes,
        })
    }

    /// `Ũ(t_i)† (X ⊗ I) Ũ(t_i)` for a system operator `x`.
    pub fn system_observable(&self, x: &CMatrix<T>, step: usize) -> Result<CMatrix<T>> {
        Ok(embed(x, &self.factorization, &[0])?.adjoint_sandwich(&self.unitaries[step]))
    }
}

/// Largest Frobenius commutator norms among the Heisenberg-picture record
/// and probe observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutationReport {
    pub record_record: f64,
    pub probe_record: f64,
    pub probe_probe: f64,
}

impl CommutationReport {
    pub fn max(&self) -> f64 {
        self.record_record.max(self.probe_record).max(self.probe_probe)
    }
}

fn commutator_norm<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> f64 {
    crate::qlinalg::commutator(a, b).frobenius_norm().as_f64()
}

pub fn check_commutation<T: Real>(dm: &DiscreteModel<T>) -> Result<CommutationReport> {
    let h = HeisenbergPicture::new(dm)?;
    let mut report = CommutationReport {
        record_record: 0.0,
        probe_record: 0.0,
        probe_probe: 0.0,
    };
    for (i, a) in h.records.iter().enumerate() {
        for b in &h.records[i + 1..] {
            report.record_record = report.record_record.max(commutator_norm(a, b));
        }
    }
    let all_probes: Vec<&CMatrix<T>> = h.probes.iter().flatten().collect();
    for (j, p) in all_probes.iter().enumerate() {
        for y in &h.records {
            report.probe_record = report.probe_record.max(commutator_norm(p, y));
        }
        for q in &all_probes[j + 1..] {
            report.probe_probe = report.probe_probe.max(commutator_norm(p, q));
        }
    }
    Ok(report)
}
