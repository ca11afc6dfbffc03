//! File formats: JSON experiment descriptions with complex matrices as nested
//! `[re, im]` pairs, CSV records and expectation tables, JSON retrodiction and
//! past-state exports. Numbers are written with round-trip precision.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterState;
use crate::model::{ExperimentSpec, InterventionSpec, OpenSystemModel, Outcome};
use crate::qlinalg::CMatrix;
use crate::scalar::{Real, C};
use crate::smoother::{PastState, RetrodictionResult};
use crate::trajectory::{InterventionOutcome, MeasurementRecord};

/// Row-major matrix of `[re, im]` pairs.
pub type MatrixWire = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_wire<T: Real>(m: &CMatrix<T>) -> MatrixWire {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect())
        .collect()
}

pub fn matrix_from_wire<T: Real>(w: &MatrixWire) -> Result<CMatrix<T>> {
    let rows: Vec<Vec<C<T>>> = w
        .iter()
        .map(|r| r.iter().map(|&[re, im]| C::new(T::lit(re), T::lit(im))).collect())
        .collect();
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    CMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeWire {
    pub label: String,
    pub projector: MatrixWire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionWire {
    pub tau: f64,
    pub probe_state: MatrixWire,
    pub coupling: MatrixWire,
    /// Defaults to the computational basis of the probe, labelled `"0"`,
    /// `"1"`, ….
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<OutcomeWire>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentWire {
    pub hamiltonian: MatrixWire,
    pub couplings: Vec<MatrixWire>,
    /// Defaults to unit efficiency on every channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiencies: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub interventions: Vec<InterventionWire>,
    pub initial_state: MatrixWire,
    #[serde(default)]
    pub seed: u64,
}

fn field<T>(r: Result<T>, name: &str) -> Result<T> {
    r.map_err(|e| Error::Parse(format!("{name}: {e}")))
}

impl ExperimentWire {
    /// Builds the spec without validating it.
    pub fn to_spec<T: Real>(&self) -> Result<ExperimentSpec<T>> {
        let hamiltonian = field(matrix_from_wire(&self.hamiltonian), "hamiltonian")?;
        let couplings = self
            .couplings
            .iter()
            .enumerate()
            .map(|(k, l)| field(matrix_from_wire(l), &format!("couplings[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let efficiencies = match &self.efficiencies {
            Some(e) => e.iter().map(|&x| T::lit(x)).collect(),
            None => vec![T::one(); couplings.len()],
        };
        let interventions = self
            .interventions
            .iter()
            .enumerate()
            .map(|(k, iv)| {
                let probe_state: CMatrix<T> = field(matrix_from_wire(&iv.probe_state), &format!("interventions[{k}].probe_state"))?;
                let coupling = field(matrix_from_wire(&iv.coupling), &format!("interventions[{k}].coupling"))?;
                let tau = T::lit(iv.tau);
                match &iv.outcomes {
                    None => Ok(InterventionSpec::computational_basis(tau, probe_state, coupling)),
                    Some(list) => Ok(InterventionSpec {
                        tau,
                        probe_state,
                        coupling,
                        outcomes: list
                            .iter()
                            .enumerate()
                            .map(|(m, o)| {
                                Ok(Outcome {
                                    label: o.label.clone(),
                                    projector: field(
                                        matrix_from_wire(&o.projector),
                                        &format!("interventions[{k}].outcomes[{m}].projector"),
                                    )?,
                                })
                            })
                            .collect::<Result<_>>()?,
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentSpec {
            model: OpenSystemModel::new(hamiltonian, couplings, efficiencies),
            horizon: T::lit(self.horizon),
            dt: T::lit(self.dt),
            interventions,
            initial_state: field(matrix_from_wire(&self.initial_state), "initial_state")?,
            seed: self.seed,
        })
    }

    pub fn from_spec<T: Real>(spec: &ExperimentSpec<T>) -> Self {
        Self {
            hamiltonian: matrix_to_wire(&spec.model.hamiltonian),
            couplings: spec.model.couplings.iter().map(matrix_to_wire).collect(),
            efficiencies: Some(spec.model.efficiencies.iter().map(|e| e.as_f64()).collect()),
            horizon: spec.horizon.as_f64(),
            dt: spec.dt.as_f64(),
            interventions: spec
                .interventions
                .iter()
                .map(|iv| InterventionWire {
                    tau: iv.tau.as_f64(),
                    probe_state: matrix_to_wire(&iv.probe_state),
                    coupling: matrix_to_wire(&iv.coupling),
                    outcomes: Some(
                        iv.outcomes
                            .iter()
                            .map(|o| OutcomeWire {
                                label: o.label.clone(),
                                projector: matrix_to_wire(&o.projector),
                            })
                            .collect(),
                    ),
                })
                .collect(),
            initial_state: matrix_to_wire(&spec.initial_state),
            seed: spec.seed,
        }
    }
}

/// Writes `t, dY_1, …, dY_n` with `t` the end time of each increment.
pub fn write_record_csv<T: Real, W: Write>(record: &MeasurementRecord<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=record.channels()).map(|k| format!("dY_{k}")));
    w.write_record(&header)?;
    for i in 0..record.n_steps() {
        let mut row = vec![record.time_after(i).as_f64().to_string()];
        row.extend(record.step(i).iter().map(|y| y.as_f64().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record CSV written by [`write_record_csv`]; `dt` is taken from
/// the first time stamp and every row must lie on that grid.
pub fn read_record_csv<T: Real, R: Read>(input: R) -> Result<MeasurementRecord<T>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Parse("record CSV must start with a `t` column".into()));
    }
    let channels = header.len() - 1;
    let mut increments = Vec::new();
    let mut dt = None;
    let mut n = 0usize;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| Error::Parse(format!("line {}: missing column {j}", row + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", row + 2, j + 1)))
        };
        let t = parse(0)?;
        let step = *dt.get_or_insert(t);
        let expected = step * (row + 1) as f64;
        if step.is_nan() || step <= 0.0 || (t - expected).abs() > 1e-9 * expected.abs().max(step) {
            return Err(Error::GridMisalignment(format!(
                "line {}: t = {t} is not on the grid of dt = {step}",
                row + 2
            )));
        }
        for j in 1..=channels {
            increments.push(T::lit(parse(j)?));
        }
        n += 1;
    }
    let dt = dt.ok_or_else(|| Error::Parse("record CSV has no rows".into()))?;
    if channels == 0 {
        return Ok(MeasurementRecord::empty(T::lit(dt), n));
    }
    MeasurementRecord::new(T::lit(dt), channels, increments)
}

pub fn write_outcomes_json<W: Write>(outcomes: &[InterventionOutcome], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, outcomes)?;
    Ok(())
}

pub fn read_outcomes_json<R: Read>(input: R) -> Result<Vec<InterventionOutcome>> {
    Ok(serde_json::from_reader(input)?)
}

/// Writes `t, <name_1>, …` with `tr(ρ̂ O_j)` for each filter state.
pub fn write_expectations_csv<T: Real, W: Write>(states: &[FilterState<T>], names: &[String], observables: &[CMatrix<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (s, values) in states.iter().zip(crate::filter::expectations(states, observables)) {
        let mut row = vec![s.t.as_f64().to_string()];
        row.extend(values.iter().map(|v| v.as_f64().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrodictionWire {
    pub interventions: Vec<usize>,
    pub taus: Vec<f64>,
    pub labels: Vec<Vec<String>>,
    pub probabilities: Vec<f64>,
    pub normalizer: f64,
    pub log_normalizer: f64,
}

impl<T: Real> From<&RetrodictionResult<T>> for RetrodictionWire {
    fn from(r: &RetrodictionResult<T>) -> Self {
        Self {
            interventions: r.interventions.clone(),
            taus: r.taus.iter().map(|t| t.as_f64()).collect(),
            labels: r.labels.clone(),
            probabilities: r.probabilities.iter().map(|p| p.as_f64()).collect(),
            normalizer: r.normalizer.as_f64(),
            log_normalizer: r.log_normalizer.as_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastStateWire {
    pub t: f64,
    pub rho: MatrixWire,
    pub rho_log_scale: f64,
    pub effect: MatrixWire,
    pub effect_log_scale: f64,
}

impl<T: Real> From<&PastState<T>> for PastStateWire {
    fn from(p: &PastState<T>) -> Self {
        Self {
            t: p.t.as_f64(),
            rho: matrix_to_wire(&p.rho),
            rho_log_scale: p.rho_log_scale.as_f64(),
            effect: matrix_to_wire(&p.effect),
            effect_log_scale: p.effect_log_scale.as_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlinalg::{pauli, random};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_wire_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random::matrix::<f64, _>(3, &mut rng);
        let back: CMatrix<f64> = matrix_from_wire(&matrix_to_wire(&m)).unwrap();
        assert_eq!(back, m);
        assert!(matrix_from_wire::<f64>(&vec![vec![[1.0, 0.0]], vec![]]).is_err());
    }

    #[test]
    fn record_csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inc: Vec<f64> = (0..30).map(|_| random::matrix::<f64, _>(1, &mut rng)[(0, 0)].re * 0.03).collect();
        let record = MeasurementRecord::new(1e-3, 2, inc).unwrap();
        let mut buf = Vec::new();
        write_record_csv(&record, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,dY_1,dY_2\n0.001,"));
        let back: MeasurementRecord<f64> = read_record_csv(buf.as_slice()).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn record_csv_errors() {
        let bad = "t,dY_1\n0.001,0.1\n0.0025,0.2\n";
        assert!(matches!(read_record_csv::<f64, _>(bad.as_bytes()), Err(Error::GridMisalignment(_))));
        let bad = "t,dY_1\n0.001,abc\n";
        match read_record_csv::<f64, _>(bad.as_bytes()) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line 2")),
            other => panic!("{other:?}"),
        }
        assert!(read_record_csv::<f64, _>("time,dY_1\n".as_bytes()).is_err());
    }

    #[test]
    fn experiment_wire_round_trip() {
        let spec = ExperimentSpec {
            model: OpenSystemModel::new(pauli::x::<f64>(), vec![pauli::lower()], vec![0.8]),
            horizon: 1.0,
            dt: 1e-3,
            interventions: vec![InterventionSpec::computational_basis(0.5, CMatrix::basis_projector(2, 0), pauli::cnot())],
            initial_state: pauli::plus_state(),
            seed: 3,
        };
        let wire = ExperimentWire::from_spec(&spec);
        let text = serde_json::to_string(&wire).unwrap();
        let back: ExperimentWire = serde_json::from_str(&text).unwrap();
        assert_eq!(back, wire);
        assert_eq!(back.to_spec::<f64>().unwrap(), spec);
    }

    #[test]
    fn defaults_fill_efficiencies_and_outcomes() {
        let text = r#"{
            "hamiltonian": [[[0,0],[0,0]],[[0,0],[0,0]]],
            "couplings": [[[[0,0],[1,0]],[[0,0],[0,0]]]],
            "horizon": 1.0, "dt": 0.01,
            "interventions": [{"tau": 0.5,
                "probe_state": [[[1,0],[0,0]],[[0,0],[0,0]]],
                "coupling": [[[1,0],[0,0],[0,0],[0,0]],[[0,0],[1,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[1,0]],[[0,0],[0,0],[1,0],[0,0]]]}],
            "initial_state": [[[0.5,0],[0.5,0]],[[0.5,0],[0.5,0]]]
        }"#;
        let wire: ExperimentWire = serde_json::from_str(text).unwrap();
        let spec = wire.to_spec::<f64>().unwrap();
        assert_eq!(spec.model.efficiencies, vec![1.0]);
        assert_eq!(spec.interventions[0].labels(), vec!["0", "1"]);
        assert_eq!(spec.interventions[0].coupling, pauli::cnot());
        assert!(crate::model::validate(&spec).is_empty());
    }
}
