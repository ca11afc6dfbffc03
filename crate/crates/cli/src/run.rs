use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qsmooth::filter::run_filter;
use qsmooth::io::{
    read_outcomes_json, read_record_csv, write_expectations_csv, write_outcomes_json, write_record_csv, PastStateWire,
    RetrodictionWire,
};
use qsmooth::model::{ExperimentSpec, SnapNote};
use qsmooth::smoother::{past_state_series, retrodict};
use qsmooth::trajectory::{simulate_ensemble, MeasurementRecord, SimulationOptions};
use qsmooth::verify::{verify, VerifyOptions, VerifyReport};
use qsmooth::{Error, Result};
use serde::Serialize;

use crate::config::{Command, RunConfig};

#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub snapped_interventions: Vec<SnapNote>,
    pub warnings: Vec<String>,
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Set by `verify`.
    pub report: Option<VerifyReport>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.passed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn snap_warnings(notes: &[SnapNote], unit: &str) -> Vec<String> {
    notes
        .iter()
        .map(|n| {
            format!(
                "intervention {} requested at tau = {} {unit} snapped to grid time {} {unit} (step {})",
                n.index, n.requested_tau, n.snapped_tau, n.step
            )
        })
        .collect()
}

fn load_record(config: &RunConfig, spec: &ExperimentSpec<f64>) -> Result<MeasurementRecord<f64>> {
    let path = config.record.as_ref().ok_or_else(|| Error::Parse("record: missing".into()))?;
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut record: MeasurementRecord<f64> =
        read_record_csv(file).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if (record.dt() - spec.dt).abs() > 1e-9 * spec.dt {
        return Err(Error::GridMisalignment(format!(
            "record time step {} differs from the experiment's {}",
            record.dt(),
            spec.dt
        )));
    }
    if let Some(p) = &config.outcomes {
        let file = File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        record.intervention_log = read_outcomes_json(file)?;
    }
    Ok(record)
}

/// Executes the configured command, writing every artifact into `config.out`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let spec = config.spec()?;
    let (_, notes) = spec.intervention_steps();
    let warnings = snap_warnings(&notes, &config.time_unit);
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let mut files = Vec::new();
    let mut report = None;

    match config.command {
        Command::Simulate => {
            let opts = SimulationOptions {
                store_states: false,
                reveal_outcomes: false,
            };
            let runs = simulate_ensemble(&spec, config.ensemble, opts);
            for (i, r) in runs.into_iter().enumerate() {
                let r = r?;
                let suffix = if config.ensemble == 1 { String::new() } else { format!("_{i:04}") };
                let record_path = out.join(format!("record{suffix}.csv"));
                let mut w = create(&record_path)?;
                write_record_csv(&r.record, &mut w)?;
                w.flush()?;
                let outcomes_path = out.join(format!("outcomes{suffix}.json"));
                let mut w = create(&outcomes_path)?;
                write_outcomes_json(&r.hidden_outcomes, &mut w)?;
                w.flush()?;
                files.push(record_path);
                files.push(outcomes_path);
            }
        }
        Command::Filter => {
            let record = load_record(config, &spec)?;
            let mut labels = vec![None; spec.interventions.len()];
            for o in &record.intervention_log {
                if let Some(slot) = labels.get_mut(o.index) {
                    *slot = Some(o.label.clone());
                }
            }
            let labels = labels
                .into_iter()
                .enumerate()
                .map(|(index, l)| l.ok_or(Error::MissingOutcome { index }))
                .collect::<Result<Vec<_>>>()?;
            let states = run_filter(&record, &spec, &labels)?;
            let (names, observables) = config.observable_matrices(spec.dim())?;
            let path = out.join("expectations.csv");
            let mut w = create(&path)?;
            write_expectations_csv(&states, &names, &observables, &mut w)?;
            w.flush()?;
            files.push(path);
        }
        Command::Smooth => {
            let record = load_record(config, &spec)?;
            let series: Vec<PastStateWire> = past_state_series(&record, &spec)?.iter().map(PastStateWire::from).collect();
            let path = out.join("past_states.json");
            write_json(&path, &series)?;
            files.push(path);
        }
        Command::Retrodict => {
            let record = load_record(config, &spec)?;
            let result = RetrodictionWire::from(&retrodict(&record, &spec)?);
            let path = out.join("retrodiction.json");
            write_json(&path, &result)?;
            files.push(path);
        }
        Command::Verify => {
            let opts = VerifyOptions {
                ensemble: if config.ensemble > 1 { config.ensemble } else { 0 },
                ..VerifyOptions::default()
            };
            let r = verify(&spec, opts);
            let path = out.join("verify.json");
            write_json(&path, &r)?;
            files.push(path);
            report = Some(r);
        }
    }

    let path = out.join("metadata.json");
    write_json(
        &path,
        &Metadata {
            version: env!("CARGO_PKG_VERSION"),
            config,
            snapped_interventions: notes,
            warnings: warnings.clone(),
        },
    )?;
    files.push(path);
    Ok(RunSummary { files, warnings, report })
}

/// Machine-readable description of a failed run.
pub fn error_json(e: &Error) -> serde_json::Value {
    let mut body = serde_json::json!({
        "kind": e.kind(),
        "message": e.to_string(),
    });
    if let Error::InvalidSpec(v) = e {
        body["violations"] = serde_json::to_value(v).unwrap_or_default();
    }
    serde_json::json!({ "error": body })
}
