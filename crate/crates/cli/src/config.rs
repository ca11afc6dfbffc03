//! Run configuration: a JSON file naming the command, the experiment (inline
//! or as a path to an experiment file), input and output locations and the
//! observables to export.

use std::fs;
use std::path::{Path, PathBuf};

use qsmooth::io::{matrix_from_wire, ExperimentWire, MatrixWire};
use qsmooth::model::{validate, ExperimentSpec};
use qsmooth::qlinalg::CMatrix;
use qsmooth::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Filter,
    Smooth,
    Retrodict,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Smooth => "smooth",
            Command::Retrodict => "retrodict",
            Command::Verify => "verify",
        }
    }

    fn needs_record(self) -> bool {
        matches!(self, Command::Filter | Command::Smooth | Command::Retrodict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableWire {
    pub name: String,
    pub matrix: MatrixWire,
}

/// Fully resolved configuration. Serializing it gives a config file that
/// loads back to an equal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub experiment: ExperimentWire,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
    /// Revealed intervention outcomes for the record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<PathBuf>,
    pub ensemble: usize,
    pub out: PathBuf,
    pub observables: Vec<ObservableWire>,
    /// Unit of every time in the experiment and in the outputs.
    pub time_unit: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<Command>,
    experiment: serde_json::Value,
    record: Option<PathBuf>,
    outcomes: Option<PathBuf>,
    ensemble: Option<usize>,
    out: Option<PathBuf>,
    #[serde(default)]
    observables: Vec<ObservableWire>,
    time_unit: Option<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ensemble: Option<usize>,
    pub record: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(base.join(p))?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    load_config_with(path, &Overrides::default())
}

/// Parses, resolves and validates a config file. Relative paths inside the
/// file are taken relative to the file's directory; `out` and paths given as
/// overrides are taken relative to the working directory.
pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let base = path.parent().unwrap_or(Path::new("."));
    let raw: RawConfig = serde_json::from_str(&read(path)?).map_err(|e| parse_error(path, e))?;
    let experiment: ExperimentWire = match raw.experiment {
        serde_json::Value::String(p) => {
            let p = absolute(base, Path::new(&p))?;
            serde_json::from_str(&read(&p)?).map_err(|e| parse_error(&p, e))?
        }
        v => serde_json::from_value(v).map_err(|e| Error::Parse(format!("experiment: {e}")))?,
    };
    let resolve = |p: Option<PathBuf>| p.map(|p| absolute(base, &p)).transpose();
    let cwd = Path::new(".");
    let mut config = RunConfig {
        command: overrides
            .command
            .or(raw.command)
            .ok_or_else(|| Error::Parse("command: missing".into()))?,
        experiment,
        record: match &overrides.record {
            Some(p) => Some(absolute(cwd, p)?),
            None => resolve(raw.record)?,
        },
        outcomes: match &overrides.outcomes {
            Some(p) => Some(absolute(cwd, p)?),
            None => resolve(raw.outcomes)?,
        },
        ensemble: overrides.ensemble.or(raw.ensemble).unwrap_or(1),
        out: overrides.out.clone().or(raw.out).unwrap_or_else(|| PathBuf::from("out")),
        observables: raw.observables,
        time_unit: raw.time_unit.unwrap_or_else(|| "s".into()),
    };
    if let Some(seed) = overrides.seed {
        config.experiment.seed = seed;
    }
    config.check()?;
    Ok(config)
}

impl RunConfig {
    pub fn spec(&self) -> Result<ExperimentSpec<f64>> {
        self.experiment.to_spec()
    }

    /// Validates the experiment and the command-specific fields.
    pub fn check(&self) -> Result<()> {
        let spec = self.spec()?;
        let violations = validate(&spec);
        if !violations.is_empty() {
            return Err(Error::InvalidSpec(violations));
        }
        if self.command.needs_record() && self.record.is_none() {
            return Err(Error::Parse(format!("record: required for {}", self.command.name())));
        }
        for (field, p) in [("record", &self.record), ("outcomes", &self.outcomes)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Io(format!("{field}: {} does not exist", p.display())));
                }
            }
        }
        if self.ensemble == 0 {
            return Err(Error::Parse("ensemble: must be at least 1".into()));
        }
        self.observable_matrices(spec.dim())?;
        Ok(())
    }

    /// Named observables; the basis-state populations when none are given.
    pub fn observable_matrices(&self, dim: usize) -> Result<(Vec<String>, Vec<CMatrix<f64>>)> {
        if self.observables.is_empty() {
            return Ok(((0..dim).map(|i| format!("p{i}")).collect(), (0..dim).map(|i| CMatrix::basis_projector(dim, i)).collect()));
        }
        let mut names = Vec::new();
        let mut mats = Vec::new();
        for (j, o) in self.observables.iter().enumerate() {
            let m: CMatrix<f64> = matrix_from_wire(&o.matrix).map_err(|e| Error::Parse(format!("observables[{j}]: {e}")))?;
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::Parse(format!("observables[{j}]: expected a {dim}x{dim} matrix")));
            }
            names.push(o.name.clone());
            mats.push(m);
        }
        Ok((names, mats))
    }
}
