//! Quantum filtering and smoothing for continuously monitored open systems.
//!
//! Forward filtering, backward effect propagation and retrodiction of
//! concealed intervention outcomes, plus an exact discrete collision model
//! used as a reference.

pub mod error;
pub mod filter;
pub mod io;
pub mod model;
pub mod oracle;
pub mod qlinalg;
pub mod scalar;
pub mod smoother;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type C64 = C<f64>;
pub type CMatrix64 = qlinalg::CMatrix<f64>;
pub type CMatrix32 = qlinalg::CMatrix<f32>;
pub type Model64 = model::OpenSystemModel<f64>;
pub type Model32 = model::OpenSystemModel<f32>;
pub type Intervention64 = model::InterventionSpec<f64>;
pub type Experiment64 = model::ExperimentSpec<f64>;
pub type Experiment32 = model::ExperimentSpec<f32>;
pub type Record64 = trajectory::MeasurementRecord<f64>;
pub type Record32 = trajectory::MeasurementRecord<f32>;
