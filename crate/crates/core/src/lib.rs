//! Robust stabilization of uncertain discrete-time nonlinear systems.
//!
//! Given a nominal model `fhat`, an error bound `delta` and a Lyapunov
//! candidate `L`, this crate
//!
//! - estimates where a control input makes `L` decrease for every plant in the
//!   set ([`rndd`]),
//! - maximizes a level set of `L` inside that estimate to obtain a robust
//!   domain of attraction ([`doa`]),
//! - interpolates a state-feedback controller through the estimate and checks
//!   it ([`controller`]), and
//! - validates the closed loop by Monte-Carlo simulation ([`sim`]).

pub mod bisect;
pub mod controller;
pub mod doa;
pub mod error;
pub mod expr;
pub mod model;
pub mod rndd;
pub mod sampling;
pub mod sim;

pub use controller::{ControllerModel, TrainingPair, TrainingRule, TrainingSet, VerificationReport};
pub use doa::{ContainmentMethod, DoaParams, DoaResult, X0Region};
pub use error::{Error, Result};
pub use model::{ControlVector, IntervalBox, LyapunovSpec, PlantSpec, StateVector};
pub use rndd::{CellStatus, EstimateCounters, EstimateMeta, Grid, LabeledSet, RnddEstimate, StateProjection};
pub use sampling::{Purpose, SampleSeed, SampleStream};
pub use sim::{SimReport, Trajectory};
