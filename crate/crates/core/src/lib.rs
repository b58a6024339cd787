//! Drowsiness-minimizing model predictive control for office temperature
//! and ambient illuminance.
//!
//! The crate is organized bottom-up:
//!
//! - [`domain`]: value types, configuration and validation.
//! - [`models`]: one-step prediction models for drowsiness, room temperature
//!   and illuminance, the horizon rollout, objective and comfort constraint.
//! - [`identify`]: least-squares identification of the prediction models
//!   from telemetry.
//! - [`optimizer`]: differential evolution with feasibility-rule constraint
//!   handling.
//! - [`mpc`]: the horizon solve and the receding-horizon controller.
//! - [`sim`]: ground-truth plants, the closed-loop scenario runner and
//!   paired arm comparisons.

// Checks written as `!(x >= 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod identify;
pub mod models;
pub mod mpc;
pub mod optimizer;
pub mod sim;

pub use domain::{
    AmiModel, ControlMode, ControlSchedule, DlFeature, DlModel, DomainError, DrowsinessLevel,
    IdtModel, ModelSet, MpcConfig, StateSnapshot, WorkerState,
};
pub use models::HorizonPrediction;
pub use mpc::{Controller, MpcSolution};
pub use optimizer::{DeParams, DeResult};
