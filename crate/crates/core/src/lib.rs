//! Second-order (Aw-Rascle-Zhang) macroscopic traffic model for highways
//! with on- and off-ramps, together with the state estimators built on it:
//! a linear moving horizon estimator solved as a box-constrained QP, and
//! projected EKF/UKF/EnKF baselines. A scenario runner drives twin
//! experiments with fixed and rotating (connected-vehicle) sensors.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double-precision instantiations used by the CLI.

pub mod estimators;
pub mod linearize;
pub mod mhe;
pub mod model;
pub mod num;
pub mod scenario;
pub mod sensing;
pub mod system;

pub use estimators::{Estimator, EstimatorKind, KfConfig};
pub use mhe::{MheConfig, MheSession};
pub use model::{ArzModel, Inputs, ModelError, ModelParams, Topology};
pub use num::Real;
pub use sensing::{Selector, SensorSchedule};
pub use system::{LinearTwin, StateSpaceModel};

pub type ArzModel64 = ArzModel<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type Topology64 = Topology<f64>;
pub type MheConfig64 = MheConfig<f64>;
pub type KfConfig64 = KfConfig<f64>;
