//! Simulation and analysis of evolutionary systems driven by a fast ergodic
//! Markov switching process, together with their averaged limit.
//!
//! The crate is organised bottom-up:
//!
//! - [`chain`]: finite-state generators, the stationary law, the projector,
//!   the potential (deviation) matrix and exact path sampling at time scale
//!   `t / epsilon`.
//! - [`system`]: the velocity-field catalog, growth/Lipschitz checks and the
//!   fixed-step RK4 integrators for the switched and the averaged systems.
//! - [`perturbation`]: the operator calculus of the coupled generator
//!   `epsilon^-1 Q + B(x)` and the perturbed test function `phi + epsilon phi_1`.
//! - [`montecarlo`]: parallel, seed-reproducible studies of the deviation
//!   `sup |u^eps - u_hat|`, the second-moment bound and compact containment.

pub mod chain;
mod error;
pub mod montecarlo;
pub mod perturbation;
pub mod system;

pub use chain::{ChainAnalysis, GeneratorMatrix, JumpPath, StreamKey};
pub use error::{Error, Result};
pub use montecarlo::{EstimateTable, ExperimentSpec, PathStats, StudyKind};
pub use perturbation::{CoupledFunction, PerturbationReport, ScalarFunction, TestFunction};
pub use system::{AveragedPath, FieldKind, SwitchedPath, VelocityField};
