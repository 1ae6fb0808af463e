//! Hamiltonian flows and the global symplectomorphism `Φ_A`.

mod global;
mod integrator;

use thiserror::Error;

pub use global::{
    extend_bounded, extend_embedding, flow_jacobian, ExtensionKind, GlobalSymplectomorphism, JacobianReport, PipelineConfig, PipelineError,
    PipelineMetadata,
};
pub use integrator::{
    integrate, integrate_from_level, integrate_on_grid, oracles, time_grid, AutonomousField, FlowOutcome, HamiltonianVectorField,
    IntegratorConfig, Scheme,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step limit exceeded at t = {t}, w = {w:?}: {reason}")]
    StepLimitExceeded { t: f64, w: Vec<f64>, reason: String },
    #[error("field evaluation failed at t = {t}, w = {w:?}: {message}")]
    FieldEvaluation { t: f64, w: Vec<f64>, message: String },
    #[error("non-finite state {0:?}")]
    NonFinite(Vec<f64>),
    #[error("invalid integrator configuration: {0}")]
    Config(String),
}
