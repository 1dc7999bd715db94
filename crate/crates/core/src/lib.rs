//! Particle filtering for ODE models with linear multistep propagators.
//!
//! Particles are advanced by Adams-Bashforth, Adams-Moulton, BDF or embedded
//! Runge-Kutta steps. The innovation covariance at each step is estimated from
//! the disagreement between the propagating method and a method of higher
//! order from the same family. The [`experiment`] module drives end-to-end
//! runs on test problems with known solutions.

// Negated float comparisons in this crate are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod exec;
pub mod experiment;
pub mod filter;
pub mod homec;
pub mod integrators;
pub mod metrics;
pub mod ode_models;
pub mod rng;
pub mod state_space;

pub use error::{Error, Result};
pub use exec::Execution;
pub use experiment::{run_experiment, run_sweep, ExperimentConfig, ResultsRow, ResultsTable};
pub use filter::{run_filter, Ensemble, FilterConfig, Particle, Resampler};
pub use homec::{innovation_covariance, pair_by_id, InnovationCovariance, MethodPair};
pub use integrators::{make_method, Family, HistoryBuffer, ImplicitSolveConfig, MethodSpec};
pub use metrics::{diagnostics, RunDiagnostics};
pub use ode_models::{problem_by_id, ObservationRecord, OdeSystem, TestProblem};
pub use state_space::{AugmentedState, EvolutionObservationModel, GaussianDensity, ObservationMap};
