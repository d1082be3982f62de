//! Transition paths of finite-state Markov jump processes through optimal
//! control.
//!
//! The committor `h_AB` of a rate kernel gives both the value function
//! `−log h_AB` of the entropy-penalized control problem and its optimal
//! control, the Doob transform `L_h(x, y) = (h(y)/h(x)) L(x, y)`. This crate
//! solves for `h_AB`, builds the controlled kernel, simulates reference and
//! controlled paths with their Girsanov weights, and checks the identities
//! that tie these together. The finite-horizon counterpart (backward
//! Kolmogorov equation, Hamilton–Jacobi equation and density–flux duality)
//! lives in [`finite_horizon`].

pub mod cli;
pub mod committor;
pub mod doob;
pub mod elimination;
pub mod error;
pub mod finite_horizon;
pub mod kernel;
pub mod model_io;
pub mod pipeline;
pub mod propagate;
pub mod sim;

pub use committor::{solve_committor, solve_committor_regularized, CommittorSolution};
pub use doob::{doob_transform, transition_path_control, ControlSpec, Velocity};
pub use error::{Error, Result};
pub use kernel::{Distribution, PairField, RateKernel, ScalarField, StateSet};
pub use model_io::{emit_model, load_model, Model};
pub use pipeline::{run_pipeline, PipelineConfig, RunReport};
pub use sim::{
    estimate_ensemble, girsanov_log_weight, sample_path, PathRecord, StopReason, StopRule,
};
