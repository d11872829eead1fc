//! Stochastic exponential derivative-free solvers for diffusion SDEs.
//!
//! The crate is organized bottom up:
//!
//! - [`schedules`]: `α_t`, `σ_t`, the half log-SNR `λ` and its inverse.
//! - [`phi`]: the `φ_k` functions and stable exponential combinations.
//! - [`noise`]: keyed Gaussian streams and exponentially weighted increments.
//! - [`models`]: analytic scores of Gaussian mixtures and parameterization
//!   conversions.
//! - [`solvers`]: SEEDS-1/2/3 and the baselines, plus the sampling loop.
//! - [`grids`]: time discretizations.
//! - [`harness`]: strong and weak convergence estimates.
//!
//! ```
//! use seeds::{grids::linear_lambda_grid, DataDistribution, Family, LambdaVariant,
//!             Schedule, ScoreModel, SolverSpec};
//! let sched = Schedule::vp_linear(19.9, 0.1);
//! let data = DataDistribution::gaussian(vec![0.5], vec![0.2]).unwrap();
//! let model = ScoreModel::new(data, sched);
//! let grid = linear_lambda_grid(&sched, 20, 1.0, 1e-4, LambdaVariant::LogSigma).unwrap();
//! let traj = seeds::sample(&model, &grid, &SolverSpec::new(Family::Seeds2), vec![0.3], 1, 0).unwrap();
//! assert!(traj.terminal()[0].is_finite());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grids;
pub mod harness;
pub mod models;
pub mod noise;
pub mod phi;
pub mod schedules;
pub mod solvers;

pub use error::{Error, Result};
pub use grids::StepGrid;
pub use models::{DataDistribution, Model, ScoreModel};
pub use schedules::{LambdaVariant, Schedule, ScheduleKind};
pub use solvers::{integrate, prior_state, sample, step, Family, Mode, SolverSpec, Trajectory};
