//! Event-triggered synchronization of stochastic linear multi-agent systems,
//! and its use as the fusion layer of an event-based distributed Kalman filter.
//!
//! The crate is organised bottom-up:
//!
//! - [`matops`]: eigen-decomposition, Riccati fixed points, Sylvester solves,
//!   observability and controllability tests.
//! - [`netgraph`]: weighted undirected communication graphs and their Laplacian
//!   spectrum.
//! - [`plantsim`]: plant, sensor and agent-noise simulation with per-entity
//!   random streams.
//! - [`kalman`]: the centralized steady-state Kalman filter.
//! - [`decomp`]: the lossless split of that filter into single-measurement
//!   local filters.
//! - [`syncctl`]: gain design, held-state prediction, triggering and the
//!   synchronous network round.
//! - [`destimator`]: the distributed estimator built from the two layers above,
//!   with Monte Carlo metrics.
//! - [`runner`]: configuration, presets and output files.

pub mod decomp;
pub mod destimator;
pub mod error;
pub mod kalman;
pub mod matops;
pub mod netgraph;
pub mod plantsim;
pub mod precision;
pub mod runner;
pub mod syncctl;

pub use decomp::{Decomposition, LocalFilterState, Realization};
pub use destimator::{MonteCarloSummary, RunMetrics, SensorNode, TrialMode, TrialTrace};
pub use error::{Error, Result};
pub use kalman::KalmanDesign;
pub use matops::{CMatrix, RealMatrix, Spectrum};
pub use netgraph::{CommGraph, LaplacianSpectrum};
pub use plantsim::{NoiseSpec, PlantModel, SensorSuite, Trajectory};
pub use precision::{DoubleDouble, Precision, Real};
pub use runner::{load_config, preset, run, Report, RunConfig, RunOptions, RunOutcome};
pub use syncctl::{
    AgentState, FeasibilityCertificate, NetworkDynamics, NetworkState, SyncDesign, TriggerParams,
    TriggerPolicy,
};
