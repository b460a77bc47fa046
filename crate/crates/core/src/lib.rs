//! Sequential Monte Carlo Bayesian experimental design for spin sensing.

pub mod campaign;
pub mod config;
pub mod eig;
pub mod error;
pub mod models;
pub mod orchestrator;
pub mod records;
pub mod rng;
pub mod sim;
pub mod smc;
pub mod throughput;
pub mod validation;

pub use eig::{BatchPolicy, BatchWeighting, ControlGrid, EigTable, Utility};
pub use error::{Error, Result};
pub use models::{LikelihoodModel, ModelKind, ReadoutFidelity, SensingModel};
pub use orchestrator::{Mode, RunConfig, RunTrace};
pub use sim::{GroundTruth, ShotRecord};
pub use smc::{ParticleCloud, PosteriorSummary, ResamplerConfig};
