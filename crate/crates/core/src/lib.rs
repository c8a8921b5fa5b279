//! Fully latent principal stratification.
//!
//! A randomized trial records a continuous outcome `y`, a treatment flag `z`
//! and baseline covariates for every subject. Treated subjects additionally
//! answer a set of items whose responses depend on a latent trait `eta`.
//! The treatment effect on `y` varies linearly in `eta`, and this crate fits
//! the joint model by Hamiltonian Monte Carlo.
//!
//! Measurement and structural densities are generic over [`Real`]; the
//! aliases below pin them to `f64` and `f32`.

pub mod error;
pub mod io;
pub mod measurement;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod simgen;
pub mod structural;
pub mod study;

pub use error::{Error, Result};
pub use measurement::{ItemParams, ModelKind, ResponseMatrix};
pub use posterior::{
    Constraint, FlpsModel, ItemSource, MeasurementSpec, ParameterSet, PriorConfig, TrialDataset,
};
pub use sampler::{run_chains, LogDensity, PosteriorDraws, SamplerConfig, Trajectory};
pub use scalar::Real;
pub use simgen::{generate_dataset, GroundTruth, ScenarioConfig};
pub use structural::StructuralParams;
pub use study::{run_study, StudyDesign, StudyReport};

pub type ItemParams64 = ItemParams<f64>;
pub type ItemParams32 = ItemParams<f32>;
pub type Structural64 = StructuralParams<f64>;
pub type Structural32 = StructuralParams<f32>;
