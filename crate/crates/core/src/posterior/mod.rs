//! Joint posterior of item, structural and latent parameters.

pub mod dataset;
pub mod model;
pub mod oracle;
pub mod prior;
pub mod quadrature;

pub use dataset::{Constraint, MeasurementSpec, ParameterSet, TrialDataset};
pub use model::{FlpsModel, ItemSource, ParamRole};
pub use oracle::{
    oracle_check, oracle_posterior_summary, Oracle, OracleCheckConfig, OracleCheckReport,
    OracleSettings, OracleSummary,
};
pub use prior::{BlockPrior, InterceptPrior, PriorConfig, ScalePrior, SlopePrior};
