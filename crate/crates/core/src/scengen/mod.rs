//! Uncertainty modelling and batch scenario generation: Gaussian mixtures,
//! orthogonal-array designs, and materialization into solved power flows.

mod design;
mod gmm;
mod scenario;

pub use design::{largest_design_within, level_quantile, orthogonal_array, Design, MAX_FACTORIAL_RUNS};
pub use gmm::{
    free_parameters, gmm_fit, regularization, select_components, EmConfig, GmmFit, GmmModel,
    GMM_SCHEMA_VERSION, MIN_COMPONENT_WEIGHT,
};
pub(crate) use gmm::kmeans_pp;
pub use scenario::{
    derive_overrides, generate_parameters, materialize_scenarios, scenarios_csv, BatchConfig,
    ParameterBatch, ParameterRole, Provenance, ScenarioOverrides, ScenarioSample, UncertainParameter,
    UncertaintySpec, SPEC_SCHEMA_VERSION,
};

#[cfg(test)]
mod tests;
