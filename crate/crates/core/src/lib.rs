//! Differentiable tensorized agent-based epidemic simulator.
//!
//! Agents and their venue contacts are represented as flat arrays so a whole
//! simulated day is bulk array math recorded on an autodiff tape. Disease
//! parameters are calibrated against weekly case counts by stochastic
//! gradient descent, and calibrated models are run as hard-sampling
//! ensembles for forecasting and policy experiments.

pub mod autodiff;
pub mod calibration;
pub mod ensemble;
pub mod epi_model;
pub mod fixtures;
pub mod interventions;
pub mod metrics;
pub mod population;
pub mod refsim;
pub mod rng;

pub use autodiff::{AdError, GradientMap, Tape, Tensor};
pub use calibration::{CalibrationConfig, FitResult, LearnableParamSet, ObservationSeries};
pub use ensemble::{EnsembleConfig, EnsembleSummary};
pub use epi_model::{
    AttributeFactors, DiseaseParams, EpidemicTrace, ModulatorWeights, SimMode, VenueKindParams,
};
pub use interventions::{ControlModifier, PolicyAudit, PolicySet, PolicyState};
pub use population::{Agent, ContactGraph, Ethnicity, Population, PopulationSpec, Sex, Venue, VenueKind};
