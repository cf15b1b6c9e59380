//! Bayesian covariance structure models for clustered data.
//!
//! Within-cluster dependence is modelled directly as a structured covariance
//! matrix (compound symmetry and its nested extensions), so covariance
//! parameters may be negative down to the positive-definiteness bound.

pub mod baseline;
pub mod covstruct;
pub mod design;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod rngdist;
pub mod simstudy;
pub mod suffstats;

pub use baseline::{anova_oneway, AnovaEstimate, AnovaVariant};
pub use design::{BalancedDataset, Design, GibbsConfig, OneWayDesign, Regressors, TauAShape, TwoWayNestedDesign};
pub use error::{Error, Result};
pub use gibbs::{fit_interaction, fit_oneway, fit_twoway, summarize, PosteriorChains, PosteriorSummary};
pub use rngdist::RngStream;
