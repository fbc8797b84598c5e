//! Plug-and-play inference for partially observed Markov process models.
//!
//! Models are described by a [`ModelSpec`]: a latent-process simulator, a
//! measurement model, an initializer and optional prior and parameter
//! transforms. Every algorithm here needs only the ability to simulate the
//! latent process, never its transition density.
//!
//! Randomness flows from a single master seed through a tree of
//! [`StreamKey`]s so that results are reproducible regardless of the number
//! of worker threads.

pub mod abc;
pub mod covariate;
pub mod data;
pub mod distributions;
pub mod error;
pub mod mif;
pub mod model;
pub mod models;
pub mod nlf;
pub mod oracle;
pub mod params;
pub mod pmcmc;
pub mod probes;
pub mod rng;
pub mod smc;

pub use covariate::CovariateTable;
pub use data::{ObsView, TimeSeriesData};
pub use error::{Error, Result};
pub use model::{simulate, Direction, ModelSpec, SimulationRecord, Stepper};
pub use params::ParamVector;
pub use rng::{StreamKey, StreamRng};
