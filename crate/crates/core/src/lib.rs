//! Estimation of AV-node refractory-period and conduction-delay trends from
//! 24-hour RR-interval series and atrial-rate trends.
//!
//! The pipeline: ingest RR/AFR files into overlapping ten-minute segments,
//! fit the dual-pathway network model per segment with a dynamic genetic
//! algorithm followed by ABC population Monte Carlo, reduce the posterior
//! parameter samples to refractory-period and conduction-delay distributions,
//! and summarize their diurnal and short-term variability.

pub mod abc;
pub mod error;
pub mod fit;
pub mod ga;
pub mod ingest;
pub mod model;
pub mod params;
pub mod poincare;
pub mod reduction;
pub mod seeds;
pub mod stats;
pub mod trends;

pub use error::{CoreError, Result};
pub use params::{ModelParameters, ParamBounds, PathwayParams, THETA_DIM};
