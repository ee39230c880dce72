//! Generalized propensity score estimation of pairwise treatment effects
//! with multi-level treatments: score fitting, matching, subclassification,
//! weighting, overlap trimming, balance diagnostics and simulation designs.

#![allow(clippy::needless_range_loop)]

pub mod balance;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod gps;
pub mod inference;
mod kdtree;
mod linalg;
pub mod matching;
pub mod pipeline;
pub mod rng;
pub mod simulation;
pub mod trimming;

pub use dataset::{CsvSchema, Dataset, UnitMask};
pub use error::{Error, ErrorKind, Result};
pub use estimators::{EffectEstimate, EffectSet, Method, Population};
pub use gps::{fit_multinomial_logit, FitOptions, GpsModel, ScoreMatrix};
