//! Probabilistic race prediction from names and geography.
//!
//! The crate computes BISG and BIFSG posteriors from Census-style name and
//! geography tables, and replaces the uninformative prior for names missing
//! from those tables with the output of a small neural network over a name
//! embedding. It also ships a synthetic population generator with exact
//! Bayes oracles and the evaluation metrics used to compare methods.

mod binio;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod normalize;
pub mod posterior;
pub mod prior_model;
pub mod race;
pub mod synth;
pub mod tables;

pub use error::{Error, Result};
pub use race::{Race, RaceDistribution, NUM_RACES};
