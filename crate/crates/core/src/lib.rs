pub mod activeharness;
pub mod autodiff;
pub mod bayes;
pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod gradcheck;
pub mod graphconv;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod semisup;
pub mod smiles;
pub mod synth;

pub use error::{Error, Result};
