pub mod cli;
pub mod error;
pub mod exterior;
pub mod fieldio;
pub mod g2core;
pub mod sample;
pub mod soliton;
pub mod torsion;
pub mod torusfield;

pub use error::{Error, Result};
