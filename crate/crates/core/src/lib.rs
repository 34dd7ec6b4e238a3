pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod graphs;
pub mod neighbors;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
