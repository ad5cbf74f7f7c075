#[macro_use]
mod vocabulary;

pub mod color;
pub mod dataset;
pub mod error;
pub mod histogram;
pub mod io;
pub mod metrics;
pub mod ot;
pub mod pipeline;
pub mod provenance;
pub mod shift;
pub mod transfer;

pub use error::{Error, Result};
