pub mod error;
pub mod fitting;
pub mod flowgen;
pub mod graph;
pub mod init;
pub mod metrics;
pub mod mrf;
pub mod pipeline;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
