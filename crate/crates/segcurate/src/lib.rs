//! Storage formats, worker bridge, curation pipeline and command-line tools
//! built on `segcurate-core`.

pub mod bridge;
pub mod conditions;
pub mod digest;
pub mod error;
pub mod evaluate;
pub mod freq;
pub mod labelfile;
pub mod manifest;
pub mod mapping;
pub mod pipeline;
pub mod subset;

pub use error::{Error, Result};
