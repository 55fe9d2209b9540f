pub mod composition;
pub mod enrichment;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod ssl;
pub mod stats;
pub mod tile;

pub use error::{PrlError, Result};
