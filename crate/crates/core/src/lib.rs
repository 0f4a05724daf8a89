pub mod baseline;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod mfm;
pub mod postprocess;
pub mod sampler;
pub mod simbench;
pub mod spatial;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
