//! Config loading, artifact I/O and stage orchestration behind the `robstab` binary.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::{load_config, ConfigError, Loaded, RunConfig};
pub use pipeline::{FailureKind, RunSummary, Runner, Stage, StageError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const CERTIFICATION: i32 = 3;
    pub const VERIFICATION: i32 = 4;
}
