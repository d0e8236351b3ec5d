//! Configuration, replica orchestration, verification and file output for
//! the particle simulator in `kinetic-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod verify;

pub use config::{load_config, parse_config, parse_config_for, ExperimentConfig, Mode};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, RunReport};
pub use io::{emit, Format};
