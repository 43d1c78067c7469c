//! Config parsing and the relay-position sweep behind `marc-opt`.

pub mod config;
pub mod sweep;

pub use config::{parse_config, ConfigError, ConfigErrors, ExperimentConfig, SweepRange};
pub use sweep::{fmt_g12, run_sweep, write_csv, SweepError, SweepRow, CSV_HEADER};
