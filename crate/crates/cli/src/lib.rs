//! Command-line frontend for plausicf: artifact fitting, single explanations,
//! the cross-validated experiment table and theory diagnostics.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod pgm;
pub mod pipeline;

pub use commands::{cmd_diagnose, cmd_explain, cmd_fit, DiagnoseReport, ExplainArgs, ModelArtifact};
pub use config::{ExperimentConfig, ModelKind, ObjectiveKind};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, write_outputs, ExperimentOutcome, ResultTable, SampleRecord, TableRow, TABLE_HEADER};
