//! Command-line layer of the pay-per-click sandbox: scenario files, run
//! directories, HTTP mode and reports on top of `adlab-core`.

pub mod commands;
pub mod error;
pub mod formats;
pub mod http;
pub mod report;
pub mod scenario;

pub use commands::{cmd_extract, cmd_gen_corpus, cmd_report, cmd_run, CorpusFile, ExtractArgs, RunManifest};
pub use error::AppError;
pub use scenario::Scenario;
