//! Command errors and their process exit codes.

use std::path::Path;

use adlab_core::detection::DetectionError;
use adlab_core::extractor::{ExtractionFailure, Step};
use adlab_core::sim::ConfigError;
use thiserror::Error;

/// Exit code for I/O and file-format failures.
pub const EXIT_IO: i32 = 1;
/// Exit code for invalid command-line usage (reported by the argument parser).
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DETECTION: i32 = 4;
/// Extraction finished but found no links.
pub const EXIT_NO_LINKS: i32 = 5;
/// Extraction finished but a link failed signature verification.
pub const EXIT_UNVERIFIED: i32 = 6;
pub const EXIT_HTTP: i32 = 7;
/// Extraction failed at step a; steps b to j follow as 11 to 19. A page
/// without an ad block also exits with the step b code.
pub const EXIT_STEP_BASE: i32 = 10;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Extraction(#[from] ExtractionFailure),
    #[error("no ad block found on the target page")]
    NoAdBlock,
    #[error("extraction found no ad links")]
    NoLinks,
    #[error("{bad} of {total} extracted links failed verification")]
    Unverified { bad: usize, total: usize },
    #[error("http: {0}")]
    Http(String),
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Io { .. } | AppError::Format(_) => EXIT_IO,
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Detection(_) => EXIT_DETECTION,
            AppError::Extraction(f) => f.step.exit_code(),
            AppError::NoAdBlock => Step::B.exit_code(),
            AppError::NoLinks => EXIT_NO_LINKS,
            AppError::Unverified { .. } => EXIT_UNVERIFIED,
            AppError::Http(_) => EXIT_HTTP,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_codes_follow_the_base() {
        for (i, s) in Step::ALL.iter().enumerate() {
            assert_eq!(s.exit_code(), EXIT_STEP_BASE + i as i32);
        }
        let codes = [
            EXIT_IO,
            EXIT_USAGE,
            EXIT_CONFIG,
            EXIT_DETECTION,
            EXIT_NO_LINKS,
            EXIT_UNVERIFIED,
            EXIT_HTTP,
        ];
        assert!(codes.iter().all(|c| *c > 0 && *c < EXIT_STEP_BASE));
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }
}
