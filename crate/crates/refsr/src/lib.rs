//! Files, datasets, evaluation and stage orchestration around `refsr-core`.
//!
//! - [`io`] – PNG images, clip directories, atomic writes, SHA-256.
//! - [`checkpoint`] – the versioned weight container.
//! - [`config`] – flat TOML stage configs, presets and fingerprints.
//! - [`manifest`] – line-delimited JSON dataset manifests.
//! - [`dataset`] – pair, benchmark and clip generation; dataset assembly.
//! - [`eval`] – dataset-level metrics, reports and plots.
//! - [`stages`] – one function per CLI subcommand, with run manifests.

use std::fmt::Display;
use std::path::Path;

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod models;
pub mod plot;
pub mod stages;

/// Errors of the companion crate, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// A required input file or upstream artifact is absent.
    #[error("missing {what}: {detail}")]
    Missing { what: String, detail: String },
    /// A metric could not be computed.
    #[error("metric failure: {0}")]
    Metric(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] refsr_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn missing(what: impl Into<String>, detail: impl Display) -> Self {
        Failure::Missing { what: what.into(), detail: detail.to_string() }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Invalid(msg.into())
    }

    /// `io::Error` on `path`; not-found becomes [`Failure::Missing`].
    pub fn from_io(e: std::io::Error, what: &str, path: &Path) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::missing(what, path.display())
        } else {
            Failure::Invalid(format!("{}: {e}", path.display()))
        }
    }

    /// 2 for missing inputs, 3 for metric failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Missing { .. } => 2,
            Failure::Metric(_) => 3,
            _ => 1,
        }
    }
}
