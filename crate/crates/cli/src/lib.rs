//! Standard-library companion to `mdt-core`: dataset generation and file
//! formats, the run pipeline (load, train, evaluate, visualize) and the
//! building blocks behind the `mdt` command-line tool.

pub mod augment;
pub mod config;
pub mod datagen;
pub mod manifest;
pub mod mimg;
pub mod pipeline;
pub mod runs;
pub mod util;
pub mod viz;

use std::fmt;

/// An error in how the tool was invoked (bad flag value, unknown config key,
/// unknown case id). The binary maps it to exit code 2; everything else that
/// fails maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

/// Shorthand for raising a usage error through `anyhow`.
pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}
