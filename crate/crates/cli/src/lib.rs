//! File formats, configuration, logging and plotting around `xspecies-core`.
//!
//! * [`container`]: the `UMO4` motion container and split manifest.
//! * [`checkpoint`]: the unified `XSCK` checkpoint.
//! * [`sidecar`]: precomputed embeddings usable in place of the hash encoders.
//! * [`run`]: run directories, configuration loading and JSON-lines logs.
//! * [`plot`]: SVG trajectory and seam plots.
//! * [`commands`]: the command implementations behind the `xspecies` binary.

pub mod binio;
pub mod checkpoint;
pub mod commands;
pub mod container;
pub mod error;
pub mod motion_file;
pub mod plot;
pub mod run;
pub mod sidecar;

pub use error::{CliError, CliResult, FormatError};
