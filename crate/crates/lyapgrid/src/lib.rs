//! File formats, reports, plots, parallel sweeps and the command-line
//! front-end around `lyapgrid-core`.

use std::path::{Path, PathBuf};

pub use lyapgrid_core as core;
use lyapgrid_core::network::PowerNetwork;

pub mod cli;
pub mod matpower;
pub mod native;
pub mod plot;
pub mod report;
pub mod sidecar;
pub mod sweep;

pub use matpower::{parse_matpower, write_matpower};
pub use native::{parse_network_json, write_network_json};
pub use sidecar::MachineSidecar;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema `{0}`")]
    Schema(String),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Network(#[from] lyapgrid_core::Error),
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `case9.m` pairs with `case9.machines.json` in the same directory.
pub fn default_sidecar_path(case: &Path) -> PathBuf {
    let stem = case.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    case.with_file_name(format!("{stem}.machines.json"))
}

/// Loads a `.m` or `.json` case. MATPOWER cases take machine constants from
/// `sidecar`, or from the default sidecar path when that file exists.
pub fn load_case(path: &Path, sidecar: Option<&Path>) -> Result<PowerNetwork, LoadError> {
    let text = read(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        return parse_network_json(&text);
    }
    let side_path = match sidecar {
        Some(p) => Some(p.to_path_buf()),
        None => Some(default_sidecar_path(path)).filter(|p| p.exists()),
    };
    let side = match side_path {
        Some(p) => Some(MachineSidecar::from_json(&read(&p)?)?),
        None => None,
    };
    parse_matpower(&text, side.as_ref())
}

/// Directory of the bundled case files.
pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
