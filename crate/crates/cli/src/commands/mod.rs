//! Subcommand implementations and shared output plumbing.

pub mod oracle;
pub mod probes;
pub mod regularize;
pub mod solve;
pub mod verify;

use crate::Failure;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Provenance record written next to every solve's outputs. Contains no
/// timestamps or host details, so identical inputs produce identical
/// manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub dim: usize,
    pub steps: usize,
    pub n_flows: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_increment: f64,
    pub max_std_err: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out.display())))
}
