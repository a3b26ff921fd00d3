//! Machine-readable run reports.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Printed as one JSON object on stdout after every `distance`, `plan` or
/// `map` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub method: &'static str,
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_ms: f64,
    pub seed: u64,
    pub config: ConfigEcho,
    pub inputs: Inputs,
    pub output: Option<FileDigest>,
    pub details: Details,
}

/// Effective solver settings; `null` where the method has no such knob.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConfigEcho {
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub rank: Option<usize>,
    pub slices: Option<usize>,
    pub directions: Option<&'static str>,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub source: InputDigest,
    pub target: InputDigest,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub points: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Method-specific diagnostics; `null` where not applicable.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Details {
    /// `<P, C>` for plan methods, the mean squared displacement for maps.
    pub transport_cost: f64,
    pub regularized_objective: Option<f64>,
    pub marginal_violation: Option<f64>,
    pub floored_sums: Option<usize>,
    pub stop_reason: Option<&'static str>,
    /// Plan mass left out of the CSV by the `1e-12` threshold.
    pub dropped_mass: Option<f64>,
    pub clamped_entries: Option<usize>,
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_string() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn file_digest_matches_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, b"x1\n1\n").unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_bytes(b"x1\n1\n"));
    }

    #[test]
    fn non_finite_values_serialize_as_null() {
        let d = Details { transport_cost: f64::NAN, ..Details::default() };
        let v = serde_json::to_value(&d).unwrap();
        assert!(v["transport_cost"].is_null());
    }
}
