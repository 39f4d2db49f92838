//! Merged TOML run configuration. One static file plus flag overrides;
//! flags win. All randomness flows from the single `seed` key and every
//! command records the resolved config hash in a manifest for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use epidiff::interventions::PolicySet;
use epidiff::population::PopulationSpec;
use epidiff::{CalibrationConfig, DiseaseParams, EnsembleConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub agents: Option<PathBuf>,
    pub venues: Option<PathBuf>,
    pub observed: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig { out_dir: PathBuf::from("out"), agents: None, venues: None, observed: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon_days: usize,
    /// Week label of day 0 in CSV outputs.
    pub start_week: i64,
    pub population: Option<PopulationSpec>,
    pub disease: DiseaseParams,
    pub policies: PolicySet,
    pub calibration: CalibrationConfig,
    pub ensemble: EnsembleConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            horizon_days: 182,
            start_week: 0,
            population: None,
            disease: DiseaseParams::default(),
            policies: PolicySet::default(),
            calibration: CalibrationConfig::default(),
            ensemble: EnsembleConfig::default(),
            io: IoConfig::default(),
        }
    }
}

pub fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(anyhow::anyhow!("path does not exist: {}", path.display())))
    }
}

/// Parses the config file; unknown keys are rejected.
pub fn load_run_config(path: &Path) -> Result<(RunConfig, String), CliError> {
    require_exists(path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(anyhow::anyhow!("{}: {e}", path.display())))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Data(anyhow::anyhow!("{}: {e}", path.display())))?;
    cfg.disease.validate().map_err(anyhow::Error::from)?;
    cfg.policies.validate().map_err(|m| CliError::Data(anyhow::anyhow!(m)))?;
    let raw_hash = hex(&Sha256::digest(text.as_bytes()));
    Ok((cfg, raw_hash))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the fully resolved configuration (after flag overrides).
pub fn config_hash(cfg: &RunConfig, command: &str) -> Result<String, CliError> {
    let resolved = toml::to_string(cfg)
        .map_err(|e| CliError::Data(anyhow::anyhow!("cannot serialize config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(b"\n");
    hasher.update(resolved.as_bytes());
    Ok(hex(&hasher.finalize()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    outputs: Vec<String>,
}

pub fn write_manifest(out_dir: &Path, command: &str, hash: &str, outputs: &[&Path]) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        config_hash: hash,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(anyhow::anyhow!("manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), text)
        .map_err(|e| CliError::Data(anyhow::anyhow!("manifest: {e}")))?;
    Ok(())
}
