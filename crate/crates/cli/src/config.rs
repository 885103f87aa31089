//! Resolved per-command configurations and the run manifest.
//!
//! Resolution order for every value: built-in default, then the `--config`
//! file, then the explicit flag. The fully resolved config is embedded in
//! the run's `manifest.json`; feeding that manifest back through
//! `--config` reproduces the run byte-for-byte (the output directory and
//! `--threads` are deliberately not part of it).

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use mexdet_core::dataset::Split;
use mexdet_core::detect::DetectConfig;
use mexdet_core::exhaustive::ExhaustiveConfig;
use mexdet_core::network::{NetConfig, TrainConfig};
use mexdet_core::router::{ExpertId, RoutingPolicy};

use crate::errors::{CliError, CliResult};

/// Envelope written to `<out>/manifest.json` by every command.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest<T> {
    pub command: String,
    pub config: T,
}

/// Pretty-printed JSON with a trailing newline, matching the dataset
/// writer's style.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    f.write_all(b"\n")
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn write_manifest<T: Serialize>(out_dir: &Path, command: &str, config: &T) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
    };
    write_json_pretty(&out_dir.join("manifest.json"), &manifest)
}

/// Read a `--config` file for `command`. Accepts either a bare config
/// object or a manifest (`{"command": ..., "config": {...}}`); a manifest
/// written by a different command is a usage error.
pub fn load_config_file<T: DeserializeOwned>(path: &Path, command: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let config_value = match value {
        serde_json::Value::Object(ref map) if map.contains_key("command") => {
            let found = map.get("command").and_then(|v| v.as_str()).unwrap_or("");
            if found != command {
                return Err(CliError::Usage(format!(
                    "{}: manifest is for `{found}`, not `{command}`",
                    path.display()
                )));
            }
            map.get("config")
                .cloned()
                .ok_or_else(|| {
                    CliError::Data(format!("{}: manifest has no `config`", path.display()))
                })?
        }
        other => other,
    };

    serde_json::from_value(config_value)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Optionally load the `--config` file, otherwise fall back to defaults.
pub fn base_config<T: DeserializeOwned + Default>(
    config_path: Option<&Path>,
    command: &str,
) -> CliResult<T> {
    match config_path {
        Some(p) => load_config_file(p, command),
        None => Ok(T::default()),
    }
}

fn missing(what: &str) -> CliError {
    CliError::Usage(format!(
        "missing {what}: pass the flag or provide it via --config"
    ))
}

/// A `PathBuf` is "unset" when empty; required paths are checked here so a
/// config file can supply them.
pub fn require_path(p: &Path, what: &str) -> CliResult<()> {
    if p.as_os_str().is_empty() {
        return Err(missing(what));
    }
    Ok(())
}

pub fn parse_split(s: &str) -> CliResult<Split> {
    s.parse::<Split>().map_err(CliError::Usage)
}

pub fn parse_forced_expert(s: &str) -> CliResult<Option<ExpertId>> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(None),
        "h" => Ok(Some(ExpertId::H)),
        "s" => Ok(Some(ExpertId::S)),
        "v" => Ok(Some(ExpertId::V)),
        other => Err(CliError::Usage(format!(
            "unknown expert `{other}` (expected h, s, v, or none)"
        ))),
    }
}

/// How `gen-rois` produces regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    /// Sparse stand-in for an external objectness proposer.
    Simulate,
    /// Dense multi-scale sliding grid.
    Exhaustive,
    /// Union of the two.
    Merge,
}

impl GenMode {
    pub fn parse(s: &str) -> CliResult<GenMode> {
        match s {
            "simulate" => Ok(GenMode::Simulate),
            "exhaustive" => Ok(GenMode::Exhaustive),
            "merge" => Ok(GenMode::Merge),
            other => Err(CliError::Usage(format!(
                "unknown mode `{other}` (expected simulate, exhaustive, or merge)"
            ))),
        }
    }

    pub fn emits_dense(self) -> bool {
        matches!(self, GenMode::Exhaustive | GenMode::Merge)
    }
}

/// Which proposal files `train` consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoisChoice {
    Sparse,
    Dense,
    Combined,
}

impl RoisChoice {
    pub fn parse(s: &str) -> CliResult<RoisChoice> {
        match s {
            "sparse" => Ok(RoisChoice::Sparse),
            "dense" => Ok(RoisChoice::Dense),
            "combined" => Ok(RoisChoice::Combined),
            other => Err(CliError::Usage(format!(
                "unknown RoI choice `{other}` (expected sparse, dense, or combined)"
            ))),
        }
    }

    pub fn needs_sparse(self) -> bool {
        matches!(self, RoisChoice::Sparse | RoisChoice::Combined)
    }

    pub fn needs_dense(self) -> bool {
        matches!(self, RoisChoice::Dense | RoisChoice::Combined)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenRoisConfig {
    pub dataset: PathBuf,
    pub split: Split,
    pub mode: GenMode,
    pub exhaustive: ExhaustiveConfig,
    pub jitter: f64,
    pub random_count: usize,
    pub seed: u64,
    pub allow_dense_test: bool,
}

impl Default for GenRoisConfig {
    fn default() -> Self {
        GenRoisConfig {
            dataset: PathBuf::new(),
            split: Split::Train,
            mode: GenMode::Simulate,
            exhaustive: ExhaustiveConfig::default(),
            jitter: 0.2,
            random_count: 20,
            seed: 0,
            allow_dense_test: false,
        }
    }
}

impl GenRoisConfig {
    pub fn validate(&self) -> CliResult<()> {
        require_path(&self.dataset, "--dataset")?;
        if self.mode.emits_dense() && self.split == Split::Test && !self.allow_dense_test {
            return Err(CliError::Usage(
                "dense (exhaustive) regions are a training-time source; \
                 refusing to generate them for the test split without \
                 --allow-dense-test"
                    .into(),
            ));
        }
        self.exhaustive.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset: PathBuf,
    pub rois: RoisChoice,
    pub sparse_rois: Option<PathBuf>,
    pub dense_rois: Option<PathBuf>,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        TrainCmdConfig {
            dataset: PathBuf::new(),
            rois: RoisChoice::Sparse,
            sparse_rois: None,
            dense_rois: None,
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl TrainCmdConfig {
    pub fn validate(&self) -> CliResult<()> {
        require_path(&self.dataset, "--dataset")?;
        if self.rois.needs_sparse() && self.sparse_rois.is_none() {
            return Err(missing("--sparse-rois (required by this --rois choice)"));
        }
        if self.rois.needs_dense() && self.dense_rois.is_none() {
            return Err(missing("--dense-rois (required by this --rois choice)"));
        }
        self.net.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn set_experts(&mut self, n: u8) -> CliResult<()> {
        self.net.routing = match n {
            1 => RoutingPolicy::SingleExpert,
            3 => RoutingPolicy::ByShape,
            other => {
                return Err(CliError::Usage(format!(
                    "--experts must be 1 or 3, got {other}"
                )))
            }
        };
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectCmdConfig {
    pub dataset: PathBuf,
    pub split: Split,
    pub proposals: PathBuf,
    pub weights: PathBuf,
    pub detect: DetectConfig,
}

impl Default for DetectCmdConfig {
    fn default() -> Self {
        DetectCmdConfig {
            dataset: PathBuf::new(),
            split: Split::Test,
            proposals: PathBuf::new(),
            weights: PathBuf::new(),
            detect: DetectConfig::default(),
        }
    }
}

impl DetectCmdConfig {
    pub fn validate(&self) -> CliResult<()> {
        require_path(&self.dataset, "--dataset")?;
        require_path(&self.proposals, "--proposals")?;
        require_path(&self.weights, "--weights")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub dataset: PathBuf,
    pub split: Split,
    pub detections: PathBuf,
    pub iou: f64,
    pub coco: bool,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        EvalCmdConfig {
            dataset: PathBuf::new(),
            split: Split::Test,
            detections: PathBuf::new(),
            iou: 0.5,
            coco: false,
        }
    }
}

impl EvalCmdConfig {
    pub fn validate(&self) -> CliResult<()> {
        require_path(&self.dataset, "--dataset")?;
        require_path(&self.detections, "--detections")?;
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(CliError::Usage(format!(
                "--iou must be in (0, 1], got {}",
                self.iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeCmdConfig {
    pub dataset: PathBuf,
    pub split: Split,
    pub proposals: PathBuf,
    pub weights: PathBuf,
    pub detect: DetectConfig,
    pub iou: f64,
    pub bins: usize,
}

impl Default for AnalyzeCmdConfig {
    fn default() -> Self {
        AnalyzeCmdConfig {
            dataset: PathBuf::new(),
            split: Split::Test,
            proposals: PathBuf::new(),
            weights: PathBuf::new(),
            detect: DetectConfig::default(),
            iou: 0.5,
            bins: 10,
        }
    }
}

impl AnalyzeCmdConfig {
    pub fn validate(&self) -> CliResult<()> {
        require_path(&self.dataset, "--dataset")?;
        require_path(&self.proposals, "--proposals")?;
        require_path(&self.weights, "--weights")?;
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(CliError::Usage(format!(
                "--iou must be in (0, 1], got {}",
                self.iou
            )));
        }
        if self.bins == 0 {
            return Err(CliError::Usage("--bins must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenRoisConfig {
            dataset: PathBuf::from("/data/ds"),
            mode: GenMode::Merge,
            seed: 11,
            ..Default::default()
        };
        write_manifest(dir.path(), "gen-rois", &cfg).unwrap();
        let loaded: GenRoisConfig =
            load_config_file(&dir.path().join("manifest.json"), "gen-rois").unwrap();
        assert_eq!(loaded, cfg);
    }

    #[test]
    fn manifest_for_other_command_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "train", &TrainCmdConfig::default()).unwrap();
        let err =
            load_config_file::<GenRoisConfig>(&dir.path().join("manifest.json"), "gen-rois")
                .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("train"));
    }

    #[test]
    fn bare_partial_config_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"dataset": "/d", "mode": "exhaustive"}"#).unwrap();
        let cfg: GenRoisConfig = load_config_file(&path, "gen-rois").unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("/d"));
        assert_eq!(cfg.mode, GenMode::Exhaustive);
        assert_eq!(cfg.jitter, 0.2);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"dataset": "/d", "jitterr": 0.3}"#).unwrap();
        let err = load_config_file::<GenRoisConfig>(&path, "gen-rois").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn dense_on_test_requires_override() {
        let mut cfg = GenRoisConfig {
            dataset: PathBuf::from("/d"),
            split: Split::Test,
            mode: GenMode::Exhaustive,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("training-time"));
        cfg.allow_dense_test = true;
        cfg.validate().unwrap();
        cfg.allow_dense_test = false;
        cfg.mode = GenMode::Simulate;
        cfg.validate().unwrap();
    }

    #[test]
    fn train_config_requires_matching_paths() {
        let mut cfg = TrainCmdConfig {
            dataset: PathBuf::from("/d"),
            rois: RoisChoice::Combined,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.sparse_rois = Some(PathBuf::from("/s"));
        assert!(cfg.validate().is_err());
        cfg.dense_rois = Some(PathBuf::from("/x"));
        cfg.validate().unwrap();
    }

    #[test]
    fn experts_flag_maps_to_routing() {
        let mut cfg = TrainCmdConfig::default();
        cfg.set_experts(1).unwrap();
        assert_eq!(cfg.net.routing, RoutingPolicy::SingleExpert);
        cfg.set_experts(3).unwrap();
        assert_eq!(cfg.net.routing, RoutingPolicy::ByShape);
        assert_eq!(cfg.set_experts(2).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn forced_expert_parses() {
        assert_eq!(parse_forced_expert("none").unwrap(), None);
        assert_eq!(parse_forced_expert("H").unwrap(), Some(ExpertId::H));
        assert_eq!(parse_forced_expert("v").unwrap(), Some(ExpertId::V));
        assert!(parse_forced_expert("q").is_err());
    }
}
