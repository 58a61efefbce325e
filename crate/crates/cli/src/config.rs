//! Run configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsnet_core::fewshot::Rule;
use tsnet_core::imgproc::PreprocessConfig;
use tsnet_core::training::TrainConfig;

/// A configuration problem; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Encoder branches in concatenation order. Empty means one toy CNN.
    pub branches: Vec<BranchDecl>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    pub support_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Base directory for manifest `path` entries; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    pub validation_triplets: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Class order; inferred from the manifest when absent.
    pub classes: Option<Vec<String>>,
    pub train_triplets: usize,
    pub val_triplets: usize,
    pub same_patient_positive: bool,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub folds: usize,
    pub patient_aware: bool,
    pub rule: Rule,
    pub normalize_embeddings: bool,
    pub eval_batch: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: None,
            train_triplets: 600,
            val_triplets: 150,
            same_patient_positive: false,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            folds: 10,
            patient_aware: true,
            rule: Rule::Nearest,
            normalize_embeddings: false,
            eval_batch: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchDecl {
    ToyCnn {
        name: Option<String>,
        #[serde(default)]
        frozen_backbone: bool,
    },
    ExternalEmbedding {
        name: Option<String>,
        path: PathBuf,
        feature_width: Option<usize>,
    },
}

impl RunConfig {
    /// Parses by extension (`.json`, otherwise TOML) and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.manifest,
            &mut p.validation_manifest,
            &mut p.support_manifest,
            &mut p.test_manifest,
            &mut p.image_root,
            &mut p.output_dir,
            &mut p.checkpoint,
            &mut p.triplets,
            &mut p.validation_triplets,
        ] {
            fix(slot);
        }
        for b in &mut self.branches {
            if let BranchDecl::ExternalEmbedding { path, .. } = b {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let wrap = |section: &str, r: tsnet_core::Result<()>| {
            r.map_err(|e| config_error(format!("[{section}] {e}")))
        };
        wrap("preprocess", self.preprocess.validate())?;
        wrap("train", self.train.validate())?;
        let d = &self.data;
        let fraction = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(config_error(format!("[data] {name} must lie in (0, 1), got {v}")))
            }
        };
        fraction("validation_fraction", d.validation_fraction)?;
        fraction("test_fraction", d.test_fraction)?;
        if d.folds < 2 {
            return Err(config_error("[data] folds must be >= 2"));
        }
        if d.train_triplets == 0 || d.val_triplets == 0 {
            return Err(config_error("[data] train_triplets and val_triplets must be >= 1"));
        }
        if d.eval_batch == 0 {
            return Err(config_error("[data] eval_batch must be >= 1"));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if let BranchDecl::ExternalEmbedding { feature_width: Some(0), .. } = b {
                return Err(config_error(format!("[[branches]] entry {i}: feature_width must be positive")));
            }
        }
        Ok(())
    }

    pub fn branches_or_default(&self) -> Vec<BranchDecl> {
        if self.branches.is_empty() {
            vec![BranchDecl::ToyCnn {
                name: None,
                frozen_backbone: false,
            }]
        } else {
            self.branches.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_branches() {
        let text = r#"
            seed = 9
            [paths]
            manifest = "m.csv"
            [train]
            learning_rate = 0.001
            [train.loss]
            margin = 0.5
            [[branches]]
            kind = "toy_cnn"
            [[branches]]
            kind = "external_embedding"
            path = "/abs/f.emb"
            feature_width = 2048
        "#;
        let mut cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.paths.manifest.as_deref(), Some(Path::new("/base/m.csv")));
        assert_eq!(cfg.train.loss.margin, 0.5);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.branches.len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = toml::from_str::<RunConfig>("[train]\nlr = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_section() {
        let mut cfg = RunConfig::default();
        cfg.train.plateau_factor = 2.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("[train] "));
    }
}
