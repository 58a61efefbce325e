//! Shared plumbing: output directories, provenance records, image loading
//! and model construction.

use std::collections::{BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use tsnet_core::datamodel::{load_manifest, Manifest};
use tsnet_core::diffcore::{read_checkpoint, write_checkpoint};
use tsnet_core::ensemble::{build_external_branch, build_toy_encoder, load_emb1, sha256_hex, EnsembleModel};
use tsnet_core::imgproc::{load_grayscale, RasterImage};
use tsnet_core::rng::derive_seed;

use crate::config::{config_error, BranchDecl, RunConfig};

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// One command invocation writing into `out`.
pub struct Run {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    inputs: BTreeSet<PathBuf>,
    outputs: BTreeSet<PathBuf>,
    started: (SystemTime, Instant),
}

impl Run {
    pub fn new(command: &'static str, cfg: RunConfig, seed: u64, out: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            cfg,
            seed,
            out,
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
            started: (SystemTime::now(), Instant::now()),
        })
    }

    /// Module seed derived from the run seed.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<PathBuf> {
        if !path.exists() {
            return Err(config_error(format!("input {} does not exist", path.display())));
        }
        self.inputs.insert(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    /// Path under the output directory, recorded as an output.
    pub fn output(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        let p = self.out.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.insert(p.clone());
        Ok(p)
    }

    pub fn create(&mut self, name: &str) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
        let p = self.output(name)?;
        let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(std::io::BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_manifest(&mut self, path: &Path) -> anyhow::Result<Manifest> {
        let path = self.input(path)?;
        let classes = self.cfg.data.classes.clone();
        load_manifest(&path, classes.as_deref()).with_context(|| format!("reading manifest {}", path.display()))
    }

    fn has_toy_branch(&self) -> bool {
        self.cfg
            .branches_or_default()
            .iter()
            .any(|b| matches!(b, BranchDecl::ToyCnn { .. }))
    }

    /// Loads the images of every record when a branch needs pixels.
    pub fn load_images(&mut self, manifests: &[(&Path, &Manifest)], images: &mut HashMap<String, RasterImage>) -> anyhow::Result<()> {
        if !self.has_toy_branch() {
            return Ok(());
        }
        for (manifest_path, m) in manifests {
            let root = match &self.cfg.paths.image_root {
                Some(r) => r.clone(),
                None => manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            for r in m.records() {
                if images.contains_key(&r.id) {
                    continue;
                }
                let p = root.join(&r.path);
                let img = load_grayscale(&p).with_context(|| format!("loading image for `{}` from {}", r.id, p.display()))?;
                images.insert(r.id.clone(), img);
            }
        }
        Ok(())
    }

    /// Records the embedding files of external branches as inputs.
    pub fn branch_inputs(&mut self) -> anyhow::Result<()> {
        for decl in self.cfg.branches_or_default() {
            if let BranchDecl::ExternalEmbedding { path, .. } = decl {
                self.input(&path)?;
            }
        }
        Ok(())
    }

    /// Builds the configured architecture with seed-derived initialisation.
    pub fn build_model(&self, seed: u64) -> anyhow::Result<EnsembleModel<f32>> {
        let mut branches = Vec::new();
        for (i, decl) in self.cfg.branches_or_default().into_iter().enumerate() {
            let bseed = derive_seed(seed, &format!("branch{i}"));
            let branch = match decl {
                BranchDecl::ToyCnn { name, frozen_backbone } => {
                    let mut b = build_toy_encoder(bseed);
                    b.set_backbone_frozen(frozen_backbone);
                    b.with_name(name.unwrap_or_else(|| "toy_cnn".into()))
                }
                BranchDecl::ExternalEmbedding {
                    name,
                    path,
                    feature_width,
                } => {
                    let (table, sidecar) = load_emb1(&path).with_context(|| format!("reading embeddings {}", path.display()))?;
                    let width = feature_width.unwrap_or(table.dim());
                    if width != table.dim() {
                        return Err(config_error(format!(
                            "[[branches]] entry {i}: feature_width {width} but {} has width {}",
                            path.display(),
                            table.dim()
                        )));
                    }
                    let default_name = sidecar.map_or_else(|| format!("external{i}"), |s| s.backbone);
                    build_external_branch(width, Arc::new(table), bseed)?.with_name(name.unwrap_or(default_name))
                }
            };
            branches.push(branch);
        }
        Ok(EnsembleModel::new(branches, seed)?.with_normalization(self.cfg.data.normalize_embeddings))
    }

    pub fn model_seed(&self) -> u64 {
        self.seed_for("model")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.cfg
            .paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    /// Builds the architecture and loads trained parameters.
    pub fn load_trained_model(&mut self) -> anyhow::Result<EnsembleModel<f32>> {
        let path = self.checkpoint_path();
        let path = self.input(&path)?;
        self.branch_inputs()?;
        let mut model = self.build_model(self.model_seed())?;
        let file = std::fs::File::open(&path)?;
        let entries = read_checkpoint(std::io::BufReader::new(file))?;
        model
            .params_mut()
            .load_checkpoint(&entries)
            .with_context(|| format!("checkpoint {} does not match the configured branches", path.display()))?;
        Ok(model)
    }

    pub fn save_model(&mut self, model: &EnsembleModel<f32>, name: &str) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        write_checkpoint(&model.params().to_checkpoint(), &mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `run_manifest.json` (inputs, config hash, seed, outputs) and
    /// appends wall-clock times to `run.log`.
    pub fn finish(self) -> anyhow::Result<()> {
        let config_json = serde_json::to_vec(&self.cfg)?;
        let mut inputs = Vec::new();
        for p in &self.inputs {
            inputs.extend(digests(p)?);
        }
        let mut outputs = Vec::new();
        for p in &self.outputs {
            outputs.extend(digests(p)?);
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config_sha256: sha256_hex(&config_json),
            config: &self.cfg,
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.out.join("run_manifest.json"), text)?;

        let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let mut log = OpenOptions::new().create(true).append(true).open(self.out.join("run.log"))?;
        writeln!(
            log,
            "command={} started_unix={:.3} finished_unix={:.3} elapsed_seconds={:.3}",
            self.command,
            unix(self.started.0),
            unix(SystemTime::now()),
            self.started.1.elapsed().as_secs_f64()
        )?;
        Ok(())
    }
}

/// Digest of a file, or of every file below a directory in path order.
fn digests(p: &Path) -> anyhow::Result<Vec<FileDigest>> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        let mut out = Vec::new();
        for e in entries {
            out.extend(digests(&e)?);
        }
        Ok(out)
    } else {
        Ok(vec![FileDigest {
            path: p.display().to_string(),
            sha256: sha256_hex(&std::fs::read(p)?),
        }])
    }
}
