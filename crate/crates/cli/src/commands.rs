use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tsnet_core::datamodel::{
    kfold, patient_aware_split, read_triplets, sample_triplets, write_manifest, write_triplets, Manifest, Triplet,
};
use tsnet_core::ensemble::{load_emb1, sha256_hex, BranchKind, ImageSource, EMBED_DIM};
use tsnet_core::fewshot::{
    batch_evaluate, build_support_set, classify_embedding, report_for, write_predictions, LabeledPrediction, Prediction,
};
use tsnet_core::imgproc::{load_grayscale, preprocess, save_grayscale, RasterImage};
use tsnet_core::metrics::{render_report, MetricsReport, ReportFormat};
use tsnet_core::training::{cross_validate, train_triplet, CrossValConfig, TrainConfig};

use crate::config::{config_error, RunConfig};
use crate::run::Run;
use crate::{Command, Format, Outcome};

pub fn dispatch(cmd: Command, cfg: RunConfig, out: PathBuf) -> anyhow::Result<Outcome> {
    let seed = cfg.seed;
    match cmd {
        Command::Preprocess { input } => preprocess_dir(Run::new("preprocess", cfg, seed, out)?, &input),
        Command::Split {
            manifest,
            test_fraction,
            folds,
        } => split(Run::new("split", cfg, seed, out)?, manifest, test_fraction, folds),
        Command::Triplets {
            manifest,
            count,
            same_patient_positive,
        } => triplets(Run::new("triplets", cfg, seed, out)?, manifest, count, same_patient_positive),
        Command::Train {
            manifest,
            learning_rate,
            epochs,
        } => {
            let mut cfg = cfg;
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            train(Run::new("train", cfg, seed, out)?, manifest)
        }
        Command::Evaluate {
            predictions,
            classes,
            format,
        } => {
            let run = Run::new("evaluate", cfg, seed, out)?;
            match predictions {
                Some(p) => evaluate_predictions(run, &p, classes, format),
                None => evaluate_model(run, format),
            }
        }
        Command::Predict { manifest, images } => predict(Run::new("predict", cfg, seed, out)?, manifest, images),
        Command::Crossval { manifest, folds } => {
            let mut cfg = cfg;
            if let Some(k) = folds {
                cfg.data.folds = k;
            }
            cfg.validate()?;
            crossval(Run::new("crossval", cfg, seed, out)?, manifest)
        }
        Command::Params => params(cfg, seed),
        Command::VerifyEmb { file } => verify_emb(&file),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| config_error(format!("no {what} given (flag or [paths] entry)")))
}

fn preprocess_dir(mut run: Run, input: &Path) -> anyhow::Result<Outcome> {
    let input = run.input(input)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();

    let mut log = csv::Writer::from_writer(run.create("preprocess_log.csv")?);
    log.write_record(["id", "crop_x", "crop_y", "crop_width", "crop_height", "alpha", "beta", "warnings"])?;
    let mut skipped = csv::Writer::from_writer(run.create("preprocess_skipped.csv")?);
    skipped.write_record(["id", "error"])?;
    let mut n_skipped = 0;
    for path in &files {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let result = load_grayscale(path).and_then(|img| preprocess(&img, &run.cfg.preprocess));
        match result {
            Ok(p) => {
                save_grayscale(&p.image, run.output(&format!("images/{id}.png"))?)?;
                let warnings: Vec<String> = p.warnings.iter().map(ToString::to_string).collect();
                log.write_record([
                    id,
                    p.crop.x.to_string(),
                    p.crop.y.to_string(),
                    p.crop.width.to_string(),
                    p.crop.height.to_string(),
                    p.alpha.to_string(),
                    p.beta.to_string(),
                    warnings.join(";"),
                ])?;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.write_record([id, e.to_string()])?;
                n_skipped += 1;
            }
        }
    }
    log.flush()?;
    skipped.flush()?;
    drop((log, skipped));
    run.finish()?;
    Ok(if n_skipped > 0 { Outcome::Partial(n_skipped) } else { Outcome::Done })
}

fn save_manifest(run: &mut Run, name: &str, m: &Manifest) -> anyhow::Result<()> {
    let w = run.create(name)?;
    write_manifest(m, w)?;
    Ok(())
}

fn split(mut run: Run, manifest: Option<PathBuf>, test_fraction: Option<f64>, folds: Option<usize>) -> anyhow::Result<Outcome> {
    let path = required(manifest, &run.cfg.paths.manifest, "manifest")?;
    let m = run.load_manifest(&path)?;
    let fraction = test_fraction.unwrap_or(run.cfg.data.test_fraction);
    let (train_m, test_m) = patient_aware_split(&m, fraction, run.seed_for("split"))?;
    save_manifest(&mut run, "train.csv", &train_m)?;
    save_manifest(&mut run, "test.csv", &test_m)?;
    if let Some(k) = folds {
        for (i, f) in kfold(&train_m, k, run.seed_for("kfold"), run.cfg.data.patient_aware)?
            .iter()
            .enumerate()
        {
            save_manifest(&mut run, &format!("folds/fold_{i}_train.csv"), &f.train)?;
            save_manifest(&mut run, &format!("folds/fold_{i}_validation.csv"), &f.validation)?;
        }
    }
    run.finish()?;
    Ok(Outcome::Done)
}

fn triplets(mut run: Run, manifest: Option<PathBuf>, count: Option<usize>, same_patient: bool) -> anyhow::Result<Outcome> {
    let path = required(manifest, &run.cfg.paths.manifest, "manifest")?;
    let m = run.load_manifest(&path)?;
    let n = count.unwrap_or(run.cfg.data.train_triplets);
    let same = same_patient || run.cfg.data.same_patient_positive;
    let t = sample_triplets(&m, n, run.seed_for("triplets"), same)?;
    write_triplets(&t, run.create("triplets.csv")?)?;
    run.finish()?;
    Ok(Outcome::Done)
}

fn load_or_sample(run: &mut Run, file: Option<PathBuf>, m: &Manifest, n: usize, label: &str) -> anyhow::Result<Vec<Triplet>> {
    let t = match file {
        Some(p) => {
            let p = run.input(&p)?;
            read_triplets(std::fs::File::open(&p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => sample_triplets(m, n, run.seed_for(label), run.cfg.data.same_patient_positive)?,
    };
    for (i, tr) in t.iter().enumerate() {
        tr.validate(m).with_context(|| format!("{label} triplet {i}"))?;
    }
    Ok(t)
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    train_triplets: usize,
    validation_triplets: usize,
    initial_train_loss: f64,
    initial_val_loss: f64,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    best_epoch: usize,
    epochs_run: usize,
    stopped_early: bool,
    learning_rates: Vec<f64>,
    parameters_total: usize,
    parameters_trainable: usize,
}

fn train(mut run: Run, manifest: Option<PathBuf>) -> anyhow::Result<Outcome> {
    let path = required(manifest, &run.cfg.paths.manifest, "manifest")?;
    let full = run.load_manifest(&path)?;
    let (train_m, val_m, val_path) = match run.cfg.paths.validation_manifest.clone() {
        Some(vp) => (full, run.load_manifest(&vp)?, vp),
        None => {
            let (t, v) = patient_aware_split(&full, run.cfg.data.validation_fraction, run.seed_for("validation"))?;
            (t, v, path.clone())
        }
    };
    let mut images = HashMap::new();
    run.load_images(&[(&path, &train_m), (&val_path, &val_m)], &mut images)?;

    let n_train = run.cfg.data.train_triplets;
    let n_val = run.cfg.data.val_triplets;
    let (train_file, val_file) = (run.cfg.paths.triplets.clone(), run.cfg.paths.validation_triplets.clone());
    let train_t = load_or_sample(&mut run, train_file, &train_m, n_train, "triplets")?;
    let val_t = load_or_sample(&mut run, val_file, &val_m, n_val, "validation_triplets")?;
    write_triplets(&train_t, run.create("train_triplets.csv")?)?;
    write_triplets(&val_t, run.create("validation_triplets.csv")?)?;

    run.branch_inputs()?;
    let mut model = run.build_model(run.model_seed())?;
    let tcfg = TrainConfig {
        seed: run.seed_for("train"),
        ..run.cfg.train.clone()
    };
    let outcome = train_triplet(&mut model, &train_t, &val_t, &images, &tcfg)?;
    run.save_model(&model, "model.ckpt")?;
    let h = &outcome.history;
    h.write_csv(run.create("history.csv")?)?;
    let (total, trainable) = model.count_parameters();
    let summary = TrainSummary {
        seed: run.seed,
        train_triplets: train_t.len(),
        validation_triplets: val_t.len(),
        initial_train_loss: h.initial_train_loss,
        initial_val_loss: h.initial_val_loss,
        final_train_loss: h.epochs.last().map(|e| e.train_loss),
        final_val_loss: h.epochs.last().map(|e| e.val_loss),
        best_epoch: h.best_epoch,
        epochs_run: h.epochs.len(),
        stopped_early: h.stopped_early,
        learning_rates: h.epochs.iter().map(|e| e.lr).collect(),
        parameters_total: total,
        parameters_trainable: trainable,
    };
    run.write_json("train_summary.json", &summary)?;
    run.finish()?;
    Ok(Outcome::Done)
}

fn write_report(run: &mut Run, report: &MetricsReport, format: Format) -> anyhow::Result<()> {
    let formats: &[ReportFormat] = match format {
        Format::Json => &[ReportFormat::Json],
        Format::Csv => &[ReportFormat::Csv],
        Format::Both => &[ReportFormat::Json, ReportFormat::Csv],
    };
    let dir = run.out.clone();
    for f in formats {
        for p in render_report(report, *f, &dir)? {
            let name = p.strip_prefix(&dir).unwrap_or(&p).to_string_lossy().to_string();
            run.output(&name)?;
        }
    }
    Ok(())
}

/// Support set and model for evaluation and prediction.
struct Inference {
    model: tsnet_core::ensemble::EnsembleModel<f32>,
    support: tsnet_core::fewshot::SupportSet,
    images: HashMap<String, RasterImage>,
}

fn inference(run: &mut Run) -> anyhow::Result<Inference> {
    let support_path = required(None, &run.cfg.paths.support_manifest, "support manifest")?;
    let support_m = run.load_manifest(&support_path)?;
    let model = run.load_trained_model()?;
    let mut images = HashMap::new();
    run.load_images(&[(&support_path, &support_m)], &mut images)?;
    let support = build_support_set(&model, &support_m, &images, run.cfg.data.eval_batch)?;
    Ok(Inference { model, support, images })
}

fn evaluate_model(mut run: Run, format: Format) -> anyhow::Result<Outcome> {
    let mut inf = inference(&mut run)?;
    let test_path = required(None, &run.cfg.paths.test_manifest, "test manifest")?;
    let test_m = run.load_manifest(&test_path)?;
    run.load_images(&[(&test_path, &test_m)], &mut inf.images)?;
    let (preds, report) = batch_evaluate(&inf.model, &test_m, &inf.images, &inf.support, run.cfg.data.rule, run.cfg.data.eval_batch)?;
    write_predictions(&preds, test_m.classes(), run.create("predictions.csv")?)?;
    write_report(&mut run, &report, format)?;
    run.finish()?;
    Ok(Outcome::Done)
}

/// Scores an existing predictions CSV.
fn evaluate_predictions(mut run: Run, path: &Path, classes: Option<Vec<String>>, format: Format) -> anyhow::Result<Outcome> {
    let path = run.input(path)?;
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("{}: missing column `{name}`", path.display()))
    };
    let (id_col, true_col, pred_col, sim_col, near_col) =
        (col("sample_id")?, col("true_label")?, col("pred_label")?, col("similarity")?, col("nearest_support_id")?);
    let score_cols: Vec<usize> = (0..)
        .map_while(|c| header.iter().position(|h| h == format!("score_{c}")))
        .collect();
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;

    let classes = match classes.or_else(|| run.cfg.data.classes.clone()) {
        Some(c) => c,
        None => {
            let mut seen: Vec<String> = Vec::new();
            for r in &rows {
                for c in [true_col, pred_col] {
                    if !seen.iter().any(|s| s == &r[c]) {
                        seen.push(r[c].to_string());
                    }
                }
            }
            seen
        }
    };
    if !score_cols.is_empty() && score_cols.len() != classes.len() {
        return Err(config_error(format!(
            "{} score columns for {} classes",
            score_cols.len(),
            classes.len()
        )));
    }
    let index = |name: &str, line: usize| {
        classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| anyhow::anyhow!("{} line {line}: unknown class `{name}`", path.display()))
    };
    let mut preds = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let line = i + 2;
        let num = |c: usize| -> anyhow::Result<f64> {
            r[c].parse::<f64>()
                .with_context(|| format!("{} line {line}: `{}` is not a number", path.display(), &r[c]))
        };
        preds.push(LabeledPrediction {
            sample_id: r[id_col].to_string(),
            true_label: Some(index(&r[true_col], line)?),
            prediction: Prediction {
                label: index(&r[pred_col], line)?,
                similarity: if r[sim_col].is_empty() { 0.0 } else { num(sim_col)? },
                nearest_support_id: r[near_col].to_string(),
                scores: score_cols.iter().map(|&c| num(c)).collect::<anyhow::Result<_>>()?,
            },
        });
    }
    let report = if score_cols.is_empty() {
        let truth: Vec<usize> = preds.iter().filter_map(|p| p.true_label).collect();
        let pred: Vec<usize> = preds.iter().map(|p| p.prediction.label).collect();
        tsnet_core::metrics::build_report(&classes, &truth, &pred, None)?
    } else {
        report_for(&preds, &classes)?
    };
    write_report(&mut run, &report, format)?;
    run.finish()?;
    Ok(Outcome::Done)
}

fn predict(mut run: Run, manifest: Option<PathBuf>, image_files: Vec<PathBuf>) -> anyhow::Result<Outcome> {
    if manifest.is_none() && image_files.is_empty() {
        return Err(config_error("predict needs --manifest or at least one --image"));
    }
    let mut inf = inference(&mut run)?;
    let mut queries: Vec<(String, Option<usize>)> = Vec::new();
    if let Some(mp) = manifest {
        let m = run.load_manifest(&mp)?;
        if m.classes() != inf.support.classes() {
            return Err(config_error("query manifest classes differ from the support manifest"));
        }
        run.load_images(&[(&mp, &m)], &mut inf.images)?;
        queries.extend(m.records().iter().map(|r| (r.id.clone(), Some(r.label))));
    }
    for f in &image_files {
        let f = run.input(f)?;
        let id = f.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let img = load_grayscale(&f).with_context(|| format!("loading {}", f.display()))?;
        inf.images.insert(id.clone(), img);
        queries.push((id, None));
    }
    let ids: Vec<&str> = queries.iter().map(|q| q.0.as_str()).collect();
    let vectors = inf.model.embed_vectors(&ids, &inf.images as &dyn ImageSource, run.cfg.data.eval_batch)?;
    let mut preds = Vec::with_capacity(queries.len());
    for ((id, label), v) in queries.iter().zip(vectors) {
        let prediction = classify_embedding(&v, &inf.support, run.cfg.data.rule).with_context(|| format!("sample `{id}`"))?;
        preds.push(LabeledPrediction {
            sample_id: id.clone(),
            true_label: *label,
            prediction,
        });
    }
    let classes = inf.support.classes().to_vec();
    write_predictions(&preds, &classes, run.create("predictions.csv")?)?;
    run.finish()?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    train_size: usize,
    validation_ids: &'a [String],
    best_epoch: usize,
    epochs_run: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct CrossValOutput<'a> {
    seed: u64,
    folds: Vec<FoldSummary<'a>>,
    summary: &'a tsnet_core::training::CrossValSummary,
}

fn crossval(mut run: Run, manifest: Option<PathBuf>) -> anyhow::Result<Outcome> {
    let path = required(manifest, &run.cfg.paths.manifest, "manifest")?;
    let m = run.load_manifest(&path)?;
    let mut images = HashMap::new();
    run.load_images(&[(&path, &m)], &mut images)?;
    let d = &run.cfg.data;
    let cv = CrossValConfig {
        folds: d.folds,
        patient_aware: d.patient_aware,
        train_triplets: d.train_triplets,
        val_triplets: d.val_triplets,
        same_patient_positive: d.same_patient_positive,
        rule: d.rule,
    };
    let tcfg = TrainConfig {
        seed: run.seed_for("train"),
        ..run.cfg.train.clone()
    };
    run.branch_inputs()?;
    let build = |fold_seed: u64| {
        run.build_model(fold_seed)
            .map_err(|e| tsnet_core::Error::InvalidParameter(format!("{e:#}")))
    };
    let (folds, summary) = cross_validate(&m, &cv, &tcfg, &images, build)?;
    for f in &folds {
        f.history.write_csv(run.create(&format!("fold_{}/history.csv", f.fold))?)?;
        run.write_json(&format!("fold_{}/metrics.json", f.fold), &f.report)?;
    }
    let out = CrossValOutput {
        seed: run.seed,
        folds: folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                train_size: f.train_ids.len(),
                validation_ids: &f.validation_ids,
                best_epoch: f.history.best_epoch,
                epochs_run: f.history.epochs.len(),
                accuracy: f.report.accuracy.value,
            })
            .collect(),
        summary: &summary,
    };
    run.write_json("crossval.json", &out)?;
    run.finish()?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct BranchParams {
    name: String,
    kind: &'static str,
    feature_width: usize,
    head_parameters: usize,
}

#[derive(Serialize)]
struct ParamReport {
    embedding_width: usize,
    branches: Vec<BranchParams>,
    fusion_parameters: usize,
    total: usize,
    trainable: usize,
}

fn params(cfg: RunConfig, seed: u64) -> anyhow::Result<Outcome> {
    let run = Run::new("params", cfg, seed, std::env::temp_dir())?;
    let model = run.build_model(run.model_seed())?;
    let (total, trainable) = model.count_parameters();
    let report = ParamReport {
        embedding_width: EMBED_DIM,
        branches: model
            .branches()
            .iter()
            .map(|b| BranchParams {
                name: b.name().to_string(),
                kind: match b.kind() {
                    BranchKind::ToyCnn => "toy_cnn",
                    BranchKind::ExternalEmbedding => "external_embedding",
                },
                feature_width: b.feature_width(),
                head_parameters: b.feature_width() * EMBED_DIM + EMBED_DIM,
            })
            .collect(),
        fusion_parameters: model.fusion_params(),
        total,
        trainable,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct EmbSummary {
    file: String,
    records: usize,
    feature_width: usize,
    sha256: String,
    sidecar: Option<tsnet_core::ensemble::EmbeddingSidecar>,
}

fn verify_emb(file: &Path) -> anyhow::Result<Outcome> {
    let (table, sidecar) = load_emb1(file).with_context(|| format!("verifying {}", file.display()))?;
    let summary = EmbSummary {
        file: file.display().to_string(),
        records: table.len(),
        feature_width: table.dim(),
        sha256: sha256_hex(&std::fs::read(file)?),
        sidecar,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Done)
}
