//! Triplet training: Adam with decoupled weight decay, plateau learning-rate
//! reduction, early stopping and k-fold orchestration.
//!
//! Both schedules watch the validation loss. An epoch counts as an
//! improvement when its validation loss is below the best so far by more than
//! `min_delta`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datamodel::{kfold, sample_triplets, Manifest, Triplet};
use crate::diffcore::{CheckpointEntry, Graph, ParamStore, Real, Tensor};
use crate::ensemble::{EnsembleModel, ImageSource};
use crate::fewshot::{batch_evaluate, build_support_set, Rule};
use crate::losses::{triplet_losses, LossConfig, Reduction};
use crate::metrics::MetricsReport;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

/// Learning rates never drop below this value.
pub const LR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Inverted-dropout rate on the concatenated head outputs.
    pub fusion_dropout: f64,
    /// Load the best-validation parameters into the model when training ends.
    pub restore_best: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 50,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 3,
            early_stop_patience: 10,
            min_delta: 1e-4,
            seed: 0,
            fusion_dropout: 0.0,
            restore_best: true,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::param(msg.to_string())) };
        check(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "train.learning_rate must be >= 0")?;
        check(self.batch_size >= 1, "train.batch_size must be >= 1")?;
        check(self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "train.weight_decay must be >= 0")?;
        check((0.0..1.0).contains(&self.beta1), "train.beta1 must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "train.beta2 must lie in [0, 1)")?;
        check(self.adam_eps > 0.0, "train.adam_eps must be > 0")?;
        check(self.plateau_factor > 0.0 && self.plateau_factor < 1.0, "train.plateau_factor must lie in (0, 1)")?;
        check(self.plateau_patience >= 1, "train.plateau_patience must be >= 1")?;
        check(self.early_stop_patience >= 1, "train.early_stop_patience must be >= 1")?;
        check(self.min_delta >= 0.0, "train.min_delta must be >= 0")?;
        check((0.0..1.0).contains(&self.fusion_dropout), "train.fusion_dropout must lie in [0, 1)")?;
        self.loss.validate()
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update of every unfrozen parameter from its accumulated gradient.
/// Weight decay is applied first as `value -= lr * weight_decay * value`.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>, cfg: &TrainConfig, lr: f64) -> Result<()> {
    if let Some(p) = store.iter().find(|p| !p.frozen && !p.grad.is_finite()) {
        return Err(Error::param(format!("non-finite gradient for `{}`", p.name)));
    }
    if state.m.len() != store.len() {
        state.m = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr_t, decay, eps) = (T::of(lr), T::of(lr * cfg.weight_decay), T::of(cfg.adam_eps));
    let (c1, c2) = (T::of(c1), T::of(c2));
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if p.frozen {
            continue;
        }
        let g = p.grad.data();
        let value = p.value.data_mut();
        for i in 0..value.len() {
            value[i] -= decay * value[i];
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (T::one() - b1) * g[i];
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (T::one() - b2) * g[i] * g[i];
            let mhat = m.data()[i] / c1;
            let vhat = v.data()[i] / c2;
            value[i] -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Losses of the untrained model.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn last_lr(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.lr)
    }

    /// `epoch,train_loss,val_loss,lr,seconds`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "lr", "seconds"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.lr.to_string(),
                format!("{:.6}", e.seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Number of trailing epochs without improvement. A reset at a plateau
/// reduction is applied when `reset_at` is given.
fn stagnation(val: &[f64], min_delta: f64, reset_at: Option<usize>) -> (usize, bool) {
    let mut best = f64::INFINITY;
    let mut bad = 0;
    let mut fired = false;
    for &v in val {
        fired = false;
        if v < best - min_delta {
            best = v;
            bad = 0;
        } else {
            bad += 1;
        }
        if let Some(p) = reset_at {
            if bad >= p {
                fired = true;
                bad = 0;
            }
        }
    }
    (bad, fired)
}

/// Learning rate for the next epoch: the last epoch's rate times
/// `plateau_factor` when the latest epoch completed a window of
/// `plateau_patience` epochs without improvement, otherwise unchanged.
pub fn reduce_lr_on_plateau(history: &TrainHistory, cfg: &TrainConfig) -> f64 {
    let Some(lr) = history.last_lr() else {
        return cfg.learning_rate;
    };
    let (_, fired) = stagnation(&history.val_losses(), cfg.min_delta, Some(cfg.plateau_patience));
    if fired && lr > LR_FLOOR {
        (lr * cfg.plateau_factor).max(LR_FLOOR)
    } else {
        lr
    }
}

/// True once `early_stop_patience` consecutive epochs passed without improvement.
pub fn should_stop_early(history: &TrainHistory, cfg: &TrainConfig) -> bool {
    stagnation(&history.val_losses(), cfg.min_delta, None).0 >= cfg.early_stop_patience
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Parameters after the best validation epoch (the initial parameters if
    /// no epoch improved on the untrained model).
    pub best: Vec<CheckpointEntry>,
}

fn ids<'a>(batch: &[&'a Triplet], pick: impl Fn(&'a Triplet) -> &'a str) -> Vec<&'a str> {
    batch.iter().map(|t| pick(t)).collect()
}

/// Per-triplet losses for `batch`, recording the graph in `g`.
fn batch_losses<T: Real>(
    model: &EnsembleModel<T>,
    g: &mut Graph<T>,
    batch: &[&Triplet],
    images: &dyn ImageSource,
    cfg: &TrainConfig,
    mut rng: Option<&mut SplitMix64>,
) -> Result<crate::diffcore::Var> {
    let mut embed = |role: Vec<&str>, g: &mut Graph<T>| {
        let dropout = rng.as_deref_mut().filter(|_| cfg.fusion_dropout > 0.0).map(|r| (cfg.fusion_dropout, r));
        model.embed(g, &role, images, dropout)
    };
    let ea = embed(ids(batch, |t| &t.anchor_id), g)?;
    let ep = embed(ids(batch, |t| &t.positive_id), g)?;
    let en = embed(ids(batch, |t| &t.negative_id), g)?;
    triplet_losses(g, ea, ep, en, &cfg.loss)
}

/// Mean triplet loss without updates, summed in triplet order.
pub fn evaluate_loss<T: Real>(
    model: &EnsembleModel<T>,
    triplets: &[Triplet],
    images: &dyn ImageSource,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in triplets.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&Triplet> = chunk.iter().collect();
        let mut g = Graph::new();
        let per = batch_losses(model, &mut g, &refs, images, cfg, None)?;
        total += g.value(per).data().iter().map(|v| v.f64()).sum::<f64>();
    }
    Ok(total / triplets.len() as f64)
}

/// Trains `model` on `train`, tracking validation loss on `val`.
///
/// Each epoch shuffles the triplets with a seed derived from `cfg.seed` and
/// the epoch number, takes one Adam step per batch and records the mean
/// per-triplet loss (summed in original triplet order). The plateau schedule
/// sets the next epoch's rate; early stopping ends the loop.
pub fn train_triplet<T: Real>(
    model: &mut EnsembleModel<T>,
    train: &[Triplet],
    val: &[Triplet],
    images: &dyn ImageSource,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::param("training and validation triplet sets must be non-empty"));
    }
    if model.count_parameters().1 == 0 {
        return Err(Error::param("model has no trainable parameters"));
    }
    let initial_train_loss = evaluate_loss(model, train, images, cfg)?;
    let initial_val_loss = evaluate_loss(model, val, images, cfg)?;
    let mut history = TrainHistory {
        initial_train_loss,
        initial_val_loss,
        ..TrainHistory::default()
    };
    let mut best_val = initial_val_loss;
    let mut best = model.params().to_checkpoint();
    let mut state = AdamState::new();
    let mut lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(derive_seed(cfg.seed, &format!("epoch{epoch}"))).shuffle(&mut order);
        let mut dropout_rng = SplitMix64::new(derive_seed(cfg.seed, &format!("dropout{epoch}")));
        let mut per_triplet = vec![0.0f64; train.len()];

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |e: Error| Error::Training {
                epoch,
                batch: b,
                msg: e.to_string(),
            };
            let batch: Vec<&Triplet> = idx.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let per = batch_losses(model, &mut g, &batch, images, cfg, Some(&mut dropout_rng)).map_err(fail)?;
            for (&i, v) in idx.iter().zip(g.value(per).data()) {
                per_triplet[i] = v.f64();
            }
            let loss = match cfg.loss.reduction {
                Reduction::Mean => g.mean(per),
                Reduction::Sum => g.sum(per),
            }
            .map_err(fail)?;
            model.params_mut().zero_grad();
            g.backward(loss, model.params_mut()).map_err(fail)?;
            adam_step(model.params_mut(), &mut state, cfg, lr).map_err(fail)?;
        }

        let train_loss = per_triplet.iter().sum::<f64>() / train.len() as f64;
        let val_loss = evaluate_loss(model, val, images, cfg).map_err(|e| Error::Training {
            epoch,
            batch: 0,
            msg: format!("validation: {e}"),
        })?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                msg: "loss is not finite".into(),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.params().to_checkpoint();
            history.best_epoch = epoch;
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        if should_stop_early(&history, cfg) {
            history.stopped_early = true;
            break;
        }
        lr = reduce_lr_on_plateau(&history, cfg);
    }
    if cfg.restore_best {
        model.params_mut().load_checkpoint(&best)?;
    }
    Ok(TrainOutcome { history, best })
}

/// Triplet budget and evaluation settings for [`cross_validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValConfig {
    pub folds: usize,
    pub patient_aware: bool,
    pub train_triplets: usize,
    pub val_triplets: usize,
    pub same_patient_positive: bool,
    pub rule: Rule,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            patient_aware: true,
            train_triplets: 600,
            val_triplets: 150,
            same_patient_positive: false,
            rule: Rule::Nearest,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub history: TrainHistory,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub macro_specificity: MeanStd,
    pub auc_macro: MeanStd,
    pub final_val_loss: MeanStd,
}

impl CrossValSummary {
    pub fn from_folds(folds: &[FoldResult]) -> Self {
        let stat = |f: &dyn Fn(&FoldResult) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            accuracy: stat(&|r| r.report.accuracy.value),
            macro_precision: stat(&|r| r.report.macro_avg.precision.value),
            macro_recall: stat(&|r| r.report.macro_avg.recall.value),
            macro_f1: stat(&|r| r.report.macro_avg.f1.value),
            macro_specificity: stat(&|r| r.report.macro_avg.specificity.value),
            auc_macro: stat(&|r| r.report.auc_macro.value),
            final_val_loss: stat(&|r| r.history.epochs.last().map_or(r.history.initial_val_loss, |e| e.val_loss)),
        }
    }
}

/// Trains a fresh model per fold (built by `build` from a fold seed), then
/// classifies the fold's validation records against a support set of its
/// training records.
pub fn cross_validate<T, F>(
    manifest: &Manifest,
    cv: &CrossValConfig,
    cfg: &TrainConfig,
    images: &dyn ImageSource,
    build: F,
) -> Result<(Vec<FoldResult>, CrossValSummary)>
where
    T: Real,
    F: Fn(u64) -> Result<EnsembleModel<T>>,
{
    let folds = kfold(manifest, cv.folds, derive_seed(cfg.seed, "kfold"), cv.patient_aware)?;
    let mut results = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let run = || -> Result<FoldResult> {
            let (train_m, val_m) = (&fold.train, &fold.validation);
            let fold_seed = derive_seed(cfg.seed, &format!("fold{i}"));
            let train_t = sample_triplets(train_m, cv.train_triplets, derive_seed(fold_seed, "train"), cv.same_patient_positive)?;
            let val_t = sample_triplets(val_m, cv.val_triplets, derive_seed(fold_seed, "val"), cv.same_patient_positive)?;
            let mut model = build(fold_seed)?;
            let fold_cfg = TrainConfig {
                seed: fold_seed,
                ..cfg.clone()
            };
            let outcome = train_triplet(&mut model, &train_t, &val_t, images, &fold_cfg)?;
            let support = build_support_set(&model, train_m, images, cfg.batch_size)?;
            let (_, report) = batch_evaluate(&model, val_m, images, &support, cv.rule, cfg.batch_size)?;
            let ids = |m: &Manifest| m.records().iter().map(|r| r.id.clone()).collect();
            Ok(FoldResult {
                fold: i,
                train_ids: ids(train_m),
                validation_ids: ids(val_m),
                history: outcome.history,
                report,
            })
        };
        results.push(run().map_err(|e| Error::Fold {
            fold: i,
            cause: Box::new(e),
        })?);
    }
    let summary = CrossValSummary::from_folds(&results);
    Ok((results, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;

    fn scalar_store(v: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v), false);
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    fn no_decay() -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut s = scalar_store(0.7, 0.0);
        let mut st = AdamState::new();
        for _ in 0..3 {
            adam_step(&mut s, &mut st, &no_decay(), 0.1).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn adam_two_step_trace() {
        // Hand-run recurrence for w=1, g=1, lr=0.1:
        // step 1: m=0.1, v=0.001, m^=1, v^=1, w = 1 - 0.1/(1+1e-8)
        // step 2: m=0.19, v=0.001999, m^=1, v^=1, w -= 0.1/(1+1e-8)
        let mut s = scalar_store(1.0, 1.0);
        let mut st = AdamState::new();
        adam_step(&mut s, &mut st, &no_decay(), 0.1).unwrap();
        let w1 = s.iter().next().unwrap().value.data()[0];
        assert!((w1 - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        adam_step(&mut s, &mut st, &no_decay(), 0.1).unwrap();
        let w2 = s.iter().next().unwrap().value.data()[0];
        assert!((w2 - (1.0 - 0.2 / (1.0 + 1e-8))).abs() < 1e-14);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn adam_decoupled_decay() {
        let mut s = scalar_store(2.0, 0.0);
        let cfg = TrainConfig {
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        adam_step(&mut s, &mut AdamState::new(), &cfg, 0.1).unwrap();
        assert!((s.iter().next().unwrap().value.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_skips_frozen_and_rejects_nan() {
        let mut s = scalar_store(1.0, 5.0);
        s.get_mut(s.find("w").unwrap()).frozen = true;
        adam_step(&mut s, &mut AdamState::new(), &TrainConfig::default(), 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 1.0);

        let mut s = scalar_store(1.0, f64::NAN);
        assert!(adam_step(&mut s, &mut AdamState::new(), &TrainConfig::default(), 0.1).is_err());
        assert_eq!(s.iter().next().unwrap().value.data()[0], 1.0);
    }

    fn history(val: &[f64], lr: f64) -> TrainHistory {
        TrainHistory {
            epochs: val
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord {
                    epoch: i + 1,
                    train_loss: v,
                    val_loss: v,
                    lr,
                    seconds: 0.0,
                })
                .collect(),
            ..TrainHistory::default()
        }
    }

    /// Replays the schedule epoch by epoch, as training does.
    fn lr_trace(val: &[f64], cfg: &TrainConfig) -> Vec<f64> {
        let mut h = TrainHistory::default();
        let mut lr = cfg.learning_rate;
        let mut out = Vec::new();
        for (i, &v) in val.iter().enumerate() {
            out.push(lr);
            h.epochs.push(EpochRecord {
                epoch: i + 1,
                train_loss: v,
                val_loss: v,
                lr,
                seconds: 0.0,
            });
            lr = reduce_lr_on_plateau(&h, cfg);
        }
        out
    }

    #[test]
    fn plateau_schedule() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        assert_eq!(reduce_lr_on_plateau(&history(&[5.0, 4.0, 3.0, 2.0, 1.0], 1.0), &cfg), 1.0);
        // patience 3: the 4th flat epoch closes the first window, the 7th the second.
        assert_eq!(reduce_lr_on_plateau(&history(&[1.0; 4], 1.0), &cfg), 0.5);
        assert_eq!(reduce_lr_on_plateau(&history(&[1.0; 3], 1.0), &cfg), 1.0);
        assert_eq!(lr_trace(&[1.0; 9], &cfg), vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25]);
        assert_eq!(reduce_lr_on_plateau(&history(&[1.0; 4], LR_FLOOR), &cfg), LR_FLOOR);
        assert_eq!(reduce_lr_on_plateau(&history(&[1.0; 4], 1.5e-8), &cfg), LR_FLOOR);
    }

    #[test]
    fn min_delta_counts_small_gains_as_stagnation() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            min_delta: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(reduce_lr_on_plateau(&history(&[1.0, 0.95, 0.92, 0.91], 1.0), &cfg), 0.5);
    }

    #[test]
    fn early_stopping_rule() {
        let cfg = TrainConfig {
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        assert!(!should_stop_early(&history(&[4.0, 3.0, 2.0, 1.0], 1.0), &cfg));
        assert!(!should_stop_early(&history(&[1.0], 1.0), &cfg));
        assert!(!should_stop_early(&history(&[1.0; 3], 1.0), &cfg));
        assert!(should_stop_early(&history(&[1.0; 4], 1.0), &cfg));
        assert!(!should_stop_early(&history(&[1.0, 1.0, 1.0, 0.5], 1.0), &cfg));
    }

    #[test]
    fn history_csv() {
        let mut buf = Vec::new();
        history(&[0.25], 1e-4).write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,lr,seconds\n1,0.25,0.25,0.0001,0.000000\n"
        );
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { plateau_factor: 1.0, ..TrainConfig::default() },
            TrainConfig { plateau_patience: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
