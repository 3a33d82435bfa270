use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{argmax_rows, cross_entropy, lr_at, OptimConfig, Optimizer};
use crate::data::{Batch, DatasetManifest, Loader, NoiseKind, NoiseSpec, Split};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Model};
use crate::nn::{mix_seed, ForwardCtx, Layer};
use crate::tensor::no_grad;

/// Plan seed for validation and test passes, so every evaluation sees the same examples.
pub const EVAL_SEED: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    /// Percentage in [0, 100].
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// learning rate at the first step of the epoch
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub seed: u64,
    pub wall_clock_secs: f64,
    /// resolved configuration as `key=value` lines
    pub config: String,
    /// (epoch, validation accuracy) of the saved checkpoint
    pub best: Option<(usize, f64)>,
}

impl TrainHistory {
    /// One line per epoch: `epoch lr train_loss train_acc val_acc`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for line in self.config.lines() {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "# seed={} wall_clock_secs={:.1}", self.seed, self.wall_clock_secs);
        let _ = writeln!(s, "# epoch lr train_loss train_acc val_acc");
        for r in &self.records {
            let val = r.val_acc.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{} {:.8} {:.6} {:.4} {val}",
                r.epoch, r.lr, r.train_loss, r.train_acc
            );
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// Where the history file of a checkpoint lives.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.txt");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub seed: u64,
    /// best-validation checkpoint; history is written next to it
    pub out: Option<PathBuf>,
    /// stop after this many optimizer steps (the schedule still spans all epochs)
    pub max_steps: Option<usize>,
}

fn step_seed(seed: u64, step: usize) -> u64 {
    mix_seed(seed, &format!("step{step}"))
}

/// One forward/backward/update on a batch; returns (loss, correct).
fn train_step(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    batch: &Batch,
    lr: f64,
    ctx: &ForwardCtx,
    step: usize,
) -> Result<(f64, usize)> {
    let logits = model.forward(&batch.features, ctx)?;
    let loss = cross_entropy(&logits, &batch.labels)?;
    let value = loss.item() as f64;
    if !value.is_finite() {
        return Err(Error::Divergence { step });
    }
    loss.backward()?;
    let correct = argmax_rows(logits.data(), model.num_classes())
        .iter()
        .zip(&batch.labels)
        .filter(|(p, l)| p == l)
        .count();
    opt.step(&mut model.params_mut(), lr)?;
    Ok((value, correct))
}

/// Runs the full schedule, evaluating on the validation split after every epoch.
pub fn train(
    model: &mut Model<f32>,
    loader: &Loader,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.optim.validate()?;
    let m = loader.manifest();
    if m.num_classes() != model.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, model has {}",
            m.num_classes(),
            model.num_classes()
        )));
    }
    if loader.frames() != model.config().frames {
        return Err(Error::InvalidConfig(format!(
            "clips give {} frames, model expects {}",
            loader.frames(),
            model.config().frames
        )));
    }
    let start = Instant::now();
    let bs = cfg.optim.batch_size;
    let steps_per_epoch = loader
        .plan(Split::Train, mix_seed(cfg.seed, "epoch0"))?
        .examples
        .len()
        .div_ceil(bs);
    let has_val = m.count(Split::Val) > 0;
    let mut opt = Optimizer::new(&cfg.optim);
    let mut history = TrainHistory {
        records: Vec::new(),
        seed: cfg.seed,
        wall_clock_secs: 0.0,
        config: String::new(),
        best: None,
    };
    for (k, v) in model.config().to_pairs().into_iter().chain(cfg.optim.to_pairs()) {
        history.config.push_str(&format!("{k}={v}\n"));
    }
    let mut step = 0;
    'epochs: for epoch in 0..cfg.optim.epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        let lr0 = lr_at(step, steps_per_epoch, &cfg.optim);
        for batch in loader.batches(Split::Train, bs, mix_seed(cfg.seed, &format!("epoch{epoch}")))? {
            if cfg.max_steps.is_some_and(|max| step >= max) {
                break;
            }
            let batch = batch?;
            let lr = lr_at(step, steps_per_epoch, &cfg.optim);
            let ctx = ForwardCtx::train(step_seed(cfg.seed, step));
            let (loss, c) = train_step(model, &mut opt, &batch, lr, &ctx, step)?;
            loss_sum += loss * batch.len() as f64;
            correct += c;
            seen += batch.len();
            step += 1;
        }
        if seen == 0 {
            break 'epochs;
        }
        let val_acc = if has_val {
            Some(evaluate(model, loader, Split::Val, bs)?.percent())
        } else {
            None
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: lr0,
            train_loss: loss_sum / seen as f64,
            train_acc: 100.0 * correct as f64 / seen as f64,
            val_acc,
        };
        on_epoch(&record);
        // without a validation split the latest epoch is kept
        let improved = match (val_acc, history.best) {
            (Some(v), Some((_, best))) => v > best,
            _ => true,
        };
        if improved {
            if let Some(v) = val_acc {
                history.best = Some((record.epoch, v));
            }
            if let Some(out) = &cfg.out {
                save_checkpoint(model, Some(&opt.export()), out)?;
            }
        }
        history.records.push(record);
        history.wall_clock_secs = start.elapsed().as_secs_f64();
        if let Some(out) = &cfg.out {
            let path = history_path(out);
            fs::write(&path, history.to_text()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(history)
}

/// Argmax accuracy in eval mode over one split.
pub fn evaluate(model: &Model<f32>, loader: &Loader, split: Split, batch_size: usize) -> Result<Accuracy> {
    if loader.manifest().num_classes() != model.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, model has {}",
            loader.manifest().num_classes(),
            model.num_classes()
        )));
    }
    let ctx = ForwardCtx::eval();
    let mut acc = Accuracy { correct: 0, total: 0 };
    for batch in loader.batches(split, batch_size, EVAL_SEED)? {
        let batch = batch?;
        let logits = no_grad(|| model.forward(&batch.features, &ctx))?;
        let preds = argmax_rows(logits.data(), model.num_classes());
        acc.correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        acc.total += batch.len();
    }
    Ok(acc)
}

/// Test-split accuracy with seeded colored noise mixed in at each SNR.
/// `f64::INFINITY` evaluates the clean clips.
pub fn eval_noise(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    snrs: &[f64],
    kind: NoiseKind,
    seed: u64,
    batch_size: usize,
) -> Result<Vec<(f64, Accuracy)>> {
    snrs.iter()
        .map(|&snr_db| {
            let noise = (snr_db != f64::INFINITY).then_some(NoiseSpec { kind, snr_db, seed });
            let loader = Loader::new(manifest.clone())?.with_cache(false).with_noise(noise);
            Ok((snr_db, evaluate(model, &loader, Split::Test, batch_size)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    /// optimizer steps taken
    pub steps: usize,
    /// train-mode accuracy (%) of the last step's forward pass
    pub train_acc: f64,
    pub final_loss: f64,
    /// eval-mode accuracy (%) on the same batch after the last step
    pub eval_acc: f64,
}

/// Repeated full-batch steps on one fixed batch until every example is
/// classified correctly in a training-mode pass, or `max_steps` is reached.
pub fn overfit(
    model: &mut Model<f32>,
    batch: &Batch,
    cfg: &OptimConfig,
    max_steps: usize,
    seed: u64,
) -> Result<OverfitReport> {
    let mut opt = Optimizer::new(cfg);
    let mut report = OverfitReport {
        steps: 0,
        train_acc: 0.0,
        final_loss: f64::NAN,
        eval_acc: 0.0,
    };
    for step in 0..max_steps {
        let ctx = ForwardCtx::train(step_seed(seed, step));
        let (loss, correct) = train_step(model, &mut opt, batch, cfg.lr_peak, &ctx, step)?;
        report.steps = step + 1;
        report.final_loss = loss;
        report.train_acc = 100.0 * correct as f64 / batch.len() as f64;
        if correct == batch.len() {
            break;
        }
    }
    let logits = no_grad(|| model.forward(&batch.features, &ForwardCtx::eval()))?;
    let preds = argmax_rows(logits.data(), model.num_classes());
    let correct = preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    report.eval_acc = 100.0 * correct as f64 / batch.len() as f64;
    Ok(report)
}
