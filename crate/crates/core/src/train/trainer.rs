//! Epoch loop: shuffled minibatches, L1 loss, AdamW, best-validation selection.

use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::config::TrainConfig;
use crate::data::{Prepared, Split, Window};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::Ddcn;
use crate::numerics::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    /// 0 when no epoch ran and the initial parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_checkpoint: Option<String>,
    pub train_metrics: MetricsReport,
    pub val_metrics: MetricsReport,
    pub test_metrics: MetricsReport,
}

impl RunRecord {
    /// One JSON document per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, jsonl: &Path, summary: &Path) -> Result<()> {
        std::fs::write(jsonl, self.to_jsonl()?).map_err(|e| Error::io(jsonl, e))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(summary, text).map_err(|e| Error::io(summary, e))
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Calls `f` on each consecutive chunk of `order` as a normalized batch.
/// With `prefetch`, batches are assembled one step ahead on a helper thread;
/// the order is the same either way.
fn for_each_batch(
    data: &Prepared,
    order: &[Window],
    batch_size: usize,
    prefetch: bool,
    mut f: impl FnMut(usize, Tensor<f32>, Tensor<f32>) -> Result<()>,
) -> Result<()> {
    if !prefetch {
        for chunk in order.chunks(batch_size) {
            let (x, y) = data.batch(chunk)?;
            f(chunk.len(), x, y)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel(2);
        scope.spawn(move || {
            for chunk in order.chunks(batch_size) {
                let item = data.batch(chunk).map(|b| (chunk.len(), b));
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        for item in rx {
            let (n, (x, y)) = item?;
            f(n, x, y)?;
        }
        Ok(())
    })
}

/// Normalized-space predictions for `windows`, stacked `(N, C, H, W)`.
pub fn predict_windows(model: &Ddcn<f32>, data: &Prepared, windows: &[Window], batch_size: usize) -> Result<Tensor<f32>> {
    let mut outs = Vec::new();
    for_each_batch(data, windows, batch_size.max(1), false, |_, x, _| {
        let y = model.predict(&x)?;
        let per = y.numel() / y.dim(0);
        for row in y.data().chunks(per) {
            outs.push(Tensor::new(y.shape()[1..].to_vec(), row.to_vec())?);
        }
        Ok(())
    })?;
    Tensor::stack(&outs)
}

/// Mean normalized L1 over all elements of `windows`.
pub fn normalized_l1(model: &Ddcn<f32>, data: &Prepared, windows: &[Window], batch_size: usize) -> Result<f64> {
    let (mut acc, mut count) = (0.0f64, 0usize);
    for_each_batch(data, windows, batch_size.max(1), false, |n, x, y| {
        let p = model.predict(&x)?;
        acc += super::loss::l1_loss(&p, &y)? as f64 * n as f64;
        count += n;
        Ok(())
    })?;
    Ok(acc / count.max(1) as f64)
}

/// Metrics on denormalized predictions against the raw targets.
pub fn evaluate(
    model: &Ddcn<f32>,
    data: &Prepared,
    split: Split,
    batch_size: usize,
    mape_threshold: f64,
) -> Result<MetricsReport> {
    let windows = data.windows.get(split);
    let pred = predict_windows(model, data, windows, batch_size)?;
    let pred = data.stats.denormalize(&pred, 1)?;
    let actual = data.raw_targets(windows)?;
    compute_metrics(&pred, &actual, mape_threshold)
}

fn non_finite(model: &Ddcn<f32>, context: &str) -> Error {
    let (param, what) = model
        .params
        .first_non_finite()
        .map(|(n, w)| (n.to_string(), w))
        .unwrap_or_else(|| ("<none>".to_string(), "loss only"));
    Error::NonFinite {
        param,
        context: format!("{what}; {context}"),
    }
}

/// Trains `model` in place and leaves it holding the best-validation parameters.
pub fn train_loop(
    model: &mut Ddcn<f32>,
    data: &Prepared,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer(), &model.params);
    let initial_val_loss = normalized_l1(model, data, &data.windows.val, cfg.batch_size)?;
    let mut best = (0usize, initial_val_loss, model.params.snapshot());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order = data.windows.train.clone();
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0f64, 0usize);
        for_each_batch(data, &order, cfg.batch_size, cfg.prefetch, |n, x, y| {
            model.params.zero_grad();
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let pred = model.forward(&mut tape, xv)?;
            let loss = tape.l1_loss(pred, yv)?;
            let value = tape.value(loss)?.item()?;
            if !value.is_finite() {
                return Err(non_finite(model, &format!("loss {value} at epoch {epoch}")));
            }
            tape.backward(loss, &mut model.params)?;
            drop(tape);
            if model.params.first_non_finite().is_some() {
                return Err(non_finite(model, &format!("after backward at epoch {epoch}")));
            }
            opt.step(&mut model.params);
            total += value as f64 * n as f64;
            seen += n;
            Ok(())
        })?;
        let val_loss = normalized_l1(model, data, &data.windows.val, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / seen.max(1) as f64,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        epochs.push(rec);
        if best.0 == 0 || val_loss < best.1 {
            best = (epoch, val_loss, model.params.snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    model.params.restore(&best.2)?;
    let eval = |s| evaluate(model, data, s, cfg.batch_size, cfg.mape_threshold);
    Ok(RunRecord {
        initial_val_loss,
        best_epoch: best.0,
        best_val_loss: best.1,
        best_checkpoint: None,
        train_metrics: eval(Split::Train)?,
        val_metrics: eval(Split::Val)?,
        test_metrics: eval(Split::Test)?,
        epochs,
    })
}
