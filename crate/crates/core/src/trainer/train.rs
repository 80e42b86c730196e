use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainError, WindowedDataset};
use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};
use crate::model::{GraphMasks, Model, Mode};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub window: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            batch: 16,
            window: 12,
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) || self.batch == 0 || self.window == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config(format!(
                "lr, batch, window and max_epochs must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean Smooth-L1 of `target - pred` on the tape.
pub fn smooth_l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, TensorError> {
    let d = tape.sub(target, pred)?;
    let l = tape.smooth_l1(d);
    Ok(tape.mean(l))
}

/// Mean Smooth-L1 of `target - pred` on plain slices.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "length mismatch");
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let x = (t - p).abs();
            if x < 1.0 {
                0.5 * x * x
            } else {
                x - 0.5
            }
        })
        .sum();
    total / pred.len() as f64
}

/// Eval-mode loss over `starts`, averaged per sample.
pub fn evaluate_loss(model: &Model, data: &WindowedDataset, masks: &GraphMasks, starts: &[usize], batch: usize) -> Result<f64, TrainError> {
    let floor = data.floor();
    let chunks: Vec<&[usize]> = starts.chunks(batch.max(1)).collect();
    let parts = par::map(&chunks, |c| -> Result<(f64, usize), TrainError> {
        let (x, y) = data.batch(c);
        let pred = model.predict(&x, masks, Some(&floor))?;
        Ok((smooth_l1(pred.data(), y.data()) * c.len() as f64, c.len()))
    });
    let mut total = 0.0;
    let mut count = 0;
    for p in parts {
        let (s, n) = p?;
        total += s;
        count += n;
    }
    Ok(total / count as f64)
}

/// Eval-mode predictions for `starts`, normalized, `[B, N]` row-major.
pub fn predict_normalized(model: &Model, data: &WindowedDataset, masks: &GraphMasks, starts: &[usize], batch: usize) -> Result<Vec<f64>, TrainError> {
    let floor = data.floor();
    let chunks: Vec<&[usize]> = starts.chunks(batch.max(1)).collect();
    let parts = par::map(&chunks, |c| -> Result<Tensor, TrainError> {
        let (x, _) = data.batch(c);
        Ok(model.predict(&x, masks, Some(&floor))?)
    });
    let mut out = Vec::with_capacity(starts.len() * data.nodes());
    for p in parts {
        out.extend_from_slice(p?.data());
    }
    Ok(out)
}

/// Mini-batch Adam on the training windows with early stopping on the
/// validation loss. On return `model` holds the best-validation parameters.
pub fn train(model: &mut Model, data: &WindowedDataset, masks: &GraphMasks, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if data.window != model.config.window || data.nodes() != model.config.nodes {
        return Err(TrainError::Shape(format!(
            "dataset [{} nodes, window {}] does not match model [{} nodes, window {}]",
            data.nodes(),
            data.window,
            model.config.nodes,
            model.config.window
        )));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let floor = data.floor();
    let momentum = model.config.bn_momentum;

    let mut order = data.train.clone();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let (x, y) = data.batch(chunk);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let xv = tape.constant(x);
            let fv = tape.constant(floor.clone());
            let out = model.forward(&mut tape, &vars, xv, masks, Some(fv), Mode::Train)?;
            let yv = tape.constant(y);
            let loss = smooth_l1_loss(&mut tape, out.pred, yv)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi, loss: value });
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
            adam.step(&mut model.params.tensors, &grads)?;
            if let Some(st) = out.batch_stats {
                model.params.update_running(&st.mean, &st.var, st.count, momentum);
            }
            total += value * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = evaluate_loss(model, data, masks, &data.val, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: usize::MAX, loss: val_loss });
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    model.params = params;
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// `epoch,train_loss,val_loss` rows.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "epoch,train_loss,val_loss").map_err(io)?;
    for r in history {
        writeln!(f, "{},{:e},{:e}", r.epoch, r.train_loss, r.val_loss).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(&[0.0], &[0.5]), 0.125);
        assert_eq!(smooth_l1(&[0.0], &[3.0]), 2.5);
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let below = smooth_l1(&[0.0], &[1.0 - 1e-9]);
        let above = smooth_l1(&[0.0], &[1.0 + 1e-9]);
        assert!((below - above).abs() < 1e-8);
    }

    #[test]
    fn tape_loss_matches_slice_loss() {
        let pred = vec![0.1, -2.0, 3.0, 0.7];
        let target = vec![0.6, 1.0, 3.0, -0.2];
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![4], pred.clone()).unwrap());
        let t = tape.constant(Tensor::new(vec![4], target.clone()).unwrap());
        let l = smooth_l1_loss(&mut tape, p, t).unwrap();
        assert!((tape.value(l).item() - smooth_l1(&pred, &target)).abs() < 1e-15);
    }
}
