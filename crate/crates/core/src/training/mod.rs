//! Loss, optimizer, metrics and the mini-batch training loop.

pub mod adam;
pub mod loss;
pub mod metrics;

pub use adam::{Adam, OptimError};
pub use loss::{huber, total_loss};
pub use metrics::{metrics, Accumulator, Metrics, MAPE_FLOOR};

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalizer, Windows};
use crate::model::{count_scores, expected_scores, Model, ScoreTotals};
use crate::rng::{Rng, Sampling};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub delta: f64,
    pub grad_clip: Option<f64>,
    /// Caps the optimizer steps per epoch (all batches when `None`).
    pub max_batches: Option<usize>,
}

impl FitOptions {
    pub fn from_model(model: &Model) -> Self {
        let c = model.config();
        FitOptions {
            epochs: c.epochs,
            patience: c.patience,
            batch: c.batch,
            lr: c.lr,
            alpha: c.alpha,
            delta: c.delta,
            grad_clip: c.grad_clip,
            max_batches: c.max_batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    /// Optimization only.
    pub train_seconds: f64,
    /// Optimization plus validation.
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub seed: u64,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stop_reason: StopReason,
    pub test: Metrics,
    /// Attention scores per input sample, as measured during training.
    pub scores_per_sample: u64,
    /// Analytic window and canonical totals for the configured stack.
    pub analytic_scores: ScoreTotals,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `epoch,train_loss,val_mae,val_rmse,val_mape`; fully determined by the seed.
    pub fn write_loss_curve(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_mae,val_rmse,val_mape")?;
        for e in &self.epochs {
            let mape = e.val.mape.map_or_else(String::new, |m| m.to_string());
            writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.val.mae, e.val.rmse, mape)?;
        }
        Ok(())
    }

    /// `epoch,train_seconds,total_seconds`
    pub fn write_timings(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_seconds,total_seconds")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_seconds, e.total_seconds)?;
        }
        Ok(())
    }
}

/// Patience-based stopping on a metric where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    waited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.waited = 0;
            return Verdict::Improved;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Denormalized metrics of `model` over every window, in eval mode.
pub fn evaluate(model: &Model, windows: &Windows, normalizer: &Normalizer, batch: usize) -> Result<Metrics, TensorError> {
    let mut acc = Accumulator::default();
    let indices: Vec<usize> = (0..windows.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, y) = windows.batch(chunk);
        let pred = model.predict(&x)?;
        let pred = normalizer.denormalize_tensor(&pred);
        let y = normalizer.denormalize_tensor(&y);
        acc.extend(pred.data(), y.data());
    }
    Ok(acc.finish())
}

/// One epoch of shuffled mini-batch Adam. Returns the mean training loss.
pub fn train_epoch(
    model: &mut Model,
    windows: &Windows,
    adam: &mut Adam,
    options: &FitOptions,
    rng: &mut Rng,
) -> Result<f64, TrainError> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(rng);
    let batches = order.chunks(options.batch.max(1)).take(options.max_batches.unwrap_or(usize::MAX));
    let (mut total, mut seen) = (0.0, 0usize);
    for chunk in batches {
        let (x, y) = windows.batch(chunk);
        let tape = Tape::new();
        let bound = model.bind(Some(&tape));
        let out = model.forward(&bound, &x, &mut Sampling::Draw(rng))?;
        let loss = total_loss(&out.prediction, &y, &out.kl, options.alpha, options.delta)?;
        let grads = tape.backward(&loss)?;
        let grads: Vec<Vec<f64>> = bound.as_slice().iter().map(|leaf| grads.wrt(leaf)).collect();
        adam.step(model.store_mut(), &grads)?;
        total += loss.item() * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok(total / seen.max(1) as f64)
}

/// Trains until validation MAE stops improving for `patience` epochs or
/// `epochs` run out, then restores the best parameters and scores the test
/// split.
pub fn fit(model: &mut Model, data: &Dataset, options: &FitOptions, rng: &mut Rng) -> Result<TrainReport, TrainError> {
    for (name, w) in [("train", &data.train), ("validation", &data.val), ("test", &data.test)] {
        if w.is_empty() {
            return Err(TrainError::Config(format!("{name} split has no windows")));
        }
    }
    if options.epochs == 0 || options.patience == 0 || options.batch == 0 {
        return Err(TrainError::Config("epochs, patience and batch must be positive".into()));
    }
    let mut adam = Adam::new(model.store(), options.lr);
    adam.clip = options.grad_clip;
    let mut stopper = EarlyStopping::new(options.patience);
    let mut best_values = model.store().values();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=options.epochs {
        let start = Instant::now();
        let train_loss = train_epoch(model, &data.train, &mut adam, options, rng)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let val = evaluate(model, &data.val, &data.normalizer, options.batch)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val,
            train_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        });
        match stopper.observe(epoch, val.mae) {
            Verdict::Improved => best_values = model.store().values(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    model.store_mut().set_values(&best_values)?;
    let (best_epoch, best_val_mae) = stopper.best();
    let test = evaluate(model, &data.test, &data.normalizer, options.batch)?;
    let config = model.config();
    Ok(TrainReport {
        variant: config.variant.to_string(),
        seed: config.seed,
        num_params: model.num_params(),
        epochs,
        best_epoch,
        best_val_mae,
        stop_reason,
        test,
        scores_per_sample: expected_scores(config),
        analytic_scores: count_scores(config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_first_non_improvement() {
        let mut stopper = EarlyStopping::new(1);
        assert_eq!(stopper.observe(1, 5.0), Verdict::Improved);
        assert_eq!(stopper.observe(2, 5.0), Verdict::Stop);
        assert_eq!(stopper.best(), (1, 5.0));
    }

    #[test]
    fn patience_counts_consecutive_misses() {
        let mut stopper = EarlyStopping::new(3);
        let verdicts: Vec<Verdict> = [4.0, 3.0, 3.5, 3.2, 2.9, 3.0, 3.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| stopper.observe(i + 1, v))
            .collect();
        use Verdict::*;
        assert_eq!(verdicts, vec![Improved, Improved, Continue, Continue, Improved, Continue, Continue, Stop]);
        assert_eq!(stopper.best(), (5, 2.9));
    }
}
