//! Minibatch training with Adam, validation-based model selection, and a
//! reproducible per-epoch log.
//!
//! Each epoch shuffles the training windows with a seeded permutation,
//! walks them in minibatches (forward → L1 loss → backward → optimizer
//! step), then measures validation loss with the tape-free forward pass.
//! The parameters with the best validation loss seen so far are kept and
//! restored at the end, so a run that starts overfitting still yields its
//! best model. Everything except the wall-clock column of the log is a
//! deterministic function of the seed and the data.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{NowcastDataset, Split};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::optim::AdamState;
use crate::tensor::Tape;

use super::NowcastModel;

/// Losses and timing of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Epoch index, starting at 1.
    pub epoch: usize,
    /// Element-weighted mean L1 training loss over the epoch's batches.
    pub train_l1: f64,
    /// Mean L1 loss over the validation windows.
    pub val_l1: f64,
    /// Wall-clock duration of the epoch in seconds (the only
    /// non-deterministic column).
    pub seconds: f64,
}

/// The full record of one training run.
#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Dense pruned-and-normalized adjacency after each epoch, row-major.
    pub adjacency: Vec<Vec<f32>>,
    /// Epoch (1-based) whose parameters the model ends up carrying.
    pub best_epoch: usize,
    /// Human-readable remarks: window geometry, neighbour clamping, the
    /// restored epoch.
    pub notes: Vec<String>,
}

impl TrainingLog {
    /// Renders the per-epoch table as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_l1,val_l1,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.epoch, r.train_l1, r.val_l1, r.seconds
            ));
        }
        out
    }

    /// Whether two runs followed the same loss trajectory. Wall-clock
    /// columns are ignored: they are the one legitimately
    /// non-deterministic part of a run.
    pub fn same_losses(&self, other: &TrainingLog) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(other.records.iter())
                .all(|(a, b)| {
                    a.epoch == b.epoch
                        && a.train_l1.to_bits() == b.train_l1.to_bits()
                        && a.val_l1.to_bits() == b.val_l1.to_bits()
                })
    }
}

/// Mean absolute error of the tape-free forward pass over `samples`,
/// computed in chunks of `batch` windows.
fn eval_l1<T: Scalar>(
    model: &NowcastModel<T>,
    ds: &NowcastDataset,
    samples: &[usize],
    batch: usize,
) -> Result<f64> {
    let mut abs_sum = 0.0f64;
    let mut count = 0usize;
    for chunk in samples.chunks(batch) {
        let (x, y) = ds.batch::<T>(chunk)?;
        let pred = model.forward_eval(&x)?;
        for (p, t) in pred.data().iter().zip(y.data().iter()) {
            abs_sum += (p.as_f64() - t.as_f64()).abs();
            count += 1;
        }
    }
    Ok(abs_sum / count as f64)
}

/// Trains `model` on the dataset's training split per `model.config`,
/// selecting the epoch with the lowest validation loss.
///
/// Errors when the dataset's geometry does not match the model's, or
/// when a loss turns non-finite (the error names the epoch and batch).
pub fn train<T: Scalar>(model: &mut NowcastModel<T>, ds: &NowcastDataset) -> Result<TrainingLog> {
    let cfg = model.config.clone();
    if ds.channels() != cfg.channels
        || ds.n_node() != model.n_node()
        || ds.input_len != cfg.input_len
        || ds.horizon != cfg.horizon
    {
        return Err(CoreError::InvalidConfig(format!(
            "dataset geometry ({} channels, {} nodes, window {}, horizon {}) does not match \
             the model ({} channels, {} nodes, window {}, horizon {})",
            ds.channels(),
            ds.n_node(),
            ds.input_len,
            ds.horizon,
            cfg.channels,
            model.n_node(),
            cfg.input_len,
            cfg.horizon
        )));
    }
    let train_ids = ds.split_samples(Split::Train);
    let val_ids = ds.split_samples(Split::Val);
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(CoreError::EmptyDataset(
            "training needs non-empty train and validation splits".to_string(),
        ));
    }

    let params = model.params();
    let mut adam = AdamState::new(
        T::from_f64(cfg.learning_rate),
        T::from_f64(cfg.weight_decay),
        &params,
    );
    // The shuffle stream is offset from the seed so it never replays the
    // initialization draws.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let extents = cfg.step_extents()?;
    let mut notes = vec![format!(
        "input window {} frames, horizon {} frames; step extents through the temporal stack: {}",
        cfg.input_len,
        cfg.horizon,
        extents
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" -> ")
    )];
    if cfg.top_k >= model.n_node() {
        notes.push(format!(
            "neighbour budget top_k={} meets or exceeds the {} nodes; every nonzero entry is kept",
            cfg.top_k,
            model.n_node()
        ));
    }

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut adjacency = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_values: Vec<Vec<T>> = Vec::new();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order = train_ids.clone();
        order.shuffle(&mut shuffle_rng);

        let mut abs_total = 0.0f64;
        let mut elem_total = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = ds.batch::<T>(chunk)?;
            let n_elems = y.numel();
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, x)?;
            let target = tape.constant(y);
            let loss = tape.l1_loss(pred, target)?;
            let loss_value = tape.value(loss)[0].as_f64();
            if !loss_value.is_finite() {
                // Batches are numbered from 1, like epochs.
                return Err(CoreError::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {}", bi + 1),
                });
            }
            abs_total += loss_value * n_elems as f64;
            elem_total += n_elems;
            tape.backward(loss)?;
            adam.step(&params)?;
        }
        let train_l1 = abs_total / elem_total as f64;

        let val_l1 = eval_l1(model, ds, &val_ids, cfg.batch_size)?;
        if !val_l1.is_finite() {
            return Err(CoreError::NonFinite {
                context: format!("validation loss at epoch {epoch}"),
            });
        }
        if val_l1 < best_val {
            best_val = val_l1;
            best_epoch = epoch;
            best_values = params.iter().map(|p| p.values()).collect();
        }

        adjacency.push(
            model
                .current_adjacency()?
                .data()
                .iter()
                .map(|v| v.as_f32())
                .collect(),
        );
        records.push(EpochRecord {
            epoch,
            train_l1,
            val_l1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    for (p, values) in params.iter().zip(best_values.iter()) {
        p.set_values(values)?;
    }
    notes.push(format!(
        "kept epoch {best_epoch} parameters (validation L1 {best_val})"
    ));

    Ok(TrainingLog {
        records,
        adjacency,
        best_epoch,
        notes,
    })
}
