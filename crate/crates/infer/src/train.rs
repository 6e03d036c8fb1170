//! Training loop: per-epoch shuffled batches with scheduled path counts,
//! AdamW updates, validation-based early stopping, and a structured log.
//! Fully deterministic for a fixed seed: batch order, path subsets and
//! reduction order are all derived from the training seed.

use std::time::Instant;

use mjp_gillespie::RandomSource;
use mjp_synthgen::{batch_schedule, DatasetRecord};
use serde::{Deserialize, Serialize};

use crate::adamw::AdamW;
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{InferError, Result};
use crate::loss::loss_and_head_grads;
use crate::net::{assemble_batch, backward, forward, NetParams, RecordEntry, RecordTruth};

/// Stream roles under the training seed (disjoint from dataset roles by
/// construction: record id 2^39 is far beyond any dataset size).
const TRAIN_STREAM_BASE: u64 = 1 << 39;
const ROLE_INIT: u8 = 0;
const ROLE_SPLIT: u8 = 1;
const ROLE_EPOCH: u8 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub batches: usize,
    /// Path counts drawn by the schedule this epoch.
    pub path_counts: Vec<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub train_records: usize,
    pub val_records: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Append-friendly one-line-per-epoch rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "seed={} train_records={} val_records={}\n",
            self.seed, self.train_records, self.val_records
        ));
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch={} train_loss={:.6} val_loss={:.6} batches={} seconds={:.1} path_counts={:?}\n",
                e.epoch, e.train_loss, e.val_loss, e.batches, e.seconds, e.path_counts
            ));
        }
        out.push_str(&format!(
            "best_epoch={} best_val_loss={:.6} stopped_early={}\n",
            self.best_epoch, self.best_val_loss, self.stopped_early
        ));
        out
    }
}

fn truth_entry<'a>(rec: &'a DatasetRecord, paths: &[usize]) -> RecordEntry<'a> {
    RecordEntry {
        series: paths.iter().map(|&k| &rec.series[k]).collect(),
        truth: Some(RecordTruth {
            rate_matrix: &rec.rate_matrix,
            adjacency: &rec.adjacency,
            pi0: &rec.pi0,
        }),
    }
}

/// Mean loss over `records` without updating parameters; every record is
/// evaluated with all of its paths.
pub fn evaluate_loss(
    params: &NetParams,
    model: &ModelConfig,
    records: &[&DatasetRecord],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    // Group records of equal path count so each batch is rectangular.
    let mut by_k: std::collections::BTreeMap<usize, Vec<&DatasetRecord>> = Default::default();
    for &r in records {
        by_k.entry(r.series.len()).or_default().push(r);
    }
    for (_k, group) in by_k {
        for chunk in group.chunks(batch_size) {
            let entries: Vec<RecordEntry> = chunk
                .iter()
                .map(|r| truth_entry(r, &(0..r.series.len()).collect::<Vec<_>>()))
                .collect();
            let batch = assemble_batch(&entries, model)?;
            let fx = forward(params, model, &batch)?;
            let targets = batch.targets.as_ref().expect("targets present");
            let out = loss_and_head_grads(&fx.phi_rate, &fx.phi_var, &fx.phi_init, targets, model.lambda);
            total += out.loss * chunk.len() as f64;
            count += chunk.len();
        }
    }
    Ok(total / count as f64)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Train a fresh model on `records`, holding out a validation split, and
/// return the best-validation checkpoint plus the log.
pub fn train(
    records: &[DatasetRecord],
    model: &ModelConfig,
    cfg: &TrainConfig,
    dataset_sha256: &str,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if records.is_empty() {
        return Err(InferError::Empty("training records"));
    }

    // Validation split from a dedicated stream.
    let mut split_rng = RandomSource::derived(cfg.seed, TRAIN_STREAM_BASE, ROLE_SPLIT, 0).rng();
    let mut order: Vec<usize> = (0..records.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut split_rng);
    let n_val = ((records.len() as f64 * cfg.val_fraction).round() as usize).min(records.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_recs: Vec<&DatasetRecord> = train_idx.iter().map(|&i| &records[i]).collect();
    let val_recs: Vec<&DatasetRecord> = val_idx.iter().map(|&i| &records[i]).collect();

    let init_seed = RandomSource::derived(cfg.seed, TRAIN_STREAM_BASE, ROLE_INIT, 0).stream
        ^ cfg.seed.rotate_left(17);
    let mut params = NetParams::init(model, init_seed);
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);

    let path_counts: Vec<usize> = train_recs.iter().map(|r| r.series.len()).collect();
    let started = Instant::now();

    let mut log = TrainLog {
        seed: cfg.seed,
        train_records: train_recs.len(),
        val_records: val_recs.len(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params = params.clone();
    let mut best_train_loss = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let epoch_started = Instant::now();
        let mut epoch_rng =
            RandomSource::derived(cfg.seed, TRAIN_STREAM_BASE, ROLE_EPOCH, epoch as u16).rng();
        let schedule = batch_schedule(&path_counts, cfg.batch_size, &mut epoch_rng);

        let mut train_loss = 0.0;
        let mut seen = 0usize;
        let mut drawn_counts = Vec::with_capacity(schedule.len());
        for (b, batch_plan) in schedule.iter().enumerate() {
            drawn_counts.push(batch_plan.path_count);
            let entries: Vec<RecordEntry> = batch_plan
                .record_indices
                .iter()
                .zip(&batch_plan.path_subsets)
                .map(|(&r, paths)| truth_entry(train_recs[r], paths))
                .collect();
            let batch = assemble_batch(&entries, model)?;
            let fx = forward(&params, model, &batch)?;
            let targets = batch.targets.as_ref().expect("targets present");
            let out =
                loss_and_head_grads(&fx.phi_rate, &fx.phi_var, &fx.phi_init, targets, model.lambda);
            if !out.loss.is_finite() {
                return Err(InferError::Diverged {
                    epoch,
                    batch: b,
                    loss: out.loss,
                });
            }
            train_loss += out.loss * entries.len() as f64;
            seen += entries.len();
            let grads = backward(
                &params,
                model,
                &batch,
                &fx,
                &out.d_phi_rate,
                &out.d_phi_var,
                &out.d_phi_init,
            );
            opt.step(&mut params, &grads);
        }
        train_loss /= seen as f64;

        let val_loss = if val_recs.is_empty() {
            train_loss
        } else {
            evaluate_loss(&params, model, &val_recs, cfg.batch_size)?
        };
        if !val_loss.is_finite() {
            return Err(InferError::Diverged {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }

        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            batches: schedule.len(),
            path_counts: drawn_counts,
            seconds: epoch_started.elapsed().as_secs_f64(),
        });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_params = params.clone();
            best_train_loss = train_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }

        if let Some(budget) = cfg.max_seconds {
            if started.elapsed().as_secs() >= budget {
                log.stopped_early = true;
                break;
            }
        }
    }

    let checkpoint = Checkpoint {
        config: model.clone(),
        meta: CheckpointMeta {
            epoch: log.best_epoch,
            train_loss: best_train_loss,
            val_loss: log.best_val_loss,
            dataset_sha256: dataset_sha256.to_string(),
            seed: cfg.seed,
        },
        params: best_params,
    };
    Ok(TrainOutcome { checkpoint, log })
}
