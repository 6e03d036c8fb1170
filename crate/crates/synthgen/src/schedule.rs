//! Per-epoch training schedule: shuffled record batches with path counts
//! drawn from the fixed arithmetic progression 1, 11, 21, ..., 291, 300
//! (capped at the available paths), and a fresh uniform path subset per
//! record each epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The path-count progression; static counts per batch keep the loss
/// scale stable within a batch.
pub fn path_count_progression() -> Vec<usize> {
    let mut p: Vec<usize> = (0..30).map(|k| 1 + 10 * k).collect();
    p.push(300);
    p
}

/// One scheduled batch: which records, how many paths, and which path
/// indices per record.
#[derive(Debug, Clone)]
pub struct ScheduledBatch {
    pub record_indices: Vec<usize>,
    pub path_count: usize,
    /// Selected path indices, one vector per record in `record_indices`.
    pub path_subsets: Vec<Vec<usize>>,
}

/// Build one epoch's schedule over records with the given per-record
/// path counts. Records are shuffled, chunked into batches of
/// `batch_size`, and each batch is assigned a count from the progression
/// (cycled from a random offset, each count capped at what the records
/// actually hold).
pub fn batch_schedule(
    record_path_counts: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ScheduledBatch> {
    assert!(batch_size > 0, "batch size must be positive");
    assert!(!record_path_counts.is_empty(), "dataset must be non-empty");

    let mut order: Vec<usize> = (0..record_path_counts.len()).collect();
    order.shuffle(rng);

    let progression = path_count_progression();
    let offset = rng.random_range(0..progression.len());

    order
        .chunks(batch_size)
        .enumerate()
        .map(|(b, chunk)| {
            let scheduled = progression[(offset + b) % progression.len()];
            let batch_cap = chunk
                .iter()
                .map(|&r| record_path_counts[r])
                .min()
                .expect("non-empty chunk");
            let path_count = scheduled.min(batch_cap);
            let path_subsets = chunk
                .iter()
                .map(|&r| {
                    let k = record_path_counts[r];
                    rand::seq::index::sample(rng, k, path_count.min(k)).into_vec()
                })
                .collect();
            ScheduledBatch {
                record_indices: chunk.to_vec(),
                path_count,
                path_subsets,
            }
        })
        .collect()
}
