use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::records::InstructionRecord;

/// Which input indices landed on which side, for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle then split: `round(n * fraction)` records train, the
/// rest test.
pub fn split_dataset(
    records: &[InstructionRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<InstructionRecord>, Vec<InstructionRecord>, SplitManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction { value: train_fraction });
    }
    let train_count = (records.len() as f64 * train_fraction).round() as usize;
    split_dataset_by_count(records, train_count, seed)
}

/// Seeded shuffle then split at an exact train count.
pub fn split_dataset_by_count(
    records: &[InstructionRecord],
    train_count: usize,
    seed: u64,
) -> Result<(Vec<InstructionRecord>, Vec<InstructionRecord>, SplitManifest)> {
    let n = records.len();
    if n < 2 || train_count == 0 || train_count >= n {
        return Err(DataError::TooFewRecords { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_ix, test_ix) = order.split_at(train_count);
    let manifest = SplitManifest { seed, train: train_ix.to_vec(), test: test_ix.to_vec() };
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(train_ix), pick(test_ix), manifest))
}

/// Groups records by `doc_id` and assigns whole documents to one side, so
/// no source text straddles the split. Greedy fill of the train side until
/// it reaches `round(n * fraction)` records.
pub fn split_dataset_by_doc(
    records: &[InstructionRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<InstructionRecord>, Vec<InstructionRecord>, SplitManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction { value: train_fraction });
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match groups.iter_mut().find(|(id, _)| *id == r.doc_id) {
            Some((_, ix)) => ix.push(i),
            None => groups.push((r.doc_id.clone(), vec![i])),
        }
    }
    if groups.len() < 2 {
        return Err(DataError::TooFewRecords { n: groups.len() });
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = (records.len() as f64 * train_fraction).round() as usize;
    let mut train_ix: Vec<usize> = Vec::new();
    let mut test_ix: Vec<usize> = Vec::new();
    for (_, ix) in &groups {
        if train_ix.len() < target {
            train_ix.extend(ix);
        } else {
            test_ix.extend(ix);
        }
    }
    if test_ix.is_empty() {
        // Keep both sides nonempty by pushing the last document to test.
        let (_, last) = groups.last().expect("at least two groups");
        let last_set: std::collections::HashSet<usize> = last.iter().copied().collect();
        train_ix.retain(|i| !last_set.contains(i));
        test_ix = last.clone();
    }
    let manifest = SplitManifest { seed, train: train_ix.clone(), test: test_ix.clone() };
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(&train_ix), pick(&test_ix), manifest))
}
