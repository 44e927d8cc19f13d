#![allow(dead_code)]

use std::path::Path;

use peftlab::{DataBlock, LoraBlock, Method, PrefixBlock, RougeHeadline, RunConfig, TrainBlock};
use peftlab_data::{write_records, InstructionRecord, SplitManifest};
use peftlab_model::ModelConfig;

/// Fixed-width vocabulary: group and colour words all have one byte length
/// per slot, so every question and answer shares the same byte layout.
/// Aligned offsets plus the template-first answer keep the memorization
/// task within reach of small adapters on a frozen random base.
const GROUPS: [&str; 8] = ["alpha", "bravo", "delta", "gamma", "omega", "sigma", "theta", "kappa"];
const COLOURS: [&str; 8] = ["blue", "gold", "grey", "ruby", "jade", "teal", "pink", "cyan"];

pub fn toy_records(n: usize) -> Vec<InstructionRecord> {
    (0..n)
        .map(|i| {
            let g = i % 8;
            InstructionRecord {
                instruction: "qa:".into(),
                input: format!("box {i:02} group {} holds what?", GROUPS[g]),
                output: format!("the box holds {}.", COLOURS[g]),
                doc_id: format!("doc{}", i % 4),
            }
        })
        .collect()
}

/// Writes a dataset plus an identity split manifest (all records on the
/// requested side when `test_count` is zero).
pub fn write_toy_dataset(dir: &Path, n: usize, test_count: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let records = toy_records(n);
    let dataset = dir.join("dataset.jsonl");
    write_records(&dataset, &records).unwrap();
    let manifest = SplitManifest {
        seed: 0,
        train: (0..n - test_count).collect(),
        test: (n - test_count..n).collect(),
    };
    let manifest_path = dir.join("split.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    (dataset, manifest_path)
}

pub fn toy_config(dir: &Path, method: Method) -> RunConfig {
    let (dataset, manifest) = write_toy_dataset(dir, 8, 2);
    RunConfig {
        model: ModelConfig {
            vocab_size: 260,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 96,
            seed: 7,
        },
        method,
        prefix: Some(PrefixBlock { pre_seq_len: 4, d_prefix: 16, mlp_hidden: 32 }),
        lora: Some(LoraBlock { r: 4, alpha: 16.0, dropout: 0.0, targets: None }),
        train: TrainBlock {
            learning_rate: 5e-3,
            batch_size: 4,
            epochs: 2,
            max_source_length: 40,
            max_target_length: 40,
            seed: 11,
            early_stop_loss: None,
        },
        prefix_train: None,
        data: DataBlock { dataset, split_manifest: Some(manifest) },
        output_dir: dir.join("out"),
        rouge_headline: RougeHeadline::F1,
    }
}
