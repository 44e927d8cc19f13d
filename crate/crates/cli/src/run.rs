use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use peftlab_adapters::{
    freeze_base, joint_finetune, load_lora, load_model, load_prefix, save_lora, save_model,
    save_prefix, train_stage, AdapterStack, EpochLog, LoraAdapter, LoraConfig, PrefixAdapter,
    PrefixConfig, Stage, TrainParams,
};
use peftlab_data::{read_records, InstructionRecord, SplitManifest};
use peftlab_eval::{corpus_eval, TokenMode};
use peftlab_model::{count_params, Tokenizer, TransformerModel, EOS};
use serde::Serialize;

use crate::batch::{collate, encode_record, prompt_ids};
use crate::config::{
    Method, RougeHeadline, RunConfig, TrainBlock, SEED_STREAM_LORA_INIT, SEED_STREAM_PREFIX_INIT,
};
use crate::report::EvalReport;
use crate::{HarnessError, Result};

pub struct TrainOutputs {
    pub model_ckpt: PathBuf,
    pub adapter_ckpts: Vec<(String, PathBuf)>,
    pub logs: Vec<(String, Vec<EpochLog>)>,
}

fn train_params(block: &TrainBlock, lr: f64) -> TrainParams {
    TrainParams {
        learning_rate: lr,
        batch_size: block.batch_size,
        epochs: block.epochs,
        seed: block.seed,
        early_stop_loss: block.early_stop_loss,
    }
}

fn prefix_config(config: &RunConfig) -> Result<PrefixConfig> {
    let block = config
        .prefix
        .as_ref()
        .ok_or_else(|| HarnessError::Usage("prefix block missing".into()))?;
    Ok(PrefixConfig {
        pre_seq_len: block.pre_seq_len,
        d_prefix: block.d_prefix,
        mlp_hidden: block.mlp_hidden,
        seed: config.stream_seed(SEED_STREAM_PREFIX_INIT),
    })
}

fn lora_config(config: &RunConfig) -> Result<LoraConfig> {
    let block = config
        .lora
        .as_ref()
        .ok_or_else(|| HarnessError::Usage("lora block missing".into()))?;
    Ok(LoraConfig {
        r: block.r,
        alpha: block.alpha,
        dropout: block.dropout,
        targets: block
            .targets
            .clone()
            .unwrap_or_else(LoraConfig::default_targets),
        seed: config.stream_seed(SEED_STREAM_LORA_INIT),
    })
}

/// Dataset records for one side of the split. Without a manifest the whole
/// dataset is used.
fn load_split(config: &RunConfig, side: SplitSide) -> Result<Vec<InstructionRecord>> {
    let records = read_records(&config.data.dataset)
        .with_context(|| format!("loading dataset {}", config.data.dataset.display()))?;
    let Some(manifest_path) = &config.data.split_manifest else {
        return Ok(records);
    };
    let raw = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("loading split manifest {}", manifest_path.display()))?;
    let manifest: SplitManifest = serde_json::from_str(&raw)
        .with_context(|| format!("parsing split manifest {}", manifest_path.display()))?;
    let indices = match side {
        SplitSide::Train => manifest.train,
        SplitSide::Test => manifest.test,
        SplitSide::All => {
            let mut all = manifest.train;
            all.extend(manifest.test);
            all
        }
    };
    indices
        .into_iter()
        .map(|i| {
            records
                .get(i)
                .cloned()
                .ok_or_else(|| anyhow!("split manifest index {i} is outside the dataset").into())
        })
        .collect()
}

#[derive(Serialize)]
struct LogLine<'a> {
    stage: &'a str,
    epoch: usize,
    mean_loss: f64,
}

#[derive(Serialize)]
struct StackManifest {
    stages: Vec<peftlab_adapters::StageRecord>,
    checkpoints: Vec<(String, String)>,
    trainable_prefix_params: u64,
    trainable_lora_params: u64,
    trainable_total_params: u64,
    /// Parameters kept at inference time: the baked prefix table is smaller
    /// than the train-time table-plus-MLP form.
    retained_prefix_params: u64,
}

/// Runs the configured method over the train split and writes the model
/// and adapter checkpoints plus a per-epoch loss log into `output_dir`.
pub fn train(config: &RunConfig) -> Result<TrainOutputs> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).context("creating output dir")?;

    let mut model = TransformerModel::new(config.model.clone()).map_err(anyhow::Error::from)?;
    let model_ckpt = config.output_dir.join("model.ckpt");
    save_model(&model, &model_ckpt).context("writing model checkpoint")?;

    let mut outputs = TrainOutputs {
        model_ckpt,
        adapter_ckpts: Vec::new(),
        logs: Vec::new(),
    };
    if config.method == Method::Base {
        write_log(&config.output_dir, &outputs.logs)?;
        println!("method=base: evaluation-only baseline, no training performed");
        return Ok(outputs);
    }

    let records = load_split(config, SplitSide::Train)?;
    let tok = Tokenizer;
    let encoded: Vec<_> = records
        .iter()
        .map(|r| {
            encode_record(
                r,
                &tok,
                config.train.max_source_length,
                config.train.max_target_length,
            )
        })
        .collect();
    let examples = collate(&encoded).examples();

    match config.method {
        Method::Base => unreachable!("handled above"),
        Method::Prefix => {
            freeze_base(&mut model);
            let mut stack = AdapterStack {
                prefix: Some(
                    PrefixAdapter::new(prefix_config(config)?, model.config())
                        .map_err(anyhow::Error::from)?,
                ),
                ..Default::default()
            };
            let params = train_params(&config.train, config.train.learning_rate);
            let logs = train_stage(&model, &mut stack, Stage::Prefix, &examples, &params)
                .map_err(anyhow::Error::from)?;
            let path = config.output_dir.join("prefix.ckpt");
            save_prefix(stack.prefix.as_ref().unwrap(), &path, model.config())
                .map_err(anyhow::Error::from)?;
            outputs.adapter_ckpts.push(("prefix".into(), path));
            outputs.logs.push(("prefix".into(), logs));
        }
        Method::Lora => {
            freeze_base(&mut model);
            let mut stack = AdapterStack {
                lora: Some(
                    LoraAdapter::new(lora_config(config)?, &model).map_err(anyhow::Error::from)?,
                ),
                ..Default::default()
            };
            let params = train_params(&config.train, config.train.learning_rate);
            let logs = train_stage(&model, &mut stack, Stage::Lora, &examples, &params)
                .map_err(anyhow::Error::from)?;
            let path = config.output_dir.join("lora.ckpt");
            save_lora(stack.lora.as_ref().unwrap(), &path).map_err(anyhow::Error::from)?;
            outputs.adapter_ckpts.push(("lora".into(), path));
            outputs.logs.push(("lora".into(), logs));
        }
        Method::Joint => {
            let stage1 = config.prefix_train.as_ref().unwrap_or(&config.train);
            let (stack, logs) = joint_finetune(
                &mut model,
                &examples,
                &prefix_config(config)?,
                &lora_config(config)?,
                &train_params(stage1, stage1.learning_rate),
                &train_params(&config.train, config.train.learning_rate),
            )
            .map_err(anyhow::Error::from)?;
            let prefix = stack.prefix.as_ref().expect("joint run has a prefix");
            let lora = stack.lora.as_ref().expect("joint run has a lora adapter");
            let prefix_path = config.output_dir.join("prefix.ckpt");
            let lora_path = config.output_dir.join("lora.ckpt");
            save_prefix(prefix, &prefix_path, model.config()).map_err(anyhow::Error::from)?;
            save_lora(lora, &lora_path).map_err(anyhow::Error::from)?;

            let pc = prefix_config(config)?;
            let manifest = StackManifest {
                stages: stack.stages.clone(),
                checkpoints: vec![
                    ("prefix".into(), "prefix.ckpt".into()),
                    ("lora".into(), "lora.ckpt".into()),
                ],
                trainable_prefix_params: peftlab_adapters::prefix_param_count(
                    pc.pre_seq_len,
                    pc.d_prefix,
                    pc.mlp_hidden,
                    config.model.n_layers,
                    config.model.d_model,
                ) as u64,
                trainable_lora_params: lora.param_count() as u64,
                trainable_total_params: 0,
                retained_prefix_params: prefix.retained_param_count() as u64,
            };
            let manifest = StackManifest {
                trainable_total_params: manifest.trainable_prefix_params
                    + manifest.trainable_lora_params,
                ..manifest
            };
            let manifest_path = config.output_dir.join("stack_manifest.json");
            std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
                .context("writing stack manifest")?;

            outputs.adapter_ckpts.push(("prefix".into(), prefix_path));
            outputs.adapter_ckpts.push(("lora".into(), lora_path));
            outputs.logs = logs
                .into_iter()
                .zip(["prefix", "lora"])
                .map(|(l, s)| (s.to_string(), l))
                .collect();
        }
    }
    write_log(&config.output_dir, &outputs.logs)?;
    for (stage, logs) in &outputs.logs {
        for log in logs {
            println!("stage={stage} epoch={} mean_loss={:.6}", log.epoch, log.mean_loss);
        }
    }
    Ok(outputs)
}

fn write_log(dir: &Path, logs: &[(String, Vec<EpochLog>)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(dir.join("train_log.jsonl")).context("creating train log")?,
    );
    for (stage, entries) in logs {
        for e in entries {
            let line = serde_json::to_string(&LogLine {
                stage,
                epoch: e.epoch,
                mean_loss: e.mean_loss,
            })?;
            writeln!(file, "{line}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitSide {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(format!("unknown split '{other}' (train|test|all)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: SplitSide,
    /// Fold LoRA into the base weights before generation (the published
    /// inference path). Disable to run the adapter-path forward instead;
    /// greedy decoding makes both produce identical tokens.
    pub merge_lora: bool,
    /// Harness self-check: use each reference as its own candidate, which
    /// must score 1.0 everywhere.
    pub oracle_generation: bool,
    /// Write `runtime_seconds: 0.0` for byte-reproducible reports.
    pub zero_runtime: bool,
    pub label: Option<String>,
    pub checkpoint_dir: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: SplitSide::Test,
            merge_lora: true,
            oracle_generation: false,
            zero_runtime: false,
            label: None,
            checkpoint_dir: None,
            report_out: None,
        }
    }
}

/// Generates an answer for every record of the chosen split and scores the
/// candidates against the gold answers. Writes `report.json` next to the
/// checkpoints (or to `report_out`).
pub fn evaluate(config: &RunConfig, opts: &EvalOptions) -> Result<EvalReport> {
    config.validate()?;
    let started = Instant::now();
    let ckpt_dir = opts
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());

    let model_path = ckpt_dir.join("model.ckpt");
    let mut model = if model_path.exists() {
        load_model(&model_path).map_err(anyhow::Error::from)?
    } else {
        TransformerModel::new(config.model.clone()).map_err(anyhow::Error::from)?
    };
    if model.config() != &config.model {
        return Err(HarnessError::Runtime(anyhow!(
            "checkpoint model config does not match the run config"
        )));
    }

    let mut trainable: u64 = 0;
    let mut stack = AdapterStack::default();
    if matches!(config.method, Method::Prefix | Method::Joint) {
        let adapter = load_prefix(&ckpt_dir.join("prefix.ckpt"), model.config())
            .map_err(anyhow::Error::from)?;
        let c = adapter.config();
        trainable += peftlab_adapters::prefix_param_count(
            c.pre_seq_len,
            c.d_prefix,
            c.mlp_hidden,
            config.model.n_layers,
            config.model.d_model,
        ) as u64;
        stack.prefix = Some(adapter);
    }
    if matches!(config.method, Method::Lora | Method::Joint) {
        let mut adapter =
            load_lora(&ckpt_dir.join("lora.ckpt"), &model).map_err(anyhow::Error::from)?;
        trainable += adapter.param_count() as u64;
        if opts.merge_lora {
            adapter.merge(&mut model).map_err(anyhow::Error::from)?;
        } else {
            stack.lora = Some(adapter);
        }
    }

    let records = load_split(config, opts.split)?;
    if records.is_empty() {
        return Err(HarnessError::Runtime(anyhow!("no records in the chosen split")));
    }
    let tok = Tokenizer;
    let mut pairs: Vec<(String, String)> = Vec::with_capacity(records.len());
    for record in &records {
        let candidate = if opts.oracle_generation {
            record.output.clone()
        } else {
            let prompt = prompt_ids(record, &tok, config.train.max_source_length);
            let generated = stack
                .generate(&model, &prompt, config.train.max_target_length)
                .map_err(anyhow::Error::from)?;
            let mut tail: &[u32] = &generated[prompt.len()..];
            if tail.last() == Some(&EOS) {
                tail = &tail[..tail.len() - 1];
            }
            tok.decode(tail)
        };
        pairs.push((candidate, record.output.clone()));
    }

    let score = corpus_eval(&pairs, TokenMode::Word).map_err(anyhow::Error::from)?;
    let total = count_params(&config.model) as u64;
    let pick = |r: peftlab_eval::RougeScore| match config.rouge_headline {
        RougeHeadline::F1 => r.f1,
        RougeHeadline::Recall => r.recall,
    };
    let report = EvalReport {
        model_label: opts
            .label
            .clone()
            .unwrap_or_else(|| config.method.label().to_string()),
        total_params: total,
        trainable_params: trainable,
        trainable_ratio: trainable as f64 / total as f64,
        bleu4: score.bleu4,
        rouge1: pick(score.rouge1),
        rouge2: pick(score.rouge2),
        rouge_l: pick(score.rouge_l),
        runtime_seconds: if opts.zero_runtime {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        },
        config_hash: config.canonical_hash(),
    };
    let out_path = opts
        .report_out
        .clone()
        .unwrap_or_else(|| ckpt_dir.join("report.json"));
    std::fs::write(&out_path, serde_json::to_string_pretty(&report)?)
        .context("writing report")?;
    Ok(report)
}

/// Produces standalone inference artifacts: LoRA folded into the model
/// weights, and the prefix baked down to its plain table.
pub fn merge(config: &RunConfig, ckpt_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).context("creating merge output dir")?;
    let mut written = Vec::new();
    let mut model = load_model(&ckpt_dir.join("model.ckpt")).map_err(anyhow::Error::from)?;

    if matches!(config.method, Method::Lora | Method::Joint) {
        let mut adapter =
            load_lora(&ckpt_dir.join("lora.ckpt"), &model).map_err(anyhow::Error::from)?;
        adapter.merge(&mut model).map_err(anyhow::Error::from)?;
        println!(
            "merged LoRA ({} trainable params) into the base weights",
            adapter.param_count()
        );
    }
    let model_out = out_dir.join("model_merged.ckpt");
    save_model(&model, &model_out).map_err(anyhow::Error::from)?;
    written.push(model_out);

    if matches!(config.method, Method::Prefix | Method::Joint) {
        let mut adapter = load_prefix(&ckpt_dir.join("prefix.ckpt"), model.config())
            .map_err(anyhow::Error::from)?;
        adapter.bake().map_err(anyhow::Error::from)?;
        println!(
            "baked prefix: {} retained params",
            adapter.retained_param_count()
        );
        let prefix_out = out_dir.join("prefix_baked.ckpt");
        save_prefix(&adapter, &prefix_out, model.config()).map_err(anyhow::Error::from)?;
        written.push(prefix_out);
    }
    Ok(written)
}
