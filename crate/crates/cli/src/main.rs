use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use peftlab::accounting::paper_scale;
use peftlab::{
    evaluate, merge, report_table, train, EvalOptions, EvalReport, HarnessError, Method, Preset,
    RunConfig, SplitSide,
};
use peftlab_data::{
    dedup_with, generate_qa, load_corpus_dir, parse_qa, split_dataset, split_dataset_by_count,
    split_dataset_by_doc, to_instruction, write_records, CleanOptions, CompletionBackend,
    DedupOptions, GenParams, GenerateOptions, HttpBackend, MockBackend, ParagraphOutcome,
    DEFAULT_INSTRUCTION,
};

const BACKEND_TOKEN_ENV: &str = "PEFTLAB_BACKEND_TOKEN";

#[derive(Parser)]
#[command(
    name = "peftlab",
    about = "Parameter-efficient fine-tuning workbench: dataset generation, \
             prefix/LoRA/joint training, metric evaluation, and reporting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a QA instruction dataset from a directory of .txt corpus files
    GenData(GenDataArgs),
    /// Train the configured method and write checkpoints
    Train(RunArgs),
    /// Generate answers for a split and score them against the gold answers
    Eval(EvalArgs),
    /// Fold adapters into standalone inference checkpoints
    Merge(MergeArgs),
    /// Render one or more evaluation reports as a table
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory of UTF-8 .txt files, one document each
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for dataset.jsonl and split.json
    #[arg(long)]
    out: PathBuf,
    /// Completion backend: "mock" or "http"
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Mock backend completions file (JSON: prompt-sha256 -> completion)
    #[arg(long)]
    mock_file: Option<PathBuf>,
    /// HTTP backend endpoint URL
    #[arg(long)]
    url: Option<String>,
    #[arg(long, default_value_t = 200)]
    min_paragraph_chars: usize,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    /// Instruction text attached to every record
    #[arg(long, default_value = DEFAULT_INSTRUCTION)]
    instruction: String,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Exact train-side record count (overrides --train-fraction)
    #[arg(long)]
    train_count: Option<usize>,
    /// Split whole documents instead of individual records
    #[arg(long, default_value_t = false)]
    split_by_doc: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    jaccard_threshold: f64,
    #[arg(long, default_value_t = 3)]
    min_answer_tokens: usize,
    /// Concurrent completion requests
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Attempts per paragraph before recording a failure
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration JSON
    #[arg(long)]
    config: PathBuf,
    /// Hyperparameter preset applied on top of the config file:
    /// toy | paper-prefix | paper-lora | paper-joint
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Master seed: sets both the model init seed and the training seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    #[arg(long)]
    lora_r: Option<usize>,
    #[arg(long)]
    lora_alpha: Option<f64>,
    #[arg(long)]
    lora_dropout: Option<f64>,
    #[arg(long)]
    pre_seq_len: Option<usize>,
    #[arg(long)]
    d_prefix: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_source_length: Option<usize>,
    #[arg(long)]
    max_target_length: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Which side of the split manifest to evaluate
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory holding the checkpoints (defaults to output_dir)
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Row label in the report
    #[arg(long)]
    label: Option<String>,
    /// Evaluate through the LoRA adapter path instead of merging first
    #[arg(long, default_value_t = false)]
    no_merge_lora: bool,
    /// Self-check mode: score each reference against itself
    #[arg(long, default_value_t = false)]
    oracle_generation: bool,
    /// Write runtime_seconds as 0.0 so reports are byte-reproducible
    #[arg(long, default_value_t = false)]
    zero_runtime: bool,
    /// Report output path (defaults to <checkpoint-dir>/report.json)
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// EvalReport JSON files, one row each
    #[arg(long, num_args = 1.., required_unless_present = "paper_scale")]
    inputs: Vec<PathBuf>,
    /// Write the rendered table here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the combined reports as a JSON array
    #[arg(long)]
    json: Option<PathBuf>,
    /// Print the paper-scale parameter accounting table instead
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(HarnessError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(HarnessError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> peftlab::Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => {
            let config = resolve_config(&args.config)?;
            train(&config)?;
            println!("checkpoints written to {}", config.output_dir.display());
            Ok(())
        }
        Command::Eval(args) => {
            let config = resolve_config(&args.config)?;
            let split: SplitSide = args
                .split
                .parse()
                .map_err(HarnessError::Usage)?;
            let opts = EvalOptions {
                split,
                merge_lora: !args.no_merge_lora,
                oracle_generation: args.oracle_generation,
                zero_runtime: args.zero_runtime,
                label: args.label,
                checkpoint_dir: args.checkpoint_dir,
                report_out: args.report_out,
            };
            let report = evaluate(&config, &opts)?;
            print!("{}", report_table(std::slice::from_ref(&report)));
            Ok(())
        }
        Command::Merge(args) => {
            let config = resolve_config(&args.config)?;
            let ckpt_dir = args
                .checkpoint_dir
                .unwrap_or_else(|| config.output_dir.clone());
            let out_dir = args.out_dir.unwrap_or_else(|| ckpt_dir.join("merged"));
            let written = merge(&config, &ckpt_dir, &out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Report(args) => report_cmd(args),
    }
}

fn resolve_config(args: &ConfigArgs) -> peftlab::Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(preset) = &args.preset {
        let preset: Preset = preset.parse().map_err(HarnessError::Usage)?;
        preset.apply(&mut config);
    }
    if let Some(method) = &args.method {
        config.method = method.parse::<Method>().map_err(HarnessError::Usage)?;
    }
    if let Some(seed) = args.seed {
        config.model.seed = seed;
        config.train.seed = seed;
        if let Some(pt) = config.prefix_train.as_mut() {
            pt.seed = seed;
        }
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(dataset) = &args.dataset {
        config.data.dataset = dataset.clone();
    }
    if let Some(manifest) = &args.split_manifest {
        config.data.split_manifest = Some(manifest.clone());
    }
    if let Some(r) = args.lora_r {
        lora_block(&mut config)?.r = r;
    }
    if let Some(alpha) = args.lora_alpha {
        lora_block(&mut config)?.alpha = alpha;
    }
    if let Some(dropout) = args.lora_dropout {
        lora_block(&mut config)?.dropout = dropout;
    }
    if let Some(v) = args.pre_seq_len {
        prefix_block(&mut config)?.pre_seq_len = v;
    }
    if let Some(v) = args.d_prefix {
        prefix_block(&mut config)?.d_prefix = v;
    }
    if let Some(v) = args.mlp_hidden {
        prefix_block(&mut config)?.mlp_hidden = v;
    }
    if let Some(v) = args.learning_rate {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.max_source_length {
        config.train.max_source_length = v;
    }
    if let Some(v) = args.max_target_length {
        config.train.max_target_length = v;
    }
    config.validate()?;
    Ok(config)
}

fn lora_block(config: &mut RunConfig) -> peftlab::Result<&mut peftlab::LoraBlock> {
    config.lora.as_mut().ok_or_else(|| {
        HarnessError::Usage("a --lora-* override needs a lora block in the config".into())
    })
}

fn prefix_block(config: &mut RunConfig) -> peftlab::Result<&mut peftlab::PrefixBlock> {
    config.prefix.as_mut().ok_or_else(|| {
        HarnessError::Usage("a prefix override needs a prefix block in the config".into())
    })
}

fn gen_data(args: GenDataArgs) -> peftlab::Result<()> {
    std::fs::create_dir_all(&args.out).context("creating output dir")?;
    let clean_opts = CleanOptions { min_paragraph_chars: args.min_paragraph_chars };
    let docs = load_corpus_dir(&args.corpus, &clean_opts).map_err(anyhow::Error::from)?;
    if docs.is_empty() {
        return Err(HarnessError::Usage(format!(
            "no .txt files found in {}",
            args.corpus.display()
        )));
    }

    let backend: Box<dyn CompletionBackend> = match args.backend.as_str() {
        "mock" => {
            let path = args.mock_file.as_ref().ok_or_else(|| {
                HarnessError::Usage("--backend mock requires --mock-file".into())
            })?;
            Box::new(MockBackend::from_file(path).map_err(anyhow::Error::from)?)
        }
        "http" => {
            let url = args
                .url
                .clone()
                .ok_or_else(|| HarnessError::Usage("--backend http requires --url".into()))?;
            let token = std::env::var(BACKEND_TOKEN_ENV).ok();
            Box::new(HttpBackend::new(url, token).map_err(anyhow::Error::from)?)
        }
        other => {
            return Err(HarnessError::Usage(format!(
                "unknown backend '{other}' (mock|http)"
            )))
        }
    };

    let params = GenParams { max_tokens: args.max_tokens, temperature: args.temperature };
    let gen_opts = GenerateOptions {
        max_attempts: args.max_attempts,
        parallelism: args.parallelism,
        ..Default::default()
    };
    let mut pairs = Vec::new();
    let mut stats = HashMap::<&str, usize>::new();
    for doc in &docs {
        *stats.entry("paragraphs").or_default() += doc.paragraphs.len();
        for outcome in generate_qa(backend.as_ref(), doc, &params, &gen_opts) {
            match outcome {
                ParagraphOutcome::Completed { completion, .. } => {
                    *stats.entry("completions").or_default() += 1;
                    let (mut p, warnings) = parse_qa(&completion, &doc.doc_id);
                    *stats.entry("warnings").or_default() += warnings.len();
                    pairs.append(&mut p);
                }
                ParagraphOutcome::Failed { paragraph_index, error } => {
                    *stats.entry("failures").or_default() += 1;
                    eprintln!(
                        "warning: doc {} paragraph {paragraph_index} failed: {error}",
                        doc.doc_id
                    );
                }
            }
        }
    }
    *stats.entry("parsed_pairs").or_default() += pairs.len();

    let dedup_opts = DedupOptions {
        jaccard_threshold: args.jaccard_threshold,
        min_answer_tokens: args.min_answer_tokens,
    };
    let kept = dedup_with(pairs, &dedup_opts);
    let records = to_instruction(&kept, &args.instruction);

    let dataset_path = args.out.join("dataset.jsonl");
    write_records(&dataset_path, &records).map_err(anyhow::Error::from)?;

    let split = if args.split_by_doc {
        split_dataset_by_doc(&records, args.train_fraction, args.seed)
    } else if let Some(count) = args.train_count {
        split_dataset_by_count(&records, count, args.seed)
    } else {
        split_dataset(&records, args.train_fraction, args.seed)
    };
    let (train, test, manifest) = split.map_err(anyhow::Error::from)?;
    let manifest_path = args.out.join("split.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .context("writing split manifest")?;

    println!(
        "docs={} paragraphs={} completions={} failures={} parsed_pairs={} kept={} train={} test={}",
        docs.len(),
        stats.get("paragraphs").unwrap_or(&0),
        stats.get("completions").unwrap_or(&0),
        stats.get("failures").unwrap_or(&0),
        stats.get("parsed_pairs").unwrap_or(&0),
        records.len(),
        train.len(),
        test.len(),
    );
    println!("wrote {}", dataset_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn report_cmd(args: ReportArgs) -> peftlab::Result<()> {
    if args.paper_scale {
        print!("{}", paper_scale().render());
        if args.inputs.is_empty() {
            return Ok(());
        }
    }
    let mut reports = Vec::new();
    for path in &args.inputs {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Usage(format!("cannot read report {}: {e}", path.display()))
        })?;
        let report: EvalReport = serde_json::from_str(&raw).map_err(|e| {
            HarnessError::Usage(format!("report {} is invalid: {e}", path.display()))
        })?;
        reports.push(report);
    }
    let table = report_table(&reports);
    print!("{table}");
    if let Some(out) = &args.out {
        std::fs::write(out, &table).context("writing table")?;
    }
    if let Some(json_out) = &args.json {
        std::fs::write(json_out, serde_json::to_string_pretty(&reports)?)
            .context("writing combined json")?;
    }
    Ok(())
}
