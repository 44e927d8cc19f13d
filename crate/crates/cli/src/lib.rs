//! Harness tying the workbench together: run configuration, dataset
//! batching, the train/eval/merge entry points, and table reporting.

pub mod accounting;
pub mod batch;
pub mod config;
pub mod report;
pub mod run;

pub use batch::{collate, encode_record, prompt_ids, EncodedSeq, TrainBatch};
pub use config::{
    DataBlock, LoraBlock, Method, Preset, PrefixBlock, RougeHeadline, RunConfig, TrainBlock,
};
pub use report::{format_params_m, format_pct, format_ratio_pct, report_table, EvalReport};
pub use run::{evaluate, merge, train, EvalOptions, SplitSide, TrainOutputs};

/// Usage errors exit with code 1, runtime errors with code 2.
#[derive(Debug)]
pub enum HarnessError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "{msg}"),
            Self::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<anyhow::Error> for HarnessError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
