use std::path::{Path, PathBuf};

use peftlab_model::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Base,
    Prefix,
    Lora,
    Joint,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Base => "Base (no tuning)",
            Method::Prefix => "Prefix",
            Method::Lora => "LoRA",
            Method::Joint => "Prefix+LoRA",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "base" => Ok(Method::Base),
            "prefix" => Ok(Method::Prefix),
            "lora" => Ok(Method::Lora),
            "joint" => Ok(Method::Joint),
            other => Err(format!("unknown method '{other}' (base|prefix|lora|joint)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixBlock {
    pub pre_seq_len: usize,
    pub d_prefix: usize,
    pub mlp_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraBlock {
    pub r: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// `None` means the conventional default: wq and wv in every layer.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_source_length: usize,
    pub max_target_length: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataBlock {
    pub dataset: PathBuf,
    #[serde(default)]
    pub split_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeHeadline {
    #[default]
    F1,
    Recall,
}

/// Everything one run needs. JSON on disk, overridable from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub method: Method,
    #[serde(default)]
    pub prefix: Option<PrefixBlock>,
    #[serde(default)]
    pub lora: Option<LoraBlock>,
    pub train: TrainBlock,
    /// Joint runs use this for the prefix stage when present; the `train`
    /// block always drives the LoRA stage, matching the convention that
    /// stage-2 hyperparameters equal the standalone LoRA ones.
    #[serde(default)]
    pub prefix_train: Option<TrainBlock>,
    pub data: DataBlock,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rouge_headline: RougeHeadline,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&raw).map_err(|e| {
            HarnessError::Usage(format!("config file {} is invalid: {e}", path.display()))
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| HarnessError::Usage(e.to_string()))?;
        let usage = |msg: String| Err(HarnessError::Usage(msg));
        match self.method {
            Method::Prefix if self.prefix.is_none() => {
                return usage("method=prefix requires a prefix block".into())
            }
            Method::Lora if self.lora.is_none() => {
                return usage("method=lora requires a lora block".into())
            }
            Method::Joint if self.prefix.is_none() || self.lora.is_none() => {
                return usage("method=joint requires both prefix and lora blocks".into())
            }
            _ => {}
        }
        if let Some(p) = &self.prefix {
            if p.d_prefix == 0 || p.mlp_hidden == 0 {
                return usage("prefix d_prefix and mlp_hidden must be nonzero".into());
            }
        }
        let uses_prefix = matches!(self.method, Method::Prefix | Method::Joint);
        let prefix_len = if uses_prefix {
            self.prefix.as_ref().map_or(0, |p| p.pre_seq_len)
        } else {
            0
        };
        for (name, block) in [("train", Some(&self.train)), ("prefix_train", self.prefix_train.as_ref())]
        {
            let Some(block) = block else { continue };
            let budget = block.max_source_length + block.max_target_length + prefix_len;
            if budget > self.model.max_seq_len {
                return usage(format!(
                    "{name}: max_source_length + max_target_length + pre_seq_len = {budget} \
                     exceeds model.max_seq_len {}",
                    self.model.max_seq_len
                ));
            }
            if block.max_source_length < 3 {
                return usage(format!("{name}: max_source_length must be at least 3"));
            }
            if block.max_target_length < 1 {
                return usage(format!("{name}: max_target_length must be at least 1"));
            }
            if block.batch_size == 0 {
                return usage(format!("{name}: batch_size must be nonzero"));
            }
        }
        Ok(())
    }

    /// Sha256 of the canonical JSON form (serde_json sorts object keys).
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canon = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sub-seed for a named random stream, derived from the training seed
    /// so one `--seed` pins the whole run.
    pub fn stream_seed(&self, tag: u64) -> u64 {
        splitmix(self.train.seed ^ tag)
    }
}

fn splitmix(v: u64) -> u64 {
    let mut z = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SEED_STREAM_PREFIX_INIT: u64 = 1;
pub const SEED_STREAM_LORA_INIT: u64 = 2;

/// Named hyperparameter bundles. The paper-scale presets carry the
/// published fine-tuning settings; `toy` is the desk-scale default that
/// completes in minutes on a CPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    PaperPrefix,
    PaperLora,
    PaperJoint,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper-prefix" => Ok(Preset::PaperPrefix),
            "paper-lora" => Ok(Preset::PaperLora),
            "paper-joint" => Ok(Preset::PaperJoint),
            other => Err(format!(
                "unknown preset '{other}' (toy|paper-prefix|paper-lora|paper-joint)"
            )),
        }
    }
}

impl Preset {
    /// Overwrites the method and hyperparameter blocks; data, output, and
    /// seeds stay as configured. Paper presets raise `max_seq_len` when the
    /// published lengths do not fit the configured model.
    pub fn apply(self, config: &mut RunConfig) {
        match self {
            Preset::Toy => {
                // Sized so the joint adapters stay under 1% of the base
                // parameters while a CPU run still finishes in minutes.
                config.model.d_model = 256;
                config.model.n_layers = 4;
                config.model.n_heads = 4;
                config.model.d_ff = 512;
                config.model.max_seq_len = 256;
                config.prefix = Some(PrefixBlock { pre_seq_len: 8, d_prefix: 16, mlp_hidden: 4 });
                config.lora = Some(LoraBlock { r: 1, alpha: 4.0, dropout: 0.05, targets: None });
                config.train.learning_rate = 1e-2;
                config.train.batch_size = 8;
                config.train.epochs = 20;
                config.train.max_source_length = 64;
                config.train.max_target_length = 64;
            }
            Preset::PaperPrefix => {
                config.method = Method::Prefix;
                let d = config.model.d_model;
                config.prefix =
                    Some(PrefixBlock { pre_seq_len: 128, d_prefix: d, mlp_hidden: 4 * d });
                config.train = TrainBlock {
                    learning_rate: 2e-2,
                    batch_size: 16,
                    epochs: 5,
                    max_source_length: 128,
                    max_target_length: 256,
                    seed: config.train.seed,
                    early_stop_loss: config.train.early_stop_loss,
                };
                ensure_budget(config);
            }
            Preset::PaperLora => {
                config.method = Method::Lora;
                config.lora = Some(LoraBlock { r: 8, alpha: 32.0, dropout: 0.05, targets: None });
                config.train = TrainBlock {
                    learning_rate: 1e-4,
                    batch_size: 16,
                    epochs: 10,
                    max_source_length: 128,
                    max_target_length: 256,
                    seed: config.train.seed,
                    early_stop_loss: config.train.early_stop_loss,
                };
                ensure_budget(config);
            }
            Preset::PaperJoint => {
                Preset::PaperPrefix.apply(config);
                let prefix_train = config.train.clone();
                Preset::PaperLora.apply(config);
                config.method = Method::Joint;
                config.prefix_train = Some(prefix_train);
                ensure_budget(config);
            }
        }
    }
}

fn ensure_budget(config: &mut RunConfig) {
    let prefix_len = config.prefix.as_ref().map_or(0, |p| p.pre_seq_len);
    let mut needed = config.train.max_source_length + config.train.max_target_length + prefix_len;
    if let Some(pt) = &config.prefix_train {
        needed = needed.max(pt.max_source_length + pt.max_target_length + prefix_len);
    }
    if config.model.max_seq_len < needed {
        config.model.max_seq_len = needed;
    }
}
