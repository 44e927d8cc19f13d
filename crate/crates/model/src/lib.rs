//! Toy causal decoder transformer.
//!
//! The model is a standard pre-norm decoder: learned token and position
//! embeddings, per-layer multi-head attention and feed-forward blocks, and
//! an output projection tied to the token embedding. Every attention layer
//! accepts an optional block of past key/values, which is how prefix tuning
//! plugs in: past positions take part in attention but consume no position
//! slots and no input tokens.

mod config;
mod error;
mod generate;
mod tokenizer;
mod transformer;

pub use config::ModelConfig;
pub use error::{ModelError, Result};
pub use generate::generate;
pub use tokenizer::{Tokenizer, BOS, EOS, PAD, SEP};
pub use transformer::{
    count_params, BoundModel, BoundPast, ForwardOptions, LinearHook, Mode, PastKeyValues,
    TransformerModel,
};
