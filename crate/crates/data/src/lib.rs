//! Self-instruct QA dataset pipeline.
//!
//! Corpus text goes in one end, an instruction-formatted JSONL dataset and
//! a train/test split manifest come out the other:
//!
//! clean -> prompt -> complete (HTTP or mock) -> parse QA -> dedup ->
//! instruction records -> split.
//!
//! Everything downstream of the backend is pure, and the mock backend is
//! deterministic, so a fixed seed makes the whole pipeline byte-reproducible.

mod backend;
mod clean;
mod dedup;
mod error;
mod generate;
mod parse;
mod prompt;
mod records;
mod split;

pub use backend::{CompletionBackend, GenParams, HttpBackend, MockBackend};
pub use clean::{clean_text, clean_text_with, load_corpus_dir, CleanOptions, CorpusDocument};
pub use dedup::{dedup, dedup_with, normalize_for_dedup, question_trigrams, DedupOptions};
pub use error::{DataError, Result};
pub use generate::{generate_qa, GenerateOptions, ParagraphOutcome};
pub use parse::{parse_qa, ParseWarning, QAPair};
pub use prompt::{build_prompt, escape_backticks, unescape_backticks, PROMPT_TEMPLATE};
pub use records::{
    read_records, to_instruction, write_records, InstructionRecord, DEFAULT_INSTRUCTION,
};
pub use split::{
    split_dataset, split_dataset_by_count, split_dataset_by_doc, SplitManifest,
};
