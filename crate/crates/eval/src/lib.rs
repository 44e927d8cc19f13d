//! Text-generation metrics: Bleu-4 and Rouge-1/2/L.
//!
//! All scores are fractions in `[0, 1]`; reports format them as
//! percentages. Tokenization is part of the contract: metrics depend only
//! on [`TokenSeq`], never on raw strings.

mod bleu;
mod rouge;
mod tokenize;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu4, BleuStats};
pub use rouge::{rouge_l, rouge_n};
pub use tokenize::{tokenize, TokenMode, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// F1 is the harmonic mean, with the zero rule: 0 when P + R = 0.
    pub(crate) fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// One Table-row worth of metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub bleu4: f64,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    EmptyCorpus,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyCorpus => write!(f, "corpus evaluation needs at least one pair"),
        }
    }
}

impl std::error::Error for EvalError {}

/// Corpus-level evaluation over `(candidate, reference)` text pairs.
///
/// Bleu-4 pools clipped counts and lengths across the corpus (standard
/// corpus Bleu); Rouge scores are arithmetic means of the per-pair
/// precision/recall/f1.
pub fn corpus_eval(pairs: &[(String, String)], mode: TokenMode) -> Result<MetricScore, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let tokenized: Vec<(TokenSeq, TokenSeq)> = pairs
        .iter()
        .map(|(c, r)| (tokenize(c, mode), tokenize(r, mode)))
        .collect();

    let mut pooled = BleuStats::default();
    for (c, r) in &tokenized {
        pooled.absorb(&BleuStats::of(c, r));
    }
    let bleu4 = pooled.score();

    let mean = |f: &dyn Fn(&TokenSeq, &TokenSeq) -> RougeScore| {
        let n = tokenized.len() as f64;
        let mut acc = (0.0, 0.0, 0.0);
        for (c, r) in &tokenized {
            let s = f(c, r);
            acc.0 += s.precision;
            acc.1 += s.recall;
            acc.2 += s.f1;
        }
        RougeScore { precision: acc.0 / n, recall: acc.1 / n, f1: acc.2 / n }
    };
    Ok(MetricScore {
        bleu4,
        rouge1: mean(&|c, r| rouge_n(c, r, 1)),
        rouge2: mean(&|c, r| rouge_n(c, r, 2)),
        rouge_l: mean(&rouge_l),
    })
}
