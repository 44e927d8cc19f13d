use std::collections::HashMap;

use crate::tokenize::TokenSeq;

/// Epsilon substituted into the log for zero or undefined n-gram
/// precisions. Short answers make zero 4-gram matches common; without
/// smoothing most sentence scores would collapse to exactly 0.
const SMOOTH_EPS: f64 = 1e-9;

/// Clipped match and candidate counts for n = 1..=4, plus lengths. Pairs
/// pool by summation, which is what corpus-level Bleu does.
#[derive(Debug, Clone, Copy, Default)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub candidates: [u64; 4],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl BleuStats {
    pub fn of(candidate: &TokenSeq, reference: &TokenSeq) -> Self {
        let mut stats = Self {
            candidate_len: candidate.len() as u64,
            reference_len: reference.len() as u64,
            ..Self::default()
        };
        for n in 1..=4usize {
            let cand_counts = ngram_counts(&candidate.tokens, n);
            let ref_counts = ngram_counts(&reference.tokens, n);
            let mut matched = 0u64;
            let mut total = 0u64;
            for (gram, &count) in &cand_counts {
                total += count;
                if let Some(&limit) = ref_counts.get(gram) {
                    matched += count.min(limit);
                }
            }
            stats.matches[n - 1] = matched;
            stats.candidates[n - 1] = total;
        }
        stats
    }

    pub fn absorb(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.candidates[n] += other.candidates[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Geometric mean of the four modified precisions (epsilon-smoothed in
    /// the log) times the brevity penalty `min(1, e^{1 - r/c})`. An empty
    /// candidate scores 0.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            let p = if self.candidates[n] == 0 {
                0.0
            } else {
                self.matches[n] as f64 / self.candidates[n] as f64
            };
            log_sum += 0.25 * if p > 0.0 { p.ln() } else { SMOOTH_EPS.ln() };
        }
        let bp = if self.candidate_len >= self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        };
        bp * log_sum.exp()
    }
}

/// Sentence-level Bleu-4 with uniform weights 0.25.
pub fn bleu4(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    BleuStats::of(candidate, reference).score()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}
