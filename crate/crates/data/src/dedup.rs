use std::collections::HashSet;

use crate::parse::QAPair;

#[derive(Debug, Clone)]
pub struct DedupOptions {
    /// Questions whose token-3-gram Jaccard similarity reaches this are
    /// near-duplicates; the first occurrence wins.
    pub jaccard_threshold: f64,
    /// Answers with fewer tokens than this are dropped as erroneous.
    pub min_answer_tokens: usize,
}

impl Default for DedupOptions {
    fn default() -> Self {
        Self { jaccard_threshold: 0.8, min_answer_tokens: 3 }
    }
}

/// Lowercased, punctuation stripped, whitespace collapsed.
pub fn normalize_for_dedup(text: &str) -> String {
    let lower = text.to_lowercase();
    let stripped: String = lower
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Token 3-grams of the normalized question. Questions shorter than three
/// tokens contribute their whole token sequence as a single gram.
pub fn question_trigrams(question: &str) -> HashSet<String> {
    let normalized = normalize_for_dedup(question);
    let tokens: Vec<&str> = normalized.split_whitespace().collect();
    let mut grams = HashSet::new();
    if tokens.is_empty() {
        return grams;
    }
    if tokens.len() < 3 {
        grams.insert(tokens.join(" "));
    } else {
        for w in tokens.windows(3) {
            grams.insert(w.join(" "));
        }
    }
    grams
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn dedup(pairs: Vec<QAPair>) -> Vec<QAPair> {
    dedup_with(pairs, &DedupOptions::default())
}

/// Drops erroneous pairs (empty answer, answer equal to the question,
/// answer shorter than the token floor), exact duplicates on the
/// normalized question+answer, and near-duplicate questions by 3-gram
/// Jaccard. First occurrence wins throughout; the pass is idempotent.
pub fn dedup_with(pairs: Vec<QAPair>, opts: &DedupOptions) -> Vec<QAPair> {
    let mut kept: Vec<QAPair> = Vec::new();
    let mut kept_grams: Vec<HashSet<String>> = Vec::new();
    let mut seen_exact: HashSet<String> = HashSet::new();

    for pair in pairs {
        let q_norm = normalize_for_dedup(&pair.question);
        let a_norm = normalize_for_dedup(&pair.answer);
        if a_norm.is_empty()
            || a_norm == q_norm
            || a_norm.split_whitespace().count() < opts.min_answer_tokens
        {
            continue; // erroneous
        }
        let exact_key = format!("{q_norm}\u{1}{a_norm}");
        if !seen_exact.insert(exact_key) {
            continue; // exact duplicate
        }
        let grams = question_trigrams(&pair.question);
        if kept_grams.iter().any(|g| jaccard(g, &grams) >= opts.jaccard_threshold) {
            continue; // near duplicate
        }
        kept.push(pair);
        kept_grams.push(grams);
    }
    kept
}
