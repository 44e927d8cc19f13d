use std::collections::HashMap;

use crate::tokenize::TokenSeq;
use crate::RougeScore;

/// Rouge-N: clipped n-gram overlap. `recall = overlap / reference n-grams`,
/// `precision = overlap / candidate n-grams`; a side with fewer than `n`
/// tokens contributes a 0 ratio.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = counts(&candidate.tokens, n);
    let refs = counts(&reference.tokens, n);
    let overlap: u64 = refs
        .iter()
        .map(|(gram, &rc)| rc.min(cand.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = total(&candidate.tokens, n);
    let ref_total = total(&reference.tokens, n);
    let precision = ratio(overlap, cand_total);
    let recall = ratio(overlap, ref_total);
    RougeScore::from_pr(precision, recall)
}

/// Rouge-L: longest common subsequence via dynamic programming.
/// `recall = LCS / |reference|`, `precision = LCS / |candidate|`.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_len(&candidate.tokens, &reference.tokens) as u64;
    let precision = ratio(lcs, candidate.len() as u64);
    let recall = ratio(lcs, reference.len() as u64);
    RougeScore::from_pr(precision, recall)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut map: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *map.entry(gram).or_insert(0) += 1;
        }
    }
    map
}

fn total(tokens: &[String], n: usize) -> u64 {
    if tokens.len() >= n {
        (tokens.len() - n + 1) as u64
    } else {
        0
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}
