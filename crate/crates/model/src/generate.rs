use peftlab_autograd::Graph;

use crate::error::{ModelError, Result};
use crate::tokenizer::EOS;
use crate::transformer::{ForwardOptions, LinearHook, PastKeyValues, TransformerModel};

/// Greedy decoding: appends the argmax token each step, stopping at EOS,
/// `max_new_tokens`, or the sequence-length budget. Returns the prompt plus
/// everything generated (including the EOS, when one is produced).
///
/// A prefix past is bound per step from the same precomputed blocks, so the
/// prefix itself is evaluated only once by the caller.
pub fn generate(
    model: &TransformerModel,
    prompt: &[u32],
    max_new_tokens: usize,
    past: Option<&PastKeyValues>,
    mut hook: Option<&mut dyn LinearHook>,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let max_seq = model.config().max_seq_len;
    let prefix_len = past.map_or(0, |p| p.prefix_len);
    let mut seq = prompt.to_vec();
    for _ in 0..max_new_tokens {
        if prefix_len + seq.len() >= max_seq {
            break; // no room left to extend
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let bound_past = past.map(|p| p.bind(&mut g));
        let step_hook: Option<&mut dyn LinearHook> = match hook {
            Some(ref mut h) => Some(&mut **h),
            None => None,
        };
        let logits = bound.forward(&mut g, &seq, bound_past.as_ref(), &ForwardOptions::eval(), step_hook)?;
        let vocab = g.shape(logits)[1];
        let last = &g.value(logits)[(seq.len() - 1) * vocab..seq.len() * vocab];
        let next = argmax(last) as u32;
        seq.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(seq)
}

/// First index of the maximum value; deterministic under ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
