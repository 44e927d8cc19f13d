use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::backend::{CompletionBackend, GenParams};
use crate::clean::CorpusDocument;
use crate::prompt::build_prompt;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Attempts per paragraph before recording a failure.
    pub max_attempts: u32,
    /// Base delay for exponential backoff between attempts; doubled per
    /// retry. Zero disables sleeping (used with the mock backend and in
    /// tests).
    pub backoff: Duration,
    /// Upper bound on in-flight requests.
    pub parallelism: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { max_attempts: 3, backoff: Duration::from_millis(250), parallelism: 4 }
    }
}

/// Per-paragraph result, reported in paragraph order.
#[derive(Debug, Clone, PartialEq)]
pub enum ParagraphOutcome {
    Completed { paragraph_index: usize, completion: String },
    Failed { paragraph_index: usize, error: String },
}

impl ParagraphOutcome {
    pub fn paragraph_index(&self) -> usize {
        match self {
            Self::Completed { paragraph_index, .. } | Self::Failed { paragraph_index, .. } => {
                *paragraph_index
            }
        }
    }
}

/// Requests one completion per paragraph of `doc`, in order. Failures are
/// recorded per paragraph, never fatal. Up to `opts.parallelism` requests
/// run concurrently; outcomes are reassembled by index so the output order
/// never depends on scheduling.
pub fn generate_qa(
    backend: &dyn CompletionBackend,
    doc: &CorpusDocument,
    params: &GenParams,
    opts: &GenerateOptions,
) -> Vec<ParagraphOutcome> {
    let n = doc.paragraphs.len();
    if n == 0 {
        return Vec::new();
    }
    let slots: Mutex<Vec<Option<ParagraphOutcome>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, n);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let outcome = complete_with_retry(backend, &doc.paragraphs[idx], idx, params, opts);
                slots.lock().expect("no poisoned workers")[idx] = Some(outcome);
            });
        }
    });

    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|slot| slot.expect("every index visited"))
        .collect()
}

fn complete_with_retry(
    backend: &dyn CompletionBackend,
    paragraph: &str,
    index: usize,
    params: &GenParams,
    opts: &GenerateOptions,
) -> ParagraphOutcome {
    let prompt = build_prompt(paragraph);
    let mut last_error = String::new();
    for attempt in 0..opts.max_attempts.max(1) {
        match backend.complete(&prompt, params) {
            Ok(completion) => {
                return ParagraphOutcome::Completed { paragraph_index: index, completion }
            }
            Err(e) => {
                last_error = e.to_string();
                if attempt + 1 < opts.max_attempts && !opts.backoff.is_zero() {
                    std::thread::sleep(opts.backoff * 2u32.pow(attempt));
                }
            }
        }
    }
    ParagraphOutcome::Failed { paragraph_index: index, error: last_error }
}
