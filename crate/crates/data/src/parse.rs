use std::sync::OnceLock;

use regex::Regex;

/// One parsed question-answer pair with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub doc_id: String,
    /// Byte offsets into the completion: from the question marker to the
    /// end of the answer segment.
    pub raw_span: (usize, usize),
    /// False when the question does not end with `?`; such pairs are kept
    /// but flagged for review.
    pub interrogative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub doc_id: String,
    pub message: String,
    pub span: (usize, usize),
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(question|answer)\s*\d*\s*:").expect("valid regex"))
}

#[derive(Debug)]
struct Marker {
    is_question: bool,
    start: usize,
    content_start: usize,
}

/// Extracts QA pairs from a completion.
///
/// Scans for `Question:` / `Answer:` markers (case-insensitive, optional
/// numbering like `Question 1:`); the content of each marker runs to the
/// next marker or end of text, trimmed, with one surrounding `[...]` pair
/// stripped. Each question binds to the nearest following answer; a
/// question superseded by another question, a trailing unpaired question,
/// an orphan answer, and empty contents are all dropped with warnings.
/// Never fails: unparseable input just yields no pairs and a warning.
pub fn parse_qa(completion: &str, doc_id: &str) -> (Vec<QAPair>, Vec<ParseWarning>) {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    let warn = |warnings: &mut Vec<ParseWarning>, message: String, span: (usize, usize)| {
        warnings.push(ParseWarning { doc_id: doc_id.to_string(), message, span });
    };

    let markers: Vec<Marker> = marker_regex()
        .find_iter(completion)
        .map(|m| Marker {
            is_question: completion[m.start()..m.end()]
                .to_lowercase()
                .starts_with("question"),
            start: m.start(),
            content_start: m.end(),
        })
        .collect();
    if markers.is_empty() {
        if !completion.trim().is_empty() {
            warn(
                &mut warnings,
                "no Question/Answer markers found".into(),
                (0, completion.len()),
            );
        }
        return (pairs, warnings);
    }

    let mut pending: Option<(String, usize)> = None; // (question, marker start)
    for (i, marker) in markers.iter().enumerate() {
        let segment_end = markers.get(i + 1).map_or(completion.len(), |m| m.start);
        let content = strip_brackets(completion[marker.content_start..segment_end].trim());
        if marker.is_question {
            if let Some((_, start)) = pending.take() {
                warn(
                    &mut warnings,
                    "question superseded by a later question before any answer".into(),
                    (start, marker.start),
                );
            }
            if content.is_empty() {
                warn(&mut warnings, "empty question".into(), (marker.start, segment_end));
            } else {
                pending = Some((content, marker.start));
            }
        } else {
            match pending.take() {
                Some((question, q_start)) => {
                    if content.is_empty() {
                        warn(
                            &mut warnings,
                            "question dropped: its answer is empty".into(),
                            (q_start, segment_end),
                        );
                    } else {
                        let interrogative = question.trim_end().ends_with('?');
                        pairs.push(QAPair {
                            question,
                            answer: content,
                            doc_id: doc_id.to_string(),
                            raw_span: (q_start, segment_end),
                            interrogative,
                        });
                    }
                }
                None => {
                    warn(
                        &mut warnings,
                        "answer with no preceding question".into(),
                        (marker.start, segment_end),
                    );
                }
            }
        }
    }
    if let Some((_, start)) = pending {
        warn(
            &mut warnings,
            "trailing question with no answer".into(),
            (start, completion.len()),
        );
    }
    (pairs, warnings)
}

/// Strips one `[` `]` pair wrapping the whole content.
fn strip_brackets(s: &str) -> String {
    let t = s.trim();
    if t.len() >= 2 && t.starts_with('[') && t.ends_with(']') {
        t[1..t.len() - 1].trim().to_string()
    } else {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_string_yields_nothing() {
        let (pairs, warnings) = parse_qa("", "d");
        assert!(pairs.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn markerless_text_warns_once() {
        let (pairs, warnings) = parse_qa("just some prose", "d");
        assert!(pairs.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn question_binds_to_nearest_following_answer() {
        let (pairs, warnings) = parse_qa("Question: [Q1] Question: [Q2] Answer: [A]", "d");
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].question, "Q2");
        assert_eq!(pairs[0].answer, "A");
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].message.contains("superseded"));
    }

    #[test]
    fn orphan_answer_is_warned() {
        let (pairs, warnings) = parse_qa("Answer: [lost]", "d");
        assert!(pairs.is_empty());
        assert!(warnings[0].message.contains("no preceding question"));
    }

    #[test]
    fn trailing_question_is_warned() {
        let (pairs, warnings) = parse_qa("Question: [Q?] Answer: [A] Question: [dangling?]", "d");
        assert_eq!(pairs.len(), 1);
        assert!(warnings.iter().any(|w| w.message.contains("trailing")));
    }

    #[test]
    fn numbering_case_and_brackets_are_tolerated() {
        let text = "question 1: what is a city?\nANSWER 1: [A settlement.]\nQuestion 2: why?\nanswer: Because.";
        let (pairs, warnings) = parse_qa(text, "d");
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].question, "what is a city?");
        assert_eq!(pairs[0].answer, "A settlement.");
        assert_eq!(pairs[1].question, "why?");
        assert_eq!(pairs[1].answer, "Because.");
        assert!(warnings.is_empty());
    }

    #[test]
    fn non_interrogative_questions_are_kept_but_flagged() {
        let (pairs, _) = parse_qa("Question: Describe the site. Answer: It is dense.", "d");
        assert_eq!(pairs.len(), 1);
        assert!(!pairs[0].interrogative);
        let (pairs, _) = parse_qa("Question: Is it dense? Answer: Yes.", "d");
        assert!(pairs[0].interrogative);
    }

    #[test]
    fn pair_count_never_exceeds_answer_markers() {
        let texts = [
            "Question: a? Answer: b. Question: c? Answer: d.",
            "Answer: x Answer: y Question: z?",
            "Question: q1? Question: q2? Answer: a",
        ];
        for text in texts {
            let answers = text.to_lowercase().matches("answer").count();
            let (pairs, _) = parse_qa(text, "d");
            assert!(pairs.len() <= answers, "{text}");
        }
    }

    #[test]
    fn spans_point_into_the_completion() {
        let text = "intro Question: [Q?] Answer: [A] outro";
        let (pairs, _) = parse_qa(text, "d");
        let (start, end) = pairs[0].raw_span;
        let slice = &text[start..end];
        assert!(slice.starts_with("Question:"));
        assert!(slice.contains("[A]"));
    }

    #[test]
    fn doc_id_is_carried_through() {
        let (pairs, _) = parse_qa("Question: q? Answer: a.", "the-doc");
        assert_eq!(pairs[0].doc_id, "the-doc");
    }
}
