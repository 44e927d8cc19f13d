use std::path::Path;

use crate::error::Result;

/// One ingested source file, reduced to cleaned paragraphs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDocument {
    /// Stable id (the file stem); recorded on every derived QA pair.
    pub doc_id: String,
    pub paragraphs: Vec<String>,
    pub source_name: String,
}

#[derive(Debug, Clone)]
pub struct CleanOptions {
    /// Paragraphs shorter than this many characters are dropped.
    pub min_paragraph_chars: usize,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self { min_paragraph_chars: 200 }
    }
}

/// Splits raw text into paragraphs on blank lines, drops heading-like
/// lines (numbered headings, figure/table captions, short title-case
/// lines), strips non-printable characters, collapses whitespace, and
/// drops paragraphs below the length floor.
pub fn clean_text(raw: &str) -> Vec<String> {
    clean_text_with(raw, &CleanOptions::default())
}

pub fn clean_text_with(raw: &str, opts: &CleanOptions) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, out: &mut Vec<String>| {
        if block.is_empty() {
            return;
        }
        let joined = block.join(" ");
        block.clear();
        let printable: String = joined.chars().filter(|c| !c.is_control()).collect();
        let collapsed = printable.split_whitespace().collect::<Vec<_>>().join(" ");
        if collapsed.chars().count() >= opts.min_paragraph_chars {
            out.push(collapsed);
        }
    };
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut block, &mut paragraphs);
        } else if !is_heading_line(line) {
            block.push(line);
        }
    }
    flush(&mut block, &mut paragraphs);
    paragraphs
}

fn is_heading_line(line: &str) -> bool {
    let lower = line.to_lowercase();
    if lower.starts_with("figure") || lower.starts_with("table") {
        return true;
    }
    if is_numbered_heading(line) {
        return true;
    }
    is_short_title_case(line)
}

/// "3.2 Some Heading" or "4. Results" style lines.
fn is_numbered_heading(line: &str) -> bool {
    let mut chars = line.chars().peekable();
    let mut saw_digit = false;
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            saw_digit = true;
            chars.next();
        } else if c == '.' {
            chars.next();
        } else {
            break;
        }
    }
    saw_digit && matches!(chars.next(), Some(c) if c.is_whitespace())
}

/// At most four words, all starting with an uppercase letter.
fn is_short_title_case(line: &str) -> bool {
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.is_empty() || words.len() > 4 {
        return false;
    }
    words
        .iter()
        .all(|w| w.chars().next().is_some_and(|c| c.is_uppercase()))
}

/// Reads every `.txt` file in `dir` (sorted by name, so runs are
/// reproducible) into cleaned documents. Files yielding no paragraphs are
/// kept with an empty list so provenance stays visible.
pub fn load_corpus_dir(dir: &Path, opts: &CleanOptions) -> Result<Vec<CorpusDocument>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    names.sort();
    let mut docs = Vec::with_capacity(names.len());
    for path in names {
        let raw = std::fs::read_to_string(&path)?;
        let source_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let doc_id = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| source_name.clone());
        docs.push(CorpusDocument {
            doc_id,
            paragraphs: clean_text_with(&raw, opts),
            source_name,
        });
    }
    Ok(docs)
}
