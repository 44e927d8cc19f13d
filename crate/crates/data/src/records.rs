use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::parse::QAPair;

pub const DEFAULT_INSTRUCTION: &str = "Answer the following question about urban renewal.";

/// One dataset line: fixed field order so serialization is byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub doc_id: String,
}

/// Wraps QA pairs into instruction records; question and answer carry over
/// verbatim.
pub fn to_instruction(pairs: &[QAPair], instruction_text: &str) -> Vec<InstructionRecord> {
    assert!(!instruction_text.trim().is_empty(), "instruction text must be nonempty");
    pairs
        .iter()
        .map(|p| InstructionRecord {
            instruction: instruction_text.to_string(),
            input: p.question.clone(),
            output: p.answer.clone(),
            doc_id: p.doc_id.clone(),
        })
        .collect()
}

/// Writes JSON Lines, one record per line, UTF-8.
pub fn write_records(path: &Path, records: &[InstructionRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| DataError::BadRecord { line: 0, message: e.to_string() })?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstructionRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::BadRecord { line: i + 1, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}
