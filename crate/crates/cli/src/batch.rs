use peftlab_adapters::TrainExample;
use peftlab_data::InstructionRecord;
use peftlab_model::{Tokenizer, BOS, EOS, PAD, SEP};

/// One encoded sequence before collation. Layout:
/// `BOS, instruction, SEP, question, SEP, answer, EOS` — the mask is true
/// exactly on the answer tokens and the EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

/// The source segment (`BOS` through the second `SEP`), truncated to
/// `max_source` tokens. Truncation keeps the head and forces the final
/// token back to SEP so the model always sees the boundary marker.
pub fn prompt_ids(record: &InstructionRecord, tok: &Tokenizer, max_source: usize) -> Vec<u32> {
    let mut ids = vec![BOS];
    ids.extend(tok.encode(&record.instruction));
    ids.push(SEP);
    ids.extend(tok.encode(&record.input));
    ids.push(SEP);
    if ids.len() > max_source {
        ids.truncate(max_source);
        *ids.last_mut().expect("max_source >= 1") = SEP;
    }
    ids
}

/// Source plus the answer segment (`answer tokens, EOS`, truncated to
/// `max_target` tokens including the EOS).
pub fn encode_record(
    record: &InstructionRecord,
    tok: &Tokenizer,
    max_source: usize,
    max_target: usize,
) -> EncodedSeq {
    let source = prompt_ids(record, tok, max_source);
    let mut answer = tok.encode(&record.output);
    answer.truncate(max_target.saturating_sub(1));
    answer.push(EOS);

    let mut ids = source.clone();
    ids.extend(&answer);
    let mut mask = vec![false; source.len()];
    mask.extend(std::iter::repeat(true).take(answer.len()));
    EncodedSeq { ids, mask }
}

/// Padded batch form: rectangular id and mask arrays plus true lengths.
/// PAD positions carry `mask = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub token_ids: Vec<Vec<u32>>,
    pub loss_mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

pub fn collate(rows: &[EncodedSeq]) -> TrainBatch {
    let width = rows.iter().map(|r| r.ids.len()).max().unwrap_or(0);
    let mut token_ids = Vec::with_capacity(rows.len());
    let mut loss_mask = Vec::with_capacity(rows.len());
    let mut lengths = Vec::with_capacity(rows.len());
    for row in rows {
        let mut ids = row.ids.clone();
        let mut mask = row.mask.clone();
        lengths.push(ids.len());
        ids.resize(width, PAD);
        mask.resize(width, false);
        token_ids.push(ids);
        loss_mask.push(mask);
    }
    TrainBatch { token_ids, loss_mask, lengths }
}

impl TrainBatch {
    /// Next-token training views: position `i` of the input predicts token
    /// `i + 1`, and the loss mask moves with the prediction targets. PAD
    /// columns are trimmed away using the stored lengths.
    pub fn examples(&self) -> Vec<TrainExample> {
        self.token_ids
            .iter()
            .zip(&self.loss_mask)
            .zip(&self.lengths)
            .map(|((ids, mask), &len)| {
                let ids = &ids[..len];
                let mask = &mask[..len];
                TrainExample {
                    input_ids: ids[..len - 1].to_vec(),
                    target_ids: ids[1..].iter().map(|&t| t as usize).collect(),
                    loss_mask: mask[1..].to_vec(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(q: &str, a: &str) -> InstructionRecord {
        InstructionRecord {
            instruction: "Answer briefly.".into(),
            input: q.into(),
            output: a.into(),
            doc_id: "d".into(),
        }
    }

    #[test]
    fn layout_is_bos_instr_sep_question_sep_answer_eos() {
        let tok = Tokenizer;
        let enc = encode_record(&record("Q", "A"), &tok, 64, 16);
        let expect: Vec<u32> = [BOS]
            .into_iter()
            .chain(tok.encode("Answer briefly."))
            .chain([SEP])
            .chain(tok.encode("Q"))
            .chain([SEP])
            .chain(tok.encode("A"))
            .chain([EOS])
            .collect();
        assert_eq!(enc.ids, expect);

        // Mask: false before the first answer token, true from there on.
        let first_true = enc.mask.iter().position(|&m| m).unwrap();
        let sep_count = enc.ids[..first_true].iter().filter(|&&t| t == SEP).count();
        assert_eq!(sep_count, 2, "answer starts right after the second SEP");
        assert!(enc.mask[first_true..].iter().all(|&m| m));
        assert!(!enc.mask[..first_true].iter().any(|&m| m));
    }

    #[test]
    fn source_truncation_preserves_the_boundary_sep() {
        let tok = Tokenizer;
        let long_q = "q".repeat(100);
        let ids = prompt_ids(&record(&long_q, "A"), &tok, 20);
        assert_eq!(ids.len(), 20);
        assert_eq!(*ids.last().unwrap(), SEP);
        assert_eq!(ids[0], BOS);
    }

    #[test]
    fn target_truncation_keeps_the_eos() {
        let tok = Tokenizer;
        let enc = encode_record(&record("Q", &"a".repeat(50)), &tok, 64, 8);
        let answer_len = enc.mask.iter().filter(|&&m| m).count();
        assert_eq!(answer_len, 8);
        assert_eq!(*enc.ids.last().unwrap(), EOS);
    }

    #[test]
    fn collation_pads_and_masks_off_the_padding() {
        let tok = Tokenizer;
        let rows = vec![
            encode_record(&record("Q", "A"), &tok, 64, 16),
            encode_record(&record("longer question", "much longer answer"), &tok, 64, 16),
        ];
        let batch = collate(&rows);
        let width = batch.token_ids[0].len();
        assert!(batch.token_ids.iter().all(|r| r.len() == width));
        assert_eq!(batch.lengths[0], rows[0].ids.len());
        for (row, mask) in batch.token_ids.iter().zip(&batch.loss_mask) {
            for (t, m) in row.iter().zip(mask) {
                if *t == PAD {
                    assert!(!m, "PAD position carries loss");
                }
            }
        }
    }

    #[test]
    fn examples_shift_by_one() {
        let tok = Tokenizer;
        let batch = collate(&[encode_record(&record("Q", "AB"), &tok, 64, 16)]);
        let ex = &batch.examples()[0];
        assert_eq!(ex.input_ids.len(), ex.target_ids.len());
        assert_eq!(ex.input_ids.len(), batch.lengths[0] - 1);
        // Every target is the next input token.
        let full: Vec<u32> = batch.token_ids[0][..batch.lengths[0]].to_vec();
        for (i, &t) in ex.target_ids.iter().enumerate() {
            assert_eq!(t, full[i + 1] as usize);
        }
        // Masked targets are exactly the answer tokens plus EOS.
        let masked: Vec<usize> = ex
            .target_ids
            .iter()
            .zip(&ex.loss_mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect();
        let expect: Vec<usize> = tok
            .encode("AB")
            .into_iter()
            .map(|t| t as usize)
            .chain([EOS as usize])
            .collect();
        assert_eq!(masked, expect);
    }
}
