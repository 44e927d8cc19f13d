/// Byte-level tokenizer: UTF-8 bytes map to ids 0..=255, specials sit just
/// above. Callers insert specials themselves; `encode` never emits them.
pub const PAD: u32 = 256;
pub const BOS: u32 = 257;
pub const EOS: u32 = 258;
pub const SEP: u32 = 259;

/// 256 byte ids plus PAD, BOS, EOS, SEP.
pub(crate) const MIN_VOCAB: usize = 260;

#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        bytes.iter().map(|&b| u32::from(b)).collect()
    }

    /// Exact inverse of `encode_bytes` for byte ids; special ids map to the
    /// placeholder strings used by `decode`.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                0..=255 => out.push(id as u8),
                _ => out.extend_from_slice(special_placeholder(id).as_bytes()),
            }
        }
        out
    }

    /// Lossy string form: byte runs decode as UTF-8 (invalid sequences become
    /// U+FFFD), specials decode to placeholder glyphs like `<pad>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }
}

fn special_placeholder(id: u32) -> &'static str {
    match id {
        PAD => "<pad>",
        BOS => "<bos>",
        EOS => "<eos>",
        SEP => "<sep>",
        _ => "<unk>",
    }
}
