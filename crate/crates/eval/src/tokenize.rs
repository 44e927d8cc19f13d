#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    /// Lowercase, split on whitespace, punctuation split into its own
    /// tokens ("Urban renewal?" -> ["urban", "renewal", "?"]).
    Word,
    /// One token per non-whitespace character.
    Char,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    #[cfg(test)]
    pub(crate) fn from_tokens(tokens: &[&str]) -> Self {
        Self {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            source_text: tokens.join(" "),
        }
    }
}

/// Deterministic, pure tokenization. A character counts as punctuation when
/// it is neither alphanumeric nor whitespace.
pub fn tokenize(text: &str, mode: TokenMode) -> TokenSeq {
    let tokens = match mode {
        TokenMode::Word => {
            let lower = text.to_lowercase();
            let mut tokens = Vec::new();
            let mut word = String::new();
            for c in lower.chars() {
                if c.is_whitespace() {
                    if !word.is_empty() {
                        tokens.push(std::mem::take(&mut word));
                    }
                } else if c.is_alphanumeric() {
                    word.push(c);
                } else {
                    if !word.is_empty() {
                        tokens.push(std::mem::take(&mut word));
                    }
                    tokens.push(c.to_string());
                }
            }
            if !word.is_empty() {
                tokens.push(word);
            }
            tokens
        }
        TokenMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    };
    TokenSeq { tokens, source_text: text.to_string() }
}
