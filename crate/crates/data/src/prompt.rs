/// The generation prompt, stored as a resource so tests can byte-compare
/// against it. `{text}` is the substitution point.
pub const PROMPT_TEMPLATE: &str = include_str!("prompt_template.txt");

/// Backticks inside the source text would close the template's `` ``...`` ``
/// fence, so each backtick is doubled on the way in. [`unescape_backticks`]
/// inverts this exactly.
pub fn escape_backticks(text: &str) -> String {
    text.replace('`', "``")
}

pub fn unescape_backticks(text: &str) -> String {
    text.replace("``", "`")
}

/// Renders the prompt for one paragraph of corpus text. Pure: identical
/// input yields an identical prompt.
pub fn build_prompt(text: &str) -> String {
    PROMPT_TEMPLATE.replace("{text}", &escape_backticks(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_contains_the_format_lines_and_text() {
        let p = build_prompt("X");
        assert!(p.contains("Question: []"));
        assert!(p.contains("Answer: []"));
        assert!(p.contains("The text: ``X``"));
    }

    #[test]
    fn substitution_is_pure() {
        assert_eq!(build_prompt("same text"), build_prompt("same text"));
    }

    #[test]
    fn backtick_escape_round_trips() {
        let cases = ["", "plain", "one ` tick", "fence ``` three", "`lead", "trail`"];
        for case in cases {
            assert_eq!(unescape_backticks(&escape_backticks(case)), case);
        }
    }

    #[test]
    fn backticks_are_doubled_in_the_prompt() {
        let p = build_prompt("code `x` here");
        assert!(p.contains("The text: ``code ``x`` here``"));
    }

    #[test]
    fn template_ends_with_the_text_line() {
        assert!(PROMPT_TEMPLATE.trim_end().ends_with("The text: ``{text}``"));
        assert!(PROMPT_TEMPLATE.starts_with("You are now a research expert"));
    }
}
