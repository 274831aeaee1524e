//! Tokenization shared by every metric and by the learned scorer.
//!
//! Text is lowercased, punctuation characters become standalone tokens, and
//! the result is split on whitespace. Applying one rule everywhere keeps
//! metric comparisons consistent with each other.

/// Separator inserted between context turns when a multi-turn context is
/// flattened into one token stream.
pub const TURN_SEPARATOR: &str = "<eou>";

pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_ascii_punctuation() || (!ch.is_ascii() && is_unicode_punct(ch)) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

fn is_unicode_punct(ch: char) -> bool {
    matches!(
        ch,
        '，' | '。' | '！' | '？' | '、' | '；' | '：' | '“' | '”' | '‘' | '’' | '…' | '—'
    )
}

/// Tokenizes each turn and joins them with [`TURN_SEPARATOR`].
pub fn tokenize_turns<S: AsRef<str>>(turns: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            out.push(TURN_SEPARATOR.to_owned());
        }
        out.extend(tokenize(turn.as_ref()));
    }
    out
}
