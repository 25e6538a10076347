use serde::{Deserialize, Serialize};

/// Characters split off as standalone tokens.
pub const SPLIT_PUNCTUATION: &[char] = &['.', ',', '!', '?', ':', ';', '"', '(', ')', '[', ']'];

/// Lowercased tokens of one caption.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenizedCaption {
    tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

impl From<Vec<String>> for TokenizedCaption {
    /// Re-tokenizes each piece so the token invariants hold.
    fn from(pieces: Vec<String>) -> Self {
        tokenize(&pieces.join(" "))
    }
}

/// Han ideographs, kana and CJK/fullwidth punctuation: one token per
/// codepoint.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F      // CJK symbols and punctuation
        | 0x3040..=0x30FF    // hiragana, katakana
        | 0x3400..=0x4DBF    // extension A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF00..=0xFFEF    // halfwidth and fullwidth forms
        | 0x20000..=0x2FA1F  // extensions B-F, compatibility supplement
    )
}

/// Lowercases, splits on Unicode whitespace, and emits each character of
/// [`SPLIT_PUNCTUATION`] and each CJK codepoint as its own token.
pub fn tokenize(text: &str) -> TokenizedCaption {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if SPLIT_PUNCTUATION.contains(&ch) || is_cjk(ch) {
            flush(&mut current, &mut tokens);
            tokens.extend(std::iter::once(ch.to_lowercase().collect::<String>()));
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    flush(&mut current, &mut tokens);
    TokenizedCaption { tokens }
}
