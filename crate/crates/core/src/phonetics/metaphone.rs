//! Original (1990) Metaphone.
//!
//! Input is uppercased, decomposed (NFKD) and reduced to ASCII letters, so
//! apostrophes, digits and diacritics never reach the rules. Codes are not
//! truncated unless a maximum length is configured.

use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metaphone {
    pub max_len: Option<usize>,
}

impl Metaphone {
    pub fn untruncated() -> Self {
        Self { max_len: None }
    }

    pub fn truncated(max_len: usize) -> Self {
        Self {
            max_len: Some(max_len),
        }
    }

    pub fn encode(&self, word: &str) -> String {
        let mut code = encode_letters(&letters(word));
        if let Some(max) = self.max_len {
            code.truncate(max);
        }
        code
    }
}

/// Untruncated Metaphone code of `word`.
pub fn metaphone(word: &str) -> String {
    Metaphone::untruncated().encode(word)
}

fn letters(word: &str) -> Vec<u8> {
    word.to_uppercase()
        .nfkd()
        .filter(char::is_ascii_uppercase)
        .map(|c| c as u8)
        .collect()
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'A' | b'E' | b'I' | b'O' | b'U')
}

fn is_front_vowel(c: u8) -> bool {
    matches!(c, b'I' | b'E' | b'Y')
}

fn encode_letters(word: &[u8]) -> String {
    let skip_first = [b"KN", b"GN", b"PN", b"WR", b"AE"]
        .iter()
        .any(|prefix| word.starts_with(*prefix));
    let w = if skip_first { &word[1..] } else { word };

    let at = |i: usize| w.get(i).copied();
    let mut code = String::with_capacity(w.len());
    let mut i = 0;
    while i < w.len() {
        let c = w[i];
        let next = at(i + 1);
        let after = at(i + 2);

        // doubled letters collapse, except CC
        if next == Some(c) && c != b'C' {
            i += 1;
            continue;
        }

        match c {
            b'A' | b'E' | b'I' | b'O' | b'U' => {
                if i == 0 {
                    code.push(c as char);
                }
            }
            // silent in a final MB
            b'B' => {
                if i == 0 || w[i - 1] != b'M' || next.is_some() {
                    code.push('B');
                }
            }
            b'C' => {
                if (next == Some(b'I') && after == Some(b'A')) || next == Some(b'H') {
                    code.push('X');
                    i += 1;
                } else if next.is_some_and(is_front_vowel) {
                    code.push('S');
                    i += 1;
                } else {
                    code.push('K');
                }
            }
            b'D' => {
                if next == Some(b'G') && after.is_some_and(is_front_vowel) {
                    code.push('J');
                    i += 2;
                } else {
                    code.push('T');
                }
            }
            b'F' | b'J' | b'L' | b'M' | b'N' | b'R' => code.push(c as char),
            b'G' => {
                if next.is_some_and(is_front_vowel) {
                    code.push('J');
                } else if (next == Some(b'H') && after.is_some_and(|a| !is_vowel(a)))
                    || (next == Some(b'N') && after.is_none())
                {
                    // GH before a consonant, final GN: both letters silent
                    i += 1;
                } else {
                    code.push('K');
                }
            }
            b'H' => {
                if i == 0 || next.is_some_and(is_vowel) || !is_vowel(w[i - 1]) {
                    code.push('H');
                }
            }
            b'K' => {
                if i == 0 || w[i - 1] != b'C' {
                    code.push('K');
                }
            }
            b'P' => {
                if next == Some(b'H') {
                    code.push('F');
                    i += 1;
                } else {
                    code.push('P');
                }
            }
            b'Q' => code.push('K'),
            b'S' => {
                if next == Some(b'H') {
                    code.push('X');
                    i += 1;
                } else if next == Some(b'I') && matches!(after, Some(b'O' | b'A')) {
                    code.push('X');
                    i += 2;
                } else {
                    code.push('S');
                }
            }
            b'T' => {
                if next == Some(b'I') && matches!(after, Some(b'O' | b'A')) {
                    code.push('X');
                } else if next == Some(b'H') {
                    code.push('0');
                    i += 1;
                } else if !(next == Some(b'C') && after == Some(b'H')) {
                    code.push('T');
                }
            }
            b'V' => code.push('F'),
            b'W' => {
                if i == 0 && next == Some(b'H') {
                    code.push('W');
                    i += 1;
                } else if next.is_some_and(is_vowel) {
                    code.push('W');
                }
            }
            b'X' => {
                if i == 0 {
                    if next == Some(b'H') || (next == Some(b'I') && matches!(after, Some(b'O' | b'A'))) {
                        code.push('X');
                    } else {
                        code.push('S');
                    }
                } else {
                    code.push_str("KS");
                }
            }
            b'Y' => {
                if next.is_some_and(is_vowel) {
                    code.push('Y');
                }
            }
            b'Z' => code.push('S'),
            _ => {}
        }
        i += 1;
    }
    code
}
