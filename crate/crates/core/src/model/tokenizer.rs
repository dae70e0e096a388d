//! Byte-level tokenizer with four special tokens.

pub type Token = u32;

pub const PAD: Token = 256;
pub const BOS: Token = 257;
pub const EOS: Token = 258;
/// Separates the prompt from the output segment.
pub const SEP: Token = 259;
pub const VOCAB_SIZE: usize = 260;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub tokens: Vec<Token>,
    pub truncated: bool,
}

/// `[BOS] bytes [EOS]`, cut to `max_len` tokens when longer.
pub fn tokenize(text: &str, max_len: usize) -> Encoded {
    let mut tokens = Vec::with_capacity(text.len() + 2);
    tokens.push(BOS);
    tokens.extend(text.bytes().map(Token::from));
    tokens.push(EOS);
    let truncated = tokens.len() > max_len;
    tokens.truncate(max_len);
    Encoded { tokens, truncated }
}

/// Bytes of all non-special tokens; invalid UTF-8 is replaced.
pub fn detokenize(tokens: &[Token]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t < 256)
        .map(|&t| t as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// A training sequence: `[BOS] prompt [SEP] output [EOS]`.
///
/// The model reads `tokens[..n-1]` and predicts `tokens[1..]`; only
/// positions from `output_start` on (the output bytes and EOS) count
/// towards the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<Token>,
    pub output_start: usize,
    pub truncated: bool,
}

impl Example {
    pub fn inputs(&self) -> &[Token] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn targets(&self) -> &[Token] {
        &self.tokens[1..]
    }

    /// Loss mask over input positions.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.tokens.len() - 1)
            .map(|t| t >= self.output_start)
            .collect()
    }
}

/// `[BOS] prompt [SEP]`, dropping prompt bytes from the front so that the
/// result plus `reserve` further tokens fits in `max_len`.
pub fn encode_prompt(prompt: &str, max_len: usize, reserve: usize) -> Encoded {
    let budget = max_len.saturating_sub(2 + reserve);
    let bytes = prompt.as_bytes();
    let skip = bytes.len().saturating_sub(budget);
    let mut tokens = Vec::with_capacity(bytes.len() - skip + 2);
    tokens.push(BOS);
    tokens.extend(bytes[skip..].iter().map(|&b| Token::from(b)));
    tokens.push(SEP);
    Encoded {
        tokens,
        truncated: skip > 0,
    }
}

/// Build a training sequence. The prompt is cut from the front first; the
/// output is only cut when it alone exceeds the window.
pub fn encode_example(prompt: &str, output: &str, max_len: usize) -> Example {
    let out_bytes = output.as_bytes();
    // BOS + SEP + EOS always present
    let out_keep = out_bytes.len().min(max_len.saturating_sub(3));
    let prompt_enc = encode_prompt(prompt, max_len, out_keep + 1);
    let output_start = prompt_enc.tokens.len() - 1;
    let mut tokens = prompt_enc.tokens;
    tokens.extend(out_bytes[..out_keep].iter().map(|&b| Token::from(b)));
    tokens.push(EOS);
    Example {
        tokens,
        output_start,
        truncated: prompt_enc.truncated || out_keep < out_bytes.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text() {
        assert_eq!(tokenize("", 16).tokens, vec![BOS, EOS]);
    }

    #[test]
    fn truncation_is_flagged() {
        let e = tokenize("abcdef", 4);
        assert!(e.truncated);
        assert_eq!(e.tokens.len(), 4);
        assert!(!tokenize("ab", 4).truncated);
    }

    #[test]
    fn example_layout_and_mask() {
        let ex = encode_example("ab", "xy", 64);
        assert_eq!(ex.tokens, vec![BOS, 97, 98, SEP, 120, 121, EOS]);
        // input SEP (index 3) predicts the first output byte
        assert_eq!(ex.output_start, 3);
        assert_eq!(ex.mask(), vec![false, false, false, true, true, true]);
        assert_eq!(ex.targets()[ex.output_start], 120);
    }

    #[test]
    fn long_prompt_is_cut_from_the_front() {
        let ex = encode_example("0123456789", "ab", 8);
        assert!(ex.truncated);
        assert_eq!(ex.tokens.len(), 8);
        assert_eq!(detokenize(&ex.tokens[..ex.output_start + 1]), "789");
        assert_eq!(&ex.tokens[ex.output_start + 1..], &[97, 98, EOS]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn utf8_round_trip(s in "\\PC*") {
            let e = tokenize(&s, usize::MAX);
            prop_assert!(!e.truncated);
            prop_assert_eq!(detokenize(&e.tokens), s);
        }
    }
}
