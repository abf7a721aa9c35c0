//! Byte-level tokenizer: one token per byte plus end-of-sequence.

pub const EOS: usize = 256;
pub const VOCAB_SIZE: usize = 257;

pub fn encode(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| b as usize).collect()
}

/// Bytes of `tokens`, stopping at the first end-of-sequence.
pub fn decode(tokens: &[usize]) -> Vec<u8> {
    tokens.iter().take_while(|&&t| t != EOS).filter_map(|&t| u8::try_from(t).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = "héllo\n\0\u{7f}".as_bytes();
        assert_eq!(decode(&encode(text)), text);
        let mut t = encode(b"ab");
        t.push(EOS);
        t.push(99);
        assert_eq!(decode(&t), b"ab");
    }
}
