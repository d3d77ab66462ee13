//! Hashing tokenizer: lowercase, split on whitespace and punctuation, hash
//! each token into a fixed number of buckets.

/// Bucket reserved for the leading summary token of the transformer.
pub const CLS_BUCKET: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    buckets: usize,
    seed: u64,
    max_len: usize,
}

impl Tokenizer {
    /// `buckets` must be at least 2: bucket 0 is reserved.
    pub fn new(buckets: usize, seed: u64, max_len: usize) -> Self {
        assert!(buckets >= 2, "need at least two hash buckets");
        Self {
            buckets,
            seed,
            max_len,
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Lowercased word and punctuation tokens. Each punctuation character
    /// is its own token.
    pub fn words(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                if !ch.is_whitespace() && !ch.is_control() {
                    out.push(ch.to_string());
                }
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    /// Bucket of a single (already normalised) token, never [`CLS_BUCKET`].
    pub fn bucket(&self, token: &str) -> usize {
        // FNV-1a over the seed bytes followed by the token bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        1 + (h % (self.buckets as u64 - 1)) as usize
    }

    /// Token buckets of `text`, truncated to `max_len` (tail dropped).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        Self::words(text)
            .iter()
            .take(self.max_len)
            .map(|w| self.bucket(w))
            .collect()
    }
}
