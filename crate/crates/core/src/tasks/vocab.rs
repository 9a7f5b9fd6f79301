use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The delimiter and padding symbol shared by the algorithmic tasks.
pub const PAD: char = '-';

/// Ordered symbol alphabet with one-hot encoding. Index 0 is always [`PAD`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolVocab {
    symbols: Vec<char>,
}

const POOL: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+*";

impl SymbolVocab {
    /// `symbols` must contain [`PAD`] exactly once; it is moved to index 0.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let all: Vec<char> = symbols.into_iter().collect();
        let pads = all.iter().filter(|&&c| c == PAD).count();
        if pads != 1 {
            return Err(Error::Config(format!(
                "vocabulary must contain `{PAD}` exactly once, found {pads}"
            )));
        }
        let mut symbols = vec![PAD];
        for c in all {
            if c != PAD {
                if symbols.contains(&c) {
                    return Err(Error::Config(format!("duplicate symbol `{c}`")));
                }
                symbols.push(c);
            }
        }
        Ok(Self { symbols })
    }

    /// `-0123456789`.
    pub fn digits() -> Self {
        Self::new("-0123456789".chars()).expect("valid")
    }

    /// `-` followed by the first `size - 1` symbols of a fixed pool of 64
    /// (lower case, upper case, digits, `+`, `*`). `size` is at most 65.
    pub fn with_size(size: usize) -> Result<Self> {
        if !(2..=POOL.len() + 1).contains(&size) {
            return Err(Error::Config(format!(
                "vocabulary size must be in 2..={}, got {size}",
                POOL.len() + 1
            )));
        }
        Self::new(std::iter::once(PAD).chain(POOL.chars().take(size - 1)))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn encode(&self, c: char) -> Result<usize> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .ok_or_else(|| Error::Config(format!("symbol `{c}` not in vocabulary")))
    }

    pub fn decode(&self, index: usize) -> char {
        self.symbols[index]
    }

    pub fn encode_str(&self, s: &str) -> Result<Vec<usize>> {
        s.chars().map(|c| self.encode(c)).collect()
    }

    pub fn decode_str(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.decode(i)).collect()
    }

    /// `[T, |vocab|]` one-hot rows.
    pub fn one_hot(&self, s: &str) -> Result<Tensor> {
        let idx = self.encode_str(s)?;
        let v = self.len();
        let mut data = vec![0.0; idx.len() * v];
        for (t, &i) in idx.iter().enumerate() {
            data[t * v + i] = 1.0;
        }
        Tensor::new([idx.len(), v], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_is_required_once() {
        assert!(SymbolVocab::new("abc".chars()).is_err());
        assert!(SymbolVocab::new("-a-".chars()).is_err());
        assert!(SymbolVocab::new("-aa".chars()).is_err());
        let v = SymbolVocab::new("ab-".chars()).unwrap();
        assert_eq!(v.symbols(), &['-', 'a', 'b']);
    }

    #[test]
    fn round_trip() {
        let v = SymbolVocab::digits();
        assert_eq!(v.len(), 11);
        let s = "-123-900-----";
        assert_eq!(v.decode_str(&v.encode_str(s).unwrap()), s);
        assert_eq!(SymbolVocab::with_size(65).unwrap().len(), 65);
        assert!(SymbolVocab::with_size(66).is_err());
    }

    #[test]
    fn one_hot_rows() {
        let v = SymbolVocab::digits();
        let t = v.one_hot("-9").unwrap();
        assert_eq!(t.shape(), &[2, 11]);
        assert_eq!(t.get(&[0, 0]), 1.0);
        assert_eq!(t.get(&[1, 10]), 1.0);
        assert_eq!(t.sum(), 2.0);
    }
}
