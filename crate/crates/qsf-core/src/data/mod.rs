//! Corpus ingestion, the byte-level tokenizer, and train/validation batching.

pub mod checkpoint;
pub mod synthetic;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("token id {0} exceeds the byte vocabulary")]
    TokenRange(usize),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
}

/// Byte-level tokenization: identity on byte values, vocabulary 256.
pub fn tokenize(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| b as usize).collect()
}

/// Inverse of [`tokenize`]; ids must be < 256.
pub fn detokenize(ids: &[usize]) -> Result<Vec<u8>, DataError> {
    ids.iter()
        .map(|&id| {
            if id < 256 {
                Ok(id as u8)
            } else {
                Err(DataError::TokenRange(id))
            }
        })
        .collect()
}

/// Raw training text with a deterministic 90/10 train/validation split: the
/// leading 90% of bytes train, the trailing 10% are held out. The two regions
/// never overlap.
pub struct Corpus {
    bytes: Vec<u8>,
    split: usize,
}

const TRAIN_FRACTION: f64 = 0.9;

impl Corpus {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, DataError> {
        if bytes.len() < 64 {
            return Err(DataError::Corpus(format!(
                "corpus too small ({} bytes); need at least 64",
                bytes.len()
            )));
        }
        let split = (bytes.len() as f64 * TRAIN_FRACTION).floor() as usize;
        Ok(Corpus { bytes, split })
    }

    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        Self::from_bytes(std::fs::read(path)?)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
    pub fn train_region(&self) -> &[u8] {
        &self.bytes[..self.split]
    }
    pub fn val_region(&self) -> &[u8] {
        &self.bytes[self.split..]
    }

    fn window_from(region: &[u8], rng: &mut ChaCha8Rng, n: usize) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        if region.len() < n + 1 {
            return Err(DataError::Corpus(format!(
                "region of {} bytes cannot fit a window of {}",
                region.len(),
                n + 1
            )));
        }
        let start = rng.gen_range(0..=region.len() - n - 1);
        let tokens = tokenize(&region[start..start + n]);
        let targets = tokenize(&region[start + 1..start + n + 1]);
        Ok((tokens, targets))
    }

    /// Random next-token window (inputs, shifted targets) from the train region.
    pub fn train_window(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        Self::window_from(self.train_region(), rng, n)
    }

    /// Random window from the held-out region only.
    pub fn val_window(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        Self::window_from(self.val_region(), rng, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn byte_tokenizer_roundtrips_exactly() {
        let text = b"abc";
        let ids = tokenize(text);
        assert_eq!(ids, vec![97, 98, 99]);
        assert_eq!(detokenize(&ids).unwrap(), text);
        assert!(tokenize(b"").is_empty());
        assert!(detokenize(&[256]).is_err());
    }

    #[test]
    fn large_roundtrip_is_byte_equal() {
        let blob: Vec<u8> = (0..1_048_576u32).map(|i| (i % 251) as u8).collect();
        assert_eq!(detokenize(&tokenize(&blob)).unwrap(), blob);
    }

    #[test]
    fn split_regions_are_disjoint_and_cover() {
        let corpus = Corpus::from_bytes((0..1000u32).map(|i| (i % 256) as u8).collect()).unwrap();
        assert_eq!(corpus.train_region().len(), 900);
        assert_eq!(corpus.val_region().len(), 100);
        assert_eq!(
            corpus.train_region().len() + corpus.val_region().len(),
            corpus.len()
        );
    }

    #[test]
    fn windows_stay_inside_their_regions() {
        let corpus = Corpus::from_bytes((0..2000u32).map(|i| (i % 256) as u8).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (tokens, targets) = corpus.val_window(&mut rng, 16).unwrap();
            assert_eq!(tokens.len(), 16);
            // val bytes occupy positions 1800.. of the pattern i % 256
            assert_eq!(targets[..15], tokens[1..]);
            for &t in &tokens {
                assert!(corpus.val_region().iter().any(|&b| b as usize == t));
            }
        }
    }

    #[test]
    fn tiny_corpus_rejected() {
        assert!(Corpus::from_bytes(vec![0u8; 10]).is_err());
    }
}
