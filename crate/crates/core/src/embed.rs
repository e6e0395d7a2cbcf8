//! Species and text embedding providers.
//!
//! Production encoders are pretrained language models; the providers here are
//! deterministic hash stubs with the same shapes, so the pipeline runs
//! offline. Species names are canonicalized (trimmed, lowercased) first.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math;
use crate::rng;
use crate::tensor::Matrix;

pub const DEFAULT_DIM: usize = 64;
pub const MAX_TOKENS: usize = 32;

/// Fixed-width species vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesEmbedding(pub Vec<f64>);

/// Sentence vector plus one row per word token.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub sentence: Vec<f64>,
    pub words: Matrix,
}

impl TextFeatures {
    pub fn dim(&self) -> usize {
        self.sentence.len()
    }

    /// `(1 + n_words) × d`: the sentence row followed by the word rows.
    pub fn tokens(&self) -> Matrix {
        let d = self.dim();
        let mut data = self.sentence.clone();
        data.extend_from_slice(self.words.as_slice());
        Matrix::from_vec(1 + self.words.rows(), d, data)
    }
}

pub trait SpeciesEncoder {
    fn dim(&self) -> usize;
    fn encode_species(&self, name: &str) -> Result<SpeciesEmbedding>;
}

pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode_text(&self, caption: &str) -> Result<TextFeatures>;
}

pub fn canonical_species(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .take(MAX_TOKENS)
        .collect()
}

fn hashed_unit(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    let mut r = rng::seeded(rng::hash_str(seed, key));
    let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
    let n = math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[derive(Clone, Debug)]
pub struct HashSpeciesEncoder {
    pub seed: u64,
    pub dim: usize,
}

impl Default for HashSpeciesEncoder {
    fn default() -> Self {
        Self { seed: 0x05be_c1e5, dim: DEFAULT_DIM }
    }
}

impl SpeciesEncoder for HashSpeciesEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_species(&self, name: &str) -> Result<SpeciesEmbedding> {
        let key = canonical_species(name);
        if key.is_empty() {
            return Err(invalid("empty species name"));
        }
        Ok(SpeciesEmbedding(hashed_unit(self.seed, &key, self.dim)))
    }
}

/// Word vectors are per-token hashes; the sentence vector is their
/// normalized mean, so captions sharing words land close together.
#[derive(Clone, Debug)]
pub struct HashTextEncoder {
    pub seed: u64,
    pub dim: usize,
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        Self { seed: 0x7e47, dim: DEFAULT_DIM }
    }
}

impl TextEncoder for HashTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, caption: &str) -> Result<TextFeatures> {
        let tokens = tokenize(caption);
        if tokens.is_empty() {
            return Err(invalid("caption has no tokens"));
        }
        let mut words = Matrix::zeros(tokens.len(), self.dim);
        let mut sentence = alloc::vec![0.0; self.dim];
        for (i, tok) in tokens.iter().enumerate() {
            let v = hashed_unit(self.seed, tok, self.dim);
            words.row_mut(i).copy_from_slice(&v);
            sentence.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        }
        let n = math::sqrt(sentence.iter().map(|x| x * x).sum::<f64>());
        sentence.iter_mut().for_each(|x| *x /= n);
        Ok(TextFeatures { sentence, words })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn species_canonicalization() {
        let e = HashSpeciesEncoder::default();
        assert_eq!(e.encode_species("Wolf").unwrap(), e.encode_species(" wolf ").unwrap());
        assert_ne!(e.encode_species("wolf").unwrap(), e.encode_species("fox").unwrap());
        assert_eq!(e.encode_species("wolf").unwrap().0.len(), 64);
        assert!(e.encode_species("  ").is_err());
    }

    #[test]
    fn text_shapes_and_cap() {
        let e = HashTextEncoder::default();
        let f = e.encode_text("The wolf walks forward.").unwrap();
        assert_eq!(f.words.shape(), (4, 64));
        assert_eq!(f.tokens().shape(), (5, 64));
        assert_eq!(f, e.encode_text("the WOLF walks forward").unwrap());
        let long: String = (0..50).map(|i| alloc::format!("w{i} ")).collect();
        assert_eq!(e.encode_text(&long).unwrap().words.rows(), MAX_TOKENS);
        assert!(e.encode_text(" ... ").is_err());
    }
}
