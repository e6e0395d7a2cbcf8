//! Precomputed embedding sidecar: key → `f32` matrix.
//!
//! Lets externally computed species or caption embeddings stand in for the
//! hash encoders. Layout, little-endian: magic `UEMB`, `u32` version, `u32`
//! width, `u32` entry count, then per entry a key, `u32` row count and
//! `rows × width` `f32` values. Species entries have one row; caption entries
//! hold the sentence vector followed by one row per word.

use std::collections::BTreeMap;
use std::path::Path;

use xspecies_core::embed::{canonical_species, SpeciesEmbedding, SpeciesEncoder, TextEncoder, TextFeatures};
use xspecies_core::Matrix;

use crate::binio::{Reader, Writer};
use crate::error::{CliResult, FormatError};

pub const MAGIC: [u8; 4] = *b"UEMB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<Vec<f32>>>,
}

impl Sidecar {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: &str, rows: Vec<Vec<f32>>) -> Result<(), FormatError> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != self.dim) {
            return Err(FormatError::Corrupt(format!("entry {key:?} must hold rows of width {}", self.dim)));
        }
        self.entries.insert(key.to_string(), rows);
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(VERSION);
        w.len(self.dim);
        w.len(self.entries.len());
        for (k, rows) in &self.entries {
            w.str(k);
            w.len(rows.len());
            rows.iter().flatten().for_each(|v| w.f32(*v));
        }
        w.buf
    }

    pub fn decode(data: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(data);
        let magic = r.take(4).map_err(|_| FormatError::Magic { expected: MAGIC, found: data.to_vec() })?;
        if magic != MAGIC {
            return Err(FormatError::Magic { expected: MAGIC, found: magic.to_vec() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version { expected: VERSION, found: version });
        }
        let dim = r.u32()? as usize;
        let n = r.len(8)?;
        let mut out = Self::new(dim);
        for _ in 0..n {
            let key = r.str()?;
            let rows = r.len(4 * dim)?;
            let vals = (0..rows).map(|_| (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()).collect::<Result<Vec<_>, _>>()?;
            out.insert(&key, vals)?;
        }
        r.finish()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Ok(Self::decode(&std::fs::read(path)?)?)
    }

    fn lookup(&self, key: &str) -> xspecies_core::Result<&Vec<Vec<f32>>> {
        self.entries.get(key).ok_or_else(|| xspecies_core::Error::InvalidInput(format!("no sidecar entry for {key:?}")))
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| f64::from(*x)).collect()
}

impl SpeciesEncoder for Sidecar {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Looked up by the canonical (trimmed, lowercased) name.
    fn encode_species(&self, name: &str) -> xspecies_core::Result<SpeciesEmbedding> {
        Ok(SpeciesEmbedding(widen(&self.lookup(&canonical_species(name))?[0])))
    }
}

impl TextEncoder for Sidecar {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Looked up by the exact caption; needs a sentence row and at least one word row.
    fn encode_text(&self, caption: &str) -> xspecies_core::Result<TextFeatures> {
        let rows = self.lookup(caption)?;
        if rows.len() < 2 {
            return Err(xspecies_core::Error::InvalidInput(format!("caption entry {caption:?} has no word rows")));
        }
        let words: Vec<f64> = rows[1..].iter().flat_map(|r| widen(r)).collect();
        Ok(TextFeatures { sentence: widen(&rows[0]), words: Matrix::from_vec(rows.len() - 1, self.dim, words) })
    }
}
