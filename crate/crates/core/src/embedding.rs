//! Name embeddings: a deterministic character n-gram featurizer and a
//! binary store for vectors computed elsewhere.
//!
//! Store layout (little-endian):
//!
//! ```text
//! magic   "EBED"            4 bytes
//! version u32 = 1
//! dim     u32
//! count   u64
//! provenance: u16 length + UTF-8
//! count x [ u16 name length, UTF-8 normalized name, dim x f32 ]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::binio::{ByteReader, PutLe};
use crate::error::{Error, Result};
use crate::normalize::normalize_name;

pub const STORE_MAGIC: &[u8; 4] = b"EBED";
pub const STORE_VERSION: u32 = 1;
pub const MIN_NGRAM_DIM: usize = 16;
const NGRAM_MIN: usize = 2;
const NGRAM_MAX: usize = 4;
const NGRAM_PROVENANCE_PREFIX: &str = "char-ngram/v1";

/// A dense name representation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("embedding has non-finite entries".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; zero if either vector is zero.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (na * nb)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Settings of the built-in signed-hash n-gram featurizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NgramConfig {
    pub dim: usize,
    pub seed: u64,
}

impl NgramConfig {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < MIN_NGRAM_DIM {
            return Err(Error::InvalidValue(format!("n-gram dim must be >= {MIN_NGRAM_DIM}, got {dim}")));
        }
        Ok(NgramConfig { dim, seed })
    }

    pub fn provenance(&self) -> String {
        format!("{NGRAM_PROVENANCE_PREFIX} dim={} seed={}", self.dim, self.seed)
    }

    /// Inverse of [`NgramConfig::provenance`]; `None` for other providers.
    pub fn from_provenance(s: &str) -> Option<Self> {
        let rest = s.strip_prefix(NGRAM_PROVENANCE_PREFIX)?.trim();
        let mut dim = None;
        let mut seed = None;
        for part in rest.split_whitespace() {
            match part.split_once('=')? {
                ("dim", v) => dim = v.parse().ok(),
                ("seed", v) => seed = v.parse().ok(),
                _ => return None,
            }
        }
        NgramConfig::new(dim?, seed?).ok()
    }

    pub fn embed(&self, name: &str) -> EmbeddingVector {
        embed_char_ngram(name, self.dim, self.seed)
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Hashes every 2- to 4-gram of `^NAME$` into `dim` signed buckets and
/// scales the result to unit length. The empty name maps to the zero
/// vector.
pub fn embed_char_ngram(name: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= MIN_NGRAM_DIM, "n-gram dim must be >= {MIN_NGRAM_DIM}");
    let key = normalize_name(name);
    let mut acc = vec![0.0f64; dim];
    if key.is_empty() {
        return EmbeddingVector(acc);
    }
    let chars: Vec<char> = std::iter::once('^').chain(key.chars()).chain(std::iter::once('$')).collect();
    let mut buf = String::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            let h = fnv1a(buf.as_bytes(), seed);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    EmbeddingVector(acc)
}

/// Precomputed vectors keyed by normalized name, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    provenance: String,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidValue(format!("bad store dim {dim}")));
        }
        Ok(EmbeddingStore {
            dim,
            provenance: provenance.into(),
            vectors: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Inserts a vector under the normalized form of `name`, replacing any
    /// previous vector for that key.
    pub fn insert(&mut self, name: &str, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite embedding for {name:?}")));
        }
        let key = normalize_name(name);
        if key.is_empty() {
            return Err(Error::InvalidValue("empty name".into()));
        }
        self.vectors.insert(key, values);
        Ok(())
    }

    /// Narrows an `f64` embedding to `f32` and inserts it.
    pub fn insert_vector(&mut self, name: &str, v: &EmbeddingVector) -> Result<()> {
        self.insert(name, v.values().iter().map(|&x| x as f32).collect())
    }

    pub fn get_raw(&self, name: &str) -> Option<&[f32]> {
        self.vectors.get(&normalize_name(name)).map(Vec::as_slice)
    }

    pub fn get(&self, name: &str) -> Option<EmbeddingVector> {
        self.get_raw(name)
            .map(|v| EmbeddingVector(v.iter().map(|&x| x as f64).collect()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(22 + self.vectors.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(STORE_MAGIC);
        out.put_u32(STORE_VERSION);
        out.put_u32(self.dim as u32);
        out.put_u64(self.vectors.len() as u64);
        out.put_short_str(&self.provenance)?;
        for (name, v) in &self.vectors {
            out.put_short_str(name)?;
            for &x in v {
                out.put_f32(x);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "embedding store");
        let magic = r.take(4)?;
        if magic != STORE_MAGIC {
            return Err(r.format_err(format!("bad magic {magic:?}, expected \"EBED\"")));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(r.format_err(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.format_err("dim is zero".into()));
        }
        let count = r.u64()?;
        let provenance = r.short_str()?;
        let mut vectors = BTreeMap::new();
        for i in 0..count {
            let at = r.offset();
            let name = r.short_str()?;
            if name.is_empty() || normalize_name(&name) != name {
                return Err(r.format_err(format!("record {i} at byte offset {at}: name {name:?} is not normalized")));
            }
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                let x = r.f32()?;
                if !x.is_finite() {
                    return Err(r.format_err(format!("record {i} ({name}): non-finite value")));
                }
                v.push(x);
            }
            if vectors.insert(name.clone(), v).is_some() {
                return Err(r.format_err(format!("record {i} at byte offset {at}: duplicate name {name:?}")));
            }
        }
        r.finish()?;
        Ok(EmbeddingStore {
            dim,
            provenance,
            vectors,
        })
    }
}

pub fn write_embedding_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    std::fs::write(path, store.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_embedding_store(path: &Path) -> Result<EmbeddingStore> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&buf).map_err(|e| e.in_file(path))
}

/// Source of name embeddings.
#[derive(Clone, Debug)]
pub enum EmbeddingProvider {
    Ngram(NgramConfig),
    Store {
        store: Arc<EmbeddingStore>,
        fallback: Option<NgramConfig>,
    },
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Ngram(c) => c.dim,
            EmbeddingProvider::Store { store, .. } => store.dim(),
        }
    }

    /// Identifies the vector space; trained weights record it.
    pub fn provenance(&self) -> String {
        match self {
            EmbeddingProvider::Ngram(c) => c.provenance(),
            EmbeddingProvider::Store { store, .. } => store.provenance().to_string(),
        }
    }

    pub fn embed(&self, name: &str) -> Result<EmbeddingVector> {
        get_embedding(self, name)
    }
}

impl fmt::Display for EmbeddingProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.provenance())
    }
}

/// Looks `name` up through `provider`. A store miss falls back to the
/// attached n-gram featurizer, or fails with [`Error::UnknownName`].
pub fn get_embedding(provider: &EmbeddingProvider, name: &str) -> Result<EmbeddingVector> {
    match provider {
        EmbeddingProvider::Ngram(c) => Ok(c.embed(name)),
        EmbeddingProvider::Store { store, fallback } => {
            if let Some(v) = store.get(name) {
                return Ok(v);
            }
            match fallback {
                Some(c) => {
                    if c.dim != store.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: store.dim(),
                            found: c.dim,
                        });
                    }
                    Ok(c.embed(name))
                }
                None => Err(Error::UnknownName(normalize_name(name))),
            }
        }
    }
}
