//! Weights file, little-endian:
//!
//! ```text
//! magic "EMLP", version u32
//! architecture: input_dim u32, n_hidden u32, n_hidden x width u32,
//!               output_dim u32, dropout f64
//! race order:   u16 length + UTF-8 label list
//! provenance:   u16 length + UTF-8
//! training seed u64, variant u8 (0 none, 1 surname, 2 firstname, 3 fullname)
//! notes:        u32 length + UTF-8 JSON
//! param count u64, then f32 parameters layer by layer
//! (weights input-major, `w[i * out_dim + o]`, then bias)
//! ```

use std::path::Path;

use super::{Layer, MlpArchitecture, MlpWeights, ModelMeta, ModelVariant, OUTPUT_DIM};
use crate::binio::{ByteReader, PutLe};
use crate::error::{Error, Result};
use crate::race::check_race_order;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EMLP";
pub const WEIGHTS_VERSION: u32 = 1;

fn variant_code(v: Option<ModelVariant>) -> u8 {
    match v {
        None => 0,
        Some(ModelVariant::Surname) => 1,
        Some(ModelVariant::Firstname) => 2,
        Some(ModelVariant::Fullname) => 3,
    }
}

impl MlpWeights {
    /// Serializes with parameters narrowed to `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + 4 * self.num_params());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.put_u32(WEIGHTS_VERSION);
        out.put_u32(self.arch.input_dim as u32);
        out.put_u32(self.arch.hidden.len() as u32);
        for &w in &self.arch.hidden {
            out.put_u32(w as u32);
        }
        out.put_u32(OUTPUT_DIM as u32);
        out.put_f64(self.arch.dropout);
        out.put_short_str(&self.meta.race_order)?;
        out.put_short_str(&self.meta.provenance)?;
        out.put_u64(self.meta.training_seed);
        out.push(variant_code(self.meta.variant));
        out.put_u32(self.meta.notes.len() as u32);
        out.extend_from_slice(self.meta.notes.as_bytes());
        out.put_u64(self.num_params() as u64);
        for l in &self.layers {
            for &v in l.weights.iter().chain(&l.bias) {
                out.put_f32(v as f32);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "weights file");
        let magic = r.take(4)?;
        if magic != WEIGHTS_MAGIC {
            return Err(r.format_err(format!("bad magic {magic:?}, expected \"EMLP\"")));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(r.format_err(format!("unsupported version {version}")));
        }
        let input_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(r.format_err(format!("implausible hidden layer count {n_hidden}")));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(r.u32()? as usize);
        }
        let output_dim = r.u32()? as usize;
        if output_dim != OUTPUT_DIM {
            return Err(r.format_err(format!("output dim {output_dim}, expected {OUTPUT_DIM}")));
        }
        let dropout = r.f64()?;
        let arch = MlpArchitecture::new(input_dim, hidden, dropout).map_err(|e| r.format_err(e.to_string()))?;
        let race_order = r.short_str()?;
        check_race_order(&race_order)?;
        let provenance = r.short_str()?;
        let training_seed = r.u64()?;
        let variant = match r.take(1)?[0] {
            0 => None,
            1 => Some(ModelVariant::Surname),
            2 => Some(ModelVariant::Firstname),
            3 => Some(ModelVariant::Fullname),
            c => return Err(r.format_err(format!("unknown variant code {c}"))),
        };
        let notes_len = r.u32()? as usize;
        let notes = String::from_utf8(r.take(notes_len)?.to_vec())
            .map_err(|_| r.format_err("notes are not UTF-8".into()))?;
        let count = r.u64()?;
        if count != arch.num_params() as u64 {
            return Err(r.format_err(format!(
                "parameter count {count} does not match architecture ({})",
                arch.num_params()
            )));
        }
        let mut layers = Vec::new();
        for (i, o) in arch.layer_dims() {
            let mut read = |n: usize| -> Result<Vec<f64>> {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    let at = r.offset();
                    let x = r.f32()?;
                    if !x.is_finite() {
                        return Err(r.format_err(format!("non-finite parameter at byte offset {at}")));
                    }
                    v.push(x as f64);
                }
                Ok(v)
            };
            let weights = read(i * o)?;
            let bias = read(o)?;
            layers.push(Layer {
                in_dim: i,
                out_dim: o,
                weights,
                bias,
            });
        }
        r.finish()?;
        Ok(MlpWeights {
            arch,
            layers,
            meta: ModelMeta {
                race_order,
                provenance,
                training_seed,
                variant,
                notes,
            },
        })
    }
}

pub fn save_weights(weights: &MlpWeights, path: &Path) -> Result<()> {
    std::fs::write(path, weights.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<MlpWeights> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MlpWeights::from_bytes(&buf).map_err(|e| e.in_file(path))
}
