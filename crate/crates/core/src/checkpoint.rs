//! "KOGT" checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"KOGT"  u32 version  u64 meta_len  meta_len bytes of JSON metadata
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, rank x u64 dims,
//!             u8 dtype (0 = f32, 1 = f64), raw values
//! ```
//!
//! `f32` models are stored as `f32`; `f64` models keep full width so that a
//! 64-bit run restores bit-exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{KogError, Result};
use crate::graph::SkeletonGraph;
use crate::models::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::{numel, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"KOGT";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// JSON block stored ahead of the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Skeleton in its JSON file form.
    pub skeleton: serde_json::Value,
    pub stats: Option<NormalizationStats>,
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub precision: String,
}

impl CheckpointMeta {
    pub fn skeleton(&self) -> Result<SkeletonGraph> {
        SkeletonGraph::from_json_str(&self.skeleton.to_string())
    }
}

/// Decoded container: metadata plus named tensors in file order.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(
        model: &Model<T>,
        skeleton: &SkeletonGraph,
        stats: Option<&NormalizationStats>,
        seed: u64,
        step: u64,
    ) -> Result<Self> {
        Ok(Self {
            meta: CheckpointMeta {
                config: model.config(),
                skeleton: serde_json::from_str(&skeleton.to_json_string())?,
                stats: stats.cloned(),
                seed,
                step,
                precision: T::NAME.to_string(),
            },
            tensors: model
                .store()
                .iter()
                .map(|p| {
                    let mut t = p.tensor.clone();
                    t.grad = None;
                    (p.name.clone(), t)
                })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(meta.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let wide = std::mem::size_of::<T>() == 8;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            if wide {
                out.push(DTYPE_F64);
                for v in t.data() {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            } else {
                out.push(DTYPE_F32);
                for v in t.data() {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(KogError::Checkpoint("not a KOGT checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(KogError::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| KogError::Checkpoint(format!("bad metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| KogError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = numel(&shape);
            let data: Vec<T> = match r.take(1)?[0] {
                DTYPE_F32 => r
                    .take(n.checked_mul(4).ok_or_else(truncated)?)?
                    .chunks_exact(4)
                    .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect(),
                DTYPE_F64 => r
                    .take(n.checked_mul(8).ok_or_else(truncated)?)?
                    .chunks_exact(8)
                    .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect(),
                other => return Err(KogError::Checkpoint(format!("tensor {name}: unknown dtype {other}"))),
            };
            let t = Tensor::new(shape, data).map_err(|e| KogError::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(KogError::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, tensors })
    }

    /// Copies every stored tensor into `store`. All problems are collected
    /// and reported together: names the store does not know, shape
    /// mismatches, and store parameters missing from the checkpoint.
    pub fn restore_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in &self.tensors {
            match store.by_name(name) {
                None => problems.push(format!("unknown parameter {name}")),
                Some(cur) if cur.shape() != t.shape() => problems.push(format!(
                    "{name}: checkpoint {:?} vs model {:?}",
                    t.shape(),
                    cur.shape()
                )),
                Some(_) => {}
            }
        }
        for p in store.iter() {
            if !self.tensors.iter().any(|(n, _)| n == &p.name) {
                problems.push(format!("missing parameter {}", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(KogError::Checkpoint(problems.join("; ")));
        }
        for (name, t) in &self.tensors {
            let id = store.id_of(name).expect("checked above");
            store.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Rebuilds the model described by the metadata and loads its weights.
    pub fn into_model(&self) -> Result<(Model<T>, SkeletonGraph)> {
        let skeleton = self.meta.skeleton()?;
        let mut model = Model::build(&skeleton, &self.meta.config, self.meta.seed)?;
        self.restore_into(model.store_mut())?;
        Ok((model, skeleton))
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// reader never sees a half-written checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = std::fs::File::create(&tmp).map_err(|e| KogError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| KogError::io(&tmp, e))?;
        f.sync_all().map_err(|e| KogError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| KogError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| KogError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn truncated() -> KogError {
    KogError::Checkpoint("truncated checkpoint".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::KogTransformerConfig;
    use crate::tensor::seeded_rng;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig::KogTransformer(KogTransformerConfig {
            num_layers: 1,
            dim: 8,
            heads: 2,
            order: 2,
            joints: 16,
            ..KogTransformerConfig::default()
        })
    }

    fn probe<T: Scalar>() -> Tensor<T> {
        let mut rng = seeded_rng(5);
        let v: Vec<f64> = (0..3 * 16 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_f64(&[3, 16, 2], &v).unwrap()
    }

    fn round_trip<T: Scalar>() {
        let skel = SkeletonGraph::human36m_16();
        let model = Model::<T>::build(&skel, &tiny_config(), 11).unwrap();
        let stats = NormalizationStats {
            input_mean: vec![1.0, 2.0],
            input_std: vec![3.0, 4.0],
            root: Some(1),
            target_scale: 250.0,
        };
        let ck = Checkpoint::capture(&model, &skel, Some(&stats), 11, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.kogt");
        ck.save(&path).unwrap();
        let back = Checkpoint::<T>::load(&path).unwrap();
        assert_eq!(back.meta, ck.meta);
        let (restored, skel2) = back.into_model().unwrap();
        assert_eq!(skel2, skel);
        for (a, b) in restored.store().iter().zip(model.store().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        let x = probe::<T>();
        assert_eq!(restored.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn save_load_is_exact_in_both_precisions() {
        round_trip::<f32>();
        round_trip::<f64>();
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let skel = SkeletonGraph::human36m_16();
        let model = Model::<f32>::build(&skel, &tiny_config(), 0).unwrap();
        let bytes = Checkpoint::capture(&model, &skel, None, 0, 0).unwrap().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = Checkpoint::<f32>::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::<f32>::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::<f32>::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("truncated"), "cut {cut}: {err}");
        }
    }

    #[test]
    fn mismatched_model_lists_offending_tensors() {
        let skel = SkeletonGraph::human36m_16();
        let model = Model::<f32>::build(&skel, &tiny_config(), 0).unwrap();
        let ck = Checkpoint::capture(&model, &skel, None, 0, 0).unwrap();
        let wider = ModelConfig::KogTransformer(KogTransformerConfig {
            num_layers: 1,
            dim: 12,
            heads: 2,
            order: 2,
            ..KogTransformerConfig::default()
        });
        let mut other = Model::<f32>::build(&skel, &wider, 0).unwrap();
        let err = ck.restore_into(other.store_mut()).unwrap_err().to_string();
        assert!(err.contains("input.weight: checkpoint [2, 8] vs model [2, 12]"), "{err}");
        assert!(err.contains("output.weight"), "{err}");

        let mut renamed = ck.clone();
        renamed.tensors[0].0 = "nonsense".into();
        let mut same = Model::<f32>::build(&skel, &tiny_config(), 0).unwrap();
        let err = renamed.restore_into(same.store_mut()).unwrap_err().to_string();
        assert!(err.contains("unknown parameter nonsense"), "{err}");
        assert!(err.contains("missing parameter input.weight"), "{err}");
    }
}
