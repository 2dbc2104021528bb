//! Checkpoint container.
//!
//! ```text
//! offset 0   4 bytes   magic "PRNC"
//! offset 4   u32 LE    format version (1)
//! offset 8   u64 LE    metadata length L in bytes
//! offset 16  L bytes   UTF-8 JSON metadata
//! offset 16+L          payload: little-endian f32 values
//! ```
//!
//! The metadata holds the model config, training options and progress, the
//! shuffle RNG state, Adam hyperparameters and step count, CFA grouping
//! permutations and a tensor directory. Each directory entry gives `name`,
//! `shape` and `offset` (in bytes from the payload start). Parameters come
//! first in module order, followed by `adam.m.<name>` and `adam.v.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::nn::{Module, PRNet, PRNetConfig};

pub const MAGIC: &[u8; 4] = b"PRNC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr0: f64,
    pub poly_power: f64,
    /// Write a checkpoint after every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 12,
            seed: 0,
            lr0: 1e-4,
            poly_power: super::schedule::POLY_POWER,
            checkpoint_every: 0,
        }
    }
}

/// ChaCha stream position, enough to resume the exact sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key as hex.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (a 128-bit value).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaPermutation {
    pub block: String,
    pub perm_s: Vec<usize>,
    pub perm_2s: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    config: PRNetConfig,
    options: TrainOptions,
    progress: Progress,
    rng: RngState,
    adam: AdamMeta,
    cfa_permutations: Vec<CfaPermutation>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: PRNetConfig,
    pub options: TrainOptions,
    pub progress: Progress,
    pub rng: RngState,
    pub adam: AdamState<f32>,
    pub cfa_permutations: Vec<CfaPermutation>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.adam.m.len() != self.params.len() || self.adam.v.len() != self.params.len() {
            return Err(Error::Checkpoint("optimizer and parameter lists differ".into()));
        }
        let mut blocks: Vec<(String, &[usize], &[f32])> = Vec::with_capacity(3 * self.params.len());
        for p in &self.params {
            blocks.push((p.name.clone(), &p.shape, &p.data));
        }
        for (p, m) in self.params.iter().zip(&self.adam.m) {
            blocks.push((format!("adam.m.{}", p.name), &p.shape, m));
        }
        for (p, v) in self.params.iter().zip(&self.adam.v) {
            blocks.push((format!("adam.v.{}", p.name), &p.shape, v));
        }
        let mut tensors = Vec::with_capacity(blocks.len());
        let mut offset = 0u64;
        for (name, shape, data) in &blocks {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Checkpoint(format!(
                    "{name}: {} values for shape {shape:?}",
                    data.len()
                )));
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: shape.to_vec(),
                offset,
            });
            offset += 4 * data.len() as u64;
        }
        let meta = Metadata {
            config: self.config.clone(),
            options: self.options.clone(),
            progress: self.progress.clone(),
            rng: self.rng.clone(),
            adam: AdamMeta {
                beta1: self.adam.config.beta1,
                beta2: self.adam.config.beta2,
                eps: self.adam.config.eps,
                t: self.adam.t,
            },
            cfa_permutations: self.cfa_permutations.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &blocks {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a PRNC checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let meta_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata".into()))?;
        let meta: Metadata = serde_json::from_slice(&bytes[16..meta_end])?;
        let payload = &bytes[meta_end..];
        let read = |e: &TensorEntry| -> Result<Vec<f32>> {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(bad(format!("tensor {} runs past the payload", e.name)));
            }
            Ok(payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let total: u64 = meta
            .tensors
            .iter()
            .map(|e| 4 * e.shape.iter().product::<usize>() as u64)
            .sum();
        if total != payload.len() as u64 {
            return Err(bad(format!(
                "payload has {} bytes, directory expects {total}",
                payload.len()
            )));
        }
        if !meta.tensors.len().is_multiple_of(3) {
            return Err(bad("tensor directory is not params + two moment sets".into()));
        }
        let np = meta.tensors.len() / 3;
        let mut params = Vec::with_capacity(np);
        let mut m = Vec::with_capacity(np);
        let mut v = Vec::with_capacity(np);
        for (i, e) in meta.tensors.iter().enumerate() {
            let data = read(e)?;
            match i / np {
                0 => params.push(NamedTensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data,
                }),
                1 => m.push(data),
                _ => v.push(data),
            }
        }
        for (i, p) in params.iter().enumerate() {
            if meta.tensors[np + i].name != format!("adam.m.{}", p.name)
                || meta.tensors[2 * np + i].name != format!("adam.v.{}", p.name)
            {
                return Err(bad(format!("moment tensors out of order at {}", p.name)));
            }
        }
        Ok(Self {
            config: meta.config,
            progress: meta.progress,
            rng: meta.rng,
            adam: AdamState {
                config: AdamConfig {
                    lr0: meta.options.lr0,
                    beta1: meta.adam.beta1,
                    beta2: meta.adam.beta2,
                    eps: meta.adam.eps,
                },
                t: meta.adam.t,
                names: params.iter().map(|p| p.name.clone()).collect(),
                m,
                v,
            },
            options: meta.options,
            cfa_permutations: meta.cfa_permutations,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Captures a model with fresh optimizer state and zero progress.
    pub fn from_model(model: &PRNet<f32>, options: TrainOptions, rng: RngState) -> Self {
        let params = model
            .named_parameters()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        let adam = AdamState::new(
            model,
            AdamConfig {
                lr0: options.lr0,
                ..AdamConfig::default()
            },
        );
        Self {
            config: model.config().clone(),
            options,
            progress: Progress { epoch: 0, iteration: 0 },
            rng,
            adam,
            cfa_permutations: cfa_perms(model),
            params,
        }
    }

    /// Rebuilds the model with the stored weights and permutations.
    pub fn build_model(&self) -> Result<PRNet<f32>> {
        let mut model = PRNet::<f32>::new(&self.config)?;
        let perms: Vec<_> = self
            .cfa_permutations
            .iter()
            .map(|p| (p.block.clone(), p.perm_s.clone(), p.perm_2s.clone()))
            .collect();
        model.set_cfa_permutations(&perms)?;
        let mut i = 0;
        let mut result = Ok(());
        model.visit_params("", &mut |name, p| {
            if result.is_err() {
                return;
            }
            result = match self.params.get(i) {
                Some(t) if t.name == name && t.shape == p.shape() => p.set(t.data.clone()),
                Some(t) => Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model parameter {name} {:?}",
                    t.name,
                    t.shape,
                    p.shape()
                ))),
                None => Err(Error::Checkpoint(format!("missing parameter {name}"))),
            };
            i += 1;
        });
        result?;
        if i != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {i}",
                self.params.len()
            )));
        }
        Ok(model)
    }
}

pub(crate) fn cfa_perms(model: &PRNet<f32>) -> Vec<CfaPermutation> {
    model
        .cfa_permutations()
        .into_iter()
        .map(|(block, perm_s, perm_2s)| CfaPermutation { block, perm_s, perm_2s })
        .collect()
}
