//! Bank + genotypes on disk.
//!
//! Uses the [`crate::container`] layout with magic `PNETCKPT`. The payload
//! holds every module layer-major (for each module: weights row-major, then
//! bias), followed by each head in lexicographic task order (weights, bias).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Magic};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::hparams::HyperParams;
use crate::network::{BankShape, Linear, ModuleBank};

pub const CHECKPOINT_MAGIC: Magic = *b"PNETCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub task: String,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub hyperparams: HyperParams,
    pub shape: BankShape,
    /// Named genotypes, e.g. `best` and `pinned`.
    pub genotypes: BTreeMap<String, Genotype>,
    pub frozen: Vec<Vec<bool>>,
    pub heads: Vec<HeadLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyperparams: HyperParams,
    pub genotypes: BTreeMap<String, Genotype>,
    pub bank: ModuleBank<f32>,
}

impl Checkpoint {
    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyperparams: self.hyperparams.clone(),
            shape: self.bank.shape(),
            genotypes: self.genotypes.clone(),
            frozen: self.bank.frozen_mask().to_vec(),
            heads: self
                .bank
                .heads()
                .iter()
                .map(|(task, h)| HeadLayout {
                    task: task.clone(),
                    num_classes: h.out_dim,
                })
                .collect(),
        }
    }

    fn payload(&self) -> Vec<f32> {
        let mut out = Vec::new();
        let all = self
            .bank
            .layers()
            .iter()
            .flatten()
            .chain(self.bank.heads().values());
        for lin in all {
            out.extend_from_slice(&lin.weights);
            out.extend_from_slice(&lin.bias);
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(&CHECKPOINT_MAGIC, &self.header(), &self.payload())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, payload) =
            container::decode::<CheckpointHeader>(&CHECKPOINT_MAGIC, bytes, path)?;
        let bad = |reason: String| Error::Container {
            path: path.to_path_buf(),
            reason,
        };
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let shape = header.shape;
        let mut cursor = 0usize;
        let mut take = |in_dim: usize, out_dim: usize| -> Result<Linear<f32>> {
            let n = in_dim * out_dim + out_dim;
            let chunk = payload
                .get(cursor..cursor + n)
                .ok_or_else(|| bad("payload shorter than header implies".into()))?;
            cursor += n;
            let (w, b) = chunk.split_at(in_dim * out_dim);
            Ok(Linear {
                in_dim,
                out_dim,
                weights: w.to_vec(),
                bias: b.to_vec(),
            })
        };
        let mut layers = Vec::with_capacity(shape.num_layers);
        for l in 0..shape.num_layers {
            let mods = (0..shape.modules_per_layer)
                .map(|_| take(shape.layer_input_dim(l), shape.module_width))
                .collect::<Result<Vec<_>>>()?;
            layers.push(mods);
        }
        let mut heads = BTreeMap::new();
        for h in &header.heads {
            heads.insert(h.task.clone(), take(shape.module_width, h.num_classes)?);
        }
        if cursor != payload.len() {
            return Err(bad("payload longer than header implies".into()));
        }
        let bank = ModuleBank::from_parts(shape, layers, heads, header.frozen)?;
        Ok(Self {
            hyperparams: header.hyperparams,
            genotypes: header.genotypes,
            bank,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write(path, &CHECKPOINT_MAGIC, &self.header(), &self.payload())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
