use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hparams::HyperParams;

/// A pathway: `N` module indices for each of the `L` layers.
///
/// Duplicate genes within a layer are allowed; the active set is the
/// deduplicated gene set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype {
    genes: Vec<Vec<usize>>,
}

impl Genotype {
    pub fn new(genes: Vec<Vec<usize>>, hp: &HyperParams) -> Result<Self> {
        let g = Self { genes };
        g.check(hp)?;
        Ok(g)
    }

    /// Genes drawn i.i.d. uniform over `[0, M)`.
    pub fn random<R: Rng + ?Sized>(hp: &HyperParams, rng: &mut R) -> Self {
        let genes = (0..hp.num_layers)
            .map(|_| {
                (0..hp.max_active_per_layer)
                    .map(|_| rng.random_range(0..hp.modules_per_layer))
                    .collect()
            })
            .collect();
        Self { genes }
    }

    pub fn check(&self, hp: &HyperParams) -> Result<()> {
        if self.genes.len() != hp.num_layers {
            return Err(Error::InvalidGenotype(format!(
                "expected {} layers, got {}",
                hp.num_layers,
                self.genes.len()
            )));
        }
        for (l, layer) in self.genes.iter().enumerate() {
            if layer.len() != hp.max_active_per_layer {
                return Err(Error::InvalidGenotype(format!(
                    "layer {l}: expected {} genes, got {}",
                    hp.max_active_per_layer,
                    layer.len()
                )));
            }
            if let Some(&bad) = layer.iter().find(|&&m| m >= hp.modules_per_layer) {
                return Err(Error::InvalidGenotype(format!(
                    "layer {l}: gene {bad} outside [0, {})",
                    hp.modules_per_layer
                )));
            }
        }
        Ok(())
    }

    pub fn genes(&self) -> &[Vec<usize>] {
        &self.genes
    }

    pub fn genes_mut(&mut self) -> &mut [Vec<usize>] {
        &mut self.genes
    }

    pub fn num_layers(&self) -> usize {
        self.genes.len()
    }

    /// Sorted, deduplicated module indices per layer.
    pub fn active_modules(&self) -> Vec<Vec<usize>> {
        self.genes
            .iter()
            .map(|layer| {
                let mut v = layer.clone();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect()
    }

    /// Number of gene positions at which `self` and `other` differ.
    pub fn hamming(&self, other: &Genotype) -> usize {
        self.genes
            .iter()
            .flatten()
            .zip(other.genes.iter().flatten())
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Per-layer union of the active sets of `g` and, if given, `pinned`.
pub fn effective_active(g: &Genotype, pinned: Option<&Genotype>) -> Vec<Vec<usize>> {
    let mut active = g.active_modules();
    if let Some(p) = pinned {
        for (layer, extra) in active.iter_mut().zip(p.active_modules()) {
            layer.extend(extra);
            layer.sort_unstable();
            layer.dedup();
        }
    }
    active
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .genes
            .iter()
            .map(|l| {
                l.iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        write!(f, "[{}]", rows.join("|"))
    }
}
