//! Datasets, manifests, subject-independent splits and synthetic tasks.

mod aggregate;
mod manifest;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

pub use aggregate::{utterance_aggregate, UtterancePrediction};
pub use manifest::{DatasetManifest, ManifestRow, Modality};
pub use split::{kfold_split, losocv_split, Fold, SplitPlan, SplitScheme};
pub use synth::{gen_synthetic, SyntheticPair, SyntheticSpec, SyntheticTask};

use crate::audio::ChannelStats;
use crate::error::{Error, Result};

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleMeta {
    /// Manifest row index.
    pub row: usize,
    pub subject: String,
    pub utterance: String,
}

/// In-memory labeled samples, `dim` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub dim: usize,
    /// Number of equal-length channel blocks in each sample.
    pub channels: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    pub meta: Vec<SampleMeta>,
}

impl Dataset {
    pub fn empty(name: &str, class_names: Vec<String>, dim: usize, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            class_names,
            dim,
            channels,
            inputs: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f32], label: usize, meta: SampleMeta) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "sample has {} values, dataset dim is {}",
                x.len(),
                self.dim
            )));
        }
        if label >= self.num_classes() {
            return Err(Error::Shape(format!("label {label} out of range")));
        }
        self.inputs.extend_from_slice(x);
        self.labels.push(label);
        self.meta.push(meta);
        Ok(())
    }

    /// Copies the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (inputs, labels) = self.gather(indices);
        Dataset {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            dim: self.dim,
            channels: self.channels,
            inputs,
            labels,
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    /// Samples whose manifest row is in `rows`, keeping dataset order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let keep: BTreeSet<usize> = rows.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.meta[i].row))
            .collect();
        self.select(&idx)
    }

    /// Flat inputs and labels for the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        (inputs, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.meta.iter().map(|m| m.subject.as_str()).collect()
    }

    /// Sample indices grouped by `(subject, utterance)`, keys sorted.
    pub fn utterance_groups(&self) -> BTreeMap<(String, String), Vec<usize>> {
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, m) in self.meta.iter().enumerate() {
            groups
                .entry((m.subject.clone(), m.utterance.clone()))
                .or_default()
                .push(i);
        }
        groups
    }

    pub fn fit_stats(&self) -> ChannelStats {
        ChannelStats::fit(self.inputs.chunks_exact(self.dim), self.channels)
    }

    pub fn apply_stats(&mut self, stats: &ChannelStats) {
        let dim = self.dim;
        for row in self.inputs.chunks_exact_mut(dim) {
            stats.apply(row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut d = Dataset::empty("t", vec!["a".into(), "b".into()], 2, 1);
        for i in 0..6 {
            let meta = SampleMeta {
                row: i / 2,
                subject: format!("s{}", i % 3),
                utterance: format!("u{}", i / 2),
            };
            d.push(&[i as f32, -(i as f32)], i % 2, meta).unwrap();
        }
        d
    }

    #[test]
    fn select_rows_keeps_order() {
        let d = tiny();
        let s = d.select_rows(&[2, 0]);
        assert_eq!(s.len(), 4);
        assert_eq!(s.sample(0), &[0.0, -0.0]);
        assert_eq!(s.sample(3), &[5.0, -5.0]);
    }

    #[test]
    fn push_validates() {
        let mut d = tiny();
        let meta = d.meta[0].clone();
        assert!(d.push(&[1.0], 0, meta.clone()).is_err());
        assert!(d.push(&[1.0, 2.0], 2, meta).is_err());
    }
}
