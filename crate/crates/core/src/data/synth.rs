use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, ManifestRow, Modality, SampleMeta};
use crate::audio::{FeatureCache, FeatureCacheHeader, FEATURE_FORMAT_VERSION};
use crate::error::{Error, Result};

/// Gaussian-blob source/destination task pair with tunable relatedness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Utterances per class in the source task.
    pub samples_per_class: usize,
    /// Utterances per class in the destination task; defaults to `samples_per_class`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destination_samples_per_class: Option<usize>,
    pub segments_per_utterance: usize,
    pub subjects: usize,
    /// 1 reuses the source prototypes, 0 makes them orthogonal.
    pub relatedness: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Expected norm of each subject's mean offset.
    pub subject_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            dim: 12_288,
            samples_per_class: 40,
            destination_samples_per_class: None,
            segments_per_utterance: 1,
            subjects: 4,
            relatedness: 0.9,
            noise: 0.1,
            subject_offset: 0.1,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synthetic(m));
        if self.num_classes * self.samples_per_class < 1 {
            return bad("need at least one sample".into());
        }
        if self.destination_samples_per_class == Some(0) {
            return bad("destination needs at least one sample per class".into());
        }
        if 2 * self.num_classes > self.dim {
            return bad(format!(
                "{} orthonormal prototypes do not fit in {} dimensions",
                2 * self.num_classes,
                self.dim
            ));
        }
        if self.subjects == 0 || self.segments_per_utterance == 0 {
            return bad("subjects and segments_per_utterance must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return bad(format!("relatedness {} outside [0, 1]", self.relatedness));
        }
        if !(self.noise >= 0.0 && self.subject_offset >= 0.0) {
            return bad("noise and subject_offset must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub manifest: DatasetManifest,
    pub dataset: Dataset,
    /// Class prototypes, `num_classes x dim`.
    pub prototypes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub source: SyntheticTask,
    pub destination: SyntheticTask,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `count` orthonormal vectors via Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn build_task(
    name: &str,
    spec: &SyntheticSpec,
    prototypes: Vec<Vec<f64>>,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticTask> {
    let classes: Vec<String> = (0..spec.num_classes).map(|c| format!("class{c}")).collect();
    let offsets: Vec<Vec<f64>> = (0..spec.subjects)
        .map(|_| {
            let scale = spec.subject_offset / (spec.dim as f64).sqrt();
            gaussian(rng, spec.dim)
                .into_iter()
                .map(|v| v * scale)
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut dataset = Dataset::empty(name, classes.clone(), spec.dim, 1);
    for u in 0..per_class {
        for (c, proto) in prototypes.iter().enumerate() {
            let s = (u * spec.num_classes + c) % spec.subjects;
            let subject = format!("s{s:02}");
            let utterance = format!("c{c}u{u:04}");
            let row = rows.len();
            for _ in 0..spec.segments_per_utterance {
                let x: Vec<f32> = proto
                    .iter()
                    .zip(&offsets[s])
                    .map(|(p, o)| {
                        let n: f64 = StandardNormal.sample(rng);
                        (p + o + spec.noise * n) as f32
                    })
                    .collect();
                dataset.push(
                    &x,
                    c,
                    SampleMeta {
                        row,
                        subject: subject.clone(),
                        utterance: utterance.clone(),
                    },
                )?;
            }
            rows.push(ManifestRow {
                path: format!("{name}/{subject}_{utterance}.pnfc"),
                label: classes[c].clone(),
                subject,
                utterance,
            });
        }
    }
    let manifest =
        DatasetManifest::new(name, classes, rows, Modality::AudioSegments, PathBuf::new())?;
    Ok(SyntheticTask {
        manifest,
        dataset,
        prototypes,
    })
}

/// Generates a source task and a related destination task.
///
/// Source prototypes are orthonormal; destination prototypes are
/// `ρ·source + sqrt(1-ρ²)·fresh`, with the fresh directions orthogonal to
/// every source prototype. Output is a pure function of `spec` and `seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.num_classes;
    let basis = orthonormal(&mut rng, 2 * c, spec.dim);
    let rho = spec.relatedness;
    let fresh_w = (1.0 - rho * rho).sqrt();
    let source_protos: Vec<Vec<f64>> = basis[..c].to_vec();
    let dest_protos: Vec<Vec<f64>> = basis[..c]
        .iter()
        .zip(&basis[c..])
        .map(|(s, f)| {
            s.iter()
                .zip(f)
                .map(|(a, b)| rho * a + fresh_w * b)
                .collect()
        })
        .collect();
    let source = build_task(
        "source",
        spec,
        source_protos,
        spec.samples_per_class,
        &mut rng,
    )?;
    let dest_n = spec
        .destination_samples_per_class
        .unwrap_or(spec.samples_per_class);
    let destination = build_task("destination", spec, dest_protos, dest_n, &mut rng)?;
    Ok(SyntheticPair {
        source,
        destination,
    })
}

impl SyntheticTask {
    /// Writes one feature cache per row under `dir/<name>/` and the manifest
    /// to `dir/<name>.csv`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let groups = self.dataset.utterance_groups();
        for row in &self.manifest.rows {
            let idx = &groups[&(row.subject.clone(), row.utterance.clone())];
            let (values, _) = self.dataset.gather(idx);
            let cache = FeatureCache {
                header: FeatureCacheHeader {
                    format_version: FEATURE_FORMAT_VERSION,
                    utterance_id: row.utterance.clone(),
                    shape: [idx.len(), 1, 1, self.dataset.dim],
                    channel_order: vec!["features".into()],
                    mel_config: None,
                    source_sha256: None,
                },
                values,
            };
            cache.write(&dir.join(&row.path))?;
        }
        let path = dir.join(format!("{}.csv", self.manifest.name));
        self.manifest.write_csv(&path)?;
        Ok(path)
    }
}
