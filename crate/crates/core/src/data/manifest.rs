use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SampleMeta};
use crate::audio::FeatureCache;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    /// Each row is a feature cache holding one or more segments.
    AudioSegments,
    /// Each row is one pre-cropped RGB frame; frames of a video share an utterance id.
    ImageFrames,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub subject: String,
    pub utterance: String,
}

/// Labeled rows of a dataset. CSV columns: `path,label,subject,utterance`;
/// relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub class_list: Vec<String>,
    pub rows: Vec<ManifestRow>,
    pub modality: Modality,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        name: &str,
        class_list: Vec<String>,
        rows: Vec<ManifestRow>,
        modality: Modality,
        base_dir: PathBuf,
    ) -> Result<Self> {
        let m = Self {
            name: name.to_string(),
            class_list,
            rows,
            modality,
            base_dir,
        };
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest CSV. Without `class_list`, classes are the sorted
    /// distinct labels.
    pub fn read_csv(
        path: &Path,
        name: &str,
        class_list: Option<Vec<String>>,
        modality: Modality,
    ) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = ["path", "label", "subject", "utterance"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Manifest(format!(
                "{}: header must be `path,label,subject,utterance`",
                path.display()
            )));
        }
        let rows = reader
            .deserialize::<ManifestRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let class_list = class_list.unwrap_or_else(|| {
            rows.iter()
                .map(|r| r.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        });
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(name, class_list, rows, modality, base_dir)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let classes: HashSet<&str> = self.class_list.iter().map(String::as_str).collect();
        if classes.len() != self.class_list.len() {
            return Err(Error::Manifest(format!(
                "{}: duplicate class names",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.rows.iter().enumerate() {
            if !classes.contains(r.label.as_str()) {
                return Err(Error::Manifest(format!(
                    "{} row {i}: label {:?} not in class list",
                    self.name, r.label
                )));
            }
            if self.modality == Modality::AudioSegments
                && !seen.insert((r.subject.as_str(), r.utterance.as_str()))
            {
                return Err(Error::Manifest(format!(
                    "{} row {i}: utterance {:?} repeated for subject {:?}",
                    self.name, r.utterance, r.subject
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.class_list.iter().position(|c| c == label)
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.subject.as_str()).collect()
    }

    /// Loads every row into memory. Audio rows expand to one sample per
    /// segment; image rows become one sample each.
    pub fn load(&self) -> Result<Dataset> {
        let loaded: Vec<Result<(Vec<f32>, usize, usize)>> =
            par::map_slice(&self.rows, |row| self.load_row(row));
        let mut dataset: Option<Dataset> = None;
        for (i, (row, item)) in self.rows.iter().zip(loaded).enumerate() {
            let (values, dim, channels) = item?;
            let label = self.label_index(&row.label).expect("validated label");
            let d = dataset.get_or_insert_with(|| {
                Dataset::empty(&self.name, self.class_list.clone(), dim, channels)
            });
            if d.dim != dim || d.channels != channels {
                return Err(Error::Manifest(format!(
                    "{} row {i}: sample shape {dim}/{channels} differs from {}/{}",
                    self.name, d.dim, d.channels
                )));
            }
            for x in values.chunks_exact(dim) {
                let meta = SampleMeta {
                    row: i,
                    subject: row.subject.clone(),
                    utterance: row.utterance.clone(),
                };
                d.push(x, label, meta)?;
            }
        }
        dataset.ok_or_else(|| Error::Manifest(format!("{}: no rows", self.name)))
    }

    fn load_row(&self, row: &ManifestRow) -> Result<(Vec<f32>, usize, usize)> {
        let path = self.resolve(row);
        match self.modality {
            Modality::AudioSegments => {
                let cache = FeatureCache::read(&path)?;
                let dim = cache.header.segment_dim();
                Ok((cache.values, dim, cache.header.shape[1]))
            }
            Modality::ImageFrames => {
                let img = image::open(&path)?.to_rgb8();
                let (w, h) = img.dimensions();
                let plane = (w * h) as usize;
                let mut values = vec![0.0f32; 3 * plane];
                for (i, px) in img.pixels().enumerate() {
                    for c in 0..3 {
                        values[c * plane + i] = px.0[c] as f32 / 255.0;
                    }
                }
                Ok((values, 3 * plane, 3))
            }
        }
    }
}
