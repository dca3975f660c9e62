//! Experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every run directory receives the resolved copy as `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use pathnet::audio::MelConfig;
use pathnet::data::{DatasetManifest, Modality, SplitScheme, SyntheticSpec};
use pathnet::transfer::TransferSeeds;
use pathnet::HyperParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Split scheme: `losocv` or `kfold:<k>`.
    #[serde(default = "default_split")]
    pub split: String,
    /// z-score inputs with statistics of the training portion.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// `rng_seed` here is the base seed of every run.
    #[serde(default)]
    pub hyperparams: HyperParams,
    #[serde(default)]
    pub features: MelConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract: Option<ExtractSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
}

fn default_split() -> String {
    "losocv".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub manifest: PathBuf,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    /// Class order; defaults to the sorted distinct labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

fn default_modality() -> Modality {
    Modality::AudioSegments
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    /// Manifest whose `path` column points at WAV files.
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    /// Output manifest of the caches; defaults to `<cache_dir>/index.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
}

impl ExtractSection {
    pub fn index_path(&self) -> PathBuf {
        self.index
            .clone()
            .unwrap_or_else(|| self.cache_dir.join("index.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub sources: Vec<String>,
    pub destination: String,
    /// Label space shared by sources and destination; defaults to the
    /// destination's classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_label_space: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_seed: Option<u64>,
    /// Defaults to `destination_seed`, pairing the population draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_seed: Option<u64>,
    /// Overrides `hyperparams.generations` for the source phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_generations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub spec: SyntheticSpec,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads, resolves relative paths and applies overrides.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve_paths(&base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for d in &mut self.datasets {
            fix(&mut d.manifest);
        }
        if let Some(x) = &mut self.extract {
            fix(&mut x.manifest);
            fix(&mut x.cache_dir);
            if let Some(i) = &mut x.index {
                fix(i);
            }
        }
        if let Some(s) = &mut self.synth {
            fix(&mut s.out_dir);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.hyperparams.rng_seed = seed;
        }
        if let Some(f) = &o.folds {
            self.split = f.clone();
        }
    }

    /// Shape checks only; paths are checked per command by [`Self::require_paths`].
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        self.features.validate()?;
        self.split_scheme()?;
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("dataset names must be unique".into()));
        }
        if let Some(t) = &self.train {
            self.dataset(&t.dataset)?;
        }
        if let Some(t) = &self.transfer {
            if t.sources.is_empty() {
                return Err(CliError::Config("transfer.sources is empty".into()));
            }
            for s in &t.sources {
                self.dataset(s)?;
            }
            self.dataset(&t.destination)?;
        }
        Ok(())
    }

    pub fn split_scheme(&self) -> Result<SplitScheme> {
        self.split
            .parse()
            .map_err(|e: pathnet::Error| CliError::Config(e.to_string()))
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetEntry> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| CliError::Config(format!("no dataset named {name:?}")))
    }

    pub fn require_paths<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn transfer_seeds(&self) -> Result<TransferSeeds> {
        let t = self
            .transfer
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [transfer] section".into()))?;
        let base = self.hyperparams.rng_seed;
        let destination = t.destination_seed.unwrap_or(base.wrapping_add(1));
        Ok(TransferSeeds {
            source: t.source_seed.unwrap_or(base),
            destination,
            baseline: t.baseline_seed.unwrap_or(destination),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| pathnet::Error::io(dir, e))?;
        let p = dir.join("config.toml");
        fs::write(&p, self.to_toml()).map_err(|e| pathnet::Error::io(&p, e))?;
        Ok(())
    }
}

impl DatasetEntry {
    pub fn read_manifest(&self) -> Result<DatasetManifest> {
        ExperimentConfig::require_paths([self.manifest.as_path()])?;
        Ok(DatasetManifest::read_csv(
            &self.manifest,
            &self.name,
            self.classes.clone(),
            self.modality,
        )?)
    }
}
