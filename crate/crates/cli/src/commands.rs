//! The five subcommands.
//!
//! Run directory written by `train` and `transfer`:
//!
//! ```text
//! <out>/config.toml                  resolved config
//! <out>/summary.json                 RunSummary, read by `report`
//! <out>/source/{checkpoint.pnck,history.csv}             (transfer)
//! <out>/fold_NN/<arm>/checkpoint.pnck
//! <out>/fold_NN/<arm>/history.csv
//! <out>/fold_NN/<arm>/eval_segment.json
//! <out>/fold_NN/<arm>/eval_utterance.json
//! <out>/fold_NN/<arm>/normalization.json                 (when normalizing)
//! <out>/fold_NN/curves.csv                               (transfer)
//! <out>/fold_NN/transfer_report.json                     (transfer)
//! ```
//!
//! `<arm>` is `trained` for `train`, and `transfer` / `scratch` for `transfer`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pathnet::audio::{self, ChannelStats, FeatureCache};
use pathnet::checkpoint::Checkpoint;
use pathnet::data::{
    gen_synthetic, utterance_aggregate, Dataset, DatasetManifest, ManifestRow, Modality, SplitPlan,
};
use pathnet::evolution::{self, history_csv, EvolveJob, EvolveOutcome};
use pathnet::metrics::{assemble_curves, curves_csv, EvalReport};
use pathnet::network::ModuleBank;
use pathnet::transfer::{
    destination_phase, evaluate_on, scratch_baseline, source_phase, SourcePhase, TransferPlan,
    TransferSeeds, DESTINATION_TASK,
};
use pathnet::{par, Genotype, HyperParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Train,
    Transfer,
}

/// Artifacts of one evolved arm; paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmArtifacts {
    pub checkpoint: String,
    pub history: String,
    pub best_genotype: Genotype,
    pub best_fitness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_segment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_utterance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSummary {
    pub fold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub num_train: usize,
    pub num_test: usize,
    pub arms: BTreeMap<String, ArmArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub format_version: u32,
    pub command: RunKind,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ArmArtifacts>,
    pub folds: Vec<FoldSummary>,
}

impl RunSummary {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&p).map_err(|e| pathnet::Error::io(&p, e))?;
        Ok(serde_json::from_str(&text).map_err(pathnet::Error::from)?)
    }
}

/// Per-fold transfer report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferReport {
    pub source_best_genotype: Genotype,
    pub dest_best_genotype: Genotype,
    pub frozen_module_checksums: FrozenChecksums,
    pub curves: String,
    pub histories: BTreeMap<String, String>,
    pub eval_summaries: BTreeMap<String, EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenChecksums {
    pub pre: BTreeMap<String, String>,
    pub post: BTreeMap<String, String>,
    pub intact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scores {
    pub war: f64,
    pub uar: f64,
    pub uap: f64,
}

impl From<&EvalReport> for Scores {
    fn from(r: &EvalReport) -> Self {
        Self {
            war: r.war,
            uar: r.uar,
            uap: r.uap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub segment: Scores,
    pub utterance: Scores,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| pathnet::Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| pathnet::Error::io(path, e))?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(pathnet::Error::from)?;
    text.push('\n');
    write_file(path, text)
}

fn rel(run_dir: &Path, p: &Path) -> String {
    p.strip_prefix(run_dir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Segment- and utterance-level reports for one pathway on `test`.
pub fn evaluate_levels(
    bank: &ModuleBank<f32>,
    g: &Genotype,
    pinned: Option<&Genotype>,
    test: &Dataset,
    task: &str,
) -> Result<(EvalReport, EvalReport)> {
    let (segment, post) = evaluate_on(bank, g, pinned, test, task)?;
    let groups = test.utterance_groups();
    let grouped: Vec<Vec<Vec<f64>>> = groups
        .values()
        .map(|idx| idx.iter().map(|&i| post[i].clone()).collect())
        .collect();
    let truth: Vec<usize> = groups.values().map(|idx| test.labels[idx[0]]).collect();
    let preds = utterance_aggregate(&grouped)?;
    let posteriors: Vec<Vec<f64>> = preds.into_iter().map(|p| p.posterior).collect();
    let utterance = EvalReport::from_posteriors(&truth, &posteriors, &test.class_names)?;
    Ok((segment, utterance))
}

struct ArmInput<'a> {
    dir: PathBuf,
    outcome: &'a EvolveOutcome,
    genotypes: BTreeMap<String, Genotype>,
    hp: &'a HyperParams,
    stats: Option<&'a ChannelStats>,
}

fn write_arm(
    run_dir: &Path,
    arm: ArmInput<'_>,
    eval: Option<(&EvalReport, &EvalReport)>,
) -> Result<ArmArtifacts> {
    let ckpt = arm.dir.join("checkpoint.pnck");
    Checkpoint {
        hyperparams: arm.hp.clone(),
        genotypes: arm.genotypes,
        bank: arm.outcome.bank.clone(),
    }
    .write(&ckpt)?;
    let hist = arm.dir.join("history.csv");
    write_file(&hist, history_csv(&arm.outcome.history))?;
    if let Some(stats) = arm.stats {
        write_json(&arm.dir.join("normalization.json"), stats)?;
    }
    let mut out = ArmArtifacts {
        checkpoint: rel(run_dir, &ckpt),
        history: rel(run_dir, &hist),
        best_genotype: arm.outcome.best.clone(),
        best_fitness: arm.outcome.best_fitness,
        eval_segment: None,
        eval_utterance: None,
    };
    if let Some((seg, utt)) = eval {
        let s = arm.dir.join("eval_segment.json");
        let u = arm.dir.join("eval_utterance.json");
        write_json(&s, seg)?;
        write_json(&u, utt)?;
        out.eval_segment = Some(rel(run_dir, &s));
        out.eval_utterance = Some(rel(run_dir, &u));
    }
    Ok(out)
}

/// Fits statistics on `train` and applies them to every dataset given.
fn normalize_with_train(train: &mut Dataset, others: &mut [&mut Dataset]) -> ChannelStats {
    let stats = train.fit_stats();
    train.apply_stats(&stats);
    for d in others.iter_mut() {
        d.apply_stats(&stats);
    }
    stats
}

fn check_dim(d: &Dataset, hp: &HyperParams) -> Result<()> {
    if d.dim != hp.input_dim {
        return Err(CliError::Config(format!(
            "dataset {} has input dim {}, hyperparams.input_dim is {}",
            d.name, d.dim, hp.input_dim
        )));
    }
    Ok(())
}

fn split_plan(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<SplitPlan> {
    Ok(SplitPlan::for_scheme(
        manifest,
        cfg.split_scheme()?,
        cfg.hyperparams.rng_seed,
    )?)
}

fn fold_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join(format!("fold_{k:02}"))
}

/// Evolves on each fold's training portion and scores its held-out part.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let section = cfg
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [train] section".into()))?;
    let entry = cfg.dataset(&section.dataset)?;
    let manifest = entry.read_manifest()?;
    let data = manifest.load()?;
    check_dim(&data, &cfg.hyperparams)?;
    let plan = split_plan(cfg, &manifest)?;
    let run_dir = cfg.output_dir.clone();
    cfg.write_resolved(&run_dir)?;
    let hp = &cfg.hyperparams;
    let mut folds = Vec::new();
    for (k, fold) in plan.folds.iter().enumerate() {
        let mut train = data.select_rows(&fold.train);
        let mut test = data.select_rows(&fold.test);
        let stats = cfg
            .normalize
            .then(|| normalize_with_train(&mut train, &mut [&mut test]));
        let job = EvolveJob {
            train: &train,
            task: &entry.name,
            pinned: None,
            probe: (!test.is_empty()).then_some(&test),
        };
        let outcome = evolution::evolve(&job, hp, hp.rng_seed)?;
        let eval = if test.is_empty() {
            None
        } else {
            Some(evaluate_levels(
                &outcome.bank,
                &outcome.best,
                None,
                &test,
                &entry.name,
            )?)
        };
        let arm = write_arm(
            &run_dir,
            ArmInput {
                dir: fold_dir(&run_dir, k).join("trained"),
                outcome: &outcome,
                genotypes: BTreeMap::from([("best".to_string(), outcome.best.clone())]),
                hp,
                stats: stats.as_ref(),
            },
            eval.as_ref().map(|(s, u)| (s, u)),
        )?;
        folds.push(FoldSummary {
            fold: k,
            subject: fold.subject.clone(),
            num_train: train.len(),
            num_test: test.len(),
            arms: BTreeMap::from([("trained".to_string(), arm)]),
            curves: None,
            transfer_report: None,
        });
    }
    write_json(
        &run_dir.join(SUMMARY_FILE),
        &RunSummary {
            format_version: SUMMARY_FORMAT_VERSION,
            command: RunKind::Train,
            split: plan.scheme.to_string(),
            source: None,
            folds,
        },
    )?;
    Ok(run_dir)
}

fn transfer_plan<'a>(
    sources: &'a [Dataset],
    shared: &[String],
    train: &'a Dataset,
    test: &'a Dataset,
    hp_source: &HyperParams,
    hp_dest: &HyperParams,
    seeds: TransferSeeds,
) -> TransferPlan<'a> {
    TransferPlan {
        sources: sources.iter().collect(),
        shared_label_space: shared.to_vec(),
        destination_train: train,
        destination_test: test,
        hp_source: hp_source.clone(),
        hp_dest: hp_dest.clone(),
        seeds,
    }
}

/// Source phase once, then a transfer and a scratch arm per destination fold.
pub fn cmd_transfer(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let section = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [transfer] section".into()))?;
    let seeds = cfg.transfer_seeds()?;
    let dest_entry = cfg.dataset(&section.destination)?;
    let mut dest_entry = dest_entry.clone();
    if let Some(shared) = &section.shared_label_space {
        dest_entry.classes = Some(shared.clone());
    }
    let dest_manifest = dest_entry.read_manifest()?;
    let shared = dest_manifest.class_list.clone();
    let mut sources = Vec::new();
    for name in &section.sources {
        let m = cfg.dataset(name)?.read_manifest()?;
        let mut d = m.load()?;
        check_dim(&d, &cfg.hyperparams)?;
        if cfg.normalize {
            normalize_with_train(&mut d, &mut []);
        }
        sources.push(d);
    }
    let dest = dest_manifest.load()?;
    check_dim(&dest, &cfg.hyperparams)?;
    let plan = split_plan(cfg, &dest_manifest)?;
    if plan.folds.is_empty() {
        return Err(CliError::Config("split produced no folds".into()));
    }
    let run_dir = cfg.output_dir.clone();
    cfg.write_resolved(&run_dir)?;

    let hp = &cfg.hyperparams;
    let mut hp_source = hp.clone();
    if let Some(g) = section.source_generations {
        hp_source.generations = g;
    }
    let fold_data = |k: usize| -> (Dataset, Dataset, Option<ChannelStats>) {
        let mut train = dest.select_rows(&plan.folds[k].train);
        let mut test = dest.select_rows(&plan.folds[k].test);
        let stats = cfg
            .normalize
            .then(|| normalize_with_train(&mut train, &mut [&mut test]));
        (train, test, stats)
    };

    let (train0, test0, _) = fold_data(0);
    let source: SourcePhase = source_phase(&transfer_plan(
        &sources, &shared, &train0, &test0, &hp_source, hp, seeds,
    ))?;
    let source_arm = write_arm(
        &run_dir,
        ArmInput {
            dir: run_dir.join("source"),
            outcome: &source.outcome,
            genotypes: BTreeMap::from([("best".to_string(), source.outcome.best.clone())]),
            hp: &hp_source,
            stats: None,
        },
        None,
    )?;

    let mut folds = Vec::new();
    for k in 0..plan.folds.len() {
        let (train, test, stats) = fold_data(k);
        let tplan = transfer_plan(&sources, &shared, &train, &test, &hp_source, hp, seeds);
        let dest_phase = destination_phase(&source, &tplan)?;
        let scratch = scratch_baseline(&train, Some(&test), hp, seeds.baseline)?;
        let dir = fold_dir(&run_dir, k);
        let keep = &source.outcome.best;
        let (dest_eval, scratch_eval) = if test.is_empty() {
            (None, None)
        } else {
            let d = &dest_phase.outcome;
            (
                Some(evaluate_levels(
                    &d.bank,
                    &d.best,
                    Some(keep),
                    &test,
                    DESTINATION_TASK,
                )?),
                Some(evaluate_levels(
                    &scratch.bank,
                    &scratch.best,
                    None,
                    &test,
                    DESTINATION_TASK,
                )?),
            )
        };
        let transfer_arm = write_arm(
            &run_dir,
            ArmInput {
                dir: dir.join("transfer"),
                outcome: &dest_phase.outcome,
                genotypes: BTreeMap::from([
                    ("best".to_string(), dest_phase.outcome.best.clone()),
                    ("pinned".to_string(), keep.clone()),
                ]),
                hp,
                stats: stats.as_ref(),
            },
            dest_eval.as_ref().map(|(s, u)| (s, u)),
        )?;
        let scratch_arm = write_arm(
            &run_dir,
            ArmInput {
                dir: dir.join("scratch"),
                outcome: &scratch,
                genotypes: BTreeMap::from([("best".to_string(), scratch.best.clone())]),
                hp,
                stats: stats.as_ref(),
            },
            scratch_eval.as_ref().map(|(s, u)| (s, u)),
        )?;
        let curves_path = dir.join("curves.csv");
        let rows = assemble_curves(&dest_phase.outcome.history, &scratch.history)?;
        write_file(&curves_path, curves_csv(&rows))?;

        let mut eval_summaries = BTreeMap::new();
        if let (Some(d), Some(s)) = (&dest_eval, &scratch_eval) {
            eval_summaries.insert(
                "transfer".to_string(),
                EvalSummary {
                    segment: (&d.0).into(),
                    utterance: (&d.1).into(),
                },
            );
            eval_summaries.insert(
                "scratch".to_string(),
                EvalSummary {
                    segment: (&s.0).into(),
                    utterance: (&s.1).into(),
                },
            );
        }
        let report = TransferReport {
            source_best_genotype: keep.clone(),
            dest_best_genotype: dest_phase.outcome.best.clone(),
            frozen_module_checksums: FrozenChecksums {
                intact: dest_phase.frozen_checksums_pre == dest_phase.frozen_checksums_post,
                pre: dest_phase.frozen_checksums_pre.clone(),
                post: dest_phase.frozen_checksums_post.clone(),
            },
            curves: rel(&run_dir, &curves_path),
            histories: BTreeMap::from([
                ("source".to_string(), source_arm.history.clone()),
                ("transfer".to_string(), transfer_arm.history.clone()),
                ("scratch".to_string(), scratch_arm.history.clone()),
            ]),
            eval_summaries,
        };
        let report_path = dir.join("transfer_report.json");
        write_json(&report_path, &report)?;
        if !report.frozen_module_checksums.intact {
            return Err(CliError::Runtime(pathnet::Error::Shape(
                "frozen source modules changed during the destination phase".into(),
            )));
        }
        folds.push(FoldSummary {
            fold: k,
            subject: plan.folds[k].subject.clone(),
            num_train: train.len(),
            num_test: test.len(),
            arms: BTreeMap::from([
                ("scratch".to_string(), scratch_arm),
                ("transfer".to_string(), transfer_arm),
            ]),
            curves: Some(rel(&run_dir, &curves_path)),
            transfer_report: Some(rel(&run_dir, &report_path)),
        });
    }
    write_json(
        &run_dir.join(SUMMARY_FILE),
        &RunSummary {
            format_version: SUMMARY_FORMAT_VERSION,
            command: RunKind::Transfer,
            split: plan.scheme.to_string(),
            source: Some(source_arm),
            folds,
        },
    )?;
    Ok(run_dir)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub total: usize,
    pub written: usize,
    pub skipped: usize,
    /// `(input path, error)` per failed row.
    pub failures: Vec<(String, String)>,
    pub index: PathBuf,
}

enum ExtractOutcome {
    Written,
    Skipped,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn cache_name(utterance: &str) -> String {
    let clean: String = utterance
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}.pnfc")
}

fn extract_one(
    src: &Path,
    dst: &Path,
    utterance: &str,
    mel: &audio::MelConfig,
) -> pathnet::Result<ExtractOutcome> {
    let bytes = fs::read(src).map_err(|e| pathnet::Error::io(src, e))?;
    let hash = sha256_hex(&bytes);
    if let Ok(existing) = FeatureCache::read(dst) {
        let h = &existing.header;
        if h.source_sha256.as_deref() == Some(hash.as_str()) && h.mel_config.as_ref() == Some(mel) {
            return Ok(ExtractOutcome::Skipped);
        }
    }
    let (samples, _) = audio::load_wav(src, mel)?;
    let segments = audio::extract_segments(&samples, mel, utterance)?;
    FeatureCache::from_segments(&segments, mel, utterance, Some(hash)).write(dst)?;
    Ok(ExtractOutcome::Written)
}

/// Turns every WAV of the extract manifest into a feature cache.
///
/// Unchanged inputs (same content hash and front-end settings) are skipped.
/// The index manifest lists the caches that exist after the run; any failed
/// row makes the command fail with a data error.
pub fn cmd_extract(cfg: &ExperimentConfig) -> Result<ExtractSummary> {
    let x = cfg
        .extract
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [extract] section".into()))?;
    ExperimentConfig::require_paths([x.manifest.as_path()])?;
    let manifest =
        DatasetManifest::read_csv(&x.manifest, "extract", None, Modality::AudioSegments)?;
    let mut names: Vec<String> = manifest
        .rows
        .iter()
        .map(|r| cache_name(&r.utterance))
        .collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config(
            "utterance ids collide after file-name sanitizing".into(),
        ));
    }
    fs::create_dir_all(&x.cache_dir).map_err(|e| pathnet::Error::io(&x.cache_dir, e))?;
    let results = par::map_slice(&manifest.rows, |row| {
        let dst = x.cache_dir.join(cache_name(&row.utterance));
        extract_one(&manifest.resolve(row), &dst, &row.utterance, &cfg.features).map(|o| (o, dst))
    });
    let index = x.index_path();
    let index_dir = index.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut summary = ExtractSummary {
        total: manifest.rows.len(),
        index: index.clone(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (row, res) in manifest.rows.iter().zip(results) {
        match res {
            Ok((outcome, dst)) => {
                match outcome {
                    ExtractOutcome::Written => summary.written += 1,
                    ExtractOutcome::Skipped => summary.skipped += 1,
                }
                rows.push(ManifestRow {
                    path: rel(&index_dir, &dst),
                    ..row.clone()
                });
            }
            Err(e) => summary.failures.push((row.path.clone(), e.to_string())),
        }
    }
    let index_manifest = DatasetManifest::new(
        "index",
        manifest.class_list.clone(),
        rows,
        Modality::AudioSegments,
        index_dir,
    )?;
    index_manifest.write_csv(&index)?;
    if !summary.failures.is_empty() {
        for (path, err) in &summary.failures {
            eprintln!("extract: {path}: {err}");
        }
        return Err(CliError::PartialExtract {
            failed: summary.failures.len(),
            total: summary.total,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub source_manifest: PathBuf,
    pub destination_manifest: PathBuf,
}

/// Writes the synthetic source/destination pair as feature caches and manifests.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthSummary> {
    let s = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [synth] section".into()))?;
    let pair = gen_synthetic(&s.spec, cfg.hyperparams.rng_seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(SynthSummary {
        source_manifest: pair.source.write(&s.out_dir)?,
        destination_manifest: pair.destination.write(&s.out_dir)?,
    })
}
