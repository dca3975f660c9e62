//! Consolidated report over a finished `train` or `transfer` run.
//!
//! Writes `<run>/report/report.json` plus per-fold CSVs next to it. All
//! paths inside the JSON are relative to the run directory. The schema is
//! the [`Report`] type; unknown keys are rejected when reading it back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pathnet::metrics::{ClassReport, EvalReport};
use pathnet::Genotype;
use serde::{Deserialize, Serialize};

use crate::commands::{write_json, RunKind, RunSummary};
use crate::error::{CliError, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub format_version: u32,
    pub command: RunKind,
    pub split: String,
    pub folds: Vec<FoldReport>,
    /// Per arm, scores averaged over folds with a held-out set.
    pub summary: BTreeMap<String, ArmMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldReport {
    pub fold: usize,
    pub subject: Option<String>,
    pub num_train: usize,
    pub num_test: usize,
    pub arms: BTreeMap<String, ArmReport>,
    pub curves_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmReport {
    pub best_genotype: Genotype,
    pub best_fitness: f64,
    pub history_csv: String,
    pub checkpoint: String,
    pub segment: Option<LevelReport>,
    pub utterance: Option<LevelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelReport {
    pub num_samples: u64,
    pub war: f64,
    pub uar: f64,
    pub uap: f64,
    pub per_class: Vec<ClassReport>,
    pub confusion_csv: String,
    /// One `fpr,tpr` file per class; `None` where ROC is undefined.
    pub roc_csv: Vec<Option<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanScores {
    pub folds: usize,
    pub war: f64,
    pub uar: f64,
    pub uap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmMeans {
    pub segment: Option<MeanScores>,
    pub utterance: Option<MeanScores>,
}

fn read_eval(run_dir: &Path, rel: &str) -> Result<EvalReport> {
    let p = run_dir.join(rel);
    let text = fs::read_to_string(&p).map_err(|e| pathnet::Error::io(&p, e))?;
    Ok(serde_json::from_str(&text).map_err(pathnet::Error::from)?)
}

fn put(run_dir: &Path, name: &str, contents: &str) -> Result<String> {
    let rel = format!("{REPORT_DIR}/{name}");
    let p = run_dir.join(&rel);
    fs::write(&p, contents).map_err(|e| pathnet::Error::io(&p, e))?;
    Ok(rel)
}

fn level(run_dir: &Path, stem: &str, eval: &EvalReport) -> Result<LevelReport> {
    let confusion_csv = put(
        run_dir,
        &format!("{stem}_confusion.csv"),
        &eval.confusion.to_csv(&eval.class_names),
    )?;
    let roc_csv = (0..eval.class_names.len())
        .map(|c| {
            eval.roc_csv(c)
                .map(|csv| put(run_dir, &format!("{stem}_roc_{c}.csv"), &csv))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelReport {
        num_samples: eval.num_samples,
        war: eval.war,
        uar: eval.uar,
        uap: eval.uap,
        per_class: eval.per_class.clone(),
        confusion_csv,
        roc_csv,
    })
}

fn mean(levels: &[&LevelReport]) -> Option<MeanScores> {
    if levels.is_empty() {
        return None;
    }
    let n = levels.len() as f64;
    let avg = |f: fn(&LevelReport) -> f64| levels.iter().map(|l| f(l)).sum::<f64>() / n;
    Some(MeanScores {
        folds: levels.len(),
        war: avg(|l| l.war),
        uar: avg(|l| l.uar),
        uap: avg(|l| l.uap),
    })
}

pub fn build_report(run_dir: &Path) -> Result<Report> {
    let summary = RunSummary::read(run_dir)?;
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(|e| pathnet::Error::io(&dir, e))?;
    let mut folds = Vec::new();
    for f in &summary.folds {
        let mut arms = BTreeMap::new();
        for (name, a) in &f.arms {
            let stem = |lvl: &str| format!("fold_{:02}_{name}_{lvl}", f.fold);
            let segment = a
                .eval_segment
                .as_deref()
                .map(|p| level(run_dir, &stem("segment"), &read_eval(run_dir, p)?))
                .transpose()?;
            let utterance = a
                .eval_utterance
                .as_deref()
                .map(|p| level(run_dir, &stem("utterance"), &read_eval(run_dir, p)?))
                .transpose()?;
            arms.insert(
                name.clone(),
                ArmReport {
                    best_genotype: a.best_genotype.clone(),
                    best_fitness: a.best_fitness,
                    history_csv: a.history.clone(),
                    checkpoint: a.checkpoint.clone(),
                    segment,
                    utterance,
                },
            );
        }
        let curves_csv = match &f.curves {
            Some(rel) => {
                let p = run_dir.join(rel);
                let text = fs::read_to_string(&p).map_err(|e| pathnet::Error::io(&p, e))?;
                Some(put(
                    run_dir,
                    &format!("fold_{:02}_curves.csv", f.fold),
                    &text,
                )?)
            }
            None => None,
        };
        folds.push(FoldReport {
            fold: f.fold,
            subject: f.subject.clone(),
            num_train: f.num_train,
            num_test: f.num_test,
            arms,
            curves_csv,
        });
    }
    let arm_names: Vec<String> = folds
        .iter()
        .flat_map(|f| f.arms.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let summary_map = arm_names
        .into_iter()
        .map(|arm| {
            let pick = |seg: bool| -> Vec<&LevelReport> {
                folds
                    .iter()
                    .filter_map(|f| f.arms.get(&arm))
                    .filter_map(|a| {
                        if seg {
                            a.segment.as_ref()
                        } else {
                            a.utterance.as_ref()
                        }
                    })
                    .collect()
            };
            let means = ArmMeans {
                segment: mean(&pick(true)),
                utterance: mean(&pick(false)),
            };
            (arm, means)
        })
        .collect();
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        command: summary.command,
        split: summary.split,
        folds,
        summary: summary_map,
    })
}

/// Builds the report and writes `report/report.json`; returns its path.
pub fn cmd_report(run_dir: &Path) -> Result<PathBuf> {
    if !run_dir.join(crate::commands::SUMMARY_FILE).exists() {
        return Err(CliError::Config(format!(
            "{} is not a finished run directory",
            run_dir.display()
        )));
    }
    let report = build_report(run_dir)?;
    let path = run_dir.join(REPORT_DIR).join("report.json");
    write_json(&path, &report)?;
    Ok(path)
}

/// Structural checks beyond what deserialization enforces.
pub fn validate_report(run_dir: &Path, report: &Report) -> Result<()> {
    let bad = |m: String| Err(CliError::Report(m));
    if report.format_version != REPORT_FORMAT_VERSION {
        return bad(format!("format_version {}", report.format_version));
    }
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    for f in &report.folds {
        if f.arms.is_empty() {
            return bad(format!("fold {} has no arms", f.fold));
        }
        for (name, a) in &f.arms {
            for p in [&a.history_csv, &a.checkpoint] {
                if !run_dir.join(p).is_file() {
                    return bad(format!("fold {} {name}: missing {p}", f.fold));
                }
            }
            for l in a.segment.iter().chain(&a.utterance) {
                if !(unit(l.war) && unit(l.uar) && unit(l.uap)) {
                    return bad(format!("fold {} {name}: score outside [0, 1]", f.fold));
                }
                if l.roc_csv.len() != l.per_class.len() {
                    return bad(format!("fold {} {name}: roc list length", f.fold));
                }
                let files = std::iter::once(&l.confusion_csv).chain(l.roc_csv.iter().flatten());
                for p in files {
                    if !run_dir.join(p).is_file() {
                        return bad(format!("fold {} {name}: missing {p}", f.fold));
                    }
                }
            }
        }
    }
    if report.command == RunKind::Transfer {
        for arm in ["transfer", "scratch"] {
            if !report.summary.contains_key(arm) {
                return bad(format!("summary lacks arm {arm}"));
            }
        }
    }
    Ok(())
}
