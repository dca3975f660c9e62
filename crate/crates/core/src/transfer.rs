//! Freeze-and-re-evolve transfer between classification tasks.
//!
//! 1. Evolve on the (joined) source data.
//! 2. Keep and freeze the modules of the best source pathway, redraw all others.
//! 3. Evolve a fresh population on the destination with the source pathway
//!    pinned into every forward pass.
//! 4. Separately evolve a from-scratch baseline on the destination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, SampleMeta};
use crate::error::{Error, Result};
use crate::evolution::{
    self, evolve, evolve_with_bank, rng_for, stream, EvolveJob, EvolveOutcome, HistoryEntry,
};
use crate::genotype::Genotype;
use crate::hparams::HyperParams;
use crate::metrics::EvalReport;
use crate::network::{BankShape, ModuleBank};

pub const SOURCE_TASK: &str = "source";
pub const DESTINATION_TASK: &str = "destination";

/// Concatenates datasets under a shared label space.
///
/// Labels are re-indexed to `shared` order, subjects become
/// `<dataset>/<subject>`, and row indices are offset so they stay unique.
pub fn join_sources(datasets: &[&Dataset], shared: &[String]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Manifest("no source datasets".into()))?;
    let mut joined = Dataset::empty(
        &datasets
            .iter()
            .map(|d| d.name.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        shared.to_vec(),
        first.dim,
        first.channels,
    );
    let mut row_offset = 0;
    for d in datasets {
        if d.dim != first.dim {
            return Err(Error::Shape(format!(
                "dataset {:?} has dim {}, expected {}",
                d.name, d.dim, first.dim
            )));
        }
        let remap: Vec<Option<usize>> = d
            .class_names
            .iter()
            .map(|c| shared.iter().position(|s| s == c))
            .collect();
        for i in 0..d.len() {
            let label = remap[d.labels[i]].ok_or_else(|| Error::UnmappableLabel {
                label: d.class_names[d.labels[i]].clone(),
                dataset: d.name.clone(),
            })?;
            let m = &d.meta[i];
            joined.push(
                d.sample(i),
                label,
                SampleMeta {
                    row: row_offset + m.row,
                    subject: format!("{}/{}", d.name, m.subject),
                    utterance: m.utterance.clone(),
                },
            )?;
        }
        row_offset += d.meta.iter().map(|m| m.row + 1).max().unwrap_or(0);
    }
    Ok(joined)
}

/// Keeps only samples whose class is in `keep`, re-indexing labels to `keep` order.
pub fn restrict_classes(d: &Dataset, keep: &[String]) -> Dataset {
    let remap: Vec<Option<usize>> = d
        .class_names
        .iter()
        .map(|c| keep.iter().position(|k| k == c))
        .collect();
    let idx: Vec<usize> = (0..d.len())
        .filter(|&i| remap[d.labels[i]].is_some())
        .collect();
    let mut out = d.select(&idx);
    out.class_names = keep.to_vec();
    for l in &mut out.labels {
        *l = remap[*l].expect("filtered above");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSeeds {
    pub source: u64,
    pub destination: u64,
    pub baseline: u64,
}

#[derive(Debug, Clone)]
pub struct TransferPlan<'a> {
    pub sources: Vec<&'a Dataset>,
    pub shared_label_space: Vec<String>,
    pub destination_train: &'a Dataset,
    pub destination_test: &'a Dataset,
    pub hp_source: HyperParams,
    pub hp_dest: HyperParams,
    pub seeds: TransferSeeds,
}

impl TransferPlan<'_> {
    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Manifest(
                "transfer needs at least one source dataset".into(),
            ));
        }
        if BankShape::of(&self.hp_source) != BankShape::of(&self.hp_dest) {
            return Err(Error::InvalidHyperParams(
                "source and destination must share the network shape".into(),
            ));
        }
        if self.destination_train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(())
    }
}

/// SHA-256 of a module's little-endian weights followed by its biases.
pub fn module_checksum(bank: &ModuleBank<f32>, layer: usize, module: usize) -> String {
    let m = bank.module(layer, module);
    let mut h = Sha256::new();
    for v in m.weights.iter().chain(&m.bias) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Checksums of the modules active in `g`, keyed `"<layer>:<module>"`.
pub fn pathway_checksums(bank: &ModuleBank<f32>, g: &Genotype) -> BTreeMap<String, String> {
    g.active_modules()
        .iter()
        .enumerate()
        .flat_map(|(l, mods)| mods.iter().map(move |&m| (l, m)))
        .map(|(l, m)| (format!("{l}:{m}"), module_checksum(bank, l, m)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SourcePhase {
    pub joined: Dataset,
    pub outcome: EvolveOutcome,
}

pub fn source_phase(plan: &TransferPlan<'_>) -> Result<SourcePhase> {
    plan.validate()?;
    let joined = join_sources(&plan.sources, &plan.shared_label_space)?;
    let job = EvolveJob {
        train: &joined,
        task: SOURCE_TASK,
        pinned: None,
        probe: None,
    };
    let outcome = evolve(&job, &plan.hp_source, plan.seeds.source)?;
    Ok(SourcePhase { joined, outcome })
}

#[derive(Debug, Clone)]
pub struct DestinationPhase {
    pub outcome: EvolveOutcome,
    pub frozen_checksums_pre: BTreeMap<String, String>,
    pub frozen_checksums_post: BTreeMap<String, String>,
}

/// Freezes the best source pathway and re-evolves on the destination.
pub fn destination_phase(
    source: &SourcePhase,
    plan: &TransferPlan<'_>,
) -> Result<DestinationPhase> {
    plan.validate()?;
    let keep = &source.outcome.best;
    let pre = pathway_checksums(&source.outcome.bank, keep);
    let bank = source
        .outcome
        .bank
        .clone()
        .reinit_except(keep, &mut rng_for(plan.seeds.destination, stream::REINIT));
    let job = EvolveJob {
        train: plan.destination_train,
        task: DESTINATION_TASK,
        pinned: Some(keep),
        probe: (!plan.destination_test.is_empty()).then_some(plan.destination_test),
    };
    let outcome = evolve_with_bank(bank, &job, &plan.hp_dest, plan.seeds.destination)?;
    let post = pathway_checksums(&outcome.bank, keep);
    Ok(DestinationPhase {
        outcome,
        frozen_checksums_pre: pre,
        frozen_checksums_post: post,
    })
}

/// Evolves on `train` from a fresh bank: no pinned path, nothing frozen.
pub fn scratch_baseline(
    train: &Dataset,
    probe: Option<&Dataset>,
    hp: &HyperParams,
    seed: u64,
) -> Result<EvolveOutcome> {
    let job = EvolveJob {
        train,
        task: DESTINATION_TASK,
        pinned: None,
        probe: probe.filter(|p| !p.is_empty()),
    };
    evolve(&job, hp, seed)
}

/// Held-out report for `g` (plus `pinned`) on `test`.
pub fn evaluate_on(
    bank: &ModuleBank<f32>,
    g: &Genotype,
    pinned: Option<&Genotype>,
    test: &Dataset,
    task: &str,
) -> Result<(EvalReport, Vec<Vec<f64>>)> {
    let post = evolution::predict(bank, g, pinned, test, task)?;
    let report = EvalReport::from_posteriors(&test.labels, &post, &test.class_names)?;
    Ok((report, post))
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub source_best: Genotype,
    pub source_history: Vec<HistoryEntry>,
    pub source_bank: ModuleBank<f32>,
    pub dest_best: Genotype,
    pub dest_history: Vec<HistoryEntry>,
    pub dest_bank: ModuleBank<f32>,
    pub scratch_best: Genotype,
    pub scratch_history: Vec<HistoryEntry>,
    pub scratch_bank: ModuleBank<f32>,
    pub frozen_checksums_pre: BTreeMap<String, String>,
    pub frozen_checksums_post: BTreeMap<String, String>,
    /// `None` when the destination test set is empty.
    pub dest_eval: Option<EvalReport>,
    pub scratch_eval: Option<EvalReport>,
}

impl TransferOutcome {
    pub fn frozen_intact(&self) -> bool {
        self.frozen_checksums_pre == self.frozen_checksums_post
    }
}

pub fn run_transfer(plan: &TransferPlan<'_>) -> Result<TransferOutcome> {
    let source = source_phase(plan)?;
    let dest = destination_phase(&source, plan)?;
    let scratch = scratch_baseline(
        plan.destination_train,
        Some(plan.destination_test),
        &plan.hp_dest,
        plan.seeds.baseline,
    )?;
    let source_best = source.outcome.best.clone();
    let (dest_eval, scratch_eval) = if plan.destination_test.is_empty() {
        (None, None)
    } else {
        let t = plan.destination_test;
        let d = evaluate_on(
            &dest.outcome.bank,
            &dest.outcome.best,
            Some(&source_best),
            t,
            DESTINATION_TASK,
        )?
        .0;
        let s = evaluate_on(&scratch.bank, &scratch.best, None, t, DESTINATION_TASK)?.0;
        (Some(d), Some(s))
    };
    Ok(TransferOutcome {
        source_best,
        source_history: source.outcome.history,
        source_bank: source.outcome.bank,
        dest_best: dest.outcome.best,
        dest_history: dest.outcome.history,
        dest_bank: dest.outcome.bank,
        scratch_best: scratch.best,
        scratch_history: scratch.history,
        scratch_bank: scratch.bank,
        frozen_checksums_pre: dest.frozen_checksums_pre,
        frozen_checksums_post: dest.frozen_checksums_post,
        dest_eval,
        scratch_eval,
    })
}
