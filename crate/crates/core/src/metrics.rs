//! Confusion matrices, WAR/UAR/UAP, one-vs-rest ROC/AUC and learning curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::HistoryEntry;
use crate::network::argmax;

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Metrics(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Metrics(format!(
                "label pair ({t}, {p}) out of range"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// Recall of class `c`, `None` without support.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let s = self.support(c);
        (s > 0).then(|| self.counts[c][c] as f64 / s as f64)
    }

    /// Precision of class `c`, `None` if never predicted.
    pub fn precision(&self, c: usize) -> Option<f64> {
        let p = self.predicted(c);
        (p > 0).then(|| self.counts[c][c] as f64 / p as f64)
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Metrics("empty confusion matrix".into()))
        } else {
            Ok(())
        }
    }

    /// Weighted average recall: overall accuracy.
    pub fn war(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(self.trace() as f64 / self.total() as f64)
    }

    /// Unweighted average recall over classes with support.
    pub fn uar(&self) -> Result<f64> {
        self.nonempty()?;
        mean((0..self.num_classes()).filter_map(|c| self.recall(c)))
    }

    /// Unweighted average precision over predicted classes.
    pub fn uap(&self) -> Result<f64> {
        self.nonempty()?;
        mean((0..self.num_classes()).filter_map(|c| self.precision(c)))
    }

    /// CSV with a header row of predicted class names; first column is the true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn mean(vals: impl Iterator<Item = f64>) -> Result<f64> {
    let (sum, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Metrics("no class contributes to the mean".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, thresholds descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC for scores of the positive class.
///
/// Equal scores form a single threshold step. The trapezoidal area is
/// accumulated in integers, so the AUC equals the Mann-Whitney statistic
/// (ties counted as one half) exactly.
pub fn roc_auc(scores: &[f64], truths: &[bool]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(Error::Metrics("scores and truths differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metrics("NaN score".into()));
    }
    let pos = truths.iter().filter(|&&t| t).count() as u64;
    let neg = truths.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp0 + tp) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub num_samples: u64,
    pub confusion: ConfusionMatrix,
    pub war: f64,
    pub uar: f64,
    pub uap: f64,
    pub per_class: Vec<ClassReport>,
    /// One-vs-rest ROC per class; `None` where the class is absent or universal.
    pub roc: Vec<Option<RocCurve>>,
}

impl EvalReport {
    /// Scores posteriors against true labels; predictions are argmax.
    pub fn from_posteriors(
        truth: &[usize],
        posteriors: &[Vec<f64>],
        class_names: &[String],
    ) -> Result<Self> {
        let c = class_names.len();
        if posteriors.iter().any(|p| p.len() != c) {
            return Err(Error::Metrics(
                "posterior width differs from class count".into(),
            ));
        }
        let predicted: Vec<usize> = posteriors.iter().map(|p| argmax(p)).collect();
        let conf = confusion(truth, &predicted, c)?;
        let roc: Vec<Option<RocCurve>> = (0..c)
            .map(|k| {
                let scores: Vec<f64> = posteriors.iter().map(|p| p[k]).collect();
                let truths: Vec<bool> = truth.iter().map(|&t| t == k).collect();
                roc_auc(&scores, &truths).ok()
            })
            .collect();
        let per_class = (0..c)
            .map(|k| ClassReport {
                class: class_names[k].clone(),
                recall: conf.recall(k),
                precision: conf.precision(k),
                auc: roc[k].as_ref().map(|r| r.auc),
            })
            .collect();
        Ok(Self {
            class_names: class_names.to_vec(),
            num_samples: conf.total(),
            war: conf.war()?,
            uar: conf.uar()?,
            uap: conf.uap()?,
            confusion: conf,
            per_class,
            roc,
        })
    }

    /// `fpr,tpr` CSV for one class, or `None` if undefined.
    pub fn roc_csv(&self, class: usize) -> Option<String> {
        self.roc[class].as_ref().map(|r| {
            let mut out = String::from("fpr,tpr\n");
            for (f, t) in &r.points {
                let _ = writeln!(out, "{f},{t}");
            }
            out
        })
    }
}

/// One row of the paired learning-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub generation: usize,
    pub transfer_test_acc: Option<f64>,
    pub scratch_test_acc: Option<f64>,
    pub winner_fitness_transfer: f64,
    pub winner_fitness_scratch: f64,
}

pub fn assemble_curves(
    transfer: &[HistoryEntry],
    scratch: &[HistoryEntry],
) -> Result<Vec<CurveRow>> {
    if transfer.len() != scratch.len() {
        return Err(Error::Metrics(format!(
            "history lengths differ: {} vs {}",
            transfer.len(),
            scratch.len()
        )));
    }
    transfer
        .iter()
        .zip(scratch)
        .map(|(t, s)| {
            if t.generation != s.generation {
                return Err(Error::Metrics(format!(
                    "generation {} paired with {}",
                    t.generation, s.generation
                )));
            }
            Ok(CurveRow {
                generation: t.generation,
                transfer_test_acc: t.test_accuracy,
                scratch_test_acc: s.test_accuracy,
                winner_fitness_transfer: t.winner_fitness,
                winner_fitness_scratch: s.winner_fitness,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(
        "generation,transfer_test_acc,scratch_test_acc,winner_fitness_transfer,winner_fitness_scratch\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.generation,
            opt(r.transfer_test_acc),
            opt(r.scratch_test_acc),
            r.winner_fitness_transfer,
            r.winner_fitness_scratch
        );
    }
    out
}
