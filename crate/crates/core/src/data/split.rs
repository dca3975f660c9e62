use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum SplitScheme {
    Kfold { k: usize },
    Losocv,
}

impl FromStr for SplitScheme {
    type Err = Error;

    /// Accepts `losocv` or `kfold:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("losocv") {
            return Ok(SplitScheme::Losocv);
        }
        if let Some(k) = s.strip_prefix("kfold:") {
            let k = k
                .parse()
                .map_err(|_| Error::Split(format!("bad fold count in {s:?}")))?;
            return Ok(SplitScheme::Kfold { k });
        }
        Err(Error::Split(format!("unknown split scheme {s:?}")))
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitScheme::Kfold { k } => write!(f, "kfold:{k}"),
            SplitScheme::Losocv => write!(f, "losocv"),
        }
    }
}

/// Manifest row indices of one fold, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Held-out subject for LOSOCV folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn for_scheme(manifest: &DatasetManifest, scheme: SplitScheme, seed: u64) -> Result<Self> {
        match scheme {
            SplitScheme::Kfold { k } => kfold_split(manifest, k, seed),
            SplitScheme::Losocv => losocv_split(manifest),
        }
    }
}

fn fold_from_test(n_rows: usize, mut test: Vec<usize>, subject: Option<String>) -> Fold {
    test.sort_unstable();
    let mut is_test = vec![false; n_rows];
    for &r in &test {
        is_test[r] = true;
    }
    Fold {
        train: (0..n_rows).filter(|&r| !is_test[r]).collect(),
        test,
        subject,
    }
}

/// Shuffles utterances (not rows) and deals them round-robin into `k` folds.
pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Split(format!("k must be >= 2, got {k}")));
    }
    let mut utterances: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        utterances
            .entry((r.subject.as_str(), r.utterance.as_str()))
            .or_default()
            .push(i);
    }
    if utterances.len() < k {
        return Err(Error::Split(format!(
            "{} utterances cannot fill {k} folds",
            utterances.len()
        )));
    }
    let mut groups: Vec<Vec<usize>> = utterances.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests = vec![Vec::new(); k];
    for (i, g) in groups.into_iter().enumerate() {
        tests[i % k].extend(g);
    }
    let n = manifest.rows.len();
    Ok(SplitPlan {
        scheme: SplitScheme::Kfold { k },
        folds: tests
            .into_iter()
            .map(|t| fold_from_test(n, t, None))
            .collect(),
    })
}

/// One fold per subject, subjects in lexicographic order.
pub fn losocv_split(manifest: &DatasetManifest) -> Result<SplitPlan> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        by_subject.entry(r.subject.as_str()).or_default().push(i);
    }
    if by_subject.len() < 2 {
        return Err(Error::Split(format!(
            "leave-one-subject-out needs >= 2 subjects, found {}",
            by_subject.len()
        )));
    }
    let n = manifest.rows.len();
    Ok(SplitPlan {
        scheme: SplitScheme::Losocv,
        folds: by_subject
            .into_iter()
            .map(|(s, rows)| fold_from_test(n, rows, Some(s.to_string())))
            .collect(),
    })
}
