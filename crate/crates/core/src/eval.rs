//! Boundary metrics and clustering accuracy.
//!
//! Counts are micro-aggregated: hits, predictions and references are summed
//! over the corpus before any ratio is taken.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{CorpusManifest, Split};
use crate::hungarian::max_weight_matching;
use crate::peaks::BoundarySet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tolerance_ms: f64,
    /// Count the two utterance edges as boundaries in both sets.
    pub include_edges: bool,
    /// Restrict the reference set to one split; `None` uses every entry with references.
    pub split: Option<Split>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance_ms: 20.0,
            include_edges: false,
            split: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_ms >= 0.0 && self.tolerance_ms.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance_ms must be >= 0, got {}",
                self.tolerance_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub n_hit: usize,
    pub n_pred: usize,
    pub n_ref: usize,
}

impl Add for MatchCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            n_hit: self.n_hit + o.n_hit,
            n_pred: self.n_pred + o.n_pred,
            n_ref: self.n_ref + o.n_ref,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// One-to-one hits between two sorted boundary lists.
///
/// References are visited in time order and each takes the earliest unmatched
/// prediction within `±tolerance_ms`. Because every reference interval has the
/// same width this greedy yields a maximum matching, so the hit count does not
/// depend on which list plays the reference.
pub fn count_hits(pred: &[f64], reference: &[f64], tolerance_ms: f64) -> usize {
    let mut j = 0;
    let mut hits = 0;
    for &r in reference {
        while j < pred.len() && r - pred[j] > tolerance_ms {
            j += 1;
        }
        if j < pred.len() && pred[j] - r <= tolerance_ms {
            hits += 1;
            j += 1;
        }
    }
    hits
}

pub fn match_boundaries(
    pred: &BoundarySet,
    reference: &BoundarySet,
    cfg: &EvalConfig,
) -> MatchCounts {
    let edges = if cfg.include_edges { 2 } else { 0 };
    MatchCounts {
        n_hit: count_hits(
            &pred.boundaries_ms,
            &reference.boundaries_ms,
            cfg.tolerance_ms,
        ) + edges,
        n_pred: pred.len() + edges,
        n_ref: reference.len() + edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_ref: usize,
    pub n_pred: usize,
    pub n_hit: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// `None` when there are no reference boundaries.
    pub os: Option<f64>,
    pub r_value: Option<f64>,
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// R-value from recall and over-segmentation, both as fractions.
pub fn r_value(recall: f64, os: f64) -> f64 {
    let r1 = ((1.0 - recall).powi(2) + os.powi(2)).sqrt();
    let r2 = (-os + recall - 1.0) / std::f64::consts::SQRT_2;
    1.0 - (r1.abs() + r2.abs()) / 2.0
}

pub fn boundary_metrics(counts: MatchCounts) -> EvalReport {
    let MatchCounts {
        n_hit,
        n_pred,
        n_ref,
    } = counts;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(n_hit, n_pred);
    let recall = ratio(n_hit, n_ref);
    let os = (n_ref > 0).then(|| n_pred as f64 / n_ref as f64 - 1.0);
    EvalReport {
        n_ref,
        n_pred,
        n_hit,
        precision,
        recall,
        f_score: f_score(precision, recall),
        os,
        r_value: os.map(|os| r_value(recall, os)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub id: String,
    #[serde(flatten)]
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEval {
    pub config: EvalConfig,
    pub report: EvalReport,
    pub utterances: Vec<UtteranceEval>,
    /// Predicted utterances with no reference in the manifest (excluded).
    pub missing_references: Vec<String>,
    /// Reference utterances with no prediction (scored as predicting nothing).
    pub missing_predictions: Vec<String>,
}

impl CorpusEval {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,n_ref,n_pred,n_hit,precision,recall,f_score,os,r_value\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = |id: &str, r: &EvalReport| {
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{},{},{},{}",
                r.n_ref,
                r.n_pred,
                r.n_hit,
                r.precision,
                r.recall,
                r.f_score,
                opt(r.os),
                opt(r.r_value)
            );
        };
        for u in &self.utterances {
            row(&u.id, &boundary_metrics(u.counts));
        }
        row("ALL", &self.report);
        out
    }
}

pub fn evaluate_corpus(
    preds: &[BoundarySet],
    manifest: &CorpusManifest,
    cfg: &EvalConfig,
) -> Result<CorpusEval> {
    cfg.validate()?;
    let by_id: HashMap<&str, &BoundarySet> =
        preds.iter().map(|p| (p.utterance_id.as_str(), p)).collect();
    let mut utterances = Vec::new();
    let mut missing_predictions = Vec::new();
    let mut referenced = std::collections::HashSet::new();
    for entry in &manifest.entries {
        let Some(refs) = &entry.ref_boundaries_ms else {
            continue;
        };
        if cfg.split.is_some_and(|s| s != entry.split) {
            continue;
        }
        referenced.insert(entry.id.as_str());
        let reference = BoundarySet::new(entry.id.clone(), refs.clone());
        let empty;
        let pred = match by_id.get(entry.id.as_str()) {
            Some(p) => *p,
            None => {
                missing_predictions.push(entry.id.clone());
                empty = BoundarySet::new(entry.id.clone(), Vec::new());
                &empty
            }
        };
        utterances.push(UtteranceEval {
            id: entry.id.clone(),
            counts: match_boundaries(pred, &reference, cfg),
        });
    }
    let missing_references = preds
        .iter()
        .filter(|p| !referenced.contains(p.utterance_id.as_str()))
        .map(|p| p.utterance_id.clone())
        .collect();
    let total: MatchCounts = utterances.iter().map(|u| u.counts).sum();
    Ok(CorpusEval {
        config: *cfg,
        report: boundary_metrics(total),
        utterances,
        missing_references,
        missing_predictions,
    })
}

/// Count-matched chance baseline: for every prediction set, the same number
/// of distinct frames drawn uniformly from `margin..=n_frames - margin` of
/// its manifest entry, reported at frame centers.
pub fn random_baseline(
    preds: &[BoundarySet],
    manifest: &CorpusManifest,
    hop_ms: f64,
    margin: usize,
    seed: u64,
) -> Result<Vec<BoundarySet>> {
    if !(hop_ms > 0.0) {
        return Err(Error::Config("hop_ms must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    preds
        .iter()
        .map(|p| {
            let entry = manifest.get(&p.utterance_id).ok_or_else(|| {
                Error::Validation(format!("{} is not in the manifest", p.utterance_id))
            })?;
            let n = (entry.duration_ms / hop_ms).round() as usize;
            let span = (n + 1).saturating_sub(2 * margin);
            let mut frames = rand::seq::index::sample(&mut rng, span, p.len().min(span)).into_vec();
            frames.sort_unstable();
            let ms = frames
                .into_iter()
                .map(|f| ((f + margin) as f64 + 0.5) * hop_ms)
                .collect();
            Ok(BoundarySet::new(p.utterance_id.clone(), ms))
        })
        .collect()
}

/// Cluster x label co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let width = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != width) {
            return Err(Error::Validation(
                "contingency table rows differ in length".into(),
            ));
        }
        Ok(Self { counts })
    }

    /// Build from parallel cluster / label assignments of the same tokens.
    pub fn from_assignments(clusters: &[usize], labels: &[usize]) -> Result<Self> {
        if clusters.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} cluster ids vs {} labels",
                clusters.len(),
                labels.len()
            )));
        }
        let rows = clusters.iter().max().map_or(0, |m| m + 1);
        let cols = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&c, &l) in clusters.iter().zip(labels) {
            counts[c][l] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Fraction of tokens covered by the best one-to-one cluster-to-label map.
pub fn cluster_accuracy(table: &ContingencyTable) -> Result<f64> {
    let total = table.total();
    if total == 0 {
        return Err(Error::Validation(
            "contingency table is empty or all zero".into(),
        ));
    }
    Ok(max_weight_matching(&table.counts) as f64 / total as f64)
}
