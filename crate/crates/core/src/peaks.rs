//! Boundary decoding from anomaly scores.
//!
//! A candidate peak is a valid frame strictly above its left neighbor and not
//! below its right neighbor; on a plateau the leftmost frame is the candidate,
//! provided the frame after the plateau is lower. Candidates are then visited
//! from highest to lowest score (lower index first on ties) and kept only if no
//! kept peak lies within `d = round(min_separation_ms / hop_ms)` frames.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::ScoreSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    pub min_separation_ms: f64,
    /// Gaussian smoothing width in frames; 0 disables smoothing.
    pub smoothing_sigma_frames: f64,
    pub prominence_threshold: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_separation_ms: 100.0,
            smoothing_sigma_frames: 0.0,
            prominence_threshold: 0.0,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_separation_ms.is_finite() && self.min_separation_ms > 0.0) {
            return Err(Error::Config(format!(
                "min_separation_ms must be > 0, got {}",
                self.min_separation_ms
            )));
        }
        if !(self.smoothing_sigma_frames >= 0.0 && self.smoothing_sigma_frames.is_finite()) {
            return Err(Error::Config("smoothing sigma must be >= 0".into()));
        }
        if !(self.prominence_threshold >= 0.0) {
            return Err(Error::Config("prominence threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Minimum separation in frames.
    pub fn separation_frames(&self, hop_ms: f32) -> usize {
        (self.min_separation_ms / hop_ms as f64).round() as usize
    }
}

/// Interior word boundaries of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    #[serde(rename = "id")]
    pub utterance_id: String,
    pub boundaries_ms: Vec<f64>,
    #[serde(skip)]
    pub n_frames: usize,
    #[serde(skip)]
    pub hop_ms: f32,
}

impl BoundarySet {
    pub fn new(utterance_id: impl Into<String>, boundaries_ms: Vec<f64>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            boundaries_ms,
            n_frames: 0,
            hop_ms: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.boundaries_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries_ms.is_empty()
    }
}

/// Truncated (at ±⌈4σ⌉) and renormalized Gaussian kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Maximal runs `[lo, hi]` (inclusive) of valid frames.
fn valid_runs(valid: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in valid.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, valid.len() - 1));
    }
    runs
}

/// Gaussian smoothing inside each valid run, with half-sample symmetric
/// reflection at the run edges. Invalid frames are left untouched.
pub fn smooth(scores: &ScoreSequence, sigma_frames: f64) -> ScoreSequence {
    if sigma_frames <= 0.0 {
        return scores.clone();
    }
    let kernel = gaussian_kernel(sigma_frames);
    let radius = (kernel.len() / 2) as i64;
    let mut out = scores.clone();
    for (lo, hi) in valid_runs(&scores.valid) {
        let len = (hi - lo + 1) as i64;
        let reflect = |x: i64| -> usize {
            let m = x.rem_euclid(2 * len);
            lo + if m < len { m } else { 2 * len - 1 - m } as usize
        };
        for i in lo..=hi {
            let x = (i - lo) as i64;
            out.scores[i] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * scores.scores[reflect(x + j as i64 - radius)])
                .sum();
        }
    }
    out
}

/// Candidate local maxima (see module docs), ascending.
pub fn local_maxima(scores: &[f64], valid: &[bool]) -> Vec<usize> {
    let mut peaks = Vec::new();
    for (lo, hi) in valid_runs(valid) {
        let mut i = lo + 1;
        while i < hi {
            if scores[i] > scores[i - 1] {
                let mut end = i;
                while end < hi && scores[end + 1] == scores[i] {
                    end += 1;
                }
                if end < hi && scores[end + 1] < scores[i] {
                    peaks.push(i);
                }
                i = end + 1;
            } else {
                i += 1;
            }
        }
    }
    peaks
}

/// Height of a peak above the higher of its two bases, searching each side
/// until a strictly higher frame or the end of the valid run.
pub fn prominence(scores: &[f64], valid: &[bool], peak: usize) -> f64 {
    let height = scores[peak];
    let mut left_min = height;
    let mut i = peak;
    while i > 0 && valid[i - 1] {
        i -= 1;
        if scores[i] > height {
            break;
        }
        left_min = left_min.min(scores[i]);
    }
    let mut right_min = height;
    let mut i = peak;
    while i + 1 < scores.len() && valid[i + 1] {
        i += 1;
        if scores[i] > height {
            break;
        }
        right_min = right_min.min(scores[i]);
    }
    height - left_min.max(right_min)
}

/// Frame indices of the kept peaks, ascending.
pub fn peak_indices(scores: &ScoreSequence, cfg: &PeakConfig) -> Vec<usize> {
    let s = &scores.scores;
    let mut candidates = local_maxima(s, &scores.valid);
    if cfg.prominence_threshold > 0.0 {
        candidates.retain(|&p| prominence(s, &scores.valid, p) >= cfg.prominence_threshold);
    }
    let d = cfg.separation_frames(scores.hop_ms);
    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut blocked = vec![false; s.len()];
    let mut kept = Vec::new();
    for p in candidates {
        if blocked[p] {
            continue;
        }
        kept.push(p);
        let lo = p.saturating_sub(d);
        let hi = (p + d).min(s.len() - 1);
        blocked[lo..=hi].iter_mut().for_each(|b| *b = true);
    }
    kept.sort_unstable();
    kept
}

/// Peaks converted to frame-center times `(m + 0.5) * hop_ms`.
pub fn find_peaks(scores: &ScoreSequence, cfg: &PeakConfig) -> BoundarySet {
    let hop = scores.hop_ms as f64;
    BoundarySet {
        utterance_id: scores.utterance_id.clone(),
        boundaries_ms: peak_indices(scores, cfg)
            .into_iter()
            .map(|m| (m as f64 + 0.5) * hop)
            .collect(),
        n_frames: scores.len(),
        hop_ms: scores.hop_ms,
    }
}

/// Smoothing (if configured) followed by peak picking.
pub fn detect_boundaries(scores: &ScoreSequence, cfg: &PeakConfig) -> BoundarySet {
    find_peaks(&smooth(scores, cfg.smoothing_sigma_frames), cfg)
}

/// One `{"id": ..., "boundaries_ms": [...]}` object per line.
pub fn write_boundaries(sets: &[BoundarySet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for set in sets {
        serde_json::to_writer(&mut out, set).expect("boundary set serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_boundaries(path: impl AsRef<Path>) -> Result<Vec<BoundarySet>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: BoundarySet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if set.boundaries_ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "{}: predicted boundaries not strictly increasing",
                set.utterance_id
            )));
        }
        sets.push(set);
    }
    Ok(sets)
}

/// Two-column `time_ms,score` CSV of the valid frames.
pub fn write_score_csv(scores: &ScoreSequence, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "time_ms,score")?;
    let hop = scores.hop_ms as f64;
    for (m, (&s, &v)) in scores.scores.iter().zip(&scores.valid).enumerate() {
        if v {
            writeln!(out, "{},{}", (m as f64 + 0.5) * hop, s)?;
        }
    }
    Ok(())
}
