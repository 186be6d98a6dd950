//! Exact k-nearest-neighbor anomaly scoring.
//!
//! The score of a window is the sum of squared Euclidean distances to its `k`
//! nearest training windows. Search is exhaustive; the blocked scan below only
//! reorders work and prunes rows whose partial distance already exceeds the
//! current k-th best, so it returns exactly what a plain scan returns.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{decode_matrix, encode_matrix, CorpusManifest, FeatureLoader, Split};
use crate::windowing::{build_windows, WindowConfig, WindowMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub max_train_utterances: usize,
    pub rng_seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            max_train_utterances: 200,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSource {
    pub utterance_id: String,
    pub center: usize,
}

/// Immutable pool of training window vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainIndex {
    vectors: Vec<f32>,
    dim: usize,
    source: Vec<RowSource>,
    build_params: BuildParams,
    window: WindowConfig,
    hop_ms: f32,
}

#[derive(Serialize, Deserialize)]
struct IndexSidecar {
    build_params: BuildParams,
    window: WindowConfig,
    hop_ms: f32,
    dim: usize,
    source: Vec<(String, usize)>,
}

impl TrainIndex {
    /// Stack window matrices (in the given order) into an index.
    pub fn from_windows<I>(windows: I, build_params: BuildParams) -> Result<Self>
    where
        I: IntoIterator<Item = WindowMatrix>,
    {
        let mut index: Option<TrainIndex> = None;
        for w in windows {
            if w.is_empty() {
                continue;
            }
            let idx = index.get_or_insert_with(|| TrainIndex {
                vectors: Vec::new(),
                dim: w.dim,
                source: Vec::new(),
                build_params,
                window: w.config,
                hop_ms: w.hop_ms,
            });
            if w.dim != idx.dim || w.config != idx.window {
                return Err(Error::Validation(format!(
                    "utterance {:?} yields {}-dim windows, index has {}",
                    w.utterance_id, w.dim, idx.dim
                )));
            }
            idx.vectors.extend_from_slice(&w.vectors);
            idx.source.extend(w.centers.iter().map(|&center| RowSource {
                utterance_id: w.utterance_id.clone(),
                center,
            }));
        }
        index.ok_or_else(|| {
            Error::Build("no training utterance is long enough for one window".into())
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frame hop of the training features.
    pub fn hop_ms(&self) -> f32 {
        self.hop_ms
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn source(&self) -> &[RowSource] {
        &self.source
    }

    pub fn build_params(&self) -> BuildParams {
        self.build_params
    }

    pub fn window(&self) -> WindowConfig {
        self.window
    }

    /// Distinct source utterances, in row order.
    pub fn source_utterances(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.source {
            if out.last() != Some(&s.utterance_id.as_str()) {
                out.push(&s.utterance_id);
            }
        }
        out
    }

    /// Writes the vectors as an `FSEQ1` file at `path` and the build metadata
    /// to `path` + `.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, encode_matrix(&self.vectors, self.dim, self.hop_ms))
            .map_err(|e| Error::io(path, e))?;
        let sidecar = IndexSidecar {
            build_params: self.build_params,
            window: self.window,
            hop_ms: self.hop_ms,
            dim: self.dim,
            source: self
                .source
                .iter()
                .map(|s| (s.utterance_id.clone(), s.center))
                .collect(),
        };
        let side = sidecar_path(path);
        let json = serde_json::to_vec(&sidecar).expect("sidecar serializes");
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (vectors, dim, hop_ms) = decode_matrix(&bytes)?;
        let side = sidecar_path(path);
        let json = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: IndexSidecar = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("index sidecar: {e}")))?;
        if sidecar.dim != dim || sidecar.source.len() * dim != vectors.len() || dim == 0 {
            return Err(Error::Corrupt(
                "index sidecar disagrees with vector file".into(),
            ));
        }
        if vectors.is_empty() {
            return Err(Error::Corrupt("index has no rows".into()));
        }
        Ok(Self {
            vectors,
            dim,
            source: sidecar
                .source
                .into_iter()
                .map(|(utterance_id, center)| RowSource {
                    utterance_id,
                    center,
                })
                .collect(),
            build_params: sidecar.build_params,
            window: sidecar.window,
            hop_ms,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Manifest positions (within the train split) of the utterances that go
/// into the index: seeded uniform sampling without replacement, returned in
/// manifest order.
pub fn sample_train_utterances(n_train: usize, params: &BuildParams) -> Vec<usize> {
    let amount = params.max_train_utterances.min(n_train);
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut picked = rand::seq::index::sample(&mut rng, n_train, amount).into_vec();
    picked.sort_unstable();
    picked
}

pub fn build_index(
    manifest: &CorpusManifest,
    cfg: &WindowConfig,
    params: &BuildParams,
    loader: &dyn FeatureLoader,
) -> Result<TrainIndex> {
    cfg.validate()?;
    let train: Vec<_> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Build("manifest has no train utterances".into()));
    }
    let picked = sample_train_utterances(train.len(), params);
    let mut windows = Vec::with_capacity(picked.len());
    let mut d_e = None;
    for i in picked {
        let seq = loader.load(manifest, train[i])?;
        if *d_e.get_or_insert(seq.dim()) != seq.dim() {
            return Err(Error::Validation(format!(
                "train utterance {:?} has feature dim {}, expected {}",
                train[i].id,
                seq.dim(),
                d_e.unwrap()
            )));
        }
        windows.push(build_windows(&seq, cfg)?);
    }
    TrainIndex::from_windows(windows, *params)
}

/// Per-frame anomaly scores for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSequence {
    pub utterance_id: String,
    pub scores: Vec<f64>,
    /// `valid[m]` iff frame `m` had a full window.
    pub valid: Vec<bool>,
    pub k: usize,
    pub hop_ms: f32,
}

impl ScoreSequence {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// All frames valid.
    pub fn from_scores(utterance_id: impl Into<String>, scores: Vec<f64>, hop_ms: f32) -> Self {
        let valid = vec![true; scores.len()];
        Self {
            utterance_id: utterance_id.into(),
            scores,
            valid,
            k: 0,
            hop_ms,
        }
    }
}

/// Sorted squared distances to the `k` nearest index rows of every query row.
///
/// Scores for any `k' <= k` are prefix sums, so one pass serves a sweep over k.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    utterance_id: String,
    n_frames: usize,
    hop_ms: f32,
    centers: Vec<usize>,
    k: usize,
    dists: Vec<f64>,
    rows: Vec<u32>,
}

impl NeighborTable {
    pub fn compute(query: &WindowMatrix, index: &TrainIndex, k: usize) -> Result<Self> {
        check_query(query.dim, index, k)?;
        let mut dists = vec![0f64; query.len() * k];
        let mut rows = vec![0u32; query.len() * k];
        search(query, index, k, &mut dists, &mut rows);
        Ok(Self {
            utterance_id: query.utterance_id.clone(),
            n_frames: query.n_frames,
            hop_ms: query.hop_ms,
            centers: query.centers.clone(),
            k,
            dists,
            rows,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `(row_id, distance²)` pairs for the `i`-th query row, nearest first.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = i * self.k..(i + 1) * self.k;
        self.rows[span.clone()]
            .iter()
            .zip(&self.dists[span])
            .map(|(&r, &d)| (r as usize, d))
    }

    pub fn scores(&self, k: usize) -> Result<ScoreSequence> {
        if k == 0 || k > self.k {
            return Err(Error::Config(format!(
                "k = {k} outside the computed neighbor depth 1..={}",
                self.k
            )));
        }
        let mut scores = vec![0f64; self.n_frames];
        let mut valid = vec![false; self.n_frames];
        for (i, &c) in self.centers.iter().enumerate() {
            scores[c] = self.dists[i * self.k..i * self.k + k].iter().sum();
            valid[c] = true;
        }
        Ok(ScoreSequence {
            utterance_id: self.utterance_id.clone(),
            scores,
            valid,
            k,
            hop_ms: self.hop_ms,
        })
    }
}

pub fn knn_score(
    query: &WindowMatrix,
    index: &TrainIndex,
    cfg: &KnnConfig,
) -> Result<ScoreSequence> {
    cfg.validate()?;
    NeighborTable::compute(query, index, cfg.k)?.scores(cfg.k)
}

/// Exhaustive reference search: every distance computed in full, then sorted
/// by `(distance², row_id)`.
pub fn brute_force_knn(query: &[f32], index: &TrainIndex, k: usize) -> Result<Vec<(usize, f64)>> {
    check_query(query.len(), index, k)?;
    let mut all: Vec<(usize, f64)> = (0..index.len())
        .map(|r| {
            let d = query
                .iter()
                .zip(index.row(r))
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            (r, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

fn check_query(dim: usize, index: &TrainIndex, k: usize) -> Result<()> {
    if dim != index.dim {
        return Err(Error::Validation(format!(
            "query dimension {dim} does not match index dimension {}",
            index.dim
        )));
    }
    if k == 0 || k > index.len() {
        return Err(Error::Config(format!(
            "k = {k} must be in 1..={} (index size)",
            index.len()
        )));
    }
    Ok(())
}

const QUERY_TILE: usize = 16;
const ROW_BLOCK: usize = 256;
/// Elements between pruning checks.
const PRUNE_STRIDE: usize = 32;

/// Bounded, sorted list of the best `(distance², row)` pairs seen so far.
struct TopK<'a> {
    dists: &'a mut [f64],
    rows: &'a mut [u32],
    len: usize,
}

impl TopK<'_> {
    #[inline]
    fn worst(&self) -> f64 {
        if self.len < self.dists.len() {
            f64::INFINITY
        } else {
            self.dists[self.len - 1]
        }
    }

    /// Rows arrive in increasing id order, so an equal distance never displaces
    /// an earlier row.
    #[inline]
    fn offer(&mut self, d: f64, row: u32) {
        let cap = self.dists.len();
        if self.len == cap && d >= self.dists[cap - 1] {
            return;
        }
        let mut pos = self.len.min(cap - 1);
        while pos > 0 && self.dists[pos - 1] > d {
            if pos < cap {
                self.dists[pos] = self.dists[pos - 1];
                self.rows[pos] = self.rows[pos - 1];
            }
            pos -= 1;
        }
        self.dists[pos] = d;
        self.rows[pos] = row;
        self.len = (self.len + 1).min(cap);
    }
}

/// Squared distance with 64-bit accumulation, or `None` once the running sum
/// exceeds `bound`.
#[inline]
fn sq_dist_bounded(a: &[f32], b: &[f32], bound: f64) -> Option<f64> {
    let mut total = 0f64;
    for (ca, cb) in a.chunks(PRUNE_STRIDE).zip(b.chunks(PRUNE_STRIDE)) {
        let mut lanes = [0f64; 8];
        let mut ia = ca.chunks_exact(8);
        let mut ib = cb.chunks_exact(8);
        for (xa, xb) in (&mut ia).zip(&mut ib) {
            for l in 0..8 {
                let diff = xa[l] as f64 - xb[l] as f64;
                lanes[l] += diff * diff;
            }
        }
        for (&x, &y) in ia.remainder().iter().zip(ib.remainder()) {
            let diff = x as f64 - y as f64;
            lanes[0] += diff * diff;
        }
        total += lanes.iter().sum::<f64>();
        if total > bound {
            return None;
        }
    }
    Some(total)
}

fn search_tile(
    query: &WindowMatrix,
    first: usize,
    index: &TrainIndex,
    k: usize,
    dists: &mut [f64],
    rows: &mut [u32],
) {
    let n_q = dists.len() / k;
    let mut tops: Vec<TopK> = dists
        .chunks_mut(k)
        .zip(rows.chunks_mut(k))
        .map(|(d, r)| TopK {
            dists: d,
            rows: r,
            len: 0,
        })
        .collect();
    let m = index.len();
    let mut block = 0;
    while block < m {
        let end = (block + ROW_BLOCK).min(m);
        for (qi, top) in tops.iter_mut().enumerate().take(n_q) {
            let q = query.row(first + qi);
            for r in block..end {
                let bound = top.worst();
                if let Some(d) = sq_dist_bounded(q, index.row(r), bound) {
                    top.offer(d, r as u32);
                }
            }
        }
        block = end;
    }
}

fn search(query: &WindowMatrix, index: &TrainIndex, k: usize, dists: &mut [f64], rows: &mut [u32]) {
    let tile = QUERY_TILE * k;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        dists
            .par_chunks_mut(tile)
            .zip(rows.par_chunks_mut(tile))
            .enumerate()
            .for_each(|(t, (d, r))| search_tile(query, t * QUERY_TILE, index, k, d, r));
    }
    #[cfg(not(feature = "parallel"))]
    for (t, (d, r)) in dists
        .chunks_mut(tile)
        .zip(rows.chunks_mut(tile))
        .enumerate()
    {
        search_tile(query, t * QUERY_TILE, index, k, d, r);
    }
}
