//! Pipeline orchestration behind the `dseg` binary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use dseg_core::peaks::{read_boundaries, write_boundaries, write_score_csv};
use dseg_core::{
    build_windows, detect_boundaries, evaluate_corpus, load_manifest, Aggregation, BoundarySet,
    BuildParams, CachingLoader, CorpusEval, CorpusManifest, DiskLoader, EvalConfig, EvalReport,
    FeatureLoader, KnnConfig, NeighborTable, PeakConfig, ScoreSequence, Segmenter, SegmenterConfig,
    Split, SynthConfig, SynthCorpus, WindowConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Everything one pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub knn: KnnConfig,
    pub peaks: PeakConfig,
    pub eval: EvalConfig,
    pub build: BuildParams,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Split to segment.
    pub split: Split,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            knn: KnnConfig::default(),
            peaks: PeakConfig::default(),
            eval: EvalConfig::default(),
            build: BuildParams::default(),
            manifest: None,
            out_dir: None,
            split: Split::Val,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn segmenter(&self) -> SegmenterConfig {
        SegmenterConfig {
            window: self.window,
            knn: self.knn,
            peaks: self.peaks,
            build: self.build,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter().validate()?;
        self.eval.validate()?;
        if self.workers == Some(0) {
            return Err(UsageError("workers must be >= 1".into()).into());
        }
        Ok(())
    }

    fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| UsageError("no manifest given (--manifest)".into()).into())
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| UsageError("no output directory given (--out-dir)".into()).into())
    }
}

/// Marks errors caused by the invocation rather than by the program.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 1 for user and configuration errors, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let user = err.chain().any(|e| {
        e.is::<UsageError>()
            || e.is::<dseg_core::Error>()
            || e.is::<serde_json::Error>()
            || e.is::<std::io::Error>()
    });
    if user {
        1
    } else {
        2
    }
}

fn run_in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("starting worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn check_separation(peaks: &PeakConfig, hop_ms: f32) -> Result<()> {
    if peaks.min_separation_ms < hop_ms as f64 {
        return Err(UsageError(format!(
            "min_separation_ms ({}) is shorter than the frame hop ({hop_ms} ms)",
            peaks.min_separation_ms
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub utterances: usize,
    pub boundaries: usize,
    pub index_rows: usize,
    #[serde(skip)]
    pub build_time: Duration,
    #[serde(skip)]
    pub score_time: Duration,
}

impl std::fmt::Display for SegmentSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "segmented {} utterances: {} boundaries, index {} rows (build {:.2?}, score {:.2?})",
            self.utterances, self.boundaries, self.index_rows, self.build_time, self.score_time
        )
    }
}

/// Indexes the train split, segments `run.split` and writes
/// `boundaries.jsonl` plus `scores/<id>.csv` under the output directory.
pub fn cmd_segment(run: &RunConfig) -> Result<SegmentSummary> {
    run.validate()?;
    let manifest = load_manifest(run.manifest_path()?)?;
    let out_dir = run.out_dir()?;
    let loader = DiskLoader;

    let t = Instant::now();
    let segmenter = Segmenter::build(&manifest, run.segmenter(), &loader)?;
    check_separation(&run.peaks, segmenter.index().hop_ms())?;
    let build_time = t.elapsed();

    let t = Instant::now();
    let targets: Vec<_> = manifest.split(run.split).collect();
    let results = run_in_pool(run.workers, || {
        targets
            .par_iter()
            .map(|entry| segmenter.segment(&*loader.load(&manifest, entry)?))
            .collect::<dseg_core::Result<Vec<_>>>()
    })??;
    let score_time = t.elapsed();

    let scores_dir = out_dir.join("scores");
    fs::create_dir_all(&scores_dir)
        .with_context(|| format!("creating {}", scores_dir.display()))?;
    let sets: Vec<BoundarySet> = results.iter().map(|r| r.boundaries.clone()).collect();
    write_boundaries(&sets, out_dir.join("boundaries.jsonl"))?;
    for r in &results {
        write_scores(&r.scores, &scores_dir)?;
    }
    Ok(SegmentSummary {
        utterances: results.len(),
        boundaries: sets.iter().map(BoundarySet::len).sum(),
        index_rows: segmenter.index().len(),
        build_time,
        score_time,
    })
}

fn write_scores(scores: &ScoreSequence, dir: &Path) -> Result<()> {
    let path = dir.join(format!("{}.csv", scores.utterance_id));
    let mut buf = Vec::new();
    write_score_csv(scores, &mut buf)?;
    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Scores a prediction file against the manifest references. Writes
/// `report.json` and `report.csv` when an output directory is set.
pub fn cmd_evaluate(pred_file: &Path, run: &RunConfig) -> Result<CorpusEval> {
    run.eval.validate()?;
    let manifest = load_manifest(run.manifest_path()?)?;
    let preds = read_boundaries(pred_file)?;
    let eval = evaluate_corpus(&preds, &manifest, &run.eval)?;
    if let Some(dir) = &run.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("report.json"), &eval.to_json())?;
        write_text(&dir.join("report.csv"), &eval.to_csv())?;
    }
    Ok(eval)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn format_report(eval: &CorpusEval) -> String {
    let r = &eval.report;
    let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.2}", 100.0 * v));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "refs {}  preds {}  hits {}  (tolerance {} ms)",
        r.n_ref, r.n_pred, r.n_hit, eval.config.tolerance_ms
    );
    let _ = writeln!(
        out,
        "P {}  R {}  F {}  OS {}  R-val {}",
        pct(Some(r.precision)),
        pct(Some(r.recall)),
        pct(Some(r.f_score)),
        pct(r.os),
        pct(r.r_value)
    );
    if !eval.missing_predictions.is_empty() {
        let _ = writeln!(
            out,
            "warning: {} referenced utterances have no prediction (counted as empty)",
            eval.missing_predictions.len()
        );
    }
    if !eval.missing_references.is_empty() {
        let _ = writeln!(
            out,
            "warning: {} predictions have no reference and were ignored: {}",
            eval.missing_references.len(),
            eval.missing_references.join(", ")
        );
    }
    out
}

/// Axes of a sweep. Lists left empty fall back to the base config value.
/// `settings`, when present, replaces the cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub k: Vec<usize>,
    pub win: Vec<usize>,
    pub aggregation: Vec<Aggregation>,
    pub max_train_utterances: Vec<usize>,
    /// Layer tag -> manifest of features extracted from that layer.
    pub layer_tags: Vec<(String, PathBuf)>,
    pub settings: Vec<SweepSetting>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSetting {
    pub k: Option<usize>,
    pub win: Option<usize>,
    pub aggregation: Option<Aggregation>,
    pub max_train_utterances: Option<usize>,
    pub layer_tag: Option<String>,
}

impl SweepGrid {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing grid {}", path.display()))
    }

    /// Explicit settings, or the cartesian product ordered
    /// layer, max_train, win, aggregation, k (k varies fastest).
    pub fn expand(&self) -> Vec<SweepSetting> {
        if !self.settings.is_empty() {
            return self.settings.clone();
        }
        fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let tags = axis(
            &self
                .layer_tags
                .iter()
                .map(|(t, _)| t.clone())
                .collect::<Vec<_>>(),
        );
        let mut out = Vec::new();
        for tag in &tags {
            for &max_train in &axis(&self.max_train_utterances) {
                for &win in &axis(&self.win) {
                    for &aggregation in &axis(&self.aggregation) {
                        for &k in &axis(&self.k) {
                            out.push(SweepSetting {
                                k,
                                win,
                                aggregation,
                                max_train_utterances: max_train,
                                layer_tag: tag.clone(),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub layer_tag: String,
    pub k: usize,
    pub win: usize,
    pub aggregation: Aggregation,
    pub max_train_utterances: usize,
    pub outcome: Result<EvalReport, String>,
}

/// Settings sharing an index differ only in k.
#[derive(Clone, PartialEq, Eq, Hash)]
struct IndexKey {
    tag: String,
    window: WindowConfig,
    max_train: usize,
}

/// Runs every grid setting through segment + evaluate. A failing setting is
/// reported in its row; the sweep carries on.
pub fn cmd_sweep(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let mut manifests: HashMap<String, CorpusManifest> = HashMap::new();
    for (tag, path) in &grid.layer_tags {
        manifests.insert(tag.clone(), load_manifest(path)?);
    }
    if grid.layer_tags.is_empty() {
        manifests.insert(String::new(), load_manifest(base.manifest_path()?)?);
    }
    let loader = CachingLoader::new(DiskLoader);

    let settings = grid.expand();
    let resolved: Vec<(IndexKey, RunConfig, Result<(), String>)> = settings
        .iter()
        .map(|s| {
            let mut run = base.clone();
            run.knn.k = s.k.unwrap_or(run.knn.k);
            run.window.win = s.win.unwrap_or(run.window.win);
            run.window.aggregation = s.aggregation.unwrap_or(run.window.aggregation);
            run.build.max_train_utterances = s
                .max_train_utterances
                .unwrap_or(run.build.max_train_utterances);
            let tag = s.layer_tag.clone().unwrap_or_else(|| {
                grid.layer_tags
                    .first()
                    .map(|(t, _)| t.clone())
                    .unwrap_or_default()
            });
            let check = if manifests.contains_key(&tag) {
                run.validate().map_err(|e| format!("{e:#}"))
            } else {
                Err(format!("unknown layer tag {tag:?}"))
            };
            let key = IndexKey {
                tag,
                window: run.window,
                max_train: run.build.max_train_utterances,
            };
            (key, run, check)
        })
        .collect();

    let mut depth: HashMap<IndexKey, usize> = HashMap::new();
    for (key, run, check) in &resolved {
        if check.is_ok() {
            let d = depth.entry(key.clone()).or_default();
            *d = (*d).max(run.knn.k);
        }
    }

    let mut tables: HashMap<IndexKey, Result<Vec<NeighborTable>, String>> = HashMap::new();
    let mut rows = Vec::with_capacity(resolved.len());
    for (key, run, check) in resolved {
        let outcome = check.and_then(|()| {
            let manifest = &manifests[&key.tag];
            if !tables.contains_key(&key) {
                let computed = neighbor_tables(manifest, &run, depth[&key], &loader)
                    .map_err(|e| format!("{e:#}"));
                tables.insert(key.clone(), computed);
            }
            let tables = tables[&key].as_ref().map_err(Clone::clone)?;
            evaluate_tables(tables, manifest, &run).map_err(|e| format!("{e:#}"))
        });
        rows.push(SweepRow {
            layer_tag: key.tag,
            k: run.knn.k,
            win: run.window.win,
            aggregation: run.window.aggregation,
            max_train_utterances: run.build.max_train_utterances,
            outcome,
        });
    }
    Ok(rows)
}

fn neighbor_tables(
    manifest: &CorpusManifest,
    run: &RunConfig,
    depth: usize,
    loader: &dyn FeatureLoader,
) -> Result<Vec<NeighborTable>> {
    let segmenter = Segmenter::build(manifest, run.segmenter(), loader)?;
    check_separation(&run.peaks, segmenter.index().hop_ms())?;
    let depth = depth.min(segmenter.index().len());
    let targets: Vec<_> = manifest.split(run.split).collect();
    let tables = run_in_pool(run.workers, || {
        targets
            .par_iter()
            .map(|entry| {
                let seq = loader.load(manifest, entry)?;
                let windows = build_windows(&seq, &run.window)?;
                NeighborTable::compute(&windows, segmenter.index(), depth)
            })
            .collect::<dseg_core::Result<Vec<_>>>()
    })??;
    Ok(tables)
}

fn evaluate_tables(
    tables: &[NeighborTable],
    manifest: &CorpusManifest,
    run: &RunConfig,
) -> Result<EvalReport> {
    let preds = tables
        .iter()
        .map(|t| Ok(detect_boundaries(&t.scores(run.knn.k)?, &run.peaks)))
        .collect::<dseg_core::Result<Vec<_>>>()?;
    let eval_cfg = EvalConfig {
        split: Some(run.split),
        ..run.eval
    };
    Ok(evaluate_corpus(&preds, manifest, &eval_cfg)?.report)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "layer_tag,k,win,aggregation,max_train_utterances,status,n_ref,n_pred,n_hit,precision,recall,f_score,os,r_value,error\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},",
            r.layer_tag, r.k, r.win, r.aggregation, r.max_train_utterances
        );
        match &r.outcome {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "ok,{},{},{},{:.6},{:.6},{:.6},{},{},",
                    m.n_ref,
                    m.n_pred,
                    m.n_hit,
                    m.precision,
                    m.recall,
                    m.f_score,
                    opt(m.os),
                    opt(m.r_value)
                );
            }
            Err(e) => {
                let _ = writeln!(out, "failed,,,,,,,,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    out
}

/// Generates a synthetic corpus and writes it under `out_dir`.
pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthCorpus> {
    let corpus = dseg_core::generate(cfg)?;
    corpus.write(out_dir)?;
    Ok(corpus)
}
