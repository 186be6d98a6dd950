//! Unsupervised word segmentation over frame-level speech features.
//!
//! Every frame of an utterance is scored by the summed squared distance of
//! its surrounding feature window to the `k` nearest windows drawn from a
//! training corpus. Windows that straddle two words recur less often than
//! windows inside a word, so peaks in the score sequence are read out as
//! word boundaries and evaluated against reference boundaries.
//!
//! The pipeline, bottom up:
//!
//! * [`feature_store`]: `FSEQ1` feature files and the JSON-lines corpus manifest.
//! * [`windowing`]: per-center window vectors (concatenated or averaged).
//! * [`knn`]: exact nearest-neighbor index and anomaly scores.
//! * [`peaks`]: Gaussian smoothing and minimum-separation peak picking.
//! * [`eval`]: precision / recall / F, over-segmentation, R-value and
//!   Hungarian-matched clustering accuracy.
//! * [`synth`]: seeded synthetic corpora with known word boundaries.
//! * [`pipeline`]: the end-to-end segmenter tying the above together.

pub mod error;
pub mod eval;
pub mod feature_store;
pub mod hungarian;
pub mod knn;
pub mod peaks;
pub mod pipeline;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
pub use eval::{
    boundary_metrics, cluster_accuracy, evaluate_corpus, match_boundaries, random_baseline,
    ContingencyTable, CorpusEval, EvalConfig, EvalReport, MatchCounts,
};
pub use feature_store::{
    load_manifest, read_feature_file, write_feature_file, write_manifest, CachingLoader,
    CorpusManifest, DiskLoader, FeatureLoader, FeatureSequence, ManifestEntry, MemoryLoader, Split,
};
pub use knn::{
    brute_force_knn, build_index, knn_score, BuildParams, KnnConfig, NeighborTable, ScoreSequence,
    TrainIndex,
};
pub use peaks::{detect_boundaries, find_peaks, smooth, BoundarySet, PeakConfig};
pub use pipeline::{Segmentation, Segmenter, SegmenterConfig};
pub use synth::{generate, SynthConfig, SynthCorpus};
pub use windowing::{build_windows, Aggregation, WindowConfig, WindowMatrix};
