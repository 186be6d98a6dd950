//! End-to-end segmentation: index the train split, score, pick peaks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feature_store::{CorpusManifest, FeatureLoader, FeatureSequence, Split};
use crate::knn::{build_index, BuildParams, KnnConfig, NeighborTable, ScoreSequence, TrainIndex};
use crate::peaks::{detect_boundaries, BoundarySet, PeakConfig};
use crate::windowing::{build_windows, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub window: WindowConfig,
    pub knn: KnnConfig,
    pub peaks: PeakConfig,
    pub build: BuildParams,
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.knn.validate()?;
        self.peaks.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub scores: ScoreSequence,
    pub boundaries: BoundarySet,
}

pub struct Segmenter {
    config: SegmenterConfig,
    index: TrainIndex,
}

impl Segmenter {
    pub fn build(
        manifest: &CorpusManifest,
        config: SegmenterConfig,
        loader: &dyn FeatureLoader,
    ) -> Result<Self> {
        config.validate()?;
        let index = build_index(manifest, &config.window, &config.build, loader)?;
        Ok(Self { config, index })
    }

    pub fn from_index(index: TrainIndex, config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, index })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn index(&self) -> &TrainIndex {
        &self.index
    }

    /// Neighbor distances up to depth `k`; an utterance shorter than the
    /// window yields an empty table (all frames invalid).
    pub fn neighbors(&self, seq: &FeatureSequence, k: usize) -> Result<NeighborTable> {
        let windows = build_windows(seq, &self.config.window)?;
        NeighborTable::compute(&windows, &self.index, k)
    }

    pub fn score(&self, seq: &FeatureSequence) -> Result<ScoreSequence> {
        self.neighbors(seq, self.config.knn.k)?
            .scores(self.config.knn.k)
    }

    pub fn segment(&self, seq: &FeatureSequence) -> Result<Segmentation> {
        let scores = self.score(seq)?;
        let boundaries = detect_boundaries(&scores, &self.config.peaks);
        Ok(Segmentation { scores, boundaries })
    }

    /// Segments every utterance of `split`, in manifest order.
    pub fn segment_split(
        &self,
        manifest: &CorpusManifest,
        split: Split,
        loader: &dyn FeatureLoader,
    ) -> Result<Vec<Segmentation>> {
        manifest
            .split(split)
            .map(|entry| self.segment(&*loader.load(manifest, entry)?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::MemoryLoader;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn short_utterances_have_no_boundaries() {
        let corpus = generate(&SynthConfig {
            n_train: 5,
            n_val: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let manifest = corpus.manifest("");
        let seg = Segmenter::build(
            &manifest,
            SegmenterConfig {
                knn: KnnConfig { k: 3 },
                ..Default::default()
            },
            &corpus.loader(),
        )
        .unwrap();
        let tiny = FeatureSequence::new("tiny", vec![0.0; 16 * 9], 16, 20.0).unwrap();
        let out = seg.segment(&tiny).unwrap();
        assert_eq!(out.scores.len(), 9);
        assert!(out.scores.valid.iter().all(|v| !v));
        assert!(out.boundaries.is_empty());
    }

    #[test]
    fn boundaries_stay_out_of_dead_zones() {
        let corpus = generate(&SynthConfig {
            n_train: 20,
            n_val: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let manifest = corpus.manifest("");
        let cfg = SegmenterConfig {
            knn: KnnConfig { k: 5 },
            ..Default::default()
        };
        let seg = Segmenter::build(&manifest, cfg, &corpus.loader()).unwrap();
        for out in seg
            .segment_split(&manifest, Split::Val, &corpus.loader())
            .unwrap()
        {
            let n = out.scores.len() as f64;
            for b in &out.boundaries.boundaries_ms {
                let frame = b / 20.0 - 0.5;
                assert!(frame >= 5.0 && frame <= n - 5.0, "{b} in dead zone");
            }
        }
        let empty = MemoryLoader::default();
        assert!(seg.segment_split(&manifest, Split::Val, &empty).is_err());
    }
}
