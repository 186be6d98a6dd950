//! Browser demo over a small in-memory synthetic corpus: score an utterance,
//! pick its boundaries, evaluate the whole validation split.

use dseg_core::peaks::detect_boundaries;
use dseg_core::{
    evaluate_corpus, generate, random_baseline, Aggregation, CorpusManifest, EvalConfig, KnnConfig,
    MemoryLoader, PeakConfig, ScoreSequence, Segmenter, SegmenterConfig, Split, SynthConfig,
    SynthCorpus, WindowConfig,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

pub struct DemoState {
    corpus: SynthCorpus,
    manifest: CorpusManifest,
    loader: MemoryLoader,
    val: Vec<usize>,
    segmenter: Option<Segmenter>,
    k: usize,
    scores: Vec<Option<ScoreSequence>>,
}

impl DemoState {
    pub fn new(seed: u64, n_train: usize, n_val: usize) -> dseg_core::Result<Self> {
        let corpus = generate(&SynthConfig {
            n_train,
            n_val,
            rng_seed: seed,
            ..SynthConfig::default()
        })?;
        let manifest = corpus.manifest("");
        let loader = corpus.loader();
        let val: Vec<usize> = (0..corpus.utterances.len())
            .filter(|&i| corpus.utterances[i].split == Split::Val)
            .collect();
        let scores = vec![None; val.len()];
        Ok(Self {
            corpus,
            manifest,
            loader,
            val,
            segmenter: None,
            k: KnnConfig::default().k,
            scores,
        })
    }

    pub fn utterances(&self) -> usize {
        self.val.len()
    }

    /// Rebuilds the index when the window changes; drops cached scores when
    /// anything changes.
    pub fn configure(&mut self, k: usize, win: usize, aggregation: &str) -> dseg_core::Result<()> {
        let aggregation: Aggregation = aggregation.parse()?;
        let window = WindowConfig::new(win, aggregation)?;
        KnnConfig { k }.validate()?;
        let same_window = self
            .segmenter
            .as_ref()
            .is_some_and(|s| s.config().window == window);
        if !same_window {
            let cfg = SegmenterConfig {
                window,
                ..SegmenterConfig::default()
            };
            self.segmenter = Some(Segmenter::build(&self.manifest, cfg, &self.loader)?);
            self.scores.iter_mut().for_each(|s| *s = None);
        }
        if k != self.k {
            self.k = k;
            self.scores.iter_mut().for_each(|s| *s = None);
        }
        Ok(())
    }

    fn segmenter(&mut self) -> dseg_core::Result<&Segmenter> {
        if self.segmenter.is_none() {
            self.configure(self.k, WindowConfig::default().win, "concat")?;
        }
        Ok(self.segmenter.as_ref().expect("configured above"))
    }

    fn scores(&mut self, utt: usize) -> dseg_core::Result<&ScoreSequence> {
        if utt >= self.val.len() {
            return Err(dseg_core::Error::Config(format!(
                "utterance {utt} out of range 0..{}",
                self.val.len()
            )));
        }
        if self.scores[utt].is_none() {
            let k = self.k;
            let seq = self.corpus.utterances[self.val[utt]].features.clone();
            let table = self.segmenter()?.neighbors(&seq, k)?;
            self.scores[utt] = Some(table.scores(k)?);
        }
        Ok(self.scores[utt].as_ref().expect("filled above"))
    }

    /// Score curve (null on dead frames) plus reference boundaries.
    pub fn score_json(&mut self, utt: usize) -> dseg_core::Result<String> {
        let s = self.scores(utt)?.clone();
        let u = &self.corpus.utterances[self.val[utt]];
        let curve: Vec<Option<f64>> = s
            .scores
            .iter()
            .zip(&s.valid)
            .map(|(&v, &ok)| ok.then_some(v))
            .collect();
        Ok(json!({
            "id": u.id(),
            "hop_ms": s.hop_ms,
            "scores": curve,
            "references_ms": u.boundaries_ms,
            "words": u.words,
        })
        .to_string())
    }

    /// Smoothed curve and predicted boundaries for one utterance.
    pub fn boundaries_json(&mut self, utt: usize, peaks: PeakConfig) -> dseg_core::Result<String> {
        peaks.validate()?;
        let s = self.scores(utt)?;
        let smoothed = dseg_core::smooth(s, peaks.smoothing_sigma_frames);
        let b = detect_boundaries(s, &peaks);
        let curve: Vec<Option<f64>> = smoothed
            .scores
            .iter()
            .zip(&smoothed.valid)
            .map(|(&v, &ok)| ok.then_some(v))
            .collect();
        Ok(json!({ "smoothed": curve, "boundaries_ms": b.boundaries_ms }).to_string())
    }

    /// Corpus report over the validation split next to a count-matched
    /// random baseline.
    pub fn evaluate_json(
        &mut self,
        peaks: PeakConfig,
        tolerance_ms: f64,
    ) -> dseg_core::Result<String> {
        peaks.validate()?;
        let mut preds = Vec::with_capacity(self.val.len());
        for utt in 0..self.val.len() {
            preds.push(detect_boundaries(self.scores(utt)?, &peaks));
        }
        let cfg = EvalConfig {
            tolerance_ms,
            split: Some(Split::Val),
            ..EvalConfig::default()
        };
        let report = evaluate_corpus(&preds, &self.manifest, &cfg)?.report;
        let half = self.segmenter()?.config().window.half();
        let hop = self.corpus.config.hop_ms as f64;
        let random = random_baseline(&preds, &self.manifest, hop, half, 0)?;
        let random = evaluate_corpus(&random, &self.manifest, &cfg)?.report;
        Ok(json!({ "report": report, "random": random }).to_string())
    }
}

#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
}

fn js(e: dseg_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn peak_config(min_separation_ms: f64, sigma: f64, prominence: f64) -> PeakConfig {
    PeakConfig {
        min_separation_ms,
        smoothing_sigma_frames: sigma,
        prominence_threshold: prominence,
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Ok(Demo {
            state: DemoState::new(seed as u64, 80, 12).map_err(js)?,
        })
    }

    pub fn utterances(&self) -> usize {
        self.state.utterances()
    }

    /// Scores utterance `utt` with the given kNN and window settings.
    pub fn score(
        &mut self,
        utt: usize,
        k: usize,
        win: usize,
        aggregation: &str,
    ) -> Result<String, JsError> {
        self.state.configure(k, win, aggregation).map_err(js)?;
        self.state.score_json(utt).map_err(js)
    }

    pub fn boundaries(
        &mut self,
        utt: usize,
        min_separation_ms: f64,
        sigma: f64,
        prominence: f64,
    ) -> Result<String, JsError> {
        self.state
            .boundaries_json(utt, peak_config(min_separation_ms, sigma, prominence))
            .map_err(js)
    }

    pub fn evaluate(
        &mut self,
        min_separation_ms: f64,
        sigma: f64,
        prominence: f64,
        tolerance_ms: f64,
    ) -> Result<String, JsError> {
        self.state
            .evaluate_json(
                peak_config(min_separation_ms, sigma, prominence),
                tolerance_ms,
            )
            .map_err(js)
    }
}
