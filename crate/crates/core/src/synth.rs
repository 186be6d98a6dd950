//! Seeded synthetic corpora with known word boundaries.
//!
//! A shared inventory of sub-word units ("phones") each owns a smooth
//! trajectory: a random offset plus low-pass filtered Gaussian noise. A word
//! prototype is a fixed sequence of phone segments whose edges fade towards
//! the origin, so the frames right at a word join look alike everywhere and
//! only the wider context (which word ends, which word starts) is rare.
//! Utterances concatenate Zipf-sampled words, each instance time-warped and
//! perturbed by temporally smoothed noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{
    write_feature_file, write_manifest, CorpusManifest, FeatureSequence, ManifestEntry,
    MemoryLoader, Split,
};
use crate::peaks::gaussian_kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub d_e: usize,
    pub hop_ms: f32,
    /// Inclusive word length range in frames.
    pub word_len_frames: (usize, usize),
    pub words_per_utterance: (usize, usize),
    pub n_train: usize,
    pub n_val: usize,
    pub noise_sigma: f64,
    /// Gaussian low-pass width (frames) applied to unit trajectories.
    pub trajectory_smoothness: f64,
    /// Temporal low-pass width (frames) of the additive noise; 0 gives white noise.
    pub noise_smoothness: f64,
    /// Frames over which a word prototype fades in and out of the origin.
    pub edge_taper_frames: f64,
    /// Number of sub-word units shared by all words.
    pub phone_inventory: usize,
    /// Inclusive unit segment length range in frames.
    pub phone_len_frames: (usize, usize),
    /// Maximum relative length change of a word instance; 0 disables warping.
    pub time_warp: f64,
    pub zipf_exponent: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            d_e: 16,
            hop_ms: 20.0,
            word_len_frames: (8, 25),
            words_per_utterance: (3, 8),
            n_train: 200,
            n_val: 50,
            noise_sigma: 0.1,
            trajectory_smoothness: 3.0,
            noise_smoothness: 2.0,
            edge_taper_frames: 3.0,
            phone_inventory: 6,
            phone_len_frames: (3, 8),
            time_warp: 0.2,
            zipf_exponent: 1.0,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.vocab_size == 0 || self.d_e == 0 {
            return bad("vocab_size and d_e must be >= 1");
        }
        if !(self.hop_ms > 0.0) {
            return bad("hop_ms must be > 0");
        }
        let (lo, hi) = self.word_len_frames;
        if lo == 0 || lo > hi {
            return bad("word_len_frames must satisfy 1 <= min <= max");
        }
        if (lo as f64) * (self.hop_ms as f64) < 100.0 {
            return bad("shortest word must last at least 100 ms");
        }
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return bad("words_per_utterance must satisfy 1 <= min <= max");
        }
        let (lo, hi) = self.phone_len_frames;
        if self.phone_inventory == 0 || lo == 0 || lo > hi {
            return bad("phone_inventory >= 1 and 1 <= phone_len min <= max required");
        }
        if !(self.noise_sigma >= 0.0
            && self.trajectory_smoothness >= 0.0
            && self.noise_smoothness >= 0.0
            && self.edge_taper_frames >= 0.0)
        {
            return bad("noise and smoothness parameters must be >= 0");
        }
        if !(0.0..1.0).contains(&self.time_warp) {
            return bad("time_warp must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub features: FeatureSequence,
    pub split: Split,
    pub words: Vec<usize>,
    /// Frame count of each word instance.
    pub word_frames: Vec<usize>,
    pub boundaries_ms: Vec<f64>,
}

impl SynthUtterance {
    pub fn id(&self) -> &str {
        self.features.utterance_id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub utterances: Vec<SynthUtterance>,
}

impl SynthCorpus {
    /// Manifest whose feature paths point at `features/<id>.fseq`.
    pub fn manifest(&self, root: impl Into<PathBuf>) -> CorpusManifest {
        let entries = self
            .utterances
            .iter()
            .map(|u| ManifestEntry {
                id: u.id().to_owned(),
                feature_path: feature_rel_path(u.id()),
                split: u.split,
                duration_ms: u.features.duration_ms(),
                ref_boundaries_ms: Some(u.boundaries_ms.clone()),
            })
            .collect();
        CorpusManifest::new(entries, root).expect("generated manifest is valid")
    }

    pub fn loader(&self) -> MemoryLoader {
        MemoryLoader::new(self.utterances.iter().map(|u| u.features.clone()))
    }

    /// Word-id sequence per utterance id.
    pub fn word_sequences(&self) -> BTreeMap<String, Vec<usize>> {
        self.utterances
            .iter()
            .map(|u| (u.id().to_owned(), u.words.clone()))
            .collect()
    }

    /// Writes `features/*.fseq`, `manifest.jsonl` and `words.json` under `out_dir`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let out_dir = out_dir.as_ref();
        let features = out_dir.join("features");
        fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        for u in &self.utterances {
            write_feature_file(&u.features, out_dir.join(feature_rel_path(u.id())))?;
        }
        let manifest = self.manifest(out_dir);
        write_manifest(&manifest, out_dir.join("manifest.jsonl"))?;
        let words_path = out_dir.join("words.json");
        let json =
            serde_json::to_string_pretty(&self.word_sequences()).expect("word ids serialize");
        fs::write(&words_path, json + "\n").map_err(|e| Error::io(&words_path, e))?;
        Ok(manifest)
    }
}

fn feature_rel_path(id: &str) -> PathBuf {
    Path::new("features").join(format!("{id}.fseq"))
}

struct Prototype {
    frames: Vec<f64>,
    len: usize,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `len x d` Gaussian noise, low-pass filtered along time with width
/// `smoothness` frames and rescaled to unit marginal variance.
fn smooth_noise(len: usize, d: usize, smoothness: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let kernel = if smoothness > 0.0 {
        gaussian_kernel(smoothness)
    } else {
        vec![1.0]
    };
    let gain = kernel.iter().map(|w| w * w).sum::<f64>().sqrt();
    let pad = kernel.len() - 1;
    let white: Vec<f64> = (0..(len + pad) * d).map(|_| normal(rng)).collect();
    let mut out = vec![0f64; len * d];
    for t in 0..len {
        for j in 0..d {
            let filtered: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * white[(t + i) * d + j])
                .sum();
            out[t * d + j] = filtered / gain;
        }
    }
    out
}

/// Smooth random trajectory of `len` frames around a random offset.
fn make_unit(cfg: &SynthConfig, len: usize, rng: &mut ChaCha8Rng) -> Prototype {
    let d = cfg.d_e;
    let offset: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let mut frames = smooth_noise(len, d, cfg.trajectory_smoothness, rng);
    for (i, v) in frames.iter_mut().enumerate() {
        *v += offset[i % d];
    }
    Prototype { frames, len }
}

/// Raised-cosine fade of both word edges towards the origin.
fn taper(cfg: &SynthConfig, mut p: Prototype) -> Prototype {
    let width = cfg.edge_taper_frames;
    let d = cfg.d_e;
    for t in 0..p.len {
        let edge = t.min(p.len - 1 - t) as f64;
        if edge >= width {
            continue;
        }
        let env = 0.5 - 0.5 * (std::f64::consts::PI * edge / width).cos();
        for v in &mut p.frames[t * d..(t + 1) * d] {
            *v *= env;
        }
    }
    p
}

/// Word prototype: random length, cut into unit-length segments, each filled
/// with a (resampled) randomly chosen unit.
fn make_word(cfg: &SynthConfig, units: &[Prototype], rng: &mut ChaCha8Rng) -> Prototype {
    let (lo, hi) = cfg.word_len_frames;
    let len = rng.random_range(lo..=hi);
    let (plo, phi) = cfg.phone_len_frames;
    let mut frames = Vec::with_capacity(len * cfg.d_e);
    let mut filled = 0;
    let mut prev = usize::MAX;
    while filled < len {
        let mut seg = rng.random_range(plo..=phi).min(len - filled);
        // fold a too-short tail into this segment
        if len - filled - seg < plo {
            seg = len - filled;
        }
        let mut unit = rng.random_range(0..units.len());
        if units.len() > 1 {
            while unit == prev {
                unit = rng.random_range(0..units.len());
            }
        }
        frames.extend(warp(&units[unit], seg, cfg.d_e));
        filled += seg;
        prev = unit;
    }
    Prototype { frames, len }
}

/// Linear resampling of a prototype to `len` frames.
fn warp(proto: &Prototype, len: usize, d: usize) -> Vec<f64> {
    if len == proto.len {
        return proto.frames.clone();
    }
    let mut out = Vec::with_capacity(len * d);
    for t in 0..len {
        let pos = if len == 1 {
            0.0
        } else {
            t as f64 * (proto.len - 1) as f64 / (len - 1) as f64
        };
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(proto.len - 1);
        let frac = pos - i0 as f64;
        for j in 0..d {
            out.push(proto.frames[i0 * d + j] * (1.0 - frac) + proto.frames[i1 * d + j] * frac);
        }
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let units: Vec<Prototype> = (0..cfg.phone_inventory)
        .map(|_| make_unit(cfg, cfg.phone_len_frames.1, &mut rng))
        .collect();
    let protos: Vec<Prototype> = (0..cfg.vocab_size)
        .map(|_| taper(cfg, make_word(cfg, &units, &mut rng)))
        .collect();
    let zipf =
        WeightedIndex::new((1..=cfg.vocab_size).map(|r| 1.0 / (r as f64).powf(cfg.zipf_exponent)))
            .map_err(|e| Error::Config(format!("word distribution: {e}")))?;

    let d = cfg.d_e;
    let (len_lo, len_hi) = cfg.word_len_frames;
    let splits = std::iter::repeat_n(Split::Train, cfg.n_train)
        .chain(std::iter::repeat_n(Split::Val, cfg.n_val));
    let mut counters = [0usize; 3];
    let mut utterances = Vec::with_capacity(cfg.n_train + cfg.n_val);
    for split in splits {
        let n_words = rng.random_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);
        let mut clean: Vec<f64> = Vec::new();
        let mut words = Vec::with_capacity(n_words);
        let mut word_frames = Vec::with_capacity(n_words);
        let mut boundaries_ms = Vec::with_capacity(n_words - 1);
        for w in 0..n_words {
            let word = zipf.sample(&mut rng);
            let proto = &protos[word];
            let len = if cfg.time_warp > 0.0 {
                let scale = rng.random_range(1.0 - cfg.time_warp..=1.0 + cfg.time_warp);
                ((proto.len as f64 * scale).round() as usize).clamp(len_lo, len_hi)
            } else {
                proto.len
            };
            if w > 0 {
                boundaries_ms.push((clean.len() / d) as f64 * cfg.hop_ms as f64);
            }
            clean.extend(warp(proto, len, d));
            words.push(word);
            word_frames.push(len);
        }
        let frames: Vec<f32> = if cfg.noise_sigma > 0.0 {
            let noise = smooth_noise(clean.len() / d, d, cfg.noise_smoothness, &mut rng);
            clean
                .iter()
                .zip(noise)
                .map(|(v, n)| (v + cfg.noise_sigma * n) as f32)
                .collect()
        } else {
            clean.iter().map(|&v| v as f32).collect()
        };
        let slot = match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        let id = format!("{}_{:04}", split_name(split), counters[slot]);
        counters[slot] += 1;
        utterances.push(SynthUtterance {
            features: FeatureSequence::new(id, frames, d, cfg.hop_ms)?,
            split,
            words,
            word_frames,
            boundaries_ms,
        });
    }
    Ok(SynthCorpus {
        config: cfg.clone(),
        utterances,
    })
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}
