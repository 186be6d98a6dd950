//! Per-center window vectors.
//!
//! A window centered at frame `c` covers frames `[c - win/2, c + win/2)`, i.e.
//! exactly `win` frames, so a concatenated window has length `win * dim`.
//! Centers whose window does not fit inside the utterance get no vector.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Flatten the window frames in temporal order.
    #[default]
    Concat,
    /// Mean over the window frames.
    Avg,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "avg" => Ok(Self::Avg),
            other => Err(Error::Config(format!(
                "unknown aggregation {other:?} (expected concat or avg)"
            ))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Concat => "concat",
            Self::Avg => "avg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub win: usize,
    pub aggregation: Aggregation,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            win: 10,
            aggregation: Aggregation::Concat,
        }
    }
}

impl WindowConfig {
    pub fn new(win: usize, aggregation: Aggregation) -> Result<Self> {
        let cfg = Self { win, aggregation };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win < 2 || !self.win.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window length must be even and >= 2, got {}",
                self.win
            )));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.win / 2
    }

    /// Vector length for features of dimension `dim`.
    pub fn vector_dim(&self, dim: usize) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.win * dim,
            Aggregation::Avg => dim,
        }
    }
}

/// `C x D` window vectors for one utterance, one row per center.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    pub utterance_id: String,
    pub vectors: Vec<f32>,
    pub dim: usize,
    pub centers: Vec<usize>,
    /// Frame count of the source utterance.
    pub n_frames: usize,
    pub hop_ms: f32,
    pub config: WindowConfig,
}

impl WindowMatrix {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }
}

pub fn build_windows(seq: &FeatureSequence, cfg: &WindowConfig) -> Result<WindowMatrix> {
    cfg.validate()?;
    let n = seq.n_frames();
    let d_e = seq.dim();
    let half = cfg.half();
    let dim = cfg.vector_dim(d_e);
    let centers: Vec<usize> = if n >= cfg.win {
        (half..=n - half).collect()
    } else {
        Vec::new()
    };

    let mut vectors = Vec::with_capacity(centers.len() * dim);
    let frames = seq.frames();
    match cfg.aggregation {
        Aggregation::Concat => {
            for &c in &centers {
                vectors.extend_from_slice(&frames[(c - half) * d_e..(c + half) * d_e]);
            }
        }
        Aggregation::Avg => {
            let mut acc = vec![0f64; d_e];
            for &c in &centers {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for t in c - half..c + half {
                    for (a, &v) in acc.iter_mut().zip(seq.frame(t)) {
                        *a += v as f64;
                    }
                }
                vectors.extend(acc.iter().map(|a| (a / cfg.win as f64) as f32));
            }
        }
    }

    Ok(WindowMatrix {
        utterance_id: seq.utterance_id().to_owned(),
        vectors,
        dim,
        centers,
        n_frames: n,
        hop_ms: seq.hop_ms(),
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(frames: Vec<f32>, dim: usize) -> FeatureSequence {
        FeatureSequence::new("t", frames, dim, 20.0).unwrap()
    }

    #[test]
    fn concat_hand_example() {
        let w = build_windows(
            &seq(vec![1., 2., 3., 4.], 1),
            &WindowConfig::new(2, Aggregation::Concat).unwrap(),
        )
        .unwrap();
        assert_eq!(w.centers, [1, 2, 3]);
        assert_eq!(w.dim, 2);
        assert_eq!(w.vectors, [1., 2., 2., 3., 3., 4.]);
    }

    #[test]
    fn avg_hand_example() {
        let w = build_windows(
            &seq(vec![1., 2., 3., 4.], 1),
            &WindowConfig::new(2, Aggregation::Avg).unwrap(),
        )
        .unwrap();
        assert_eq!(w.centers, [1, 2, 3]);
        assert_eq!(w.vectors, [1.5, 2.5, 3.5]);
    }

    #[test]
    fn too_short_gives_empty_matrix() {
        let w = build_windows(&seq(vec![0.; 9], 1), &WindowConfig::default()).unwrap();
        assert!(w.is_empty());
        assert_eq!(w.n_frames, 9);
        let w = build_windows(&seq(vec![0.; 10], 1), &WindowConfig::default()).unwrap();
        assert_eq!(w.centers, [5]);
    }

    #[test]
    fn rejects_odd_or_tiny_windows() {
        assert!(WindowConfig::new(3, Aggregation::Concat).is_err());
        assert!(WindowConfig::new(0, Aggregation::Concat).is_err());
        assert!(build_windows(
            &seq(vec![0.; 4], 1),
            &WindowConfig {
                win: 5,
                aggregation: Aggregation::Avg
            }
        )
        .is_err());
    }

    #[test]
    fn constant_sequence_gives_identical_rows() {
        let s = seq([0.5f32, -1.0, 2.0].repeat(30), 3);
        for agg in [Aggregation::Concat, Aggregation::Avg] {
            let w = build_windows(&s, &WindowConfig::new(6, agg).unwrap()).unwrap();
            let first = w.row(0).to_vec();
            assert!(w.rows().all(|r| r == first.as_slice()));
        }
    }

    fn arb_seq() -> impl Strategy<Value = (Vec<f32>, usize, usize)> {
        (1usize..5, 2usize..25, 1usize..5).prop_flat_map(|(dim, n, half)| {
            (
                proptest::collection::vec(-100f32..100., dim * n),
                Just(dim),
                Just(half * 2),
            )
        })
    }

    proptest! {
        #[test]
        fn center_layout((frames, dim, win) in arb_seq()) {
            let n = frames.len() / dim;
            let w = build_windows(&seq(frames, dim), &WindowConfig::new(win, Aggregation::Concat).unwrap()).unwrap();
            let expected = if n >= win { n - win + 1 } else { 0 };
            prop_assert_eq!(w.len(), expected);
            prop_assert!(w.centers.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(w.centers.iter().all(|&c| c >= win / 2 && c <= n - win / 2));
            prop_assert_eq!(w.vectors.len(), expected * win * dim);
        }

        #[test]
        fn avg_is_mean_pooled_concat((frames, dim, win) in arb_seq()) {
            let s = seq(frames, dim);
            let cat = build_windows(&s, &WindowConfig::new(win, Aggregation::Concat).unwrap()).unwrap();
            let avg = build_windows(&s, &WindowConfig::new(win, Aggregation::Avg).unwrap()).unwrap();
            prop_assert_eq!(&cat.centers, &avg.centers);
            for (crow, arow) in cat.rows().zip(avg.rows()) {
                for j in 0..dim {
                    let mean = (0..win).map(|t| crow[t * dim + j] as f64).sum::<f64>() / win as f64;
                    let got = arow[j];
                    prop_assert!((got as f64 - mean).abs() <= (mean as f32).abs().max(f32::MIN_POSITIVE) as f64 * f32::EPSILON as f64);
                }
            }
        }

        #[test]
        fn dimension_permutation_commutes((frames, dim, win) in arb_seq(), rot in 0usize..5) {
            let rot = rot % dim;
            let permuted: Vec<f32> = frames
                .chunks_exact(dim)
                .flat_map(|f| (0..dim).map(move |j| f[(j + rot) % dim]))
                .collect();
            let cfg = WindowConfig::new(win, Aggregation::Concat).unwrap();
            let a = build_windows(&seq(frames, dim), &cfg).unwrap();
            let b = build_windows(&seq(permuted, dim), &cfg).unwrap();
            for (ra, rb) in a.rows().zip(b.rows()) {
                for t in 0..win {
                    for j in 0..dim {
                        prop_assert_eq!(rb[t * dim + j], ra[t * dim + (j + rot) % dim]);
                    }
                }
            }
        }

        #[test]
        fn shift_equivariance((frames, dim, win) in arb_seq(), pad in proptest::collection::vec(-1f32..1., 1..4)) {
            // prepend one frame
            let mut shifted = pad.iter().cycle().take(dim).copied().collect::<Vec<_>>();
            shifted.extend_from_slice(&frames);
            for agg in [Aggregation::Concat, Aggregation::Avg] {
                let cfg = WindowConfig::new(win, agg).unwrap();
                let a = build_windows(&seq(frames.clone(), dim), &cfg).unwrap();
                let b = build_windows(&seq(shifted.clone(), dim), &cfg).unwrap();
                for (i, &c) in a.centers.iter().enumerate() {
                    let j = b.centers.iter().position(|&x| x == c + 1).unwrap();
                    prop_assert_eq!(a.row(i), b.row(j));
                }
            }
        }
    }
}
