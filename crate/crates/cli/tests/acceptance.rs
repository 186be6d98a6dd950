//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dseg_cli::{cmd_segment, cmd_synth, RunConfig};
use dseg_core::eval::{f_score, r_value};
use dseg_core::peaks::peak_indices;
use dseg_core::{
    boundary_metrics, brute_force_knn, build_windows, cluster_accuracy, evaluate_corpus, generate,
    knn_score, random_baseline, Aggregation, BoundarySet, BuildParams, ContingencyTable,
    EvalConfig, FeatureSequence, KnnConfig, MatchCounts, NeighborTable, PeakConfig, ScoreSequence,
    Segmenter, SegmenterConfig, Split, SynthConfig, TrainIndex, WindowConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// F at 40 ms of the default pipeline on the default synthetic corpus, as
/// first measured.
const FROZEN_SYNTH_F: f64 = 0.581_560_283_687_943_3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut out = f();
    let took = t.elapsed();
    if took > limit {
        out.pass = false;
        out.detail
            .push_str(&format!("; too slow (limit {limit:?})"));
    }
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("{tag}  {name}: {} [{took:.2?}]", out.detail);
    out.pass
}

fn table1_formulas() -> Outcome {
    let rv_a = 100.0 * r_value(0.180, -0.412);
    let rv_b = 100.0 * r_value(0.320, 0.0346);
    let f_b = 100.0 * f_score(0.309, 0.320);
    // P = 15.5 %, R = 81.0 % expressed as counts
    let counts = MatchCounts {
        n_hit: 12_555,
        n_pred: 81_000,
        n_ref: 15_500,
    };
    let m = boundary_metrics(counts);
    let os_c = 100.0 * m.os.unwrap();
    let pass = (rv_a - 39.7).abs() <= 0.1
        && (rv_b - 40.7).abs() <= 0.1
        && (f_b - 31.5).abs() <= 0.1
        && (os_c - 421.4).abs() <= 2.0
        && (m.precision - 0.155).abs() < 1e-12
        && (m.recall - 0.81).abs() < 1e-12;
    Outcome {
        pass,
        detail: format!(
            "R-val {rv_a:.2} (39.7), R-val {rv_b:.2} (40.7), F {f_b:.2} (31.5), OS {os_c:.2} (421.4 +/- 2)"
        ),
    }
}

fn random_sequence(
    rng: &mut ChaCha8Rng,
    id: &str,
    n: usize,
    d: usize,
    coarse: bool,
) -> FeatureSequence {
    let frames = (0..n * d)
        .map(|_| {
            if coarse {
                rng.random_range(0..3) as f32
            } else {
                rng.random_range(-2.0f32..2.0)
            }
        })
        .collect();
    FeatureSequence::new(id, frames, d, 20.0).unwrap()
}

fn knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0f64;
    let mut failures = 0;
    let mut max_rows = 0;
    let mut max_dim = 0;
    for pair in 0..100 {
        let k = [1, 5, 20][pair % 3];
        let d = rng.random_range(1..=32);
        let n = if pair % 10 == 0 {
            5001
        } else {
            rng.random_range(30..=2000)
        };
        let coarse = pair % 4 == 0;
        let window = WindowConfig::new(2, Aggregation::Concat).unwrap();
        let train = build_windows(&random_sequence(&mut rng, "t", n, d, coarse), &window).unwrap();
        let index = TrainIndex::from_windows([train], BuildParams::default()).unwrap();
        max_rows = max_rows.max(index.len());
        max_dim = max_dim.max(index.dim());
        let query = build_windows(&random_sequence(&mut rng, "q", 40, d, coarse), &window).unwrap();
        let scores = knn_score(&query, &index, &KnnConfig { k }).unwrap();
        for (i, &c) in query.centers.iter().enumerate() {
            let row = query.row(i);
            let oracle: f64 = brute_force_knn(row, &index, k)
                .unwrap()
                .iter()
                .map(|p| p.1)
                .sum();
            // independent full scan in f64
            let mut all: Vec<f64> = (0..index.len())
                .map(|r| {
                    row.iter()
                        .zip(index.row(r))
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum()
                })
                .collect();
            all.sort_by(f64::total_cmp);
            let scan: f64 = all[..k].iter().sum();
            for want in [oracle, scan] {
                let rel = (scores.scores[c] - want).abs() / want.abs().max(1e-12);
                let rel = if want == 0.0 {
                    scores.scores[c].abs()
                } else {
                    rel
                };
                worst = worst.max(rel);
                if rel > 1e-4 {
                    failures += 1;
                }
            }
        }
    }
    Outcome {
        pass: failures == 0 && max_rows <= 5000 && max_dim <= 64,
        detail: format!(
            "100 pairs, index up to {max_rows}x{max_dim}, worst rel err {worst:.1e}, {failures} mismatches"
        ),
    }
}

fn exhaustive_best(counts: &[Vec<u64>]) -> u64 {
    let rows = counts.len();
    let cols = counts[0].len();
    let n = rows.max(cols);
    let at = |r: usize, c: usize| {
        if r < rows && c < cols {
            counts[r][c]
        } else {
            0
        }
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let score = |p: &[usize]| (0..n).map(|r| at(r, p[r])).sum::<u64>();
    best = best.max(score(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(score(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = 0;
    for _ in 0..200 {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=8);
        let hi = if rng.random_bool(0.3) { 3 } else { 1000 };
        let mut counts: Vec<Vec<u64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(0..hi)).collect())
            .collect();
        counts[0][0] += 1;
        let table = ContingencyTable::new(counts.clone()).unwrap();
        let got = cluster_accuracy(&table).unwrap();
        let want = exhaustive_best(&counts) as f64 / table.total() as f64;
        if got != want {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("200 tables up to 8x8, {failures} mismatches"),
    }
}

fn peak_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut violations = Vec::new();
    let mut kept_total = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=120);
        // coarse integer scores give plateaus and ties
        let coarse = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..6) as f64
                } else {
                    rng.random_range(0.0..100.0)
                }
            })
            .collect();
        let mut valid = vec![true; n];
        for v in valid.iter_mut() {
            if rng.random_bool(0.05) {
                *v = false;
            }
        }
        let seq = |s: Vec<f64>| ScoreSequence {
            utterance_id: "u".into(),
            scores: s,
            valid: valid.clone(),
            k: 1,
            hop_ms: 20.0,
        };
        let base = seq(scores.clone());
        let cfg = |sep: f64| PeakConfig {
            min_separation_ms: sep,
            ..PeakConfig::default()
        };

        // exact affine maps: power-of-two scale, integer shift
        let a = [0.25, 0.5, 2.0, 8.0][case % 4];
        let b = rng.random_range(-50..50) as f64;
        let moved = seq(scores.iter().map(|s| a * s + b).collect());
        for sep in [20.0, 100.0, 200.0] {
            if peak_indices(&base, &cfg(sep)) != peak_indices(&moved, &cfg(sep)) {
                violations.push(format!("case {case}: affine a={a} b={b} sep={sep}"));
            }
        }

        let mut last = usize::MAX;
        for d in 0..=12 {
            let kept = peak_indices(&base, &cfg(20.0 * d as f64));
            kept_total += kept.len();
            if kept.len() > last {
                violations.push(format!("case {case}: count grew at d={d}"));
            }
            last = kept.len();
            for (i, &p) in kept.iter().enumerate() {
                for &q in &kept[i + 1..] {
                    if q - p <= d {
                        violations.push(format!("case {case}: peaks {p},{q} within d={d}"));
                    }
                }
                // plateau convention: leftmost index of a plateau that rises
                // from a valid lower left neighbor and falls on the right
                let rises = p > 0 && valid[p - 1] && scores[p - 1] < scores[p];
                let mut end = p;
                while end + 1 < n && valid[end + 1] && scores[end + 1] == scores[p] {
                    end += 1;
                }
                let falls = end + 1 < n && valid[end + 1] && scores[end + 1] < scores[p];
                if !(valid[p] && rises && falls) {
                    violations.push(format!("case {case}: {p} breaks plateau convention"));
                }
            }
        }
    }
    Outcome {
        pass: violations.is_empty(),
        detail: format!(
            "1000 sequences, {kept_total} kept peaks checked, {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!(" (first: {v})"))
                .unwrap_or_default()
        ),
    }
}

struct SynthRun {
    f: f64,
    random_f: f64,
}

fn synth_f(
    seg: &Segmenter,
    tables: &[NeighborTable],
    manifest: &dseg_core::CorpusManifest,
    k: usize,
) -> SynthRun {
    let eval = EvalConfig {
        tolerance_ms: 40.0,
        split: Some(Split::Val),
        ..EvalConfig::default()
    };
    let preds: Vec<BoundarySet> = tables
        .iter()
        .map(|t| dseg_core::detect_boundaries(&t.scores(k).unwrap(), &seg.config().peaks))
        .collect();
    let f = evaluate_corpus(&preds, manifest, &eval)
        .unwrap()
        .report
        .f_score;
    let margin = seg.config().window.half();
    let random_f = (0..10)
        .map(|seed| {
            let rnd = random_baseline(&preds, manifest, 20.0, margin, seed).unwrap();
            evaluate_corpus(&rnd, manifest, &eval)
                .unwrap()
                .report
                .f_score
        })
        .sum::<f64>()
        / 10.0;
    SynthRun { f, random_f }
}

struct Ablations {
    concat: Vec<(usize, SynthRun)>,
    avg20: SynthRun,
    win2: SynthRun,
}

fn run_synthetic() -> Ablations {
    let corpus = generate(&SynthConfig::default()).unwrap();
    let manifest = corpus.manifest("");
    let loader = corpus.loader();
    let run = |win: usize, agg: Aggregation, ks: &[usize]| {
        let cfg = SegmenterConfig {
            window: WindowConfig::new(win, agg).unwrap(),
            ..SegmenterConfig::default()
        };
        let seg = Segmenter::build(&manifest, cfg, &loader).unwrap();
        let depth = *ks.iter().max().unwrap();
        let tables: Vec<NeighborTable> = corpus
            .utterances
            .iter()
            .filter(|u| u.split == Split::Val)
            .map(|u| seg.neighbors(&u.features, depth).unwrap())
            .collect();
        ks.iter()
            .map(|&k| (k, synth_f(&seg, &tables, &manifest, k)))
            .collect::<Vec<_>>()
    };
    let concat = run(10, Aggregation::Concat, &[5, 10, 20]);
    let avg20 = run(10, Aggregation::Avg, &[20]).pop().unwrap().1;
    let win2 = run(2, Aggregation::Concat, &[20]).pop().unwrap().1;
    Ablations {
        concat,
        avg20,
        win2,
    }
}

fn end_to_end(ab: &Ablations, took: Duration) -> Outcome {
    let r = &ab.concat.iter().find(|(k, _)| *k == 20).unwrap().1;
    let margin = r.f - r.random_f;
    let drift = r.f - FROZEN_SYNTH_F;
    Outcome {
        pass: margin >= 0.2 && drift.abs() <= 0.01 && took < Duration::from_secs(120),
        detail: format!(
            "F {:.4} vs random {:.4} (margin {margin:.4}, need 0.2); frozen {FROZEN_SYNTH_F:.4}, drift {drift:+.4}; all synthetic runs {took:.2?}",
            r.f, r.random_f
        ),
    }
}

fn ablations(ab: &Ablations) -> Outcome {
    let f = |k| ab.concat.iter().find(|(kk, _)| *kk == k).unwrap().1.f;
    let (f5, f10, f20) = (f(5), f(10), f(20));
    let spread = f5.max(f10).max(f20) - f5.min(f10).min(f20);
    let concat_ok = f20 >= ab.avg20.f;
    let k_ok = spread <= 0.02;
    let win_ok = f20 >= ab.win2.f;
    let mark = |ok: bool| if ok { "ok" } else { "NO" };
    Outcome {
        pass: concat_ok && k_ok && win_ok,
        detail: format!(
            "concat {f20:.4} >= avg {:.4} [{}]; k=5/10/20 F {f5:.4}/{f10:.4}/{f20:.4} spread {spread:.4} <= 0.02 [{}]; win10 {f20:.4} >= win2 {:.4} [{}]",
            ab.avg20.f,
            mark(concat_ok),
            mark(k_ok),
            ab.win2.f,
            mark(win_ok)
        ),
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    cmd_synth(&SynthConfig::default(), &corpus).unwrap();
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let run = RunConfig {
                manifest: Some(corpus.join("manifest.jsonl")),
                out_dir: Some(dir.path().join(name)),
                ..RunConfig::default()
            };
            cmd_segment(&run).unwrap();
            read_tree(&dir.path().join(name))
        })
        .collect();
    let files = outputs[0].len();
    let bytes: usize = outputs[0].iter().map(|(_, b)| b.len()).sum();
    Outcome {
        pass: files > 1 && outputs[0] == outputs[1],
        detail: format!("two runs, {files} files / {bytes} bytes compared"),
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= check("Table 1 metric formulas", secs(1), table1_formulas);
    ok &= check("kNN oracle equivalence", secs(10), knn_oracle);
    ok &= check("Hungarian oracle equivalence", secs(10), hungarian_oracle);
    ok &= check("peak detector properties", secs(10), peak_properties);
    let t = Instant::now();
    let ab = run_synthetic();
    let synth_time = t.elapsed();
    ok &= check("end-to-end synthetic benchmark", secs(1), || {
        end_to_end(&ab, synth_time)
    });
    ok &= check("directional ablations", secs(1), || ablations(&ab));
    ok &= check("segment determinism", secs(60), determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
