use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dseg_cli::{
    cmd_evaluate, cmd_segment, cmd_sweep, cmd_synth, exit_code, format_report, sweep_csv,
    RunConfig, SweepGrid, UsageError,
};
use dseg_core::{Aggregation, Split, SynthConfig};

#[derive(Parser)]
#[command(
    name = "dseg",
    version,
    about = "Unsupervised word segmentation by kNN anomaly scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index the train split and write boundaries for the target split.
    Segment(RunArgs),
    /// Score a boundaries file against manifest references.
    Evaluate {
        /// Boundaries JSONL produced by `segment`.
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Segment + evaluate over a grid of settings.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Grid file (JSON); the list flags below add to it.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sweep_k: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_win: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_aggregation: Vec<Aggregation>,
        #[arg(long, value_delimiter = ',')]
        sweep_max_train: Vec<usize>,
        /// TAG=MANIFEST, repeatable.
        #[arg(long = "layer-tag")]
        layer_tags: Vec<String>,
    },
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    win: Option<usize>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    min_separation_ms: Option<f64>,
    /// Gaussian smoothing width in frames.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    prominence: Option<f64>,
    #[arg(long)]
    max_train_utterances: Option<usize>,
    #[arg(long)]
    tolerance_ms: Option<f64>,
    #[arg(long)]
    include_edges: bool,
    /// Seed for the train-utterance sample.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "DSEG_WORKERS")]
    workers: Option<usize>,
    /// Split to segment, or to score for `evaluate` (default val).
    #[arg(long)]
    split: Option<Split>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.k => run.knn.k);
        set!(self.win => run.window.win);
        set!(self.aggregation => run.window.aggregation);
        set!(self.min_separation_ms => run.peaks.min_separation_ms);
        set!(self.sigma => run.peaks.smoothing_sigma_frames);
        set!(self.prominence => run.peaks.prominence_threshold);
        set!(self.max_train_utterances => run.build.max_train_utterances);
        set!(self.tolerance_ms => run.eval.tolerance_ms);
        set!(self.seed => run.build.rng_seed);
        set!(self.split => run.split);
        if self.include_edges {
            run.eval.include_edges = true;
        }
        if self.manifest.is_some() {
            run.manifest = self.manifest.clone();
        }
        if self.out_dir.is_some() {
            run.out_dir = self.out_dir.clone();
        }
        if self.workers.is_some() {
            run.workers = self.workers;
        }
        Ok(run)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON synth config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    d_e: Option<usize>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment(args) => {
            let summary = cmd_segment(&args.resolve()?)?;
            println!("{summary}");
        }
        Command::Evaluate { predictions, run } => {
            let mut cfg = run.resolve()?;
            if run.split.is_some() || cfg.eval.split.is_none() {
                cfg.eval.split = Some(cfg.split);
            }
            let eval = cmd_evaluate(&predictions, &cfg)?;
            print!("{}", format_report(&eval));
        }
        Command::Sweep {
            run,
            grid,
            sweep_k,
            sweep_win,
            sweep_aggregation,
            sweep_max_train,
            layer_tags,
        } => {
            let base = run.resolve()?;
            let mut g = match &grid {
                Some(path) => SweepGrid::from_json_file(path)?,
                None => SweepGrid::default(),
            };
            g.k.extend(sweep_k);
            g.win.extend(sweep_win);
            g.aggregation.extend(sweep_aggregation);
            g.max_train_utterances.extend(sweep_max_train);
            for spec in layer_tags {
                let (tag, path) = spec.split_once('=').ok_or_else(|| {
                    UsageError(format!("--layer-tag expects TAG=MANIFEST, got {spec:?}"))
                })?;
                g.layer_tags.push((tag.to_owned(), PathBuf::from(path)));
            }
            let rows = cmd_sweep(&base, &g)?;
            let csv = sweep_csv(&rows);
            if let Some(dir) = &base.out_dir {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join("sweep.csv");
                std::fs::write(&path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{csv}");
        }
        Command::Synth(args) => {
            let mut cfg = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(v) = args.seed {
                cfg.rng_seed = v;
            }
            if let Some(v) = args.vocab_size {
                cfg.vocab_size = v;
            }
            if let Some(v) = args.n_train {
                cfg.n_train = v;
            }
            if let Some(v) = args.n_val {
                cfg.n_val = v;
            }
            if let Some(v) = args.noise_sigma {
                cfg.noise_sigma = v;
            }
            if let Some(v) = args.d_e {
                cfg.d_e = v;
            }
            let corpus = cmd_synth(&cfg, &args.out_dir)?;
            println!(
                "wrote {} utterances to {}",
                corpus.utterances.len(),
                args.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
