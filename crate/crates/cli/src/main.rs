use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slamfrontkit::evaluation::{AteOptions, DEFAULT_MAX_DT};
use slamfrontkit::synthetic::OrbitConfig;
use slamfrontkit_cli::commands::{self, BenchSource, SynthLayout, SynthOptions, TrajectoryFormat};
use slamfrontkit_cli::{CliError, RunConfig};

/// Visual odometry front-end: multi-scale keypoints, SGM stereo depth,
/// assignment matching and pose tracking.
#[derive(Debug, Parser)]
#[command(name = "slamfrontkit", version)]
struct Cli {
    /// Worker threads (overrides `threads` in the config).
    #[arg(long, global = true, env = "SLAMFRONTKIT_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set tracker.huber_delta=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self, threads: Option<usize>) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(t) = threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Tum,
    Kitti,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SyntheticKind {
    /// 1241x376, KITTI-like intrinsics.
    Kitti,
    /// 320x240 desk-scale orbit.
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    Folder,
    FolderDepth,
    Kitti,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track a sequence; writes trajectory.txt, diagnostics.csv and summary.json.
    Run(ConfigArgs),
    /// Absolute trajectory error of an estimate against a reference.
    Evaluate {
        estimate: PathBuf,
        reference: PathBuf,
        /// Input format; detected from the column count when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Skip the rigid alignment.
        #[arg(long)]
        no_align: bool,
        /// Also estimate a scale factor during alignment.
        #[arg(long)]
        scale: bool,
        /// Timestamp association window, seconds.
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
    },
    /// Per-stage timing statistics; writes bench.json and bench.csv.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Frames excluded from the statistics.
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Render a synthetic sequence instead of reading a dataset.
        #[arg(long, value_enum)]
        synthetic: Option<SyntheticKind>,
        /// Synthetic sequence length.
        #[arg(long, default_value_t = 30)]
        frames: usize,
    },
    /// Detect builtin features on every left image and save them as .lsft.
    Extract {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render a synthetic sequence with ground truth.
    Synth {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "folder")]
        layout: LayoutArg,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write exact projected features to features.lsft.
        #[arg(long)]
        features: bool,
        /// Scramble feature descriptors from this frame on.
        #[arg(long, requires = "features")]
        corrupt_from: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load(cli.threads)?;
            let summary = commands::run(&cfg)?;
            log::info!(
                "{} frames, mean {:.1} ms, output in {}",
                summary.frames_tracked,
                summary.mean_ms_total,
                cfg.output_dir.display()
            );
        }
        Command::Evaluate { estimate, reference, format, no_align, scale, max_dt } => {
            let format = format.map(|f| match f {
                FormatArg::Tum => TrajectoryFormat::Tum,
                FormatArg::Kitti => TrajectoryFormat::Kitti,
            });
            let opts = AteOptions { align: !no_align, with_scale: scale, max_dt };
            let report = commands::evaluate(&estimate, &reference, format, &opts)?;
            println!("{}", report.to_json());
        }
        Command::Bench { config, warmup, synthetic, frames } => {
            let cfg = config.load(cli.threads)?;
            let source = match synthetic {
                None => BenchSource::Dataset(cfg),
                Some(kind) => {
                    let base = match kind {
                        SyntheticKind::Kitti => OrbitConfig::kitti_sized(),
                        SyntheticKind::Desk => OrbitConfig::default(),
                    };
                    BenchSource::Synthetic { scene: OrbitConfig { frames, ..base }, config: cfg }
                }
            };
            let report = commands::bench(&source, warmup)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("plain struct serializes"));
        }
        Command::Extract { config, output } => {
            let cfg = config.load(cli.threads)?;
            let n = commands::extract(&cfg, &output)?;
            log::info!("wrote {n} frames to {}", output.display());
        }
        Command::Synth { dir, layout, frames, seed, features, corrupt_from } => {
            let layout = match layout {
                LayoutArg::Folder => SynthLayout::Folder,
                LayoutArg::FolderDepth => SynthLayout::FolderDepth,
                LayoutArg::Kitti => SynthLayout::Kitti,
            };
            let scene = OrbitConfig { frames, seed, ..OrbitConfig::default() };
            let data = commands::synth(&dir, &SynthOptions { scene, layout, features, corrupt_from })?;
            log::info!("wrote {frames} frames to {}", data.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
