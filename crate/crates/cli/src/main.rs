use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Attention-based recurrent sequence generator: synthetic data, training,
/// decoding and alignment analysis.
#[derive(Parser, Debug)]
#[command(name = "arsg", version)]
struct Cli {
    /// Worker threads for per-utterance work (decoding, alignment, dev
    /// evaluation). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/dev/test splits of the synthetic task.
    SynthData(SynthArgs),
    /// Run the three-stage training schedule.
    Train(TrainArgs),
    /// Decode a split and report the symbol error rate.
    Decode(DecodeArgs),
    /// Forced alignment with per-utterance verdicts.
    Align(AlignArgs),
    /// Alignment and error rate on concatenated utterances.
    EvalLong(EvalLongArgs),
    /// Finite-difference gradient check of every attention mode.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_dev: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory written by synth-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the attention mode of the config.
    #[arg(long)]
    attention: Option<String>,
    /// Cap on updates across all stages.
    #[arg(long)]
    max_updates: Option<usize>,
    /// Continue from `<out>/latest.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Stop after this many updates without finishing (for testing resume).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct Sharpen {
    /// Inverse temperature for the attention softmax.
    #[arg(long, conflicts_with = "topk")]
    beta: Option<f64>,
    /// Keep only the k best-scoring frames.
    #[arg(long)]
    topk: Option<usize>,
    /// Score only frames within ±w of the previous alignment's median.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest (`.jsonl`) of the split to decode.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for hypotheses and the report.
    #[arg(long)]
    out: PathBuf,
    /// Config supplying beam defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed beam width (no widening unless --max-beam is larger).
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_beam: Option<usize>,
    /// Two-column symbol mapping applied before scoring.
    #[arg(long)]
    map: Option<PathBuf>,
    #[command(flatten)]
    sharpen: Sharpen,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    slack: Option<usize>,
    #[arg(long)]
    mass: Option<f64>,
    /// Write a CSV and PGM image of each alignment.
    #[arg(long)]
    export_heatmaps: bool,
    #[command(flatten)]
    sharpen: Sharpen,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Same,
    Mixed,
    Both,
}

#[derive(Args, Debug)]
struct EvalLongArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Raw test manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_concat: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long)]
    pause_frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_beam: Option<usize>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[command(flatten)]
    sharpen: Sharpen,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Frames in the random input.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Input feature width of the micro-model.
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Output vocabulary of the micro-model, eos included.
    #[arg(long, default_value_t = 4)]
    vocab: usize,
    /// Corrupt the analytic gradient of this parameter.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
