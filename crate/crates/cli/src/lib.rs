//! The `datobs` command line: one subcommand per pipeline stage.

pub mod commands;
pub mod server;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "datobs", version, about = "Tifinagh sign OCR pipeline")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Force ordered reductions. Every reduction already runs in a fixed
    /// order, so outputs are identical with or without this flag.
    #[arg(long, global = true, default_value_t = false)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop annotated characters out of sign photographs into class folders.
    Extract(ExtractArgs),
    /// Split class folders into train/ and test/ trees per class.
    Split(SplitArgs),
    /// Class counts and frequencies of a class-folder dataset, as JSON.
    Stats(StatsArgs),
    /// Write a seeded synthetic corpus as class folders.
    Synth(SynthArgs),
    /// Train a model and write it with its per-epoch history.
    Train(TrainArgs),
    /// Evaluate a model on class folders and write the report JSON.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Transcribe an annotated sign photograph.
    Transcribe(TranscribeArgs),
    /// Serve the annotation API and editor over a corpus directory.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of photographs with `<image>.ann.json` sidecars (searched recursively).
    #[arg(long)]
    pub images: PathBuf,
    /// Output class-folder root.
    #[arg(long)]
    pub out: PathBuf,
    /// Extract even when an image no longer matches its annotation digest.
    #[arg(long, default_value_t = false)]
    pub allow_stale: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Class-folder dataset to split.
    #[arg(long)]
    pub data: PathBuf,
    /// Output root; receives train/ and test/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of most frequent classes in `top`/`topk_share`.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub rotation: f64,
    /// Gaussian pixel noise standard deviation, in [0, 1] intensity units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Maximum translation in pixels.
    #[arg(long, default_value_t = 0)]
    pub translate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Class folders. A directory holding train/ and test/ is used as is;
    /// otherwise it is split per class with --train-fraction and --seed.
    #[arg(long)]
    pub data: PathBuf,
    /// Separate test class folders; --data is then used whole for training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// vgg16, vgg19 or vgg_small.
    #[arg(long, default_value = "vgg_small")]
    pub preset: String,
    #[arg(long, default_value_t = 15)]
    pub batch: usize,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Seeds the split, the initial weights and the epoch shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value = "model.dtbs")]
    pub out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    pub history: PathBuf,
    /// Also write the final test-set report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// vgg16, vgg19, vgg_small, or linear (flatten + one dense layer).
    #[arg(long, default_value = "vgg_small")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random samples in the batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// f32 checks the engine's 32-bit gradients; f64 runs the same kernels in 64-bit.
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
    /// Maximum relative error (default 1e-2 for f32, 1e-6 for f64).
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TextFormat {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct TranscribeArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Defaults to the `<image>.ann.json` sidecar.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = TextFormat::Json)]
    pub format: TextFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Transcribe even when the image no longer matches the annotation digest.
    #[arg(long, default_value_t = false)]
    pub allow_stale: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Corpus directory of images and sidecars.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Built editor bundle to serve at `/`.
    #[arg(long)]
    pub ui_dist: Option<PathBuf>,
    /// Refuse annotation writes with 403.
    #[arg(long, default_value_t = false)]
    pub read_only: bool,
}

/// Run a parsed invocation.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()?;
    }
    match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Split(a) => commands::split(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a, cli.deterministic),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Transcribe(a) => commands::transcribe(&a),
        Command::Serve(a) => commands::serve(&a),
    }
}

/// Parse `argv` and run it, returning the process exit code: 0 on success,
/// 1 on a domain error, 2 on a usage error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["datobs"]), 2);
        assert_eq!(main_with_args(["datobs", "frobnicate"]), 2);
        assert_eq!(main_with_args(["datobs", "train"]), 2);
        assert_eq!(main_with_args(["datobs", "gradcheck", "--precision", "f16"]), 2);
    }

    #[test]
    fn seed_defaults_to_zero() {
        let cli = Cli::try_parse_from(["datobs", "train", "--data", "d"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.seed, 0);
        assert_eq!((a.batch, a.epochs, a.lr), (15, 12, 0.001));
    }
}
