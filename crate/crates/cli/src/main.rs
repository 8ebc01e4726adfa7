//! Command-line front end for building, sampling, fitting and evaluating
//! morphable models.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ss3dmm::kernels::BUILTIN_NAMES;
use ss3dmm::registration::RegMode;

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ss3dmm", version, about = "Single-scan Gaussian-process morphable models")]
struct Cli {
    /// JSON run configuration (fit and registration settings).
    #[arg(long, global = true, env = "SS3DMM_CONFIG")]
    config: Option<PathBuf>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log format on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log: LogFormat,

    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a model from a reference mesh and a kernel pairing.
    Build(BuildArgs),
    /// Draw random instances and render them under ambient light.
    Sample(SampleArgs),
    /// Fit a model to an image with annotated landmarks.
    FitImage(FitImageArgs),
    /// Register a model to a target mesh.
    FitMesh(FitMeshArgs),
    /// Rank gallery fits by latent cosine similarity to probe fits.
    Recognize(RecognizeArgs),
    /// Draw instances from a uniform mixture of models.
    KdeSample(KdeSampleArgs),
    /// Recognize a probe image against a gallery with a mixture of models.
    KdeRecognize(KdeRecognizeArgs),
    /// Specificity, generalization and compactness over a rank grid.
    Eval(EvalArgs),
    /// Print ranks, spectra and provenance of a model.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Reference mesh (PLY or OBJ).
    #[arg(required_unless_present = "synthetic_face", conflicts_with = "synthetic_face")]
    reference: Option<PathBuf>,
    /// Use the procedural symmetric head as reference.
    #[arg(long)]
    synthetic_face: bool,
    /// Mesh landmarks JSON for the reference.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BUILTIN_NAMES))]
    kernel: String,
    /// Hyperparameter JSON; the bundled defaults otherwise.
    #[arg(long)]
    hyperparams: Option<PathBuf>,
    /// Nyström inducing vertices, capped at the vertex count.
    #[arg(long, default_value_t = 500)]
    inducing: usize,
    #[arg(long, default_value_t = 50)]
    shape_rank: usize,
    #[arg(long, default_value_t = 50)]
    albedo_rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model name; the kernel name otherwise.
    #[arg(long)]
    name: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render width and height in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitImageArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Image landmarks JSON: `{"name": {"x": px, "y": px}}`.
    #[arg(long)]
    landmarks: PathBuf,
    /// Focal length in pixels; the larger image side otherwise.
    #[arg(long)]
    focal: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Rendering of the fit; `<out stem>.png` otherwise.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    ShapeOnly,
    ShapeAlbedo,
}

impl From<ModeArg> for RegMode {
    fn from(m: ModeArg) -> RegMode {
        match m {
            ModeArg::ShapeOnly => RegMode::ShapeOnly,
            ModeArg::ShapeAlbedo => RegMode::ShapeAlbedo,
        }
    }
}

#[derive(Args, Debug)]
struct FitMeshArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Mesh landmarks JSON for the target, used by the landmark metrics.
    #[arg(long)]
    target_landmarks: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecognizeArgs {
    /// Directory of gallery fit JSON files; ids are file stems.
    #[arg(long)]
    gallery: PathBuf,
    /// A probe fit JSON file or a directory of them.
    #[arg(long)]
    probe: PathBuf,
    /// Result JSON; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KdeSampleArgs {
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct KdeRecognizeArgs {
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    probe: PathBuf,
    /// Probe landmarks; `<probe stem>_landmarks.json` otherwise.
    #[arg(long)]
    probe_landmarks: Option<PathBuf>,
    /// Directory of gallery PNGs, each with `<stem>_landmarks.json`.
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    focal: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of meshes in the model's topology.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated ranks; `full` for the complete spectrum.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
    ranks: Vec<String>,
    #[arg(long, default_value_t = ss3dmm::eval::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset index (in file-name order) to leave out.
    #[arg(long)]
    exclude: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or malformed user input (exit 2).
    Usage(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(String),
}

impl From<ss3dmm::Error> for CliError {
    fn from(e: ss3dmm::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn init_logging(format: LogFormat, verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).parse_env("SS3DMM_LOG");
    if let LogFormat::Json = format {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Sample(a) => commands::sample(a),
        Command::FitImage(a) => commands::fit_image(a, cfg),
        Command::FitMesh(a) => commands::fit_mesh(a, cfg),
        Command::Recognize(a) => commands::recognize(a),
        Command::KdeSample(a) => commands::kde_sample(a),
        Command::KdeRecognize(a) => commands::kde_recognize(a, cfg),
        Command::Eval(a) => commands::eval(a),
        Command::Info(a) => commands::info(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log, cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
