use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layerbuild::pixel::VolumeKind;
use layerbuild::solver::SolverParams;

#[derive(Debug, Parser)]
#[command(name = "layerbuild", version, about = "Decompose images and video into additive color layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose an image, frame directory or PPM stream into a .lbld file.
    Decompose(DecomposeArgs),
    /// Recombine layers with a new palette.
    Recolor(RecolorArgs),
    /// Convolve one layer and write a new .lbld file.
    Filter(FilterArgs),
    /// Print the contents of a .lbld file as JSON.
    Inspect(InspectArgs),
    /// Run the HTTP API used by the studio.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// Directories are sequences, .ppm/.pnm files are streams, anything else an image.
    Auto,
    Image,
    ImageSequence,
    RawVideo,
}

impl InputKind {
    pub fn resolve(self, path: &std::path::Path) -> VolumeKind {
        match self {
            InputKind::Auto => VolumeKind::detect(path),
            InputKind::Image => VolumeKind::Image,
            InputKind::ImageSequence => VolumeKind::ImageSequence,
            InputKind::RawVideo => VolumeKind::RawVideo,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    #[arg(long = "lambda-m", default_value_t = 1.0)]
    pub lambda_m: f64,
    #[arg(long = "lambda-r", default_value_t = 0.5)]
    pub lambda_r: f64,
    #[arg(long = "lambda-u", default_value_t = 0.1)]
    pub lambda_u: f64,
    #[arg(long = "lambda-e", default_value_t = 0.1)]
    pub lambda_e: f64,
    #[arg(long = "lambda-n", default_value_t = 1.0)]
    pub lambda_n: f64,
    #[arg(long, default_value_t = 4)]
    pub suppression_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub cg_tolerance: f64,
    /// Defaults to 10 x superpixels x layers.
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
}

impl SolverFlags {
    pub fn params(&self) -> SolverParams {
        SolverParams {
            lambda_m: self.lambda_m,
            lambda_r: self.lambda_r,
            lambda_u: self.lambda_u,
            lambda_e: self.lambda_e,
            lambda_n: self.lambda_n,
            suppression_iters: self.suppression_iters,
            cg_tolerance: self.cg_tolerance,
            cg_max_iters: self.cg_max_iters,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputKind::Auto)]
    pub kind: InputKind,
    /// Layers file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the JSON report here (it is always printed to stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Defaults to 2000 for stills and 4000 for video.
    #[arg(long)]
    pub superpixels: Option<usize>,
    /// Defaults to the palette size when --palette is given, else 5.
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Palette JSON `{"colors": [[r, g, b], ...]}` to use instead of extracting one.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Scribble JSON `{"strokes": [{"x", "y", "t", "layer", "value"}, ...]}`.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long, default_value_t = layerbuild::solver::DEFAULT_AUTO_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub no_auto_constraints: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Write the reconstruction with the extracted palette.
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
    /// Write the input with superpixel boundaries drawn in black.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RecolorArgs {
    #[arg(long)]
    pub layers: PathBuf,
    /// Palette JSON with one color per layer; repeated colors are allowed.
    #[arg(long)]
    pub palette: PathBuf,
    /// PNG for stills, a directory of numbered frames for video.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Emboss,
    MotionBlur,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub layers: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long, value_enum)]
    pub kernel: KernelKind,
    /// Gaussian standard deviation in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Motion blur length in pixels.
    #[arg(long)]
    pub length: Option<usize>,
    /// Motion blur direction in degrees, counterclockwise from +x.
    #[arg(long, default_value_t = 0.0)]
    pub angle: f64,
    /// Defaults to `<input stem>.filtered.lbld` next to the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the composed result with the stored palette.
    #[arg(long)]
    pub render: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub layers: PathBuf,
    /// Write every weight plane as grayscale PNGs into this directory.
    #[arg(long)]
    pub planes: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Decomposed layer sets kept in memory.
    #[arg(long, default_value_t = 8)]
    pub cache_size: usize,
}
