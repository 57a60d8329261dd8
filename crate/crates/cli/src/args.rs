use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gauss_digits::boundary::{BoundaryParams, CannyParams, EdgeMode};
use gauss_digits::dataset::{GenerationParams, DEFAULT_TEST_PER_CLASS, DEFAULT_TRAIN_PER_CLASS, DOWNSAMPLE_RULE};
use gauss_digits::preprocessing::{BinarizeRule, CropMode, Polarity, PreprocessParams};

pub const SOURCE_DIR_ENV: &str = "GAUSS_DIGITS_SOURCE_DIR";

/// Synthesize MNIST-like digit images whose pixel values follow N(0, variance).
#[derive(Debug, Parser)]
#[command(name = "gauss-digits", version, propagate_version = true)]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset from source digit images and write IDX files plus a manifest.
    Generate(GenerateArgs),
    /// Audit and test a generated dataset; exits 3 if any check fails.
    Verify(VerifyArgs),
    /// Write PNG previews and histogram CSVs for selected images.
    Preview(PreviewArgs),
    /// Write the intermediate masks and the four region masks for one source image.
    Masks(MasksArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Root of the by-class source tree (folders 30..39).
    #[arg(long, env = SOURCE_DIR_ENV, value_name = "DIR")]
    pub source_dir: Option<PathBuf>,

    /// File of "<path> <label>" lines, paths relative to --source-dir.
    #[arg(long, value_name = "FILE", requires = "source_dir")]
    pub source_list: Option<PathBuf>,

    /// Use built-in procedurally drawn digits instead of a source tree.
    #[arg(long, conflicts_with_all = ["source_dir", "source_list"])]
    pub procedural: bool,

    /// Seed for the procedural digits.
    #[arg(long, default_value_t = 0, value_name = "U64")]
    pub procedural_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Dark,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CropArg {
    Center,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EdgeModeArg {
    Canny,
    Morphology,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pixel variance of the synthetic images.
    #[arg(long, default_value_t = 1024.0)]
    pub variance: f64,

    /// Binarization rule: otsu or fixed:<0-255>.
    #[arg(long, default_value = "otsu", value_name = "RULE")]
    pub binarize: BinarizeRule,

    /// Which side of the threshold is ink.
    #[arg(long, value_enum, default_value_t = PolarityArg::Dark)]
    pub polarity: PolarityArg,

    /// Anchor of the 64x64 crop.
    #[arg(long, value_enum, default_value_t = CropArg::Center)]
    pub crop: CropArg,

    /// How the boundary regions are found.
    #[arg(long, value_enum, default_value_t = EdgeModeArg::Canny)]
    pub edge_mode: EdgeModeArg,

    /// Gaussian blur sigma for Canny.
    #[arg(long, default_value_t = 1.0)]
    pub canny_sigma: f64,

    /// Canny low threshold, relative to the largest gradient.
    #[arg(long, default_value_t = 0.1)]
    pub canny_low: f64,

    /// Canny high threshold, relative to the largest gradient.
    #[arg(long, default_value_t = 0.3)]
    pub canny_high: f64,
}

impl PipelineArgs {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            variance: self.variance,
            preprocess: PreprocessParams {
                binarize: self.binarize,
                polarity: match self.polarity {
                    PolarityArg::Dark => Polarity::InkIsDark,
                    PolarityArg::Bright => Polarity::InkIsBright,
                },
                crop: match self.crop {
                    CropArg::Center => CropMode::GeometricCenter,
                    CropArg::Centroid => CropMode::ForegroundCentroid,
                },
            },
            downsample: DOWNSAMPLE_RULE.to_string(),
            boundary: BoundaryParams {
                edge_mode: match self.edge_mode {
                    EdgeModeArg::Canny => EdgeMode::CannyGuided,
                    EdgeModeArg::Morphology => EdgeMode::Morphological,
                },
                canny: CannyParams {
                    blur_sigma: self.canny_sigma,
                    low_threshold: self.canny_low,
                    high_threshold: self.canny_high,
                },
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: SourceArgs,

    /// Output directory for the IDX files and manifest.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    /// Global seed; every image's stream derives from it.
    #[arg(long, default_value_t = 0, value_name = "U64")]
    pub seed: u64,

    /// Training images per class.
    #[arg(long, default_value_t = DEFAULT_TRAIN_PER_CLASS)]
    pub train_per_class: usize,

    /// Test images per class.
    #[arg(long, default_value_t = DEFAULT_TEST_PER_CLASS)]
    pub test_per_class: usize,

    /// Comma-separated digit classes.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub classes: Vec<u8>,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,

    /// Significance level of every test.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,

    /// Number of random position pairs for the stationarity test.
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,

    /// Seed for choosing the position pairs.
    #[arg(long, default_value_t = 0, value_name = "U64")]
    pub pair_seed: u64,

    /// Test every pair of positions instead of a random sample (slow).
    #[arg(long)]
    pub all_pairs: bool,

    /// Skip the stationarity test.
    #[arg(long)]
    pub skip_stationarity: bool,

    /// Minimum fraction of images passing the per-image KS test. Small
    /// batches may miss it by what chance alone explains at p < 0.001.
    #[arg(long, default_value_t = 0.98)]
    pub min_image_pass: f64,

    /// Minimum fraction of position pairs passing the stationarity test,
    /// with the same allowance for chance.
    #[arg(long, default_value_t = 0.95)]
    pub min_pair_pass: f64,

    /// Upper bound on chi-square bins for the pooled test.
    #[arg(long, default_value_t = 100)]
    pub max_bins: usize,

    /// Where to write the JSON report (a CSV table is written next to it).
    /// Defaults to <DATASET>/verification.json.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,

    /// Comma-separated record indices.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub indices: Vec<usize>,

    /// Histogram bin width.
    #[arg(long, default_value_t = 8.0)]
    pub bin_width: f64,

    /// Where the PNGs and CSVs go.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    /// Source image file.
    #[arg(long, value_name = "FILE", required_unless_present = "procedural_class")]
    pub source: Option<PathBuf>,

    /// Draw a procedural digit of this class instead of reading a file.
    #[arg(long, value_name = "DIGIT", conflicts_with = "source")]
    pub procedural_class: Option<u8>,

    /// Index of the procedural digit within its class.
    #[arg(long, default_value_t = 0)]
    pub procedural_index: usize,

    /// Seed for the procedural digits.
    #[arg(long, default_value_t = 0, value_name = "U64")]
    pub procedural_seed: u64,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    /// Also synthesize one image from these masks with this seed.
    #[arg(long, value_name = "U64")]
    pub synth_seed: Option<u64>,

    /// Where the mask PNGs go.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}
