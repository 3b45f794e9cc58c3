use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ndpoly", version, about = "Normalized-difference polynomial spectral index discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the feature-count sweep and write the model and reports.
    Discover(DiscoverArgs),
    /// Print the model as a single arithmetic expression over band variables.
    ExportExpression(ExportArgs),
    /// Score a model on labeled samples.
    Evaluate(EvaluateArgs),
    /// Write pixel feature vectors or a model's dense coefficient vector.
    Embed(EmbedArgs),
    /// Generate a synthetic scene with a planted product index.
    Synth(SynthArgs),
    /// Expand labeled samples into the full feature matrix.
    Expand(ExpandArgs),
}

/// Sample-reading options shared by the commands that read sample files.
#[derive(Debug, Args, Clone, Default)]
pub struct ReadArgs {
    /// Label value of the positive class.
    #[arg(long, value_name = "LABEL")]
    pub label_positive: Option<String>,
    /// Label value of the negative class.
    #[arg(long, value_name = "LABEL")]
    pub label_negative: Option<String>,
    /// Handling of negative reflectance: reject or clamp.
    #[arg(long, value_name = "POLICY")]
    pub negative_policy: Option<String>,
    /// Raw values are divided by this factor before validation.
    #[arg(long, value_name = "FACTOR")]
    pub scale_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    /// Discovery configuration document (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory for the model and reports.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Sample file, overriding the one named in the configuration.
    #[arg(long, value_name = "PATH")]
    pub samples: Option<PathBuf>,
    /// Column schema document (JSON), overriding the configured schema.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Polynomial degree (1 or 2).
    #[arg(long)]
    pub degree: Option<u8>,
    /// Stabilizer added to normalized-difference denominators.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Diminishing-returns threshold for choosing k*.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Largest number of features to sweep.
    #[arg(long, value_name = "K")]
    pub k_max: Option<usize>,
    /// Comma-separated selection methods: select_k_best, rfe, l1_svm.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Split strategy: random (holdout only), year, spatial or spatio-temporal
    /// (holdout plus cross-validation).
    #[arg(long, value_name = "STRATEGY")]
    pub split: Option<String>,
    #[command(flatten)]
    pub read: ReadArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Model document.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Expression dialect: earth-engine or generic-infix.
    #[arg(long, default_value = "generic-infix")]
    pub dialect: String,
    /// Comma-separated band variable names (default B1..Bn).
    #[arg(long, value_name = "NAMES", value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model document.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Labeled sample file.
    #[arg(long, value_name = "PATH")]
    pub samples: PathBuf,
    /// Column schema document (JSON); defaults to bands b1..bn and a label column.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
    /// Path of the machine-readable report.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub read: ReadArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedMode {
    /// Feature vector of every sample row.
    Pixel,
    /// Dense coefficient vector of a model, intercept first.
    Class,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(value_enum)]
    pub mode: EmbedMode,
    /// Output file (delimited text).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Model document (class mode).
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Sample file (pixel mode); only band columns are read.
    #[arg(long, value_name = "PATH")]
    pub samples: Option<PathBuf>,
    /// Comma-separated band column names (pixel mode, default b1..b10).
    #[arg(long, value_name = "NAMES", value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    #[arg(long, default_value_t = 2)]
    pub degree: u8,
    #[arg(long, default_value_t = ndpoly::spectral::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Handling of negative reflectance: reject or clamp.
    #[arg(long, value_name = "POLICY")]
    pub negative_policy: Option<String>,
    /// Raw values are divided by this factor before validation.
    #[arg(long, value_name = "FACTOR")]
    pub scale_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output sample file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write the matching column schema document here.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub band_count: Option<usize>,
    /// Minimum gap between the class means of the planted product.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Standard deviation of the additive reflectance noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_name = "LABEL")]
    pub label_positive: Option<String>,
    #[arg(long, value_name = "LABEL")]
    pub label_negative: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Labeled sample file.
    #[arg(long, value_name = "PATH")]
    pub samples: PathBuf,
    /// Column schema document (JSON); defaults to b1..b10 and a label column.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
    /// Output file (delimited text, one column per feature plus the label).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub degree: u8,
    #[arg(long, default_value_t = ndpoly::spectral::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[command(flatten)]
    pub read: ReadArgs,
}
