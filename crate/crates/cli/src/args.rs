use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rda", version, about = "Classical and robust discriminant analysis with diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the clean and contaminated two-class synthetic datasets.
    Simulate(SimulateArgs),
    /// Fit a discriminant model and save it as JSON.
    Fit(FitArgs),
    /// Classify the rows of a CSV file with a saved model.
    Predict(PredictArgs),
    /// Per-case diagnostics, confusion matrix, and accuracies.
    Diagnose(DiagnoseArgs),
    /// Render plots as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory receiving clean.csv, contaminated.csv, and provenance.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// TOML file with a [simulate] table; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    /// Class-1 cases given the class-2 label.
    #[arg(long)]
    pub swap1: Option<usize>,
    #[arg(long)]
    pub swap2: Option<usize>,
    /// Class-1 cases replaced by outlier-cluster draws.
    #[arg(long)]
    pub out1: Option<usize>,
    #[arg(long)]
    pub out2: Option<usize>,
    /// Name of the label column in the written files.
    #[arg(long, default_value = "class")]
    pub label_column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Quadratic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimationArg {
    Robust,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Fastmcd,
    Exact,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV: numeric feature columns plus a label column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "class")]
    pub label_column: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// TOML file with a [fit] table; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    pub estimation: Option<EstimationArg>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    /// MCD coverage fraction in [0.5, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Random starts for FastMCD.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chi-squared probability behind the outlier cutoff.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input CSV; the label column is optional here.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "class")]
    pub label_column: String,
    /// Output CSV with one row per case.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutlierRuleArg {
    Distance,
    Farness,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Per-case diagnostics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the extended confusion matrix as CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Rule routing cases into the outlier column.
    #[arg(long, value_enum, default_value = "distance")]
    pub outlier_rule: OutlierRuleArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKindArg {
    Scoreplot,
    Mosaic,
    Silhouette,
    Qrp,
    Classmap,
    Qq,
    Scatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    Horizontal,
    Vertical,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Plot types; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub kind: Vec<PlotKindArg>,
    /// Classes for per-class plots (class map, per-class QRP, Q-Q); default all.
    #[arg(long = "class", value_delimiter = ',')]
    pub classes: Vec<String>,
    /// QRP horizontal axis: `rd-predicted`, `rd-given`, `farness`, or a feature column name.
    #[arg(long, default_value = "rd-predicted")]
    pub feature: String,
    /// Draw one QRP over all classes instead of one per class.
    #[arg(long)]
    pub combined: bool,
    #[arg(long, value_enum, default_value = "horizontal")]
    pub orientation: OrientationArg,
    /// CSV with a `provenance` column; mislabeled cases get diamond markers in scatter plots.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    /// Nodes per axis for the scatter-plot decision boundary.
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write the plot data as CSV next to each SVG.
    #[arg(long)]
    pub csv: bool,
}
