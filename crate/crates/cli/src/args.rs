use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmmdr::benchmark::Method;
use gmmdr::featsel::SelectionMode;
use gmmdr::mixture::{FitConfig, InitStrategy, ModelName};
use gmmdr::simgen::{Augmentation, BaseModel};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "gmmdr",
    version,
    about = "Gaussian mixture clustering with dimension reduction and direction selection"
)]
pub struct Cli {
    /// Only report warnings and errors on standard error.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit mixtures over a grid of models and component counts and pick the best BIC.
    Fit(FitCmd),
    /// Estimate the reduced directions of a fitted mixture.
    Reduce(ReduceCmd),
    /// Run the full fit / reduce / select loop.
    Select(SelectCmd),
    /// Generate a simulated dataset with known classes.
    Simulate(SimulateCmd),
    /// Score a saved model against the class labels of a dataset.
    Evaluate(EvaluateCmd),
    /// Replicated comparison of GMM, PCA+GMM and GMMDR on simulated data.
    Benchmark(BenchmarkCmd),
}

fn parse_model(s: &str) -> Result<ModelName, String> {
    ModelName::from_str(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s).map_err(|e| e.to_string())
}

fn parse_base(s: &str) -> Result<BaseModel, String> {
    BaseModel::from_str(s).map_err(|e| e.to_string())
}

fn parse_augmentation(s: &str) -> Result<Augmentation, String> {
    Augmentation::from_str(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Kmeans,
    Hierarchical,
    Random,
}

impl From<InitArg> for InitStrategy {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Kmeans => InitStrategy::KMeans,
            InitArg::Hierarchical => InitStrategy::Hierarchical,
            InitArg::Random => InitStrategy::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    /// Greedy search on BIC differences.
    Bic,
    /// Leading directions with the smallest classification entropy.
    Entropy,
}

impl From<ModeArg> for SelectionMode {
    fn from(a: ModeArg) -> Self {
        match a {
            ModeArg::Bic => SelectionMode::Bic,
            ModeArg::Entropy => SelectionMode::Entropy,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(short, long)]
    pub input: PathBuf,

    /// Column holding class labels; it is excluded from the data.
    #[arg(long)]
    pub label_column: Option<String>,

    #[arg(long, default_value_t = ',')]
    pub delimiter: char,

    /// Scale every column to zero mean and unit sample standard deviation.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// EM starts per (model, G); the best log-likelihood is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,

    #[arg(long, value_enum, default_value_t = InitArg::Kmeans)]
    pub init: InitArg,

    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,

    /// Relative log-likelihood change that stops EM.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,

    /// Largest number of components tried.
    #[arg(long, default_value_t = 9)]
    pub max_g: usize,

    /// Comma-separated covariance models (default: all that fit the data).
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    pub models: Vec<ModelName>,

    /// Use exactly this number of components.
    #[arg(long)]
    pub g: Option<usize>,
}

impl FitArgs {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iter: self.max_iter,
            rel_tol: self.tol,
            init: self.init.into(),
            restarts: self.restarts,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitCmd {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub fit: FitArgs,

    /// Write the best model to this archive.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    /// Directory for basis, eigenvalue, coefficient, projection and density exports.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Points per axis of the density grid over the first two directions.
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReduceCmd {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub fit: FitArgs,

    /// Reduce this saved fit instead of fitting afresh.
    #[arg(short, long)]
    pub model: Option<PathBuf>,

    #[command(flatten)]
    pub export: ExportArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectCmd {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub fit: FitArgs,

    #[arg(long, value_enum, default_value_t = ModeArg::Bic)]
    pub mode: ModeArg,

    /// Cap on fit / reduce / select rounds.
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,

    /// Write the final model, basis and trace to this archive.
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    #[command(flatten)]
    pub export: ExportArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScenarioArgs {
    /// Base scenario: chang15, synthetic_vvv, model1_eee, model2_vev or model3_vvv.
    #[arg(long, value_parser = parse_base)]
    pub model: BaseModel,

    /// Added variables: none, noise or noise+redundant.
    #[arg(long, value_parser = parse_augmentation, default_value = "none")]
    pub scenario: Augmentation,

    /// Comma-separated mixing proportions of the three classes.
    #[arg(long, value_delimiter = ',')]
    pub priors: Vec<f64>,

    /// Replicate the clustering, redundant and noise blocks this many times.
    #[arg(long, default_value_t = 1)]
    pub highdim_k: usize,
}

impl ScenarioArgs {
    pub fn priors(&self) -> Option<Vec<f64>> {
        (!self.priors.is_empty()).then(|| self.priors.clone())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    /// Total sample size.
    #[arg(long)]
    pub n: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output CSV; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub data: DataArgs,

    /// Saved model archive.
    #[arg(short, long)]
    pub model: PathBuf,

    /// Per-observation uncertainty and cluster CSV.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkCmd {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    /// Comma-separated total sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,

    #[arg(long, default_value_t = 10)]
    pub reps: usize,

    /// Replicate r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Comma-separated methods: gmm, pca+gmm, gmmdr.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,

    #[arg(long, default_value_t = 15)]
    pub max_g: usize,

    /// Comma-separated covariance models (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    pub models: Vec<ModelName>,

    #[arg(long, default_value_t = 1)]
    pub restarts: usize,

    #[arg(long, value_enum, default_value_t = InitArg::Hierarchical)]
    pub init: InitArg,

    #[arg(long, value_enum, default_value_t = ModeArg::Bic)]
    pub mode: ModeArg,

    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    /// Summary CSV (method, n, mean and standard error); standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    /// Per-replicate CSV.
    #[arg(long)]
    pub replicates: Option<PathBuf>,
}
