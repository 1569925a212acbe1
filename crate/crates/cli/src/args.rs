use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dlsurface", version, about = "Loss-surface analysis of deep linear networks")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Input matrix X (d_x × m), text format
    #[arg(long = "x", global = true, value_name = "FILE")]
    pub x: Option<PathBuf>,
    /// Target matrix Y (d_y × m), text format
    #[arg(long = "y", global = true, value_name = "FILE")]
    pub y: Option<PathBuf>,
    /// Layer widths d_x,d_1,...,d_H,d_y
    #[arg(long, global = true, value_name = "WIDTHS")]
    pub shape: Option<String>,
    /// Weight stack directory (W1.txt ... plus manifest.json)
    #[arg(long, global = true, value_name = "DIR")]
    pub weights: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Refuse theory-backed analysis when the data hypotheses fail (default)
    #[arg(long, global = true, overrides_with = "permissive")]
    pub strict: bool,
    /// Run anyway and attach a warning block
    #[arg(long, global = true, overrides_with = "strict")]
    pub permissive: bool,
    #[arg(long, global = true, value_name = "TOL")]
    pub rank_tol: Option<f64>,
    #[arg(long, global = true, value_name = "TOL")]
    pub eig_tol: Option<f64>,
    #[arg(long, global = true, value_name = "TOL")]
    pub grad_tol: Option<f64>,
    #[arg(long, global = true, value_name = "H")]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Data hypotheses, spectrum of Σ and the optimal loss
    Analyze,
    /// Analytic gradient against central differences
    GradCheck,
    /// Assemble the full Hessian and its spectrum
    Hessian {
        /// Write the matrix here and a provenance sidecar to FILE.json
        #[arg(long, value_name = "FILE")]
        export: Option<PathBuf>,
    },
    /// Classify a point as minimum, strict or degenerate saddle
    Classify,
    /// Build a closed-form critical point
    Construct {
        #[command(subcommand)]
        kind: ConstructKind,
        /// Save the constructed stack to this directory
        #[arg(long, global = true, value_name = "DIR")]
        save: Option<PathBuf>,
    },
    /// Loss-preserving rank perturbation of one layer
    Perturb {
        #[arg(long, value_name = "K")]
        layer: usize,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, value_name = "DIR")]
        save: Option<PathBuf>,
    },
    /// Fixed-step gradient descent
    Train {
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        stop_grad: f64,
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        /// Standard deviation of the random initialization
        #[arg(long, default_value_t = 0.5)]
        init_scale: f64,
        #[arg(long, value_name = "DIR")]
        save: Option<PathBuf>,
    },
    /// Monte-Carlo mean of the Bernoulli-gated path model
    ReluMc {
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Output normalization, default 1/rho
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum ConstructKind {
    GlobalMin,
    BadSaddle {
        /// Top-layer matrix; defaults to zero (H = 2) or seeded random (H ≥ 3)
        #[arg(long, value_name = "FILE")]
        top: Option<PathBuf>,
    },
    Indefinite,
    IndexSet {
        /// Ascending 1-based eigenvector indices, e.g. 1,3
        #[arg(long, value_name = "LIST", value_delimiter = ',', num_args = 0..)]
        index_set: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::GradCheck => "grad-check",
            Command::Hessian { .. } => "hessian",
            Command::Classify => "classify",
            Command::Construct { .. } => "construct",
            Command::Perturb { .. } => "perturb",
            Command::Train { .. } => "train",
            Command::ReluMc { .. } => "relu-mc",
        }
    }
}

impl ConstructKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstructKind::GlobalMin => "global-min",
            ConstructKind::BadSaddle { .. } => "bad-saddle",
            ConstructKind::Indefinite => "indefinite",
            ConstructKind::IndexSet { .. } => "index-set",
        }
    }
}
