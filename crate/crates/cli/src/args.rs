use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pscape", version, about = "Scattering autoencoder and stability checks for protein conformation trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic trajectory.
    Gen(GenArgs),
    /// Validate a trajectory file and summarize it.
    Ingest(IngestArgs),
    /// Per-frame scattering coefficients with the dyadic bank.
    Scatter(ScatterArgs),
    /// Train a model; writes checkpoint, loss curve and split.
    Train(TrainArgs),
    /// Latent vector of every frame.
    Embed(EmbedArgs),
    /// Structure targets decoded from latent vectors.
    Decode(DecodeArgs),
    /// Decoded structures along a latent segment.
    Interpolate(InterpolateArgs),
    /// Withheld-window metrics and attention readout.
    Metrics(MetricsArgs),
    /// Numerical checks of the stability inequalities.
    Verify(VerifyArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Gen(_) => "gen",
            Cmd::Ingest(_) => "ingest",
            Cmd::Scatter(_) => "scatter",
            Cmd::Train(_) => "train",
            Cmd::Embed(_) => "embed",
            Cmd::Decode(_) => "decode",
            Cmd::Interpolate(_) => "interpolate",
            Cmd::Metrics(_) => "metrics",
            Cmd::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("kind").required(true).args(["hinge", "two_state"])))]
pub struct GenArgs {
    /// Two-arm hinge with a sinusoidal opening angle.
    #[arg(long)]
    pub hinge: bool,
    /// Markov switching between an open and a closed hinge.
    #[arg(long)]
    pub two_state: bool,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    /// Beads per arm (hinge).
    #[arg(long, default_value_t = 5)]
    pub n_per_arm: usize,
    /// Residue count (two-state; even).
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0.4)]
    pub theta_min: f64,
    #[arg(long, default_value_t = 1.4)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.05)]
    pub switch_prob: f64,
    /// Also write the generator's state labels (two-state) as CSV.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub j: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NodeEmbeddingArg {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    /// Randomly placed withheld windows.
    Windows,
    /// Train on a prefix, test on the remainder.
    Prefix,
    /// No withheld frames.
    None,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub j: usize,
    #[arg(long, default_value_t = 16)]
    pub t_max: usize,
    /// Fixed dyadic scales instead of learned scale selection.
    #[arg(long)]
    pub fixed_scales: bool,
    #[arg(long, default_value_t = 32)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub pe_dim: usize,
    #[arg(long, value_enum, default_value_t = NodeEmbeddingArg::Auto)]
    pub node_embedding: NodeEmbeddingArg,
    /// Add a head regressing centred coordinates.
    #[arg(long)]
    pub coord_head: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Weight of the one-hot reconstruction term (node-embedding mode).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Structure weight 1-alpha+beta instead of 1-alpha-beta.
    #[arg(long)]
    pub paper_literal_loss: bool,
    #[arg(long, value_enum, default_value_t = SplitKind::Windows)]
    pub split: SplitKind,
    #[arg(long, default_value_t = 20)]
    pub windows: usize,
    #[arg(long, default_value_t = 5)]
    pub window_len: usize,
    /// Training frames for the prefix split.
    #[arg(long)]
    pub train_frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the latents projected onto their top two principal axes.
    #[arg(long)]
    pub pca_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Latent CSV as written by `embed`.
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("ends").required(true).args(["from", "centroids"])))]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    /// Start at this latent row.
    #[arg(long, requires = "to")]
    pub from: Option<usize>,
    /// End at this latent row.
    #[arg(long, requires = "from")]
    pub to: Option<usize>,
    /// Interpolate between the two k-means centroids of the latents.
    #[arg(long)]
    pub centroids: bool,
    #[arg(long, default_value_t = 11)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split CSV as written by `train`; without it every frame is scored.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub latent_k: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("checks").required(true).multiple(true).args(["all", "frame", "iterated", "scattering", "wavelet", "perm"])))]
pub struct VerifyArgs {
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub frame: bool,
    #[arg(long)]
    pub iterated: bool,
    #[arg(long)]
    pub scattering: bool,
    #[arg(long)]
    pub wavelet: bool,
    #[arg(long)]
    pub perm: bool,
    /// Fixed vertex count (overrides --n-min/--n-max).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub n_min: usize,
    #[arg(long, default_value_t = 30)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0.15)]
    pub edge_prob: f64,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    #[arg(long, default_value_t = 2)]
    pub flips: usize,
    /// Random signals per pair and check.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 3)]
    pub j: usize,
    /// Scale counts compared for the J-independence of Ĉ.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub j_values: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
