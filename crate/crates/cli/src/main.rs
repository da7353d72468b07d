mod commands;
mod inputs;
mod outdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Diffusion-MRI microstructure fitting: IVIM and NODDI with classic solvers
/// and an unrolled sparse-coding network.
#[derive(Parser, Debug)]
#[command(name = "metsc", version)]
pub struct Cli {
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a phantom: signal, truth maps, mask and scheme.
    Simulate(SimulateArgs),
    /// Fit parameter maps with a classic method or trained weights.
    Fit(FitArgs),
    /// Train a network on signal volumes with truth maps.
    Train(TrainArgs),
    /// Compare parameter maps with truth maps.
    Evaluate(EvaluateArgs),
    /// Run a one-factor ablation on simulated data.
    Ablate(AblateArgs),
    /// Zero-fraction statistics of a trained network's sparse codes.
    AuditSparsity(AuditArgs),
}

/// Which measurements of the acquisition to use.
#[derive(Args, Debug, Clone, Default)]
pub struct SelectArgs {
    /// b-values to keep, comma-separated, or a named combination
    /// (comb1..comb5, b3, b7).
    #[arg(long, conflicts_with = "per_shell")]
    pub bvals: Option<String>,
    /// Keep every unweighted measurement and this many directions per shell.
    #[arg(long)]
    pub per_shell: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub kind: String,
    /// HxWxS (or HxW for one slice).
    #[arg(long, default_value = "32x32x4")]
    pub dims: String,
    /// Signal-to-noise ratio of the unweighted signal; "inf" for noiseless.
    #[arg(long, default_value = "30")]
    pub snr: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Acquisition stem (`.bval`/`.bvec`); defaults to the ten-b-value list for
    /// IVIM and two 30-direction shells for NODDI.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Number of Voronoi regions.
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub method: String,
    /// Signal volume stem.
    #[arg(long)]
    pub volume: PathBuf,
    /// Acquisition stem; defaults to the one named in the volume sidecar.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Mask volume stem; defaults to the one named in the volume sidecar.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Model kind; defaults to the volume's provenance or the weights.
    #[arg(long)]
    pub kind: Option<String>,
    /// Dictionary stem for iht/nnls; built from defaults when absent.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// IVIM atoms per block (default 300), or NODDI grid points per axis
    /// (default 12), when building a dictionary.
    #[arg(long)]
    pub dict_size: Option<usize>,
    /// Checkpoint stem for metsc.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Noise level assumed by the Bayesian estimator.
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
    /// IHT threshold.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Accept weights trained on another scheme or dictionary.
    #[arg(long)]
    pub force_weights: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub kind: String,
    /// Signal volume stems or phantom directions, one per subject.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Truth stems in the order of --data; defaults to `truth` beside each volume.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub truth: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Warm-up epochs before the cosine decay.
    #[arg(long, default_value_t = 200)]
    pub warmup: usize,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Dictionary stem; built from defaults when absent.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// IVIM atoms per block, or NODDI grid points per axis, when building.
    #[arg(long)]
    pub dict_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Network shape; unset flags keep the defaults (or the values of --net-config).
#[derive(Args, Debug, Clone, Default)]
pub struct NetArgs {
    /// JSON model configuration to start from.
    #[arg(long)]
    pub net_config: Option<PathBuf>,
    /// Small network for quick runs (width 16, one block, two heads).
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Patches per side fed jointly to the encoder.
    #[arg(long)]
    pub window: Option<usize>,
    /// transformer or conv.
    #[arg(long)]
    pub encoder: Option<String>,
    /// unrolled or model_free.
    #[arg(long)]
    pub decoder: Option<String>,
    /// Unrolled iterations.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    /// Separate W and S per unrolled layer.
    #[arg(long)]
    pub unshared: bool,
    #[arg(long)]
    pub positional: bool,
    /// Drop the raw-signal skip into the decoder.
    #[arg(long)]
    pub no_skip: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Parameter map stems, one per subject.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub pred: Vec<PathBuf>,
    /// Truth stems in the same order.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub truth: Vec<PathBuf>,
    /// Mask stem applied to every subject; defaults to each prediction's mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Second set of maps for a paired t-test across subjects.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub compare: Vec<PathBuf>,
    #[arg(long, default_value = "evaluation")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub axis: String,
    /// `lo:hi:step` or a comma-separated list; defaults per axis.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenario kind; the bootstrap axis defaults to NODDI, the rest to IVIM.
    #[arg(long)]
    pub kind: Option<String>,
    /// Per-subject HxWxS.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub train_subjects: Option<usize>,
    #[arg(long)]
    pub test_subjects: Option<usize>,
    #[arg(long, default_value = "30")]
    pub snr: String,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Classic methods evaluated in every cell, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<String>,
    /// Directions per shell of the bootstrap subsets.
    #[arg(long, default_value_t = 30)]
    pub per_shell: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Signal volume stems.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = commands::Log { quiet: cli.quiet };
    let r = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &log),
        Command::Fit(a) => commands::fit(a, &log),
        Command::Train(a) => commands::train(a, &log),
        Command::Evaluate(a) => commands::evaluate(a, &log),
        Command::Ablate(a) => commands::ablate(a, &log),
        Command::AuditSparsity(a) => commands::audit_sparsity(a, &log),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
