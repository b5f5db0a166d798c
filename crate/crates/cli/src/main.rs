//! Command-line entry point for reproducible runoff-model workflows. Every
//! command resolves to one declarative configuration (file keys overridden by
//! flags), derives a content hash from it, and stamps that hash plus the
//! master seed into every output file.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcpnet::checkpoint::SpecBlock;
use mcpnet::dataio::SynthConfig;
use mcpnet::pruning::PruneMode;
use mcpnet::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable supplying the default output directory.
pub const OUT_DIR_ENV: &str = "MCPNET_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "mcpnet",
    version,
    about = "Mass-conserving runoff networks: split, train, evaluate, prune, export"
)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Declarative experiment file (JSON); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for restarts and case evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every timestep train/test/select by flow-balanced pairing.
    Split {
        /// Input forcing/flow CSV (date,pp,pet,qq).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output mask CSV (date,label).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured model by multi-restart full-batch gradient descent.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Existing mask CSV; computed from the data when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Evaluate restarts in parallel (true/false).
        #[arg(long)]
        parallel: Option<bool>,
        /// Grow a shared layer around this trained single-node checkpoint.
        #[arg(long)]
        init_single_node: Option<PathBuf>,
        /// Copy this smaller trained checkpoint into matching slots.
        #[arg(long)]
        init_stagewise: Option<PathBuf>,
        /// Fixed noise fraction for --init-single-node (default: cycle).
        #[arg(long)]
        noise_fraction: Option<f64>,
    },
    /// Score a checkpoint: overall, per-subset, annual, and flow-group skill.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Mask CSV adding train/test/select scopes to the report.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rank every way of ablating k flow paths, without retraining.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of final-layer nodes to remove (1 <= k < width).
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::PathOnly)]
        mode: ModeArg,
        /// Rescale surviving output weights to sum to the parent total.
        #[arg(long)]
        renormalize: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sweep one node's state and export its output-gate response curve.
    ExportGates {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Layer of the node, 1-based.
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Node within the layer, 1-based.
        #[arg(long, default_value_t = 1)]
        node: usize,
        /// Upper end of the state grid in mm (lower end is 0).
        #[arg(long, default_value_t = 200.0)]
        x_max: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Value held in every other state of the layer.
        #[arg(long, default_value_t = 0.0)]
        context: f64,
        /// Evaporative demand held fixed during the sweep.
        #[arg(long, default_value_t = 0.0)]
        pet: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one water-year of per-node diagnostics and flow shares.
    ExportTimeseries {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Water year to export (named by its ending calendar year).
        #[arg(long)]
        wy: i32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the trainable-parameter count of a model architecture.
    CountParams {
        /// JSON file holding {"mcp": {...}} or {"lstm": {...}}.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Inline network type: di, ds, dir, dsr, mlb.
        #[arg(long)]
        ntype: Option<String>,
        /// Inline sharing mode: none, sal, sao, salo (default none).
        #[arg(long)]
        sharing: Option<String>,
        /// Inline layer widths, comma separated (for example "5" or "3,2").
        #[arg(long)]
        layers: Option<String>,
        /// Inline LSTM hidden widths, comma separated.
        #[arg(long)]
        lstm_hidden: Option<String>,
    },
    /// Generate a synthetic forcing/flow dataset from the builtin reservoir.
    Synth {
        #[arg(long)]
        years: Option<usize>,
        /// First generated water year (starts the preceding October 1).
        #[arg(long)]
        start_wy: Option<i32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    PathOnly,
    FullNode,
}

impl From<ModeArg> for PruneMode {
    fn from(m: ModeArg) -> PruneMode {
        match m {
            ModeArg::PathOnly => PruneMode::PathOnly,
            ModeArg::FullNode => PruneMode::FullNode,
        }
    }
}

/// One experiment in one file. Flags override these keys.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: Option<SpecBlock>,
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path} is invalid: {source}")]
    ConfigParse {
        path: String,
        source: serde_json::Error,
    },
    #[error("cannot write {path}: {source}")]
    OutputIo {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] mcpnet::dataio::DataError),
    #[error(transparent)]
    Metrics(#[from] mcpnet::metrics::MetricsError),
    #[error(transparent)]
    Sim(#[from] mcpnet::network::SimError),
    #[error(transparent)]
    Lstm(#[from] mcpnet::lstm::LstmError),
    #[error(transparent)]
    Train(#[from] mcpnet::trainer::TrainError),
    #[error(transparent)]
    Prune(#[from] mcpnet::pruning::PruneError),
    #[error(transparent)]
    Checkpoint(#[from] mcpnet::checkpoint::CheckpointError),
    #[error(transparent)]
    Export(#[from] mcpnet::network::ExportError),
}

fn load_run_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigIo {
        path: path.display().to_string(),
        source,
    })?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|source| CliError::ConfigParse {
        path: path.display().to_string(),
        source,
    })?;
    // Referenced inputs must resolve up front, before any work happens.
    for (key, referenced) in [("dataset", &config.dataset), ("split", &config.split)] {
        if let Some(p) = referenced {
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "config {key} path {} does not exist",
                    p.display()
                )));
            }
        }
    }
    Ok(config)
}

/// Resolved run context shared by every command.
pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
}

impl Ctx {
    pub fn data_path(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.or_else(|| self.config.dataset.clone())
            .ok_or_else(|| CliError::Usage("no dataset: pass --data or set config.dataset".into()))
    }

    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let dir = flag
            .or_else(|| self.config.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::OutputIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(dir)
    }

    /// Content hash over the command name and its semantic settings, not
    /// file paths, so content-identical reruns produce identical bytes.
    pub fn hash(&self, command: &str, settings: &impl Serialize) -> String {
        use sha2::{Digest, Sha256};
        let payload = serde_json::to_string(settings).expect("settings serialize");
        let digest = Sha256::digest(format!("{command}:{}:{}", self.seed, payload).as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Hash + seed stamp embedded in every output of a command.
    pub fn meta(&self, command: &str, settings: &impl Serialize) -> String {
        format!(
            "config_hash={} seed={}",
            self.hash(command, settings),
            self.seed
        )
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore the error when a pool already exists (tests share a process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let config = load_run_config(cli.config.as_ref())?;
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Ctx { config, seed };

    match cli.command {
        Command::Split { data, out } => commands::cmd_split(&ctx, data, out),
        Command::Train {
            data,
            split,
            out_dir,
            epochs,
            restarts,
            learning_rate,
            parallel,
            init_single_node,
            init_stagewise,
            noise_fraction,
        } => commands::cmd_train(
            &ctx,
            commands::TrainArgs {
                data,
                split,
                out_dir,
                epochs,
                restarts,
                learning_rate,
                parallel,
                init_single_node,
                init_stagewise,
                noise_fraction,
            },
        ),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out_dir,
        } => commands::cmd_evaluate(&ctx, checkpoint, data, split, out_dir),
        Command::Prune {
            checkpoint,
            data,
            k,
            mode,
            renormalize,
            out_dir,
        } => commands::cmd_prune(&ctx, checkpoint, data, k, mode.into(), renormalize, out_dir),
        Command::ExportGates {
            checkpoint,
            layer,
            node,
            x_max,
            points,
            context,
            pet,
            out,
        } => commands::cmd_export_gates(
            &ctx,
            commands::GateArgs {
                checkpoint,
                layer,
                node,
                x_max,
                points,
                context,
                pet,
                out,
            },
        ),
        Command::ExportTimeseries {
            checkpoint,
            data,
            wy,
            out,
        } => commands::cmd_export_timeseries(&ctx, checkpoint, data, wy, out),
        Command::CountParams {
            model_file,
            ntype,
            sharing,
            layers,
            lstm_hidden,
        } => commands::cmd_count_params(&ctx, model_file, ntype, sharing, layers, lstm_hidden),
        Command::Synth {
            years,
            start_wy,
            out,
        } => commands::cmd_synth(&ctx, years, start_wy, out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
