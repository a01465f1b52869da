use clap::{Parser, Subcommand};
use promptseg::evalkit::{run_benchmark, BenchModel, BenchmarkConfig, NetworkModel, OracleModel};
use promptseg::promptsim::{GuidanceConfig, PromptType};
use promptseg::segnet::{load_weights, train, NetworkConfig, TrainConfig};
use promptseg::synthgen::{generate_dataset, load_dataset, PhantomConfig, Preset, Split};
use promptseg_server::{AppState, ServerConfig, ENDPOINTS};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "promptseg", version, about = "Promptable 3D tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Synth {
        #[arg(long, env = "PROMPTSEG_OUT")]
        out: PathBuf,
        #[arg(long, env = "PROMPTSEG_N_TRAIN", default_value_t = 200)]
        n_train: usize,
        #[arg(long, env = "PROMPTSEG_N_VAL", default_value_t = 50)]
        n_val: usize,
        #[arg(long, env = "PROMPTSEG_SIZE", default_value_t = 64)]
        size: usize,
        #[arg(long, env = "PROMPTSEG_PRESET", default_value = "easy")]
        preset: Preset,
        #[arg(long, env = "PROMPTSEG_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train a network on a dataset directory.
    Train {
        #[arg(long, env = "PROMPTSEG_DATA")]
        data: PathBuf,
        /// JSON with optional "network", "train" and "guidance" sections.
        #[arg(long, env = "PROMPTSEG_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "PROMPTSEG_OUT")]
        out: PathBuf,
        /// Start from these weights; the network config must match.
        #[arg(long, env = "PROMPTSEG_RESUME")]
        resume: Option<PathBuf>,
        /// Where to write the per-epoch history [default: OUT with .history.json]
        #[arg(long, env = "PROMPTSEG_HISTORY")]
        history: Option<PathBuf>,
    },
    /// Run the simulated-interaction benchmark on the validation split.
    Eval {
        #[arg(long, env = "PROMPTSEG_DATA")]
        data: PathBuf,
        #[arg(long, env = "PROMPTSEG_WEIGHTS", required_unless_present = "oracle")]
        weights: Option<PathBuf>,
        /// Use the ground-truth oracle instead of a network.
        #[arg(long, conflicts_with = "weights")]
        oracle: bool,
        #[arg(long, env = "PROMPTSEG_PROMPT", default_value = "point")]
        prompt: PromptType,
        #[arg(long, env = "PROMPTSEG_ROUNDS", default_value_t = 1)]
        rounds: usize,
        #[arg(long, env = "PROMPTSEG_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "PROMPTSEG_REPORT")]
        report: Option<PathBuf>,
        /// Evaluate every case instead of only the validation split.
        #[arg(long)]
        all: bool,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long, env = "PROMPTSEG_WEIGHTS")]
        weights: PathBuf,
        #[arg(long, env = "PROMPTSEG_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "PROMPTSEG_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PROMPTSEG_CAPACITY", default_value_t = 16)]
        capacity: usize,
        #[arg(long, env = "PROMPTSEG_UI_DIR")]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Deserialize, Default)]
#[serde(untagged)]
enum NetworkChoice {
    #[default]
    Toy,
    Preset(String),
    Full(NetworkConfig),
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    network: NetworkChoice,
    train: Option<TrainConfig>,
    guidance: GuidanceConfig,
}

type Failure = Box<dyn std::error::Error>;

fn read_run_config(path: Option<&Path>) -> Result<(NetworkConfig, TrainConfig, GuidanceConfig), Failure> {
    let rc: RunConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?)
            .map_err(|e| format!("{}: {e}", p.display()))?,
        None => RunConfig::default(),
    };
    let layout = rc.guidance.layout;
    let network = match rc.network {
        NetworkChoice::Toy => NetworkConfig::toy(layout),
        NetworkChoice::Preset(name) => match name.as_str() {
            "toy" => NetworkConfig::toy(layout),
            "small" => NetworkConfig::small(layout),
            "large" => NetworkConfig::large(layout),
            other => return Err(format!("unknown network preset {other:?} (toy, small, large)").into()),
        },
        NetworkChoice::Full(cfg) => cfg,
    };
    Ok((network, rc.train.unwrap_or_else(TrainConfig::toy), rc.guidance))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth { out, n_train, n_val, size, preset, seed } => {
            let cfg = PhantomConfig::preset(preset, size, seed);
            let manifest = generate_dataset(&cfg, n_train, n_val, &out)?;
            println!("wrote {} cases to {}", manifest.cases.len(), out.display());
        }
        Command::Train { data, config, out, resume, history } => {
            let (network, train_cfg, guidance) = read_run_config(config.as_deref())?;
            let cases = load_dataset(&data)?;
            let init = resume.map(|p| load_weights(&p, Some(&network))).transpose()?;
            let outcome = train(&cases, &network, &train_cfg, &guidance, init.as_ref())?;
            outcome.weights.save(&out)?;
            let history = history.unwrap_or_else(|| out.with_extension("history.json"));
            write(&history, serde_json::to_string_pretty(&outcome.history)? + "\n")?;
            println!("saved weights (best epoch {}) to {}", outcome.history.best_epoch, out.display());
        }
        Command::Eval { data, weights, oracle, prompt, rounds, seed, report, all } => {
            let model: Box<dyn BenchModel> = if oracle {
                Box::new(OracleModel)
            } else {
                let path = weights.expect("clap enforces weights or --oracle");
                let w = load_weights(&path, None)?;
                let name = path.file_stem().map_or("network".into(), |s| s.to_string_lossy().into_owned());
                Box::new(NetworkModel::from_weights(name, &w)?)
            };
            let mut cases = load_dataset(&data)?;
            if !all {
                cases.retain(|c| c.split == Split::Val);
            }
            let r = run_benchmark(model.as_ref(), &cases, &BenchmarkConfig::new(prompt, rounds, seed))?;
            print!("{}", r.table());
            if let Some(p) = report {
                write(&p, r.to_json())?;
            }
        }
        Command::Serve { weights, port, host, capacity, ui_dir } => {
            let cfg = ServerConfig { capacity, ui_dir, ..Default::default() };
            let app = AppState::from_weights_file(&weights, cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                log::info!("listening on http://{}", listener.local_addr()?);
                for (method, path) in ENDPOINTS {
                    log::info!("  {method:<6} {path}");
                }
                promptseg_server::serve(listener, app, async {
                    let _ = tokio::signal::ctrl_c().await;
                    log::info!("shutting down");
                })
                .await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
