use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semfuse::config::{ConfigError, RunConfig};

mod commands;
mod eval;

#[derive(Parser, Debug)]
#[command(
    name = "semfuse",
    version,
    about = "Semantic mapping server, simulated AR client and evaluation tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run settings shared by every pipeline command. Flags override the
/// config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
struct Tunables {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Any config key, e.g. `--set noise_flip=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    port: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Device frames per photo, or fast / medium / slow.
    #[arg(long)]
    pacing: Option<String>,
    #[arg(long)]
    throttle_bytes_per_sec: Option<String>,
    /// e.g. `chair=30,lamp=5`.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    near_skip_m: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    height: Option<String>,
    #[arg(long)]
    frames: Option<String>,
}

impl Tunables {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for item in &self.set {
            let (k, v) = item.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            config.set(k, v)?;
        }
        let flags = [
            ("port", &self.port),
            ("batch_size", &self.batch_size),
            ("pacing", &self.pacing),
            ("throttle_bytes_per_sec", &self.throttle_bytes_per_sec),
            ("thresholds", &self.thresholds),
            ("near_skip_m", &self.near_skip_m),
            ("seed", &self.seed),
            ("width", &self.width),
            ("height", &self.height),
            ("frames", &self.frames),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Accept one client and run the fusion server until it disconnects.
    Serve {
        #[command(flatten)]
        tunables: Tunables,
        /// Labeled scene PLY for the oracle segmenter.
        #[arg(long, conflicts_with = "smap_dir", required_unless_present = "smap_dir")]
        scene: Option<PathBuf>,
        /// Directory of recorded `frame_NNNNNN.smap` score maps.
        #[arg(long)]
        smap_dir: Option<PathBuf>,
        /// Where to write metrics, the fused map and component batches.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream a scene along a trajectory to a running server.
    Replay {
        #[command(flatten)]
        tunables: Tunables,
        /// Labeled scene PLY; its labels color the rendered images.
        #[arg(long)]
        scene: PathBuf,
        /// Trajectory file, one row-major 4x4 pose per line.
        #[arg(long)]
        traj: PathBuf,
        /// Server address; defaults to the configured host and port.
        #[arg(long)]
        connect: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scene generation, client and server end to end over loopback.
    Simulate {
        #[command(flatten)]
        tunables: Tunables,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        /// Directory of predicted `.pgm` label images or labeled `.ply` meshes.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth files with matching names.
        #[arg(long)]
        gt: PathBuf,
        /// Class names in label-index order.
        #[arg(long, default_value = "Lamp,Chair,Unknown", value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled scene and a camera trajectory.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        chairs: usize,
        #[arg(long, default_value_t = 1)]
        lamps: usize,
        #[arg(long, default_value_t = semfuse::scenegen::DEFAULT_DENSITY)]
        density: f64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// `orbit:N`, or `orbit:N:RADIUS:HEIGHT`.
        #[arg(long)]
        traj: Option<String>,
        #[arg(long, value_name = "FILE", requires = "traj")]
        traj_out: Option<PathBuf>,
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
    },
    /// Write the per-pixel argmax of a score map as a PGM image.
    SmapArgmax {
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

/// Exit status categories.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(format!("config: {e}"))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMFUSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Serve {
            tunables,
            scene,
            smap_dir,
            out,
        } => tunables
            .resolve()
            .map_err(Failure::from)
            .and_then(|c| commands::serve(&c, scene, smap_dir, out)),
        Command::Replay {
            tunables,
            scene,
            traj,
            connect,
            out,
        } => tunables
            .resolve()
            .map_err(Failure::from)
            .and_then(|c| commands::replay(&c, &scene, &traj, connect, out)),
        Command::Simulate { tunables, out } => tunables
            .resolve()
            .map_err(Failure::from)
            .and_then(|c| commands::simulate(&c, out)),
        Command::Eval { pred, gt, classes, out } => eval::run(&pred, &gt, &classes, out),
        Command::GenScene {
            seed,
            chairs,
            lamps,
            density,
            out,
            traj,
            traj_out,
            ascii,
        } => commands::gen_scene(seed, chairs, lamps, density, &out, traj.as_deref(), traj_out, ascii),
        Command::SmapArgmax { input, out } => commands::smap_argmax(&input, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
