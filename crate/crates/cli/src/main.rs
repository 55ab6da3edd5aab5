use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmce::experiments::{self, ExperimentConfig};
use dmce::Error;

/// Diffusion-enhanced CSI for multi-user MIMO semantic links.
#[derive(Parser)]
#[command(name = "dmce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all three training stages and write checkpoints plus a manifest.
    Train(Common),
    /// Evaluate trained checkpoints over the configured SNR grid and modes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoints (default: the run directory).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// CSV destination (default: <run directory>/sweep.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Enhance one CSI estimate file with a trained channel enhancer.
    Enhance {
        #[command(flatten)]
        common: Common,
        /// Stage-2 checkpoint (default: <run directory>/stage2_dmce.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest(Common),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 1;

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(e, Error::Io(_)) {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

fn setup(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = setup(&common)?;
            let (manifest, _) = experiments::cmd_train(&cfg, &out)?;
            for f in &manifest.checkpoints {
                println!("{}\t{}\t{} bytes", f.stage, out.join(&f.file).display(), f.bytes);
            }
            for (stage, loss) in &manifest.final_loss {
                println!("{stage} final epoch loss {loss:.6}");
            }
        }
        Command::Sweep {
            common,
            checkpoints,
            csv,
        } => {
            let (cfg, out) = setup(&common)?;
            let sys = experiments::load_system(checkpoints.as_ref().unwrap_or(&out), &cfg)?;
            let result = experiments::run_sweep(&cfg, &sys)?;
            let path = csv.unwrap_or_else(|| out.join("sweep.csv"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, experiments::csv_string(&result.rows))?;
            print!("{}", experiments::csv_string(&result.rows));
        }
        Command::Enhance {
            common,
            checkpoint,
            input,
            output,
        } => {
            let (cfg, out) = setup(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join(experiments::system::STAGE2_FILE));
            experiments::cmd_enhance(&cfg, &ckpt, &input, &output)?;
        }
        Command::Selftest(common) => {
            let (cfg, _) = setup(&common)?;
            let checks = experiments::run_selftest(cfg.seed)?;
            let mut failed = false;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed |= !c.passed;
            }
            if failed {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
