//! `xfwi`: verification suites and toy experiments for extended waveform
//! inversion.

mod commands;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use xfwi::formulations::instances::HelmholtzInstanceConfig;
use xfwi::toy::{Regime, ToyConfig};

use commands::CommandOutput;
use output::{sha256_hex, timestamp, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "xfwi", version, about = "Extended waveform inversion: equivalence checks and toy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; unknown keys are rejected, missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for random problem instances.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Joint versus reduced objective and the matrix identity on random Helmholtz instances.
    EquivCheck(Common),
    /// Adjoint-state gradient versus central finite differences.
    GradCheck(Common),
    /// Receiver-pair kernel panels of K = F F^* at the true velocity.
    Kernel(Common),
    /// Reduced objective over the velocity grid.
    Scan {
        #[command(flatten)]
        common: Common,
        /// `general` adds the configured weighting to the conventional and extended curves.
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Extended-source estimates at trial velocities.
    Extsrc {
        #[command(flatten)]
        common: Common,
        /// Trial velocity in km/s; repeatable.
        #[arg(long = "c", default_values_t = [1.8, 2.2])]
        velocities: Vec<f64>,
        #[arg(long, default_value = "extended")]
        regime: Regime,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::EquivCheck(_) => "equiv-check",
            Command::GradCheck(_) => "grad-check",
            Command::Kernel(_) => "kernel",
            Command::Scan { .. } => "scan",
            Command::Extsrc { .. } => "extsrc",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::EquivCheck(c) | Command::GradCheck(c) | Command::Kernel(c) => c,
            Command::Scan { common, .. } | Command::Extsrc { common, .. } => common,
        }
    }
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

struct Failure {
    code: u8,
    status: &'static str,
    message: String,
}

impl From<xfwi::Error> for Failure {
    fn from(e: xfwi::Error) -> Self {
        use xfwi::Error::*;
        let config = matches!(
            e,
            DegenerateWeights(_) | InvalidInput(_) | SingularGeometry(_) | UnsupportedGeometry(_) | DimensionMismatch { .. }
        );
        if config {
            Failure {
                code: EXIT_CONFIG,
                status: "config-error",
                message: e.to_string(),
            }
        } else {
            Failure {
                code: EXIT_CHECK_FAILED,
                status: "error",
                message: e.to_string(),
            }
        }
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        status: "config-error",
        message,
    }
}

/// Parses the config file (or takes defaults) and returns it with the
/// SHA-256 digest of its canonical JSON form.
fn load_config<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>) -> Result<(T, String), Failure> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_failure(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| config_failure(format!("invalid config {}: {e}", p.display())))?
        }
        None => T::default(),
    };
    let canonical = serde_json::to_string(&cfg).map_err(|e| config_failure(e.to_string()))?;
    let digest = sha256_hex(canonical.as_bytes());
    Ok((cfg, digest))
}

fn execute(command: &Command, digest: &mut String) -> Result<CommandOutput, Failure> {
    let common = command.common();
    let path = common.config.as_deref();
    match command {
        Command::EquivCheck(_) | Command::GradCheck(_) => {
            let (cfg, d) = load_config::<HelmholtzInstanceConfig>(path)?;
            *digest = d;
            cfg.validate()?;
            Ok(if matches!(command, Command::EquivCheck(_)) {
                commands::equiv_check(&cfg, common.seed)?
            } else {
                commands::grad_check(&cfg, common.seed)?
            })
        }
        Command::Kernel(_) | Command::Scan { .. } | Command::Extsrc { .. } => {
            let (cfg, d) = load_config::<ToyConfig>(path)?;
            *digest = d;
            cfg.validate()?;
            Ok(match command {
                Command::Kernel(_) => commands::kernel(&cfg)?,
                Command::Scan { regime, .. } => commands::scan(&cfg, *regime)?,
                Command::Extsrc { velocities, regime, .. } => commands::extsrc(&cfg, velocities, *regime)?,
                _ => unreachable!(),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    if let Err(e) = fs::create_dir_all(&common.out) {
        eprintln!("error: cannot create output directory {}: {e}", common.out.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    let mut digest = String::new();
    let result = execute(&cli.command, &mut digest);

    let status = match &result {
        Ok(out) if out.passed => "ok",
        Ok(_) => "check-failed",
        Err(f) => f.status,
    };
    let manifest = RunManifest {
        command: cli.command.name().into(),
        config_path: common.config.clone(),
        output_dir: common.out.clone(),
        timestamp: timestamp(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_digest: digest,
        seed: common.seed,
        status: status.into(),
    };
    if let Err(e) = manifest.write(&common.out) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(EXIT_CHECK_FAILED);
    }

    match result {
        Ok(out) => {
            for (name, text) in &out.files {
                if let Err(e) = fs::write(common.out.join(name), text) {
                    eprintln!("error: cannot write {name}: {e}");
                    return ExitCode::from(EXIT_CHECK_FAILED);
                }
            }
            println!("{}", out.summary);
            if out.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("check failed");
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
