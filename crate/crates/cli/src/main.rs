use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use evsync::precision::Precision;
use evsync::runner::{self, RunConfig, RunMode, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Event,
    Full,
    Both,
    SyncOnly,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Event => RunMode::Event,
            ModeArg::Full => RunMode::Full,
            ModeArg::Both => RunMode::Both,
            ModeArg::SyncOnly => RunMode::SyncOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    DoubleDouble,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::DoubleDouble => Precision::DoubleDouble,
        }
    }
}

/// Event-triggered synchronization and distributed Kalman filtering experiments.
#[derive(Debug, Parser)]
#[command(name = "evsync", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present_any = ["preset", "list_presets"])]
    config: Option<PathBuf>,
    /// Bundled configuration by name.
    #[arg(long)]
    preset: Option<String>,
    /// List bundled presets and exit.
    #[arg(long)]
    list_presets: bool,
    /// Print the selected preset's TOML and exit.
    #[arg(long, requires = "preset")]
    show_preset: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Accept a closed-loop filter matrix with complex eigenvalues.
    #[arg(long)]
    allow_complex: bool,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            runner::load_config(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(name)) => runner::preset(name)?,
        _ => bail!("exactly one of --config and --preset is required"),
    };
    if let Some(t) = cli.trials {
        config.run.trials = t;
    }
    if let Some(h) = cli.horizon {
        config.run.horizon = h;
    }
    if let Some(s) = cli.seed {
        config.run.seed = s;
    }
    if let Some(m) = cli.mode {
        config.run.mode = m.into();
    }
    if let Some(p) = cli.precision {
        config.run.precision = p.into();
    }
    if cli.allow_complex {
        config.design.allow_complex = true;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_presets {
        for name in runner::preset_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    if cli.show_preset {
        let name = cli.preset.as_deref().unwrap_or_default();
        return match runner::preset_source(name) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown preset {name:?}");
                ExitCode::from(2)
            }
        };
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    let opts = RunOptions {
        out_dir: Some(cli.out.clone()),
        workers: cli.workers,
    };
    let outcome = runner::run(&config, &opts)?;
    print!("{}", outcome.report.summary());
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}
