use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mcrelay_cli::experiments::{self, Report};
use mcrelay_cli::spec::{preset, EngineSelection, ExperimentKind, ExperimentSpec, Format, PRESETS};
use mcrelay_cli::{exit_code, output, spec::ConfigError, EXIT_VALIDATION};
use mcrelay_core::sim::Engine;

#[derive(Parser)]
#[command(name = "mcrelay", version, about = "Two-hop diffusion relay experiments")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "MCRELAY_THREADS", default_value_t = 0)]
    threads: usize,
    /// No progress messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimEngine {
    Sparse,
    Direct,
}

#[derive(clap::Args)]
struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Defaults to the spec's format, then the output extension, then CSV.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec (TOML) or a named preset.
    Run {
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long, value_enum)]
        engine: Option<EngineSelection>,
        #[arg(long, value_enum)]
        sim_engine: Option<SimEngine>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Monte Carlo checks of the closed-form physics and count statistics.
    ValidatePhysics {
        #[arg(long, default_value_t = 1_000_000)]
        walkers: u64,
        /// Realizations of the count-statistics check.
        #[arg(long, default_value_t = 10_000)]
        realizations: usize,
        /// Information bits of the count-statistics check.
        #[arg(long, default_value_t = 10)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: scales the walkers' diffusion coefficient.
        #[arg(long, default_value_t = 1.0)]
        fault_diffusion_scale: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print a preset spec as TOML.
    Preset { name: String },
}

fn load(path: Option<&Path>, name: Option<&str>) -> Result<ExperimentSpec> {
    match (path, name) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ExperimentSpec::from_toml(&text)?)
        }
        (None, Some(n)) => find_preset(n),
        (None, None) => bail!(ConfigError(vec!["give a spec file or --preset".into()])),
    }
}

fn find_preset(name: &str) -> Result<ExperimentSpec> {
    preset(name).ok_or_else(|| {
        ConfigError(vec![format!("unknown preset '{name}' (known: {})", PRESETS.join(", "))]).into()
    })
}

fn resolve_format(spec: &ExperimentSpec, out: &OutputArgs, path: Option<&Path>) -> Format {
    out.format.or(spec.format).unwrap_or_else(|| match path.and_then(|p| p.extension()) {
        Some(ext) if ext == "json" => Format::Json,
        _ => Format::Csv,
    })
}

fn emit(report: &Report, format: Format, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            output::write_report(report, format, &mut w)?;
            w.flush()?;
            if format == Format::Csv {
                let mut echo = p.as_os_str().to_owned();
                echo.push(".spec.toml");
                std::fs::write(&echo, report.spec.to_toml())?;
            }
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            output::write_report(report, format, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("starting the thread pool")?;
    let quiet = cli.quiet;
    let progress = move |msg: &str| {
        if !quiet {
            eprintln!("[mcrelay] {msg}");
        }
    };
    let (spec, out) = match cli.command {
        Command::Preset { name } => {
            print!("{}", find_preset(&name)?.to_toml());
            return Ok(true);
        }
        Command::Run { spec, preset, seed, realizations, sequences, engine, sim_engine, out } => {
            let mut s = load(spec.as_deref(), preset.as_deref())?;
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = realizations {
                s.realizations = v;
            }
            if let Some(v) = sequences {
                s.sequences = v;
            }
            if let Some(v) = engine {
                s.engine = v;
            }
            if let Some(v) = sim_engine {
                s.sim_engine = match v {
                    SimEngine::Sparse => Engine::Sparse,
                    SimEngine::Direct => Engine::Direct,
                };
            }
            (s, out)
        }
        Command::ValidatePhysics { walkers, realizations, length, seed, fault_diffusion_scale, out } => {
            let mut s: ExperimentSpec = ExperimentSpec::from_toml("kind = \"validate-physics\"")?;
            s.seed = seed;
            s.physics.walkers = walkers;
            s.physics.realizations = realizations;
            s.physics.length = length;
            s.physics.diffusion_scale = fault_diffusion_scale;
            (s, out)
        }
    };
    let path = out.output.clone().or_else(|| spec.output.clone());
    let format = resolve_format(&spec, &out, path.as_deref());
    let report = experiments::run(&spec, &progress)?;
    emit(&report, format, path.as_deref())?;
    if spec.kind == ExperimentKind::ValidatePhysics {
        if let Some(ph) = &report.physics {
            for c in ph.checks.iter().filter(|c| !c.passed) {
                progress(&format!(
                    "FAILED {}: observed {} expected {} (deviation {} > tolerance {})",
                    c.name, c.observed, c.expected, c.deviation, c.tolerance
                ));
            }
        }
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
