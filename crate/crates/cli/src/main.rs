use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlvmc::run::{self, RunConfig};
use dlvmc::{report, Error};

#[derive(Parser)]
#[command(name = "dlvmc", version, about = "Variational Monte Carlo with deep-learning wavefunctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: hydrogen, helium, lithium, h2, lih, n2.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set train.lr0=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use this run directory instead of a timestamped one under `output_dir`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Hartree-Fock reference only.
    Scf {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the S, T and V integral tables.
        #[arg(long)]
        dump_integrals: bool,
    },
    /// Local frames from the SCF density.
    Frames {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Supervised fit to the Hartree-Fock orbitals.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pretrain, optimize and evaluate.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate the energy of a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every cell of an ablation matrix.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `waterfall-lite` or `factorial`.
        #[arg(long, default_value = "waterfall-lite")]
        matrix: String,
        /// Presets to ablate; ignored when --config or --preset is given.
        #[arg(long, value_delimiter = ',', default_value = "lithium,h2")]
        systems: Vec<String>,
    },
    /// Summary table and energy plots over run directories.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> dlvmc::Result<RunConfig> {
    match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text, &args.overrides)
        }
        (None, Some(name)) => preset_config(name)?.with_overrides(&args.overrides),
        (None, None) => Err(Error::config("<cli>", "give --config FILE or --preset NAME")),
    }
}

fn preset_config(name: &str) -> dlvmc::Result<RunConfig> {
    run::preset(name).ok_or_else(|| {
        Error::config("<preset>", format!("unknown preset `{name}` (known: {})", run::preset_names().join(", ")))
    })
}

fn run_dir(cfg: &RunConfig, args: &ConfigArgs, what: &str) -> PathBuf {
    if let Some(d) = &args.run_dir {
        return d.clone();
    }
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    cfg.output_dir.join(format!("{}-{what}-{stamp}", cfg.name))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. }
        | Error::NotConverged(_)
        | Error::NodalPoint
        | Error::LinearDependence
        | Error::Domain(_)
        | Error::RejectedConfiguration(_) => 2,
        _ => 1,
    }
}

fn announce(dir: &Path) {
    eprintln!("run directory: {}", dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> dlvmc::Result<()> {
    match cmd {
        Command::Scf { cfg: args, dump_integrals } => {
            let cfg = load_config(&args)?;
            let dir = run_dir(&cfg, &args, "scf");
            announce(&dir);
            let s = run::run_scf(&cfg, &dir, dump_integrals)?;
            println!("E_HF = {:.10} Ha ({} iterations, tr(DS) = {:.10})", s.energy, s.iterations, s.electron_count);
        }
        Command::Frames { cfg: args } => {
            let cfg = load_config(&args)?;
            let dir = run_dir(&cfg, &args, "frames");
            announce(&dir);
            print!("{}", run::run_frames(&cfg, &dir)?.dump());
        }
        Command::Pretrain { cfg: args } => {
            let cfg = load_config(&args)?;
            let dir = run_dir(&cfg, &args, "pretrain");
            announce(&dir);
            let losses = run::run_pretrain(&cfg, &dir)?;
            if let Some(l) = losses.last() {
                println!("final pretraining loss {l:.6e}");
            }
        }
        Command::Train { cfg: args } => {
            let cfg = load_config(&args)?;
            let dir = run_dir(&cfg, &args, "train");
            announce(&dir);
            let out = run::run_train(&cfg, &dir)?;
            if let Some(r) = out.report {
                println!("E = {:.6} +- {:.6} Ha (E_HF = {:.6})", r.estimate.mean, r.estimate.stderr, r.hf_energy);
            }
        }
        Command::Evaluate { cfg: args, checkpoint } => {
            let cfg = load_config(&args)?;
            let dir = run_dir(&cfg, &args, "evaluate");
            announce(&dir);
            let r = run::run_evaluate(&cfg, &checkpoint, &dir)?;
            println!("E = {:.6} +- {:.6} Ha", r.estimate.mean, r.estimate.stderr);
        }
        Command::Ablate { cfg: args, matrix, systems } => {
            let bases = if args.config.is_some() || args.preset.is_some() {
                vec![load_config(&args)?]
            } else {
                systems
                    .iter()
                    .map(|s| preset_config(s)?.with_overrides(&args.overrides))
                    .collect::<dlvmc::Result<Vec<_>>>()?
            };
            let mut cells = Vec::new();
            for b in &bases {
                cells.extend(run::ablation_cells(b, &matrix)?);
            }
            let dir = run_dir(&bases[0], &args, &format!("ablate-{matrix}"));
            announce(&dir);
            for row in run::run_ablation(&cells, &dir)? {
                println!("{:<10} {:<28} {:.6} +- {:.6}", row.system, row.cell, row.mean, row.stderr);
            }
        }
        Command::Report { dirs, out } => {
            if dirs.is_empty() {
                return Err(Error::config("<cli>", "no run directories given"));
            }
            let r = report::collect(&dirs);
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            r.write(&out)?;
            print!("{}", r.table_csv());
        }
    }
    Ok(())
}
