use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdl_core::lab::{self, FieldSpec, GridConfig, OutputConfig, ProblemConfig, RunConfig, RunManifest};
use cdl_core::torus::decode_dump;
use cdl_core::Error;

/// Kolmogorov / dual / SKT numerical laboratory.
#[derive(Parser)]
#[command(name = "cdl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward Kolmogorov solve.
    SolveKolmogorov(RunArgs),
    /// Backward dual solve with a-priori estimate checks.
    SolveDual(RunArgs),
    /// Discrete duality identity between a forward and a dual solve.
    VerifyDuality(RunArgs),
    /// Smoothed-coefficient stability table.
    StabilityStudy(RunArgs),
    /// Single SKT system run.
    SktRun(RunArgs),
    /// Non-local to local convergence table.
    SktConverge {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated kernel widths (overrides the config).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// A2 constant and maximal-operator ratio of a weight.
    A2Check {
        /// Dump file, or a JSON field family such as '{"family":"power","alpha":0.5}'.
        #[arg(long)]
        weight: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximal function of a dumped field.
    Maximal {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0)]
        slice: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a config once per value of a numeric entry.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted config path, e.g. `grid.n` or `problem.eps.0`.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn load(args: &RunArgs, kind: &str) -> Result<RunConfig, Error> {
    let mut config = lab::load_config(&args.config)?;
    if config.problem.kind() != kind {
        return Err(Error::Config {
            path: "problem.kind".into(),
            message: format!("this command runs `{kind}` problems, config has `{}`", config.problem.kind()),
        });
    }
    if let Some(dir) = &args.out {
        set_output(&mut config, dir.clone());
    }
    Ok(config)
}

fn set_output(config: &mut RunConfig, dir: PathBuf) {
    match &mut config.output {
        Some(o) => o.dir = dir,
        None => {
            config.output = Some(OutputConfig {
                dir,
                dump_trajectories: false,
            })
        }
    }
}

fn dump_grid(path: &Path) -> Result<GridConfig, Error> {
    let dump = decode_dump(&std::fs::read(path)?)?;
    Ok(GridConfig {
        dim: dump.dim,
        n: dump.n,
        t_final: 1.0,
        steps: Some(1),
    })
}

/// Re-validates a programmatically built config through the strict parser.
fn revalidate(config: RunConfig) -> Result<RunConfig, Error> {
    lab::parse_config(&serde_json::to_string(&config)?)
}

fn report(manifest: &RunManifest) -> Result<i32, Error> {
    println!("{}", serde_json::to_string_pretty(manifest)?);
    Ok(lab::exit_code(manifest))
}

fn dispatch(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::SolveKolmogorov(a) => report(&lab::run(&load(&a, "kolmogorov")?)?),
        Command::SolveDual(a) => report(&lab::run(&load(&a, "dual")?)?),
        Command::VerifyDuality(a) => report(&lab::run(&load(&a, "duality")?)?),
        Command::StabilityStudy(a) => report(&lab::run(&load(&a, "stability")?)?),
        Command::SktRun(a) => report(&lab::run(&load(&a, "skt")?)?),
        Command::SktConverge { run, eps } => {
            let mut config = load(&run, "converge")?;
            if let (Some(list), ProblemConfig::Converge { eps, .. }) = (eps, &mut config.problem) {
                *eps = list;
            }
            report(&lab::run(&revalidate(config)?)?)
        }
        Command::A2Check {
            weight,
            dim,
            n,
            trials,
            seed,
            out,
        } => {
            let path = Path::new(&weight);
            let (grid, spec) = if path.is_file() {
                (
                    dump_grid(path)?,
                    FieldSpec::Dump {
                        path: path.to_path_buf(),
                        slice: None,
                    },
                )
            } else {
                let spec: FieldSpec = serde_json::from_str(&weight).map_err(|e| Error::Config {
                    path: "--weight".into(),
                    message: format!("neither a dump file nor a field family: {e}"),
                })?;
                (
                    GridConfig {
                        dim,
                        n,
                        t_final: 1.0,
                        steps: Some(1),
                    },
                    spec,
                )
            };
            let mut config = RunConfig {
                grid,
                seed,
                output: None,
                problem: ProblemConfig::Weights {
                    weight: spec,
                    field: None,
                    eps: Vec::new(),
                    trials,
                },
            };
            if let Some(dir) = out {
                set_output(&mut config, dir);
            }
            report(&lab::run(&revalidate(config)?)?)
        }
        Command::Maximal { field, slice, out } => {
            let mut config = RunConfig {
                grid: dump_grid(&field)?,
                seed: 0,
                output: None,
                problem: ProblemConfig::Weights {
                    weight: FieldSpec::Constant { value: 1.0 },
                    field: Some(FieldSpec::Dump {
                        path: field,
                        slice: Some(slice),
                    }),
                    eps: Vec::new(),
                    trials: 1,
                },
            };
            if let Some(dir) = out {
                set_output(&mut config, dir);
            }
            report(&lab::run(&revalidate(config)?)?)
        }
        Command::Sweep { run, axis, values } => {
            let mut config = lab::load_config(&run.config)?;
            if let Some(dir) = run.out {
                set_output(&mut config, dir);
            }
            let points = lab::sweep(&config, &axis, &values)?;
            println!("{}", serde_json::to_string_pretty(&points)?);
            let ok = points.iter().all(|p| p.manifest.as_ref().is_some_and(|m| m.passed));
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = std::env::var("CDL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(lab::error_exit_code(&e) as u8)
        }
    }
}
