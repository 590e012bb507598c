use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use consensus_ipm::config::{solver_config, ConfigOverrides, SolverConfig};
use consensus_ipm::data::{load_ionosphere, parse_ionosphere, synthetic_ionosphere_csv, RlsConfig};
use consensus_ipm::experiment::{logreg_problem, random_quadratic, rls_problem, LogregSetup};
use consensus_ipm::formats::{
    read_problem_spec, relative_error, summary_json, write_trace_csv, Summary,
};
use consensus_ipm::model::RelaxedProblem;
use consensus_ipm::msgpass::{run_dpda, Status, TransportKind};
use consensus_ipm::oracle::unrelaxed_optimum;
use consensus_ipm::pdipm::InitStrategy;
use consensus_ipm::verify::run_suite;
use serde_json::{json, Map, Value};

/// Distributed primal-dual interior-point solver for relaxed consensus problems.
#[derive(Parser, Debug)]
#[command(name = "dpda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic robust least squares with Huber loss.
    Rls {
        /// Rescale the stacked design matrix to this condition number.
        #[arg(long)]
        cond: Option<f64>,
        #[arg(long, default_value_t = 10)]
        agents: usize,
        /// Standard deviation of the additive noise.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Regularized logistic regression on the UCI ionosphere data.
    Logreg {
        /// Path to `ionosphere.data`; a seeded stand-in in the same layout is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Shuffle rows with this seed before sharding.
        #[arg(long)]
        shuffle: Option<u64>,
        #[arg(long, default_value_t = 10)]
        agents: usize,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
    /// Random strongly convex quadratics.
    Quadratic {
        #[arg(long, default_value_t = 5)]
        agents: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
    },
    /// Solve a problem described by a JSON problem spec.
    Solve {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run the direction, bound and transport self-checks.
    Verify,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Relaxation radius; overrides the radius in a problem spec.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long = "alpha-ls", global = true)]
    alpha_ls: Option<f64>,
    #[arg(long = "eps-feas", global = true)]
    eps_feas: Option<f64>,
    #[arg(long = "eps-d", global = true)]
    eps_d: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Start ball multipliers at 1 (`unit`) or at 1/epsilon (`ball-scaled`).
    #[arg(long, global = true)]
    init: Option<InitStrategy>,
    #[arg(long, global = true, default_value = "queue")]
    transport: TransportKind,
    /// Also compute the unrelaxed optimum and report the relative error.
    #[arg(long, global = true)]
    oracle: bool,
    /// Output prefix for `<out>.csv` and `<out>.json`; defaults to the subcommand name.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let overrides = ConfigOverrides {
            mu: self.mu,
            beta: self.beta,
            alpha_ls: self.alpha_ls,
            epsilon: self.epsilon,
            eps_feas: self.eps_feas,
            eps_d: self.eps_d,
            max_iter: self.max_iter,
            seed: Some(self.seed),
            kkt_ridge: None,
            init: self.init,
        };
        Ok(solver_config(&overrides)?)
    }
}

struct Experiment {
    name: &'static str,
    problem: RelaxedProblem,
    extra: Map<String, Value>,
}

fn build(command: &Command, args: &SolverArgs, cfg: &SolverConfig) -> Result<Experiment> {
    let mut extra = Map::new();
    let (name, problem) = match command {
        Command::Rls {
            cond,
            agents,
            noise,
        } => {
            let rls = RlsConfig {
                agents: *agents,
                noise_std: *noise,
                seed: args.seed,
                ..RlsConfig::default()
            };
            let (prob, data) = rls_problem(&rls, *cond, cfg.epsilon)?;
            extra.insert("condition_number".into(), json!(data.condition));
            extra.insert("x_true".into(), json!(data.x_true.as_slice()));
            extra.insert("data".into(), serde_json::to_value(&rls)?);
            ("rls", prob)
        }
        Command::Logreg {
            data,
            shuffle,
            agents,
            rho,
        } => {
            let iono = match data {
                Some(path) => {
                    extra.insert("data".into(), json!(path.display().to_string()));
                    load_ionosphere(path).with_context(|| format!("reading {}", path.display()))?
                }
                None => {
                    eprintln!(
                        "no --data given; using a synthetic stand-in with seed {}",
                        args.seed
                    );
                    extra.insert(
                        "data".into(),
                        json!(format!("synthetic stand-in, seed {}", args.seed)),
                    );
                    parse_ionosphere(synthetic_ionosphere_csv(args.seed).as_bytes())?
                }
            };
            extra.insert("shuffle".into(), json!(shuffle));
            extra.insert("rho".into(), json!(rho));
            let setup = LogregSetup {
                agents: *agents,
                rho: *rho,
                epsilon: cfg.epsilon,
                shuffle: *shuffle,
            };
            ("logreg", logreg_problem(&iono, &setup)?)
        }
        Command::Quadratic { agents, dim } => (
            "quadratic",
            random_quadratic(*agents, *dim, cfg.epsilon, args.seed)?,
        ),
        Command::Solve { spec } => {
            let text =
                fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut prob = read_problem_spec(&text)?.build()?;
            if let Some(eps) = args.epsilon {
                prob = prob.with_epsilon(eps)?;
            }
            extra.insert("spec".into(), json!(spec.display().to_string()));
            ("solve", prob)
        }
        Command::Verify => bail!("verify builds no problem"),
    };
    Ok(Experiment {
        name,
        problem,
        extra,
    })
}

fn exit_code(status: Status) -> u8 {
    match status {
        Status::Converged => 0,
        Status::MaxIter => 2,
        Status::LineSearchFailure => 3,
        Status::SingularSystem => 4,
    }
}

fn write_outputs(prefix: &Path, csv: &[u8], json: &str) -> Result<()> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let with_suffix = |ext: &str| {
        let mut name = prefix.as_os_str().to_owned();
        name.push(ext);
        PathBuf::from(name)
    };
    let csv_path = with_suffix(".csv");
    let json_path = with_suffix(".json");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&json_path, json).with_context(|| format!("writing {}", json_path.display()))?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn verify(seed: u64) -> Result<u8> {
    let checks = run_suite(seed)?;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if checks.iter().all(|c| c.passed) {
        0
    } else {
        1
    })
}

fn run(cli: &Cli) -> Result<u8> {
    let cfg = cli.solver.config()?;
    if matches!(cli.command, Command::Verify) {
        return verify(cli.solver.seed);
    }
    let exp = build(&cli.command, &cli.solver, &cfg)?;
    let prob = &exp.problem;
    let (sol, trace) = run_dpda(prob, &cfg, cli.solver.transport)?;
    let reference = if cli.solver.oracle {
        Some(unrelaxed_optimum(prob)?)
    } else {
        None
    };

    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &trace, reference.as_ref())?;
    let transport = match cli.solver.transport {
        TransportKind::Queue => "queue",
        TransportKind::Sequential => "sequential",
    };
    let mut summary = Summary::new(exp.name, &sol, &trace, &cfg, prob.epsilon(), transport);
    summary.extra = exp.extra;
    summary
        .extra
        .insert("agents".into(), json!(prob.agent_count()));
    summary.extra.insert("p".into(), json!(prob.p()));
    if let Some(x_star) = &reference {
        summary.final_rel_err = Some(relative_error(&sol.x, x_star));
        summary
            .extra
            .insert("x_star".into(), json!(x_star.as_slice()));
    }
    let prefix = cli
        .solver
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(exp.name));
    write_outputs(&prefix, &csv, &summary_json(&summary)?)?;

    print!(
        "{}: {} after {} iterations",
        exp.name,
        sol.status.as_str(),
        sol.iterations
    );
    match summary.final_rel_err {
        Some(e) => println!(", relative error {e:.3e}"),
        None => println!(),
    }
    Ok(exit_code(sol.status))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
