//! Command-line runner: generate confounded datasets, fit behavior policies,
//! compute bounds and Γ sweeps, validate episode logs.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 estimation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use confound_ope::behavior::{
    fit_logistic, fit_tabular, LogisticOptions, StateBucketer, TimeBlockSpec,
};
use confound_ope::bounds::{KappaBucketing, KappaFeatures, KappaSpec};
use confound_ope::core::io::{read_jsonl, validate_file, write_jsonl};
use confound_ope::core::WeightOptions;
use confound_ope::exec::ExecMode;
use confound_ope::experiment::{
    bound_report, load_external, run, ExperimentConfig, ExperimentError,
};
use confound_ope::sensitivity::{parse_gamma_grid, sweep, write_sweep_csv, SweepOptions};
use confound_ope::sepsis::{simulate_confounded, SepsisDynamicsConfig, SepsisWorld};

#[derive(Parser)]
#[command(
    name = "confound-ope",
    about = "Worst-case off-policy evaluation bounds under single-decision confounding",
    version
)]
struct Cli {
    /// Run all data-parallel loops sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a TOML config with flag overrides.
    Run(RunArgs),
    /// Sepsis simulator commands.
    #[command(subcommand)]
    Sepsis(SepsisCmd),
    /// Autism trial simulator commands.
    #[command(subcommand)]
    Autism(AutismCmd),
    /// Closed-form confounded toy-model likelihoods.
    Toy(ToyArgs),
    /// Fit a behavior policy from an episode log.
    FitBehavior(FitBehaviorArgs),
    /// Bounds for evaluation policies on a dataset.
    Bound(BoundArgs),
    /// Γ sweep over a scenario, written as CSV.
    Sweep(RunArgs),
    /// Validate an episode log file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    gamma_star: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Sweep grid start:end:step.
    #[arg(long)]
    gamma_grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    /// Horizon of the toy scenario.
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the replication-0 dataset.
    #[arg(long)]
    emit_dataset: bool,
}

#[derive(Subcommand)]
enum SepsisCmd {
    /// Generate a confounded dataset (JSONL) plus an oracle sidecar.
    Gen(SepsisGenArgs),
}

#[derive(Args)]
struct SepsisGenArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma_star: f64,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Oracle values sidecar path (default: <out>.oracle.json).
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    /// Dynamics config TOML; defaults are built in.
    #[arg(long)]
    dynamics: Option<PathBuf>,
    /// Plan on transition rows re-estimated from this many samples per
    /// (state, action) pair instead of the exact configured dynamics.
    #[arg(long)]
    estimate_transitions: Option<usize>,
}

#[derive(Subcommand)]
enum AutismCmd {
    /// Generate a confounded dataset (JSONL) plus an oracle sidecar.
    Gen(AutismGenArgs),
}

#[derive(Args)]
struct AutismGenArgs {
    #[arg(long, default_value = "case2")]
    preset: String,
    #[arg(long, default_value_t = 1.0)]
    gamma_star: f64,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    /// Full config TOML overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 2)]
    horizon: u32,
}

#[derive(Args)]
struct FitBehaviorArgs {
    #[arg(long)]
    data: PathBuf,
    /// "tabular" or "logistic".
    #[arg(long, default_value = "tabular")]
    mode: String,
    /// Time blocks for tabular mode, e.g. "1;2-5".
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    p_min: f64,
    #[arg(long, default_value_t = 1e-4)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fitted behavior policy JSON.
    #[arg(long)]
    behavior: PathBuf,
    /// Evaluation policy JSON files (fitted-policy format).
    #[arg(long, required = true)]
    evaluation: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    t_star: usize,
    /// "tabular" or "linear".
    #[arg(long, default_value = "tabular")]
    kappa: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bootstrap replications for quantiles when used via sweep.
    #[arg(long)]
    gamma_grid: Option<String>,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[arg(long)]
    sweep_out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Optional behavior policy JSON for overlap checks.
    #[arg(long)]
    behavior: Option<PathBuf>,
}

fn parse_blocks(text: &str, horizon: usize) -> Result<Vec<TimeBlockSpec>, ExperimentError> {
    let mut blocks = Vec::new();
    for part in text.split(';') {
        let steps: Vec<usize> = if let Some((a, b)) = part.split_once('-') {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| ExperimentError::Config(format!("bad block {part:?}")))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| ExperimentError::Config(format!("bad block {part:?}")))?;
            (a..=b).collect()
        } else {
            vec![part
                .trim()
                .parse()
                .map_err(|_| ExperimentError::Config(format!("bad block {part:?}")))?]
        };
        blocks.push(TimeBlockSpec {
            steps,
            bucketer: StateBucketer::DiscreteState,
        });
    }
    let _ = horizon;
    Ok(blocks)
}

fn kappa_spec_from_name(name: &str) -> Result<KappaSpec, ExperimentError> {
    match name {
        "tabular" => Ok(KappaSpec::Tabular {
            bucketing: KappaBucketing::State(StateBucketer::DiscreteState),
        }),
        "linear" => Ok(KappaSpec::Linear {
            features: KappaFeatures::StateWithIntercept,
            optimizer: Default::default(),
        }),
        other => Err(ExperimentError::Config(format!(
            "unknown kappa model {other:?} (expected tabular or linear)"
        ))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Auto
    };
    match dispatch(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn build_run_config(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.scenario {
        config.scenario = v.clone();
    }
    if let Some(v) = args.gamma_star {
        config.gamma_star = v;
    }
    if let Some(v) = args.gamma {
        config.gamma = v;
    }
    if let Some(v) = &args.gamma_grid {
        config.gamma_grid = Some(v.clone());
    }
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.replications {
        config.replications = v;
    }
    if let Some(v) = &args.preset {
        config.autism_preset = v.clone();
    }
    if let Some(v) = args.horizon {
        config.toy_horizon = v;
    }
    if let Some(v) = &args.out_dir {
        config.output_dir = v.clone();
    }
    if args.emit_dataset {
        config.emit_dataset = true;
    }
    Ok(config)
}

fn dispatch(command: Command, exec: ExecMode) -> Result<(), ExperimentError> {
    match command {
        Command::Run(args) => {
            let config = build_run_config(&args)?;
            let summary = run(&config, exec)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary"));
            Ok(())
        }
        Command::Sweep(args) => {
            let mut config = build_run_config(&args)?;
            if config.gamma_grid.is_none() {
                return Err(ExperimentError::Config(
                    "sweep requires --gamma-grid".to_string(),
                ));
            }
            config.emit_dataset = false;
            let summary = run(&config, exec)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary"));
            Ok(())
        }
        Command::Sepsis(SepsisCmd::Gen(args)) => {
            let dynamics = match &args.dynamics {
                Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| ExperimentError::Config(format!("bad dynamics: {e}")))?,
                None => SepsisDynamicsConfig::default(),
            };
            let mut world = SepsisWorld::build(dynamics)?;
            if let Some(samples) = args.estimate_transitions {
                let estimated = confound_ope::tabular_mdp::estimate_transitions(
                    &world.mdp, samples, args.seed, exec,
                )?;
                let mut cfg = world.config.clone();
                // Rebuild the world's planner outputs on the estimated rows
                // by swapping the dynamics in a fresh build.
                cfg.admissions = world.config.admissions.clone();
                world = SepsisWorld::build_from_mdp(cfg, estimated)?;
            }
            let dataset = simulate_confounded(&world, args.gamma_star, args.n, args.seed, exec)?;
            write_jsonl(&dataset, &args.out)?;
            let oracle = world.oracle_values()?;
            let oracle_path = args
                .oracle_out
                .unwrap_or_else(|| args.out.with_extension("oracle.json"));
            std::fs::write(
                &oracle_path,
                serde_json::to_string_pretty(&oracle).expect("oracle") + "\n",
            )?;
            println!(
                "wrote {} episodes to {} (oracle: {})",
                dataset.len(),
                args.out.display(),
                oracle_path.display()
            );
            Ok(())
        }
        Command::Autism(AutismCmd::Gen(args)) => {
            let config = match &args.config {
                Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| ExperimentError::Config(format!("bad config: {e}")))?,
                None => confound_ope::autism::AutismConfig::preset(&args.preset).ok_or_else(
                    || ExperimentError::Config(format!("unknown preset {:?}", args.preset)),
                )?,
            };
            let dataset = confound_ope::autism::generate_autism(
                &config,
                args.gamma_star,
                args.n,
                args.seed,
                exec,
            )?;
            write_jsonl(&dataset, &args.out)?;
            let mut truths = std::collections::BTreeMap::new();
            for (name, policy) in [
                ("adaptive", confound_ope::autism::AutismEvalPolicy::AdaptiveBliAac),
                ("aac", confound_ope::autism::AutismEvalPolicy::NonadaptiveAac),
            ] {
                let (value, se) =
                    confound_ope::autism::true_policy_value(&config, policy, 200_000, args.seed)?;
                truths.insert(name.to_string(), serde_json::json!({"value": value, "se": se}));
            }
            let oracle_path = args
                .oracle_out
                .unwrap_or_else(|| args.out.with_extension("oracle.json"));
            std::fs::write(
                &oracle_path,
                serde_json::to_string_pretty(&truths).expect("truths") + "\n",
            )?;
            println!(
                "wrote {} episodes to {} (oracle: {})",
                dataset.len(),
                args.out.display(),
                oracle_path.display()
            );
            Ok(())
        }
        Command::Toy(args) => {
            let (p1, p0) =
                confound_ope::bounds::toy_confounded_likelihood(args.gamma, args.horizon)?;
            match confound_ope::bounds::toy_confounded_likelihood_exact(args.gamma, args.horizon) {
                Some((f1, f0)) => {
                    println!("p_y1 = {f1} = {p1}");
                    println!("p_y0 = {f0} = {p0}");
                }
                None => {
                    println!("p_y1 = {p1}");
                    println!("p_y0 = {p0}");
                }
            }
            println!("ratio = {}", p1 / p0);
            Ok(())
        }
        Command::FitBehavior(args) => {
            let dataset = read_jsonl(&args.data)?;
            let policy = match args.mode.as_str() {
                "tabular" => {
                    let blocks = match &args.blocks {
                        Some(text) => parse_blocks(text, dataset.horizon())?,
                        None => TimeBlockSpec::singletons(
                            dataset.horizon(),
                            StateBucketer::DiscreteState,
                        ),
                    };
                    fit_tabular(
                        &dataset,
                        &blocks,
                        &confound_ope::behavior::FitOptions {
                            alpha: args.alpha,
                            p_min: args.p_min,
                        },
                    )?
                }
                "logistic" => fit_logistic(
                    &dataset,
                    &LogisticOptions {
                        ridge: args.ridge,
                        p_min: args.p_min,
                        ..LogisticOptions::default()
                    },
                )?,
                other => {
                    return Err(ExperimentError::Config(format!(
                        "unknown mode {other:?} (expected tabular or logistic)"
                    )))
                }
            };
            std::fs::write(&args.out, policy.to_json() + "\n")?;
            println!("wrote fitted policy to {}", args.out.display());
            Ok(())
        }
        Command::Bound(args) => {
            let scenario = load_external(
                &args.data,
                &args.behavior,
                &args.evaluation,
                args.t_star,
                kappa_spec_from_name(&args.kappa)?,
                args.seed,
                {
                    let mut opts = confound_ope::bounds::EstimatorOptions::default();
                    opts.exec = exec;
                    opts
                },
            )?;
            if let Some(grid_text) = &args.gamma_grid {
                let grid = parse_gamma_grid(grid_text)?;
                let output = sweep(
                    &scenario,
                    &grid,
                    &SweepOptions {
                        replications: args.replications,
                        ..SweepOptions::default()
                    },
                )?;
                let path = args
                    .sweep_out
                    .clone()
                    .unwrap_or_else(|| args.data.with_extension("sweep.csv"));
                write_sweep_csv(&output, &path)?;
                println!("wrote sweep to {}", path.display());
            }
            let report = bound_report(&scenario, args.gamma)?;
            let text = serde_json::to_string_pretty(&report).expect("report");
            match &args.out {
                Some(path) => {
                    std::fs::write(path, text + "\n")?;
                    println!("wrote bounds to {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Validate(args) => {
            let behavior = match &args.behavior {
                Some(path) => Some(confound_ope::behavior::PolicyRepr::from_json(
                    &std::fs::read_to_string(path)?,
                )?),
                None => None,
            };
            let report = validate_file(
                &args.data,
                behavior.as_ref().map(|p| p as &dyn confound_ope::core::Policy),
                &WeightOptions::default(),
            )?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report"));
            if report.warnings.is_empty() {
                println!(
                    "OK: {} episodes, horizon {}, action sets {:?}",
                    report.n_episodes, report.horizon, report.action_cardinalities
                );
            }
            Ok(())
        }
    }
}
