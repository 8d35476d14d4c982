use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ccfund::bestresponse::{
    best_response_bruteforce, best_response_exact, knapsack_form_oracle, DEFAULT_DELTA,
};
use ccfund::generators::{
    build_appendix_b, build_example1, build_example2, build_procedure1, build_theorem2_witness,
    certify_appendix_b, certify_example1, certify_example2, sample_indexed, Certificate,
    Procedure1Params, SamplerConfig,
};
use ccfund::harness::{emit_series, run_experiment, write_csv, ExperimentConfig, FULL_SCALE_INSTANCES};
use ccfund::heuristics::{play, Assignment, HeuristicId, PlayOrder};
use ccfund::io::{instance_from_json, instance_to_json, to_canonical_json, InstanceDoc};
use ccfund::model::{evaluate, ContributionProfile};
use ccfund::refunds::{thresholds, RefundSchemeId};
use ccfund::welfare::{solve_pstar, solve_pstar_bruteforce, solve_pstar_dp, Objective, DEFAULT_RESOLUTION};
use ccfund::{Instance, ResidualView};

const EXAMPLE2_EPSILONS: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Parser, Debug)]
#[command(name = "ccfund", version, about = "Combinatorial civic crowdfunding toolkit")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the refund scheme of loaded or generated instances.
    #[arg(long, global = true, value_parser = parse_refund)]
    refund: Option<RefundSchemeId>,
    /// Slope of the linear-additive refund.
    #[arg(long, global = true)]
    linear_slope: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample instances into a directory.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a named fixture with its certificate.
    Fixture {
        #[arg(long, value_enum)]
        name: FixtureName,
    },
    /// Welfare-optimal subset of an instance.
    SolvePstar {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = PstarMethod::Auto)]
        method: PstarMethod,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: f64,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Welfare)]
        objective: ObjectiveArg,
    },
    /// Best response of one agent to the others' contributions.
    BestResponse {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        agent: usize,
        /// Profile JSON; the agent's own row is ignored. Defaults to all zeros.
        #[arg(long)]
        others: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = BrMethod::Exact)]
        method: BrMethod,
    },
    /// Play heuristics on an instance and evaluate the outcome.
    Play {
        #[arg(long)]
        instance: PathBuf,
        /// One heuristic for everybody, or a comma-separated list, one per agent.
        #[arg(long, value_delimiter = ',', default_value = "opt-welfare")]
        heuristics: Vec<String>,
        #[arg(long, value_enum, default_value_t = OrderArg::Ascending)]
        order: OrderArg,
    },
    /// Run a Monte-Carlo experiment and write the CSV report.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full_scale: bool,
        /// Instances per cell, overriding the config.
        #[arg(long)]
        instances: Option<usize>,
        /// Directory for per-curve JSON series.
        #[arg(long)]
        emit_series: Option<PathBuf>,
    },
    /// Run a fixture's certificate checks; exit 0 iff they come out as documented.
    Verify {
        #[arg(value_enum)]
        name: FixtureName,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FixtureName {
    Procedure1,
    Example1,
    Example2,
    Theorem2,
    #[value(name = "appendixB", alias = "appendix-b")]
    AppendixB,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PstarMethod {
    Auto,
    Bruteforce,
    Dp,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ObjectiveArg {
    Welfare,
    Valuation,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BrMethod {
    Exact,
    Bruteforce,
    Knapsack,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OrderArg {
    Ascending,
    Seeded,
}

fn parse_refund(s: &str) -> Result<RefundSchemeId, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Solver(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Solver(m) | Failure::Verification(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn solver(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Prints the effective settings of a run to stderr.
fn announce<T: Serialize>(what: &str, value: &T) {
    match to_canonical_json(value) {
        Ok(text) => eprintln!("{what}: {text}"),
        Err(e) => eprintln!("{what}: <unprintable: {e}>"),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", to_canonical_json(value).map_err(solver)?);
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_instance(cli: &Cli, path: &Path) -> Result<Instance, Failure> {
    let instance = instance_from_json(&read(path)?).map_err(usage)?;
    match cli.refund {
        Some(id) => {
            let scheme = id.resolve(&instance, cli.linear_slope).map_err(usage)?;
            instance.with_refund(scheme).map_err(usage)
        }
        None => Ok(instance),
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

fn apply_overrides(cli: &Cli, sampler: &mut SamplerConfig) {
    if let Some(id) = cli.refund {
        sampler.refund = id;
    }
    if cli.linear_slope.is_some() {
        sampler.linear_slope = cli.linear_slope;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Gen { config, count, out } => {
            let mut cfg: SamplerConfig = load_config(config.as_deref())?;
            apply_overrides(&cli, &mut cfg);
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.validate().map_err(usage)?;
            announce("config", &cfg);
            eprintln!("seed: {}", cfg.seed);
            fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
            for k in 0..*count {
                let s = sample_indexed(&cfg, k as u64).map_err(solver)?;
                let path = out.join(format!("instance_{k:05}.json"));
                let text = instance_to_json(&s.instance).map_err(solver)?;
                fs::write(&path, text + "\n").map_err(|e| solver(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Fixture { name } => {
            let (value, _) = fixture(&cli, *name)?;
            print_json(&value)
        }
        Command::Verify { name } => {
            let (_, certificate) = fixture(&cli, *name)?;
            for c in &certificate.checks {
                let status = match (c.passed, c.expected) {
                    (true, true) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "FLAGGED (expected)",
                    (true, false) => "UNEXPECTED PASS",
                };
                println!("{status:<18} {}: {}", c.name, c.detail);
            }
            match certificate.first_unexpected() {
                None => Ok(()),
                Some(c) => Err(Failure::Verification(format!("check failed: {}", c.name))),
            }
        }
        Command::SolvePstar {
            instance,
            method,
            resolution,
            objective,
        } => {
            let inst = load_instance(&cli, instance)?;
            let objective = match objective {
                ObjectiveArg::Welfare => Objective::Welfare,
                ObjectiveArg::Valuation => Objective::Valuation,
            };
            announce(
                "config",
                &json!({"method": format!("{method:?}").to_lowercase(), "resolution": resolution, "objective": objective}),
            );
            let solution = match method {
                PstarMethod::Auto => solve_pstar(&inst, *resolution, objective),
                PstarMethod::Bruteforce => solve_pstar_bruteforce(&inst, objective),
                PstarMethod::Dp => solve_pstar_dp(&inst, *resolution, objective),
            }
            .map_err(solver)?;
            print_json(&solution)
        }
        Command::BestResponse {
            instance,
            agent,
            others,
            delta,
            method,
        } => {
            let inst = load_instance(&cli, instance)?;
            let profile: ContributionProfile<f64> = match others {
                Some(p) => serde_json::from_str(&read(p)?).map_err(usage)?,
                None => ContributionProfile::zeros(inst.n_agents(), inst.n_projects()),
            };
            announce(
                "config",
                &json!({"agent": agent, "delta": delta, "method": format!("{method:?}").to_lowercase()}),
            );
            let view = ResidualView::from_profile(&inst, *agent, &profile).map_err(usage)?;
            let br = match method {
                BrMethod::Exact => best_response_exact(&view, *delta),
                BrMethod::Bruteforce => best_response_bruteforce(&view, *delta),
                BrMethod::Knapsack => knapsack_form_oracle(&view, *delta),
            }
            .map_err(solver)?;
            print_json(&br)
        }
        Command::Play {
            instance,
            heuristics,
            order,
        } => {
            let inst = load_instance(&cli, instance)?;
            let ids = heuristics
                .iter()
                .map(|s| s.parse::<HeuristicId>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            let assignment = match ids.len() {
                1 => Assignment::uniform(inst.n_agents(), ids[0]),
                n if n == inst.n_agents() => Assignment::new(ids),
                n => {
                    return Err(usage(format!(
                        "{n} heuristics given for {} agents",
                        inst.n_agents()
                    )))
                }
            };
            let seed = cli.seed.unwrap_or(0);
            let order = match order {
                OrderArg::Ascending => PlayOrder::Ascending,
                OrderArg::Seeded => PlayOrder::Seeded(seed),
            };
            announce("config", &json!({"heuristics": assignment.heuristics(), "order": order}));
            eprintln!("seed: {seed}");
            let th = thresholds(&inst).map_err(solver)?;
            let pstar = solve_pstar(&inst, DEFAULT_RESOLUTION, Objective::Welfare).map_err(solver)?;
            let profile = play(&inst, &assignment, Some(&pstar.subset), &th, order).map_err(solver)?;
            let outcome = evaluate(&inst, &profile).map_err(solver)?;
            print_json(&json!({"pstar": pstar, "profile": profile, "outcome": outcome}))
        }
        Command::Experiment {
            config,
            out,
            full_scale,
            instances,
            emit_series: series_dir,
        } => {
            let mut cfg: ExperimentConfig = load_config(config.as_deref())?;
            apply_overrides(&cli, &mut cfg.sampler);
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if *full_scale {
                cfg.instances_per_cell = FULL_SCALE_INSTANCES;
            }
            if let Some(k) = instances {
                cfg.instances_per_cell = *k;
            }
            cfg.validate().map_err(usage)?;
            announce("config", &cfg);
            eprintln!("seed: {}", cfg.seed);
            let report = run_experiment(&cfg).map_err(solver)?;
            let file = fs::File::create(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
            write_csv(&report, file).map_err(solver)?;
            if let Some(dir) = series_dir {
                emit_series(&report, dir).map_err(solver)?;
            }
            announce("metadata", &report.metadata);
            Ok(())
        }
    }
}

/// Builds a fixture; returns its JSON document and certificate.
fn fixture(cli: &Cli, name: FixtureName) -> Result<(serde_json::Value, Certificate), Failure> {
    let scheme = cli.refund.unwrap_or_default();
    announce(
        "config",
        &json!({"fixture": format!("{name:?}"), "refund": scheme, "linear_slope": cli.linear_slope}),
    );
    let doc = |inst: &Instance| InstanceDoc::from_instance(inst);
    Ok(match name {
        FixtureName::Example1 => {
            let inst = build_example1();
            let cert = certify_example1(&inst).map_err(solver)?;
            (json!({"name": "example1", "instance": doc(&inst), "certificate": cert}), cert)
        }
        FixtureName::Example2 => {
            let inst = build_example2(scheme, 6.0, 10.0, cli.linear_slope).map_err(solver)?;
            let cert = certify_example2(&inst, &EXAMPLE2_EPSILONS).map_err(solver)?;
            (
                json!({"name": "example2", "instance": doc(&inst), "epsilons": EXAMPLE2_EPSILONS, "certificate": cert}),
                cert,
            )
        }
        FixtureName::Procedure1 => {
            let params = Procedure1Params {
                scheme,
                linear_slope: cli.linear_slope,
                ..Procedure1Params::default()
            };
            let out = build_procedure1(&params).map_err(solver)?;
            let cert = out.certificate.clone();
            (
                json!({
                    "name": "procedure1",
                    "params": params,
                    "instance": doc(&out.instance),
                    "xbar11": out.xbar11,
                    "xbar21": out.xbar21,
                    "theta21": out.theta21,
                    "theta22": out.theta22,
                    "certificate": cert,
                }),
                cert,
            )
        }
        FixtureName::Theorem2 => {
            let w = build_theorem2_witness(scheme, 2, 1, 1, cli.linear_slope).map_err(solver)?;
            let cert = w.certificate.clone();
            (
                json!({"name": "theorem2", "instance": doc(&w.instance), "n1": w.n1, "n2": w.n2, "certificate": cert}),
                cert,
            )
        }
        FixtureName::AppendixB => {
            let inst = build_appendix_b();
            let cert = certify_appendix_b(&inst).map_err(solver)?;
            (json!({"name": "appendixB", "instance": doc(&inst), "certificate": cert}), cert)
        }
    })
}
