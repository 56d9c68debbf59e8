//! Command-line driver: `run` a single experiment, `sweep` an axis with
//! paired seeds, evaluate the convergence `bound`, or cross-check the
//! round solver against the brute-force `oracle`.
//!
//! Exit codes: 0 on success, 2 when a round is infeasible, 3 on a config
//! error.

use clap::{Args, Parser, Subcommand};
use qfl::bound::{convergence_bound, BoundConstants};
use qfl::config::{EpsilonSpec, Scheme, SimConfig};
use qfl::roundopt::{
    self, oracle, round_and_resolve, solve_round_continuous, RoundProblem,
};
use qfl::sim::{
    epsilon_legs, metrics_csv, run_experiment, run_sweep, scheme_legs, sweep_csv, SimError,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "qfl", about = "Quantized federated learning over a wireless uplink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write per-round metrics.
    Run(RunArgs),
    /// Run paired experiments along one axis and merge the metrics.
    Sweep(SweepArgs),
    /// Evaluate the convergence upper bound over a horizon sweep.
    Bound(BoundArgs),
    /// Compare the round solver against the brute-force grid oracle.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Load the documented reference defaults explicitly.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    /// proposed | fixed_bits | equal_slots | equal_energy | lossless
    #[arg(long)]
    scheme: Option<String>,
    /// Constant error tolerance override.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Decaying tolerance override: start,final.
    #[arg(long, value_delimiter = ',')]
    epsilon_decay: Option<Vec<f64>>,
    #[arg(long)]
    users: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<SimConfig, String> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => SimConfig::from_path(path).map_err(|e| e.to_string())?,
            (None, Some(p)) if p == "table1" => SimConfig::table1(),
            (None, Some(p)) => return Err(format!("unknown preset '{p}'")),
            (None, None) => SimConfig::table1(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(s) = &self.scheme {
            cfg.scheme = s.parse()?;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = EpsilonSpec::Constant { value: e };
        }
        if let Some(pair) = &self.epsilon_decay {
            if pair.len() != 2 {
                return Err("--epsilon-decay takes exactly two values: start,final".into());
            }
            cfg.epsilon = EpsilonSpec::Decay {
                start: pair[0],
                end: pair[1],
            };
        }
        if let Some(u) = self.users {
            cfg.users.count = u;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Metrics CSV path (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-round solver diagnostics as JSON lines.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sweep axis: epsilon or scheme.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Combined CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 4.0)]
    smoothness: f64,
    #[arg(long, default_value_t = 1.0)]
    strong_convexity: f64,
    #[arg(long, default_value_t = 2.0)]
    grad_norm_sq: f64,
    /// Comma-separated per-user gradient variances.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.0")]
    sigma2: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    heterogeneity: f64,
    #[arg(long, default_value_t = 2)]
    local_steps: u32,
    #[arg(long, default_value_t = 8.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    initial_gap_sq: f64,
    /// Constant per-user quantization error J^2 applied every round.
    #[arg(long, default_value_t = 0.0)]
    j2: f64,
    /// Largest horizon; the bound is reported for 1..=rounds.
    #[arg(long, default_value_t = 200)]
    rounds: u64,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of two-user instances to check.
    #[arg(long, default_value_t = 5)]
    instances: usize,
    /// Maximum tolerated relative gap against the oracle.
    #[arg(long, default_value_t = 5e-3)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bound(args) => cmd_bound(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn fail_config(msg: &str) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn fail_sim(err: &SimError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        SimError::InfeasibleRound { .. } | SimError::InvalidAllocation { .. } => {
            ExitCode::from(EXIT_INFEASIBLE)
        }
        _ => ExitCode::FAILURE,
    }
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut cfg = match args.config.build() {
        Ok(c) => c,
        Err(e) => return fail_config(&e),
    };
    if args.out.is_some() {
        cfg.output.metrics_csv = args.out;
    }
    if args.diagnostics.is_some() {
        cfg.output.diagnostics_jsonl = args.diagnostics;
    }
    match run_experiment(&cfg) {
        Ok(out) => {
            if cfg.output.metrics_csv.is_none() {
                print!("{}", metrics_csv(&out));
            }
            eprintln!(
                "{} rounds, sim time {:.3} s, final accuracy {:.4}, avg bits/user {:.2}",
                cfg.rounds, out.total_sim_time, out.final_accuracy, out.avg_bits
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail_sim(&e),
    }
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let cfg = match args.config.build() {
        Ok(c) => c,
        Err(e) => return fail_config(&e),
    };
    let legs = match args.axis.as_str() {
        "epsilon" => {
            let mut values = Vec::new();
            for v in &args.values {
                match v.parse::<f64>() {
                    Ok(x) if x > 0.0 => values.push(x),
                    _ => return fail_config(&format!("bad epsilon value '{v}'")),
                }
            }
            if values.is_empty() {
                return fail_config("no sweep values given");
            }
            epsilon_legs(&cfg, &values)
        }
        "scheme" => {
            let mut schemes = Vec::new();
            for v in &args.values {
                match v.parse::<Scheme>() {
                    Ok(s) => schemes.push(s),
                    Err(e) => return fail_config(&e),
                }
            }
            if schemes.is_empty() {
                return fail_config("no sweep values given");
            }
            scheme_legs(&cfg, &schemes)
        }
        other => return fail_config(&format!("unknown axis '{other}' (epsilon|scheme)")),
    };
    match run_sweep(legs) {
        Ok(legs) => {
            let csv = sweep_csv(&legs);
            for leg in &legs {
                eprintln!(
                    "{}: sim time {:.3} s, final accuracy {:.4}, avg delay {:.4} s, avg bits {:.2}",
                    leg.label,
                    leg.output.total_sim_time,
                    leg.output.final_accuracy,
                    leg.output.avg_round_latency,
                    leg.output.avg_bits
                );
            }
            if let Some(path) = args.out {
                if let Err(e) = std::fs::write(&path, csv) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            } else {
                print!("{csv}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail_sim(&e),
    }
}

fn cmd_bound(args: BoundArgs) -> ExitCode {
    let constants = BoundConstants {
        smoothness: args.smoothness,
        strong_convexity: args.strong_convexity,
        grad_norm_sq: args.grad_norm_sq,
        grad_variance: args.sigma2.clone(),
        heterogeneity: args.heterogeneity,
        local_steps: args.local_steps,
        gamma: args.gamma,
        initial_gap_sq: args.initial_gap_sq,
    };
    let n = args.sigma2.len().max(1);
    let weights = vec![1.0 / n as f64; n];
    let mut csv = String::from("rounds,first_term,gap_term,total\n");
    for t in 1..=args.rounds {
        match convergence_bound(t, &constants, |_, _| args.j2, &weights) {
            Ok(v) => csv.push_str(&format!(
                "{t},{},{},{}\n",
                v.first_term,
                v.gap_term,
                v.total()
            )),
            Err(e) => return fail_config(&e.to_string()),
        }
    }
    match args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, csv) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        None => {
            print!("{csv}");
            ExitCode::SUCCESS
        }
    }
}

fn cmd_oracle(args: OracleArgs) -> ExitCode {
    let physics = SimConfig::table1().physics.to_physics();
    let dim = SimConfig::table1().model.param_count() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    while checked < args.instances {
        let profiles: Vec<_> = (0..2)
            .map(|id| qfl::channel::UserProfile {
                id,
                cycles_per_bit: rng.gen_range(10.0..40.0),
                workload_bits: 1e6,
                f_max: 1.5e9,
                e_max: 0.3,
                weight: 0.5,
                distance_m: rng.gen_range(100.0..1000.0),
            })
            .collect();
        let gains: Vec<f64> = profiles
            .iter()
            .map(|p| {
                let u: f64 = rng.gen();
                (-(1.0 - u).ln()).max(0.05) * p.distance_m.powf(-physics.pathloss_exp)
            })
            .collect();
        let deltas = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
        let epsilon = *[0.005, 0.01, 0.05]
            .get(checked % 3)
            .unwrap();
        let problem = RoundProblem::new(&profiles, &gains, &deltas, epsilon, dim, &physics);

        let Ok((cont, mult)) = solve_round_continuous(&problem) else {
            continue;
        };
        let grid = match oracle::continuous_grid_oracle(&problem) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let gap = (cont.round_latency - grid.objective).abs() / grid.objective;
        let kkt = roundopt::kkt_residuals(&problem, &cont, &mult).max_violation();

        let int = round_and_resolve(&problem, &cont).ok();
        let int_gap = match (&int, oracle::integer_grid_oracle(&problem)) {
            (Some(alloc), Ok(opt)) => (alloc.round_latency - opt.objective).abs() / opt.objective,
            _ => f64::NAN,
        };
        println!(
            "instance {checked}: continuous gap {gap:.2e}, integer gap {int_gap:.2e}, kkt {kkt:.2e}"
        );
        worst = worst.max(gap).max(int_gap);
        checked += 1;
    }
    if worst <= args.tolerance {
        println!("ok: worst relative gap {worst:.2e} within {:.2e}", args.tolerance);
        ExitCode::SUCCESS
    } else {
        eprintln!("FAIL: worst relative gap {worst:.2e} exceeds {:.2e}", args.tolerance);
        ExitCode::FAILURE
    }
}
