use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frontier_fuzz::builtins;
use frontier_fuzz::campaign::{self, Budget, CampaignConfig, Mode};
use frontier_fuzz::oracle::{random_instance, verify};
use frontier_fuzz::report::write_report;
use frontier_fuzz::target::{load_program, Clock, GuardProgram};

#[derive(Parser)]
#[command(name = "frontier-fuzz", version, about = "Frontier-branch guided fuzzing of guard programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one fuzzing campaign.
    Run(RunArgs),
    /// Fold every stats.jsonl below --out into report.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Check greedy scheduling against exhaustive enumeration on random
    /// fixed-probability instances.
    VerifyTheorem {
        /// Maximum number of branches per instance.
        #[arg(long, default_value_t = 4)]
        branches: usize,
        /// Maximum number of stages per instance.
        #[arg(long, default_value_t = 6)]
        stages: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// List bundled targets.
    Targets,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a target document, or builtin:NAME.
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "fox")]
    mode: Mode,
    #[arg(long, group = "budget")]
    budget_execs: Option<u64>,
    #[arg(long, group = "budget")]
    budget_secs: Option<f64>,
    /// Directory of seed files; defaults to one all-zero input.
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = 1024)]
    sample_size: usize,
    /// Charge one time unit per execution instead of wall-clock time.
    #[arg(long)]
    synthetic_time: bool,
    /// Record midpoint convexity probes around Newton steps.
    #[arg(long)]
    probe_convexity: bool,
}

fn load_target(spec: &str) -> Result<GuardProgram, String> {
    match spec.strip_prefix("builtin:") {
        Some(name) => builtins::builtin(name).map_err(|e| e.to_string()),
        None => {
            let bytes = std::fs::read(spec).map_err(|e| format!("{spec}: {e}"))?;
            load_program(&bytes).map_err(|e| format!("{spec}: {e}"))
        }
    }
}

fn run(args: RunArgs) -> Result<(), String> {
    let program = Arc::new(load_target(&args.target)?);
    let seeds = match &args.seeds {
        Some(dir) => campaign::read_seed_dir(dir).map_err(|e| e.to_string())?,
        None => vec![builtins::default_seed(&program)],
    };
    let budget = match (args.budget_execs, args.budget_secs) {
        (Some(n), _) => Budget::execs(n),
        (None, Some(s)) => Budget::time(Duration::from_secs_f64(s)),
        (None, None) => return Err("one of --budget-execs or --budget-secs is required".into()),
    };
    let mut cfg = CampaignConfig::new(args.mode, budget, args.rng_seed);
    cfg.mutator.sample_size = args.sample_size;
    cfg.clock = if args.synthetic_time {
        Clock::Synthetic
    } else {
        Clock::Wall
    };
    cfg.probe_convexity = args.probe_convexity;
    let outcome = campaign::run(program.clone(), &seeds, &cfg).map_err(|e| e.to_string())?;
    campaign::write_outputs(&args.out, &outcome).map_err(|e| e.to_string())?;
    let last = outcome.log.last().expect("log has the seed record");
    println!(
        "mode={} execs={} edges={}/{} corpus={} flips={} findings={}",
        args.mode,
        last.execs,
        last.edges_covered,
        program.edge_count(),
        last.corpus_size,
        last.flips,
        last.findings
    );
    Ok(())
}

fn verify_theorem(branches: usize, stages: usize, trials: usize, rng_seed: u64) -> Result<bool, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut optimal = 0;
    for trial in 0..trials {
        let instance = random_instance(&mut rng, branches, stages);
        let verdict = verify(&instance).map_err(|e| e.to_string())?;
        let probs: Vec<String> = instance.probabilities.iter().map(|p| p.to_string()).collect();
        println!(
            "trial {trial}: m={} K={} p=[{}] greedy={:?} greedy_value={} optimum={} optimal={}",
            instance.branches(),
            instance.stages,
            probs.join(","),
            verdict.greedy,
            verdict.greedy_value,
            verdict.optimum_value,
            verdict.optimal
        );
        optimal += verdict.optimal as usize;
    }
    println!("optimal {optimal}/{trials}");
    Ok(optimal == trials)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Report { out } => write_report(&out)
            .map(|path| {
                println!("wrote {}", path.display());
                true
            })
            .map_err(|e| e.to_string()),
        Command::VerifyTheorem {
            branches,
            stages,
            trials,
            rng_seed,
        } => verify_theorem(branches, stages, trials, rng_seed),
        Command::Targets => {
            for name in builtins::names() {
                println!("builtin:{name}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
