//! `pips` — command-line front end for the finite-MDP planning toolkit.
//!
//! Exit codes: 0 success, 2 I/O or parse failure, 3 domain failure (invalid
//! model, violated precondition), 64 usage error. Every command with a seed
//! is bit-reproducible; tables print with 12 significant digits.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pips_core::chain::{
    communicating_classes, error_curve_csv, is_mdp_communicating, rolling_horizon_error, CommMode,
    CommVerdict, StationaryPolicy,
};
use pips_core::fmt_significant;
use pips_core::horizon::{backward_induction, evaluate_policy, FiniteHorizonPolicy};
use pips_core::model::{generate_random_mdp, GenConfig, MdpModel, StateId};
use pips_core::online::{
    builtin_supervisor, run_online, BuiltinKind, InitialPolicy, OnlineConfig, StartState,
    Supervisor, VisitSource,
};
use pips_core::switching::{run_pips_async_offline, run_pips_sync, Schedule};
use pips_core::PipsError;

#[derive(Parser)]
#[command(name = "pips", version, about = "Finite-MDP planning and rolling-horizon control")]
struct Cli {
    /// Worker threads for parallel kernels (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against every invariant and print the report.
    Validate { model: PathBuf },
    /// Generate a seeded random model.
    Gen(GenArgs),
    /// Solve the horizon problem exactly by backward induction.
    Solve {
        model: PathBuf,
        #[arg(short = 'H', long)]
        horizon: usize,
        /// JSON array used as the terminal value row (defaults to zeros).
        #[arg(long)]
        terminal: Option<PathBuf>,
        /// Write the optimal policy to this file.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Synchronous offline improvement to the horizon optimum.
    PipsSync {
        model: PathBuf,
        #[arg(short = 'H', long)]
        horizon: usize,
        /// Initial policy file (defaults to the lowest-index action).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Asynchronous offline improvement over an update-state schedule.
    PipsAsync {
        model: PathBuf,
        #[arg(short = 'H', long)]
        horizon: usize,
        /// `improvable`, `embedded`, or `file:<path>` (whitespace-separated
        /// state indices, cycled until --max-steps).
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
        /// Seed for the embedded schedule's permutations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the online rolling-horizon controller and write a JSONL trace.
    Online {
        model: PathBuf,
        #[arg(short = 'H', long)]
        horizon: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SupervisorArg::Null)]
        supervisor: SupervisorArg,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Initial policy file (defaults to a seeded random policy).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        /// Stability window (defaults to 4x the state count).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Communication classes and the communicating-model verdict.
    Analyze {
        model: PathBuf,
        /// Policy file; its first entry (level H) is analyzed as a
        /// stationary policy.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Enumerate every stationary policy instead of the sufficient test.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Rolling-horizon error curve over a horizon sweep, as CSV.
    Errorbound {
        model: PathBuf,
        #[arg(long)]
        hmin: usize,
        #[arg(long)]
        hmax: usize,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        terminal: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long, default_value_t = 0.0)]
    reward_min: f64,
    #[arg(long, default_value_t = 1.0)]
    reward_max: f64,
    #[arg(long)]
    ensure_positive: bool,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    name: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SupervisorArg {
    Null,
    Oracle,
    Random,
    Adversarial,
}

impl From<SupervisorArg> for BuiltinKind {
    fn from(value: SupervisorArg) -> Self {
        match value {
            SupervisorArg::Null => BuiltinKind::Null,
            SupervisorArg::Oracle => BuiltinKind::Oracle,
            SupervisorArg::Random => BuiltinKind::Random,
            SupervisorArg::Adversarial => BuiltinKind::Adversarial,
        }
    }
}

enum CliError {
    /// Exit 2: file system or decoding problems.
    Io(String),
    /// Exit 3: the inputs decode but violate a domain contract.
    Domain(String),
}

impl From<PipsError> for CliError {
    fn from(err: PipsError) -> Self {
        match err {
            PipsError::Malformed(_) => CliError::Io(err.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    init_jobs(cli.jobs);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

#[cfg(feature = "parallel")]
fn init_jobs(jobs: usize) {
    if jobs >= 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_jobs(_jobs: usize) {}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Loads, decodes, and validates a model; invalid models are rejected with
/// their validation report.
fn load_model(path: &Path) -> Result<MdpModel, CliError> {
    let model = MdpModel::from_json(&read_file(path)?)?;
    let report = model.validate();
    if !report.is_empty() {
        return Err(CliError::Domain(format!(
            "{} is not a valid model:\n{report}",
            path.display()
        )));
    }
    Ok(model)
}

fn load_policy(path: &Path) -> Result<FiniteHorizonPolicy, CliError> {
    Ok(FiniteHorizonPolicy::from_json(&read_file(path)?)?)
}

fn load_terminal(path: &Path, n: usize) -> Result<Vec<f64>, CliError> {
    let row: Vec<f64> = serde_json::from_str(&read_file(path)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if row.len() != n {
        return Err(CliError::Domain(format!(
            "terminal row has {} entries, model has {n} states",
            row.len()
        )));
    }
    Ok(row)
}

fn print_row(label: &str, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|&v| fmt_significant(v)).collect();
    println!("{label}: {}", cells.join(" "));
}

fn print_action_row(label: &str, row: &[pips_core::ActionId]) {
    let cells: Vec<String> = row.iter().map(|a| a.0.to_string()).collect();
    println!("{label}: {}", cells.join(" "));
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { model } => {
            let decoded = MdpModel::from_json(&read_file(&model)?)?;
            let report = decoded.validate();
            println!("{report}");
            if report.is_empty() {
                Ok(())
            } else {
                Err(CliError::Domain(format!(
                    "{} failed validation",
                    model.display()
                )))
            }
        }
        Command::Gen(args) => {
            let cfg = GenConfig {
                num_states: args.states,
                num_actions: args.actions,
                transition_density: args.density,
                reward_range: (args.reward_min, args.reward_max),
                ensure_positive: args.ensure_positive,
                gamma: args.gamma,
                seed: args.seed,
            };
            let mut model = generate_random_mdp(&cfg)?;
            if let Some(name) = args.name {
                model.name = name;
            }
            write_file(&args.out, &model.to_json())
        }
        Command::Solve {
            model,
            horizon,
            terminal,
            policy_out,
        } => {
            let model = load_model(&model)?;
            let terminal_row = terminal
                .map(|p| load_terminal(&p, model.num_states()))
                .transpose()?;
            let (values, policy) = backward_induction(&model, horizon, terminal_row.as_deref())?;
            for h in 0..=horizon {
                print_row(&format!("V*[{h}]"), values.row(h));
            }
            for level in 1..=horizon {
                print_action_row(&format!("pi*(H) level {level}"), policy.level(level));
            }
            if let Some(path) = policy_out {
                write_file(&path, &policy.to_json())?;
            }
            Ok(())
        }
        Command::PipsSync {
            model,
            horizon,
            init,
            budget,
            policy_out,
        } => {
            let model = load_model(&model)?;
            let initial = match init {
                Some(path) => load_policy(&path)?,
                None => FiniteHorizonPolicy::lowest_action(&model, horizon),
            };
            if initial.horizon() != horizon {
                return Err(CliError::Domain(format!(
                    "initial policy has horizon {}, requested {horizon}",
                    initial.horizon()
                )));
            }
            let run = run_pips_sync(&model, &initial, budget)?;
            println!("iterations: {}", run.iterations);
            print_row(&format!("V[{horizon}]"), run.snapshots.last().expect("snapshot"));
            if let Some(path) = policy_out {
                write_file(&path, &run.policy.to_json())?;
            }
            Ok(())
        }
        Command::PipsAsync {
            model,
            horizon,
            schedule,
            init,
            budget,
            max_steps,
            seed,
        } => {
            let model = load_model(&model)?;
            let initial = match init {
                Some(path) => load_policy(&path)?,
                None => FiniteHorizonPolicy::lowest_action(&model, horizon),
            };
            if initial.horizon() != horizon {
                return Err(CliError::Domain(format!(
                    "initial policy has horizon {}, requested {horizon}",
                    initial.horizon()
                )));
            }
            let schedule = parse_schedule(&schedule, seed)?;
            let run = run_pips_async_offline(&model, &initial, &schedule, budget, max_steps)?;
            println!("steps: {}", run.reports.len());
            println!("terminated: {}", run.terminated);
            let values = evaluate_policy(&model, &run.policy, None)?;
            print_row(&format!("V[{horizon}]"), values.final_row());
            Ok(())
        }
        Command::Online {
            model,
            horizon,
            steps,
            seed,
            supervisor,
            trace,
            start,
            init,
            budget,
            window,
        } => {
            let model = load_model(&model)?;
            let initial = match init {
                Some(path) => InitialPolicy::Given(load_policy(&path)?),
                None => InitialPolicy::Seeded,
            };
            let cfg = OnlineConfig {
                horizon,
                max_steps: steps,
                start: StartState::Fixed(StateId(start)),
                initial_policy: initial,
                visits: VisitSource::ClosedLoop,
                budget,
                window: window.unwrap_or(4 * model.num_states()),
                seed,
            };
            let mut supervisors: Vec<Box<dyn Supervisor>> = match supervisor {
                SupervisorArg::Null => Vec::new(),
                kind => vec![builtin_supervisor(
                    kind.into(),
                    &model,
                    horizon,
                    seed.wrapping_add(1),
                )?],
            };
            let result = run_online(&model, &cfg, &mut supervisors)?;
            write_file(&trace, &result.to_jsonl())?;
            println!("steps: {}", result.records.len());
            match result.stabilization_step {
                Some(k) => println!("stabilization_step: {k}"),
                None => println!("stabilization_step: none"),
            }
            let report = &result.local_optimality;
            println!(
                "local_optimality: {}",
                serde_json::to_value(report.verdict)
                    .expect("verdict serializes")
                    .as_str()
                    .expect("verdict is a string")
            );
            match report.globally_optimal {
                Some(flag) => println!("globally_optimal: {flag}"),
                None => println!("globally_optimal: unknown"),
            }
            Ok(())
        }
        Command::Analyze {
            model,
            policy,
            exhaustive,
        } => {
            let model = load_model(&model)?;
            if let Some(path) = policy {
                let horizon_policy = load_policy(&path)?;
                let stationary = StationaryPolicy::from_first_entry(&horizon_policy);
                let partition = communicating_classes(&model, &stationary)?;
                println!("policy classes:");
                for class in &partition.classes {
                    let members: Vec<String> =
                        class.states.iter().map(|s| s.0.to_string()).collect();
                    let kind = if class.recurrent { "recurrent" } else { "transient" };
                    println!("  {{{}}} {kind}", members.join(","));
                }
            }
            let mode = if exhaustive {
                CommMode::Exhaustive
            } else {
                CommMode::Sufficient
            };
            match is_mdp_communicating(&model, mode)? {
                CommVerdict::Yes => println!("communicating: yes"),
                CommVerdict::Unknown => println!("communicating: unknown"),
                CommVerdict::No { witness } => {
                    println!("communicating: no");
                    let actions: Vec<String> =
                        witness.actions.iter().map(|a| a.0.to_string()).collect();
                    println!("witness: {}", actions.join(" "));
                }
            }
            Ok(())
        }
        Command::Errorbound {
            model,
            hmin,
            hmax,
            out,
            terminal,
        } => {
            if hmin == 0 || hmax < hmin {
                return Err(CliError::Domain(format!(
                    "bad horizon range [{hmin}, {hmax}]"
                )));
            }
            let model = load_model(&model)?;
            let terminal_row = terminal
                .map(|p| load_terminal(&p, model.num_states()))
                .transpose()?;
            let h_list: Vec<usize> = (hmin..=hmax).collect();
            let curve = rolling_horizon_error(&model, &h_list, terminal_row.as_deref())?;
            let csv = error_curve_csv(&curve);
            write_file(&out, &csv)?;
            print!("{csv}");
            Ok(())
        }
    }
}

fn parse_schedule(text: &str, seed: u64) -> Result<Schedule, CliError> {
    match text {
        "improvable" => Ok(Schedule::ImprovableFirst),
        "embedded" => Ok(Schedule::LevelEmbedded { seed }),
        other => {
            let Some(path) = other.strip_prefix("file:") else {
                return Err(CliError::Domain(format!(
                    "unknown schedule {other:?}; expected improvable, embedded, or file:<path>"
                )));
            };
            let body = read_file(Path::new(path))?;
            let mut states = Vec::new();
            for token in body.split_whitespace() {
                let index: usize = token
                    .parse()
                    .map_err(|_| CliError::Io(format!("bad state index {token:?} in {path}")))?;
                states.push(StateId(index));
            }
            Ok(Schedule::Explicit(states))
        }
    }
}
