//! `etd`: audit instances, run learners, print the two-state example.
//!
//! Exit codes: 0 success (audit: every check holds), 1 input error,
//! 2 invariant violation, 3 internal error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use etd_core::audit::example::example_table;
use etd_core::audit::json::to_canonical_json;
use etd_core::audit::{audit, fixture_by_name, parse_spec, AuditOptions, Instance, SpecError};
use etd_core::learner::{run_learning, Algorithm, LearningConfig, LearningProblem, StepSchedule, DIVERGENCE_THRESHOLD};
use etd_core::EtdError;

#[derive(Parser)]
#[command(name = "etd", version, about = "Emphatic TD audits and learning runs on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every contraction, fixed-point and error-bound result on one instance
    Audit(AuditArgs),
    /// Run ETD(0), ETD(λ) or TD(0) on a simulated trajectory
    Learn(LearnArgs),
    /// Print the two-state example next to its closed forms
    Example(ExampleArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// MDP specification file (JSON)
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    /// Built-in instance: two_state, on_policy, random or divergence
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,
}

#[derive(Args)]
struct FixtureParams {
    /// ε of the two-state fixture
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Discount for the two_state, on_policy and random fixtures
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    params: FixtureParams,
    /// λ for the ETD(λ) checks (default: the instance's own)
    #[arg(long)]
    lambda: Option<f64>,
    /// Seed of the random fixture and of the proof-check test vectors
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path (default: stdout)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alg {
    Etd0,
    Etdlambda,
    Td0,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Harmonic,
    Constant,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    params: FixtureParams,
    #[arg(long, value_enum, default_value = "etd0")]
    alg: Alg,
    /// λ for ETD(λ) (default: the instance's own)
    #[arg(long)]
    lambda: Option<f64>,
    /// Trajectory seed (default: the spec's seed, else 0); also seeds the random fixture
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200_000)]
    steps: u64,
    /// Record a curve row every this many steps
    #[arg(long, default_value_t = 1_000)]
    stride: u64,
    #[arg(long, value_enum, default_value = "harmonic")]
    schedule: Schedule,
    /// Constant step size, or α0 of the harmonic schedule α0·c/(c + t)
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Offset c of the harmonic schedule
    #[arg(long, default_value_t = 1_000.0)]
    offset: f64,
    /// CSV path (default: stdout)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Summary JSON path (default: stdout when --out is given, else stderr)
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Output path (default: stdout)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Violation(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Violation(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::CorruptedFixture { .. } => Failure::Violation(format!("{}: {e}", e.code())),
            _ => Failure::Input(format!("{}: {e}", e.code())),
        }
    }
}

impl From<EtdError> for Failure {
    fn from(e: EtdError) -> Self {
        match e {
            EtdError::Numerical(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Input(format!("cannot write {}: {e}", path.display()))
}

fn load(source: &Source, params: &FixtureParams, seed: u64) -> Result<Instance, Failure> {
    match (&source.spec, &source.fixture) {
        (Some(path), _) => Ok(parse_spec(path)?),
        (None, Some(name)) => Ok(fixture_by_name(name, params.epsilon, params.gamma, seed)?),
        (None, None) => Err(Failure::Input("one of --spec or --fixture is required".into())),
    }
}

/// Writes `text` to `path`, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Internal(format!("stdout: {e}"))),
    }
}

fn cmd_audit(args: &AuditArgs) -> Result<(), Failure> {
    let inst = load(&args.source, &args.params, args.seed)?;
    let options = AuditOptions { lambda: args.lambda, seed: args.seed, ..Default::default() };
    let report = audit(&inst, &options)?;
    emit(args.out.as_deref(), &report.to_json())?;
    if report.holds.all {
        Ok(())
    } else {
        Err(Failure::Violation(format!("audit of {} failed: {:?}", inst.name(), report.holds)))
    }
}

#[derive(Serialize)]
struct LearnSummary<'a> {
    schema_version: u32,
    instance: String,
    content_hash: String,
    config: &'a LearningConfig,
    config_hash: &'a str,
    final_distance: f64,
    value_norm: f64,
    relative_distance: f64,
    max_followon: Option<f64>,
    theta_star: Vec<f64>,
    final_theta: Vec<f64>,
    divergence_threshold: f64,
    diverged: bool,
}

fn cmd_learn(args: &LearnArgs) -> Result<(), Failure> {
    let inst = load(&args.source, &args.params, args.seed.unwrap_or(0))?;
    let schedule = match args.schedule {
        Schedule::Constant => StepSchedule::Constant { alpha: args.alpha },
        Schedule::Harmonic => StepSchedule::Harmonic { alpha0: args.alpha, offset: args.offset },
    };
    let config = LearningConfig {
        algorithm: match args.alg {
            Alg::Etd0 => Algorithm::Etd0,
            Alg::Etdlambda => Algorithm::EtdLambda,
            Alg::Td0 => Algorithm::Td0,
        },
        schedule,
        steps: args.steps,
        seed: args.seed.or(inst.spec.seed).unwrap_or(0),
        stride: args.stride,
        lambda: args.lambda.unwrap_or(inst.lambda),
    };
    let problem = LearningProblem {
        mdp: &inst.mdp,
        target: &inst.target,
        behavior: &inst.behavior,
        features: &inst.features,
        interest: &inst.interest,
    };
    let curve = run_learning(&problem, &config)?;

    match &args.out {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_failure(p, e))?;
            let mut w = BufWriter::new(file);
            curve.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(p, e))?;
        }
        None => {
            let stdout = io::stdout();
            curve.write_csv(stdout.lock()).map_err(|e| Failure::Internal(format!("stdout: {e}")))?;
        }
    }

    let final_distance = curve.final_distance();
    let summary = LearnSummary {
        schema_version: 1,
        instance: inst.name(),
        content_hash: inst.content_hash(),
        config: &curve.config,
        config_hash: &curve.config_hash,
        final_distance,
        value_norm: curve.value_norm,
        relative_distance: final_distance / curve.value_norm,
        max_followon: curve.max_followon,
        theta_star: curve.theta_star.iter().copied().collect(),
        final_theta: curve.final_theta.iter().copied().collect(),
        divergence_threshold: DIVERGENCE_THRESHOLD,
        diverged: curve.diverged(),
    };
    let text = to_canonical_json(&summary);
    match (&args.summary, &args.out) {
        (Some(p), _) => emit(Some(p), &text),
        (None, Some(_)) => emit(None, &text),
        (None, None) => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn cmd_example(args: &ExampleArgs) -> Result<(), Failure> {
    let table = example_table(args.epsilon, args.gamma)?;
    emit(args.out.as_deref(), &table.to_string())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Example(a) => cmd_example(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            let (Failure::Input(msg) | Failure::Violation(msg) | Failure::Internal(msg)) = &failure;
            eprintln!("etd: {msg}");
            ExitCode::from(failure.code())
        }
        Err(_) => ExitCode::from(3),
    }
}
