use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use winfree_so::dynamics::Stepper;
use winfree_so::harness::{run, validate_framework, ExperimentKind, ExperimentSpec, HarnessError};

#[derive(Parser)]
#[command(name = "winfree", version, about = "Seeded Winfree experiments on SO(n)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate and write trajectories only.
    Simulate(RunArgs),
    /// Trapping certificate per seed.
    Trap(RunArgs),
    /// Leader-follower herding certificates.
    Herd(RunArgs),
    /// Paired-trajectory ℓ¹ contraction at rate λ1.
    Stability(RunArgs),
    /// Pairwise synchronization at rate λ2 (homogeneous ensembles).
    Sync(RunArgs),
    /// Construct the equilibrium and certify relaxation towards it.
    Equilibrium(RunArgs),
    /// Mean-influence fixed point plus a dense residual scan.
    Fixedpoint(RunArgs),
    /// n = 2 matrix model against the scalar phase model.
    Reduce2d(RunArgs),
    /// Print the itemized hypothesis report without running.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment deck (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the deck's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Proceed even when hypotheses fail.
    #[arg(long)]
    override_hypotheses: bool,
    #[arg(long, value_parser = ["lie-euler", "rkmk4", "ambient-rk4"])]
    stepper: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
}

fn load(args: &RunArgs, kind: Option<ExperimentKind>) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = ExperimentSpec::from_path(&args.config)?;
    if let Some(kind) = kind {
        if let Some(declared) = spec.kind.filter(|&d| d != kind) {
            return Err(HarnessError::Spec(format!(
                "deck declares kind {declared} but the {kind} subcommand was used"
            )));
        }
        spec.kind = Some(kind);
    }
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        spec.output.dir = Some(out.clone());
    }
    if args.override_hypotheses {
        spec.override_hypotheses = true;
    }
    if let Some(s) = &args.stepper {
        spec.integration.stepper = s.parse::<Stepper>().map_err(|e| HarnessError::Spec(e.to_string()))?;
    }
    if let Some(h) = args.h {
        spec.integration.h = h;
    }
    if let Some(t) = args.t_end {
        spec.integration.t_end = t;
    }
    Ok(spec)
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("{}", e.to_json_value());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::Simulate(a) => (a, Some(ExperimentKind::Simulate)),
        Command::Trap(a) => (a, Some(ExperimentKind::Trap)),
        Command::Herd(a) => (a, Some(ExperimentKind::Herd)),
        Command::Stability(a) => (a, Some(ExperimentKind::Stability)),
        Command::Sync(a) => (a, Some(ExperimentKind::Sync)),
        Command::Equilibrium(a) => (a, Some(ExperimentKind::Equilibrium)),
        Command::Fixedpoint(a) => (a, Some(ExperimentKind::Fixedpoint)),
        Command::Reduce2d(a) => (a, Some(ExperimentKind::Reduce2d)),
        Command::Validate(a) => (a, None),
    };
    let spec = match load(args, kind) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };

    if kind.is_none() {
        return match validate_framework(&spec) {
            Ok(report) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.to_json_value()).expect("report serializes")
                );
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => fail(e),
        };
    }

    let report = match run(&spec) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if report.exit_code == 2 {
        let reason = serde_json::json!({
            "error": "hypotheses",
            "violations": report.validation.violations(),
            "checks": report.validation.checks.iter().filter(|c| !c.ok).collect::<Vec<_>>(),
        });
        eprintln!("{reason}");
        return ExitCode::from(2);
    }
    for check in report.validation.checks.iter().filter(|c| !c.ok) {
        eprintln!("override: {}", check.detail);
    }
    for (seed, cert) in &report.certificates {
        let label = if cert.passed() { "PASS" } else { "FAIL" };
        println!("{label} {} seed={seed} {}", report.kind, cert.name);
    }
    println!(
        "{} artifacts in {}",
        report.artifacts.len(),
        spec.output_dir().display()
    );
    ExitCode::from(report.exit_code as u8)
}
