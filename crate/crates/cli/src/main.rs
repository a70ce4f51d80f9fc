use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qlbm::bench::{compare_reference_velocities, run_experiment, Case, CaseParams, ExperimentConfig, Mode};
use qlbm::qlbm_core::Renorm;
use qlbm::verify::{run_suite, Suite, DEFAULT_SEED};
use qlbm::BenchError;

#[derive(Parser)]
#[command(name = "qlbm", version, about = "Denoising-collision QLBM benchmarks and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark case and write CSV series, dumps and summary.json.
    Run(RunArgs),
    /// Run a verification suite and print a JSON report.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Compare cylinder QLBM runs for several reference velocities.
    SweepRef {
        #[command(flatten)]
        common: CaseArgs,
        /// Comma-separated x components of the reference velocity.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        ux: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        uy: f64,
    },
    /// Print the preset configuration of a case as TOML.
    Config {
        #[arg(long)]
        case: Case,
    },
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long)]
    case: Option<Case>,
    /// TOML file overriding preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    reimpose_inlet: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CaseArgs,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    renorm: Option<Renorm>,
    /// 0 disables dumps.
    #[arg(long)]
    dump_every: Option<usize>,
}

fn load(args: &CaseArgs) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = match (&args.config, args.case) {
        (Some(path), case) => ExperimentConfig::from_toml(case, &fs::read_to_string(path)?)?,
        (None, Some(case)) => ExperimentConfig::preset(case),
        (None, None) => return Err(BenchError::Config("either --case or --config is required".into())),
    };
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(r) = args.record_every {
        cfg.record_every = r;
    }
    if args.reimpose_inlet {
        match &mut cfg.params {
            CaseParams::Cylinder { reimpose_inlet, .. } => *reimpose_inlet = true,
            _ => return Err(BenchError::Config("--reimpose-inlet applies to the cylinder case only".into())),
        }
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<ExitCode, BenchError> {
    let mut cfg = load(&args.common)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(r) = args.renorm {
        cfg.renorm = r;
    }
    if let Some(d) = args.dump_every {
        cfg.dump_every = d;
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    let lanes: Vec<_> = out
        .series
        .iter()
        .map(|s| {
            serde_json::json!({
                "label": s.label,
                "diverged_at": s.diverged_at,
                "max_mass_drift": s.max_mass_drift(),
                "final": s.last(),
            })
        })
        .collect();
    let summary = serde_json::json!({
        "case": cfg.case(),
        "steps": cfg.steps,
        "peclet": out.peclet,
        "decay_time": out.decay_time,
        "lanes": lanes,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    if out.diverged() {
        eprintln!("error: simulation diverged");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(common: &CaseArgs, ux: &[f64], uy: f64) -> Result<ExitCode, BenchError> {
    let cfg = load(common)?;
    cfg.validate()?;
    let refs: Vec<Vec<f64>> = ux.iter().map(|&x| vec![x, uy]).collect();
    let out = compare_reference_velocities(&cfg, &refs)?;
    println!("{}", serde_json::to_string_pretty(&out.rows).expect("json"));
    if out.outcome.lane("clbm").is_some_and(|s| s.diverged_at.is_some()) {
        eprintln!("error: reference CLBM run diverged");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify { suite, seed } => {
            let report = run_suite(*suite, *seed);
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::SweepRef { common, ux, uy } => sweep(common, ux, *uy),
        Command::Config { case } => {
            print!("{}", ExperimentConfig::preset(*case).to_toml());
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
