use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icl_attn_lab::experiment::presets::{self, PresetParams};
use icl_attn_lab::experiment::{run_to_dir, ExperimentSpec};
use icl_attn_lab::Result;

#[derive(Parser)]
#[command(
    name = "icl-attn-lab",
    version,
    about = "Monte-Carlo experiments for in-context regression with softmax attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON experiment spec.
    Run(RunArgs),
    /// List presets whose name contains FILTER.
    List {
        #[arg(default_value = "")]
        filter: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Preset name (see `list`).
    #[arg(required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment spec in JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo repetitions per row (0 computes theory only).
    #[arg(long)]
    reps: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long = "sigma-x2")]
    sigma_x2: Option<f64>,
    #[arg(long = "sigma-eps")]
    sigma_eps: Option<f64>,
    /// Prompt length.
    #[arg(long = "D")]
    prompt_len: Option<usize>,
    /// Input dimension.
    #[arg(long = "d")]
    dim: Option<usize>,
}

fn specs(args: &RunArgs) -> Result<Vec<ExperimentSpec>> {
    let mut specs = match (&args.config, &args.preset) {
        (Some(path), _) => vec![ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?],
        (None, Some(name)) => presets::build(
            name,
            &PresetParams {
                v: args.v,
                c: args.c,
                sigma_x2: args.sigma_x2,
                sigma_eps: args.sigma_eps,
                prompt_len: args.prompt_len,
                d: args.dim,
            },
        )?,
        (None, None) => unreachable!("clap requires a preset or --config"),
    };
    for s in &mut specs {
        if let Some(seed) = args.seed {
            s.master_seed = seed;
        }
        if let Some(reps) = args.reps {
            s.n_reps = reps;
        }
        s.validate()?;
    }
    Ok(specs)
}

fn run(args: RunArgs) -> Result<bool> {
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| icl_attn_lab::Error::Experiment(e.to_string()))?;
    }
    let mut all_passed = true;
    for spec in specs(&args)? {
        let (outcome, paths) = run_to_dir(&spec, &args.out)?;
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        for r in outcome.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!(
                "row {}={}: {}",
                spec.sweep.axis.name(),
                r.value,
                r.error.as_deref().unwrap_or("")
            );
        }
        let status = match &outcome.gate {
            None => "no gate".to_string(),
            Some(g) if g.passed => "gate passed".to_string(),
            Some(g) => {
                all_passed = false;
                format!("gate FAILED: {}", g.failures.join("; "))
            }
        };
        println!(
            "{}: {} rows in {:.1}s, {status}",
            spec.name,
            outcome.rows.len(),
            outcome.wall_time_s
        );
        for p in paths {
            println!("  wrote {}", p.display());
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::List { filter } => {
            println!("{:<18} {:<10} reproduces", "preset", "runtime");
            for p in presets::list(&filter) {
                println!("{:<18} {:<10} {}", p.name, p.runtime, p.reproduces);
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
