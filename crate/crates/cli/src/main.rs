//! Command-line driver for the AW-PSP simulator.
//!
//! Subcommands: `gen-traces` (synthesize or ingest availability traces),
//! `simulate` (run a config across its seeds and write logs + summaries),
//! `compare` (paired metric deltas between two run directories), and
//! `verify-theory` (the analytical-bound verification suite). All commands
//! are deterministic given their arguments and seeds; the exit code is 0
//! only on full success. `AWPSP_OUT_DIR` overrides output directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use awpsp::config::{ExperimentConfig, PatternConfig, TraceSource};
use awpsp::report;
use awpsp::selection::PolicyKind;
use awpsp::sim;
use awpsp::theory;
use awpsp::trace;

#[derive(Parser)]
#[command(name = "awpsp", version, about = "Trace-driven AW-PSP / Classic-PSP simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic availability traces or ingest a device-event CSV.
    GenTraces(GenTracesArgs),
    /// Run an experiment config across all of its seeds.
    Simulate(SimulateArgs),
    /// Paired metric deltas between two run directories.
    Compare(CompareArgs),
    /// Run the analytical-bound verification suite.
    VerifyTheory(VerifyTheoryArgs),
}

#[derive(Args)]
struct GenTracesArgs {
    /// Ingest this `device_id,timestamp,kind` CSV instead of synthesizing.
    #[arg(long)]
    ingest: Option<PathBuf>,
    /// Step width in seconds for ingestion.
    #[arg(long, default_value_t = 60)]
    step_seconds: u64,
    /// Number of nodes to synthesize.
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    /// Trace length in steps.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Nodes per correlated group.
    #[arg(long, default_value_t = 5)]
    group_size: usize,
    /// Per-node per-step bit-flip probability.
    #[arg(long, default_value_t = 0.02)]
    flip_prob: f64,
    /// Markov stay-on probability of the group base pattern.
    #[arg(long, default_value_t = 0.95)]
    stay_on: f64,
    /// Markov stay-off probability of the group base pattern.
    #[arg(long, default_value_t = 0.88)]
    stay_off: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Histogram bin count.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Output directory.
    #[arg(long, default_value = "traces-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the selection policy from the config.
    #[arg(long)]
    policy: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// First run directory (e.g. the AW-PSP runs).
    #[arg(long)]
    a: PathBuf,
    /// Second run directory (e.g. the Classic-PSP runs).
    #[arg(long)]
    b: PathBuf,
    /// Also write the deltas as CSV to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyTheoryArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run only the named checks (repeatable); defaults to all.
    #[arg(long = "check")]
    checks: Vec<String>,
}

fn out_dir_override(requested: &Path) -> PathBuf {
    match std::env::var_os("AWPSP_OUT_DIR") {
        Some(base) => PathBuf::from(base).join(requested),
        None => requested.to_path_buf(),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTraces(args) => cmd_gen_traces(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::VerifyTheory(args) => cmd_verify_theory(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn cmd_gen_traces(args: GenTracesArgs) -> Result<()> {
    let out = out_dir_override(&args.out);
    let traces = match &args.ingest {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let outcome = trace::ingest_csv(file, args.step_seconds)?;
            println!(
                "ingested {} devices over {} steps",
                outcome.traces.len(),
                outcome.horizon_steps
            );
            outcome.traces
        }
        None => {
            let source = TraceSource::Synthesize {
                steps: args.steps,
                group_size: args.group_size,
                flip_prob: args.flip_prob,
                pattern: PatternConfig::Markov {
                    stay_on: args.stay_on,
                    stay_off: args.stay_off,
                },
            };
            let specs = source.group_specs(args.nodes);
            trace::synthesize_traces(args.steps, &specs, args.seed)?
        }
    };
    let written = report::write_trace_bundle(&out, &traces, args.bins)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_policy(name: &str) -> Result<PolicyKind> {
    match name {
        "aw_psp" => Ok(PolicyKind::AwPsp),
        "classic_psp" => Ok(PolicyKind::ClassicPsp),
        other => bail!("unknown policy {other:?}; expected aw_psp or classic_psp"),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(policy) = &args.policy {
        config.selection.kind = parse_policy(policy)?;
    }
    config.validate()?;

    let requested = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", config.experiment.name)));
    let out = out_dir_override(&requested);
    std::fs::create_dir_all(&out)?;

    // Mark the run in progress so interrupted runs are detectable.
    let mut meta = report::RunMeta {
        name: config.experiment.name.clone(),
        status: "running".to_string(),
        policies: vec![config.selection.kind.to_string()],
        seeds: config.experiment.seeds.clone(),
        rounds: config.experiment.rounds,
    };
    report::write_run_meta(&out, &meta)?;
    std::fs::write(out.join("config.toml"), toml::to_string_pretty(&config)?)?;

    let logs = sim::run_suite(&config)?;
    for log in &logs {
        let path = report::write_run_log(&out, log)?;
        println!("wrote {}", path.display());
    }
    report::write_summary_csv(&out, &config.experiment.name, &logs)?;
    report::write_per_class_csv(&out, config.task.n_classes, &logs)?;
    report::write_fairness_csv(&out, &logs)?;
    if config.export_correlation {
        report::write_correlation_csvs(&out, &logs)?;
    }
    meta.status = "complete".to_string();
    report::write_run_meta(&out, &meta)?;
    println!(
        "completed {} seeds x {} rounds ({})",
        config.experiment.seeds.len(),
        config.experiment.rounds,
        config.selection.kind
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let report = report::compare_dirs(&args.a, &args.b)?;
    print!("{report}");
    if let Some(path) = args.out {
        let path = out_dir_override(&path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify_theory(args: VerifyTheoryArgs) -> Result<()> {
    let outcomes = theory::run_suite(args.seed, &args.checks)?;
    println!("theory verification (seed {}):", args.seed);
    let mut all_passed = true;
    for o in &outcomes {
        println!(
            "  {} {:<22} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.summary
        );
        all_passed &= o.passed;
    }
    if !all_passed {
        bail!("one or more checks failed");
    }
    Ok(())
}
