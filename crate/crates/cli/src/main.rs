//! `ihgrpo`: equivalence verification, gradient checks, training runs and
//! trajectory analysis.
//!
//! Exit codes: 0 success, 1 a check exceeded its tolerance, 2 bad input.

mod output;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ihgrpo_core::gradcheck::{self, Injection};
use ihgrpo_core::tir::jsonl::{read_records, write_records};
use ihgrpo_core::tir::{corpus_stats, CorpusStats};
use ihgrpo_core::trainer::{evaluate_policy, train, write_metrics_csv, PolicyTable, TrainConfig};
use ihgrpo_core::verify;
use ihgrpo_core::FMode;
use serde::Serialize;
use serde_json::json;

use output::RunDir;

const DEFAULT_SEED: u64 = 20_240_917;
const EVAL_TASKS: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "ihgrpo", version, about = "Implicit hierarchical GRPO toolkit")]
struct Cli {
    /// Directory for reports and artifacts.
    #[arg(long, global = true, env = "IHGRPO_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One-step and iterated equivalence sweeps.
    Verify(VerifyArgs),
    /// Finite-difference checks of the three loss gradients.
    Gradcheck(GradcheckArgs),
    /// Run the tabular training loop.
    Train(TrainArgs),
    /// Tool-usage statistics of a trajectory file.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Instances per case family.
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value = "exact")]
    f_mode: FMode,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Fix every instance's advantage instead of drawing it.
    #[arg(long, allow_hyphen_values = true)]
    advantage: Option<f64>,
    #[arg(long, default_value_t = 50)]
    iterated_instances: usize,
    #[arg(long, default_value_t = 100)]
    iterated_steps: usize,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Negate one analytical gradient (negative control for tests).
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    max_turns: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// JSONL trajectory file.
    trajectories: PathBuf,
}

enum Status {
    Success,
    OutOfTolerance,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::OutOfTolerance) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Verify(a) => cmd_verify(&cli.out_dir, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli.out_dir, a),
        Command::Train(a) => cmd_train(&cli.out_dir, a),
        Command::Analyze(a) => cmd_analyze(&cli.out_dir, a),
    }
}

fn status(pass: bool) -> Status {
    if pass {
        Status::Success
    } else {
        Status::OutOfTolerance
    }
}

fn cmd_verify(out_dir: &Path, args: &VerifyArgs) -> Result<Status> {
    anyhow::ensure!(args.instances >= 1, "--instances must be at least 1");
    anyhow::ensure!(args.tolerance >= 0.0, "--tolerance must be non-negative");
    let mut run = RunDir::create(out_dir, "verify", json!(args), args.seed, &["verify_report.json"])?;
    let one_step = verify::one_step_sweep_with(args.seed, args.instances, args.f_mode, args.advantage)?;
    let iterated = if args.iterated_instances > 0 && args.iterated_steps > 0 {
        Some(verify::iterated_sweep(
            args.seed,
            args.iterated_instances,
            args.iterated_steps,
            args.f_mode,
        )?)
    } else {
        None
    };
    let one_step_worst = one_step.worst_residual();
    let iterated_worst = iterated.as_ref().map_or(0.0, |s| s.worst.max_residual());
    let pass = one_step_worst <= args.tolerance && iterated_worst <= args.tolerance;
    let offending = if one_step_worst > args.tolerance {
        let families = [&one_step.exec_token, &one_step.continue_token];
        families
            .into_iter()
            .filter_map(|f| f.worst_instance.as_ref())
            .max_by(|a, b| a.report.max_residual().total_cmp(&b.report.max_residual()))
            .cloned()
    } else {
        None
    };
    let report = json!({
        "pass": pass,
        "tolerance": args.tolerance,
        "one_step": one_step,
        "one_step_worst": one_step_worst,
        "iterated": iterated,
        "iterated_worst": iterated_worst,
        "offending_instance": offending,
    });
    let path = run.write_json("verify_report.json", &report)?;
    println!(
        "{}: one-step worst {one_step_worst:.3e}, iterated worst {iterated_worst:.3e}, tolerance {:e} ({})",
        if pass { "ok" } else { "FAIL" },
        args.tolerance,
        path.display()
    );
    if let Some(inst) = offending {
        eprintln!("offending instance: {}", serde_json::to_string(&inst)?);
    }
    Ok(status(pass))
}

fn cmd_gradcheck(out_dir: &Path, args: &GradcheckArgs) -> Result<Status> {
    anyhow::ensure!(args.tolerance >= 0.0, "--tolerance must be non-negative");
    let mut run = RunDir::create(out_dir, "gradcheck", json!(args), args.seed, &["gradcheck_report.json"])?;
    let injection = Injection {
        sign_flip: args.inject_sign_flip,
    };
    let summary = gradcheck::sweep(args.seed, args.instances, injection)?;
    let worst = summary.worst.max();
    let pass = worst <= args.tolerance;
    let report = json!({
        "pass": pass,
        "tolerance": args.tolerance,
        "summary": summary,
    });
    let path = run.write_json("gradcheck_report.json", &report)?;
    println!(
        "{}: worst relative error {worst:.3e} over {} instances, tolerance {:e} ({})",
        if pass { "ok" } else { "FAIL" },
        summary.instances,
        args.tolerance,
        path.display()
    );
    Ok(status(pass))
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.group_size {
        cfg.group_size = v;
    }
    if let Some(v) = args.max_turns {
        cfg.max_turns = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    eval_tasks: usize,
    baseline_eval_reward: f64,
    final_eval_reward: f64,
    final_mean_reward: Option<f64>,
    policy_rows: usize,
}

fn cmd_train(out_dir: &Path, args: &TrainArgs) -> Result<Status> {
    let cfg = resolve_config(args)?;
    let mut run = RunDir::create(
        out_dir,
        "train",
        serde_json::to_value(&cfg)?,
        cfg.seed,
        &["metrics.csv", "trajectories.jsonl", "train_summary.json"],
    )?;
    let out = train(&cfg)?;
    let mut csv = Vec::new();
    write_metrics_csv(&out.metrics, &mut csv)?;
    run.write("metrics.csv", &csv)?;
    let mut jsonl = Vec::new();
    write_records(&mut jsonl, &out.trajectory_log)?;
    run.write("trajectories.jsonl", &jsonl)?;
    let summary = TrainSummary {
        steps: out.metrics.len(),
        eval_tasks: EVAL_TASKS,
        baseline_eval_reward: evaluate_policy(&PolicyTable::new(), cfg.limits(), cfg.seed, EVAL_TASKS),
        final_eval_reward: evaluate_policy(&out.policy, cfg.limits(), cfg.seed, EVAL_TASKS),
        final_mean_reward: out.metrics.last().map(|m| m.mean_reward),
        policy_rows: out.policy.len(),
    };
    run.write_json("train_summary.json", &summary)?;
    println!(
        "trained {} steps: eval reward {:.3} -> {:.3} ({})",
        summary.steps,
        summary.baseline_eval_reward,
        summary.final_eval_reward,
        run.path("metrics.csv").display()
    );
    Ok(Status::Success)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stats_csv(s: &CorpusStats) -> String {
    let bins: Vec<String> = (0..s.position_histogram.len()).map(|k| format!("pos_bin_{k}")).collect();
    let counts: Vec<String> = s.position_histogram.iter().map(|c| c.to_string()).collect();
    format!(
        "trajectories,code_blocks,delayed_blocks,delayed_rate,mean_executions,void_turn_fraction,{}\n{},{},{},{},{},{},{}\n",
        bins.join(","),
        s.trajectories,
        s.code_blocks,
        s.delayed_blocks,
        opt(s.delayed_rate),
        opt(s.mean_executions),
        opt(s.void_turn_fraction),
        counts.join(",")
    )
}

fn cmd_analyze(out_dir: &Path, args: &AnalyzeArgs) -> Result<Status> {
    let mut run = RunDir::create(
        out_dir,
        "analyze",
        json!({ "trajectories": args.trajectories }),
        0,
        &["stats.csv"],
    )?;
    let file = File::open(&args.trajectories)
        .with_context(|| format!("opening {}", args.trajectories.display()))?;
    let records = read_records(BufReader::new(file))
        .with_context(|| format!("in {}", args.trajectories.display()))?;
    let stats = corpus_stats(records.iter().map(|r| r.steps.as_slice()));
    let path = run.write("stats.csv", stats_csv(&stats).as_bytes())?;
    println!(
        "{} trajectories, {} code blocks, delayed rate {} ({})",
        stats.trajectories,
        stats.code_blocks,
        stats.delayed_rate.map_or("n/a".to_string(), |d| format!("{d:.4}")),
        path.display()
    );
    Ok(Status::Success)
}
