mod opts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use userl_core::lab::{compare_settings, LabConfig};
use userl_core::orchestrator::{
    effective_turns, export_advantages, persist_run, read_jsonl, replay_trajectory, run_episode_observed, run_plan,
    write_jsonl_atomic, EpisodeObserver, RolloutPlan, TrajectoryRecord,
};
use userl_core::reward::{ShapingSpec, TerminatedReason, Trajectory, TurnRecord, TurnShaping};
use userl_core::usersim::human::ws::WsHub;
use userl_core::usersim::HumanBridge;
use userl_core::{Ports, TaskSet};

use crate::opts::{seconds, RunOpts};

#[derive(Parser, Debug)]
#[command(name = "userl", version, about = "Multi-turn user-centric gyms, rollouts and advantage export")]
struct Cli {
    /// TOML file whose keys mirror the long flags (`group-size = 8`, `[env]` table for gym settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample rollout groups (policy temperature 1.0) and write trajectories, advantages and metrics.
    Rollout(RunOpts),
    /// Evaluate a policy (temperature 0.0, one episode per task unless --group-size is set).
    Eval(RunOpts),
    /// Recompute advantages for recorded trajectories under a shaping setting.
    Advantages {
        /// trajectories.jsonl from an earlier run.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Serve one episode over the human bridge; a person at a console plays the user.
    HumanServe {
        /// Task to run; defaults to the first selected task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: String,
        /// Session id; defaults to the task id.
        #[arg(long)]
        session: Option<String>,
        /// Seconds to wait for a console to join.
        #[arg(long, default_value_t = 600)]
        connect_timeout: u64,
        /// Seconds the human has for each reply.
        #[arg(long, default_value_t = 300)]
        reply_timeout: u64,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Re-run recorded choices through fresh sessions and compare rewards bit for bit.
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Tabular policy experiments on the synthetic chain environment.
    #[command(subcommand)]
    Lab(LabCommand),
}

#[derive(Subcommand, Debug)]
enum LabCommand {
    /// Train each shaping setting on several seeds and compare learning curves.
    Compare {
        /// Comma-separated `turn/traj` settings.
        #[arg(long, default_value = "equalized/sum,equalized/r2g,em/r2g,r2g/r2g")]
        settings: String,
        #[arg(long)]
        epochs: Option<usize>,
        /// Number of seeds (0..n).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Output directory for curves.csv, summary.txt and report.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = cli.config.as_deref().map(RunOpts::load_config).transpose()?.unwrap_or_default();
    match cli.command {
        Command::Rollout(o) => rollout(o.merge(file), 1.0, RolloutPlan::default().group_size),
        Command::Eval(o) => rollout(o.merge(file), 0.0, 1),
        Command::Advantages { input, opts } => advantages(&input, opts.merge(file)),
        Command::HumanServe { task, listen, session, connect_timeout, reply_timeout, opts } => {
            let opts = opts.merge(file);
            human_serve(&opts, task, &listen, session, seconds(connect_timeout), seconds(reply_timeout))
        }
        Command::Replay { input, opts } => replay(&input, opts.merge(file)),
        Command::Lab(LabCommand::Compare {
            settings,
            epochs,
            seeds,
            group_size,
            learning_rate,
            epsilon,
            gamma,
            out,
            sequential,
        }) => {
            let d = LabConfig::default();
            let config = LabConfig {
                epochs: epochs.unwrap_or(d.epochs),
                group_size: group_size.unwrap_or(d.group_size),
                learning_rate: learning_rate.unwrap_or(d.learning_rate),
                epsilon: epsilon.unwrap_or(d.epsilon),
                ..d
            };
            lab_compare(&settings, gamma, seeds, config, &out, sequential)
        }
    }
}

fn rollout(opts: RunOpts, temperature: f64, group_size: usize) -> Result<ExitCode> {
    let plan = opts.plan(temperature, group_size)?;
    let out = opts.out_dir()?;
    let set = opts.task_set()?;
    let tasks = opts.selected_tasks(&set)?;
    let policy = opts.policy()?;
    let ports = opts.ports()?;
    let started = Instant::now();
    log::info!("{} tasks x {} episodes, shaping {}", tasks.len(), plan.group_size, plan.shaping.label());
    let results = run_plan(&plan, policy.as_ref(), &ports, &tasks);
    let (groups, transcripts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let transcripts: Vec<_> = transcripts.into_iter().flatten().collect();
    let summary = persist_run(out, &plan, &groups, &transcripts, opts.allow_aborted, |id| set.get(id))?;
    print!("{}", summary.metrics.to_table());
    println!(
        "{} trajectories, {} advantage records, {} groups refused, {:.1}s -> {}",
        summary.trajectories,
        summary.advantage_records,
        summary.refused_groups.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    if summary.leaks > 0 {
        eprintln!("error: ground truth appeared in {} messages shown to the policy", summary.leaks);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn advantages(input: &Path, opts: RunOpts) -> Result<ExitCode> {
    let spec = opts.shaping()?;
    let out =
        opts.out.clone().unwrap_or_else(|| input.with_file_name(format!("advantages.{}.jsonl", file_label(&spec))));
    let records: Vec<TrajectoryRecord> = read_jsonl(input).with_context(|| format!("reading {}", input.display()))?;
    let groups = TrajectoryRecord::regroup(records);
    let export = export_advantages(&groups, &spec, opts.allow_aborted);
    for (task, why) in &export.refused {
        eprintln!("skipped {task}: {why}");
    }
    write_jsonl_atomic(&out, &export.records)?;
    println!("{} records from {} groups ({}) -> {}", export.records.len(), groups.len(), spec.label(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn file_label(spec: &ShapingSpec) -> String {
    spec.label().replace('/', "-")
}

/// Pushes rewards to the console as turns complete.
struct BridgeObserver<'a>(&'a HumanBridge);

impl EpisodeObserver for BridgeObserver<'_> {
    fn on_turn(&self, record: &TurnRecord) {
        if let Err(e) = self.0.turn_reward(record.turn_index, record.raw_reward) {
            log::warn!("turn_reward not delivered: {e}");
        }
    }
}

fn session_metrics(t: &Trajectory) -> serde_json::Value {
    json!({
        "reward_sum": t.reward_sum(),
        "effective_turns": effective_turns(t),
        "turns": t.turns.len(),
        "terminated_reason": t.terminated_reason.as_str(),
    })
}

fn human_serve(
    opts: &RunOpts,
    task_id: Option<String>,
    listen: &str,
    session: Option<String>,
    connect_timeout: Duration,
    reply_timeout: Duration,
) -> Result<ExitCode> {
    let set = opts.task_set()?;
    let task = match task_id {
        Some(id) => set.get(&id).with_context(|| format!("unknown task `{id}`"))?.clone(),
        None => opts.selected_tasks(&set)?.remove(0),
    };
    let mut plan = opts.plan(0.0, 1)?;
    plan.group_size = 1;
    let policy = opts.policy()?;
    let session = session.unwrap_or_else(|| task.task_id.clone());
    let hub = WsHub::bind(listen).with_context(|| format!("binding {listen}"))?;
    let bridge = Arc::new(HumanBridge::new(session.clone(), hub.transport(&session), reply_timeout));
    bridge.start(task.gym, &task.task_id, Some(task.payload.clone()))?;
    println!(
        "session {session} ({}, task {}) waiting at {}",
        task.gym.display_name(),
        task.task_id,
        hub.url_for(&session)
    );

    let deadline = Instant::now() + connect_timeout;
    while !hub.is_connected(&session) {
        if Instant::now() > deadline {
            bail!("no console joined within {}s", connect_timeout.as_secs());
        }
        thread::sleep(Duration::from_millis(50));
    }
    let mut ports = Ports::new(bridge.clone());
    if let Some(s) = opts.search()? {
        ports = ports.with_search(s);
    }
    let episode = run_episode_observed(&plan, policy.as_ref(), &ports, &task, 0, &BridgeObserver(&bridge));
    let t = &episode.trajectory;
    bridge.end(session_metrics(t))?;
    println!(
        "{}: {} turns, reward sum {:.4}, ended by {}",
        session,
        t.turns.len(),
        t.reward_sum(),
        t.terminated_reason.as_str()
    );
    if let Some(out) = &opts.out {
        let group = userl_core::reward::RolloutGroup { task_id: task.task_id.clone(), trajectories: vec![t.clone()] };
        persist_run(out, &plan, &[group], std::slice::from_ref(&episode.transcript), true, |id| set.get(id))?;
    }
    // Let the console receive session_end before the hub goes away.
    thread::sleep(Duration::from_millis(200));
    Ok(if t.terminated_reason == TerminatedReason::Aborted { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn replay(input: &Path, opts: RunOpts) -> Result<ExitCode> {
    let set: TaskSet = opts.task_set()?;
    let env = opts.env_config();
    let ports = opts.ports()?;
    let records: Vec<TrajectoryRecord> = read_jsonl(input).with_context(|| format!("reading {}", input.display()))?;
    let (mut matched, mut skipped, mut mismatched) = (0, 0, 0);
    for r in &records {
        let t = &r.trajectory;
        if t.terminated_reason == TerminatedReason::Aborted {
            skipped += 1;
            continue;
        }
        let task = set.get(&t.task_id).with_context(|| format!("unknown task `{}`", t.task_id))?;
        match replay_trajectory(t, task, &env, ports.clone()) {
            Ok(check) if check.matches() => matched += 1,
            Ok(check) => {
                mismatched += 1;
                println!(
                    "MISMATCH {} #{}: recorded {:?} replayed {:?}",
                    t.task_id, r.trajectory_index, check.recorded, check.replayed
                );
            }
            Err(e) => {
                mismatched += 1;
                println!("FAILED {} #{}: {e}", t.task_id, r.trajectory_index);
            }
        }
    }
    println!("{matched} matched, {mismatched} mismatched, {skipped} aborted skipped");
    Ok(if mismatched == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn lab_compare(
    settings: &str,
    gamma: Option<f64>,
    seeds: u64,
    config: LabConfig,
    out: &Path,
    sequential: bool,
) -> Result<ExitCode> {
    let specs: Vec<ShapingSpec> = settings
        .split(',')
        .map(|s| {
            let mut spec: ShapingSpec = s.trim().parse().map_err(anyhow::Error::msg)?;
            if let Some(g) = gamma {
                spec.gamma = g;
            }
            spec.validate()?;
            Ok(spec)
        })
        .collect::<Result<_>>()?;
    if specs.iter().any(|s| s.turn == TurnShaping::Naive) {
        eprintln!("note: naive settings use raw turn rewards as advantages input; expect unstable or stalled runs");
    }
    let seeds: Vec<u64> = (0..seeds).collect();
    let exec = if sequential { userl_core::Exec::Sequential } else { userl_core::Exec::default() };
    let started = Instant::now();
    let report = compare_settings(&specs, &seeds, &config, exec)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("curves.csv"), report.to_csv())?;
    let table = report.summary_table();
    std::fs::write(out.join("summary.txt"), &table)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report.summaries())?)?;
    print!("{table}");
    println!("{} runs in {:.2}s -> {}", report.runs.len(), started.elapsed().as_secs_f64(), out.display());
    Ok(ExitCode::SUCCESS)
}
