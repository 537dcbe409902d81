//! `guikernel` command-line front end.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use guikernel::ensemble::{DecisionRound, Proposal};
use guikernel::experience::{read_log, write_log, ReplayMode, ReplayResult};
use guikernel::grpo::{train, GrpoConfig};
use guikernel::harness::{read_trace, trace_metrics, write_trace, TraceRecord, World};
use guikernel::planner::{run_plan, ExecutorError, Payload, PlanFile, PlanOutcome};

#[derive(Parser)]
#[command(name = "guikernel", version, about = "Multi-agent GUI automation kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task on a scenario (bundled name or JSON path).
    Run {
        scenario: String,
        /// Instruction to run; defaults to the scenario plan or first task.
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        device: Option<String>,
        #[arg(long, default_value_t = 3)]
        ensemble: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Run the instruction this many times in one world.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Always take the GUI route.
        #[arg(long)]
        no_function: bool,
        /// Trace output (JSON lines); stdout when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the experience pool to this log after the runs.
        #[arg(long)]
        experience: Option<PathBuf>,
    },
    /// Replay an experience log against a scenario.
    Replay {
        log: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        device: Option<String>,
        /// Skip the per-step digest check.
        #[arg(long)]
        raw: bool,
    },
    /// Execute a plan file and print its event log.
    Plan {
        planfile: PathBuf,
        /// Run subtasks on this scenario's devices instead of a dry run.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Train the toy navigation task and print the metrics CSV.
    GrpoTrain {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one decision round over a JSON array of proposals.
    VoteDemo { proposals: PathBuf },
    /// Hit rate, efficiency gain and step counts from a trace.
    Metrics { tracefile: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit_trace(records: &[TraceRecord], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_trace(records, File::create(p)?)?,
        None => write_trace(records, io::stdout().lock())?,
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            instruction,
            device,
            ensemble,
            seed,
            repeat,
            no_function,
            trace,
            experience,
        } => {
            if ensemble == 0 {
                bail!("--ensemble must be at least 1");
            }
            let mut world = World::open(&scenario)?;
            let mut cfg = world.pipeline_config();
            cfg.ensemble = ensemble;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.select_function = !no_function;
            let instruction = match instruction {
                Some(i) => Some(i),
                None if world.plan().is_some() => None,
                None => Some(
                    world
                        .tasks()
                        .first()
                        .context("scenario has no tasks")?
                        .instruction
                        .clone(),
                ),
            };
            let mut records = Vec::new();
            let mut all_ok = true;
            for _ in 0..repeat.max(1) {
                match &instruction {
                    Some(instr) => {
                        let dev = match &device {
                            Some(d) => d.clone(),
                            None => world.task_device(instr)?,
                        };
                        let out = world.run_pipeline(&dev, instr, &cfg)?;
                        eprintln!(
                            "run {}: status={} route={:?} steps={} ticks={} policy_calls={}",
                            out.run,
                            out.status.as_str(),
                            out.route,
                            out.steps(),
                            out.duration(),
                            out.policy_invocations
                        );
                        all_ok &= out.status == guikernel::action::Status::Finish;
                        records.extend(out.trace);
                    }
                    None => {
                        let out = world.run_cross_device(&cfg)?;
                        eprintln!("plan: {:?}", out.plan.outcome);
                        all_ok &= out.plan.outcome == PlanOutcome::Completed;
                        records.extend(out.trace());
                    }
                }
            }
            emit_trace(&records, trace.as_deref())?;
            if let Some(p) = experience {
                write_log(world.experience.entries(), File::create(&p)?)?;
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Replay {
            log,
            scenario,
            device,
            raw,
        } => {
            let entries = read_log(BufReader::new(File::open(&log)?))?;
            let mut world = World::open(&scenario)?;
            let cfg = world.pipeline_config();
            let mode = if raw { ReplayMode::Raw } else { ReplayMode::Validated };
            let mut diverged = false;
            let mut stdout = io::stdout().lock();
            for e in &entries {
                let dev = match &device {
                    Some(d) => d.clone(),
                    None => world.task_device(&e.query)?,
                };
                let (result, _) = world.replay_entry(&dev, e, mode, &cfg)?;
                let line = match result {
                    ReplayResult::Completed { final_digest } => serde_json::json!({
                        "q": e.query, "result": "completed", "final_digest": final_digest.to_string(),
                    }),
                    ReplayResult::Diverged { step, expected, actual } => {
                        diverged = true;
                        serde_json::json!({
                            "q": e.query, "result": "diverged", "step": step,
                            "expected": expected.to_string(), "actual": actual.to_string(),
                        })
                    }
                };
                writeln!(stdout, "{line}")?;
            }
            Ok(if diverged { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Plan { planfile, scenario } => {
            let file: PlanFile = serde_json::from_str(&read(&planfile)?)?;
            let result = match scenario {
                Some(s) => {
                    let mut world = World::open(&s)?;
                    world.set_plan(file)?;
                    let cfg = world.pipeline_config();
                    world.run_cross_device(&cfg)?.plan
                }
                None => {
                    let plan = file.into_plan()?;
                    let mut dry = |_: &guikernel::planner::Endpoint,
                                   _: &guikernel::planner::Subtask,
                                   _: &Payload|
                     -> std::result::Result<Payload, ExecutorError> {
                        Ok(Payload::new())
                    };
                    run_plan(&plan, &mut dry)
                }
            };
            write!(io::stdout().lock(), "{}", result.log_jsonl())?;
            eprintln!("outcome: {:?}, bus messages: {}", result.outcome, result.bus.len());
            Ok(if result.outcome == PlanOutcome::Completed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::GrpoTrain { config, out } => {
            let cfg = GrpoConfig::from_json(&read(&config)?)?;
            let report = train(&cfg)?;
            match out {
                Some(p) => report.write_csv(File::create(p)?)?,
                None => report.write_csv(io::stdout().lock())?,
            }
            eprintln!(
                "expected success {:.4} -> {:.4}",
                report.initial_expected_reward,
                report.final_expected_reward()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::VoteDemo { proposals } => {
            let list: Vec<Proposal> = serde_json::from_str(&read(&proposals)?)?;
            let round = DecisionRound::run(list)?;
            writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&round)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics { tracefile } => {
            let records = read_trace(BufReader::new(File::open(&tracefile)?))?;
            write!(io::stdout().lock(), "{}", trace_metrics(&records).to_csv())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
