use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use armgym::arm::ArmGeometry;
use armgym::episode::{GoalRepresentation, GoalSpec};
use armgym::eval::{evaluate_policies, EvalReport};
use armgym::io::{load_queries, save_queries};
use armgym::learn::{bc_train, AnyPolicy, BcHyper, MlpPolicy};
use armgym::planner::{collect_demos, load_demos, save_demos, verify_dataset, PlannerParams};
use armgym::server::{Server, ServerConfig, DEFAULT_ADDR, DEFAULT_MAX_SESSIONS};
use armgym::tasks::{sample_query_set, task_spec};
use armgym::Result;

#[derive(Parser)]
#[command(name = "armgym", version, about = "Analytic 7-DoF arm motion-planning environment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a reproducible query file for a task.
    SampleQueries {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan, verify and store demonstrations.
    GenerateDemos {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "config")]
        goal_rep: GoalRepresentation,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay every demonstration of a dataset.
    VerifyDemos { file: PathBuf },
    /// Behavioral cloning on a demo file.
    TrainBc {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value = "config")]
        goal_rep: GoalRepresentation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "256,256")]
        hidden: Vec<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success rate of a policy (`go_to_goal`, `zero` or a checkpoint).
    Evaluate {
        /// Repeat once per training seed; a single policy is reused for every seed.
        #[arg(long, required = true)]
        policy: Vec<String>,
        #[arg(long)]
        task: String,
        /// Query file; sampled from --query-seed when absent.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        query_seed: u64,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Goal representation for baselines; checkpoints carry their own.
        #[arg(long, default_value = "config")]
        goal_rep: GoalRepresentation,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve environments over line-delimited JSON.
    Serve {
        #[arg(long, env = "ARMGYM_ADDR", default_value = DEFAULT_ADDR)]
        addr: String,
        #[arg(long, env = "ARMGYM_MAX_SESSIONS", default_value_t = DEFAULT_MAX_SESSIONS)]
        max_sessions: usize,
        #[arg(long, env = "ARMGYM_SENSOR_RAYS", default_value_t = armgym::sensors::DEFAULT_RAYS_PER_SENSOR)]
        sensor_rays: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SampleQueries { task, n, seed, out } => {
            let set = sample_query_set(&task_spec(&task)?, n, seed)?;
            save_queries(&out, &set)?;
            println!("wrote {} queries for {task} to {}", set.queries.len(), out.display());
        }
        Cmd::GenerateDemos { task, n, seed, goal_rep, out } => {
            let spec = task_spec(&task)?.with_goal_spec(GoalSpec::new(goal_rep));
            let (ds, report) = collect_demos(&spec, n, seed, &PlannerParams::default())?;
            save_demos(&out, &ds)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            println!("wrote {} demos to {}", ds.demos.len(), out.display());
        }
        Cmd::VerifyDemos { file } => {
            let ds = load_demos(&file, false)?;
            let task = task_spec(&ds.task)?.with_episode(ds.episode);
            verify_dataset(&task, &ds)?;
            println!("{}: {} demos verified", file.display(), ds.demos.len());
        }
        Cmd::TrainBc { demos, goal_rep, seed, hidden, epochs, lr, out } => {
            let ds = load_demos(&demos, false)?;
            let spec = GoalSpec { representation: goal_rep, ..ds.episode.goal_spec };
            let d = BcHyper::default();
            let hyper = BcHyper {
                epochs: epochs.unwrap_or(d.epochs),
                learning_rate: lr.unwrap_or(d.learning_rate),
                seed,
                ..d
            };
            let net = MlpPolicy::new(spec, &hidden, seed)?;
            let r = bc_train(&ds.demos, &spec, ArmGeometry::franka(), net, &hyper)?;
            for (i, (l, s)) in r.loss_curve.iter().zip(&r.smoothed).enumerate() {
                println!("epoch {:>4}  loss {l:.6}  smoothed {s:.6}", i + 1);
            }
            r.policy.save(&out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Evaluate { policy, task, queries, n, query_seed, seeds, goal_rep, out } => {
            let policies = policy.iter().map(|p| AnyPolicy::load(p)).collect::<Result<Vec<_>>>()?;
            let spec = policies[0].goal_spec().unwrap_or(GoalSpec::new(goal_rep));
            let t = task_spec(&task)?.with_goal_spec(spec);
            let qs = match queries {
                Some(f) => load_queries(f)?.queries,
                None => sample_query_set(&t, n, query_seed)?.queries,
            };
            let k = seeds.max(policies.len());
            let list: Vec<(u64, &AnyPolicy)> = (0..k).map(|i| (i as u64, &policies[i % policies.len()])).collect();
            let report = evaluate_policies(&list, &t, &qs)?;
            println!("{}", EvalReport::TABLE_HEADER);
            println!("{}", report.table_row());
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
        }
        Cmd::Serve { addr, max_sessions, sensor_rays } => {
            let server = Server::bind(addr.as_str(), ServerConfig { max_sessions, default_rays: sensor_rays })?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
