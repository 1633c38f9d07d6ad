//! Behavioral cloning from planner demonstrations, then a quick evaluation.
//!
//! cargo run --release --example train_bc -- [n_demos] [epochs]
//!
//! The defaults finish in about 20 s; 2000 demos and 30 epochs reach about 0.9.

use armgym::arm::ArmGeometry;
use armgym::episode::{GoalRepresentation, GoalSpec};
use armgym::eval::evaluate;
use armgym::learn::{bc_train, BcHyper, MlpPolicy};
use armgym::planner::{collect_demos, PlannerParams};
use armgym::tasks::{sample_query_set, task_spec};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(500);
    let epochs = args.get(1).copied().unwrap_or(20);

    let spec = GoalSpec::new(GoalRepresentation::Config);
    let task = task_spec("no_obstacles").unwrap().with_goal_spec(spec);
    let (ds, report) = collect_demos(&task, n, 1, &PlannerParams::default()).unwrap();
    println!("{} demos in {:.1}s", report.collected, report.wall_seconds);

    let net = MlpPolicy::new(spec, &[256, 256], 0).unwrap();
    let hyper = BcHyper { epochs, ..Default::default() };
    let fit = bc_train(&ds.demos, &spec, ArmGeometry::franka(), net, &hyper).unwrap();
    for (e, l) in fit.loss_curve.iter().enumerate() {
        println!("epoch {e:3} loss {l:.6}");
    }
    let qs = sample_query_set(&task, 200, 1_000_000).unwrap().queries;
    let r = evaluate(&fit.policy, &task, &qs, &[0]).unwrap();
    println!("held-out success {:.3} over {} queries", r.success_rate, r.n_queries);
}
