//! Baseline success rates across the goal-generalization tasks.
//!
//! cargo run --release --example evaluate -- [n]

use armgym::eval::{evaluate, EvalReport};
use armgym::learn::GoToGoal;
use armgym::tasks::{sample_query_set, task_spec, GOAL_GENERALIZATION_TASKS};

fn main() {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    println!("{}", EvalReport::TABLE_HEADER);
    for name in GOAL_GENERALIZATION_TASKS {
        let task = task_spec(name).unwrap();
        let qs = sample_query_set(&task, n, 1_000_000).unwrap().queries;
        let r = evaluate(&GoToGoal::default(), &task, &qs, &[0, 1]).unwrap();
        println!("{}", r.table_row());
    }
}
