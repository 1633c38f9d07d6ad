//! Plan with RRT-Connect and turn plans into verified demonstrations.
//!
//! cargo run --release --example plan_demos

use armgym::arm::normalize;
use armgym::planner::{collect_demos, rrt_connect, PlannerParams};
use armgym::tasks::{sample_query_set, task_spec};

fn main() {
    let task = task_spec("double_walls").unwrap();
    let scene = task.scene(None).unwrap();
    let q = &sample_query_set(&task, 1, 2).unwrap().queries[0];
    let lim = &scene.arm.limits;
    let (s, g) = (normalize(&q.start, lim).unwrap(), normalize(&q.goal_config, lim).unwrap());
    match rrt_connect(&scene, &s, &g, &PlannerParams::default()).unwrap().plan() {
        Some(p) => println!("plan: {} nodes after {} iterations", p.path.len(), p.iterations),
        None => println!("no plan within the iteration cap"),
    }

    let (ds, report) = collect_demos(&task, 10, 0, &PlannerParams::default()).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    for d in ds.demos.iter().take(3) {
        println!("demo: {} steps, cost {:.3}", d.len(), d.path_cost());
    }
}
