//! Draw a reproducible set of start/goal queries and save it.
//!
//! cargo run --release --example sample_queries -- [task] [n] [seed]

use armgym::io::{load_queries, save_queries};
use armgym::tasks::{sample_query_set, task_names, task_spec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task = args.first().map(String::as_str).unwrap_or("wall");
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    println!("tasks: {}", task_names().join(", "));

    let spec = task_spec(task).unwrap();
    let set = sample_query_set(&spec, n, seed).unwrap();
    for (i, q) in set.queries.iter().take(5).enumerate() {
        println!("query {i}: goal ee ({:.3}, {:.3}, {:.3}) scene seed {:?}", q.goal_ee.x, q.goal_ee.y, q.goal_ee.z, q.scene_seed);
    }
    let path = std::env::temp_dir().join(format!("{task}_{n}_{seed}.jsonl"));
    save_queries(&path, &set).unwrap();
    assert_eq!(load_queries(&path).unwrap(), set);
    println!("wrote {} queries to {}", set.queries.len(), path.display());
}
