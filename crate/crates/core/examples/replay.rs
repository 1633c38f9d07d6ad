//! Replay buffer with hindsight relabeling and demonstration injection.
//!
//! cargo run --release --example replay

use armgym::arm::{ArmGeometry, Vec7};
use armgym::episode::{ActionMode, Engine};
use armgym::learn::{inject_demo, store_episode, DemoIndex, ReplayBuffer};
use armgym::planner::{collect_demos, PlannerParams};
use armgym::tasks::{sample_query_set, task_spec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let task = task_spec("wall").unwrap();
    let queries = sample_query_set(&task, 20, 0).unwrap().queries;
    // demos for the same query stream, so every failure has a match
    let (ds, _) = collect_demos(&task, 20, 0, &PlannerParams::default()).unwrap();
    let index = DemoIndex::new(ds.demos);
    let arm = ArmGeometry::franka();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReplayBuffer::new(100_000).unwrap();
    let mut failures = 0;
    for q in &queries {
        let mut engine = Engine::new(task.scene_for(q).unwrap(), task.episode).unwrap();
        engine.reset(q).unwrap();
        let mut ep = Vec::new();
        loop {
            let a = Vec7::from_fn(|_, _| rng.random_range(-0.03..0.03));
            let tr = engine.step(&a, ActionMode::Relative).unwrap();
            let done = tr.done;
            ep.push(tr);
            if done {
                break;
            }
        }
        let reached = ep.last().unwrap().goal_reached;
        store_episode(&mut buf, &ep, task.goal_spec(), 0.8, true, &mut rng).unwrap();
        if !reached {
            failures += 1;
            match inject_demo(&mut buf, q, 0.5, &index, task.goal_spec(), arm, &mut rng) {
                Ok(n) if n > 0 => println!("injected {n} demo transitions"),
                Ok(_) => {}
                Err(e) => println!("no demo: {e}"),
            }
        }
    }
    println!("{failures} failed episodes, buffer {} transitions: {:?}", buf.len(), buf.counts());
    let batch = buf.sample(4, &mut rng);
    for t in batch {
        println!("  t {:3} cost {:+} done {}", t.t, t.cost, t.done);
    }
}
