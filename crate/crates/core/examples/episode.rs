//! Step one episode by hand with the straight-line baseline.
//!
//! cargo run --release --example episode

use armgym::episode::{ActionMode, Engine};
use armgym::learn::{GoToGoal, Policy};
use armgym::tasks::{sample_query_set, task_spec};

fn main() {
    let task = task_spec("wall").unwrap();
    let q = &sample_query_set(&task, 1, 4).unwrap().queries[0];
    let mut engine = Engine::new(task.scene_for(q).unwrap(), task.episode).unwrap();
    let mut state = engine.reset(q).unwrap();
    let goal = *engine.goal().unwrap();
    let policy = GoToGoal::default();
    let mut ret = 0.0;
    loop {
        let a = policy.act(&state, &goal, &task.episode.goal_spec).unwrap();
        let tr = engine.step(&a, ActionMode::Relative).unwrap();
        ret += tr.cost;
        if tr.t % 20 == 0 || tr.done {
            println!("t {:3}  |a| {:.4}  collided {}  reached {}", tr.t, tr.action.norm(), tr.collided, tr.goal_reached);
        }
        state = tr.next_state;
        if tr.done {
            break;
        }
    }
    println!("return {ret}");
}
