//! Clearance and collision queries against the fixed scenes.
//!
//! cargo run --release --example collision

use armgym::arm::NormalizedConfig;
use armgym::geometry::DEFAULT_EDGE_STEP;
use armgym::tasks::build_fixed_task;

fn main() {
    for name in ["no_obstacles", "wall", "double_walls", "boxes"] {
        let scene = build_fixed_task(name).unwrap();
        let home = scene.arm.home;
        let (d, contact) = scene.clearance(&home);
        println!("{name}: {} obstacles, home clearance {d:.4} m ({contact:?})", scene.obstacles.len());

        // sweep joint 1 from home in both directions until an edge is blocked
        let start = armgym::arm::normalize(&home, &scene.arm.limits).unwrap();
        for dir in [-1.0, 1.0] {
            let mut prev = start;
            loop {
                let mut v = prev.0;
                v[0] = (v[0] + 0.05 * dir).clamp(-1.0, 1.0);
                let next = NormalizedConfig(v);
                if next == prev || !scene.edge_collision_free(&prev, &next, DEFAULT_EDGE_STEP, 0.0) {
                    break;
                }
                prev = next;
            }
            println!("  joint 1 sweep {}: free up to s1 = {:+.2}", if dir < 0.0 { "down" } else { "up" }, prev.0[0]);
        }
    }
}
