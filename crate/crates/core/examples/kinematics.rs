//! Forward kinematics of the Franka arm: link frames, the EE point and the
//! normalized coordinates used everywhere else.
//!
//! cargo run --release --example kinematics

use armgym::arm::{normalize, ArmGeometry, Configuration};

fn main() {
    let arm = ArmGeometry::franka();
    for (name, c) in [("zero", Configuration::zeros()), ("home", arm.home)] {
        let pose = arm.forward_kinematics(&c);
        println!("{name}: q = {:?}", c.to_array());
        for (i, link) in pose.links.iter().enumerate() {
            let p = link.translation.vector;
            println!("  frame {i}: ({:+.4}, {:+.4}, {:+.4})", p.x, p.y, p.z);
        }
        let ee = pose.ee_position();
        println!("  ee     : ({:+.4}, {:+.4}, {:+.4})", ee.x, ee.y, ee.z);
        match normalize(&c, &arm.limits) {
            Ok(s) => println!("  normalized: {:?}", s.to_array().map(|v| (v * 1e4).round() / 1e4)),
            // joint 4 never reaches zero
            Err(e) => println!("  not normalizable: {e}"),
        }
    }
    for (i, cap) in arm.world_capsules(&arm.forward_kinematics(&arm.home)) {
        println!("capsule on link {i}: radius {:.3}, length {:.3}", cap.radius, (cap.b - cap.a).norm());
    }
}
