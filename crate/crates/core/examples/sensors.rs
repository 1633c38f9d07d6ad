//! Labeled point cloud from the four simulated depth sensors.
//!
//! cargo run --release --example sensors -- [out.xyz]

use armgym::sensors::{sense, write_point_cloud, PointLabel, SensorRig};
use armgym::tasks::task_spec;

fn main() {
    let out = std::env::args().nth(1);
    let task = task_spec("random_boxes_medium").unwrap();
    let scene = task.scene(Some(3)).unwrap();
    let rig = SensorRig::with_rays(2000);
    let cloud = sense(&scene, Some(&scene.arm.home), &rig).unwrap();
    println!("{} points", cloud.len());
    for l in [PointLabel::Robot, PointLabel::Static, PointLabel::Varying] {
        println!("  {:<8} {}", l.as_str(), cloud.count(l));
    }
    for k in 0..rig.origins.len() {
        println!("  sensor {k}: {}", cloud.from_sensor(k).count());
    }
    if let Some(path) = out {
        write_point_cloud(std::fs::File::create(&path).unwrap(), &cloud).unwrap();
        println!("wrote {path}");
    }
}
