//! Labeled point clouds from ray-cast sensors.
//!
//! Four sensors sit on the cardinal axes around the base and look at the
//! workspace. Each casts a fixed spiral bundle of rays over a cone and keeps
//! the first surface hit: an arm capsule, a static obstacle (table, floor) or
//! a task obstacle.

use std::io::{BufRead, Write};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::Configuration;
use crate::error::{Error, Result};
use crate::geometry::{BoxShape, Capsule, ObstacleLabel, Plane, Scene, Shape};

pub const DEFAULT_RAYS_PER_SENSOR: usize = 10_000;
pub const SENSOR_DISTANCE: f64 = 1.5;
pub const SENSOR_HEIGHT: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Robot,
    Static,
    Varying,
}

impl PointLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PointLabel::Robot => "robot",
            PointLabel::Static => "static",
            PointLabel::Varying => "varying",
        }
    }
}

impl std::str::FromStr for PointLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robot" => Ok(PointLabel::Robot),
            "static" => Ok(PointLabel::Static),
            "varying" => Ok(PointLabel::Varying),
            other => Err(Error::InvalidArgument(format!("unknown point label `{other}`"))),
        }
    }
}

impl From<ObstacleLabel> for PointLabel {
    fn from(l: ObstacleLabel) -> Self {
        match l {
            ObstacleLabel::Static => PointLabel::Static,
            ObstacleLabel::Varying => PointLabel::Varying,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub label: PointLabel,
    pub sensor: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledPointCloud {
    pub points: Vec<LabeledPoint>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, label: PointLabel) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    pub fn from_sensor(&self, sensor: usize) -> impl Iterator<Item = &LabeledPoint> {
        self.points.iter().filter(move |p| p.sensor == sensor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRig {
    pub origins: Vec<Vector3<f64>>,
    /// Every sensor's view axis points at this point.
    pub target: Vector3<f64>,
    pub rays_per_sensor: usize,
    /// Half-angle of the view cone, radians.
    pub half_angle: f64,
    pub max_range: f64,
}

impl Default for SensorRig {
    fn default() -> Self {
        let (d, h) = (SENSOR_DISTANCE, SENSOR_HEIGHT);
        SensorRig {
            origins: vec![
                Vector3::new(d, 0.0, h),
                Vector3::new(0.0, d, h),
                Vector3::new(-d, 0.0, h),
                Vector3::new(0.0, -d, h),
            ],
            target: Vector3::new(0.0, 0.0, 0.35),
            rays_per_sensor: DEFAULT_RAYS_PER_SENSOR,
            half_angle: 35f64.to_radians(),
            max_range: 4.0,
        }
    }
}

impl SensorRig {
    pub fn with_rays(rays_per_sensor: usize) -> Self {
        SensorRig { rays_per_sensor, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.origins.is_empty() || self.rays_per_sensor == 0 {
            return Err(Error::InvalidArgument("rig needs at least one sensor and one ray".into()));
        }
        if !(self.half_angle > 0.0 && self.half_angle < std::f64::consts::PI && self.max_range > 0.0) {
            return Err(Error::InvalidArgument("cone half-angle and range must be positive".into()));
        }
        if self.origins.iter().any(|o| (self.target - o).norm() == 0.0) {
            return Err(Error::InvalidArgument("sensor origin coincides with its target".into()));
        }
        Ok(())
    }

    /// Unit ray directions of one sensor: a golden-angle spiral, uniform in
    /// solid angle over the cone.
    pub fn directions(&self, sensor: usize) -> Vec<Vector3<f64>> {
        let axis = Unit::new_normalize(self.target - self.origins[sensor]);
        let rot = UnitQuaternion::rotation_between(&Vector3::z(), &axis)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let n = self.rays_per_sensor;
        let span = 1.0 - self.half_angle.cos();
        (0..n)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / n as f64 * span;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = i as f64 * golden;
                rot * Vector3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect()
    }
}

/// Distance along a unit ray to a capsule surface, if hit in front of `o`.
pub fn ray_capsule(o: &Vector3<f64>, d: &Vector3<f64>, cap: &Capsule) -> Option<f64> {
    let r = cap.radius;
    let mut best = ray_sphere(o, d, &cap.a, r);
    best = min_hit(best, ray_sphere(o, d, &cap.b, r));
    let ba = cap.b - cap.a;
    let baba = ba.dot(&ba);
    if baba > 0.0 {
        // infinite cylinder, restricted to the segment's slab
        let oa = o - cap.a;
        let bard = ba.dot(d);
        let baoa = ba.dot(&oa);
        let qa = baba - bard * bard;
        let qb = baba * d.dot(&oa) - baoa * bard;
        let qc = baba * oa.dot(&oa) - baoa * baoa - r * r * baba;
        let h = qb * qb - qa * qc;
        if qa > 1e-15 * baba && h >= 0.0 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if t >= 0.0 && (0.0..=baba).contains(&y) {
                best = min_hit(best, Some(t));
            }
        }
    }
    best
}

fn ray_sphere(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = d.dot(&oc);
    let h = b * b - (oc.dot(&oc) - r * r);
    if h < 0.0 {
        return None;
    }
    let t = -b - h.sqrt();
    (t >= 0.0).then_some(t)
}

/// Slab test in the box frame.
pub fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &BoxShape) -> Option<f64> {
    let lo = b.to_local(o);
    let ld = b.direction_to_local(d);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        let h = b.half_extents[k];
        if ld[k] == 0.0 {
            if lo[k].abs() > h {
                return None;
            }
            continue;
        }
        let (a, c) = ((-h - lo[k]) / ld[k], (h - lo[k]) / ld[k]);
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 >= 0.0).then_some(t0)
}

/// Planes are the boundary of the solid half-space below them.
pub fn ray_plane(o: &Vector3<f64>, d: &Vector3<f64>, p: &Plane) -> Option<f64> {
    let den = p.normal.dot(d);
    if den >= 0.0 {
        return None;
    }
    let t = -p.signed_distance(o) / den;
    (t >= 0.0).then_some(t)
}

fn min_hit(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Cast every ray of `rig` into the scene. `config = None` removes the arm.
///
/// Points are ordered by sensor, then ray index.
pub fn sense(scene: &Scene, config: Option<&Configuration>, rig: &SensorRig) -> Result<LabeledPointCloud> {
    rig.validate()?;
    let capsules: Vec<Capsule> = config
        .map(|c| scene.world_capsules(c).into_iter().map(|(_, cap)| cap).collect())
        .unwrap_or_default();
    let per_sensor: Vec<Vec<LabeledPoint>> = (0..rig.origins.len())
        .into_par_iter()
        .map(|k| {
            let o = rig.origins[k];
            rig.directions(k)
                .iter()
                .filter_map(|d| {
                    let mut best: Option<(f64, PointLabel)> = None;
                    let mut take = |t: Option<f64>, label: PointLabel| {
                        if let Some(t) = t {
                            if t <= rig.max_range && best.is_none_or(|(bt, _)| t < bt) {
                                best = Some((t, label));
                            }
                        }
                    };
                    for cap in &capsules {
                        take(ray_capsule(&o, d, cap), PointLabel::Robot);
                    }
                    for ob in &scene.obstacles {
                        let t = match &ob.shape {
                            Shape::Box(b) => ray_box(&o, d, b),
                            Shape::Plane(p) => ray_plane(&o, d, p),
                        };
                        take(t, ob.label.into());
                    }
                    best.map(|(t, label)| LabeledPoint { position: o + d * t, label, sensor: k })
                })
                .collect()
        })
        .collect();
    Ok(LabeledPointCloud { points: per_sensor.into_iter().flatten().collect() })
}

/// Plain-text dump: a `#` header line, then `x y z label sensor` per point.
pub fn write_point_cloud(mut w: impl Write, cloud: &LabeledPointCloud) -> Result<()> {
    writeln!(w, "# x y z label sensor")?;
    for p in &cloud.points {
        let v = p.position;
        writeln!(w, "{:?} {:?} {:?} {} {}", v.x, v.y, v.z, p.label.as_str(), p.sensor)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud(r: impl BufRead) -> Result<LabeledPointCloud> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Parse { line: i + 1, message: m };
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        points.push(LabeledPoint {
            position: Vector3::new(num(f[0])?, num(f[1])?, num(f[2])?),
            label: f[3].parse().map_err(|e: Error| bad(e.to_string()))?,
            sensor: f[4].parse().map_err(|e| bad(format!("sensor: {e}")))?,
        });
    }
    Ok(LabeledPointCloud { points })
}
