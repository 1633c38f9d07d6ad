//! Collision primitives and the collision predicate over arm configurations.
//!
//! Signed distances are negative on penetration. Boxes are gravity-aligned
//! with an optional yaw; planes are half-spaces `{x : n·x < offset}`.

use std::sync::Arc;

use nalgebra::{Isometry3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::{
    denormalize_unchecked, ArmGeometry, Configuration, NormalizedConfig, NUM_LINKS,
};
use crate::error::{Error, Result};

/// Default interpolation step for edge checks, in normalized L2 distance.
pub const DEFAULT_EDGE_STEP: f64 = 0.01;

/// A line segment swept by a sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!("capsule radius {radius} must be positive")));
        }
        if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidGeometry("capsule endpoints must be finite".into()));
        }
        Ok(Capsule { a, b, radius })
    }

    pub fn transformed(&self, tf: &Isometry3<f64>) -> Capsule {
        Capsule {
            a: tf.transform_point(&self.a.into()).coords,
            b: tf.transform_point(&self.b.into()).coords,
            radius: self.radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxShape {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// Rotation about the world z axis, radians.
    pub yaw: f64,
}

impl BoxShape {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>, yaw: f64) -> Result<Self> {
        if !half_extents.iter().all(|&h| h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidObstacle(format!(
                "box half-extents {:?} must be positive",
                half_extents.as_slice()
            )));
        }
        if !(center.iter().all(|v| v.is_finite()) && yaw.is_finite()) {
            return Err(Error::InvalidObstacle("box pose must be finite".into()));
        }
        Ok(BoxShape { center, half_extents, yaw })
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw) * p + self.center
    }

    pub fn direction_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        aabb_point_signed_distance(&self.to_local(p), &self.half_extents)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidObstacle(format!(
                "plane normal must be unit length, got norm {}",
                normal.norm()
            )));
        }
        Ok(Plane { normal, offset })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box(BoxShape),
    Plane(Plane),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleLabel {
    /// Table and floor.
    Static,
    /// Everything placed by a task.
    Varying,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
    pub label: ObstacleLabel,
}

impl Obstacle {
    pub fn cuboid(
        name: impl Into<String>,
        center: [f64; 3],
        half_extents: [f64; 3],
        yaw: f64,
        label: ObstacleLabel,
    ) -> Result<Self> {
        Ok(Obstacle {
            name: name.into(),
            shape: Shape::Box(BoxShape::new(center.into(), half_extents.into(), yaw)?),
            label,
        })
    }

    pub fn plane(name: impl Into<String>, normal: [f64; 3], offset: f64, label: ObstacleLabel) -> Result<Self> {
        Ok(Obstacle {
            name: name.into(),
            shape: Shape::Plane(Plane::new(normal.into(), offset)?),
            label,
        })
    }

    pub fn capsule_distance(&self, cap: &Capsule) -> f64 {
        match &self.shape {
            Shape::Box(b) => capsule_box_distance(cap, b),
            Shape::Plane(p) => capsule_plane_distance(cap, p),
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Box(b) => b.signed_distance(p),
            Shape::Plane(pl) => pl.signed_distance(p),
        }
    }
}

/// Height of the table top; the arm base stands on it.
pub const TABLE_HEIGHT: f64 = 0.0;
pub const FLOOR_HEIGHT: f64 = -0.4;

/// The two obstacles every scene carries.
pub fn universal_obstacles() -> Vec<Obstacle> {
    vec![
        Obstacle::plane("table", [0.0, 0.0, 1.0], TABLE_HEIGHT, ObstacleLabel::Static).unwrap(),
        Obstacle::plane("floor", [0.0, 0.0, 1.0], FLOOR_HEIGHT, ObstacleLabel::Static).unwrap(),
    ]
}

/// Obstacles plus the arm they are checked against.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub obstacles: Vec<Obstacle>,
    pub arm: Arc<ArmGeometry>,
    pub seed: Option<u64>,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.obstacles == other.obstacles
            && self.seed == other.seed
            && self.arm.name == other.arm.name
    }
}

/// Which bodies produced the minimum distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contact {
    Obstacle { link: usize, obstacle: usize },
    SelfCollision { link_a: usize, link_b: usize },
}

impl Scene {
    /// A scene with only the table and floor.
    pub fn empty(name: impl Into<String>, arm: Arc<ArmGeometry>) -> Self {
        Scene {
            name: name.into(),
            obstacles: universal_obstacles(),
            arm,
            seed: None,
        }
    }

    pub fn with_obstacles(
        name: impl Into<String>,
        arm: Arc<ArmGeometry>,
        extra: impl IntoIterator<Item = Obstacle>,
    ) -> Self {
        let mut scene = Scene::empty(name, arm);
        scene.obstacles.extend(extra);
        scene
    }

    pub fn varying_count(&self) -> usize {
        self.obstacles.iter().filter(|o| o.label == ObstacleLabel::Varying).count()
    }

    pub fn world_capsules(&self, c: &Configuration) -> Vec<(usize, Capsule)> {
        let pose = self.arm.forward_kinematics(c);
        self.arm.world_capsules(&pose)
    }

    /// Minimum signed distance over all arm/obstacle and self-collision pairs.
    pub fn clearance(&self, c: &Configuration) -> (f64, Option<Contact>) {
        let caps = self.world_capsules(c);
        let mut best = f64::INFINITY;
        let mut contact = None;
        for (k, o) in self.obstacles.iter().enumerate() {
            for &(link, ref cap) in &caps {
                let d = o.capsule_distance(cap);
                if d < best {
                    best = d;
                    contact = Some(Contact::Obstacle { link, obstacle: k });
                }
            }
        }
        for &(la, lb) in &self.arm.self_collision_pairs {
            for (ia, ca) in caps.iter().filter(|(l, _)| *l == la) {
                for (ib, cb) in caps.iter().filter(|(l, _)| *l == lb) {
                    let d = capsule_capsule_distance(ca, cb);
                    if d < best {
                        best = d;
                        contact = Some(Contact::SelfCollision { link_a: *ia, link_b: *ib });
                    }
                }
            }
        }
        (best, contact)
    }

    /// True iff any checked pair is within `margin` (contact counts).
    pub fn is_collision(&self, c: &Configuration, margin: f64) -> bool {
        let caps = self.world_capsules(c);
        for o in &self.obstacles {
            if caps.iter().any(|(_, cap)| o.capsule_distance(cap) <= margin) {
                return true;
            }
        }
        let mut by_link: [Vec<&Capsule>; NUM_LINKS] = Default::default();
        for (l, cap) in &caps {
            by_link[*l].push(cap);
        }
        self.arm.self_collision_pairs.iter().any(|&(la, lb)| {
            by_link[la]
                .iter()
                .any(|ca| by_link[lb].iter().any(|cb| capsule_capsule_distance(ca, cb) <= margin))
        })
    }

    pub fn is_collision_normalized(&self, s: &NormalizedConfig, margin: f64) -> bool {
        self.is_collision(&denormalize_unchecked(s, &self.arm.limits), margin)
    }

    /// Checks interpolated configurations spaced at most `step` apart,
    /// endpoints included.
    pub fn edge_collision_free(&self, s1: &NormalizedConfig, s2: &NormalizedConfig, step: f64, margin: f64) -> bool {
        edge_points(s1, s2, step).all(|s| !self.is_collision_normalized(&s, margin))
    }
}

/// Points `s1 + k/n (s2 - s1)` for `k = 0..=n`, `n = ceil(|s2 - s1| / step)`.
pub fn edge_points(s1: &NormalizedConfig, s2: &NormalizedConfig, step: f64) -> impl Iterator<Item = NormalizedConfig> {
    assert!(step > 0.0, "edge step must be positive");
    let dist = s1.distance(s2);
    let n = (dist / step).ceil() as usize;
    let (a, b) = (*s1, *s2);
    (0..=n).map(move |k| {
        if k == 0 {
            a
        } else if k == n {
            b
        } else {
            a.lerp(&b, k as f64 / n as f64)
        }
    })
}

pub fn is_collision(scene: &Scene, c: &Configuration, margin: f64) -> bool {
    scene.is_collision(c, margin)
}

pub fn edge_collision_free(scene: &Scene, s1: &NormalizedConfig, s2: &NormalizedConfig, step: f64) -> bool {
    scene.edge_collision_free(s1, s2, step, 0.0)
}

/// Closest parameters `(s, t)` on segments `p1 + s d1`, `p2 + t d2`, with
/// the squared distance between the closest points.
pub fn segment_segment_closest(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (f64, f64, f64) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        s = 0.0;
        t = 0.0;
    } else if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (s, t, (c1 - c2).norm_squared())
}

pub fn capsule_capsule_distance(c1: &Capsule, c2: &Capsule) -> f64 {
    let (_, _, d2) = segment_segment_closest(&c1.a, &c1.b, &c2.a, &c2.b);
    d2.sqrt() - c1.radius - c2.radius
}

pub fn capsule_plane_distance(cap: &Capsule, plane: &Plane) -> f64 {
    plane.signed_distance(&cap.a).min(plane.signed_distance(&cap.b)) - cap.radius
}

pub fn capsule_box_distance(cap: &Capsule, b: &BoxShape) -> f64 {
    let p0 = b.to_local(&cap.a);
    let p1 = b.to_local(&cap.b);
    segment_aabb_signed_distance(&p0, &p1, &b.half_extents) - cap.radius
}

/// Signed distance from a point to the origin-centred box with half-extents `h`.
pub fn aabb_point_signed_distance(p: &Vector3<f64>, h: &Vector3<f64>) -> f64 {
    let q = p.abs() - h;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

/// Minimum over the segment of the signed distance to an origin-centred box.
///
/// Inside the box the signed distance equals `max_i(|p_i| - h_i)`, a convex
/// piecewise-linear function of the segment parameter, so its minimum sits on
/// one of finitely many breakpoints. When that minimum is positive the segment
/// misses the box and the exact distance comes from the piecewise-quadratic
/// squared excess.
pub fn segment_aabb_signed_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, h: &Vector3<f64>) -> f64 {
    let d = p1 - p0;
    let depth = |t: f64| {
        let p = p0 + d * t;
        (p.x.abs() - h.x).max(p.y.abs() - h.y).max(p.z.abs() - h.z)
    };

    let mut cands: Vec<f64> = Vec::with_capacity(20);
    cands.push(0.0);
    cands.push(1.0);
    for i in 0..3 {
        if d[i] != 0.0 {
            cands.push(-p0[i] / d[i]);
        }
        for j in (i + 1)..3 {
            for si in [-1.0, 1.0] {
                for sj in [-1.0, 1.0] {
                    // si p_i(t) - h_i = sj p_j(t) - h_j
                    let slope = si * d[i] - sj * d[j];
                    if slope != 0.0 {
                        cands.push((sj * p0[j] - h[j] - si * p0[i] + h[i]) / slope);
                    }
                }
            }
        }
    }
    let min_depth = cands
        .iter()
        .filter(|t| (0.0..=1.0).contains(*t))
        .map(|&t| depth(t))
        .fold(f64::INFINITY, f64::min);
    if min_depth <= 0.0 {
        return min_depth;
    }

    let mut breaks: Vec<f64> = vec![0.0, 1.0];
    for i in 0..3 {
        if d[i] != 0.0 {
            for s in [-1.0, 1.0] {
                let t = (s * h[i] - p0[i]) / d[i];
                if t > 0.0 && t < 1.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = f64::INFINITY;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let pm = p0 + d * mid;
        // Squared excess on this interval is sum (alpha_i + beta_i t)^2.
        let (mut sab, mut sbb) = (0.0, 0.0);
        let mut terms = [(0.0, 0.0); 3];
        for i in 0..3 {
            if pm[i] > h[i] {
                terms[i] = (p0[i] - h[i], d[i]);
            } else if pm[i] < -h[i] {
                terms[i] = (-p0[i] - h[i], -d[i]);
            }
            sab += terms[i].0 * terms[i].1;
            sbb += terms[i].1 * terms[i].1;
        }
        let t = if sbb > 0.0 { (-sab / sbb).clamp(lo, hi) } else { lo };
        let v: f64 = terms.iter().map(|(a, b)| (a + b * t).powi(2)).sum();
        best = best.min(v);
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::Vec7;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn parallel_capsules() {
        let c1 = Capsule::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.1).unwrap();
        let c2 = Capsule::new(v(0.0, 0.5, 0.0), v(1.0, 0.5, 0.0), 0.1).unwrap();
        assert!((capsule_capsule_distance(&c1, &c2) - 0.3).abs() < 1e-12);
        assert!((capsule_capsule_distance(&c1, &c1) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn capsule_above_box() {
        let b = BoxShape::new(v(0.0, 0.0, 0.0), v(0.5, 0.5, 0.5), 0.0).unwrap();
        let cap = Capsule::new(v(-0.3, 0.0, 1.0), v(0.3, 0.0, 1.0), 0.1).unwrap();
        assert!((capsule_box_distance(&cap, &b) - 0.4).abs() < 1e-12);
        let inside = Capsule::new(v(-0.1, 0.0, 0.0), v(0.1, 0.0, 0.0), 0.05).unwrap();
        assert!(capsule_box_distance(&inside, &b) < 0.0);
    }

    #[test]
    fn degenerate_segment_against_box() {
        let h = v(0.5, 0.2, 0.1);
        let p = v(1.0, 1.0, 1.0);
        let d = segment_aabb_signed_distance(&p, &p, &h);
        assert!((d - aabb_point_signed_distance(&p, &h)).abs() < 1e-12);
    }

    #[test]
    fn yawed_box_distance() {
        let b = BoxShape::new(v(1.0, 0.0, 0.0), v(0.5, 0.1, 0.1), std::f64::consts::FRAC_PI_2).unwrap();
        // rotated: long axis along world y
        let p = v(1.0, 0.6, 0.0);
        assert!((b.signed_distance(&p) - 0.1).abs() < 1e-12);
        let back = b.to_world(&b.to_local(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn invalid_obstacles() {
        assert!(BoxShape::new(v(0.0, 0.0, 0.0), v(0.1, 0.0, 0.1), 0.0).is_err());
        assert!(Plane::new(v(0.0, 0.0, 2.0), 0.0).is_err());
        assert!(Capsule::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), -0.1).is_err());
    }

    #[test]
    fn home_pose_free_in_empty_scene() {
        let arm = ArmGeometry::franka_shared();
        let scene = Scene::empty("empty", arm.clone());
        assert!(!scene.is_collision(&arm.home, 0.0));
        assert_eq!(scene.obstacles.len(), 2);
    }

    #[test]
    fn box_on_ee_collides() {
        let arm = ArmGeometry::franka_shared();
        let ee = arm.ee_position(&arm.home);
        let b = Obstacle::cuboid("b", ee.into(), [0.02; 3], 0.0, ObstacleLabel::Varying).unwrap();
        let scene = Scene::with_obstacles("ee", arm.clone(), [b]);
        assert!(scene.is_collision(&arm.home, 0.0));
    }

    #[test]
    fn margin_is_monotone() {
        let arm = ArmGeometry::franka_shared();
        let scene = Scene::empty("empty", arm.clone());
        let (clear, _) = scene.clearance(&arm.home);
        assert!(clear > 0.0);
        assert!(!scene.is_collision(&arm.home, clear * 0.99));
        assert!(scene.is_collision(&arm.home, clear * 1.01));
        assert!(scene.is_collision(&arm.home, clear * 2.0));
    }

    #[test]
    fn edge_degenerate_and_straddle() {
        let arm = ArmGeometry::franka_shared();
        let scene = Scene::empty("empty", arm.clone());
        let s = crate::arm::normalize(&arm.home, &arm.limits).unwrap();
        assert!(scene.edge_collision_free(&s, &s, 0.01, 0.0));

        // Sweep joint 1 across a thin post at the EE height.
        let mut a = arm.home;
        let mut b = arm.home;
        a.0[0] = -0.6;
        b.0[0] = 0.6;
        let ee = arm.ee_position(&arm.home);
        let post = Obstacle::cuboid("post", ee.into(), [0.01, 0.01, 0.01], 0.0, ObstacleLabel::Varying).unwrap();
        let scene = Scene::with_obstacles("post", arm.clone(), [post]);
        assert!(!scene.is_collision(&a, 0.0) && !scene.is_collision(&b, 0.0));
        let sa = crate::arm::normalize(&a, &arm.limits).unwrap();
        let sb = crate::arm::normalize(&b, &arm.limits).unwrap();
        assert!(!scene.edge_collision_free(&sa, &sb, 0.01, 0.0));
        assert_eq!(edge_points(&sa, &sb, 10.0).count(), 2);
    }

    #[test]
    fn edge_points_spacing() {
        let a = NormalizedConfig::zeros();
        let b = NormalizedConfig(Vec7::repeat(0.1));
        let pts: Vec<_> = edge_points(&a, &b, 0.01).collect();
        assert_eq!(pts.first().unwrap(), &a);
        assert_eq!(pts.last().unwrap(), &b);
        for w in pts.windows(2) {
            assert!(w[0].distance(&w[1]) <= 0.01 + 1e-15);
        }
    }
}
