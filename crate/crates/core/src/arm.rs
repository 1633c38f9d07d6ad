//! Kinematic model of the 7-DoF arm.
//!
//! Everything the learning side touches lives in the normalized box
//! `[-1, 1]^7`; physical joint angles only appear at the boundary with
//! forward kinematics and collision checking.

use std::sync::{Arc, OnceLock};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Capsule;

pub const DOF: usize = 7;

/// Number of rigid links including the fixed base.
pub const NUM_LINKS: usize = DOF + 1;

/// Per-step bound on the normalized action norm.
pub const ACTION_BOUND: f64 = 0.03;

pub const ARM_SCHEMA_VERSION: u32 = 1;

pub type Vec7 = nalgebra::SVector<f64, DOF>;

const FRANKA_TOML: &str = include_str!("../data/franka_panda.toml");

/// Joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; DOF]", into = "[f64; DOF]")]
pub struct Configuration(pub Vec7);

/// Joint state affinely mapped onto `[-1, 1]^7`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; DOF]", into = "[f64; DOF]")]
pub struct NormalizedConfig(pub Vec7);

macro_rules! vec7_newtype {
    ($t:ident) => {
        impl From<[f64; DOF]> for $t {
            fn from(v: [f64; DOF]) -> Self {
                $t(Vec7::from(v))
            }
        }

        impl From<$t> for [f64; DOF] {
            fn from(v: $t) -> Self {
                v.0.into()
            }
        }

        impl $t {
            pub fn zeros() -> Self {
                $t(Vec7::zeros())
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn to_array(&self) -> [f64; DOF] {
                self.0.into()
            }
        }
    };
}

vec7_newtype!(Configuration);
vec7_newtype!(NormalizedConfig);

impl NormalizedConfig {
    pub fn distance(&self, other: &NormalizedConfig) -> f64 {
        (self.0 - other.0).norm()
    }

    pub fn clamped(v: Vec7) -> Self {
        NormalizedConfig(v.map(|x| x.clamp(-1.0, 1.0)))
    }

    pub fn lerp(&self, other: &NormalizedConfig, t: f64) -> NormalizedConfig {
        NormalizedConfig(self.0 + (other.0 - self.0) * t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: Vec7,
    pub upper: Vec7,
}

impl JointLimits {
    pub fn new(lower: [f64; DOF], upper: [f64; DOF]) -> Result<Self> {
        for i in 0..DOF {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
                return Err(Error::InvalidGeometry(format!(
                    "joint {i} limits [{}, {}] are not an increasing finite interval",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(JointLimits {
            lower: Vec7::from(lower),
            upper: Vec7::from(upper),
        })
    }

    pub fn center(&self) -> Configuration {
        Configuration((self.lower + self.upper) * 0.5)
    }

    pub fn check(&self, c: &Configuration) -> Result<()> {
        for i in 0..DOF {
            let v = c.0[i];
            if !(v >= self.lower[i] && v <= self.upper[i]) {
                return Err(Error::OutOfLimits {
                    joint: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.check(c).is_ok()
    }
}

/// `s = (2c - (M + m)) / (M - m)`, componentwise.
pub fn normalize(c: &Configuration, lim: &JointLimits) -> Result<NormalizedConfig> {
    lim.check(c)?;
    Ok(normalize_unchecked(c, lim))
}

pub fn normalize_unchecked(c: &Configuration, lim: &JointLimits) -> NormalizedConfig {
    let mut s = Vec7::zeros();
    for i in 0..DOF {
        let (m, big_m) = (lim.lower[i], lim.upper[i]);
        // Algebraically (2c - (M + m)) / (M - m); this grouping is exact at the bounds.
        s[i] = ((c.0[i] - m) - (big_m - c.0[i])) / (big_m - m);
    }
    NormalizedConfig(s)
}

pub fn denormalize(s: &NormalizedConfig, lim: &JointLimits) -> Result<Configuration> {
    for (i, &v) in s.0.iter().enumerate() {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { index: i, value: v });
        }
    }
    Ok(denormalize_unchecked(s, lim))
}

pub fn denormalize_unchecked(s: &NormalizedConfig, lim: &JointLimits) -> Configuration {
    let mut c = Vec7::zeros();
    for i in 0..DOF {
        let (m, big_m) = (lim.lower[i], lim.upper[i]);
        c[i] = 0.5 * ((1.0 - s.0[i]) * m + (1.0 + s.0[i]) * big_m);
    }
    Configuration(c)
}

/// Scale `delta` onto the ball of radius `a_max` when it lies outside.
///
/// The scaled result is nudged until its computed norm is `<= a_max`, which
/// makes the operation exactly idempotent in floating point.
pub fn clip_action(delta: &Vec7, a_max: f64) -> Vec7 {
    let n = delta.norm();
    if n <= a_max {
        return *delta;
    }
    let mut out = delta * (a_max / n);
    while out.norm() > a_max {
        out *= 1.0 - f64::EPSILON;
    }
    out
}

/// Modified DH parameters: `RotX(alpha) * TransX(a) * RotZ(q) * TransZ(d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhParams {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
}

impl DhParams {
    fn fixed_part(&self) -> Isometry3<f64> {
        let rot_x = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        );
        rot_x * Isometry3::translation(self.a, 0.0, 0.0)
    }

    fn transform(&self, q: f64) -> Isometry3<f64> {
        self.fixed_part() * joint_part(q, self.d)
    }
}

fn joint_part(q: f64, d: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(0.0, 0.0, d),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkCapsule {
    pub link: usize,
    pub capsule: Capsule,
}

#[derive(Clone, Debug)]
pub struct ArmGeometry {
    pub name: String,
    pub limits: JointLimits,
    pub home: Configuration,
    pub base: Isometry3<f64>,
    pub joints: [DhParams; DOF],
    pub flange: DhParams,
    pub capsules: Vec<LinkCapsule>,
    pub self_collision_pairs: Vec<(usize, usize)>,
    fixed: [Isometry3<f64>; DOF],
    flange_tf: Isometry3<f64>,
}

/// World poses of every link plus the flange.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPose {
    pub links: [Isometry3<f64>; NUM_LINKS],
    pub flange: Isometry3<f64>,
}

impl ArmPose {
    pub fn ee_position(&self) -> Vector3<f64> {
        self.flange.translation.vector
    }
}

#[derive(Serialize, Deserialize)]
struct RawArm {
    schema_version: u32,
    name: String,
    home: [f64; DOF],
    self_collision_pairs: Vec<[usize; 2]>,
    limits: RawLimits,
    base: RawBase,
    joints: Vec<DhParams>,
    flange: DhParams,
    capsules: Vec<RawCapsule>,
}

#[derive(Serialize, Deserialize)]
struct RawLimits {
    lower: [f64; DOF],
    upper: [f64; DOF],
}

#[derive(Serialize, Deserialize)]
struct RawBase {
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct RawCapsule {
    link: usize,
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

fn franka_cell() -> &'static Arc<ArmGeometry> {
    static ARM: OnceLock<Arc<ArmGeometry>> = OnceLock::new();
    ARM.get_or_init(|| {
        Arc::new(ArmGeometry::from_toml_str(FRANKA_TOML).expect("bundled arm parameter file is valid"))
    })
}

impl ArmGeometry {
    /// The bundled Franka-class arm.
    pub fn franka() -> &'static ArmGeometry {
        franka_cell()
    }

    /// Shared handle to the bundled arm, for scenes.
    pub fn franka_shared() -> Arc<ArmGeometry> {
        franka_cell().clone()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawArm = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        if raw.schema_version != ARM_SCHEMA_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported arm schema_version {}", raw.schema_version),
            });
        }
        let joints: [DhParams; DOF] = raw.joints.try_into().map_err(|v: Vec<DhParams>| {
            Error::InvalidGeometry(format!("expected {DOF} joints, found {}", v.len()))
        })?;
        let limits = JointLimits::new(raw.limits.lower, raw.limits.upper)?;
        let capsules = raw
            .capsules
            .into_iter()
            .map(|c| {
                if c.link >= NUM_LINKS {
                    return Err(Error::InvalidGeometry(format!("capsule on unknown link {}", c.link)));
                }
                Ok(LinkCapsule {
                    link: c.link,
                    capsule: Capsule::new(Vector3::from(c.a), Vector3::from(c.b), c.radius)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::with_capacity(raw.self_collision_pairs.len());
        for [i, j] in raw.self_collision_pairs {
            if i >= NUM_LINKS || j >= NUM_LINKS {
                return Err(Error::InvalidGeometry(format!("self-collision pair ({i}, {j}) out of range")));
            }
            if i.abs_diff(j) < 2 {
                return Err(Error::InvalidGeometry(format!(
                    "self-collision pair ({i}, {j}) names adjacent links"
                )));
            }
            pairs.push((i.min(j), i.max(j)));
        }
        let t = raw.base.translation;
        Ok(Self::assemble(
            raw.name,
            limits,
            Configuration::from(raw.home),
            Isometry3::translation(t[0], t[1], t[2]),
            joints,
            raw.flange,
            capsules,
            pairs,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: String,
        limits: JointLimits,
        home: Configuration,
        base: Isometry3<f64>,
        joints: [DhParams; DOF],
        flange: DhParams,
        capsules: Vec<LinkCapsule>,
        self_collision_pairs: Vec<(usize, usize)>,
    ) -> Self {
        let fixed = joints.map(|j| j.fixed_part());
        let flange_tf = flange.transform(0.0);
        ArmGeometry {
            name,
            limits,
            home,
            base,
            joints,
            flange,
            capsules,
            self_collision_pairs,
            fixed,
            flange_tf,
        }
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawArm {
            schema_version: ARM_SCHEMA_VERSION,
            name: self.name.clone(),
            home: self.home.to_array(),
            self_collision_pairs: self.self_collision_pairs.iter().map(|&(i, j)| [i, j]).collect(),
            limits: RawLimits {
                lower: self.limits.lower.into(),
                upper: self.limits.upper.into(),
            },
            base: RawBase {
                translation: self.base.translation.vector.into(),
            },
            joints: self.joints.to_vec(),
            flange: self.flange,
            capsules: self
                .capsules
                .iter()
                .map(|lc| RawCapsule {
                    link: lc.link,
                    a: lc.capsule.a.into(),
                    b: lc.capsule.b.into(),
                    radius: lc.capsule.radius,
                })
                .collect(),
        };
        toml::to_string(&raw).expect("arm parameters serialize")
    }

    pub fn forward_kinematics(&self, c: &Configuration) -> ArmPose {
        let mut links = [Isometry3::identity(); NUM_LINKS];
        links[0] = self.base;
        for i in 0..DOF {
            links[i + 1] = links[i] * self.fixed[i] * joint_part(c.0[i], self.joints[i].d);
        }
        let flange = links[DOF] * self.flange_tf;
        ArmPose { links, flange }
    }

    pub fn ee_position(&self, c: &Configuration) -> Vector3<f64> {
        self.forward_kinematics(c).ee_position()
    }

    /// Arm capsules transformed into world coordinates, in file order.
    pub fn world_capsules(&self, pose: &ArmPose) -> Vec<(usize, Capsule)> {
        self.capsules
            .iter()
            .map(|lc| (lc.link, lc.capsule.transformed(&pose.links[lc.link])))
            .collect()
    }

    pub fn dh_transform(&self, joint: usize, q: f64) -> Isometry3<f64> {
        self.joints[joint].transform(q)
    }
}

/// Free-function form of [`ArmGeometry::forward_kinematics`].
pub fn forward_kinematics(c: &Configuration, geom: &ArmGeometry) -> (ArmPose, Vector3<f64>) {
    let pose = geom.forward_kinematics(c);
    let ee = pose.ee_position();
    (pose, ee)
}
