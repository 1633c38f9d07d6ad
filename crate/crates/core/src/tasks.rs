//! Task registry: fixed scenes, random-box generators, OOD shelf scenes and
//! feasible query sampling.
//!
//! Scene dimensions and sampler ranges live in `data/tasks.toml`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{ArmGeometry, Configuration, Vec7, DOF};
use crate::episode::{EpisodeConfig, GoalSpec};
use crate::error::{Error, Result};
use crate::geometry::{capsule_box_distance, BoxShape, Obstacle, ObstacleLabel, Scene, Shape};

pub const TASKS_SCHEMA_VERSION: u32 = 1;

const TASKS_TOML: &str = include_str!("../data/tasks.toml");

/// Default number of rejection samples before a query is declared infeasible.
pub const DEFAULT_MAX_TRIES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    /// Fixed obstacles, new start/goal pairs.
    GoalGeneralization,
    /// Obstacles resampled every episode.
    ObstacleGeneralization,
    /// Held-out fixed scenes, never trained on.
    OutOfDistribution,
}

#[derive(Clone, Debug)]
pub enum SceneSource {
    Fixed(Arc<Scene>),
    Sampler(Difficulty),
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub category: TaskCategory,
    pub scene_source: SceneSource,
    pub episode: EpisodeConfig,
}

impl TaskSpec {
    pub fn goal_spec(&self) -> &GoalSpec {
        &self.episode.goal_spec
    }

    pub fn horizon(&self) -> usize {
        self.episode.horizon
    }

    pub fn stop_on_collision(&self) -> bool {
        self.episode.stop_on_collision
    }

    pub fn with_goal_spec(mut self, spec: GoalSpec) -> Self {
        self.episode.goal_spec = spec;
        self
    }

    pub fn with_episode(mut self, episode: EpisodeConfig) -> Self {
        self.episode = episode;
        self
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self.scene_source, SceneSource::Sampler(_))
    }

    /// The scene an episode runs in. Sampled tasks need the scene seed.
    pub fn scene(&self, scene_seed: Option<u64>) -> Result<Arc<Scene>> {
        match (&self.scene_source, scene_seed) {
            (SceneSource::Fixed(scene), _) => Ok(scene.clone()),
            (SceneSource::Sampler(d), Some(seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut scene = sample_random_boxes(*d, &mut rng);
                scene.seed = Some(seed);
                scene.name = self.name.clone();
                Ok(Arc::new(scene))
            }
            (SceneSource::Sampler(_), None) => Err(Error::InvalidArgument(format!(
                "task `{}` samples its scene and needs a scene seed",
                self.name
            ))),
        }
    }

    pub fn scene_for(&self, query: &Query) -> Result<Arc<Scene>> {
        self.scene(query.scene_seed)
    }
}

/// One episode's start/goal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub start: Configuration,
    pub goal_config: Configuration,
    pub goal_ee: Vector3<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
}

impl Query {
    pub fn new(scene: &Scene, start: Configuration, goal_config: Configuration, scene_seed: Option<u64>) -> Self {
        Query {
            start,
            goal_config,
            goal_ee: scene.arm.ee_position(&goal_config),
            scene_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub task: String,
    pub seed: u64,
    pub queries: Vec<Query>,
}

#[derive(Clone, Debug, Deserialize)]
struct TaskFile {
    schema_version: u32,
    random_boxes: RandomBoxParams,
    fixed: Vec<FixedScene>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomBoxParams {
    pub half_extent_min: f64,
    pub half_extent_max: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub easy: [u32; 2],
    pub medium: [u32; 2],
    pub hard: [u32; 2],
}

impl RandomBoxParams {
    pub fn count_range(&self, d: Difficulty) -> (u32, u32) {
        let [lo, hi] = match d {
            Difficulty::Easy => self.easy,
            Difficulty::Medium => self.medium,
            Difficulty::Hard => self.hard,
        };
        (lo, hi)
    }
}

#[derive(Clone, Debug, Deserialize)]
struct FixedScene {
    name: String,
    boxes: Vec<FixedBox>,
}

#[derive(Clone, Debug, Deserialize)]
struct FixedBox {
    name: String,
    center: [f64; 3],
    half_extents: [f64; 3],
    yaw: f64,
}

fn task_file() -> &'static TaskFile {
    static FILE: OnceLock<TaskFile> = OnceLock::new();
    FILE.get_or_init(|| {
        let f: TaskFile = toml::from_str(TASKS_TOML).expect("bundled task file parses");
        assert_eq!(f.schema_version, TASKS_SCHEMA_VERSION, "bundled task file schema");
        f
    })
}

pub fn random_box_params() -> &'static RandomBoxParams {
    &task_file().random_boxes
}

pub const GOAL_GENERALIZATION_TASKS: [&str; 5] = ["no_obstacles", "wall", "double_wall_wide_gap", "double_walls", "boxes"];
pub const OBSTACLE_GENERALIZATION_TASKS: [&str; 3] = ["random_boxes_easy", "random_boxes_medium", "random_boxes_hard"];
pub const OOD_TASKS: [&str; 3] = ["narrow_shelves", "three_shelves", "pole_shelves"];

pub fn task_names() -> Vec<&'static str> {
    GOAL_GENERALIZATION_TASKS
        .iter()
        .chain(OBSTACLE_GENERALIZATION_TASKS.iter())
        .chain(OOD_TASKS.iter())
        .copied()
        .collect()
}

/// Deterministic scene of a fixed task.
pub fn build_fixed_task(name: &str) -> Result<Scene> {
    let fixed = task_file()
        .fixed
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::UnknownTask(name.to_string()))?;
    let boxes = fixed
        .boxes
        .iter()
        .map(|b| Obstacle::cuboid(b.name.clone(), b.center, b.half_extents, b.yaw, ObstacleLabel::Varying))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene::with_obstacles(name, ArmGeometry::franka_shared(), boxes))
}

pub fn task_spec(name: &str) -> Result<TaskSpec> {
    let episode = EpisodeConfig::default();
    let sampler = |d| SceneSource::Sampler(d);
    let (category, source) = match name {
        n if GOAL_GENERALIZATION_TASKS.contains(&n) => {
            (TaskCategory::GoalGeneralization, SceneSource::Fixed(Arc::new(build_fixed_task(n)?)))
        }
        n if OOD_TASKS.contains(&n) => (TaskCategory::OutOfDistribution, SceneSource::Fixed(Arc::new(build_fixed_task(n)?))),
        "random_boxes_easy" => (TaskCategory::ObstacleGeneralization, sampler(Difficulty::Easy)),
        "random_boxes_medium" => (TaskCategory::ObstacleGeneralization, sampler(Difficulty::Medium)),
        "random_boxes_hard" => (TaskCategory::ObstacleGeneralization, sampler(Difficulty::Hard)),
        other => return Err(Error::UnknownTask(other.to_string())),
    };
    Ok(TaskSpec {
        name: name.to_string(),
        category,
        scene_source: source,
        episode,
    })
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random boxes on the table in an annulus around the base.
///
/// A box that would touch the arm in its home pose is redrawn, so the base
/// region always stays free.
pub fn sample_random_boxes(difficulty: Difficulty, rng: &mut impl Rng) -> Scene {
    let p = random_box_params();
    let arm = ArmGeometry::franka_shared();
    let home_caps = arm.world_capsules(&arm.forward_kinematics(&arm.home));
    let (lo, hi) = p.count_range(difficulty);
    let count = rng.random_range(lo..=hi);
    let mut boxes = Vec::with_capacity(count as usize);
    for i in 0..count {
        let shape = loop {
            let half = Vector3::new(
                uniform(rng, p.half_extent_min, p.half_extent_max),
                uniform(rng, p.half_extent_min, p.half_extent_max),
                uniform(rng, p.half_extent_min, p.half_extent_max),
            );
            let r = uniform(rng, p.radius_min, p.radius_max);
            let theta = uniform(rng, -PI, PI);
            let yaw = uniform(rng, -PI, PI);
            let center = Vector3::new(r * theta.cos(), r * theta.sin(), half.z);
            let b = BoxShape::new(center, half, yaw).expect("sampled box is valid");
            if home_caps.iter().all(|(_, cap)| capsule_box_distance(cap, &b) > 0.0) {
                break b;
            }
        };
        boxes.push(Obstacle {
            name: format!("box_{i}"),
            shape: Shape::Box(shape),
            label: ObstacleLabel::Varying,
        });
    }
    let name = match difficulty {
        Difficulty::Easy => "random_boxes_easy",
        Difficulty::Medium => "random_boxes_medium",
        Difficulty::Hard => "random_boxes_hard",
    };
    Scene::with_obstacles(name, arm, boxes)
}

pub fn sample_configuration(arm: &ArmGeometry, rng: &mut impl Rng) -> Configuration {
    let mut q = Vec7::zeros();
    for i in 0..DOF {
        q[i] = uniform(rng, arm.limits.lower[i], arm.limits.upper[i]);
    }
    Configuration(q)
}

/// Rejection-sample a collision-free start and goal inside the joint limits.
pub fn sample_query(scene: &Scene, rng: &mut impl Rng, max_tries: usize) -> Result<Query> {
    sample_query_with_margin(scene, rng, max_tries, 0.0)
}

pub fn sample_query_with_margin(scene: &Scene, rng: &mut impl Rng, max_tries: usize, margin: f64) -> Result<Query> {
    if max_tries == 0 {
        return Err(Error::InvalidArgument("max_tries must be at least 1".into()));
    }
    let mut tries = 0;
    let start = draw_free(scene, rng, &mut tries, max_tries, margin)?;
    let goal = draw_free(scene, rng, &mut tries, max_tries, margin)?;
    Ok(Query::new(scene, start, goal, scene.seed))
}

fn draw_free(scene: &Scene, rng: &mut impl Rng, tries: &mut usize, max_tries: usize, margin: f64) -> Result<Configuration> {
    loop {
        if *tries >= max_tries {
            return Err(Error::Infeasible { tries: *tries });
        }
        *tries += 1;
        let c = sample_configuration(&scene.arm, rng);
        if !scene.is_collision(&c, margin) {
            return Ok(c);
        }
    }
}

/// Independent RNG stream `index` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` feasible queries for a task; query `i` only consumes RNG stream `i`.
/// Query `index` of the stream for `seed`; entry `index` of
/// [`sample_query_set`] with the same seed.
pub fn sample_task_query(task: &TaskSpec, seed: u64, index: u64) -> Result<Query> {
    let margin = task.episode.collision_margin;
    let mut rng = rng_stream(seed, index);
    match &task.scene_source {
        SceneSource::Fixed(scene) => sample_query_with_margin(scene, &mut rng, DEFAULT_MAX_TRIES, margin),
        SceneSource::Sampler(_) => {
            // Redraw scenes that leave no feasible pair.
            for _ in 0..16 {
                let scene = task.scene(Some(rng.next_u64()))?;
                match sample_query_with_margin(&scene, &mut rng, DEFAULT_MAX_TRIES, margin) {
                    Ok(q) => return Ok(q),
                    Err(Error::Infeasible { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Infeasible { tries: 16 * DEFAULT_MAX_TRIES })
        }
    }
}

pub fn sample_query_set(task: &TaskSpec, n: usize, seed: u64) -> Result<QuerySet> {
    let queries = (0..n as u64)
        .map(|i| sample_task_query(task, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuerySet {
        task: task.name.clone(),
        seed,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_obstacles_has_table_and_floor_only() {
        let s = build_fixed_task("no_obstacles").unwrap();
        assert_eq!(s.obstacles.len(), 2);
        assert!(s.obstacles.iter().all(|o| o.label == ObstacleLabel::Static));
    }

    fn wall_gap(scene: &Scene) -> f64 {
        let ys: Vec<(f64, f64)> = scene
            .obstacles
            .iter()
            .filter_map(|o| match &o.shape {
                Shape::Box(b) => Some((b.center.y - b.half_extents.y, b.center.y + b.half_extents.y)),
                _ => None,
            })
            .collect();
        assert_eq!(ys.len(), 2);
        let (a, b) = (ys[0], ys[1]);
        if a.0 > b.1 { a.0 - b.1 } else { b.0 - a.1 }
    }

    #[test]
    fn double_walls_gap_is_narrower() {
        let narrow = build_fixed_task("double_walls").unwrap();
        let wide = build_fixed_task("double_wall_wide_gap").unwrap();
        assert_eq!(narrow.varying_count(), 2);
        assert!(wall_gap(&narrow) < wall_gap(&wide));
    }

    #[test]
    fn fixed_tasks_are_deterministic() {
        for name in GOAL_GENERALIZATION_TASKS.iter().chain(OOD_TASKS.iter()) {
            assert_eq!(build_fixed_task(name).unwrap(), build_fixed_task(name).unwrap());
        }
        assert!(matches!(build_fixed_task("nope"), Err(Error::UnknownTask(_))));
        assert!(matches!(task_spec("nope"), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn home_pose_free_in_every_fixed_scene() {
        let arm = ArmGeometry::franka();
        for name in GOAL_GENERALIZATION_TASKS.iter().chain(OOD_TASKS.iter()) {
            let s = build_fixed_task(name).unwrap();
            assert!(!s.is_collision(&arm.home, 0.0), "{name}");
        }
    }

    #[test]
    fn random_box_counts_in_range() {
        for (d, lo, hi) in [(Difficulty::Easy, 2, 4), (Difficulty::Medium, 3, 6), (Difficulty::Hard, 4, 8)] {
            for seed in 0..50 {
                let s = sample_random_boxes(d, &mut ChaCha8Rng::seed_from_u64(seed));
                let n = s.varying_count();
                assert!((lo..=hi).contains(&n), "{d:?} gave {n}");
                assert!(s.obstacles.iter().filter(|o| o.label == ObstacleLabel::Varying).all(|o| {
                    let Shape::Box(b) = o.shape else { return false };
                    let r = b.center.xy().norm();
                    (0.25..=0.75).contains(&r) && (b.center.z - b.half_extents.z).abs() < 1e-12
                }));
            }
        }
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let a = sample_random_boxes(Difficulty::Hard, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_random_boxes(Difficulty::Hard, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let t = task_spec("random_boxes_medium").unwrap();
        assert_eq!(t.scene(Some(3)).unwrap(), t.scene(Some(3)).unwrap());
        assert!(t.scene(None).is_err());
    }

    #[test]
    fn empty_scene_accepts_first_free_pair() {
        let s = build_fixed_task("no_obstacles").unwrap();
        let q = sample_query(&s, &mut ChaCha8Rng::seed_from_u64(1), 1000).unwrap();
        assert!(!s.is_collision(&q.start, 0.0) && !s.is_collision(&q.goal_config, 0.0));
        assert!((q.goal_ee - s.arm.ee_position(&q.goal_config)).norm() == 0.0);
    }

    #[test]
    fn fully_blocked_scene_is_infeasible() {
        let arm = ArmGeometry::franka_shared();
        let blob = Obstacle::cuboid("blob", [0.0, 0.0, 0.5], [3.0, 3.0, 3.0], 0.0, ObstacleLabel::Varying).unwrap();
        let s = Scene::with_obstacles("blocked", arm, [blob]);
        let r = sample_query(&s, &mut ChaCha8Rng::seed_from_u64(1), 50);
        assert!(matches!(r, Err(Error::Infeasible { tries: 50 })));
    }

    #[test]
    fn query_sets_are_reproducible() {
        let t = task_spec("random_boxes_easy").unwrap();
        let a = sample_query_set(&t, 5, 11).unwrap();
        let b = sample_query_set(&t, 5, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.queries.iter().all(|q| q.scene_seed.is_some()));
        for q in &a.queries {
            let scene = t.scene_for(q).unwrap();
            assert!(!scene.is_collision(&q.start, 0.0) && !scene.is_collision(&q.goal_config, 0.0));
        }
    }
}
