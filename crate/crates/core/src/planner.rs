//! RRT-Connect in normalized configuration space and the demonstration
//! pipeline built on it: plan, densify, verify in the episode engine, store.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::{normalize, NormalizedConfig, Vec7, DOF};
use crate::episode::{ActionMode, Engine, EpisodeConfig};
use crate::error::{Error, Result, VerificationFailure};
use crate::geometry::{edge_points, Scene, DEFAULT_EDGE_STEP};
use crate::io;
use crate::tasks::{rng_stream, sample_query_with_margin, Query, SceneSource, TaskSpec, DEFAULT_MAX_TRIES};

/// Planning attempts per query before the query is dropped.
pub const MAX_ATTEMPTS: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub max_iterations: usize,
    /// Longest tree edge, normalized L2.
    pub extend_step: f64,
    pub connect_tolerance: f64,
    pub edge_check_step: f64,
    pub collision_margin: f64,
    pub seed: u64,
    /// Joints the planner may move; the others stay at the start value.
    pub active_joints: [bool; DOF],
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            max_iterations: 20_000,
            extend_step: 0.05,
            connect_tolerance: 1e-6,
            edge_check_step: DEFAULT_EDGE_STEP,
            collision_margin: 0.0,
            seed: 0,
            active_joints: [true; DOF],
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.extend_step > 0.0
            && self.connect_tolerance > 0.0
            && self.edge_check_step > 0.0
            && self.collision_margin >= 0.0
            && self.active_joints.iter().any(|&a| a);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("planner parameters must be positive with an active joint".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub path: Vec<NormalizedConfig>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanOutcome {
    Success(Plan),
    Failure { iterations_used: usize },
}

impl PlanOutcome {
    pub fn plan(self) -> Option<Plan> {
        match self {
            PlanOutcome::Success(p) => Some(p),
            PlanOutcome::Failure { .. } => None,
        }
    }
}

struct Tree {
    nodes: Vec<NormalizedConfig>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: NormalizedConfig) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &NormalizedConfig) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.0 - q.0).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn add(&mut self, q: NormalizedConfig, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node chain.
    fn branch(&self, mut i: usize) -> Vec<NormalizedConfig> {
        let mut out = vec![self.nodes[i]];
        while self.parent[i] != usize::MAX {
            i = self.parent[i];
            out.push(self.nodes[i]);
        }
        out.reverse();
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

struct Ctx<'a> {
    scene: &'a Scene,
    p: &'a PlannerParams,
}

impl Ctx<'_> {
    fn free(&self, a: &NormalizedConfig, b: &NormalizedConfig) -> bool {
        edge_points(a, b, self.p.edge_check_step)
            .skip(1)
            .all(|s| !self.scene.is_collision_normalized(&s, self.p.collision_margin))
    }

    fn extend(&self, tree: &mut Tree, target: &NormalizedConfig) -> Extend {
        let near = tree.nearest(target);
        let from = tree.nodes[near];
        let d = from.distance(target);
        let (new, reached) = if d <= self.p.extend_step {
            (*target, true)
        } else {
            (from.lerp(target, self.p.extend_step / d), false)
        };
        if !self.free(&from, &new) {
            return Extend::Trapped;
        }
        let id = tree.add(new, near);
        if reached { Extend::Reached(id) } else { Extend::Advanced(id) }
    }

    fn connect(&self, tree: &mut Tree, target: &NormalizedConfig) -> Extend {
        loop {
            match self.extend(tree, target) {
                Extend::Advanced(id) if tree.nodes[id].distance(target) <= self.p.connect_tolerance => {
                    return Extend::Reached(id)
                }
                Extend::Advanced(_) => continue,
                other => return other,
            }
        }
    }
}

/// Bidirectional RRT. The first "sample" of the start tree is the goal itself,
/// so a clear straight line is found on iteration one.
pub fn rrt_connect(
    scene: &Scene,
    s_start: &NormalizedConfig,
    s_goal: &NormalizedConfig,
    params: &PlannerParams,
) -> Result<PlanOutcome> {
    params.validate()?;
    if scene.is_collision_normalized(s_start, params.collision_margin) {
        return Err(Error::InvalidEndpoint("start"));
    }
    if scene.is_collision_normalized(s_goal, params.collision_margin) {
        return Err(Error::InvalidEndpoint("goal"));
    }
    let ctx = Ctx { scene, p: params };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut a = Tree::new(*s_start);
    let mut b = Tree::new(*s_goal);
    let mut a_is_start = true;
    for it in 0..params.max_iterations {
        let q = if it == 0 {
            *s_goal
        } else {
            let mut v = s_start.0;
            for j in 0..DOF {
                if params.active_joints[j] {
                    v[j] = rng.random_range(-1.0..=1.0);
                }
            }
            NormalizedConfig(v)
        };
        let new = match ctx.extend(&mut a, &q) {
            Extend::Trapped => None,
            Extend::Reached(id) | Extend::Advanced(id) => Some(id),
        };
        if let Some(id) = new {
            let target = a.nodes[id];
            if let Extend::Reached(bid) = ctx.connect(&mut b, &target) {
                let (sa, sb) = if a_is_start { (&a, &b) } else { (&b, &a) };
                let (ia, ib) = if a_is_start { (id, bid) } else { (bid, id) };
                let mut path = sa.branch(ia);
                let mut tail = sb.branch(ib);
                tail.reverse();
                // The joint node appears in both halves.
                path.extend(tail.into_iter().skip(1));
                *path.last_mut().expect("non-empty path") = *s_goal;
                return Ok(PlanOutcome::Success(Plan {
                    path,
                    iterations: it + 1,
                }));
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Ok(PlanOutcome::Failure {
        iterations_used: params.max_iterations,
    })
}

fn collinear(a: &NormalizedConfig, b: &NormalizedConfig, c: &NormalizedConfig) -> bool {
    let u = b.0 - a.0;
    let v = c.0 - b.0;
    let (nu, nv) = (u.norm(), v.norm());
    nu == 0.0 || nv == 0.0 || (u.dot(&v) / (nu * nv) - 1.0).abs() < 1e-12
}

/// Drop interior nodes that lie on a straight continuation. Geometry is
/// unchanged; no shortcutting.
pub fn merge_collinear(path: &[NormalizedConfig]) -> Vec<NormalizedConfig> {
    let mut out: Vec<NormalizedConfig> = Vec::with_capacity(path.len());
    for q in path {
        while out.len() >= 2 && collinear(&out[out.len() - 2], &out[out.len() - 1], q) {
            out.pop();
        }
        if out.last() != Some(q) {
            out.push(*q);
        }
    }
    out
}

/// Split every segment uniformly so consecutive nodes are at most `max_step` apart.
pub fn densify(path: &[NormalizedConfig], max_step: f64) -> Vec<NormalizedConfig> {
    let mut out = Vec::new();
    if let Some(first) = path.first() {
        out.push(*first);
    }
    for w in path.windows(2) {
        let d = w[0].distance(&w[1]);
        let mut n = ((d / max_step).ceil() as usize).max(1);
        if d / n as f64 > max_step {
            n += 1;
        }
        for k in 1..n {
            out.push(w[0].lerp(&w[1], k as f64 / n as f64));
        }
        out.push(w[1]);
    }
    out
}

/// Consecutive differences.
pub fn path_to_actions(path: &[NormalizedConfig], bound: f64) -> Result<Vec<Vec7>> {
    if path.len() < 2 {
        return Err(Error::PathTooShort);
    }
    path.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let d = w[1].0 - w[0].0;
            let norm = d.norm();
            if norm > bound + 1e-12 {
                Err(Error::StepTooLarge { index: i, norm, bound })
            } else {
                Ok(d)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub query: Query,
    /// Executed states, start to goal.
    pub states: Vec<NormalizedConfig>,
    /// Realized displacements; `actions[k] = states[k+1] - states[k]`.
    pub actions: Vec<Vec7>,
    pub verified: bool,
    pub attempts_used: u8,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn path_cost(&self) -> f64 {
        self.actions.iter().map(|a| a.norm()).sum()
    }
}

/// Follow the densified plan node by node in subgoal mode.
pub fn verify_plan(engine: &mut Engine, query: &Query, path: &[NormalizedConfig]) -> Result<Demonstration> {
    let bound = engine.config().action_bound;
    let nodes = densify(&merge_collinear(path), bound);
    let s0 = engine.reset(query)?;
    let mut states = vec![s0.s];
    let mut actions = Vec::new();
    if engine.goal_reached_now()? {
        return Ok(Demonstration {
            query: query.clone(),
            states,
            actions,
            verified: true,
            attempts_used: 1,
        });
    }
    for node in nodes.iter().skip(1) {
        let tr = engine.step(&node.0, ActionMode::Subgoal)?;
        if tr.collided {
            return Err(Error::VerificationFailed {
                step: tr.t,
                reason: VerificationFailure::Collision,
            });
        }
        states.push(tr.next_state.s);
        actions.push(tr.next_state.velocity);
        if tr.goal_reached {
            return open_loop(engine, query, actions);
        }
        if tr.done {
            break;
        }
    }
    Err(Error::VerificationFailed {
        step: engine.t(),
        reason: VerificationFailure::Timeout,
    })
}

/// Re-run extracted actions in relative mode and keep that trace. `s + (s' - s)`
/// can differ from `s'` in the last bit, which matters at the goal boundary.
fn open_loop(engine: &mut Engine, query: &Query, mut actions: Vec<Vec7>) -> Result<Demonstration> {
    let s0 = engine.reset(query)?;
    let mut states = vec![s0.s];
    for k in 0..actions.len() {
        let tr = engine.step(&actions[k], ActionMode::Relative)?;
        if tr.collided {
            return Err(Error::VerificationFailed { step: tr.t, reason: VerificationFailure::Collision });
        }
        states.push(tr.next_state.s);
        if tr.goal_reached {
            actions.truncate(k + 1);
            return Ok(Demonstration {
                query: query.clone(),
                states,
                actions,
                verified: true,
                attempts_used: 1,
            });
        }
    }
    Err(Error::VerificationFailed { step: engine.t(), reason: VerificationFailure::Timeout })
}

/// Open-loop replay: reaches the goal without collision and retraces the
/// stored states.
pub fn replay_demo(scene: Arc<Scene>, cfg: &EpisodeConfig, demo: &Demonstration) -> Result<()> {
    if demo.states.len() != demo.actions.len() + 1 {
        return Err(Error::InvalidArgument("demo states and actions disagree in length".into()));
    }
    let mut engine = Engine::new(scene, *cfg)?;
    engine.reset(&demo.query)?;
    if demo.actions.is_empty() {
        return if engine.goal_reached_now()? {
            Ok(())
        } else {
            Err(Error::VerificationFailed { step: 0, reason: VerificationFailure::Timeout })
        };
    }
    for (k, a) in demo.actions.iter().enumerate() {
        let tr = engine.step(a, ActionMode::Relative)?;
        if tr.collided {
            return Err(Error::VerificationFailed { step: tr.t, reason: VerificationFailure::Collision });
        }
        if (tr.next_state.s.0 - demo.states[k + 1].0).norm() > 1e-9 {
            return Err(Error::InvalidArgument(format!("replay diverged from stored state {}", k + 1)));
        }
        let last = k + 1 == demo.actions.len();
        if tr.goal_reached != last {
            return Err(Error::VerificationFailed {
                step: tr.t,
                reason: VerificationFailure::Timeout,
            });
        }
    }
    Ok(())
}

/// Plan and verify one query with up to [`MAX_ATTEMPTS`] planner seeds.
pub fn demo_for_query(
    scene: &Arc<Scene>,
    cfg: &EpisodeConfig,
    query: &Query,
    params: &PlannerParams,
    rng: &mut impl RngCore,
) -> Result<Option<Demonstration>> {
    let lim = &scene.arm.limits;
    let s = normalize(&query.start, lim)?;
    let g = normalize(&query.goal_config, lim)?;
    let mut engine = Engine::new(scene.clone(), *cfg)?;
    for attempt in 1..=MAX_ATTEMPTS {
        let p = PlannerParams { seed: rng.next_u64(), ..*params };
        let Some(plan) = rrt_connect(scene, &s, &g, &p)?.plan() else { continue };
        match verify_plan(&mut engine, query, &plan.path) {
            Ok(mut d) => {
                d.attempts_used = attempt;
                return Ok(Some(d));
            }
            Err(Error::VerificationFailed { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub requested: usize,
    pub collected: usize,
    pub queries_tried: usize,
    pub queries_rejected: usize,
    pub attempts_histogram: [usize; MAX_ATTEMPTS as usize],
    pub wall_seconds: f64,
}

impl CollectionReport {
    pub fn reject_rate(&self) -> f64 {
        if self.queries_tried == 0 {
            0.0
        } else {
            self.queries_rejected as f64 / self.queries_tried as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub task: String,
    pub seed: u64,
    pub episode: EpisodeConfig,
    pub planner: PlannerParams,
    pub demos: Vec<Demonstration>,
}

/// Give up on a slot after this many rejected queries.
const MAX_QUERIES_PER_SLOT: usize = 50;

/// `n` verified demonstrations; slot `i` draws from RNG stream `i` only, so the
/// result does not depend on thread count.
pub fn collect_demos(task: &TaskSpec, n: usize, seed: u64, params: &PlannerParams) -> Result<(DemoDataset, CollectionReport)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let start = Instant::now();
    let cfg = task.episode;
    let params = PlannerParams { collision_margin: cfg.collision_margin, ..*params };
    let slots: Vec<Result<(Option<Demonstration>, usize, [usize; 3])>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(seed, i as u64);
            let mut tried = 0;
            let mut hist = [0; 3];
            while tried < MAX_QUERIES_PER_SLOT {
                tried += 1;
                let scene = match &task.scene_source {
                    SceneSource::Fixed(s) => s.clone(),
                    SceneSource::Sampler(_) => task.scene(Some(rng.next_u64()))?,
                };
                let query = match sample_query_with_margin(&scene, &mut rng, DEFAULT_MAX_TRIES, cfg.collision_margin) {
                    Ok(q) => q,
                    Err(Error::Infeasible { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if let Some(d) = demo_for_query(&scene, &cfg, &query, &params, &mut rng)? {
                    hist[d.attempts_used as usize - 1] += 1;
                    return Ok((Some(d), tried, hist));
                }
            }
            Ok((None, tried, hist))
        })
        .collect();
    let mut report = CollectionReport { requested: n, ..Default::default() };
    let mut demos = Vec::with_capacity(n);
    for slot in slots {
        let (d, tried, hist) = slot?;
        report.queries_tried += tried;
        report.queries_rejected += tried - usize::from(d.is_some());
        for k in 0..3 {
            report.attempts_histogram[k] += hist[k];
        }
        demos.extend(d);
    }
    report.collected = demos.len();
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((
        DemoDataset {
            task: task.name.clone(),
            seed,
            episode: cfg,
            planner: params,
            demos,
        },
        report,
    ))
}

/// Replay every demo of a dataset; returns the index of the first bad one.
pub fn verify_dataset(task: &TaskSpec, ds: &DemoDataset) -> Result<()> {
    ds.demos.par_iter().enumerate().try_for_each(|(i, d)| {
        let scene = task.scene_for(&d.query)?;
        replay_demo(scene, &ds.episode, d).map_err(|e| Error::InvalidArgument(format!("demo {i}: {e}")))
    })
}

#[derive(Serialize, Deserialize)]
struct DemoHeader {
    schema_version: u32,
    kind: String,
    task: String,
    seed: u64,
    count: usize,
    episode: EpisodeConfig,
    planner: PlannerParams,
}

pub fn write_demos(w: impl std::io::Write, ds: &DemoDataset) -> Result<()> {
    let h = DemoHeader {
        schema_version: io::SCHEMA_VERSION,
        kind: "demos".into(),
        task: ds.task.clone(),
        seed: ds.seed,
        count: ds.demos.len(),
        episode: ds.episode,
        planner: ds.planner,
    };
    io::write_jsonl(w, &h, &ds.demos)
}

pub fn read_demos(r: impl std::io::BufRead) -> Result<DemoDataset> {
    let (h, demos): (DemoHeader, Vec<Demonstration>) = io::read_jsonl(r, "demos")?;
    if h.count != demos.len() {
        return Err(Error::Parse {
            line: demos.len() + 1,
            message: format!("header declares {} demos, file has {}", h.count, demos.len()),
        });
    }
    Ok(DemoDataset {
        task: h.task,
        seed: h.seed,
        episode: h.episode,
        planner: h.planner,
        demos,
    })
}

pub fn save_demos(path: impl AsRef<std::path::Path>, ds: &DemoDataset) -> Result<()> {
    write_demos(io::create(path)?, ds)
}

/// Load a dataset, optionally replaying every demo against its task.
pub fn load_demos(path: impl AsRef<std::path::Path>, verify: bool) -> Result<DemoDataset> {
    let ds = read_demos(io::open(path)?)?;
    if verify {
        let task = crate::tasks::task_spec(&ds.task)?.with_episode(ds.episode);
        verify_dataset(&task, &ds)?;
    }
    Ok(ds)
}
