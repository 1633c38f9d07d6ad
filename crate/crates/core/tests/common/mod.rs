//! Measurements shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use std::collections::VecDeque;

use armgym::arm::{clip_action, denormalize, normalize, ArmGeometry, NormalizedConfig, Vec7, ACTION_BOUND};
use armgym::episode::{ActionMode, Engine, EpisodeConfig, Transition};
use armgym::geometry::{
    capsule_box_distance, capsule_capsule_distance, edge_points, BoxShape, Capsule, Obstacle, ObstacleLabel, Scene,
    DEFAULT_EDGE_STEP,
};
use armgym::learn::{inject_demo, relabel_final, DemoIndex, MlpPolicy, ReplayBuffer};
use armgym::planner::{collect_demos, replay_demo, rrt_connect, verify_plan, PlanOutcome, PlannerParams};
use armgym::tasks::{build_fixed_task, sample_query, sample_query_set, task_spec};
use armgym::episode::{GoalRepresentation, GoalSpec};
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- normalization and clipping

/// (max round-trip error, max clipped norm) over `n` random vectors.
pub fn normalization_and_clip(n: usize, seed: u64) -> (f64, f64) {
    let lim = &ArmGeometry::franka().limits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rt, mut clip): (f64, f64) = (0.0, 0.0);
    for _ in 0..n {
        let s = NormalizedConfig(Vec7::from_fn(|_, _| rng.random_range(-1.0..=1.0)));
        let back = normalize(&denormalize(&s, lim).unwrap(), lim).unwrap();
        rt = rt.max((back.0 - s.0).amax());
        let d = Vec7::from_fn(|_, _| rng.random_range(-1.0..1.0)) * rng.random_range(0.0..0.2);
        clip = clip.max(clip_action(&d, ACTION_BOUND).norm());
    }
    (rt, clip)
}

// ---- distance oracles

pub const SAMPLES: usize = 10_000;

pub fn rand_point(rng: &mut impl Rng, span: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(-span..span))
}

pub fn rand_capsule(rng: &mut impl Rng) -> Capsule {
    let a = rand_point(rng, 0.6);
    let b = a + rand_point(rng, 0.4);
    Capsule::new(a, b, rng.random_range(0.01..0.15)).unwrap()
}

pub fn rand_box(rng: &mut impl Rng) -> BoxShape {
    BoxShape::new(
        rand_point(rng, 0.4),
        Vector3::new(rng.random_range(0.02..0.4), rng.random_range(0.02..0.4), rng.random_range(0.02..0.4)),
        rng.random_range(-3.2..3.2),
    )
    .unwrap()
}

pub fn point_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() == 0.0 { 0.0 } else { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) };
    (a + ab * t - p).norm()
}

pub fn segment_points(a: &Vector3<f64>, b: &Vector3<f64>) -> impl Iterator<Item = Vector3<f64>> {
    let (a, b) = (*a, *b);
    (0..SAMPLES).map(move |k| a + (b - a) * (k as f64 / (SAMPLES - 1) as f64))
}

pub fn oracle_capsule_capsule(c1: &Capsule, c2: &Capsule) -> f64 {
    let d = segment_points(&c1.a, &c1.b)
        .map(|p| point_segment(&p, &c2.a, &c2.b))
        .fold(f64::INFINITY, f64::min);
    d - c1.radius - c2.radius
}

/// Signed distance from a world point to a yawed box.
pub fn box_sdf(p: &Vector3<f64>, b: &BoxShape) -> f64 {
    let d = p - b.center;
    let (s, c) = b.yaw.sin_cos();
    let local = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
    let q: Vec<f64> = (0..3).map(|i| local[i].abs() - b.half_extents[i]).collect();
    let out = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    let inn = q[0].max(q[1]).max(q[2]).min(0.0);
    out + inn
}

pub fn oracle_capsule_box(c: &Capsule, b: &BoxShape) -> f64 {
    segment_points(&c.a, &c.b).map(|p| box_sdf(&p, b)).fold(f64::INFINITY, f64::min) - c.radius
}

/// Worst absolute error of capsule-capsule and capsule-box distances.
pub fn distance_oracle_errors(n: usize, seed: u64) -> (f64, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cc, mut cb): (f64, f64) = (0.0, 0.0);
    let mut penetrating = 0;
    for _ in 0..n {
        let (c1, c2) = (rand_capsule(&mut rng), rand_capsule(&mut rng));
        cc = cc.max((capsule_capsule_distance(&c1, &c2) - oracle_capsule_capsule(&c1, &c2)).abs());
        let b = rand_box(&mut rng);
        let got = capsule_box_distance(&c1, &b);
        penetrating += usize::from(got < 0.0);
        cb = cb.max((got - oracle_capsule_box(&c1, &b)).abs());
    }
    (cc, cb, penetrating)
}

/// Random short edges from feasible configurations in obstacle scenes:
/// (disagreements with a 10x finer check, edges blocked).
pub fn edge_disagreements(n: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes: Vec<Scene> = ["wall", "double_walls", "boxes", "narrow_shelves", "three_shelves", "pole_shelves"]
        .iter()
        .map(|n| build_fixed_task(n).unwrap())
        .collect();
    let (mut disagreements, mut blocked) = (0, 0);
    for i in 0..n {
        let scene = &scenes[i % scenes.len()];
        let q = sample_query(scene, &mut rng, 10_000).unwrap();
        let s1 = normalize(&q.start, &scene.arm.limits).unwrap();
        let dir = Vec7::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let len = rng.random_range(0.0..0.1);
        let s2 = NormalizedConfig::clamped(s1.0 + dir * len);
        let coarse = scene.edge_collision_free(&s1, &s2, DEFAULT_EDGE_STEP, 0.0);
        let fine = scene.edge_collision_free(&s1, &s2, DEFAULT_EDGE_STEP / 10.0, 0.0);
        disagreements += usize::from(coarse != fine);
        blocked += usize::from(!fine);
    }
    (disagreements, blocked)
}

// ---- two-joint grid oracle

pub const GRID_N: usize = 201;
pub const GRID_RES: f64 = 0.01;

/// Two tall plates on either side of the base and one low box in front.
/// With joints 3..7 frozen at home the yaw range splits into three pockets.
pub fn fins() -> Scene {
    Scene::with_obstacles(
        "fins",
        ArmGeometry::franka_shared(),
        [
            Obstacle::cuboid("fin_n", [0.0, 0.55, 0.6], [0.02, 0.4, 0.6], 0.0, ObstacleLabel::Varying).unwrap(),
            Obstacle::cuboid("fin_s", [0.0, -0.55, 0.6], [0.02, 0.4, 0.6], 0.0, ObstacleLabel::Varying).unwrap(),
            Obstacle::cuboid("stub", [0.6, 0.0, 0.15], [0.1, 0.1, 0.15], 0.0, ObstacleLabel::Varying).unwrap(),
        ],
    )
}

pub struct Slice {
    pub base: NormalizedConfig,
    pub free: Vec<bool>,
    pub label: Vec<usize>,
}

impl Slice {
    pub fn at(&self, i: usize, j: usize) -> NormalizedConfig {
        let mut s = self.base.0;
        s[0] = -1.0 + GRID_RES * i as f64;
        s[1] = -1.0 + GRID_RES * j as f64;
        NormalizedConfig(s)
    }

    /// Occupancy of the joint 1/2 plane and its 4-connected components.
    pub fn build(scene: &Scene, base: NormalizedConfig) -> Slice {
        let n = GRID_N;
        let mut sl = Slice { base, free: vec![false; n * n], label: vec![0; n * n] };
        for i in 0..n {
            for j in 0..n {
                sl.free[i * n + j] = !scene.is_collision_normalized(&sl.at(i, j), 0.0);
            }
        }
        let mut next = 0;
        for start in 0..n * n {
            if !sl.free[start] || sl.label[start] != 0 {
                continue;
            }
            next += 1;
            sl.label[start] = next;
            let mut q = VecDeque::from([start]);
            while let Some(c) = q.pop_front() {
                let (i, j) = ((c / n) as i64, (c % n) as i64);
                for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                        continue;
                    }
                    let k = a as usize * n + b as usize;
                    if sl.free[k] && sl.label[k] == 0 {
                        sl.label[k] = next;
                        q.push_back(k);
                    }
                }
            }
        }
        sl
    }

    pub fn components(&self) -> usize {
        *self.label.iter().max().unwrap_or(&0)
    }

    /// Cells whose 5x5 neighbourhood is free, so grid and continuum agree.
    pub fn interior(&self) -> Vec<(usize, usize)> {
        let n = GRID_N;
        let mut out = Vec::new();
        for i in 2..n - 2 {
            for j in 2..n - 2 {
                if (i - 2..=i + 2).all(|a| (j - 2..=j + 2).all(|b| self.free[a * n + b])) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct GridOracleOutcome {
    pub solvable: usize,
    pub unsolvable: usize,
    pub disagreements: usize,
    pub bad_paths: usize,
}

/// Plan between interior cells of the fins slice and compare with the grid.
pub fn grid_oracle(solvable: usize, unsolvable: usize, seed: u64) -> GridOracleOutcome {
    let scene = fins();
    let base = normalize(&scene.arm.home, &scene.arm.limits).unwrap();
    let slice = Slice::build(&scene, base);
    let cells = slice.interior();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridOracleOutcome::default();
    let mut mask = [false; 7];
    mask[0] = true;
    mask[1] = true;
    while out.solvable < solvable || out.unsolvable < unsolvable {
        let a = cells[rng.random_range(0..cells.len())];
        let b = cells[rng.random_range(0..cells.len())];
        let same = slice.label[a.0 * GRID_N + a.1] == slice.label[b.0 * GRID_N + b.1];
        if (same && out.solvable >= solvable) || (!same && out.unsolvable >= unsolvable) {
            continue;
        }
        let (s, g) = (slice.at(a.0, a.1), slice.at(b.0, b.1));
        let p = PlannerParams { seed: rng.random(), active_joints: mask, ..Default::default() };
        let res = rrt_connect(&scene, &s, &g, &p).unwrap();
        if same {
            out.solvable += 1;
        } else {
            out.unsolvable += 1;
        }
        match res {
            PlanOutcome::Success(plan) => {
                out.disagreements += usize::from(!same);
                let sound = plan.path.windows(2).all(|w| {
                    edge_points(&w[0], &w[1], p.edge_check_step).all(|q| !scene.is_collision_normalized(&q, 0.0))
                        && (2..7).all(|k| w[1].0[k] == base.0[k])
                });
                out.bad_paths += usize::from(!sound);
            }
            PlanOutcome::Failure { .. } => out.disagreements += usize::from(same),
        }
    }
    out
}

// ---- planner soundness on walls

#[derive(Debug, Default)]
pub struct SoundnessOutcome {
    pub runs: usize,
    pub plans: usize,
    pub bad_edges: usize,
    pub verified: usize,
    pub replay_failures: usize,
}

pub fn planner_soundness(runs: usize, seed: u64) -> SoundnessOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SoundnessOutcome::default();
    for (k, name) in ["wall", "double_walls"].iter().cycle().take(runs).enumerate() {
        let task = task_spec(name).unwrap();
        let scene = task.scene(None).unwrap();
        let q = sample_query(&scene, &mut rng, 10_000).unwrap();
        let lim = &scene.arm.limits;
        let (s, g) = (normalize(&q.start, lim).unwrap(), normalize(&q.goal_config, lim).unwrap());
        let p = PlannerParams { seed: k as u64, ..Default::default() };
        out.runs += 1;
        let Some(plan) = rrt_connect(&scene, &s, &g, &p).unwrap().plan() else { continue };
        out.plans += 1;
        let edges_ok = plan
            .path
            .windows(2)
            .all(|w| scene.edge_collision_free(&w[0], &w[1], p.edge_check_step, 0.0));
        out.bad_edges += usize::from(!edges_ok);
        let mut engine = Engine::new(scene.clone(), task.episode).unwrap();
        if let Ok(demo) = verify_plan(&mut engine, &q, &plan.path) {
            out.verified += 1;
            out.replay_failures += usize::from(replay_demo(scene.clone(), &task.episode, &demo).is_err());
        }
    }
    out
}

// ---- MDP accounting

/// One episode of scaled go-to-goal plus uniform noise. Weak drives time out.
pub fn noisy_episode(engine: &mut Engine, g: &NormalizedConfig, rng: &mut impl Rng) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut s = *engine.state().unwrap();
    let drive = rng.random_range(0.0..1.2);
    loop {
        let noise = Vec7::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 0.03;
        let a = clip_action(&(g.0 - s.s.0), ACTION_BOUND) * drive + noise;
        let tr = engine.step(&a, ActionMode::Relative).unwrap();
        s = tr.next_state;
        let done = tr.done;
        out.push(tr);
        if done {
            return out;
        }
    }
}

#[derive(Debug, Default)]
pub struct AccountingOutcome {
    pub episodes: usize,
    pub reached: usize,
    pub return_mismatches: usize,
    pub relabeled: usize,
    pub her_violations: usize,
}

/// Returns against an independent first-reach count; one zero-cost terminal
/// per hindsight copy.
pub fn mdp_accounting(n: usize, seed: u64) -> AccountingOutcome {
    let task = task_spec("no_obstacles").unwrap();
    let scene = task.scene(None).unwrap();
    let cfg = EpisodeConfig { stop_on_collision: false, goal_spec: GoalSpec::new(GoalRepresentation::Config), ..task.episode };
    let tol = cfg.goal_spec.config_tolerance;
    let qs = sample_query_set(&task, n, seed).unwrap().queries;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AccountingOutcome::default();
    for q in &qs {
        let mut engine = Engine::new(scene.clone(), cfg).unwrap();
        engine.reset(q).unwrap();
        let g = normalize(&q.goal_config, &scene.arm.limits).unwrap();
        let ep = noisy_episode(&mut engine, &g, &mut rng);
        let first = ep.iter().position(|t| (t.next_state.s.0 - g.0).norm() <= tol);
        let expected = -(first.unwrap_or(cfg.horizon).min(cfg.horizon) as f64);
        let ret: f64 = ep.iter().map(|t| t.cost).sum();
        out.episodes += 1;
        out.reached += usize::from(first.is_some());
        out.return_mismatches += usize::from(ret != expected || ep.len() != first.map_or(cfg.horizon, |k| k + 1));
        if first.is_none() {
            out.relabeled += 1;
            let h = relabel_final(&ep, &cfg.goal_spec).unwrap();
            let zeros = h.iter().filter(|t| t.cost == 0.0).count();
            let last = h.last().unwrap();
            let ok = zeros == 1 && last.cost == 0.0 && last.done && h[..h.len() - 1].iter().all(|t| t.cost == -1.0 && !t.done);
            out.her_violations += usize::from(!ok);
        }
    }
    out
}

/// Empirical injection rate over `failures` simulated failed episodes.
pub fn injection_rate(p: f64, failures: usize, seed: u64) -> f64 {
    let task = task_spec("no_obstacles").unwrap();
    let (ds, _) = collect_demos(&task, 5, seed, &PlannerParams::default()).unwrap();
    let index = DemoIndex::new(ds.demos);
    let queries = sample_query_set(&task, 50, seed + 1).unwrap().queries;
    let arm = ArmGeometry::franka();
    let mut buf = ReplayBuffer::new(1 << 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut injected = 0;
    for k in 0..failures {
        let n = inject_demo(&mut buf, &queries[k % queries.len()], p, &index, task.goal_spec(), arm, &mut rng).unwrap();
        injected += usize::from(n > 0);
    }
    let c = buf.counts();
    assert_eq!(c.total(), buf.len());
    injected as f64 / failures as f64
}

// ---- gradient check

/// Max relative error of the analytic loss gradient against central
/// differences, with a floor on the denominator.
pub fn gradient_check(seed: u64, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (rep, hidden) in [
        (GoalRepresentation::Config, vec![16, 16]),
        (GoalRepresentation::Ee, vec![12]),
        (GoalRepresentation::Combined, vec![8, 8, 8, 8]),
    ] {
        let mut net = MlpPolicy::new(GoalSpec::new(rep), &hidden, rng.random()).unwrap();
        let rows = 6;
        let x = Array2::from_shape_fn((rows, net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((rows, 7), |_| rng.random_range(-1.0..1.0));
        let (_, g) = net.loss_and_flat_grad(x.view(), y.view());
        let p0 = net.params();
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + eps;
            net.set_params(&p).unwrap();
            let up = net.loss(x.view(), y.view());
            p[k] = p0[k] - eps;
            net.set_params(&p).unwrap();
            let down = net.loss(x.view(), y.view());
            let num = (up - down) / (2.0 * eps);
            let rel = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        net.set_params(&p0).unwrap();
    }
    worst
}
