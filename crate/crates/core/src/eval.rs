//! Success-rate evaluation over query sets and policy timing.
//!
//! An episode succeeds when the goal predicate fires before the horizon and
//! no step collided. Evaluation engines stop on the first collision.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{ActionMode, Engine, EpisodeConfig};
use crate::error::{Error, Result};
use crate::learn::Policy;
use crate::tasks::{Query, TaskSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub collided: bool,
    pub steps: usize,
    /// Sum of realized step norms in normalized space.
    pub path_cost: f64,
    pub policy_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub policy: String,
    pub n_queries: usize,
    pub seeds: Vec<u64>,
    /// Mean over seeds of the per-seed success rate.
    pub success_rate: f64,
    /// Sample standard deviation of the per-seed rates (n - 1 denominator).
    pub success_std: f64,
    pub per_seed_success: Vec<f64>,
    /// Mean steps of successful episodes.
    pub mean_episode_length: f64,
    pub mean_path_cost: f64,
    pub collision_rate: f64,
    pub avg_step_seconds: f64,
    pub avg_trajectory_seconds: f64,
    /// Success flags of the first seed, by query index.
    pub successes: Vec<bool>,
}

impl EvalReport {
    /// One tab-separated row; see [`EvalReport::TABLE_HEADER`].
    pub fn table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}\t{:.4}\t{:.6}\t{:.3e}\t{:.3e}",
            self.task,
            self.policy,
            self.n_queries,
            self.seeds.len(),
            self.success_rate,
            self.success_std,
            self.mean_episode_length,
            self.mean_path_cost,
            self.collision_rate,
            self.avg_step_seconds,
            self.avg_trajectory_seconds
        )
    }

    pub const TABLE_HEADER: &'static str =
        "task\tpolicy\tn\tseeds\tsuccess\tstd\tmean_len\tmean_cost\tcollision_rate\tstep_s\ttraj_s";
}

/// The engine settings used for evaluation: the task's own, but collisions end
/// the episode.
pub fn eval_config(task: &TaskSpec) -> EpisodeConfig {
    EpisodeConfig {
        stop_on_collision: true,
        absorbing: false,
        ..task.episode
    }
}

/// Roll out one query to termination.
pub fn run_episode<P: Policy + ?Sized>(policy: &P, task: &TaskSpec, cfg: &EpisodeConfig, query: &Query) -> Result<EpisodeOutcome> {
    let scene = task.scene_for(query)?;
    let mut engine = Engine::new(scene, *cfg)?;
    let mut state = engine.reset(query)?;
    let goal = *engine.goal().expect("reset sets the goal");
    let mut out = EpisodeOutcome::default();
    if engine.goal_reached_now()? {
        out.success = true;
        return Ok(out);
    }
    loop {
        let t0 = Instant::now();
        let a = policy.act(&state, &goal, &cfg.goal_spec)?;
        out.policy_seconds += t0.elapsed().as_secs_f64();
        let tr = engine.step(&a, ActionMode::Relative)?;
        out.steps += 1;
        out.path_cost += tr.next_state.velocity.norm();
        out.collided |= tr.collided;
        state = tr.next_state;
        if tr.done {
            out.success = tr.goal_reached && !out.collided;
            return Ok(out);
        }
    }
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Evaluate one policy per seed on the same queries. Episodes run in
/// parallel and are folded in query order.
pub fn evaluate_policies<P: Policy>(policies: &[(u64, &P)], task: &TaskSpec, queries: &[Query]) -> Result<EvalReport> {
    if queries.is_empty() || policies.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs queries and at least one seed".into()));
    }
    let cfg = eval_config(task);
    let mut per_seed = Vec::new();
    let mut first: Vec<bool> = Vec::new();
    let (mut len_sum, mut len_n, mut cost_sum, mut coll, mut step_s, mut traj_s, mut steps) =
        (0.0, 0usize, 0.0, 0usize, 0.0, 0.0, 0usize);
    for (k, (_, policy)) in policies.iter().enumerate() {
        let outs: Vec<EpisodeOutcome> = queries
            .par_iter()
            .map(|q| run_episode(*policy, task, &cfg, q))
            .collect::<Result<_>>()?;
        let ok = outs.iter().filter(|o| o.success).count();
        per_seed.push(ok as f64 / outs.len() as f64);
        if k == 0 {
            first = outs.iter().map(|o| o.success).collect();
        }
        for o in &outs {
            if o.success {
                len_sum += o.steps as f64;
                len_n += 1;
            }
            cost_sum += o.path_cost;
            coll += usize::from(o.collided);
            step_s += o.policy_seconds;
            traj_s += o.policy_seconds;
            steps += o.steps;
        }
    }
    let episodes = (queries.len() * policies.len()) as f64;
    Ok(EvalReport {
        task: task.name.clone(),
        policy: policies[0].1.name(),
        n_queries: queries.len(),
        seeds: policies.iter().map(|(s, _)| *s).collect(),
        success_rate: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
        success_std: sample_std(&per_seed),
        per_seed_success: per_seed,
        mean_episode_length: if len_n > 0 { len_sum / len_n as f64 } else { 0.0 },
        mean_path_cost: cost_sum / episodes,
        collision_rate: coll as f64 / episodes,
        avg_step_seconds: if steps > 0 { step_s / steps as f64 } else { 0.0 },
        avg_trajectory_seconds: traj_s / episodes,
        successes: first,
    })
}

/// Evaluate a single (deterministic) policy under each seed.
pub fn evaluate<P: Policy>(policy: &P, task: &TaskSpec, queries: &[Query], seeds: &[u64]) -> Result<EvalReport> {
    let ps: Vec<(u64, &P)> = seeds.iter().map(|&s| (s, policy)).collect();
    evaluate_policies(&ps, task, queries)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub avg_step_seconds: f64,
    pub avg_trajectory_seconds: f64,
    pub mean_episode_length: f64,
    pub episodes: usize,
}

/// Wall-clock time of policy calls only, sequentially over `n` episodes.
pub fn measure_timing<P: Policy>(policy: &P, task: &TaskSpec, queries: &[Query], n: usize) -> Result<Timing> {
    if n == 0 || queries.is_empty() {
        return Err(Error::InvalidArgument("timing needs at least one episode".into()));
    }
    let cfg = eval_config(task);
    let (mut secs, mut steps) = (0.0, 0usize);
    for i in 0..n {
        let o = run_episode(policy, task, &cfg, &queries[i % queries.len()])?;
        secs += o.policy_seconds;
        steps += o.steps;
    }
    Ok(Timing {
        avg_step_seconds: if steps > 0 { secs / steps as f64 } else { 0.0 },
        avg_trajectory_seconds: secs / n as f64,
        mean_episode_length: steps as f64 / n as f64,
        episodes: n,
    })
}
