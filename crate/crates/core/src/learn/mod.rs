//! Replay machinery, the go-to-goal baseline and behavioral cloning.

mod mlp;

pub use mlp::{bc_dataset, bc_fit, bc_train, moving_average, BcHyper, BcResult, MlpPolicy, TrainingMeta, POLICY_SCHEMA_VERSION};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{clip_action, denormalize_unchecked, ArmGeometry, NormalizedConfig, Vec7, ACTION_BOUND};
use crate::episode::{goal_reached, GoalRepresentation, GoalSpec, GoalValue, State, Transition};
use crate::error::{Error, Result};
use crate::planner::Demonstration;
use crate::tasks::Query;

/// Anything that maps (state, goal) to a relative action.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn act(&self, state: &State, goal: &GoalValue, spec: &GoalSpec) -> Result<Vec7>;
}

/// Step straight towards the goal configuration.
pub fn go_to_goal(state: &State, goal_config: Option<&NormalizedConfig>) -> Result<Vec7> {
    go_to_goal_bounded(state, goal_config, ACTION_BOUND)
}

pub fn go_to_goal_bounded(state: &State, goal_config: Option<&NormalizedConfig>, bound: f64) -> Result<Vec7> {
    let g = goal_config.ok_or(Error::MissingConfigGoal)?;
    Ok(clip_action(&(g.0 - state.s.0), bound))
}

#[derive(Clone, Copy, Debug)]
pub struct GoToGoal {
    pub action_bound: f64,
}

impl Default for GoToGoal {
    fn default() -> Self {
        GoToGoal {
            action_bound: ACTION_BOUND,
        }
    }
}

impl Policy for GoToGoal {
    fn name(&self) -> String {
        "go_to_goal".into()
    }

    fn act(&self, state: &State, goal: &GoalValue, _spec: &GoalSpec) -> Result<Vec7> {
        go_to_goal_bounded(state, goal.config_target.as_ref(), self.action_bound)
    }
}

/// Always outputs zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn name(&self) -> String {
        "zero".into()
    }

    fn act(&self, _: &State, _: &GoalValue, _: &GoalSpec) -> Result<Vec7> {
        Ok(Vec7::zeros())
    }
}

/// A policy chosen at run time: a built-in baseline or a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyPolicy {
    GoToGoal(GoToGoal),
    Zero,
    Mlp(Box<MlpPolicy>),
}

impl AnyPolicy {
    /// `go_to_goal`, `zero`, or a checkpoint path.
    pub fn load(spec: &str) -> Result<Self> {
        match spec {
            "go_to_goal" => Ok(AnyPolicy::GoToGoal(GoToGoal::default())),
            "zero" => Ok(AnyPolicy::Zero),
            path => Ok(AnyPolicy::Mlp(Box::new(MlpPolicy::load(path)?))),
        }
    }

    /// The goal spec a checkpoint was trained for, if any.
    pub fn goal_spec(&self) -> Option<GoalSpec> {
        match self {
            AnyPolicy::Mlp(m) => Some(m.goal_spec),
            _ => None,
        }
    }
}

impl Policy for AnyPolicy {
    fn name(&self) -> String {
        match self {
            AnyPolicy::GoToGoal(p) => p.name(),
            AnyPolicy::Zero => ZeroPolicy.name(),
            AnyPolicy::Mlp(p) => p.name(),
        }
    }

    fn act(&self, state: &State, goal: &GoalValue, spec: &GoalSpec) -> Result<Vec7> {
        match self {
            AnyPolicy::GoToGoal(p) => p.act(state, goal, spec),
            AnyPolicy::Zero => ZeroPolicy.act(state, goal, spec),
            AnyPolicy::Mlp(p) => p.act(state, goal, spec),
        }
    }
}

/// Input width of the flattened (state, goal) vector.
pub fn goal_input_dim(rep: GoalRepresentation) -> usize {
    match rep {
        GoalRepresentation::Config => 14,
        GoalRepresentation::Ee => 13,
        GoalRepresentation::Combined => 20,
    }
}

/// Flatten (state, goal) for a network: config `s, g_s`; EE `s, ee, g_ee`;
/// combined `s, ee, g_s, g_ee`.
pub fn goal_input(state: &State, goal: &GoalValue, rep: GoalRepresentation) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(goal_input_dim(rep));
    v.extend_from_slice(state.s.as_slice());
    if rep != GoalRepresentation::Config {
        v.extend_from_slice(state.ee.as_slice());
    }
    if rep != GoalRepresentation::Ee {
        v.extend_from_slice(goal.config_target.ok_or(Error::MissingGoalField("config_target"))?.as_slice());
    }
    if rep != GoalRepresentation::Config {
        v.extend_from_slice(goal.ee_target.ok_or(Error::MissingGoalField("ee_target"))?.as_slice());
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Env,
    Hindsight,
    Demo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounts {
    pub env: usize,
    pub hindsight: usize,
    pub demo: usize,
}

impl OriginCounts {
    pub fn total(&self) -> usize {
        self.env + self.hindsight + self.demo
    }

    fn slot(&mut self, o: Origin) -> &mut usize {
        match o {
            Origin::Env => &mut self.env,
            Origin::Hindsight => &mut self.hindsight,
            Origin::Demo => &mut self.demo,
        }
    }
}

/// Fixed-capacity ring of transitions tagged by where they came from.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<(Transition, Origin)>,
    next: usize,
    counts: OriginCounts,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
            counts: OriginCounts::default(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> OriginCounts {
        self.counts
    }

    pub fn push(&mut self, t: Transition, origin: Origin) {
        *self.counts.slot(origin) += 1;
        if self.items.len() < self.capacity {
            self.items.push((t, origin));
        } else {
            let old = std::mem::replace(&mut self.items[self.next], (t, origin));
            *self.counts.slot(old.1) -= 1;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>, origin: Origin) -> usize {
        let mut n = 0;
        for t in ts {
            self.push(t, origin);
            n += 1;
        }
        n
    }

    pub fn get(&self, i: usize) -> Option<&(Transition, Origin)> {
        self.items.get(i)
    }

    /// Uniform sample with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())].0).collect()
    }
}

/// Hindsight relabeling with the "final" strategy.
///
/// With probability `p_her` the episode's goal is replaced by the goal its
/// last state achieves and costs are recomputed. The copy ends at the first
/// transition that reaches the new goal, which is then its only zero-cost,
/// terminal transition. Otherwise the input is returned unchanged.
pub fn her_relabel(episode: &[Transition], spec: &GoalSpec, p_her: f64, rng: &mut impl Rng) -> Result<Vec<Transition>> {
    if episode.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    if !(0.0..=1.0).contains(&p_her) {
        return Err(Error::InvalidArgument(format!("p_her must be in [0, 1], got {p_her}")));
    }
    if rng.random::<f64>() >= p_her {
        return Ok(episode.to_vec());
    }
    relabel_final(episode, spec)
}

/// The deterministic part of [`her_relabel`].
pub fn relabel_final(episode: &[Transition], spec: &GoalSpec) -> Result<Vec<Transition>> {
    let last = episode.last().ok_or(Error::EmptyEpisode)?;
    let goal = GoalValue::achieved_by(&last.next_state, spec);
    let mut out = Vec::with_capacity(episode.len());
    for t in episode {
        let reached = goal_reached(&t.next_state, &goal, spec)?;
        out.push(Transition {
            goal,
            cost: if reached { 0.0 } else { -1.0 },
            done: reached,
            goal_reached: reached,
            ..t.clone()
        });
        if reached {
            break;
        }
    }
    Ok(out)
}

/// Push an episode, its hindsight copy with probability `p_her`, or both.
pub fn store_episode(
    buf: &mut ReplayBuffer,
    episode: &[Transition],
    spec: &GoalSpec,
    p_her: f64,
    keep_original: bool,
    rng: &mut impl Rng,
) -> Result<()> {
    if episode.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let relabel = rng.random::<f64>() < p_her;
    if keep_original || !relabel {
        buf.extend(episode.iter().cloned(), Origin::Env);
    }
    if relabel {
        buf.extend(relabel_final(episode, spec)?, Origin::Hindsight);
    }
    Ok(())
}

fn query_key(q: &Query) -> Vec<u64> {
    q.start
        .as_slice()
        .iter()
        .chain(q.goal_config.as_slice())
        .map(|x| x.to_bits())
        .chain(q.scene_seed)
        .collect()
}

/// Demonstrations by query, with nearest-start fallback.
#[derive(Clone, Debug)]
pub struct DemoIndex {
    demos: Vec<Demonstration>,
    exact: HashMap<Vec<u64>, usize>,
}

impl DemoIndex {
    pub fn new(demos: Vec<Demonstration>) -> Self {
        let exact = demos.iter().enumerate().map(|(i, d)| (query_key(&d.query), i)).collect();
        DemoIndex { demos, exact }
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    /// The demo for this exact query, else the one whose start is nearest in
    /// normalized L2.
    pub fn lookup(&self, query: &Query, arm: &ArmGeometry) -> Option<&Demonstration> {
        if let Some(&i) = self.exact.get(&query_key(query)) {
            return Some(&self.demos[i]);
        }
        let s = crate::arm::normalize_unchecked(&query.start, &arm.limits);
        self.demos
            .iter()
            .filter(|d| !d.states.is_empty())
            .min_by(|a, b| a.states[0].distance(&s).total_cmp(&b.states[0].distance(&s)))
    }
}

/// A stored demo as transitions with its true sparse costs.
pub fn demo_transitions(demo: &Demonstration, spec: &GoalSpec, arm: &ArmGeometry) -> Vec<Transition> {
    let state = |s: &NormalizedConfig, v: Vec7| State {
        s: *s,
        velocity: v,
        ee: arm.ee_position(&denormalize_unchecked(s, &arm.limits)),
        absorbed: false,
    };
    let g = crate::arm::normalize_unchecked(&demo.query.goal_config, &arm.limits);
    let goal = GoalValue::for_representation(spec.representation, g, demo.query.goal_ee);
    let n = demo.actions.len();
    let mut prev = state(&demo.states[0], Vec7::zeros());
    demo.actions
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let next = state(&demo.states[k + 1], *a);
            let last = k + 1 == n;
            let t = Transition {
                state: prev,
                action: *a,
                next_state: next,
                cost: if last { 0.0 } else { -1.0 },
                done: last,
                goal,
                collided: false,
                goal_reached: last,
                t: k + 1,
            };
            prev = next;
            t
        })
        .collect()
}

/// On a failed episode, append the matching demonstration with probability `p`.
pub fn inject_demo(
    buf: &mut ReplayBuffer,
    failed_query: &Query,
    p: f64,
    index: &DemoIndex,
    spec: &GoalSpec,
    arm: &ArmGeometry,
    rng: &mut impl Rng,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("injection probability must be in [0, 1], got {p}")));
    }
    if rng.random::<f64>() >= p {
        return Ok(0);
    }
    let demo = index.lookup(failed_query, arm).ok_or(Error::NoDemoAvailable)?;
    Ok(buf.extend(demo_transitions(demo, spec, arm), Origin::Demo))
}
