//! The goal-conditioned MDP: reset/step semantics, goal predicates and
//! sparse costs.
//!
//! Transitions are exact kinematic teleports: the clipped target is reached
//! in one step. Costs are undiscounted, `-1` per step until the goal predicate
//! first holds, then `0`.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::arm::{
    clip_action, denormalize_unchecked, normalize, Configuration, NormalizedConfig, Vec7, ACTION_BOUND,
};
use crate::error::{Error, Result};
use crate::geometry::{edge_points, Scene, DEFAULT_EDGE_STEP};
use crate::tasks::Query;

pub const DEFAULT_HORIZON: usize = 400;
pub const DEFAULT_EE_TOLERANCE: f64 = 0.02;
pub const DEFAULT_CONFIG_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalRepresentation {
    Ee,
    Config,
    Combined,
}

impl std::str::FromStr for GoalRepresentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ee" => Ok(GoalRepresentation::Ee),
            "config" => Ok(GoalRepresentation::Config),
            "combined" => Ok(GoalRepresentation::Combined),
            other => Err(Error::InvalidArgument(format!("unknown goal representation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub representation: GoalRepresentation,
    /// Ball radius around the EE target, meters.
    pub ee_tolerance: f64,
    /// Normalized L2 radius around the configuration target.
    pub config_tolerance: f64,
}

impl GoalSpec {
    pub fn new(representation: GoalRepresentation) -> Self {
        GoalSpec {
            representation,
            ee_tolerance: DEFAULT_EE_TOLERANCE,
            config_tolerance: DEFAULT_CONFIG_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ee_tolerance > 0.0 && self.config_tolerance > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("goal tolerances must be positive".into()))
        }
    }
}

impl Default for GoalSpec {
    fn default() -> Self {
        GoalSpec::new(GoalRepresentation::Config)
    }
}

/// The goal as presented to a policy; fields are populated per representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalValue {
    pub ee_target: Option<Vector3<f64>>,
    pub config_target: Option<NormalizedConfig>,
}

impl GoalValue {
    pub fn for_representation(rep: GoalRepresentation, config: NormalizedConfig, ee: Vector3<f64>) -> Self {
        let (want_ee, want_cfg) = match rep {
            GoalRepresentation::Ee => (true, false),
            GoalRepresentation::Config => (false, true),
            GoalRepresentation::Combined => (true, true),
        };
        GoalValue {
            ee_target: want_ee.then_some(ee),
            config_target: want_cfg.then_some(config),
        }
    }

    pub fn from_query(query: &Query, spec: &GoalSpec, scene: &Scene) -> Result<Self> {
        let g = normalize(&query.goal_config, &scene.arm.limits)?;
        Ok(GoalValue::for_representation(spec.representation, g, query.goal_ee))
    }

    /// The goal a state achieves by definition, for hindsight relabeling.
    pub fn achieved_by(state: &State, spec: &GoalSpec) -> Self {
        GoalValue::for_representation(spec.representation, state.s, state.ee)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub s: NormalizedConfig,
    /// Last realized displacement; zero after reset.
    pub velocity: Vec7,
    pub ee: Vector3<f64>,
    pub absorbed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// The action is a displacement added to the current state.
    Relative,
    /// The action is a normalized configuration to move towards.
    Subgoal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Vec7,
    pub next_state: State,
    pub cost: f64,
    pub done: bool,
    pub goal: GoalValue,
    /// Any configuration on the step segment (excluding its start) collides.
    pub collided: bool,
    pub goal_reached: bool,
    /// Episode clock after this transition.
    pub t: usize,
}

/// Episode-level knobs shared by every engine of a task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub goal_spec: GoalSpec,
    pub horizon: usize,
    pub stop_on_collision: bool,
    /// After early termination keep returning a zero-cost sink state.
    pub absorbing: bool,
    pub action_bound: f64,
    pub collision_margin: f64,
    pub edge_step: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            goal_spec: GoalSpec::default(),
            horizon: DEFAULT_HORIZON,
            stop_on_collision: false,
            absorbing: false,
            action_bound: ACTION_BOUND,
            collision_margin: 0.0,
            edge_step: DEFAULT_EDGE_STEP,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.goal_spec.validate()?;
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.action_bound > 0.0 && self.edge_step > 0.0) {
            return Err(Error::InvalidArgument("action bound and edge step must be positive".into()));
        }
        Ok(())
    }
}

pub fn goal_reached(state: &State, goal: &GoalValue, spec: &GoalSpec) -> Result<bool> {
    let ee_test = |goal: &GoalValue| {
        goal.ee_target
            .map(|t| (state.ee - t).norm() <= spec.ee_tolerance)
            .ok_or(Error::MissingGoalField("ee_target"))
    };
    match spec.representation {
        GoalRepresentation::Ee => ee_test(goal),
        GoalRepresentation::Config => goal
            .config_target
            .map(|g| g.distance(&state.s) <= spec.config_tolerance)
            .ok_or(Error::MissingGoalField("config_target")),
        GoalRepresentation::Combined => {
            if goal.config_target.is_none() {
                return Err(Error::MissingGoalField("config_target"));
            }
            ee_test(goal)
        }
    }
}

/// One episode of the MDP on a shared, immutable scene.
#[derive(Clone, Debug)]
pub struct Engine {
    scene: Arc<Scene>,
    cfg: EpisodeConfig,
    state: Option<State>,
    goal: Option<GoalValue>,
    t: usize,
    done: bool,
}

impl Engine {
    pub fn new(scene: Arc<Scene>, cfg: EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Engine {
            scene,
            cfg,
            state: None,
            goal: None,
            t: 0,
            done: false,
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&State> {
        self.state.as_ref()
    }

    pub fn goal(&self) -> Option<&GoalValue> {
        self.goal.as_ref()
    }

    pub fn set_goal(&mut self, goal: Option<GoalValue>) {
        self.goal = goal;
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn state_at(&self, s: NormalizedConfig) -> State {
        let c = denormalize_unchecked(&s, &self.scene.arm.limits);
        State {
            s,
            velocity: Vec7::zeros(),
            ee: self.scene.arm.ee_position(&c),
            absorbed: false,
        }
    }

    fn start_at(&mut self, c: &Configuration, goal: Option<GoalValue>) -> Result<State> {
        let s = normalize(c, &self.scene.arm.limits)?;
        let state = self.state_at(s);
        self.state = Some(state);
        self.goal = goal;
        self.t = 0;
        self.done = false;
        Ok(state)
    }

    /// Start an episode at the query's start with the query's goal.
    pub fn reset(&mut self, query: &Query) -> Result<State> {
        if self.scene.is_collision(&query.start, self.cfg.collision_margin) {
            return Err(Error::InfeasibleQuery);
        }
        let goal = GoalValue::from_query(query, &self.cfg.goal_spec, &self.scene)?;
        self.start_at(&query.start, Some(goal))
    }

    /// Start an episode at exactly `c`, keeping the current goal.
    pub fn reset_specific(&mut self, c: &Configuration) -> Result<State> {
        let goal = self.goal;
        self.start_at(c, goal)
    }

    pub fn goal_reached_now(&self) -> Result<bool> {
        match (&self.state, &self.goal) {
            (Some(st), Some(g)) => goal_reached(st, g, &self.cfg.goal_spec),
            (None, _) => Err(Error::NotReset),
            (_, None) => Ok(false),
        }
    }

    pub fn step(&mut self, action: &Vec7, mode: ActionMode) -> Result<Transition> {
        let state = self.state.ok_or(Error::NotReset)?;
        let goal = self.goal.unwrap_or_default();
        if self.done {
            if !self.cfg.absorbing {
                return Err(Error::EpisodeFinished);
            }
            let sink = State { absorbed: true, velocity: Vec7::zeros(), ..state };
            self.state = Some(sink);
            return Ok(Transition {
                state,
                action: *action,
                next_state: sink,
                cost: 0.0,
                done: true,
                goal,
                collided: false,
                goal_reached: false,
                t: self.t,
            });
        }

        let delta = match mode {
            ActionMode::Relative => *action,
            ActionMode::Subgoal => action - state.s.0,
        };
        let clipped = clip_action(&delta, self.cfg.action_bound);
        let next_s = NormalizedConfig::clamped(state.s.0 + clipped);
        let collided = edge_points(&state.s, &next_s, self.cfg.edge_step)
            .skip(1)
            .any(|p| self.scene.is_collision_normalized(&p, self.cfg.collision_margin));
        let mut next = self.state_at(next_s);
        next.velocity = next_s.0 - state.s.0;

        self.t += 1;
        let reached = match &self.goal {
            Some(g) => goal_reached(&next, g, &self.cfg.goal_spec)?,
            None => false,
        };
        let done = reached || self.t >= self.cfg.horizon || (collided && self.cfg.stop_on_collision);
        self.state = Some(next);
        self.done = done;
        Ok(Transition {
            state,
            action: *action,
            next_state: next,
            cost: if reached { 0.0 } else { -1.0 },
            done,
            goal,
            collided,
            goal_reached: reached,
            t: self.t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmGeometry;
    use crate::geometry::{Obstacle, ObstacleLabel};

    fn empty() -> Arc<Scene> {
        Arc::new(Scene::empty("no_obstacles", ArmGeometry::franka_shared()))
    }

    fn query_at(scene: &Scene, start: Configuration, goal: Configuration) -> Query {
        Query::new(scene, start, goal, None)
    }

    fn home() -> Configuration {
        ArmGeometry::franka().home
    }

    fn e1(x: f64) -> Vec7 {
        let mut v = Vec7::zeros();
        v[0] = x;
        v
    }

    #[test]
    fn reset_with_goal_at_start() {
        let scene = empty();
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        let q = query_at(&scene, home(), home());
        let s0 = eng.reset(&q).unwrap();
        assert!(eng.goal_reached_now().unwrap());
        assert_eq!(s0.velocity, Vec7::zeros());
        assert_eq!(eng.reset(&q).unwrap(), s0);
    }

    #[test]
    fn colliding_start_is_rejected() {
        let arm = ArmGeometry::franka_shared();
        let ee = arm.ee_position(&home());
        let b = Obstacle::cuboid("b", ee.into(), [0.05; 3], 0.0, ObstacleLabel::Varying).unwrap();
        let scene = Arc::new(Scene::with_obstacles("blocked", arm, [b]));
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        let q = query_at(&scene, home(), home());
        assert!(matches!(eng.reset(&q), Err(Error::InfeasibleQuery)));
    }

    #[test]
    fn reset_specific_limits() {
        let scene = empty();
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        let st = eng.reset_specific(&home()).unwrap();
        assert_eq!(st.s, normalize(&home(), &scene.arm.limits).unwrap());
        let lower = Configuration(scene.arm.limits.lower);
        let st = eng.reset_specific(&lower).unwrap();
        assert!(st.s.0.iter().all(|&x| x == -1.0));
        let mut bad = home();
        bad.0[1] = 3.0;
        assert!(matches!(eng.reset_specific(&bad), Err(Error::OutOfLimits { .. })));
    }

    #[test]
    fn relative_action_is_clipped() {
        let scene = empty();
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        eng.reset(&query_at(&scene, home(), scene.arm.limits.center())).unwrap();
        let tr = eng.step(&e1(0.06), ActionMode::Relative).unwrap();
        let realized = tr.next_state.s.0 - tr.state.s.0;
        assert!((realized.norm() - 0.03).abs() < 1e-12);
        assert_eq!(tr.next_state.velocity, realized);
    }

    #[test]
    fn zero_actions_run_to_horizon() {
        let scene = empty();
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        eng.reset(&query_at(&scene, home(), scene.arm.limits.center())).unwrap();
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let tr = eng.step(&Vec7::zeros(), ActionMode::Relative).unwrap();
            ret += tr.cost;
            steps += 1;
            if tr.done {
                break;
            }
        }
        assert_eq!(steps, 400);
        assert_eq!(ret, -400.0);
        assert!(matches!(eng.step(&Vec7::zeros(), ActionMode::Relative), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn absorbing_sink_after_done() {
        let scene = empty();
        let cfg = EpisodeConfig { absorbing: true, horizon: 2, ..EpisodeConfig::default() };
        let mut eng = Engine::new(scene.clone(), cfg).unwrap();
        eng.reset(&query_at(&scene, home(), scene.arm.limits.center())).unwrap();
        eng.step(&Vec7::zeros(), ActionMode::Relative).unwrap();
        assert!(eng.step(&Vec7::zeros(), ActionMode::Relative).unwrap().done);
        let sink = eng.step(&e1(0.03), ActionMode::Relative).unwrap();
        assert!(sink.next_state.absorbed && sink.done);
        assert_eq!(sink.cost, 0.0);
        assert_eq!(sink.next_state.s, sink.state.s);
    }

    #[test]
    fn ee_goal_inside_ball_terminates() {
        let scene = empty();
        let spec = GoalSpec::new(GoalRepresentation::Ee);
        let cfg = EpisodeConfig { goal_spec: spec, ..EpisodeConfig::default() };
        let mut eng = Engine::new(scene.clone(), cfg).unwrap();
        let h = home();
        let mut q = query_at(&scene, h, h);
        let s0 = eng.reset(&q).unwrap();
        // Target 1.5 cm from where one relative step lands.
        let landing = {
            let s1 = NormalizedConfig::clamped(s0.s.0 + e1(0.03));
            scene.arm.ee_position(&denormalize_unchecked(&s1, &scene.arm.limits))
        };
        q.goal_ee = landing + Vector3::new(0.015, 0.0, 0.0);
        eng.reset(&q).unwrap();
        let tr = eng.step(&e1(0.03), ActionMode::Relative).unwrap();
        assert!((tr.next_state.ee - q.goal_ee).norm() - 0.015 < 1e-12);
        assert!(tr.done && tr.goal_reached);
        assert_eq!(tr.cost, 0.0);
    }

    #[test]
    fn goal_predicates() {
        let spec = GoalSpec::new(GoalRepresentation::Config);
        let st = State {
            s: NormalizedConfig::zeros(),
            velocity: Vec7::zeros(),
            ee: Vector3::zeros(),
            absorbed: false,
        };
        let near = GoalValue { ee_target: None, config_target: Some(NormalizedConfig(e1(0.049))) };
        assert!(goal_reached(&st, &near, &spec).unwrap());
        let far = GoalValue { ee_target: None, config_target: Some(NormalizedConfig(e1(0.051))) };
        assert!(!goal_reached(&st, &far, &spec).unwrap());

        let combined = GoalSpec::new(GoalRepresentation::Combined);
        let g = GoalValue {
            ee_target: Some(Vector3::new(0.01, 0.0, 0.0)),
            config_target: Some(NormalizedConfig(Vec7::repeat(0.9))),
        };
        assert!(goal_reached(&st, &g, &combined).unwrap());

        let ee = GoalSpec::new(GoalRepresentation::Ee);
        let g = GoalValue { ee_target: Some(Vector3::new(0.021, 0.0, 0.0)), config_target: None };
        assert!(!goal_reached(&st, &g, &ee).unwrap());
        assert!(matches!(goal_reached(&st, &GoalValue::default(), &ee), Err(Error::MissingGoalField(_))));
    }

    #[test]
    fn subgoal_mode_moves_towards_target() {
        let scene = empty();
        let mut eng = Engine::new(scene.clone(), EpisodeConfig::default()).unwrap();
        let s0 = eng.reset(&query_at(&scene, home(), scene.arm.limits.center())).unwrap();
        let target = s0.s.0 + e1(0.05);
        let t1 = eng.step(&target, ActionMode::Subgoal).unwrap();
        assert!((t1.next_state.s.0 - (s0.s.0 + e1(0.03))).norm() < 1e-12);
        let t2 = eng.step(&target, ActionMode::Subgoal).unwrap();
        assert!((t2.next_state.s.0 - target).norm() < 1e-12);
    }

    #[test]
    fn stop_on_collision_terminates() {
        let arm = ArmGeometry::franka_shared();
        let h = home();
        let mut moved = h;
        moved.0[0] += 0.8;
        let ee = arm.ee_position(&moved);
        let b = Obstacle::cuboid("b", ee.into(), [0.03; 3], 0.0, ObstacleLabel::Varying).unwrap();
        let scene = Arc::new(Scene::with_obstacles("post", arm.clone(), [b]));
        let target = normalize(&moved, &arm.limits).unwrap();
        for stop in [false, true] {
            let cfg = EpisodeConfig { stop_on_collision: stop, ..EpisodeConfig::default() };
            let mut eng = Engine::new(scene.clone(), cfg).unwrap();
            eng.reset(&query_at(&scene, h, arm.limits.center())).unwrap();
            let mut first_collision = None;
            for k in 0..20 {
                let tr = eng.step(&target.0, ActionMode::Subgoal).unwrap();
                if tr.collided && first_collision.is_none() {
                    first_collision = Some(k);
                    assert_eq!(tr.done, stop);
                }
                if tr.done {
                    break;
                }
            }
            assert!(first_collision.is_some());
        }
    }
}
