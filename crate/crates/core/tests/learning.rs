//! Learning-side checks: gradients, relabeling, injection and accounting.

mod common;

use armgym::arm::{normalize, ArmGeometry, NormalizedConfig, Vec7};
use armgym::episode::{GoalRepresentation, GoalSpec, State};
use armgym::learn::{go_to_goal, inject_demo, DemoIndex, MlpPolicy, ReplayBuffer, bc_train, BcHyper};
use armgym::tasks::{sample_query_set, task_spec};
use armgym::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    let worst = common::gradient_check(51, 1e-5);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn injection_frequency_tracks_probability() {
    for p in [0.2, 0.5, 1.0] {
        let rate = common::injection_rate(p, 10_000, 52);
        assert!((rate - p).abs() <= 0.02, "p {p}: {rate}");
    }
    assert_eq!(common::injection_rate(0.0, 1000, 52), 0.0);
}

#[test]
fn injection_without_a_match_reports_it() {
    let task = task_spec("no_obstacles").unwrap();
    let q = sample_query_set(&task, 1, 3).unwrap().queries.remove(0);
    let mut buf = ReplayBuffer::new(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let index = DemoIndex::new(Vec::new());
    let r = inject_demo(&mut buf, &q, 1.0, &index, task.goal_spec(), ArmGeometry::franka(), &mut rng);
    assert!(matches!(r, Err(Error::NoDemoAvailable)));
    assert!(buf.is_empty());
}

#[test]
fn returns_and_hindsight_copies_add_up() {
    let out = common::mdp_accounting(1000, 53);
    assert_eq!(out.episodes, 1000);
    assert!(out.reached > 50 && out.relabeled > 50, "{out:?}");
    assert_eq!(out.return_mismatches, 0);
    assert_eq!(out.her_violations, 0);
}

#[test]
fn go_to_goal_moves_along_the_straight_line() {
    let task = task_spec("no_obstacles").unwrap();
    let lim = &ArmGeometry::franka().limits;
    for q in sample_query_set(&task, 50, 54).unwrap().queries {
        let s = normalize(&q.start, lim).unwrap();
        let g = normalize(&q.goal_config, lim).unwrap();
        let state = State { s, velocity: Vec7::zeros(), ee: lim.center().0.xyz(), absorbed: false };
        let a = go_to_goal(&state, Some(&g)).unwrap();
        let next = NormalizedConfig(s.0 + a);
        // next = s + t (g - s) for a single t in [0, 1]
        let d = g.0 - s.0;
        let t = (next.0 - s.0).dot(&d) / d.norm_squared();
        assert!((0.0..=1.0 + 1e-12).contains(&t));
        assert!((s.0 + d * t - next.0).amax() < 1e-9);
    }
}

#[test]
fn bc_rejects_mismatched_goal_dims() {
    let task = task_spec("no_obstacles").unwrap();
    let (ds, _) = armgym::planner::collect_demos(&task, 2, 5, &Default::default()).unwrap();
    let net = MlpPolicy::new(GoalSpec::new(GoalRepresentation::Ee), &[8], 0).unwrap();
    let spec = GoalSpec::new(GoalRepresentation::Config);
    let r = bc_train(&ds.demos, &spec, ArmGeometry::franka(), net, &BcHyper { epochs: 1, ..Default::default() });
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })), "{r:?}");
}
