//! Analytic motion-planning environment for a 7-DoF arm.
//!
//! The crate is organised bottom-up:
//!
//! - [`arm`]: joint limits, normalization, forward kinematics, action clipping
//! - [`geometry`]: capsule/box/plane distances and the collision predicate
//! - [`tasks`]: fixed and sampled scenes, query sampling
//! - [`episode`]: the goal-conditioned MDP (reset, step, goal predicates)
//! - [`sensors`]: labeled point clouds from four cardinal sensors
//! - [`planner`]: RRT-Connect and the demonstration pipeline
//! - [`learn`]: replay buffer, hindsight relabeling, demo injection, BC, go-to-goal
//! - [`eval`]: success-rate evaluation and timing
//! - [`server`]: line-delimited JSON protocol for external trainers
//! - [`io`]: the on-disk record formats

pub mod arm;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod learn;
pub mod planner;
pub mod sensors;
pub mod server;
pub mod tasks;

pub use error::{Error, Result};
