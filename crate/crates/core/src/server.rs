//! Newline-delimited JSON protocol over TCP.
//!
//! Each connection owns one [`Session`]: a task, a query stream and at most
//! one running episode. Every request line gets exactly one response line
//! carrying a per-session sequence number. See `PROTOCOL.md`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arm::{Configuration, Vec7, ACTION_BOUND, DOF};
use crate::episode::{ActionMode, Engine, EpisodeConfig, GoalRepresentation, GoalSpec};
use crate::error::{Error, Result};
use crate::sensors::{sense, SensorRig};
use crate::tasks::{sample_task_query, task_names, task_spec, Query, TaskSpec};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";
pub const DEFAULT_MAX_SESSIONS: usize = 16;

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Spec,
    Make {
        task: String,
        #[serde(default)]
        seed: u64,
        goal_rep: Option<GoalRepresentation>,
        stop_on_collision: Option<bool>,
        absorbing: Option<bool>,
    },
    Reset {
        /// Explicit query instead of the next one from the stream.
        query: Option<Query>,
        /// Jump to this position of the query stream.
        index: Option<u64>,
    },
    ResetSpecific {
        config: Vec<f64>,
    },
    Step {
        action: Vec<f64>,
        #[serde(default = "relative")]
        mode: ActionMode,
    },
    Sense {
        rays: Option<usize>,
        #[serde(default = "yes")]
        include_arm: bool,
    },
    Close,
}

fn relative() -> ActionMode {
    ActionMode::Relative
}

fn yes() -> bool {
    true
}

const OPS: [&str; 7] = ["spec", "make", "reset", "reset_specific", "step", "sense", "close"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorBody { code: code.into(), message: message.into() }
    }
}

impl From<Error> for ErrorBody {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::OutOfLimits { .. } => "OUT_OF_LIMITS",
            Error::OutOfRange { .. } => "OUT_OF_RANGE",
            Error::UnknownTask(_) => "UNKNOWN_TASK",
            Error::Infeasible { .. } | Error::InfeasibleQuery => "INFEASIBLE",
            Error::EpisodeFinished => "EPISODE_FINISHED",
            Error::NotReset => "NOT_RESET",
            Error::DimensionMismatch { .. } => "BAD_DIM",
            Error::MissingGoalField(_) => "MISSING_GOAL",
            Error::InvalidArgument(_) => "BAD_ARGUMENT",
            _ => "INTERNAL",
        };
        ErrorBody::new(code, e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub seq: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// Registry and defaults, identical for every session.
pub fn spec_value() -> Value {
    let arm = crate::arm::ArmGeometry::franka();
    let ep = EpisodeConfig::default();
    json!({
        "protocol_version": PROTOCOL_VERSION,
        "tasks": task_names(),
        "dof": DOF,
        "action_bound": ACTION_BOUND,
        "ee_tolerance": ep.goal_spec.ee_tolerance,
        "config_tolerance": ep.goal_spec.config_tolerance,
        "horizon": ep.horizon,
        "goal_representations": ["ee", "config", "combined"],
        "action_modes": ["relative", "subgoal"],
        "joint_limits": {"lower": arm.limits.lower, "upper": arm.limits.upper},
    })
}

fn vec7(v: &[f64]) -> Result<Vec7> {
    if v.len() != DOF {
        return Err(Error::DimensionMismatch { expected: DOF, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("values must be finite".into()));
    }
    Ok(Vec7::from_column_slice(v))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol values serialize")
}

/// One client's environment state; transport-agnostic.
pub struct Session {
    seq: u64,
    default_rays: usize,
    task: Option<TaskSpec>,
    seed: u64,
    next_index: u64,
    engine: Option<Engine>,
    closed: bool,
}

impl Session {
    pub fn new(default_rays: usize) -> Self {
        Session {
            seq: 0,
            default_rays,
            task: None,
            seed: 0,
            next_index: 0,
            engine: None,
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Answer one request line.
    pub fn handle_line(&mut self, line: &str) -> Response {
        self.seq += 1;
        let out = self.dispatch(line);
        match out {
            Ok(result) => Response { seq: self.seq, ok: true, result: Some(result), error: None },
            Err(error) => Response { seq: self.seq, ok: false, result: None, error: Some(error) },
        }
    }

    fn dispatch(&mut self, line: &str) -> std::result::Result<Value, ErrorBody> {
        let raw: Value = serde_json::from_str(line).map_err(|e| ErrorBody::new("BAD_JSON", e.to_string()))?;
        let op = raw.get("op").and_then(Value::as_str).map(str::to_owned);
        match op {
            None => return Err(ErrorBody::new("BAD_JSON", "request must be an object with a string `op`")),
            Some(op) if !OPS.contains(&op.as_str()) => {
                return Err(ErrorBody::new("UNKNOWN_OP", format!("unknown op `{op}`")))
            }
            _ => {}
        }
        let req: Request = serde_json::from_value(raw).map_err(|e| ErrorBody::new("BAD_ARGUMENT", e.to_string()))?;
        self.apply(req).map_err(ErrorBody::from)
    }

    fn task(&self) -> Result<&TaskSpec> {
        self.task
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no task; send `make` first".into()))
    }

    fn apply(&mut self, req: Request) -> Result<Value> {
        match req {
            Request::Spec => Ok(spec_value()),
            Request::Make { task, seed, goal_rep, stop_on_collision, absorbing } => {
                let mut spec = task_spec(&task)?;
                if let Some(rep) = goal_rep {
                    spec.episode.goal_spec = GoalSpec { representation: rep, ..spec.episode.goal_spec };
                }
                if let Some(b) = stop_on_collision {
                    spec.episode.stop_on_collision = b;
                }
                if let Some(b) = absorbing {
                    spec.episode.absorbing = b;
                }
                let ep = spec.episode;
                let sampled = spec.is_sampled();
                self.task = Some(spec);
                self.seed = seed;
                self.next_index = 0;
                self.engine = None;
                Ok(json!({"task": task, "seed": seed, "episode": ep, "sampled_scenes": sampled}))
            }
            Request::Reset { query, index } => {
                let task = self.task()?.clone();
                let (query, index) = match (query, index) {
                    (Some(_), Some(_)) => {
                        return Err(Error::InvalidArgument("give either `query` or `index`, not both".into()))
                    }
                    (Some(q), None) => (q, None),
                    (None, i) => {
                        let i = i.unwrap_or(self.next_index);
                        self.next_index = i + 1;
                        (sample_task_query(&task, self.seed, i)?, Some(i))
                    }
                };
                let scene = task.scene_for(&query)?;
                let mut engine = Engine::new(scene, task.episode)?;
                let state = engine.reset(&query)?;
                let goal = *engine.goal().expect("reset sets the goal");
                let reached = engine.goal_reached_now()?;
                self.engine = Some(engine);
                Ok(json!({
                    "index": index,
                    "query": query,
                    "state": state,
                    "goal": goal,
                    "goal_reached": reached,
                }))
            }
            Request::ResetSpecific { config } => {
                let c = Configuration(vec7(&config)?);
                if self.engine.is_none() {
                    let task = self.task()?;
                    self.engine = Some(Engine::new(task.scene(None)?, task.episode)?);
                }
                let engine = self.engine.as_mut().expect("engine present");
                let state = engine.reset_specific(&c)?;
                Ok(json!({"state": state, "goal": engine.goal()}))
            }
            Request::Step { action, mode } => {
                let a = vec7(&action)?;
                let engine = self.engine.as_mut().ok_or(Error::NotReset)?;
                Ok(to_value(&engine.step(&a, mode)?))
            }
            Request::Sense { rays, include_arm } => {
                let engine = self.engine.as_ref().ok_or(Error::NotReset)?;
                let scene = engine.scene();
                let state = engine.state().ok_or(Error::NotReset)?;
                let c = crate::arm::denormalize_unchecked(&state.s, &scene.arm.limits);
                let rig = SensorRig::with_rays(rays.unwrap_or(self.default_rays));
                let cloud = sense(scene, include_arm.then_some(&c), &rig)?;
                let pts: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.position.into()).collect();
                let labels: Vec<&str> = cloud.points.iter().map(|p| p.label.as_str()).collect();
                let sensors: Vec<usize> = cloud.points.iter().map(|p| p.sensor).collect();
                Ok(json!({"points": pts, "labels": labels, "sensors": sensors}))
            }
            Request::Close => {
                self.closed = true;
                self.engine = None;
                Ok(json!({}))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ServerConfig {
    pub max_sessions: usize,
    pub default_rays: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_sessions: DEFAULT_MAX_SESSIONS,
            default_rays: crate::sensors::DEFAULT_RAYS_PER_SENSOR,
        }
    }
}

pub struct Server {
    listener: TcpListener,
    cfg: ServerConfig,
    active: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

/// Stops a running [`Server::run`] from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
    }
}

struct Slot(Arc<AtomicUsize>);

impl Drop for Slot {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, cfg: ServerConfig) -> Result<Self> {
        if cfg.max_sessions == 0 {
            return Err(Error::InvalidArgument("max_sessions must be at least 1".into()));
        }
        let listener = TcpListener::bind(&addr)
            .map_err(|e| Error::InvalidArgument(format!("cannot bind {addr:?}: {e}")))?;
        Ok(Server {
            listener,
            cfg,
            active: Arc::new(AtomicUsize::new(0)),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn shutdown_handle(&self) -> Result<ShutdownHandle> {
        Ok(ShutdownHandle { addr: self.local_addr()?, stop: self.stop.clone() })
    }

    /// Accept connections until shut down. Sessions run on their own threads.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut stream) = stream else { continue };
            if self.active.fetch_add(1, Ordering::SeqCst) >= self.cfg.max_sessions {
                self.active.fetch_sub(1, Ordering::SeqCst);
                let busy = Response {
                    seq: 0,
                    ok: false,
                    result: None,
                    error: Some(ErrorBody::new("BUSY", format!("{} sessions already open", self.cfg.max_sessions))),
                };
                let _ = writeln!(stream, "{}", serde_json::to_string(&busy).expect("serializable"));
                continue;
            }
            let slot = Slot(self.active.clone());
            let rays = self.cfg.default_rays;
            thread::spawn(move || {
                let _slot = slot;
                let _ = run_session(stream, rays);
            });
        }
        Ok(())
    }
}

fn run_session(stream: TcpStream, default_rays: usize) -> Result<()> {
    // one small reply per request; don't let Nagle hold it back
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = std::io::BufWriter::new(stream);
    let mut session = Session::new(default_rays);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        serde_json::to_writer(&mut writer, &resp).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

/// Bind and serve until the process exits.
pub fn serve(addr: &str, max_sessions: usize) -> Result<()> {
    Server::bind(addr, ServerConfig { max_sessions, ..Default::default() })?.run()
}
