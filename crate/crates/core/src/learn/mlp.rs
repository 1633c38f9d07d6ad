//! Tanh MLP policy and its behavioral-cloning trainer.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{demo_transitions, goal_input, goal_input_dim, Policy};
use crate::arm::{clip_action, ArmGeometry, Vec7, ACTION_BOUND, DOF};
use crate::episode::{GoalSpec, GoalValue, State};
use crate::error::{Error, Result};
use crate::planner::Demonstration;

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Fully connected net, tanh everywhere. The output lies in `[-1, 1]^7` and is
/// scaled by the action bound, then clipped to the bound's ball.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    pub sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub goal_spec: GoalSpec,
    pub action_bound: f64,
    pub meta: TrainingMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub samples: usize,
    pub final_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    kind: String,
    sizes: Vec<usize>,
    params: Vec<f64>,
    goal_spec: GoalSpec,
    action_bound: f64,
    meta: TrainingMeta,
}

struct Grads {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
}

impl MlpPolicy {
    /// `hidden` widths between the goal-input layer and the 7 outputs.
    pub fn new(goal_spec: GoalSpec, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![goal_input_dim(goal_spec.representation)];
        sizes.extend_from_slice(hidden);
        sizes.push(DOF);
        Self::with_sizes(sizes, goal_spec, seed)
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn with_sizes(sizes: Vec<usize>, goal_spec: GoalSpec, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let lim = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| lim * (2.0 * rng.random::<f64>() - 1.0)));
            biases.push(Array1::zeros(w[1]));
        }
        Ok(MlpPolicy {
            sizes,
            weights,
            biases,
            goal_spec,
            action_bound: ACTION_BOUND,
            meta: TrainingMeta { seed, ..Default::default() },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut z = acts.last().expect("input").dot(w);
            z += b;
            z.mapv_inplace(f64::tanh);
            acts.push(z);
        }
        acts
    }

    /// Squashed outputs in `[-1, 1]`, one row per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_all(x).pop().expect("output")
    }

    pub fn predict_unit(&self, input: &[f64]) -> Result<Vec7> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row shape");
        let y = self.forward(x);
        Ok(Vec7::from_iterator(y.iter().copied()))
    }

    /// Mean squared error over all output entries, and its gradient.
    fn loss_and_grads(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Grads) {
        let acts = self.forward_all(x);
        let out = acts.last().expect("output");
        let diff = out - &y;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let mut dz = (&diff * (2.0 / n)) * out.mapv(|o| 1.0 - o * o);
        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = acts[l].t().dot(&dz);
            gb[l] = dz.sum_axis(Axis(0));
            if l > 0 {
                let dh = dz.dot(&self.weights[l].t());
                dz = dh * acts[l].mapv(|h| 1.0 - h * h);
            }
        }
        (loss, Grads { w: gw, b: gb })
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
        let out = self.forward(x);
        let diff = out - &y;
        diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
    }

    /// Loss and gradient flattened in [`Self::params`] order.
    pub fn loss_and_flat_grad(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Vec<f64>) {
        let (l, g) = self.loss_and_grads(x, y);
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in g.w.iter().zip(&g.b) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        (l, flat)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            schema_version: POLICY_SCHEMA_VERSION,
            kind: "policy".into(),
            sizes: self.sizes.clone(),
            params: self.params(),
            goal_spec: self.goal_spec,
            action_bound: self.action_bound,
            meta: self.meta.clone(),
        };
        serde_json::to_string(&ck).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.schema_version != POLICY_SCHEMA_VERSION || ck.kind != "policy" {
            return Err(Error::Parse {
                line: 1,
                message: format!("not a version {POLICY_SCHEMA_VERSION} policy checkpoint"),
            });
        }
        if ck.sizes.first() != Some(&goal_input_dim(ck.goal_spec.representation)) || ck.sizes.last() != Some(&DOF) {
            return Err(Error::Parse {
                line: 1,
                message: format!("layer sizes {:?} do not fit the goal representation", ck.sizes),
            });
        }
        let mut p = MlpPolicy::with_sizes(ck.sizes, ck.goal_spec, 0)?;
        p.set_params(&ck.params)?;
        p.action_bound = ck.action_bound;
        p.meta = ck.meta;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Policy for MlpPolicy {
    fn name(&self) -> String {
        format!("mlp{:?}", &self.sizes[1..self.sizes.len() - 1])
    }

    fn act(&self, state: &State, goal: &GoalValue, _spec: &GoalSpec) -> Result<Vec7> {
        let x = goal_input(state, goal, self.goal_spec.representation)?;
        let u = self.predict_unit(&x)?;
        Ok(clip_action(&(u * self.action_bound), self.action_bound))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for BcHyper {
    fn default() -> Self {
        BcHyper {
            epochs: 30,
            batch_size: 256,
            learning_rate: 2.0,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BcResult {
    pub policy: MlpPolicy,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Trailing moving average of `loss_curve` over 10 epochs.
    pub smoothed: Vec<f64>,
}

/// Inputs and unit-scaled action targets for every demo step.
pub fn bc_dataset(demos: &[Demonstration], spec: &GoalSpec, arm: &ArmGeometry, bound: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let dim = goal_input_dim(spec.representation);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for d in demos {
        for t in demo_transitions(d, spec, arm) {
            xs.extend(goal_input(&t.state, &t.goal, spec.representation)?);
            ys.extend(t.action.iter().map(|a| a / bound));
        }
    }
    let n = ys.len() / DOF;
    Ok((
        Array2::from_shape_vec((n, dim), xs).expect("rows of input width"),
        Array2::from_shape_vec((n, DOF), ys).expect("rows of 7"),
    ))
}

pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Fit the net to demonstrated actions by mini-batch momentum SGD on mean
/// squared error. The step size halves after each third of training.
pub fn bc_fit(mut net: MlpPolicy, x: &Array2<f64>, y: &Array2<f64>, hyper: &BcHyper) -> Result<BcResult> {
    if x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: x.ncols(),
        });
    }
    if y.ncols() != *net.sizes.last().expect("sizes") || x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.nrows() == 0 || hyper.epochs == 0 || hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("empty training set or schedule".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut vel_w: Vec<Array2<f64>> = net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let mut vel_b: Vec<Array1<f64>> = net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let bs = hyper.batch_size.min(x.nrows());
    let mut bx = Array2::zeros((bs, x.ncols()));
    let mut by = Array2::zeros((bs, y.ncols()));
    for epoch in 0..hyper.epochs {
        let lr = hyper.learning_rate * 0.5f64.powi((3 * epoch / hyper.epochs) as i32);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let m = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                bx.row_mut(r).assign(&x.row(i));
                by.row_mut(r).assign(&y.row(i));
            }
            let (loss, g) = net.loss_and_grads(bx.slice(s![..m, ..]), by.slice(s![..m, ..]));
            for l in 0..net.weights.len() {
                vel_w[l] = &vel_w[l] * hyper.momentum - &(&g.w[l] * lr);
                vel_b[l] = &vel_b[l] * hyper.momentum - &(&g.b[l] * lr);
                net.weights[l] += &vel_w[l];
                net.biases[l] += &vel_b[l];
            }
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    net.meta = TrainingMeta {
        seed: hyper.seed,
        epochs: hyper.epochs,
        samples: x.nrows(),
        final_loss: *curve.last().expect("at least one epoch"),
    };
    let smoothed = moving_average(&curve, 10);
    Ok(BcResult {
        policy: net,
        loss_curve: curve,
        smoothed,
    })
}

/// Behavioral cloning from planner demonstrations.
pub fn bc_train(demos: &[Demonstration], spec: &GoalSpec, arm: &ArmGeometry, net: MlpPolicy, hyper: &BcHyper) -> Result<BcResult> {
    if demos.is_empty() {
        return Err(Error::InvalidArgument("no demonstrations".into()));
    }
    if net.input_dim() != goal_input_dim(spec.representation) {
        return Err(Error::DimensionMismatch {
            expected: goal_input_dim(spec.representation),
            got: net.input_dim(),
        });
    }
    let (x, y) = bc_dataset(demos, spec, arm, net.action_bound)?;
    let mut net = net;
    net.goal_spec = *spec;
    bc_fit(net, &x, &y, hyper)
}
