//! The policy network mapping a local map, the current configuration and the
//! goal to the next segment's parameters, its autoregressive rollout, and
//! exact gradients of the feasibility loss through the whole rollout.
//!
//! The network has three parts: a convolutional map processor that runs once
//! per episode, a small configuration processor, and a shared trunk with one
//! head per segment parameter. Gradients flow backwards through every step
//! of the rollout: the loss is differentiated with respect to all segment
//! parameters by forward-mode duals, and the network is differentiated by a
//! hand-written reverse pass over its fixed graph.

mod adam;
mod checkpoint;
mod net;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Manifest, MANIFEST_FILE, PARAMS_FILE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{Dual, Real, MAX_DUAL};
use crate::gridmap::{OccupancyGrid, GRID_SIZE};
use crate::kinematics::{Configuration, VehicleParams};
use crate::loss::{loss_terms, GoalRegion, LossBreakdown, LossConfig, LossContext, LossTerms};
use crate::spline::{chain, endpoint_configuration_unchecked, trace, PathSpline, SegmentSpec, SplineError, SAMPLES_PER_SEGMENT};
use net::*;

/// Positions enter the network multiplied by this factor.
pub const POSITION_SCALE: f64 = 0.1;
/// Current `(x, y, sin, cos, beta)` plus goal `(x, y, sin, cos)`.
pub const INPUT_FEATURES: usize = 9;
/// The x head is `X_HEAD_SCALE * sigmoid(logit)`.
pub const X_HEAD_SCALE: f64 = 10.0;
/// Longest rollout the gradient supports (four duals per segment).
pub const MAX_SEGMENTS: usize = MAX_DUAL / 4;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("parameter vector has {got} entries, the architecture needs {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("gradient has a non-finite component")]
    NonFiniteGradient,
    #[error("rollout length must be in 1..={max}, got {got}")]
    BadSegmentCount { got: usize, max: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Layer sizes. The map input is always the 128 x 128 occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Output channels of each [conv 3x3, ReLU, max-pool 2x2] block.
    pub conv_channels: Vec<usize>,
    pub map_hidden: usize,
    pub map_out: usize,
    pub config_hidden: usize,
    pub config_out: usize,
    pub trunk: usize,
    pub head_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            conv_channels: vec![8, 16, 32, 64],
            map_hidden: 256,
            map_out: 128,
            config_hidden: 64,
            config_out: 128,
            trunk: 256,
            head_hidden: 64,
        }
    }
}

impl ArchConfig {
    /// A very small network with the same structure, for gradient checks.
    pub fn tiny() -> Self {
        ArchConfig {
            conv_channels: vec![2, 2, 2, 2],
            map_hidden: 8,
            map_out: 6,
            config_hidden: 6,
            config_out: 6,
            trunk: 8,
            head_hidden: 4,
        }
    }
}

/// Name, shape and position of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    /// Side of the (square) input.
    size: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<Conv>,
    map_fc: [Dense; 2],
    config_fc: [Dense; 2],
    trunk: Dense,
    heads: [[Dense; 2]; 4],
    tensors: Vec<TensorSpec>,
    len: usize,
}

const HEAD_NAMES: [&str; 4] = ["x", "y", "dy", "ddy"];

struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec { name, shape, offset });
        offset
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize) -> Dense {
        Dense {
            w: self.push(format!("{name}.weight"), vec![n_out, n_in]),
            b: self.push(format!("{name}.bias"), vec![n_out]),
            n_in,
            n_out,
        }
    }
}

impl Layout {
    fn new(arch: &ArchConfig) -> Layout {
        let mut lb = LayoutBuilder {
            tensors: Vec::new(),
            len: 0,
        };
        let mut convs = Vec::new();
        let (mut cin, mut size) = (1, GRID_SIZE);
        for (i, &cout) in arch.conv_channels.iter().enumerate() {
            assert!(size % 2 == 0, "too many pooling blocks for the grid size");
            convs.push(Conv {
                w: lb.push(format!("map.conv{i}.weight"), vec![cout, cin, 3, 3]),
                b: lb.push(format!("map.conv{i}.bias"), vec![cout]),
                cin,
                cout,
                size,
            });
            cin = cout;
            size /= 2;
        }
        let flat = cin * size * size;
        let map_fc = [
            lb.dense("map.fc0", flat, arch.map_hidden),
            lb.dense("map.fc1", arch.map_hidden, arch.map_out),
        ];
        let config_fc = [
            lb.dense("config.fc0", INPUT_FEATURES, arch.config_hidden),
            lb.dense("config.fc1", arch.config_hidden, arch.config_out),
        ];
        let trunk = lb.dense("trunk", arch.map_out + arch.config_out, arch.trunk);
        let heads = HEAD_NAMES.map(|h| {
            [
                lb.dense(&format!("head.{h}.fc0"), arch.trunk, arch.head_hidden),
                lb.dense(&format!("head.{h}.out"), arch.head_hidden, 1),
            ]
        });
        Layout {
            convs,
            map_fc,
            config_fc,
            trunk,
            heads,
            tensors: lb.tensors,
            len: lb.len,
        }
    }
}

/// All weights and biases of the policy in one flat vector.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub arch: ArchConfig,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub values: Vec<f64>,
    layout: Layout,
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.seed == other.seed && self.values == other.values
    }
}

impl PolicyParams {
    /// Uniform initialization in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn init(arch: &ArchConfig, seed: u64) -> Self {
        let layout = Layout::new(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.len];
        for t in &layout.tensors {
            // a bias shares the fan-in of the weight right before it
            let fan_in = if t.shape.len() == 1 {
                None
            } else {
                Some(t.shape[1..].iter().product::<usize>())
            };
            let fan_in = fan_in.unwrap_or_else(|| {
                let w = layout
                    .tensors
                    .iter()
                    .find(|w| w.name == t.name.replace(".bias", ".weight"))
                    .expect("every bias has a weight");
                w.shape[1..].iter().product()
            });
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[t.offset..t.offset + t.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        PolicyParams {
            arch: arch.clone(),
            seed,
            values,
            layout,
        }
    }

    pub fn zeros(arch: &ArchConfig) -> Self {
        let layout = Layout::new(arch);
        PolicyParams {
            arch: arch.clone(),
            seed: 0,
            values: vec![0.0; layout.len],
            layout,
        }
    }

    pub fn from_values(arch: &ArchConfig, seed: u64, values: Vec<f64>) -> Result<Self, PolicyError> {
        let layout = Layout::new(arch);
        if values.len() != layout.len {
            return Err(PolicyError::ShapeMismatch {
                expected: layout.len,
                got: values.len(),
            });
        }
        Ok(PolicyParams {
            arch: arch.clone(),
            seed,
            values,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.values[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&mut self.values[t.offset..t.offset + t.len()])
    }

    fn dense_w(&self, d: Dense) -> (&[f64], &[f64]) {
        (
            &self.values[d.w..d.w + d.n_in * d.n_out],
            &self.values[d.b..d.b + d.n_out],
        )
    }

    fn dense(&self, d: Dense, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.dense_w(d);
        let mut y = vec![0.0; d.n_out];
        dense_forward(w, b, x, &mut y);
        y
    }

    fn dense_back(&self, d: Dense, x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let (w, _) = self.dense_w(d);
        let (gw, gb) = split_two(grad, d);
        dense_backward(w, x, dy, gw, gb, dx);
    }
}

/// Mutable weight and bias gradient slices of a dense layer.
fn split_two(grad: &mut [f64], d: Dense) -> (&mut [f64], &mut [f64]) {
    assert!(d.w + d.n_in * d.n_out <= d.b, "bias follows weight");
    let (lo, hi) = grad.split_at_mut(d.b);
    (&mut lo[d.w..d.w + d.n_in * d.n_out], &mut hi[..d.n_out])
}

/// What the network sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub grid: &'a OccupancyGrid,
    /// `(x, y, sin theta, cos theta, beta)` of the current configuration.
    pub current: [f64; 5],
    /// `(x, y, sin theta, cos theta)` of the goal.
    pub goal: [f64; 4],
}

impl<'a> PolicyInput<'a> {
    pub fn new(grid: &'a OccupancyGrid, current: &Configuration, goal: &GoalRegion) -> Self {
        PolicyInput {
            grid,
            current: current_features(current),
            goal: goal_features(goal),
        }
    }

    /// Scaled network input.
    pub fn features(&self) -> [f64; INPUT_FEATURES] {
        let c = &self.current;
        let g = &self.goal;
        [
            c[0] * POSITION_SCALE,
            c[1] * POSITION_SCALE,
            c[2],
            c[3],
            c[4],
            g[0] * POSITION_SCALE,
            g[1] * POSITION_SCALE,
            g[2],
            g[3],
        ]
    }
}

fn current_features(q: &Configuration) -> [f64; 5] {
    [q.x, q.y, q.theta.sin(), q.theta.cos(), q.beta]
}

fn goal_features(g: &GoalRegion) -> [f64; 4] {
    [g.x, g.y, g.theta.sin(), g.theta.cos()]
}

/// Intermediate values of the map processor.
#[derive(Debug, Clone)]
pub struct MapEncoding {
    cols: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    args: Vec<Vec<u32>>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    /// Map feature vector fed to the trunk.
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    features: [f64; INPUT_FEATURES],
    c1: Vec<f64>,
    c2: Vec<f64>,
    z: Vec<f64>,
    t: Vec<f64>,
    u: [Vec<f64>; 4],
    o: [f64; 4],
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl PolicyParams {
    pub fn encode_map(&self, grid: &OccupancyGrid) -> MapEncoding {
        let mut input = grid.as_f64();
        let n = self.layout.convs.len();
        let (mut cols, mut acts, mut args) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for c in &self.layout.convs {
            let hw = c.size * c.size;
            let mut col = Vec::new();
            im2col(&input, c.cin, c.size, c.size, &mut col);
            let mut act = vec![0.0; c.cout * hw];
            let m = c.cin * 9;
            conv_forward(
                &self.values[c.w..c.w + c.cout * m],
                &self.values[c.b..c.b + c.cout],
                &col,
                c.cout,
                m,
                hw,
                &mut act,
            );
            for v in &mut act {
                *v = v.max(0.0);
            }
            let half = c.size / 2;
            let mut pooled = vec![0.0; c.cout * half * half];
            let mut arg = vec![0u32; pooled.len()];
            maxpool_forward(&act, c.cout, c.size, c.size, &mut pooled, &mut arg);
            cols.push(col);
            acts.push(act);
            args.push(arg);
            input = pooled;
        }
        let flat = input;
        let mut hidden = self.dense(self.layout.map_fc[0], &flat);
        tanh_in_place(&mut hidden);
        let mut latent = self.dense(self.layout.map_fc[1], &hidden);
        tanh_in_place(&mut latent);
        MapEncoding {
            cols,
            acts,
            args,
            flat,
            hidden,
            latent,
        }
    }

    fn step_forward(&self, latent: &[f64], features: [f64; INPUT_FEATURES]) -> (StepCache, [f64; 4]) {
        let l = &self.layout;
        let mut c1 = self.dense(l.config_fc[0], &features);
        tanh_in_place(&mut c1);
        let mut c2 = self.dense(l.config_fc[1], &c1);
        tanh_in_place(&mut c2);
        let z: Vec<f64> = latent.iter().chain(&c2).copied().collect();
        let mut t = self.dense(l.trunk, &z);
        tanh_in_place(&mut t);
        let mut o = [0.0; 4];
        let u = std::array::from_fn(|h| {
            let mut u = self.dense(l.heads[h][0], &t);
            tanh_in_place(&mut u);
            o[h] = self.dense(l.heads[h][1], &u)[0];
            u
        });
        let spec = [X_HEAD_SCALE * sigmoid(o[0]), o[1], o[2], o[3]];
        (
            StepCache {
                features,
                c1,
                c2,
                z,
                t,
                u,
                o,
            },
            spec,
        )
    }

    /// Accumulates parameter gradients of one step and returns the gradient
    /// with respect to the (scaled) input features. The map feature gradient
    /// is added to `dlatent`.
    fn step_backward(
        &self,
        cache: &StepCache,
        dspec: [f64; 4],
        grad: &mut [f64],
        dlatent: &mut [f64],
    ) -> [f64; INPUT_FEATURES] {
        let l = &self.layout;
        let mut dt = vec![0.0; cache.t.len()];
        for h in 0..4 {
            let dout = if h == 0 {
                let s = sigmoid(cache.o[0]);
                dspec[0] * X_HEAD_SCALE * s * (1.0 - s)
            } else {
                dspec[h]
            };
            let mut du = vec![0.0; cache.u[h].len()];
            self.dense_back(l.heads[h][1], &cache.u[h], &[dout], grad, Some(&mut du));
            tanh_backward(&cache.u[h], &mut du);
            self.dense_back(l.heads[h][0], &cache.t, &du, grad, Some(&mut dt));
        }
        tanh_backward(&cache.t, &mut dt);
        let mut dz = vec![0.0; cache.z.len()];
        self.dense_back(l.trunk, &cache.z, &dt, grad, Some(&mut dz));
        let (dl, dc2) = dz.split_at_mut(dlatent.len());
        for (a, b) in dlatent.iter_mut().zip(dl.iter()) {
            *a += b;
        }
        tanh_backward(&cache.c2, dc2);
        let mut dc1 = vec![0.0; cache.c1.len()];
        self.dense_back(l.config_fc[1], &cache.c1, dc2, grad, Some(&mut dc1));
        tanh_backward(&cache.c1, &mut dc1);
        let mut df = [0.0; INPUT_FEATURES];
        self.dense_back(l.config_fc[0], &cache.features, &dc1, grad, Some(&mut df));
        df
    }

    fn map_backward(&self, enc: &MapEncoding, dlatent: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        let mut dl = dlatent.to_vec();
        tanh_backward(&enc.latent, &mut dl);
        let mut dh = vec![0.0; enc.hidden.len()];
        self.dense_back(l.map_fc[1], &enc.hidden, &dl, grad, Some(&mut dh));
        tanh_backward(&enc.hidden, &mut dh);
        let mut dinput = vec![0.0; enc.flat.len()];
        self.dense_back(l.map_fc[0], &enc.flat, &dh, grad, Some(&mut dinput));
        let mut dcol = Vec::new();
        for (i, c) in l.convs.iter().enumerate().rev() {
            let hw = c.size * c.size;
            let mut dact = vec![0.0; c.cout * hw];
            maxpool_backward(&dinput, &enc.args[i], &mut dact);
            for (d, a) in dact.iter_mut().zip(&enc.acts[i]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let m = c.cin * 9;
            let (lo, hi) = grad.split_at_mut(c.b);
            let dw = &mut lo[c.w..c.w + c.cout * m];
            let db = &mut hi[..c.cout];
            let need_input = i > 0;
            conv_backward(
                &self.values[c.w..c.w + c.cout * m],
                &enc.cols[i],
                &dact,
                c.cout,
                m,
                hw,
                dw,
                db,
                need_input.then_some(&mut dcol),
            );
            if need_input {
                dinput = vec![0.0; c.cin * hw];
                col2im(&dcol, c.cin, c.size, c.size, &mut dinput);
            }
        }
    }

    /// One network evaluation.
    pub fn forward(&self, input: &PolicyInput) -> SegmentSpec {
        let enc = self.encode_map(input.grid);
        self.step(&enc, input.features())
    }

    /// Evaluates the configuration processor and heads on a map encoding.
    pub fn step(&self, enc: &MapEncoding, features: [f64; INPUT_FEATURES]) -> SegmentSpec {
        SegmentSpec::from_array(self.step_forward(&enc.latent, features).1)
    }
}

/// Result of an autoregressive rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub specs: Vec<SegmentSpec>,
    /// Configuration fed to the network before each segment.
    pub inputs: Vec<Configuration>,
    pub path: PathSpline,
}

fn check_segments(n: usize) -> Result<(), PolicyError> {
    if n == 0 || n > MAX_SEGMENTS {
        return Err(PolicyError::BadSegmentCount { got: n, max: MAX_SEGMENTS });
    }
    Ok(())
}

impl PolicyParams {
    /// Generates `n` segments, moving the vehicle virtually to the end of each
    /// one before asking for the next. Map and goal stay fixed.
    pub fn rollout(
        &self,
        grid: &OccupancyGrid,
        vehicle: &VehicleParams,
        q0: &Configuration,
        goal: &GoalRegion,
        n: usize,
    ) -> Result<Rollout, PolicyError> {
        let enc = self.encode_map(grid);
        let (rollout, _) = self.rollout_encoded(&enc, grid, vehicle, q0, goal, n)?;
        Ok(rollout)
    }

    /// Rollout with a map encoding computed once by [`PolicyParams::encode_map`].
    pub fn rollout_with(
        &self,
        enc: &MapEncoding,
        grid: &OccupancyGrid,
        vehicle: &VehicleParams,
        q0: &Configuration,
        goal: &GoalRegion,
        n: usize,
    ) -> Result<Rollout, PolicyError> {
        Ok(self.rollout_encoded(enc, grid, vehicle, q0, goal, n)?.0)
    }

    fn rollout_encoded(
        &self,
        enc: &MapEncoding,
        grid: &OccupancyGrid,
        vehicle: &VehicleParams,
        q0: &Configuration,
        goal: &GoalRegion,
        n: usize,
    ) -> Result<(Rollout, Vec<StepCache>), PolicyError> {
        check_segments(n)?;
        let mut specs = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut current = *q0;
        let mut path = None;
        for _ in 0..n {
            let input = PolicyInput::new(grid, &current, goal);
            let (cache, spec) = self.step_forward(&enc.latent, input.features());
            inputs.push(current);
            caches.push(cache);
            specs.push(SegmentSpec::from_array(spec));
            let p = chain(q0, vehicle, &specs)?;
            current = endpoint_configuration_unchecked(&p, vehicle);
            path = Some(p);
        }
        let path = path.expect("at least one segment");
        Ok((Rollout { specs, inputs, path }, caches))
    }
}

/// One planning problem for loss and gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub grid: &'a OccupancyGrid,
    pub ref_path: &'a [[f64; 2]],
    pub vehicle: VehicleParams,
    pub q0: Configuration,
    pub goal: GoalRegion,
}

fn start_of<R: Real>(q0: &Configuration, vehicle: &VehicleParams) -> ([R; 3], R) {
    (
        [R::cst(q0.x), R::cst(q0.y), R::cst(q0.theta)],
        R::cst(q0.beta.tan() / vehicle.wheelbase),
    )
}

impl PolicyParams {
    /// Loss of the rollout in plain arithmetic, with branch bookkeeping.
    pub fn evaluate(&self, ep: &Episode, n: usize, config: LossConfig) -> Result<LossTerms<f64>, PolicyError> {
        let r = self.rollout(ep.grid, &ep.vehicle, &ep.q0, &ep.goal, n)?;
        let ctx = LossContext::new(ep.grid, &ep.vehicle, ep.ref_path, ep.goal, config);
        let specs: Vec<[f64; 4]> = r.specs.iter().map(|s| s.to_array()).collect();
        let (start, k0) = start_of::<f64>(&ep.q0, &ep.vehicle);
        Ok(loss_terms(&trace(start, k0, &specs, SAMPLES_PER_SEGMENT), &ctx))
    }

    /// Gradient of the total loss of one episode with respect to every
    /// parameter. Collision indicators and hinge activity are held at their
    /// values at the current parameters.
    pub fn gradient(&self, ep: &Episode, n: usize, config: LossConfig) -> Result<(LossBreakdown, Vec<f64>), PolicyError> {
        let mut grad = vec![0.0; self.len()];
        let b = self.accumulate_gradient(ep, n, config, 1.0, &mut grad)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient);
        }
        Ok((b, grad))
    }

    /// Adds `weight` times the episode gradient to `grad`.
    pub fn accumulate_gradient(
        &self,
        ep: &Episode,
        n: usize,
        config: LossConfig,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<LossBreakdown, PolicyError> {
        if grad.len() != self.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.len(),
                got: grad.len(),
            });
        }
        let enc = self.encode_map(ep.grid);
        let (r, caches) = self.rollout_encoded(&enc, ep.grid, &ep.vehicle, &ep.q0, &ep.goal, n)?;
        let seeded: Vec<[Dual; 4]> = r
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let a = s.to_array();
                std::array::from_fn(|c| Dual::seed(a[c], 4 * i + c))
            })
            .collect();
        let (start, k0) = start_of::<Dual>(&ep.q0, &ep.vehicle);
        let tr = trace(start, k0, &seeded, SAMPLES_PER_SEGMENT);
        let ctx = LossContext::new(ep.grid, &ep.vehicle, ep.ref_path, ep.goal, config);
        let terms = loss_terms(&tr, &ctx);
        let total = terms.total();

        let mut adj: Vec<f64> = total.d[..4 * n].iter().map(|d| d * weight).collect();
        let mut dlatent = vec![0.0; enc.latent.len()];
        for i in (0..n).rev() {
            let dspec = [adj[4 * i], adj[4 * i + 1], adj[4 * i + 2], adj[4 * i + 3]];
            let df = self.step_backward(&caches[i], dspec, grad, &mut dlatent);
            if i == 0 {
                continue;
            }
            // the configuration fed to step i is the end of segment i - 1
            let [ex, ey, et, ek] = tr.endpoints[i - 1];
            let feats = [
                ex * POSITION_SCALE,
                ey * POSITION_SCALE,
                et.sin(),
                et.cos(),
                (ek * ep.vehicle.wheelbase).atan(),
            ];
            for (f, feat) in feats.iter().enumerate() {
                if df[f] == 0.0 {
                    continue;
                }
                for (j, a) in adj[..4 * i].iter_mut().enumerate() {
                    *a += df[f] * feat.d[j];
                }
            }
        }
        self.map_backward(&enc, &dlatent, grad);
        Ok(terms.breakdown())
    }
}
