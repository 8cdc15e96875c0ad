//! Gradient-based co-optimization of shape weights and controller
//! parameters, and multi-objective sweeps.
//!
//! The simplex constraint on the shape weights is kept by optimizing
//! unconstrained logits through a softmax.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{interpolate_actuators, ActuatorError, ActuatorGaussian};
use crate::control::{ControlError, Controller, MlpController, MlpParams, OpenLoopController, OpenLoopParams};
use crate::grid::{stiffness_field_vjp, DensityField, GridError};
use crate::losses::{evaluate, loss_distance, loss_efficiency, LossContext, LossError, LossSpec};
use crate::sim::{backward, rollout, RolloutConfig, Scene, SceneConfig, SimError, Trajectory};
use crate::transport::{barycenter, barycenter_vjp, BarycenterProblem, BarycenterTape, TransportError, WeightVector};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("non-finite gradient at parameter {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid optimizer setting: {0}")]
    InvalidParameter(String),
}

/// `alpha_i = exp(l_i - max l) / sum_j exp(l_j - max l)`.
pub fn softmax_simplex(logits: &[f64]) -> Result<WeightVector, OptimizeError> {
    if logits.is_empty() {
        return Err(OptimizeError::Shape("no logits".into()));
    }
    if let Some((i, &l)) = logits.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(OptimizeError::InvalidParameter(format!("logit {i} is {l}")));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(WeightVector::new(e.into_iter().map(|v| v / s).collect())?)
}

/// Pulls a gradient on the weights back to the logits.
pub fn softmax_vjp(alpha: &[f64], alpha_bar: &[f64]) -> Vec<f64> {
    let dot: f64 = alpha.iter().zip(alpha_bar).map(|(a, b)| a * b).sum();
    alpha.iter().zip(alpha_bar).map(|(a, b)| a * (b - dot)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerParams {
    OpenLoop(OpenLoopParams),
    Mlp(MlpParams),
}

impl ControllerParams {
    pub fn num_params(&self) -> usize {
        match self {
            Self::OpenLoop(p) => 3 * p.channels(),
            Self::Mlp(p) => p.num_params(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Self::OpenLoop(p) => p.flatten(),
            Self::Mlp(p) => p.flat().to_vec(),
        }
    }

    /// Same kind and layout as `self`, new values.
    pub fn with_values(&self, flat: &[f64]) -> Result<Self, OptimizeError> {
        if flat.len() != self.num_params() {
            return Err(OptimizeError::Shape(format!(
                "controller has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        Ok(match self {
            Self::OpenLoop(_) => Self::OpenLoop(OpenLoopParams::unflatten(flat)?),
            Self::Mlp(p) => Self::Mlp(MlpParams::from_flat(p.sizes(), flat.to_vec())?),
        })
    }

    /// Default learning rate for this controller kind.
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            Self::OpenLoop(_) => 1e-2,
            Self::Mlp(_) => 1e-3,
        }
    }
}

/// The joint decision vector: shape logits and controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub alpha_logits: Vec<f64>,
    pub controller: ControllerParams,
}

impl DesignParams {
    pub fn alpha(&self) -> Result<WeightVector, OptimizeError> {
        softmax_simplex(&self.alpha_logits)
    }

    pub fn num_geometry(&self) -> usize {
        self.alpha_logits.len()
    }

    pub fn num_control(&self) -> usize {
        self.controller.num_params()
    }

    /// Logits followed by the controller parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.alpha_logits.clone();
        v.extend(self.controller.flatten());
        v
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self, OptimizeError> {
        let m = self.num_geometry();
        if flat.len() != m + self.num_control() {
            return Err(OptimizeError::Shape(format!(
                "design has {} parameters, got {}",
                m + self.num_control(),
                flat.len()
            )));
        }
        Ok(Self {
            alpha_logits: flat[..m].to_vec(),
            controller: self.controller.with_values(&flat[m..])?,
        })
    }

    /// A random design with the same layout: logits uniform in
    /// `[-logit_scale, logit_scale]`; open-loop amplitude in `[0.5, 1]` and
    /// phase in `[0, 2 pi)` with the frequency kept; MLP weights redrawn.
    pub fn randomized(&self, seed: u64, logit_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha_logits = self
            .alpha_logits
            .iter()
            .map(|_| {
                if logit_scale > 0.0 {
                    rng.gen_range(-logit_scale..=logit_scale)
                } else {
                    0.0
                }
            })
            .collect();
        let controller = match &self.controller {
            ControllerParams::OpenLoop(p) => {
                let mut q = p.clone();
                for k in 0..q.channels() {
                    q.amplitude[k] = rng.gen_range(0.5..=1.0);
                    q.phase[k] = rng.gen_range(0.0..std::f64::consts::TAU);
                }
                ControllerParams::OpenLoop(q)
            }
            ControllerParams::Mlp(p) => ControllerParams::Mlp(MlpParams::random(p.sizes(), rng.gen())),
        };
        Self {
            alpha_logits,
            controller,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the state untouched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), OptimizeError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(OptimizeError::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OptimizeError::NonFiniteGradient { index, value });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        if g == 0.0 && state.m[i] == 0.0 {
            continue;
        }
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= state.lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// How the control block is scaled relative to the geometry block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientScaling {
    #[default]
    Default,
    /// Equal mean magnitude per parameter.
    Balanced,
    /// Geometry:control magnitude ratio inverted.
    Reversed,
}

fn mean_abs(g: &[f64]) -> f64 {
    if g.is_empty() {
        0.0
    } else {
        g.iter().map(|x| x.abs()).sum::<f64>() / g.len() as f64
    }
}

/// Scales the control block in place and returns the factor used.
pub fn rescale_gradients(geometry: &[f64], control: &mut [f64], mode: GradientScaling) -> f64 {
    if mode == GradientScaling::Default {
        return 1.0;
    }
    let (mg, mc) = (mean_abs(geometry), mean_abs(control));
    if !(mg > 0.0 && mc > 0.0) {
        log::warn!("gradient block with zero magnitude (geometry {mg:e}, control {mc:e}); not rescaling");
        return 1.0;
    }
    let r = mg / mc;
    let s = match mode {
        GradientScaling::Balanced => r,
        GradientScaling::Reversed => r * r,
        GradientScaling::Default => unreachable!(),
    };
    for g in control.iter_mut() {
        *g *= s;
    }
    s
}

/// Everything needed to turn a design into a loss value.
#[derive(Debug, Clone)]
pub struct Task {
    pub problem: BarycenterProblem,
    /// Actuators of each base, in base order.
    pub base_actuators: Vec<Vec<ActuatorGaussian>>,
    pub scene: SceneConfig,
    pub rollout: RolloutConfig,
    pub loss: LossSpec,
    /// Temporal encoding period of the closed-loop controller, seconds.
    pub encoding_period: f64,
    pub use_encoding: bool,
}

/// A design's geometry, resolved.
#[derive(Debug, Clone)]
pub struct Realized {
    pub alpha: Vec<f64>,
    pub density: DensityField,
    pub tape: BarycenterTape,
    pub actuators: Vec<ActuatorGaussian>,
    pub scene: Scene,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub alpha: Vec<f64>,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
    /// Distance and efficiency objectives, recorded whatever the loss.
    pub speed: f64,
    pub efficiency: f64,
    /// Gradient with respect to the logits (zero unless requested).
    pub grad_geometry: Vec<f64>,
    pub grad_control: Vec<f64>,
    pub trajectory: Trajectory,
}

impl Task {
    pub fn realize(&self, logits: &[f64]) -> Result<Realized, OptimizeError> {
        if logits.len() != self.base_actuators.len() || logits.len() != self.problem.num_bases() {
            return Err(OptimizeError::Shape(format!(
                "{} logits for {} bases",
                logits.len(),
                self.problem.num_bases()
            )));
        }
        self.realize_weights(&softmax_simplex(logits)?)
    }

    /// Like [`Task::realize`] but from weights directly, which may sit on
    /// the boundary of the simplex.
    pub fn realize_weights(&self, w: &WeightVector) -> Result<Realized, OptimizeError> {
        if w.len() != self.base_actuators.len() || w.len() != self.problem.num_bases() {
            return Err(OptimizeError::Shape(format!(
                "{} weights for {} bases",
                w.len(),
                self.problem.num_bases()
            )));
        }
        let (density, tape) = barycenter(&self.problem, w)?;
        let actuators = interpolate_actuators(w.as_slice(), &self.base_actuators)?;
        let scene = Scene::build(&density, &actuators, &self.scene)?;
        Ok(Realized {
            alpha: w.as_slice().to_vec(),
            density,
            tape,
            actuators,
            scene,
        })
    }

    pub fn controller(&self, scene: &Scene, params: &ControllerParams) -> Result<Box<dyn Controller>, OptimizeError> {
        Ok(match params {
            ControllerParams::OpenLoop(p) => Box::new(OpenLoopController { params: p.clone() }),
            ControllerParams::Mlp(p) => Box::new(MlpController::new(
                p.clone(),
                *scene.sensors(),
                self.encoding_period,
                self.use_encoding,
            )?),
        })
    }

    /// Forward pass, and the adjoint when `grad` is set. The geometry
    /// gradient skips the barycenter adjoint unless `geometry_grad`.
    pub fn evaluate(
        &self,
        design: &DesignParams,
        grad: bool,
        geometry_grad: bool,
    ) -> Result<Evaluation, OptimizeError> {
        self.loss.validate()?;
        let r = self.realize(&design.alpha_logits)?;
        let ctrl = self.controller(&r.scene, &design.controller)?;
        let traj = rollout(&r.scene, ctrl.as_ref(), None, &self.rollout)?;
        let ctx = LossContext::from_scene(&r.scene);
        let (value, up) = evaluate(&self.loss, &traj, &ctx);
        let speed = loss_distance(&traj, &ctx).0;
        let efficiency = loss_efficiency(&traj, &ctx).0;
        let mut grad_geometry = vec![0.0; design.num_geometry()];
        let mut grad_control = vec![0.0; design.num_control()];
        if grad {
            let g = backward(&r.scene, ctrl.as_ref(), &traj, &up)?;
            grad_control = g.controller;
            if geometry_grad {
                let e_bar = r.scene.to_grid_cells(&g.modulus);
                let p_bar = stiffness_field_vjp(&r.density, self.scene.e0, &e_bar)?;
                let a_bar = barycenter_vjp(&r.tape, &p_bar, false)?;
                grad_geometry = softmax_vjp(&r.alpha, &a_bar);
            }
        }
        Ok(Evaluation {
            alpha: r.alpha,
            loss: value.total,
            terms: value.terms.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            speed,
            efficiency,
            grad_geometry,
            grad_control,
            trajectory: traj,
        })
    }
}

/// Which blocks are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoOptMode {
    Joint,
    /// Geometry frozen.
    ControlOnly,
    /// Controller frozen.
    ShapeOnly,
    /// Shape for `period` iterations, then control, and so on.
    Alternating {
        period: usize,
    },
}

impl CoOptMode {
    /// (geometry, control) updated at 1-based iteration `it`.
    pub fn blocks(self, it: usize) -> (bool, bool) {
        match self {
            Self::Joint => (true, true),
            Self::ControlOnly => (false, true),
            Self::ShapeOnly => (true, false),
            Self::Alternating { period } => {
                let shape = ((it - 1) / period.max(1)).is_multiple_of(2);
                (shape, !shape)
            }
        }
    }

    fn needs_geometry_grad(self) -> bool {
        self != Self::ControlOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    pub lr_geometry: f64,
    /// `None` picks the controller kind's default.
    pub lr_control: Option<f64>,
    pub mode: CoOptMode,
    pub scaling: GradientScaling,
    /// Relative loss change over `window` iterations that counts as converged.
    pub tol: f64,
    pub window: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lr_geometry: 1e-2,
            lr_control: None,
            mode: CoOptMode::Joint,
            scaling: GradientScaling::Default,
            tol: 1e-6,
            window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
    pub speed: f64,
    pub efficiency: f64,
    pub alpha: Vec<f64>,
    pub grad_geometry_norm: f64,
    pub grad_control_norm: f64,
    /// Flattened design at this iteration.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    Running,
    MaxIterations,
    Converged,
    Failed(String),
}

/// Complete optimizer state; serializable for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub design: DesignParams,
    pub adam_geometry: AdamState,
    pub adam_control: AdamState,
    /// Gradients of the current design.
    pub grad_geometry: Vec<f64>,
    pub grad_control: Vec<f64>,
    pub history: Vec<HistoryRecord>,
    pub stop: StopReason,
}

impl OptimizerState {
    pub fn iteration(&self) -> usize {
        self.history.last().map_or(0, |r| r.iteration)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn record(iteration: usize, design: &DesignParams, e: &Evaluation) -> HistoryRecord {
    HistoryRecord {
        iteration,
        loss: e.loss,
        terms: e.terms.clone(),
        speed: e.speed,
        efficiency: e.efficiency,
        alpha: e.alpha.clone(),
        grad_geometry_norm: norm(&e.grad_geometry),
        grad_control_norm: norm(&e.grad_control),
        params: design.flatten(),
    }
}

/// A resumable optimization run.
pub struct Optimizer<'a> {
    task: &'a Task,
    cfg: OptimizeConfig,
    state: OptimizerState,
}

impl<'a> Optimizer<'a> {
    /// Evaluates the initial design (iteration 0).
    pub fn new(task: &'a Task, cfg: OptimizeConfig, initial: DesignParams) -> Result<Self, OptimizeError> {
        if !(cfg.lr_geometry > 0.0) || cfg.lr_control.is_some_and(|l| !(l > 0.0)) {
            return Err(OptimizeError::InvalidParameter(
                "learning rates must be positive".into(),
            ));
        }
        if cfg.window == 0 {
            return Err(OptimizeError::InvalidParameter(
                "convergence window must be positive".into(),
            ));
        }
        let lr_c = cfg
            .lr_control
            .unwrap_or_else(|| initial.controller.default_learning_rate());
        let mut state = OptimizerState {
            adam_geometry: AdamState::new(initial.num_geometry(), cfg.lr_geometry),
            adam_control: AdamState::new(initial.num_control(), lr_c),
            grad_geometry: vec![0.0; initial.num_geometry()],
            grad_control: vec![0.0; initial.num_control()],
            design: initial,
            history: Vec::new(),
            stop: StopReason::Running,
        };
        match task.evaluate(&state.design, cfg.max_iters > 0, cfg.mode.needs_geometry_grad()) {
            Ok(e) => {
                state.history.push(record(0, &state.design, &e));
                state.grad_geometry = e.grad_geometry;
                state.grad_control = e.grad_control;
                if cfg.max_iters == 0 {
                    state.stop = StopReason::MaxIterations;
                }
            }
            Err(e) => state.stop = StopReason::Failed(e.to_string()),
        }
        Ok(Self { task, cfg, state })
    }

    pub fn resume(task: &'a Task, cfg: OptimizeConfig, state: OptimizerState) -> Self {
        Self { task, cfg, state }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn into_state(self) -> OptimizerState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.stop != StopReason::Running
    }

    /// Performs one update and evaluation. Returns false once stopped.
    pub fn step(&mut self) -> bool {
        if self.is_done() {
            return false;
        }
        let st = &mut self.state;
        let it = st.iteration() + 1;
        let (geo, ctl) = self.cfg.mode.blocks(it);
        let mut gc = st.grad_control.clone();
        rescale_gradients(&st.grad_geometry, &mut gc, self.cfg.scaling);
        debug_assert!(st.design.alpha().is_ok());
        let mut next = st.design.clone();
        if geo {
            if let Err(e) = adam_step(&mut next.alpha_logits, &st.grad_geometry, &mut st.adam_geometry) {
                st.stop = StopReason::Failed(e.to_string());
                return false;
            }
        }
        if ctl {
            let mut flat = next.controller.flatten();
            let applied =
                adam_step(&mut flat, &gc, &mut st.adam_control).and_then(|_| next.controller.with_values(&flat));
            match applied {
                Ok(c) => next.controller = c,
                Err(e) => {
                    st.stop = StopReason::Failed(e.to_string());
                    return false;
                }
            }
        }
        let want_grad = it < self.cfg.max_iters;
        match self
            .task
            .evaluate(&next, want_grad, self.cfg.mode.needs_geometry_grad())
        {
            Ok(e) => {
                st.history.push(record(it, &next, &e));
                st.grad_geometry = e.grad_geometry;
                st.grad_control = e.grad_control;
                st.design = next;
            }
            Err(e) => {
                log::warn!("evaluation failed at iteration {it}: {e}");
                st.stop = StopReason::Failed(format!("iteration {it}: {e}"));
                return false;
            }
        }
        let w = self.cfg.window;
        let h = &st.history;
        if h.len() > w {
            let (a, b) = (h[h.len() - 1 - w].loss, h[h.len() - 1].loss);
            if (b - a).abs() <= self.cfg.tol * a.abs().max(f64::MIN_POSITIVE) {
                st.stop = StopReason::Converged;
            }
        }
        if st.stop == StopReason::Running && it >= self.cfg.max_iters {
            st.stop = StopReason::MaxIterations;
        }
        !self.is_done()
    }

    pub fn run(mut self) -> OptimizerState {
        while self.step() {}
        self.state
    }
}

/// Runs an optimization to completion.
pub fn co_optimize(task: &Task, cfg: &OptimizeConfig, initial: DesignParams) -> Result<OptimizerState, OptimizeError> {
    Ok(Optimizer::new(task, cfg.clone(), initial)?.run())
}

/// One row per recorded iteration.
pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from("iteration,loss");
    let first = history.first();
    for (k, _) in first.map_or(&[][..], |r| &r.terms[..]) {
        let _ = write!(s, ",{k}");
    }
    s.push_str(",speed,efficiency");
    for i in 0..first.map_or(0, |r| r.alpha.len()) {
        let _ = write!(s, ",alpha{i}");
    }
    s.push_str(",grad_geometry,grad_control\n");
    for r in history {
        let _ = write!(s, "{},{:e}", r.iteration, r.loss);
        for (_, v) in &r.terms {
            let _ = write!(s, ",{v:e}");
        }
        let _ = write!(s, ",{:e},{:e}", r.speed, r.efficiency);
        for a in &r.alpha {
            let _ = write!(s, ",{a:e}");
        }
        let _ = writeln!(s, ",{:e},{:e}", r.grad_geometry_norm, r.grad_control_norm);
    }
    s
}

/// `a` dominates `b` under minimization of both objectives.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Non-dominated points, by a single incremental pass. Indices ascending.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if front.iter().any(|&j| dominates(points[j], p)) {
            continue;
        }
        front.retain(|&j| !dominates(p, points[j]));
        front.push(i);
    }
    front.sort_unstable();
    front
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamutPoint {
    pub w_s: f64,
    pub iteration: usize,
    pub speed: f64,
    pub efficiency: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoGamut {
    pub points: Vec<GamutPoint>,
    pub front: Vec<usize>,
}

impl ParetoGamut {
    pub fn from_runs(runs: &[(f64, OptimizerState)]) -> Self {
        let points: Vec<GamutPoint> = runs
            .iter()
            .flat_map(|(w, st)| {
                st.history.iter().map(move |r| GamutPoint {
                    w_s: *w,
                    iteration: r.iteration,
                    speed: r.speed,
                    efficiency: r.efficiency,
                    params: r.params.clone(),
                })
            })
            .collect();
        let objectives: Vec<(f64, f64)> = points.iter().map(|p| (p.speed, p.efficiency)).collect();
        let front = pareto_front(&objectives);
        Self { points, front }
    }

    pub fn objectives(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.speed, p.efficiency)).collect()
    }

    /// Columns `w_s,iteration,L_speed,L_efficiency,front`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w_s,iteration,L_speed,L_efficiency,front\n");
        for (i, p) in self.points.iter().enumerate() {
            let on = self.front.binary_search(&i).is_ok() as u8;
            let _ = writeln!(s, "{},{},{:e},{:e},{on}", p.w_s, p.iteration, p.speed, p.efficiency);
        }
        s
    }
}

/// `{0, 0.1, ..., 1}`.
pub fn default_weight_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// One weighted-loss optimization per speed weight, run in parallel on the
/// current rayon pool. Runs are returned in the order of `weights`.
pub fn pareto_sweep(
    task: &Task,
    cfg: &OptimizeConfig,
    initial: &DesignParams,
    weights: &[f64],
) -> Result<(ParetoGamut, Vec<(f64, OptimizerState)>), OptimizeError> {
    for &w in weights {
        LossSpec::Weighted { w_s: w }.validate()?;
    }
    let runs = weights
        .par_iter()
        .map(|&w| {
            let mut t = task.clone();
            t.loss = LossSpec::Weighted { w_s: w };
            co_optimize(&t, cfg, initial.clone()).map(|st| (w, st))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ParetoGamut::from_runs(&runs), runs))
}
