//! Differentiable objectives on trajectories.
//!
//! Every loss returns its value together with a [`TrajectoryGrad`] that the
//! simulator adjoint consumes.

use thiserror::Error;

use crate::grid::ShapeMask;
use crate::sim::{Scene, Trajectory, TrajectoryGrad};

/// Regularizer weight used by the position-keeping task.
pub const DEFAULT_GAMMA: f64 = 0.01;
/// Huber width of the smoothed L1 norm, relative to body length.
pub const HUBER_RELATIVE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty spine set: {0}")]
    EmptySpine(String),
    #[error("invalid loss parameter: {0}")]
    InvalidParameter(String),
}

/// Grid nodes of a body lying on the lateral midline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpineSet {
    nodes: Vec<usize>,
}

impl SpineSet {
    /// Grid node ids, ascending.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Body nodes whose rest y lies within half a cell of zero.
pub fn spine_set(shape: &ShapeMask) -> Result<SpineSet, LossError> {
    let g = shape.grid();
    let tol = 0.5 * g.cell_size() * (1.0 + 1e-9);
    let nodes: Vec<usize> = shape
        .nodes()
        .into_iter()
        .filter(|&n| g.node_position(n)[1].abs() <= tol)
        .collect();
    if nodes.is_empty() {
        let (lo, hi) = shape
            .nodes()
            .iter()
            .map(|&n| g.node_position(n)[1])
            .fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
        return Err(LossError::EmptySpine(format!(
            "no body node within {tol:.3e} of y = 0 (body spans y in [{lo:.3e}, {hi:.3e}]); center the shape on the x axis"
        )));
    }
    Ok(SpineSet { nodes })
}

/// Nodes and scales a loss reads from a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    pub dim: usize,
    /// Spine nodes (mesh ids).
    pub spine: Vec<usize>,
    pub center: usize,
    /// The two heading nodes, head then tail.
    pub h0: usize,
    pub h1: usize,
    pub body_length: f64,
}

impl LossContext {
    pub fn from_scene(scene: &Scene) -> Self {
        let s = scene.sensors();
        Self {
            dim: scene.dim(),
            spine: scene.spine().to_vec(),
            center: s.center,
            h0: s.head,
            h1: s.tail,
            body_length: scene.body_length(),
        }
    }
}

/// Which objective to minimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Distance,
    PositionKeeping {
        gamma: f64,
        q_target: [f64; 3],
        d_target: [f64; 3],
    },
    Efficiency,
    /// `w_s L_distance + (1 - w_s) L_efficiency`.
    Weighted {
        w_s: f64,
    },
}

impl LossSpec {
    pub fn position_keeping_default() -> Self {
        Self::PositionKeeping {
            gamma: DEFAULT_GAMMA,
            q_target: [0.0; 3],
            d_target: [1.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            Self::PositionKeeping { gamma, d_target, .. } => {
                let n = (d_target.iter().map(|x| x * x).sum::<f64>()).sqrt();
                if !(gamma >= 0.0) {
                    return Err(LossError::InvalidParameter(format!(
                        "gamma must be nonnegative, got {gamma}"
                    )));
                }
                if (n - 1.0).abs() > 1e-9 {
                    return Err(LossError::InvalidParameter(format!(
                        "d_target must have unit length, got {n}"
                    )));
                }
                Ok(())
            }
            Self::Weighted { w_s } if !(0.0..=1.0).contains(&w_s) => Err(LossError::InvalidParameter(format!(
                "w_s must lie in [0, 1], got {w_s}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A loss value with its named components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
}

/// Negative mean forward (x) travel of the spine nodes.
pub fn loss_distance(traj: &Trajectory, ctx: &LossContext) -> (f64, TrajectoryGrad) {
    let d = ctx.dim;
    let mut g = TrajectoryGrad::zeros(traj);
    let n = traj.steps();
    let w = 1.0 / ctx.spine.len() as f64;
    let mut l = 0.0;
    for &j in &ctx.spine {
        l -= w * (traj.states[n].q[j * d] - traj.states[0].q[j * d]);
        g.q[n][j * d] -= w;
        g.q[0][j * d] += w;
    }
    (l, g)
}

fn huber(x: f64, delta: f64) -> (f64, f64) {
    if x.abs() <= delta {
        (0.5 * x * x / delta, x / delta)
    } else {
        (x.abs() - 0.5 * delta, x.signum())
    }
}

/// `sum_i |q_i,c - q_target|_1 - gamma sum_i (q_i,h0 - q_i,h1) . d_target`
/// over states `1..=N`, the L1 norm Huber-smoothed. Returns the value, the
/// gradient, and the two terms.
pub fn loss_position_keeping(
    traj: &Trajectory,
    ctx: &LossContext,
    gamma: f64,
    q_target: [f64; 3],
    d_target: [f64; 3],
) -> (f64, TrajectoryGrad, f64, f64) {
    let d = ctx.dim;
    let delta = HUBER_RELATIVE * ctx.body_length;
    let mut g = TrajectoryGrad::zeros(traj);
    let (mut perf, mut reg) = (0.0, 0.0);
    for i in 1..traj.states.len() {
        let q = &traj.states[i].q;
        for k in 0..d {
            let (v, dv) = huber(q[ctx.center * d + k] - q_target[k], delta);
            perf += v;
            g.q[i][ctx.center * d + k] += dv;
            reg += (q[ctx.h0 * d + k] - q[ctx.h1 * d + k]) * d_target[k];
            g.q[i][ctx.h0 * d + k] -= gamma * d_target[k];
            g.q[i][ctx.h1 * d + k] += gamma * d_target[k];
        }
    }
    (perf - gamma * reg, g, perf, -gamma * reg)
}

/// `-sum_i |P_t| / (1 + |P_t| + |P_d|)` with `P = f . v_spine` per step.
pub fn loss_efficiency(traj: &Trajectory, ctx: &LossContext) -> (f64, TrajectoryGrad) {
    let d = ctx.dim;
    let mut g = TrajectoryGrad::zeros(traj);
    let mut l = 0.0;
    for (i, e) in traj.hydro_log.iter().enumerate() {
        let dot = |a: &[f64; 3]| (0..d).map(|k| a[k] * e.spine_velocity[k]).sum::<f64>();
        let pt = dot(&e.thrust);
        let pd = dot(&e.drag);
        let den = 1.0 + pt.abs() + pd.abs();
        l -= pt.abs() / den;
        let sgn = |x: f64| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        let dpt = -sgn(pt) * (1.0 + pd.abs()) / (den * den);
        let dpd = sgn(pd) * pt.abs() / (den * den);
        for k in 0..d {
            g.thrust[i][k] += dpt * e.spine_velocity[k];
            g.drag[i][k] += dpd * e.spine_velocity[k];
            g.spine_velocity[i][k] += dpt * e.thrust[k] + dpd * e.drag[k];
        }
    }
    (l, g)
}

/// `w_s L_distance + (1 - w_s) L_efficiency`, plus the two components.
pub fn loss_weighted(traj: &Trajectory, ctx: &LossContext, w_s: f64) -> (f64, TrajectoryGrad, f64, f64) {
    let (ls, gs) = loss_distance(traj, ctx);
    let (le, ge) = loss_efficiency(traj, ctx);
    let mut g = TrajectoryGrad::zeros(traj);
    g.add_scaled(&gs, w_s);
    g.add_scaled(&ge, 1.0 - w_s);
    (w_s * ls + (1.0 - w_s) * le, g, ls, le)
}

/// Evaluates `spec` on a trajectory.
pub fn evaluate(spec: &LossSpec, traj: &Trajectory, ctx: &LossContext) -> (LossValue, TrajectoryGrad) {
    match *spec {
        LossSpec::Distance => {
            let (l, g) = loss_distance(traj, ctx);
            (
                LossValue {
                    total: l,
                    terms: vec![("distance", l)],
                },
                g,
            )
        }
        LossSpec::PositionKeeping {
            gamma,
            q_target,
            d_target,
        } => {
            let (l, g, perf, reg) = loss_position_keeping(traj, ctx, gamma, q_target, d_target);
            (
                LossValue {
                    total: l,
                    terms: vec![("perf", perf), ("reg", reg)],
                },
                g,
            )
        }
        LossSpec::Efficiency => {
            let (l, g) = loss_efficiency(traj, ctx);
            (
                LossValue {
                    total: l,
                    terms: vec![("efficiency", l)],
                },
                g,
            )
        }
        LossSpec::Weighted { w_s } => {
            let (l, g, ls, le) = loss_weighted(traj, ctx, w_s);
            (
                LossValue {
                    total: l,
                    terms: vec![("speed", ls), ("efficiency", le)],
                },
                g,
            )
        }
    }
}
