//! Time integration of a scene under a controller, and the reverse-time
//! adjoint that differentiates a loss on the trajectory.

use crate::control::{ControlTape, Controller};

use super::hydro::{hydro_forces, hydro_vjp};
use super::scene::Scene;
use super::step::{StepConfig, StepInfo};
use super::{SimError, SimState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub steps: usize,
    pub step: StepConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step: StepConfig::default(),
        }
    }
}

/// Per-step hydrodynamic summary, evaluated at the state the step starts from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HydroLogEntry {
    /// Facet-averaged thrust and drag.
    pub thrust: [f64; 3],
    pub drag: [f64; 3],
    /// Mean velocity of the spine nodes.
    pub spine_velocity: [f64; 3],
}

/// What the adjoint needs beyond the recorded states.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTape {
    control: Vec<ControlTape>,
    h: f64,
    num_dofs: usize,
    num_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    /// Controller output per step.
    pub activations: Vec<Vec<f64>>,
    pub hydro_log: Vec<HydroLogEntry>,
    pub diagnostics: Vec<StepInfo>,
    pub tape: RolloutTape,
}

impl Trajectory {
    /// A trajectory without an adjoint tape, for evaluating losses on
    /// externally produced data. [`backward`] rejects it.
    pub fn untaped(states: Vec<SimState>, activations: Vec<Vec<f64>>, hydro_log: Vec<HydroLogEntry>, h: f64) -> Self {
        let num_dofs = states.first().map_or(0, |s| s.q.len());
        let steps = states.len().saturating_sub(1);
        Self {
            states,
            activations,
            hydro_log,
            diagnostics: vec![StepInfo::default(); steps],
            tape: RolloutTape {
                control: Vec::new(),
                h,
                num_dofs,
                num_params: 0,
            },
        }
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn h(&self) -> f64 {
        self.tape.h
    }

    pub fn final_state(&self) -> &SimState {
        self.states.last().expect("at least the initial state")
    }
}

fn spine_mean(scene: &Scene, v: &[f64]) -> [f64; 3] {
    let d = scene.dim();
    let mut m = [0.0; 3];
    let n = scene.spine().len() as f64;
    for &j in scene.spine() {
        for k in 0..d {
            m[k] += v[j * d + k] / n;
        }
    }
    m
}

/// Simulates `cfg.steps` implicit steps from `initial` (rest if `None`).
pub fn rollout(
    scene: &Scene,
    controller: &dyn Controller,
    initial: Option<&SimState>,
    cfg: &RolloutConfig,
) -> Result<Trajectory, SimError> {
    match rollout_partial(scene, controller, initial, cfg)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`rollout`], but a failure during stepping returns the steps taken
/// so far together with the error. Invalid inputs are still an `Err`.
pub fn rollout_partial(
    scene: &Scene,
    controller: &dyn Controller,
    initial: Option<&SimState>,
    cfg: &RolloutConfig,
) -> Result<(Trajectory, Option<SimError>), SimError> {
    if controller.num_outputs() != scene.num_channels() {
        return Err(SimError::InvalidParameter(format!(
            "controller drives {} channels but the design has {} actuators",
            controller.num_outputs(),
            scene.num_channels()
        )));
    }
    let n = scene.mesh().num_dofs();
    let first = initial.cloned().unwrap_or_else(|| SimState::at_rest(scene.mesh()));
    if first.q.len() != n || first.v.len() != n {
        return Err(SimError::InvalidParameter(format!(
            "initial state has {} / {} entries, mesh has {n} dofs",
            first.q.len(),
            first.v.len()
        )));
    }
    let h = cfg.step.h;
    let mut traj = Trajectory {
        states: vec![first],
        activations: Vec::with_capacity(cfg.steps),
        hydro_log: Vec::with_capacity(cfg.steps),
        diagnostics: Vec::with_capacity(cfg.steps),
        tape: RolloutTape {
            control: Vec::with_capacity(cfg.steps),
            h,
            num_dofs: n,
            num_params: controller.num_params(),
        },
    };
    let zero = vec![0.0; n];
    for i in 0..cfg.steps {
        let st = &traj.states[i];
        let (act, ctape) = controller.forward(st.t, &st.q, &st.v);
        let mut entry = HydroLogEntry {
            spine_velocity: spine_mean(scene, &st.v),
            ..Default::default()
        };
        let hydro = scene.hydro().map(|p| hydro_forces(&st.q, &st.v, scene.surface(), p));
        let f_ext = match &hydro {
            Some(e) => {
                entry.thrust = e.thrust_mean;
                entry.drag = e.drag_mean;
                &e.forces
            }
            None => &zero,
        };
        let (mut next, info) = match scene.step(st, &act, f_ext, &cfg.step) {
            Ok(r) => r,
            Err(e) => return Ok((traj, Some(e))),
        };
        // A non-finite residual means the forces themselves broke down.
        if !next.is_finite() || !info.residual.is_finite() {
            return Ok((traj, Some(SimError::NonFinite { step: i })));
        }
        next.t = (i + 1) as f64 * h;
        traj.states.push(next);
        traj.activations.push(act);
        traj.hydro_log.push(entry);
        traj.diagnostics.push(info);
        traj.tape.control.push(ctape);
    }
    Ok((traj, None))
}

/// Gradient of a scalar loss with respect to everything a trajectory records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrad {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub thrust: Vec<[f64; 3]>,
    pub drag: Vec<[f64; 3]>,
    pub spine_velocity: Vec<[f64; 3]>,
}

impl TrajectoryGrad {
    pub fn zeros(traj: &Trajectory) -> Self {
        let n = traj.tape.num_dofs;
        let steps = traj.steps();
        let channels = traj.activations.first().map_or(0, Vec::len);
        Self {
            q: vec![vec![0.0; n]; steps + 1],
            v: vec![vec![0.0; n]; steps + 1],
            activations: vec![vec![0.0; channels]; steps],
            thrust: vec![[0.0; 3]; steps],
            drag: vec![[0.0; 3]; steps],
            spine_velocity: vec![[0.0; 3]; steps],
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &TrajectoryGrad, s: f64) {
        fn axpy(a: &mut [f64], b: &[f64], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            axpy(a, b, s);
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            axpy(a, b, s);
        }
        for (a, b) in self.activations.iter_mut().zip(&other.activations) {
            axpy(a, b, s);
        }
        for (a, b) in self.thrust.iter_mut().zip(&other.thrust) {
            axpy(a, b, s);
        }
        for (a, b) in self.drag.iter_mut().zip(&other.drag) {
            axpy(a, b, s);
        }
        for (a, b) in self.spine_velocity.iter_mut().zip(&other.spine_velocity) {
            axpy(a, b, s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimGradients {
    /// d/dE per mesh cell.
    pub modulus: Vec<f64>,
    /// Total d/d(activation) per step.
    pub activations: Vec<Vec<f64>>,
    pub controller: Vec<f64>,
    pub q0: Vec<f64>,
    pub v0: Vec<f64>,
}

/// Reverse-time adjoint of [`rollout`].
pub fn backward(
    scene: &Scene,
    controller: &dyn Controller,
    traj: &Trajectory,
    up: &TrajectoryGrad,
) -> Result<SimGradients, SimError> {
    let n = scene.mesh().num_dofs();
    let steps = traj.steps();
    let mismatch = |m: String| Err(SimError::TapeMismatch(m));
    if traj.tape.num_dofs != n || traj.states.iter().any(|s| s.q.len() != n) {
        return mismatch("trajectory was recorded on a different mesh".into());
    }
    if traj.tape.control.len() != steps || traj.activations.len() != steps || traj.hydro_log.len() != steps {
        return mismatch("tape length differs from the number of steps".into());
    }
    if traj.tape.num_params != controller.num_params() || controller.num_outputs() != scene.num_channels() {
        return mismatch("controller differs from the one used in the rollout".into());
    }
    if up.q.len() != steps + 1
        || up.v.len() != steps + 1
        || up.activations.len() != steps
        || up.thrust.len() != steps
        || up.drag.len() != steps
        || up.spine_velocity.len() != steps
        || up.q.iter().chain(&up.v).any(|g| g.len() != n)
    {
        return mismatch("upstream gradient does not match trajectory shape".into());
    }
    let d = scene.dim();
    let h = traj.tape.h;
    let mesh = scene.mesh();
    let masses = mesh.dof_masses();
    let model = scene.element_model();
    let channels = scene.num_channels();
    let beta = scene.damping().stiffness;
    let unit_k = scene.unit_stiffness();
    let ne = (1usize << d) * d;
    let spine_n = scene.spine().len() as f64;

    let mut qb = up.q[steps].clone();
    let mut vb = up.v[steps].clone();
    let mut modulus = vec![0.0; mesh.num_cells()];
    let mut params = vec![0.0; controller.num_params()];
    let mut act_bar = vec![Vec::new(); steps];

    for i in (0..steps).rev() {
        let prev = &traj.states[i];
        let next = &traj.states[i + 1];
        let act = &traj.activations[i];
        let z: Vec<f64> = (0..n).map(|k| qb[k] + vb[k] / h).collect();
        let mut qb_i: Vec<f64> = (0..n).map(|k| up.q[i][k] - vb[k] / h).collect();
        let mut vb_i = up.v[i].clone();

        let lambda = scene.system_matrix(&next.q, act, h)?.solve(&z);
        let damp = scene.damping_matrix().mul_vec(&lambda);
        for k in 0..n {
            qb_i[k] += masses[k] * lambda[k] + h * damp[k];
            vb_i[k] += h * masses[k] * lambda[k];
        }

        let es = model.modulus_sensitivity(&next.q, &lambda);
        for (m, e) in modulus.iter_mut().zip(&es) {
            *m += h * h * e;
        }
        if beta != 0.0 {
            for (c, m) in modulus.iter_mut().enumerate() {
                let nodes = mesh.cell_nodes(c);
                let dof = |a: usize| nodes[a / d] * d + a % d;
                let mut s = 0.0;
                for a in 0..ne {
                    let ra = dof(a);
                    let mut row = 0.0;
                    for b in 0..ne {
                        let rb = dof(b);
                        row += unit_k[a * ne + b] * (next.q[rb] - prev.q[rb]);
                    }
                    s += lambda[ra] * row;
                }
                *m -= h * beta * s;
            }
        }

        let mut ab = model.activation_sensitivity(&next.q, &lambda, channels);
        for (a, u) in ab.iter_mut().zip(&up.activations[i]) {
            *a = h * h * *a + u;
        }

        if let Some(p) = scene.hydro() {
            let fb: Vec<f64> = lambda.iter().map(|l| h * h * l).collect();
            hydro_vjp(
                &prev.q,
                &prev.v,
                scene.surface(),
                p,
                &fb,
                up.thrust[i],
                up.drag[i],
                &mut qb_i,
                &mut vb_i,
            );
        }
        for &j in scene.spine() {
            for k in 0..d {
                vb_i[j * d + k] += up.spine_velocity[i][k] / spine_n;
            }
        }
        controller.backward(&traj.tape.control[i], &ab, &mut params, &mut qb_i, &mut vb_i)?;
        act_bar[i] = ab;
        qb = qb_i;
        vb = vb_i;
    }
    Ok(SimGradients {
        modulus,
        activations: act_bar,
        controller: params,
        q0: qb,
        v0: vb,
    })
}
