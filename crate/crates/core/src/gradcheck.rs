//! Finite-difference validation of every analytic gradient in the
//! pipeline, against central differences.
//!
//! Errors are reported per checked component as
//! `|adjoint - fd| / max(|fd|, floor)`, where the floor is a fixed fraction
//! of the largest finite-difference magnitude in the group, so that
//! components many orders below the rest do not dominate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actuator::actuator_region;
use crate::control::{
    policy_forward, policy_vjp, ControlTape, Controller, MlpParams, OpenLoopController, OpenLoopParams,
};
use crate::grid::stiffness_field;
use crate::losses::{evaluate, LossContext, LossSpec};
use crate::optimize::{ControllerParams, DesignParams, OptimizeError, Task};
use crate::sim::{backward, rollout, Scene};
use crate::transport::{barycenter, barycenter_vjp};

/// Fraction of the group's largest magnitude below which errors are
/// measured absolutely.
pub const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Tolerance for gradients through the simulator and transport.
    pub tol_full: f64,
    /// Tolerance for the controller derivatives on their own.
    pub tol_isolated: f64,
    /// How many modulus cells and MLP weights to sample.
    pub samples: usize,
    pub seed: u64,
    pub losses: Vec<LossSpec>,
    /// Test hook: perturbs the simulator adjoint so the check must fail.
    pub corrupt_adjoint: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tol_full: 1e-2,
            tol_isolated: 1e-3,
            samples: 8,
            seed: 0,
            losses: vec![
                LossSpec::Distance,
                LossSpec::position_keeping_default(),
                LossSpec::Efficiency,
                LossSpec::Weighted { w_s: 0.5 },
            ],
            corrupt_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub components: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Largest per-component relative error of `adjoint` against `fd`.
pub fn relative_error(adjoint: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return adjoint.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    }
    let floor = ERROR_FLOOR * scale;
    adjoint
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(floor))
        .fold(0.0, f64::max)
}

fn central(f: impl Fn(f64) -> Result<f64, OptimizeError>, x: f64, delta: f64) -> Result<f64, OptimizeError> {
    Ok((f(x + delta)? - f(x - delta)?) / (2.0 * delta))
}

fn loss_label(l: &LossSpec) -> &'static str {
    match l {
        LossSpec::Distance => "distance",
        LossSpec::PositionKeeping { .. } => "position_keeping",
        LossSpec::Efficiency => "efficiency",
        LossSpec::Weighted { .. } => "weighted",
    }
}

fn push(out: &mut Vec<CheckResult>, name: String, adj: &[f64], fd: &[f64], tol: f64) {
    let r = CheckResult {
        name,
        max_rel_error: relative_error(adj, fd),
        tolerance: tol,
        components: adj.len(),
    };
    log::info!(
        "{:<36} max rel error {:.3e} (tol {:.0e}, {} components)",
        r.name,
        r.max_rel_error,
        r.tolerance,
        r.components
    );
    out.push(r);
}

/// Open-loop derivative on its own, at a few sample times.
fn check_open_loop(
    p: &OpenLoopParams,
    rng: &mut ChaCha8Rng,
    tol: f64,
    out: &mut Vec<CheckResult>,
) -> Result<(), OptimizeError> {
    let ctrl = OpenLoopController { params: p.clone() };
    let n = ctrl.num_params();
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for _ in 0..4 {
        let t: f64 = rng.gen_range(0.0..0.05);
        let up: Vec<f64> = (0..p.channels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; n];
        ctrl.backward(&ControlTape::OpenLoop { t }, &up, &mut g, &mut [], &mut [])?;
        let flat = p.flatten();
        for i in 0..n {
            let f = |x: f64| -> Result<f64, OptimizeError> {
                let mut q = flat.clone();
                q[i] = x;
                let c = OpenLoopController {
                    params: OpenLoopParams::unflatten(&q)?,
                };
                let (y, _) = c.forward(t, &[], &[]);
                Ok(y.iter().zip(&up).map(|(a, b)| a * b).sum())
            };
            fd.push(central(f, flat[i], 1e-6 * (1.0 + flat[i].abs()))?);
            adj.push(g[i]);
        }
    }
    push(out, "open_loop params (isolated)".into(), &adj, &fd, tol);
    Ok(())
}

/// MLP vector-Jacobian product on its own, for sampled weights and all inputs.
fn check_policy(
    p: &MlpParams,
    samples: usize,
    rng: &mut ChaCha8Rng,
    tol: f64,
    out: &mut Vec<CheckResult>,
) -> Result<(), OptimizeError> {
    let x: Vec<f64> = (0..p.inputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..p.outputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, tape) = policy_forward(p, &x)?;
    let (gp, gx) = policy_vjp(p, &tape, &up)?;
    let f_of = |params: &MlpParams, input: &[f64]| -> Result<f64, OptimizeError> {
        let (y, _) = policy_forward(params, input)?;
        Ok(y.iter().zip(&up).map(|(a, b)| a * b).sum())
    };
    let idx = sample(rng, p.num_params(), samples.min(p.num_params())).into_vec();
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for &i in &idx {
        let f = |v: f64| {
            let mut flat = p.flat().to_vec();
            flat[i] = v;
            f_of(&MlpParams::from_flat(p.sizes(), flat)?, &x)
        };
        fd.push(central(f, p.flat()[i], 1e-6)?);
        adj.push(gp[i]);
    }
    push(out, "mlp weights (isolated)".into(), &adj, &fd, tol);
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for i in 0..x.len() {
        let f = |v: f64| {
            let mut xi = x.clone();
            xi[i] = v;
            f_of(p, &xi)
        };
        fd.push(central(f, x[i], 1e-6)?);
        adj.push(gx[i]);
    }
    push(out, "mlp inputs (isolated)".into(), &adj, &fd, tol);
    Ok(())
}

/// Barycenter adjoint through the softmax, for a random upstream field.
fn check_barycenter(
    task: &Task,
    logits: &[f64],
    rng: &mut ChaCha8Rng,
    tol: f64,
    out: &mut Vec<CheckResult>,
) -> Result<(), OptimizeError> {
    let n = task.problem.grid().num_cells();
    let up: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |l: &[f64]| -> Result<f64, OptimizeError> {
        let w = crate::optimize::softmax_simplex(l)?;
        let (d, _) = barycenter(&task.problem, &w)?;
        Ok(d.values().iter().zip(&up).map(|(a, b)| a * b).sum())
    };
    let w = crate::optimize::softmax_simplex(logits)?;
    let (_, tape) = barycenter(&task.problem, &w)?;
    let ab = barycenter_vjp(&tape, &up, false)?;
    let adj = crate::optimize::softmax_vjp(w.as_slice(), &ab);
    let mut fd = Vec::new();
    for i in 0..logits.len() {
        let g = |v: f64| {
            let mut l = logits.to_vec();
            l[i] = v;
            f(&l)
        };
        fd.push(central(g, logits[i], 1e-5)?);
    }
    push(out, "barycenter logits".into(), &adj, &fd, tol);
    Ok(())
}

fn scene_with_modulus(
    base: &Scene,
    task: &Task,
    actuators: &[crate::actuator::ActuatorGaussian],
    modulus: Vec<f64>,
) -> Result<Scene, OptimizeError> {
    let regions = actuators
        .iter()
        .map(|a| actuator_region(a, base.shape()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene::from_parts(base.shape().clone(), modulus, &regions, &task.scene)?)
}

/// Simulator adjoint for one loss: per-cell modulus, shape logits, and
/// the parameters of the given controller.
fn check_loss(
    task: &Task,
    design: &DesignParams,
    label: &str,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<CheckResult>,
) -> Result<(), OptimizeError> {
    let corrupt = if opts.corrupt_adjoint { 1.1 } else { 1.0 };
    let tol = opts.tol_full;
    let loss_name = loss_label(&task.loss);

    // Per-cell modulus, holding the shape fixed.
    let r = task.realize(&design.alpha_logits)?;
    let grid_e = stiffness_field(&r.density, task.scene.e0)?;
    let ctrl = task.controller(&r.scene, &design.controller)?;
    let traj = rollout(&r.scene, ctrl.as_ref(), None, &task.rollout)?;
    let ctx = LossContext::from_scene(&r.scene);
    let (_, up) = evaluate(&task.loss, &traj, &ctx);
    let g = backward(&r.scene, ctrl.as_ref(), &traj, &up)?;
    let e_bar = r.scene.to_grid_cells(&g.modulus);
    let mesh_cells = r.scene.mesh().cells().to_vec();
    let (inside, outside): (Vec<usize>, Vec<usize>) = mesh_cells.iter().partition(|&&c| r.scene.shape().is_inside(c));
    let mut cells = Vec::new();
    for set in [&inside, &outside] {
        let k = (opts.samples / 2).max(1).min(set.len());
        cells.extend(sample(rng, set.len(), k).into_iter().map(|i| set[i]));
    }
    let loss_at = |e: Vec<f64>| -> Result<f64, OptimizeError> {
        let s = scene_with_modulus(&r.scene, task, &r.actuators, e)?;
        let c = task.controller(&s, &design.controller)?;
        let t = rollout(&s, c.as_ref(), None, &task.rollout)?;
        Ok(evaluate(&task.loss, &t, &LossContext::from_scene(&s)).0.total)
    };
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for &c in &cells {
        let f = |v: f64| {
            let mut e = grid_e.clone();
            e[c] = v;
            loss_at(e)
        };
        fd.push(central(f, grid_e[c], 1e-3 * grid_e[c])?);
        adj.push(corrupt * e_bar[c]);
    }
    push(out, format!("{loss_name}: modulus per cell ({label})"), &adj, &fd, tol);

    // Shape logits through the whole pipeline. A perturbation that moves a
    // cell across the half-peak level set makes the loss discontinuous, so
    // the step is kept small and the mask checked.
    let ev = task.evaluate(design, true, true)?;
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for i in 0..design.num_geometry() {
        let f = |v: f64| -> Result<f64, OptimizeError> {
            let mut d = design.clone();
            d.alpha_logits[i] = v;
            let rr = task.realize(&d.alpha_logits)?;
            if rr.scene.shape() != r.scene.shape() {
                return Err(OptimizeError::Shape(format!(
                    "logit {i} perturbation changes the body mask; use a design away from a level-set crossing"
                )));
            }
            Ok(task.evaluate(&d, false, false)?.loss)
        };
        fd.push(central(f, design.alpha_logits[i], 1e-4)?);
        adj.push(corrupt * ev.grad_geometry[i]);
    }
    push(out, format!("{loss_name}: shape logits ({label})"), &adj, &fd, tol);

    // Controller parameters (all of them for open loop, a sample for MLP).
    let flat = design.controller.flatten();
    let (idx, what, delta): (Vec<usize>, &str, f64) = match &design.controller {
        ControllerParams::OpenLoop(_) => ((0..flat.len()).collect(), "open_loop params", 1e-6),
        ControllerParams::Mlp(_) => (
            sample(rng, flat.len(), opts.samples.min(flat.len())).into_vec(),
            "mlp weights",
            1e-5,
        ),
    };
    let mut adj = Vec::new();
    let mut fd = Vec::new();
    for &i in &idx {
        let f = |v: f64| -> Result<f64, OptimizeError> {
            let mut p = flat.clone();
            p[i] = v;
            let d = DesignParams {
                alpha_logits: design.alpha_logits.clone(),
                controller: design.controller.with_values(&p)?,
            };
            Ok(task.evaluate(&d, false, false)?.loss)
        };
        fd.push(central(f, flat[i], delta * (1.0 + flat[i].abs()))?);
        adj.push(corrupt * ev.grad_control[i]);
    }
    push(out, format!("{loss_name}: {what} ({label})"), &adj, &fd, tol);
    Ok(())
}

/// Runs every suite: controller derivatives in isolation, the barycenter
/// adjoint, and for each loss the full simulator adjoint under both an
/// open-loop and a closed-loop controller.
pub fn run_gradcheck(
    task: &Task,
    design: &DesignParams,
    opts: &GradcheckOptions,
) -> Result<Vec<CheckResult>, OptimizeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let open = match &design.controller {
        ControllerParams::OpenLoop(p) => p.clone(),
        ControllerParams::Mlp(_) => {
            return Err(OptimizeError::InvalidParameter(
                "gradcheck expects an open-loop design".into(),
            ))
        }
    };
    check_open_loop(&open, &mut rng, opts.tol_isolated, &mut out)?;

    let r = task.realize(&design.alpha_logits)?;
    let sensors = *r.scene.sensors();
    let sizes = MlpParams::standard_sizes(sensors.input_len(), r.scene.num_channels());
    let mlp = MlpParams::random(&sizes, opts.seed.wrapping_add(1));
    check_policy(&mlp, opts.samples, &mut rng, opts.tol_isolated, &mut out)?;
    check_barycenter(task, &design.alpha_logits, &mut rng, opts.tol_full, &mut out)?;

    let closed = DesignParams {
        alpha_logits: design.alpha_logits.clone(),
        controller: ControllerParams::Mlp(mlp),
    };
    for loss in &opts.losses {
        let mut t = task.clone();
        t.loss = *loss;
        check_loss(&t, design, "open loop", opts, &mut rng, &mut out)?;
        check_loss(&t, &closed, "closed loop", opts, &mut rng, &mut out)?;
    }
    Ok(out)
}
