//! End-to-end checks of the rollout and its adjoint on small scenes.

use aqua_core::actuator::{ActuatorCategory, ActuatorRegion};
use aqua_core::control::{ControlError, ControlTape, Controller, OpenLoopController, OpenLoopParams};
use aqua_core::gradcheck::{relative_error, run_gradcheck, GradcheckOptions};
use aqua_core::grid::{GridSpec, ShapeMask};
use aqua_core::losses::{evaluate, loss_distance, LossContext, LossSpec};
use aqua_core::optimize::{ControllerParams, DesignParams, Task};
use aqua_core::presets::{eel_2d, eel_open_loop, eel_scene_config};
use aqua_core::sim::{backward, rollout, RolloutConfig, Scene, SceneConfig, SimError, StepConfig, TrajectoryGrad};
use aqua_core::transport::{default_epsilon, BarycenterProblem};

/// Activations read from a table, one row per step; the table is the
/// parameter vector, so its gradient is the activation gradient.
struct Schedule {
    h: f64,
    channels: usize,
    table: Vec<f64>,
}

impl Controller for Schedule {
    fn num_outputs(&self) -> usize {
        self.channels
    }
    fn num_params(&self) -> usize {
        self.table.len()
    }
    fn params(&self) -> Vec<f64> {
        self.table.clone()
    }
    fn forward(&self, t: f64, _q: &[f64], _v: &[f64]) -> (Vec<f64>, ControlTape) {
        let i = (t / self.h).round() as usize;
        (
            self.table[i * self.channels..(i + 1) * self.channels].to_vec(),
            ControlTape::OpenLoop { t },
        )
    }
    fn backward(
        &self,
        tape: &ControlTape,
        up: &[f64],
        g: &mut [f64],
        _q: &mut [f64],
        _v: &mut [f64],
    ) -> Result<(), ControlError> {
        let ControlTape::OpenLoop { t } = *tape else {
            unreachable!()
        };
        let i = (t / self.h).round() as usize;
        for k in 0..self.channels {
            g[i * self.channels + k] += up[k];
        }
        Ok(())
    }
}

/// A 4 x 4 block with one caudal actuator split across y = 0.
fn block_scene() -> (Scene, Vec<f64>, Vec<ActuatorRegion>, SceneConfig) {
    let g = GridSpec::new(&[4, 4], 0.05).unwrap();
    let shape = ShapeMask::from_fn(g.clone(), |_| true);
    let e: Vec<f64> = (0..16).map(|c| 2e5 * (1.0 + 0.1 * c as f64)).collect();
    let cells: Vec<usize> = (0..16).filter(|&c| g.cell_center(c)[0] < 0.0).collect();
    let signs = cells.iter().map(|&c| g.cell_center(c)[1].signum()).collect();
    let regions = vec![ActuatorRegion {
        category: ActuatorCategory::CaudalFin,
        cells,
        fiber: [1.0, 0.0, 0.0],
        signs,
    }];
    let cfg = SceneConfig {
        e0: 2e5,
        sigma_max: 5e4,
        ..Default::default()
    };
    let s = Scene::from_parts(shape, e.clone(), &regions, &cfg).unwrap();
    (s, e, regions, cfg)
}

fn tight(steps: usize) -> RolloutConfig {
    RolloutConfig {
        steps,
        step: StepConfig {
            newton_tol: 1e-12,
            ..Default::default()
        },
    }
}

#[test]
fn zero_steps_give_initial_state_only() {
    let (s, ..) = block_scene();
    let c = OpenLoopController {
        params: OpenLoopParams::uniform(1, 0.5, 10.0, 0.0),
    };
    let t = rollout(
        &s,
        &c,
        None,
        &RolloutConfig {
            steps: 0,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(t.states.len(), 1);
    assert!(t.activations.is_empty() && t.hydro_log.is_empty());
    assert_eq!(t.states[0].t, 0.0);
}

#[test]
fn zero_controller_stays_at_rest() {
    let (s, ..) = block_scene();
    let c = OpenLoopController {
        params: OpenLoopParams::uniform(1, 0.0, 10.0, 0.0),
    };
    let t = rollout(
        &s,
        &c,
        None,
        &RolloutConfig {
            steps: 20,
            ..Default::default()
        },
    )
    .unwrap();
    let rest = s.mesh().rest_positions();
    for (i, st) in t.states.iter().enumerate() {
        let drift = st.q.iter().zip(rest).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-9 * i as f64 + 1e-15, "step {i}: {drift}");
        assert!((st.t - i as f64 * 3.3e-3).abs() < 1e-15);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (s, ..) = block_scene();
    let c = OpenLoopController {
        params: OpenLoopParams::uniform(1, 0.5, 60.0, 0.0),
    };
    let t = rollout(&s, &c, None, &tight(5)).unwrap();
    let g = backward(&s, &c, &t, &TrajectoryGrad::zeros(&t)).unwrap();
    assert!(g
        .modulus
        .iter()
        .chain(&g.controller)
        .chain(&g.q0)
        .chain(&g.v0)
        .all(|&x| x == 0.0));
    assert!(g.activations.iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn mismatched_tape_is_rejected() {
    let (s, ..) = block_scene();
    let c = OpenLoopController {
        params: OpenLoopParams::uniform(1, 0.5, 60.0, 0.0),
    };
    let mut t = rollout(&s, &c, None, &tight(3)).unwrap();
    let up = TrajectoryGrad::zeros(&t);
    let two = OpenLoopController {
        params: OpenLoopParams::uniform(2, 0.5, 60.0, 0.0),
    };
    assert!(matches!(backward(&s, &two, &t, &up), Err(SimError::TapeMismatch(_))));
    t.activations.pop();
    assert!(matches!(backward(&s, &c, &t, &up), Err(SimError::TapeMismatch(_))));
}

#[test]
fn modulus_gradient_matches_finite_differences() {
    let (s, e, regions, cfg) = block_scene();
    let c = OpenLoopController {
        params: OpenLoopParams::uniform(1, 0.8, 150.0, 0.3),
    };
    let rc = tight(10);
    let spec = LossSpec::position_keeping_default();
    let t = rollout(&s, &c, None, &rc).unwrap();
    let ctx = LossContext::from_scene(&s);
    let (_, up) = evaluate(&spec, &t, &ctx);
    let g = backward(&s, &c, &t, &up).unwrap();
    let adj = s.to_grid_cells(&g.modulus);
    let loss = |e: Vec<f64>| {
        let sc = Scene::from_parts(s.shape().clone(), e, &regions, &cfg).unwrap();
        let tr = rollout(&sc, &c, None, &rc).unwrap();
        evaluate(&spec, &tr, &LossContext::from_scene(&sc)).0.total
    };
    let fd: Vec<f64> = (0..16)
        .map(|k| {
            let d = 1e-3 * cfg.e0;
            let (mut p, mut m) = (e.clone(), e.clone());
            p[k] += d;
            m[k] -= d;
            (loss(p) - loss(m)) / (2.0 * d)
        })
        .collect();
    let err = relative_error(&adj, &fd);
    assert!(err < 1e-2, "relative error {err}");
}

#[test]
fn activation_gradient_matches_finite_differences() {
    let (s, ..) = block_scene();
    let steps = 10;
    let h = 3.3e-3;
    let table: Vec<f64> = (0..steps).map(|i| 0.8 * (i as f64 * 0.7).sin()).collect();
    let rc = tight(steps);
    let loss = |table: Vec<f64>| {
        let c = Schedule { h, channels: 1, table };
        let tr = rollout(&s, &c, None, &rc).unwrap();
        loss_distance(&tr, &LossContext::from_scene(&s)).0
    };
    let c = Schedule {
        h,
        channels: 1,
        table: table.clone(),
    };
    let t = rollout(&s, &c, None, &rc).unwrap();
    let (_, up) = loss_distance(&t, &LossContext::from_scene(&s));
    let g = backward(&s, &c, &t, &up).unwrap();
    let fd: Vec<f64> = (0..steps)
        .map(|i| {
            let (mut p, mut m) = (table.clone(), table.clone());
            p[i] += 1e-4;
            m[i] -= 1e-4;
            (loss(p) - loss(m)) / 2e-4
        })
        .collect();
    let per_step: Vec<f64> = g.activations.iter().map(|a| a[0]).collect();
    assert_eq!(per_step, g.controller);
    let err = relative_error(&per_step, &fd);
    assert!(err < 1e-3, "relative error {err}");
}

fn eel_task(steps: usize, coarsen: usize) -> Task {
    let p = eel_2d(coarsen);
    let eps = default_epsilon(p.bases[0].grid());
    let rollout = RolloutConfig {
        steps,
        ..Default::default()
    };
    Task {
        problem: BarycenterProblem::new(&p.bases, eps, 100, 0.0).unwrap(),
        base_actuators: p.actuators,
        scene: eel_scene_config(),
        rollout,
        loss: LossSpec::Distance,
        encoding_period: 25.0 * rollout.step.h,
        use_encoding: true,
    }
}

#[test]
fn sinusoid_eel_travels_forward() {
    let task = eel_task(200, 1);
    let r = task.realize(&[0.0, 0.0]).unwrap();
    let c = OpenLoopController {
        params: eel_open_loop(1, task.rollout.step.h),
    };
    let t = rollout(&r.scene, &c, None, &task.rollout).unwrap();
    let ctx = LossContext::from_scene(&r.scene);
    let mean_x = |q: &[f64]| ctx.spine.iter().map(|&j| q[2 * j]).sum::<f64>() / ctx.spine.len() as f64;
    assert!(mean_x(&t.final_state().q) > mean_x(&t.states[0].q));
    assert!(t.diagnostics.iter().all(|d| d.converged));
}

#[test]
fn full_gradcheck_on_coarse_eel() {
    let task = eel_task(10, 2);
    let design = DesignParams {
        alpha_logits: vec![0.0, 0.3],
        controller: ControllerParams::OpenLoop(eel_open_loop(1, task.rollout.step.h)),
    };
    let report = run_gradcheck(&task, &design, &GradcheckOptions::default()).unwrap();
    for r in &report {
        assert!(r.passed(), "{}: {:.3e} > {:.0e}", r.name, r.max_rel_error, r.tolerance);
    }
    let corrupt = GradcheckOptions {
        corrupt_adjoint: true,
        losses: vec![LossSpec::Distance],
        ..Default::default()
    };
    let report = run_gradcheck(&task, &design, &corrupt).unwrap();
    assert!(report.iter().any(|r| !r.passed()));
}
