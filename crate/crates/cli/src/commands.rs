//! The five subcommands. Each writes into its output directory and
//! returns a short report for stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aqua_core::actuator::{actuator_region, format_actuators};
use aqua_core::control::MlpParams;
use aqua_core::gradcheck::{run_gradcheck, GradcheckOptions};
use aqua_core::grid::{write_mask_file, write_voxel_file};
use aqua_core::losses::{self, LossContext};
use aqua_core::optimize::{
    history_csv, pareto_sweep, ControllerParams, DesignParams, Optimizer, OptimizerState, StopReason,
};
use aqua_core::sim::export::{hydro_log_csv, surface_obj, trajectory_csv, write_obj_sequence};
use aqua_core::sim::{rollout_partial, Trajectory};
use aqua_core::transport::WeightVector;
use serde::{Deserialize, Serialize};

use crate::config::{read_mlp, ControllerConfig, ExperimentConfig, Loaded};
use crate::error::CliError;

/// Largest grid side and step count `gradcheck` accepts.
pub const GRADCHECK_MAX_SIDE: usize = 16;
pub const GRADCHECK_MAX_CELLS: usize = 16 * 16;
pub const GRADCHECK_MAX_STEPS: usize = 10;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(format!("cannot write {}", path.display())))
}

/// Write-then-rename so a crash never leaves a torn file.
fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(CliError::io(format!("cannot move {} into place", tmp.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Creates `dir` and records the resolved config and the seed in it.
pub fn prepare_output(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    write(&dir.join("config.resolved.json"), to_json(cfg))?;
    write(&dir.join("seed.txt"), format!("{}\n", cfg.seed))
}

/// Parses `a,b,c`.
pub fn parse_alpha(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("--alpha: '{t}' is not a number")))
        })
        .collect()
}

fn weights(alpha: Option<Vec<f64>>, m: usize) -> Result<WeightVector, CliError> {
    let a = alpha.unwrap_or_else(|| vec![1.0 / m as f64; m]);
    if a.len() != m {
        return Err(CliError::Config(format!(
            "--alpha has {} entries for {m} bases",
            a.len()
        )));
    }
    WeightVector::new(a).map_err(|e| CliError::Config(format!("--alpha: {e}")))
}

pub fn interpolate(cfg: ExperimentConfig, alpha: Option<Vec<f64>>) -> Result<String, CliError> {
    let loaded = Loaded::new(cfg)?;
    let w = weights(alpha, loaded.bases.len())?;
    let out = loaded.config.output_dir.clone();
    prepare_output(&out, &loaded.config)?;
    let r = loaded.task.realize_weights(&w).map_err(CliError::numeric)?;
    let io = |e: aqua_core::grid::GridError| CliError::Numeric(e.to_string());
    write_voxel_file(&out.join("density.vox"), &loaded.grid, r.density.values()).map_err(io)?;
    let shape = r.scene.shape();
    write_mask_file(&out.join("mask.vox"), shape).map_err(io)?;
    write(
        &out.join("surface.obj"),
        surface_obj(&r.scene, r.scene.mesh().rest_positions()),
    )?;
    write(&out.join("actuators.txt"), format_actuators(&r.actuators))?;
    let mut regions = String::from("actuator,category,cell,sign\n");
    for (i, a) in r.actuators.iter().enumerate() {
        let reg = actuator_region(a, shape).map_err(CliError::numeric)?;
        for (c, s) in reg.cells.iter().zip(&reg.signs) {
            let _ = writeln!(regions, "{i},{},{c},{s}", reg.category.name());
        }
    }
    write(&out.join("regions.csv"), regions)?;
    let summary = serde_json::json!({
        "alpha": r.alpha,
        "mask_cells": shape.count(),
        "barycenter_iterations": r.tape.iterations(),
        "barycenter_converged": r.tape.converged(),
    });
    write(&out.join("summary.json"), to_json(&summary))?;
    Ok(format!(
        "interpolated alpha {:?}: {} cells inside, written to {}",
        r.alpha,
        shape.count(),
        out.display()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimSummary {
    alpha: Vec<f64>,
    steps_requested: usize,
    steps_completed: usize,
    loss: Option<f64>,
    terms: Vec<(String, f64)>,
    /// Center-node displacement over body length.
    displacement: f64,
    forward_travel: f64,
    body_length: f64,
    error: Option<String>,
}

/// Options of `simulate` beyond the config.
#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub alpha: Option<Vec<f64>>,
    /// A `design.json` written by `optimize`.
    pub design: Option<PathBuf>,
    /// MLP weight file, overriding the configured controller.
    pub controller: Option<PathBuf>,
    pub frame_every: usize,
}

pub fn simulate(cfg: ExperimentConfig, args: &SimulateArgs) -> Result<String, CliError> {
    let loaded = Loaded::new(cfg)?;
    let task = &loaded.task;
    let seed = loaded.config.seed;
    let design: Option<DesignParams> = match &args.design {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read design {}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Config(format!("design {}: {e}", p.display())))?)
        }
        None => None,
    };
    if design.is_some() && args.alpha.is_some() {
        return Err(CliError::Config("--alpha and --design are mutually exclusive".into()));
    }
    let r = match &design {
        Some(d) => task.realize(&d.alpha_logits),
        None => task.realize_weights(&weights(args.alpha.clone(), loaded.bases.len())?),
    }
    .map_err(|e| match e {
        aqua_core::optimize::OptimizeError::Shape(m) => CliError::Config(m),
        e => CliError::numeric(e),
    })?;
    let params = match (&args.controller, design) {
        (Some(p), _) => {
            let sizes = MlpParams::standard_sizes(r.scene.sensors().input_len(), r.scene.num_channels());
            ControllerParams::Mlp(read_mlp(p, &sizes)?)
        }
        (None, Some(d)) => d.controller,
        (None, None) => loaded.controller_params(&r.scene, seed)?,
    };
    let ctrl = task
        .controller(&r.scene, &params)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let out = loaded.config.output_dir.clone();
    prepare_output(&out, &loaded.config)?;
    let (traj, failure) =
        rollout_partial(&r.scene, ctrl.as_ref(), None, &task.rollout).map_err(|e| CliError::Config(e.to_string()))?;

    // Artifacts are written before any failure is reported.
    let d = r.scene.dim();
    write(&out.join("trajectory.csv"), trajectory_csv(&traj, d))?;
    write(&out.join("hydro_log.csv"), hydro_log_csv(&traj, d))?;
    write_obj_sequence(&out.join("frames"), &r.scene, &traj, args.frame_every)
        .map_err(CliError::io(format!("cannot write frames under {}", out.display())))?;
    let ctx = LossContext::from_scene(&r.scene);
    let (displacement, forward) = center_displacement(&traj, &ctx);
    let (loss, terms) = if traj.steps() > 0 {
        let (v, _) = losses::evaluate(&task.loss, &traj, &ctx);
        (
            Some(v.total),
            v.terms.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        )
    } else {
        (None, Vec::new())
    };
    let summary = SimSummary {
        alpha: r.alpha.clone(),
        steps_requested: task.rollout.steps,
        steps_completed: traj.steps(),
        loss,
        terms,
        displacement,
        forward_travel: forward,
        body_length: ctx.body_length,
        error: failure.as_ref().map(|e| e.to_string()),
    };
    write(&out.join("summary.json"), to_json(&summary))?;
    if let Some(e) = failure {
        return Err(CliError::Numeric(format!(
            "simulation failed after {} of {} steps: {e} (partial artifacts in {})",
            traj.steps(),
            task.rollout.steps,
            out.display()
        )));
    }
    Ok(format!(
        "simulated {} steps: loss {}, forward travel {:.6e} m ({:.3e} body lengths), written to {}",
        traj.steps(),
        loss.map_or("n/a".into(), |l| format!("{l:.6e}")),
        forward,
        displacement,
        out.display()
    ))
}

/// (|displacement| / body length, forward x travel) of the center node.
fn center_displacement(traj: &Trajectory, ctx: &LossContext) -> (f64, f64) {
    let d = ctx.dim;
    let a = &traj.states[0].q[ctx.center * d..ctx.center * d + d];
    let b = &traj.final_state().q[ctx.center * d..ctx.center * d + d];
    let n = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
    (n / ctx.body_length, b[0] - a[0])
}

/// Rejects configs over the gradcheck size cap.
pub fn check_gradcheck_size(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dims = &cfg.grid.dims;
    let cells: usize = dims.iter().product();
    if dims.iter().any(|&n| n > GRADCHECK_MAX_SIDE) || cells > GRADCHECK_MAX_CELLS {
        return Err(CliError::Config(format!(
            "gradcheck is limited to grids of at most {GRADCHECK_MAX_SIDE} cells per side and {GRADCHECK_MAX_CELLS} cells, got {dims:?}"
        )));
    }
    if cfg.sim.steps > GRADCHECK_MAX_STEPS {
        return Err(CliError::Config(format!(
            "gradcheck is limited to {GRADCHECK_MAX_STEPS} steps, got {}",
            cfg.sim.steps
        )));
    }
    Ok(())
}

pub fn gradcheck(mut cfg: ExperimentConfig, corrupt_adjoint: bool) -> Result<String, CliError> {
    check_gradcheck_size(&cfg)?;
    // The closed-loop checks draw their own MLP; the design carries the
    // open-loop controller.
    if matches!(cfg.controller, ControllerConfig::Mlp { .. }) {
        log::info!("gradcheck uses the default open-loop controller as its base design");
        cfg.controller = ControllerConfig::default();
    }
    let loaded = Loaded::new(cfg)?;
    let out = loaded.config.output_dir.clone();
    prepare_output(&out, &loaded.config)?;
    let design = loaded.initial_design(loaded.config.seed)?;
    let g = &loaded.config.gradcheck;
    let opts = GradcheckOptions {
        tol_full: g.tol_full,
        tol_isolated: g.tol_isolated,
        samples: g.samples,
        seed: loaded.config.seed,
        corrupt_adjoint,
        ..Default::default()
    };
    let results = run_gradcheck(&loaded.task, &design, &opts).map_err(CliError::numeric)?;
    let mut report = String::new();
    let mut csv = String::from("check,max_rel_error,tolerance,components,passed\n");
    for r in &results {
        let _ = writeln!(
            report,
            "{} {:<55} {:.3e} (tolerance {:.0e}, {} components)",
            if r.passed() { "ok  " } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.components
        );
        let _ = writeln!(
            csv,
            "\"{}\",{:e},{:e},{},{}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.components,
            r.passed()
        );
    }
    write(&out.join("gradcheck.csv"), csv)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.3e} > {:.0e})", r.name, r.max_rel_error, r.tolerance))
        .collect();
    if !failed.is_empty() {
        print!("{report}");
        return Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            failed.join("; ")
        )));
    }
    let _ = write!(report, "all {} checks passed", results.len());
    Ok(report)
}

/// What `checkpoint.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: OptimizerState,
}

fn write_run(dir: &Path, state: &OptimizerState) -> Result<(), CliError> {
    write_atomic(&dir.join("history.csv"), history_csv(&state.history))?;
    write_atomic(&dir.join("design.json"), to_json(&state.design))
}

/// Options of `optimize` beyond the config.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimizeArgs {
    pub resume: bool,
    /// Test hook: stop as if interrupted once this iteration is checkpointed.
    pub stop_after: Option<usize>,
}

pub fn optimize(cfg: ExperimentConfig, args: OptimizeArgs) -> Result<String, CliError> {
    let loaded = Loaded::new(cfg)?;
    let hash = loaded.config.hash();
    let out = loaded.config.output_dir.clone();
    let ckpt_path = out.join("checkpoint.json");
    let opt_cfg = loaded.config.optimize_config();
    let mut opt = if args.resume {
        let text = fs::read_to_string(&ckpt_path)
            .map_err(|e| CliError::Config(format!("cannot resume: {}: {e}", ckpt_path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot resume: {}: {e}", ckpt_path.display())))?;
        if ck.config_hash != hash {
            return Err(CliError::Config(format!(
                "cannot resume: checkpoint was written for config {}, this config hashes to {hash}",
                ck.config_hash
            )));
        }
        log::info!("resuming at iteration {}", ck.state.iteration());
        Optimizer::resume(&loaded.task, opt_cfg, ck.state)
    } else {
        let initial = loaded.initial_design(loaded.config.seed)?;
        Optimizer::new(&loaded.task, opt_cfg, initial).map_err(|e| CliError::Config(e.to_string()))?
    };
    prepare_output(&out, &loaded.config)?;
    let save = |st: &OptimizerState| -> Result<(), CliError> {
        write_run(&out, st)?;
        write_atomic(
            &ckpt_path,
            serde_json::to_string(&Checkpoint {
                config_hash: hash.clone(),
                state: st.clone(),
            })
            .expect("serializable"),
        )
    };
    save(opt.state())?;
    while !opt.is_done() {
        if args.stop_after.is_some_and(|k| opt.state().iteration() >= k) {
            return Ok(format!(
                "stopped at iteration {}; resume with --resume",
                opt.state().iteration()
            ));
        }
        opt.step();
        let st = opt.state();
        log::info!(
            "iteration {}: loss {:e}",
            st.iteration(),
            st.history.last().map_or(f64::NAN, |r| r.loss)
        );
        save(st)?;
    }
    let st = opt.into_state();
    let last = st.history.last();
    match &st.stop {
        StopReason::Failed(m) => Err(CliError::Numeric(format!(
            "optimization failed after iteration {}: {m} (history kept in {})",
            st.iteration(),
            out.display()
        ))),
        reason => Ok(format!(
            "{:?} after {} iterations: loss {:.6e}, alpha {:?}, written to {}",
            reason,
            st.iteration(),
            last.map_or(f64::NAN, |r| r.loss),
            last.map_or(&[][..], |r| &r.alpha[..]),
            out.display()
        )),
    }
}

/// Directory name of the run with speed weight `w`.
pub fn run_dir_name(w: f64) -> String {
    format!("w_s_{w}")
}

pub fn pareto(cfg: ExperimentConfig, workers: Option<usize>) -> Result<String, CliError> {
    let loaded = Loaded::new(cfg)?;
    let out = loaded.config.output_dir.clone();
    prepare_output(&out, &loaded.config)?;
    let initial = loaded.initial_design(loaded.config.seed)?;
    let weights = loaded.config.pareto.weights.clone();
    if weights.is_empty() {
        return Err(CliError::Config("pareto.weights is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
    let opt_cfg = loaded.config.optimize_config();
    let (gamut, runs) = pool
        .install(|| pareto_sweep(&loaded.task, &opt_cfg, &initial, &weights))
        .map_err(CliError::numeric)?;
    let mut failed = Vec::new();
    for (w, st) in &runs {
        let dir = out.join(run_dir_name(*w));
        let mut c = loaded.config.clone();
        c.loss = crate::config::LossConfig::Weighted { w_s: *w };
        c.output_dir = dir.clone();
        prepare_output(&dir, &c)?;
        write_run(&dir, st)?;
        if let StopReason::Failed(m) = &st.stop {
            failed.push(format!("w_s = {w}: {m}"));
        }
    }
    write(&out.join("gamut.csv"), gamut.to_csv())?;
    if !failed.is_empty() {
        return Err(CliError::Numeric(format!("pareto runs failed: {}", failed.join("; "))));
    }
    Ok(format!(
        "{} runs, {} gamut points, {} on the front, written to {}",
        runs.len(),
        gamut.points.len(),
        gamut.front.len(),
        out.display()
    ))
}
