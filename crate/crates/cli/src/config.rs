//! Experiment configuration: one JSON document, paths relative to it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use aqua_core::actuator::{read_actuator_file, ActuatorGaussian};
use aqua_core::control::{MlpParams, OpenLoopParams, DEFAULT_PERIOD_STEPS};
use aqua_core::grid::{read_voxel_file, DensityField, GridSpec};
use aqua_core::losses::{LossSpec, DEFAULT_GAMMA};
use aqua_core::optimize::{CoOptMode, ControllerParams, DesignParams, GradientScaling, OptimizeConfig, Task};
use aqua_core::sim::{CoefficientTable, Damping, MeshMode, RolloutConfig, Scene, SceneConfig, StepConfig};
use aqua_core::transport::{default_epsilon, BarycenterProblem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    pub cell_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    /// Voxel density file.
    pub shape: PathBuf,
    /// Actuator spec file.
    pub actuators: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// `None` is `(2 cell_size)^2`.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iters: 200,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    OpenLoop {
        #[serde(default = "half")]
        amplitude: f64,
        /// `None` is `pi / (6 h)`.
        #[serde(default)]
        omega: Option<f64>,
        #[serde(default)]
        phase: f64,
    },
    Mlp {
        /// Weight file; random initialization from the seed when absent.
        #[serde(default)]
        weights: Option<PathBuf>,
        #[serde(default = "default_period_steps")]
        period_steps: f64,
        #[serde(default = "yes")]
        use_encoding: bool,
    },
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

fn default_period_steps() -> f64 {
    DEFAULT_PERIOD_STEPS
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::OpenLoop {
            amplitude: 0.5,
            omega: None,
            phase: 0.0,
        }
    }
}

/// A coefficient curve: closed-form default or explicit `(phi, value)` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveConfig {
    Table { table: Vec<[f64; 2]> },
    Drag { c0: f64, c1: f64 },
    Thrust { ct: f64 },
}

impl CurveConfig {
    fn build(&self, what: &str) -> Result<CoefficientTable, CliError> {
        match self {
            Self::Table { table } => CoefficientTable::new(
                table.iter().map(|p| p[0]).collect(),
                table.iter().map(|p| p[1]).collect(),
            )
            .map_err(|e| CliError::Config(format!("{what} table: {e}"))),
            Self::Drag { c0, c1 } => Ok(CoefficientTable::default_drag(*c0, *c1)),
            Self::Thrust { ct } => Ok(CoefficientTable::default_thrust(*ct)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydroSection {
    pub enabled: bool,
    pub rho_fluid: f64,
    pub v_water: [f64; 3],
    pub drag: CurveConfig,
    pub thrust: CurveConfig,
}

impl Default for HydroSection {
    fn default() -> Self {
        Self {
            enabled: true,
            rho_fluid: 1000.0,
            v_water: [0.0; 3],
            drag: CurveConfig::Drag { c0: 0.05, c1: 1.0 },
            thrust: CurveConfig::Thrust { ct: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshModeConfig {
    FullDomain,
    ShapeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub h: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub e0: f64,
    pub nu: f64,
    pub rho_solid: f64,
    pub exterior_mass_ratio: f64,
    pub damping_mass: f64,
    pub damping_stiffness: f64,
    pub sigma_max: f64,
    pub mesh_mode: MeshModeConfig,
    pub hydro: HydroSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        let s = SceneConfig::default();
        let st = StepConfig::default();
        Self {
            h: st.h,
            steps: RolloutConfig::default().steps,
            newton_tol: st.newton_tol,
            max_newton: st.max_newton,
            e0: s.e0,
            nu: s.nu,
            rho_solid: s.rho_solid,
            exterior_mass_ratio: s.exterior_mass_ratio,
            damping_mass: s.damping.mass,
            damping_stiffness: s.damping.stiffness,
            sigma_max: s.sigma_max,
            mesh_mode: MeshModeConfig::FullDomain,
            hydro: HydroSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    #[default]
    Distance,
    PositionKeeping {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        q_target: [f64; 3],
        #[serde(default = "plus_x")]
        d_target: [f64; 3],
    },
    Efficiency,
    Weighted {
        w_s: f64,
    },
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn plus_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl LossConfig {
    pub fn spec(&self) -> LossSpec {
        match *self {
            Self::Distance => LossSpec::Distance,
            Self::PositionKeeping {
                gamma,
                q_target,
                d_target,
            } => LossSpec::PositionKeeping {
                gamma,
                q_target,
                d_target,
            },
            Self::Efficiency => LossSpec::Efficiency,
            Self::Weighted { w_s } => LossSpec::Weighted { w_s },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub lr_geometry: f64,
    pub lr_control: Option<f64>,
    pub mode: CoOptMode,
    pub scaling: GradientScaling,
    pub tol: f64,
    pub window: usize,
    /// Initial shape logits; zeros (uniform weights) when absent.
    pub initial_logits: Option<Vec<f64>>,
    /// Draw the initial design from the seed instead.
    pub random_init: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeConfig::default();
        Self {
            max_iters: o.max_iters,
            lr_geometry: o.lr_geometry,
            lr_control: o.lr_control,
            mode: o.mode,
            scaling: o.scaling,
            tol: o.tol,
            window: o.window,
            initial_logits: None,
            random_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoSection {
    pub weights: Vec<f64>,
}

impl Default for ParetoSection {
    fn default() -> Self {
        Self {
            weights: aqua_core::optimize::default_weight_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub samples: usize,
    pub tol_full: f64,
    pub tol_isolated: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            samples: 8,
            tol_full: 1e-2,
            tol_isolated: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub bases: Vec<BaseConfig>,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub pareto: ParetoSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for b in &mut cfg.bases {
            resolve(&mut b.shape);
            resolve(&mut b.actuators);
        }
        if let ControllerConfig::Mlp { weights: Some(w), .. } = &mut cfg.controller {
            resolve(w);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(2..=3).contains(&self.grid.dims.len()) {
            return bad(format!("grid must be 2D or 3D, got dims {:?}", self.grid.dims));
        }
        if self.bases.is_empty() {
            return bad("at least one base is required".into());
        }
        if !(self.sim.h > 0.0) {
            return bad(format!("sim.h must be positive, got {}", self.sim.h));
        }
        if !(self.sim.nu > 0.0 && self.sim.nu < 0.5) {
            return bad(format!("sim.nu must lie in (0, 0.5), got {}", self.sim.nu));
        }
        for (name, v) in [("sim.e0", self.sim.e0), ("sim.rho_solid", self.sim.rho_solid)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(l) = &self.optimizer.initial_logits {
            if l.len() != self.bases.len() {
                return bad(format!(
                    "optimizer.initial_logits has {} entries for {} bases",
                    l.len(),
                    self.bases.len()
                ));
            }
        }
        if let Some(w) = self.pareto.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return bad(format!("pareto weight {w} outside [0, 1]"));
        }
        let mut ws = self.pareto.weights.clone();
        ws.sort_by(f64::total_cmp);
        if ws.windows(2).any(|p| p[0] == p[1]) {
            return bad("pareto weights must be distinct".into());
        }
        self.loss
            .spec()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (without the output directory)
    /// followed by the contents of every referenced input file.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let mut files: Vec<&Path> = self
            .bases
            .iter()
            .flat_map(|b| [b.shape.as_path(), b.actuators.as_path()])
            .collect();
        if let ControllerConfig::Mlp { weights: Some(w), .. } = &self.controller {
            files.push(w);
        }
        for f in files {
            // Unreadable files surface later with their own error.
            h.update(std::fs::read(f).unwrap_or_default());
        }
        hex::encode(h.finalize())
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(&self.grid.dims, self.grid.cell_size).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn scene_config(&self) -> Result<SceneConfig, CliError> {
        let s = &self.sim;
        Ok(SceneConfig {
            e0: s.e0,
            nu: s.nu,
            rho_solid: s.rho_solid,
            exterior_mass_ratio: s.exterior_mass_ratio,
            damping: Damping {
                mass: s.damping_mass,
                stiffness: s.damping_stiffness,
            },
            sigma_max: s.sigma_max,
            mesh_mode: match s.mesh_mode {
                MeshModeConfig::FullDomain => MeshMode::FullDomain,
                MeshModeConfig::ShapeOnly => MeshMode::ShapeOnly,
            },
            hydro: aqua_core::sim::scene::HydroConfig {
                enabled: s.hydro.enabled,
                rho_fluid: s.hydro.rho_fluid,
                v_water: s.hydro.v_water,
                drag: s.hydro.drag.build("drag")?,
                thrust: s.hydro.thrust.build("thrust")?,
            },
        })
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            steps: self.sim.steps,
            step: StepConfig {
                h: self.sim.h,
                newton_tol: self.sim.newton_tol,
                max_newton: self.sim.max_newton,
            },
        }
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        let o = &self.optimizer;
        OptimizeConfig {
            max_iters: o.max_iters,
            lr_geometry: o.lr_geometry,
            lr_control: o.lr_control,
            mode: o.mode,
            scaling: o.scaling,
            tol: o.tol,
            window: o.window,
        }
    }
}

/// Bases, their actuators, and everything derived from the config.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    pub bases: Vec<DensityField>,
    pub actuators: Vec<Vec<ActuatorGaussian>>,
    pub task: Task,
}

/// Shifts a field by whole cells so its center of mass is as close to the
/// origin as the grid allows; returns the shift in cells.
pub fn align_center_of_mass(field: &DensityField) -> Result<(DensityField, Vec<i64>), CliError> {
    let g = field.grid();
    let d = g.dim();
    let c = field.centroid();
    let shift: Vec<i64> = (0..d).map(|k| -(c[k] / g.cell_size()).round() as i64).collect();
    if shift.iter().all(|&s| s == 0) {
        return Ok((field.clone(), shift));
    }
    let mut out = vec![0.0; g.num_cells()];
    let dims = g.dims();
    for (cell, &v) in field.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let ijk = g.cell_coords(cell);
        let mut to = [0usize; 3];
        for k in 0..d {
            let t = ijk[k] as i64 + shift[k];
            if t < 0 || t >= dims[k] as i64 {
                return Err(CliError::Config(format!(
                    "centering the base by {shift:?} cells would push mass off the grid"
                )));
            }
            to[k] = t as usize;
        }
        out[g.cell_index(&to[..d])] = v;
    }
    let f = DensityField::new(g.clone(), out).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((f, shift))
}

impl Loaded {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        let grid = config.grid()?;
        let d = grid.dim();
        let mut bases = Vec::new();
        let mut actuators = Vec::new();
        for (i, b) in config.bases.iter().enumerate() {
            let (g, values) = read_voxel_file(&b.shape).map_err(|e| CliError::Config(format!("base {i}: {e}")))?;
            if g != grid {
                return Err(CliError::Config(format!(
                    "base {i} ({}) is on a {:?} grid with cell size {}, config expects {:?} with {}",
                    b.shape.display(),
                    g.dims(),
                    g.cell_size(),
                    grid.dims(),
                    grid.cell_size()
                )));
            }
            let field = DensityField::from_unnormalized(grid.clone(), values)
                .map_err(|e| CliError::Config(format!("base {i} ({}): {e}", b.shape.display())))?;
            let (field, shift) = align_center_of_mass(&field)?;
            let mut acts = read_actuator_file(&b.actuators, d).map_err(|e| CliError::Config(e.to_string()))?;
            for a in &mut acts {
                for k in 0..d {
                    a.mu[k] += shift[k] as f64 * grid.cell_size();
                }
            }
            if shift.iter().any(|&s| s != 0) {
                log::info!("base {i} shifted by {shift:?} cells to center its mass");
            }
            bases.push(field);
            actuators.push(acts);
        }
        let eps = config.transport.epsilon.unwrap_or_else(|| default_epsilon(&grid));
        let problem = BarycenterProblem::new(&bases, eps, config.transport.max_iters, config.transport.tol)
            .map_err(|e| CliError::Config(format!("transport: {e}")))?;
        let (period_steps, use_encoding) = match &config.controller {
            ControllerConfig::Mlp {
                period_steps,
                use_encoding,
                ..
            } => (*period_steps, *use_encoding),
            ControllerConfig::OpenLoop { .. } => (DEFAULT_PERIOD_STEPS, true),
        };
        let task = Task {
            problem,
            base_actuators: actuators.clone(),
            scene: config.scene_config()?,
            rollout: config.rollout_config(),
            loss: config.loss.spec(),
            encoding_period: period_steps * config.sim.h,
            use_encoding,
        };
        Ok(Self {
            config,
            grid,
            bases,
            actuators,
            task,
        })
    }

    /// The configured controller, sized for `scene`.
    pub fn controller_params(&self, scene: &Scene, seed: u64) -> Result<ControllerParams, CliError> {
        let channels = scene.num_channels();
        Ok(match &self.config.controller {
            ControllerConfig::OpenLoop {
                amplitude,
                omega,
                phase,
            } => ControllerParams::OpenLoop(OpenLoopParams::uniform(
                channels,
                *amplitude,
                omega.unwrap_or(PI / (6.0 * self.config.sim.h)),
                *phase,
            )),
            ControllerConfig::Mlp { weights, .. } => {
                let sizes = MlpParams::standard_sizes(scene.sensors().input_len(), channels);
                match weights {
                    Some(path) => ControllerParams::Mlp(read_mlp(path, &sizes)?),
                    None => ControllerParams::Mlp(MlpParams::random(&sizes, seed)),
                }
            }
        })
    }

    /// The configured initial design; shape logits default to zeros.
    pub fn initial_design(&self, seed: u64) -> Result<DesignParams, CliError> {
        let m = self.bases.len();
        let logits = self
            .config
            .optimizer
            .initial_logits
            .clone()
            .unwrap_or_else(|| vec![0.0; m]);
        let r = self.task.realize(&logits).map_err(CliError::numeric)?;
        let design = DesignParams {
            alpha_logits: logits,
            controller: self.controller_params(&r.scene, seed)?,
        };
        Ok(if self.config.optimizer.random_init {
            design.randomized(seed, 1.0)
        } else {
            design
        })
    }
}

/// Reads MLP weights and checks the layer sizes against the design.
pub fn read_mlp(path: &Path, sizes: &[usize]) -> Result<MlpParams, CliError> {
    let p = MlpParams::read(path).map_err(|e| CliError::Config(e.to_string()))?;
    if p.sizes() != sizes {
        return Err(CliError::Config(format!(
            "MLP in {} has layer sizes {:?}, this design needs {:?}",
            path.display(),
            p.sizes(),
            sizes
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aqua_core::actuator::format_actuators;
    use aqua_core::grid::format_voxels;
    use aqua_core::presets::eel_2d;

    fn write_bases(dir: &Path, shift: usize) -> ExperimentConfig {
        let p = eel_2d(2);
        let g = p.bases[0].grid().clone();
        let mut bases = Vec::new();
        for (i, b) in p.bases.iter().enumerate() {
            // Roll the body `shift` cells toward +x.
            let mut v = vec![0.0; g.num_cells()];
            for c in 0..g.num_cells() {
                if b.values()[c] > 0.0 {
                    let ij = g.cell_coords(c);
                    v[g.cell_index(&[ij[0] + shift, ij[1]])] = 1.0;
                }
            }
            let shape = dir.join(format!("b{i}.vox"));
            let acts = dir.join(format!("b{i}.act"));
            std::fs::write(&shape, format_voxels(&g, &v)).unwrap();
            let mut a = p.actuators[i].clone();
            a[0].mu[0] += shift as f64 * g.cell_size();
            std::fs::write(&acts, format_actuators(&a)).unwrap();
            bases.push(BaseConfig { shape, actuators: acts });
        }
        ExperimentConfig {
            grid: GridConfig {
                dims: g.dims().to_vec(),
                cell_size: g.cell_size(),
            },
            bases,
            transport: TransportConfig::default(),
            controller: ControllerConfig::default(),
            sim: SimConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerSection::default(),
            pareto: ParetoSection::default(),
            gradcheck: GradcheckSection::default(),
            seed: 7,
            output_dir: dir.join("out"),
        }
    }

    #[test]
    fn off_center_bases_are_recentered_with_their_actuators() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_bases(dir.path(), 2);
        let loaded = Loaded::new(cfg).unwrap();
        let reference = eel_2d(2);
        for (i, b) in loaded.bases.iter().enumerate() {
            assert!(b.centroid()[0].abs() < 1e-12, "{:?}", b.centroid());
            assert!(b.l1_distance(&reference.bases[i]) < 1e-12);
            assert!((loaded.actuators[i][0].mu[0] - reference.actuators[i][0].mu[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_bases_are_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = Loaded::new(write_bases(dir.path(), 0)).unwrap();
        assert_eq!(loaded.actuators[0][0].mu, eel_2d(2).actuators[0][0].mu);
    }

    #[test]
    fn hash_ignores_output_dir_but_not_settings_or_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_bases(dir.path(), 0);
        let h = cfg.hash();
        let mut other = cfg.clone();
        other.output_dir = PathBuf::from("elsewhere");
        assert_eq!(other.hash(), h);
        other.seed += 1;
        assert_ne!(other.hash(), h);
        std::fs::write(&cfg.bases[1].actuators, "caudal_fin -0.04 0 0 0.003 0.001\n").unwrap();
        assert_ne!(cfg.hash(), h);
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let text = r#"{"grid": {"dims": [16, 6], "cell_size": 0.02},
            "bases": [{"shape": "a.vox", "actuators": "a.act"}],
            "loss": {"kind": "weighted", "w_s": 0.3},
            "optimizer": {"mode": {"kind": "alternating", "period": 5}, "scaling": "balanced"}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.loss.spec(), LossSpec::Weighted { w_s: 0.3 });
        assert_eq!(cfg.optimizer.mode, CoOptMode::Alternating { period: 5 });
        assert_eq!(cfg.sim, SimConfig::default());
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.scene_config().unwrap(), SceneConfig::default());
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let bad = r#"{"grid": {"dims": [16, 6], "cell_size": 0.02}, "bases": [], "sedd": 1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = write_bases(dir.path(), 0);
        cfg.pareto.weights = vec![0.0, 1.5];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        cfg.pareto.weights = vec![0.5, 0.5];
        assert!(cfg.validate().is_err());
        cfg.pareto.weights = vec![0.5];
        cfg.optimizer.initial_logits = Some(vec![0.0; 3]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_grid_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = write_bases(dir.path(), 0);
        cfg.grid.dims = vec![32, 12];
        let err = Loaded::new(cfg).err().unwrap();
        assert!(err.to_string().contains("grid"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_actuator_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = write_bases(dir.path(), 0);
        cfg.bases[0].actuators = dir.path().join("nope.act");
        let err = Loaded::new(cfg).err().unwrap();
        assert!(err.to_string().contains("nope.act"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
