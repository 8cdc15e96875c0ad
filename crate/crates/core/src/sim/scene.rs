//! Everything a rollout needs that depends on the design but not on time.

use crate::actuator::{actuator_region, ActuatorCategory, ActuatorGaussian, ActuatorRegion};
use crate::control::SensorNodes;
use crate::grid::{extract_shape, extract_surface, stiffness_field, DensityField, ShapeMask};
use crate::losses::spine_set;

use super::banded::BandedMatrix;
use super::elastic::{unit_rest_stiffness, ElementModel, Lame, MuscleFiber};
use super::hydro::{CoefficientTable, HydroParams, HydroSurface};
use super::mesh::Mesh;
use super::{Damping, Material, SimError};

/// Which cells carry elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshMode {
    /// Every grid cell; cells outside the body get the stiffness floor.
    FullDomain,
    /// Only the half-peak body cells.
    ShapeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydroConfig {
    pub enabled: bool,
    pub rho_fluid: f64,
    pub v_water: [f64; 3],
    pub drag: CoefficientTable,
    pub thrust: CoefficientTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Peak Young's modulus.
    pub e0: f64,
    pub nu: f64,
    pub rho_solid: f64,
    /// Mass density of cells outside the body relative to `rho_solid`.
    pub exterior_mass_ratio: f64,
    pub damping: Damping,
    /// Peak active fiber stress.
    pub sigma_max: f64,
    pub mesh_mode: MeshMode,
    pub hydro: HydroConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            e0: 1e5,
            nu: 0.45,
            rho_solid: 1000.0,
            exterior_mass_ratio: 1.0,
            damping: Damping {
                mass: 0.0,
                stiffness: 1e-3,
            },
            sigma_max: 1e4,
            mesh_mode: MeshMode::FullDomain,
            hydro: HydroConfig {
                enabled: true,
                rho_fluid: 1000.0,
                v_water: [0.0; 3],
                drag: CoefficientTable::default_drag(0.05, 1.0),
                thrust: CoefficientTable::default_thrust(1.0),
            },
        }
    }
}

/// A simulation-ready design.
#[derive(Debug, Clone)]
pub struct Scene {
    mesh: Mesh,
    material: Material,
    /// Modulus per mesh cell.
    modulus: Vec<f64>,
    lame: Lame,
    sigma_max: f64,
    fibers: Vec<MuscleFiber>,
    fibers_of_cell: Vec<Vec<usize>>,
    channels: Vec<ActuatorCategory>,
    surface: HydroSurface,
    hydro: Option<HydroParams>,
    spine: Vec<usize>,
    sensors: SensorNodes,
    damping_matrix: BandedMatrix,
    unit_k: Vec<f64>,
    shape: ShapeMask,
    body_length: f64,
}

impl Scene {
    /// Builds a scene from a density field and its (interpolated) actuators,
    /// one controller channel per actuator in the given order.
    pub fn build(density: &DensityField, actuators: &[ActuatorGaussian], cfg: &SceneConfig) -> Result<Self, SimError> {
        let shape = extract_shape(density)?;
        let modulus = stiffness_field(density, cfg.e0)?;
        let regions = actuators
            .iter()
            .map(|a| actuator_region(a, &shape))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(shape, modulus, &regions, cfg)
    }

    /// Builds a scene from an explicit body mask, per-grid-cell modulus and
    /// actuator regions.
    pub fn from_parts(
        shape: ShapeMask,
        grid_modulus: Vec<f64>,
        regions: &[ActuatorRegion],
        cfg: &SceneConfig,
    ) -> Result<Self, SimError> {
        let grid = shape.grid().clone();
        let d = grid.dim();
        if grid_modulus.len() != grid.num_cells() {
            return Err(SimError::InvalidParameter(format!(
                "modulus has {} entries for {} cells",
                grid_modulus.len(),
                grid.num_cells()
            )));
        }
        if !(cfg.sigma_max >= 0.0) || !(cfg.exterior_mass_ratio > 0.0) {
            return Err(SimError::InvalidParameter(
                "sigma_max must be nonnegative and exterior_mass_ratio positive".into(),
            ));
        }
        if cfg.hydro.enabled && !(cfg.hydro.rho_fluid > 0.0) {
            return Err(SimError::InvalidParameter("fluid density must be positive".into()));
        }
        let material = Material::new(grid_modulus, cfg.nu, cfg.rho_solid, cfg.damping)?;
        let mut mesh = match cfg.mesh_mode {
            MeshMode::FullDomain => Mesh::full(&grid, cfg.rho_solid),
            MeshMode::ShapeOnly => Mesh::from_cells(&grid, &shape.cells().collect::<Vec<_>>(), cfg.rho_solid),
        };
        if cfg.exterior_mass_ratio != 1.0 {
            let rho: Vec<f64> = mesh
                .cells()
                .iter()
                .map(|&c| {
                    if shape.is_inside(c) {
                        cfg.rho_solid
                    } else {
                        cfg.rho_solid * cfg.exterior_mass_ratio
                    }
                })
                .collect();
            mesh.set_cell_densities(&rho);
        }
        let modulus: Vec<f64> = mesh.cells().iter().map(|&c| material.modulus[c]).collect();

        let mut fibers = Vec::new();
        let mut fibers_of_cell = vec![Vec::new(); mesh.num_cells()];
        let mut channels = Vec::new();
        for (channel, r) in regions.iter().enumerate() {
            channels.push(r.category);
            for (&c, &sign) in r.cells.iter().zip(&r.signs) {
                let Some(mc) = mesh.cell_of_grid(c) else {
                    return Err(SimError::InvalidParameter(format!(
                        "actuator cell {c} lies outside the simulated mesh"
                    )));
                };
                fibers_of_cell[mc].push(fibers.len());
                fibers.push(MuscleFiber {
                    cell: mc,
                    fiber: r.fiber,
                    sign,
                    channel,
                });
            }
        }

        let surface = HydroSurface::from_quads(&extract_surface(&shape)?, &mesh)?;
        let spine_grid = spine_set(&shape).map_err(|e| SimError::EmptySpine(e.to_string()))?;
        let spine: Vec<usize> = spine_grid
            .nodes()
            .iter()
            .map(|&g| mesh.node_of_grid(g).expect("body nodes belong to the mesh"))
            .collect();
        let sensors = SensorNodes::from_spine(d, &spine, mesh.rest_positions())?;
        let hydro = cfg.hydro.enabled.then(|| HydroParams {
            rho_fluid: cfg.hydro.rho_fluid,
            v_water: cfg.hydro.v_water,
            drag: cfg.hydro.drag.clone(),
            thrust: cfg.hydro.thrust.clone(),
            head: sensors.head,
            tail: sensors.tail,
        });

        let lame = Lame::per_unit_modulus(cfg.nu);
        let unit_k = unit_rest_stiffness(&mesh, lame);
        let damping_matrix = assemble_damping(&mesh, &modulus, &unit_k, cfg.damping);

        let xs: Vec<f64> = shape.nodes().iter().map(|&n| grid.node_position(n)[0]).collect();
        let body_length = xs.iter().copied().fold(f64::MIN, f64::max) - xs.iter().copied().fold(f64::MAX, f64::min);

        Ok(Self {
            mesh,
            material,
            modulus,
            lame,
            sigma_max: cfg.sigma_max,
            fibers,
            fibers_of_cell,
            channels,
            surface,
            hydro,
            spine,
            sensors,
            damping_matrix,
            unit_k,
            shape,
            body_length,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    /// Young's modulus per mesh cell.
    pub fn modulus(&self) -> &[f64] {
        &self.modulus
    }

    pub fn fibers(&self) -> &[MuscleFiber] {
        &self.fibers
    }

    /// Controller channels, one per actuator.
    pub fn channels(&self) -> &[ActuatorCategory] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn surface(&self) -> &HydroSurface {
        &self.surface
    }

    pub fn hydro(&self) -> Option<&HydroParams> {
        self.hydro.as_ref()
    }

    /// Spine nodes (mesh ids), ascending.
    pub fn spine(&self) -> &[usize] {
        &self.spine
    }

    pub fn sensors(&self) -> &SensorNodes {
        &self.sensors
    }

    pub fn shape(&self) -> &ShapeMask {
        &self.shape
    }

    /// Rest extent of the body along x.
    pub fn body_length(&self) -> f64 {
        self.body_length
    }

    pub fn lame(&self) -> Lame {
        self.lame
    }

    pub fn damping(&self) -> Damping {
        self.material.damping
    }

    pub(crate) fn damping_matrix(&self) -> &BandedMatrix {
        &self.damping_matrix
    }

    /// Rest element stiffness for unit modulus, dense row-major.
    pub(crate) fn unit_stiffness(&self) -> &[f64] {
        &self.unit_k
    }

    pub fn element_model(&self) -> ElementModel<'_> {
        ElementModel {
            mesh: &self.mesh,
            modulus: &self.modulus,
            lame: self.lame,
            fibers: &self.fibers,
            fibers_of_cell: &self.fibers_of_cell,
            sigma_max: self.sigma_max,
        }
    }

    /// Scatters a per-mesh-cell quantity onto the grid (zero elsewhere).
    pub fn to_grid_cells(&self, per_mesh_cell: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.grid().num_cells()];
        for (&g, &v) in self.mesh.cells().iter().zip(per_mesh_cell) {
            out[g] = v;
        }
        out
    }
}

fn assemble_damping(mesh: &Mesh, modulus: &[f64], unit_k: &[f64], damping: Damping) -> BandedMatrix {
    let d = mesh.dim();
    let n = (1usize << d) * d;
    let mut m = BandedMatrix::zeros(mesh.num_dofs(), mesh.bandwidth());
    m.add_diagonal(&mesh.dof_masses(), damping.mass);
    if damping.stiffness != 0.0 {
        for c in 0..mesh.num_cells() {
            let nodes = mesh.cell_nodes(c);
            let s = damping.stiffness * modulus[c];
            for a in 0..n {
                let row = nodes[a / d] * d + a % d;
                for b in 0..n {
                    let col = nodes[b / d] * d + b % d;
                    if row >= col {
                        m.add(row, col, s * unit_k[a * n + b]);
                    }
                }
            }
        }
    }
    m
}
