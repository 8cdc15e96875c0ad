//! Implicit soft-body simulation with analytic hydrodynamics and its adjoint.
//!
//! A [`scene::Scene`] is assembled once per design (mesh, stiffness, muscle
//! fibers, surface, sensors); [`rollout::rollout`] advances it under a
//! controller and [`rollout::backward`] runs the reverse-time adjoint.

pub mod banded;
pub mod elastic;
pub mod export;
pub mod hydro;
pub mod mesh;
pub mod rollout;
pub mod scene;
pub mod step;

use thiserror::Error;

use crate::actuator::ActuatorError;
use crate::control::ControlError;
use crate::grid::GridError;

pub use hydro::{CoefficientTable, HydroParams};
pub use mesh::{build_mesh, Mesh};
pub use rollout::{
    backward, rollout, rollout_partial, HydroLogEntry, RolloutConfig, SimGradients, Trajectory, TrajectoryGrad,
};
pub use scene::{MeshMode, Scene, SceneConfig};
pub use step::{StepConfig, StepInfo};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("singular system matrix at row {row} (pivot {pivot:e})")]
    SingularSystem { row: usize, pivot: f64 },
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },
    #[error("tape does not match trajectory: {0}")]
    TapeMismatch(String),
    #[error("empty spine set: {0}")]
    EmptySpine(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Rayleigh damping `D = mass M + stiffness K_rest(E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub mass: f64,
    pub stiffness: f64,
}

/// Per-cell modulus plus global material constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    /// Young's modulus per grid cell.
    pub modulus: Vec<f64>,
    pub nu: f64,
    pub rho_solid: f64,
    pub damping: Damping,
}

impl Material {
    pub fn new(modulus: Vec<f64>, nu: f64, rho_solid: f64, damping: Damping) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::InvalidParameter(m));
        if let Some(e) = modulus.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return bad(format!("Young's modulus must be positive, got {e}"));
        }
        if !(nu > 0.0 && nu < 0.5) {
            return bad(format!("Poisson ratio must lie in (0, 0.5), got {nu}"));
        }
        if !(rho_solid > 0.0 && rho_solid.is_finite()) {
            return bad(format!("solid density must be positive, got {rho_solid}"));
        }
        if !(damping.mass >= 0.0 && damping.stiffness >= 0.0) {
            return bad("damping coefficients must be nonnegative".into());
        }
        Ok(Self {
            modulus,
            nu,
            rho_solid,
            damping,
        })
    }
}

/// Nodal positions and velocities, `d` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl SimState {
    pub fn at_rest(mesh: &Mesh) -> Self {
        Self {
            q: mesh.rest_positions().to_vec(),
            v: vec![0.0; mesh.num_dofs()],
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }
}
