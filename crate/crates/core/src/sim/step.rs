//! Backward-Euler step solved by Newton's method.
//!
//! Unknown `q'`, with `v' = (q' - q) / h`:
//! `g(q') = M (q' - q - h v) - h^2 f_int(q') + h D (q' - q) - h^2 f_ext = 0`,
//! Jacobian `A = M + h^2 K(q') + h D`. External (hydrodynamic) forces are
//! evaluated at the start of the step and held fixed.

use super::banded::{BandedMatrix, Ldlt};
use super::scene::Scene;
use super::{SimError, SimState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub h: f64,
    /// Residual tolerance relative to the residual of the initial guess.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            h: 3.3e-3,
            newton_tol: 1e-8,
            max_newton: 20,
        }
    }
}

/// Solver diagnostics for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub newton_iters: usize,
    pub residual: f64,
    pub converged: bool,
    /// Mesh cells with non-positive volume change at the end of the step.
    pub inverted: Vec<usize>,
}

const ROUNDOFF_FLOOR: f64 = 1e-13;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Scene {
    /// `A = M + h^2 K(q) + h D`, factored.
    pub fn system_matrix(&self, q: &[f64], act: &[f64], h: f64) -> Result<Ldlt, SimError> {
        let mesh = self.mesh();
        let mut k = BandedMatrix::zeros(mesh.num_dofs(), mesh.bandwidth());
        self.element_model().forces(q, act, Some(&mut k));
        let mut a = BandedMatrix::zeros(mesh.num_dofs(), mesh.bandwidth());
        a.add_diagonal(&mesh.dof_masses(), 1.0);
        a.add_scaled(&k, h * h);
        a.add_scaled(self.damping_matrix(), h);
        a.factor()
    }

    fn residual(
        &self,
        state: &SimState,
        q_new: &[f64],
        f_int: &[f64],
        f_ext: &[f64],
        h: f64,
        masses: &[f64],
    ) -> Vec<f64> {
        let dq: Vec<f64> = q_new.iter().zip(&state.q).map(|(a, b)| a - b).collect();
        let damp = self.damping_matrix().mul_vec(&dq);
        (0..q_new.len())
            .map(|i| masses[i] * (dq[i] - h * state.v[i]) - h * h * f_int[i] + h * damp[i] - h * h * f_ext[i])
            .collect()
    }

    /// One implicit step under activations `act` and fixed external forces.
    /// A step whose Newton loop does not reach tolerance is still returned,
    /// with `converged == false` in its diagnostics.
    pub fn step(
        &self,
        state: &SimState,
        act: &[f64],
        f_ext: &[f64],
        cfg: &StepConfig,
    ) -> Result<(SimState, StepInfo), SimError> {
        let h = cfg.h;
        if !(h > 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "time step must be positive, got {h}"
            )));
        }
        let mesh = self.mesh();
        let n = mesh.num_dofs();
        let masses = mesh.dof_masses();
        let model = self.element_model();

        let mut q: Vec<f64> = (0..n).map(|i| state.q[i] + h * state.v[i]).collect();
        let mut k = BandedMatrix::zeros(n, mesh.bandwidth());
        let mut eval = model.forces(&q, act, Some(&mut k));
        let mut g = self.residual(state, &q, &eval.forces, f_ext, h, &masses);
        let mut res = norm(&g);
        // Relative to the residual of the initial guess, with a floor at the
        // round-off level of the mass-weighted positions.
        let extent = q.iter().fold(0.0f64, |m, x| m.max(x.abs())) + mesh.grid().cell_size();
        let tol = cfg.newton_tol * res + ROUNDOFF_FLOOR * mesh.total_mass() * extent;
        let mut iters = 0;
        while res > tol && iters < cfg.max_newton {
            let mut a = BandedMatrix::zeros(n, mesh.bandwidth());
            a.add_diagonal(&masses, 1.0);
            a.add_scaled(&k, h * h);
            a.add_scaled(self.damping_matrix(), h);
            let dx = a.factor()?.solve(&g);
            // Backtracking on the residual norm.
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = q.iter().zip(&dx).map(|(x, d)| x - alpha * d).collect();
                let mut kt = BandedMatrix::zeros(n, mesh.bandwidth());
                let et = model.forces(&trial, act, Some(&mut kt));
                let gt = self.residual(state, &trial, &et.forces, f_ext, h, &masses);
                let rt = norm(&gt);
                if rt < res || alpha < 1.0 / 64.0 {
                    q = trial;
                    k = kt;
                    eval = et;
                    g = gt;
                    res = rt;
                    break;
                }
                alpha *= 0.5;
            }
            iters += 1;
        }
        let converged = res <= tol;
        if !converged {
            log::warn!("Newton stopped after {iters} iterations with residual {res:e} (tolerance {tol:e})");
        }
        let v: Vec<f64> = q.iter().zip(&state.q).map(|(a, b)| (a - b) / h).collect();
        Ok((
            SimState { q, v, t: state.t + h },
            StepInfo {
                newton_iters: iters,
                residual: res,
                converged,
                inverted: eval.inverted,
            },
        ))
    }
}
