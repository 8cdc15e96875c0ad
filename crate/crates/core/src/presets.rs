//! Built-in 2D eel designs used by the shipped configurations and tests.
//!
//! All eels are slender bodies centered on the x axis, head toward +x,
//! driven by one caudal actuator on the rear part of the body. The
//! "vertical" eel is deep (flag-like) in the undulation plane and the
//! "horizontal" one is shallow.

use std::f64::consts::PI;

use crate::actuator::{half_density_radius, ActuatorCategory, ActuatorGaussian};
use crate::control::OpenLoopParams;
use crate::grid::{DensityField, GridSpec};
use crate::sim::SceneConfig;

/// Body half-length.
pub const EEL_HALF_LENGTH: f64 = 0.12;

#[derive(Debug, Clone)]
pub struct Preset {
    pub names: Vec<&'static str>,
    pub bases: Vec<DensityField>,
    pub actuators: Vec<Vec<ActuatorGaussian>>,
}

/// Grid `32 x 12` at 1 cm for `coarsen = 1`, `16 x 6` at 2 cm for 2.
pub fn eel_grid(coarsen: usize) -> GridSpec {
    let c = coarsen.max(1);
    GridSpec::new(&[32 / c, 12 / c], 0.01 * c as f64).expect("valid grid")
}

fn body(g: &GridSpec, half_height: impl Fn(f64) -> f64) -> DensityField {
    let v = (0..g.num_cells())
        .map(|c| {
            let x = g.cell_center(c);
            (x[0].abs() < EEL_HALF_LENGTH && x[1].abs() < half_height(x[0])) as u8 as f64
        })
        .collect();
    DensityField::from_unnormalized(g.clone(), v).expect("nonempty body")
}

fn caudal(half_height: f64) -> ActuatorGaussian {
    let r = half_density_radius();
    // Half-density box spanning x in [-0.12, 0.02] and the body depth.
    let sx = (0.07f64 / r).powi(2);
    let sy = (half_height / r).powi(2);
    ActuatorGaussian::from_euler(ActuatorCategory::CaudalFin, vec![-0.05, 0.0], &[0.0], vec![sx, sy])
        .expect("valid actuator")
        .canonical()
}

/// The two-base task: horizontal (shallow) then vertical (deep) eel.
pub fn eel_2d(coarsen: usize) -> Preset {
    let g = eel_grid(coarsen);
    Preset {
        names: vec!["horizontal_eel", "vertical_eel"],
        bases: vec![body(&g, |_| 0.02), body(&g, |_| 0.04)],
        actuators: vec![vec![caudal(0.02)], vec![caudal(0.04)]],
    }
}

/// [`eel_2d`] plus a shallow eel with a deep tail fin.
pub fn eel_trio_2d(coarsen: usize) -> Preset {
    let mut p = eel_2d(coarsen);
    let g = eel_grid(coarsen);
    p.names.push("finned_eel");
    p.bases.push(body(&g, |x| if x < -0.06 { 0.05 } else { 0.02 }));
    p.actuators.push(vec![caudal(0.03)]);
    p
}

/// Material and actuation strength tuned for the eel's size.
pub fn eel_scene_config() -> SceneConfig {
    SceneConfig {
        e0: 1e6,
        sigma_max: 2e5,
        ..Default::default()
    }
}

/// Amplitude 0.5, frequency `pi / (6 h)`, phase 0 on every channel.
pub fn eel_open_loop(channels: usize, h: f64) -> OpenLoopParams {
    OpenLoopParams::uniform(channels, 0.5, PI / (6.0 * h), 0.0)
}
