//! CSV and OBJ export of trajectories.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::rollout::Trajectory;
use super::scene::Scene;

const AXES: [&str; 3] = ["x", "y", "z"];

/// One row per (step, node): positions then velocities.
pub fn trajectory_csv(traj: &Trajectory, dim: usize) -> String {
    let mut s = String::from("step,node");
    for a in &AXES[..dim] {
        let _ = write!(s, ",{a}");
    }
    for a in &AXES[..dim] {
        let _ = write!(s, ",v{a}");
    }
    s.push('\n');
    for (i, st) in traj.states.iter().enumerate() {
        for n in 0..st.q.len() / dim {
            let _ = write!(s, "{i},{n}");
            for k in 0..dim {
                let _ = write!(s, ",{:e}", st.q[n * dim + k]);
            }
            for k in 0..dim {
                let _ = write!(s, ",{:e}", st.v[n * dim + k]);
            }
            s.push('\n');
        }
    }
    s
}

/// Per-step facet-averaged forces, spine velocity and activations.
pub fn hydro_log_csv(traj: &Trajectory, dim: usize) -> String {
    let mut s = String::from("step");
    for name in ["thrust", "drag", "spine_v"] {
        for a in &AXES[..dim] {
            let _ = write!(s, ",{name}_{a}");
        }
    }
    let channels = traj.activations.first().map_or(0, Vec::len);
    for c in 0..channels {
        let _ = write!(s, ",act{c}");
    }
    s.push('\n');
    for (i, e) in traj.hydro_log.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in [e.thrust, e.drag, e.spine_velocity] {
            for x in &v[..dim] {
                let _ = write!(s, ",{x:e}");
            }
        }
        for a in &traj.activations[i] {
            let _ = write!(s, ",{a:e}");
        }
        s.push('\n');
    }
    s
}

/// The deformed body surface: line segments in 2D, quads in 3D.
pub fn surface_obj(scene: &Scene, q: &[f64]) -> String {
    let d = scene.dim();
    let surf = scene.surface();
    let nc = surf.corners_per_facet();
    let mut used: Vec<usize> = surf.facets.iter().flat_map(|f| f[..nc].to_vec()).collect();
    used.sort_unstable();
    used.dedup();
    let mut s = String::new();
    for &n in &used {
        let z = if d == 3 { q[n * 3 + 2] } else { 0.0 };
        let _ = writeln!(s, "v {} {} {}", q[n * d], q[n * d + 1], z);
    }
    let idx = |n: usize| used.binary_search(&n).expect("used node") + 1;
    for f in &surf.facets {
        if d == 2 {
            let _ = writeln!(s, "l {} {}", idx(f[0]), idx(f[1]));
        } else {
            let _ = writeln!(s, "f {} {} {} {}", idx(f[0]), idx(f[1]), idx(f[2]), idx(f[3]));
        }
    }
    s
}

/// Writes `frame_XXXXX.obj` for every `every`-th state (and the last one).
pub fn write_obj_sequence(dir: &Path, scene: &Scene, traj: &Trajectory, every: usize) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let every = every.max(1);
    let last = traj.states.len() - 1;
    let mut out = Vec::new();
    for (i, st) in traj.states.iter().enumerate() {
        if i % every == 0 || i == last {
            let p = dir.join(format!("frame_{i:05}.obj"));
            fs::write(&p, surface_obj(scene, &st.q))?;
            out.push(p);
        }
    }
    Ok(out)
}
