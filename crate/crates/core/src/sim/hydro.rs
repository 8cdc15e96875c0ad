//! Analytic drag and thrust on the swimmer's surface facets.
//!
//! Per facet with relative water velocity `v_rel`, unit direction `d`,
//! outward area vector `A n` and attack angle `phi = acos(n.d) - pi/2`:
//! drag `1/2 rho A C_d(phi) |v_rel|^2 d` and thrust
//! `-1/2 rho A C_t(phi) |v_lat|^2 n`, where `v_lat` drops the component of
//! `v_rel` along the spine. Each force is shared equally by the corners.

use std::f64::consts::FRAC_PI_2;

use crate::grid::{facet_area_vector, SurfaceQuadSet};

use super::mesh::Mesh;
use super::SimError;

/// Width of the flat end segments of default tables, in radians.
const FLAT_END: f64 = 0.05;
const DEFAULT_TABLE_NODES: usize = 65;

/// Piecewise-linear coefficient curve over `phi` in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    phi: Vec<f64>,
    value: Vec<f64>,
}

impl CoefficientTable {
    pub fn new(phi: Vec<f64>, value: Vec<f64>) -> Result<Self, SimError> {
        let bad = |m: &str| Err(SimError::InvalidParameter(format!("coefficient table: {m}")));
        if phi.len() != value.len() || phi.len() < 2 {
            return bad("need at least two (phi, value) pairs of equal length");
        }
        if phi.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("phi must be strictly increasing");
        }
        if phi[0] > -FRAC_PI_2 + 1e-9 || phi[phi.len() - 1] < FRAC_PI_2 - 1e-9 {
            return bad("table must cover [-pi/2, pi/2]");
        }
        if value.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("values must be finite and nonnegative");
        }
        Ok(Self { phi, value })
    }

    /// Samples `f` on a uniform grid, flat within `FLAT_END` of `+-pi/2`
    /// so the curve has zero slope where `d phi / d cos` is unbounded.
    pub fn sampled(f: impl Fn(f64) -> f64) -> Self {
        let edge = FRAC_PI_2 - FLAT_END;
        let n = DEFAULT_TABLE_NODES;
        let mut phi = vec![-FRAC_PI_2];
        for i in 0..n {
            phi.push(-edge + 2.0 * edge * i as f64 / (n - 1) as f64);
        }
        phi.push(FRAC_PI_2);
        let value = phi.iter().map(|&p| f(p.clamp(-edge, edge)).max(0.0)).collect();
        Self { phi, value }
    }

    /// `c0 + c1 |cos phi|`.
    pub fn default_drag(c0: f64, c1: f64) -> Self {
        Self::sampled(|p| c0 + c1 * p.cos().abs())
    }

    /// `ct max(sin phi, 0)`: only windward facets produce thrust.
    pub fn default_thrust(ct: f64) -> Self {
        Self::sampled(|p| ct * p.sin().max(0.0))
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.phi.iter().copied().zip(self.value.iter().copied())
    }

    /// Value and slope at `phi` (clamped to the table range).
    pub fn eval(&self, phi: f64) -> (f64, f64) {
        let n = self.phi.len();
        if phi <= self.phi[0] {
            return (self.value[0], 0.0);
        }
        if phi >= self.phi[n - 1] {
            return (self.value[n - 1], 0.0);
        }
        let i = self.phi.partition_point(|&p| p <= phi).clamp(1, n - 1) - 1;
        let (p0, p1) = (self.phi[i], self.phi[i + 1]);
        let (v0, v1) = (self.value[i], self.value[i + 1]);
        let slope = (v1 - v0) / (p1 - p0);
        (v0 + slope * (phi - p0), slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydroParams {
    pub rho_fluid: f64,
    pub v_water: [f64; 3],
    pub drag: CoefficientTable,
    pub thrust: CoefficientTable,
    /// Mesh nodes defining the spine direction, from tail to head.
    pub head: usize,
    pub tail: usize,
}

/// Surface facets with corners as mesh node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroSurface {
    pub dim: usize,
    pub facets: Vec<[usize; 4]>,
}

impl HydroSurface {
    pub fn from_quads(surface: &SurfaceQuadSet, mesh: &Mesh) -> Result<Self, SimError> {
        let mut facets = Vec::with_capacity(surface.len());
        for f in &surface.faces {
            let mut ids = [0usize; 4];
            for (k, &g) in f.corners(surface.dim).iter().enumerate() {
                ids[k] = mesh
                    .node_of_grid(g)
                    .ok_or_else(|| SimError::InvalidParameter(format!("surface node {g} is not a mesh node")))?;
            }
            facets.push(ids);
        }
        Ok(Self {
            dim: surface.dim,
            facets,
        })
    }

    pub fn corners_per_facet(&self) -> usize {
        if self.dim == 2 {
            2
        } else {
            4
        }
    }
}

/// Forces on one facet.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FacetForce {
    pub drag: [f64; 3],
    pub thrust: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HydroEval {
    /// Nodal forces, `d` entries per mesh node.
    pub forces: Vec<f64>,
    pub facets: Vec<FacetForce>,
    /// Facet-averaged thrust and drag.
    pub thrust_mean: [f64; 3],
    pub drag_mean: [f64; 3],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn node(x: &[f64], d: usize, n: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[..d].copy_from_slice(&x[n * d..n * d + d]);
    p
}

/// Everything the forward pass computes for one facet.
struct FacetState {
    v_rel: [f64; 3],
    r: f64,
    dir: [f64; 3],
    n_raw: [f64; 3],
    area: f64,
    n: [f64; 3],
    c: f64,
    cd: (f64, f64),
    ct: (f64, f64),
    v_lat: [f64; 3],
    lat2: f64,
}

struct Spine {
    raw_len: f64,
    s: [f64; 3],
}

fn spine(q: &[f64], d: usize, p: &HydroParams) -> Spine {
    let h = node(q, d, p.head);
    let t = node(q, d, p.tail);
    let raw = [h[0] - t[0], h[1] - t[1], h[2] - t[2]];
    let len = norm(&raw);
    let s = if len > 0.0 {
        [raw[0] / len, raw[1] / len, raw[2] / len]
    } else {
        [0.0; 3]
    };
    Spine { raw_len: len, s }
}

fn facet_state(q: &[f64], v: &[f64], d: usize, corners: &[usize], p: &HydroParams, sp: &Spine) -> Option<FacetState> {
    let nc = corners.len() as f64;
    let mut vm = [0.0; 3];
    let mut xs = [[0.0; 3]; 4];
    for (k, &c) in corners.iter().enumerate() {
        let vc = node(v, d, c);
        for i in 0..3 {
            vm[i] += vc[i] / nc;
        }
        xs[k] = node(q, d, c);
    }
    let v_rel = [
        p.v_water[0] - vm[0],
        p.v_water[1] - vm[1],
        if d == 3 { p.v_water[2] - vm[2] } else { 0.0 },
    ];
    let r = norm(&v_rel);
    let n_raw = facet_area_vector(d, &xs[..corners.len()]);
    let area = norm(&n_raw);
    if r == 0.0 || area == 0.0 {
        return None;
    }
    let dir = [v_rel[0] / r, v_rel[1] / r, v_rel[2] / r];
    let n = [n_raw[0] / area, n_raw[1] / area, n_raw[2] / area];
    let c = dot(&n, &dir).clamp(-1.0, 1.0);
    let phi = c.acos() - FRAC_PI_2;
    let cd = p.drag.eval(phi);
    let ct = p.thrust.eval(phi);
    let sv = dot(&sp.s, &v_rel);
    let v_lat = [
        v_rel[0] - sv * sp.s[0],
        v_rel[1] - sv * sp.s[1],
        v_rel[2] - sv * sp.s[2],
    ];
    let lat2 = dot(&v_lat, &v_lat);
    Some(FacetState {
        v_rel,
        r,
        dir,
        n_raw,
        area,
        n,
        c,
        cd,
        ct,
        v_lat,
        lat2,
    })
}

/// Hydrodynamic nodal forces at state `(q, v)`.
pub fn hydro_forces(q: &[f64], v: &[f64], surface: &HydroSurface, p: &HydroParams) -> HydroEval {
    let d = surface.dim;
    let k = 0.5 * p.rho_fluid;
    let sp = spine(q, d, p);
    let nc = surface.corners_per_facet();
    let mut out = HydroEval {
        forces: vec![0.0; q.len()],
        facets: Vec::with_capacity(surface.facets.len()),
        ..Default::default()
    };
    for f in &surface.facets {
        let corners = &f[..nc];
        let Some(st) = facet_state(q, v, d, corners, p, &sp) else {
            out.facets.push(FacetForce::default());
            continue;
        };
        let mut ff = FacetForce::default();
        for i in 0..3 {
            ff.drag[i] = k * st.cd.0 * st.area * st.r * st.v_rel[i];
            ff.thrust[i] = -k * st.ct.0 * st.lat2 * st.n_raw[i];
        }
        for &c in corners {
            for i in 0..d {
                out.forces[c * d + i] += (ff.drag[i] + ff.thrust[i]) / nc as f64;
            }
        }
        out.facets.push(ff);
    }
    let nf = surface.facets.len().max(1) as f64;
    for ff in &out.facets {
        for i in 0..3 {
            out.thrust_mean[i] += ff.thrust[i] / nf;
            out.drag_mean[i] += ff.drag[i] / nf;
        }
    }
    out
}

/// Reverse mode of [`hydro_forces`]: accumulates into `q_bar` and `v_bar`
/// the pullback of upstream gradients on the nodal forces and on the
/// facet-averaged thrust and drag.
#[allow(clippy::too_many_arguments)]
pub fn hydro_vjp(
    q: &[f64],
    v: &[f64],
    surface: &HydroSurface,
    p: &HydroParams,
    forces_bar: &[f64],
    thrust_mean_bar: [f64; 3],
    drag_mean_bar: [f64; 3],
    q_bar: &mut [f64],
    v_bar: &mut [f64],
) {
    let d = surface.dim;
    let k = 0.5 * p.rho_fluid;
    let sp = spine(q, d, p);
    let nc = surface.corners_per_facet();
    let nf = surface.facets.len().max(1) as f64;
    let mut s_bar = [0.0; 3];
    for f in &surface.facets {
        let corners = &f[..nc];
        let Some(st) = facet_state(q, v, d, corners, p, &sp) else {
            continue;
        };
        let mut db = [0.0; 3];
        let mut tb = [0.0; 3];
        for i in 0..3 {
            db[i] = drag_mean_bar[i] / nf;
            tb[i] = thrust_mean_bar[i] / nf;
        }
        for &c in corners {
            for i in 0..d {
                let g = forces_bar[c * d + i] / nc as f64;
                db[i] += g;
                tb[i] += g;
            }
        }
        let dv = dot(&db, &st.v_rel);
        let cd_bar = k * st.area * st.r * dv;
        let area_bar = k * st.cd.0 * st.r * dv;
        let r_bar = k * st.cd.0 * st.area * dv;
        let mut vrel_bar = [0.0; 3];
        for i in 0..3 {
            vrel_bar[i] = k * st.cd.0 * st.area * st.r * db[i];
        }
        let tn = dot(&tb, &st.n_raw);
        let ct_bar = -k * st.lat2 * tn;
        let lat2_bar = -k * st.ct.0 * tn;
        let mut nraw_bar = [0.0; 3];
        for i in 0..3 {
            nraw_bar[i] = -k * st.ct.0 * st.lat2 * tb[i];
        }
        let phi_bar = cd_bar * st.cd.1 + ct_bar * st.ct.1;
        let sin2 = 1.0 - st.c * st.c;
        let c_bar = if sin2 > 1e-300 { -phi_bar / sin2.sqrt() } else { 0.0 };
        let mut n_bar = [0.0; 3];
        let mut dir_bar = [0.0; 3];
        for i in 0..3 {
            n_bar[i] = c_bar * st.dir[i];
            dir_bar[i] = c_bar * st.n[i];
        }
        // lateral speed
        let mut lat_bar = [0.0; 3];
        for i in 0..3 {
            lat_bar[i] = 2.0 * lat2_bar * st.v_lat[i];
        }
        let s_lat = dot(&sp.s, &lat_bar);
        let s_vrel = dot(&sp.s, &st.v_rel);
        for i in 0..3 {
            vrel_bar[i] += lat_bar[i] - s_lat * sp.s[i];
            s_bar[i] -= s_vrel * lat_bar[i] + s_lat * st.v_rel[i];
        }
        // unit normal and area from the area vector
        let nn = dot(&n_bar, &st.n);
        for i in 0..3 {
            nraw_bar[i] += (n_bar[i] - nn * st.n[i]) / st.area;
        }
        for i in 0..3 {
            nraw_bar[i] += area_bar * st.n[i];
        }
        // direction and speed from v_rel
        let dd = dot(&dir_bar, &st.dir);
        for i in 0..3 {
            vrel_bar[i] += (dir_bar[i] - dd * st.dir[i]) / st.r + r_bar * st.dir[i];
        }
        for &c in corners {
            for i in 0..d {
                v_bar[c * d + i] -= vrel_bar[i] / nc as f64;
            }
        }
        // area vector from corner positions
        if d == 2 {
            let e_bar = [-nraw_bar[1], nraw_bar[0]];
            for i in 0..2 {
                q_bar[corners[1] * 2 + i] += e_bar[i];
                q_bar[corners[0] * 2 + i] -= e_bar[i];
            }
        } else {
            let x: Vec<[f64; 3]> = corners.iter().map(|&c| node(q, 3, c)).collect();
            let a = [x[2][0] - x[0][0], x[2][1] - x[0][1], x[2][2] - x[0][2]];
            let b = [x[3][0] - x[1][0], x[3][1] - x[1][1], x[3][2] - x[1][2]];
            let a_bar = cross(&b, &nraw_bar);
            let b_bar = cross(&nraw_bar, &a);
            for i in 0..3 {
                q_bar[corners[2] * 3 + i] += 0.5 * a_bar[i];
                q_bar[corners[0] * 3 + i] -= 0.5 * a_bar[i];
                q_bar[corners[3] * 3 + i] += 0.5 * b_bar[i];
                q_bar[corners[1] * 3 + i] -= 0.5 * b_bar[i];
            }
        }
    }
    if sp.raw_len > 0.0 {
        let ss = dot(&s_bar, &sp.s);
        for i in 0..d {
            let g = (s_bar[i] - ss * sp.s[i]) / sp.raw_len;
            q_bar[p.head * d + i] += g;
            q_bar[p.tail * d + i] -= g;
        }
    }
}
