//! Corotated linear elasticity with per-cell modulus, plus contractile
//! muscle fibers, on multilinear elements.
//!
//! Energy density per cell:
//! `mu |F - R|^2 + lambda/2 (tr(R^T F) - d)^2 + sum_f s a sigma_max |F f|`,
//! with `R` the rotation of the polar decomposition of `F`. The elastic
//! part is linear in the modulus `E`.

use nalgebra::Matrix3;

use super::banded::BandedMatrix;
use super::mesh::Mesh;

type Mat<const D: usize> = [[f64; D]; D];

fn zero<const D: usize>() -> Mat<D> {
    [[0.0; D]; D]
}

fn matmul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    let mut c = zero::<D>();
    for i in 0..D {
        for j in 0..D {
            let mut s = 0.0;
            for k in 0..D {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

/// `a^T b`
fn tmul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    let mut c = zero::<D>();
    for i in 0..D {
        for j in 0..D {
            let mut s = 0.0;
            for k in 0..D {
                s += a[k][i] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

fn trace<const D: usize>(a: &Mat<D>) -> f64 {
    (0..D).map(|i| a[i][i]).sum()
}

fn det<const D: usize>(a: &Mat<D>) -> f64 {
    if D == 2 {
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    } else {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }
}

/// Lamé parameters per unit Young's modulus (plane strain in 2D).
#[derive(Debug, Clone, Copy)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

impl Lame {
    pub fn per_unit_modulus(nu: f64) -> Self {
        Self {
            mu: 1.0 / (2.0 * (1.0 + nu)),
            lambda: nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        }
    }
}

/// One contractile fiber acting on one mesh cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleFiber {
    pub cell: usize,
    pub fiber: [f64; 3],
    /// Antagonistic group sign (`+1`, `-1`, or `0` for undriven cells).
    pub sign: f64,
    /// Controller output driving this fiber.
    pub channel: usize,
}

/// Polar decomposition and derived quantities at one quadrature point.
struct Corot<const D: usize> {
    f: Mat<D>,
    r: Mat<D>,
    /// `tr(R^T F) - d`
    c: f64,
    tr_s: f64,
    /// `(tr(S) I - S)^{-1}` in 3D.
    w_inv: Mat<3>,
}

impl<const D: usize> Corot<D> {
    fn new(f: Mat<D>) -> Self {
        let r = polar_rotation(&f);
        let s = tmul(&r, &f);
        let tr_s = trace(&s);
        let mut w_inv = [[0.0; 3]; 3];
        if D == 3 {
            let m = Matrix3::from_fn(|i, j| (if i == j { tr_s } else { 0.0 }) - 0.5 * (s[i][j] + s[j][i]));
            if let Some(inv) = m.try_inverse() {
                for i in 0..3 {
                    for j in 0..3 {
                        w_inv[i][j] = inv[(i, j)];
                    }
                }
            }
        }
        Self {
            f,
            r,
            c: tr_s - D as f64,
            tr_s,
            w_inv,
        }
    }

    fn energy(&self, l: Lame) -> f64 {
        let mut fr = 0.0;
        for i in 0..D {
            for j in 0..D {
                let v = self.f[i][j] - self.r[i][j];
                fr += v * v;
            }
        }
        l.mu * fr + 0.5 * l.lambda * self.c * self.c
    }

    fn stress(&self, l: Lame) -> Mat<D> {
        let mut p = zero::<D>();
        for i in 0..D {
            for j in 0..D {
                p[i][j] = 2.0 * l.mu * (self.f[i][j] - self.r[i][j]) + l.lambda * self.c * self.r[i][j];
            }
        }
        p
    }

    /// `dR = R W` for a perturbation `dF`.
    fn rotation_differential(&self, df: &Mat<D>) -> Mat<D> {
        let m = tmul(&self.r, df);
        let mut w = zero::<D>();
        if D == 2 {
            if self.tr_s.abs() > 1e-300 {
                let om = (m[1][0] - m[0][1]) / self.tr_s;
                w[0][1] = -om;
                w[1][0] = om;
            }
        } else {
            let a = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
            let mut om = [0.0; 3];
            for i in 0..3 {
                om[i] = (0..3).map(|j| self.w_inv[i][j] * a[j]).sum();
            }
            w[0][1] = -om[2];
            w[0][2] = om[1];
            w[1][0] = om[2];
            w[1][2] = -om[0];
            w[2][0] = -om[1];
            w[2][1] = om[0];
        }
        matmul(&self.r, &w)
    }

    fn stress_differential(&self, l: Lame, df: &Mat<D>) -> Mat<D> {
        let rw = self.rotation_differential(df);
        let tr_m: f64 = (0..D)
            .map(|i| (0..D).map(|k| self.r[k][i] * df[k][i]).sum::<f64>())
            .sum();
        let mut dp = zero::<D>();
        for i in 0..D {
            for j in 0..D {
                dp[i][j] =
                    2.0 * l.mu * (df[i][j] - rw[i][j]) + l.lambda * tr_m * self.r[i][j] + l.lambda * self.c * rw[i][j];
            }
        }
        dp
    }
}

fn polar_rotation<const D: usize>(f: &Mat<D>) -> Mat<D> {
    let mut r = zero::<D>();
    if D == 2 {
        let c = f[0][0] + f[1][1];
        let s = f[1][0] - f[0][1];
        let n = c.hypot(s);
        let (c, s) = if n > 0.0 { (c / n, s / n) } else { (1.0, 0.0) };
        r[0][0] = c;
        r[0][1] = -s;
        r[1][0] = s;
        r[1][1] = c;
        return r;
    }
    let m = Matrix3::from_fn(|i, j| f[i][j]);
    let svd = m.svd(true, true);
    let (Some(mut u), Some(vt)) = (svd.u, svd.v_t) else {
        for i in 0..D {
            r[i][i] = 1.0;
        }
        return r;
    };
    let mut rot = u * vt;
    if rot.determinant() < 0.0 {
        let k = svd.singular_values.imin();
        for i in 0..3 {
            u[(i, k)] = -u[(i, k)];
        }
        rot = u * vt;
    }
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = rot[(i, j)];
        }
    }
    r
}

/// Element inputs common to every assembly routine.
pub struct ElementModel<'a> {
    pub mesh: &'a Mesh,
    /// Young's modulus per mesh cell.
    pub modulus: &'a [f64],
    pub lame: Lame,
    pub fibers: &'a [MuscleFiber],
    /// Fibers of each mesh cell, as indices into `fibers`.
    pub fibers_of_cell: &'a [Vec<usize>],
    pub sigma_max: f64,
}

/// Result of an internal-force evaluation.
#[derive(Debug, Clone, Default)]
pub struct ForceEval {
    pub forces: Vec<f64>,
    /// Mesh cells with a non-positive deformation-gradient determinant.
    pub inverted: Vec<usize>,
}

/// What to accumulate per cell during an element sweep.
enum Sweep<'b> {
    /// Forces, optionally the stiffness `-df/dq` into a band matrix.
    Forces(Option<&'b mut BandedMatrix>),
    /// `lambda . f_c` per cell for unit modulus and zero activation.
    CellDots(&'b [f64], &'b mut [f64]),
    /// `lambda . f_k` per channel for unit activation.
    ChannelDots(&'b [f64], &'b mut [f64]),
    Energy(&'b mut f64),
}

impl ElementModel<'_> {
    pub fn forces(&self, q: &[f64], act: &[f64], stiffness: Option<&mut BandedMatrix>) -> ForceEval {
        let mut out = ForceEval {
            forces: vec![0.0; q.len()],
            inverted: Vec::new(),
        };
        self.sweep(q, act, Sweep::Forces(stiffness), &mut out);
        out
    }

    /// `lambda . (df/dE_c)` for every mesh cell.
    pub fn modulus_sensitivity(&self, q: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut dots = vec![0.0; self.mesh.num_cells()];
        let mut out = ForceEval::default();
        self.sweep(q, &[], Sweep::CellDots(lambda, &mut dots), &mut out);
        dots
    }

    /// `lambda . (df/da_k)` for every controller channel.
    pub fn activation_sensitivity(&self, q: &[f64], lambda: &[f64], channels: usize) -> Vec<f64> {
        let mut dots = vec![0.0; channels];
        let mut out = ForceEval::default();
        self.sweep(q, &[], Sweep::ChannelDots(lambda, &mut dots), &mut out);
        dots
    }

    /// Elastic plus muscle potential energy.
    pub fn energy(&self, q: &[f64], act: &[f64]) -> f64 {
        let mut e = 0.0;
        let mut out = ForceEval::default();
        self.sweep(q, act, Sweep::Energy(&mut e), &mut out);
        e
    }

    fn sweep(&self, q: &[f64], act: &[f64], mode: Sweep<'_>, out: &mut ForceEval) {
        match self.mesh.dim() {
            2 => self.sweep_d::<2>(q, act, mode, out),
            _ => self.sweep_d::<3>(q, act, mode, out),
        }
    }

    fn sweep_d<const D: usize>(&self, q: &[f64], act: &[f64], mut mode: Sweep<'_>, out: &mut ForceEval) {
        let mesh = self.mesh;
        let nc = 1usize << D;
        let quad = mesh.quadrature();
        let mut xs = vec![[0.0; D]; nc];
        let mut local = vec![0.0; nc * D];
        let mut local_k = vec![0.0; nc * D * nc * D];
        let want_k = matches!(mode, Sweep::Forces(Some(_)));
        for cell in 0..mesh.num_cells() {
            let nodes = mesh.cell_nodes(cell);
            for (a, &n) in nodes.iter().enumerate() {
                for i in 0..D {
                    xs[a][i] = q[n * D + i];
                }
            }
            let (e_scale, act_scale) = match mode {
                Sweep::Forces(_) | Sweep::Energy(_) => (self.modulus[cell], 1.0),
                Sweep::CellDots(..) => (1.0, 0.0),
                Sweep::ChannelDots(..) => (0.0, 1.0),
            };
            let lame = Lame {
                mu: self.lame.mu * e_scale,
                lambda: self.lame.lambda * e_scale,
            };
            let cell_fibers = &self.fibers_of_cell[cell];
            let channel_mode = matches!(mode, Sweep::ChannelDots(..));
            // In channel mode each fiber is evaluated on its own so its
            // force can be attributed to its channel.
            let groups: Vec<Option<usize>> = if channel_mode {
                cell_fibers.iter().map(|&f| Some(f)).collect()
            } else {
                vec![None]
            };
            for group in groups {
                local.iter_mut().for_each(|v| *v = 0.0);
                if want_k {
                    local_k.iter_mut().for_each(|v| *v = 0.0);
                }
                let mut energy = 0.0;
                let mut inverted = false;
                for qp in quad {
                    let mut f = zero::<D>();
                    for a in 0..nc {
                        for i in 0..D {
                            for j in 0..D {
                                f[i][j] += xs[a][i] * qp.grads[a][j];
                            }
                        }
                    }
                    if det(&f) <= 0.0 {
                        inverted = true;
                    }
                    let corot = Corot::new(f);
                    let mut p = if channel_mode { zero::<D>() } else { corot.stress(lame) };
                    if matches!(mode, Sweep::Energy(_)) {
                        energy += qp.weight * corot.energy(lame);
                    }
                    // Active fibers: (coefficient, fiber, |Ff|, unit Ff).
                    let mut active: Vec<(f64, [f64; D], f64, [f64; D])> = Vec::new();
                    let fiber_ids: Vec<usize> = match group {
                        Some(fid) => vec![fid],
                        None if act_scale != 0.0 => cell_fibers.clone(),
                        None => Vec::new(),
                    };
                    for fid in fiber_ids {
                        let fb = &self.fibers[fid];
                        let a_val = if channel_mode {
                            1.0
                        } else {
                            act.get(fb.channel).copied().unwrap_or(0.0)
                        };
                        let coef = fb.sign * a_val * self.sigma_max;
                        if coef == 0.0 {
                            continue;
                        }
                        let mut dir = [0.0; D];
                        dir.copy_from_slice(&fb.fiber[..D]);
                        let mut ff = [0.0; D];
                        for i in 0..D {
                            ff[i] = (0..D).map(|j| f[i][j] * dir[j]).sum();
                        }
                        let len = ff.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if len <= 0.0 {
                            continue;
                        }
                        let mut u = [0.0; D];
                        for i in 0..D {
                            u[i] = ff[i] / len;
                            for j in 0..D {
                                p[i][j] += coef * u[i] * dir[j];
                            }
                        }
                        energy += qp.weight * coef * len;
                        active.push((coef, dir, len, u));
                    }
                    for a in 0..nc {
                        for i in 0..D {
                            let s: f64 = (0..D).map(|j| p[i][j] * qp.grads[a][j]).sum();
                            local[a * D + i] -= qp.weight * s;
                        }
                    }
                    if want_k {
                        for b in 0..nc {
                            for k in 0..D {
                                let mut df = zero::<D>();
                                for n in 0..D {
                                    df[k][n] = qp.grads[b][n];
                                }
                                let mut dp = corot.stress_differential(lame, &df);
                                for (coef, dir, len, u) in &active {
                                    let mut dff = [0.0; D];
                                    for i in 0..D {
                                        dff[i] = (0..D).map(|j| df[i][j] * dir[j]).sum();
                                    }
                                    let ud: f64 = (0..D).map(|i| u[i] * dff[i]).sum();
                                    for i in 0..D {
                                        let g = coef / len * (dff[i] - u[i] * ud);
                                        for j in 0..D {
                                            dp[i][j] += g * dir[j];
                                        }
                                    }
                                }
                                let col = b * D + k;
                                for a in 0..nc {
                                    for i in 0..D {
                                        let s: f64 = (0..D).map(|j| dp[i][j] * qp.grads[a][j]).sum();
                                        local_k[(a * D + i) * nc * D + col] += qp.weight * s;
                                    }
                                }
                            }
                        }
                    }
                }
                match &mut mode {
                    Sweep::Forces(stiff) => {
                        if inverted {
                            out.inverted.push(cell);
                        }
                        for a in 0..nc {
                            for i in 0..D {
                                out.forces[nodes[a] * D + i] += local[a * D + i];
                            }
                        }
                        if let Some(k) = stiff {
                            for a in 0..nc {
                                for i in 0..D {
                                    let row = nodes[a] * D + i;
                                    for b in 0..nc {
                                        for kk in 0..D {
                                            let col = nodes[b] * D + kk;
                                            if row >= col {
                                                k.add(row, col, local_k[(a * D + i) * nc * D + b * D + kk]);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Sweep::CellDots(lambda, dots) => {
                        let mut s = 0.0;
                        for a in 0..nc {
                            for i in 0..D {
                                s += lambda[nodes[a] * D + i] * local[a * D + i];
                            }
                        }
                        dots[cell] += s;
                    }
                    Sweep::ChannelDots(lambda, dots) => {
                        if let Some(fid) = group {
                            let mut s = 0.0;
                            for a in 0..nc {
                                for i in 0..D {
                                    s += lambda[nodes[a] * D + i] * local[a * D + i];
                                }
                            }
                            let fb = &self.fibers[fid];
                            // local holds the force for activation 1 (sign included).
                            dots[fb.channel] += s;
                        }
                    }
                    Sweep::Energy(e) => **e += energy,
                }
            }
        }
    }
}

/// Rest-configuration stiffness of one element for unit modulus, as a
/// dense `(2^d d) x (2^d d)` row-major matrix.
pub fn unit_rest_stiffness(mesh: &Mesh, lame: Lame) -> Vec<f64> {
    let d = mesh.dim();
    let nc = 1usize << d;
    let n = nc * d;
    // Single-element mesh evaluation at rest via a throwaway model.
    let grid = crate::grid::GridSpec::new(&vec![2; d], mesh.grid().cell_size()).expect("valid grid");
    let one = Mesh::from_cells(&grid, &[0], 1.0);
    let mut k = BandedMatrix::zeros(one.num_dofs(), one.num_dofs());
    let model = ElementModel {
        mesh: &one,
        modulus: &[1.0],
        lame,
        fibers: &[],
        fibers_of_cell: &[vec![]],
        sigma_max: 0.0,
    };
    model.forces(one.rest_positions(), &[], Some(&mut k));
    let nodes = one.cell_nodes(0);
    let mut out = vec![0.0; n * n];
    for a in 0..nc {
        for i in 0..d {
            for b in 0..nc {
                for j in 0..d {
                    out[(a * d + i) * n + b * d + j] = k.get(nodes[a] * d + i, nodes[b] * d + j);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::sim::mesh::Mesh;

    fn single(d: usize, h: f64) -> Mesh {
        let g = GridSpec::new(&vec![2; d], h).unwrap();
        Mesh::from_cells(&g, &[0], 1000.0)
    }

    fn model<'a>(
        mesh: &'a Mesh,
        e: &'a [f64],
        fibers: &'a [MuscleFiber],
        of_cell: &'a [Vec<usize>],
    ) -> ElementModel<'a> {
        ElementModel {
            mesh,
            modulus: e,
            lame: Lame::per_unit_modulus(0.3),
            fibers,
            fibers_of_cell: of_cell,
            sigma_max: 50.0,
        }
    }

    #[test]
    fn rest_has_zero_force() {
        for d in [2, 3] {
            let g = GridSpec::new(&vec![3; d], 0.1).unwrap();
            let mesh = Mesh::full(&g, 1.0);
            let e = vec![1e5; mesh.num_cells()];
            let of_cell = vec![vec![]; mesh.num_cells()];
            let m = model(&mesh, &e, &[], &of_cell);
            let f = m.forces(mesh.rest_positions(), &[], None);
            assert!(f.forces.iter().all(|v| v.abs() < 1e-10));
            assert!(f.inverted.is_empty());
        }
    }

    #[test]
    fn small_stretch_matches_linear_elasticity() {
        // Uniform stretch x -> (1 + delta) x of one free 2D cell. Linear
        // plane-strain theory: P_xx = (lambda + 2 mu) delta, P_yy = lambda delta.
        // Nodal force on node a: -A * P grad N_a integrated = -P_xx * h * (+-1/2)
        // per node along x, etc.
        let h = 0.5;
        let mesh = single(2, h);
        let e = [2.0e3];
        let of_cell = vec![vec![]];
        let m = model(&mesh, &e, &[], &of_cell);
        let delta = 1e-4;
        let mut q = mesh.rest_positions().to_vec();
        for n in 0..mesh.num_nodes() {
            q[n * 2] *= 1.0 + delta;
        }
        let f = m.forces(&q, &[], None).forces;
        let l = Lame::per_unit_modulus(0.3);
        let pxx = (l.lambda + 2.0 * l.mu) * e[0] * delta;
        let pyy = l.lambda * e[0] * delta;
        for n in 0..mesh.num_nodes() {
            let x = mesh.rest_positions()[n * 2];
            let y = mesh.rest_positions()[n * 2 + 1];
            let fx = -x.signum() * pxx * h / 2.0;
            let fy = -y.signum() * pyy * h / 2.0;
            assert!((f[n * 2] - fx).abs() < 0.01 * fx.abs(), "{} vs {fx}", f[n * 2]);
            assert!((f[n * 2 + 1] - fy).abs() < 0.01 * fy.abs(), "{} vs {fy}", f[n * 2 + 1]);
        }
    }

    #[test]
    fn rigid_rotation_has_zero_force() {
        for d in [2usize, 3] {
            let mesh = single(d, 0.3);
            let e = [1e4];
            let of_cell = vec![vec![]];
            let m = model(&mesh, &e, &[], &of_cell);
            let (c, s) = (0.7f64.cos(), 0.7f64.sin());
            let mut q = mesh.rest_positions().to_vec();
            for n in 0..mesh.num_nodes() {
                let (x, y) = (q[n * d], q[n * d + 1]);
                q[n * d] = c * x - s * y;
                q[n * d + 1] = s * x + c * y;
            }
            let f = m.forces(&q, &[], None).forces;
            assert!(f.iter().all(|v| v.abs() < 1e-9), "{f:?}");
        }
    }

    fn check_tangent(d: usize, with_fiber: bool) {
        let g = GridSpec::new(&vec![2; d], 0.25).unwrap();
        let mesh = Mesh::full(&g, 1.0);
        let e: Vec<f64> = (0..mesh.num_cells()).map(|c| 1e3 * (1.0 + c as f64)).collect();
        let mut fibers = Vec::new();
        let mut of_cell = vec![vec![]; mesh.num_cells()];
        if with_fiber {
            let mut dir = [0.0; 3];
            dir[0] = 0.8;
            dir[1] = 0.6;
            fibers.push(MuscleFiber {
                cell: 1,
                fiber: dir,
                sign: -1.0,
                channel: 0,
            });
            of_cell[1].push(0);
        }
        let m = model(&mesh, &e, &fibers, &of_cell);
        let act = [0.7];
        let mut q = mesh.rest_positions().to_vec();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.03 * ((i * 37 % 11) as f64 / 11.0 - 0.5);
        }
        let mut k = BandedMatrix::zeros(mesh.num_dofs(), mesh.bandwidth());
        let f0 = m.forces(&q, &act, Some(&mut k));
        assert!(f0.inverted.is_empty());
        let h = 1e-6;
        for j in 0..mesh.num_dofs() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let fp = m.forces(&qp, &act, None).forces;
            let fm = m.forces(&qm, &act, None).forces;
            for i in 0..mesh.num_dofs() {
                let fd = -(fp[i] - fm[i]) / (2.0 * h);
                let an = k.get(i, j);
                assert!(
                    (fd - an).abs() < 1e-5 * (1.0 + an.abs()),
                    "d{d} K[{i},{j}]: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn tangent_matches_difference_2d() {
        check_tangent(2, true);
    }

    #[test]
    fn tangent_matches_difference_3d() {
        check_tangent(3, true);
    }

    #[test]
    fn forces_are_energy_gradient() {
        let d = 3;
        let mesh = single(d, 0.2);
        let e = [3e3];
        let fibers = vec![MuscleFiber {
            cell: 0,
            fiber: [0.0, 0.6, 0.8],
            sign: 1.0,
            channel: 0,
        }];
        let of_cell = vec![vec![0]];
        let m = model(&mesh, &e, &fibers, &of_cell);
        let mut q = mesh.rest_positions().to_vec();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.02 * ((i * 13 % 7) as f64 / 7.0 - 0.5);
        }
        let f = m.forces(&q, &[0.4], None).forces;
        for j in 0..q.len() {
            let h = 1e-7;
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let fd = -(m.energy(&qp, &[0.4]) - m.energy(&qm, &[0.4])) / (2.0 * h);
            assert!((fd - f[j]).abs() < 1e-5 * (1.0 + f[j].abs()));
        }
    }

    #[test]
    fn antagonistic_activation_is_antisymmetric() {
        let g = GridSpec::new(&[4, 2], 0.25).unwrap();
        let mesh = Mesh::full(&g, 1.0);
        let e = vec![1e3; mesh.num_cells()];
        let mut fibers = Vec::new();
        let mut of_cell = vec![vec![]; mesh.num_cells()];
        for c in 0..mesh.num_cells() {
            let y = g.cell_center(c)[1];
            of_cell[c].push(fibers.len());
            fibers.push(MuscleFiber {
                cell: c,
                fiber: [1.0, 0.0, 0.0],
                sign: y.signum(),
                channel: 0,
            });
        }
        let m = model(&mesh, &e, &fibers, &of_cell);
        let fp = m.forces(mesh.rest_positions(), &[1.0], None).forces;
        let fm = m.forces(mesh.rest_positions(), &[-1.0], None).forces;
        assert!(fp.iter().any(|v| v.abs() > 1.0));
        for (a, b) in fp.iter().zip(&fm) {
            assert!((a + b).abs() < 1e-10);
        }
        // Internal forces never create net momentum.
        let sx: f64 = fp.iter().step_by(2).sum();
        let sy: f64 = fp.iter().skip(1).step_by(2).sum();
        assert!(sx.abs() < 1e-10 && sy.abs() < 1e-10);
    }

    #[test]
    fn sensitivities_match_differences() {
        let g = GridSpec::new(&[3, 2], 0.25).unwrap();
        let mesh = Mesh::full(&g, 1.0);
        let e: Vec<f64> = (0..mesh.num_cells()).map(|c| 1e3 + 200.0 * c as f64).collect();
        let fibers = vec![
            MuscleFiber {
                cell: 0,
                fiber: [1.0, 0.0, 0.0],
                sign: 1.0,
                channel: 0,
            },
            MuscleFiber {
                cell: 4,
                fiber: [0.6, 0.8, 0.0],
                sign: -1.0,
                channel: 1,
            },
            MuscleFiber {
                cell: 4,
                fiber: [1.0, 0.0, 0.0],
                sign: 1.0,
                channel: 0,
            },
        ];
        let mut of_cell = vec![vec![]; mesh.num_cells()];
        of_cell[0].push(0);
        of_cell[4].extend([1, 2]);
        let mut q = mesh.rest_positions().to_vec();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.02 * ((i * 7 % 5) as f64 / 5.0 - 0.5);
        }
        let lambda: Vec<f64> = (0..q.len()).map(|i| (i as f64 * 0.31).cos()).collect();
        let act = [0.3, -0.6];
        let m = model(&mesh, &e, &fibers, &of_cell);
        let de = m.modulus_sensitivity(&q, &lambda);
        let da = m.activation_sensitivity(&q, &lambda, 2);
        let dot = |f: Vec<f64>| f.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
        for c in 0..mesh.num_cells() {
            let mut ep = e.clone();
            let mut em = e.clone();
            ep[c] += 1.0;
            em[c] -= 1.0;
            let fp = model(&mesh, &ep, &fibers, &of_cell).forces(&q, &act, None).forces;
            let fm = model(&mesh, &em, &fibers, &of_cell).forces(&q, &act, None).forces;
            let fd = (dot(fp) - dot(fm)) / 2.0;
            assert!((fd - de[c]).abs() < 1e-8 * (1.0 + fd.abs()));
        }
        for k in 0..2 {
            let mut ap = act;
            let mut am = act;
            ap[k] += 1e-3;
            am[k] -= 1e-3;
            let fd = (dot(m.forces(&q, &ap, None).forces) - dot(m.forces(&q, &am, None).forces)) / 2e-3;
            assert!((fd - da[k]).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn inverted_cells_are_reported() {
        let mesh = single(2, 0.5);
        let e = [1e3];
        let of_cell = vec![vec![]];
        let m = model(&mesh, &e, &[], &of_cell);
        let mut q = mesh.rest_positions().to_vec();
        for n in 0..mesh.num_nodes() {
            q[n * 2] = -q[n * 2];
        }
        assert_eq!(m.forces(&q, &[], None).inverted, vec![0]);
    }

    #[test]
    fn unit_rest_stiffness_is_symmetric_psd_with_rigid_modes() {
        let g = GridSpec::new(&[2, 2], 0.3).unwrap();
        let mesh = Mesh::full(&g, 1.0);
        let k = unit_rest_stiffness(&mesh, Lame::per_unit_modulus(0.45));
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                assert!((k[i * n + j] - k[j * n + i]).abs() < 1e-12);
            }
            // Translations are in the null space.
            let sx: f64 = (0..4).map(|a| k[i * n + a * 2]).sum();
            assert!(sx.abs() < 1e-12);
        }
    }
}
