//! Muscle actuators as clipped Gaussians: per-category mean, rotation and
//! principal variances, their interpolation across base designs, and the
//! grid cells each one drives.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Rotation3, Vector3};
use thiserror::Error;

use crate::grid::{GridSpec, ShapeMask};

/// Mahalanobis radius of the half-density ellipsoid, `sqrt(2 ln 2)`.
pub fn half_density_radius() -> f64 {
    (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Error)]
pub enum ActuatorError {
    #[error("unknown actuator category `{0}`")]
    Category(String),
    #[error("rotation is not orthonormal with determinant +1")]
    NotRotation,
    #[error("principal variances must be positive, got {0:?}")]
    Scales(Vec<f64>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no present base carries positive weight")]
    NoPresentBase,
    #[error("{0} weights for {1} bases")]
    WeightCount(usize, usize),
    #[error("base lists category {0} twice")]
    Duplicate(ActuatorCategory),
    #[error("actuator file {path}, line {line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActuatorCategory {
    LeftFin,
    RightFin,
    CaudalFin,
}

impl ActuatorCategory {
    pub const ALL: [ActuatorCategory; 3] = [Self::LeftFin, Self::RightFin, Self::CaudalFin];

    pub fn name(self) -> &'static str {
        match self {
            Self::LeftFin => "left_fin",
            Self::RightFin => "right_fin",
            Self::CaudalFin => "caudal_fin",
        }
    }
}

impl fmt::Display for ActuatorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActuatorCategory {
    type Err = ActuatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ActuatorError::Category(s.to_string()))
    }
}

/// A multivariate normal `N(mu, R^T diag(S) R)`; rows of `R` are the
/// principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorGaussian {
    pub category: ActuatorCategory,
    pub mu: Vec<f64>,
    pub rotation: DMatrix<f64>,
    pub scales: Vec<f64>,
}

impl ActuatorGaussian {
    pub fn new(
        category: ActuatorCategory,
        mu: Vec<f64>,
        rotation: DMatrix<f64>,
        scales: Vec<f64>,
    ) -> Result<Self, ActuatorError> {
        let d = mu.len();
        if !(2..=3).contains(&d) || rotation.shape() != (d, d) || scales.len() != d {
            return Err(ActuatorError::Dimension(format!(
                "mu has {d} entries, rotation is {:?}, {} scales",
                rotation.shape(),
                scales.len()
            )));
        }
        check_rotation(&rotation)?;
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ActuatorError::Scales(scales));
        }
        Ok(Self {
            category,
            mu,
            rotation,
            scales,
        })
    }

    pub fn from_euler(
        category: ActuatorCategory,
        mu: Vec<f64>,
        euler: &[f64],
        scales: Vec<f64>,
    ) -> Result<Self, ActuatorError> {
        let r = rotation_from_euler(mu.len(), euler)?;
        Self::new(category, mu, r, scales)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.scales));
        self.rotation.transpose() * s * &self.rotation
    }

    /// Principal axis `k` (row `k` of the rotation).
    pub fn axis(&self, k: usize) -> Vec<f64> {
        self.rotation.row(k).iter().cloned().collect()
    }

    pub fn euler(&self) -> Vec<f64> {
        euler_from_rotation(&self.rotation)
    }

    /// Same Gaussian with variances sorted descending and axes permuted
    /// along, so bases agree on which axis is which.
    pub fn canonical(&self) -> Self {
        let (axes, scales) = sorted_frame(&self.rotation, &self.scales);
        Self {
            category: self.category,
            mu: self.mu.clone(),
            rotation: frame_to_rotation(&axes),
            scales,
        }
    }
}

fn check_rotation(r: &DMatrix<f64>) -> Result<(), ActuatorError> {
    let d = r.nrows();
    let rtr = r.transpose() * r;
    let id = DMatrix::<f64>::identity(d, d);
    if (rtr - id).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
        return Err(ActuatorError::NotRotation);
    }
    Ok(())
}

/// Rotation whose rows are the principal axes. In 2D `euler` is a single
/// angle and the first axis is `(cos t, sin t)`. In 3D `euler = [rx, ry, rz]`
/// and the axes are the columns of `Rz(rz) Ry(ry) Rx(rx)`.
pub fn rotation_from_euler(d: usize, euler: &[f64]) -> Result<DMatrix<f64>, ActuatorError> {
    match (d, euler.len()) {
        (2, 1) => {
            let (s, c) = euler[0].sin_cos();
            Ok(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]))
        }
        (3, 3) => {
            let q = Rotation3::from_axis_angle(&Vector3::z_axis(), euler[2])
                * Rotation3::from_axis_angle(&Vector3::y_axis(), euler[1])
                * Rotation3::from_axis_angle(&Vector3::x_axis(), euler[0]);
            let qt = q.matrix().transpose();
            Ok(DMatrix::from_iterator(3, 3, qt.iter().cloned()))
        }
        _ => Err(ActuatorError::Dimension(format!(
            "{} Euler angles for a {d}D actuator",
            euler.len()
        ))),
    }
}

/// Inverse of [`rotation_from_euler`]; in 3D pins `rz = 0` at gimbal lock.
pub fn euler_from_rotation(r: &DMatrix<f64>) -> Vec<f64> {
    if r.nrows() == 2 {
        return vec![r[(0, 1)].atan2(r[(0, 0)])];
    }
    // Q = R^T, so Q[i][j] = r[(j, i)].
    let q = |i: usize, j: usize| r[(j, i)];
    let sy = (-q(2, 0)).clamp(-1.0, 1.0);
    let ry = sy.asin();
    if sy.abs() > 1.0 - 1e-12 {
        let rx = (sy * q(0, 1)).atan2(q(1, 1));
        return vec![rx, ry, 0.0];
    }
    let rx = q(2, 1).atan2(q(2, 2));
    let rz = q(1, 0).atan2(q(0, 0));
    vec![rx, ry, rz]
}

fn effective_weights(w: &[f64], present: &[bool]) -> Result<Vec<f64>, ActuatorError> {
    if w.len() != present.len() {
        return Err(ActuatorError::WeightCount(w.len(), present.len()));
    }
    let mut out: Vec<f64> = w.iter().zip(present).map(|(&a, &p)| if p { a } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(ActuatorError::NoPresentBase);
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Weighted mean of the present bases' means, after zeroing and
/// renormalizing the weights of absent bases.
pub fn interpolate_mean(w: &[f64], mus: &[Vec<f64>], present: &[bool]) -> Result<Vec<f64>, ActuatorError> {
    if mus.len() != present.len() {
        return Err(ActuatorError::WeightCount(mus.len(), present.len()));
    }
    let wh = effective_weights(w, present)?;
    let d = mus
        .iter()
        .zip(present)
        .find(|(_, &p)| p)
        .map(|(m, _)| m.len())
        .unwrap_or(0);
    let mut out = vec![0.0; d];
    for (mu, &a) in mus.iter().zip(&wh) {
        if a == 0.0 {
            continue;
        }
        if mu.len() != d {
            return Err(ActuatorError::Dimension("mean lengths differ".into()));
        }
        for k in 0..d {
            out[k] += a * mu[k];
        }
    }
    Ok(out)
}

/// Sorts principal variances descending (permuting axes along) and keeps
/// the frame right-handed.
fn sorted_frame(r: &DMatrix<f64>, s: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = s.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let axes = order.iter().map(|&k| r.row(k).iter().cloned().collect()).collect();
    let scales = order.iter().map(|&k| s[k]).collect();
    (right_handed(axes), scales)
}

fn right_handed(mut axes: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    if axes.len() == 2 {
        axes[1] = vec![-axes[0][1], axes[0][0]];
    } else {
        let a = Vector3::new(axes[0][0], axes[0][1], axes[0][2]);
        let b = Vector3::new(axes[1][0], axes[1][1], axes[1][2]);
        let c = a.cross(&b);
        axes[2] = vec![c[0], c[1], c[2]];
    }
    axes
}

fn frame_to_rotation(axes: &[Vec<f64>]) -> DMatrix<f64> {
    let d = axes.len();
    DMatrix::from_fn(d, d, |i, j| axes[i][j])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wrap_to(angle: f64, center: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    angle - tau * ((angle - center) / tau).round()
}

/// Interpolates principal variances linearly and the rotation through its
/// Euler angles, unwrapped to the branch nearest the weighted circular mean.
pub fn interpolate_covariance(
    w: &[f64],
    rotations: &[DMatrix<f64>],
    scales: &[Vec<f64>],
    present: &[bool],
) -> Result<(DMatrix<f64>, Vec<f64>), ActuatorError> {
    if rotations.len() != present.len() || scales.len() != present.len() {
        return Err(ActuatorError::WeightCount(rotations.len(), present.len()));
    }
    let wh = effective_weights(w, present)?;
    let mut frames: Vec<(Vec<Vec<f64>>, Vec<f64>, f64)> = Vec::new();
    let mut prev: Option<Vec<Vec<f64>>> = None;
    for i in 0..present.len() {
        if !present[i] {
            continue;
        }
        let r = &rotations[i];
        check_rotation(r)?;
        if r.nrows() != scales[i].len() {
            return Err(ActuatorError::Dimension("rotation and scales differ".into()));
        }
        let mut axes: Vec<Vec<f64>> = (0..r.nrows()).map(|k| r.row(k).iter().cloned().collect()).collect();
        let s = scales[i].clone();
        if let Some(p) = &prev {
            let n_flip = if axes.len() == 2 { 1 } else { 2 };
            for k in 0..n_flip {
                if dot(&axes[k], &p[k]) < 0.0 {
                    axes[k].iter_mut().for_each(|v| *v = -*v);
                }
            }
            axes = right_handed(axes);
        }
        prev = Some(axes.clone());
        frames.push((axes, s, wh[i]));
    }
    let d = frames[0].1.len();
    if frames.iter().any(|f| f.1.len() != d) {
        return Err(ActuatorError::Dimension("bases differ in dimension".into()));
    }
    let eulers: Vec<Vec<f64>> = frames
        .iter()
        .map(|(axes, _, _)| euler_from_rotation(&frame_to_rotation(axes)))
        .collect();
    let n_angles = eulers[0].len();
    let mut euler = vec![0.0; n_angles];
    for k in 0..n_angles {
        let (mut sx, mut cx) = (0.0, 0.0);
        for (e, f) in eulers.iter().zip(&frames) {
            sx += f.2 * e[k].sin();
            cx += f.2 * e[k].cos();
        }
        let center = if sx == 0.0 && cx == 0.0 {
            eulers[0][k]
        } else {
            sx.atan2(cx)
        };
        euler[k] = eulers
            .iter()
            .zip(&frames)
            .map(|(e, f)| f.2 * wrap_to(e[k], center))
            .sum();
    }
    let mut s = vec![0.0; d];
    for (_, sc, a) in &frames {
        for k in 0..d {
            s[k] += a * sc[k];
        }
    }
    Ok((rotation_from_euler(d, &euler)?, s))
}

/// Interpolates every category carried by at least one positively
/// weighted base. Output is ordered by category.
pub fn interpolate_actuators(
    w: &[f64],
    bases: &[Vec<ActuatorGaussian>],
) -> Result<Vec<ActuatorGaussian>, ActuatorError> {
    if w.len() != bases.len() {
        return Err(ActuatorError::WeightCount(w.len(), bases.len()));
    }
    for b in bases {
        for (i, a) in b.iter().enumerate() {
            if b[..i].iter().any(|o| o.category == a.category) {
                return Err(ActuatorError::Duplicate(a.category));
            }
        }
    }
    let mut out = Vec::new();
    for cat in ActuatorCategory::ALL {
        let found: Vec<Option<&ActuatorGaussian>> =
            bases.iter().map(|b| b.iter().find(|a| a.category == cat)).collect();
        let present: Vec<bool> = found.iter().map(|f| f.is_some()).collect();
        if !present.iter().zip(w).any(|(&p, &a)| p && a > 0.0) {
            continue;
        }
        let d = found.iter().flatten().next().map(|a| a.dim()).unwrap_or(2);
        let mus: Vec<Vec<f64>> = found.iter().map(|f| f.map_or(vec![0.0; d], |a| a.mu.clone())).collect();
        let rots: Vec<DMatrix<f64>> = found
            .iter()
            .map(|f| f.map_or(DMatrix::identity(d, d), |a| a.rotation.clone()))
            .collect();
        let scs: Vec<Vec<f64>> = found
            .iter()
            .map(|f| f.map_or(vec![1.0; d], |a| a.scales.clone()))
            .collect();
        let mu = interpolate_mean(w, &mus, &present)?;
        let (r, s) = interpolate_covariance(w, &rots, &scs, &present)?;
        out.push(ActuatorGaussian::new(cat, mu, r, s)?);
    }
    Ok(out)
}

/// Cells driven by one actuator and how they contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorRegion {
    pub category: ActuatorCategory,
    pub cells: Vec<usize>,
    /// Unit fiber direction (unused trailing entries are zero).
    pub fiber: [f64; 3],
    /// Activation sign per entry of `cells`: `+1`/`-1` for the two
    /// antagonistic caudal groups, `0` for caudal cells on the split plane,
    /// `+1` for every cell of the other categories.
    pub signs: Vec<f64>,
}

impl ActuatorRegion {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Cell-center test against the principal-axes bounding box of the
/// half-density ellipsoid, intersected with the shape.
pub fn actuator_region(g: &ActuatorGaussian, shape: &ShapeMask) -> Result<ActuatorRegion, ActuatorError> {
    let grid: &GridSpec = shape.grid();
    let d = grid.dim();
    if g.dim() != d {
        return Err(ActuatorError::Dimension(format!(
            "{}D actuator on a {d}D grid",
            g.dim()
        )));
    }
    let r = half_density_radius();
    let half: Vec<f64> = g.scales.iter().map(|s| r * s.sqrt()).collect();
    let axes: Vec<Vec<f64>> = (0..d).map(|k| g.axis(k)).collect();
    let tiny = 1e-12 * grid.cell_size();
    let mut cells = Vec::new();
    for c in shape.cells() {
        let x = grid.cell_center(c);
        let rel: Vec<f64> = (0..d).map(|k| x[k] - g.mu[k]).collect();
        if (0..d).all(|k| dot(&axes[k], &rel).abs() <= half[k] + tiny) {
            cells.push(c);
        }
    }
    let main = (0..d)
        .max_by(|&a, &b| g.scales[a].total_cmp(&g.scales[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut fiber = [0.0; 3];
    let flip = if axes[main][0] < 0.0 { -1.0 } else { 1.0 };
    for k in 0..d {
        fiber[k] = flip * axes[main][k];
    }
    let signs = cells
        .iter()
        .map(|&c| {
            if g.category != ActuatorCategory::CaudalFin {
                return 1.0;
            }
            let y = grid.cell_center(c)[1] - g.mu[1];
            if y > tiny {
                1.0
            } else if y < -tiny {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    if cells.is_empty() {
        log::warn!("{} actuator covers no cells of the shape", g.category);
    }
    Ok(ActuatorRegion {
        category: g.category,
        cells,
        fiber,
        signs,
    })
}

/// Parses actuator lines `category mu... euler... eigenvalues...` for a
/// `d`-dimensional design. Blank lines and `#` comments are skipped.
/// Actuators come back in canonical axis order.
pub fn parse_actuators(text: &str, d: usize, path: &str) -> Result<Vec<ActuatorGaussian>, ActuatorError> {
    let n_euler = if d == 2 { 1 } else { 3 };
    let mut out: Vec<ActuatorGaussian> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ActuatorError::Format {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        let mut fields = line.split_whitespace();
        let cat: ActuatorCategory = fields
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e: ActuatorError| err(e.to_string()))?;
        let nums = fields
            .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad number `{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if nums.len() != d + n_euler + d {
            return Err(err(format!(
                "expected {} numbers for a {d}D actuator, found {}",
                d + n_euler + d,
                nums.len()
            )));
        }
        let a = ActuatorGaussian::from_euler(
            cat,
            nums[..d].to_vec(),
            &nums[d..d + n_euler],
            nums[d + n_euler..].to_vec(),
        )
        .map_err(|e| err(e.to_string()))?
        .canonical();
        if out.iter().any(|o| o.category == cat) {
            return Err(err(format!("category {cat} listed twice")));
        }
        out.push(a);
    }
    Ok(out)
}

pub fn read_actuator_file(path: &Path, d: usize) -> Result<Vec<ActuatorGaussian>, ActuatorError> {
    let text = std::fs::read_to_string(path).map_err(|source| ActuatorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_actuators(&text, d, &path.display().to_string())
}

pub fn format_actuators(acts: &[ActuatorGaussian]) -> String {
    let mut s = String::new();
    for a in acts {
        let nums: Vec<String> =
            a.mu.iter()
                .chain(a.euler().iter())
                .chain(a.scales.iter())
                .map(|v| format!("{v}"))
                .collect();
        s.push_str(&format!("{} {}\n", a.category, nums.join(" ")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn gauss2(cat: ActuatorCategory, mu: [f64; 2], theta: f64, s: [f64; 2]) -> ActuatorGaussian {
        ActuatorGaussian::from_euler(cat, mu.to_vec(), &[theta], s.to_vec()).unwrap()
    }

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn category_names_round_trip() {
        for c in ActuatorCategory::ALL {
            assert_eq!(c.name().parse::<ActuatorCategory>().unwrap(), c);
        }
        assert!("dorsal_fin".parse::<ActuatorCategory>().is_err());
    }

    #[test]
    fn mean_examples() {
        let mus = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, -1.0]];
        assert_eq!(
            interpolate_mean(&[0.0, 1.0, 0.0], &mus, &[true; 3]).unwrap(),
            vec![2.0, 0.0]
        );
        assert_eq!(
            interpolate_mean(&[0.5, 0.5], &mus[..2], &[true, true]).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            interpolate_mean(&[0.5, 0.5], &mus[..2], &[false, true]).unwrap(),
            vec![2.0, 0.0]
        );
        assert!(matches!(
            interpolate_mean(&[1.0, 0.0], &mus[..2], &[false, true]),
            Err(ActuatorError::NoPresentBase)
        ));
    }

    #[test]
    fn covariance_examples() {
        let r0 = rotation_from_euler(2, &[0.0]).unwrap();
        let r1 = rotation_from_euler(2, &[FRAC_PI_2]).unwrap();
        let (r, s) = interpolate_covariance(
            &[0.5, 0.5],
            &[r0.clone(), r1],
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            &[true, true],
        )
        .unwrap();
        assert!((euler_from_rotation(&r)[0] - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(s, vec![1.0, 1.0]);

        let (_, s) = interpolate_covariance(
            &[0.5, 0.5],
            &[r0.clone(), r0.clone()],
            &[vec![4.0, 1.0], vec![2.0, 3.0]],
            &[true, true],
        )
        .unwrap();
        assert_eq!(s, vec![3.0, 2.0]);

        let (r, s) = interpolate_covariance(
            &[0.3, 0.7],
            &[r0.clone(), r0.clone()],
            &[vec![4.0, 1.0], vec![4.0, 1.0]],
            &[true, true],
        )
        .unwrap();
        assert!(max_diff(&r, &r0) < 1e-12);
        assert!((s[0] - 4.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_rejects_non_rotation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            interpolate_covariance(&[1.0], &[bad], &[vec![1.0, 1.0]], &[true]),
            Err(ActuatorError::NotRotation)
        ));
    }

    #[test]
    fn angles_unwrap_across_pi() {
        // 170 and -170 degrees average to 180, not 0.
        let a = 170f64.to_radians();
        let ra = rotation_from_euler(2, &[a]).unwrap();
        let rb = rotation_from_euler(2, &[-a]).unwrap();
        // Bases sharing a sign convention; the second axis flip is handled too.
        let (r, _) =
            interpolate_covariance(&[0.5, 0.5], &[ra, rb], &[vec![2.0, 1.0], vec![2.0, 1.0]], &[true, true]).unwrap();
        let axis0 = [r[(0, 0)], r[(0, 1)]];
        assert!((axis0[0].abs() - 1.0).abs() < 1e-12, "{axis0:?}");
    }

    #[test]
    fn euler_round_trip_3d() {
        for e in [[0.1, -0.4, 2.5], [-2.0, 1.2, -0.3], [0.0, 0.0, 0.0]] {
            let r = rotation_from_euler(3, &e).unwrap();
            check_rotation(&r).unwrap();
            let back = euler_from_rotation(&r);
            let r2 = rotation_from_euler(3, &back).unwrap();
            assert!(max_diff(&r, &r2) < 1e-12);
        }
        // Gimbal lock still reproduces the rotation.
        let r = rotation_from_euler(3, &[0.3, FRAC_PI_2, 0.2]).unwrap();
        let r2 = rotation_from_euler(3, &euler_from_rotation(&r)).unwrap();
        assert!(max_diff(&r, &r2) < 1e-9);
    }

    #[test]
    fn one_hot_reproduces_base_covariance_3d() {
        let a = ActuatorGaussian::from_euler(
            ActuatorCategory::LeftFin,
            vec![0.1, 0.2, -0.1],
            &[0.3, -0.2, 1.1],
            vec![0.04, 0.01, 0.005],
        )
        .unwrap();
        let b = ActuatorGaussian::from_euler(
            ActuatorCategory::LeftFin,
            vec![-0.1, 0.0, 0.1],
            &[-0.5, 0.4, -2.0],
            vec![0.03, 0.02, 0.001],
        )
        .unwrap();
        for (i, base) in [&a, &b].iter().enumerate() {
            let mut w = [0.0, 0.0];
            w[i] = 1.0;
            let out = interpolate_actuators(&w, &[vec![a.clone()], vec![b.clone()]]).unwrap();
            assert_eq!(out.len(), 1);
            assert!(max_diff(&out[0].covariance(), &base.covariance()) < 1e-12);
            assert_eq!(out[0].mu, base.mu);
        }
    }

    #[test]
    fn missing_category_uses_present_bases() {
        let a = vec![gauss2(ActuatorCategory::CaudalFin, [0.3, 0.0], 0.0, [0.01, 0.002])];
        let b = vec![
            gauss2(ActuatorCategory::CaudalFin, [0.1, 0.0], 0.0, [0.02, 0.002]),
            gauss2(ActuatorCategory::LeftFin, [0.0, 0.1], 0.2, [0.01, 0.001]),
        ];
        let out = interpolate_actuators(&[0.5, 0.5], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].category, ActuatorCategory::LeftFin);
        assert_eq!(out[0].mu, b[1].mu);
        let only_a = interpolate_actuators(&[1.0, 0.0], &[a, b]).unwrap();
        assert_eq!(only_a.len(), 1);
    }

    #[test]
    fn isotropic_region_is_a_box() {
        let g = GridSpec::new(&[20, 20], 0.05).unwrap();
        let shape = ShapeMask::from_fn(g.clone(), |_| true);
        let sigma = 0.1;
        let a = gauss2(ActuatorCategory::LeftFin, [0.0, 0.0], 0.3, [sigma * sigma; 2]);
        let reg = actuator_region(&a, &shape).unwrap();
        let half = sigma * half_density_radius();
        // For isotropic variance any orthonormal frame gives a square; check
        // against the frame the Gaussian actually carries.
        for c in 0..g.num_cells() {
            let x = g.cell_center(c);
            let inside = (0..2).all(|k| dot(&a.axis(k), &x[..2]).abs() <= half);
            assert_eq!(reg.cells.contains(&c), inside);
        }
        let a0 = gauss2(ActuatorCategory::LeftFin, [0.0, 0.0], 0.0, [sigma * sigma; 2]);
        let reg0 = actuator_region(&a0, &shape).unwrap();
        for &c in &reg0.cells {
            let x = g.cell_center(c);
            assert!(x[0].abs() <= half && x[1].abs() <= half);
        }
        // half = 0.1177: centers at +-0.025, +-0.075 qualify per axis.
        assert_eq!(reg0.cells.len(), 16);
    }

    #[test]
    fn region_outside_shape_is_empty() {
        let g = GridSpec::new(&[10, 10], 0.1).unwrap();
        let shape = ShapeMask::from_fn(g.clone(), |x| x[0] < 0.0);
        let a = gauss2(ActuatorCategory::CaudalFin, [0.35, 0.2], 0.0, [1e-6, 1e-6]);
        let reg = actuator_region(&a, &shape).unwrap();
        assert!(reg.is_empty());
    }

    #[test]
    fn rotated_region_matches_brute_force() {
        let g = GridSpec::new(&[24, 24], 1.0 / 24.0).unwrap();
        let shape = ShapeMask::from_fn(g.clone(), |x| x[0] * x[0] + 2.0 * x[1] * x[1] < 0.12);
        let s = [0.02, 0.002];
        let a = gauss2(ActuatorCategory::RightFin, [0.05, -0.02], FRAC_PI_4, s);
        let reg = actuator_region(&a, &shape).unwrap();
        let (c, sn) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let r = half_density_radius();
        let mut expected = Vec::new();
        for cell in 0..g.num_cells() {
            let x = g.cell_center(cell);
            let (dx, dy) = (x[0] - 0.05, x[1] + 0.02);
            let u = c * dx + sn * dy;
            let v = -sn * dx + c * dy;
            if u.abs() <= r * s[0].sqrt() && v.abs() <= r * s[1].sqrt() && shape.is_inside(cell) {
                expected.push(cell);
            }
        }
        assert!(!expected.is_empty());
        assert_eq!(reg.cells, expected);
        assert!((reg.fiber[0] - c).abs() < 1e-12 && (reg.fiber[1] - sn).abs() < 1e-12);
    }

    #[test]
    fn fiber_points_toward_positive_x() {
        let g = GridSpec::new(&[8, 8], 0.125).unwrap();
        let shape = ShapeMask::from_fn(g.clone(), |_| true);
        let a = gauss2(ActuatorCategory::LeftFin, [0.0, 0.0], PI - 0.2, [0.05, 0.01]);
        let reg = actuator_region(&a, &shape).unwrap();
        assert!(reg.fiber[0] > 0.0);
        let n: f64 = reg.fiber.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn caudal_split_is_mirror_symmetric() {
        for ny in [8usize, 9] {
            let g = GridSpec::new(&[16, ny], 1.0 / 16.0).unwrap();
            let shape = ShapeMask::from_fn(g.clone(), |x| x[1].abs() < 0.2);
            let a = gauss2(ActuatorCategory::CaudalFin, [-0.3, 0.0], 0.0, [0.01, 0.02]);
            let reg = actuator_region(&a, &shape).unwrap();
            let plus: Vec<usize> = reg
                .cells
                .iter()
                .zip(&reg.signs)
                .filter(|(_, &s)| s > 0.0)
                .map(|(&c, _)| c)
                .collect();
            let minus: Vec<usize> = reg
                .cells
                .iter()
                .zip(&reg.signs)
                .filter(|(_, &s)| s < 0.0)
                .map(|(&c, _)| c)
                .collect();
            assert!(!plus.is_empty());
            assert_eq!(plus.len(), minus.len());
            for &c in &plus {
                let [ix, iy, _] = g.cell_coords(c);
                let mirror = g.cell_index(&[ix, ny - 1 - iy]);
                assert!(minus.contains(&mirror));
            }
        }
    }

    #[test]
    fn parse_and_format_round_trip() {
        let text = "# eel\ncaudal_fin -0.3 0 0.1 0.002 0.02\nleft_fin 0.1 0.05 0 0.01 0.001\n";
        let acts = parse_actuators(text, 2, "mem").unwrap();
        assert_eq!(acts.len(), 2);
        // Canonical order puts the larger variance first.
        assert_eq!(acts[0].scales, vec![0.02, 0.002]);
        let back = parse_actuators(&format_actuators(&acts), 2, "mem").unwrap();
        for (a, b) in acts.iter().zip(&back) {
            assert!(max_diff(&a.covariance(), &b.covariance()) < 1e-15);
        }
        assert!(parse_actuators("caudal_fin 0 0 0 1", 2, "mem").is_err());
        assert!(parse_actuators("tail 0 0 0 1 1", 2, "mem").is_err());
        assert!(parse_actuators("caudal_fin 0 0 0 1 -1", 2, "mem").is_err());
        let err = parse_actuators("caudal_fin 0 0 0 1 1\ncaudal_fin 0 0 0 1 1", 2, "a.txt")
            .unwrap_err()
            .to_string();
        assert!(err.contains("a.txt") && err.contains("line 2"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interpolated_covariance_is_spd(
                t in 0.0f64..=1.0,
                e0 in proptest::collection::vec(-3.0f64..3.0, 3),
                e1 in proptest::collection::vec(-3.0f64..3.0, 3),
                s0 in proptest::collection::vec(0.001f64..1.0, 3),
                s1 in proptest::collection::vec(0.001f64..1.0, 3),
            ) {
                let a = ActuatorGaussian::from_euler(ActuatorCategory::CaudalFin, vec![0.0; 3], &e0, s0).unwrap().canonical();
                let b = ActuatorGaussian::from_euler(ActuatorCategory::CaudalFin, vec![0.0; 3], &e1, s1).unwrap().canonical();
                let out = interpolate_actuators(&[1.0 - t, t], &[vec![a], vec![b]]).unwrap();
                let cov = out[0].covariance();
                let sym = (&cov - cov.transpose()).amax();
                prop_assert!(sym < 1e-12);
                let eig = cov.symmetric_eigen();
                prop_assert!(eig.eigenvalues.min() > 0.0);
            }

            #[test]
            fn region_monotone_in_shape(
                bits in proptest::collection::vec(any::<bool>(), 64),
                extra in proptest::collection::vec(any::<bool>(), 64),
                theta in -3.0f64..3.0,
            ) {
                let g = GridSpec::new(&[8, 8], 0.125).unwrap();
                let small = ShapeMask::new(g.clone(), bits.clone()).unwrap();
                let big_bits: Vec<bool> = bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
                let big = ShapeMask::new(g, big_bits).unwrap();
                let a = gauss2(ActuatorCategory::LeftFin, [0.05, -0.1], theta, [0.04, 0.01]);
                let rs = actuator_region(&a, &small).unwrap();
                let rb = actuator_region(&a, &big).unwrap();
                for c in rs.cells {
                    prop_assert!(rb.cells.contains(&c));
                }
            }
        }
    }
}
