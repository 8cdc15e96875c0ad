//! Regular-grid domain, probability densities on it, half-peak shape
//! extraction, boundary facets and the density-to-stiffness map.
//!
//! Cells and nodes are indexed row-major over the axis order `(x, y[, z])`,
//! i.e. the last axis varies fastest. Densities live on cells, simulation
//! nodes live on cell corners.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Fraction of `E0` assigned to cells whose gain-mapped stiffness would
/// otherwise fall below it.
pub const STIFFNESS_FLOOR_RATIO: f64 = 1e-4;

/// Second argument of the gain curve used by [`stiffness_field`].
pub const STIFFNESS_GAIN: f64 = 0.1;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid must be 2D or 3D, got {0} axes")]
    Dimension(usize),
    #[error("every grid axis needs at least 2 cells, got {0:?}")]
    TooFewCells(Vec<usize>),
    #[error("cell size must be positive and finite, got {0}")]
    CellSize(f64),
    #[error("bounding box is degenerate along axis {axis} (extent {extent})")]
    DegenerateBox { axis: usize, extent: f64 },
    #[error("bounding box extents {extents:?} are not commensurate with cell counts {dims:?}")]
    NonCubicCells { extents: Vec<f64>, dims: Vec<usize> },
    #[error("expected {expected} cell values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("density value {value} at cell {cell} is negative or not finite")]
    BadValue { cell: usize, value: f64 },
    #[error("density sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("density is zero everywhere")]
    ZeroDensity,
    #[error("mask has no inside cells")]
    EmptyMask,
    #[error("gain argument out of range: t = {t}, a = {a}")]
    GainDomain { t: f64, a: f64 },
    #[error("base modulus must be positive, got {0}")]
    Modulus(f64),
    #[error("grid mismatch: {0}")]
    Mismatch(String),
    #[error("voxel file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A regular grid of cubic cells, centered at the coordinate origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dims: Vec<usize>,
    cell_size: f64,
    origin: Vec<f64>,
}

impl GridSpec {
    pub fn new(dims: &[usize], cell_size: f64) -> Result<Self, GridError> {
        if !(2..=3).contains(&dims.len()) {
            return Err(GridError::Dimension(dims.len()));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(GridError::TooFewCells(dims.to_vec()));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::CellSize(cell_size));
        }
        let origin = dims.iter().map(|&n| -(n as f64) * cell_size / 2.0).collect();
        Ok(Self {
            dims: dims.to_vec(),
            cell_size,
            origin,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size.powi(self.dim() as i32)
    }

    pub fn volume(&self) -> f64 {
        self.num_cells() as f64 * self.cell_volume()
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn node_dims(&self) -> Vec<usize> {
        self.dims.iter().map(|n| n + 1).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.dims.iter().map(|n| n + 1).product()
    }

    /// Multi-index of a cell; unused trailing axes are zero.
    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        unravel(cell, &self.dims)
    }

    pub fn cell_index(&self, coords: &[usize]) -> usize {
        ravel(coords, &self.dims)
    }

    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        unravel(node, &self.node_dims())
    }

    pub fn node_index(&self, coords: &[usize]) -> usize {
        ravel(coords, &self.node_dims())
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let ijk = self.cell_coords(cell);
        let mut x = [0.0; 3];
        for k in 0..self.dim() {
            x[k] = self.origin[k] + (ijk[k] as f64 + 0.5) * self.cell_size;
        }
        x
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let ijk = self.node_coords(node);
        let mut x = [0.0; 3];
        for k in 0..self.dim() {
            x[k] = self.origin[k] + ijk[k] as f64 * self.cell_size;
        }
        x
    }

    /// Grid node ids of the `2^d` corners of a cell. Corner `a` is offset by
    /// `(a >> k) & 1` along axis `k`.
    pub fn cell_corner_nodes(&self, cell: usize) -> Vec<usize> {
        let ijk = self.cell_coords(cell);
        let d = self.dim();
        (0..1usize << d)
            .map(|a| {
                let mut c = [0usize; 3];
                for k in 0..d {
                    c[k] = ijk[k] + ((a >> k) & 1);
                }
                self.node_index(&c[..d])
            })
            .collect()
    }

    /// Cell neighbor across the face normal to `axis` on side `dir` (+1/-1).
    pub fn cell_neighbor(&self, cell: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut ijk = self.cell_coords(cell);
        let v = ijk[axis] as i64 + dir;
        if v < 0 || v >= self.dims[axis] as i64 {
            return None;
        }
        ijk[axis] = v as usize;
        Some(self.cell_index(&ijk[..self.dim()]))
    }
}

fn unravel(mut idx: usize, dims: &[usize]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
    out
}

fn ravel(coords: &[usize], dims: &[usize]) -> usize {
    coords.iter().zip(dims).fold(0, |acc, (&c, &n)| acc * n + c)
}

/// Rescales an axis-aligned box uniformly to unit volume and centers it at
/// the origin. `lo`/`hi` are the box corners; the box extents must be
/// commensurate with `dims` so cells stay cubic.
pub fn normalize_domain(lo: &[f64], hi: &[f64], dims: &[usize]) -> Result<GridSpec, GridError> {
    if lo.len() != hi.len() || lo.len() != dims.len() {
        return Err(GridError::Mismatch(format!(
            "box has {} / {} coordinates but {} cell counts",
            lo.len(),
            hi.len(),
            dims.len()
        )));
    }
    let extents: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
    for (axis, &e) in extents.iter().enumerate() {
        if !(e.is_finite() && e > 0.0) {
            return Err(GridError::DegenerateBox { axis, extent: e });
        }
    }
    if dims.contains(&0) {
        return Err(GridError::TooFewCells(dims.to_vec()));
    }
    let raw_cell = extents[0] / dims[0] as f64;
    for (e, &n) in extents.iter().zip(dims) {
        let c = e / n as f64;
        if ((c - raw_cell) / raw_cell).abs() > 1e-9 {
            return Err(GridError::NonCubicCells {
                extents: extents.clone(),
                dims: dims.to_vec(),
            });
        }
    }
    let volume: f64 = extents.iter().product();
    let scale = volume.powf(-1.0 / dims.len() as f64);
    GridSpec::new(dims, raw_cell * scale)
}

/// Nonnegative per-cell probability mass summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        check_values(&grid, &values)?;
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(GridError::NotNormalized(total));
        }
        Ok(Self { grid, values })
    }

    /// Divides nonnegative values by their sum.
    pub fn from_unnormalized(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        check_values(&grid, &values)?;
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(GridError::ZeroDensity);
        }
        let values = values.into_iter().map(|v| v / total).collect();
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Mass-weighted mean cell center.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (cell, &v) in self.values.iter().enumerate() {
            let x = self.grid.cell_center(cell);
            for k in 0..3 {
                c[k] += v * x[k];
            }
        }
        c
    }

    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }
}

fn check_values(grid: &GridSpec, values: &[f64]) -> Result<(), GridError> {
    if values.len() != grid.num_cells() {
        return Err(GridError::Length {
            expected: grid.num_cells(),
            got: values.len(),
        });
    }
    for (cell, &value) in values.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(GridError::BadValue { cell, value });
        }
    }
    Ok(())
}

/// Per-cell inside/outside flags of a swimmer body.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMask {
    grid: GridSpec,
    inside: Vec<bool>,
}

impl ShapeMask {
    pub fn new(grid: GridSpec, inside: Vec<bool>) -> Result<Self, GridError> {
        if inside.len() != grid.num_cells() {
            return Err(GridError::Length {
                expected: grid.num_cells(),
                got: inside.len(),
            });
        }
        Ok(Self { grid, inside })
    }

    /// Mask from a predicate on cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> bool) -> Self {
        let inside = (0..grid.num_cells()).map(|c| f(grid.cell_center(c))).collect();
        Self { grid, inside }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn is_inside(&self, cell: usize) -> bool {
        self.inside[cell]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside.iter().enumerate().filter_map(|(c, &b)| b.then_some(c))
    }

    /// Grid nodes touched by at least one inside cell, ascending.
    pub fn nodes(&self) -> Vec<usize> {
        let mut used = vec![false; self.grid.num_nodes()];
        for c in self.cells() {
            for n in self.grid.cell_corner_nodes(c) {
                used[n] = true;
            }
        }
        used.iter().enumerate().filter_map(|(n, &u)| u.then_some(n)).collect()
    }

    /// Intersection over union with another mask on the same grid.
    pub fn iou(&self, other: &ShapeMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.inside.iter().zip(&other.inside) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Translates the mask by whole cells; cells shifted off the grid are dropped.
    pub fn shifted(&self, offset: &[i64]) -> ShapeMask {
        let d = self.grid.dim();
        let mut inside = vec![false; self.inside.len()];
        for c in self.cells() {
            let ijk = self.grid.cell_coords(c);
            let mut dst = [0usize; 3];
            let mut ok = true;
            for k in 0..d {
                let v = ijk[k] as i64 + offset[k];
                if v < 0 || v >= self.grid.dims()[k] as i64 {
                    ok = false;
                    break;
                }
                dst[k] = v as usize;
            }
            if ok {
                inside[self.grid.cell_index(&dst[..d])] = true;
            }
        }
        ShapeMask {
            grid: self.grid.clone(),
            inside,
        }
    }
}

/// Uniform density over the inside cells.
pub fn density_from_mask(mask: &ShapeMask) -> Result<DensityField, GridError> {
    let count = mask.count();
    if count == 0 {
        return Err(GridError::EmptyMask);
    }
    let w = 1.0 / count as f64;
    let values = mask.inside.iter().map(|&b| if b { w } else { 0.0 }).collect();
    Ok(DensityField {
        grid: mask.grid.clone(),
        values,
    })
}

/// Half-peak level set: a cell is inside iff its density is at least half
/// the maximum density.
pub fn extract_shape(density: &DensityField) -> Result<ShapeMask, GridError> {
    let peak = density.max();
    if peak <= 0.0 {
        return Err(GridError::ZeroDensity);
    }
    let threshold = 0.5 * peak;
    let inside = density.values.iter().map(|&v| v >= threshold).collect();
    Ok(ShapeMask {
        grid: density.grid.clone(),
        inside,
    })
}

/// One boundary facet of a voxel shape: an edge (2D) or a quad (3D).
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Grid node ids, ordered so that the rest-pose area vector points outward.
    /// In 2D only the first two entries are used.
    pub nodes: [usize; 4],
    pub normal: [f64; 3],
    pub area: f64,
    /// The inside cell this facet bounds.
    pub cell: usize,
}

impl Facet {
    pub fn corners(&self, dim: usize) -> &[usize] {
        &self.nodes[..if dim == 2 { 2 } else { 4 }]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceQuadSet {
    pub dim: usize,
    pub faces: Vec<Facet>,
}

impl SurfaceQuadSet {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Sum of area-weighted normals; vanishes for a closed surface.
    pub fn area_vector_sum(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for f in &self.faces {
            for k in 0..3 {
                s[k] += f.area * f.normal[k];
            }
        }
        s
    }

    /// Distinct grid nodes on the surface, ascending.
    pub fn nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces.iter().flat_map(|f| f.corners(self.dim).to_vec()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Area vector of a facet from its corner positions: the rotated edge in 2D,
/// half the cross product of the diagonals in 3D.
pub fn facet_area_vector(dim: usize, corners: &[[f64; 3]]) -> [f64; 3] {
    if dim == 2 {
        let e = [corners[1][0] - corners[0][0], corners[1][1] - corners[0][1]];
        [e[1], -e[0], 0.0]
    } else {
        let a = sub3(corners[2], corners[0]);
        let b = sub3(corners[3], corners[1]);
        let c = cross3(a, b);
        [0.5 * c[0], 0.5 * c[1], 0.5 * c[2]]
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// All grid faces separating an inside cell from an outside cell or from the
/// domain boundary.
pub fn extract_surface(mask: &ShapeMask) -> Result<SurfaceQuadSet, GridError> {
    if mask.count() == 0 {
        return Err(GridError::EmptyMask);
    }
    let grid = &mask.grid;
    let d = grid.dim();
    let area = grid.cell_size().powi(d as i32 - 1);
    let mut faces = Vec::new();
    for cell in mask.cells() {
        let corners = grid.cell_corner_nodes(cell);
        for axis in 0..d {
            for (side, dir) in [(0usize, -1i64), (1, 1)] {
                let open = match grid.cell_neighbor(cell, axis, dir) {
                    Some(nb) => !mask.inside[nb],
                    None => true,
                };
                if !open {
                    continue;
                }
                // Corners on this face, in cyclic order over the two other axes.
                let on_face: Vec<usize> = (0..corners.len()).filter(|a| (a >> axis) & 1 == side).collect();
                let mut nodes = [0usize; 4];
                if d == 2 {
                    nodes[0] = corners[on_face[0]];
                    nodes[1] = corners[on_face[1]];
                } else {
                    // on_face lists corners by bit pattern 00,01,10,11 over the
                    // remaining axes; reorder to a cycle 00,01,11,10.
                    let cyc = [on_face[0], on_face[1], on_face[3], on_face[2]];
                    for (slot, &a) in cyc.iter().enumerate() {
                        nodes[slot] = corners[a];
                    }
                }
                let mut normal = [0.0; 3];
                normal[axis] = dir as f64;
                let n_corners = if d == 2 { 2 } else { 4 };
                let pos: Vec<[f64; 3]> = nodes[..n_corners].iter().map(|&n| grid.node_position(n)).collect();
                let av = facet_area_vector(d, &pos);
                if av[axis] * normal[axis] < 0.0 {
                    nodes[..n_corners].reverse();
                }
                faces.push(Facet {
                    nodes,
                    normal,
                    area,
                    cell,
                });
            }
        }
    }
    Ok(SurfaceQuadSet { dim: d, faces })
}

/// Schlick bias curve `t / ((1/a - 2)(1 - t) + 1)`.
fn schlick_bias(t: f64, a: f64) -> f64 {
    t / ((1.0 / a - 2.0) * (1.0 - t) + 1.0)
}

fn schlick_bias_dt(t: f64, a: f64) -> f64 {
    let k = 1.0 / a - 2.0;
    let den = k * (1.0 - t) + 1.0;
    (k + 1.0) / (den * den)
}

fn check_gain_args(t: f64, a: f64) -> Result<(), GridError> {
    if !(0.0..=1.0).contains(&t) || !(a > 0.0 && a < 1.0) {
        return Err(GridError::GainDomain { t, a });
    }
    Ok(())
}

/// Schlick gain: an S-curve on `[0, 1]` fixing 0, 1/2 and 1. For `a < 1/2`
/// values are pushed toward 0 or 1.
pub fn schlick_gain(t: f64, a: f64) -> Result<f64, GridError> {
    check_gain_args(t, a)?;
    Ok(if t < 0.5 {
        0.5 * schlick_bias(2.0 * t, a)
    } else {
        1.0 - 0.5 * schlick_bias(2.0 - 2.0 * t, a)
    })
}

/// Derivative of [`schlick_gain`] with respect to `t`.
pub fn schlick_gain_dt(t: f64, a: f64) -> Result<f64, GridError> {
    check_gain_args(t, a)?;
    Ok(if t < 0.5 {
        schlick_bias_dt(2.0 * t, a)
    } else {
        schlick_bias_dt(2.0 - 2.0 * t, a)
    })
}

fn peak_and_argmax(density: &DensityField) -> Result<(f64, usize), GridError> {
    let mut best = (0.0, 0usize);
    for (c, &v) in density.values.iter().enumerate() {
        if v > best.0 {
            best = (v, c);
        }
    }
    if best.0 <= 0.0 {
        return Err(GridError::ZeroDensity);
    }
    Ok(best)
}

/// Per-cell Young's modulus `max(E0 * G(p / max p, 0.1), E_min)` with
/// `E_min = 1e-4 * E0`.
pub fn stiffness_field(density: &DensityField, e0: f64) -> Result<Vec<f64>, GridError> {
    if !(e0.is_finite() && e0 > 0.0) {
        return Err(GridError::Modulus(e0));
    }
    let (peak, _) = peak_and_argmax(density)?;
    let floor = STIFFNESS_FLOOR_RATIO * e0;
    density
        .values
        .iter()
        .map(|&v| {
            let t = (v / peak).min(1.0);
            Ok((e0 * schlick_gain(t, STIFFNESS_GAIN)?).max(floor))
        })
        .collect()
}

/// Pulls a gradient with respect to the per-cell moduli back onto the
/// density values (including the dependence through the peak).
pub fn stiffness_field_vjp(density: &DensityField, e0: f64, grad_e: &[f64]) -> Result<Vec<f64>, GridError> {
    if grad_e.len() != density.values.len() {
        return Err(GridError::Length {
            expected: density.values.len(),
            got: grad_e.len(),
        });
    }
    let (peak, argmax) = peak_and_argmax(density)?;
    let floor = STIFFNESS_FLOOR_RATIO * e0;
    let mut out = vec![0.0; grad_e.len()];
    let mut peak_bar = 0.0;
    for (c, (&v, &g)) in density.values.iter().zip(grad_e).enumerate() {
        let t = (v / peak).min(1.0);
        if e0 * schlick_gain(t, STIFFNESS_GAIN)? <= floor || c == argmax {
            continue;
        }
        let dt = g * e0 * schlick_gain_dt(t, STIFFNESS_GAIN)?;
        out[c] += dt / peak;
        peak_bar -= dt * v / (peak * peak);
    }
    out[argmax] += peak_bar;
    Ok(out)
}

/// Reads a voxel file: a header `d n1 [n2 [n3]] cell_size` followed by
/// row-major cell values.
pub fn read_voxel_file(path: &Path) -> Result<(GridSpec, Vec<f64>), GridError> {
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_voxels(&text).map_err(|msg| GridError::Format {
        path: path.display().to_string(),
        msg,
    })
}

pub fn parse_voxels(text: &str) -> Result<(GridSpec, Vec<f64>), String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty file")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let d: usize = fields
        .first()
        .ok_or("missing dimension")?
        .parse()
        .map_err(|e| format!("bad dimension: {e}"))?;
    if !(2..=3).contains(&d) || fields.len() != d + 2 {
        return Err(format!("malformed header `{header}`"));
    }
    let dims = fields[1..=d]
        .iter()
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad cell count `{s}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let cell_size: f64 = fields[d + 1].parse().map_err(|e| format!("bad cell size: {e}"))?;
    let grid = GridSpec::new(&dims, cell_size).map_err(|e| e.to_string())?;
    let values = lines
        .flat_map(|l| l.split_whitespace())
        .map(|s| s.parse::<f64>().map_err(|e| format!("bad value `{s}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != grid.num_cells() {
        return Err(format!("expected {} values, found {}", grid.num_cells(), values.len()));
    }
    Ok((grid, values))
}

pub fn format_voxels(grid: &GridSpec, values: &[f64]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{}", grid.dim());
    for n in grid.dims() {
        let _ = write!(s, " {n}");
    }
    let _ = writeln!(s, " {}", grid.cell_size());
    let run = *grid.dims().last().unwrap();
    for chunk in values.chunks(run) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_voxel_file(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<(), GridError> {
    std::fs::write(path, format_voxels(grid, values)).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_mask_file(path: &Path) -> Result<ShapeMask, GridError> {
    let (grid, values) = read_voxel_file(path)?;
    let inside = values.iter().map(|&v| v > 0.5).collect();
    ShapeMask::new(grid, inside)
}

pub fn write_mask_file(path: &Path, mask: &ShapeMask) -> Result<(), GridError> {
    let values: Vec<f64> = mask.inside.iter().map(|&b| b as u8 as f64).collect();
    write_voxel_file(path, &mask.grid, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid2(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(&[nx, ny], 1.0 / nx as f64).unwrap()
    }

    #[test]
    fn normalize_unit_cube() {
        let g = normalize_domain(&[0.0; 3], &[1.0; 3], &[4, 4, 4]).unwrap();
        assert_relative_eq!(g.cell_size(), 0.25);
        assert_eq!(g.origin(), &[-0.5, -0.5, -0.5]);
    }

    #[test]
    fn normalize_square() {
        let g = normalize_domain(&[0.0, 0.0], &[2.0, 2.0], &[4, 4]).unwrap();
        assert_relative_eq!(g.cell_size(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(g.origin()[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g.origin()[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rectangle_keeps_aspect_and_unit_area() {
        let g = normalize_domain(&[0.0, 0.0], &[2.0, 1.0], &[8, 4]).unwrap();
        // Analytic: each side scales by 1/sqrt(2), so 2/sqrt(2) * 1/sqrt(2) = 1.
        let lx = 8.0 * g.cell_size();
        let ly = 4.0 * g.cell_size();
        assert!((lx * ly - 1.0).abs() < 1e-12);
        assert_relative_eq!(lx / ly, 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.cell_size(), 0.25 / 2f64.sqrt(), epsilon = 1e-15);
        assert!((g.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate_box() {
        let err = normalize_domain(&[0.0, 0.0], &[1.0, 0.0], &[4, 4]).unwrap_err();
        assert!(matches!(err, GridError::DegenerateBox { axis: 1, .. }));
    }

    #[test]
    fn grid_rejects_thin_axis() {
        assert!(GridSpec::new(&[1, 4], 0.1).is_err());
        assert!(GridSpec::new(&[4], 0.1).is_err());
    }

    #[test]
    fn density_from_single_cell() {
        let g = grid2(4, 4);
        let mut inside = vec![false; 16];
        inside[5] = true;
        let p = density_from_mask(&ShapeMask::new(g, inside).unwrap()).unwrap();
        assert_eq!(p.values()[5], 1.0);
        assert_eq!(p.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn density_from_four_cells() {
        let g = grid2(4, 4);
        let mut inside = vec![false; 16];
        for c in [0, 1, 4, 5] {
            inside[c] = true;
        }
        let p = density_from_mask(&ShapeMask::new(g, inside).unwrap()).unwrap();
        for c in [0, 1, 4, 5] {
            assert_eq!(p.values()[c], 0.25);
        }
    }

    #[test]
    fn density_from_checkerboard() {
        let g = grid2(4, 4);
        let inside: Vec<bool> = (0..16).map(|c| (c / 4 + c % 4) % 2 == 0).collect();
        let p = density_from_mask(&ShapeMask::new(g, inside.clone()).unwrap()).unwrap();
        for c in 0..16 {
            assert_eq!(p.values()[c], if inside[c] { 0.125 } else { 0.0 });
        }
    }

    #[test]
    fn density_from_empty_mask_fails() {
        let g = grid2(4, 4);
        let m = ShapeMask::new(g, vec![false; 16]).unwrap();
        assert!(matches!(density_from_mask(&m), Err(GridError::EmptyMask)));
    }

    #[test]
    fn shape_of_uniform_density_is_everything() {
        let g = grid2(4, 4);
        let p = DensityField::new(g, vec![1.0 / 16.0; 16]).unwrap();
        assert_eq!(extract_shape(&p).unwrap().count(), 16);
    }

    #[test]
    fn shape_keeps_only_peak() {
        let g = grid2(4, 4);
        let mut v = vec![0.4; 16];
        v[7] = 1.0;
        let p = DensityField::from_unnormalized(g, v).unwrap();
        let m = extract_shape(&p).unwrap();
        assert_eq!(m.cells().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn shape_keeps_tied_peaks() {
        let g = grid2(4, 4);
        let mut v = vec![0.1; 16];
        v[2] = 1.0;
        v[9] = 1.0;
        let p = DensityField::from_unnormalized(g, v).unwrap();
        assert_eq!(extract_shape(&p).unwrap().cells().collect::<Vec<_>>(), vec![2, 9]);
    }

    #[test]
    fn shape_includes_exact_half_peak() {
        let g = grid2(2, 2);
        let p = DensityField::from_unnormalized(g, vec![1.0, 0.5, 0.25, 0.0]).unwrap();
        assert_eq!(extract_shape(&p).unwrap().count(), 2);
    }

    #[test]
    fn zero_density_rejected() {
        let g = grid2(2, 2);
        assert!(DensityField::from_unnormalized(g, vec![0.0; 4]).is_err());
    }

    #[test]
    fn density_validation() {
        let g = grid2(2, 2);
        assert!(DensityField::new(g.clone(), vec![0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(DensityField::new(g.clone(), vec![1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(DensityField::new(g.clone(), vec![f64::NAN, 1.0, 0.0, 0.0]).is_err());
        assert!(DensityField::new(g, vec![0.25; 3]).is_err());
    }

    #[test]
    fn surface_single_cell_2d() {
        let g = grid2(4, 4);
        let mut inside = vec![false; 16];
        inside[5] = true;
        let s = extract_surface(&ShapeMask::new(g.clone(), inside).unwrap()).unwrap();
        assert_eq!(s.len(), 4);
        for f in &s.faces {
            assert_relative_eq!(f.area, g.cell_size());
        }
    }

    #[test]
    fn surface_block_2d() {
        let g = grid2(4, 4);
        let mut inside = vec![false; 16];
        for c in [5, 6, 9, 10] {
            inside[c] = true;
        }
        let s = extract_surface(&ShapeMask::new(g, inside).unwrap()).unwrap();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn surface_block_3d_brute_force() {
        let g = GridSpec::new(&[5, 5, 5], 0.2).unwrap();
        let mask = ShapeMask::from_fn(g.clone(), |x| x.iter().all(|v| v.abs() < 0.3));
        assert_eq!(mask.count(), 27);
        // Oracle: enumerate every (cell, axis, side) and count the open ones.
        let mut expected = 0;
        for c in mask.cells() {
            for axis in 0..3 {
                for dir in [-1i64, 1] {
                    let open = g.cell_neighbor(c, axis, dir).is_none_or(|nb| !mask.is_inside(nb));
                    expected += open as usize;
                }
            }
        }
        let s = extract_surface(&mask).unwrap();
        assert_eq!(expected, 54);
        assert_eq!(s.len(), 54);
        for f in &s.faces {
            assert_relative_eq!(f.area, 0.04, epsilon = 1e-15);
        }
    }

    #[test]
    fn surface_orientation_matches_normals() {
        let g = GridSpec::new(&[4, 4, 4], 0.25).unwrap();
        let mask = ShapeMask::from_fn(g.clone(), |x| x[0] < 0.2 && x[1].abs() < 0.3);
        let s = extract_surface(&mask).unwrap();
        for f in &s.faces {
            let pos: Vec<[f64; 3]> = f.corners(3).iter().map(|&n| g.node_position(n)).collect();
            let av = facet_area_vector(3, &pos);
            for k in 0..3 {
                assert!((av[k] - f.area * f.normal[k]).abs() < 1e-14);
            }
            let len = f.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
        let sum = s.area_vector_sum();
        assert!(sum.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn surface_touching_domain_boundary() {
        let g = grid2(2, 2);
        let s = extract_surface(&ShapeMask::new(g, vec![true; 4]).unwrap()).unwrap();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn gain_fixed_points() {
        assert_eq!(schlick_gain(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(schlick_gain(0.5, 0.1).unwrap(), 0.5);
        assert_eq!(schlick_gain(1.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn gain_quarter_golden() {
        // bias(0.5, 0.1) = 0.5 / (8 * 0.5 + 1) = 0.1, halved.
        let g = schlick_gain(0.25, 0.1).unwrap();
        assert!((g - 0.05).abs() < 1e-15);
        assert!(g < 0.1);
    }

    #[test]
    fn gain_rejects_bad_args() {
        assert!(schlick_gain(-0.1, 0.1).is_err());
        assert!(schlick_gain(1.1, 0.1).is_err());
        assert!(schlick_gain(0.5, 0.0).is_err());
        assert!(schlick_gain(0.5, 1.0).is_err());
    }

    #[test]
    fn gain_derivative_matches_difference() {
        for &t in &[0.1, 0.3, 0.6, 0.9] {
            let h = 1e-6;
            let fd = (schlick_gain(t + h, 0.1).unwrap() - schlick_gain(t - h, 0.1).unwrap()) / (2.0 * h);
            assert_relative_eq!(schlick_gain_dt(t, 0.1).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn stiffness_examples() {
        let g = grid2(2, 2);
        let p = DensityField::from_unnormalized(g, vec![1.0, 0.0, 0.5, 0.25]).unwrap();
        let e = stiffness_field(&p, 2.0).unwrap();
        assert_eq!(e[0], 2.0);
        assert_eq!(e[1], 2.0 * STIFFNESS_FLOOR_RATIO);
        assert!((e[2] - 1.0).abs() < 1e-15);
        assert!(e.iter().all(|&v| v > 0.0 && v <= 2.0));
    }

    #[test]
    fn stiffness_vjp_matches_difference() {
        let g = grid2(3, 2);
        let raw = vec![0.9, 0.3, 0.55, 0.7, 1.0, 0.02];
        let p = DensityField::from_unnormalized(g.clone(), raw).unwrap();
        let w = [0.3, -1.0, 0.7, 0.2, 1.1, 0.5];
        let bar = stiffness_field_vjp(&p, 1.0, &w).unwrap();
        let f = |vals: &[f64]| -> f64 {
            let q = DensityField {
                grid: g.clone(),
                values: vals.to_vec(),
            };
            stiffness_field(&q, 1.0)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        for c in 0..6 {
            let h = 1e-7;
            let mut a = p.values().to_vec();
            let mut b = a.clone();
            a[c] += h;
            b[c] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!(
                (fd - bar[c]).abs() < 1e-5 * (1.0 + fd.abs()),
                "cell {c}: {fd} vs {}",
                bar[c]
            );
        }
    }

    #[test]
    fn voxel_round_trip() {
        let g = GridSpec::new(&[3, 2, 2], 0.5).unwrap();
        let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.125).collect();
        let text = format_voxels(&g, &v);
        assert!(text.starts_with("3 3 2 2 0.5\n"));
        let (g2, v2) = parse_voxels(&text).unwrap();
        assert_eq!(g, g2);
        assert_eq!(v, v2);
    }

    #[test]
    fn voxel_parse_errors() {
        assert!(parse_voxels("").is_err());
        assert!(parse_voxels("2 2 2\n1 1 1 1").is_err());
        assert!(parse_voxels("2 2 2 0.5\n1 1 1").is_err());
        assert!(parse_voxels("2 2 2 0.5\n1 1 x 1").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mask_round_trip(bits in proptest::collection::vec(any::<bool>(), 20)) {
                prop_assume!(bits.iter().any(|&b| b));
                let g = GridSpec::new(&[5, 4], 0.1).unwrap();
                let m = ShapeMask::new(g, bits).unwrap();
                let back = extract_shape(&density_from_mask(&m).unwrap()).unwrap();
                prop_assert_eq!(back, m);
            }

            #[test]
            fn gain_point_symmetry(t in 0.0f64..=1.0, a in 0.01f64..0.99) {
                let s = schlick_gain(t, a).unwrap() + schlick_gain(1.0 - t, a).unwrap();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }

            #[test]
            fn gain_increasing(t in 0.0f64..0.999, dt in 1e-4f64..1e-3) {
                let t2 = (t + dt).min(1.0);
                prop_assert!(schlick_gain(t2, 0.1).unwrap() > schlick_gain(t, 0.1).unwrap());
            }

            #[test]
            fn stiffness_monotone(vals in proptest::collection::vec(0.0f64..1.0, 16)) {
                prop_assume!(vals.iter().any(|&v| v > 0.0));
                let g = GridSpec::new(&[4, 4], 0.25).unwrap();
                let p = DensityField::from_unnormalized(g, vals).unwrap();
                let e = stiffness_field(&p, 3.0).unwrap();
                for i in 0..16 {
                    for j in 0..16 {
                        if p.values()[i] >= p.values()[j] {
                            prop_assert!(e[i] >= e[j]);
                        }
                    }
                }
            }

            #[test]
            fn closed_surfaces(bits in proptest::collection::vec(any::<bool>(), 36)) {
                prop_assume!(bits.iter().any(|&b| b));
                let g = GridSpec::new(&[6, 6], 0.1).unwrap();
                let m = ShapeMask::new(g, bits).unwrap();
                let s = extract_surface(&m).unwrap();
                prop_assert_eq!(s.len() % 2, 0);
                let sum = s.area_vector_sum();
                prop_assert!(sum.iter().all(|v| v.abs() < 1e-9));
            }
        }
    }
}
