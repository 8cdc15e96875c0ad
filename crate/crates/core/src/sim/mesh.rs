//! Hexahedral (3D) / quadrilateral (2D) meshes on grid cells.

use crate::grid::GridSpec;

/// Gauss abscissa on `[0, 1]` for the two-point rule.
fn gauss_points() -> [f64; 2] {
    let o = 0.5 / 3f64.sqrt();
    [0.5 - o, 0.5 + o]
}

/// Shape-function gradients at one quadrature point.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub weight: f64,
    /// `grads[a][k]` = dN_a/dX_k in rest coordinates.
    pub grads: Vec<[f64; 3]>,
}

/// Multilinear elements on a subset of grid cells, nodes at cell corners.
#[derive(Debug, Clone)]
pub struct Mesh {
    grid: GridSpec,
    /// Grid cell id of each mesh cell, ascending.
    cells: Vec<usize>,
    /// Mesh node ids of each cell's corners (corner `a` offset by bit `k` on axis `k`).
    cell_nodes: Vec<Vec<usize>>,
    /// Grid node id of each mesh node, ascending.
    nodes: Vec<usize>,
    node_of_grid: Vec<Option<usize>>,
    cell_of_grid: Vec<Option<usize>>,
    rest: Vec<f64>,
    mass: Vec<f64>,
    quad: Vec<QuadPoint>,
    bandwidth: usize,
}

impl Mesh {
    /// Mesh over every grid cell.
    pub fn full(grid: &GridSpec, rho: f64) -> Self {
        let cells: Vec<usize> = (0..grid.num_cells()).collect();
        Self::from_cells(grid, &cells, rho)
    }

    /// Mesh over the given grid cells; lumped mass splits each cell's mass
    /// `rho * cell_volume` equally among its corners.
    pub fn from_cells(grid: &GridSpec, cells: &[usize], rho: f64) -> Self {
        let d = grid.dim();
        let mut cells = cells.to_vec();
        cells.sort_unstable();
        cells.dedup();
        let mut used = vec![false; grid.num_nodes()];
        for &c in &cells {
            for n in grid.cell_corner_nodes(c) {
                used[n] = true;
            }
        }
        let mut node_of_grid = vec![None; grid.num_nodes()];
        let mut nodes = Vec::new();
        for (g, &u) in used.iter().enumerate() {
            if u {
                node_of_grid[g] = Some(nodes.len());
                nodes.push(g);
            }
        }
        let mut cell_of_grid = vec![None; grid.num_cells()];
        let cell_nodes: Vec<Vec<usize>> = cells
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                cell_of_grid[c] = Some(i);
                grid.cell_corner_nodes(c)
                    .into_iter()
                    .map(|g| node_of_grid[g].expect("corner node registered"))
                    .collect()
            })
            .collect();
        let mut rest = Vec::with_capacity(nodes.len() * d);
        for &g in &nodes {
            let x = grid.node_position(g);
            rest.extend_from_slice(&x[..d]);
        }
        let nc = 1usize << d;
        let corner_mass = rho * grid.cell_volume() / nc as f64;
        let mut mass = vec![0.0; nodes.len()];
        for cn in &cell_nodes {
            for &n in cn {
                mass[n] += corner_mass;
            }
        }
        let bandwidth = cell_nodes
            .iter()
            .map(|cn| {
                let lo = cn.iter().min().unwrap();
                let hi = cn.iter().max().unwrap();
                (hi - lo) * d + d - 1
            })
            .max()
            .unwrap_or(d - 1);
        let quad = quadrature(d, grid.cell_size());
        Self {
            grid: grid.clone(),
            cells,
            cell_nodes,
            nodes,
            node_of_grid,
            cell_of_grid,
            rest,
            mass,
            quad,
            bandwidth,
        }
    }

    /// Re-lump nodal masses from a per-cell mass density.
    pub fn set_cell_densities(&mut self, rho: &[f64]) {
        assert_eq!(rho.len(), self.cells.len(), "one density per mesh cell");
        let nc = self.cell_nodes.first().map_or(1, Vec::len);
        let vol = self.grid.cell_volume() / nc as f64;
        self.mass.iter_mut().for_each(|m| *m = 0.0);
        for (cn, &r) in self.cell_nodes.iter().zip(rho) {
            for &n in cn {
                self.mass[n] += r * vol;
            }
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len() * self.dim()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        &self.cell_nodes[cell]
    }

    pub fn grid_nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node_of_grid(&self, grid_node: usize) -> Option<usize> {
        self.node_of_grid[grid_node]
    }

    pub fn cell_of_grid(&self, grid_cell: usize) -> Option<usize> {
        self.cell_of_grid[grid_cell]
    }

    /// Rest positions, `d` entries per node.
    pub fn rest_positions(&self) -> &[f64] {
        &self.rest
    }

    /// Lumped mass per node.
    pub fn node_masses(&self) -> &[f64] {
        &self.mass
    }

    /// Lumped mass per degree of freedom.
    pub fn dof_masses(&self) -> Vec<f64> {
        let d = self.dim();
        self.mass.iter().flat_map(|&m| std::iter::repeat_n(m, d)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn quadrature(&self) -> &[QuadPoint] {
        &self.quad
    }

    /// Half bandwidth of the dof-level stiffness matrix.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }
}

fn quadrature(d: usize, h: f64) -> Vec<QuadPoint> {
    let gp = gauss_points();
    let nc = 1usize << d;
    let weight = h.powi(d as i32) / nc as f64;
    (0..nc)
        .map(|q| {
            let xi: Vec<f64> = (0..d).map(|k| gp[(q >> k) & 1]).collect();
            let grads = (0..nc)
                .map(|a| {
                    let mut g = [0.0; 3];
                    for k in 0..d {
                        let mut v = 1.0 / h;
                        for m in 0..d {
                            let bit = (a >> m) & 1;
                            if m == k {
                                v *= if bit == 1 { 1.0 } else { -1.0 };
                            } else {
                                v *= if bit == 1 { xi[m] } else { 1.0 - xi[m] };
                            }
                        }
                        g[k] = v;
                    }
                    g
                })
                .collect();
            QuadPoint { weight, grads }
        })
        .collect()
}

/// Full-domain mesh, as used by the simulator.
pub fn build_mesh(grid: &GridSpec, rho: f64) -> Mesh {
    Mesh::full(grid, rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_2d_and_3d() {
        let g = GridSpec::new(&[2, 2], 0.5).unwrap();
        let m = build_mesh(&g, 1000.0);
        assert_eq!((m.num_nodes(), m.num_cells()), (9, 4));
        let g = GridSpec::new(&[2, 2, 2], 0.5).unwrap();
        let m = build_mesh(&g, 1000.0);
        assert_eq!((m.num_nodes(), m.num_cells()), (27, 8));
    }

    #[test]
    fn lumped_mass_is_total_mass() {
        let g = GridSpec::new(&[5, 3, 4], 0.2).unwrap();
        let m = build_mesh(&g, 1000.0);
        let expected = 1000.0 * 60.0 * 0.008;
        assert!((m.total_mass() - expected).abs() < 1e-12 * expected);
        assert!(m.node_masses().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn subset_mesh_renumbers() {
        let g = GridSpec::new(&[4, 4], 0.25).unwrap();
        let m = Mesh::from_cells(&g, &[5, 6], 1.0);
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.num_nodes(), 6);
        assert_eq!(m.cell_of_grid(6), Some(1));
        assert_eq!(m.cell_of_grid(0), None);
    }

    #[test]
    fn gradients_reproduce_linear_fields() {
        // sum_a x_a (x) grad N_a = identity at every quadrature point.
        let g = GridSpec::new(&[2, 2, 2], 0.3).unwrap();
        let m = build_mesh(&g, 1.0);
        let nodes = m.cell_nodes(3);
        for qp in m.quadrature() {
            for i in 0..3 {
                for j in 0..3 {
                    let mut f = 0.0;
                    for (a, &n) in nodes.iter().enumerate() {
                        f += m.rest_positions()[n * 3 + i] * qp.grads[a][j];
                    }
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((f - expected).abs() < 1e-12);
                }
            }
            let wsum: f64 = m.quadrature().iter().map(|q| q.weight).sum();
            assert!((wsum - 0.027).abs() < 1e-15);
        }
    }

    #[test]
    fn bandwidth_covers_every_cell() {
        let g = GridSpec::new(&[6, 3], 0.1).unwrap();
        let m = build_mesh(&g, 1.0);
        for c in 0..m.num_cells() {
            let n = m.cell_nodes(c);
            let span = (n.iter().max().unwrap() - n.iter().min().unwrap()) * 2 + 1;
            assert!(span <= m.bandwidth());
        }
    }
}
