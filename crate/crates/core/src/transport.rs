//! Entropic optimal transport on the grid: Gaussian heat-kernel blurs,
//! Sinkhorn distances and convolutional barycenters with unrolled
//! reverse-mode gradients.
//!
//! The per-axis Gaussian kernel `exp(-|x - y|^2 / eps)` is symmetrically
//! rescaled to be doubly stochastic, so blurring preserves mass and fixes
//! constants even next to the domain boundary. All scaling iterations run
//! on logarithms of the scaling variables.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{DensityField, GridSpec};

/// Uniform mass added to every cell before transport, then renormalized.
pub const MASS_FLOOR: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("barycenter needs at least one base")]
    NoBases,
    #[error("max_iters must be at least 1")]
    MaxIters,
    #[error("base {0} is on a different grid than base 0")]
    GridMismatch(usize),
    #[error("base {0} has zero total mass")]
    ZeroMass(usize),
    #[error("weight vector has {got} entries, expected {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights {0:?} are not on the probability simplex")]
    NotSimplex(Vec<f64>),
    #[error("field has {got} values, grid has {expected} cells")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Barycentric weights `alpha`: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self, TransportError> {
        let sum: f64 = alpha.iter().sum();
        if alpha.is_empty() || alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(TransportError::NotSimplex(alpha));
        }
        Ok(Self(alpha))
    }

    pub fn one_hot(m: usize, i: usize) -> Self {
        let mut a = vec![0.0; m];
        a[i] = 1.0;
        Self(a)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-axis log kernels for one grid and epsilon.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    dims: Vec<usize>,
    cell_size: f64,
    epsilon: f64,
    log_k: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
}

impl HeatKernel {
    pub fn new(grid: &GridSpec, epsilon: f64) -> Result<Self, TransportError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(TransportError::Epsilon(epsilon));
        }
        let h = grid.cell_size();
        let log_k: Vec<Vec<f64>> = grid
            .dims()
            .iter()
            .map(|&n| balanced_log_kernel(n, h, epsilon))
            .collect();
        let k = log_k.iter().map(|l| l.iter().map(|v| v.exp()).collect()).collect();
        Ok(Self {
            dims: grid.dims().to_vec(),
            cell_size: h,
            epsilon,
            log_k,
            k,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Direct-domain separable blur.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        let mut cur = field.to_vec();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..self.dims.len() {
            let n = self.dims[axis];
            let kernel = &self.k[axis];
            for_each_line(&self.dims, axis, |start, stride| {
                for i in 0..n {
                    let row = &kernel[i * n..(i + 1) * n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += row[j] * cur[start + j * stride];
                    }
                    next[start + i * stride] = acc;
                }
            });
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// `log K(exp(f))`, axis by axis.
    pub fn log_apply(&self, f: &[f64]) -> Vec<f64> {
        let mut cur = f.to_vec();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..self.dims.len() {
            log_conv_axis(&self.dims, axis, &self.log_k[axis], &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Vector-Jacobian product of [`HeatKernel::log_apply`] at `f`.
    pub fn log_apply_vjp(&self, f: &[f64], out_bar: &[f64]) -> Vec<f64> {
        let d = self.dims.len();
        let mut stages = Vec::with_capacity(d + 1);
        stages.push(f.to_vec());
        for axis in 0..d {
            let mut next = vec![0.0; f.len()];
            log_conv_axis(&self.dims, axis, &self.log_k[axis], &stages[axis], &mut next);
            stages.push(next);
        }
        let mut bar = out_bar.to_vec();
        for axis in (0..d).rev() {
            bar = log_conv_axis_vjp(
                &self.dims,
                axis,
                &self.log_k[axis],
                &stages[axis],
                &stages[axis + 1],
                &bar,
            );
        }
        bar
    }

    /// Like [`HeatKernel::log_apply`] but with the squared displacement
    /// along `cost_axis` multiplied into that axis' kernel.
    fn log_apply_cost(&self, f: &[f64], cost_axis: usize) -> Vec<f64> {
        let n = self.dims[cost_axis];
        let mut weighted = self.log_k[cost_axis].clone();
        for i in 0..n {
            for j in 0..n {
                let dx = (i as f64 - j as f64) * self.cell_size;
                weighted[i * n + j] += (dx * dx).ln();
            }
        }
        let mut cur = f.to_vec();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..self.dims.len() {
            let lk = if axis == cost_axis {
                &weighted
            } else {
                &self.log_k[axis]
            };
            log_conv_axis(&self.dims, axis, lk, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Symmetric Sinkhorn balancing of the 1D Gibbs kernel so every row and
/// column sums to one.
fn balanced_log_kernel(n: usize, h: f64, epsilon: f64) -> Vec<f64> {
    let base: Vec<f64> = (0..n * n)
        .map(|ij| {
            let d = ((ij / n) as f64 - (ij % n) as f64) * h;
            -d * d / epsilon
        })
        .collect();
    let mut s = vec![0.0; n];
    let mut row = vec![0.0; n];
    for _ in 0..100_000 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            row[i] = logsumexp((0..n).map(|j| base[i * n + j] + s[j]));
            worst = worst.max((row[i] + s[i]).abs());
        }
        if worst < 1e-15 {
            break;
        }
        for i in 0..n {
            s[i] = 0.5 * (s[i] - row[i]);
        }
    }
    (0..n * n).map(|ij| base[ij] + (s[ij / n] + s[ij % n])).collect()
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Calls `f(start, stride)` for every 1D line of the row-major tensor along `axis`.
fn for_each_line(dims: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let n = dims[axis];
    for o in 0..outer {
        for inner in 0..stride {
            f(o * n * stride + inner, stride);
        }
    }
}

fn log_conv_axis(dims: &[usize], axis: usize, lk: &[f64], input: &[f64], out: &mut [f64]) {
    let n = dims[axis];
    let mut line = vec![0.0; n];
    let mut terms = vec![0.0; n];
    for_each_line(dims, axis, |start, stride| {
        for j in 0..n {
            line[j] = input[start + j * stride];
        }
        for i in 0..n {
            let row = &lk[i * n..(i + 1) * n];
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                terms[j] = row[j] + line[j];
                m = m.max(terms[j]);
            }
            out[start + i * stride] = if m == f64::NEG_INFINITY {
                m
            } else {
                let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
                m + s.ln()
            };
        }
    });
}

fn log_conv_axis_vjp(
    dims: &[usize],
    axis: usize,
    lk: &[f64],
    input: &[f64],
    output: &[f64],
    out_bar: &[f64],
) -> Vec<f64> {
    let n = dims[axis];
    let mut bar = vec![0.0; input.len()];
    for_each_line(dims, axis, |start, stride| {
        for i in 0..n {
            let yb = out_bar[start + i * stride];
            if yb == 0.0 {
                continue;
            }
            let y = output[start + i * stride];
            for j in 0..n {
                let idx = start + j * stride;
                bar[idx] += yb * (lk[i * n + j] + input[idx] - y).exp();
            }
        }
    });
    bar
}

/// Separable Gaussian blur with standard deviation `sqrt(epsilon / 2)`.
pub fn heat_convolution(grid: &GridSpec, field: &[f64], epsilon: f64) -> Result<Vec<f64>, TransportError> {
    if field.len() != grid.num_cells() {
        return Err(TransportError::Length {
            expected: grid.num_cells(),
            got: field.len(),
        });
    }
    Ok(HeatKernel::new(grid, epsilon)?.apply(field))
}

/// Default regularization: squared width of two cells.
pub fn default_epsilon(grid: &GridSpec) -> f64 {
    (2.0 * grid.cell_size()).powi(2)
}

fn floored_log(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum::<f64>() + MASS_FLOOR * values.len() as f64;
    values.iter().map(|v| ((v + MASS_FLOOR) / total).ln()).collect()
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// Transport cost of the entropic plan, approximating W2^2.
    pub cost: f64,
    pub iterations: usize,
    /// L1 error of the first marginal at exit.
    pub residual: f64,
    pub converged: bool,
    pub log_u: Vec<f64>,
    pub log_v: Vec<f64>,
}

/// Entropic approximation of the squared 2-Wasserstein distance.
pub fn sinkhorn_distance(
    p: &DensityField,
    q: &DensityField,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornResult, TransportError> {
    if p.grid() != q.grid() {
        return Err(TransportError::GridMismatch(1));
    }
    if max_iters == 0 {
        return Err(TransportError::MaxIters);
    }
    let kernel = HeatKernel::new(p.grid(), epsilon)?;
    let lp = floored_log(p.values());
    let lq = floored_log(q.values());
    let n = lp.len();
    let mut lu = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let kv = kernel.log_apply(&lv);
        for i in 0..n {
            lu[i] = lp[i] - kv[i];
        }
        let ku = kernel.log_apply(&lu);
        for i in 0..n {
            lv[i] = lq[i] - ku[i];
        }
        let kv = kernel.log_apply(&lv);
        residual = (0..n).map(|i| ((lu[i] + kv[i]).exp() - lp[i].exp()).abs()).sum();
        if residual < tol {
            break;
        }
    }
    let converged = residual < tol;
    if !converged {
        log::warn!("sinkhorn stopped after {iterations} iterations with residual {residual:e}");
    }
    let mut cost = 0.0;
    for axis in 0..p.grid().dim() {
        let kcv = kernel.log_apply_cost(&lv, axis);
        cost += (0..n).map(|i| (lu[i] + kcv[i]).exp()).sum::<f64>();
    }
    Ok(SinkhornResult {
        cost,
        iterations,
        residual,
        converged,
        log_u: lu,
        log_v: lv,
    })
}

#[derive(Debug)]
struct Prepared {
    grid: GridSpec,
    kernel: HeatKernel,
    log_bases: Vec<Vec<f64>>,
}

/// Bases, regularization and iteration budget of a barycenter computation.
#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    prepared: Arc<Prepared>,
    max_iters: usize,
    tol: f64,
}

impl BarycenterProblem {
    pub fn new(bases: &[DensityField], epsilon: f64, max_iters: usize, tol: f64) -> Result<Self, TransportError> {
        let first = bases.first().ok_or(TransportError::NoBases)?;
        if max_iters == 0 {
            return Err(TransportError::MaxIters);
        }
        for (i, b) in bases.iter().enumerate() {
            if b.grid() != first.grid() {
                return Err(TransportError::GridMismatch(i));
            }
            if b.values().iter().sum::<f64>() <= 0.0 {
                return Err(TransportError::ZeroMass(i));
            }
        }
        let kernel = HeatKernel::new(first.grid(), epsilon)?;
        Ok(Self {
            prepared: Arc::new(Prepared {
                grid: first.grid().clone(),
                kernel,
                log_bases: bases.iter().map(|b| floored_log(b.values())).collect(),
            }),
            max_iters,
            tol,
        })
    }

    /// Default epsilon, iteration cap and tolerance.
    pub fn with_defaults(bases: &[DensityField]) -> Result<Self, TransportError> {
        let eps = default_epsilon(bases.first().ok_or(TransportError::NoBases)?.grid());
        Self::new(bases, eps, DEFAULT_MAX_ITERS, DEFAULT_TOL)
    }

    pub fn num_bases(&self) -> usize {
        self.prepared.log_bases.len()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.prepared.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.prepared.kernel.epsilon()
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

/// Log scaling variables `v_k` at the start of one barycenter iteration.
#[derive(Debug, Clone)]
struct IterState {
    log_v: Vec<Vec<f64>>,
}

struct IterOut {
    next: IterState,
    log_bar: Vec<f64>,
}

/// Everything needed to rerun the barycenter iteration and to
/// differentiate it.
#[derive(Debug, Clone)]
pub struct BarycenterTape {
    prepared: Arc<Prepared>,
    alpha: Vec<f64>,
    states: Vec<IterState>,
    converged: bool,
    last_change: f64,
}

impl BarycenterTape {
    pub fn iterations(&self) -> usize {
        self.states.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Reruns the recorded number of iterations from scratch.
    pub fn replay(&self) -> Vec<f64> {
        let mut state = initial_state(&self.prepared);
        let mut log_bar = Vec::new();
        for _ in 0..self.states.len() {
            let out = iterate(&self.prepared, &self.alpha, &state);
            state = out.next;
            log_bar = out.log_bar;
        }
        output_field(&self.prepared, &log_bar)
            .map(|f| f.values().to_vec())
            .unwrap_or_default()
    }
}

fn initial_state(p: &Prepared) -> IterState {
    let n = p.grid.num_cells();
    IterState {
        log_v: vec![vec![0.0; n]; p.log_bases.len()],
    }
}

struct Intermediates {
    la: Vec<Vec<f64>>,
    ka: Vec<Vec<f64>>,
}

fn forward_parts(p: &Prepared, s: &IterState) -> Intermediates {
    let n = p.grid.num_cells();
    let mut la = Vec::with_capacity(s.log_v.len());
    let mut ka = Vec::with_capacity(s.log_v.len());
    for (k, lv) in s.log_v.iter().enumerate() {
        let u = p.kernel.log_apply(lv);
        let a: Vec<f64> = (0..n).map(|c| p.log_bases[k][c] - u[c]).collect();
        ka.push(p.kernel.log_apply(&a));
        la.push(a);
    }
    Intermediates { la, ka }
}

/// One iterated-Bregman-projection step:
/// `a_k = p_k / K v_k`, `bar = prod (v_k K a_k)^alpha_k`, `v_k = bar / K a_k`.
fn iterate(p: &Prepared, alpha: &[f64], s: &IterState) -> IterOut {
    let n = p.grid.num_cells();
    let m = alpha.len();
    let parts = forward_parts(p, s);
    let mut log_bar = vec![0.0; n];
    let mut terms = vec![0.0; m];
    for c in 0..n {
        for k in 0..m {
            terms[k] = alpha[k] * (s.log_v[k][c] + parts.ka[k][c]);
        }
        // Order-independent sum so permuting the bases is bit-exact.
        terms.sort_by(f64::total_cmp);
        log_bar[c] = terms.iter().sum();
    }
    let log_v = (0..m)
        .map(|k| (0..n).map(|c| log_bar[c] - parts.ka[k][c]).collect())
        .collect();
    IterOut {
        next: IterState { log_v },
        log_bar,
    }
}

fn output_field(p: &Prepared, log_bar: &[f64]) -> Result<DensityField, TransportError> {
    Ok(DensityField::from_unnormalized(
        p.grid.clone(),
        normalized_exp(log_bar),
    )?)
}

fn normalized_exp(log_v: &[f64]) -> Vec<f64> {
    let m = log_v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_v.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Entropic Wasserstein barycenter of the bases under weights `w`.
pub fn barycenter(
    problem: &BarycenterProblem,
    w: &WeightVector,
) -> Result<(DensityField, BarycenterTape), TransportError> {
    let p = &problem.prepared;
    if w.len() != p.log_bases.len() {
        return Err(TransportError::WeightCount {
            expected: p.log_bases.len(),
            got: w.len(),
        });
    }
    let alpha = w.as_slice().to_vec();
    let mut state = initial_state(p);
    let mut states = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut log_bar = Vec::new();
    let mut change = f64::INFINITY;
    for _ in 0..problem.max_iters {
        let out = iterate(p, &alpha, &state);
        states.push(std::mem::replace(&mut state, out.next));
        let mu = normalized_exp(&out.log_bar);
        log_bar = out.log_bar;
        if let Some(prev) = &prev {
            change = mu.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum();
            if change < problem.tol {
                break;
            }
        }
        prev = Some(mu);
    }
    let converged = change < problem.tol;
    if !converged {
        log::debug!("barycenter hit max_iters {} with change {change:e}", problem.max_iters);
    }
    let field = output_field(p, &log_bar)?;
    Ok((
        field,
        BarycenterTape {
            prepared: p.clone(),
            alpha,
            states,
            converged,
            last_change: change,
        },
    ))
}

/// Gradient of `<upstream, barycenter(alpha)>` with respect to alpha, by
/// reverse replay of the recorded iterations. With `project`, the result
/// is projected onto the simplex tangent space (zero sum).
pub fn barycenter_vjp(tape: &BarycenterTape, upstream: &[f64], project: bool) -> Result<Vec<f64>, TransportError> {
    let p = &tape.prepared;
    let n = p.grid.num_cells();
    if upstream.len() != n {
        return Err(TransportError::Length {
            expected: n,
            got: upstream.len(),
        });
    }
    let m = tape.alpha.len();
    let mut alpha_bar = vec![0.0; m];
    let iters = tape.states.len();
    if iters == 0 || upstream.iter().all(|&g| g == 0.0) {
        return Ok(alpha_bar);
    }
    let last = iterate(p, &tape.alpha, &tape.states[iters - 1]);
    let mu = normalized_exp(&last.log_bar);
    let gm: f64 = mu.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let mut bar_out: Vec<f64> = (0..n).map(|c| mu[c] * (upstream[c] - gm)).collect();

    let mut v_bar = vec![vec![0.0; n]; m];
    for t in (0..iters).rev() {
        let s = &tape.states[t];
        let parts = forward_parts(p, s);
        let mut lbar_bar = std::mem::take(&mut bar_out);
        if lbar_bar.is_empty() {
            lbar_bar = vec![0.0; n];
        }
        for vb in &v_bar {
            for c in 0..n {
                lbar_bar[c] += vb[c];
            }
        }
        let mut new_v_bar = Vec::with_capacity(m);
        for k in 0..m {
            let w = tape.alpha[k];
            alpha_bar[k] += (0..n)
                .map(|c| lbar_bar[c] * (s.log_v[k][c] + parts.ka[k][c]))
                .sum::<f64>();
            let ka_bar: Vec<f64> = (0..n).map(|c| w * lbar_bar[c] - v_bar[k][c]).collect();
            let la_bar = p.kernel.log_apply_vjp(&parts.la[k], &ka_bar);
            let u_bar: Vec<f64> = la_bar.iter().map(|v| -v).collect();
            let mut vb = p.kernel.log_apply_vjp(&s.log_v[k], &u_bar);
            for c in 0..n {
                vb[c] += w * lbar_bar[c];
            }
            new_v_bar.push(vb);
        }
        v_bar = new_v_bar;
    }
    if project {
        let mean = alpha_bar.iter().sum::<f64>() / m as f64;
        for g in &mut alpha_bar {
            *g -= mean;
        }
    }
    Ok(alpha_bar)
}
