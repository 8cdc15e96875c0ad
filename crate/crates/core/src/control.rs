//! Open-loop sinusoid and closed-loop MLP controllers.
//!
//! Both implement [`Controller`], which the simulator queries once per step
//! and differentiates through in the adjoint pass.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENCODING_LEN: usize = 20;
pub const HIDDEN: usize = 64;
/// Default encoding period in time steps.
pub const DEFAULT_PERIOD_STEPS: f64 = 25.0;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("input length {got} does not match network input {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, network needs {expected}")]
    ParamShape { expected: usize, got: usize },
    #[error("tape does not belong to this controller: {0}")]
    TapeMismatch(String),
    #[error("sensor nodes must be distinct (head {head}, center {center}, tail {tail})")]
    SensorNodes { head: usize, center: usize, tail: usize },
    #[error("empty spine set")]
    EmptySpine,
    #[error("encoding period must be positive, got {0}")]
    Period(f64),
    #[error("{path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

/// Wrapped-time features `[sin(2^k pi tau)] ++ [cos(2^k pi tau)]`, `k = 0..9`,
/// with `tau = (t mod T) / T`.
pub fn temporal_encoding(t: f64, period: f64) -> [f64; ENCODING_LEN] {
    // tau is snapped to a 2^-30 lattice so that t and t + T, which differ
    // by rounding in the last bits, produce identical features.
    let scale = (1u64 << 30) as f64;
    let mut tau = ((t / period).rem_euclid(1.0) * scale).round() / scale;
    if tau >= 1.0 {
        tau = 0.0;
    }
    let mut out = [0.0; ENCODING_LEN];
    for k in 0..10 {
        let arg = (1u32 << k) as f64 * PI * tau;
        out[k] = arg.sin();
        out[10 + k] = arg.cos();
    }
    out
}

/// Per-channel amplitude, angular frequency and phase of `a sin(w t + p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopParams {
    pub amplitude: Vec<f64>,
    pub omega: Vec<f64>,
    pub phase: Vec<f64>,
}

impl OpenLoopParams {
    pub fn uniform(channels: usize, amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            amplitude: vec![amplitude; channels],
            omega: vec![omega; channels],
            phase: vec![phase; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.amplitude.len()
    }

    /// `[a0, w0, p0, a1, w1, p1, ...]`
    pub fn flatten(&self) -> Vec<f64> {
        (0..self.channels())
            .flat_map(|k| [self.amplitude[k], self.omega[k], self.phase[k]])
            .collect()
    }

    pub fn unflatten(flat: &[f64]) -> Result<Self, ControlError> {
        if !flat.len().is_multiple_of(3) {
            return Err(ControlError::ParamShape {
                expected: flat.len() / 3 * 3,
                got: flat.len(),
            });
        }
        let c = flat.len() / 3;
        Ok(Self {
            amplitude: (0..c).map(|k| flat[3 * k]).collect(),
            omega: (0..c).map(|k| flat[3 * k + 1]).collect(),
            phase: (0..c).map(|k| flat[3 * k + 2]).collect(),
        })
    }
}

/// `clamp(a sin(w t + p), -1, 1)` per channel.
pub fn open_loop(t: f64, p: &OpenLoopParams) -> Vec<f64> {
    (0..p.channels())
        .map(|k| (p.amplitude[k] * (p.omega[k] * t + p.phase[k]).sin()).clamp(-1.0, 1.0))
        .collect()
}

/// Head, center and tail spine nodes (mesh node ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorNodes {
    pub dim: usize,
    pub head: usize,
    pub center: usize,
    pub tail: usize,
}

impl SensorNodes {
    pub fn new(dim: usize, head: usize, center: usize, tail: usize) -> Result<Self, ControlError> {
        if head == center || head == tail || center == tail {
            return Err(ControlError::SensorNodes { head, center, tail });
        }
        Ok(Self {
            dim,
            head,
            center,
            tail,
        })
    }

    /// Head at max rest x, tail at min rest x, center at min |x|; ties go to
    /// the lowest node id.
    pub fn from_spine(dim: usize, spine: &[usize], rest: &[f64]) -> Result<Self, ControlError> {
        if spine.is_empty() {
            return Err(ControlError::EmptySpine);
        }
        let x = |n: usize| rest[n * dim];
        let mut ids = spine.to_vec();
        ids.sort_unstable();
        let pick = |better: &dyn Fn(f64, f64) -> bool| {
            let mut best = ids[0];
            for &n in &ids[1..] {
                if better(x(n), x(best)) {
                    best = n;
                }
            }
            best
        };
        let head = pick(&|a, b| a > b);
        let tail = pick(&|a, b| a < b);
        let center = pick(&|a, b| a.abs() < b.abs());
        Self::new(dim, head, center, tail)
    }

    /// Sensor feature length: three velocities and two offsets.
    pub fn feature_len(&self) -> usize {
        5 * self.dim
    }

    pub fn input_len(&self) -> usize {
        self.feature_len() + ENCODING_LEN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    /// Head, center, tail.
    pub positions: [Vec<f64>; 3],
    pub velocities: [Vec<f64>; 3],
    /// Head minus center, tail minus center.
    pub offsets: [Vec<f64>; 2],
}

impl SensorReading {
    /// Velocities followed by offsets.
    pub fn features(&self) -> Vec<f64> {
        self.velocities
            .iter()
            .chain(self.offsets.iter())
            .flatten()
            .copied()
            .collect()
    }
}

pub fn read_sensors(q: &[f64], v: &[f64], s: &SensorNodes) -> SensorReading {
    let d = s.dim;
    let at = |x: &[f64], n: usize| x[n * d..n * d + d].to_vec();
    let ids = [s.head, s.center, s.tail];
    let positions = ids.map(|n| at(q, n));
    let velocities = ids.map(|n| at(v, n));
    let off = |a: &Vec<f64>| a.iter().zip(&positions[1]).map(|(x, c)| x - c).collect::<Vec<f64>>();
    let offsets = [off(&positions[0]), off(&positions[2])];
    SensorReading {
        positions,
        velocities,
        offsets,
    }
}

/// Pulls a gradient on the sensor features back to nodal positions and
/// velocities.
fn sensor_features_vjp(s: &SensorNodes, g: &[f64], q_bar: &mut [f64], v_bar: &mut [f64]) {
    let d = s.dim;
    let ids = [s.head, s.center, s.tail];
    for (k, &n) in ids.iter().enumerate() {
        for i in 0..d {
            v_bar[n * d + i] += g[k * d + i];
        }
    }
    for (k, &n) in [s.head, s.tail].iter().enumerate() {
        for i in 0..d {
            let gi = g[3 * d + k * d + i];
            q_bar[n * d + i] += gi;
            q_bar[s.center * d + i] -= gi;
        }
    }
}

/// Fully connected tanh network; every layer, the output included, is
/// followed by tanh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    sizes: Vec<usize>,
    flat: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            flat: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn random(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let b = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                flat.push(rng.gen_range(-b..=b));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            flat,
        }
    }

    /// Two hidden layers of [`HIDDEN`] units.
    pub fn standard_sizes(inputs: usize, outputs: usize) -> Vec<usize> {
        vec![inputs, HIDDEN, HIDDEN, outputs]
    }

    pub fn from_flat(sizes: &[usize], flat: Vec<f64>) -> Result<Self, ControlError> {
        let expected = param_count(sizes);
        if flat.len() != expected {
            return Err(ControlError::ParamShape {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            flat,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offsets of each layer's weight block (row-major `out x in`) and bias.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let l = (off, off + w[0] * w[1], w[0], w[1]);
                off += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    /// Text checkpoint: a header line with the layer sizes, then one value
    /// per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("mlp");
        for n in &self.sizes {
            let _ = write!(s, " {n}");
        }
        s.push('\n');
        for v in &self.flat {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self, ControlError> {
        let err = |msg: String| ControlError::Checkpoint {
            path: path.to_string(),
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("mlp") {
            return Err(err("header must start with 'mlp'".into()));
        }
        let sizes = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|e| err(format!("bad layer size '{p}': {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(err("need at least two positive layer sizes".into()));
        }
        let flat = lines
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad value '{l}': {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_flat(&sizes, flat).map_err(|e| err(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self, ControlError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ControlError::Checkpoint {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        Self::from_text(&text, &p)
    }
}

/// Layer inputs and outputs recorded by [`policy_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTape {
    /// `acts[0]` is the input, `acts[l + 1]` the tanh output of layer `l`.
    acts: Vec<Vec<f64>>,
    num_params: usize,
}

pub fn policy_forward(p: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, MlpTape), ControlError> {
    if input.len() != p.inputs() {
        return Err(ControlError::InputShape {
            expected: p.inputs(),
            got: input.len(),
        });
    }
    let mut acts = vec![input.to_vec()];
    for (w, b, n_in, n_out) in p.layout() {
        let x = acts.last().unwrap();
        let y: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &p.flat[w + o * n_in..w + (o + 1) * n_in];
                let z = row.iter().zip(x).fold(p.flat[b + o], |s, (a, b)| s + a * b);
                z.tanh()
            })
            .collect();
        acts.push(y);
    }
    let out = acts.last().unwrap().clone();
    Ok((
        out,
        MlpTape {
            acts,
            num_params: p.num_params(),
        },
    ))
}

/// Returns `(d/d params, d/d input)` for the given output gradient.
pub fn policy_vjp(p: &MlpParams, tape: &MlpTape, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ControlError> {
    if tape.num_params != p.num_params() || tape.acts.len() != p.sizes.len() {
        return Err(ControlError::TapeMismatch("layer layout differs".into()));
    }
    if upstream.len() != p.outputs() {
        return Err(ControlError::InputShape {
            expected: p.outputs(),
            got: upstream.len(),
        });
    }
    let mut grad = vec![0.0; p.num_params()];
    let mut g = upstream.to_vec();
    let layout = p.layout();
    for (l, &(w, b, n_in, n_out)) in layout.iter().enumerate().rev() {
        let x = &tape.acts[l];
        let y = &tape.acts[l + 1];
        let gz: Vec<f64> = (0..n_out).map(|o| g[o] * (1.0 - y[o] * y[o])).collect();
        let mut gx = vec![0.0; n_in];
        for o in 0..n_out {
            grad[b + o] += gz[o];
            let row = w + o * n_in;
            for i in 0..n_in {
                grad[row + i] += gz[o] * x[i];
                gx[i] += gz[o] * p.flat[row + i];
            }
        }
        g = gx;
    }
    Ok((grad, g))
}

/// What a controller recorded during one forward query.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlTape {
    OpenLoop { t: f64 },
    Mlp(MlpTape),
}

/// A differentiable map from (time, state) to per-channel activations.
pub trait Controller: Send + Sync {
    fn num_outputs(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn forward(&self, t: f64, q: &[f64], v: &[f64]) -> (Vec<f64>, ControlTape);
    /// Accumulates parameter and state gradients for an activation gradient.
    fn backward(
        &self,
        tape: &ControlTape,
        upstream: &[f64],
        param_grad: &mut [f64],
        q_bar: &mut [f64],
        v_bar: &mut [f64],
    ) -> Result<(), ControlError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopController {
    pub params: OpenLoopParams,
}

impl Controller for OpenLoopController {
    fn num_outputs(&self) -> usize {
        self.params.channels()
    }

    fn num_params(&self) -> usize {
        3 * self.params.channels()
    }

    fn params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    fn forward(&self, t: f64, _q: &[f64], _v: &[f64]) -> (Vec<f64>, ControlTape) {
        (open_loop(t, &self.params), ControlTape::OpenLoop { t })
    }

    fn backward(
        &self,
        tape: &ControlTape,
        upstream: &[f64],
        param_grad: &mut [f64],
        _q_bar: &mut [f64],
        _v_bar: &mut [f64],
    ) -> Result<(), ControlError> {
        let ControlTape::OpenLoop { t } = *tape else {
            return Err(ControlError::TapeMismatch("expected an open-loop tape".into()));
        };
        let p = &self.params;
        for k in 0..p.channels() {
            let arg = p.omega[k] * t + p.phase[k];
            let raw = p.amplitude[k] * arg.sin();
            if raw.abs() > 1.0 {
                continue;
            }
            let g = upstream[k];
            let da = p.amplitude[k] * arg.cos();
            param_grad[3 * k] += g * arg.sin();
            param_grad[3 * k + 1] += g * da * t;
            param_grad[3 * k + 2] += g * da;
        }
        Ok(())
    }
}

/// Closed-loop controller: sensor features plus temporal encoding into an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpController {
    pub params: MlpParams,
    pub sensors: SensorNodes,
    /// Encoding period in seconds.
    pub period: f64,
    /// When false the 20 encoding inputs are held at zero.
    pub use_encoding: bool,
}

impl MlpController {
    pub fn new(params: MlpParams, sensors: SensorNodes, period: f64, use_encoding: bool) -> Result<Self, ControlError> {
        if !(period > 0.0) {
            return Err(ControlError::Period(period));
        }
        if params.inputs() != sensors.input_len() {
            return Err(ControlError::InputShape {
                expected: sensors.input_len(),
                got: params.inputs(),
            });
        }
        Ok(Self {
            params,
            sensors,
            period,
            use_encoding,
        })
    }

    pub fn input(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        let mut x = read_sensors(q, v, &self.sensors).features();
        if self.use_encoding {
            x.extend_from_slice(&temporal_encoding(t, self.period));
        } else {
            x.extend_from_slice(&[0.0; ENCODING_LEN]);
        }
        x
    }
}

impl Controller for MlpController {
    fn num_outputs(&self) -> usize {
        self.params.outputs()
    }

    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.params.flat().to_vec()
    }

    fn forward(&self, t: f64, q: &[f64], v: &[f64]) -> (Vec<f64>, ControlTape) {
        let x = self.input(t, q, v);
        let (y, tape) = policy_forward(&self.params, &x).expect("input length checked at construction");
        (y, ControlTape::Mlp(tape))
    }

    fn backward(
        &self,
        tape: &ControlTape,
        upstream: &[f64],
        param_grad: &mut [f64],
        q_bar: &mut [f64],
        v_bar: &mut [f64],
    ) -> Result<(), ControlError> {
        let ControlTape::Mlp(t) = tape else {
            return Err(ControlError::TapeMismatch("expected an MLP tape".into()));
        };
        let (gp, gx) = policy_vjp(&self.params, t, upstream)?;
        for (a, b) in param_grad.iter_mut().zip(&gp) {
            *a += b;
        }
        sensor_features_vjp(&self.sensors, &gx[..self.sensors.feature_len()], q_bar, v_bar);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn open_loop_examples() {
        let h = 3.3e-3;
        let p = OpenLoopParams::uniform(1, 1.0, PI / (6.0 * h), 0.0);
        assert_eq!(open_loop(0.0, &p), vec![0.0]);
        assert!((open_loop(3.0 * h, &p)[0] - 1.0).abs() < 1e-12);
        let p = OpenLoopParams::uniform(2, 0.5, PI / (6.0 * h), 0.0);
        let peak = (0..100)
            .map(|i| open_loop(i as f64 * h, &p)[0].abs())
            .fold(0.0, f64::max);
        assert!((peak - 0.5).abs() < 1e-12);
        let p = OpenLoopParams::uniform(1, 3.0, 1.0, 0.0);
        assert_eq!(open_loop(PI / 2.0, &p), vec![1.0]);
    }

    #[test]
    fn open_loop_flatten_round_trips() {
        let p = OpenLoopParams {
            amplitude: vec![0.1, 0.2],
            omega: vec![3.0, 4.0],
            phase: vec![-1.0, 0.5],
        };
        assert_eq!(OpenLoopParams::unflatten(&p.flatten()).unwrap(), p);
        assert!(OpenLoopParams::unflatten(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn encoding_at_zero_and_half_period() {
        let e = temporal_encoding(0.0, 0.5);
        assert_eq!(&e[..10], &[0.0; 10]);
        assert_eq!(&e[10..], &[1.0; 10]);
        let e = temporal_encoding(0.25, 0.5);
        for k in 0..10 {
            let arg = 2f64.powi(k as i32 - 1) * PI;
            assert!((e[k] - arg.sin()).abs() < 1e-9);
            assert!((e[10 + k] - arg.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn encoding_is_exactly_periodic_on_step_multiples() {
        let h = 3.3e-3;
        let period = 25.0 * h;
        for i in 0..500 {
            let t = i as f64 * h;
            assert_eq!(
                temporal_encoding(t, period),
                temporal_encoding(t + period, period),
                "step {i}"
            );
        }
        assert_eq!(temporal_encoding(period, period), temporal_encoding(0.0, period));
    }

    #[test]
    fn sensor_choice_and_reading() {
        // Spine nodes at x = -1, 0, 0.5, 1 (node ids 4, 2, 7, 1), 2D.
        let mut rest = vec![0.0; 16];
        for (n, x) in [(4, -1.0), (2, 0.0), (7, 0.5), (1, 1.0)] {
            rest[n * 2] = x;
        }
        let s = SensorNodes::from_spine(2, &[7, 1, 4, 2], &rest).unwrap();
        assert_eq!((s.head, s.center, s.tail), (1, 2, 4));
        assert_eq!(s.input_len(), 30);
        let v = vec![0.0; 16];
        let r = read_sensors(&rest, &v, &s);
        assert_eq!(r.offsets, [vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let moved: Vec<f64> = rest
            .iter()
            .enumerate()
            .map(|(i, x)| x + if i % 2 == 0 { 3.0 } else { -2.0 })
            .collect();
        assert_eq!(read_sensors(&moved, &v, &s).offsets, r.offsets);
        assert!(r.velocities.iter().flatten().all(|&x| x == 0.0));
        assert!(SensorNodes::from_spine(2, &[], &rest).is_err());
        assert!(SensorNodes::new(3, 1, 1, 2).is_err());
        assert_eq!(SensorNodes::new(3, 0, 1, 2).unwrap().input_len(), 35);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[5, 4, 4, 2]);
        let (y, _) = policy_forward(&p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        assert!(policy_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn standard_parameter_count() {
        let sizes = MlpParams::standard_sizes(35, 3);
        assert_eq!(
            MlpParams::zeros(&sizes).num_params(),
            35 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3
        );
    }

    #[test]
    fn one_neuron_bias_gradient_is_tanh_derivative() {
        let p = MlpParams::from_flat(&[1, 1], vec![0.7, -0.2]).unwrap();
        let (y, tape) = policy_forward(&p, &[0.9]).unwrap();
        let z: f64 = 0.7 * 0.9 - 0.2;
        assert_eq!(y[0], z.tanh());
        let (g, gx) = policy_vjp(&p, &tape, &[1.0]).unwrap();
        let d = 1.0 - z.tanh().powi(2);
        assert!((g[1] - d).abs() < 1e-15);
        assert!((g[0] - d * 0.9).abs() < 1e-15);
        assert!((gx[0] - d * 0.7).abs() < 1e-15);
    }

    #[test]
    fn vjp_matches_differences() {
        let sizes = [6, 5, 4, 3];
        let p = MlpParams::random(&sizes, 7);
        let x = [0.3, -0.5, 0.8, 0.1, -0.9, 0.4];
        let up = [0.5, -1.0, 0.25];
        let (_, tape) = policy_forward(&p, &x).unwrap();
        let (g, gx) = policy_vjp(&p, &tape, &up).unwrap();
        let f = |p: &MlpParams, x: &[f64]| {
            let (y, _) = policy_forward(p, x).unwrap();
            y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-5;
        for j in 0..p.num_params() {
            let mut a = p.flat().to_vec();
            let mut b = p.flat().to_vec();
            a[j] += h;
            b[j] -= h;
            let fd = (f(&MlpParams::from_flat(&sizes, a).unwrap(), &x)
                - f(&MlpParams::from_flat(&sizes, b).unwrap(), &x))
                / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-6),
                "param {j}: {fd} vs {}",
                g[j]
            );
        }
        for i in 0..x.len() {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            let fd = (f(&p, &a) - f(&p, &b)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-4 * fd.abs().max(1e-6));
        }
    }

    #[test]
    fn vjp_zero_and_linear() {
        let p = MlpParams::random(&[4, 3, 2], 1);
        let (_, tape) = policy_forward(&p, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (g0, x0) = policy_vjp(&p, &tape, &[0.0, 0.0]).unwrap();
        assert!(g0.iter().chain(&x0).all(|&v| v == 0.0));
        let (g1, _) = policy_vjp(&p, &tape, &[0.3, -0.7]).unwrap();
        let (g2, _) = policy_vjp(&p, &tape, &[0.6, -1.4]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let other = MlpParams::random(&[4, 5, 2], 1);
        assert!(policy_vjp(&other, &tape, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let p = MlpParams::random(&[30, 64, 64, 3], 42);
        let back = MlpParams::from_text(&p.to_text(), "mem").unwrap();
        assert_eq!(back, p);
        assert!(MlpParams::from_text("mlp 2 1\n1.0\n", "mem").is_err());
        assert!(MlpParams::from_text("net 2 1\n", "mem").is_err());
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let a = MlpParams::random(&[30, 64, 64, 3], 3);
        assert_eq!(a, MlpParams::random(&[30, 64, 64, 3], 3));
        assert_ne!(a, MlpParams::random(&[30, 64, 64, 3], 4));
        let b = 1.0 / 30f64.sqrt();
        assert!(a.flat()[..30 * 64].iter().all(|w| w.abs() <= b));
    }

    #[test]
    fn encoding_switch_changes_input() {
        let s = SensorNodes::new(2, 0, 1, 2).unwrap();
        let p = MlpParams::zeros(&[30, 4, 1]);
        let on = MlpController::new(p.clone(), s, 0.1, true).unwrap();
        let off = MlpController::new(p, s, 0.1, false).unwrap();
        let q = vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0];
        let v = vec![0.0; 6];
        assert_ne!(on.input(0.0, &q, &v), off.input(0.0, &q, &v));
        assert!(off.input(0.03, &q, &v)[10..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mlp_controller_state_gradient_matches_differences() {
        let s = SensorNodes::new(2, 0, 1, 2).unwrap();
        let p = MlpParams::random(&[30, 8, 8, 2], 5);
        let c = MlpController::new(p, s, 0.1, true).unwrap();
        let q = vec![1.0, 0.1, 0.0, 0.0, -1.0, 0.05];
        let v = vec![0.2, -0.1, 0.3, 0.0, -0.2, 0.4];
        let up = [0.7, -0.3];
        let (_, tape) = c.forward(0.02, &q, &v);
        let mut pg = vec![0.0; c.num_params()];
        let mut qb = vec![0.0; 6];
        let mut vb = vec![0.0; 6];
        c.backward(&tape, &up, &mut pg, &mut qb, &mut vb).unwrap();
        let f = |q: &[f64], v: &[f64]| c.forward(0.02, q, v).0.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        for j in 0..6 {
            let h = 1e-6;
            let mut a = q.clone();
            let mut b = q.clone();
            a[j] += h;
            b[j] -= h;
            assert!(((f(&a, &v) - f(&b, &v)) / (2.0 * h) - qb[j]).abs() < 1e-7);
            let mut a = v.clone();
            let mut b = v.clone();
            a[j] += h;
            b[j] -= h;
            assert!(((f(&q, &a) - f(&q, &b)) / (2.0 * h) - vb[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn open_loop_gradient_matches_differences() {
        let c = OpenLoopController {
            params: OpenLoopParams {
                amplitude: vec![0.5, 0.8],
                omega: vec![10.0, 7.0],
                phase: vec![0.1, -0.3],
            },
        };
        let t = 0.137;
        let up = [1.3, -0.4];
        let (_, tape) = c.forward(t, &[], &[]);
        let mut g = vec![0.0; 6];
        c.backward(&tape, &up, &mut g, &mut [], &mut []).unwrap();
        let base = c.params.flatten();
        for j in 0..6 {
            let h = 1e-6;
            let mut a = base.clone();
            let mut b = base.clone();
            a[j] += h;
            b[j] -= h;
            let f = |p: Vec<f64>| {
                open_loop(t, &OpenLoopParams::unflatten(&p).unwrap())
                    .iter()
                    .zip(&up)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            };
            assert!(((f(a) - f(b)) / (2.0 * h) - g[j]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn outputs_are_bounded(seed in 0u64..1000, x in proptest::collection::vec(-50.0f64..50.0, 7)) {
            let p = MlpParams::random(&[7, 6, 3], seed);
            let (y, _) = policy_forward(&p, &x).unwrap();
            prop_assert!(y.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn open_loop_is_clamped(a in -5.0f64..5.0, w in 0.0f64..100.0, ph in -4.0f64..4.0, t in 0.0f64..10.0) {
            let y = open_loop(t, &OpenLoopParams::uniform(1, a, w, ph));
            prop_assert!(y[0].abs() <= 1.0);
        }

        #[test]
        fn encoding_periodic(i in 0usize..100_000, h in 1e-4f64..1e-2) {
            let t = i as f64 * h;
            let period = DEFAULT_PERIOD_STEPS * h;
            prop_assert_eq!(temporal_encoding(t, period), temporal_encoding(t + period, period));
        }
    }
}
