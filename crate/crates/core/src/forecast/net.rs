//! Autoregressive LSTM encoder–decoder with a Gaussian output head.
//!
//! Positions are handled in window-relative, scaled coordinates: every
//! sample is shifted by the last observed position `p_t` and multiplied by
//! `scale`. The decoder is seeded with the final encoder state and the
//! relative last position (the origin); each later step is fed the previous
//! predicted mean. The head maps the top decoder output to
//! `[μ_k, log σ²_k]`, which is mapped back to world metres on the way out.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GaussianForecast, TrajectoryWindow};

pub const INPUT_SIZE: usize = 3;
pub const HEAD_SIZE: usize = 6;
const GATES: usize = 4;

#[derive(Debug, Clone, Copy)]
struct CellOffsets {
    input: usize,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

/// Offsets of every tensor inside the flat weight vector.
#[derive(Debug, Clone)]
pub struct Layout {
    hidden: usize,
    encoder: Vec<CellOffsets>,
    decoder: Vec<CellOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    pub fn new(hidden: usize, layers: usize) -> Self {
        let mut at = 0;
        let stack = |at: &mut usize| {
            (0..layers)
                .map(|l| {
                    let input = if l == 0 { INPUT_SIZE } else { hidden };
                    let w_ih = *at;
                    *at += GATES * hidden * input;
                    let w_hh = *at;
                    *at += GATES * hidden * hidden;
                    let bias = *at;
                    *at += GATES * hidden;
                    CellOffsets { input, w_ih, w_hh, bias }
                })
                .collect::<Vec<_>>()
        };
        let encoder = stack(&mut at);
        let decoder = stack(&mut at);
        let head_w = at;
        at += HEAD_SIZE * hidden;
        let head_b = at;
        at += HEAD_SIZE;
        Self { hidden, encoder, decoder, head_w, head_b, total: at }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Index ranges of all forget-gate biases.
    fn forget_biases(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let h = self.hidden;
        self.encoder.iter().chain(self.decoder.iter()).map(move |c| c.bias + h..c.bias + 2 * h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub hidden: usize,
    pub layers: usize,
    /// Multiplier applied to window-relative metres before entering the net.
    pub scale: f64,
    pub weights: Vec<f64>,
}

impl NetParams {
    pub fn zeros(hidden: usize, layers: usize, scale: f64) -> Self {
        let n = Layout::new(hidden, layers).len();
        Self { hidden, layers, scale, weights: vec![0.0; n] }
    }

    /// Uniform `±1/√H` initialisation with forget-gate biases at 1.
    pub fn init<R: Rng>(hidden: usize, layers: usize, scale: f64, rng: &mut R) -> Self {
        let layout = Layout::new(hidden, layers);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut weights: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-k..k)).collect();
        for r in layout.forget_biases() {
            weights[r].iter_mut().for_each(|w| *w = 1.0);
        }
        Self { hidden, layers, scale, weights }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.hidden, self.layers)
    }

    pub fn is_consistent(&self) -> bool {
        self.hidden > 0
            && self.layers > 0
            && self.scale > 0.0
            && self.weights.len() == self.layout().len()
            && self.weights.iter().all(|w| w.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += W x` for row-major `W` (rows × x.len()).
#[inline]
fn gemv_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Wᵀ v`.
#[inline]
fn gemv_t_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (r, &vr) in v.iter().enumerate() {
        if vr != 0.0 {
            axpy(vr, &w[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `G += v xᵀ`.
#[inline]
fn ger_acc(g: &mut [f64], v: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &vr) in v.iter().enumerate() {
        if vr != 0.0 {
            axpy(vr, x, &mut g[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one LSTM cell step needs for backpropagation.
#[derive(Debug, Clone, Default)]
struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl CellCache {
    fn sized(input: usize, hidden: usize) -> Self {
        Self {
            x: vec![0.0; input],
            h_prev: vec![0.0; hidden],
            c_prev: vec![0.0; hidden],
            gates: vec![0.0; GATES * hidden],
            c: vec![0.0; hidden],
            tanh_c: vec![0.0; hidden],
            h: vec![0.0; hidden],
        }
    }
}

fn cell_forward(w: &[f64], off: &CellOffsets, hidden: usize, cache: &mut CellCache) {
    let h = hidden;
    let gates = &mut cache.gates;
    gates.copy_from_slice(&w[off.bias..off.bias + GATES * h]);
    gemv_acc(gates, &w[off.w_ih..off.w_ih + GATES * h * off.input], &cache.x);
    gemv_acc(gates, &w[off.w_hh..off.w_hh + GATES * h * h], &cache.h_prev);
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j]);
        let g = gates[2 * h + j].tanh();
        let o = sigmoid(gates[3 * h + j]);
        gates[j] = i;
        gates[h + j] = f;
        gates[2 * h + j] = g;
        gates[3 * h + j] = o;
        let c = f * cache.c_prev[j] + i * g;
        let tc = c.tanh();
        cache.c[j] = c;
        cache.tanh_c[j] = tc;
        cache.h[j] = o * tc;
    }
}

/// Scratch for one cell's backward pass.
#[derive(Debug, Clone, Default)]
struct CellGrad {
    da: Vec<f64>,
    dx: Vec<f64>,
    dh_prev: Vec<f64>,
    dc_prev: Vec<f64>,
}

/// Backprop through one cell given `dh` (total gradient on the output) and
/// `dc` (gradient on the cell state from the next step).
fn cell_backward(
    w: &[f64],
    grad: &mut [f64],
    off: &CellOffsets,
    hidden: usize,
    cache: &CellCache,
    dh: &[f64],
    dc_next: &[f64],
    out: &mut CellGrad,
) {
    let h = hidden;
    out.da.resize(GATES * h, 0.0);
    out.dc_prev.resize(h, 0.0);
    for j in 0..h {
        let i = cache.gates[j];
        let f = cache.gates[h + j];
        let g = cache.gates[2 * h + j];
        let o = cache.gates[3 * h + j];
        let tc = cache.tanh_c[j];
        let d_o = dh[j] * tc;
        let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * cache.c_prev[j];
        out.dc_prev[j] = dc * f;
        out.da[j] = d_i * i * (1.0 - i);
        out.da[h + j] = d_f * f * (1.0 - f);
        out.da[2 * h + j] = d_g * (1.0 - g * g);
        out.da[3 * h + j] = d_o * o * (1.0 - o);
    }
    let w_ih = off.w_ih..off.w_ih + GATES * h * off.input;
    let w_hh = off.w_hh..off.w_hh + GATES * h * h;
    ger_acc(&mut grad[w_ih.clone()], &out.da, &cache.x);
    ger_acc(&mut grad[w_hh.clone()], &out.da, &cache.h_prev);
    axpy(1.0, &out.da, &mut grad[off.bias..off.bias + GATES * h]);
    out.dx.clear();
    out.dx.resize(off.input, 0.0);
    gemv_t_acc(&mut out.dx, &w[w_ih], &out.da);
    out.dh_prev.clear();
    out.dh_prev.resize(h, 0.0);
    gemv_t_acc(&mut out.dh_prev, &w[w_hh], &out.da);
}

/// Forward activations kept for one sequence.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    encoder: Vec<Vec<CellCache>>,
    decoder: Vec<Vec<CellCache>>,
    t_in: usize,
    t_out: usize,
    scale: f64,
}

impl Tape {
    fn prepare(&mut self, layout: &Layout, t_in: usize, t_out: usize) {
        let h = layout.hidden;
        let make = |steps: usize, cells: &[CellOffsets]| -> Vec<Vec<CellCache>> {
            (0..steps).map(|_| cells.iter().map(|c| CellCache::sized(c.input, h)).collect()).collect()
        };
        let fits = |tape: &Vec<Vec<CellCache>>, steps: usize| {
            tape.len() >= steps && tape.first().is_none_or(|s| s.len() == layout.encoder.len() && s[0].h.len() == h)
        };
        if !fits(&self.encoder, t_in) {
            self.encoder = make(t_in, &layout.encoder);
        }
        if !fits(&self.decoder, t_out) {
            self.decoder = make(t_out, &layout.decoder);
        }
        self.t_in = t_in;
        self.t_out = t_out;
    }
}

fn run_stack(
    w: &[f64],
    cells: &[CellOffsets],
    hidden: usize,
    step: &mut [CellCache],
    state: &mut [(Vec<f64>, Vec<f64>)],
    x: &[f64],
) {
    for (l, off) in cells.iter().enumerate() {
        let (below, rest) = step.split_at_mut(l);
        let cache = &mut rest[0];
        if l == 0 {
            cache.x.copy_from_slice(x);
        } else {
            cache.x.copy_from_slice(&below[l - 1].h);
        }
        cache.h_prev.copy_from_slice(&state[l].0);
        cache.c_prev.copy_from_slice(&state[l].1);
        cell_forward(w, off, hidden, cache);
        state[l].0.copy_from_slice(&cache.h);
        state[l].1.copy_from_slice(&cache.c);
    }
}

/// Forward pass recording activations into `tape`.
pub fn forward_with_tape(
    params: &NetParams,
    window: &TrajectoryWindow,
    t_out: usize,
    tape: &mut Tape,
) -> GaussianForecast {
    let layout = params.layout();
    let h = params.hidden;
    let w = &params.weights;
    let origin = window.last();
    let scale = params.scale;
    tape.prepare(&layout, window.len(), t_out);
    tape.scale = scale;

    let mut state: Vec<(Vec<f64>, Vec<f64>)> = (0..params.layers).map(|_| (vec![0.0; h], vec![0.0; h])).collect();
    for (t, p) in window.positions.iter().enumerate() {
        let rel = (p - origin) * scale;
        run_stack(w, &layout.encoder, h, &mut tape.encoder[t], &mut state, rel.as_slice());
    }

    let head_w = &w[layout.head_w..layout.head_w + HEAD_SIZE * h];
    let head_b = &w[layout.head_b..layout.head_b + HEAD_SIZE];
    let log_scale2 = 2.0 * scale.ln();
    let mut x = [0.0; INPUT_SIZE];
    let mut mu = Vec::with_capacity(t_out);
    let mut log_var = Vec::with_capacity(t_out);
    for k in 0..t_out {
        run_stack(w, &layout.decoder, h, &mut tape.decoder[k], &mut state, &x);
        let o = &tape.decoder[k][params.layers - 1].h;
        let mut y = [0.0; HEAD_SIZE];
        y.copy_from_slice(head_b);
        gemv_acc(&mut y, head_w, o);
        x.copy_from_slice(&y[..INPUT_SIZE]);
        mu.push(origin + Vector3::new(y[0], y[1], y[2]) / scale);
        log_var.push(Vector3::new(y[3] - log_scale2, y[4] - log_scale2, y[5] - log_scale2));
    }
    GaussianForecast { mu, log_var, dt: window.dt }
}

/// Predict `t_out` future positions from `window`.
pub fn forecast(params: &NetParams, window: &TrajectoryWindow, t_out: usize) -> GaussianForecast {
    let mut tape = Tape::default();
    forward_with_tape(params, window, t_out, &mut tape)
}

/// Accumulate into `grad` the parameter gradient of a scalar loss whose
/// gradients with respect to the forecast means (metres) and log-variances
/// are `d_mu` and `d_log_var`.
pub fn backward(params: &NetParams, tape: &Tape, d_mu: &[Vector3<f64>], d_log_var: &[Vector3<f64>], grad: &mut [f64]) {
    let layout = params.layout();
    let h = params.hidden;
    let layers = params.layers;
    let w = &params.weights;
    let top = layers - 1;
    let inv_scale = 1.0 / tape.scale;

    let mut dh_next: Vec<Vec<f64>> = vec![vec![0.0; h]; layers];
    let mut dc_next: Vec<Vec<f64>> = vec![vec![0.0; h]; layers];
    let mut d_input_next = [0.0; INPUT_SIZE];
    let mut cg = CellGrad::default();
    let mut dh = vec![0.0; h];
    let mut d_above: Vec<f64> = vec![0.0; h];

    let head_w = layout.head_w..layout.head_w + HEAD_SIZE * h;
    let head_b = layout.head_b..layout.head_b + HEAD_SIZE;

    for k in (0..tape.t_out).rev() {
        let mut dy = [0.0; HEAD_SIZE];
        for c in 0..INPUT_SIZE {
            dy[c] = d_mu[k][c] * inv_scale + d_input_next[c];
            dy[INPUT_SIZE + c] = d_log_var[k][c];
        }
        let step = &tape.decoder[k];
        ger_acc(&mut grad[head_w.clone()], &dy, &step[top].h);
        axpy(1.0, &dy, &mut grad[head_b.clone()]);
        d_above.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(&mut d_above, &w[head_w.clone()], &dy);

        for l in (0..layers).rev() {
            for j in 0..h {
                dh[j] = dh_next[l][j] + d_above[j];
            }
            cell_backward(w, grad, &layout.decoder[l], h, &step[l], &dh, &dc_next[l], &mut cg);
            dh_next[l].copy_from_slice(&cg.dh_prev);
            dc_next[l].copy_from_slice(&cg.dc_prev);
            if l > 0 {
                d_above.copy_from_slice(&cg.dx);
            }
        }
        // The first decoder input is the constant origin; later inputs are
        // the previous step's predicted mean.
        d_input_next.copy_from_slice(&cg.dx[..INPUT_SIZE]);
    }

    for t in (0..tape.t_in).rev() {
        let step = &tape.encoder[t];
        d_above.iter_mut().for_each(|v| *v = 0.0);
        for l in (0..layers).rev() {
            for j in 0..h {
                dh[j] = dh_next[l][j] + d_above[j];
            }
            cell_backward(w, grad, &layout.encoder[l], h, &step[l], &dh, &dc_next[l], &mut cg);
            dh_next[l].copy_from_slice(&cg.dh_prev);
            dc_next[l].copy_from_slice(&cg.dc_prev);
            if l > 0 {
                d_above.copy_from_slice(&cg.dx);
            }
        }
    }
}
