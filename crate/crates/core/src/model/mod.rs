//! Real-valued CNN → FC(+residual) → LSTM → output forward pass.
//!
//! Weight layout: every dense matrix is stored `out × in` row-major, so a
//! gate matrix has `N_h` rows of length `N_h + L` (the `[h, u]` input), the
//! FC matrix has `L` rows of length `f·ω_s`, and `W_y` has `N_y` rows of
//! length `N_h`. Convolution kernels are `[filter][input channel][tap]`.

pub mod fixed;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::datagen::WindowedSequence;
use crate::error::{invalid, shape, Result};
use crate::fxp::sigmoid;
use crate::quant::Precision;
use crate::tensor::{dot, Matrix};

/// One convolution layer: `filters` kernels of `taps` taps each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub taps: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, taps: usize) -> Self {
        Self { filters, taps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// ω_s: samples per channel in one window.
    pub window: usize,
    /// q: windows consumed before classifying.
    pub steps: usize,
    /// M: input channels.
    pub channels: usize,
    /// N_h: LSTM state size.
    pub hidden: usize,
    /// N_y: output classes.
    pub classes: usize,
    pub conv: Vec<ConvSpec>,
    pub use_cnn: bool,
    pub residual: bool,
}

impl NetworkConfig {
    /// Two layers: 10 filters of 1×5, then 30 filters of 1×3.
    pub const DEFAULT_CONV: [ConvSpec; 2] = [ConvSpec::new(10, 5), ConvSpec::new(30, 3)];

    pub fn new(window: usize, steps: usize, channels: usize, hidden: usize, classes: usize) -> Self {
        Self {
            window,
            steps,
            channels,
            hidden,
            classes,
            conv: Self::DEFAULT_CONV.to_vec(),
            use_cnn: true,
            residual: true,
        }
    }

    /// LSTM-only network fed directly with the raw windows.
    pub fn lstm_only(window: usize, steps: usize, channels: usize, hidden: usize, classes: usize) -> Self {
        Self {
            use_cnn: false,
            conv: Vec::new(),
            ..Self::new(window, steps, channels, hidden, classes)
        }
    }

    /// Length of one flattened input window, `M · ω_s`.
    pub fn input_len(&self) -> usize {
        self.channels * self.window
    }

    /// Rows of each gate matrix: `N_h + M·ω_s`.
    pub fn gate_input_len(&self) -> usize {
        self.hidden + self.input_len()
    }

    pub fn cnn_active(&self) -> bool {
        self.use_cnn && !self.conv.is_empty()
    }

    /// Input depth seen by conv layer `layer`.
    pub fn conv_depth(&self, layer: usize) -> usize {
        if layer == 0 {
            self.channels
        } else {
            self.conv[layer - 1].filters
        }
    }

    /// Length of the flattened last feature map feeding the FC layer.
    pub fn feature_len(&self) -> usize {
        self.conv.last().map_or(0, |c| c.filters * self.window)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.steps == 0 || self.channels == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(invalid("window, steps, channels, hidden and classes must be positive"));
        }
        if self.use_cnn && self.conv.is_empty() {
            return Err(invalid("use_cnn is set but no convolution layers are configured"));
        }
        if self.conv.iter().any(|c| c.filters == 0 || c.taps == 0) {
            return Err(invalid("convolution layers need positive filters and taps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnLayerParams {
    pub filters: usize,
    pub depth: usize,
    pub taps: usize,
    /// `filters · depth · taps` values indexed `[f][c][a]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CnnLayerParams {
    pub fn zeros(filters: usize, depth: usize, taps: usize) -> Self {
        Self {
            filters,
            depth,
            taps,
            weights: vec![0.0; filters * depth * taps],
            bias: vec![0.0; filters],
        }
    }

    pub fn weight(&self, f: usize, c: usize, a: usize) -> f64 {
        self.weights[(f * self.depth + c) * self.taps + a]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    /// `L × (f·ω_s)`
    pub weights: Matrix,
}

/// Gate order used throughout: forget, input, output, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Cell = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cell];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Cell => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `W_f, W_i, W_o, W_c`, each `N_h × (N_h + L)`.
    pub gates: [Matrix; 4],
    pub gate_bias: [Vec<f64>; 4],
    /// `N_y × N_h`
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input_len: usize, classes: usize) -> Self {
        let gate = || Matrix::zeros(hidden, hidden + input_len);
        Self {
            gates: [gate(), gate(), gate(), gate()],
            gate_bias: [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]],
            out_w: Matrix::zeros(classes, hidden),
            out_b: vec![0.0; classes],
        }
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].rows()
    }
}

/// What a parameter tensor is, which decides how it is quantized and stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorRole {
    ConvWeight,
    ConvBias,
    FcWeight,
    GateWeight,
    GateBias,
    OutWeight,
    OutBias,
}

impl TensorRole {
    /// Conv kernels and gate matrices are stored as 2-bit codes; the FC and
    /// output layers stay full precision.
    pub fn quantizable(self) -> bool {
        matches!(self, TensorRole::ConvWeight | TensorRole::GateWeight)
    }

    pub fn is_bias(self) -> bool {
        matches!(self, TensorRole::ConvBias | TensorRole::GateBias | TensorRole::OutBias)
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Every learnable tensor of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub cnn: Vec<CnnLayerParams>,
    pub fc: Option<FcParams>,
    pub lstm: LstmParams,
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (cnn, fc) = if cfg.cnn_active() {
            let cnn = cfg
                .conv
                .iter()
                .enumerate()
                .map(|(l, c)| CnnLayerParams::zeros(c.filters, cfg.conv_depth(l), c.taps))
                .collect();
            let fc = FcParams {
                weights: Matrix::zeros(cfg.input_len(), cfg.feature_len()),
            };
            (cnn, Some(fc))
        } else {
            (Vec::new(), None)
        };
        Self {
            cnn,
            fc,
            lstm: LstmParams::zeros(cfg.hidden, cfg.input_len(), cfg.classes),
        }
    }

    /// Weights uniform in `[-range, range]`; biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(cfg: &NetworkConfig, range: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for t in p.tensors_mut() {
            if !t.role.is_bias() && range > 0.0 {
                for v in t.data.iter_mut() {
                    *v = rng.random_range(-range..=range);
                }
            }
        }
        p
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.cnn.iter().enumerate() {
            out.push(TensorRef {
                name: format!("cnn{l}.weight"),
                role: TensorRole::ConvWeight,
                shape: vec![layer.filters, layer.depth, layer.taps],
                data: &layer.weights,
            });
            out.push(TensorRef {
                name: format!("cnn{l}.bias"),
                role: TensorRole::ConvBias,
                shape: vec![layer.filters],
                data: &layer.bias,
            });
        }
        if let Some(fc) = &self.fc {
            out.push(TensorRef {
                name: "fc.weight".into(),
                role: TensorRole::FcWeight,
                shape: vec![fc.weights.rows(), fc.weights.cols()],
                data: fc.weights.data(),
            });
        }
        for g in Gate::ALL {
            let m = &self.lstm.gates[g as usize];
            out.push(TensorRef {
                name: format!("lstm.w_{}", g.suffix()),
                role: TensorRole::GateWeight,
                shape: vec![m.rows(), m.cols()],
                data: m.data(),
            });
        }
        for g in Gate::ALL {
            let b = &self.lstm.gate_bias[g as usize];
            out.push(TensorRef {
                name: format!("lstm.b_{}", g.suffix()),
                role: TensorRole::GateBias,
                shape: vec![b.len()],
                data: b,
            });
        }
        out.push(TensorRef {
            name: "out.w_y".into(),
            role: TensorRole::OutWeight,
            shape: vec![self.lstm.out_w.rows(), self.lstm.out_w.cols()],
            data: self.lstm.out_w.data(),
        });
        out.push(TensorRef {
            name: "out.b_y".into(),
            role: TensorRole::OutBias,
            shape: vec![self.lstm.out_b.len()],
            data: &self.lstm.out_b,
        });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.cnn.iter_mut().enumerate() {
            let (f, d, m) = (layer.filters, layer.depth, layer.taps);
            out.push(TensorMut {
                name: format!("cnn{l}.weight"),
                role: TensorRole::ConvWeight,
                shape: vec![f, d, m],
                data: &mut layer.weights,
            });
            out.push(TensorMut {
                name: format!("cnn{l}.bias"),
                role: TensorRole::ConvBias,
                shape: vec![f],
                data: &mut layer.bias,
            });
        }
        if let Some(fc) = &mut self.fc {
            let s = vec![fc.weights.rows(), fc.weights.cols()];
            out.push(TensorMut {
                name: "fc.weight".into(),
                role: TensorRole::FcWeight,
                shape: s,
                data: fc.weights.data_mut(),
            });
        }
        let LstmParams {
            gates,
            gate_bias,
            out_w,
            out_b,
        } = &mut self.lstm;
        for (g, m) in Gate::ALL.iter().zip(gates.iter_mut()) {
            let s = vec![m.rows(), m.cols()];
            out.push(TensorMut {
                name: format!("lstm.w_{}", g.suffix()),
                role: TensorRole::GateWeight,
                shape: s,
                data: m.data_mut(),
            });
        }
        for (g, b) in Gate::ALL.iter().zip(gate_bias.iter_mut()) {
            let s = vec![b.len()];
            out.push(TensorMut {
                name: format!("lstm.b_{}", g.suffix()),
                role: TensorRole::GateBias,
                shape: s,
                data: b,
            });
        }
        let s = vec![out_w.rows(), out_w.cols()];
        out.push(TensorMut {
            name: "out.w_y".into(),
            role: TensorRole::OutWeight,
            shape: s,
            data: out_w.data_mut(),
        });
        let s = vec![out_b.len()];
        out.push(TensorMut {
            name: "out.b_y".into(),
            role: TensorRole::OutBias,
            shape: s,
            data: out_b,
        });
        out
    }

    /// The weights the forward pass actually uses: quantizable tensors
    /// replaced by their codes, and biases dropped when `zero_bias` is set.
    pub fn effective(&self, precision: Precision, zero_bias: bool) -> NetworkParams {
        let mut eff = self.clone();
        for t in eff.tensors_mut() {
            if t.role.quantizable() && precision.is_quantized() {
                for v in t.data.iter_mut() {
                    *v = precision.quantize(*v);
                }
            } else if t.role.is_bias() && zero_bias {
                t.data.fill(0.0);
            }
        }
        eff
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        let expect = Self::zeros(cfg);
        let a = self.tensors();
        let b = expect.tensors();
        if a.len() != b.len() {
            return Err(shape(format!("{} tensors, configuration expects {}", a.len(), b.len())));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        Ok(())
    }
}

/// `(left, right)` zero padding keeping the output length equal to the input.
pub fn same_padding(taps: usize) -> (usize, usize) {
    let left = (taps - 1) / 2;
    (left, taps - 1 - left)
}

/// Pre-activation `z = b + Σ_c Σ_a W[f][c][a] · x[c][i + a − left]` for an
/// input of `depth × n` (channel-major), zero padded to keep length `n`.
pub fn conv1d(x: &[f64], n: usize, layer: &CnnLayerParams) -> Vec<f64> {
    debug_assert_eq!(x.len(), layer.depth * n);
    let (left, _) = same_padding(layer.taps);
    let mut z = vec![0.0; layer.filters * n];
    for f in 0..layer.filters {
        for i in 0..n {
            let mut acc = layer.bias[f];
            for c in 0..layer.depth {
                let row = &x[c * n..(c + 1) * n];
                for a in 0..layer.taps {
                    let j = i + a;
                    if j >= left && j - left < n {
                        acc += layer.weight(f, c, a) * row[j - left];
                    }
                }
            }
            z[f * n + i] = acc;
        }
    }
    z
}

/// Convolution followed by ReLU; returns an `f × n` map.
pub fn conv1d_relu(x: &[f64], n: usize, layer: &CnnLayerParams) -> Vec<f64> {
    conv1d(x, n, layer).into_iter().map(|v| v.max(0.0)).collect()
}

/// `P = W_fc · flatten(maps)`; returns `x_window + P` when `residual`.
pub fn fc_residual(maps: &[f64], fc: &FcParams, x_window: &[f64], residual: bool) -> Result<Vec<f64>> {
    if maps.len() != fc.weights.cols() || x_window.len() != fc.weights.rows() {
        return Err(shape(format!(
            "fc is {}x{}, got {} features and a window of {}",
            fc.weights.rows(),
            fc.weights.cols(),
            maps.len(),
            x_window.len()
        )));
    }
    let mut p = fc.weights.matvec(maps);
    if residual {
        for (v, x) in p.iter_mut().zip(x_window) {
            *v += x;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate activations of one step, `[f, i, o, c̃]`.
pub fn gate_activations(xx: &[f64], p: &LstmParams) -> [Vec<f64>; 4] {
    let act = |g: Gate| -> Vec<f64> {
        let m = &p.gates[g as usize];
        let b = &p.gate_bias[g as usize];
        (0..m.rows())
            .map(|k| {
                let pre = dot(m.row(k), xx) + b[k];
                if g == Gate::Cell {
                    libm::tanh(pre)
                } else {
                    sigmoid(pre)
                }
            })
            .collect()
    };
    [act(Gate::Forget), act(Gate::Input), act(Gate::Output), act(Gate::Cell)]
}

/// One LSTM update on `xx = [h, u]`, returning the new state and the
/// output-layer logits `W_y h' + b_y`.
pub fn lstm_step(xx: &[f64], state: &LstmState, p: &LstmParams) -> (LstmState, Vec<f64>) {
    let [f, i, o, g] = gate_activations(xx, p);
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * state.c[k] + g[k] * i[k]).collect();
    let h: Vec<f64> = (0..f.len()).map(|k| o[k] * libm::tanh(c[k])).collect();
    let mut logits = p.out_w.matvec(&h);
    for (y, b) in logits.iter_mut().zip(&p.out_b) {
        *y += b;
    }
    (LstmState { h, c }, logits)
}

/// Feature path of one window: CNN stack, FC and residual add. Without a
/// CNN the raw window passes through unchanged.
pub fn window_features(window: &[f64], params: &NetworkParams, cfg: &NetworkConfig) -> Result<Vec<f64>> {
    if window.len() != cfg.input_len() {
        return Err(shape(format!("window of {} values, expected {}", window.len(), cfg.input_len())));
    }
    match &params.fc {
        Some(fc) if cfg.cnn_active() => {
            let mut x = window.to_vec();
            for layer in &params.cnn {
                x = conv1d_relu(&x, cfg.window, layer);
            }
            fc_residual(&x, fc, window, cfg.residual)
        }
        _ => Ok(window.to_vec()),
    }
}

/// Logits after every step; the prediction uses the last row.
pub fn network_forward(seq: &WindowedSequence, params: &NetworkParams, cfg: &NetworkConfig) -> Result<Vec<Vec<f64>>> {
    if seq.steps() != cfg.steps {
        return Err(crate::error::Error::WindowCount {
            expected: cfg.steps,
            got: seq.steps(),
        });
    }
    let mut state = LstmState::zeros(cfg.hidden);
    let mut all = Vec::with_capacity(cfg.steps);
    for w in &seq.windows {
        let u = window_features(w, params, cfg)?;
        let mut xx = state.h.clone();
        xx.extend_from_slice(&u);
        let (next, logits) = lstm_step(&xx, &state, &params.lstm);
        state = next;
        all.push(logits);
    }
    Ok(all)
}

/// Class predicted from the final-step logits.
pub fn predict(seq: &WindowedSequence, params: &NetworkParams, cfg: &NetworkConfig) -> Result<usize> {
    let logits = network_forward(seq, params, cfg)?;
    Ok(argmax(logits.last().expect("steps > 0")))
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&y| libm::exp(y - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
