//! Integer reference of the forward pass in the activation Q-format.
//!
//! Every dot product accumulates exactly in `i64` and is requantized once,
//! elementwise products are requantized after each multiply, and the four
//! nonlinearities come from lookup tables. The cycle simulator must match
//! this path bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Gate, NetworkConfig, NetworkParams, TensorRole};
use crate::datagen::WindowedSequence;
use crate::error::{invalid, shape, Error, Result};
use crate::fxp::{Fixed, LutTable, Nonlinearity, QFormat, DEFAULT_LUT_SIZE};
use crate::quant::Precision;

/// Format of 2-bit weight codes: integers in `[-2, 1]`.
pub const CODE_FORMAT: QFormat = QFormat::CODE;

/// Raw integers sharing one Q-format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    pub raw: Vec<i32>,
    pub format: QFormat,
}

impl FixedTensor {
    pub fn quantize(values: &[f64], format: QFormat) -> Self {
        Self {
            raw: values.iter().map(|&v| Fixed::from_f64(v, format).raw()).collect(),
            format,
        }
    }

    pub fn from_codes(codes: &[i8]) -> Self {
        Self {
            raw: codes.iter().map(|&c| c as i32).collect(),
            format: CODE_FORMAT,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn frac_bits(&self) -> u32 {
        self.format.frac_bits()
    }

    pub fn is_codes(&self) -> bool {
        self.format == CODE_FORMAT
    }

    pub fn values(&self) -> Vec<f64> {
        let lsb = self.format.lsb();
        self.raw.iter().map(|&r| r as f64 * lsb).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedConv {
    pub filters: usize,
    pub depth: usize,
    pub taps: usize,
    /// `[f][c][a]`
    pub weights: FixedTensor,
    /// Activation format.
    pub bias: Vec<i32>,
}

/// Network weights as stored in the accelerator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardwareModel {
    pub config: NetworkConfig,
    pub format: QFormat,
    pub precision: Precision,
    pub conv: Vec<FixedConv>,
    /// `L × (f·ω_s)`, always in the activation format.
    pub fc: Option<FixedTensor>,
    /// Gate matrices in `[f, i, o, c]` order, each `N_h × (N_h + L)`.
    pub gates: [FixedTensor; 4],
    pub gate_bias: [Vec<i32>; 4],
    /// `N_y × N_h`, activation format.
    pub out_w: FixedTensor,
    pub out_b: Vec<i32>,
}

impl HardwareModel {
    /// Converts shadow parameters. Gate and conv tensors become codes in
    /// quantized modes; everything else is rounded into `format`.
    pub fn from_params(
        params: &NetworkParams,
        cfg: &NetworkConfig,
        precision: Precision,
        format: QFormat,
    ) -> Result<Self> {
        cfg.validate()?;
        params.check(cfg)?;
        let eff = params.effective(precision, false);
        let weight = |values: &[f64], role: TensorRole| -> FixedTensor {
            if role.quantizable() && precision.is_quantized() {
                let codes: Vec<i8> = values.iter().map(|&v| v as i8).collect();
                FixedTensor::from_codes(&codes)
            } else {
                FixedTensor::quantize(values, format)
            }
        };
        let bias = |values: &[f64]| -> Vec<i32> {
            values.iter().map(|&v| Fixed::from_f64(v, format).raw()).collect()
        };
        let conv = eff
            .cnn
            .iter()
            .map(|l| FixedConv {
                filters: l.filters,
                depth: l.depth,
                taps: l.taps,
                weights: weight(&l.weights, TensorRole::ConvWeight),
                bias: bias(&l.bias),
            })
            .collect();
        let fc = eff
            .fc
            .as_ref()
            .map(|fc| FixedTensor::quantize(fc.weights.data(), format));
        let lstm = &eff.lstm;
        let gates = Gate::ALL.map(|g| weight(lstm.gates[g as usize].data(), TensorRole::GateWeight));
        let gate_bias = Gate::ALL.map(|g| bias(&lstm.gate_bias[g as usize]));
        Ok(Self {
            config: cfg.clone(),
            format,
            precision,
            conv,
            fc,
            gates,
            gate_bias,
            out_w: FixedTensor::quantize(lstm.out_w.data(), format),
            out_b: bias(&lstm.out_b),
        })
    }

    /// Checks internal shapes against `config`.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let l = cfg.input_len();
        let nh = cfg.hidden;
        if cfg.cnn_active() {
            if self.conv.len() != cfg.conv.len() {
                return Err(shape(format!("{} conv layers, expected {}", self.conv.len(), cfg.conv.len())));
            }
            for (i, (c, s)) in self.conv.iter().zip(&cfg.conv).enumerate() {
                if c.filters != s.filters
                    || c.taps != s.taps
                    || c.depth != cfg.conv_depth(i)
                    || c.weights.len() != c.filters * c.depth * c.taps
                    || c.bias.len() != c.filters
                {
                    return Err(shape(format!("conv layer {i} does not match the configuration")));
                }
            }
            match &self.fc {
                Some(fc) if fc.len() == l * cfg.feature_len() => {}
                _ => return Err(shape("fc weights missing or mis-sized")),
            }
        }
        for g in 0..4 {
            if self.gates[g].len() != nh * (nh + l) || self.gate_bias[g].len() != nh {
                return Err(shape(format!("gate {g} is mis-sized")));
            }
        }
        if self.out_w.len() != cfg.classes * nh || self.out_b.len() != cfg.classes {
            return Err(shape("output layer is mis-sized"));
        }
        Ok(())
    }
}

/// The two nonlinearity tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Luts {
    pub sigmoid: LutTable,
    pub tanh: LutTable,
}

impl Luts {
    pub fn new(size: usize) -> Result<Self> {
        let build = |kind: Nonlinearity| {
            let (lo, hi) = kind.default_range();
            LutTable::build(kind, size, lo, hi, QFormat::LUT_ENTRY)
        };
        Ok(Self {
            sigmoid: build(Nonlinearity::Sigmoid)?,
            tanh: build(Nonlinearity::Tanh)?,
        })
    }

    pub fn lookup(&self, kind: Nonlinearity, raw: i32, format: QFormat) -> i32 {
        let u = Fixed::from_raw(raw as i64, format);
        match kind {
            Nonlinearity::Sigmoid => self.sigmoid.eval(u).raw(),
            Nonlinearity::Tanh => self.tanh.eval(u).raw(),
        }
    }
}

impl Default for Luts {
    fn default() -> Self {
        Self::new(DEFAULT_LUT_SIZE).expect("default LUT size is valid")
    }
}

/// Rounds every input sample into `format`.
pub fn quantize_sequence(seq: &WindowedSequence, format: QFormat) -> Vec<Vec<i32>> {
    seq.windows
        .iter()
        .map(|w| w.iter().map(|&v| Fixed::from_f64(v, format).raw()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedOutput {
    /// Final-step `W_y h + b_y` in the activation format.
    pub logits: Vec<i32>,
    pub class: usize,
    pub h: Vec<i32>,
    pub c: Vec<i32>,
}

fn dot_raw(w: &[i32], x: &[i32]) -> i64 {
    w.iter().zip(x).map(|(&a, &b)| a as i64 * b as i64).sum()
}

/// `requantize(Σ w·x + b)` where `w` carries `wf` fractional bits and `x`,
/// `b` carry the activation format's.
fn affine(fmt: QFormat, w: &[i32], wf: u32, x: &[i32], b: i32) -> i32 {
    let acc = dot_raw(w, x) + ((b as i64) << wf);
    fmt.requantize(acc, fmt.frac_bits() + wf)
}

/// Product of two activation-format values, requantized once.
fn mul(fmt: QFormat, a: i32, b: i32) -> i32 {
    fmt.requantize(a as i64 * b as i64, 2 * fmt.frac_bits())
}

/// Index of the first maximum.
pub fn argmax_raw(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Window features in the fixed datapath: conv/ReLU stack, FC, residual.
pub fn features_fixed(model: &HardwareModel, x: &[i32]) -> Vec<i32> {
    let cfg = &model.config;
    let fmt = model.format;
    let n = cfg.window;
    if !cfg.cnn_active() {
        return x.to_vec();
    }
    let mut maps = x.to_vec();
    for layer in &model.conv {
        let (left, _) = super::same_padding(layer.taps);
        let wf = layer.weights.frac_bits();
        let mut out = vec![0i32; layer.filters * n];
        for f in 0..layer.filters {
            for i in 0..n {
                let mut acc = (layer.bias[f] as i64) << wf;
                for c in 0..layer.depth {
                    for a in 0..layer.taps {
                        let j = i + a;
                        if j >= left && j - left < n {
                            let w = layer.weights.raw[(f * layer.depth + c) * layer.taps + a];
                            acc += w as i64 * maps[c * n + j - left] as i64;
                        }
                    }
                }
                out[f * n + i] = fmt.requantize(acc, fmt.frac_bits() + wf).max(0);
            }
        }
        maps = out;
    }
    let fc = model.fc.as_ref().expect("validated");
    let cols = maps.len();
    (0..x.len())
        .map(|r| {
            let p = affine(fmt, &fc.raw[r * cols..(r + 1) * cols], fc.frac_bits(), &maps, 0);
            if cfg.residual {
                fmt.saturate(p as i64 + x[r] as i64)
            } else {
                p
            }
        })
        .collect()
}

/// One LSTM update on raw `xx = [h, u]`; returns `(h', c')`.
pub fn lstm_step_fixed(model: &HardwareModel, luts: &Luts, xx: &[i32], c: &[i32]) -> (Vec<i32>, Vec<i32>) {
    let fmt = model.format;
    let nh = model.config.hidden;
    let cols = xx.len();
    let gate = |g: Gate, kind: Nonlinearity| -> Vec<i32> {
        let w = &model.gates[g as usize];
        (0..nh)
            .map(|k| {
                let pre = affine(fmt, &w.raw[k * cols..(k + 1) * cols], w.frac_bits(), xx, model.gate_bias[g as usize][k]);
                luts.lookup(kind, pre, fmt)
            })
            .collect()
    };
    let hf = gate(Gate::Forget, Nonlinearity::Sigmoid);
    let hi = gate(Gate::Input, Nonlinearity::Sigmoid);
    let ho = gate(Gate::Output, Nonlinearity::Sigmoid);
    let hc = gate(Gate::Cell, Nonlinearity::Tanh);
    let two_f = 2 * fmt.frac_bits();
    let c_new: Vec<i32> = (0..nh)
        .map(|k| fmt.requantize(hf[k] as i64 * c[k] as i64 + hc[k] as i64 * hi[k] as i64, two_f))
        .collect();
    let h_new: Vec<i32> = (0..nh)
        .map(|k| mul(fmt, ho[k], luts.lookup(Nonlinearity::Tanh, c_new[k], fmt)))
        .collect();
    (h_new, c_new)
}

/// Final-step output layer on raw `h`.
pub fn output_fixed(model: &HardwareModel, h: &[i32]) -> Vec<i32> {
    let nh = h.len();
    (0..model.config.classes)
        .map(|y| {
            affine(
                model.format,
                &model.out_w.raw[y * nh..(y + 1) * nh],
                model.out_w.frac_bits(),
                h,
                model.out_b[y],
            )
        })
        .collect()
}

/// Bit-accurate forward pass over pre-quantized windows.
pub fn forward_fixed_raw(model: &HardwareModel, luts: &Luts, windows: &[Vec<i32>]) -> Result<FixedOutput> {
    model.validate()?;
    let cfg = &model.config;
    if windows.len() != cfg.steps {
        return Err(Error::WindowCount {
            expected: cfg.steps,
            got: windows.len(),
        });
    }
    if let Some(w) = windows.iter().find(|w| w.len() != cfg.input_len()) {
        return Err(invalid(format!("window of {} samples, expected {}", w.len(), cfg.input_len())));
    }
    let mut h = vec![0i32; cfg.hidden];
    let mut c = vec![0i32; cfg.hidden];
    for x in windows {
        let u = features_fixed(model, x);
        let mut xx = h.clone();
        xx.extend_from_slice(&u);
        let (h2, c2) = lstm_step_fixed(model, luts, &xx, &c);
        h = h2;
        c = c2;
    }
    let logits = output_fixed(model, &h);
    Ok(FixedOutput {
        class: argmax_raw(&logits),
        logits,
        h,
        c,
    })
}

pub fn forward_fixed(model: &HardwareModel, luts: &Luts, seq: &WindowedSequence) -> Result<FixedOutput> {
    forward_fixed_raw(model, luts, &quantize_sequence(seq, model.format))
}
