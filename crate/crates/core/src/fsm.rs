//! Cycle-counting simulator of the eight-state inference machine.
//!
//! States: 1 conv + ReLU (once per layer), 2 FC + residual, 3 gate matrix
//! products, 4 gate nonlinearities, 5 cell update, 6 `tanh(c)`, 7 hidden
//! update, 8 output layer (charged only after the last window).
//!
//! Arithmetic runs on the weight banks (WB) and intermediate memories (IM)
//! of a [`MemoryBanks`] instance. Each state is charged the larger of its
//! compute schedule ([`state_cycle_cost`]) and the cycles its itemized
//! memory traffic needs at the configured port widths.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::estimate::{mac_count, MacVariant, Per};
use crate::fxp::{Nonlinearity, QFormat};
use crate::model::fixed::{argmax_raw, FixedTensor, HardwareModel, Luts};
use crate::model::{same_padding, NetworkConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub mac_lanes: usize,
    /// Shared bus carrying every WB and IM transfer.
    pub bus_bits: usize,
    pub wb_read_bits_per_cycle: usize,
    /// Width of each IM port; reads and writes have one port each.
    pub im_bits_per_cycle: usize,
    pub lut_size: usize,
    pub clock_hz: f64,
    pub activation_format: QFormat,
    pub wb_capacity_bits: u64,
    pub im_capacity_bits: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            mac_lanes: 32,
            bus_bits: 96,
            wb_read_bits_per_cycle: 64,
            im_bits_per_cycle: 48,
            lut_size: 64,
            clock_hz: 1e8,
            activation_format: QFormat::Q4_8,
            wb_capacity_bits: 12_000_000,
            im_capacity_bits: 4_000_000,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mac_lanes == 0
            || self.bus_bits == 0
            || self.wb_read_bits_per_cycle == 0
            || self.im_bits_per_cycle == 0
            || !(self.clock_hz > 0.0)
        {
            return Err(invalid("machine parameters must be positive"));
        }
        if !self.lut_size.is_power_of_two() {
            return Err(invalid(format!("lut_size {} is not a power of two", self.lut_size)));
        }
        Ok(())
    }

    /// Rows per gate processed in parallel in state 3.
    pub fn gate_rows_per_cycle(&self) -> usize {
        (self.mac_lanes / 4).max(1)
    }
}

/// Compute-schedule cycles of `state` for one window, ignoring memory
/// stalls. State 1 is summed over conv layers; state 8 is the cost of the
/// final output layer.
pub fn state_cycle_cost(state: usize, net: &NetworkConfig, mc: &MachineConfig) -> u64 {
    let nh = net.hidden as u64;
    let l = net.input_len() as u64;
    match state {
        1 if net.cnn_active() => (0..net.conv.len()).map(|i| conv_layer_cycles(i, net, mc)).sum(),
        2 if net.cnn_active() => (l * net.feature_len() as u64).div_ceil(mc.mac_lanes as u64),
        3 => (nh + l) * nh.div_ceil(mc.gate_rows_per_cycle() as u64),
        4..=7 => nh,
        8 => nh * net.classes as u64,
        _ => 0,
    }
}

/// `(ω_s − m + 1) · f · ceil(I_d · m / lanes)` for conv layer `layer`.
pub fn conv_layer_cycles(layer: usize, net: &NetworkConfig, mc: &MachineConfig) -> u64 {
    let spec = net.conv[layer];
    let positions = (net.window + 1).saturating_sub(spec.taps) as u64;
    let per = ((net.conv_depth(layer) * spec.taps) as u64).div_ceil(mc.mac_lanes as u64);
    positions * spec.filters as u64 * per
}

/// Weight banks and intermediate memories of one simulator instance.
#[derive(Debug, Clone)]
pub struct MemoryBanks {
    model: HardwareModel,
    luts: Luts,
    wb_bits: u64,
    im_bits: u64,
}

fn tensor_bits(t: &FixedTensor) -> u64 {
    t.len() as u64 * t.format.total_bits() as u64
}

impl MemoryBanks {
    pub fn load(model: HardwareModel, mc: &MachineConfig) -> Result<Self> {
        mc.validate()?;
        model.validate()?;
        if model.format != mc.activation_format {
            return Err(invalid("model format differs from the machine activation format"));
        }
        let act = mc.activation_format.total_bits() as u64;
        let mut wb = 0;
        for c in &model.conv {
            wb += tensor_bits(&c.weights) + c.bias.len() as u64 * act;
        }
        if let Some(fc) = &model.fc {
            wb += tensor_bits(fc);
        }
        for g in 0..4 {
            wb += tensor_bits(&model.gates[g]) + model.gate_bias[g].len() as u64 * act;
        }
        wb += tensor_bits(&model.out_w) + model.out_b.len() as u64 * act;
        let im = im_required_bits(&model.config, mc);
        if wb > mc.wb_capacity_bits {
            return Err(Error::BankCapacity {
                bank: "WB",
                needed: wb,
                capacity: mc.wb_capacity_bits,
            });
        }
        if im > mc.im_capacity_bits {
            return Err(Error::BankCapacity {
                bank: "IM",
                needed: im,
                capacity: mc.im_capacity_bits,
            });
        }
        Ok(Self {
            luts: Luts::new(mc.lut_size)?,
            model,
            wb_bits: wb,
            im_bits: im,
        })
    }

    pub fn model(&self) -> &HardwareModel {
        &self.model
    }

    pub fn luts(&self) -> &Luts {
        &self.luts
    }

    pub fn wb_bits(&self) -> u64 {
        self.wb_bits
    }

    pub fn im_bits(&self) -> u64 {
        self.im_bits
    }
}

/// IM words: input window, two conv ping-pong maps, the LSTM input `u`,
/// `h`, `c`, `tanh(c)`, four gate buffers reused for pre-activations and
/// activations, and the logits.
pub fn im_required_bits(net: &NetworkConfig, mc: &MachineConfig) -> u64 {
    let max_map = if net.cnn_active() {
        net.conv.iter().map(|c| c.filters * net.window).max().unwrap_or(0)
    } else {
        0
    };
    let words = net.input_len() * 2 + 2 * max_map + 7 * net.hidden + net.classes;
    words as u64 * mc.activation_format.total_bits() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateTraffic {
    pub wb_read: u64,
    pub im_read: u64,
    pub im_write: u64,
}

impl StateTraffic {
    fn add(&mut self, o: StateTraffic) {
        self.wb_read += o.wb_read;
        self.im_read += o.im_read;
        self.im_write += o.im_write;
    }

    /// Cycles the transfers need at the configured port widths.
    pub fn min_cycles(&self, mc: &MachineConfig) -> u64 {
        let bus = (self.wb_read + self.im_read + self.im_write).div_ceil(mc.bus_bits as u64);
        let wb = self.wb_read.div_ceil(mc.wb_read_bits_per_cycle as u64);
        let imr = self.im_read.div_ceil(mc.im_bits_per_cycle as u64);
        let imw = self.im_write.div_ceil(mc.im_bits_per_cycle as u64);
        bus.max(wb).max(imr).max(imw)
    }
}

/// One state visit in the optional trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub state: u8,
    pub unit: &'static str,
    pub op: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    /// Index `s - 1` holds state `s`.
    pub cycles_per_state: [u64; 8],
    pub total_cycles: u64,
    pub latency_seconds: f64,
    /// Cycles of each window; the output layer is added to the last one.
    pub window_cycles: Vec<u64>,
    pub executed_macs: u64,
    pub nominal_macs: u64,
    pub wb_bits_read: u64,
    pub im_bits_transferred: u64,
    pub traffic_per_state: [StateTraffic; 8],
    /// Visited states in order; state 1 once per conv layer.
    pub state_trace: Vec<u8>,
    pub clock_hz: f64,
}

impl CycleReport {
    pub fn worst_window_cycles(&self) -> u64 {
        self.window_cycles.iter().copied().max().unwrap_or(0)
    }

    pub fn window_latency_seconds(&self) -> f64 {
        self.worst_window_cycles() as f64 / self.clock_hz
    }

    /// `cycle,state,...` CSV, one row per state.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("state,cycles,wb_bits_read,im_bits_read,im_bits_written\n");
        for i in 0..8 {
            let t = self.traffic_per_state[i];
            s += &format!("{},{},{},{},{}\n", i + 1, self.cycles_per_state[i], t.wb_read, t.im_read, t.im_write);
        }
        s += &format!("total,{},{},,\n", self.total_cycles, self.wb_bits_read);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..8 {
            s += &format!("state {}: {} cycles\n", i + 1, self.cycles_per_state[i]);
        }
        s += &format!("total cycles: {}\n", self.total_cycles);
        s += &format!("latency: {:.3} us\n", self.latency_seconds * 1e6);
        s += &format!(
            "worst window: {} cycles ({:.3} us)\n",
            self.worst_window_cycles(),
            self.window_latency_seconds() * 1e6
        );
        s += &format!("executed MACs: {}\n", self.executed_macs);
        s += &format!("nominal MACs per window: {}\n", self.nominal_macs);
        s += &format!("WB bits read: {}\n", self.wb_bits_read);
        s += &format!("IM bits transferred: {}\n", self.im_bits_transferred);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyCheck {
    pub pass: bool,
    pub latency_seconds: f64,
    pub budget_seconds: f64,
    /// `budget / latency`.
    pub margin: f64,
}

/// Compares the worst per-window latency with `budget_seconds`.
pub fn latency_report(rep: &CycleReport, budget_seconds: f64) -> LatencyCheck {
    let lat = rep.window_latency_seconds();
    let margin = if lat > 0.0 { budget_seconds / lat } else { f64::INFINITY };
    LatencyCheck {
        pass: budget_seconds > 0.0 && lat < budget_seconds,
        latency_seconds: lat,
        budget_seconds,
        margin,
    }
}

/// Real-time budget of one window: `ω_s / sample_rate`.
pub fn window_budget_seconds(window: usize, sample_rate_hz: f64) -> f64 {
    window as f64 / sample_rate_hz
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub class: usize,
    pub logits: Vec<i32>,
    pub h: Vec<i32>,
    pub c: Vec<i32>,
    pub report: CycleReport,
}

/// Lane-parallel multiply-accumulate array.
struct MacArray {
    lanes: usize,
    acc: Vec<i64>,
    macs: u64,
}

impl MacArray {
    fn new(lanes: usize) -> Self {
        Self {
            lanes,
            acc: vec![0; lanes],
            macs: 0,
        }
    }

    /// Spreads `Σ w·x` over the lanes and reduces the partial sums.
    fn dot(&mut self, w: &[i32], x: &[i32]) -> i64 {
        self.acc.fill(0);
        for (k, (&a, &b)) in w.iter().zip(x).enumerate() {
            self.acc[k % self.lanes] += a as i64 * b as i64;
        }
        self.macs += w.len() as u64;
        self.acc.iter().sum()
    }
}

struct Machine<'a> {
    banks: &'a MemoryBanks,
    mc: &'a MachineConfig,
    fmt: QFormat,
    word: u64,
    mac: MacArray,
    cycle: u64,
    report: CycleReport,
    trace: Option<&'a mut Vec<TraceEvent>>,
    // IM contents
    x: Vec<i32>,
    maps: Vec<i32>,
    u: Vec<i32>,
    h: Vec<i32>,
    c: Vec<i32>,
    tanh_c: Vec<i32>,
    gates: [Vec<i32>; 4],
    logits: Vec<i32>,
}

impl<'a> Machine<'a> {
    fn charge(&mut self, state: u8, compute: u64, t: StateTraffic, unit: &'static str, op: String) {
        let cycles = compute.max(t.min_cycles(self.mc));
        if let Some(tr) = self.trace.as_deref_mut() {
            tr.push(TraceEvent {
                cycle: self.cycle,
                state,
                unit,
                op,
            });
        }
        let i = state as usize - 1;
        self.cycle += cycles;
        self.report.cycles_per_state[i] += cycles;
        self.report.traffic_per_state[i].add(t);
        self.report.state_trace.push(state);
        if let Some(w) = self.report.window_cycles.last_mut() {
            *w += cycles;
        }
    }

    fn requant(&self, acc: i64, wf: u32) -> i32 {
        self.fmt.requantize(acc, self.fmt.frac_bits() + wf)
    }

    fn state1(&mut self, net: &NetworkConfig) {
        let n = net.window;
        let mut input = self.x.clone();
        let banks = self.banks;
        for (li, layer) in banks.model.conv.iter().enumerate() {
            let (left, _) = same_padding(layer.taps);
            let wf = layer.weights.frac_bits();
            let mut out = vec![0i32; layer.filters * n];
            let mut window = vec![0i32; layer.depth * layer.taps];
            for f in 0..layer.filters {
                let w = &layer.weights.raw[f * layer.depth * layer.taps..(f + 1) * layer.depth * layer.taps];
                for i in 0..n {
                    for c in 0..layer.depth {
                        for a in 0..layer.taps {
                            let j = i + a;
                            window[c * layer.taps + a] = if j >= left && j - left < n { input[c * n + j - left] } else { 0 };
                        }
                    }
                    let acc = self.mac.dot(w, &window) + ((layer.bias[f] as i64) << wf);
                    out[f * n + i] = self.requant(acc, wf).max(0);
                }
            }
            let t = StateTraffic {
                wb_read: layer.weights.len() as u64 * layer.weights.format.total_bits() as u64
                    + layer.bias.len() as u64 * self.word,
                im_read: (layer.depth * n) as u64 * self.word,
                im_write: out.len() as u64 * self.word,
            };
            let compute = conv_layer_cycles(li, net, self.mc);
            self.charge(1, compute, t, "MACs", format!("conv layer {li}"));
            input = out;
        }
        self.maps = input;
    }

    fn state2(&mut self, net: &NetworkConfig) {
        let fc = self.banks.model.fc.as_ref().expect("validated");
        let cols = self.maps.len();
        let l = self.x.len();
        let mut u = vec![0i32; l];
        for (r, slot) in u.iter_mut().enumerate() {
            let acc = self.mac.dot(&fc.raw[r * cols..(r + 1) * cols], &self.maps);
            let p = self.requant(acc, fc.frac_bits());
            *slot = if net.residual { self.fmt.saturate(p as i64 + self.x[r] as i64) } else { p };
        }
        self.u = u;
        let t = StateTraffic {
            wb_read: fc.len() as u64 * fc.format.total_bits() as u64,
            im_read: (cols + l) as u64 * self.word,
            im_write: l as u64 * self.word,
        };
        self.charge(2, state_cycle_cost(2, net, self.mc), t, "MACs", "fc + residual".into());
    }

    fn state3(&mut self, net: &NetworkConfig) {
        let model = &self.banks.model;
        let nh = net.hidden;
        let mut xx = self.h.clone();
        xx.extend_from_slice(&self.u);
        let cols = xx.len();
        let mut wb = 0;
        for g in 0..4 {
            let w = &model.gates[g];
            let wf = w.frac_bits();
            let pre: Vec<i32> = (0..nh)
                .map(|k| {
                    let acc = self.mac.dot(&w.raw[k * cols..(k + 1) * cols], &xx) + ((model.gate_bias[g][k] as i64) << wf);
                    self.requant(acc, wf)
                })
                .collect();
            self.gates[g] = pre;
            wb += tensor_bits(w) + nh as u64 * self.word;
        }
        let t = StateTraffic {
            wb_read: wb,
            im_read: cols as u64 * self.word,
            im_write: 4 * nh as u64 * self.word,
        };
        self.charge(3, state_cycle_cost(3, net, self.mc), t, "MACs", "gate products".into());
    }

    fn state4(&mut self, net: &NetworkConfig) {
        let luts = &self.banks.luts;
        for (g, buf) in self.gates.iter_mut().enumerate() {
            let kind = if g == 3 { Nonlinearity::Tanh } else { Nonlinearity::Sigmoid };
            for v in buf.iter_mut() {
                *v = luts.lookup(kind, *v, self.fmt);
            }
        }
        let words = 4 * net.hidden as u64 * self.word;
        let t = StateTraffic {
            wb_read: 0,
            im_read: words,
            im_write: words,
        };
        self.charge(4, state_cycle_cost(4, net, self.mc), t, "NFs", "sigmoid/tanh".into());
    }

    fn state5(&mut self, net: &NetworkConfig) {
        let two_f = 2 * self.fmt.frac_bits();
        let [f, i, _, g] = &self.gates;
        let c: Vec<i32> = (0..net.hidden)
            .map(|k| {
                let acc = f[k] as i64 * self.c[k] as i64 + g[k] as i64 * i[k] as i64;
                self.fmt.requantize(acc, two_f)
            })
            .collect();
        self.c = c;
        let nh = net.hidden as u64;
        let t = StateTraffic {
            wb_read: 0,
            im_read: 4 * nh * self.word,
            im_write: nh * self.word,
        };
        self.charge(5, state_cycle_cost(5, net, self.mc), t, "MACs", "cell update".into());
    }

    fn state6(&mut self, net: &NetworkConfig) {
        let luts = &self.banks.luts;
        self.tanh_c = self.c.iter().map(|&v| luts.lookup(Nonlinearity::Tanh, v, self.fmt)).collect();
        let nh = net.hidden as u64;
        let t = StateTraffic {
            wb_read: 0,
            im_read: nh * self.word,
            im_write: nh * self.word,
        };
        self.charge(6, state_cycle_cost(6, net, self.mc), t, "NFs", "tanh(c)".into());
    }

    fn state7(&mut self, net: &NetworkConfig) {
        let two_f = 2 * self.fmt.frac_bits();
        let o = &self.gates[2];
        self.h = (0..net.hidden)
            .map(|k| self.fmt.requantize(o[k] as i64 * self.tanh_c[k] as i64, two_f))
            .collect();
        let nh = net.hidden as u64;
        let t = StateTraffic {
            wb_read: 0,
            im_read: 2 * nh * self.word,
            im_write: nh * self.word,
        };
        self.charge(7, state_cycle_cost(7, net, self.mc), t, "MACs", "hidden update".into());
    }

    fn state8(&mut self, net: &NetworkConfig, last: bool) {
        if !last {
            self.charge(8, 0, StateTraffic::default(), "MC", "next window".into());
            return;
        }
        let model = &self.banks.model;
        let nh = net.hidden;
        let wf = model.out_w.frac_bits();
        self.logits = (0..net.classes)
            .map(|y| {
                let acc = self.mac.dot(&model.out_w.raw[y * nh..(y + 1) * nh], &self.h) + ((model.out_b[y] as i64) << wf);
                self.requant(acc, wf)
            })
            .collect();
        let t = StateTraffic {
            wb_read: tensor_bits(&model.out_w) + net.classes as u64 * self.word,
            im_read: nh as u64 * self.word,
            im_write: net.classes as u64 * self.word,
        };
        self.charge(8, state_cycle_cost(8, net, self.mc), t, "MACs", "output layer".into());
    }
}

/// Runs Algorithm-style inference over pre-quantized windows.
pub fn run_inference(
    windows: &[Vec<i32>],
    banks: &MemoryBanks,
    mc: &MachineConfig,
    trace: Option<&mut Vec<TraceEvent>>,
) -> Result<InferenceResult> {
    let net = &banks.model.config;
    if windows.len() != net.steps {
        return Err(Error::WindowCount {
            expected: net.steps,
            got: windows.len(),
        });
    }
    if let Some(w) = windows.iter().find(|w| w.len() != net.input_len()) {
        return Err(invalid(format!("window of {} samples, expected {}", w.len(), net.input_len())));
    }
    let nh = net.hidden;
    let mut m = Machine {
        banks,
        mc,
        fmt: mc.activation_format,
        word: mc.activation_format.total_bits() as u64,
        mac: MacArray::new(mc.mac_lanes),
        cycle: 0,
        report: CycleReport {
            cycles_per_state: [0; 8],
            total_cycles: 0,
            latency_seconds: 0.0,
            window_cycles: Vec::with_capacity(net.steps),
            executed_macs: 0,
            nominal_macs: mac_count(net, Per::Window, MacVariant::Nominal),
            wb_bits_read: 0,
            im_bits_transferred: 0,
            traffic_per_state: [StateTraffic::default(); 8],
            state_trace: Vec::new(),
            clock_hz: mc.clock_hz,
        },
        trace,
        x: Vec::new(),
        maps: Vec::new(),
        u: Vec::new(),
        h: vec![0; nh],
        c: vec![0; nh],
        tanh_c: vec![0; nh],
        gates: [vec![0; nh], vec![0; nh], vec![0; nh], vec![0; nh]],
        logits: Vec::new(),
    };
    for (t, w) in windows.iter().enumerate() {
        m.report.window_cycles.push(0);
        m.x = w.clone();
        if net.cnn_active() {
            m.state1(net);
            m.state2(net);
        } else {
            m.u = m.x.clone();
        }
        m.state3(net);
        m.state4(net);
        m.state5(net);
        m.state6(net);
        m.state7(net);
        m.state8(net, t + 1 == windows.len());
    }
    let mut report = m.report;
    report.total_cycles = report.cycles_per_state.iter().sum();
    report.latency_seconds = report.total_cycles as f64 / mc.clock_hz;
    report.executed_macs = m.mac.macs;
    report.wb_bits_read = report.traffic_per_state.iter().map(|t| t.wb_read).sum();
    report.im_bits_transferred = report.traffic_per_state.iter().map(|t| t.im_read + t.im_write).sum();
    Ok(InferenceResult {
        class: argmax_raw(&m.logits),
        logits: m.logits,
        h: m.h,
        c: m.c,
        report,
    })
}

/// Cycle report without executing arithmetic, from the same cost model.
pub fn estimate_cycles(net: &NetworkConfig, mc: &MachineConfig, weight_bits: u32) -> CycleReport {
    let word = mc.activation_format.total_bits() as u64;
    let nh = net.hidden as u64;
    let l = net.input_len() as u64;
    let mut per_state = [0u64; 8];
    let mut traffic = [StateTraffic::default(); 8];
    let mut window = 0u64;
    let mut trace = Vec::new();
    let mut charge = |state: usize, compute: u64, t: StateTraffic, per_state: &mut [u64; 8], window: &mut u64| {
        let c = compute.max(t.min_cycles(mc));
        per_state[state - 1] += c;
        traffic[state - 1].add(t);
        *window += c;
    };
    let wbits = weight_bits as u64;
    if net.cnn_active() {
        for (i, spec) in net.conv.iter().enumerate() {
            let d = net.conv_depth(i) as u64;
            let t = StateTraffic {
                wb_read: spec.filters as u64 * d * spec.taps as u64 * wbits + spec.filters as u64 * word,
                im_read: d * net.window as u64 * word,
                im_write: (spec.filters * net.window) as u64 * word,
            };
            charge(1, conv_layer_cycles(i, net, mc), t, &mut per_state, &mut window);
            trace.push(1u8);
        }
        let f = net.feature_len() as u64;
        let t = StateTraffic {
            wb_read: l * f * word,
            im_read: (f + l) * word,
            im_write: l * word,
        };
        charge(2, state_cycle_cost(2, net, mc), t, &mut per_state, &mut window);
        trace.push(2);
    }
    let per_window_states: [(usize, StateTraffic); 5] = [
        (
            3,
            StateTraffic {
                wb_read: 4 * nh * (nh + l) * wbits + 4 * nh * word,
                im_read: (nh + l) * word,
                im_write: 4 * nh * word,
            },
        ),
        (
            4,
            StateTraffic {
                wb_read: 0,
                im_read: 4 * nh * word,
                im_write: 4 * nh * word,
            },
        ),
        (
            5,
            StateTraffic {
                wb_read: 0,
                im_read: 4 * nh * word,
                im_write: nh * word,
            },
        ),
        (
            6,
            StateTraffic {
                wb_read: 0,
                im_read: nh * word,
                im_write: nh * word,
            },
        ),
        (
            7,
            StateTraffic {
                wb_read: 0,
                im_read: 2 * nh * word,
                im_write: nh * word,
            },
        ),
    ];
    for (s, t) in per_window_states {
        charge(s, state_cycle_cost(s, net, mc), t, &mut per_state, &mut window);
        trace.push(s as u8);
    }
    trace.push(8);
    let q = net.steps as u64;
    for v in per_state.iter_mut() {
        *v *= q;
    }
    let mut traffic_q = traffic;
    for t in traffic_q.iter_mut() {
        t.wb_read *= q;
        t.im_read *= q;
        t.im_write *= q;
    }
    let out = StateTraffic {
        wb_read: nh * net.classes as u64 * word + net.classes as u64 * word,
        im_read: nh * word,
        im_write: net.classes as u64 * word,
    };
    let out_cycles = state_cycle_cost(8, net, mc).max(out.min_cycles(mc));
    per_state[7] = out_cycles;
    traffic_q[7] = out;
    let mut window_cycles = vec![window; net.steps];
    if let Some(last) = window_cycles.last_mut() {
        *last += out_cycles;
    }
    let total: u64 = per_state.iter().sum();
    let full_trace = (0..net.steps).flat_map(|_| trace.iter().copied()).collect();
    CycleReport {
        cycles_per_state: per_state,
        total_cycles: total,
        latency_seconds: total as f64 / mc.clock_hz,
        window_cycles,
        executed_macs: mac_count(net, Per::Sequence, MacVariant::True),
        nominal_macs: mac_count(net, Per::Window, MacVariant::Nominal),
        wb_bits_read: traffic_q.iter().map(|t| t.wb_read).sum(),
        im_bits_transferred: traffic_q.iter().map(|t| t.im_read + t.im_write).sum(),
        traffic_per_state: traffic_q,
        state_trace: full_trace,
        clock_hz: mc.clock_hz,
    }
}

/// True when `trace` matches `(1{layers} 2 3 4 5 6 7 8)^steps`, or
/// `(3 4 5 6 7 8)^steps` without a CNN.
pub fn trace_matches(trace: &[u8], layers: usize, steps: usize) -> bool {
    let mut unit: Vec<u8> = Vec::new();
    if layers > 0 {
        unit.extend(core::iter::repeat_n(1u8, layers));
        unit.push(2);
    }
    unit.extend_from_slice(&[3, 4, 5, 6, 7, 8]);
    trace.len() == unit.len() * steps && trace.chunks(unit.len()).all(|c| c == unit.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::WindowedSequence;
    use crate::model::fixed::{forward_fixed, quantize_sequence};
    use crate::model::{ConvSpec, NetworkParams, TensorRole};
    use crate::quant::Precision;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, cfg: &NetworkConfig, precision: Precision) -> (HardwareModel, WindowedSequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::zeros(cfg);
        for t in params.tensors_mut() {
            let r = match t.role {
                TensorRole::ConvWeight | TensorRole::GateWeight => 1.0,
                TensorRole::FcWeight => 0.3,
                _ => 0.5,
            };
            for v in t.data.iter_mut() {
                *v = rng.random_range(-r..r);
            }
        }
        let windows = (0..cfg.steps)
            .map(|_| (0..cfg.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let hw = HardwareModel::from_params(&params, cfg, precision, QFormat::Q4_8).unwrap();
        (hw, WindowedSequence { windows, label: 0 })
    }

    fn db_a() -> NetworkConfig {
        NetworkConfig::lstm_only(5, 30, 128, 250, 8)
    }

    #[test]
    fn state_cost_examples() {
        let mc = MachineConfig::default();
        let mut net = NetworkConfig::new(50, 1, 1, 250, 8);
        net.conv = vec![ConvSpec::new(10, 5)];
        assert_eq!(conv_layer_cycles(0, &net, &mc), 460);
        assert_eq!(state_cycle_cost(1, &net, &mc), 460);
        assert_eq!(state_cycle_cost(4, &net, &mc), 250);
        assert_eq!(state_cycle_cost(8, &net, &mc), 2000);
        assert_eq!(state_cycle_cost(3, &db_a(), &mc), 890 * 32);
        assert_eq!(state_cycle_cost(1, &db_a(), &mc), 0);
        assert_eq!(state_cycle_cost(9, &db_a(), &mc), 0);
    }

    #[test]
    fn zero_weights_give_class_zero() {
        let cfg = NetworkConfig::lstm_only(4, 3, 1, 5, 3);
        let hw = HardwareModel::from_params(&NetworkParams::zeros(&cfg), &cfg, Precision::Ternary, QFormat::Q4_8).unwrap();
        let mc = MachineConfig::default();
        let banks = MemoryBanks::load(hw, &mc).unwrap();
        let windows = vec![vec![100, -20, 3, 256]; 3];
        let r = run_inference(&windows, &banks, &mc, None).unwrap();
        assert_eq!(r.class, 0);
        assert_eq!(r.logits, vec![0, 0, 0]);
    }

    #[test]
    fn matches_golden_model_bit_for_bit() {
        let mc = MachineConfig::default();
        for seed in 0..40 {
            let mut cfg = NetworkConfig::lstm_only(4, 3, 1, 8, 3);
            if seed % 2 == 1 {
                cfg = NetworkConfig::new(4, 2, 2, 6, 4);
                cfg.conv = vec![ConvSpec::new(3, 3), ConvSpec::new(2, 2)];
            }
            let (hw, seq) = random_model(seed, &cfg, Precision::Ternary);
            let golden = forward_fixed(&hw, &Luts::default(), &seq).unwrap();
            let banks = MemoryBanks::load(hw, &mc).unwrap();
            let r = run_inference(&quantize_sequence(&seq, QFormat::Q4_8), &banks, &mc, None).unwrap();
            assert_eq!(r.logits, golden.logits);
            assert_eq!(r.h, golden.h);
            assert_eq!(r.c, golden.c);
            assert_eq!(r.class, golden.class);
        }
    }

    #[test]
    fn run_and_estimate_agree_on_cycles_and_macs() {
        let mc = MachineConfig::default();
        let mut cfg = NetworkConfig::new(6, 3, 2, 7, 3);
        cfg.conv = vec![ConvSpec::new(3, 3), ConvSpec::new(4, 2)];
        for (c, p) in [(cfg.clone(), Precision::Ternary), (NetworkConfig::lstm_only(5, 4, 3, 9, 2), Precision::Full)] {
            let (hw, seq) = random_model(3, &c, p);
            let bits = hw.gates[0].format.total_bits();
            let banks = MemoryBanks::load(hw, &mc).unwrap();
            let r = run_inference(&quantize_sequence(&seq, QFormat::Q4_8), &banks, &mc, None).unwrap();
            let e = estimate_cycles(&c, &mc, bits);
            assert_eq!(r.report.cycles_per_state, e.cycles_per_state);
            assert_eq!(r.report.traffic_per_state, e.traffic_per_state);
            assert_eq!(r.report.state_trace, e.state_trace);
            assert_eq!(r.report.executed_macs, mac_count(&c, Per::Sequence, MacVariant::True));
            assert_eq!(r.report.window_cycles, e.window_cycles);
        }
    }

    #[test]
    fn db_a_latency_and_macs() {
        let mc = MachineConfig::default();
        let net = db_a();
        assert_eq!(mac_count(&net, Per::Window, MacVariant::Nominal), 222_500);
        let rep = estimate_cycles(&net, &mc, 2);
        // no memory stalls with 2-bit gate weights
        for s in 3..=8 {
            let expect = state_cycle_cost(s, &net, &mc) * if s == 8 { 1 } else { 30 };
            assert_eq!(rep.cycles_per_state[s - 1], expect, "state {s}");
        }
        let check = latency_report(&rep, 0.010);
        assert!(check.pass && check.margin > 10.0);
        assert!(latency_report(&rep, window_budget_seconds(5, 1000.0)).margin > 10.0);
        assert!(!latency_report(&rep, 0.0).pass);
    }

    #[test]
    fn doubling_clock_halves_latency() {
        let net = db_a();
        let mut mc = MachineConfig::default();
        let a = estimate_cycles(&net, &mc, 2);
        mc.clock_hz *= 2.0;
        let b = estimate_cycles(&net, &mc, 2);
        assert_eq!(a.latency_seconds, 2.0 * b.latency_seconds);
    }

    #[test]
    fn capacity_and_window_errors() {
        let cfg = NetworkConfig::lstm_only(4, 3, 1, 5, 3);
        let hw = HardwareModel::from_params(&NetworkParams::zeros(&cfg), &cfg, Precision::Ternary, QFormat::Q4_8).unwrap();
        let tiny = MachineConfig {
            wb_capacity_bits: 100,
            ..MachineConfig::default()
        };
        assert!(matches!(MemoryBanks::load(hw.clone(), &tiny), Err(Error::BankCapacity { bank: "WB", .. })));
        let mc = MachineConfig::default();
        let banks = MemoryBanks::load(hw, &mc).unwrap();
        assert!(matches!(
            run_inference(&[vec![0; 4]], &banks, &mc, None),
            Err(Error::WindowCount { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn trace_events_follow_state_order() {
        let mut cfg = NetworkConfig::new(4, 2, 1, 3, 2);
        cfg.conv = vec![ConvSpec::new(2, 3), ConvSpec::new(2, 3)];
        let (hw, seq) = random_model(5, &cfg, Precision::Ternary);
        let mc = MachineConfig::default();
        let banks = MemoryBanks::load(hw, &mc).unwrap();
        let mut events = Vec::new();
        let r = run_inference(&quantize_sequence(&seq, QFormat::Q4_8), &banks, &mc, Some(&mut events)).unwrap();
        assert!(trace_matches(&r.report.state_trace, 2, 2));
        assert_eq!(events.iter().map(|e| e.state).collect::<Vec<_>>(), r.report.state_trace);
        assert!(events.windows(2).all(|w| w[0].cycle <= w[1].cycle));
        assert!(!trace_matches(&r.report.state_trace, 1, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trace_bandwidth_and_accounting(
            window in 1usize..8, steps in 1usize..4, channels in 1usize..3, hidden in 1usize..10,
            classes in 1usize..4, layers in 0usize..3, full in proptest::bool::ANY, seed in 0u64..1000,
        ) {
            let mut cfg = if layers == 0 {
                NetworkConfig::lstm_only(window, steps, channels, hidden, classes)
            } else {
                NetworkConfig::new(window, steps, channels, hidden, classes)
            };
            if layers > 0 {
                cfg.conv = (0..layers).map(|i| ConvSpec::new(2 + i, 1 + (seed as usize + i) % 4)).collect();
            }
            let precision = if full { Precision::Full } else { Precision::Ternary };
            let (hw, seq) = random_model(seed, &cfg, precision);
            let mc = MachineConfig::default();
            let banks = MemoryBanks::load(hw, &mc).unwrap();
            let r = run_inference(&quantize_sequence(&seq, QFormat::Q4_8), &banks, &mc, None).unwrap();
            let rep = &r.report;
            prop_assert!(trace_matches(&rep.state_trace, layers, steps));
            prop_assert_eq!(rep.total_cycles, rep.cycles_per_state.iter().sum::<u64>());
            prop_assert_eq!(rep.executed_macs, mac_count(&cfg, Per::Sequence, MacVariant::True));
            for s in 0..8 {
                let t = rep.traffic_per_state[s];
                let c = rep.cycles_per_state[s];
                prop_assert!(t.wb_read <= c * mc.wb_read_bits_per_cycle as u64);
                prop_assert!(t.im_read <= c * mc.im_bits_per_cycle as u64);
                prop_assert!(t.im_write <= c * mc.im_bits_per_cycle as u64);
                prop_assert!(t.wb_read + t.im_read + t.im_write <= c * mc.bus_bits as u64);
            }
        }

        #[test]
        fn cycles_monotone_in_hidden_and_window(
            window in 1usize..20, hidden in 1usize..60, layers in 0usize..3, bits in proptest::sample::select(vec![2u32, 12]),
        ) {
            let make = |w: usize, h: usize| {
                let mut c = if layers == 0 { NetworkConfig::lstm_only(w, 3, 2, h, 4) } else { NetworkConfig::new(w, 3, 2, h, 4) };
                if layers == 1 { c.conv = vec![ConvSpec::new(10, 5)]; }
                c
            };
            let mc = MachineConfig::default();
            let base = estimate_cycles(&make(window, hidden), &mc, bits).total_cycles;
            prop_assert!(estimate_cycles(&make(window + 1, hidden), &mc, bits).total_cycles >= base);
            prop_assert!(estimate_cycles(&make(window, hidden + 1), &mc, bits).total_cycles >= base);
        }
    }
}
