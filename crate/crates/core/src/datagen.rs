//! Synthetic class datasets (logistic map, Lorenz system, sine bank) and
//! windowing of signals into `(window, steps)` sequences.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub r: f64,
    pub x0: f64,
    pub n_samples: usize,
    pub transient: usize,
}

impl LogisticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(invalid(format!("logistic x0 = {} not in (0, 1)", self.x0)));
        }
        if !(self.r > 0.0 && self.r <= 4.0) {
            return Err(invalid(format!("logistic r = {} not in (0, 4]", self.r)));
        }
        Ok(())
    }
}

/// Iterates `x ← r·x·(1 − x)`, discards `transient` iterates and returns the
/// next `n_samples`. The initial state itself is not part of the output.
pub fn logistic_series(p: &LogisticParams) -> Result<Vec<f64>> {
    p.validate()?;
    let mut x = p.x0;
    for _ in 0..p.transient {
        x = p.r * x * (1.0 - x);
    }
    Ok((0..p.n_samples)
        .map(|_| {
            x = p.r * x * (1.0 - x);
            x
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub initial: [f64; 3],
    pub dt: f64,
    pub n_samples: usize,
    pub transient: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 8.0,
            rho: 28.0,
            beta: 5.0 / 3.0,
            initial: [1.0, 1.0, 1.0],
            dt: 0.01,
            n_samples: 1000,
            transient: 1000,
        }
    }
}

pub fn lorenz_rhs(s: [f64; 3], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    [
        sigma * (s[1] - s[0]),
        s[0] * (rho - s[2]) - s[1],
        s[0] * s[1] - beta * s[2],
    ]
}

fn rk4_step(s: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    let f = |s: [f64; 3]| lorenz_rhs(s, p.sigma, p.rho, p.beta);
    let h = p.dt;
    let add = |a: [f64; 3], b: [f64; 3], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
    let k1 = f(s);
    let k2 = f(add(s, k1, h / 2.0));
    let k3 = f(add(s, k2, h / 2.0));
    let k4 = f(add(s, k3, h));
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Integrates the Lorenz system with classical RK4 and returns `x(t) / scale`
/// sampled once per step after the transient.
pub fn lorenz_series(p: &LorenzParams, scale: f64) -> Result<Vec<f64>> {
    if !(p.dt > 0.0) {
        return Err(invalid("lorenz dt must be positive"));
    }
    if !(scale > 0.0) {
        return Err(invalid("lorenz scale must be positive"));
    }
    let mut s = p.initial;
    for _ in 0..p.transient {
        s = rk4_step(s, p);
    }
    let mut out = Vec::with_capacity(p.n_samples);
    for index in 0..p.n_samples {
        s = rk4_step(s, p);
        let value = s[0] / scale;
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { index, value });
        }
        out.push(value);
    }
    Ok(out)
}

/// `Ψ_j(t) = sin(t · (α + j·β))` on the given time grid.
pub fn sine_bank_series(j: usize, alpha: f64, beta: f64, t_grid: &[f64]) -> Vec<f64> {
    let w = alpha + j as f64 * beta;
    t_grid.iter().map(|&t| libm::sin(t * w)).collect()
}

/// `q` consecutive windows of one labelled signal. Each window holds
/// `M · ω_s` values laid out channel-major: `[ch0 samples.., ch1 samples..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSequence {
    pub windows: Vec<Vec<f64>>,
    pub label: usize,
}

impl WindowedSequence {
    pub fn steps(&self) -> usize {
        self.windows.len()
    }

    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, Vec::len)
    }
}

/// Cuts `steps` non-overlapping windows of `window` samples from the start of
/// an `M × T` signal and adds uniform noise in `[-noise_amplitude,
/// noise_amplitude]` drawn from a stream seeded by `seed`.
pub fn make_windows(
    signal: &[Vec<f64>],
    label: usize,
    window: usize,
    steps: usize,
    noise_amplitude: f64,
    seed: u64,
) -> Result<WindowedSequence> {
    if signal.is_empty() || window == 0 || steps == 0 {
        return Err(invalid("make_windows needs at least one channel, window and step"));
    }
    if !(noise_amplitude >= 0.0) {
        return Err(invalid("noise amplitude must be non-negative"));
    }
    let needed = window * steps;
    let len = signal[0].len();
    if signal.iter().any(|ch| ch.len() != len) {
        return Err(invalid("channels have different lengths"));
    }
    if len < needed {
        return Err(Error::SignalTooShort { needed, got: len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..steps)
        .map(|k| {
            let mut w = Vec::with_capacity(signal.len() * window);
            for ch in signal {
                for &v in &ch[k * window..(k + 1) * window] {
                    let noise = if noise_amplitude > 0.0 {
                        rng.random_range(-noise_amplitude..=noise_amplitude)
                    } else {
                        0.0
                    };
                    w.push(v + noise);
                }
            }
            w
        })
        .collect();
    Ok(WindowedSequence { windows, label })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticSystem {
    Logistic,
    Lorenz,
    Sine,
}

impl SyntheticSystem {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticSystem::Logistic => "logistic",
            SyntheticSystem::Lorenz => "lorenz",
            SyntheticSystem::Sine => "sine",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "logistic" => Some(Self::Logistic),
            "lorenz" => Some(Self::Lorenz),
            "sine" => Some(Self::Sine),
            _ => None,
        }
    }
}

/// Stratified shuffled split into `(train, test)` index lists. Each class
/// puts `round(n_c · train_fraction)` of its members in the training list.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid("train fraction must lie in (0, 1)"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let k = libm::round(members.len() as f64 * train_fraction) as usize;
        if k == 0 || k == members.len() {
            return Err(Error::EmptySplit(format!(
                "class {c} has {} records, too few to appear in both splits",
                members.len()
            )));
        }
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Generator settings for a synthetic classification set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub system: SyntheticSystem,
    /// Class-defining parameter: `r` (logistic), `σ` (Lorenz), or the
    /// frequency `α + j·β` (sine).
    pub class_params: Vec<f64>,
    pub per_class: usize,
    pub window: usize,
    pub steps: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
    pub logistic_transient: usize,
    pub lorenz_rho: f64,
    pub lorenz_beta: f64,
    pub lorenz_dt: f64,
    pub lorenz_transient: usize,
    pub lorenz_scale: f64,
    /// Initial conditions are drawn uniformly from a ball of this radius
    /// around (1, 1, 1).
    pub lorenz_init_radius: f64,
    pub sine_dt: f64,
    /// Each realization starts at a time drawn uniformly from `[0, span)`.
    pub sine_start_span: f64,
}

impl SyntheticSpec {
    pub const LOGISTIC_R: [f64; 5] = [3.6, 3.7, 3.8, 3.9, 4.0];
    pub const LORENZ_SIGMA: [f64; 5] = [8.0, 10.5, 13.0, 15.5, 18.0];
    pub const SINE_ALPHA: f64 = 3.0;

    fn base(system: SyntheticSystem, class_params: Vec<f64>) -> Self {
        Self {
            system,
            class_params,
            per_class: 100,
            window: 10,
            steps: 10,
            noise_amplitude: 0.01,
            seed: 0,
            logistic_transient: 100,
            lorenz_rho: 28.0,
            lorenz_beta: 5.0 / 3.0,
            lorenz_dt: 0.01,
            lorenz_transient: 1000,
            lorenz_scale: 40.0,
            lorenz_init_radius: 0.5,
            sine_dt: 0.1,
            sine_start_span: 1000.0,
        }
    }

    pub fn logistic() -> Self {
        Self::base(SyntheticSystem::Logistic, Self::LOGISTIC_R.to_vec())
    }

    pub fn lorenz() -> Self {
        Self::base(SyntheticSystem::Lorenz, Self::LORENZ_SIGMA.to_vec())
    }

    /// `classes` sinusoids with angular frequencies `α + j·β`.
    pub fn sine(classes: usize, alpha: f64, beta: f64) -> Self {
        let params = (0..classes).map(|j| alpha + j as f64 * beta).collect();
        Self::base(SyntheticSystem::Sine, params)
    }

    pub fn series_len(&self) -> usize {
        self.window * self.steps
    }
}

/// Windowed realizations of every class plus the noiseless source signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub sequences: Vec<WindowedSequence>,
    pub sources: Vec<Vec<f64>>,
    pub class_params: Vec<f64>,
    pub noise_amplitude: f64,
}

impl SyntheticDataset {
    pub fn classes(&self) -> usize {
        self.class_params.len()
    }
}

/// Generates `per_class` realizations for every class. Realization `k` owns
/// ChaCha stream `k` of the generator seed, so realizations are independent of
/// generation order.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.class_params.is_empty() || spec.per_class == 0 {
        return Err(invalid("synthetic dataset needs at least one class and realization"));
    }
    let len = spec.series_len();
    if len == 0 {
        return Err(invalid("window and steps must be positive"));
    }
    let mut sequences = Vec::new();
    let mut sources = Vec::new();
    for (label, &param) in spec.class_params.iter().enumerate() {
        for k in 0..spec.per_class {
            let realization = (label * spec.per_class + k) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(realization);
            let source = realize(spec, param, len, &mut rng)?;
            let noise_seed: u64 = rng.random();
            let seq = make_windows(
                core::slice::from_ref(&source),
                label,
                spec.window,
                spec.steps,
                spec.noise_amplitude,
                noise_seed,
            )?;
            sequences.push(seq);
            sources.push(source);
        }
    }
    Ok(SyntheticDataset {
        sequences,
        sources,
        class_params: spec.class_params.clone(),
        noise_amplitude: spec.noise_amplitude,
    })
}

fn realize(spec: &SyntheticSpec, param: f64, len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match spec.system {
        SyntheticSystem::Logistic => {
            let p = LogisticParams {
                r: param,
                x0: rng.random_range(0.05..0.95),
                n_samples: len,
                transient: spec.logistic_transient,
            };
            // map [0, 1] onto [-1, 1]
            Ok(logistic_series(&p)?.into_iter().map(|x| 2.0 * x - 1.0).collect())
        }
        SyntheticSystem::Lorenz => {
            let radius = spec.lorenz_init_radius;
            let offset = loop {
                let v: [f64; 3] = [
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ];
                if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0 {
                    break v;
                }
            };
            let p = LorenzParams {
                sigma: param,
                rho: spec.lorenz_rho,
                beta: spec.lorenz_beta,
                initial: [
                    1.0 + radius * offset[0],
                    1.0 + radius * offset[1],
                    1.0 + radius * offset[2],
                ],
                dt: spec.lorenz_dt,
                n_samples: len,
                transient: spec.lorenz_transient,
            };
            lorenz_series(&p, spec.lorenz_scale)
        }
        SyntheticSystem::Sine => {
            let t0 = if spec.sine_start_span > 0.0 {
                rng.random_range(0.0..spec.sine_start_span)
            } else {
                0.0
            };
            let grid: Vec<f64> = (0..len).map(|i| t0 + i as f64 * spec.sine_dt).collect();
            Ok(grid.iter().map(|&t| libm::sin(t * param)).collect())
        }
    }
}
