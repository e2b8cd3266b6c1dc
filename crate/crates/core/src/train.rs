//! Backpropagation through time, Adagrad, the epoch loop and evaluation
//! metrics.
//!
//! Every step of a sequence is scored against the same label and the step
//! losses are averaged. Prediction only looks at the last step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::WindowedSequence;
use crate::error::{invalid, Error, Result};
use crate::model::{
    argmax, conv1d, fc_residual, gate_activations, same_padding, softmax, Gate, NetworkConfig, NetworkParams,
};
use crate::quant::{ste_backward, Precision};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Gradients are clipped to `[-clip, clip]`.
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weights start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    pub seed: u64,
    /// Score every step (true) or only the last one.
    pub replication: bool,
    pub precision: Precision,
    /// Hold biases at zero and leave them untrained.
    pub zero_bias: bool,
    pub epsilon: f64,
}

impl TrainConfig {
    /// Defaults for `precision`: lr 0.05 in full precision, 0.1 otherwise;
    /// quantized runs also drop the biases.
    pub fn for_precision(precision: Precision) -> Self {
        Self {
            learning_rate: if precision.is_quantized() { 0.1 } else { 0.05 },
            clip: 5.0,
            epochs: 50,
            batch_size: 32,
            init_range: 0.01,
            seed: 0,
            replication: true,
            precision,
            zero_bias: precision.is_quantized(),
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(invalid("clip must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.init_range >= 0.0) {
            return Err(invalid("init_range must be non-negative"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_precision(Precision::Full)
    }
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(logits.iter().map(|&y| libm::exp(y - m)).sum::<f64>());
    lse - logits[label]
}

/// `p - onehot(label)`.
pub fn loss_gradient(p: &[f64], label: usize) -> Vec<f64> {
    let mut g = p.to_vec();
    g[label] -= 1.0;
    g
}

struct StepCache {
    /// Input to each conv layer followed by the last feature map.
    acts: Vec<Vec<f64>>,
    /// Conv pre-activations per layer.
    pre: Vec<Vec<f64>>,
    xx: Vec<f64>,
    gates: [Vec<f64>; 4],
    c_prev: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_cached(seq: &WindowedSequence, p: &NetworkParams, cfg: &NetworkConfig) -> Result<Vec<StepCache>> {
    if seq.steps() != cfg.steps {
        return Err(Error::WindowCount {
            expected: cfg.steps,
            got: seq.steps(),
        });
    }
    let nh = cfg.hidden;
    let mut h = vec![0.0; nh];
    let mut c = vec![0.0; nh];
    let mut caches = Vec::with_capacity(cfg.steps);
    for w in &seq.windows {
        if w.len() != cfg.input_len() {
            return Err(invalid(format!("window of {} values, expected {}", w.len(), cfg.input_len())));
        }
        let mut acts = Vec::new();
        let mut pre = Vec::new();
        let u = match &p.fc {
            Some(fc) if cfg.cnn_active() => {
                acts.push(w.clone());
                for layer in &p.cnn {
                    let z = conv1d(acts.last().unwrap(), cfg.window, layer);
                    acts.push(z.iter().map(|v| v.max(0.0)).collect());
                    pre.push(z);
                }
                fc_residual(acts.last().unwrap(), fc, w, cfg.residual)?
            }
            _ => w.clone(),
        };
        let mut xx = h.clone();
        xx.extend_from_slice(&u);
        let gates = gate_activations(&xx, &p.lstm);
        let [f, i, o, g] = &gates;
        let c_new: Vec<f64> = (0..nh).map(|k| f[k] * c[k] + g[k] * i[k]).collect();
        let h_new: Vec<f64> = (0..nh).map(|k| o[k] * libm::tanh(c_new[k])).collect();
        let mut logits = p.lstm.out_w.matvec(&h_new);
        for (y, b) in logits.iter_mut().zip(&p.lstm.out_b) {
            *y += b;
        }
        caches.push(StepCache {
            acts,
            pre,
            xx,
            gates,
            c_prev: c,
            c: c_new.clone(),
            h: h_new.clone(),
            logits,
        });
        h = h_new;
        c = c_new;
    }
    Ok(caches)
}

/// Mean step loss and its exact gradient for the network whose weights are
/// `params` taken literally (no quantization).
pub fn loss_and_grads_exact(
    seq: &WindowedSequence,
    params: &NetworkParams,
    cfg: &NetworkConfig,
    replication: bool,
) -> Result<(f64, NetworkParams)> {
    let caches = forward_cached(seq, params, cfg)?;
    let q = caches.len();
    let nh = cfg.hidden;
    let label = seq.label;
    if label >= cfg.classes {
        return Err(invalid(format!("label {label} outside {} classes", cfg.classes)));
    }
    let scored = |t: usize| replication || t + 1 == q;
    let weight = if replication { 1.0 / q as f64 } else { 1.0 };
    let loss = (0..q)
        .filter(|&t| scored(t))
        .map(|t| cross_entropy(&caches[t].logits, label))
        .sum::<f64>()
        * weight;

    let mut grads = NetworkParams::zeros(cfg);
    let mut dh_next = vec![0.0; nh];
    let mut dc_next = vec![0.0; nh];
    let lstm = &params.lstm;
    for t in (0..q).rev() {
        let s = &caches[t];
        let mut dh = dh_next.clone();
        if scored(t) {
            let mut dy = loss_gradient(&softmax(&s.logits), label);
            for v in &mut dy {
                *v *= weight;
            }
            grads.lstm.out_w.add_outer(&dy, &s.h);
            for (b, d) in grads.lstm.out_b.iter_mut().zip(&dy) {
                *b += d;
            }
            lstm.out_w.matvec_t_into(&dy, &mut dh);
        }
        let [f, i, o, g] = &s.gates;
        let mut dpre: [Vec<f64>; 4] = [vec![0.0; nh], vec![0.0; nh], vec![0.0; nh], vec![0.0; nh]];
        for k in 0..nh {
            let tc = libm::tanh(s.c[k]);
            let dc = dh[k] * o[k] * (1.0 - tc * tc) + dc_next[k];
            dpre[Gate::Output as usize][k] = dh[k] * tc * o[k] * (1.0 - o[k]);
            dpre[Gate::Forget as usize][k] = dc * s.c_prev[k] * f[k] * (1.0 - f[k]);
            dpre[Gate::Input as usize][k] = dc * g[k] * i[k] * (1.0 - i[k]);
            dpre[Gate::Cell as usize][k] = dc * i[k] * (1.0 - g[k] * g[k]);
            dc_next[k] = dc * f[k];
        }
        let mut dxx = vec![0.0; s.xx.len()];
        for gate in 0..4 {
            grads.lstm.gates[gate].add_outer(&dpre[gate], &s.xx);
            for (b, d) in grads.lstm.gate_bias[gate].iter_mut().zip(&dpre[gate]) {
                *b += d;
            }
            lstm.gates[gate].matvec_t_into(&dpre[gate], &mut dxx);
        }
        dh_next.copy_from_slice(&dxx[..nh]);
        let du = &dxx[nh..];

        if let (Some(fc), Some(gfc)) = (&params.fc, &mut grads.fc) {
            let feat = s.acts.last().unwrap();
            gfc.weights.add_outer(du, feat);
            let mut da = vec![0.0; feat.len()];
            fc.weights.matvec_t_into(du, &mut da);
            for l in (0..params.cnn.len()).rev() {
                let layer = &params.cnn[l];
                let gl = &mut grads.cnn[l];
                let n = cfg.window;
                let x = &s.acts[l];
                let dz: Vec<f64> = da
                    .iter()
                    .zip(&s.pre[l])
                    .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                    .collect();
                let (left, _) = same_padding(layer.taps);
                let mut dx = if l > 0 { vec![0.0; x.len()] } else { Vec::new() };
                for fi in 0..layer.filters {
                    for idx in 0..n {
                        let d = dz[fi * n + idx];
                        if d == 0.0 {
                            continue;
                        }
                        gl.bias[fi] += d;
                        for c in 0..layer.depth {
                            for a in 0..layer.taps {
                                let j = idx + a;
                                if j < left || j - left >= n {
                                    continue;
                                }
                                let wi = (fi * layer.depth + c) * layer.taps + a;
                                gl.weights[wi] += d * x[c * n + j - left];
                                if l > 0 {
                                    dx[c * n + j - left] += d * layer.weights[wi];
                                }
                            }
                        }
                    }
                }
                da = dx;
            }
        }
    }
    Ok((loss, grads))
}

/// Loss and shadow-weight gradients for `params` trained at `precision`.
///
/// The forward pass uses the effective weights; in quantized modes the code
/// gradients pass through the straight-through estimator, and biases get a
/// zero gradient when `zero_bias` is set.
pub fn sequence_loss_and_grads(
    seq: &WindowedSequence,
    params: &NetworkParams,
    cfg: &NetworkConfig,
    tcfg: &TrainConfig,
) -> Result<(f64, NetworkParams)> {
    let eff = params.effective(tcfg.precision, tcfg.zero_bias);
    let (loss, mut grads) = loss_and_grads_exact(seq, &eff, cfg, tcfg.replication)?;
    mask_gradients(&mut grads, params, tcfg);
    Ok((loss, grads))
}

fn mask_gradients(grads: &mut NetworkParams, shadow: &NetworkParams, tcfg: &TrainConfig) {
    for (g, r) in grads.tensors_mut().into_iter().zip(shadow.tensors()) {
        if g.role.quantizable() && tcfg.precision.is_quantized() {
            for (gv, &rv) in g.data.iter_mut().zip(r.data) {
                *gv = ste_backward(*gv, rv);
            }
        } else if g.role.is_bias() && tcfg.zero_bias {
            g.data.fill(0.0);
        }
    }
}

/// Per-parameter sum of squared (clipped) gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accumulator: NetworkParams,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(cfg: &NetworkConfig, epsilon: f64) -> Self {
        Self {
            accumulator: NetworkParams::zeros(cfg),
            epsilon,
        }
    }
}

/// Clip, accumulate, step; then clamp quantizable shadow weights to
/// `[-1, 1]` in quantized modes.
pub fn adagrad_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdagradState, tcfg: &TrainConfig) {
    let eps = state.epsilon;
    let quantized = tcfg.precision.is_quantized();
    for ((p, g), acc) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.accumulator.tensors_mut())
    {
        let clamp = quantized && p.role.quantizable();
        for ((w, &gv), a) in p.data.iter_mut().zip(g.data).zip(acc.data.iter_mut()) {
            let g = gv.clamp(-tcfg.clip, tcfg.clip);
            if g != 0.0 {
                *a += g * g;
                *w -= tcfg.learning_rate * g / (libm::sqrt(*a) + eps);
            }
            if clamp {
                *w = w.clamp(-1.0, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Shadow weights; quantize with [`NetworkParams::effective`].
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
}

impl TrainResult {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.loss).collect()
    }

    pub fn accuracy_trace(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.test_accuracy).collect()
    }
}

/// Minibatch training from a fresh uniform initialization.
pub fn train(
    train_set: &[WindowedSequence],
    test_set: &[WindowedSequence],
    tcfg: &TrainConfig,
    cfg: &NetworkConfig,
) -> Result<TrainResult> {
    train_with(train_set, test_set, tcfg, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    train_set: &[WindowedSequence],
    test_set: &[WindowedSequence],
    tcfg: &TrainConfig,
    cfg: &NetworkConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    tcfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("training".into()));
    }
    if test_set.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = NetworkParams::init_uniform(cfg, tcfg.init_range, &mut rng);
    if tcfg.precision.is_quantized() {
        for t in params.tensors_mut() {
            if t.role.quantizable() {
                crate::quant::clamp_unit(t.data);
            }
        }
    }
    let mut state = AdagradState::new(cfg, tcfg.epsilon);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut sum = NetworkParams::zeros(cfg);
            for &idx in batch {
                let (loss, g) = sequence_loss_and_grads(&train_set[idx], &params, cfg, tcfg)?;
                total += loss;
                for (s, gt) in sum.tensors_mut().into_iter().zip(g.tensors()) {
                    for (a, b) in s.data.iter_mut().zip(gt.data) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for s in sum.tensors_mut() {
                for v in s.data.iter_mut() {
                    *v *= scale;
                }
            }
            adagrad_step(&mut params, &sum, &mut state, tcfg);
        }
        let eval = evaluate(test_set, &params, cfg, tcfg.precision, tcfg.zero_bias)?;
        let stats = EpochStats {
            epoch,
            loss: total / train_set.len() as f64,
            test_accuracy: eval.accuracy,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainResult { params, history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Macro one-vs-rest AUC; `None` when some class has no positive or no
    /// negative example.
    pub auc: Option<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Scores `seqs` with the effective weights of `params`.
pub fn evaluate(
    seqs: &[WindowedSequence],
    params: &NetworkParams,
    cfg: &NetworkConfig,
    precision: Precision,
    zero_bias: bool,
) -> Result<Evaluation> {
    let eff = params.effective(precision, zero_bias);
    let mut scores = Vec::with_capacity(seqs.len());
    for s in seqs {
        let logits = crate::model::network_forward(s, &eff, cfg)?;
        scores.push(softmax(logits.last().expect("steps > 0")));
    }
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    Ok(evaluation_from_scores(&scores, &labels, cfg.classes))
}

pub fn evaluation_from_scores(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Evaluation {
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    Evaluation {
        accuracy: accuracy(&predictions, labels),
        auc: macro_auc(scores, labels, classes),
        confusion: confusion_matrix(&predictions, labels, classes),
        predictions,
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p < classes && l < classes {
            m[l][p] += 1;
        }
    }
    m
}

/// Area under the ROC curve of `scores` for positives vs negatives, as the
/// Mann-Whitney statistic with ties counted half.
pub fn binary_auc(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in positive {
        for &n in negative {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (positive.len() * negative.len()) as f64)
}

/// Mean over classes of one-vs-rest AUC using each class's probability.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
    let mut total = 0.0;
    for k in 0..classes {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (s, &l) in scores.iter().zip(labels) {
            if l == k {
                pos.push(s[k]);
            } else {
                neg.push(s[k]);
            }
        }
        total += binary_auc(&pos, &neg)?;
    }
    Some(total / classes as f64)
}
