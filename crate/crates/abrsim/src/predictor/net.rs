//! The stall-response network: five 1-D convolution layers over the 5x8
//! feature matrix, a merge, two dense layers, and a softmax over
//! {continue, exit}. Hand-rolled forward/backward so training stays
//! auditable and deterministic; `gradient_check` gates the backward pass
//! against central finite differences.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::predictor::features::{FeatureMatrix, FEATURE_CHANNELS, FEATURE_LEN};
use crate::rng;

pub const CONV_LAYERS: usize = 5;
pub const CHANNELS: usize = 64;
pub const KERNEL: usize = 3;
const FLAT: usize = CHANNELS * FEATURE_LEN; // merge width
const HIDDEN: usize = 64;
const CLASSES: usize = 2;

/// Class index of the exit output.
pub const EXIT_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Weights indexed `((out * in_ch) + in) * KERNEL + k`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Weights indexed `out * in_dim + in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitNet {
    pub convs: Vec<Conv1d>,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl Conv1d {
    fn init(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_ch * KERNEL) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = (0..out_ch * in_ch * KERNEL)
            .map(|_| std * rng::gauss(rng))
            .collect();
        // small positive bias keeps units alive on zero-padded inputs and
        // keeps finite differences away from the ReLU kink
        Conv1d {
            in_ch,
            out_ch,
            w,
            b: vec![0.01; out_ch],
        }
    }

    /// Same-length convolution with zero padding of one on both ends,
    /// ReLU applied in place.
    fn forward(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_ch * FEATURE_LEN);
        debug_assert_eq!(out.len(), self.out_ch * FEATURE_LEN);
        for o in 0..self.out_ch {
            let orow = &mut out[o * FEATURE_LEN..(o + 1) * FEATURE_LEN];
            orow.fill(self.b[o]);
            for ic in 0..self.in_ch {
                let wbase = ((o * self.in_ch) + ic) * KERNEL;
                let (w0, w1, w2) = (self.w[wbase], self.w[wbase + 1], self.w[wbase + 2]);
                let irow = &input[ic * FEATURE_LEN..(ic + 1) * FEATURE_LEN];
                orow[0] += w1 * irow[0] + w2 * irow[1];
                for i in 1..FEATURE_LEN - 1 {
                    orow[i] += w0 * irow[i - 1] + w1 * irow[i] + w2 * irow[i + 1];
                }
                orow[FEATURE_LEN - 1] +=
                    w0 * irow[FEATURE_LEN - 2] + w1 * irow[FEATURE_LEN - 1];
            }
            for v in orow.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Backprop through conv+ReLU. `delta_out` is the gradient at the
    /// post-ReLU output; `output` is the cached post-ReLU activation.
    fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        delta_out: &mut [f64],
        grads: &mut ConvGrads,
        delta_in: Option<&mut [f64]>,
    ) {
        // ReLU gate
        for (d, &o) in delta_out.iter_mut().zip(output) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
        for o in 0..self.out_ch {
            let drow = &delta_out[o * FEATURE_LEN..(o + 1) * FEATURE_LEN];
            grads.b[o] += drow.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let irow = &input[ic * FEATURE_LEN..(ic + 1) * FEATURE_LEN];
                let wbase = ((o * self.in_ch) + ic) * KERNEL;
                let mut g0 = 0.0;
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                g1 += drow[0] * irow[0];
                g2 += drow[0] * irow[1];
                for i in 1..FEATURE_LEN - 1 {
                    g0 += drow[i] * irow[i - 1];
                    g1 += drow[i] * irow[i];
                    g2 += drow[i] * irow[i + 1];
                }
                g0 += drow[FEATURE_LEN - 1] * irow[FEATURE_LEN - 2];
                g1 += drow[FEATURE_LEN - 1] * irow[FEATURE_LEN - 1];
                grads.w[wbase] += g0;
                grads.w[wbase + 1] += g1;
                grads.w[wbase + 2] += g2;
            }
        }
        if let Some(delta_in) = delta_in {
            delta_in.fill(0.0);
            for o in 0..self.out_ch {
                let drow = &delta_out[o * FEATURE_LEN..(o + 1) * FEATURE_LEN];
                for ic in 0..self.in_ch {
                    let wbase = ((o * self.in_ch) + ic) * KERNEL;
                    let (w0, w1, w2) = (self.w[wbase], self.w[wbase + 1], self.w[wbase + 2]);
                    let irow = &mut delta_in[ic * FEATURE_LEN..(ic + 1) * FEATURE_LEN];
                    irow[0] += w1 * drow[0] + w0 * drow[1];
                    for i in 1..FEATURE_LEN - 1 {
                        irow[i] += w2 * drow[i - 1] + w1 * drow[i] + w0 * drow[i + 1];
                    }
                    irow[FEATURE_LEN - 1] +=
                        w2 * drow[FEATURE_LEN - 2] + w1 * drow[FEATURE_LEN - 1];
                }
            }
        }
    }
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng, relu: bool) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = (0..out_dim * in_dim).map(|_| std * rng::gauss(rng)).collect();
        Dense {
            in_dim,
            out_dim,
            w,
            b: vec![if relu { 0.01 } else { 0.0 }; out_dim],
        }
    }

    fn forward(&self, input: &[f64], out: &mut [f64], relu: bool) {
        for o in 0..self.out_dim {
            let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (w, x) in wrow.iter().zip(input) {
                acc += w * x;
            }
            out[o] = if relu { acc.max(0.0) } else { acc };
        }
    }

    fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        delta_out: &mut [f64],
        relu: bool,
        grads: &mut DenseGrads,
        delta_in: Option<&mut [f64]>,
    ) {
        if relu {
            for (d, &o) in delta_out.iter_mut().zip(output) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        for o in 0..self.out_dim {
            let d = delta_out[o];
            grads.b[o] += d;
            let grow = &mut grads.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, x) in grow.iter_mut().zip(input) {
                *g += d * x;
            }
        }
        if let Some(delta_in) = delta_in {
            delta_in.fill(0.0);
            for o in 0..self.out_dim {
                let d = delta_out[o];
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (di, w) in delta_in.iter_mut().zip(wrow) {
                    *di += w * d;
                }
            }
        }
    }
}

/// Cached activations from one forward pass, reused by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Post-ReLU outputs of each conv layer.
    pub conv_outs: Vec<Vec<f64>>,
    pub h1: Vec<f64>,
    pub logits: [f64; CLASSES],
    pub probs: [f64; CLASSES],
}

impl ForwardCache {
    pub fn new() -> Self {
        ForwardCache {
            input: vec![0.0; FEATURE_CHANNELS * FEATURE_LEN],
            conv_outs: (0..CONV_LAYERS).map(|_| vec![0.0; FLAT]).collect(),
            h1: vec![0.0; HIDDEN],
            logits: [0.0; CLASSES],
            probs: [0.0; CLASSES],
        }
    }
}

impl Default for ForwardCache {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradient accumulator with the same shape as the network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub convs: Vec<ConvGrads>,
    pub fc1: DenseGrads,
    pub fc2: DenseGrads,
}

impl Grads {
    pub fn zeros_like(net: &ExitNet) -> Self {
        Grads {
            convs: net
                .convs
                .iter()
                .map(|c| ConvGrads {
                    w: vec![0.0; c.w.len()],
                    b: vec![0.0; c.b.len()],
                })
                .collect(),
            fc1: DenseGrads {
                w: vec![0.0; net.fc1.w.len()],
                b: vec![0.0; net.fc1.b.len()],
            },
            fc2: DenseGrads {
                w: vec![0.0; net.fc2.w.len()],
                b: vec![0.0; net.fc2.b.len()],
            },
        }
    }

    pub fn reset(&mut self) {
        for c in &mut self.convs {
            c.w.fill(0.0);
            c.b.fill(0.0);
        }
        self.fc1.w.fill(0.0);
        self.fc1.b.fill(0.0);
        self.fc2.w.fill(0.0);
        self.fc2.b.fill(0.0);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend_from_slice(&c.w);
            out.extend_from_slice(&c.b);
        }
        out.extend_from_slice(&self.fc1.w);
        out.extend_from_slice(&self.fc1.b);
        out.extend_from_slice(&self.fc2.w);
        out.extend_from_slice(&self.fc2.b);
        out
    }
}

/// Scratch buffers for backward passes.
#[derive(Debug, Clone)]
pub struct BackwardScratch {
    delta_a: Vec<f64>,
    delta_b: Vec<f64>,
    delta_h1: Vec<f64>,
}

impl BackwardScratch {
    pub fn new() -> Self {
        BackwardScratch {
            delta_a: vec![0.0; FLAT],
            delta_b: vec![0.0; FLAT],
            delta_h1: vec![0.0; HIDDEN],
        }
    }
}

impl Default for BackwardScratch {
    fn default() -> Self {
        Self::new()
    }
}

impl ExitNet {
    /// Fresh network with He-initialized weights; deterministic per seed.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::substream(seed, &[rng::tags::TRAIN]);
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        convs.push(Conv1d::init(FEATURE_CHANNELS, CHANNELS, &mut r));
        for _ in 1..CONV_LAYERS {
            convs.push(Conv1d::init(CHANNELS, CHANNELS, &mut r));
        }
        ExitNet {
            convs,
            fc1: Dense::init(FLAT, HIDDEN, &mut r, true),
            fc2: Dense::init(HIDDEN, CLASSES, &mut r, false),
        }
    }

    /// Forward pass; returns (continue, exit) probabilities.
    pub fn forward(&self, input: &FeatureMatrix, cache: &mut ForwardCache) -> [f64; CLASSES] {
        cache.input.copy_from_slice(&input.as_flat());
        let mut current: &[f64] = &cache.input;
        for (layer, out) in self.convs.iter().zip(cache.conv_outs.iter_mut()) {
            layer.forward(current, out);
            current = out;
        }
        let flat = &cache.conv_outs[CONV_LAYERS - 1];
        self.fc1.forward(flat, &mut cache.h1, true);
        let mut logits = [0.0; CLASSES];
        self.fc2.forward(&cache.h1, &mut logits, false);
        cache.logits = logits;
        cache.probs = softmax(&logits);
        cache.probs
    }

    /// Exit probability for one input.
    pub fn exit_probability(&self, input: &FeatureMatrix) -> f64 {
        let mut cache = ForwardCache::new();
        self.forward(input, &mut cache)[EXIT_CLASS]
    }

    /// Cross-entropy of the cached prediction against a one-hot label.
    pub fn loss(probs: &[f64; CLASSES], exit_label: bool) -> f64 {
        let idx = if exit_label { EXIT_CLASS } else { 0 };
        -probs[idx].max(1e-300).ln()
    }

    /// Accumulate gradients for one row (after `forward` filled `cache`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        exit_label: bool,
        grads: &mut Grads,
        scratch: &mut BackwardScratch,
    ) {
        // softmax + cross-entropy: dL/dlogit = p - y
        let mut delta_logits = cache.probs;
        let idx = if exit_label { EXIT_CLASS } else { 0 };
        delta_logits[idx] -= 1.0;

        let flat = &cache.conv_outs[CONV_LAYERS - 1];
        self.fc2.backward(
            &cache.h1,
            &cache.h1,
            &mut delta_logits,
            false,
            &mut grads.fc2,
            Some(&mut scratch.delta_h1),
        );
        self.fc1.backward(
            flat,
            &cache.h1,
            &mut scratch.delta_h1,
            true,
            &mut grads.fc1,
            Some(&mut scratch.delta_a),
        );
        // walk conv layers backward, ping-ponging the delta buffers
        for l in (0..CONV_LAYERS).rev() {
            let input: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.conv_outs[l - 1]
            };
            let (delta_out, delta_in) = if (CONV_LAYERS - 1 - l) % 2 == 0 {
                (&mut scratch.delta_a, &mut scratch.delta_b)
            } else {
                (&mut scratch.delta_b, &mut scratch.delta_a)
            };
            let pass_down = (l > 0).then_some(&mut delta_in[..FLAT]);
            self.convs[l].backward(
                input,
                &cache.conv_outs[l],
                delta_out,
                &mut grads.convs[l],
                pass_down,
            );
        }
    }

    /// SGD step with mean gradients over a batch.
    pub fn apply_sgd(&mut self, grads: &Grads, lr: f64, batch: usize) {
        let scale = lr / batch.max(1) as f64;
        for (layer, g) in self.convs.iter_mut().zip(&grads.convs) {
            for (w, gw) in layer.w.iter_mut().zip(&g.w) {
                *w -= scale * gw;
            }
            for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= scale * gb;
            }
        }
        for (w, gw) in self.fc1.w.iter_mut().zip(&grads.fc1.w) {
            *w -= scale * gw;
        }
        for (b, gb) in self.fc1.b.iter_mut().zip(&grads.fc1.b) {
            *b -= scale * gb;
        }
        for (w, gw) in self.fc2.w.iter_mut().zip(&grads.fc2.w) {
            *w -= scale * gw;
        }
        for (b, gb) in self.fc2.b.iter_mut().zip(&grads.fc2.b) {
            *b -= scale * gb;
        }
    }

    pub fn total_params(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.w.len() + c.b.len())
            .sum::<usize>()
            + self.fc1.w.len()
            + self.fc1.b.len()
            + self.fc2.w.len()
            + self.fc2.b.len()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_params());
        for c in &self.convs {
            out.extend_from_slice(&c.w);
            out.extend_from_slice(&c.b);
        }
        out.extend_from_slice(&self.fc1.w);
        out.extend_from_slice(&self.fc1.b);
        out.extend_from_slice(&self.fc2.w);
        out.extend_from_slice(&self.fc2.b);
        out
    }

    pub fn set_params_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.total_params());
        let mut pos = 0;
        let mut take = |buf: &mut Vec<f64>| {
            let len = buf.len();
            buf.copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        };
        for c in &mut self.convs {
            take(&mut c.w);
            take(&mut c.b);
        }
        take(&mut self.fc1.w);
        take(&mut self.fc1.b);
        take(&mut self.fc2.w);
        take(&mut self.fc2.b);
    }
}

fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps = [0.0; CLASSES];
    let mut sum = 0.0;
    for (e, &z) in exps.iter_mut().zip(logits) {
        *e = (z - m).exp();
        sum += *e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

/// Compare analytic gradients against central finite differences (step
/// 1e-5) on an evenly spread subset of parameters. Returns the max
/// relative error. Probes whose perturbation flips a ReLU activation are
/// skipped: across the kink the loss is not differentiable and a finite
/// difference says nothing about the gradient. Pairs where both gradients
/// are below 1e-7 count as matching.
pub fn gradient_check(net: &ExitNet, input: &FeatureMatrix, exit_label: bool) -> f64 {
    const H: f64 = 1e-5;
    const CHECKS: usize = 160;

    let mut cache = ForwardCache::new();
    let mut grads = Grads::zeros_like(net);
    let mut scratch = BackwardScratch::new();
    net.forward(input, &mut cache);
    net.backward(&cache, exit_label, &mut grads, &mut scratch);
    let analytic = grads.flatten();

    let mut probe = net.clone();
    let mut flat = net.flatten_params();
    let total = flat.len();
    let stride = (total / CHECKS).max(1);

    let relu_mask = |c: &ForwardCache| -> Vec<bool> {
        c.conv_outs
            .iter()
            .flatten()
            .chain(c.h1.iter())
            .map(|v| *v > 0.0)
            .collect()
    };

    let mut max_rel = 0.0f64;
    let mut idx = 0;
    while idx < total {
        let orig = flat[idx];
        flat[idx] = orig + H;
        probe.set_params_from_flat(&flat);
        let lp = ExitNet::loss(&probe.forward(input, &mut cache), exit_label);
        let mask_p = relu_mask(&cache);
        flat[idx] = orig - H;
        probe.set_params_from_flat(&flat);
        let lm = ExitNet::loss(&probe.forward(input, &mut cache), exit_label);
        let mask_m = relu_mask(&cache);
        flat[idx] = orig;

        if mask_p == mask_m {
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic[idx];
            let scale = a.abs().max(numeric.abs());
            if scale >= 1e-7 {
                max_rel = max_rel.max((a - numeric).abs() / scale);
            }
        }
        idx += stride;
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::features::FeatureMatrix;
    use rand::Rng;

    fn random_input(seed: u64) -> FeatureMatrix {
        let mut r = rng::substream(seed, &[99]);
        let mut m = FeatureMatrix::zeros();
        for row in m.0.iter_mut() {
            for v in row.iter_mut() {
                *v = r.gen_range(-0.5..1.5);
            }
        }
        m
    }

    #[test]
    fn softmax_sums_to_one() {
        for seed in 0..20 {
            let net = ExitNet::init(seed);
            let mut cache = ForwardCache::new();
            let p = net.forward(&random_input(seed), &mut cache);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }

    #[test]
    fn loss_of_even_prediction_is_log_two() {
        let probs = [0.5, 0.5];
        let loss = ExitNet::loss(&probs, true);
        assert!((loss - 0.5f64.ln().abs()).abs() < 1e-12);
        assert!((loss - 0.693).abs() < 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = ExitNet::init(3);
        let err = gradient_check(&net, &random_input(4), true);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_match_on_zero_input() {
        let net = ExitNet::init(5);
        let err = gradient_check(&net, &FeatureMatrix::zeros(), false);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // negative control for the checker itself: a deliberately wrong
        // "analytic" gradient must blow past the tolerance
        let net = ExitNet::init(6);
        let input = random_input(7);
        let mut cache = ForwardCache::new();
        let mut grads = Grads::zeros_like(&net);
        let mut scratch = BackwardScratch::new();
        net.forward(&input, &mut cache);
        net.backward(&cache, true, &mut grads, &mut scratch);
        let analytic = grads.flatten();

        // recompute one numeric gradient and compare against a corrupted
        // analytic value
        let mut flat = net.flatten_params();
        let mut probe = net.clone();
        let idx = flat.len() / 2;
        let h = 1e-5;
        let orig = flat[idx];
        flat[idx] = orig + h;
        probe.set_params_from_flat(&flat);
        let lp = ExitNet::loss(&probe.forward(&input, &mut cache), true);
        flat[idx] = orig - h;
        probe.set_params_from_flat(&flat);
        let lm = ExitNet::loss(&probe.forward(&input, &mut cache), true);
        let numeric = (lp - lm) / (2.0 * h);
        let corrupted = analytic[idx] * 3.0 + 0.5;
        let rel = (corrupted - numeric).abs() / corrupted.abs().max(numeric.abs());
        assert!(rel > 1e-2);
    }

    #[test]
    fn sgd_reduces_loss_on_one_row() {
        let mut net = ExitNet::init(8);
        let input = random_input(9);
        let mut cache = ForwardCache::new();
        let mut scratch = BackwardScratch::new();
        let before = ExitNet::loss(&net.forward(&input, &mut cache), true);
        for _ in 0..30 {
            let mut grads = Grads::zeros_like(&net);
            net.forward(&input, &mut cache);
            net.backward(&cache, true, &mut grads, &mut scratch);
            net.apply_sgd(&grads, 0.05, 1);
        }
        let after = ExitNet::loss(&net.forward(&input, &mut cache), true);
        assert!(after < before);
    }
}
