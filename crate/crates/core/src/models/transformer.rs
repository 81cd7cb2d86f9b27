//! A one-layer, one-head causal transformer over day sequences.
//!
//! Each day vector is standardized, projected to `d_model`, and fed through a
//! post-norm encoder layer (self-attention, residual, layer norm, optional
//! feed-forward block with its own residual and norm). There are no
//! positional embeddings. The prediction is read from the anchor position.
//!
//! Attention from the anchor `a` is restricted to positions `a-h+1..=a`.
//! Logits outside the window are set to [`MASKED_LOGIT`], whose softmax
//! weight is exactly zero in double precision, and masked positions are never
//! read. Forward and backward passes are written out by hand for this fixed
//! architecture.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in for `-inf` on masked attention logits.
pub const MASKED_LOGIT: f64 = -1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub ff_hidden: usize,
    pub feed_forward: bool,
    pub attention_dropout: f64,
    pub output_dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub layer_norm_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            ff_hidden: 32,
            feed_forward: true,
            attention_dropout: 0.3,
            output_dropout: 0.1,
            learning_rate: 1e-3,
            weight_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            layer_norm_eps: 1e-5,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// Trainable tensors, row-major (`out x in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w_proj: Vec<f64>,
    pub b_proj: Vec<f64>,
    pub w_q: Vec<f64>,
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_ff1: Vec<f64>,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Vec<f64>,
    pub b_ff2: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_head: Vec<f64>,
    pub b_head: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 20] = [
    "w_proj", "b_proj", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "ln1_gain", "ln1_bias",
    "w_ff1", "b_ff1", "w_ff2", "b_ff2", "ln2_gain", "ln2_bias", "w_head", "b_head",
];

impl Params {
    fn zeros(d_in: usize, d: usize, f: usize) -> Self {
        Self {
            w_proj: vec![0.0; d * d_in],
            b_proj: vec![0.0; d],
            w_q: vec![0.0; d * d],
            b_q: vec![0.0; d],
            w_k: vec![0.0; d * d],
            b_k: vec![0.0; d],
            w_v: vec![0.0; d * d],
            b_v: vec![0.0; d],
            w_o: vec![0.0; d * d],
            b_o: vec![0.0; d],
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            w_ff1: vec![0.0; f * d],
            b_ff1: vec![0.0; f],
            w_ff2: vec![0.0; d * f],
            b_ff2: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w_head: vec![0.0; d],
            b_head: vec![0.0; 1],
        }
    }

    fn init(d_in: usize, d: usize, f: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(d_in, d, f);
        let mut xavier = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-a..a);
            }
        };
        xavier(&mut p.w_proj, d_in, d);
        xavier(&mut p.w_q, d, d);
        xavier(&mut p.w_k, d, d);
        xavier(&mut p.w_v, d, d);
        xavier(&mut p.w_o, d, d);
        xavier(&mut p.w_ff1, d, f);
        xavier(&mut p.w_ff2, f, d);
        xavier(&mut p.w_head, d, 1);
        p.ln1_gain.fill(1.0);
        p.ln2_gain.fill(1.0);
        p
    }

    pub fn tensors(&self) -> [&Vec<f64>; 20] {
        [
            &self.w_proj,
            &self.b_proj,
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_head,
            &self.b_head,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 20] {
        [
            &mut self.w_proj,
            &mut self.b_proj,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_head,
            &mut self.b_head,
        ]
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroTransformer {
    pub config: TransformerConfig,
    pub input_dim: usize,
    pub window: usize,
    /// Per-feature standardization fitted on training days.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Mean training target; the network predicts deviations from it.
    pub target_offset: f64,
    pub params: Params,
    pub epochs_run: usize,
    pub best_dev_mae: Option<f64>,
}

/// Dropout multipliers for one sequence (`1/(1-p)` or `0`).
#[derive(Debug, Clone, Default)]
pub struct DropoutMasks {
    /// One per window position.
    pub attention: Vec<f64>,
    /// One per model dimension.
    pub output: Vec<f64>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| {
            bo + w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

/// `dw += dy (x) x`, `db += dy`, returns `W' dy`.
fn matvec_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LayerNormCache {
    normed: Vec<f64>,
    inv_std: f64,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normed: Vec<f64> = x.iter().map(|v| (v - mu) * inv_std).collect();
    let y = normed
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((h, g), b)| g * h + b)
        .collect();
    (y, LayerNormCache { normed, inv_std })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() as f64;
    let mut dn = vec![0.0; dy.len()];
    for i in 0..dy.len() {
        dgain[i] += dy[i] * cache.normed[i];
        dbias[i] += dy[i];
        dn[i] = dy[i] * gain[i];
    }
    let sum_dn: f64 = dn.iter().sum();
    let sum_dn_h: f64 = dn.iter().zip(&cache.normed).map(|(a, b)| a * b).sum();
    dn.iter()
        .zip(&cache.normed)
        .map(|(d, h)| cache.inv_std / n * (n * d - sum_dn - h * sum_dn_h))
        .collect()
}

/// Everything the backward pass needs from one forward pass.
struct Trace {
    lo: usize,
    inputs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    probs: Vec<f64>,
    dropped_probs: Vec<f64>,
    attn_mask: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LayerNormCache,
    u: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ln2: Option<LayerNormCache>,
    out_mask: Vec<f64>,
    dropped_out: Vec<f64>,
    pred: f64,
}

impl MicroTransformer {
    /// Untrained model with seeded initial weights.
    pub fn new(input_dim: usize, window: usize, config: TransformerConfig) -> Result<Self> {
        if input_dim == 0 || window == 0 || config.d_model == 0 {
            return Err(Error::Param("transformer dimensions must be positive".into()));
        }
        if config.feed_forward && config.ff_hidden == 0 {
            return Err(Error::Param("feed-forward width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(input_dim, config.d_model, config.ff_hidden, &mut rng);
        Ok(Self {
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            target_offset: 0.0,
            input_dim,
            window,
            params,
            config,
            epochs_run: 0,
            best_dev_mae: None,
        })
    }

    fn check_sequence(&self, seq: &[Vec<f64>], anchor: usize) -> Result<()> {
        if anchor >= seq.len() {
            return Err(Error::Shape(format!(
                "anchor {anchor} outside sequence of length {}",
                seq.len()
            )));
        }
        let lo = (anchor + 1).saturating_sub(self.window);
        if let Some(bad) = seq[lo..=anchor].iter().find(|v| v.len() != self.input_dim) {
            return Err(Error::Shape(format!(
                "expected day width {}, got {}",
                self.input_dim,
                bad.len()
            )));
        }
        Ok(())
    }

    /// Eval-mode prediction at the last position.
    pub fn predict_sequence(&self, seq: &[Vec<f64>]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        self.predict_at(seq, seq.len() - 1)
    }

    /// Eval-mode prediction read from position `anchor`.
    pub fn predict_at(&self, seq: &[Vec<f64>], anchor: usize) -> Result<f64> {
        self.check_sequence(seq, anchor)?;
        Ok(self.forward(seq, anchor, None).pred + self.target_offset)
    }

    /// Attention weights of the anchor over every position of `seq`.
    pub fn attention_weights(&self, seq: &[Vec<f64>], anchor: usize) -> Result<Vec<f64>> {
        self.check_sequence(seq, anchor)?;
        let t = self.forward(seq, anchor, None);
        let mut full = vec![0.0; seq.len()];
        full[t.lo..=anchor].copy_from_slice(&t.probs);
        Ok(full)
    }

    /// Attention logits of the anchor over every position, masked ones included.
    pub fn attention_logits(&self, seq: &[Vec<f64>], anchor: usize) -> Result<Vec<f64>> {
        self.check_sequence(seq, anchor)?;
        let t = self.forward(seq, anchor, None);
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        Ok((0..seq.len())
            .map(|j| {
                if j >= t.lo && j <= anchor {
                    dot(&t.q, &t.k[j - t.lo]) * scale
                } else {
                    MASKED_LOGIT
                }
            })
            .collect())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn forward(&self, seq: &[Vec<f64>], anchor: usize, masks: Option<&DropoutMasks>) -> Trace {
        let p = &self.params;
        let cfg = &self.config;
        let d = cfg.d_model;
        let lo = (anchor + 1).saturating_sub(self.window);
        let inputs: Vec<Vec<f64>> = seq[lo..=anchor].iter().map(|x| self.standardize(x)).collect();
        let z: Vec<Vec<f64>> = inputs.iter().map(|x| matvec(&p.w_proj, &p.b_proj, x)).collect();
        let za = z.last().expect("non-empty window");
        let q = matvec(&p.w_q, &p.b_q, za);
        let k: Vec<Vec<f64>> = z.iter().map(|zj| matvec(&p.w_k, &p.b_k, zj)).collect();
        let v: Vec<Vec<f64>> = z.iter().map(|zj| matvec(&p.w_v, &p.b_v, zj)).collect();

        let scale = 1.0 / (d as f64).sqrt();
        let logits: Vec<f64> = k.iter().map(|kj| dot(&q, kj) * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let attn_mask = masks.map_or_else(|| vec![1.0; probs.len()], |m| m.attention.clone());
        let dropped_probs: Vec<f64> = probs.iter().zip(&attn_mask).map(|(a, b)| a * b).collect();
        let mut ctx = vec![0.0; d];
        for (pj, vj) in dropped_probs.iter().zip(&v) {
            for (c, x) in ctx.iter_mut().zip(vj) {
                *c += pj * x;
            }
        }
        let attn_out = matvec(&p.w_o, &p.b_o, &ctx);
        let r1: Vec<f64> = za.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let (u, ln1) = layer_norm(&r1, &p.ln1_gain, &p.ln1_bias, cfg.layer_norm_eps);

        let (e, ff_pre, ff_act, ln2) = if cfg.feed_forward {
            let ff_pre = matvec(&p.w_ff1, &p.b_ff1, &u);
            let ff_act: Vec<f64> = ff_pre.iter().map(|x| x.max(0.0)).collect();
            let ff_out = matvec(&p.w_ff2, &p.b_ff2, &ff_act);
            let r2: Vec<f64> = u.iter().zip(&ff_out).map(|(a, b)| a + b).collect();
            let (e, ln2) = layer_norm(&r2, &p.ln2_gain, &p.ln2_bias, cfg.layer_norm_eps);
            (e, ff_pre, ff_act, Some(ln2))
        } else {
            (u.clone(), Vec::new(), Vec::new(), None)
        };

        let out_mask = masks.map_or_else(|| vec![1.0; d], |m| m.output.clone());
        let dropped_out: Vec<f64> = e.iter().zip(&out_mask).map(|(a, b)| a * b).collect();
        let pred = p.b_head[0] + dot(&p.w_head, &dropped_out);
        Trace {
            lo,
            inputs,
            z,
            q,
            k,
            v,
            probs,
            dropped_probs,
            attn_mask,
            ctx,
            ln1,
            u,
            ff_pre,
            ff_act,
            ln2,
            out_mask,
            dropped_out,
            pred,
        }
    }

    /// Accumulates `d loss / d params` given `d loss / d pred`.
    fn backward(&self, t: &Trace, dpred: f64, g: &mut Params) {
        let p = &self.params;
        let d = self.config.d_model;

        g.b_head[0] += dpred;
        for i in 0..d {
            g.w_head[i] += dpred * t.dropped_out[i];
        }
        let de: Vec<f64> = (0..d).map(|i| dpred * p.w_head[i] * t.out_mask[i]).collect();

        let du = match &t.ln2 {
            Some(ln2) => {
                let dr2 = layer_norm_backward(ln2, &p.ln2_gain, &de, &mut g.ln2_gain, &mut g.ln2_bias);
                let dact = matvec_backward(&p.w_ff2, &t.ff_act, &dr2, &mut g.w_ff2, &mut g.b_ff2);
                let dpre: Vec<f64> = dact
                    .iter()
                    .zip(&t.ff_pre)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                let du_ff = matvec_backward(&p.w_ff1, &t.u, &dpre, &mut g.w_ff1, &mut g.b_ff1);
                dr2.iter().zip(&du_ff).map(|(a, b)| a + b).collect()
            }
            None => de,
        };
        let dr1 = layer_norm_backward(&t.ln1, &p.ln1_gain, &du, &mut g.ln1_gain, &mut g.ln1_bias);

        let n = t.z.len();
        let mut dz: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for (a, b) in dz[n - 1].iter_mut().zip(&dr1) {
            *a += b;
        }
        let dctx = matvec_backward(&p.w_o, &t.ctx, &dr1, &mut g.w_o, &mut g.b_o);

        let mut dprobs = vec![0.0; n];
        let mut dv: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            dprobs[j] = dot(&dctx, &t.v[j]) * t.attn_mask[j];
            dv.push(dctx.iter().map(|c| c * t.dropped_probs[j]).collect());
        }
        let weighted: f64 = t.probs.iter().zip(&dprobs).map(|(a, b)| a * b).sum();
        let scale = 1.0 / (d as f64).sqrt();
        let dlogits: Vec<f64> = (0..n)
            .map(|j| t.probs[j] * (dprobs[j] - weighted) * scale)
            .collect();

        let mut dq = vec![0.0; d];
        for j in 0..n {
            for i in 0..d {
                dq[i] += dlogits[j] * t.k[j][i];
            }
            let dk: Vec<f64> = t.q.iter().map(|qi| dlogits[j] * qi).collect();
            let dzk = matvec_backward(&p.w_k, &t.z[j], &dk, &mut g.w_k, &mut g.b_k);
            let dzv = matvec_backward(&p.w_v, &t.z[j], &dv[j], &mut g.w_v, &mut g.b_v);
            for i in 0..d {
                dz[j][i] += dzk[i] + dzv[i];
            }
        }
        let dzq = matvec_backward(&p.w_q, &t.z[n - 1], &dq, &mut g.w_q, &mut g.b_q);
        for (a, b) in dz[n - 1].iter_mut().zip(&dzq) {
            *a += b;
        }
        for j in 0..n {
            matvec_backward(&p.w_proj, &t.inputs[j], &dz[j], &mut g.w_proj, &mut g.b_proj);
        }
    }

    /// Half squared error of one sequence and its parameter gradient.
    /// Exposed for gradient checking; `target` is on the network's scale
    /// (before `target_offset` is added back).
    pub fn loss_and_gradient(
        &self,
        seq: &[Vec<f64>],
        target: f64,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Params)> {
        if seq.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        let anchor = seq.len() - 1;
        self.check_sequence(seq, anchor)?;
        let t = self.forward(seq, anchor, masks);
        let r = t.pred - target;
        let mut g = self.params.zeros_like();
        self.backward(&t, r, &mut g);
        Ok((0.5 * r * r, g))
    }

    fn sample_masks(&self, n_positions: usize, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let draw = |rate: f64, n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            if rate <= 0.0 {
                return vec![1.0; n];
            }
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        DropoutMasks {
            attention: draw(self.config.attention_dropout, n_positions, rng),
            output: draw(self.config.output_dropout, self.config.d_model, rng),
        }
    }
}

fn standardization(train: &[Vec<Vec<f64>>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for seq in train {
        for x in seq {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
            count += 1;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; dim];
    for seq in train {
        for x in seq {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / count as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn check_sequences(
    seqs: &[Vec<Vec<f64>>],
    targets: &[f64],
    window: usize,
    dim: usize,
    what: &str,
) -> Result<()> {
    if seqs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{what}: {} sequences but {} targets",
            seqs.len(),
            targets.len()
        )));
    }
    for s in seqs {
        if s.len() != window || s.iter().any(|x| x.len() != dim) {
            return Err(Error::Shape(format!(
                "{what}: every sequence must be {window} x {dim}"
            )));
        }
    }
    if targets
        .iter()
        .chain(seqs.iter().flatten().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Param(format!("{what}: non-finite values")));
    }
    Ok(())
}

/// Trains with AdamW on squared error, early-stopping on dev MAE.
///
/// Every sequence must be `window x input_dim`. The parameters with the best
/// dev MAE seen are returned.
pub fn fit_transformer(
    train: (&[Vec<Vec<f64>>], &[f64]),
    dev: (&[Vec<Vec<f64>>], &[f64]),
    window: usize,
    config: &TransformerConfig,
) -> Result<MicroTransformer> {
    let (train_x, train_y) = train;
    let (dev_x, dev_y) = dev;
    if train_x.is_empty() {
        return Err(Error::DegenerateSplit("empty training set".into()));
    }
    if dev_x.is_empty() {
        return Err(Error::DegenerateSplit("empty development set".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::Param(
            "batch size and epoch budget must be positive".into(),
        ));
    }
    let dim = train_x[0].first().map_or(0, Vec::len);
    check_sequences(train_x, train_y, window, dim, "train")?;
    check_sequences(dev_x, dev_y, window, dim, "dev")?;

    let mut model = MicroTransformer::new(dim, window, config.clone())?;
    let (mean, scale) = standardization(train_x, dim);
    model.input_mean = mean;
    model.input_scale = scale;
    model.target_offset = train_y.iter().sum::<f64>() / train_y.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let mut m1 = model.params.zeros_like();
    let mut m2 = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut step = 0usize;
    let mut best: Option<(f64, Params)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = model.params.zeros_like();
            let mut loss = 0.0;
            let inv_b = 1.0 / batch.len() as f64;
            for &i in batch {
                let masks = model.sample_masks(window, &mut rng);
                let t = model.forward(&train_x[i], window - 1, Some(&masks));
                let r = t.pred - (train_y[i] - model.target_offset);
                loss += r * r * inv_b;
                model.backward(&t, 2.0 * r * inv_b, &mut grad);
            }
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    message: format!("non-finite loss in epoch {epoch}"),
                });
            }
            let c1 = 1.0 - config.beta1.powi(step as i32);
            let c2 = 1.0 - config.beta2.powi(step as i32);
            for ((w, g), (a, b)) in model
                .params
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors())
                .zip(m1.tensors_mut().into_iter().zip(m2.tensors_mut()))
            {
                for i in 0..w.len() {
                    w[i] -= config.learning_rate * config.weight_decay * w[i];
                    a[i] = config.beta1 * a[i] + (1.0 - config.beta1) * g[i];
                    b[i] = config.beta2 * b[i] + (1.0 - config.beta2) * g[i] * g[i];
                    w[i] -= config.learning_rate * (a[i] / c1) / ((b[i] / c2).sqrt() + config.adam_eps);
                }
            }
        }
        model.epochs_run = epoch + 1;

        let mut dev_mae = 0.0;
        for (x, y) in dev_x.iter().zip(dev_y) {
            dev_mae += (model.predict_sequence(x)? - y).abs();
        }
        dev_mae /= dev_x.len() as f64;
        if !dev_mae.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("non-finite dev MAE after epoch {epoch}"),
            });
        }
        match &best {
            Some((b, _)) if dev_mae >= *b => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((dev_mae, model.params.clone()));
                stale = 0;
            }
        }
    }
    if let Some((score, params)) = best {
        model.params = params;
        model.best_dev_mae = Some(score);
    }
    Ok(model)
}
