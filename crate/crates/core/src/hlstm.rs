//! Two-level recurrent model over per-frame action probabilities.
//!
//! Level 1 runs over every frame of a sequence, carrying its state across
//! shot boundaries, and a dense softmax head classifies each frame. Level 2
//! consumes the level-1 hidden output of each shot's last frame, in shot
//! order, and a second head classifies each shot. Training minimises
//!
//! ```text
//! L = (1 - beta) * sum_frames CE + beta * sum_shots CE
//! ```
//!
//! At test time only level 1 is used, so shot boundaries are not needed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ProbSequence;
use crate::error::{Error, Result};
use crate::evaluation::mean_sequence_accuracy;
use crate::linalg::{argmax, cross_entropy, softmax, Matrix};
use crate::lstm::{step_backward, step_cached, LstmLayerParams, StepCache};
use crate::optim::{clip_global_norm, ordered_sum, MomentumSgd, Parameters, StepDecay};
use crate::par;

/// Dense layer followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(num_actions: usize, hidden_dim: usize) -> Self {
        HeadParams {
            weights: Matrix::zeros(num_actions, hidden_dim),
            bias: vec![0.0; num_actions],
        }
    }

    pub fn init<R: Rng + ?Sized>(num_actions: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        HeadParams {
            weights: Matrix::uniform(num_actions, hidden_dim, scale, rng),
            bias: vec![0.0; num_actions],
        }
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bias.len()];
        self.weights.matvec_split(h, &[], &mut out);
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        out
    }

    /// Accumulates head gradients for `dlogits` and adds `Wᵀ dlogits` to `dh`.
    fn backward(&self, h: &[f64], dlogits: &[f64], grads: &mut HeadParams, dh: &mut [f64]) {
        grads.weights.add_outer_split(dlogits, h, &[]);
        grads.bias.iter_mut().zip(dlogits).for_each(|(b, d)| *b += d);
        self.weights.add_transpose_matvec(dlogits, dh);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlstmParams {
    pub level1: LstmLayerParams,
    pub frame_head: HeadParams,
    pub level2: LstmLayerParams,
    pub shot_head: HeadParams,
}

impl HlstmParams {
    pub fn zeros(num_actions: usize, hidden_dim: usize) -> Self {
        HlstmParams {
            level1: LstmLayerParams::zeros(num_actions, hidden_dim),
            frame_head: HeadParams::zeros(num_actions, hidden_dim),
            level2: LstmLayerParams::zeros(hidden_dim, hidden_dim),
            shot_head: HeadParams::zeros(num_actions, hidden_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(num_actions: usize, hidden_dim: usize, rng: &mut R) -> Self {
        HlstmParams {
            level1: LstmLayerParams::init(num_actions, hidden_dim, rng),
            frame_head: HeadParams::init(num_actions, hidden_dim, rng),
            level2: LstmLayerParams::init(hidden_dim, hidden_dim, rng),
            shot_head: HeadParams::init(num_actions, hidden_dim, rng),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.level1.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.level1.hidden_dim
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.level1.check_shapes()?;
        self.level2.check_shapes()?;
        let (a, h) = (self.num_actions(), self.hidden_dim());
        let head_ok = |p: &HeadParams| p.weights.rows() == a && p.weights.cols() == h && p.bias.len() == a;
        if self.level2.input_dim != h || self.level2.hidden_dim != h || !head_ok(&self.frame_head) || !head_ok(&self.shot_head) {
            return Err(Error::Dimension(format!(
                "hierarchical parameter shapes do not chain for A={a}, H={h}"
            )));
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every parameter.
    fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for (_, block) in self.blocks() {
            for v in block {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

impl Parameters for HlstmParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = self.level1.blocks("level1");
        out.push(("frame_head.W".into(), self.frame_head.weights.as_slice()));
        out.push(("frame_head.b".into(), &self.frame_head.bias));
        out.extend(self.level2.blocks("level2"));
        out.push(("shot_head.W".into(), self.shot_head.weights.as_slice()));
        out.push(("shot_head.b".into(), &self.shot_head.bias));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.level1.blocks_mut("level1");
        out.push(("frame_head.W".into(), self.frame_head.weights.as_mut_slice()));
        out.push(("frame_head.b".into(), &mut self.frame_head.bias));
        out.extend(self.level2.blocks_mut("level2"));
        out.push(("shot_head.W".into(), self.shot_head.weights.as_mut_slice()));
        out.push(("shot_head.b".into(), &mut self.shot_head.bias));
        out
    }

    fn zeros_like(&self) -> Self {
        HlstmParams::zeros(self.num_actions(), self.hidden_dim())
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`backward_sequence`].
#[derive(Debug, Clone)]
pub struct HlstmTrace {
    fingerprint: u64,
    shot_ends: Vec<usize>,
    level1: Vec<StepCache>,
    frame_logits: Vec<Vec<f64>>,
    level2: Vec<StepCache>,
    shot_logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HlstmForward {
    pub frame_probs: Vec<Vec<f64>>,
    pub shot_probs: Vec<Vec<f64>>,
    pub trace: HlstmTrace,
}

fn check_input(params: &HlstmParams, seq: &ProbSequence) -> Result<()> {
    params.check_shapes()?;
    if seq.shots.is_empty() || seq.shots.iter().any(|s| s.frames.is_empty()) {
        return Err(Error::Validation(format!(
            "sequence '{}' is empty or has an empty shot",
            seq.id
        )));
    }
    let a = params.num_actions();
    for shot in &seq.shots {
        for p in &shot.frames {
            if p.len() != a {
                return Err(Error::Dimension(format!(
                    "frame probability vector of length {} for {} actions",
                    p.len(),
                    a
                )));
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|v| *v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "sequence '{}': input is not a probability vector",
                    seq.id
                )));
            }
        }
    }
    Ok(())
}

/// Runs both levels over `seq`. Shot labels in `seq` are ignored here.
pub fn forward_sequence(params: &HlstmParams, seq: &ProbSequence) -> Result<HlstmForward> {
    check_input(params, seq)?;
    let h = params.hidden_dim();
    let mut level1 = Vec::with_capacity(seq.num_frames());
    let mut frame_logits = Vec::with_capacity(seq.num_frames());
    let mut shot_ends = Vec::with_capacity(seq.shots.len());
    let (mut h1, mut c1) = (vec![0.0; h], vec![0.0; h]);
    for shot in &seq.shots {
        for x in &shot.frames {
            let cache = step_cached(&params.level1, x, &h1, &c1);
            frame_logits.push(params.frame_head.logits(&cache.h));
            h1.clone_from(&cache.h);
            c1.clone_from(&cache.c);
            level1.push(cache);
        }
        shot_ends.push(level1.len() - 1);
    }
    let mut level2 = Vec::with_capacity(shot_ends.len());
    let mut shot_logits = Vec::with_capacity(shot_ends.len());
    let (mut h2, mut c2) = (vec![0.0; h], vec![0.0; h]);
    for &end in &shot_ends {
        let cache = step_cached(&params.level2, &level1[end].h, &h2, &c2);
        shot_logits.push(params.shot_head.logits(&cache.h));
        h2.clone_from(&cache.h);
        c2.clone_from(&cache.c);
        level2.push(cache);
    }
    Ok(HlstmForward {
        frame_probs: frame_logits.iter().map(|z| softmax(z)).collect(),
        shot_probs: shot_logits.iter().map(|z| softmax(z)).collect(),
        trace: HlstmTrace {
            fingerprint: params.fingerprint(),
            shot_ends,
            level1,
            frame_logits,
            level2,
            shot_logits,
        },
    })
}

/// How level-1 state is handled at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    /// Frames are fed sequentially through the whole sequence.
    CarryOver,
    /// State is zeroed at the start of each shot.
    ResetPerShot,
}

/// Level-1 frame probabilities; level 2 is not evaluated.
pub fn frame_probabilities(params: &HlstmParams, seq: &ProbSequence, mode: StateMode) -> Result<Vec<Vec<f64>>> {
    check_input(params, seq)?;
    let h = params.hidden_dim();
    let mut out = Vec::with_capacity(seq.num_frames());
    let (mut h1, mut c1) = (vec![0.0; h], vec![0.0; h]);
    for shot in &seq.shots {
        if mode == StateMode::ResetPerShot {
            h1.fill(0.0);
            c1.fill(0.0);
        }
        for x in &shot.frames {
            let cache = step_cached(&params.level1, x, &h1, &c1);
            out.push(softmax(&params.frame_head.logits(&cache.h)));
            h1 = cache.h;
            c1 = cache.c;
        }
    }
    Ok(out)
}

/// Frame-level and shot-level cross-entropy sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub frame: f64,
    pub shot: f64,
}

impl LossParts {
    pub fn total(&self, beta: f64) -> f64 {
        (1.0 - beta) * self.frame + beta * self.shot
    }
}

fn nll_sum(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.get(y)
                .map(|v| -v.ln())
                .ok_or_else(|| Error::Dimension(format!("label {y} out of range for {} classes", p.len())))
        })
        .sum()
}

/// Both loss terms from output probabilities.
pub fn hlstm_loss_parts(
    frame_probs: &[Vec<f64>],
    shot_probs: &[Vec<f64>],
    frame_labels: &[usize],
    shot_labels: &[usize],
) -> Result<LossParts> {
    if frame_probs.len() != frame_labels.len() || shot_probs.len() != shot_labels.len() {
        return Err(Error::Dimension(format!(
            "{} frame outputs / {} frame labels, {} shot outputs / {} shot labels",
            frame_probs.len(),
            frame_labels.len(),
            shot_probs.len(),
            shot_labels.len()
        )));
    }
    Ok(LossParts {
        frame: nll_sum(frame_probs, frame_labels)?,
        shot: nll_sum(shot_probs, shot_labels)?,
    })
}

/// `(1 - beta) L_N + beta L_M`.
pub fn hlstm_loss(
    frame_probs: &[Vec<f64>],
    shot_probs: &[Vec<f64>],
    frame_labels: &[usize],
    shot_labels: &[usize],
    beta: f64,
) -> Result<f64> {
    Ok(hlstm_loss_parts(frame_probs, shot_probs, frame_labels, shot_labels)?.total(beta))
}

/// Loss terms computed from the logits stored in a trace.
pub fn trace_loss(trace: &HlstmTrace, frame_labels: &[usize], shot_labels: &[usize]) -> Result<LossParts> {
    if trace.frame_logits.len() != frame_labels.len() || trace.shot_logits.len() != shot_labels.len() {
        return Err(Error::Dimension("label counts do not match the trace".into()));
    }
    let sum = |logits: &[Vec<f64>], labels: &[usize]| -> f64 {
        logits.iter().zip(labels).map(|(z, &y)| cross_entropy(z, y)).sum()
    };
    Ok(LossParts {
        frame: sum(&trace.frame_logits, frame_labels),
        shot: sum(&trace.shot_logits, shot_labels),
    })
}

fn softmax_grad(logits: &[f64], label: usize, weight: f64) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g.iter_mut().for_each(|v| *v *= weight);
    g
}

/// Exact gradient of `(1 - beta) L_N + beta L_M` by backpropagation through
/// time across both levels.
pub fn backward_sequence(
    params: &HlstmParams,
    trace: &HlstmTrace,
    frame_labels: &[usize],
    shot_labels: &[usize],
    beta: f64,
) -> Result<HlstmParams> {
    if trace.fingerprint != params.fingerprint() {
        return Err(Error::Validation("stale trace: parameters changed since the forward pass".into()));
    }
    if trace.frame_logits.len() != frame_labels.len() || trace.shot_logits.len() != shot_labels.len() {
        return Err(Error::Dimension("label counts do not match the trace".into()));
    }
    let h = params.hidden_dim();
    let mut grads = params.zeros_like();

    // Level 2, collecting the gradient that reaches each shot's last level-1 output.
    let mut into_level1 = vec![Vec::new(); trace.level1.len()];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for j in (0..trace.level2.len()).rev() {
        let cache = &trace.level2[j];
        let dlogits = softmax_grad(&trace.shot_logits[j], shot_labels[j], beta);
        let mut dh = dh_next.clone();
        params.shot_head.backward(&cache.h, &dlogits, &mut grads.shot_head, &mut dh);
        let (dx, dh_prev, dc_prev) = step_backward(&params.level2, cache, &dh, &dc_next, &mut grads.level2);
        into_level1[trace.shot_ends[j]] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    // Level 1.
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..trace.level1.len()).rev() {
        let cache = &trace.level1[t];
        let dlogits = softmax_grad(&trace.frame_logits[t], frame_labels[t], 1.0 - beta);
        let mut dh = dh_next.clone();
        for (d, extra) in dh.iter_mut().zip(&into_level1[t]) {
            *d += extra;
        }
        params.frame_head.backward(&cache.h, &dlogits, &mut grads.frame_head, &mut dh);
        let (_, dh_prev, dc_prev) = step_backward(&params.level1, cache, &dh, &dc_next, &mut grads.level1);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    Ok(grads)
}

/// Forward + backward on one labelled sequence.
pub fn sequence_loss_and_grad(params: &HlstmParams, seq: &ProbSequence, beta: f64) -> Result<(LossParts, HlstmParams)> {
    let fwd = forward_sequence(params, seq)?;
    let frame_labels = seq.frame_labels();
    let shot_labels = seq.shot_labels();
    let loss = trace_loss(&fwd.trace, &frame_labels, &shot_labels)?;
    let grads = backward_sequence(params, &fwd.trace, &frame_labels, &shot_labels, beta)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotAggregation {
    /// Arithmetic mean of the frame probabilities.
    Average,
    /// Frame `t` of `T` weighted by `(t + 1) / sum(1..=T)`.
    LinearWeighted,
}

/// Aggregates the frame predictions of one shot; ties go to the lowest label.
pub fn predict_shot(frame_probs: &[Vec<f64>], mode: ShotAggregation) -> Result<(usize, Vec<f64>)> {
    let first = frame_probs
        .first()
        .ok_or_else(|| Error::Validation("cannot aggregate an empty shot".into()))?;
    let n = frame_probs.len();
    let weight = |t: usize| -> f64 {
        match mode {
            ShotAggregation::Average => 1.0 / n as f64,
            ShotAggregation::LinearWeighted => (t + 1) as f64 / (n * (n + 1) / 2) as f64,
        }
    };
    let mut agg = vec![0.0; first.len()];
    for (t, p) in frame_probs.iter().enumerate() {
        if p.len() != agg.len() {
            return Err(Error::Dimension("frame probability vectors differ in length".into()));
        }
        let w = weight(t);
        agg.iter_mut().zip(p).for_each(|(a, v)| *a += w * v);
    }
    Ok((argmax(&agg), agg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlstmTrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    /// In iterations (mini-batches).
    pub decay_interval: usize,
    /// Sequences per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Permit `beta > 0` training from a fresh initialisation.
    pub allow_without_phase_one: bool,
}

impl Default for HlstmTrainConfig {
    fn default() -> Self {
        HlstmTrainConfig {
            beta: 0.0,
            learning_rate: 2e-4,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_interval: 30_000,
            batch_size: 6,
            epochs: 10,
            hidden_dim: 64,
            seed: 0,
            clip_norm: None,
            allow_without_phase_one: false,
        }
    }
}

impl HlstmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_interval == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("decay_interval, batch_size and hidden_dim must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum HlstmInit {
    /// Random initialisation from the config seed.
    Fresh,
    /// Continue from existing parameters (typically the `beta = 0` run).
    From(HlstmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlstmHistoryRow {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sequence frame loss.
    pub loss_frame: f64,
    /// Mean per-sequence shot loss.
    pub loss_shot: f64,
    pub loss: f64,
    pub frame_acc: f64,
    pub shot_acc: f64,
}

/// Accuracy summary of a model on a set of sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlstmMetrics {
    pub loss: LossParts,
    /// Mean over sequences of per-sequence level-1 frame accuracy.
    pub frame_acc: f64,
    /// Fraction of shots classified correctly by the level-2 head.
    pub shot_acc: f64,
}

/// Full forward pass over `seqs` (level-1 carry-over for frames, level 2 for shots).
pub fn evaluate_hlstm(params: &HlstmParams, seqs: &[ProbSequence]) -> Result<HlstmMetrics> {
    let per_seq = par::map(seqs, |seq| -> Result<_> {
        let fwd = forward_sequence(params, seq)?;
        let fl = seq.frame_labels();
        let sl = seq.shot_labels();
        let loss = trace_loss(&fwd.trace, &fl, &sl)?;
        let frame_pred: Vec<usize> = fwd.frame_probs.iter().map(|p| argmax(p)).collect();
        let shot_hits = fwd.shot_probs.iter().zip(&sl).filter(|(p, &y)| argmax(p) == y).count();
        Ok((loss, frame_pred, fl, shot_hits, sl.len()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per_seq.len().max(1) as f64;
    let loss = LossParts {
        frame: per_seq.iter().map(|r| r.0.frame).sum::<f64>() / n,
        shot: per_seq.iter().map(|r| r.0.shot).sum::<f64>() / n,
    };
    let pairs: Vec<(&[usize], &[usize])> = per_seq.iter().map(|r| (&r.1[..], &r.2[..])).collect();
    let frame_acc = mean_sequence_accuracy(&pairs)?;
    let shots: usize = per_seq.iter().map(|r| r.4).sum();
    let shot_acc = per_seq.iter().map(|r| r.3).sum::<usize>() as f64 / shots.max(1) as f64;
    Ok(HlstmMetrics { loss, frame_acc, shot_acc })
}

/// Mean per-sequence frame accuracy of level-1 predictions under `mode`.
pub fn frame_accuracy_with_mode(params: &HlstmParams, seqs: &[ProbSequence], mode: StateMode) -> Result<f64> {
    let preds = par::map(seqs, |seq| -> Result<Vec<usize>> {
        Ok(frame_probabilities(params, seq, mode)?.iter().map(|p| argmax(p)).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<usize>> = seqs.iter().map(ProbSequence::frame_labels).collect();
    let pairs: Vec<(&[usize], &[usize])> = preds.iter().zip(&labels).map(|(p, l)| (&p[..], &l[..])).collect();
    mean_sequence_accuracy(&pairs)
}

/// SGD with momentum and step decay over whole sequences (untruncated BPTT).
pub fn train_hlstm(
    train: &[ProbSequence],
    num_actions: usize,
    config: &HlstmTrainConfig,
    init: HlstmInit,
) -> Result<(HlstmParams, Vec<HlstmHistoryRow>)> {
    let run = train_impl(train, None, num_actions, config, init)?;
    Ok((run.params, run.history))
}

/// Result of [`train_hlstm_validated`].
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    /// Parameters after the selected epoch.
    pub params: HlstmParams,
    pub history: Vec<HlstmHistoryRow>,
    /// 0 means the initial parameters were never improved on.
    pub best_epoch: usize,
    pub best_val_frame_acc: f64,
}

/// Like [`train_hlstm`], but keeps the parameters of the epoch with the best
/// validation frame accuracy (the initial parameters count as epoch 0; ties
/// go to the earlier epoch).
pub fn train_hlstm_validated(
    train: &[ProbSequence],
    val: &[ProbSequence],
    num_actions: usize,
    config: &HlstmTrainConfig,
    init: HlstmInit,
) -> Result<ValidatedRun> {
    if val.is_empty() {
        return Err(Error::Validation("no validation sequences".into()));
    }
    train_impl(train, Some(val), num_actions, config, init)
}

fn train_impl(
    train: &[ProbSequence],
    val: Option<&[ProbSequence]>,
    num_actions: usize,
    config: &HlstmTrainConfig,
    init: HlstmInit,
) -> Result<ValidatedRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("no training sequences".into()));
    }
    let mut params = match init {
        HlstmInit::Fresh => {
            if config.beta > 0.0 && !config.allow_without_phase_one {
                return Err(Error::MissingPhaseOne { beta: config.beta });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            HlstmParams::init(num_actions, config.hidden_dim, &mut rng)
        }
        HlstmInit::From(p) => p,
    };
    params.check_shapes()?;
    if params.num_actions() != num_actions {
        return Err(Error::Dimension(format!(
            "initial parameters are for {} actions, data has {}",
            params.num_actions(),
            num_actions
        )));
    }
    for s in train.iter().chain(val.unwrap_or_default()) {
        s.validate(num_actions)?;
    }
    let val_acc = |p: &HlstmParams| -> Result<f64> {
        match val {
            Some(v) => frame_accuracy_with_mode(p, v, StateMode::CarryOver),
            None => Ok(0.0),
        }
    };
    let mut best = (0, val_acc(&params)?, params.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let schedule = StepDecay {
        initial: config.learning_rate,
        factor: config.decay_factor,
        interval: config.decay_interval,
    };
    let mut opt = MomentumSgd::new(&params, config.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut iteration = 0;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let parts = par::map(chunk, |&i| sequence_loss_and_grad(&params, &train[i], config.beta));
            let grads: Vec<HlstmParams> = parts
                .into_iter()
                .map(|r| r.map(|(_, g)| g))
                .collect::<Result<_>>()?;
            let mut total = ordered_sum(&params, &grads);
            total.scale(1.0 / chunk.len() as f64);
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut total, max);
            }
            opt.step(&mut params, &total, schedule.rate(iteration));
            iteration += 1;
        }
        if !params.is_finite() {
            return Err(Error::Validation(format!("training diverged in epoch {epoch}")));
        }
        let m = evaluate_hlstm(&params, train)?;
        history.push(HlstmHistoryRow {
            epoch,
            lr: schedule.rate(iteration.saturating_sub(1)),
            loss_frame: m.loss.frame,
            loss_shot: m.loss.shot,
            loss: m.loss.total(config.beta),
            frame_acc: m.frame_acc,
            shot_acc: m.shot_acc,
        });
        if val.is_some() {
            let acc = val_acc(&params)?;
            if acc > best.1 {
                best = (epoch, acc, params.clone());
            }
        }
    }
    if val.is_none() {
        best = (config.epochs, 0.0, params);
    }
    Ok(ValidatedRun {
        params: best.2,
        history,
        best_epoch: best.0,
        best_val_frame_acc: best.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub train_frame_acc: f64,
    pub val_frame_acc: f64,
    pub train_shot_acc: f64,
    pub val_shot_acc: f64,
}

#[derive(Debug, Clone)]
pub struct BetaSearch {
    pub best_beta: f64,
    pub best_params: HlstmParams,
    pub rows: Vec<BetaRow>,
}

/// The grid searched when none is given.
pub const DEFAULT_BETAS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Trains one second-phase model per `beta`, all from `phase_one`, each
/// stopped at its best validation epoch, and keeps the one with the best
/// validation frame accuracy (earliest on ties).
pub fn beta_grid_search(
    train: &[ProbSequence],
    val: &[ProbSequence],
    num_actions: usize,
    base: &HlstmTrainConfig,
    phase_one: &HlstmParams,
    betas: &[f64],
) -> Result<BetaSearch> {
    if betas.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    let runs = par::map(betas, |&beta| -> Result<(BetaRow, HlstmParams)> {
        let config = HlstmTrainConfig { beta, ..base.clone() };
        let params = train_hlstm_validated(train, val, num_actions, &config, HlstmInit::From(phase_one.clone()))?.params;
        let tr = evaluate_hlstm(&params, train)?;
        let va = evaluate_hlstm(&params, val)?;
        Ok((
            BetaRow {
                beta,
                train_frame_acc: tr.frame_acc,
                val_frame_acc: va.frame_acc,
                train_shot_acc: tr.shot_acc,
                val_shot_acc: va.shot_acc,
            },
            params,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, (row, _)) in runs.iter().enumerate() {
        if row.val_frame_acc > runs[best].0.val_frame_acc {
            best = i;
        }
    }
    let rows = runs.iter().map(|(r, _)| *r).collect();
    let (best_row, best_params) = runs.into_iter().nth(best).expect("non-empty grid");
    Ok(BetaSearch {
        best_beta: best_row.beta,
        best_params,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlstmMeta {
    pub beta: f64,
    /// 1 for the `beta = 0` run, 2 for `beta > 0`.
    pub phase: u8,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlstmCheckpoint {
    #[serde(flatten)]
    pub params: HlstmParams,
    pub meta: HlstmMeta,
}

impl HlstmCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::data::write_sorted_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: HlstmCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        ck.params.check_shapes()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProbShot;

    fn toy(shots: &[(usize, &[[f64; 3]])]) -> ProbSequence {
        ProbSequence {
            id: "t".into(),
            subject: "s".into(),
            shots: shots
                .iter()
                .map(|(label, frames)| ProbShot {
                    label: *label,
                    frames: frames.iter().map(|f| f.to_vec()).collect(),
                })
                .collect(),
        }
    }

    fn params(seed: u64) -> HlstmParams {
        HlstmParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_frame_shapes() {
        let seq = toy(&[(1, &[[0.2, 0.5, 0.3]])]);
        let f = forward_sequence(&params(1), &seq).unwrap();
        assert_eq!(f.frame_probs.len(), 1);
        assert_eq!(f.shot_probs.len(), 1);
        for p in f.frame_probs.iter().chain(&f.shot_probs) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = params(1);
        assert!(forward_sequence(&p, &toy(&[])).is_err());
        assert!(forward_sequence(&p, &toy(&[(0, &[[0.2, 0.2, 0.2]])])).is_err());
    }

    #[test]
    fn beta_endpoints_select_terms() {
        let fp = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]];
        let sp = vec![vec![0.3, 0.3, 0.4]];
        let parts = hlstm_loss_parts(&fp, &sp, &[0, 1], &[2]).unwrap();
        assert_eq!(hlstm_loss(&fp, &sp, &[0, 1], &[2], 0.0).unwrap(), parts.frame);
        assert_eq!(hlstm_loss(&fp, &sp, &[0, 1], &[2], 1.0).unwrap(), parts.shot);
        let half = hlstm_loss(&fp, &sp, &[0, 1], &[2], 0.5).unwrap();
        assert!((half - (parts.frame + parts.shot) / 2.0).abs() < 1e-15);
        assert!((parts.frame - (-(0.7f64).ln() - (0.8f64).ln())).abs() < 1e-15);
        assert!(hlstm_loss(&fp, &sp, &[0], &[2], 0.5).is_err());
    }

    #[test]
    fn graph_structure_zeroes_gradients() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1], [0.5, 0.25, 0.25]]), (2, &[[0.1, 0.1, 0.8]])]);
        let p = params(4);
        let (_, g1) = sequence_loss_and_grad(&p, &seq, 1.0).unwrap();
        assert!(g1.frame_head.weights.as_slice().iter().all(|v| *v == 0.0));
        assert!(g1.frame_head.bias.iter().all(|v| *v == 0.0));
        let (_, g0) = sequence_loss_and_grad(&p, &seq, 0.0).unwrap();
        for (name, block) in g0.blocks() {
            if name.starts_with("level2") || name.starts_with("shot_head") {
                assert!(block.iter().all(|v| *v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1]])]);
        let p = params(4);
        let f = forward_sequence(&p, &seq).unwrap();
        let mut q = p.clone();
        q.shot_head.bias[0] += 1e-3;
        assert!(backward_sequence(&q, &f.trace, &[0], &[0], 0.5).is_err());
        assert!(backward_sequence(&p, &f.trace, &[0], &[0], 0.5).is_ok());
    }

    #[test]
    fn level2_does_not_affect_frame_outputs() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1], [0.5, 0.25, 0.25]]), (2, &[[0.1, 0.1, 0.8]])]);
        let p = params(2);
        let mut q = p.clone();
        q.level2 = LstmLayerParams::init(4, 4, &mut ChaCha8Rng::seed_from_u64(99));
        q.shot_head.bias[1] = 3.0;
        let a = forward_sequence(&p, &seq).unwrap();
        let b = forward_sequence(&q, &seq).unwrap();
        assert_eq!(a.frame_probs, b.frame_probs);
        assert_ne!(a.shot_probs, b.shot_probs);
        assert_eq!(frame_probabilities(&p, &seq, StateMode::CarryOver).unwrap(), a.frame_probs);
    }

    #[test]
    fn predict_shot_modes() {
        let c = vec![vec![0.2, 0.5, 0.3]; 4];
        for mode in [ShotAggregation::Average, ShotAggregation::LinearWeighted] {
            let (y, p) = predict_shot(&c, mode).unwrap();
            assert_eq!(y, 1);
            for (a, b) in p.iter().zip(&c[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let frames = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.3, 0.7]];
        let (ya, pa) = predict_shot(&frames, ShotAggregation::Average).unwrap();
        let (yw, pw) = predict_shot(&frames, ShotAggregation::LinearWeighted).unwrap();
        // mean = (1.4/3, 1.6/3); weights (1, 2, 3)/6 give (2.2/6, 3.8/6)
        assert!((pa[0] - 1.4 / 3.0).abs() < 1e-12 && ya == 1);
        assert!((pw[0] - 2.2 / 6.0).abs() < 1e-12 && (pw[1] - 3.8 / 6.0).abs() < 1e-12 && yw == 1);
        let (yt, _) = predict_shot(&[vec![0.5, 0.5]], ShotAggregation::Average).unwrap();
        assert_eq!(yt, 0);
        assert!(predict_shot(&[], ShotAggregation::Average).is_err());
    }

    #[test]
    fn fresh_phase_two_requires_override() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1]])]);
        let cfg = HlstmTrainConfig { beta: 0.5, hidden_dim: 4, epochs: 1, ..Default::default() };
        assert!(matches!(
            train_hlstm(std::slice::from_ref(&seq), 3, &cfg, HlstmInit::Fresh),
            Err(Error::MissingPhaseOne { .. })
        ));
        let cfg = HlstmTrainConfig { allow_without_phase_one: true, ..cfg };
        assert!(train_hlstm(&[seq], 3, &cfg, HlstmInit::Fresh).is_ok());
    }

    #[test]
    fn zero_rate_leaves_params() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1], [0.5, 0.25, 0.25]]), (2, &[[0.1, 0.1, 0.8]])]);
        let cfg = HlstmTrainConfig { learning_rate: 0.0, hidden_dim: 4, epochs: 3, seed: 5, ..Default::default() };
        let init = HlstmParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let (p, hist) = train_hlstm(&[seq], 3, &cfg, HlstmInit::Fresh).unwrap();
        assert_eq!(p, init);
        assert_eq!(hist.len(), 3);
    }

    #[test]
    fn singleton_grid_returns_its_beta() {
        let seq = toy(&[(0, &[[0.6, 0.3, 0.1], [0.5, 0.25, 0.25]]), (2, &[[0.1, 0.1, 0.8]])]);
        let cfg = HlstmTrainConfig { learning_rate: 0.01, hidden_dim: 4, epochs: 2, ..Default::default() };
        let s = std::slice::from_ref(&seq);
        let r = beta_grid_search(s, s, 3, &cfg, &params(1), &[0.7]).unwrap();
        assert_eq!(r.best_beta, 0.7);
        assert_eq!(r.rows.len(), 1);
        assert!(beta_grid_search(s, s, 3, &cfg, &params(1), &[]).is_err());
    }
}
