//! Frame-level latent-region action scoring.
//!
//! The score of action `a` on a frame is
//!
//! ```text
//! f(a) = w_p[a] · primary + b[a] + max_{z in candidates} w_z[a] · secondary[z]
//! ```
//!
//! Probabilities are the softmax of the scores and training minimises the
//! mean cross-entropy. The max is treated as a latent choice: for a fixed
//! forward pass the gradient flows only into each action's winning
//! secondary region (lowest index on ties).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FrameSample, ProbSequence, ProbShot};
use crate::error::{Error, Result};
use crate::linalg::{argmax, cross_entropy, dot_f32, softmax, Matrix};
use crate::optim::{ordered_sum, MomentumSgd, Parameters, StepDecay};
use crate::par;

const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    #[serde(rename = "W_p")]
    pub w_primary: Matrix,
    #[serde(rename = "W_z")]
    pub w_secondary: Matrix,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

impl ScorerParams {
    pub fn zeros(num_actions: usize, dim: usize) -> Self {
        ScorerParams {
            w_primary: Matrix::zeros(num_actions, dim),
            w_secondary: Matrix::zeros(num_actions, dim),
            bias: vec![0.0; num_actions],
        }
    }

    /// Weights i.i.d. `U[-0.01, 0.01]`, biases zero.
    pub fn init<R: Rng + ?Sized>(num_actions: usize, dim: usize, rng: &mut R) -> Self {
        ScorerParams {
            w_primary: Matrix::uniform(num_actions, dim, INIT_SCALE, rng),
            w_secondary: Matrix::uniform(num_actions, dim, INIT_SCALE, rng),
            bias: vec![0.0; num_actions],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.w_primary.cols()
    }

    fn check_consistent(&self) -> Result<()> {
        let (a, d) = (self.bias.len(), self.w_primary.cols());
        if self.w_primary.rows() != a || self.w_secondary.rows() != a || self.w_secondary.cols() != d {
            return Err(Error::Dimension(format!(
                "scorer parameter shapes disagree: W_p {}x{}, W_z {}x{}, b {}",
                self.w_primary.rows(),
                self.w_primary.cols(),
                self.w_secondary.rows(),
                self.w_secondary.cols(),
                a
            )));
        }
        Ok(())
    }
}

impl Parameters for ScorerParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("W_p".into(), self.w_primary.as_slice()),
            ("W_z".into(), self.w_secondary.as_slice()),
            ("b".into(), &self.bias),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("W_p".into(), self.w_primary.as_mut_slice()),
            ("W_z".into(), self.w_secondary.as_mut_slice()),
            ("b".into(), &mut self.bias),
        ]
    }

    fn zeros_like(&self) -> Self {
        ScorerParams::zeros(self.num_actions(), self.dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    /// Winning secondary index (into `frame.secondaries`) per action.
    pub argmax_secondary: Vec<usize>,
}

impl ScorerOutput {
    pub fn predicted(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Scores every action on `frame`, maximising over `candidates`.
pub fn score(params: &ScorerParams, frame: &FrameSample, candidates: &[usize]) -> Result<ScorerOutput> {
    params.check_consistent()?;
    let dim = params.dim();
    if frame.primary.len() != dim {
        return Err(Error::Dimension(format!(
            "primary vector has length {}, parameters expect {}",
            frame.primary.len(),
            dim
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Dimension("empty candidate set".into()));
    }
    for &z in candidates {
        let v = frame.secondaries.get(z).ok_or_else(|| {
            Error::Dimension(format!(
                "candidate {z} out of range ({} secondaries)",
                frame.secondaries.len()
            ))
        })?;
        if v.len() != dim {
            return Err(Error::Dimension(format!(
                "secondary {z} has length {}, parameters expect {dim}",
                v.len()
            )));
        }
    }

    let num_actions = params.num_actions();
    let mut scores = Vec::with_capacity(num_actions);
    let mut argmax_secondary = Vec::with_capacity(num_actions);
    for a in 0..num_actions {
        let wz = params.w_secondary.row(a);
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &z in candidates {
            let s = dot_f32(wz, &frame.secondaries[z]);
            if s > best.1 || (s == best.1 && z < best.0) {
                best = (z, s);
            }
        }
        scores.push(dot_f32(params.w_primary.row(a), &frame.primary) + params.bias[a] + best.1);
        argmax_secondary.push(best.0);
    }
    let probs = softmax(&scores);
    Ok(ScorerOutput {
        scores,
        probs,
        argmax_secondary,
    })
}

/// A frame paired with the candidate secondaries used for it.
pub type Example<'a> = (&'a FrameSample, Vec<usize>);

fn example_loss_and_grad(params: &ScorerParams, frame: &FrameSample, candidates: &[usize]) -> Result<(f64, ScorerParams)> {
    let out = score(params, frame, candidates)?;
    let loss = cross_entropy(&out.scores, frame.label);
    let mut grads = params.zeros_like();
    for (a, &p) in out.probs.iter().enumerate() {
        let g = p - if a == frame.label { 1.0 } else { 0.0 };
        grads.bias[a] = g;
        for (w, &x) in grads.w_primary.row_mut(a).iter_mut().zip(&frame.primary) {
            *w = g * f64::from(x);
        }
        let z = &frame.secondaries[out.argmax_secondary[a]];
        for (w, &x) in grads.w_secondary.row_mut(a).iter_mut().zip(z) {
            *w = g * f64::from(x);
        }
    }
    Ok((loss, grads))
}

/// Mean cross-entropy over `batch` and its (sub)gradient with the latent
/// argmax fixed at the forward pass.
pub fn loss_and_grad(params: &ScorerParams, batch: &[Example<'_>]) -> Result<(f64, ScorerParams)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let parts = par::map(batch, |(frame, cands)| example_loss_and_grad(params, frame, cands));
    let parts: Vec<(f64, ScorerParams)> = parts.into_iter().collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
    let grads: Vec<ScorerParams> = parts.into_iter().map(|(_, g)| g).collect();
    let mut total = ordered_sum(params, &grads);
    total.scale(1.0 / n);
    Ok((loss, total))
}

/// Uniformly samples `min(k, n)` distinct secondary indices, returned sorted.
pub fn sample_secondaries<R: Rng + ?Sized>(frame: &FrameSample, k: usize, rng: &mut R) -> Vec<usize> {
    let n = frame.secondaries.len();
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub num_sampled_secondaries: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Ablation: keep `W_z` at zero so only the primary region is used.
    pub primary_only: bool,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        ScorerTrainConfig {
            learning_rate: 2e-4,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_interval: 30_000,
            batch_size: 10,
            num_sampled_secondaries: 10,
            max_iterations: 1_000,
            seed: 0,
            primary_only: false,
        }
    }
}

impl ScorerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_interval == 0 || self.batch_size == 0 || self.num_sampled_secondaries == 0 {
            return Err(Error::Config(
                "decay_interval, batch_size and num_sampled_secondaries must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerHistoryRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Parameters the trainer starts from for `config` on a problem of shape
/// `(num_actions, dim)`.
pub fn initial_params(num_actions: usize, dim: usize, config: &ScorerTrainConfig) -> ScorerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ScorerParams::init(num_actions, dim, &mut rng);
    if config.primary_only {
        params.w_secondary = Matrix::zeros(num_actions, dim);
    }
    params
}

/// Mini-batch SGD with momentum and step decay. Frames are reshuffled and
/// their candidate secondaries resampled at the start of every epoch.
pub fn train_frame_model(train: &Dataset, config: &ScorerTrainConfig) -> Result<(ScorerParams, Vec<ScorerHistoryRow>)> {
    config.validate()?;
    let frames: Vec<&FrameSample> = train.frames().collect();
    if frames.is_empty() {
        return Err(Error::Validation("training set has no frames".into()));
    }
    let mut params = initial_params(train.num_actions(), train.feature_dim, config);
    // Separate stream so the data order does not depend on parameter count.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let schedule = StepDecay {
        initial: config.learning_rate,
        factor: config.decay_factor,
        interval: config.decay_interval,
    };
    let mut opt = MomentumSgd::new(&params, config.momentum);
    let mut history = Vec::with_capacity(config.max_iterations);

    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let mut cursor = frames.len();
    for iteration in 0..config.max_iterations {
        if cursor >= frames.len() {
            order.shuffle(&mut rng);
            candidates = frames
                .iter()
                .map(|f| sample_secondaries(f, config.num_sampled_secondaries, &mut rng))
                .collect();
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(frames.len());
        let batch: Vec<Example<'_>> = order[cursor..end]
            .iter()
            .map(|&i| (frames[i], candidates[i].clone()))
            .collect();
        cursor = end;

        let (loss, mut grads) = loss_and_grad(&params, &batch)?;
        if config.primary_only {
            grads.w_secondary.as_mut_slice().fill(0.0);
        }
        let lr = schedule.rate(iteration);
        history.push(ScorerHistoryRow { iteration, lr, loss });
        opt.step(&mut params, &grads, lr);
    }
    if !params.is_finite() {
        return Err(Error::Validation("training diverged (non-finite parameters)".into()));
    }
    Ok((params, history))
}

/// Which secondaries to maximise over at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    All,
    /// `k` sampled regions per frame; the draw for frame `i` (dataset order)
    /// depends only on `(seed, i)`.
    Sample { k: usize, seed: u64 },
}

/// Scores every frame of `dataset` in dataset order.
pub fn predict_dataset(params: &ScorerParams, dataset: &Dataset, mode: CandidateMode) -> Result<Vec<ScorerOutput>> {
    if params.dim() != dataset.feature_dim || params.num_actions() != dataset.num_actions() {
        return Err(Error::Dimension(format!(
            "parameters are {}x{}, dataset is {}x{}",
            params.num_actions(),
            params.dim(),
            dataset.num_actions(),
            dataset.feature_dim
        )));
    }
    let frames: Vec<&FrameSample> = dataset.frames().collect();
    par::map_range(frames.len(), |i| {
        let frame = frames[i];
        let cands = match mode {
            CandidateMode::All => (0..frame.secondaries.len()).collect(),
            CandidateMode::Sample { k, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                sample_secondaries(frame, k, &mut rng)
            }
        };
        score(params, frame, &cands)
    })
    .into_iter()
    .collect()
}

/// Regroups per-frame outputs (in dataset order) into probability sequences.
pub fn to_prob_sequences(dataset: &Dataset, outputs: &[ScorerOutput]) -> Result<Vec<ProbSequence>> {
    if outputs.len() != dataset.num_frames() {
        return Err(Error::Dimension(format!(
            "{} outputs for {} frames",
            outputs.len(),
            dataset.num_frames()
        )));
    }
    let mut it = outputs.iter();
    Ok(dataset
        .sequences
        .iter()
        .map(|seq| ProbSequence {
            id: seq.id.clone(),
            subject: seq.subject.clone(),
            shots: seq
                .shots
                .iter()
                .map(|shot| ProbShot {
                    label: shot.label,
                    frames: shot
                        .frames
                        .iter()
                        .map(|_| it.next().expect("length checked").probs.clone())
                        .collect(),
                })
                .collect(),
        })
        .collect())
}

/// Fraction of frames whose top-scoring action matches the label.
pub fn accuracy(dataset: &Dataset, outputs: &[ScorerOutput]) -> f64 {
    let hits = dataset
        .frames()
        .zip(outputs)
        .filter(|(f, o)| o.predicted() == f.label)
        .count();
    hits as f64 / outputs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerMeta {
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerCheckpoint {
    #[serde(flatten)]
    pub params: ScorerParams,
    pub meta: ScorerMeta,
}

impl ScorerCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::data::write_sorted_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: ScorerCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        ck.params.check_consistent()?;
        if ck.meta.num_actions != ck.params.num_actions() || ck.meta.dim != ck.params.dim() {
            return Err(Error::Validation("checkpoint meta disagrees with parameter shapes".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(primary: Vec<f32>, secondaries: Vec<Vec<f32>>, label: usize) -> FrameSample {
        FrameSample { primary, secondaries, label }
    }

    fn hand_params() -> ScorerParams {
        ScorerParams {
            w_primary: Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            w_secondary: Matrix::from_rows(vec![vec![1.0, -1.0], vec![0.5, 0.5]]).unwrap(),
            bias: vec![0.1, -0.2],
        }
    }

    #[test]
    fn single_secondary_always_wins() {
        let f = frame(vec![1.0, 1.0], vec![vec![0.3, 0.4]], 0);
        let out = score(&hand_params(), &f, &[0]).unwrap();
        assert_eq!(out.argmax_secondary, vec![0, 0]);
    }

    #[test]
    fn zero_params_are_uniform() {
        let f = frame(vec![1.0, 2.0], vec![vec![0.3, 0.4], vec![1.0, 1.0]], 1);
        let out = score(&ScorerParams::zeros(4, 2), &f, &[0, 1]).unwrap();
        assert!(out.scores.iter().all(|&s| s == 0.0));
        assert!(out.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        // all tied: lowest index
        assert_eq!(out.argmax_secondary, vec![0; 4]);
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let p = hand_params();
        let f = frame(vec![0.5, -1.0], vec![vec![1.0, 0.0], vec![0.0, -2.0], vec![2.0, 2.0]], 0);
        let out = score(&p, &f, &[0, 1, 2]).unwrap();
        // action 0: 0.5 + 0.1 + max(1, 2, 0) = 2.6 via region 1
        // action 1: -2.0 - 0.2 + max(0.5, -1, 2) = -0.2 via region 2
        assert!((out.scores[0] - 2.6).abs() < 1e-12);
        assert!((out.scores[1] + 0.2).abs() < 1e-12);
        assert_eq!(out.argmax_secondary, vec![1, 2]);
        // restricting candidates changes the latent choice
        let sub = score(&p, &f, &[0, 2]).unwrap();
        assert!((sub.scores[0] - 1.6).abs() < 1e-12);
        assert_eq!(sub.argmax_secondary, vec![0, 2]);
    }

    #[test]
    fn dimension_errors() {
        let f = frame(vec![0.5], vec![vec![1.0, 0.0]], 0);
        assert!(score(&hand_params(), &f, &[0]).is_err());
        let f = frame(vec![0.5, 1.0], vec![vec![1.0, 0.0]], 0);
        assert!(score(&hand_params(), &f, &[]).is_err());
        assert!(score(&hand_params(), &f, &[3]).is_err());
    }

    #[test]
    fn batch_loss_is_mean_of_singletons() {
        let p = hand_params();
        let f1 = frame(vec![0.5, -1.0], vec![vec![1.0, 0.0], vec![0.0, -2.0]], 0);
        let f2 = frame(vec![1.0, 1.0], vec![vec![0.3, 0.4]], 1);
        let (l1, g1) = loss_and_grad(&p, &[(&f1, vec![0, 1])]).unwrap();
        let (l2, g2) = loss_and_grad(&p, &[(&f2, vec![0])]).unwrap();
        let (l, g) = loss_and_grad(&p, &[(&f1, vec![0, 1]), (&f2, vec![0])]).unwrap();
        assert!((l - (l1 + l2) / 2.0).abs() < 1e-14);
        let mut avg = g1.clone();
        avg.add_scaled(&g2, 1.0);
        avg.scale(0.5);
        for (a, b) in g.to_flat().iter().zip(avg.to_flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut p = ScorerParams::zeros(2, 2);
        p.bias = vec![60.0, -60.0];
        let f = frame(vec![0.5, -1.0], vec![vec![1.0, 0.0]], 0);
        let (l, g) = loss_and_grad(&p, &[(&f, vec![0])]).unwrap();
        assert!(l < 1e-40);
        assert!(g.l2_norm() < 1e-40);
    }

    #[test]
    fn sampling_covers_all_when_k_large_and_is_deterministic() {
        let f = frame(vec![0.0], vec![vec![0.0]; 5], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_secondaries(&f, 10, &mut rng), vec![0, 1, 2, 3, 4]);
        let a = sample_secondaries(&f, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_secondaries(&f, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a[0] < a[1]);
    }

    #[test]
    fn sampling_frequencies_are_uniform() {
        let f = frame(vec![0.0], vec![vec![0.0]; 3], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        let draws = 30_000;
        for _ in 0..draws {
            counts[sample_secondaries(&f, 1, &mut rng)[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_uses_published_keys() {
        let ck = ScorerCheckpoint {
            params: hand_params(),
            meta: ScorerMeta { num_actions: 2, dim: 2, seed: 1, iterations: 5 },
        };
        let v: serde_json::Value = serde_json::to_value(&ck).unwrap();
        for key in ["W_p", "W_z", "b", "meta"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["meta"]["A"], 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(ScorerCheckpoint::load(&path).unwrap(), ck);
    }
}
