//! Seeded synthetic datasets.
//!
//! Each action owns a random unit prototype `u_a`. A frame of a shot labelled
//! `a` carries the signal `u_a + N(0, sigma^2)` in its primary vector, in one
//! randomly placed secondary vector, or in both; everything else is isotropic
//! noise with per-coordinate variance `1/D` (unit expected norm), so
//! distractors are on the same scale as the signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ActionLabel, Dataset, FrameSample, ProbSequence, ProbShot, Sequence, Shot};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, softmax};

const VERBS: [&str; 5] = ["take", "open", "put", "close", "pour"];
const OBJECTS: [&str; 12] = [
    "bread", "cheese", "jam", "knife", "cup", "water", "coffee", "sugar", "spoon", "peanut",
    "mustard", "honey",
];
const MAX_PROTOTYPE_DOT: f64 = 0.5;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

// Independent generator streams derived from the seed.
const STREAM_PROTOTYPES: u64 = 1;
const STREAM_SEQUENCES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Primary,
    SecondaryOnly,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transitions {
    Uniform,
    Matrix(Vec<Vec<f64>>),
}

impl Transitions {
    /// Moves to `(a + 1) mod A` with probability `p_next`, otherwise uniformly
    /// to one of the remaining actions.
    pub fn cyclic(num_actions: usize, p_next: f64) -> Self {
        let rest = if num_actions > 1 {
            (1.0 - p_next) / (num_actions - 1) as f64
        } else {
            0.0
        };
        let m = (0..num_actions)
            .map(|a| {
                (0..num_actions)
                    .map(|b| {
                        if num_actions == 1 {
                            1.0
                        } else if b == (a + 1) % num_actions {
                            p_next
                        } else {
                            rest
                        }
                    })
                    .collect()
            })
            .collect();
        Transitions::Matrix(m)
    }

    fn validate(&self, num_actions: usize) -> Result<()> {
        if let Transitions::Matrix(m) = self {
            if m.len() != num_actions || m.iter().any(|r| r.len() != num_actions) {
                return Err(Error::Config(format!(
                    "transition matrix must be {num_actions}x{num_actions}"
                )));
            }
            for (i, row) in m.iter().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Config(format!(
                        "transition row {i} has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "transition row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn next<R: Rng>(&self, from: usize, num_actions: usize, rng: &mut R) -> usize {
        match self {
            Transitions::Uniform => rng.random_range(0..num_actions),
            Transitions::Matrix(m) => sample_categorical(&m[from], rng),
        }
    }
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_actions: usize,
    pub feature_dim: usize,
    /// Inclusive range.
    pub frames_per_shot: (usize, usize),
    /// Inclusive range.
    pub shots_per_sequence: (usize, usize),
    pub num_sequences: usize,
    pub num_subjects: usize,
    pub noise_sigma: f64,
    pub num_distractor_secondaries: usize,
    pub placement: Placement,
    pub transitions: Transitions,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_actions: 4,
            feature_dim: 8,
            frames_per_shot: (3, 6),
            shots_per_sequence: (3, 6),
            num_sequences: 8,
            num_subjects: 4,
            noise_sigma: 0.1,
            num_distractor_secondaries: 3,
            placement: Placement::Both,
            transitions: Transitions::Uniform,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions == 0 || self.feature_dim == 0 {
            return Err(Error::Config("num_actions and feature_dim must be positive".into()));
        }
        check_range("frames_per_shot", self.frames_per_shot)?;
        check_range("shots_per_sequence", self.shots_per_sequence)?;
        if self.num_subjects == 0 || self.num_sequences < self.num_subjects {
            return Err(Error::Config(
                "need num_subjects >= 1 and num_sequences >= num_subjects".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        if self.placement == Placement::Primary && self.num_distractor_secondaries == 0 {
            return Err(Error::Config(
                "placement=primary needs at least one distractor secondary".into(),
            ));
        }
        self.transitions.validate(self.num_actions)
    }

    fn secondaries_per_frame(&self) -> usize {
        self.num_distractor_secondaries + usize::from(self.placement != Placement::Primary)
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize)) -> Result<()> {
    if lo == 0 || lo > hi {
        Err(Error::Config(format!("{name} must satisfy 1 <= min <= max")))
    } else {
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vec<R: Rng>(dim: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

/// The per-action unit prototypes used by [`synth_generate`] for `config`.
pub fn synth_prototypes(config: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let mut rng = rng_for(config.seed, STREAM_PROTOTYPES);
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(config.num_actions);
    let mut attempts = 0;
    while protos.len() < config.num_actions {
        attempts += 1;
        if attempts > PROTOTYPE_ATTEMPTS * config.num_actions {
            return Err(Error::Config(format!(
                "could not draw {} prototypes in dimension {} with pairwise dot < {}",
                config.num_actions, config.feature_dim, MAX_PROTOTYPE_DOT
            )));
        }
        let mut u = gaussian_vec(config.feature_dim, 1.0, &mut rng);
        let n = l2_norm(&u);
        if n < 1e-12 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= n);
        if protos.iter().all(|p| dot(p, &u) < MAX_PROTOTYPE_DOT) {
            protos.push(u);
        }
    }
    Ok(protos)
}

pub(crate) fn synth_actions(num_actions: usize) -> Vec<ActionLabel> {
    (0..num_actions)
        .map(|a| {
            let verb = VERBS[a % VERBS.len()];
            let k = a / VERBS.len();
            let object = OBJECTS
                .get(k)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("object{k}"));
            ActionLabel::new(a, verb, object)
        })
        .collect()
}

fn shot_label_sequence<R: Rng>(
    transitions: &Transitions,
    num_actions: usize,
    len: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut labels = Vec::with_capacity(len);
    let mut current = rng.random_range(0..num_actions);
    labels.push(current);
    for _ in 1..len {
        current = transitions.next(current, num_actions, rng);
        labels.push(current);
    }
    labels
}

pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    let prototypes = synth_prototypes(config)?;
    let mut rng = rng_for(config.seed, STREAM_SEQUENCES);
    let dim = config.feature_dim;
    let noise_std = 1.0 / (dim as f64).sqrt();
    let signal_noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();

    let mut sequences = Vec::with_capacity(config.num_sequences);
    for i in 0..config.num_sequences {
        let n_shots = rng.random_range(config.shots_per_sequence.0..=config.shots_per_sequence.1);
        let labels = shot_label_sequence(&config.transitions, config.num_actions, n_shots, &mut rng);
        let mut shots = Vec::with_capacity(n_shots);
        for label in labels {
            let n_frames = rng.random_range(config.frames_per_shot.0..=config.frames_per_shot.1);
            let frames = (0..n_frames)
                .map(|_| {
                    let signal: Vec<f64> = prototypes[label]
                        .iter()
                        .map(|&u| u + signal_noise.sample(&mut rng))
                        .collect();
                    let primary = match config.placement {
                        Placement::Primary | Placement::Both => signal.clone(),
                        Placement::SecondaryOnly => gaussian_vec(dim, noise_std, &mut rng),
                    };
                    let mut secondaries: Vec<Vec<f64>> = (0..config.num_distractor_secondaries)
                        .map(|_| gaussian_vec(dim, noise_std, &mut rng))
                        .collect();
                    if config.placement != Placement::Primary {
                        let pos = rng.random_range(0..config.secondaries_per_frame());
                        secondaries.insert(pos, signal);
                    }
                    FrameSample {
                        primary: to_f32(primary),
                        secondaries: secondaries.into_iter().map(to_f32).collect(),
                        label,
                    }
                })
                .collect();
            shots.push(Shot::new(label, frames));
        }
        sequences.push(Sequence {
            id: format!("seq{i:03}"),
            subject: format!("subject{}", i % config.num_subjects),
            shots,
            provenance: None,
        });
    }
    let dataset = Dataset {
        actions: synth_actions(config.num_actions),
        sequences,
        feature_dim: dim,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Configuration for a synthetic benchmark of noisy per-frame action
/// probabilities with Markov shot-label structure.
///
/// Frame logits are `margin * onehot(label) + shot_noise + frame_noise`,
/// where `shot_noise` is drawn once per shot (errors correlated within a
/// shot) and `frame_noise` independently per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovProbConfig {
    pub num_actions: usize,
    pub frames_per_shot: (usize, usize),
    pub shots_per_sequence: (usize, usize),
    pub num_sequences: usize,
    pub num_subjects: usize,
    pub transitions: Transitions,
    pub margin: f64,
    pub shot_noise: f64,
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for MarkovProbConfig {
    fn default() -> Self {
        MarkovProbConfig {
            num_actions: 6,
            frames_per_shot: (4, 8),
            shots_per_sequence: (6, 10),
            num_sequences: 40,
            num_subjects: 4,
            transitions: Transitions::cyclic(6, 0.9),
            margin: 1.0,
            shot_noise: 1.0,
            frame_noise: 1.0,
            seed: 0,
        }
    }
}

impl MarkovProbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions < 2 {
            return Err(Error::Config("num_actions must be at least 2".into()));
        }
        check_range("frames_per_shot", self.frames_per_shot)?;
        check_range("shots_per_sequence", self.shots_per_sequence)?;
        if self.num_subjects == 0 || self.num_sequences < self.num_subjects {
            return Err(Error::Config(
                "need num_subjects >= 1 and num_sequences >= num_subjects".into(),
            ));
        }
        for (name, v) in [
            ("margin", self.margin),
            ("shot_noise", self.shot_noise),
            ("frame_noise", self.frame_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        self.transitions.validate(self.num_actions)
    }
}

pub fn synth_frame_probs(config: &MarkovProbConfig) -> Result<Vec<ProbSequence>> {
    config.validate()?;
    let mut rng = rng_for(config.seed, STREAM_SEQUENCES);
    let a = config.num_actions;
    let mut subjects: Vec<usize> = (0..config.num_sequences).map(|i| i % config.num_subjects).collect();
    subjects.shuffle(&mut rng);
    let mut out = Vec::with_capacity(config.num_sequences);
    for (i, subject) in subjects.into_iter().enumerate() {
        let n_shots = rng.random_range(config.shots_per_sequence.0..=config.shots_per_sequence.1);
        let labels = shot_label_sequence(&config.transitions, a, n_shots, &mut rng);
        let shots = labels
            .into_iter()
            .map(|label| {
                let bias = gaussian_vec(a, config.shot_noise, &mut rng);
                let n_frames = rng.random_range(config.frames_per_shot.0..=config.frames_per_shot.1);
                let frames = (0..n_frames)
                    .map(|_| {
                        let logits: Vec<f64> = (0..a)
                            .map(|k| {
                                let hit = if k == label { config.margin } else { 0.0 };
                                let eps: f64 = StandardNormal.sample(&mut rng);
                                hit + bias[k] + config.frame_noise * eps
                            })
                            .collect();
                        softmax(&logits)
                    })
                    .collect();
                ProbShot { frames, label }
            })
            .collect();
        out.push(ProbSequence {
            id: format!("seq{i:03}"),
            shots,
            subject: format!("subject{subject}"),
        });
    }
    Ok(out)
}
