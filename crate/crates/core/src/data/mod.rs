//! Dataset schema: sequences of shots of frames, each frame carrying a
//! primary feature vector and a bag of secondary (proposal) feature vectors.

mod io;
mod split;
mod synth;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    dataset_from_reader, dataset_to_writer, load_dataset, load_prob_sequences, save_dataset,
    save_prob_sequences, write_sorted_json,
};
pub use split::{make_splits, Split, SplitProtocol};
pub use synth::{
    synth_frame_probs, synth_generate, synth_prototypes, MarkovProbConfig, Placement,
    SynthConfig, Transitions,
};

/// An action class: a verb applied to an object.
///
/// Field order is alphabetical so that serialized records have sorted keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionLabel {
    pub id: usize,
    pub object: String,
    pub verb: String,
}

impl ActionLabel {
    pub fn new(id: usize, verb: impl Into<String>, object: impl Into<String>) -> Self {
        ActionLabel {
            id,
            object: object.into(),
            verb: verb.into(),
        }
    }
}

/// One frame: primary-region features, candidate secondary-region features
/// and the ground-truth action id (replicated from its shot).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub primary: Vec<f32>,
    pub secondaries: Vec<Vec<f32>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub label: usize,
    pub frames: Vec<FrameSample>,
}

impl Shot {
    /// Builds a shot, stamping `label` onto every frame.
    pub fn new(label: usize, frames: Vec<FrameSample>) -> Self {
        let frames = frames
            .into_iter()
            .map(|f| FrameSample { label, ..f })
            .collect();
        Shot { label, frames }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub subject: String,
    pub shots: Vec<Shot>,
    /// Free-form note recording how the sequence was derived (augmentation).
    pub provenance: Option<String>,
}

impl Sequence {
    pub fn shot_labels(&self) -> Vec<usize> {
        self.shots.iter().map(|s| s.label).collect()
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameSample> {
        self.shots.iter().flat_map(|s| s.frames.iter())
    }

    pub fn num_frames(&self) -> usize {
        self.shots.iter().map(|s| s.frames.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub actions: Vec<ActionLabel>,
    pub sequences: Vec<Sequence>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameSample> {
        self.sequences.iter().flat_map(|s| s.frames())
    }

    pub fn num_frames(&self) -> usize {
        self.sequences.iter().map(Sequence::num_frames).sum()
    }

    /// Distinct subjects in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.sequences
            .iter()
            .map(|s| s.subject.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Returns a dataset with the same header holding only the selected sequences.
    pub fn with_sequences(&self, sequences: Vec<Sequence>) -> Dataset {
        Dataset {
            actions: self.actions.clone(),
            sequences,
            feature_dim: self.feature_dim,
        }
    }

    /// Checks every schema invariant.
    pub fn validate(&self) -> Result<()> {
        validate_actions(&self.actions)?;
        if self.feature_dim == 0 {
            return Err(Error::Validation("feature_dim must be positive".into()));
        }
        if self.sequences.is_empty() {
            return Err(Error::Validation("dataset has no sequences".into()));
        }
        let num_actions = self.actions.len();
        let dim = self.feature_dim;
        let mut ids = HashSet::new();
        for seq in &self.sequences {
            if !ids.insert(seq.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate sequence id '{}'",
                    seq.id
                )));
            }
            if seq.shots.is_empty() {
                return Err(Error::Validation(format!(
                    "sequence '{}' has no shots",
                    seq.id
                )));
            }
            for (si, shot) in seq.shots.iter().enumerate() {
                let at = |fi: usize| format!("sequence '{}' shot {} frame {}", seq.id, si, fi);
                if shot.label >= num_actions {
                    return Err(Error::Validation(format!(
                        "sequence '{}' shot {}: unknown label id {} (have {} actions)",
                        seq.id, si, shot.label, num_actions
                    )));
                }
                if shot.frames.is_empty() {
                    return Err(Error::Validation(format!(
                        "sequence '{}' shot {} has no frames",
                        seq.id, si
                    )));
                }
                for (fi, frame) in shot.frames.iter().enumerate() {
                    if frame.label != shot.label {
                        return Err(Error::Validation(format!(
                            "{}: frame label {} differs from shot label {}",
                            at(fi),
                            frame.label,
                            shot.label
                        )));
                    }
                    check_vector(&frame.primary, dim, || format!("{}: primary", at(fi)))?;
                    if frame.secondaries.is_empty() {
                        return Err(Error::Validation(format!(
                            "{}: no secondary regions",
                            at(fi)
                        )));
                    }
                    for (zi, z) in frame.secondaries.iter().enumerate() {
                        check_vector(z, dim, || format!("{}: secondary {}", at(fi), zi))?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_actions(actions: &[ActionLabel]) -> Result<()> {
    if actions.is_empty() {
        return Err(Error::Validation("no action labels".into()));
    }
    let mut pairs = HashSet::new();
    for (i, a) in actions.iter().enumerate() {
        if a.id != i {
            return Err(Error::Validation(format!(
                "action ids must be dense 0..A-1; position {} has id {}",
                i, a.id
            )));
        }
        if !pairs.insert((a.verb.as_str(), a.object.as_str())) {
            return Err(Error::Validation(format!(
                "duplicate action (verb, object) = ({}, {})",
                a.verb, a.object
            )));
        }
    }
    Ok(())
}

fn check_vector(v: &[f32], dim: usize, what: impl Fn() -> String) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Validation(format!(
            "{} has length {}, expected feature_dim {}",
            what(),
            v.len(),
            dim
        )));
    }
    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "{} has a non-finite entry at index {}",
            what(),
            bad
        )));
    }
    Ok(())
}

/// Per-frame action-probability vectors grouped by shot: the input of the
/// sequence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbShot {
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbSequence {
    pub id: String,
    pub shots: Vec<ProbShot>,
    pub subject: String,
}

impl ProbSequence {
    pub fn num_frames(&self) -> usize {
        self.shots.iter().map(|s| s.frames.len()).sum()
    }

    pub fn frame_labels(&self) -> Vec<usize> {
        self.shots
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.label, s.frames.len()))
            .collect()
    }

    pub fn shot_labels(&self) -> Vec<usize> {
        self.shots.iter().map(|s| s.label).collect()
    }

    /// Checks that every frame vector is a probability vector of length `num_actions`.
    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if self.shots.is_empty() {
            return Err(Error::Validation(format!("sequence '{}' has no shots", self.id)));
        }
        for (si, shot) in self.shots.iter().enumerate() {
            if shot.label >= num_actions {
                return Err(Error::Validation(format!(
                    "sequence '{}' shot {}: unknown label {}",
                    self.id, si, shot.label
                )));
            }
            if shot.frames.is_empty() {
                return Err(Error::Validation(format!(
                    "sequence '{}' shot {} has no frames",
                    self.id, si
                )));
            }
            for (fi, p) in shot.frames.iter().enumerate() {
                let sum: f64 = p.iter().sum();
                if p.len() != num_actions
                    || p.iter().any(|v| !v.is_finite() || *v < 0.0)
                    || (sum - 1.0).abs() > 1e-6
                {
                    return Err(Error::Validation(format!(
                        "sequence '{}' shot {} frame {}: not a probability vector of length {}",
                        self.id, si, fi, num_actions
                    )));
                }
            }
        }
        Ok(())
    }
}
