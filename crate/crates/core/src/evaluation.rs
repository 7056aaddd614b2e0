//! Accuracy metrics, confusion matrices, edit-distance analysis and report
//! files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ActionLabel, ProbShot, ProbSequence};
use crate::error::{Error, Result};
use crate::hlstm::{predict_shot, ShotAggregation};
use crate::linalg::argmax;
use crate::par;

fn sequence_accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("sequence without frames".into()));
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Unweighted mean over `(predictions, truth)` pairs of per-sequence accuracy.
pub fn mean_sequence_accuracy(seqs: &[(&[usize], &[usize])]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Validation("no sequences to score".into()));
    }
    let mut total = 0.0;
    for (p, t) in seqs {
        total += sequence_accuracy(p, t)?;
    }
    Ok(total / seqs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracy {
    pub per_sequence: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Per-sequence frame accuracy, then the unweighted mean across sequences.
pub fn frame_accuracy(seqs: &[(&str, &[usize], &[usize])]) -> Result<FrameAccuracy> {
    if seqs.is_empty() {
        return Err(Error::Validation("no sequences to score".into()));
    }
    let mut per_sequence = BTreeMap::new();
    let mut total = 0.0;
    for (id, p, t) in seqs {
        let acc = sequence_accuracy(p, t)?;
        total += acc;
        if per_sequence.insert(id.to_string(), acc).is_some() {
            return Err(Error::Validation(format!("duplicate sequence id '{id}'")));
        }
    }
    Ok(FrameAccuracy {
        per_sequence,
        mean: total / seqs.len() as f64,
    })
}

/// Fraction of shots whose aggregated frame prediction matches the shot label.
pub fn shot_accuracy(shots: &[ProbShot], mode: ShotAggregation) -> Result<f64> {
    if shots.is_empty() {
        return Err(Error::Validation("no shots to score".into()));
    }
    let mut hits = 0;
    for shot in shots {
        if predict_shot(&shot.frames, mode)?.0 == shot.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / shots.len() as f64)
}

/// Rows are ground truth, columns predictions.
pub fn confusion_matrix(preds: &[usize], truth: &[usize], num_actions: usize) -> Result<Vec<Vec<u64>>> {
    if preds.len() != truth.len() {
        return Err(Error::Dimension("prediction and label counts differ".into()));
    }
    let mut m = vec![vec![0u64; num_actions]; num_actions];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= num_actions || t >= num_actions {
            return Err(Error::Validation(format!("label out of range: {p} / {t}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"verb object"` per action id, used to label the confusion grid.
    pub action_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub mean_frame_acc: f64,
    /// Mean per-sequence rate of frames whose predicted object is right.
    pub object_correct_rate: f64,
    pub per_sequence_frame_acc: BTreeMap<String, f64>,
    pub shot_acc_avg: f64,
    pub shot_acc_weighted: f64,
    /// Same, for the verb.
    pub verb_correct_rate: f64,
}

/// Scores model outputs stored as probability sequences, whose labels are
/// the ground truth. Frame predictions are per-frame argmaxes.
pub fn evaluate(actions: &[ActionLabel], seqs: &[ProbSequence]) -> Result<EvalReport> {
    let a = actions.len();
    for s in seqs {
        s.validate(a)?;
    }
    let preds: Vec<Vec<usize>> = par::map(seqs, |s| {
        s.shots.iter().flat_map(|sh| sh.frames.iter().map(|p| argmax(p))).collect()
    });
    let truth: Vec<Vec<usize>> = seqs.iter().map(ProbSequence::frame_labels).collect();
    let triples: Vec<(&str, &[usize], &[usize])> = seqs
        .iter()
        .zip(preds.iter().zip(&truth))
        .map(|(s, (p, t))| (s.id.as_str(), &p[..], &t[..]))
        .collect();
    let frame = frame_accuracy(&triples)?;

    let part_rate = |same: &dyn Fn(usize, usize) -> bool| -> f64 {
        let total: f64 = preds
            .iter()
            .zip(&truth)
            .map(|(p, t)| p.iter().zip(t).filter(|(p, t)| same(**p, **t)).count() as f64 / t.len() as f64)
            .sum();
        total / seqs.len() as f64
    };
    let verb_correct_rate = part_rate(&|p, t| actions[p].verb == actions[t].verb);
    let object_correct_rate = part_rate(&|p, t| actions[p].object == actions[t].object);

    let shots: Vec<ProbShot> = seqs.iter().flat_map(|s| s.shots.iter().cloned()).collect();
    let all_preds: Vec<usize> = preds.concat();
    let all_truth: Vec<usize> = truth.concat();
    Ok(EvalReport {
        action_names: actions.iter().map(|x| format!("{} {}", x.verb, x.object)).collect(),
        confusion: confusion_matrix(&all_preds, &all_truth, a)?,
        mean_frame_acc: frame.mean,
        object_correct_rate,
        per_sequence_frame_acc: frame.per_sequence,
        shot_acc_avg: shot_accuracy(&shots, ShotAggregation::Average)?,
        shot_acc_weighted: shot_accuracy(&shots, ShotAggregation::LinearWeighted)?,
        verb_correct_rate,
    })
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean distance over all unordered pairs.
pub fn avg_pairwise_levenshtein(seqs: &[Vec<usize>]) -> Result<f64> {
    if seqs.len() < 2 {
        return Err(Error::Validation("need at least 2 sequences".into()));
    }
    let rows = par::map_range(seqs.len(), |i| {
        seqs[i + 1..].iter().map(|s| levenshtein(&seqs[i], s)).sum::<usize>()
    });
    let pairs = seqs.len() * (seqs.len() - 1) / 2;
    Ok(rows.iter().sum::<usize>() as f64 / pairs as f64)
}

/// Mean distance over pairs that share a group key (e.g. the same activity).
pub fn avg_pairwise_levenshtein_within(seqs: &[Vec<usize>], groups: &[String]) -> Result<f64> {
    if seqs.len() != groups.len() {
        return Err(Error::Dimension("one group key per sequence is required".into()));
    }
    let rows = par::map_range(seqs.len(), |i| {
        let mut sum = 0;
        let mut n = 0;
        for j in i + 1..seqs.len() {
            if groups[i] == groups[j] {
                sum += levenshtein(&seqs[i], &seqs[j]);
                n += 1;
            }
        }
        (sum, n)
    });
    let (sum, n) = rows.iter().fold((0, 0), |(s, c), (a, b)| (s + a, c + b));
    if n == 0 {
        return Err(Error::Validation("no two sequences share a group".into()));
    }
    Ok(sum as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Serialises a report. CSV holds `metric,value` rows, a blank line, then
/// the labelled confusion grid.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Validation(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::from("metric,value\n");
            let metrics = [
                ("mean_frame_acc", report.mean_frame_acc),
                ("shot_acc_avg", report.shot_acc_avg),
                ("shot_acc_weighted", report.shot_acc_weighted),
                ("verb_correct_rate", report.verb_correct_rate),
                ("object_correct_rate", report.object_correct_rate),
            ];
            for (k, v) in metrics {
                let _ = writeln!(s, "{k},{v}");
            }
            for (id, v) in &report.per_sequence_frame_acc {
                let _ = writeln!(s, "{},{v}", csv_field(&format!("frame_acc:{id}")));
            }
            s.push('\n');
            s.push_str("truth\\pred");
            for name in &report.action_names {
                let _ = write!(s, ",{}", csv_field(name));
            }
            s.push('\n');
            for (name, row) in report.action_names.iter().zip(&report.confusion) {
                s.push_str(&csv_field(name));
                for c in row {
                    let _ = write!(s, ",{c}");
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(report, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
