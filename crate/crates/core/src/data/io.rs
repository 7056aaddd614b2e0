//! JSON-lines dataset files.
//!
//! Line 1 is a header `{"actions": [...], "feature_dim": D}`; every following
//! line is one sequence. Keys are written in sorted order and feature values
//! as shortest round-trip `f32` literals, so output bytes are a pure function
//! of the dataset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionLabel, Dataset, FrameSample, ProbSequence, Sequence, Shot};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    actions: Vec<ActionLabel>,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    shots: Vec<ShotLine>,
    subject: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotLine {
    frames: Vec<FrameLine>,
    label: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    primary: Vec<f32>,
    secondaries: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbHeaderLine {
    num_actions: usize,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    dataset_from_reader(BufReader::new(file))
}

/// Validates `dataset` and writes it to `path`. Nothing is written on a
/// validation failure.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    dataset.validate()?;
    let mut buf = Vec::new();
    dataset_to_writer(dataset, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn dataset_from_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut lines = numbered_lines(BufReader::new(reader));
    let (line_no, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file: missing header line".into(),
    })??;
    let header: HeaderLine = parse_line(line_no, &header)?;
    let mut sequences = Vec::new();
    for item in lines {
        let (line_no, text) = item?;
        let seq: SequenceLine = parse_line(line_no, &text)?;
        sequences.push(Sequence {
            id: seq.id,
            subject: seq.subject,
            provenance: seq.provenance,
            shots: seq
                .shots
                .into_iter()
                .map(|shot| {
                    let label = shot.label;
                    Shot {
                        label,
                        frames: shot
                            .frames
                            .into_iter()
                            .map(|f| FrameSample {
                                primary: f.primary,
                                secondaries: f.secondaries,
                                label,
                            })
                            .collect(),
                    }
                })
                .collect(),
        });
    }
    let dataset = Dataset {
        actions: header.actions,
        sequences,
        feature_dim: header.feature_dim,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes the canonical byte form of `dataset`. Does not validate.
pub fn dataset_to_writer<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let header = HeaderLine {
        actions: dataset.actions.clone(),
        feature_dim: dataset.feature_dim,
    };
    write_line(&mut out, &header)?;
    for seq in &dataset.sequences {
        let line = SequenceLine {
            id: seq.id.clone(),
            provenance: seq.provenance.clone(),
            subject: seq.subject.clone(),
            shots: seq
                .shots
                .iter()
                .map(|s| ShotLine {
                    label: s.label,
                    frames: s
                        .frames
                        .iter()
                        .map(|f| FrameLine {
                            primary: f.primary.clone(),
                            secondaries: f.secondaries.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        write_line(&mut out, &line)?;
    }
    Ok(())
}

/// Loads a per-frame probability file: header `{"num_actions": A}` followed
/// by one [`ProbSequence`] per line.
pub fn load_prob_sequences(path: impl AsRef<Path>) -> Result<(usize, Vec<ProbSequence>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = numbered_lines(BufReader::new(file));
    let (line_no, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file: missing header line".into(),
    })??;
    let header: ProbHeaderLine = parse_line(line_no, &header)?;
    let mut out = Vec::new();
    for item in lines {
        let (line_no, text) = item?;
        let seq: ProbSequence = parse_line(line_no, &text)?;
        seq.validate(header.num_actions)?;
        out.push(seq);
    }
    Ok((header.num_actions, out))
}

pub fn save_prob_sequences(
    num_actions: usize,
    sequences: &[ProbSequence],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    for s in sequences {
        s.validate(num_actions)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_line(&mut w, &ProbHeaderLine { num_actions })?;
    for s in sequences {
        write_line(&mut w, s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.map(|l| (i + 1, l)).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .filter(|item| !matches!(item, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    let to_io = |e: std::io::Error| Error::io("<writer>", e);
    serde_json::to_writer(&mut *out, value).map_err(|e| to_io(e.into()))?;
    out.write_all(b"\n").map_err(to_io)
}

/// Writes `value` as one line of JSON with object keys in sorted order.
pub fn write_sorted_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tree = serde_json::to_value(value).map_err(|e| Error::Validation(e.to_string()))?;
    let text = serde_json::to_string(&tree).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
