use std::collections::HashSet;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitProtocol {
    /// One split per subject; that subject's sequences form the test set.
    LeaveOneSubjectOut,
    /// A single split with the listed sequence ids held out.
    Fixed(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Split {
    /// Held-out subject, or `"fixed"`.
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn make_splits(dataset: &Dataset, protocol: &SplitProtocol) -> Result<Vec<Split>> {
    match protocol {
        SplitProtocol::LeaveOneSubjectOut => {
            let subjects = dataset.subjects();
            if subjects.len() < 2 {
                return Err(Error::Validation(format!(
                    "leave-one-subject-out needs at least 2 subjects, found {}",
                    subjects.len()
                )));
            }
            Ok(subjects
                .into_iter()
                .map(|subject| {
                    let (test, train) = dataset
                        .sequences
                        .iter()
                        .cloned()
                        .partition(|s| s.subject == subject);
                    Split {
                        name: subject,
                        train: dataset.with_sequences(train),
                        test: dataset.with_sequences(test),
                    }
                })
                .collect())
        }
        SplitProtocol::Fixed(ids) => {
            let held: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let known: HashSet<&str> = dataset.sequences.iter().map(|s| s.id.as_str()).collect();
            if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
                return Err(Error::Validation(format!(
                    "fixed split names unknown sequence '{missing}'"
                )));
            }
            let (test, train): (Vec<_>, Vec<_>) = dataset
                .sequences
                .iter()
                .cloned()
                .partition(|s| held.contains(s.id.as_str()));
            if test.is_empty() || train.is_empty() {
                return Err(Error::Validation(
                    "fixed split must leave both train and test non-empty".into(),
                ));
            }
            Ok(vec![Split {
                name: "fixed".into(),
                train: dataset.with_sequences(train),
                test: dataset.with_sequences(test),
            }])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny;
    use super::*;

    fn with_subjects(subjects: &[&str]) -> Dataset {
        let base = tiny();
        let seqs = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut q = base.sequences[0].clone();
                q.id = format!("q{i}");
                q.subject = (*s).into();
                q
            })
            .collect();
        base.with_sequences(seqs)
    }

    #[test]
    fn two_subjects_give_two_singleton_test_sets() {
        let d = with_subjects(&["b", "a", "b"]);
        let splits = make_splits(&d, &SplitProtocol::LeaveOneSubjectOut).unwrap();
        let names: Vec<_> = splits.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(splits[0].test.sequences.len(), 1);
        assert_eq!(splits[1].test.sequences.len(), 2);
        for s in &splits {
            assert_eq!(s.test.subjects(), vec![s.name.clone()]);
        }
    }

    #[test]
    fn single_subject_is_an_error() {
        let d = with_subjects(&["a", "a"]);
        assert!(make_splits(&d, &SplitProtocol::LeaveOneSubjectOut).is_err());
    }

    #[test]
    fn fixed_split_holds_out_named_ids() {
        let d = with_subjects(&["a", "b", "c"]);
        let splits = make_splits(&d, &SplitProtocol::Fixed(vec!["q1".into()])).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].test.sequences[0].id, "q1");
        assert_eq!(splits[0].train.sequences.len(), 2);
        assert!(make_splits(&d, &SplitProtocol::Fixed(vec!["nope".into()])).is_err());
    }
}
