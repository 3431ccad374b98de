//! Evaluation protocols over a (source, target) corpus pair.
//!
//! | id | sessions | target use |
//! |----|----------|------------|
//! | 1  | session 1 | whole target is both the unlabeled training set and the test set |
//! | 2  | all       | as 1 |
//! | 3  | session 1 | leave one target subject out: that subject is the test set |
//! | 4  | all       | as 3 |
//!
//! Splits hold positions into the corpora's sample lists.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Corpus, DataError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Protocol {
    SingleSession = 1,
    AllSessions = 2,
    LosoSingleSession = 3,
    LosoAllSessions = 4,
}

impl TryFrom<u8> for Protocol {
    type Error = DataError;

    fn try_from(v: u8) -> Result<Self, DataError> {
        match v {
            1 => Ok(Protocol::SingleSession),
            2 => Ok(Protocol::AllSessions),
            3 => Ok(Protocol::LosoSingleSession),
            4 => Ok(Protocol::LosoAllSessions),
            other => Err(DataError::InvalidArgument(format!(
                "protocol must be 1, 2, 3 or 4, got {other}"
            ))),
        }
    }
}

impl From<Protocol> for u8 {
    fn from(p: Protocol) -> u8 {
        p as u8
    }
}

impl Protocol {
    pub fn id(self) -> u8 {
        self as u8
    }

    fn first_session_only(self) -> bool {
        matches!(self, Protocol::SingleSession | Protocol::LosoSingleSession)
    }

    pub fn is_loso(self) -> bool {
        matches!(self, Protocol::LosoSingleSession | Protocol::LosoAllSessions)
    }
}

/// One fold: positions into the source corpus and the target corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub fold: usize,
    /// Held-out target subject for leave-one-subject-out protocols.
    pub test_subject: Option<u32>,
    pub train_source: Vec<usize>,
    /// Unlabeled target samples available to adaptation.
    pub train_target: Vec<usize>,
    pub test: Vec<usize>,
}

fn eligible(corpus: &Corpus, first_session_only: bool) -> Result<Vec<usize>, DataError> {
    if first_session_only && corpus.samples().iter().any(|s| s.session == 0) {
        return Err(DataError::MissingMetadata {
            corpus: corpus.name().to_string(),
            field: "session",
        });
    }
    let picked: Vec<usize> = corpus
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| !first_session_only || s.session == 1)
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() {
        return Err(DataError::InvalidArgument(format!(
            "corpus {} has no samples eligible for this protocol",
            corpus.name()
        )));
    }
    Ok(picked)
}

pub fn protocol_splits(source: &Corpus, target: &Corpus, protocol: Protocol) -> Result<Vec<Split>, DataError> {
    let first = protocol.first_session_only();
    let train_source = eligible(source, first)?;
    let target_pool = eligible(target, first)?;

    if !protocol.is_loso() {
        return Ok(vec![Split {
            fold: 0,
            test_subject: None,
            train_source,
            train_target: target_pool.clone(),
            test: target_pool,
        }]);
    }

    let samples = target.samples();
    if target_pool.iter().any(|&i| samples[i].subject == 0) {
        return Err(DataError::MissingMetadata {
            corpus: target.name().to_string(),
            field: "subject",
        });
    }
    let subjects: BTreeSet<u32> = target_pool.iter().map(|&i| samples[i].subject).collect();
    if subjects.len() < 2 {
        return Err(DataError::InvalidArgument(
            "leave-one-subject-out needs at least two target subjects".into(),
        ));
    }
    Ok(subjects
        .into_iter()
        .enumerate()
        .map(|(fold, subject)| {
            let (test, train_target) = target_pool
                .iter()
                .partition(|&&i| samples[i].subject == subject);
            Split {
                fold,
                test_subject: Some(subject),
                train_source: train_source.clone(),
                train_target,
                test,
            }
        })
        .collect())
}

/// Positions eligible as target samples under `protocol`.
pub fn eligible_target(target: &Corpus, protocol: Protocol) -> Result<Vec<usize>, DataError> {
    eligible(target, protocol.first_session_only())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_pair, ShiftSpec};

    fn pair() -> (Corpus, Corpus) {
        gen_synthetic_pair(3, 4, 3, 450, 450, &ShiftSpec::none(3)).unwrap()
    }

    #[test]
    fn protocol_one_single_split_of_session_one() {
        let (s, t) = pair();
        let splits = protocol_splits(&s, &t, Protocol::SingleSession).unwrap();
        assert_eq!(splits.len(), 1);
        assert!(splits[0].test.iter().all(|&i| t.samples()[i].session == 1));
        assert_eq!(splits[0].test.len(), 150);
        assert!(splits[0].train_source.iter().all(|&i| s.samples()[i].session == 1));
    }

    #[test]
    fn protocol_two_uses_everything() {
        let (s, t) = pair();
        let splits = protocol_splits(&s, &t, Protocol::AllSessions).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].train_source.len(), 450);
        assert_eq!(splits[0].test.len(), 450);
    }

    #[test]
    fn loso_partitions_each_fold() {
        let (s, t) = pair();
        for protocol in [Protocol::LosoSingleSession, Protocol::LosoAllSessions] {
            let splits = protocol_splits(&s, &t, protocol).unwrap();
            assert_eq!(splits.len(), 15);
            let pool: BTreeSet<usize> = eligible_target(&t, protocol).unwrap().into_iter().collect();
            for split in &splits {
                let subject = split.test_subject.unwrap();
                assert!(split.train_target.iter().all(|&i| t.samples()[i].subject != subject));
                assert!(split.test.iter().all(|&i| t.samples()[i].subject == subject));
                let test: BTreeSet<usize> = split.test.iter().copied().collect();
                let train: BTreeSet<usize> = split.train_target.iter().copied().collect();
                assert!(test.is_disjoint(&train));
                let union: BTreeSet<usize> = test.union(&train).copied().collect();
                assert_eq!(union, pool);
            }
        }
    }

    #[test]
    fn invalid_protocol_and_missing_subjects() {
        assert!(Protocol::try_from(5).is_err());
        assert!(Protocol::try_from(0).is_err());
        let (s, t) = pair();
        let stripped: Vec<_> = t
            .samples()
            .iter()
            .cloned()
            .map(|mut x| {
                x.subject = 0;
                x
            })
            .collect();
        let t0 = t.with_samples(stripped).unwrap();
        assert!(matches!(
            protocol_splits(&s, &t0, Protocol::LosoAllSessions),
            Err(DataError::MissingMetadata { field: "subject", .. })
        ));
        assert!(protocol_splits(&s, &t0, Protocol::AllSessions).is_ok());
    }
}
