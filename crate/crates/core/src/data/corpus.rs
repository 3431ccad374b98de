use serde::{Deserialize, Serialize};

use super::DataError;
use crate::diffcore::Tensor2;

/// One feature vector with its labeling and provenance metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    /// Row index of the sample in its corpus file; stable across subsetting.
    pub id: usize,
    pub features: Vec<f32>,
    /// Class id, or `None` for unlabeled samples.
    pub label: Option<usize>,
    /// Subject id; 0 means unknown.
    pub subject: u32,
    /// Session id (1..=3); 0 means unknown.
    pub session: u32,
}

/// A named collection of equally-sized feature samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    name: String,
    dim: usize,
    class_names: Vec<String>,
    samples: Vec<FeatureSample>,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        class_names: Vec<String>,
        samples: Vec<FeatureSample>,
    ) -> Result<Self, DataError> {
        let classes = class_names.len();
        for s in &samples {
            if s.features.len() != dim {
                return Err(DataError::DimensionMismatch {
                    row: s.id,
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteFeature { row: s.id });
            }
            if let Some(l) = s.label {
                if l >= classes {
                    return Err(DataError::LabelOutOfRange {
                        row: s.id,
                        label: l,
                        classes,
                    });
                }
            }
        }
        Ok(Corpus {
            name: name.into(),
            dim,
            class_names,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[FeatureSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample carries a label.
    pub fn is_labeled(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.label.is_some())
    }

    /// Errors when a labeled corpus lacks any sample of a declared class.
    pub fn check_class_coverage(&self) -> Result<(), DataError> {
        if !self.is_labeled() {
            return Ok(());
        }
        let counts = self.class_counts();
        match counts.iter().position(|&c| c == 0) {
            Some(class) => Err(DataError::MissingClass {
                corpus: self.name.clone(),
                class,
            }),
            None => Ok(()),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Labels of all samples; panics on unlabeled samples.
    pub fn labels(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.label.expect("labels() on unlabeled sample"))
            .collect()
    }

    /// Corpus restricted to the samples at the given positions.
    pub fn subset(&self, positions: &[usize]) -> Corpus {
        Corpus {
            name: self.name.clone(),
            dim: self.dim,
            class_names: self.class_names.clone(),
            samples: positions.iter().map(|&p| self.samples[p].clone()).collect(),
        }
    }

    /// Same metadata, replaced samples. Dimensions are re-validated.
    pub fn with_samples(&self, samples: Vec<FeatureSample>) -> Result<Corpus, DataError> {
        Corpus::new(self.name.clone(), self.dim, self.class_names.clone(), samples)
    }

    /// Features as an `n × dim` matrix in `f64`.
    pub fn feature_matrix(&self) -> Tensor2 {
        let data: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| s.features.iter().map(|&v| v as f64))
            .collect();
        Tensor2::new(self.len(), self.dim, data).expect("corpus features are finite")
    }
}
