use serde::{Deserialize, Serialize};

use super::Variant;

/// Per-epoch loss terms and target accuracy. The `disc_stage*` arrays are
/// filled only by three-stage training: `l_disc` on a fixed held target
/// batch, measured after each stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub l_ral: Vec<f64>,
    pub l_align: Vec<f64>,
    pub l_contrast: Vec<f64>,
    pub l_disc: Vec<f64>,
    pub l_adv: Vec<f64>,
    pub target_acc: Vec<f64>,
    pub disc_stage1: Vec<f64>,
    pub disc_stage2: Vec<f64>,
    pub disc_stage3: Vec<f64>,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.target_acc.len()
    }
}

/// Classification metrics on a labeled evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion_matrix: Vec<Vec<usize>>,
    /// Recall per class; 0 for classes absent from the evaluation set.
    pub per_class_acc: Vec<f64>,
}

impl Evaluation {
    pub fn new(truth: &[usize], predicted: &[usize], classes: usize) -> Self {
        assert_eq!(truth.len(), predicted.len(), "one prediction per sample");
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_acc = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        Evaluation {
            accuracy: if truth.is_empty() {
                0.0
            } else {
                correct as f64 / truth.len() as f64
            },
            confusion_matrix: confusion,
            per_class_acc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    #[serde(flatten)]
    pub evaluation: Evaluation,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub epochs: History,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
}

impl RunReport {
    pub fn accuracy(&self) -> f64 {
        self.final_metrics.evaluation.accuracy
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
