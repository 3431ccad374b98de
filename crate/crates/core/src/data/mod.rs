//! Corpora, interchange format, synthetic generation, DE features, label
//! noise and evaluation protocols.

mod corpus;
pub mod de;
mod export;
mod labelmap;
mod noise;
mod protocol;
mod synthetic;

use std::path::{Path, PathBuf};

pub use corpus::{Corpus, FeatureSample};
pub use de::{extract_de, Band, DEFAULT_BANDS};
pub use export::{load_export, load_export_with, write_export, Manifest};
pub use labelmap::{LabelMap, Mapped, UNIFIED_CLASSES};
pub use noise::inject_label_noise;
pub use protocol::{eligible_target, protocol_splits, Protocol, Split};
pub use synthetic::{gen_synthetic_pair, gen_synthetic_pair_with_layout, Layout, ShiftSpec, StandardBenchmark};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("row {row}: expected {expected} feature columns, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("{path}: truncated at row {row} ({found_bytes} of {expected_bytes} bytes)")]
    Truncated {
        path: PathBuf,
        row: usize,
        expected_bytes: usize,
        found_bytes: usize,
    },
    #[error("row {row}: unknown raw label {raw}")]
    UnknownLabel { row: usize, raw: String },
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("row {row}: non-finite feature value")]
    NonFiniteFeature { row: usize },
    #[error("corpus {corpus} has no sample of class {class}")]
    MissingClass { corpus: String, class: usize },
    #[error("corpus {0} is not fully labeled")]
    NotLabeled(String),
    #[error("corpus {corpus} lacks {field} metadata")]
    MissingMetadata { corpus: String, field: &'static str },
    #[error("invalid shift: {0}")]
    InvalidShift(String),
    #[error("band {lo}..{hi:?} Hz is invalid for Nyquist {nyquist} Hz")]
    Band { lo: f64, hi: Option<f64>, nyquist: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
