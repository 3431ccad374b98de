//! Corpus interchange format: a JSON manifest plus flat little-endian arrays.
//!
//! ```text
//! {name, dim, classes, class_names, feature_file, label_file,
//!  subject_file, session_file, dtype: "f32le", rows, [label_map]}
//! ```
//!
//! * `feature_file`: `rows × dim` f32 little-endian, row-major
//! * `label_file`: `rows` i32 little-endian, index into `class_names`, `-1` unlabeled
//! * `subject_file`, `session_file`: `rows` u32 little-endian
//!
//! `class_names` holds the corpus' raw label names. When `label_map` is given
//! (a path relative to the manifest, or `builtin:<corpus>`), raw names are
//! mapped onto the unified three classes and `DROP`ped rows are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labelmap::{LabelMap, Mapped, UNIFIED_CLASSES};
use super::{Corpus, DataError, FeatureSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub dim: usize,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub feature_file: String,
    pub label_file: String,
    pub subject_file: String,
    pub session_file: String,
    pub dtype: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<String>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::io(path, e))
}

fn check_len(path: &Path, bytes: &[u8], rows: usize, width: usize) -> Result<(), DataError> {
    let expected = rows * width;
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            row: (bytes.len() / width.max(1)).min(rows),
            expected_bytes: expected,
            found_bytes: bytes.len(),
        });
    }
    Ok(())
}

fn le_words(bytes: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]])
}

/// Loads a corpus, applying the manifest's label map if it names one.
pub fn load_export(manifest_path: &Path) -> Result<Corpus, DataError> {
    load_export_with(manifest_path, None)
}

/// Loads a corpus; `map` overrides the manifest's own `label_map`.
pub fn load_export_with(manifest_path: &Path, map: Option<&LabelMap>) -> Result<Corpus, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| DataError::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    if manifest.dtype != "f32le" {
        return Err(DataError::Manifest(format!(
            "unsupported dtype {:?} (expected \"f32le\")",
            manifest.dtype
        )));
    }
    if manifest.classes != manifest.class_names.len() {
        return Err(DataError::Manifest(format!(
            "classes = {} but {} class_names given",
            manifest.classes,
            manifest.class_names.len()
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let owned_map;
    let map = match (map, &manifest.label_map) {
        (Some(m), _) => Some(m),
        (None, Some(spec)) => {
            owned_map = match spec.strip_prefix("builtin:") {
                Some(name) => LabelMap::builtin(name)
                    .ok_or_else(|| DataError::Manifest(format!("no built-in label map {name:?}")))?,
                None => LabelMap::load(&base.join(spec))?,
            };
            Some(&owned_map)
        }
        (None, None) => None,
    };
    if let Some(m) = map {
        m.check_total(&manifest.class_names)?;
    }

    let (dim, rows) = (manifest.dim, manifest.rows);
    let feature_path = base.join(&manifest.feature_file);
    let features = read_bytes(&feature_path)?;
    if features.len() != rows * dim * 4 {
        // Report the first row that does not hold `dim` complete values.
        let row = (features.len() / (dim * 4).max(1)).min(rows);
        return Err(DataError::DimensionMismatch {
            row,
            expected: dim,
            found: (features.len().saturating_sub(row * dim * 4) / 4).min(dim),
        });
    }
    let label_path = base.join(&manifest.label_file);
    let labels = read_bytes(&label_path)?;
    check_len(&label_path, &labels, rows, 4)?;
    let subject_path = base.join(&manifest.subject_file);
    let subjects = read_bytes(&subject_path)?;
    check_len(&subject_path, &subjects, rows, 4)?;
    let session_path = base.join(&manifest.session_file);
    let sessions = read_bytes(&session_path)?;
    check_len(&session_path, &sessions, rows, 4)?;

    let values: Vec<f32> = le_words(&features).map(f32::from_le_bytes).collect();
    let raw_labels: Vec<i32> = le_words(&labels).map(i32::from_le_bytes).collect();
    let subjects: Vec<u32> = le_words(&subjects).map(u32::from_le_bytes).collect();
    let sessions: Vec<u32> = le_words(&sessions).map(u32::from_le_bytes).collect();

    let mut samples = Vec::with_capacity(rows);
    for row in 0..rows {
        let raw = raw_labels[row];
        let label = if raw == -1 {
            None
        } else {
            let name = usize::try_from(raw)
                .ok()
                .and_then(|i| manifest.class_names.get(i))
                .ok_or(DataError::UnknownLabel {
                    row,
                    raw: raw.to_string(),
                })?;
            match map {
                None => Some(raw as usize),
                Some(m) => match m.map(name) {
                    Some(Mapped::Class(c)) => Some(c),
                    Some(Mapped::Drop) => continue,
                    None => {
                        return Err(DataError::UnknownLabel {
                            row,
                            raw: name.clone(),
                        })
                    }
                },
            }
        };
        let feats = values[row * dim..(row + 1) * dim].to_vec();
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteFeature { row });
        }
        samples.push(FeatureSample {
            id: row,
            features: feats,
            label,
            subject: subjects[row],
            session: sessions[row],
        });
    }

    let class_names = match map {
        Some(_) => UNIFIED_CLASSES.iter().map(|s| s.to_string()).collect(),
        None => manifest.class_names.clone(),
    };
    Corpus::new(manifest.name, dim, class_names, samples)
}

/// Writes `corpus` as `<dir>/<stem>.json` plus four binary arrays and
/// returns the manifest path. Class names are written as raw names, so
/// loading without a label map reproduces the corpus.
pub fn write_export(corpus: &Corpus, dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let file = |suffix: &str| format!("{stem}.{suffix}.bin");
    let manifest = Manifest {
        name: corpus.name().to_string(),
        dim: corpus.dim(),
        classes: corpus.classes(),
        class_names: corpus.class_names().to_vec(),
        feature_file: file("features"),
        label_file: file("labels"),
        subject_file: file("subjects"),
        session_file: file("sessions"),
        dtype: "f32le".into(),
        rows: corpus.len(),
        label_map: None,
    };

    let n = corpus.len();
    let mut features = Vec::with_capacity(n * corpus.dim() * 4);
    let mut labels = Vec::with_capacity(n * 4);
    let mut subjects = Vec::with_capacity(n * 4);
    let mut sessions = Vec::with_capacity(n * 4);
    for s in corpus.samples() {
        for v in &s.features {
            features.extend_from_slice(&v.to_le_bytes());
        }
        let l = s.label.map_or(-1, |l| l as i32);
        labels.extend_from_slice(&l.to_le_bytes());
        subjects.extend_from_slice(&s.subject.to_le_bytes());
        sessions.extend_from_slice(&s.session.to_le_bytes());
    }

    let write = |name: &str, bytes: &[u8]| -> Result<(), DataError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| DataError::io(&p, e))
    };
    write(&manifest.feature_file, &features)?;
    write(&manifest.label_file, &labels)?;
    write(&manifest.subject_file, &subjects)?;
    write(&manifest.session_file, &sessions)?;
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| DataError::io(&path, e))?;
    Ok(path)
}
