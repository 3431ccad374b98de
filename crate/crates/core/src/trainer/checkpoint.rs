//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `PAACKPT1`, a little-endian `u64` header
//! length, the JSON header, the parameter blob as little-endian `f64`s, a
//! `u64` length and the JSON-serialized RNG state. The blob holds model
//! tensors (extractor layers, discriminator layers, prototypes row-major,
//! θ of each head) followed by optimizer moments.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor2;
use crate::model::{ModelSpec, PaaModel, ParamGroup, PrototypeBank, Standardizer};

use super::optim::Optimizer;
use super::report::History;
use super::run::{init_model, Optimizers};
use super::{PaaConfig, TrainError};

pub const MAGIC: &[u8; 8] = b"PAACKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: PaaConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub model: PaaModel,
    pub optimizers: Optimizers,
    pub rng: ChaCha8Rng,
    pub history: History,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    seen: Vec<bool>,
    initialized: bool,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct OptimHeader {
    group: ParamGroup,
    kind: super::OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<usize>,
    v: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: String,
    epoch: usize,
    spec: ModelSpec,
    bank: BankHeader,
    standardizer: Standardizer,
    tensors: Vec<TensorHeader>,
    optimizers: Vec<OptimHeader>,
    history: History,
    blob_len: usize,
}

fn model_tensors(model: &PaaModel) -> Vec<(String, &Tensor2)> {
    let mut out = vec![];
    for (prefix, group) in [("extractor", ParamGroup::Extractor), ("discriminator", ParamGroup::Discriminator)] {
        for (i, t) in model.group_tensors(group).into_iter().enumerate() {
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            out.push((format!("{prefix}.{}.{kind}", i / 2), t));
        }
    }
    out.push(("prototypes".into(), model.prototypes.raw()));
    for (i, h) in model.heads.iter().enumerate() {
        out.push((format!("head{}.theta", i + 1), &h.theta));
    }
    out
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = model_tensors(&self.model);
        let mut blob: Vec<f64> = vec![];
        for (_, t) in &tensors {
            blob.extend_from_slice(t.data());
        }
        let mut optimizers = vec![];
        for group in ParamGroup::ALL {
            let o = self.optimizers.get(group);
            for v in o.m.iter().chain(&o.v) {
                blob.extend_from_slice(v);
            }
            optimizers.push(OptimHeader {
                group,
                kind: o.kind,
                lr: o.lr,
                step: o.step,
                m: o.m.iter().map(Vec::len).collect(),
                v: o.v.iter().map(Vec::len).collect(),
            });
        }
        let header = Header {
            version: VERSION,
            config: self.config.to_text(),
            epoch: self.epoch,
            spec: self.model.spec.clone(),
            bank: BankHeader {
                seen: self.model.prototypes.seen().to_vec(),
                initialized: self.model.prototypes.is_initialized(),
                frozen: self.model.prototypes.is_frozen(),
            },
            standardizer: self.model.standardizer.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorHeader {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
            optimizers,
            history: self.history.clone(),
            blob_len: blob.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let rng = serde_json::to_vec(&self.rng).expect("rng serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * blob.len() + 8 + rng.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(rng.len() as u64).to_le_bytes());
        out.extend_from_slice(&rng);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(bad("not a checkpoint: bad magic bytes"));
        }
        let header_len = cur.u64("header length")? as usize;
        let header: Header = serde_json::from_slice(cur.take(header_len, "header")?).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {} (expected {VERSION})", header.version)));
        }
        let raw = cur.take(header.blob_len.checked_mul(8).ok_or_else(|| bad("blob length overflow"))?, "parameter blob")?;
        let blob: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let rng_len = cur.u64("rng length")? as usize;
        let rng: ChaCha8Rng = serde_json::from_slice(cur.take(rng_len, "rng state")?).map_err(|e| bad(format!("rng state: {e}")))?;
        if cur.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }

        let config = PaaConfig::parse(&header.config)?;
        let spec = header.spec;
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut model = init_model(&config, spec.input_dim, spec.classes, &mut scratch)?;
        if model.spec != spec {
            return Err(bad("model spec disagrees with the stored config"));
        }
        model.standardizer = header.standardizer;
        if model.standardizer.mean.len() != spec.input_dim || model.standardizer.std.len() != spec.input_dim {
            return Err(bad("standardizer width disagrees with the model"));
        }

        let mut values = blob.into_iter();
        let mut next = |n: usize, what: &str| -> Result<Vec<f64>, TrainError> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() != n {
                return Err(bad(format!("parameter blob ends inside {what}")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("non-finite value in {what}")));
            }
            Ok(v)
        };

        let expected: Vec<(String, usize, usize)> = model_tensors(&model)
            .iter()
            .map(|(n, t)| (n.clone(), t.rows(), t.cols()))
            .collect();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((n, r, c), h)| *n != h.name || *r != h.rows || *c != h.cols)
        {
            return Err(bad("tensor layout disagrees with the model spec"));
        }
        for group in [ParamGroup::Extractor, ParamGroup::Discriminator] {
            for t in model.group_tensors_mut(group) {
                let (r, c) = t.shape();
                *t = Tensor2::new(r, c, next(r * c, "model parameters")?)?;
            }
        }
        let protos = Tensor2::new(spec.classes, spec.embed_dim, next(spec.classes * spec.embed_dim, "prototypes")?)?;
        if header.bank.seen.len() != spec.classes {
            return Err(bad("prototype flags disagree with the class count"));
        }
        if header.bank.frozen {
            model.prototypes = PrototypeBank::fixed_anchors(spec.classes, spec.embed_dim);
        }
        model.prototypes.restore(protos, header.bank.seen, header.bank.initialized);
        for h in &mut model.heads {
            h.theta = Tensor2::new(spec.embed_dim, spec.embed_dim, next(spec.embed_dim * spec.embed_dim, "theta")?)?;
        }

        let mut optims = vec![];
        for (group, oh) in ParamGroup::ALL.into_iter().zip(&header.optimizers) {
            if oh.group != group {
                return Err(bad("optimizer order disagrees"));
            }
            let sizes: Vec<usize> = model.group_tensors(group).iter().map(|t| t.len()).collect();
            if oh.v != sizes || !(oh.m.is_empty() || oh.m == sizes) {
                return Err(bad(format!("optimizer state for {group:?} has the wrong shape")));
            }
            let mut o = Optimizer::new(oh.kind, oh.lr, &sizes);
            o.step = oh.step;
            o.m = oh.m.iter().map(|&n| next(n, "optimizer state")).collect::<Result<_, _>>()?;
            o.v = oh.v.iter().map(|&n| next(n, "optimizer state")).collect::<Result<_, _>>()?;
            optims.push(o);
        }
        if optims.len() != 3 {
            return Err(bad("missing optimizer state"));
        }
        if values.next().is_some() {
            return Err(bad("parameter blob longer than the layout"));
        }
        let heads = optims.pop().expect("three");
        let discriminator = optims.pop().expect("three");
        let extractor = optims.pop().expect("three");
        Ok(Checkpoint {
            config,
            epoch: header.epoch,
            model,
            optimizers: Optimizers {
                extractor,
                discriminator,
                heads,
            },
            rng,
            history: header.history,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            bad(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
