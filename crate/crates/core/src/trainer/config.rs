//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::KernelSpec;
use crate::model::ParamGroup;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    L,
    C,
    M,
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().trim_start_matches("PAA-") {
            "L" => Ok(Variant::L),
            "C" => Ok(Variant::C),
            "M" => Ok(Variant::M),
            other => Err(format!("unknown variant {other:?} (expected L, C or M)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::L => "L",
            Variant::C => "C",
            Variant::M => "M",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected rmsprop or adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Which per-sample objective trains the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Pairwise relation loss on source, target and cross-domain pairs.
    Ral,
    /// Cross-entropy on source samples; relation loss only on pairs that
    /// involve a target sample.
    SslSource,
    /// Cross-entropy on source samples and confident target samples.
    Ssl,
}

impl FromStr for LossMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ral" => Ok(LossMode::Ral),
            "ssl_source" => Ok(LossMode::SslSource),
            "ssl" => Ok(LossMode::Ssl),
            other => Err(format!("unknown loss mode {other:?} (expected ral, ssl_source or ssl)")),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Ral => "ral",
            LossMode::SslSource => "ssl_source",
            LossMode::Ssl => "ssl",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaaConfig {
    pub variant: Variant,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub momentum_proto: f64,
    pub conf_threshold: f64,
    pub grl_gamma: f64,
    pub optimizer_extractor: OptimizerKind,
    pub optimizer_discriminator: OptimizerKind,
    pub optimizer_heads: OptimizerKind,
    pub seed: u64,
    pub z_score: bool,
    pub loss: LossMode,
    /// Gradient reversal on; off means the extractor never sees the
    /// adversarial gradient.
    pub grl: bool,
    /// Learned prototypes; off means fixed one-hot anchors.
    pub prototypes: bool,
    pub theta_trainable: bool,
    /// Pseudo-labeled target samples take part in the classifier loss.
    pub target_pairs: bool,
    pub stage2: bool,
    pub stage3: bool,
    pub stage3_disc: bool,
    pub extractor_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub disc_hidden: Vec<usize>,
    pub kernel_multipliers: Vec<f64>,
    /// Differentiate the kernel losses through the median bandwidth.
    pub bandwidth_grad: bool,
    /// The discriminator sees embeddings divided by their joint batch RMS.
    pub disc_scale_free: bool,
}

const KEYS: &[&str] = &[
    "variant",
    "lambda1",
    "lambda2",
    "lambda3",
    "lr",
    "epochs",
    "batch",
    "momentum_proto",
    "conf_threshold",
    "grl_gamma",
    "optimizer_extractor",
    "optimizer_discriminator",
    "optimizer_heads",
    "seed",
    "z_score",
    "loss",
    "grl",
    "prototypes",
    "theta_trainable",
    "target_pairs",
    "stage2",
    "stage3",
    "stage3_disc",
    "extractor_hidden",
    "embed_dim",
    "disc_hidden",
    "kernel_multipliers",
    "bandwidth_grad",
    "disc_scale_free",
];

impl PaaConfig {
    /// Defaults for a variant: λ1 = 0.5, λ2 = 1.5 (C, M), λ3 = 0.3 (M),
    /// lr 1e-3, 300 epochs, batch 256. PAA-M trains heads with Adam.
    pub fn new(variant: Variant) -> Self {
        PaaConfig {
            variant,
            lambda1: 0.5,
            lambda2: if variant == Variant::L { 0.0 } else { 1.5 },
            lambda3: if variant == Variant::M { 0.3 } else { 0.0 },
            lr: 1e-3,
            epochs: 300,
            batch: 256,
            momentum_proto: 0.9,
            conf_threshold: 0.9,
            grl_gamma: 10.0,
            optimizer_extractor: OptimizerKind::Rmsprop,
            optimizer_discriminator: OptimizerKind::Rmsprop,
            optimizer_heads: if variant == Variant::M {
                OptimizerKind::Adam
            } else {
                OptimizerKind::Rmsprop
            },
            seed: 1,
            z_score: true,
            loss: LossMode::Ral,
            grl: true,
            prototypes: true,
            theta_trainable: true,
            target_pairs: true,
            stage2: true,
            stage3: true,
            stage3_disc: true,
            extractor_hidden: vec![256],
            embed_dim: 128,
            disc_hidden: vec![64],
            kernel_multipliers: KernelSpec::default().multipliers,
            bandwidth_grad: true,
            disc_scale_free: true,
        }
    }

    /// Source-only baseline: no alignment, no adversary, source labels only.
    pub fn source_only() -> Self {
        PaaConfig {
            lambda1: 0.0,
            grl: false,
            target_pairs: false,
            ..PaaConfig::new(Variant::L)
        }
    }

    pub fn heads(&self) -> usize {
        if self.variant == Variant::M {
            2
        } else {
            1
        }
    }

    pub fn optimizer(&self, group: ParamGroup) -> OptimizerKind {
        match group {
            ParamGroup::Extractor => self.optimizer_extractor,
            ParamGroup::Discriminator => self.optimizer_discriminator,
            ParamGroup::Heads => self.optimizer_heads,
        }
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            multipliers: self.kernel_multipliers.clone(),
            fixed_bandwidth: None,
            bandwidth_grad: self.bandwidth_grad,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.variant == Variant::L && (self.lambda2 != 0.0 || self.lambda3 != 0.0) {
            return bad(format!(
                "variant L requires lambda2 = lambda3 = 0 (got lambda2 = {}, lambda3 = {})",
                self.lambda2, self.lambda3
            ));
        }
        if self.variant == Variant::C && self.lambda3 != 0.0 {
            return bad(format!("variant C requires lambda3 = 0 (got {})", self.lambda3));
        }
        if self.variant != Variant::M && !(self.stage2 && self.stage3) {
            return bad("stage2/stage3 switches apply only to variant M".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum_proto) {
            return bad(format!("momentum_proto must lie in [0, 1), got {}", self.momentum_proto));
        }
        if !self.conf_threshold.is_finite() || self.conf_threshold < 0.0 {
            return bad(format!("conf_threshold must be >= 0, got {}", self.conf_threshold));
        }
        if !self.grl_gamma.is_finite() || self.grl_gamma < 0.0 {
            return bad(format!("grl_gamma must be >= 0, got {}", self.grl_gamma));
        }
        if self.embed_dim == 0 || self.extractor_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        self.kernel().validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Parses `key = value` lines. `variant` selects the defaults that the
    /// remaining keys override; unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut pairs: Vec<(usize, String, String)> = vec![];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(TrainError::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if pairs.iter().any(|(_, seen, _)| *seen == key) {
                return Err(TrainError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            pairs.push((n + 1, key, v.trim().to_string()));
        }
        let variant = match pairs.iter().find(|(_, k, _)| k == "variant") {
            Some((n, _, v)) => v.parse().map_err(|e| TrainError::Config(format!("line {n}: {e}")))?,
            None => return Err(TrainError::Config("missing required key \"variant\"".into())),
        };
        let mut cfg = PaaConfig::new(variant);
        for (n, key, value) in &pairs {
            cfg.set(key, value)
                .map_err(|e| TrainError::Config(format!("line {n}: {key}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(format!("expected true or false, got {other:?}")),
            }
        }
        fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',').map(|x| num(x.trim())).collect()
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "lambda1" => self.lambda1 = num(value)?,
            "lambda2" => self.lambda2 = num(value)?,
            "lambda3" => self.lambda3 = num(value)?,
            "lr" => self.lr = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "batch" => self.batch = num(value)?,
            "momentum_proto" => self.momentum_proto = num(value)?,
            "conf_threshold" => self.conf_threshold = num(value)?,
            "grl_gamma" => self.grl_gamma = num(value)?,
            "optimizer_extractor" => self.optimizer_extractor = value.parse()?,
            "optimizer_discriminator" => self.optimizer_discriminator = value.parse()?,
            "optimizer_heads" => self.optimizer_heads = value.parse()?,
            "seed" => self.seed = num(value)?,
            "z_score" => self.z_score = flag(value)?,
            "loss" => self.loss = value.parse()?,
            "grl" => self.grl = flag(value)?,
            "prototypes" => self.prototypes = flag(value)?,
            "theta_trainable" => self.theta_trainable = flag(value)?,
            "target_pairs" => self.target_pairs = flag(value)?,
            "stage2" => self.stage2 = flag(value)?,
            "stage3" => self.stage3 = flag(value)?,
            "stage3_disc" => self.stage3_disc = flag(value)?,
            "extractor_hidden" => self.extractor_hidden = list(value)?,
            "embed_dim" => self.embed_dim = num(value)?,
            "disc_hidden" => self.disc_hidden = list(value)?,
            "kernel_multipliers" => self.kernel_multipliers = list(value)?,
            "bandwidth_grad" => self.bandwidth_grad = flag(value)?,
            "disc_scale_free" => self.disc_scale_free = flag(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("variant", self.variant.to_string());
        kv("lambda1", format!("{:?}", self.lambda1));
        kv("lambda2", format!("{:?}", self.lambda2));
        kv("lambda3", format!("{:?}", self.lambda3));
        kv("lr", format!("{:?}", self.lr));
        kv("epochs", self.epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("momentum_proto", format!("{:?}", self.momentum_proto));
        kv("conf_threshold", format!("{:?}", self.conf_threshold));
        kv("grl_gamma", format!("{:?}", self.grl_gamma));
        kv("optimizer_extractor", self.optimizer_extractor.to_string());
        kv("optimizer_discriminator", self.optimizer_discriminator.to_string());
        kv("optimizer_heads", self.optimizer_heads.to_string());
        kv("seed", self.seed.to_string());
        kv("z_score", self.z_score.to_string());
        kv("loss", self.loss.to_string());
        kv("grl", self.grl.to_string());
        kv("prototypes", self.prototypes.to_string());
        kv("theta_trainable", self.theta_trainable.to_string());
        kv("target_pairs", self.target_pairs.to_string());
        kv("stage2", self.stage2.to_string());
        kv("stage3", self.stage3.to_string());
        kv("stage3_disc", self.stage3_disc.to_string());
        kv("extractor_hidden", join(&self.extractor_hidden));
        kv("embed_dim", self.embed_dim.to_string());
        kv("disc_hidden", join(&self.disc_hidden));
        kv(
            "kernel_multipliers",
            self.kernel_multipliers
                .iter()
                .map(|m| format!("{m:?}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("bandwidth_grad", self.bandwidth_grad.to_string());
        kv("disc_scale_free", self.disc_scale_free.to_string());
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradient-reversal coefficient `2 / (1 + exp(-γ p)) - 1` at progress `p`.
pub fn grl_coefficient(progress: f64, gamma: f64) -> f64 {
    2.0 / (1.0 + (-gamma * progress).exp()) - 1.0
}
