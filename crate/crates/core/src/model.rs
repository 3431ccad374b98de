//! Network components: feature extractor, domain discriminator, prototype
//! bank and relation-aware classifier heads.
//!
//! A head scores embedding `z` against class prototypes through a bilinear
//! form, `Q[i, c] = z_i θ P_cᵀ`. Rows of `Q` act both as class logits and as
//! relation signatures whose cosine similarity relates two samples.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Graph, Tensor2, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("prototype bank read before initialization")]
    Uninitialized,
    #[error("input width {found} does not match expected {expected}")]
    Width { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0}")]
    Config(String),
}

/// Fully connected layer, `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

/// Multilayer perceptron with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Graph handles of an [`Mlp`]'s parameters, in layer order.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Linear {
                    weight: Tensor2::new(fan_in, fan_out, data).expect("finite init"),
                    bias: Tensor2::zeros(1, fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Linear {
                    weight: Tensor2::zeros(w[0], w[1]),
                    bias: Tensor2::zeros(1, w[1]),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.rows()];
        w.extend(self.layers.iter().map(|l| l.weight.cols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty mlp").weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bound: &BoundMlp) -> Result<Var, ModelError> {
        let found = g.value(x).cols();
        if found != self.input_width() {
            return Err(ModelError::Width {
                expected: self.input_width(),
                found,
            });
        }
        let mut h = x;
        let last = bound.layers.len() - 1;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let lin = g.matmul(h, w)?;
            h = g.add_row(lin, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<&Tensor2> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Per-class centroids of source embeddings, maintained as an EMA.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    prototypes: Tensor2,
    momentum: f64,
    seen: Vec<bool>,
    initialized: bool,
    frozen: bool,
}

impl PrototypeBank {
    pub fn new(classes: usize, dim: usize, momentum: f64) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(ModelError::Config(format!("prototype momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(PrototypeBank {
            prototypes: Tensor2::zeros(classes, dim),
            momentum,
            seen: vec![false; classes],
            initialized: false,
            frozen: false,
        })
    }

    /// Fixed one-hot anchors `e_c` that never update; replaces learned
    /// prototypes in ablations.
    pub fn fixed_anchors(classes: usize, dim: usize) -> Self {
        let mut data = vec![0.0; classes * dim];
        for c in 0..classes {
            data[c * dim + (c % dim)] = 1.0;
        }
        PrototypeBank {
            prototypes: Tensor2::new(classes, dim, data).expect("finite"),
            momentum: 0.0,
            seen: vec![true; classes],
            initialized: true,
            frozen: true,
        }
    }

    pub fn classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    pub fn prototypes(&self) -> Result<&Tensor2, ModelError> {
        if self.initialized {
            Ok(&self.prototypes)
        } else {
            Err(ModelError::Uninitialized)
        }
    }

    /// Class `c`'s first appearance sets `P_c` to its batch mean; later
    /// appearances blend `P_c ← m P_c + (1 - m) mean`. Absent classes keep
    /// their rows bitwise.
    pub fn update(&mut self, z: &Tensor2, labels: &[usize]) -> Result<(), ModelError> {
        let (classes, dim) = (self.classes(), self.dim());
        if z.cols() != dim {
            return Err(ModelError::Width {
                expected: dim,
                found: z.cols(),
            });
        }
        if z.rows() != labels.len() {
            return Err(ModelError::Config(format!(
                "{} embeddings but {} labels",
                z.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::Label { label, classes });
        }
        if self.frozen {
            return Ok(());
        }
        let mut sums = vec![0.0; classes * dim];
        let mut counts = vec![0usize; classes];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (acc, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(z.row(i)) {
                *acc += v;
            }
        }
        let m = self.momentum;
        let protos = self.prototypes.data_mut();
        for c in 0..classes {
            if counts[c] == 0 {
                continue;
            }
            let n = counts[c] as f64;
            for k in 0..dim {
                let mean = sums[c * dim + k] / n;
                let slot = &mut protos[c * dim + k];
                *slot = if self.seen[c] { m * *slot + (1.0 - m) * mean } else { mean };
            }
            self.seen[c] = true;
        }
        self.initialized = true;
        Ok(())
    }

    pub(crate) fn raw(&self) -> &Tensor2 {
        &self.prototypes
    }

    pub(crate) fn restore(&mut self, prototypes: Tensor2, seen: Vec<bool>, initialized: bool) {
        self.prototypes = prototypes;
        self.seen = seen;
        self.initialized = initialized;
    }
}

/// Relation-aware head owning the bilinear map `θ` (`d_z × d_z`).
#[derive(Clone, Debug, PartialEq)]
pub struct RalHead {
    pub theta: Tensor2,
}

impl RalHead {
    /// `θ = I + N(0, 0.01²)`.
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let mut theta = Tensor2::identity(dim);
        for v in theta.data_mut() {
            *v += normal.sample(rng);
        }
        RalHead { theta }
    }

    pub fn identity(dim: usize) -> Self {
        RalHead {
            theta: Tensor2::identity(dim),
        }
    }
}

/// `Q = z (θ Pᵀ)`: one row of class scores per embedding.
pub fn class_logits(g: &mut Graph, z: Var, theta: Var, prototypes: Var) -> Result<Var, ModelError> {
    let pt = g.transpose(prototypes)?;
    let tp = g.matmul(theta, pt)?;
    Ok(g.matmul(z, tp)?)
}

/// Cosine similarities between all rows of `q`; zero rows relate as 0.
pub fn relation_matrix(g: &mut Graph, q: Var) -> Result<Var, ModelError> {
    let n = g.normalize_rows(q)?;
    let nt = g.transpose(n)?;
    Ok(g.matmul(n, nt)?)
}

/// Cosine of two relation signatures; 0 when either is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Per-feature standardization fitted on training-source statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor2) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n.max(1) as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (k, v) in x.row(r).iter().enumerate() {
                var[k] += (v - mean[k]).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n.max(1) as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &Tensor2) -> Tensor2 {
        let d = x.cols();
        assert_eq!(d, self.mean.len(), "standardizer width");
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        Tensor2::new(x.rows(), d, data).expect("standardized values are finite")
    }
}

/// Architecture of a [`PaaModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub disc_hidden: Vec<usize>,
    pub classes: usize,
    pub heads: usize,
}

impl ModelSpec {
    pub fn extractor_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.extractor_hidden);
        w.push(self.embed_dim);
        w
    }

    pub fn disc_widths(&self) -> Vec<usize> {
        let mut w = vec![self.embed_dim];
        w.extend(&self.disc_hidden);
        w.push(1);
        w
    }
}

/// Parameter groups that share an optimizer and a freeze switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Extractor,
    Discriminator,
    Heads,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Extractor, ParamGroup::Discriminator, ParamGroup::Heads];
}

/// Extractor, discriminator, prototype bank and one or two heads.
#[derive(Clone, Debug, PartialEq)]
pub struct PaaModel {
    pub spec: ModelSpec,
    pub extractor: Mlp,
    pub discriminator: Mlp,
    pub prototypes: PrototypeBank,
    pub heads: Vec<RalHead>,
    pub standardizer: Standardizer,
}

/// Graph handles for one step's parameters.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub extractor: BoundMlp,
    pub discriminator: BoundMlp,
    pub thetas: Vec<Var>,
    pub prototypes: Var,
}

impl BoundModel {
    pub fn group_vars(&self, group: ParamGroup) -> Vec<Var> {
        match group {
            ParamGroup::Extractor => self.extractor.vars(),
            ParamGroup::Discriminator => self.discriminator.vars(),
            ParamGroup::Heads => self.thetas.clone(),
        }
    }
}

impl PaaModel {
    pub fn new(spec: ModelSpec, momentum: f64, rng: &mut impl Rng) -> Result<Self, ModelError> {
        if !(1..=2).contains(&spec.heads) {
            return Err(ModelError::Config(format!("a model has one or two heads, got {}", spec.heads)));
        }
        if spec.classes < 2 || spec.input_dim == 0 || spec.embed_dim == 0 {
            return Err(ModelError::Config(format!("degenerate model spec {spec:?}")));
        }
        let extractor = Mlp::new(&spec.extractor_widths(), rng);
        let discriminator = Mlp::new(&spec.disc_widths(), rng);
        let heads = (0..spec.heads).map(|_| RalHead::new(spec.embed_dim, rng)).collect();
        Ok(PaaModel {
            prototypes: PrototypeBank::new(spec.classes, spec.embed_dim, momentum)?,
            standardizer: Standardizer::identity(spec.input_dim),
            spec,
            extractor,
            discriminator,
            heads,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel, ModelError> {
        let extractor = self.extractor.bind(g);
        let discriminator = self.discriminator.bind(g);
        let thetas = self.heads.iter().map(|h| g.leaf(h.theta.clone())).collect();
        let prototypes = g.leaf(self.prototypes.prototypes()?.clone());
        Ok(BoundModel {
            extractor,
            discriminator,
            thetas,
            prototypes,
        })
    }

    /// Extractor forward on already-standardized inputs.
    pub fn embed(&self, g: &mut Graph, x: Var, bound: &BoundMlp) -> Result<Var, ModelError> {
        self.extractor.forward(g, x, bound)
    }

    /// Embeddings of raw (unstandardized) features, detached.
    pub fn embed_values(&self, x: &Tensor2) -> Result<Tensor2, ModelError> {
        if x.cols() != self.spec.input_dim {
            return Err(ModelError::Width {
                expected: self.spec.input_dim,
                found: x.cols(),
            });
        }
        let mut g = Graph::new();
        let bound = self.extractor.bind(&mut g);
        let xv = g.leaf(self.standardizer.apply(x));
        let z = self.embed(&mut g, xv, &bound)?;
        Ok(g.value(z).clone())
    }

    /// Domain probabilities `sigmoid(D(grl(z)))`; 1 = source, 0 = target.
    pub fn discriminate(&self, g: &mut Graph, z: Var, grl_coeff: f64, bound: &BoundMlp) -> Result<Var, ModelError> {
        let logits = self.discriminate_logits(g, z, grl_coeff, bound)?;
        Ok(g.sigmoid(logits)?)
    }

    /// Pre-sigmoid discriminator output.
    pub fn discriminate_logits(&self, g: &mut Graph, z: Var, grl_coeff: f64, bound: &BoundMlp) -> Result<Var, ModelError> {
        let r = g.grl(z, grl_coeff)?;
        self.discriminator.forward(g, r, bound)
    }

    /// Softmax over `Q`, averaged across heads, for embeddings `z`.
    pub fn class_probabilities(&self, z: &Tensor2) -> Result<Tensor2, ModelError> {
        let protos = self.prototypes.prototypes()?;
        let mut g = Graph::new();
        let zv = g.leaf(z.clone());
        let pv = g.leaf(protos.clone());
        let mut acc: Option<Tensor2> = None;
        for head in &self.heads {
            let tv = g.leaf(head.theta.clone());
            let q = class_logits(&mut g, zv, tv, pv)?;
            let p = g.softmax_rows(q)?;
            let value = g.value(p).clone();
            acc = Some(match acc {
                None => value,
                Some(mut a) => {
                    a.add_assign(&value);
                    a
                }
            });
        }
        let probs = acc.expect("at least one head");
        let k = self.heads.len() as f64;
        Ok(if self.heads.len() == 1 { probs } else { probs.map(|v| v / k) })
    }

    /// Predicted classes for raw features.
    pub fn predict(&self, x: &Tensor2) -> Result<Vec<usize>, ModelError> {
        let z = self.embed_values(x)?;
        Ok(self.class_probabilities(&z)?.argmax_rows())
    }

    /// Relation score between two embeddings under head `head`.
    pub fn relation(&self, z_i: &[f64], z_j: &[f64], head: usize) -> Result<f64, ModelError> {
        let q = self.signatures(&Tensor2::from_rows(&[z_i, z_j])?, head)?;
        Ok(cosine(q.row(0), q.row(1)))
    }

    /// Relation signatures `Q` of embeddings `z` under head `head`.
    pub fn signatures(&self, z: &Tensor2, head: usize) -> Result<Tensor2, ModelError> {
        let protos = self.prototypes.prototypes()?;
        let mut g = Graph::new();
        let zv = g.leaf(z.clone());
        let tv = g.leaf(self.heads[head].theta.clone());
        let pv = g.leaf(protos.clone());
        let q = class_logits(&mut g, zv, tv, pv)?;
        Ok(g.value(q).clone())
    }

    /// Trainable tensors of a group, in checkpoint order.
    pub fn group_tensors(&self, group: ParamGroup) -> Vec<&Tensor2> {
        match group {
            ParamGroup::Extractor => self.extractor.tensors(),
            ParamGroup::Discriminator => self.discriminator.tensors(),
            ParamGroup::Heads => self.heads.iter().map(|h| &h.theta).collect(),
        }
    }

    pub fn group_tensors_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor2> {
        match group {
            ParamGroup::Extractor => self.extractor.tensors_mut(),
            ParamGroup::Discriminator => self.discriminator.tensors_mut(),
            ParamGroup::Heads => self.heads.iter_mut().map(|h| &mut h.theta).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.extractor.param_count()
            + self.discriminator.param_count()
            + self.heads.iter().map(|h| h.theta.len()).sum::<usize>()
    }
}
