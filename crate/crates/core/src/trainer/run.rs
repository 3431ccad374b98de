//! Single-stage (PAA-L, PAA-C) and three-stage (PAA-M) training loops.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{l_align, l_contrast};
use crate::boundary::{l_disc, l_disc_value};
use crate::data::Corpus;
use crate::diffcore::{DiffError, Gradients, Graph, Tensor2, Var};
use crate::model::{class_logits, relation_matrix, ModelSpec, PaaModel, ParamGroup, PrototypeBank, RalHead, Standardizer};

use super::losses::{build_pairs, cross_entropy, l_adv_logits, l_ral};
use super::optim::Optimizer;
use super::report::{Evaluation, FinalMetrics, History, RunReport};
use super::{grl_coefficient, Checkpoint, LossMode, PaaConfig, TrainError, Variant};

/// Stream used for the fixed held-out target batch, apart from the
/// training stream so that resuming never depends on it.
const HELD_STREAM: u64 = 0x48454c44;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// The single-stage objective of PAA-L and PAA-C.
    Joint,
    /// Extractor, heads and discriminator on the alignment objective.
    One,
    /// Extractor frozen; heads trade relation loss against discrepancy.
    Two,
    /// Heads frozen; extractor on relation and adversarial loss.
    Three,
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub l_ral: f64,
    pub l_align: f64,
    pub l_contrast: f64,
    pub l_disc: f64,
    pub l_adv: f64,
    pub total: f64,
}

impl Terms {
    fn add(&mut self, o: &Terms) {
        self.l_ral += o.l_ral;
        self.l_align += o.l_align;
        self.l_contrast += o.l_contrast;
        self.l_disc += o.l_disc;
        self.l_adv += o.l_adv;
        self.total += o.total;
    }

    fn scaled(mut self, s: f64) -> Terms {
        self.l_ral *= s;
        self.l_align *= s;
        self.l_contrast *= s;
        self.l_disc *= s;
        self.l_adv *= s;
        self.total *= s;
        self
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Optimizers {
    pub extractor: Optimizer,
    pub discriminator: Optimizer,
    pub heads: Optimizer,
}

impl Optimizers {
    fn new(config: &PaaConfig, model: &PaaModel) -> Self {
        let make = |group: ParamGroup| {
            let sizes: Vec<usize> = model.group_tensors(group).iter().map(|t| t.len()).collect();
            Optimizer::new(config.optimizer(group), config.lr, &sizes)
        };
        Optimizers {
            extractor: make(ParamGroup::Extractor),
            discriminator: make(ParamGroup::Discriminator),
            heads: make(ParamGroup::Heads),
        }
    }

    pub fn get(&self, group: ParamGroup) -> &Optimizer {
        match group {
            ParamGroup::Extractor => &self.extractor,
            ParamGroup::Discriminator => &self.discriminator,
            ParamGroup::Heads => &self.heads,
        }
    }

    fn get_mut(&mut self, group: ParamGroup) -> &mut Optimizer {
        match group {
            ParamGroup::Extractor => &mut self.extractor,
            ParamGroup::Discriminator => &mut self.discriminator,
            ParamGroup::Heads => &mut self.heads,
        }
    }
}

struct Prepared {
    xs: Tensor2,
    ys: Vec<usize>,
    xt: Tensor2,
    held_raw: Tensor2,
    eval: Option<(Tensor2, Vec<usize>)>,
    classes: usize,
}

/// Training state that can be advanced epoch by epoch, checkpointed and
/// resumed.
pub struct Trainer {
    config: PaaConfig,
    model: PaaModel,
    optimizers: Optimizers,
    rng: ChaCha8Rng,
    epoch: usize,
    history: History,
    data: Prepared,
}

fn model_spec(config: &PaaConfig, dim: usize, classes: usize) -> ModelSpec {
    ModelSpec {
        input_dim: dim,
        extractor_hidden: config.extractor_hidden.clone(),
        embed_dim: config.embed_dim,
        disc_hidden: config.disc_hidden.clone(),
        classes,
        heads: config.heads(),
    }
}

/// Fresh model for `config`, drawing initial weights from `rng`.
pub fn init_model(config: &PaaConfig, dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<PaaModel, TrainError> {
    let mut model = PaaModel::new(model_spec(config, dim, classes), config.momentum_proto, rng)?;
    if !config.prototypes {
        model.prototypes = PrototypeBank::fixed_anchors(classes, config.embed_dim);
    }
    if !config.theta_trainable {
        model.heads = (0..config.heads()).map(|_| RalHead::identity(config.embed_dim)).collect();
    }
    Ok(model)
}

fn softmax_values(q: &Tensor2) -> Tensor2 {
    let (n, c) = q.shape();
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = q.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    Tensor2::new(n, c, out).expect("softmax is finite")
}

impl Trainer {
    /// `eval` supplies labeled samples for accuracy; when absent the target
    /// corpus is used if it is labeled. Target labels never reach a loss.
    pub fn new(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if source.is_empty() || target.is_empty() {
            return Err(TrainError::Config("source and target corpora must be nonempty".into()));
        }
        if !source.is_labeled() {
            return Err(crate::data::DataError::NotLabeled(source.name().to_string()).into());
        }
        if source.dim() != target.dim() || source.classes() != target.classes() {
            return Err(TrainError::Config(format!(
                "source ({} features, {} classes) and target ({} features, {} classes) disagree",
                source.dim(),
                source.classes(),
                target.dim(),
                target.classes()
            )));
        }
        let classes = source.classes();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = init_model(config, source.dim(), classes, &mut rng)?;

        let xs_raw = source.feature_matrix();
        model.standardizer = if config.z_score {
            Standardizer::fit(&xs_raw)
        } else {
            Standardizer::identity(source.dim())
        };
        let xt_raw = target.feature_matrix();

        let mut held_rng = ChaCha8Rng::seed_from_u64(config.seed);
        held_rng.set_stream(HELD_STREAM);
        let mut held = index::sample(&mut held_rng, target.len(), config.batch.min(target.len())).into_vec();
        held.sort_unstable();

        let eval = match eval {
            Some(e) if !e.is_labeled() => {
                return Err(crate::data::DataError::NotLabeled(e.name().to_string()).into());
            }
            Some(e) => Some((e.feature_matrix(), e.labels())),
            None if target.is_labeled() => Some((xt_raw.clone(), target.labels())),
            None => None,
        };

        let data = Prepared {
            xs: model.standardizer.apply(&xs_raw),
            ys: source.labels(),
            xt: model.standardizer.apply(&xt_raw),
            held_raw: xt_raw.select_rows(&held),
            eval,
            classes,
        };
        Ok(Trainer {
            optimizers: Optimizers::new(config, &model),
            config: config.clone(),
            model,
            rng,
            epoch: 0,
            history: History::default(),
            data,
        })
    }

    /// Rebuilds a trainer from a checkpoint taken on the same corpora.
    pub fn resume(checkpoint: Checkpoint, source: &Corpus, target: &Corpus, eval: Option<&Corpus>) -> Result<Self, TrainError> {
        let mut t = Trainer::new(source, target, eval, &checkpoint.config)?;
        if checkpoint.model.spec != t.model.spec {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint model {:?} does not fit corpora ({:?})",
                checkpoint.model.spec, t.model.spec
            )));
        }
        if checkpoint.model.standardizer != t.model.standardizer {
            return Err(TrainError::Checkpoint("checkpoint was taken on different source data".into()));
        }
        t.model = checkpoint.model;
        t.optimizers = checkpoint.optimizers;
        t.rng = checkpoint.rng;
        t.epoch = checkpoint.epoch;
        t.history = checkpoint.history;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            model: self.model.clone(),
            optimizers: self.optimizers.clone(),
            rng: self.rng.clone(),
            history: self.history.clone(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &PaaModel {
        &self.model
    }

    pub fn config(&self) -> &PaaConfig {
        &self.config
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Trains until `epochs` epochs are complete (capped at the configured
    /// total).
    pub fn run_until(&mut self, epochs: usize) -> Result<(), TrainError> {
        while self.epoch < epochs.min(self.config.epochs) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<(PaaModel, RunReport), TrainError> {
        self.run_until(self.config.epochs)?;
        self.finish()
    }

    /// Final evaluation and report. A model that never saw a batch has no
    /// prototypes and reports an empty evaluation.
    pub fn finish(self) -> Result<(PaaModel, RunReport), TrainError> {
        let evaluation = match (&self.data.eval, self.model.prototypes.is_initialized()) {
            (Some((x, y)), true) => Evaluation::new(y, &self.model.predict(x)?, self.data.classes),
            _ => Evaluation::new(&[], &[], self.data.classes),
        };
        let report = RunReport {
            variant: self.config.variant,
            epochs: self.history,
            final_metrics: FinalMetrics {
                evaluation,
                seed: self.config.seed,
                config_hash: self.config.hash(),
            },
        };
        Ok((self.model, report))
    }

    fn batches(&self) -> (usize, usize, usize) {
        let (ns, nt) = (self.data.xs.rows(), self.data.xt.rows());
        let bs = self.config.batch.min(ns);
        let bt = self.config.batch.min(nt);
        (bs, bt, ns.div_ceil(bs).max(nt.div_ceil(bt)))
    }

    /// Positions of batch `b`; the smaller domain cycles.
    fn batch_positions(order: &[usize], size: usize, b: usize) -> Vec<usize> {
        (0..size).map(|k| order[(b * size + k) % order.len()]).collect()
    }

    /// One epoch: a single pass for PAA-L/C, three passes for PAA-M.
    pub fn run_epoch(&mut self) -> Result<(), TrainError> {
        let (bs, bt, n_batches) = self.batches();
        let mut order_s: Vec<usize> = (0..self.data.xs.rows()).collect();
        let mut order_t: Vec<usize> = (0..self.data.xt.rows()).collect();
        order_s.shuffle(&mut self.rng);
        order_t.shuffle(&mut self.rng);

        let total_epochs = self.config.epochs.max(1) as f64;
        let epoch = self.epoch;
        let gamma = self.config.grl_gamma;
        let pass = |this: &mut Self, stage: Stage| -> Result<Terms, TrainError> {
            let mut acc = Terms::default();
            for b in 0..n_batches {
                let progress = (epoch as f64 + b as f64 / n_batches as f64) / total_epochs;
                let coeff = grl_coefficient(progress, gamma);
                let ps = Self::batch_positions(&order_s, bs, b);
                let pt = Self::batch_positions(&order_t, bt, b);
                acc.add(&this.step(stage, &ps, &pt, coeff)?);
            }
            Ok(acc.scaled(1.0 / n_batches as f64))
        };

        let logged = if self.config.variant == Variant::M {
            let one = pass(self, Stage::One)?;
            let d1 = self.held_disc()?;
            let two = if self.config.stage2 { Some(pass(self, Stage::Two)?) } else { None };
            let d2 = self.held_disc()?;
            let three = if self.config.stage3 { Some(pass(self, Stage::Three)?) } else { None };
            let d3 = self.held_disc()?;
            self.history.disc_stage1.push(d1);
            self.history.disc_stage2.push(d2);
            self.history.disc_stage3.push(d3);
            let l_disc = two.or(three).map_or(d1, |t| t.l_disc);
            Terms { l_disc, ..one }
        } else {
            pass(self, Stage::Joint)?
        };

        self.history.l_ral.push(logged.l_ral);
        self.history.l_align.push(logged.l_align);
        self.history.l_contrast.push(logged.l_contrast);
        self.history.l_disc.push(logged.l_disc);
        self.history.l_adv.push(logged.l_adv);
        if let Some((x, y)) = &self.data.eval {
            let pred = self.model.predict(x).map_err(|e| TrainError::from(e).at(self.epoch, "evaluation"))?;
            self.history.target_acc.push(Evaluation::new(y, &pred, self.data.classes).accuracy);
        }
        self.epoch += 1;
        log::debug!(
            "epoch {} ral {:.4} align {:.4} contrast {:.4} disc {:.4} adv {:.4} acc {:?}",
            self.epoch,
            logged.l_ral,
            logged.l_align,
            logged.l_contrast,
            logged.l_disc,
            logged.l_adv,
            self.history.target_acc.last()
        );
        Ok(())
    }

    /// Discrepancy of the two heads on the held target batch.
    pub fn held_disc(&self) -> Result<f64, TrainError> {
        if self.model.heads.len() != 2 {
            return Ok(0.0);
        }
        let tag = |e: TrainError| e.at(self.epoch, "l_disc");
        let z = self.model.embed_values(&self.data.held_raw).map_err(|e| tag(e.into()))?;
        l_disc_value(&self.model, &z).map_err(|e| tag(e.into()))
    }

    /// Forward, backward and parameter update for one batch pair.
    pub fn step(&mut self, stage: Stage, ps: &[usize], pt: &[usize], coeff: f64) -> Result<Terms, TrainError> {
        let epoch = self.epoch;
        let (g, total, terms, bound) = self.forward(stage, ps, pt, coeff)?;
        let grads = g.backward(total).map_err(|e| TrainError::numeric(epoch, "backward", e))?;
        let groups: &[ParamGroup] = match stage {
            Stage::Joint | Stage::One => &[ParamGroup::Extractor, ParamGroup::Discriminator, ParamGroup::Heads],
            Stage::Two => &[ParamGroup::Heads],
            Stage::Three => &[ParamGroup::Extractor, ParamGroup::Discriminator],
        };
        for &group in groups {
            if group == ParamGroup::Heads && !self.config.theta_trainable {
                continue;
            }
            let vars = bound.vars(group);
            if vars.is_empty() {
                continue;
            }
            let grad_list = gradients_for(&grads, &vars, &self.model, group);
            let params = self.model.group_tensors_mut(group);
            self.optimizers.get_mut(group).apply(params, &grad_list);
        }
        Ok(terms)
    }

    /// Builds the loss graph for one batch pair. Updates prototypes in the
    /// stages that own them.
    pub fn forward(&mut self, stage: Stage, ps: &[usize], pt: &[usize], coeff: f64) -> Result<(Graph, Var, Terms, Bound), TrainError> {
        let cfg = &self.config;
        let epoch = self.epoch;
        let num = |term: &'static str| move |e: TrainError| e.at(epoch, term);
        let mut g = Graph::new();
        let ys: Vec<usize> = ps.iter().map(|&i| self.data.ys[i]).collect();
        let xs = g.leaf(self.data.xs.select_rows(ps));
        let xt = g.leaf(self.data.xt.select_rows(pt));

        let mut bound = Bound::default();
        let (zs, zt) = if stage == Stage::Two {
            let zs = frozen_embed(&self.model, &self.data.xs.select_rows(ps)).map_err(num("embedding"))?;
            let zt = frozen_embed(&self.model, &self.data.xt.select_rows(pt)).map_err(num("embedding"))?;
            (g.leaf(zs), g.leaf(zt))
        } else {
            let be = self.model.extractor.bind(&mut g);
            let zs = self.model.embed(&mut g, xs, &be).map_err(|e| TrainError::from(e).at(epoch, "embedding"))?;
            let zt = self.model.embed(&mut g, xt, &be).map_err(|e| TrainError::from(e).at(epoch, "embedding"))?;
            bound.extractor = be.vars();
            (zs, zt)
        };

        if matches!(stage, Stage::Joint | Stage::One) {
            let zv = g.value(zs).clone();
            self.model.prototypes.update(&zv, &ys)?;
        }
        let cfg = cfg.clone();
        let model = &self.model;
        let protos = g.leaf(model.prototypes.prototypes()?.clone());
        bound.heads = model.heads.iter().map(|h| g.leaf(h.theta.clone())).collect();

        let mut qs = vec![];
        let mut qt = vec![];
        let mut p_t: Option<Tensor2> = None;
        for &theta in &bound.heads {
            let s = class_logits(&mut g, zs, theta, protos).map_err(|e| TrainError::from(e).at(epoch, "class_logits"))?;
            let t = class_logits(&mut g, zt, theta, protos).map_err(|e| TrainError::from(e).at(epoch, "class_logits"))?;
            let p = softmax_values(g.value(t));
            p_t = Some(match p_t {
                None => p,
                Some(mut acc) => {
                    for (a, b) in acc_data(&mut acc).iter_mut().zip(p.data()) {
                        *a += b;
                    }
                    acc
                }
            });
            qs.push(s);
            qt.push(t);
        }
        let heads = bound.heads.len() as f64;
        let p_t = p_t.expect("at least one head").map(|v| v / heads);

        let mut terms = Terms::default();
        let cls = classifier_loss(&mut g, &cfg, &qs, &qt, &ys, &p_t).map_err(num("l_ral"))?;
        terms.l_ral = g.value(cls).item();
        let mut total = cls;

        if matches!(stage, Stage::Joint | Stage::One) {
            let kernel = cfg.kernel();
            if cfg.lambda1 > 0.0 {
                let la = l_align(&mut g, zs, &ys, zt, &p_t, &kernel, cfg.conf_threshold)
                    .map_err(|e| TrainError::from(e).at(epoch, "l_align"))?;
                terms.l_align = g.value(la).item();
                let w = g.scale(la, cfg.lambda1)?;
                total = g.add(total, w)?;
            }
            if cfg.lambda2 > 0.0 {
                let lc = l_contrast(&mut g, zs, &ys, zt, &p_t, &kernel, cfg.conf_threshold)
                    .map_err(|e| TrainError::from(e).at(epoch, "l_contrast"))?;
                terms.l_contrast = g.value(lc).item();
                let w = g.scale(lc, cfg.lambda2)?;
                total = g.add(total, w)?;
            }
        }

        let disc_sign = match stage {
            Stage::Two => Some(-1.0),
            Stage::Three if cfg.stage3_disc => Some(1.0),
            Stage::Joint if bound.heads.len() == 2 => Some(-1.0),
            _ => None,
        };
        if let (Some(sign), true) = (disc_sign, bound.heads.len() == 2) {
            let ld = l_disc(&mut g, zt, bound.heads[0], bound.heads[1], protos)
                .map_err(|e| TrainError::from(e).at(epoch, "l_disc"))?;
            terms.l_disc = g.value(ld).item();
            if cfg.lambda3 > 0.0 {
                let w = g.scale(ld, sign * cfg.lambda3)?;
                total = g.add(total, w)?;
            }
        }

        if stage != Stage::Two {
            let bd = model.discriminator.bind(&mut g);
            let c = if cfg.grl { coeff } else { 0.0 };
            let (ds_in, dt_in) = if cfg.disc_scale_free {
                joint_rms_scaled(&mut g, zs, zt).map_err(|e| TrainError::from(e).at(epoch, "l_adv"))?
            } else {
                (zs, zt)
            };
            let ds = model.discriminate_logits(&mut g, ds_in, c, &bd).map_err(|e| TrainError::from(e).at(epoch, "l_adv"))?;
            let dt = model.discriminate_logits(&mut g, dt_in, c, &bd).map_err(|e| TrainError::from(e).at(epoch, "l_adv"))?;
            let la = l_adv_logits(&mut g, ds, dt).map_err(|e| TrainError::from(e).at(epoch, "l_adv"))?;
            terms.l_adv = g.value(la).item();
            total = g.add(total, la)?;
            bound.discriminator = bd.vars();
        }
        terms.total = g.value(total).item();
        if !terms.total.is_finite() {
            return Err(TrainError::Numeric {
                epoch,
                term: "total",
                detail: format!("{}", terms.total),
            });
        }
        Ok((g, total, terms, bound))
    }
}

fn acc_data(t: &mut Tensor2) -> &mut [f64] {
    t.data_mut()
}

/// Graph handles of the parameters bound in one step.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    pub extractor: Vec<Var>,
    pub discriminator: Vec<Var>,
    pub heads: Vec<Var>,
}

impl Bound {
    pub fn vars(&self, group: ParamGroup) -> Vec<Var> {
        match group {
            ParamGroup::Extractor => self.extractor.clone(),
            ParamGroup::Discriminator => self.discriminator.clone(),
            ParamGroup::Heads => self.heads.clone(),
        }
    }
}

/// Gradients for a group in parameter order; parameters the loss does not
/// reach get zeros.
fn gradients_for(grads: &Gradients, vars: &[Var], model: &PaaModel, group: ParamGroup) -> Vec<Tensor2> {
    vars.iter()
        .zip(model.group_tensors(group))
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols())))
        .collect()
}

/// Both batches divided by their joint root-mean-square entry.
fn joint_rms_scaled(g: &mut Graph, zs: Var, zt: Var) -> Result<(Var, Var), DiffError> {
    let both = g.concat_rows(zs, zt)?;
    let sq = g.mul(both, both)?;
    let ms = g.mean(sq)?;
    let ms = g.add_scalar(ms, 1e-12)?;
    let ln = g.log(ms)?;
    let half = g.scale(ln, 0.5)?;
    let rms = g.exp(half)?;
    Ok((g.div_scalar(zs, rms)?, g.div_scalar(zt, rms)?))
}

fn frozen_embed(model: &PaaModel, x_std: &Tensor2) -> Result<Tensor2, TrainError> {
    let mut g = Graph::new();
    let b = model.extractor.bind(&mut g);
    let x = g.leaf(x_std.clone());
    let z = model.embed(&mut g, x, &b)?;
    Ok(g.value(z).clone())
}

/// The classifier objective averaged over heads.
fn classifier_loss(
    g: &mut Graph,
    cfg: &PaaConfig,
    qs: &[Var],
    qt: &[Var],
    ys: &[usize],
    p_t: &Tensor2,
) -> Result<Var, TrainError> {
    let set = build_pairs(ys, cfg.target_pairs.then_some(p_t), cfg.conf_threshold);
    let pseudo: Vec<usize> = set.labels[set.sources..].to_vec();
    let mut per_head = vec![];
    for (&s, &t) in qs.iter().zip(qt) {
        let members = if set.targets.is_empty() {
            s
        } else {
            let sel = g.select_rows(t, &set.targets)?;
            g.concat_rows(s, sel)?
        };
        let loss = match cfg.loss {
            LossMode::Ral => {
                let pairs = set.pairs();
                if pairs.is_empty() {
                    g.leaf(Tensor2::scalar(0.0)?)
                } else {
                    let phi = relation_matrix(g, members)?;
                    l_ral(g, phi, &pairs)?
                }
            }
            LossMode::SslSource => {
                let ce = cross_entropy(g, s, ys)?;
                let pairs = set.target_pairs();
                if pairs.is_empty() {
                    ce
                } else {
                    let phi = relation_matrix(g, members)?;
                    let r = l_ral(g, phi, &pairs)?;
                    g.add(ce, r)?
                }
            }
            LossMode::Ssl => {
                let ce = cross_entropy(g, s, ys)?;
                if set.targets.is_empty() {
                    ce
                } else {
                    let sel = g.select_rows(t, &set.targets)?;
                    let ct = cross_entropy(g, sel, &pseudo)?;
                    g.add(ce, ct)?
                }
            }
        };
        per_head.push(loss);
    }
    let mut total = per_head[0];
    for &l in &per_head[1..] {
        total = g.add(total, l)?;
    }
    Ok(g.scale(total, 1.0 / per_head.len() as f64)?)
}

fn check_variant(config: &PaaConfig, allowed: &[Variant], op: &str) -> Result<(), TrainError> {
    if allowed.contains(&config.variant) {
        Ok(())
    } else {
        Err(TrainError::Config(format!("{op} does not accept variant {}", config.variant)))
    }
}

/// Trains PAA-L or PAA-C.
pub fn train_single_stage(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig) -> Result<(PaaModel, RunReport), TrainError> {
    check_variant(config, &[Variant::L, Variant::C], "single-stage training")?;
    Trainer::new(source, target, eval, config)?.run()
}

/// Trains PAA-M with its three stages per epoch.
pub fn train_paa_m(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig) -> Result<(PaaModel, RunReport), TrainError> {
    check_variant(config, &[Variant::M], "three-stage training")?;
    Trainer::new(source, target, eval, config)?.run()
}

/// Dispatches on the configured variant.
pub fn train(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig) -> Result<(PaaModel, RunReport), TrainError> {
    Trainer::new(source, target, eval, config)?.run()
}
