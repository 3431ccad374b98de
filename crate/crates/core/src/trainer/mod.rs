//! Loss assembly, optimizers, the training loops and checkpoints.

mod checkpoint;
mod config;
pub mod losses;
pub mod optim;
mod report;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{grl_coefficient, LossMode, OptimizerKind, PaaConfig, Variant};
pub use losses::{build_pairs, cross_entropy, l_adv, l_adv_logits, l_ral, Pair, PairSet};
pub use optim::Optimizer;
pub use report::{Evaluation, FinalMetrics, History, RunReport};
pub use run::{init_model, train, train_paa_m, train_single_stage, Bound, Optimizers, Stage, Terms, Trainer};

use crate::alignment::AlignError;
use crate::data::DataError;
use crate::diffcore::DiffError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("numeric failure at epoch {epoch} in {term}: {detail}")]
    Numeric {
        epoch: usize,
        term: &'static str,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
}

fn diff_of(e: &TrainError) -> Option<&DiffError> {
    match e {
        TrainError::Diff(d) | TrainError::Model(ModelError::Diff(d)) | TrainError::Align(AlignError::Diff(d)) => Some(d),
        _ => None,
    }
}

impl TrainError {
    /// Tags non-finite and log-domain failures with the epoch and loss term.
    pub fn at(self, epoch: usize, term: &'static str) -> TrainError {
        match diff_of(&self) {
            Some(d @ (DiffError::NonFinite { .. } | DiffError::LogDomain { .. })) => TrainError::Numeric {
                epoch,
                term,
                detail: d.to_string(),
            },
            _ => self,
        }
    }

    pub(crate) fn numeric(epoch: usize, term: &'static str, e: DiffError) -> TrainError {
        TrainError::from(e).at(epoch, term)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::Numeric { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::l_disc_value;
    use crate::data::{gen_synthetic_pair, Corpus, ShiftSpec};
    use crate::diffcore::Tensor2;
    use crate::model::ParamGroup;

    fn toy() -> (Corpus, Corpus) {
        let shift = ShiftSpec {
            mean_shift: 1.0,
            rotation_angle: 0.3,
            noise_scale: 0.0,
            seed: 3,
            ..ShiftSpec::none(3)
        };
        gen_synthetic_pair(4, 6, 3, 60, 48, &shift).unwrap()
    }

    fn small(variant: Variant) -> PaaConfig {
        PaaConfig {
            epochs: 2,
            batch: 16,
            extractor_hidden: vec![12],
            embed_dim: 8,
            disc_hidden: vec![6],
            conf_threshold: 0.5,
            ..PaaConfig::new(variant)
        }
    }

    fn params(model: &crate::model::PaaModel, group: ParamGroup) -> Vec<Tensor2> {
        model.group_tensors(group).into_iter().cloned().collect()
    }

    #[test]
    fn zero_epochs_leave_initialization() {
        let (s, t) = toy();
        let mut cfg = small(Variant::C);
        cfg.epochs = 0;
        let (model, report) = train(&s, &t, None, &cfg).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let fresh = init_model(&cfg, s.dim(), s.classes(), &mut rng).unwrap();
        for g in ParamGroup::ALL {
            assert_eq!(params(&model, g), params(&fresh, g));
        }
        assert_eq!(report.epochs.epochs(), 0);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let (s, t) = toy();
        for v in [Variant::L, Variant::C, Variant::M] {
            let cfg = small(v);
            let (_, a) = train(&s, &t, None, &cfg).unwrap();
            let (_, b) = train(&s, &t, None, &cfg).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert_eq!(a.epochs.l_ral.len(), 2);
            assert!(a.epochs.l_ral.iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn variant_gating() {
        let (s, t) = toy();
        let (_, l) = train(&s, &t, None, &small(Variant::L)).unwrap();
        assert!(l.epochs.l_contrast.iter().chain(&l.epochs.l_disc).all(|&v| v == 0.0));
        let (_, c) = train(&s, &t, None, &small(Variant::C)).unwrap();
        assert!(c.epochs.l_disc.iter().all(|&v| v == 0.0));
        assert!(train_single_stage(&s, &t, None, &small(Variant::M)).is_err());
        assert!(train_paa_m(&s, &t, None, &small(Variant::L)).is_err());
    }

    #[test]
    fn degenerate_weights_reduce_total_to_classifier_loss() {
        let (s, t) = toy();
        let mut cfg = small(Variant::L);
        cfg.lambda1 = 0.0;
        cfg.grl = false;
        let mut tr = Trainer::new(&s, &t, None, &cfg).unwrap();
        let (_, _, terms, _) = tr.forward(Stage::Joint, &[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3], 0.7).unwrap();
        assert_eq!(terms.l_align, 0.0);
        assert!((terms.total - (terms.l_ral + terms.l_adv)).abs() < 1e-12);
    }

    #[test]
    fn no_discriminator_blocks_adversarial_gradient() {
        let (s, t) = toy();
        let ps: Vec<usize> = (0..8).collect();
        let extractor_grads = |grl: bool, coeff: f64| {
            let mut cfg = small(Variant::L);
            cfg.grl = grl;
            let mut tr = Trainer::new(&s, &t, None, &cfg).unwrap();
            let (g, total, terms, bound) = tr.forward(Stage::Joint, &ps, &[0, 1, 2], coeff).unwrap();
            assert!(terms.l_adv > 0.0);
            let grads = g.backward(total).unwrap();
            bound.extractor.iter().map(|&v| grads.get(v).unwrap().clone()).collect::<Vec<_>>()
        };
        let off = extractor_grads(false, 0.9);
        assert_eq!(off, extractor_grads(true, 0.0));
        assert_ne!(off, extractor_grads(true, 0.9));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let (s, t) = toy();
        for v in [Variant::C, Variant::M] {
            let cfg = small(v);
            let mut tr = Trainer::new(&s, &t, None, &cfg).unwrap();
            let ps: Vec<usize> = (0..16).collect();
            let pt: Vec<usize> = (0..16).collect();
            let stage = if v == Variant::M { Stage::One } else { Stage::Joint };
            let (g, total, _, bound) = tr.forward(stage, &ps, &pt, 0.5).unwrap();
            let grads = g.backward(total).unwrap();
            for group in ParamGroup::ALL {
                for var in bound.vars(group) {
                    let gr = grads.get(var).expect("gradient reaches parameter");
                    assert!(gr.data().iter().all(|x| x.is_finite()));
                    assert!(gr.max_abs() > 0.0, "{v:?} {group:?} has a dead parameter");
                }
            }
        }
    }

    #[test]
    fn paa_m_freeze_contracts_hold_bitwise() {
        let (s, t) = toy();
        let cfg = small(Variant::M);
        let mut tr = Trainer::new(&s, &t, None, &cfg).unwrap();
        let ps: Vec<usize> = (0..16).collect();
        let pt: Vec<usize> = (0..16).collect();
        tr.step(Stage::One, &ps, &pt, 0.3).unwrap();

        let ext = params(tr.model(), ParamGroup::Extractor);
        let disc = params(tr.model(), ParamGroup::Discriminator);
        let heads = params(tr.model(), ParamGroup::Heads);
        tr.step(Stage::Two, &ps, &pt, 0.3).unwrap();
        assert_eq!(params(tr.model(), ParamGroup::Extractor), ext);
        assert_eq!(params(tr.model(), ParamGroup::Discriminator), disc);
        assert_ne!(params(tr.model(), ParamGroup::Heads), heads);

        let heads = params(tr.model(), ParamGroup::Heads);
        let ext = params(tr.model(), ParamGroup::Extractor);
        tr.step(Stage::Three, &ps, &pt, 0.3).unwrap();
        assert_eq!(params(tr.model(), ParamGroup::Heads), heads);
        // The discriminator keeps playing the adversarial game in stage 3.
        assert_ne!(params(tr.model(), ParamGroup::Discriminator), disc);
        assert_ne!(params(tr.model(), ParamGroup::Extractor), ext);
    }

    #[test]
    fn stage_two_raises_and_stage_three_lowers_discrepancy() {
        let (s, t) = toy();
        let mut cfg = small(Variant::M);
        cfg.lr = 1e-2;
        let mut tr = Trainer::new(&s, &t, None, &cfg).unwrap();
        let ps: Vec<usize> = (0..16).collect();
        let pt: Vec<usize> = (0..16).collect();
        tr.step(Stage::One, &ps, &pt, 0.3).unwrap();
        let held = |tr: &Trainer| {
            let z = tr.model().embed_values(&t.subset(&pt).feature_matrix()).unwrap();
            l_disc_value(tr.model(), &z).unwrap()
        };
        let d1 = held(&tr);
        for _ in 0..5 {
            tr.step(Stage::Two, &ps, &pt, 0.3).unwrap();
        }
        let d2 = held(&tr);
        for _ in 0..5 {
            tr.step(Stage::Three, &ps, &pt, 0.3).unwrap();
        }
        let d3 = held(&tr);
        assert!(d2 > d1, "stage 2: {d1} -> {d2}");
        assert!(d3 < d2, "stage 3: {d2} -> {d3}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (s, t) = toy();
        for v in [Variant::C, Variant::M] {
            let mut cfg = small(v);
            cfg.epochs = 4;
            let (straight_model, straight) = train(&s, &t, None, &cfg).unwrap();

            let mut first = Trainer::new(&s, &t, None, &cfg).unwrap();
            first.run_until(2).unwrap();
            let bytes = first.checkpoint().to_bytes();
            let ck = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(ck.to_bytes(), bytes);
            assert_eq!(ck.epoch, 2);
            let (resumed_model, resumed) = Trainer::resume(ck, &s, &t, None).unwrap().run().unwrap();
            assert_eq!(resumed.to_json(), straight.to_json());
            for g in ParamGroup::ALL {
                assert_eq!(params(&resumed_model, g), params(&straight_model, g));
            }
            assert_eq!(
                resumed_model.prototypes.prototypes().unwrap(),
                straight_model.prototypes.prototypes().unwrap()
            );
        }
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let (s, t) = toy();
        let tr = Trainer::new(&s, &t, None, &small(Variant::L)).unwrap();
        let bytes = tr.checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(TrainError::Checkpoint(m)) if m.contains("magic")));
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 20]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let key = b"\"version\":1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut other = bytes.clone();
        other[at + key.len() - 1] = b'7';
        assert!(Checkpoint::from_bytes(&other).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let (s, t) = toy();
        let mut tr = Trainer::new(&s, &t, None, &small(Variant::M)).unwrap();
        tr.run_until(1).unwrap();
        let dir = std::env::temp_dir().join(format!("paa-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.ckpt");
        save_checkpoint(&tr.checkpoint(), &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck, tr.checkpoint());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn numeric_errors_name_epoch_and_term() {
        let e = TrainError::from(DiffError::NonFinite { op: "exp", index: 3 }).at(7, "l_align");
        assert!(e.is_numeric());
        assert!(e.to_string().contains("epoch 7") && e.to_string().contains("l_align"));
        let e = TrainError::Config("x".into()).at(1, "l_ral");
        assert!(!e.is_numeric());
    }
}
