use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor2;

use super::OptimizerKind;

pub const RMSPROP_ALPHA: f64 = 0.99;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const OPT_EPS: f64 = 1e-8;

/// Per-tensor optimizer state. RMSProp keeps only the squared-gradient
/// average `v`; Adam keeps both moments and a step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind,
            lr,
            step: 0,
            m: if kind == OptimizerKind::Adam { zeros() } else { vec![] },
            v: zeros(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.v.iter().map(Vec::len).collect()
    }

    /// One update of `params` against `grads` (same order and shapes).
    pub fn apply(&mut self, params: Vec<&mut Tensor2>, grads: &[Tensor2]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        assert_eq!(params.len(), self.v.len(), "optimizer tracks every parameter");
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Rmsprop => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.v) {
                    for ((w, &gr), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = RMSPROP_ALPHA * *vi + (1.0 - RMSPROP_ALPHA) * gr * gr;
                        *w -= lr * gr / (vi.sqrt() + OPT_EPS);
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gr;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gr * gr;
                        let mh = *mi / c1;
                        let vh = *vi / c2;
                        *w -= lr * mh / (vh.sqrt() + OPT_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor2 {
        Tensor2::scalar(v).unwrap()
    }

    #[test]
    fn rmsprop_first_step() {
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, 0.1, &[1]);
        let mut w = scalar(1.0);
        opt.apply(vec![&mut w], &[scalar(2.0)]);
        // v = 0.01 * 4 = 0.04, step = 0.1 * 2 / 0.2
        assert!((w.item() - (1.0 - 1.0 / (1.0 + 5e-8))).abs() < 1e-12);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &[1]);
        let mut w = scalar(0.0);
        opt.apply(vec![&mut w], &[scalar(-3.0)]);
        assert!((w.item() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        for kind in [OptimizerKind::Rmsprop, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.05, &[2]);
            let mut w = Tensor2::from_rows(&[&[3.0, -2.0]]).unwrap();
            for _ in 0..500 {
                let g = w.map(|x| 2.0 * x);
                opt.apply(vec![&mut w], &[g]);
            }
            assert!(w.max_abs() < 0.1, "{kind:?}: {w:?}");
        }
    }
}
