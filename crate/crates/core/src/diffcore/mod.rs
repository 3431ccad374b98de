//! Dense-matrix reverse-mode differentiation.
//!
//! A [`Graph`] records every operation together with its forward value.
//! Gradients flow back from a scalar loss through [`Graph::backward`]. The
//! graph is rebuilt for every optimization step.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor2;

pub(crate) use graph::sq_dist_values;


/// Lower clamp applied before taking logarithms of probabilities.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor {rows}x{cols} cannot hold {len} values")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("log of non-positive value {value} at flat index {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("backward requires a 1x1 loss, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: {detail}")]
    BadArgument { op: &'static str, detail: String },
}

/// Central finite-difference gradient of a scalar function of one tensor.
///
/// Used by gradient checks throughout the crate's tests; the function is
/// re-evaluated on perturbed copies of `x`, independent of [`Graph::backward`].
pub fn finite_difference<F>(x: &Tensor2, h: f64, mut f: F) -> Tensor2
where
    F: FnMut(&Tensor2) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for (k, slot) in grad.iter_mut().enumerate() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor2::from_raw(x.rows(), x.cols(), grad)
}

/// Max elementwise relative error, `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor2, b: &Tensor2, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor2 {
        Tensor2::new(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn relu_softmax_matmul_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[-1.0, 2.0]]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);

        let z = g.leaf(t(&[&[0.0, 0.0]]));
        let s = g.softmax_rows(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let a = g.leaf(t(&[&[1.0, 2.0]]));
        let b = g.leaf(t(&[&[3.0], &[4.0]]));
        let m = g.matmul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[11.0]);
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor2::zeros(2, 3));
        let b = g.leaf(Tensor2::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            DiffError::Shape {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[&[1.0, 0.0]]));
        assert!(matches!(g.log(a), Err(DiffError::LogDomain { index: 1, .. })));
        let c = g.clamp(a, LOG_EPS, 1.0).unwrap();
        assert!(g.log(c).is_ok());
    }

    #[test]
    fn backward_on_non_scalar_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor2::zeros(2, 2));
        assert!(matches!(g.backward(a), Err(DiffError::NotScalar { .. })));
    }

    #[test]
    fn sum_gives_all_ones_and_self_gradient_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor2::filled(3, 4, 0.7));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor2::filled(3, 4, 1.0));
        assert_eq!(grads.get(s).unwrap().item(), 1.0);
    }

    #[test]
    fn mean_square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[3.0]]));
        let sq = g.mul(x, x).unwrap();
        let m = g.mean(sq).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn grl_contracts() {
        let x0 = t(&[&[1.5, -2.0], &[0.25, 3.0]]);
        for (coeff, factor, expect) in [(0.0, 1.0, 0.0), (1.0, 1.0, -1.0), (0.5, 2.0, -1.0)] {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let r = g.grl(x, coeff).unwrap();
            assert_eq!(g.value(r), &x0, "grl forward must be bitwise identity");
            let s = g.scale(r, factor).unwrap();
            let l = g.sum(s).unwrap();
            let grads = g.backward(l).unwrap();
            for &v in grads.get(x).unwrap().data() {
                assert_eq!(v, expect);
            }
        }
        let mut g = Graph::new();
        let x = g.leaf(x0);
        assert!(g.grl(x, -0.1).is_err());
    }

    /// Every op composed into a scalar loss, gradient-checked against
    /// central differences on random 3x4 inputs. `grl` is excluded: its
    /// backward is deliberately not the derivative of its forward.
    #[test]
    fn every_op_matches_finite_differences() {
        type Build = fn(&mut Graph, Var, Var) -> Result<Var, DiffError>;
        let cases: Vec<(&str, Build)> = vec![
            ("matmul", |g, x, w| {
                let wt = g.transpose(w)?;
                g.matmul(x, wt)
            }),
            ("add", |g, x, w| g.add(x, w)),
            ("sub", |g, x, w| g.sub(x, w)),
            ("mul", |g, x, w| g.mul(x, w)),
            ("scale", |g, x, _| g.scale(x, -1.7)),
            ("add_scalar", |g, x, _| g.add_scalar(x, 0.3)),
            ("div_scalar", |g, x, w| {
                let e = g.entry(w, 1, 2)?;
                let d = g.add_scalar(e, 3.0)?;
                g.div_scalar(x, d)
            }),
            ("entry", |g, x, _| g.entry(x, 2, 1)),
            ("relu", |g, x, _| g.relu(x)),
            ("sigmoid", |g, x, _| g.sigmoid(x)),
            ("softplus", |g, x, _| {
                let big = g.scale(x, 40.0)?;
                g.softplus(big)
            }),
            ("softmax_rows", |g, x, _| g.softmax_rows(x)),
            ("log", |g, x, _| {
                let sq = g.mul(x, x)?;
                let p = g.add_scalar(sq, 0.5)?;
                g.log(p)
            }),
            ("exp", |g, x, _| g.exp(x)),
            ("neg", |g, x, _| g.neg(x)),
            ("abs", |g, x, _| g.abs(x)),
            ("mean", |g, x, _| {
                let m = g.mean(x)?;
                g.mul(m, m)
            }),
            ("l2_norm_rows", |g, x, _| g.l2_norm_rows(x)),
            ("normalize_rows", |g, x, w| {
                let n = g.normalize_rows(x)?;
                g.mul(n, w)
            }),
            ("transpose", |g, x, _| g.transpose(x)),
            ("concat_rows", |g, x, w| g.concat_rows(x, w)),
            ("select_rows", |g, x, _| g.select_rows(x, &[2, 0, 2])),
            ("clamp", |g, x, _| g.clamp(x, -0.5, 0.5)),
            ("add_row", |g, x, w| {
                let b = g.select_rows(w, &[1])?;
                g.add_row(x, b)
            }),
            ("sq_dist", |g, x, w| g.sq_dist(x, w)),
            ("sq_dist_self", |g, x, _| g.sq_dist(x, x)),
            ("gauss_mix", |g, x, w| {
                let d = g.sq_dist(x, w)?;
                g.gauss_mix(d, &[0.5, 1.0, 2.0])
            }),
            ("gauss_mix_uneven", |g, x, w| {
                let d = g.sq_dist(x, w)?;
                g.gauss_mix(d, &[0.3, 1.0, 2.5])
            }),
            ("pair_log_lik", |g, x, _| {
                let s = g.sigmoid(x)?;
                let pos = Tensor2::from_raw(3, 4, vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
                let neg = Tensor2::from_raw(3, 4, vec![0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
                g.pair_log_lik(s, pos, neg)
            }),
        ];

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (name, build) in cases {
            for _ in 0..100 {
                let x0 = random(&mut rng, 3, 4, -1.0, 1.0);
                // Keep away from kinks (relu/abs at 0, clamp bounds).
                if x0.data().iter().any(|v| v.abs() < 1e-3 || (v.abs() - 0.5).abs() < 1e-3) {
                    continue;
                }
                let w0 = random(&mut rng, 3, 4, -1.0, 1.0);
                let mix = random(&mut rng, 1, 1, 0.5, 1.5).item();
                let eval = |x: &Tensor2, grad: bool| -> (f64, Option<Tensor2>) {
                    let mut g = Graph::new();
                    let xv = g.leaf(x.clone());
                    let wv = g.leaf(w0.clone());
                    let y = build(&mut g, xv, wv).unwrap();
                    // Weight outputs so each element's gradient differs.
                    let (r, c) = g.value(y).shape();
                    let weights = Tensor2::new(
                        r,
                        c,
                        (0..r * c).map(|k| mix + 0.1 * k as f64).collect(),
                    )
                    .unwrap();
                    let wt = g.leaf(weights);
                    let p = g.mul(y, wt).unwrap();
                    let l = g.sum(p).unwrap();
                    let value = g.value(l).item();
                    let grad = grad.then(|| g.backward(l).unwrap().get(xv).unwrap().clone());
                    (value, grad)
                };
                let analytic = eval(&x0, true).1.unwrap();
                let numeric = finite_difference(&x0, 1e-5, |x| eval(x, false).0);
                let err = max_relative_error(&analytic, &numeric, 1e-3);
                assert!(err < 1e-4, "{name}: relative error {err}");
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random(&mut rng, 5, 4, -1.0, 1.0);
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let d = g.sq_dist(x, x).unwrap();
            let k = g.gauss_mix(d, &[0.25, 1.0]).unwrap();
            let s = g.softmax_rows(k).unwrap();
            let l = g.sum(s).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(k).clone(), grads.get(x).unwrap().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn self_distance_is_symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = random(&mut rng, 7, 5, -3.0, 3.0);
        let mut g = Graph::new();
        let x = g.leaf(x0);
        let d = g.sq_dist(x, x).unwrap();
        let v = g.value(d);
        for i in 0..7 {
            assert_eq!(v.get(i, i), 0.0);
            for j in 0..7 {
                assert_eq!(v.get(i, j), v.get(j, i));
            }
        }
    }
}
