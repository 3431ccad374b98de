//! Classifier and adversarial losses.

use crate::diffcore::{DiffError, Graph, Tensor2, Var, LOG_EPS};

/// One unordered pair of batch members and whether they share a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

/// Members taking part in the relation loss: every source sample, then the
/// target samples whose top pseudo-label probability clears the threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSet {
    pub sources: usize,
    /// Batch positions of the eligible target samples.
    pub targets: Vec<usize>,
    /// Labels of all members, sources first.
    pub labels: Vec<usize>,
}

impl PairSet {
    pub fn members(&self) -> usize {
        self.labels.len()
    }

    /// All unordered pairs among members, in row-major upper-triangle order.
    pub fn pairs(&self) -> Vec<Pair> {
        let n = self.members();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(Pair {
                    i,
                    j,
                    same: self.labels[i] == self.labels[j],
                });
            }
        }
        out
    }

    /// Pairs with at least one target member.
    pub fn target_pairs(&self) -> Vec<Pair> {
        self.pairs().into_iter().filter(|p| p.j >= self.sources).collect()
    }
}

/// Top class of each confident target row, as `(position, class)`.
pub fn confident_targets(p_t: &Tensor2, conf_threshold: f64) -> Vec<(usize, usize)> {
    (0..p_t.rows())
        .filter_map(|j| {
            let row = p_t.row(j);
            let (c, &top) = row
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |best, (c, v)| if *v > *best.1 { (c, v) } else { best });
            (top >= conf_threshold).then_some((j, c))
        })
        .collect()
}

/// Source samples keep their labels; confident target samples contribute
/// their pseudo-labels. Pass `None` for source-only pairs.
pub fn build_pairs(y_s: &[usize], p_t: Option<&Tensor2>, conf_threshold: f64) -> PairSet {
    let confident = p_t.map(|p| confident_targets(p, conf_threshold)).unwrap_or_default();
    let mut labels = y_s.to_vec();
    labels.extend(confident.iter().map(|&(_, c)| c));
    PairSet {
        sources: y_s.len(),
        targets: confident.iter().map(|&(j, _)| j).collect(),
        labels,
    }
}

/// Relation loss over `pairs` of the relation matrix `phi`: with
/// `s = clamp((φ + 1)/2, ε, 1 - ε)`, the mean of
/// `-[μ ln s + (1 - μ) ln(1 - s)]`.
pub fn l_ral(g: &mut Graph, phi: Var, pairs: &[Pair]) -> Result<Var, DiffError> {
    if pairs.is_empty() {
        return Err(DiffError::Empty { op: "l_ral" });
    }
    let (n, m) = g.value(phi).shape();
    let mut same = vec![0.0; n * m];
    let mut diff = vec![0.0; n * m];
    for p in pairs {
        if p.i >= n || p.j >= m {
            return Err(DiffError::BadArgument {
                op: "l_ral",
                detail: format!("pair ({}, {}) outside {n}x{m} relation matrix", p.i, p.j),
            });
        }
        let slot = if p.same { &mut same } else { &mut diff };
        slot[p.i * m + p.j] += 1.0;
    }
    let half = g.scale(phi, 0.5)?;
    let shifted = g.add_scalar(half, 0.5)?;
    let s = g.clamp(shifted, LOG_EPS, 1.0 - LOG_EPS)?;
    let ll = g.pair_log_lik(s, Tensor2::new(n, m, same)?, Tensor2::new(n, m, diff)?)?;
    g.scale(ll, -1.0 / pairs.len() as f64)
}

/// Mean cross-entropy of `softmax(q)` against `labels`.
pub fn cross_entropy(g: &mut Graph, q: Var, labels: &[usize]) -> Result<Var, DiffError> {
    let (n, c) = g.value(q).shape();
    if n == 0 {
        return Err(DiffError::Empty { op: "cross_entropy" });
    }
    if labels.len() != n || labels.iter().any(|&l| l >= c) {
        return Err(DiffError::BadArgument {
            op: "cross_entropy",
            detail: format!("{} labels for {n} rows of {c} classes", labels.len()),
        });
    }
    let mut onehot = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let p = g.softmax_rows(q)?;
    let pc = g.clamp(p, LOG_EPS, 1.0)?;
    let lp = g.log(pc)?;
    let mask = g.leaf(Tensor2::new(n, c, onehot)?);
    let picked = g.mul(lp, mask)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0 / n as f64)
}

/// Domain loss `-mean ln d_s - mean ln(1 - d_t)` with probabilities
/// clamped to `[ε, 1 - ε]`.
pub fn l_adv(g: &mut Graph, d_s: Var, d_t: Var) -> Result<Var, DiffError> {
    if g.value(d_s).is_empty() || g.value(d_t).is_empty() {
        return Err(DiffError::Empty { op: "l_adv" });
    }
    let cs = g.clamp(d_s, LOG_EPS, 1.0 - LOG_EPS)?;
    let ls = g.log(cs)?;
    let ms = g.mean(ls)?;
    let ct = g.clamp(d_t, LOG_EPS, 1.0 - LOG_EPS)?;
    let nt = g.neg(ct)?;
    let one_minus = g.add_scalar(nt, 1.0)?;
    let lt = g.log(one_minus)?;
    let mt = g.mean(lt)?;
    let sum = g.add(ms, mt)?;
    g.neg(sum)
}

/// The same domain loss from discriminator logits `a`, with
/// `d = sigmoid(a)`: `mean softplus(-a_s) + mean softplus(a_t)`. Agrees
/// with [`l_adv`] wherever `d` lies inside the clamp range and keeps a
/// gradient outside it.
pub fn l_adv_logits(g: &mut Graph, a_s: Var, a_t: Var) -> Result<Var, DiffError> {
    if g.value(a_s).is_empty() || g.value(a_t).is_empty() {
        return Err(DiffError::Empty { op: "l_adv" });
    }
    let ns = g.neg(a_s)?;
    let ps = g.softplus(ns)?;
    let ms = g.mean(ps)?;
    let pt = g.softplus(a_t)?;
    let mt = g.mean(pt)?;
    g.add(ms, mt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ral_of(phi: f64, same: bool) -> f64 {
        let mut g = Graph::new();
        let p = g.leaf(Tensor2::from_rows(&[&[1.0, phi], &[phi, 1.0]]).unwrap());
        let l = l_ral(&mut g, p, &[Pair { i: 0, j: 1, same }]).unwrap();
        g.value(l).item()
    }

    #[test]
    fn ral_examples() {
        assert!((ral_of(1.0, true) - 1e-7).abs() < 1e-12);
        assert!((ral_of(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ral_of(0.0, false) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ral_of(-1.0, true) - 16.118_095_650_958_32).abs() < 1e-9);
        let mut g = Graph::new();
        let p = g.leaf(Tensor2::identity(2));
        assert!(matches!(l_ral(&mut g, p, &[]), Err(DiffError::Empty { .. })));
    }

    #[test]
    fn pair_enumeration() {
        let set = build_pairs(&[0, 0, 1], None, 0.9);
        let pairs = set.pairs();
        assert_eq!(
            pairs,
            vec![
                Pair { i: 0, j: 1, same: true },
                Pair { i: 0, j: 2, same: false },
                Pair { i: 1, j: 2, same: false },
            ]
        );
        let p = Tensor2::from_rows(&[&[0.5, 0.5], &[0.6, 0.4]]).unwrap();
        let set = build_pairs(&[0, 0, 1], Some(&p), 0.9);
        assert_eq!(set.members(), 3);
        assert!(set.target_pairs().is_empty());

        let p = Tensor2::from_rows(&[&[0.95, 0.05], &[0.2, 0.8]]).unwrap();
        let set = build_pairs(&[1, 0, 1], Some(&p), 0.9);
        assert_eq!(set.members(), 4);
        assert_eq!(set.pairs().len(), 6);
        assert_eq!(set.targets, vec![0]);
        assert_eq!(set.labels, vec![1, 0, 1, 0]);
        assert_eq!(set.target_pairs().len(), 3);
        assert!(build_pairs(&[1], None, 0.9).pairs().is_empty());
    }

    #[test]
    fn adv_examples() {
        let mut g = Graph::new();
        let ds = g.leaf(Tensor2::filled(4, 1, 0.5));
        let dt = g.leaf(Tensor2::filled(3, 1, 0.5));
        let l = l_adv(&mut g, ds, dt).unwrap();
        assert!((g.value(l).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let ds = g.leaf(Tensor2::filled(2, 1, 1.0));
        let dt = g.leaf(Tensor2::filled(2, 1, 0.0));
        let l = l_adv(&mut g, ds, dt).unwrap();
        assert!(g.value(l).item() < 1e-6);

        let e = g.leaf(Tensor2::zeros(0, 1));
        assert!(l_adv(&mut g, e, dt).is_err());
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut g = Graph::new();
        let q = g.leaf(Tensor2::zeros(2, 4));
        let l = cross_entropy(&mut g, q, &[0, 3]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Tensor2::new(6, 3, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let set = build_pairs(&[0, 1, 2, 0, 1, 1], None, 0.9);
        let pairs = set.pairs();
        let ral = |x: &Tensor2, g: &mut Graph| -> (Var, Var) {
            let v = g.leaf(x.clone());
            let n = g.normalize_rows(v).unwrap();
            let nt = g.transpose(n).unwrap();
            let phi = g.matmul(n, nt).unwrap();
            (v, l_ral(g, phi, &pairs).unwrap())
        };
        let mut g = Graph::new();
        let (v, l) = ral(&q, &mut g);
        let grad = g.backward(l).unwrap().take(v).unwrap();
        let fd = finite_difference(&q, 1e-5, |x| {
            let mut g = Graph::new();
            let (_, l) = ral(x, &mut g);
            g.value(l).item()
        });
        assert!(max_relative_error(&grad, &fd, 1e-6) < 1e-3);

        let probs = Tensor2::new(6, 1, (0..6).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
        let other = Tensor2::new(6, 1, (0..6).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
        let adv = |x: &Tensor2, g: &mut Graph| -> (Var, Var) {
            let a = g.leaf(x.clone());
            let b = g.leaf(other.clone());
            (a, l_adv(g, a, b).unwrap())
        };
        let mut g = Graph::new();
        let (v, l) = adv(&probs, &mut g);
        let grad = g.backward(l).unwrap().take(v).unwrap();
        let fd = finite_difference(&probs, 1e-5, |x| {
            let mut g = Graph::new();
            let (_, l) = adv(x, &mut g);
            g.value(l).item()
        });
        assert!(max_relative_error(&grad, &fd, 1e-6) < 1e-3);
    }

    #[test]
    fn logit_form_matches_probabilities_and_keeps_gradient() {
        let logits = Tensor2::from_rows(&[&[-2.0], &[0.3], &[4.0]]).unwrap();
        let sig = logits.map(|x| 1.0 / (1.0 + (-x).exp()));
        let mut g = Graph::new();
        let (ps, pt) = (g.leaf(sig.clone()), g.leaf(sig.map(|p| 1.0 - p)));
        let prob = l_adv(&mut g, ps, pt).unwrap();
        let (a_s, a_t) = (g.leaf(logits.clone()), g.leaf(logits.map(|x| -x)));
        let lg = l_adv_logits(&mut g, a_s, a_t).unwrap();
        assert!((g.value(prob).item() - g.value(lg).item()).abs() < 1e-12);

        // Saturated wrong discriminator: the clamped form is flat, the
        // logit form is not.
        let mut g = Graph::new();
        let a_s = g.leaf(Tensor2::from_rows(&[&[-60.0]]).unwrap());
        let a_t = g.leaf(Tensor2::from_rows(&[&[60.0]]).unwrap());
        let l = l_adv_logits(&mut g, a_s, a_t).unwrap();
        assert!((g.value(l).item() - 120.0).abs() < 1e-9);
        let grads = g.backward(l).unwrap();
        assert!((grads.get(a_s).unwrap().item() + 1.0).abs() < 1e-12);
        assert!((grads.get(a_t).unwrap().item() - 1.0).abs() < 1e-12);
    }
}
