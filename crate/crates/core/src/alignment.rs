//! Kernel discrepancies between source and target embeddings: global MMD,
//! weighted class-conditional MMD and the contrastive class discrepancy.
//!
//! Every kernel is a mean of Gaussians `exp(-d² / (m h))` over multipliers
//! `m`. The base bandwidth `h` is the median squared distance between
//! distinct points of the pooled batch, computed once per call. By default
//! it is held constant for differentiation; with `bandwidth_grad` the
//! gradient also flows through the distance entries the median selects,
//! which makes every loss invariant to a common rescaling of the batch.

use serde::{Deserialize, Serialize};

use crate::diffcore::{sq_dist_values, DiffError, Graph, Tensor2, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AlignError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{0}: empty batch")]
    Empty(&'static str),
    #[error("invalid kernel spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Input(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub multipliers: Vec<f64>,
    /// Overrides the median heuristic when set.
    #[serde(default)]
    pub fixed_bandwidth: Option<f64>,
    /// Differentiate through the median bandwidth.
    #[serde(default)]
    pub bandwidth_grad: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            fixed_bandwidth: None,
            bandwidth_grad: false,
        }
    }
}

impl KernelSpec {
    pub fn new(multipliers: Vec<f64>) -> Result<Self, AlignError> {
        let spec = KernelSpec {
            multipliers,
            fixed_bandwidth: None,
            bandwidth_grad: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bandwidth(mut self, h: f64) -> Result<Self, AlignError> {
        self.fixed_bandwidth = Some(h);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.multipliers.is_empty() {
            return Err(AlignError::Spec("at least one multiplier is required".into()));
        }
        if self.multipliers.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(AlignError::Spec(format!("multipliers must be positive: {:?}", self.multipliers)));
        }
        if let Some(h) = self.fixed_bandwidth {
            if !h.is_finite() || h <= 0.0 {
                return Err(AlignError::Spec(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }

    fn inv_widths(&self, h: f64) -> Vec<f64> {
        self.multipliers.iter().map(|m| 1.0 / (m * h)).collect()
    }

    fn bandwidth(&self, a: &Tensor2, b: &Tensor2) -> f64 {
        self.fixed_bandwidth.unwrap_or_else(|| median_bandwidth(a, b))
    }
}

/// Median squared distance over distinct pairs of the pooled rows of `a`
/// and `b`. Falls back to 1 when the median is zero or there are no pairs.
pub fn median_bandwidth(a: &Tensor2, b: &Tensor2) -> f64 {
    let mut rows = a.data().to_vec();
    rows.extend_from_slice(b.data());
    let n = a.rows() + b.rows();
    if n < 2 {
        return 1.0;
    }
    let pooled = Tensor2::new(n, a.cols(), rows).expect("finite inputs");
    let d = sq_dist_values(&pooled, &pooled, true);
    median_or_one((0..n).flat_map(|i| d.row(i)[i + 1..].to_vec()).collect())
}

/// Location of one distance entry: block (0 = ss, 1 = tt, 2 = st), row, column.
type Pick = (usize, usize, usize);

/// Same median from already computed `D_ss`, `D_tt` and `D_st` blocks,
/// with the entries it is taken from. No entries are returned when the
/// median falls back to 1.
fn median_from_blocks(ss: &Tensor2, tt: &Tensor2, st: &Tensor2) -> (f64, Vec<Pick>) {
    let mut all = Vec::with_capacity(ss.len() / 2 + tt.len() / 2 + st.len());
    for d in [ss, tt] {
        for i in 0..d.rows() {
            all.extend_from_slice(&d.row(i)[i + 1..]);
        }
    }
    all.extend_from_slice(st.data());
    let Some((median, parts)) = median_parts(all) else {
        return (1.0, vec![]);
    };
    let find = |v: f64| -> Pick {
        for (b, d) in [ss, tt].into_iter().enumerate() {
            for i in 0..d.rows() {
                if let Some(j) = d.row(i)[i + 1..].iter().position(|&x| x == v) {
                    return (b, i, i + 1 + j);
                }
            }
        }
        let k = st.data().iter().position(|&x| x == v).expect("median is a block entry");
        (2, k / st.cols(), k % st.cols())
    };
    (median, parts.into_iter().map(find).collect())
}

fn median_or_one(upper: Vec<f64>) -> f64 {
    median_parts(upper).map_or(1.0, |(m, _)| m)
}

/// Positive median and the one or two values it averages.
fn median_parts(mut upper: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let len = upper.len();
    if len == 0 {
        return None;
    }
    let mid = len / 2;
    let (_, &mut hi, _) = upper.select_nth_unstable_by(mid, f64::total_cmp);
    let (median, parts) = if len % 2 == 1 {
        (hi, vec![hi])
    } else {
        let lo = upper[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0.5 * (lo + hi), vec![lo, hi])
    };
    (median > 0.0).then_some((median, parts))
}

fn check_pair(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<(), AlignError> {
    let (va, vb) = (g.value(a), g.value(b));
    if va.is_empty() || vb.is_empty() {
        return Err(AlignError::Empty(op));
    }
    if va.cols() != vb.cols() {
        return Err(DiffError::Shape {
            op,
            left: va.shape(),
            right: vb.shape(),
        }
        .into());
    }
    Ok(())
}

fn kernel(g: &mut Graph, a: Var, b: Var, inv: &[f64]) -> Result<Var, AlignError> {
    let d = g.sq_dist(a, b)?;
    Ok(g.gauss_mix(d, inv)?)
}

/// Kernel matrix `K[i, j] = k(a_i, b_j)`.
pub fn gram(g: &mut Graph, a: Var, b: Var, spec: &KernelSpec) -> Result<Var, AlignError> {
    spec.validate()?;
    check_pair(g, a, b, "gram")?;
    let h = spec.bandwidth(g.value(a), g.value(b));
    kernel(g, a, b, &spec.inv_widths(h))
}

struct Kernels {
    ss: Var,
    tt: Var,
    st: Var,
}

fn kernels(g: &mut Graph, zs: Var, zt: Var, spec: &KernelSpec, op: &'static str) -> Result<Kernels, AlignError> {
    spec.validate()?;
    check_pair(g, zs, zt, op)?;
    let dss = g.sq_dist(zs, zs)?;
    let dtt = g.sq_dist(zt, zt)?;
    let dst = g.sq_dist(zs, zt)?;
    let (h, parts) = match spec.fixed_bandwidth {
        Some(h) => (h, vec![]),
        None => median_from_blocks(g.value(dss), g.value(dtt), g.value(dst)),
    };
    if spec.bandwidth_grad && !parts.is_empty() {
        let blocks = [dss, dtt, dst];
        let mut hv = None;
        for &(b, r, c) in &parts {
            let e = g.entry(blocks[b], r, c)?;
            hv = Some(match hv {
                None => e,
                Some(acc) => g.add(acc, e)?,
            });
        }
        let hv = g.scale(hv.expect("median entries"), 1.0 / parts.len() as f64)?;
        let inv = spec.inv_widths(1.0);
        let mut mix = |d: Var| -> Result<Var, AlignError> {
            let rel = g.div_scalar(d, hv)?;
            Ok(g.gauss_mix(rel, &inv)?)
        };
        return Ok(Kernels {
            ss: mix(dss)?,
            tt: mix(dtt)?,
            st: mix(dst)?,
        });
    }
    let inv = spec.inv_widths(h);
    Ok(Kernels {
        ss: g.gauss_mix(dss, &inv)?,
        tt: g.gauss_mix(dtt, &inv)?,
        st: g.gauss_mix(dst, &inv)?,
    })
}

/// Squared MMD, biased estimator: `mean K_ss + mean K_tt - 2 mean K_st`.
pub fn mmd2(g: &mut Graph, zs: Var, zt: Var, spec: &KernelSpec) -> Result<Var, AlignError> {
    let k = kernels(g, zs, zt, spec, "mmd2")?;
    let ss = g.mean(k.ss)?;
    let tt = g.mean(k.tt)?;
    let st = g.mean(k.st)?;
    let within = g.add(ss, tt)?;
    let cross = g.scale(st, 2.0)?;
    Ok(g.sub(within, cross)?)
}

/// Per-sample class weights for source (`n × C`) and target (`m × C`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub w_s: Tensor2,
    pub w_t: Tensor2,
}

impl ClassWeights {
    pub fn classes(&self) -> usize {
        self.w_s.cols()
    }

    /// Classes with nonzero weight mass in both domains.
    pub fn included(&self) -> Vec<bool> {
        let mass = |w: &Tensor2, c: usize| (0..w.rows()).any(|i| w.get(i, c) > 0.0);
        (0..self.classes()).map(|c| mass(&self.w_s, c) && mass(&self.w_t, c)).collect()
    }
}

/// Source weights are `1/|class|` on labeled members; target weights are
/// the probabilities of confident samples, column-normalized.
pub fn class_weights(y_s: &[usize], p_t: &Tensor2, conf_threshold: f64) -> Result<ClassWeights, AlignError> {
    let classes = p_t.cols();
    if classes == 0 {
        return Err(AlignError::Input("target probabilities have no classes".into()));
    }
    if let Some(&l) = y_s.iter().find(|&&l| l >= classes) {
        return Err(AlignError::Input(format!("source label {l} out of range for {classes} classes")));
    }
    for r in 0..p_t.rows() {
        let s: f64 = p_t.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-6 || p_t.row(r).iter().any(|&p| p < 0.0) {
            return Err(AlignError::Input(format!("target probability row {r} sums to {s}")));
        }
    }

    let n = y_s.len();
    let mut counts = vec![0usize; classes];
    for &l in y_s {
        counts[l] += 1;
    }
    let mut ws = vec![0.0; n * classes];
    for (i, &l) in y_s.iter().enumerate() {
        ws[i * classes + l] = 1.0 / counts[l] as f64;
    }

    let m = p_t.rows();
    let mut wt = vec![0.0; m * classes];
    for j in 0..m {
        let row = p_t.row(j);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top >= conf_threshold {
            wt[j * classes..(j + 1) * classes].copy_from_slice(row);
        }
    }
    for c in 0..classes {
        let total: f64 = (0..m).map(|j| wt[j * classes + c]).sum();
        if total > 0.0 {
            for j in 0..m {
                wt[j * classes + c] /= total;
            }
        }
    }
    Ok(ClassWeights {
        w_s: Tensor2::new(n, classes, ws)?,
        w_t: Tensor2::new(m, classes, wt)?,
    })
}

/// `A = W_sᵀK_ssW_s`, `B = W_tᵀK_ttW_t`, `X = W_sᵀK_stW_t`, so that the
/// weighted discrepancy between source class `c` and target class `c'` is
/// `A[c,c] + B[c',c'] - 2 X[c,c']`.
struct ClassBlocks {
    a: Var,
    b: Var,
    x: Var,
    included: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
fn class_blocks(
    g: &mut Graph,
    zs: Var,
    y_s: &[usize],
    zt: Var,
    p_t: &Tensor2,
    spec: &KernelSpec,
    conf_threshold: f64,
    op: &'static str,
) -> Result<ClassBlocks, AlignError> {
    if g.value(zs).rows() != y_s.len() {
        return Err(AlignError::Input(format!(
            "{op}: {} source embeddings but {} labels",
            g.value(zs).rows(),
            y_s.len()
        )));
    }
    if g.value(zt).rows() != p_t.rows() {
        return Err(AlignError::Input(format!(
            "{op}: {} target embeddings but {} probability rows",
            g.value(zt).rows(),
            p_t.rows()
        )));
    }
    let weights = class_weights(y_s, p_t, conf_threshold)?;
    let k = kernels(g, zs, zt, spec, op)?;
    let ws = g.leaf(weights.w_s.clone());
    let wt = g.leaf(weights.w_t.clone());
    let wst = g.transpose(ws)?;
    let wtt = g.transpose(wt)?;
    let quad = |g: &mut Graph, left: Var, k: Var, right: Var| -> Result<Var, DiffError> {
        let kr = g.matmul(k, right)?;
        g.matmul(left, kr)
    };
    Ok(ClassBlocks {
        a: quad(g, wst, k.ss, ws)?,
        b: quad(g, wtt, k.tt, wt)?,
        x: quad(g, wst, k.st, wt)?,
        included: weights.included(),
    })
}

fn masked_sum(g: &mut Graph, v: Var, mask: Tensor2) -> Result<Var, DiffError> {
    let m = g.leaf(mask);
    let prod = g.mul(v, m)?;
    g.sum(prod)
}

fn masks(included: &[bool]) -> (Tensor2, Tensor2) {
    let c = included.len();
    let mut diag = vec![0.0; c * c];
    let mut off = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            if included[i] && included[j] {
                if i == j {
                    diag[i * c + j] = 1.0;
                } else {
                    off[i * c + j] = 1.0;
                }
            }
        }
    }
    (Tensor2::from_raw(c, c, diag), Tensor2::from_raw(c, c, off))
}

/// Weighted class-conditional MMD averaged over classes present in both
/// domains; 0 when there are none.
#[allow(clippy::too_many_arguments)]
pub fn l_align(
    g: &mut Graph,
    zs: Var,
    y_s: &[usize],
    zt: Var,
    p_t: &Tensor2,
    spec: &KernelSpec,
    conf_threshold: f64,
) -> Result<Var, AlignError> {
    let blocks = class_blocks(g, zs, y_s, zt, p_t, spec, conf_threshold, "l_align")?;
    let count = blocks.included.iter().filter(|&&b| b).count();
    if count == 0 {
        return Ok(g.leaf(Tensor2::scalar(0.0)?));
    }
    let (diag, _) = masks(&blocks.included);
    let within = g.add(blocks.a, blocks.b)?;
    let cross = g.scale(blocks.x, 2.0)?;
    let per_class = g.sub(within, cross)?;
    let total = masked_sum(g, per_class, diag)?;
    Ok(g.scale(total, 1.0 / count as f64)?)
}

/// Mean same-class cross-domain discrepancy minus the mean discrepancy
/// between different classes; 0 when fewer than two classes qualify.
#[allow(clippy::too_many_arguments)]
pub fn l_contrast(
    g: &mut Graph,
    zs: Var,
    y_s: &[usize],
    zt: Var,
    p_t: &Tensor2,
    spec: &KernelSpec,
    conf_threshold: f64,
) -> Result<Var, AlignError> {
    let blocks = class_blocks(g, zs, y_s, zt, p_t, spec, conf_threshold, "l_contrast")?;
    let count = blocks.included.iter().filter(|&&b| b).count();
    if count < 2 {
        return Ok(g.leaf(Tensor2::scalar(0.0)?));
    }
    let cf = count as f64;
    let (diag, off) = masks(&blocks.included);
    let a_diag = masked_sum(g, blocks.a, diag.clone())?;
    let b_diag = masked_sum(g, blocks.b, diag.clone())?;
    let x_diag = masked_sum(g, blocks.x, diag)?;
    let x_off = masked_sum(g, blocks.x, off)?;

    // Σ_c D_cc
    let ab = g.add(a_diag, b_diag)?;
    let x2 = g.scale(x_diag, 2.0)?;
    let same = g.sub(ab, x2)?;
    // Σ_{c≠c'} D_cc' = (C'-1)(Σ A_cc + Σ B_cc) - 2 Σ_{c≠c'} X_cc'
    let ab_rep = g.scale(ab, cf - 1.0)?;
    let xo2 = g.scale(x_off, 2.0)?;
    let diff = g.sub(ab_rep, xo2)?;

    let same_mean = g.scale(same, 1.0 / cf)?;
    let diff_mean = g.scale(diff, 1.0 / (cf * (cf - 1.0)))?;
    Ok(g.sub(same_mean, diff_mean)?)
}
