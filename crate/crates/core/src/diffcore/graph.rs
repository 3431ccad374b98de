use super::tensor::gemm;
use super::{DiffError, Tensor2};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, Var),
    Entry(Var, usize, usize),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    Log(Var),
    /// Weighted Bernoulli log-likelihood; keeps both weight masks.
    PairLogLik(Var, Tensor2, Tensor2),
    Exp(Var),
    Neg(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    L2NormRows(Var),
    NormalizeRows(Var),
    Transpose(Var),
    ConcatRows(Var, Var),
    SelectRows(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Grl(Var, f64),
    SqDist(Var, Var),
    /// Keeps `dK/dD` from the forward pass.
    GaussMix(Var, Tensor2),
}

struct Node {
    op: Op,
    value: Tensor2,
}

/// Append-only tape of tensor operations.
///
/// Build a fresh graph per optimization step: register parameters with
/// [`Graph::leaf`], compose operations, then call [`Graph::backward`] on a
/// 1×1 loss node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient accumulators produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not influence
    /// the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes ownership of a gradient, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor2, b: &Tensor2) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor2, b: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor2::from_raw(a.rows(), a.cols(), data)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor2) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(DiffError::Shape {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = gemm(va, false, vb, false).check_finite("matmul")?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y).check_finite("add")?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a 1×cols row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(DiffError::Shape {
                op: "add_row",
                left: va.shape(),
                right: vr.shape(),
            });
        }
        let cols = va.cols();
        let bias = vr.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias[i % cols])
            .collect();
        let out = Tensor2::from_raw(va.rows(), cols, data).check_finite("add_row")?;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y).check_finite("sub")?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y).check_finite("mul")?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x * s).check_finite("scale")?;
        Ok(self.push(Op::Scale(a, s), out))
    }

    /// Divides every element of `a` by the single element of `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        let vs = self.value(s);
        if vs.shape() != (1, 1) {
            return Err(DiffError::Shape {
                op: "div_scalar",
                left: self.value(a).shape(),
                right: vs.shape(),
            });
        }
        let d = vs.item();
        let out = self.value(a).map(|x| x / d).check_finite("div_scalar")?;
        Ok(self.push(Op::DivScalar(a, s), out))
    }

    /// Element `(r, c)` of `a` as a 1×1 node.
    pub fn entry(&mut self, a: Var, r: usize, c: usize) -> Result<Var, DiffError> {
        let va = self.value(a);
        if r >= va.rows() || c >= va.cols() {
            return Err(DiffError::BadArgument {
                op: "entry",
                detail: format!("index ({r}, {c}) outside {:?}", va.shape()),
            });
        }
        let out = Tensor2::filled(1, 1, va.get(r, c));
        Ok(self.push(Op::Entry(a, r, c), out))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x + s).check_finite("add_scalar")?;
        Ok(self.push(Op::AddScalar(a), out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push(Op::Relu(a), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        Ok(self.push(Op::Sigmoid(a), out))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        Ok(self.push(Op::Softplus(a), out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor2::from_raw(va.rows(), cols, data).check_finite("softmax_rows")?;
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    /// Natural log; every entry must be strictly positive (clamp first).
    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        if let Some(index) = va.data().iter().position(|&x| x <= 0.0) {
            return Err(DiffError::LogDomain {
                index,
                value: va.data()[index],
            });
        }
        let out = va.map(f64::ln).check_finite("log")?;
        Ok(self.push(Op::Log(a), out))
    }

    /// Scalar `sum_ij pos_ij ln s_ij + neg_ij ln(1 - s_ij)` for `s` strictly
    /// inside (0, 1). Entries with zero weight never touch the logarithm.
    pub fn pair_log_lik(&mut self, s: Var, pos: Tensor2, neg: Tensor2) -> Result<Var, DiffError> {
        let vs = self.value(s);
        if pos.shape() != vs.shape() || neg.shape() != vs.shape() {
            return Err(DiffError::Shape {
                op: "pair_log_lik",
                left: vs.shape(),
                right: pos.shape(),
            });
        }
        let mut total = 0.0;
        for (i, ((&x, &wp), &wn)) in vs.data().iter().zip(pos.data()).zip(neg.data()).enumerate() {
            if wp != 0.0 {
                if x <= 0.0 {
                    return Err(DiffError::LogDomain { index: i, value: x });
                }
                total += wp * x.ln();
            }
            if wn != 0.0 {
                if x >= 1.0 {
                    return Err(DiffError::LogDomain { index: i, value: 1.0 - x });
                }
                total += wn * (1.0 - x).ln();
            }
        }
        let out = Tensor2::scalar(total)?;
        Ok(self.push(Op::PairLogLik(s, pos, neg), out))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(f64::exp).check_finite("exp")?;
        Ok(self.push(Op::Exp(a), out))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| -x);
        Ok(self.push(Op::Neg(a), out))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(f64::abs);
        Ok(self.push(Op::Abs(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = Tensor2::scalar(self.value(a).sum())?;
        Ok(self.push(Op::Sum(a), out))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(DiffError::Empty { op: "mean" });
        }
        let out = Tensor2::scalar(va.sum() / va.len() as f64)?;
        Ok(self.push(Op::Mean(a), out))
    }

    /// Euclidean norm of each row, as a rows×1 column.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        let data = (0..va.rows())
            .map(|r| va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Tensor2::from_raw(va.rows(), 1, data).check_finite("l2_norm_rows")?;
        Ok(self.push(Op::L2NormRows(a), out))
    }

    /// Scales each row to unit Euclidean norm. All-zero rows stay zero and
    /// pass no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        let out = Tensor2::from_raw(va.rows(), cols, data).check_finite("normalize_rows")?;
        Ok(self.push(Op::NormalizeRows(a), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).transpose();
        Ok(self.push(Op::Transpose(a), out))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(DiffError::Shape {
                op: "concat_rows",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let out = Tensor2::from_raw(va.rows() + vb.rows(), va.cols(), data);
        Ok(self.push(Op::ConcatRows(a, b), out))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(DiffError::Shape {
                op: "select_rows",
                left: va.shape(),
                right: (bad, 0),
            });
        }
        let out = va.select_rows(idx);
        Ok(self.push(Op::SelectRows(a, idx.to_vec()), out))
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, DiffError> {
        assert!(lo <= hi, "clamp bounds out of order");
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        Ok(self.push(Op::Clamp(a, lo, hi), out))
    }

    /// Gradient reversal: identity forward, `-coeff` times the incoming
    /// gradient backward.
    pub fn grl(&mut self, a: Var, coeff: f64) -> Result<Var, DiffError> {
        if !coeff.is_finite() || coeff < 0.0 {
            return Err(DiffError::BadArgument {
                op: "grl",
                detail: format!("coefficient must be finite and >= 0, got {coeff}"),
            });
        }
        let out = self.value(a).clone();
        Ok(self.push(Op::Grl(a, coeff), out))
    }

    /// Pairwise squared Euclidean distances, `D[i,j] = |a_i - b_j|^2`.
    ///
    /// When `a` and `b` are the same node the result is exactly symmetric
    /// with a zero diagonal.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(DiffError::Shape {
                op: "sq_dist",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = sq_dist_values(va, vb, a == b);
        Ok(self.push(Op::SqDist(a, b), out))
    }

    /// Mixture of Gaussian kernels applied to squared distances:
    /// `K = mean_m exp(-D * w_m)` for inverse widths `w_m`.
    pub fn gauss_mix(&mut self, d: Var, inv_widths: &[f64]) -> Result<Var, DiffError> {
        if inv_widths.is_empty() || inv_widths.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(DiffError::BadArgument {
                op: "gauss_mix",
                detail: format!("inverse widths must be positive and finite: {inv_widths:?}"),
            });
        }
        let vd = self.value(d);
        let mut sorted = inv_widths.to_vec();
        sorted.sort_by(f64::total_cmp);
        // Widths spaced by exact factors of two reuse one exponential.
        let doubling = sorted.windows(2).all(|p| p[1] == 2.0 * p[0]);
        let m = sorted.len() as f64;
        let mut value = vec![0.0; vd.len()];
        let mut slope = vec![0.0; vd.len()];
        for ((x, v), s) in vd.data().iter().zip(&mut value).zip(&mut slope) {
            let (mut acc, mut ds) = (0.0, 0.0);
            let mut e = (-x * sorted[0]).exp();
            for (i, w) in sorted.iter().enumerate() {
                if i > 0 {
                    e = if doubling { e * e } else { (-x * w).exp() };
                }
                acc += e;
                ds -= w * e;
            }
            *v = acc / m;
            *s = ds / m;
        }
        let (r, c) = vd.shape();
        let out = Tensor2::from_raw(r, c, value).check_finite("gauss_mix")?;
        Ok(self.push(Op::GaussMix(d, Tensor2::from_raw(r, c, slope)), out))
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DiffError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Tensor2, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, gemm(g, false, vb, true));
                accumulate(grads, *b, gemm(va, true, g, false));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let cols = g.cols();
                let mut bias = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, v) in bias.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *row, Tensor2::from_raw(1, cols, bias));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_map(g, vb, |x, y| x * y));
                accumulate(grads, *b, zip_map(g, va, |x, y| x * y));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::DivScalar(a, s) => {
                let d = self.value(*s).item();
                let ds = -g.data().iter().zip(out.data()).map(|(x, y)| x * y).sum::<f64>() / d;
                accumulate(grads, *a, g.map(|x| x / d));
                accumulate(grads, *s, Tensor2::filled(1, 1, ds));
            }
            Op::Entry(a, r, c) => {
                let (rows, cols) = self.value(*a).shape();
                let mut t = Tensor2::zeros(rows, cols);
                t.data_mut()[r * cols + c] = g.item();
                accumulate(grads, *a, t);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, zip_map(g, va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y * (1.0 - y))),
            Op::Softplus(a) => accumulate(
                grads,
                *a,
                zip_map(g, self.value(*a), |x, v| {
                    let s = if v >= 0.0 { 1.0 / (1.0 + (-v).exp()) } else { v.exp() / (1.0 + v.exp()) };
                    x * s
                }),
            ),
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut data = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let (yr, gr) = (out.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        data[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, Tensor2::from_raw(out.rows(), cols, data));
            }
            Op::Log(a) => accumulate(grads, *a, zip_map(g, self.value(*a), |x, y| x / y)),
            Op::PairLogLik(s, pos, neg) => {
                let scale = g.item();
                let vs = self.value(*s);
                let data = vs
                    .data()
                    .iter()
                    .zip(pos.data())
                    .zip(neg.data())
                    .map(|((&x, &wp), &wn)| {
                        let mut d = 0.0;
                        if wp != 0.0 {
                            d += wp / x;
                        }
                        if wn != 0.0 {
                            d -= wn / (1.0 - x);
                        }
                        scale * d
                    })
                    .collect();
                accumulate(grads, *s, Tensor2::from_raw(vs.rows(), vs.cols(), data));
            }
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y)),
            Op::Neg(a) => accumulate(grads, *a, g.map(|x| -x)),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                zip_map(g, self.value(*a), |x, y| {
                    if y > 0.0 {
                        x
                    } else if y < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, Tensor2::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let (r, c) = va.shape();
                accumulate(grads, *a, Tensor2::filled(r, c, g.item() / va.len() as f64));
            }
            Op::L2NormRows(a) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut data = vec![0.0; va.len()];
                for r in 0..va.rows() {
                    let norm = out.get(r, 0);
                    if norm > 0.0 {
                        let scale = g.get(r, 0) / norm;
                        for c in 0..cols {
                            data[r * cols + c] = scale * va.get(r, c);
                        }
                    }
                }
                accumulate(grads, *a, Tensor2::from_raw(va.rows(), cols, data));
            }
            Op::NormalizeRows(a) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut data = vec![0.0; va.len()];
                for r in 0..va.rows() {
                    let norm = va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        let (yr, gr) = (out.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for c in 0..cols {
                            data[r * cols + c] = (gr[c] - yr[c] * dot) / norm;
                        }
                    }
                }
                accumulate(grads, *a, Tensor2::from_raw(va.rows(), cols, data));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                let cols = g.cols();
                let top = Tensor2::from_raw(split / cols.max(1), cols, g.data()[..split].to_vec());
                let rest = g.data()[split..].to_vec();
                let bottom = Tensor2::from_raw(rest.len() / cols.max(1), cols, rest);
                accumulate(grads, *a, top);
                accumulate(grads, *b, bottom);
            }
            Op::SelectRows(a, idx) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut data = vec![0.0; va.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (acc, v) in data[i * cols..(i + 1) * cols].iter_mut().zip(g.row(k)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *a, Tensor2::from_raw(va.rows(), cols, data));
            }
            Op::Clamp(a, lo, hi) => accumulate(
                grads,
                *a,
                zip_map(g, self.value(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }),
            ),
            Op::Grl(a, coeff) => accumulate(grads, *a, g.map(|x| -coeff * x)),
            Op::SqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                // dD/da_i = 2 (rowsum(G)_i a_i - (G b)_i)
                // dD/db_j = 2 (colsum(G)_j b_j - (G^T a)_j)
                let gb = gemm(g, false, vb, false);
                let gta = gemm(g, true, va, false);
                let mut da = vec![0.0; va.len()];
                let d = va.cols();
                for i in 0..va.rows() {
                    let rs: f64 = g.row(i).iter().sum();
                    for k in 0..d {
                        da[i * d + k] = 2.0 * (rs * va.get(i, k) - gb.get(i, k));
                    }
                }
                let mut colsum = vec![0.0; vb.rows()];
                for i in 0..g.rows() {
                    for (acc, v) in colsum.iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                let mut db = vec![0.0; vb.len()];
                for j in 0..vb.rows() {
                    for k in 0..d {
                        db[j * d + k] = 2.0 * (colsum[j] * vb.get(j, k) - gta.get(j, k));
                    }
                }
                accumulate(grads, *a, Tensor2::from_raw(va.rows(), d, da));
                accumulate(grads, *b, Tensor2::from_raw(vb.rows(), d, db));
            }
            Op::GaussMix(d, slope) => accumulate(grads, *d, zip_map(g, slope, |x, s| x * s)),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Pairwise squared distances computed through the Gram identity and
/// clamped at zero.
pub(crate) fn sq_dist_values(a: &Tensor2, b: &Tensor2, same: bool) -> Tensor2 {
    let norms = |t: &Tensor2| -> Vec<f64> {
        (0..t.rows())
            .map(|r| t.row(r).iter().map(|x| x * x).sum())
            .collect()
    };
    let na = norms(a);
    let nb = if same { na.clone() } else { norms(b) };
    let cross = gemm(a, false, b, true);
    let (n, m) = (a.rows(), b.rows());
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            data[i * m + j] = (na[i] + nb[j] - 2.0 * cross.get(i, j)).max(0.0);
        }
    }
    if same {
        for i in 0..n {
            data[i * m + i] = 0.0;
            for j in (i + 1)..m {
                data[j * m + i] = data[i * m + j];
            }
        }
    }
    Tensor2::from_raw(n, m, data)
}
