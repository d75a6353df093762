//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] is an append-only record of operations. Ops only reference
//! earlier nodes, so walking the record backwards visits nodes in reverse
//! topological order. Gradients accumulate additively into per-node buffers
//! and stay there until [`Tape::zero_grads`], so calling `backward` twice
//! without zeroing doubles every gradient.
//!
//! Every forward op validates shapes and rejects non-finite outputs up front
//! rather than letting NaNs propagate into a training step.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Rsqrt(Var),
    Clamp(Var, f64, f64),
    RowSoftmax(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    ColMean(Var),
    Transpose(Var),
    /// (N,M) ⊙ v broadcast over rows, v is (1,M).
    MulRowVec(Var, Var),
    /// (N,M) ⊙ u broadcast over columns, u is (N,1).
    MulColVec(Var, Var),
    /// Matrix scaled by a 1x1 node.
    MulScalar(Var, Var),
    /// 1x1 node broadcast to a full (rows, cols) matrix.
    BroadcastScalar(Var),
    GatherRows(Var, Vec<usize>),
    /// Collects entries (r, c) into a column vector.
    GatherPairs(Var, Vec<(usize, usize)>),
    /// base with block added at the submatrix indexed by `idx` x `idx`.
    AddBlock {
        base: Var,
        block: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    L2NormalizeRows(Var),
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf. Parameters pass `requires_grad = true`, fixed inputs
    /// (adjacency, features, noise draws) `false`.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        self.rg(a) || self.rg(b)
    }

    // ---- op suite ---------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("({ar}x{ac}) * ({br}x{bc})"),
            });
        }
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v, self.rg2(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v, self.rg2(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v, self.rg2(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v, self.rg2(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v, self.rg(a), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v, self.rg(a), "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, self.rg(a), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, self.rg(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite("log of non-positive value".into()));
        }
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, self.rg(a), "log")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, self.rg(a), "sigmoid")
    }

    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite("rsqrt of non-positive value".into()));
        }
        let v = self.value(a).map(|x| 1.0 / x.sqrt());
        self.push(Op::Rsqrt(a), v, self.rg(a), "rsqrt")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v, self.rg(a), "clamp")
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut v = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let row = m.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for (o, &x) in v.row_mut(i).iter_mut().zip(row) {
                *o = (x - mx).exp();
                sum += *o;
            }
            for o in v.row_mut(i) {
                *o /= sum;
            }
        }
        self.push(Op::RowSoftmax(a), v, self.rg(a), "row_softmax")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v, self.rg(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / (m.rows() * m.cols()) as f64);
        self.push(Op::MeanAll(a), v, self.rg(a), "mean_all")
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut v = Matrix::zeros(m.rows(), 1);
        for i in 0..m.rows() {
            v[(i, 0)] = m.row(i).iter().sum();
        }
        self.push(Op::RowSum(a), v, self.rg(a), "row_sum")
    }

    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut v = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for (o, &x) in v.row_mut(0).iter_mut().zip(m.row(i)) {
                *o += x;
            }
        }
        let n = m.rows() as f64;
        for o in v.row_mut(0) {
            *o /= n;
        }
        self.push(Op::ColMean(a), v, self.rg(a), "col_mean")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v, self.rg(a), "transpose")
    }

    pub fn mul_row_vec(&mut self, a: Var, v_row: Var) -> Result<Var> {
        let (_, ac) = self.value(a).shape();
        let (vr, vc) = self.value(v_row).shape();
        if vr != 1 || vc != ac {
            return Err(Error::ShapeMismatch {
                op: "mul_row_vec",
                detail: format!("vector is {vr}x{vc}, matrix has {ac} cols"),
            });
        }
        let m = self.value(a);
        let w = self.value(v_row);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[(i, j)] = m[(i, j)] * w[(0, j)];
            }
        }
        self.push(Op::MulRowVec(a, v_row), out, self.rg2(a, v_row), "mul_row_vec")
    }

    pub fn mul_col_vec(&mut self, a: Var, v_col: Var) -> Result<Var> {
        let (ar, _) = self.value(a).shape();
        let (vr, vc) = self.value(v_col).shape();
        if vc != 1 || vr != ar {
            return Err(Error::ShapeMismatch {
                op: "mul_col_vec",
                detail: format!("vector is {vr}x{vc}, matrix has {ar} rows"),
            });
        }
        let m = self.value(a);
        let w = self.value(v_col);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let s = w[(i, 0)];
            for j in 0..m.cols() {
                out[(i, j)] = m[(i, j)] * s;
            }
        }
        self.push(Op::MulColVec(a, v_col), out, self.rg2(a, v_col), "mul_col_vec")
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar",
                detail: "scalar factor must be 1x1".into(),
            });
        }
        let c = self.value(s)[(0, 0)];
        let v = self.value(a).scale(c);
        self.push(Op::MulScalar(a, s), v, self.rg2(a, s), "mul_scalar")
    }

    pub fn broadcast_scalar(&mut self, s: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "broadcast_scalar",
                detail: "source must be 1x1".into(),
            });
        }
        let c = self.value(s)[(0, 0)];
        let mut v = Matrix::zeros(rows, cols);
        for x in v.as_mut_slice() {
            *x = c;
        }
        self.push(Op::BroadcastScalar(s), v, self.rg(s), "broadcast_scalar")
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        for &i in idx {
            if i >= m.rows() {
                return Err(Error::InvalidInput(format!(
                    "gather_rows index {i} out of range ({} rows)",
                    m.rows()
                )));
            }
        }
        let mut v = Matrix::zeros(idx.len(), m.cols());
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).copy_from_slice(m.row(i));
        }
        self.push(Op::GatherRows(a, idx.to_vec()), v, self.rg(a), "gather_rows")
    }

    pub fn gather_pairs(&mut self, a: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let m = self.value(a);
        let mut v = Matrix::zeros(pairs.len(), 1);
        for (k, &(r, c)) in pairs.iter().enumerate() {
            if r >= m.rows() || c >= m.cols() {
                return Err(Error::InvalidInput(format!(
                    "gather_pairs index ({r},{c}) out of range"
                )));
            }
            v[(k, 0)] = m[(r, c)];
        }
        self.push(
            Op::GatherPairs(a, pairs.to_vec()),
            v,
            self.rg(a),
            "gather_pairs",
        )
    }

    /// out = base; out[idx x idx] += block. Used to assemble block-diagonal
    /// structure from per-cluster refinements.
    pub fn add_block(&mut self, base: Var, block: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(base).rows();
        let (br, bc) = self.value(block).shape();
        if br != idx.len() || bc != idx.len() {
            return Err(Error::ShapeMismatch {
                op: "add_block",
                detail: format!("block is {br}x{bc}, index list has {} entries", idx.len()),
            });
        }
        if self.value(base).cols() != n {
            return Err(Error::ShapeMismatch {
                op: "add_block",
                detail: "base must be square".into(),
            });
        }
        let mut v = self.value(base).clone();
        for (bi, &i) in idx.iter().enumerate() {
            for (bj, &j) in idx.iter().enumerate() {
                v[(i, j)] += self.value(block)[(bi, bj)];
            }
        }
        self.push(
            Op::AddBlock {
                base,
                block,
                idx: idx.to_vec(),
            },
            v,
            self.rg2(base, block),
            "add_block",
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != bc {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                detail: format!("{ac} vs {bc} cols"),
            });
        }
        let mut data = Vec::with_capacity((ar + br) * ac);
        data.extend_from_slice(self.value(a).as_slice());
        data.extend_from_slice(self.value(b).as_slice());
        let v = Matrix::from_vec(ar + br, ac, data);
        self.push(Op::ConcatRows(a, b), v, self.rg2(a, b), "concat_rows")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ar != br {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{ar} vs {br} rows"),
            });
        }
        let mut v = Matrix::zeros(ar, ac + bc);
        for i in 0..ar {
            v.row_mut(i)[..ac].copy_from_slice(self.value(a).row(i));
            v.row_mut(i)[ac..].copy_from_slice(self.value(b).row(i));
        }
        self.push(Op::ConcatCols(a, b), v, self.rg2(a, b), "concat_cols")
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut v = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let n = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for (o, &x) in v.row_mut(i).iter_mut().zip(m.row(i)) {
                    *o = x / n;
                }
            }
        }
        self.push(Op::L2NormalizeRows(a), v, self.rg(a), "l2_normalize_rows")
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagate from a 1x1 output. Gradients add into each
    /// requires-grad node's accumulator.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::InvalidInput(
                "backward requires a scalar (1x1) output".into(),
            ));
        }
        let mut flow: Vec<Option<Matrix>> = Vec::with_capacity(out.0 + 1);
        flow.resize_with(out.0 + 1, || None);
        flow[out.0] = Some(Matrix::ones(1, 1));

        for id in (0..=out.0).rev() {
            let Some(g) = flow[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut flow);
            let acc = self.nodes[id]
                .grad
                .get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            acc.add_scaled(&g, 1.0);
        }
        Ok(())
    }

    fn accumulate(&self, flow: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut flow[v.0] {
            Some(m) => m.add_scaled(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Matrix, flow: &mut [Option<Matrix>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let da = g.matmul(&self.value(b).transpose());
                    self.accumulate(flow, a, da);
                }
                if self.rg(b) {
                    let db = self.value(a).transpose().matmul(g);
                    self.accumulate(flow, b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(flow, *a, g.clone());
                self.accumulate(flow, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(flow, *a, g.clone());
                self.accumulate(flow, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    self.accumulate(flow, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.rg(b) {
                    self.accumulate(flow, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => self.accumulate(flow, *a, g.scale(*c)),
            Op::AddScalar(a) => self.accumulate(flow, *a, g.clone()),
            Op::Relu(a) => {
                let da = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(flow, *a, da);
            }
            Op::Exp(a) => {
                let da = g.zip_map(&self.nodes[id].value, |gv, y| gv * y);
                self.accumulate(flow, *a, da);
            }
            Op::Log(a) => {
                let da = g.zip_map(self.value(*a), |gv, x| gv / x);
                self.accumulate(flow, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = g.zip_map(&self.nodes[id].value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(flow, *a, da);
            }
            Op::Rsqrt(a) => {
                let da = g.zip_map(&self.nodes[id].value, |gv, y| -0.5 * gv * y * y * y);
                self.accumulate(flow, *a, da);
            }
            Op::Clamp(a, lo, hi) => {
                let da = g.zip_map(self.value(*a), |gv, x| {
                    if x > *lo && x < *hi {
                        gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(flow, *a, da);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[id].value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(&gv, &yv)| gv * yv).sum();
                    for j in 0..y.cols() {
                        da[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                self.accumulate(flow, *a, da);
            }
            Op::SumAll(a) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                let gv = g[(0, 0)];
                for x in da.as_mut_slice() {
                    *x = gv;
                }
                self.accumulate(flow, *a, da);
            }
            Op::MeanAll(a) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                let gv = g[(0, 0)] / (m.rows() * m.cols()) as f64;
                for x in da.as_mut_slice() {
                    *x = gv;
                }
                self.accumulate(flow, *a, da);
            }
            Op::RowSum(a) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                for i in 0..m.rows() {
                    let gv = g[(i, 0)];
                    for x in da.row_mut(i) {
                        *x = gv;
                    }
                }
                self.accumulate(flow, *a, da);
            }
            Op::ColMean(a) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                let n = m.rows() as f64;
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        da[(i, j)] = g[(0, j)] / n;
                    }
                }
                self.accumulate(flow, *a, da);
            }
            Op::Transpose(a) => self.accumulate(flow, *a, g.transpose()),
            Op::MulRowVec(a, v) => {
                let (a, v) = (*a, *v);
                if self.rg(a) {
                    let w = self.value(v);
                    let m = self.value(a);
                    let mut da = Matrix::zeros(m.rows(), m.cols());
                    for i in 0..m.rows() {
                        for j in 0..m.cols() {
                            da[(i, j)] = g[(i, j)] * w[(0, j)];
                        }
                    }
                    self.accumulate(flow, a, da);
                }
                if self.rg(v) {
                    let m = self.value(a);
                    let mut dv = Matrix::zeros(1, m.cols());
                    for i in 0..m.rows() {
                        for j in 0..m.cols() {
                            dv[(0, j)] += g[(i, j)] * m[(i, j)];
                        }
                    }
                    self.accumulate(flow, v, dv);
                }
            }
            Op::MulColVec(a, v) => {
                let (a, v) = (*a, *v);
                if self.rg(a) {
                    let w = self.value(v);
                    let m = self.value(a);
                    let mut da = Matrix::zeros(m.rows(), m.cols());
                    for i in 0..m.rows() {
                        let s = w[(i, 0)];
                        for j in 0..m.cols() {
                            da[(i, j)] = g[(i, j)] * s;
                        }
                    }
                    self.accumulate(flow, a, da);
                }
                if self.rg(v) {
                    let m = self.value(a);
                    let mut dv = Matrix::zeros(m.rows(), 1);
                    for i in 0..m.rows() {
                        let mut s = 0.0;
                        for j in 0..m.cols() {
                            s += g[(i, j)] * m[(i, j)];
                        }
                        dv[(i, 0)] = s;
                    }
                    self.accumulate(flow, v, dv);
                }
            }
            Op::MulScalar(a, s) => {
                let (a, s) = (*a, *s);
                if self.rg(a) {
                    self.accumulate(flow, a, g.scale(self.value(s)[(0, 0)]));
                }
                if self.rg(s) {
                    let ds = g
                        .as_slice()
                        .iter()
                        .zip(self.value(a).as_slice())
                        .map(|(&gv, &av)| gv * av)
                        .sum();
                    self.accumulate(flow, s, Matrix::scalar(ds));
                }
            }
            Op::BroadcastScalar(s) => {
                self.accumulate(flow, *s, Matrix::scalar(g.sum()));
            }
            Op::GatherRows(a, idx) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (x, &gv) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                        *x += gv;
                    }
                }
                self.accumulate(flow, *a, da);
            }
            Op::GatherPairs(a, pairs) => {
                let m = self.value(*a);
                let mut da = Matrix::zeros(m.rows(), m.cols());
                for (k, &(r, c)) in pairs.iter().enumerate() {
                    da[(r, c)] += g[(k, 0)];
                }
                self.accumulate(flow, *a, da);
            }
            Op::AddBlock { base, block, idx } => {
                let (base, block) = (*base, *block);
                if self.rg(base) {
                    self.accumulate(flow, base, g.clone());
                }
                if self.rg(block) {
                    let mut db = Matrix::zeros(idx.len(), idx.len());
                    for (bi, &i) in idx.iter().enumerate() {
                        for (bj, &j) in idx.iter().enumerate() {
                            db[(bi, bj)] = g[(i, j)];
                        }
                    }
                    self.accumulate(flow, block, db);
                }
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let ar = self.value(a).rows();
                let cols = self.value(a).cols();
                if self.rg(a) {
                    let mut da = Matrix::zeros(ar, cols);
                    for i in 0..ar {
                        da.row_mut(i).copy_from_slice(g.row(i));
                    }
                    self.accumulate(flow, a, da);
                }
                if self.rg(b) {
                    let br = self.value(b).rows();
                    let mut db = Matrix::zeros(br, cols);
                    for i in 0..br {
                        db.row_mut(i).copy_from_slice(g.row(ar + i));
                    }
                    self.accumulate(flow, b, db);
                }
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let rows = self.value(a).rows();
                let ac = self.value(a).cols();
                let bc = self.value(b).cols();
                if self.rg(a) {
                    let mut da = Matrix::zeros(rows, ac);
                    for i in 0..rows {
                        da.row_mut(i).copy_from_slice(&g.row(i)[..ac]);
                    }
                    self.accumulate(flow, a, da);
                }
                if self.rg(b) {
                    let mut db = Matrix::zeros(rows, bc);
                    for i in 0..rows {
                        db.row_mut(i).copy_from_slice(&g.row(i)[ac..]);
                    }
                    self.accumulate(flow, b, db);
                }
            }
            Op::L2NormalizeRows(a) => {
                let m = self.value(*a);
                let y = &self.nodes[id].value;
                let mut da = Matrix::zeros(m.rows(), m.cols());
                for i in 0..m.rows() {
                    let n = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(&gv, &yv)| gv * yv).sum();
                    for j in 0..m.cols() {
                        da[(i, j)] = (g[(i, j)] - y[(i, j)] * dot) / n;
                    }
                }
                self.accumulate(flow, *a, da);
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
