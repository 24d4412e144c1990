use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::params::{Grads, ParamStore};
use crate::error::{EdenError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Ln(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    VStack(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    PairSum(Var, Var),
    RowEntropy(Var),
    DivCol(Var, Var),
    MulCol(Var, Var),
    ClampMin(Var, f64),
    RowL2Norm(Var),
    Mean(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

fn dim_err(op: &str, a: (usize, usize), b: (usize, usize)) -> EdenError {
    EdenError::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    y
}

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        -x * x.ln()
    } else {
        0.0
    }
}

/// Records a forward computation so gradients can be pulled back through it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// The single entry of a 1×1 value.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| EdenError::Parameter(format!("unknown parameter {name}")))?;
        Ok(self.param_at(store, idx))
    }

    pub fn param_at(&mut self, store: &ParamStore, idx: usize) -> Var {
        if self.param_vars.len() <= idx {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(store.value_at(idx).clone(), Op::Param(idx));
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(dim_err("matmul", sa, sb));
        }
        let y = self.value(a).dot(self.value(b));
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// Adds the single row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(dim_err("add_row", sa, sb));
        }
        let y = self.value(a) + self.value(bias);
        Ok(self.push(y, Op::AddRow(a, bias)))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.value(a) + self.value(b);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = self.value(a) - self.value(b);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.value(a) * self.value(b);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let y = self.value(a) * k;
        self.push(y, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let y = self.value(a) + k;
        self.push(y, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(softplus);
        self.push(y, Op::Softplus(a))
    }

    /// `ln σ(a)`, computed stably as `-softplus(-a)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        let sp = self.softplus(neg);
        self.scale(sp, -1.0)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::ln);
        self.push(y, Op::Ln(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let y = softmax_rows(self.value(a));
        self.push(y, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().to_owned();
        self.push(y, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = concatenate(Axis(1), &views).map_err(|e| EdenError::Dimension(format!("concat_cols: {e}")))?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = concatenate(Axis(0), &views).map_err(|e| EdenError::Dimension(format!("vstack: {e}")))?;
        Ok(self.push(y, Op::VStack(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let r = self.shape(a).0;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(EdenError::Dimension(format!("gather_rows: row {bad} out of {r}")));
        }
        let y = self.value(a).select(Axis(0), rows);
        Ok(self.push(y, Op::GatherRows(a, rows.to_vec())))
    }

    /// Row `i * b.rows + j` of the result is `a[i] + b[j]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(dim_err("pair_sum", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut y = Array2::zeros((sa.0 * sb.0, sa.1));
        for (block, row) in y.axis_chunks_iter_mut(Axis(0), sb.0.max(1)).zip(va.rows()) {
            Zip::from(block)
                .and_broadcast(vb)
                .and_broadcast(row)
                .for_each(|y, &b, &a| *y = a + b);
        }
        Ok(self.push(y, Op::PairSum(a, b)))
    }

    /// Shannon entropy of each row, as a column.
    pub fn row_entropy(&mut self, a: Var) -> Var {
        let y = self
            .value(a)
            .map_axis(Axis(1), |row| row.iter().copied().map(plogp).sum::<f64>())
            .insert_axis(Axis(1));
        self.push(y, Op::RowEntropy(a))
    }

    fn column_like(&self, op: &str, a: Var, col: Var) -> Result<()> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(dim_err(op, sa, sc));
        }
        Ok(())
    }

    /// Divides row `r` of `a` by `col[r]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.column_like("div_col", a, col)?;
        let y = self.value(a) / self.value(col);
        Ok(self.push(y, Op::DivCol(a, col)))
    }

    /// Multiplies row `r` of `a` by `col[r]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.column_like("mul_col", a, col)?;
        let y = self.value(a) * self.value(col);
        Ok(self.push(y, Op::MulCol(a, col)))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let y = self.value(a).mapv(|x| x.max(lo));
        self.push(y, Op::ClampMin(a, lo))
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let y = self.value(a).map_axis(Axis(1), |row| row.dot(&row).sqrt()).insert_axis(Axis(1));
        self.push(y, Op::RowL2Norm(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).mean().unwrap_or(0.0));
        self.push(y, Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(EdenError::Dimension(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(EdenError::Value(format!("label {bad} is not below {c} classes")));
        }
        if r == 0 {
            return Err(EdenError::Contract("cross_entropy over zero rows".into()));
        }
        let x = self.value(logits);
        let mut total = 0.0;
        for (row, &t) in x.rows().into_iter().zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let y = Array2::from_elem((1, 1), total / r as f64);
        Ok(self.push(y, Op::CrossEntropy(logits, targets.to_vec())))
    }

    /// Reverse pass from a 1×1 `loss`; returns one gradient per stored parameter.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Grads> {
        if self.shape(loss) != (1, 1) {
            return Err(EdenError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(EdenError::Divergence(format!("loss is {}", self.scalar(loss))));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::zeros_like(store);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Input => {}
                Op::Param(idx) => out.accumulate(*idx, &g),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::AddRow(a, b) => {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, g * val(*a));
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let mask = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(*a, g * mask);
                }
                Op::Sigmoid(a) => acc(*a, g * node.value.mapv(|y| y * (1.0 - y))),
                Op::Tanh(a) => acc(*a, g * node.value.mapv(|y| 1.0 - y * y)),
                Op::Softplus(a) => acc(*a, g * val(*a).mapv(sigmoid)),
                Op::Ln(a) => acc(*a, g / val(*a)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, y * &(g - dot));
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::PairSum(a, b) => {
                    let (ra, rb) = (val(*a).nrows(), val(*b).nrows());
                    let c = g.ncols();
                    let blocks = g.to_shape((ra, rb, c)).unwrap();
                    acc(*a, blocks.sum_axis(Axis(1)));
                    acc(*b, blocks.sum_axis(Axis(0)));
                }
                Op::RowEntropy(a) => {
                    let d = val(*a).mapv(|x| if x > 0.0 { -(x.ln() + 1.0) } else { 0.0 });
                    acc(*a, d * &g);
                }
                Op::DivCol(a, c) => {
                    let cv = val(*c);
                    let gc = -(&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)) / &cv.mapv(|x| x * x);
                    acc(*a, &g / cv);
                    acc(*c, gc);
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, &g * val(*c));
                    acc(*c, gc);
                }
                Op::ClampMin(a, lo) => {
                    let mask = val(*a).mapv(|x| if x > *lo { 1.0 } else { 0.0 });
                    acc(*a, g * mask);
                }
                Op::RowL2Norm(a) => {
                    let norm = &node.value;
                    let scale = (&g / &norm.mapv(|n| if n > 0.0 { n } else { f64::INFINITY })).to_owned();
                    acc(*a, val(*a) * &scale);
                }
                Op::Mean(a) => {
                    let len = val(*a).len().max(1) as f64;
                    acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]] / len));
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::CrossEntropy(a, targets) => {
                    let mut d = softmax_rows(val(*a));
                    let r = targets.len() as f64;
                    for (k, &t) in targets.iter().enumerate() {
                        d[[k, t]] -= 1.0;
                    }
                    acc(*a, d * (g[[0, 0]] / r));
                }
            }
        }
        Ok(out)
    }
}
