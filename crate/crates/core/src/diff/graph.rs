//! Tape of dense matrix operations with reverse-mode accumulation.
//!
//! Every value is a 2-D `f64` matrix; vectors are `1 x n` rows and scalars
//! `1 x 1`. A [`Graph`] borrows a [`ParamStore`] and records each operation as
//! it is applied; [`Graph::backward`] walks the tape in reverse and adds
//! parameter gradients into a [`Grads`] buffer.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::params::{Grads, ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Gelu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, xhat: Mat, inv_std: Vec<f64> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a[n x m] + row[1 x m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// `a[n x m] * row[1 x m]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddScalar(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Column means: `[n x m] -> [1 x m]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0)) / v.nrows() as f64;
        self.push(out, Op::MeanRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / m;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = xhat.clone();
        self.push(out, Op::LayerNorm { x: a, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `a` picked by `idx`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), idx);
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    /// Accumulates `d out / d param` for every parameter reached from `out`
    /// (a `1 x 1` node) into `grads`.
    pub fn backward(&self, out: Var, grads: &mut Grads) {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, dr);
                    acc(&mut adj, *a, g);
                }
                Op::MulRow(a, row) => {
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let da = &g * self.value(*row);
                    acc(&mut adj, *row, dr);
                    acc(&mut adj, *a, da);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g * *c),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Transpose(a) => acc(&mut adj, *a, g.t().to_owned()),
                Op::Gelu(a) => {
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, &x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    });
                    acc(&mut adj, *a, da);
                }
                Op::Softplus(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    acc(&mut adj, *a, da);
                }
                Op::Exp(a) => acc(&mut adj, *a, g * &node.value),
                Op::Ln(a) => acc(&mut adj, *a, g / self.value(*a)),
                Op::Square(a) => acc(&mut adj, *a, g * self.value(*a) * 2.0),
                Op::Sum(a) => {
                    let shape = self.shape(*a);
                    acc(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::MeanRows(a) => {
                    let (n, _) = self.shape(*a);
                    let row = g / n as f64;
                    let da = row.broadcast(self.shape(*a)).expect("row broadcast").to_owned();
                    acc(&mut adj, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = g;
                    for (mut drow, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d = y * (*d - dot));
                    }
                    acc(&mut adj, *a, da);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let m = xhat.ncols() as f64;
                    let mut dx = g;
                    for ((mut drow, xrow), &inv) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let mean_d = drow.sum() / m;
                        let mean_dx: f64 = drow.iter().zip(xrow.iter()).map(|(d, x)| d * x).sum::<f64>() / m;
                        Zip::from(&mut drow)
                            .and(&xrow)
                            .for_each(|d, &xh| *d = inv * (*d - mean_d - xh * mean_dx));
                    }
                    acc(&mut adj, *x, dx);
                }
                Op::SliceCols(a, start) => {
                    let mut da = Array2::zeros(self.shape(*a));
                    let w = g.ncols();
                    da.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut adj, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut adj, p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut da = Array2::zeros(self.shape(*a));
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = da.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut adj, *a, da);
                }
            }
        }
    }
}

fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
