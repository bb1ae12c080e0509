//! A small reverse-mode autodiff tape over row-major `f64` matrices.
//!
//! Only the operations the model needs are provided. Parameters are borrowed
//! from the model rather than copied; `backward` returns one gradient slot
//! per parameter.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    /// Matrix plus a broadcast `1 x m` row.
    AddRow(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// `out[i] = a[idx[i]]`.
    Gather(Var, Vec<usize>),
    /// `out[idx[i]] += a[i]` into `n` zero rows.
    ScatterAdd(Var, Vec<usize>),
    /// `out = base` with `out[idx[i]] = rows[i]`; `idx` holds distinct rows.
    SetRows(Var, Var, Vec<usize>),
    /// `out[i] = a[i] * s[i]`.
    ScaleRows(Var, Vec<f64>),
    Transpose(Var),
    /// Softmax down a single column.
    SoftmaxCol(Var),
    /// Binary cross-entropy of a `1 x 1` logit against a 0/1 target.
    BceLogits(Var, f64),
    Scale(Var, f64),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Numerically safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => self.params[i].view(),
            _ => node.value.as_ref().expect("non-parameter nodes store a value").view(),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) + &self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = &self.value(a) + &self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concatenate(Axis(1), &views).expect("concatenated parts share a row count");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concatenate(Axis(0), &views).expect("concatenated parts share a column count");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).select(Axis(0), &idx);
        let ng = self.needs(a);
        self.push(out, Op::Gather(a, idx), ng)
    }

    pub fn scatter_add(&mut self, a: Var, idx: Vec<usize>, rows: usize) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros((rows, va.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            let mut dst = out.row_mut(r);
            dst += &va.row(i);
        }
        let ng = self.needs(a);
        self.push(out, Op::ScatterAdd(a, idx), ng)
    }

    pub fn set_rows(&mut self, base: Var, rows: Var, idx: Vec<usize>) -> Var {
        let mut out = self.value(base).to_owned();
        let vr = self.value(rows);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r).assign(&vr.row(i));
        }
        let ng = self.needs(base) || self.needs(rows);
        self.push(out, Op::SetRows(base, rows, idx), ng)
    }

    pub fn scale_rows(&mut self, a: Var, scale: Vec<f64>) -> Var {
        let mut out = self.value(a).to_owned();
        for (mut row, &s) in out.rows_mut().into_iter().zip(&scale) {
            row *= s;
        }
        let ng = self.needs(a);
        self.push(out, Op::ScaleRows(a, scale), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn softmax_col(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let max = va.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = va.mapv(|x| (x - max).exp());
        let sum = out.sum();
        out /= sum;
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxCol(a), ng)
    }

    pub fn bce_logits(&mut self, logit: Var, target: f64) -> Var {
        let z = self.scalar(logit);
        let out = Array2::from_elem((1, 1), bce_with_logits(z, target));
        let ng = self.needs(logit);
        self.push(out, Op::BceLogits(logit, target), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).mapv(|x| x * c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter;
    /// `None` for parameters the loss does not touch.
    pub fn backward(&self, loss: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));
        let mut param_grads: Vec<Option<Array2<f64>>> = vec![None; self.params.len()];

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.needs(*r) {
                        acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().expect("relu output");
                    let mut ga = g;
                    ga.zip_mut_with(out, |x, &y| {
                        if y <= 0.0 {
                            *x = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.needs(p) {
                            acc(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        }
                        off += h;
                    }
                }
                Op::Gather(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAdd(a, idx) => {
                    acc(&mut grads, *a, g.select(Axis(0), idx));
                }
                Op::SetRows(base, rows, idx) => {
                    if self.needs(*rows) {
                        acc(&mut grads, *rows, g.select(Axis(0), idx));
                    }
                    if self.needs(*base) {
                        let mut gb = g;
                        for &r in idx {
                            gb.row_mut(r).fill(0.0);
                        }
                        acc(&mut grads, *base, gb);
                    }
                }
                Op::ScaleRows(a, scale) => {
                    let mut ga = g;
                    for (mut row, &s) in ga.rows_mut().into_iter().zip(scale) {
                        row *= s;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxCol(a) => {
                    let y = node.value.as_ref().expect("softmax output");
                    let dot = (&g * y).sum();
                    acc(&mut grads, *a, y * &(g - dot));
                }
                Op::BceLogits(z, target) => {
                    let d = sigmoid(self.scalar(*z)) - target;
                    acc(&mut grads, *z, Array2::from_elem((1, 1), d * g[[0, 0]]));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
            }
        }
        param_grads
    }
}
