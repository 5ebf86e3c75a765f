//! Reverse-mode tape over dense row-major matrices.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so walking the tape backwards is a reverse
//! topological traversal and each node is visited exactly once.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Array2<f64>),
    Borrowed(&'a Array2<f64>),
}

impl Value<'_> {
    fn view(&self) -> ArrayView2<'_, f64> {
        match self {
            Value::Owned(a) => a.view(),
            Value::Borrowed(a) => a.view(),
        }
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// matrix plus a 1×d row broadcast over its rows
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Gather(Var, &'a [usize]),
    ScatterSum(Var, &'a [usize]),
    ScaleRows(Var, &'a [f64]),
    Sum(Var),
    Mean(Var),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Computation tape. Borrowed leaves (parameters, index lists) must outlive it.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn dims(a: &ArrayView2<'_, f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Trainable leaf borrowing its storage.
    pub fn param(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf owning its storage.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(op, format!("{} vs {}", dims(&va), dims(&vb))));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", format!("{} · {}", dims(&va), dims(&vb))));
        }
        let out = va.dot(&vb);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op<'a>,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let mut out = self.value(a).to_owned();
        Zip::from(&mut out).and(&self.value(b)).for_each(|x, &y| *x = f(*x, y));
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a 1×d bias row to every row of an n×d matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape("add_row", format!("{} + {}", dims(&vx), dims(&vb))));
        }
        let out = &vx + &vb;
        let g = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(x, bias), g))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).mapv(|v| v * c);
        let g = self.needs(x);
        self.push(out, Op::Scale(x, c), g)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).mapv(|v| v + c);
        let g = self.needs(x);
        self.push(out, Op::AddScalar(x), g)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rows = self.value(*first).nrows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.nrows() != rows {
                return Err(Error::shape(
                    "concat",
                    format!("{} rows vs {}", v.nrows(), rows),
                ));
            }
            cols += v.ncols();
        }
        let mut out = Array2::zeros((rows, cols));
        let mut c = 0;
        for &p in parts {
            let v = self.value(p);
            out.slice_mut(s![.., c..c + v.ncols()]).assign(&v);
            c += v.ncols();
        }
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let g = self.needs(x);
        self.push(out, Op::Relu(x), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let g = self.needs(x);
        self.push(out, Op::Sigmoid(x), g)
    }

    /// Elementwise |x|; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::abs);
        let g = self.needs(x);
        self.push(out, Op::Abs(x), g)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v * v);
        let g = self.needs(x);
        self.push(out, Op::Square(x), g)
    }

    /// Row gather: `out[k] = x[index[k]]`.
    pub fn gather(&mut self, x: Var, index: &'a [usize]) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= vx.nrows()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {}", dims(&vx)),
            ));
        }
        let d = vx.ncols();
        let mut out = Array2::zeros((index.len(), d));
        for (mut row, &i) in out.outer_iter_mut().zip(index) {
            row.assign(&vx.row(i));
        }
        let g = self.needs(x);
        Ok(self.push(out, Op::Gather(x, index), g))
    }

    /// Row scatter-add into `size` rows: `out[index[k]] += x[k]`.
    pub fn scatter_sum(&mut self, x: Var, index: &'a [usize], size: usize) -> Result<Var> {
        let vx = self.value(x);
        if index.len() != vx.nrows() {
            return Err(Error::shape(
                "scatter_sum",
                format!("{} indices for {} rows", index.len(), vx.nrows()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= size) {
            return Err(Error::shape(
                "scatter_sum",
                format!("index {bad} out of range for size {size}"),
            ));
        }
        let mut out = Array2::zeros((size, vx.ncols()));
        for (row, &i) in vx.outer_iter().zip(index) {
            let mut target = out.row_mut(i);
            target += &row;
        }
        let g = self.needs(x);
        Ok(self.push(out, Op::ScatterSum(x, index), g))
    }

    /// Multiplies row k by the constant `weights[k]`.
    pub fn scale_rows(&mut self, x: Var, weights: &'a [f64]) -> Result<Var> {
        let vx = self.value(x);
        if weights.len() != vx.nrows() {
            return Err(Error::shape(
                "scale_rows",
                format!("{} weights for {}", weights.len(), dims(&vx)),
            ));
        }
        let mut out = vx.to_owned();
        for (mut row, &w) in out.outer_iter_mut().zip(weights) {
            row *= w;
        }
        let g = self.needs(x);
        Ok(self.push(out, Op::ScaleRows(x, weights), g))
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        let g = self.needs(x);
        self.push(out, Op::Sum(x), g)
    }

    /// Mean of all entries as a 1×1 matrix.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let g = self.needs(x);
        self.push(out, Op::Mean(x), g)
    }

    pub fn abs_sum(&mut self, x: Var) -> Var {
        let a = self.abs(x);
        self.sum(a)
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if !self.needs(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Array2::ones(self.shape(root)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(up) = grads[i].take() else {
                continue;
            };
            let out = node.value.view();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, up.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&up));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, up.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, up);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, up.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, -up);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, &up * &self.value(*b));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, &up * &self.value(*a));
                    }
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    if self.needs(*a) {
                        acc(&mut grads, *a, &up / &vb);
                    }
                    if self.needs(*b) {
                        // d(a/b)/db = -(a/b)/b
                        let mut gb = up.clone();
                        Zip::from(&mut gb)
                            .and(&out)
                            .and(&vb)
                            .for_each(|g, &q, &d| *g = -*g * q / d);
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.needs(*bias) {
                        acc(&mut grads, *bias, up.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*x) {
                        acc(&mut grads, *x, up);
                    }
                }
                Op::Scale(x, c) => acc(&mut grads, *x, up * *c),
                Op::AddScalar(x) => acc(&mut grads, *x, up),
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.needs(*p) {
                            acc(&mut grads, *p, up.slice(s![.., c..c + w]).to_owned());
                        }
                        c += w;
                    }
                }
                Op::Relu(x) => {
                    let mut g = up;
                    Zip::from(&mut g)
                        .and(&out)
                        .for_each(|g, &y| if y <= 0.0 { *g = 0.0 });
                    acc(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = up;
                    Zip::from(&mut g).and(&out).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *x, g);
                }
                Op::Abs(x) => {
                    let mut g = up;
                    Zip::from(&mut g).and(&self.value(*x)).for_each(|g, &v| {
                        *g *= if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *x, g);
                }
                Op::Square(x) => {
                    let mut g = up;
                    Zip::from(&mut g).and(&self.value(*x)).for_each(|g, &v| *g *= 2.0 * v);
                    acc(&mut grads, *x, g);
                }
                Op::Gather(x, index) => {
                    let mut g = Array2::zeros(self.shape(*x));
                    for (row, &i) in up.outer_iter().zip(index.iter()) {
                        let mut target = g.row_mut(i);
                        target += &row;
                    }
                    acc(&mut grads, *x, g);
                }
                Op::ScatterSum(x, index) => {
                    let mut g = Array2::zeros(self.shape(*x));
                    for (mut row, &i) in g.outer_iter_mut().zip(index.iter()) {
                        row.assign(&up.row(i));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::ScaleRows(x, weights) => {
                    let mut g = up;
                    for (mut row, &w) in g.outer_iter_mut().zip(weights.iter()) {
                        row *= w;
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Sum(x) => {
                    let seed = up[[0, 0]];
                    acc(&mut grads, *x, Array2::from_elem(self.shape(*x), seed));
                }
                Op::Mean(x) => {
                    let shape = self.shape(*x);
                    let seed = up[[0, 0]] / (shape.0 * shape.1) as f64;
                    acc(&mut grads, *x, Array2::from_elem(shape, seed));
                }
            }
        }
        Gradients { grads }
    }
}

/// Mean absolute deviation, as a 1×1 node.
pub fn l1_loss(g: &mut Graph<'_>, pred: Var, target: Var) -> Result<Var> {
    let diff = g
        .sub(pred, target)
        .map_err(|e| rename_shape(e, "l1_loss"))?;
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// Mean squared deviation, as a 1×1 node.
pub fn mse_loss(g: &mut Graph<'_>, pred: Var, target: Var) -> Result<Var> {
    let diff = g
        .sub(pred, target)
        .map_err(|e| rename_shape(e, "mse_loss"))?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

fn rename_shape(e: Error, op: &'static str) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::Shape { op, detail },
        other => other,
    }
}
