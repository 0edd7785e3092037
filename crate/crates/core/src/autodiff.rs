//! Reverse-mode differentiation over dense f64 matrices.
//!
//! Values are computed eagerly as ops are recorded on a [`Tape`]; nodes are
//! appended in evaluation order, so walking the tape backwards visits them in
//! reverse topological order. Every value is an `Array2<f64>`: scalars are
//! 1×1 and vectors are 1×k rows.
//!
//! ```
//! use ndarray::array;
//! use protscape::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(array![[2.0, -1.0]]);
//! let x = tape.constant(array![[3.0], [4.0]]);
//! let y = tape.matmul(w, x).unwrap();
//! let target = tape.constant(array![[0.0]]);
//! let loss = tape.mse(y, target).unwrap();
//! tape.backward(loss).unwrap();
//! // d/dw (w·x)² = 2(w·x)x = 2·2·[3, 4]
//! assert_eq!(tape.grad(w).unwrap(), &array![[12.0, 16.0]]);
//! ```

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Abs(Var),
    Relu(Var),
    SoftmaxCols(Var),
    ConcatH(Vec<Var>),
    ConcatV(Vec<Var>),
    Mse(Var, Var),
    Mean(Var),
    Sum(Var),
    Gather(Var, Rc<[usize]>),
    Diffuse(Var, Rc<Vec<Array2<f64>>>, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn softmax_cols(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut col in y.columns_mut() {
        let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - m).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    y
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input; no adjoint is propagated into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Adjoint of `v` after [`Tape::backward`]; `None` for untouched nodes.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), t))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let t = self.tracked(&[a]);
        self.push(out, Op::Transpose(a), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), t))
    }

    /// `a + 1·b` with `b` a 1×k row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(Error::shape("add_row", format!("{:?} + row {:?}", va.dim(), vb.dim())));
        }
        let out = va + &vb.row(0);
        let t = self.tracked(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), t))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let t = self.tracked(&[a]);
        self.push(out, Op::Scale(a, k), t)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Hadamard(a, b), t))
    }

    /// Entrywise modulus; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        let t = self.tracked(&[a]);
        self.push(out, Op::Abs(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let t = self.tracked(&[a]);
        self.push(out, Op::Relu(a), t)
    }

    /// Softmax down each column: every column of the result sums to 1.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = softmax_cols(self.value(a));
        let t = self.tracked(&[a]);
        self.push(out, Op::SoftmaxCols(a), t)
    }

    /// Softmax along each row, as transpose ∘ column softmax ∘ transpose.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let at = self.transpose(a);
        let s = self.softmax_cols(at);
        self.transpose(s)
    }

    pub fn concat_h(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape("concat_h", e.to_string()))?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatH(parts.to_vec()), t))
    }

    pub fn concat_v(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape("concat_v", e.to_string()))?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatV(parts.to_vec()), t))
    }

    /// Mean of squared differences, as a 1×1 node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = va.len().max(1) as f64;
        let s = Zip::from(va).and(vb).fold(0.0, |acc, x, y| acc + (x - y) * (x - y));
        let t = self.tracked(&[a, b]);
        Ok(self.push(Array2::from_elem((1, 1), s / n), Op::Mse(a, b), t))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len().max(1) as f64;
        let t = self.tracked(&[a]);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let t = self.tracked(&[a]);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), t)
    }

    /// Weighted sum of 1×1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            if self.shape(v) != (1, 1) {
                return Err(Error::shape("weighted_sum", format!("term is {:?}", self.shape(v))));
            }
            let sv = self.scale(v, w);
            acc = Some(match acc {
                None => sv,
                Some(a) => self.add(a, sv)?,
            });
        }
        acc.ok_or_else(|| Error::shape("weighted_sum", "no terms"))
    }

    /// Row-major gather: output entry `k` is input entry `index[k]` (flat,
    /// row-major). Covers reshape, flatten, row selection and permutation.
    pub fn gather(&mut self, a: Var, index: Rc<[usize]>, shape: (usize, usize)) -> Result<Var> {
        let src = self.value(a);
        if index.len() != shape.0 * shape.1 {
            return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", index.len())));
        }
        let flat = src.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        if let Some(&bad) = index.iter().find(|&&i| i >= flat.len()) {
            return Err(Error::shape("gather", format!("index {bad} out of {}", flat.len())));
        }
        let data: Vec<f64> = index.iter().map(|&i| flat[i]).collect();
        let out = Array2::from_shape_vec(shape, data).expect("length checked");
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::Gather(a, index), t))
    }

    /// Rows `rows` of `a`, in order.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("select_rows", format!("row {bad} of {r}")));
        }
        let idx: Vec<usize> = rows.iter().flat_map(|&i| (0..c).map(move |j| i * c + j)).collect();
        self.gather(a, idx.into(), (rows.len(), c))
    }

    pub fn reshape(&mut self, a: Var, shape: (usize, usize)) -> Result<Var> {
        let len = self.value(a).len();
        if shape.0 * shape.1 != len {
            return Err(Error::shape("reshape", format!("{len} entries into {shape:?}")));
        }
        self.gather(a, (0..len).collect::<Vec<_>>().into(), shape)
    }

    /// Graph diffusion of a flattened n×C signal: `u` is 1×(n·C) (row-major
    /// n×C), `powers[t]` is the t-th n×n operator; row `t` of the result is
    /// `vec(powers[t] · U)`.
    pub fn diffuse(&mut self, u: Var, powers: Rc<Vec<Array2<f64>>>, channels: usize) -> Result<Var> {
        let v = self.value(u);
        let n = powers.first().map(|p| p.nrows()).unwrap_or(0);
        if v.nrows() != 1 || v.ncols() != n * channels || channels == 0 {
            return Err(Error::shape("diffuse", format!("{:?} for n={n}, C={channels}", v.dim())));
        }
        let um = v.to_shape((n, channels)).expect("checked").to_owned();
        let mut out = Array2::zeros((powers.len(), n * channels));
        for (t, p) in powers.iter().enumerate() {
            let r = p.dot(&um);
            out.row_mut(t).assign(&r.to_shape(n * channels).expect("contiguous"));
        }
        let t = self.tracked(&[u]);
        Ok(self.push(out, Op::Diffuse(u, powers, channels), t))
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagate adjoints from a scalar root. Earlier gradients are cleared.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::shape("backward", format!("root is {:?}, not scalar", self.shape(root))));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = Some(g);
                continue;
            }
            let want = |v: &Var| self.nodes[v.0].tracked;
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if want(a) {
                        Self::accumulate(&mut grads, *a, g.dot(&self.nodes[b.0].value.t()));
                    }
                    if want(b) {
                        Self::accumulate(&mut grads, *b, self.nodes[a.0].value.t().dot(&g));
                    }
                }
                Op::Transpose(a) => {
                    if want(a) {
                        Self::accumulate(&mut grads, *a, g.t().to_owned());
                    }
                }
                Op::Add(a, b) => {
                    if want(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                    if want(b) {
                        Self::accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if want(b) {
                        Self::accumulate(&mut grads, *b, -&g);
                    }
                    if want(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::AddRow(a, r) => {
                    if want(r) {
                        Self::accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if want(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::Scale(a, k) => {
                    if want(a) {
                        Self::accumulate(&mut grads, *a, &g * *k);
                    }
                }
                Op::Hadamard(a, b) => {
                    if want(a) {
                        Self::accumulate(&mut grads, *a, &g * &self.nodes[b.0].value);
                    }
                    if want(b) {
                        Self::accumulate(&mut grads, *b, &g * &self.nodes[a.0].value);
                    }
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = g.clone();
                    Zip::from(&mut d).and(x).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = g.clone();
                    Zip::from(&mut d).and(x).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxCols(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    let colsum = d.sum_axis(Axis(0));
                    Zip::from(&mut d).and(y).and_broadcast(&colsum).for_each(|d, &y, &c| *d -= y * c);
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::ConcatH(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        if want(p) {
                            Self::accumulate(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::ConcatV(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        if want(p) {
                            Self::accumulate(&mut grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                        }
                        off += h;
                    }
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let k = 2.0 * g[[0, 0]] / va.len().max(1) as f64;
                    let d = (va - vb) * k;
                    if want(b) {
                        Self::accumulate(&mut grads, *b, -&d);
                    }
                    if want(a) {
                        Self::accumulate(&mut grads, *a, d);
                    }
                }
                Op::Mean(a) => {
                    let shape = self.nodes[a.0].value.raw_dim();
                    let n = self.nodes[a.0].value.len().max(1) as f64;
                    Self::accumulate(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.raw_dim();
                    Self::accumulate(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Gather(a, index) => {
                    let src = &self.nodes[a.0].value;
                    let mut d = vec![0.0; src.len()];
                    for (gv, &i) in g.iter().zip(index.iter()) {
                        d[i] += gv;
                    }
                    let d = Array2::from_shape_vec(src.raw_dim(), d).expect("same length");
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Diffuse(u, powers, channels) => {
                    let n = powers[0].nrows();
                    let mut du = Array2::<f64>::zeros((n, *channels));
                    for (t, p) in powers.iter().enumerate() {
                        let gt = g.row(t);
                        let gt = gt.to_shape((n, *channels)).expect("row length n·C");
                        du += &p.t().dot(&gt);
                    }
                    let du = du.into_shape_with_order((1, n * channels)).expect("contiguous");
                    Self::accumulate(&mut grads, *u, du);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}
