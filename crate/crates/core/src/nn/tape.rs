//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; parents always
//! precede children, so the backward pass is a single reverse sweep.
//! Shape misuse inside an expression is a programming error and panics; the
//! public model APIs validate user-facing shapes before recording.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Tensor),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    SelectCols(Var, Vec<usize>),
    Concat(Vec<Var>),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    /// Row-wise maximum over the entries where the mask is nonzero; the
    /// chosen column per row is recorded for the backward pass.
    RowMaxMasked(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the given shape when `v` was unreachable.
    pub fn wrt_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: operand shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Non-differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Trainable input; receives a gradient in [`Gradients`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Param, t)
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("matmul: {e}"));
        self.push(Op::MatMul(a, b), out)
    }

    /// Adds a `[1, cols]` bias to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert!(
            b.rows() == 1 && b.cols() == x.cols(),
            "add_bias: bias {:?} incompatible with {:?}",
            b.shape(),
            x.shape()
        );
        let mut out = x.clone();
        let cols = x.cols();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v += b.values()[i % cols];
        }
        self.push(Op::AddBias(a, bias), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape("mul", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Elementwise product with a constant tensor (masks, per-column scales).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        same_shape("mul_const", self.value(a), &c);
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(Op::MulConst(a, c), out)
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        same_shape("add_const", self.value(a), c);
        let out = self.value(a).zip_map(c, |x, y| x + y);
        self.push(Op::AddConst(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), out)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), out)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let cols = x.cols();
        for row in out.values_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(Op::Softmax(a), out)
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert!(
            cols.iter().all(|&c| c < x.cols()),
            "select_cols: index out of range for width {}",
            x.cols()
        );
        let mut out = Vec::with_capacity(x.rows() * cols.len());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        let t = Tensor::new(x.rows(), cols.len(), out).expect("select_cols shape");
        self.push(Op::SelectCols(a, cols.to_vec()), t)
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Var {
        self.select_cols(a, &[col])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        assert!(
            parts.iter().all(|&p| self.value(p).rows() == rows),
            "concat: row counts differ"
        );
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::new(rows, width, out).expect("concat shape");
        self.push(Op::Concat(parts.to_vec()), t)
    }

    /// Per-row sum, producing a `[rows, 1]` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sums: Vec<f64> = (0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect();
        self.push(Op::SumCols(a), Tensor::column(sums))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / x.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    /// Per-row maximum restricted to columns where `mask` is nonzero.
    /// Ties pick the lowest column index.
    pub fn row_max_masked(&mut self, a: Var, mask: &Tensor) -> Var {
        let x = self.value(a);
        same_shape("row_max_masked", x, mask);
        let mut chosen = Vec::with_capacity(x.rows());
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let m = mask.row_slice(r);
            let (best, val) = row
                .iter()
                .enumerate()
                .filter(|(c, _)| m[*c] != 0.0)
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, (c, &v)| {
                    if v > acc.1 {
                        (c, v)
                    } else {
                        acc
                    }
                });
            assert!(best != usize::MAX, "row_max_masked: empty mask in row {r}");
            chosen.push(best);
            out.push(val);
        }
        self.push(Op::RowMaxMasked(a, chosen), Tensor::column(out))
    }

    /// Backward pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_with_seed(loss, Tensor::scalar(1.0))
    }

    /// Backward pass seeded with an explicit upstream gradient for `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        let root_shape = self.value(root).shape();
        if seed.shape() != root_shape {
            return Err(Error::dim(
                "backward seed",
                format!("{root_shape:?}"),
                format!("{:?}", seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(&bv.transpose()).expect("matmul grad"));
                acc(*b, av.transpose().matmul(g).expect("matmul grad"));
            }
            Op::AddBias(a, bias) => {
                acc(*a, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for (i, v) in g.values().iter().enumerate() {
                    db[i % cols] += v;
                }
                acc(*bias, Tensor::row(db));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x * y));
                acc(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::Affine(a, s) => acc(*a, g.map(|x| x * s)),
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip_map(out, |x, e| x * e)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Abs(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x * sign(y))),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y)),
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut d = g.clone();
                for (r, drow) in d.values_mut().chunks_mut(cols).enumerate() {
                    let s = out.row_slice(r);
                    let dot: f64 = drow.iter().zip(s).map(|(x, y)| x * y).sum();
                    for (dv, sv) in drow.iter_mut().zip(s) {
                        *dv = sv * (*dv - dot);
                    }
                }
                acc(*a, d);
            }
            Op::SelectCols(a, cols) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    for (j, &c) in cols.iter().enumerate() {
                        let v = d.get(r, c) + g.get(r, j);
                        d.set(r, c, v);
                    }
                }
                acc(*a, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let rows = g.rows();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                    }
                    acc(p, Tensor::new(rows, w, d).expect("concat grad"));
                    offset += w;
                }
            }
            Op::SumCols(a) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                let cols = src.cols();
                for (i, v) in d.values_mut().iter_mut().enumerate() {
                    *v = g.values()[i / cols];
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let src = self.value(*a);
                acc(*a, Tensor::filled(src.rows(), src.cols(), g.item()));
            }
            Op::Mean(a) => {
                let src = self.value(*a);
                let n = src.len() as f64;
                acc(*a, Tensor::filled(src.rows(), src.cols(), g.item() / n));
            }
            Op::RowMaxMasked(a, chosen) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for (r, &c) in chosen.iter().enumerate() {
                    d.set(r, c, g.get(r, 0));
                }
                acc(*a, d);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(vec![0.3, -1.2, 2.0]));
        let x = tape.leaf(Tensor::row(vec![4.0, 5.0, -6.0]));
        let p = tape.mul(w, x);
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap().values(), &[4.0, 5.0, -6.0]);
    }

    #[test]
    fn sigmoid_squared_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let s = tape.sigmoid(w);
        let sq = tape.mul(s, s);
        let g = tape.backward(sq).unwrap();
        assert!((g.wrt(w).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn seed_shape_checked() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
        assert!(tape
            .backward_with_seed(w, Tensor::row(vec![1.0, 1.0]))
            .is_ok());
    }

    #[test]
    fn softmax_rows_normalized() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![0.0, 0.0, 3.0, -1.0]).unwrap());
        let s = tape.softmax(x);
        let v = tape.value(s);
        assert_eq!(v.row_slice(0), &[0.5, 0.5]);
        assert!((v.row_slice(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn masked_row_max_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(2, 3, vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap());
        let mask = Tensor::new(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let m = tape.row_max_masked(x, &mask);
        assert_eq!(tape.value(m).values(), &[2.0, 3.0]);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().values(), &[0., 0., 1., 0., 0., 1.]);
    }
}
