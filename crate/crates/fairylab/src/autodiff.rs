//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! Every activation in the crate is a `[rows, cols]` matrix, which keeps the
//! op set small: matrix multiply, broadcast add/mul along rows or columns,
//! a smooth activation, transpose, reductions, and an embedding gather. The
//! tape is generic over [`Scalar`] so training runs at `f32` while gradient
//! verification runs the identical code at `f64`.
//!
//! Smoothness matters: the activation is SiLU (no kinks), so central finite
//! differences converge to the analytic gradient.

use ndarray::{Array2, Axis, ScalarOperand};
use num_traits::Float;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type the tape operates on.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + ScalarOperand
    + 'static
    + std::fmt::Debug
    + std::fmt::Display
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `[n, d] + [1, d]`, the row broadcast over every row.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[n, d] * [1, d]` column-wise scales.
    MulRow(NodeId, NodeId),
    /// `[n, d] * [n, 1]` row-wise scales.
    MulCol(NodeId, NodeId),
    /// `[n, d] / [n, 1]` row-wise divides.
    DivCol(NodeId, NodeId),
    /// Elementwise product with a constant (dropout masks, token masks).
    MulConst(NodeId, Array2<T>),
    Scale(NodeId, T),
    Silu(NodeId),
    Transpose(NodeId),
    /// `[n, d] -> [1, d]`.
    SumAxis0(NodeId),
    /// `[n, d] -> [n, 1]`.
    SumAxis1(NodeId),
    /// `-> [1, 1]`.
    SumAll(NodeId),
    Sqrt(NodeId),
    /// Row gather from an embedding table; gradient scatters back.
    GatherRows(NodeId, Vec<usize>),
}

struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op<T>,
}

/// A single forward build; dropped after each training step.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<T>> {
        self.grads[id.0].as_ref()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node. Both constants and parameters enter this way; the caller
    /// keeps track of which leaves are trainable.
    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// `a: [n, d]`, `row: [1, d]`; adds `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a: [n, d]`, `row: [1, d]`; scales column `j` of `a` by `row[j]`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) * &self.value(row).row(0);
        self.push(v, Op::MulRow(a, row))
    }

    /// `a: [n, d]`, `col: [n, 1]`; scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    /// `a: [n, d]`, `col: [n, 1]`; divides row `i` of `a` by `col[i]`.
    pub fn div_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let v = self.value(a) / self.value(col);
        self.push(v, Op::DivCol(a, col))
    }

    /// Elementwise product with a constant mask (no gradient into the mask).
    pub fn mul_const(&mut self, a: NodeId, mask: Array2<T>) -> NodeId {
        let v = self.value(a) * &mask;
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).mapv(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// SiLU activation `x * sigmoid(x)`.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_axis0(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumAxis0(a))
    }

    pub fn sum_axis1(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumAxis1(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.sqrt());
        self.push(v, Op::Sqrt(a))
    }

    /// Gather rows `ids` from `table: [vocab, d]` into `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        self.push(v, Op::GatherRows(table, ids.to_vec()))
    }

    /// Mean of squared differences over all elements: the training loss shape.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        let n = self.value(pred).len();
        let d = self.sub(pred, target);
        let sq = self.mul(d, d);
        let s = self.sum_all(sq);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    pub fn scalar(&self, id: NodeId) -> T {
        debug_assert_eq!(self.value(id).len(), 1);
        self.value(id)[[0, 0]]
    }

    /// Reverse pass from a scalar node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for i in (0..=loss.0).rev() {
            // take to appease the borrow checker; restored after dispatch
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.mapv(|x| -x));
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *r, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulRow(a, r) => {
                    let ga = &g * &self.value(*r).row(0);
                    let gr = (&g * self.value(*a))
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *r, gr);
                }
                Op::MulCol(a, c) => {
                    let ga = &g * self.value(*c);
                    let gc = (&g * self.value(*a))
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *c, gc);
                }
                Op::DivCol(a, c) => {
                    let cv = self.value(*c);
                    let ga = &g / cv;
                    // d/dc (a / c) = -a / c^2; fold a/c through the stored output.
                    let y = &self.nodes[i].value;
                    let gc = ((&g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / cv).mapv(|x| -x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *c, gc);
                }
                Op::MulConst(a, mask) => {
                    accumulate(&mut grads, *a, &g * mask);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.mapv(|x| x * *s));
                }
                Op::Silu(a) => {
                    let ga = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s + x * s * (T::one() - s)
                    }) * &g;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.t().to_owned());
                }
                Op::SumAxis0(a) => {
                    let (n, _) = self.value(*a).dim();
                    let ga = Array2::from_shape_fn(self.value(*a).dim(), |(_, j)| g[[0, j]]);
                    let _ = n;
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAxis1(a) => {
                    let ga = Array2::from_shape_fn(self.value(*a).dim(), |(i, _)| g[[i, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[i].value;
                    let half = T::from_f64(0.5);
                    let ga = &g * &y.mapv(|x| half / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(t, ids) => {
                    let mut gt = Array2::zeros(self.value(*t).dim());
                    for (row, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(row);
                    }
                    accumulate(&mut grads, *t, gt);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array2<T>>], id: NodeId, g: Array2<T>) {
    match &mut grads[id.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
