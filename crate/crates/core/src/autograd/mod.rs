//! Reverse-mode automatic differentiation over dense 2-D `f64` arrays.
//!
//! A [`Tape`] records every operation as a node. [`Tape::grad`] walks the
//! tape backwards, and every backward rule is itself written with tape
//! operations, so the returned gradients are ordinary [`Var`]s that can be
//! differentiated again. The critic's gradient penalty depends on this
//! second-order path.
//!
//! Non-smooth operations (leaky ReLU, max pooling, nearest-neighbour
//! lookups) record their active branch as constant masks or index lists,
//! which gives the usual almost-everywhere derivatives.

pub mod check;

use std::cell::RefCell;
use std::fmt;
use std::ops;
use std::rc::Rc;

use ndarray::{Array2, Axis};

/// Dense row-major matrix used for every value on the tape.
pub type Array = Array2<f64>;

/// Row index meaning "emit a zero row" in [`Var::gather_rows`].
pub const ZERO_ROW: usize = usize::MAX;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    SumRows(usize),
    SumCols(usize),
    Broadcast(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Recip(usize),
    Sigmoid(usize),
    Tanh(usize),
    Mask(usize, Rc<Array>),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, Rc<[usize]>),
    Pick(usize, Rc<[usize]>),
    Place(usize, Rc<[usize]>),
    Reshape(usize),
    SliceCols(usize, usize),
    PadCols(usize, usize),
    SliceRows(usize, usize),
    PadRows(usize, usize),
    External(Rc<[(usize, Rc<Array>)]>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Transpose(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Broadcast(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Mask(a, _)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::Pick(a, _)
            | Op::Place(a, _)
            | Op::Reshape(a)
            | Op::SliceCols(a, _)
            | Op::PadCols(a, _)
            | Op::SliceRows(a, _)
            | Op::PadRows(a, _) => vec![*a],
            Op::External(list) => list.iter().map(|(p, _)| *p).collect(),
        }
    }
}

struct Node {
    value: Rc<Array>,
    op: Op,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({}x{})", self.id, r, c)
    }
}

fn standard(a: Array) -> Array {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(standard(value)),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Records a leaf that shares storage with `value` (used for parameters).
    pub fn leaf(&self, value: Rc<Array>) -> Var<'_> {
        let value = if value.is_standard_layout() {
            value
        } else {
            Rc::new(standard((*value).clone()))
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Array::from_elem((1, 1), value), Op::Leaf)
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'_> {
        self.push(Array::zeros((rows, cols)), Op::Leaf)
    }

    /// Records a scalar-valued function computed outside the tape.
    ///
    /// `grads` pairs each input with d(value)/d(input). The resulting node is
    /// differentiable once; its gradient is treated as constant beyond that.
    pub fn external<'t>(&'t self, value: f64, grads: Vec<(Var<'t>, Array)>) -> Var<'t> {
        let list: Vec<(usize, Rc<Array>)> = grads
            .into_iter()
            .map(|(v, g)| {
                assert_eq!(v.shape(), g.dim(), "external gradient shape mismatch");
                (v.id, Rc::new(g))
            })
            .collect();
        self.push(Array::from_elem((1, 1), value), Op::External(list.into()))
    }

    /// Gradients of `output` with respect to each of `wrt`.
    ///
    /// A non-scalar `output` is seeded with ones, which differentiates the sum
    /// of its entries. Inputs that `output` does not depend on receive zeros.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let out = output.id;
        let parents: Vec<Vec<usize>> = {
            let nodes = self.nodes.borrow();
            nodes[..=out].iter().map(|n| n.op.parents()).collect()
        };
        let mut needs = vec![false; out + 1];
        for w in wrt {
            if w.id <= out {
                needs[w.id] = true;
            }
        }
        for i in 0..=out {
            if !needs[i] && parents[i].iter().any(|&p| needs[p]) {
                needs[i] = true;
            }
        }

        let mut grads: Vec<Option<Var<'t>>> = vec![None; out + 1];
        if needs[out] {
            let (r, c) = output.shape();
            grads[out] = Some(self.constant(Array::ones((r, c))));
        }
        for i in (0..=out).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            let node = Var { tape: self, id: i };
            for (p, contrib) in self.backward(node, &op, g, &needs) {
                grads[p] = Some(match grads[p] {
                    Some(acc) => acc + contrib,
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match w.id <= out {
                true => grads[w.id].unwrap_or_else(|| {
                    let (r, c) = w.shape();
                    self.zeros(r, c)
                }),
                false => {
                    let (r, c) = w.shape();
                    self.zeros(r, c)
                }
            })
            .collect()
    }

    /// Same as [`Tape::grad`] but returns plain arrays.
    pub fn grad_values<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Array> {
        self.grad(output, wrt)
            .into_iter()
            .map(|g| (*g.value()).clone())
            .collect()
    }

    fn backward<'t>(
        &'t self,
        node: Var<'t>,
        op: &Op,
        g: Var<'t>,
        needs: &[bool],
    ) -> Vec<(usize, Var<'t>)> {
        let var = |id: usize| Var { tape: self, id };
        let mut out = Vec::with_capacity(2);
        let mut emit = |p: usize, f: &dyn Fn() -> Var<'t>| {
            if needs[p] {
                out.push((p, f()));
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| g.sum_to(var(*a).shape()));
                emit(*b, &|| g.sum_to(var(*b).shape()));
            }
            Op::Sub(a, b) => {
                emit(*a, &|| g.sum_to(var(*a).shape()));
                emit(*b, &|| (-g).sum_to(var(*b).shape()));
            }
            Op::Mul(a, b) => {
                emit(*a, &|| (g * var(*b)).sum_to(var(*a).shape()));
                emit(*b, &|| (g * var(*a)).sum_to(var(*b).shape()));
            }
            Op::Div(a, b) => {
                emit(*a, &|| (g / var(*b)).sum_to(var(*a).shape()));
                emit(*b, &|| (-(g * node) / var(*b)).sum_to(var(*b).shape()));
            }
            Op::Scale(a, c) => emit(*a, &|| g * *c),
            Op::Offset(a) => emit(*a, &|| g),
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (var(*a), var(*b));
                match (ta, tb) {
                    (false, false) => {
                        emit(*a, &|| g.mm(bv, false, true));
                        emit(*b, &|| av.mm(g, true, false));
                    }
                    (false, true) => {
                        emit(*a, &|| g.mm(bv, false, false));
                        emit(*b, &|| g.mm(av, true, false));
                    }
                    (true, false) => {
                        emit(*a, &|| bv.mm(g, false, true));
                        emit(*b, &|| av.mm(g, false, false));
                    }
                    (true, true) => {
                        emit(*a, &|| bv.mm(g, true, true));
                        emit(*b, &|| g.mm(av, true, true));
                    }
                }
            }
            Op::Transpose(a) => emit(*a, &|| g.t()),
            Op::SumRows(a) | Op::SumCols(a) => {
                let (r, c) = var(*a).shape();
                emit(*a, &|| g.broadcast_to(r, c));
            }
            Op::Broadcast(a) => emit(*a, &|| g.sum_to(var(*a).shape())),
            Op::Exp(a) => emit(*a, &|| g * node),
            Op::Ln(a) => emit(*a, &|| g * var(*a).recip()),
            Op::Sqrt(a) => emit(*a, &|| g * node.recip() * 0.5),
            Op::Recip(a) => emit(*a, &|| -(g * node * node)),
            Op::Sigmoid(a) => emit(*a, &|| g * (node - node * node)),
            Op::Tanh(a) => emit(*a, &|| g - g * node * node),
            Op::Mask(a, m) => emit(*a, &|| g.mask(Rc::clone(m))),
            Op::GatherRows(a, idx) => {
                let rows = var(*a).shape().0;
                emit(*a, &|| g.scatter_rows(Rc::clone(idx), rows));
            }
            Op::ScatterRows(a, idx) => emit(*a, &|| g.gather_rows_rc(Rc::clone(idx))),
            Op::Pick(a, idx) => {
                let (r, c) = var(*a).shape();
                emit(*a, &|| g.place_rc(Rc::clone(idx), r, c));
            }
            Op::Place(a, idx) => {
                let (r, c) = var(*a).shape();
                emit(*a, &|| g.pick_rc(Rc::clone(idx), r, c));
            }
            Op::Reshape(a) => {
                let (r, c) = var(*a).shape();
                emit(*a, &|| g.reshape(r, c));
            }
            Op::SliceCols(a, start) => {
                let total = var(*a).shape().1;
                emit(*a, &|| g.pad_cols(*start, total));
            }
            Op::PadCols(a, start) => {
                let width = var(*a).shape().1;
                emit(*a, &|| g.slice_cols(*start, width));
            }
            Op::SliceRows(a, start) => {
                let total = var(*a).shape().0;
                emit(*a, &|| g.pad_rows(*start, total));
            }
            Op::PadRows(a, start) => {
                let height = var(*a).shape().0;
                emit(*a, &|| g.slice_rows(*start, height));
            }
            Op::External(list) => {
                for (p, grad) in list.iter() {
                    emit(*p, &|| g * self.leaf(Rc::clone(grad)));
                }
            }
        }
        out
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| match (x, y) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("incompatible shapes {a:?} and {b:?}"),
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn zip_broadcast(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let shape = broadcast_shape(a.dim(), b.dim());
    if a.dim() == shape && b.dim() == shape {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        return out;
    }
    let av = a.broadcast(shape).expect("broadcast lhs");
    let bv = b.broadcast(shape).expect("broadcast rhs");
    let mut out = Array::zeros(shape);
    ndarray::Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    /// Value of a 1×1 variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar {:?}", v.dim());
        v[[0, 0]]
    }

    /// Same value, cut off from the gradient graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.leaf(self.value())
    }

    fn unary(&self, f: impl Fn(&Array) -> Array, op: Op) -> Var<'t> {
        let v = f(&self.value());
        self.tape.push(v, op)
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let v = zip_broadcast(&self.value(), &other.value(), f);
        self.tape.push(v, op)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn mm(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let av = if ta { a.t() } else { a.view() };
        let bv = if tb { b.t() } else { b.view() };
        assert_eq!(
            av.ncols(),
            bv.nrows(),
            "matmul shape mismatch {:?} x {:?}",
            av.dim(),
            bv.dim()
        );
        let v = av.dot(&bv);
        self.tape.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.mm(other, false, false)
    }

    pub fn t(self) -> Var<'t> {
        self.unary(|a| a.t().to_owned(), Op::Transpose(self.id))
    }

    /// Column sums as a 1×C row.
    pub fn sum_rows(self) -> Var<'t> {
        self.unary(
            |a| a.sum_axis(Axis(0)).insert_axis(Axis(0)),
            Op::SumRows(self.id),
        )
    }

    /// Row sums as an N×1 column.
    pub fn sum_cols(self) -> Var<'t> {
        self.unary(
            |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::SumCols(self.id),
        )
    }

    pub fn sum(self) -> Var<'t> {
        self.sum_rows().sum_cols()
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum() * (1.0 / (r * c) as f64)
    }

    pub fn broadcast_to(self, rows: usize, cols: usize) -> Var<'t> {
        if self.shape() == (rows, cols) {
            return self;
        }
        self.unary(
            |a| a.broadcast((rows, cols)).expect("broadcast").to_owned(),
            Op::Broadcast(self.id),
        )
    }

    /// Sums broadcast dimensions away so the result has `shape`.
    pub fn sum_to(self, shape: (usize, usize)) -> Var<'t> {
        let mut v = self;
        let (r, c) = v.shape();
        if shape.0 == 1 && r != 1 {
            v = v.sum_rows();
        }
        if shape.1 == 1 && c != 1 {
            v = v.sum_cols();
        }
        assert_eq!(v.shape(), shape, "sum_to cannot reach {shape:?}");
        v
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(|a| a.mapv(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(|a| a.mapv(f64::ln), Op::Ln(self.id))
    }

    /// Square root; its derivative is taken as zero where the value is zero.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(|a| a.mapv(f64::sqrt), Op::Sqrt(self.id))
    }

    /// Reciprocal with `1/0` defined as `0`.
    pub fn recip(self) -> Var<'t> {
        self.unary(
            |a| a.mapv(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
            Op::Recip(self.id),
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(|a| a.mapv(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(|a| a.mapv(f64::tanh), Op::Tanh(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mask(self, mask: Rc<Array>) -> Var<'t> {
        let v = &*self.value() * &*mask;
        self.tape.push(v, Op::Mask(self.id, mask))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let mask = self.value().mapv(|x| if x > 0.0 { 1.0 } else { slope });
        self.mask(Rc::new(mask))
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    /// Selects rows by index; [`ZERO_ROW`] yields a zero row.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        self.gather_rows_rc(idx.into())
    }

    fn gather_rows_rc(self, idx: Rc<[usize]>) -> Var<'t> {
        let a = self.value();
        let (n, c) = a.dim();
        let src = a.as_slice().expect("standard layout");
        let mut out = vec![0.0; idx.len() * c];
        for (k, &r) in idx.iter().enumerate() {
            if r == ZERO_ROW {
                continue;
            }
            assert!(r < n, "gather index {r} out of range {n}");
            out[k * c..(k + 1) * c].copy_from_slice(&src[r * c..(r + 1) * c]);
        }
        let v = Array::from_shape_vec((idx.len(), c), out).expect("shape");
        self.tape.push(v, Op::GatherRows(self.id, idx))
    }

    /// Adds row `k` into row `idx[k]` of an `rows`-row zero matrix.
    pub fn scatter_rows(self, idx: Rc<[usize]>, rows: usize) -> Var<'t> {
        let a = self.value();
        let c = a.ncols();
        assert_eq!(a.nrows(), idx.len());
        let src = a.as_slice().expect("standard layout");
        let mut out = vec![0.0; rows * c];
        for (k, &r) in idx.iter().enumerate() {
            if r == ZERO_ROW {
                continue;
            }
            let dst = &mut out[r * c..(r + 1) * c];
            for (d, s) in dst.iter_mut().zip(&src[k * c..(k + 1) * c]) {
                *d += s;
            }
        }
        let v = Array::from_shape_vec((rows, c), out).expect("shape");
        self.tape.push(v, Op::ScatterRows(self.id, idx))
    }

    /// Builds a `rows`×`cols` matrix whose flat entry `k` is flat entry
    /// `idx[k]` of `self`.
    pub fn pick(self, idx: &[usize], rows: usize, cols: usize) -> Var<'t> {
        self.pick_rc(idx.into(), rows, cols)
    }

    fn pick_rc(self, idx: Rc<[usize]>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(idx.len(), rows * cols);
        let a = self.value();
        let src = a.as_slice().expect("standard layout");
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let v = Array::from_shape_vec((rows, cols), out).expect("shape");
        self.tape.push(v, Op::Pick(self.id, idx))
    }

    fn place_rc(self, idx: Rc<[usize]>, rows: usize, cols: usize) -> Var<'t> {
        let a = self.value();
        let src = a.as_slice().expect("standard layout");
        let mut out = vec![0.0; rows * cols];
        for (k, &i) in idx.iter().enumerate() {
            out[i] += src[k];
        }
        let v = Array::from_shape_vec((rows, cols), out).expect("shape");
        self.tape.push(v, Op::Place(self.id, idx))
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r * c, rows * cols, "reshape {r}x{c} -> {rows}x{cols}");
        self.unary(
            |a| {
                Array::from_shape_vec((rows, cols), a.iter().copied().collect()).expect("reshape")
            },
            Op::Reshape(self.id),
        )
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Var<'t> {
        self.unary(
            |a| a.slice(ndarray::s![.., start..start + width]).to_owned(),
            Op::SliceCols(self.id, start),
        )
    }

    /// Embeds `self` into a zero matrix of `total` columns at column `start`.
    pub fn pad_cols(self, start: usize, total: usize) -> Var<'t> {
        self.unary(
            |a| {
                let mut out = Array::zeros((a.nrows(), total));
                out.slice_mut(ndarray::s![.., start..start + a.ncols()])
                    .assign(a);
                out
            },
            Op::PadCols(self.id, start),
        )
    }

    pub fn slice_rows(self, start: usize, height: usize) -> Var<'t> {
        self.unary(
            |a| a.slice(ndarray::s![start..start + height, ..]).to_owned(),
            Op::SliceRows(self.id, start),
        )
    }

    pub fn pad_rows(self, start: usize, total: usize) -> Var<'t> {
        self.unary(
            |a| {
                let mut out = Array::zeros((total, a.ncols()));
                out.slice_mut(ndarray::s![start..start + a.nrows(), ..])
                    .assign(a);
                out
            },
            Op::PadRows(self.id, start),
        )
    }

    /// Coordinate-wise maximum over consecutive blocks of `group` rows.
    ///
    /// Ties resolve to the first row of the block.
    pub fn max_groups(self, group: usize) -> Var<'t> {
        let a = self.value();
        let (n, c) = a.dim();
        assert!(group >= 1 && n % group == 0, "{n} rows not divisible by {group}");
        let m = n / group;
        let src = a.as_slice().expect("standard layout");
        let mut idx = Vec::with_capacity(m * c);
        for g in 0..m {
            for j in 0..c {
                let mut best = g * group * c + j;
                for r in 1..group {
                    let k = (g * group + r) * c + j;
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                idx.push(best);
            }
        }
        self.pick(&idx, m, c)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(self) -> Var<'t> {
        let a = self.value();
        let max = a.map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)));
        let shift = self.tape.constant(max.insert_axis(Axis(1)));
        let e = (self - shift).exp();
        e / e.sum_cols()
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let total: usize = parts.iter().map(|p| p.shape().1).sum();
        let mut start = 0;
        let mut acc: Option<Var<'t>> = None;
        for p in parts {
            let w = p.shape().1;
            let padded = p.pad_cols(start, total);
            start += w;
            acc = Some(match acc {
                Some(a) => a + padded,
                None => padded,
            });
        }
        acc.expect("concat of zero parts")
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let total: usize = parts.iter().map(|p| p.shape().0).sum();
        let mut start = 0;
        let mut acc: Option<Var<'t>> = None;
        for p in parts {
            let h = p.shape().0;
            let padded = p.pad_rows(start, total);
            start += h;
            acc = Some(match acc {
                Some(a) => a + padded,
                None => padded,
            });
        }
        acc.expect("concat of zero parts")
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

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, |x, y| x + y, Op::Add(self.id, rhs.id))
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, |x, y| x - y, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, |x, y| x * y, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, |x, y| x / y, Op::Div(self.id, rhs.id))
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(|a| a * c, Op::Scale(self.id, c))
    }
}

impl<'t> ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(|a| a + c, Op::Offset(self.id))
    }
}

impl<'t> ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self * -1.0
    }
}
