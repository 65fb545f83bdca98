//! Reverse-mode automatic differentiation on an eager tape.
//!
//! Every operation records a node holding its computed value; `backward`
//! walks the tape in reverse and *emits the vector-Jacobian products as
//! new tape nodes*. Gradients are therefore ordinary differentiable
//! values, and differentiating a recorded gradient (as the meta update
//! requires) needs no special casing: call `backward` again on a scalar
//! built from gradient nodes.
//!
//! The operator set is scoped to what the model needs: embedding
//! gather/scatter, dense affine layers, relu/sigmoid/row-softmax, the
//! elementwise algebra of the losses, and the tiling/reduction ops their
//! VJPs close over. Tensors are dense 2-D arrays; scalars are 1x1.

pub mod adam;
pub mod gradcheck;
pub mod meta;

use std::cell::RefCell;
use std::fmt;
use std::iter::Sum;
use std::rc::Rc;

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

/// Scalar types the engine runs on. 64-bit is the default for tests and
/// gradient checks; 32-bit is selectable for full training runs.
pub trait Real:
    Float
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Handle to a node on a tape. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

/// Recorded operation. Parent node ids are embedded per variant;
/// scalar/size payloads are kept even where the VJP recovers them from
/// shapes, so `{:?}` diagnostics show the full op.
#[derive(Debug, Clone)]
#[allow(dead_code)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Exp(usize),
    Ln(usize),
    ClampMin(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    MatMulNN(usize, usize),
    MatMulNT(usize, usize),
    MatMulTN(usize, usize),
    AddRowBias(usize, usize),
    RowSums(usize),
    ColSums(usize),
    SumAll(usize),
    TileCols(usize, usize),
    TileRows(usize, usize),
    TileTo(usize, usize, usize),
    GatherRows(usize, Rc<Vec<u32>>),
    ScatterRows(usize, Rc<Vec<u32>>, usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    PadCols(usize, usize, usize),
    SliceRows(usize, usize, usize),
    PadRows(usize, usize, usize),
    Reshape(usize, usize, usize),
}

impl Op {
    fn parents(&self, out: &mut Vec<usize>) {
        out.clear();
        match self {
            Op::Leaf => {}
            Op::ConcatCols(ps) => out.extend_from_slice(ps),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMulNN(a, b)
            | Op::MatMulNT(a, b)
            | Op::MatMulTN(a, b)
            | Op::AddRowBias(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::ClampMin(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::RowSums(a)
            | Op::ColSums(a)
            | Op::SumAll(a)
            | Op::TileCols(a, _)
            | Op::TileRows(a, _)
            | Op::TileTo(a, _, _)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::PadCols(a, _, _)
            | Op::SliceRows(a, _, _)
            | Op::PadRows(a, _, _)
            | Op::Reshape(a, _, _) => out.push(*a),
        }
    }
}

struct Node<T> {
    value: Array2<T>,
    op: Op,
    requires_grad: bool,
}

/// Eager computation tape. One tape per training step; dropped wholesale.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    checked: bool,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            checked: false,
        }
    }

    /// A tape that verifies every produced value is finite and returns
    /// `Error::NonFinite` from `finite_check` when one is not.
    pub fn checked() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Array2<T>, op: Op, requires_grad: bool) -> Var {
        if self.checked {
            debug_assert!(
                value.iter().all(|v| v.is_finite()),
                "non-finite value from {op:?}"
            );
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Clone out the value of a node.
    pub fn value(&self, v: Var) -> Array2<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Value of a 1x1 node as f64.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.dim(), (1, 1), "scalar_value on non-scalar node");
        val[(0, 0)].to_f64()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Returns an error naming the first node with a non-finite value,
    /// scanning from `from` onward. Cheap when the range is short.
    pub fn finite_check(&self, from: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        for (i, n) in nodes.iter().enumerate().skip(from) {
            if !n.value.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("tape node {i} ({:?})", n.op),
                });
            }
        }
        Ok(())
    }

    // ---- leaves -------------------------------------------------------

    /// Trainable leaf: gradients flow into it.
    pub fn param(&self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient path.
    pub fn constant(&self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_const(&self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), T::from_f64(x)))
    }

    /// Copy a node's value into a fresh constant leaf, severing the
    /// gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant(value)
    }

    // ---- elementwise --------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            debug_assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value + &nodes[b.0].value
        };
        self.push(v, Op::Add(a.0, b.0), self.rg(a) || self.rg(b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            debug_assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value - &nodes[b.0].value
        };
        self.push(v, Op::Sub(a.0, b.0), self.rg(a) || self.rg(b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            debug_assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value * &nodes[b.0].value
        };
        self.push(v, Op::Mul(a.0, b.0), self.rg(a) || self.rg(b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            debug_assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value / &nodes[b.0].value
        };
        self.push(v, Op::Div(a.0, b.0), self.rg(a) || self.rg(b))
    }

    pub fn neg(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(|x| -x);
        self.push(v, Op::Neg(a.0), self.rg(a))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x * cv);
        self.push(v, Op::Scale(a.0, c), self.rg(a))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x + cv);
        self.push(v, Op::AddScalar(a.0, c), self.rg(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x.exp());
        self.push(v, Op::Exp(a.0), self.rg(a))
    }

    /// Natural log. Inputs must be positive; compose with `clamp_min`
    /// (see `ln_stable`) when zeros are possible.
    pub fn ln(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x.ln());
        self.push(v, Op::Ln(a.0), self.rg(a))
    }

    pub fn clamp_min(&self, a: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let v = self.nodes.borrow()[a.0].value.mapv(|x| if x < cv { cv } else { x });
        self.push(v, Op::ClampMin(a.0, c), self.rg(a))
    }

    /// ln(max(x, eps)) with the crate-wide log clamp.
    pub fn ln_stable(&self, a: Var) -> Var {
        let c = self.clamp_min(a, crate::confdist::LOG_EPS);
        self.ln(c)
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn relu(&self, a: Var) -> Var {
        let z = T::zero();
        let v = self.nodes.borrow()[a.0].value.mapv(|x| if x > z { x } else { z });
        self.push(v, Op::Relu(a.0), self.rg(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let one = T::one();
        let v = self.nodes.borrow()[a.0].value.mapv(|x| one / (one + (-x).exp()));
        self.push(v, Op::Sigmoid(a.0), self.rg(a))
    }

    /// Row-wise softmax with max subtraction for stability. Outputs are
    /// strictly positive and each row sums to 1.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let z = row.iter().cloned().sum::<T>();
                row.mapv_inplace(|v| v / z);
            }
            out
        };
        self.push(v, Op::SoftmaxRows(a.0), self.rg(a))
    }

    // ---- linear algebra ------------------------------------------------

    /// a (m,k) x b (k,n) -> (m,n)
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.dot(&nodes[b.0].value)
        };
        self.push(v, Op::MatMulNN(a.0, b.0), self.rg(a) || self.rg(b))
    }

    /// a (m,k) x b^T (k,n) -> (m,n) where b is (n,k)
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.dot(&nodes[b.0].value.t())
        };
        self.push(v, Op::MatMulNT(a.0, b.0), self.rg(a) || self.rg(b))
    }

    /// a^T (m,k) x b (m,n) -> (k,n) where a is (m,k)
    pub fn matmul_tn(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.t().dot(&nodes[b.0].value)
        };
        self.push(v, Op::MatMulTN(a.0, b.0), self.rg(a) || self.rg(b))
    }

    /// x (m,k) + bias (1,k) broadcast over rows.
    pub fn add_row_bias(&self, x: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let bv = &nodes[b.0].value;
            debug_assert_eq!(bv.dim().0, 1);
            debug_assert_eq!(xv.dim().1, bv.dim().1);
            xv + &bv.broadcast(xv.dim()).expect("bias broadcast")
        };
        self.push(v, Op::AddRowBias(x.0, b.0), self.rg(x) || self.rg(b))
    }

    /// Fully connected layer: x (m,in) * w (in,out) + b (1,out).
    pub fn affine(&self, x: Var, w: Var, b: Var) -> Var {
        let mm = self.matmul(x, w);
        self.add_row_bias(mm, b)
    }

    // ---- reductions and tiling ------------------------------------------

    /// (m,k) -> (m,1)
    pub fn row_sums(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = Array2::zeros((x.dim().0, 1));
            for (i, row) in x.rows().into_iter().enumerate() {
                out[(i, 0)] = row.iter().cloned().sum::<T>();
            }
            out
        };
        self.push(v, Op::RowSums(a.0), self.rg(a))
    }

    /// (m,k) -> (1,k)
    pub fn col_sums(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = Array2::zeros((1, x.dim().1));
            for row in x.rows() {
                for (j, &xv) in row.iter().enumerate() {
                    out[(0, j)] += xv;
                }
            }
            out
        };
        self.push(v, Op::ColSums(a.0), self.rg(a))
    }

    /// (m,k) -> (1,1)
    pub fn sum_all(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let s = nodes[a.0].value.iter().cloned().sum::<T>();
            Array2::from_elem((1, 1), s)
        };
        self.push(v, Op::SumAll(a.0), self.rg(a))
    }

    /// (m,k) -> (1,1) mean
    pub fn mean_all(&self, a: Var) -> Var {
        let n = {
            let nodes = self.nodes.borrow();
            let (r, c) = nodes[a.0].value.dim();
            (r * c) as f64
        };
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// (m,1) -> (m,k) repeating the single column.
    pub fn tile_cols(&self, a: Var, k: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            debug_assert_eq!(x.dim().1, 1);
            let mut out = Array2::zeros((x.dim().0, k));
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                row.fill(x[(i, 0)]);
            }
            out
        };
        self.push(v, Op::TileCols(a.0, k), self.rg(a))
    }

    /// (1,k) -> (m,k) repeating the single row.
    pub fn tile_rows(&self, a: Var, m: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            debug_assert_eq!(x.dim().0, 1);
            let mut out = Array2::zeros((m, x.dim().1));
            for mut row in out.rows_mut() {
                row.assign(&x.row(0));
            }
            out
        };
        self.push(v, Op::TileRows(a.0, m), self.rg(a))
    }

    /// (1,1) -> (m,k) filled with the scalar.
    pub fn tile_to(&self, a: Var, m: usize, k: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            debug_assert_eq!(x.dim(), (1, 1));
            Array2::from_elem((m, k), x[(0, 0)])
        };
        self.push(v, Op::TileTo(a.0, m, k), self.rg(a))
    }

    // ---- structural ------------------------------------------------------

    /// Select rows of a table by index: out[i] = table[idx[i]].
    pub fn gather_rows(&self, table: Var, idx: Rc<Vec<u32>>) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].value;
            let mut out = Array2::zeros((idx.len(), t.dim().1));
            for (i, &j) in idx.iter().enumerate() {
                out.row_mut(i).assign(&t.row(j as usize));
            }
            out
        };
        self.push(v, Op::GatherRows(table.0, idx), self.rg(table))
    }

    /// Accumulate rows of x into a zero (n_rows, cols) table at idx:
    /// out[idx[i]] += x[i]. Adjoint of `gather_rows`.
    pub fn scatter_rows(&self, x: Var, idx: Rc<Vec<u32>>, n_rows: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            debug_assert_eq!(xv.dim().0, idx.len());
            let mut out = Array2::zeros((n_rows, xv.dim().1));
            for (i, &j) in idx.iter().enumerate() {
                let mut dst = out.row_mut(j as usize);
                dst += &xv.row(i);
            }
            out
        };
        self.push(v, Op::ScatterRows(x.0, idx, n_rows), self.rg(x))
    }

    /// Concatenate along columns; all parts share the row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let v = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.dim().0;
            let total: usize = parts.iter().map(|p| nodes[p.0].value.dim().1).sum();
            let mut out = Array2::zeros((rows, total));
            let mut at = 0;
            for p in parts {
                let pv = &nodes[p.0].value;
                debug_assert_eq!(pv.dim().0, rows);
                let w = pv.dim().1;
                out.slice_mut(ndarray::s![.., at..at + w]).assign(pv);
                at += w;
            }
            out
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.slice(ndarray::s![.., start..start + len]).to_owned()
        };
        self.push(v, Op::SliceCols(a.0, start, len), self.rg(a))
    }

    /// Embed (m,len) into zero-padded (m,total) at column offset start.
    pub fn pad_cols(&self, a: Var, start: usize, total: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = Array2::zeros((x.dim().0, total));
            out.slice_mut(ndarray::s![.., start..start + x.dim().1]).assign(x);
            out
        };
        self.push(v, Op::PadCols(a.0, start, total), self.rg(a))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.slice(ndarray::s![start..start + len, ..]).to_owned()
        };
        self.push(v, Op::SliceRows(a.0, start, len), self.rg(a))
    }

    /// Embed (len,k) into zero-padded (total,k) at row offset start.
    pub fn pad_rows(&self, a: Var, start: usize, total: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut out = Array2::zeros((total, x.dim().1));
            out.slice_mut(ndarray::s![start..start + x.dim().0, ..]).assign(x);
            out
        };
        self.push(v, Op::PadRows(a.0, start, total), self.rg(a))
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            debug_assert_eq!(x.len(), rows * cols);
            Array2::from_shape_vec((rows, cols), x.iter().cloned().collect())
                .expect("reshape size mismatch")
        };
        self.push(v, Op::Reshape(a.0, rows, cols), self.rg(a))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a scalar root. Returns one gradient node
    /// per entry of `wrt`, a zero tensor where no path exists. The
    /// gradients are tape nodes and can themselves be differentiated.
    pub fn backward(&self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(root) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward".into(),
                details: format!("root must be scalar, got {:?}", self.shape(root)),
            });
        }
        let horizon = self.nodes.borrow().len();
        let mut adj: Vec<Option<Var>> = vec![None; horizon];
        adj[root.0] = Some(self.scalar_const(1.0));

        let mut parents = Vec::with_capacity(4);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i] else { continue };
            let (op, requires_grad) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), nodes[i].requires_grad)
            };
            if !requires_grad {
                continue;
            }
            op.parents(&mut parents);
            let contribs = self.vjp(&op, i, g);
            debug_assert_eq!(contribs.len(), parents.len());
            let parent_list = parents.clone();
            for (p, c) in parent_list.iter().zip(contribs) {
                let Some(c) = c else { continue };
                if !self.nodes.borrow()[*p].requires_grad {
                    continue;
                }
                adj[*p] = Some(match adj[*p] {
                    Some(acc) => self.add(acc, c),
                    None => c,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                adj.get(w.0).copied().flatten().unwrap_or_else(|| {
                    let (r, c) = self.shape(*w);
                    self.constant(Array2::zeros((r, c)))
                })
            })
            .collect())
    }

    /// `backward` and extract the numeric gradient arrays.
    pub fn backward_values(&self, root: Var, wrt: &[Var]) -> Result<Vec<Array2<T>>> {
        let grads = self.backward(root, wrt)?;
        Ok(grads.into_iter().map(|g| self.value(g)).collect())
    }

    /// Emit the VJP contributions of node `i` (with adjoint `g`) to each
    /// of its parents, in `Op::parents` order. Rules are expressed in
    /// terms of tape nodes (outputs where that keeps higher derivatives
    /// exact), so emitted gradients remain differentiable.
    fn vjp(&self, op: &Op, i: usize, g: Var) -> Vec<Option<Var>> {
        let out = Var(i);
        match op {
            Op::Leaf => vec![],
            Op::Add(_, _) => vec![Some(g), Some(g)],
            Op::Sub(_, _) => vec![Some(g), Some(self.neg(g))],
            Op::Mul(a, b) => {
                vec![Some(self.mul(g, Var(*b))), Some(self.mul(g, Var(*a)))]
            }
            Op::Div(_, b) => {
                // d(a/b): da = g/b ; db = -g*(a/b)/b = -g*out/b
                let da = self.div(g, Var(*b));
                let t = self.mul(g, out);
                let db = self.neg(self.div(t, Var(*b)));
                vec![Some(da), Some(db)]
            }
            Op::Neg(_) => vec![Some(self.neg(g))],
            Op::Scale(_, c) => vec![Some(self.scale(g, *c))],
            Op::AddScalar(_, _) => vec![Some(g)],
            Op::Exp(_) => vec![Some(self.mul(g, out))],
            Op::Ln(a) => vec![Some(self.div(g, Var(*a)))],
            Op::ClampMin(a, c) => {
                let cv = T::from_f64(*c);
                let mask = {
                    let nodes = self.nodes.borrow();
                    nodes[*a].value.mapv(|x| if x > cv { T::one() } else { T::zero() })
                };
                let m = self.constant(mask);
                vec![Some(self.mul(g, m))]
            }
            Op::Relu(a) => {
                let z = T::zero();
                let mask = {
                    let nodes = self.nodes.borrow();
                    nodes[*a].value.mapv(|x| if x > z { T::one() } else { T::zero() })
                };
                let m = self.constant(mask);
                vec![Some(self.mul(g, m))]
            }
            Op::Sigmoid(_) => {
                // da = g * y * (1 - y), via the output node
                let gy = self.mul(g, out);
                let gyy = self.mul(gy, out);
                vec![Some(self.sub(gy, gyy))]
            }
            Op::SoftmaxRows(_) => {
                // da = y * (g - rowsum(g*y))
                let k = self.shape(out).1;
                let gy = self.mul(g, out);
                let rs = self.row_sums(gy);
                let rs_t = self.tile_cols(rs, k);
                let centered = self.sub(g, rs_t);
                vec![Some(self.mul(out, centered))]
            }
            Op::MatMulNN(a, b) => {
                vec![
                    Some(self.matmul_nt(g, Var(*b))),
                    Some(self.matmul_tn(Var(*a), g)),
                ]
            }
            Op::MatMulNT(a, b) => {
                // out = a b^T ; da = g b ; db = g^T a
                vec![
                    Some(self.matmul(g, Var(*b))),
                    Some(self.matmul_tn(g, Var(*a))),
                ]
            }
            Op::MatMulTN(a, b) => {
                // out = a^T b ; da = b g^T ; db = a g
                vec![
                    Some(self.matmul_nt(Var(*b), g)),
                    Some(self.matmul(Var(*a), g)),
                ]
            }
            Op::AddRowBias(_, _) => vec![Some(g), Some(self.col_sums(g))],
            Op::RowSums(a) => {
                let k = self.shape(Var(*a)).1;
                vec![Some(self.tile_cols(g, k))]
            }
            Op::ColSums(a) => {
                let m = self.shape(Var(*a)).0;
                vec![Some(self.tile_rows(g, m))]
            }
            Op::SumAll(a) => {
                let (m, k) = self.shape(Var(*a));
                vec![Some(self.tile_to(g, m, k))]
            }
            Op::TileCols(_, _) => vec![Some(self.row_sums(g))],
            Op::TileRows(_, _) => vec![Some(self.col_sums(g))],
            Op::TileTo(_, _, _) => vec![Some(self.sum_all(g))],
            Op::GatherRows(a, idx) => {
                let n = self.shape(Var(*a)).0;
                vec![Some(self.scatter_rows(g, idx.clone(), n))]
            }
            Op::ScatterRows(_, idx, _) => {
                vec![Some(self.gather_rows(g, idx.clone()))]
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                let mut out_grads = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.shape(Var(*p)).1;
                    out_grads.push(Some(self.slice_cols(g, at, w)));
                    at += w;
                }
                out_grads
            }
            Op::SliceCols(a, start, _) => {
                let total = self.shape(Var(*a)).1;
                vec![Some(self.pad_cols(g, *start, total))]
            }
            Op::PadCols(a, start, _) => {
                let len = self.shape(Var(*a)).1;
                vec![Some(self.slice_cols(g, *start, len))]
            }
            Op::SliceRows(a, start, _) => {
                let total = self.shape(Var(*a)).0;
                vec![Some(self.pad_rows(g, *start, total))]
            }
            Op::PadRows(a, start, _) => {
                let len = self.shape(Var(*a)).0;
                vec![Some(self.slice_rows(g, *start, len))]
            }
            Op::Reshape(a, _, _) => {
                let (r, c) = self.shape(Var(*a));
                vec![Some(self.reshape(g, r, c))]
            }
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
