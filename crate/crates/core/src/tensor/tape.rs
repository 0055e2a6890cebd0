//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] records one forward computation as a vector of nodes; every
//! operation validates shapes, evaluates eagerly through the kernels in
//! [`super::kernels`], and appends a node that remembers its inputs by
//! index. Because an operation can only reference nodes recorded before it,
//! walking the tape backwards visits each node exactly once and needs no
//! explicit topological sort.
//!
//! [`Tape::backward`] consumes the tape: gradients land in the [`Param`]
//! leaves and all intermediate buffers are dropped. Recording a fresh tape
//! per step keeps memory bounded by one forward pass.
//!
//! The tape is single-threaded; tensors moving in and out of it are plain
//! values.

use super::kernels::{self, SparseRows};
use super::{Param, Tensor};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Index of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf {
        param: Option<Param<T>>,
    },
    Matmul {
        a: TensorRef,
        b: TensorRef,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `a * b^T` with `b` stored row-major `[n, k]`.
    MatmulNt {
        a: TensorRef,
        b: TensorRef,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: TensorRef,
        b: TensorRef,
    },
    Sub {
        a: TensorRef,
        b: TensorRef,
    },
    Mul {
        a: TensorRef,
        b: TensorRef,
    },
    Scale {
        a: TensorRef,
        c: T,
    },
    Tanh {
        a: TensorRef,
    },
    Sigmoid {
        a: TensorRef,
    },
    Relu {
        a: TensorRef,
    },
    Abs {
        a: TensorRef,
    },
    Conv1d {
        x: TensorRef,
        w: TensorRef,
        b: usize,
        c_in: usize,
        n: usize,
        s: usize,
        c_out: usize,
        l: usize,
    },
    BiasAdd {
        x: TensorRef,
        bias: TensorRef,
        b: usize,
        c: usize,
        slab: usize,
    },
    ChanLinear {
        x: TensorRef,
        w: TensorRef,
        b: usize,
        c_in: usize,
        slab: usize,
        c_out: usize,
    },
    NodeMix {
        a: TensorRef,
        x: TensorRef,
        sparse: SparseRows<T>,
        b: usize,
        c: usize,
        s: usize,
    },
    TopK {
        a: TensorRef,
        mask: Vec<bool>,
    },
    RowNormalize {
        a: TensorRef,
        deg: Vec<T>,
    },
    TimeTail {
        x: TensorRef,
        rows: usize,
        s: usize,
        keep: usize,
    },
    ChannelConcat {
        parts: Vec<(TensorRef, usize)>,
        b: usize,
        slab: usize,
    },
    L1Loss {
        pred: TensorRef,
        target: TensorRef,
    },
    SumAll {
        a: TensorRef,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of a recorded tensor.
    pub fn value(&self, r: TensorRef) -> &[T] {
        &self.nodes[r.0].data
    }

    pub fn shape_of(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.0].shape
    }

    /// Copies a recorded tensor out of the tape.
    pub fn tensor(&self, r: TensorRef) -> Tensor<T> {
        Tensor::from_vec(self.nodes[r.0].shape.clone(), self.nodes[r.0].data.clone())
            .expect("tape nodes are internally consistent")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs(&self, r: TensorRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    /// Records a tensor that does not require gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> TensorRef {
        let shape = t.shape().to_vec();
        let data = t.into_data();
        self.push(shape, data, Op::Leaf { param: None }, false)
    }

    /// Records the current value of a trainable parameter; backward will
    /// accumulate into the parameter's gradient buffer.
    pub fn param(&mut self, p: &Param<T>) -> TensorRef {
        let t = p.borrow();
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        let needs = t.requires_grad();
        drop(t);
        self.push(
            shape,
            data,
            Op::Leaf {
                param: Some(p.clone()),
            },
            needs,
        )
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: TensorRef,
        b: TensorRef,
    ) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(CoreError::ShapeMismatch {
                op: op_name,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("add", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("sub", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| *x - *y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("mul", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| *x * *y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: TensorRef, c: T) -> TensorRef {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|x| *x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(shape, data, Op::Scale { a, c }, ng)
    }

    fn unary(&mut self, a: TensorRef, f: impl Fn(T) -> T, op: Op<T>) -> TensorRef {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|x| f(*x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(shape, data, op, ng)
    }

    pub fn tanh(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x.tanh(), Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> TensorRef {
        self.unary(
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            Op::Sigmoid { a },
        )
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu { a },
        )
    }

    pub fn abs(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x.abs(), Op::Abs { a })
    }

    fn matmul_dims(
        &self,
        op: &'static str,
        a: TensorRef,
        b: TensorRef,
        transposed_b: bool,
    ) -> Result<(usize, usize, usize)> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        let mismatch = || CoreError::ShapeMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, kb) = if transposed_b {
            (sb[0], sb[1])
        } else {
            (sb[1], sb[0])
        };
        if k != kb {
            return Err(mismatch());
        }
        Ok((m, k, n))
    }

    /// `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k, n) = self.matmul_dims("matmul", a, b, false)?;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b, m, k, n }, ng))
    }

    /// `a[m,k] * transpose(b[n,k])`.
    pub fn matmul_nt(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k, n) = self.matmul_dims("matmul_nt", a, b, true)?;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nt(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatmulNt { a, b, m, k, n }, ng))
    }

    fn bcns(&self, op: &'static str, x: TensorRef) -> Result<(usize, usize, usize, usize)> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 4 {
            return Err(CoreError::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    /// Valid convolution along the step axis; `w` is `[c_out, c_in, 1, l]`.
    pub fn conv1d(&mut self, x: TensorRef, w: TensorRef) -> Result<TensorRef> {
        let (b, c_in, n, s) = self.bcns("conv1d", x)?;
        let ws = self.nodes[w.0].shape.clone();
        if ws.len() != 4 || ws[1] != c_in || ws[2] != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "conv1d",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: ws,
            });
        }
        let (c_out, l) = (ws[0], ws[3]);
        if l == 0 || l > s {
            return Err(CoreError::KernelTooLong { kernel: l, extent: s });
        }
        let s_out = s - l + 1;
        let mut out = vec![T::zero(); b * c_out * n * s_out];
        kernels::conv1d(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            b,
            c_in,
            n,
            s,
            c_out,
            l,
            &mut out,
        );
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(
            vec![b, c_out, n, s_out],
            out,
            Op::Conv1d {
                x,
                w,
                b,
                c_in,
                n,
                s,
                c_out,
                l,
            },
            ng,
        ))
    }

    /// Adds a per-channel bias to a `[b, c, n, s]` tensor.
    pub fn bias_add(&mut self, x: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let (b, c, n, s) = self.bcns("bias_add", x)?;
        if self.nodes[bias.0].shape != [c] {
            return Err(CoreError::ShapeMismatch {
                op: "bias_add",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let slab = n * s;
        let mut data = self.nodes[x.0].data.clone();
        for bi in 0..b {
            for ci in 0..c {
                let bv = self.nodes[bias.0].data[ci];
                for v in &mut data[(bi * c + ci) * slab..(bi * c + ci + 1) * slab] {
                    *v += bv;
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(shape, data, Op::BiasAdd { x, bias, b, c, slab }, ng))
    }

    /// Per-channel linear map with weights `[c_in, c_out]`.
    pub fn chan_linear(&mut self, x: TensorRef, w: TensorRef) -> Result<TensorRef> {
        let (b, c_in, n, s) = self.bcns("chan_linear", x)?;
        let ws = self.nodes[w.0].shape.clone();
        if ws.len() != 2 || ws[0] != c_in {
            return Err(CoreError::ShapeMismatch {
                op: "chan_linear",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: ws,
            });
        }
        let c_out = ws[1];
        let slab = n * s;
        let mut out = vec![T::zero(); b * c_out * slab];
        kernels::chan_linear(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            b,
            c_in,
            slab,
            c_out,
            &mut out,
        );
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(
            vec![b, c_out, n, s],
            out,
            Op::ChanLinear {
                x,
                w,
                b,
                c_in,
                slab,
                c_out,
            },
            ng,
        ))
    }

    /// Propagates node state along an `[n, n]` adjacency:
    /// `out[b,c,i,s] = sum_j a[i,j] x[b,c,j,s]`.
    ///
    /// Gradients with respect to `a` are accumulated only at its nonzero
    /// positions (see [`kernels::node_mix_bwd_a`]).
    pub fn node_mix(&mut self, a: TensorRef, x: TensorRef) -> Result<TensorRef> {
        let (b, c, n, s) = self.bcns("node_mix", x)?;
        let sa = self.nodes[a.0].shape.clone();
        if sa != [n, n] {
            return Err(CoreError::ShapeMismatch {
                op: "node_mix",
                lhs: sa,
                rhs: self.nodes[x.0].shape.clone(),
            });
        }
        let sparse = SparseRows::from_dense(&self.nodes[a.0].data, n);
        let mut out = vec![T::zero(); b * c * n * s];
        kernels::node_mix(&sparse, &self.nodes[x.0].data, b, c, s, &mut out);
        let ng = self.needs(a) || self.needs(x);
        Ok(self.push(
            vec![b, c, n, s],
            out,
            Op::NodeMix {
                a,
                x,
                sparse,
                b,
                c,
                s,
            },
            ng,
        ))
    }

    /// Keeps the `k` strongest nonzero entries per row of a square matrix.
    /// The keep-mask is treated as constant by backward.
    pub fn topk_rows(&mut self, a: TensorRef, k: usize) -> Result<TensorRef> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() != 2 || sa[0] != sa[1] {
            return Err(CoreError::ShapeMismatch {
                op: "topk_rows",
                lhs: sa,
                rhs: vec![],
            });
        }
        let n = sa[0];
        let (out, mask) = kernels::topk_rows(&self.nodes[a.0].data, n, k);
        let ng = self.needs(a);
        Ok(self.push(sa, out, Op::TopK { a, mask }, ng))
    }

    /// Adds self-loops and row-normalizes a square nonnegative matrix.
    pub fn row_normalize(&mut self, a: TensorRef) -> Result<TensorRef> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() != 2 || sa[0] != sa[1] {
            return Err(CoreError::ShapeMismatch {
                op: "row_normalize",
                lhs: sa,
                rhs: vec![],
            });
        }
        let n = sa[0];
        let (out, deg) = kernels::row_normalize(&self.nodes[a.0].data, n);
        let ng = self.needs(a);
        Ok(self.push(sa, out, Op::RowNormalize { a, deg }, ng))
    }

    /// Keeps the trailing `keep` steps of the step axis.
    pub fn time_tail(&mut self, x: TensorRef, keep: usize) -> Result<TensorRef> {
        let (b, c, n, s) = self.bcns("time_tail", x)?;
        if keep == 0 || keep > s {
            return Err(CoreError::KernelTooLong {
                kernel: keep,
                extent: s,
            });
        }
        let rows = b * c * n;
        let skip = s - keep;
        let mut out = vec![T::zero(); rows * keep];
        for r in 0..rows {
            out[r * keep..(r + 1) * keep]
                .copy_from_slice(&self.nodes[x.0].data[r * s + skip..(r + 1) * s]);
        }
        let ng = self.needs(x);
        Ok(self.push(
            vec![b, c, n, keep],
            out,
            Op::TimeTail { x, rows, s, keep },
            ng,
        ))
    }

    /// Concatenates `[b, c_i, n, s]` tensors along the channel axis.
    pub fn channel_concat(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        assert!(!parts.is_empty(), "channel_concat needs at least one part");
        let (b, _, n, s) = self.bcns("channel_concat", parts[0])?;
        let mut total_c = 0;
        let mut tagged = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pb, pc, pn, ps) = self.bcns("channel_concat", p)?;
            if (pb, pn, ps) != (b, n, s) {
                return Err(CoreError::ShapeMismatch {
                    op: "channel_concat",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            tagged.push((p, pc));
            total_c += pc;
        }
        let slab = n * s;
        let mut out = vec![T::zero(); b * total_c * slab];
        for bi in 0..b {
            let mut c_off = 0;
            for &(p, pc) in &tagged {
                let src = &self.nodes[p.0].data[bi * pc * slab..(bi + 1) * pc * slab];
                let dst_start = (bi * total_c + c_off) * slab;
                out[dst_start..dst_start + pc * slab].copy_from_slice(src);
                c_off += pc;
            }
        }
        let ng = tagged.iter().any(|&(p, _)| self.needs(p));
        Ok(self.push(
            vec![b, total_c, n, s],
            out,
            Op::ChannelConcat {
                parts: tagged,
                b,
                slab,
            },
            ng,
        ))
    }

    /// Mean absolute error between two same-shape tensors, as a scalar.
    pub fn l1_loss(&mut self, pred: TensorRef, target: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("l1_loss", pred, target)?;
        let p = &self.nodes[pred.0].data;
        let t = &self.nodes[target.0].data;
        let mut acc = T::zero();
        for (x, y) in p.iter().zip(t) {
            acc += (*x - *y).abs();
        }
        let mean = acc / T::from_usize(p.len());
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(vec![1], vec![mean], Op::L1Loss { pred, target }, ng))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: TensorRef) -> TensorRef {
        let mut acc = T::zero();
        for v in &self.nodes[a.0].data {
            acc += *v;
        }
        let ng = self.needs(a);
        self.push(vec![1], vec![acc], Op::SumAll { a }, ng)
    }

    /// Runs reverse-mode accumulation from a scalar loss, consuming the
    /// tape. Parameter gradients are *added* to whatever the parameters
    /// already hold, matching gradient accumulation across micro-batches.
    pub fn backward(self, loss: TensorRef) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(CoreError::NotScalar {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = nodes.iter().map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        // Helper: fetch-or-create the gradient buffer of `idx` if that node
        // participates in differentiation.
        macro_rules! buf {
            ($idx:expr) => {{
                let i = $idx.0;
                if nodes[i].needs_grad {
                    Some(
                        grads[i]
                            .get_or_insert_with(|| vec![T::zero(); nodes[i].data.len()])
                            .as_mut_slice(),
                    )
                } else {
                    None
                }
            }};
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            match &nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        let mut t = p.borrow_mut();
                        if t.requires_grad() {
                            t.accumulate_grad(&g);
                        }
                    }
                }
                Op::Matmul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if let Some(da) = buf!(a) {
                        let mut tmp = vec![T::zero(); m * k];
                        kernels::matmul_nt(&g, &nodes[b.0].data, m, n, k, &mut tmp);
                        for (d, t) in da.iter_mut().zip(&tmp) {
                            *d += *t;
                        }
                    }
                    if let Some(db) = buf!(b) {
                        let mut tmp = vec![T::zero(); k * n];
                        kernels::matmul_tn(&nodes[a.0].data, &g, m, k, n, &mut tmp);
                        for (d, t) in db.iter_mut().zip(&tmp) {
                            *d += *t;
                        }
                    }
                }
                Op::MatmulNt { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if let Some(da) = buf!(a) {
                        let mut tmp = vec![T::zero(); m * k];
                        kernels::matmul(&g, &nodes[b.0].data, m, n, k, &mut tmp);
                        for (d, t) in da.iter_mut().zip(&tmp) {
                            *d += *t;
                        }
                    }
                    if let Some(db) = buf!(b) {
                        let mut tmp = vec![T::zero(); n * k];
                        kernels::matmul_tn(&g, &nodes[a.0].data, m, n, k, &mut tmp);
                        for (d, t) in db.iter_mut().zip(&tmp) {
                            *d += *t;
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(da) = buf!(a) {
                        for (d, gv) in da.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    }
                    if let Some(db) = buf!(b) {
                        for (d, gv) in db.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if let Some(da) = buf!(a) {
                        for (d, gv) in da.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    }
                    if let Some(db) = buf!(b) {
                        for (d, gv) in db.iter_mut().zip(&g) {
                            *d -= *gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(da) = buf!(a) {
                        for ((d, gv), bv) in da.iter_mut().zip(&g).zip(&nodes[b.0].data) {
                            *d += *gv * *bv;
                        }
                    }
                    if let Some(db) = buf!(b) {
                        for ((d, gv), av) in db.iter_mut().zip(&g).zip(&nodes[a.0].data) {
                            *d += *gv * *av;
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let c = *c;
                    if let Some(da) = buf!(a) {
                        for (d, gv) in da.iter_mut().zip(&g) {
                            *d += *gv * c;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = &nodes[i].data;
                    if let Some(da) = buf!(a) {
                        for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                            *d += *gv * (T::one() - *yv * *yv);
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let y = &nodes[i].data;
                    if let Some(da) = buf!(a) {
                        for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                            *d += *gv * *yv * (T::one() - *yv);
                        }
                    }
                }
                Op::Relu { a } => {
                    let x = &nodes[a.0].data;
                    if let Some(da) = buf!(a) {
                        for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                            if *xv > T::zero() {
                                *d += *gv;
                            }
                        }
                    }
                }
                Op::Abs { a } => {
                    let x = &nodes[a.0].data;
                    if let Some(da) = buf!(a) {
                        for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                            if *xv > T::zero() {
                                *d += *gv;
                            } else if *xv < T::zero() {
                                *d -= *gv;
                            }
                        }
                    }
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    c_in,
                    n,
                    s,
                    c_out,
                    l,
                } => {
                    let (b, c_in, n, s, c_out, l) = (*b, *c_in, *n, *s, *c_out, *l);
                    if let Some(dx) = buf!(x) {
                        kernels::conv1d_bwd_x(&g, &nodes[w.0].data, b, c_in, n, s, c_out, l, dx);
                    }
                    if let Some(dw) = buf!(w) {
                        kernels::conv1d_bwd_w(&g, &nodes[x.0].data, b, c_in, n, s, c_out, l, dw);
                    }
                }
                Op::BiasAdd { x, bias, b, c, slab } => {
                    let (b, c, slab) = (*b, *c, *slab);
                    if let Some(dx) = buf!(x) {
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    }
                    if let Some(db) = buf!(bias) {
                        for bi in 0..b {
                            for ci in 0..c {
                                let mut acc = T::zero();
                                for gv in &g[(bi * c + ci) * slab..(bi * c + ci + 1) * slab] {
                                    acc += *gv;
                                }
                                db[ci] += acc;
                            }
                        }
                    }
                }
                Op::ChanLinear {
                    x,
                    w,
                    b,
                    c_in,
                    slab,
                    c_out,
                } => {
                    let (b, c_in, slab, c_out) = (*b, *c_in, *slab, *c_out);
                    if let Some(dx) = buf!(x) {
                        kernels::chan_linear_bwd_x(&g, &nodes[w.0].data, b, c_in, slab, c_out, dx);
                    }
                    if let Some(dw) = buf!(w) {
                        kernels::chan_linear_bwd_w(&g, &nodes[x.0].data, b, c_in, slab, c_out, dw);
                    }
                }
                Op::NodeMix {
                    a,
                    x,
                    sparse,
                    b,
                    c,
                    s,
                } => {
                    let (b, c, s) = (*b, *c, *s);
                    if let Some(dx) = buf!(x) {
                        kernels::node_mix_bwd_x(sparse, &g, b, c, s, dx);
                    }
                    if let Some(da) = buf!(a) {
                        kernels::node_mix_bwd_a(sparse, &nodes[x.0].data, &g, b, c, s, da);
                    }
                }
                Op::TopK { a, mask } => {
                    if let Some(da) = buf!(a) {
                        for ((d, gv), keep) in da.iter_mut().zip(&g).zip(mask) {
                            if *keep {
                                *d += *gv;
                            }
                        }
                    }
                }
                Op::RowNormalize { a, deg } => {
                    let n = deg.len();
                    let y = &nodes[i].data;
                    if let Some(da) = buf!(a) {
                        for r in 0..n {
                            let g_row = &g[r * n..(r + 1) * n];
                            let y_row = &y[r * n..(r + 1) * n];
                            let mut dot_gy = T::zero();
                            for (gv, yv) in g_row.iter().zip(y_row) {
                                dot_gy += *gv * *yv;
                            }
                            let d_row = &mut da[r * n..(r + 1) * n];
                            let inv_d = T::one() / deg[r];
                            for (dv, gv) in d_row.iter_mut().zip(g_row) {
                                *dv += (*gv - dot_gy) * inv_d;
                            }
                        }
                    }
                }
                Op::TimeTail { x, rows, s, keep } => {
                    let (rows, s, keep) = (*rows, *s, *keep);
                    let skip = s - keep;
                    if let Some(dx) = buf!(x) {
                        for r in 0..rows {
                            let src = &g[r * keep..(r + 1) * keep];
                            let dst = &mut dx[r * s + skip..(r + 1) * s];
                            for (d, gv) in dst.iter_mut().zip(src) {
                                *d += *gv;
                            }
                        }
                    }
                }
                Op::ChannelConcat { parts, b, slab } => {
                    let (b, slab) = (*b, *slab);
                    let total_c: usize = parts.iter().map(|&(_, c)| c).sum();
                    // Clone the part list so `g` can be sliced per part.
                    let parts = parts.clone();
                    for bi in 0..b {
                        let mut c_off = 0;
                        for &(p, pc) in &parts {
                            if let Some(dp) = buf!(p) {
                                let src_start = (bi * total_c + c_off) * slab;
                                let dst = &mut dp[bi * pc * slab..(bi + 1) * pc * slab];
                                let src = &g[src_start..src_start + pc * slab];
                                for (d, gv) in dst.iter_mut().zip(src) {
                                    *d += *gv;
                                }
                            }
                            c_off += pc;
                        }
                    }
                }
                Op::L1Loss { pred, target } => {
                    let p = &nodes[pred.0].data;
                    let t = &nodes[target.0].data;
                    let inv_n = T::one() / T::from_usize(p.len());
                    let g0 = g[0];
                    if let Some(dp) = buf!(pred) {
                        for ((d, pv), tv) in dp.iter_mut().zip(p).zip(t) {
                            let diff = *pv - *tv;
                            if diff > T::zero() {
                                *d += g0 * inv_n;
                            } else if diff < T::zero() {
                                *d -= g0 * inv_n;
                            }
                        }
                    }
                    if let Some(dt) = buf!(target) {
                        for ((d, pv), tv) in dt.iter_mut().zip(p).zip(t) {
                            let diff = *pv - *tv;
                            if diff > T::zero() {
                                *d -= g0 * inv_n;
                            } else if diff < T::zero() {
                                *d += g0 * inv_n;
                            }
                        }
                    }
                }
                Op::SumAll { a } => {
                    let g0 = g[0];
                    if let Some(da) = buf!(a) {
                        for d in da.iter_mut() {
                            *d += g0;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
