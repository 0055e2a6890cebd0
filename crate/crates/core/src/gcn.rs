//! Graph convolution with hop-wise readout.
//!
//! States are propagated `depth` times along a row-stochastic adjacency,
//! and every propagation depth (including hop zero, the input itself)
//! contributes through its own channel-mixing weight:
//!
//! ```text
//! H^0 = X,   H^(l+1) = A_norm H^l,   out = sum_l H^l W_l
//! ```
//!
//! There is no nonlinearity here; saturation lives in the temporal blocks
//! between graph layers. Keeping every hop in the readout lets shallow
//! information bypass the smoothing effect of repeated averaging.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{self, SparseRows};
use crate::tensor::{Param, Tape, Tensor, TensorRef};

/// Per-layer weights: one `[c_in, c_out]` matrix per hop, `depth + 1` in
/// total.
#[derive(Debug, Clone)]
pub struct GcnLayerParams<T: Scalar> {
    pub hop_weights: Vec<Param<T>>,
}

impl<T: Scalar> GcnLayerParams<T> {
    pub fn new<R: Rng>(
        prefix: &str,
        depth: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / (c_in as f64).sqrt();
        let hop_weights = (0..=depth)
            .map(|l| {
                Param::new(
                    &format!("{prefix}.hop{l}.weight"),
                    Tensor::randn(&[c_in, c_out], std, rng),
                )
            })
            .collect();
        GcnLayerParams { hop_weights }
    }

    pub fn depth(&self) -> usize {
        self.hop_weights.len() - 1
    }

    pub fn params(&self) -> Vec<Param<T>> {
        self.hop_weights.clone()
    }
}

fn check_nodes(op: &'static str, a_nodes: usize, x_shape: &[usize]) -> Result<()> {
    if x_shape.len() != 4 || x_shape[2] != a_nodes {
        return Err(CoreError::ShapeMismatch {
            op,
            lhs: vec![a_nodes, a_nodes],
            rhs: x_shape.to_vec(),
        });
    }
    Ok(())
}

/// Records propagation and readout on the tape. `x` is `[b, c_in, n, s]`,
/// `a_norm` a recorded `[n, n]` matrix; output is `[b, c_out, n, s]`.
pub fn gcn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    a_norm: TensorRef,
    layer: &GcnLayerParams<T>,
) -> Result<TensorRef> {
    check_nodes("gcn_forward", tape.shape_of(a_norm)[0], tape.shape_of(x))?;
    let w0 = tape.param(&layer.hop_weights[0]);
    let mut acc = tape.chan_linear(x, w0)?;
    let mut h = x;
    for wl in &layer.hop_weights[1..] {
        h = tape.node_mix(a_norm, h)?;
        let w = tape.param(wl);
        let term = tape.chan_linear(h, w)?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// Tape-free twin of [`gcn_forward`], same kernels in the same order.
pub fn gcn_forward_eval<T: Scalar>(
    x: &Tensor<T>,
    a_norm: &Tensor<T>,
    layer: &GcnLayerParams<T>,
) -> Result<Tensor<T>> {
    check_nodes("gcn_forward", a_norm.shape()[0], x.shape())?;
    let (b, c_in, n, s) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let c_out = layer.hop_weights[0].shape()[1];
    let slab = n * s;
    let sparse = SparseRows::from_dense(a_norm.data(), n);

    let mut acc = vec![T::zero(); b * c_out * slab];
    kernels::chan_linear(
        x.data(),
        layer.hop_weights[0].borrow().data(),
        b,
        c_in,
        slab,
        c_out,
        &mut acc,
    );
    let mut h = x.data().to_vec();
    let mut term = vec![T::zero(); b * c_out * slab];
    let mut mixed = vec![T::zero(); b * c_in * slab];
    for wl in &layer.hop_weights[1..] {
        kernels::node_mix(&sparse, &h, b, c_in, s, &mut mixed);
        std::mem::swap(&mut h, &mut mixed);
        kernels::chan_linear(&h, wl.borrow().data(), b, c_in, slab, c_out, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += *t;
        }
    }
    Tensor::from_vec(vec![b, c_out, n, s], acc)
}
