//! Gated inception convolutions over the step axis.
//!
//! An inception module runs several valid convolutions of different kernel
//! lengths in parallel, truncates every branch to the shortest resulting
//! extent by keeping the *last* steps (the most recent information), and
//! concatenates the branch channels. A gated block pairs two such modules:
//!
//! ```text
//! gated(x) = tanh(inception_f(x)) * sigmoid(inception_g(x))
//! ```
//!
//! so every output lies strictly inside (-1, 1) and the sigmoid side
//! learns how much of each filtered signal to pass. Each block shortens
//! the extent by `max(kernel) - 1`; stacking blocks collapses an input
//! window toward a single step.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels;
use crate::tensor::{Param, Tape, Tensor, TensorRef};

/// One inception module: a weight tensor per kernel length plus a shared
/// output bias. `c_out` must be divisible by the number of kernels; each
/// branch produces `c_out / len` channels.
#[derive(Debug, Clone)]
pub struct InceptionParams<T: Scalar> {
    pub kernel_lengths: Vec<usize>,
    pub weights: Vec<Param<T>>,
    pub bias: Param<T>,
}

impl<T: Scalar> InceptionParams<T> {
    pub fn new<R: Rng>(
        prefix: &str,
        kernel_lengths: &[usize],
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_lengths.is_empty() {
            return Err(CoreError::InvalidConfig(
                "at least one kernel length is required".into(),
            ));
        }
        if kernel_lengths.contains(&0) {
            return Err(CoreError::InvalidConfig(
                "kernel lengths must be positive".into(),
            ));
        }
        if !c_out.is_multiple_of(kernel_lengths.len()) {
            return Err(CoreError::InvalidConfig(format!(
                "output channels {c_out} not divisible by {} kernel branches",
                kernel_lengths.len()
            )));
        }
        let branch_c = c_out / kernel_lengths.len();
        let weights = kernel_lengths
            .iter()
            .map(|&l| {
                let std = 1.0 / ((c_in * l) as f64).sqrt();
                Param::new(
                    &format!("{prefix}.k{l}.weight"),
                    Tensor::randn(&[branch_c, c_in, 1, l], std, rng),
                )
            })
            .collect();
        let bias = Param::new(&format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
        Ok(InceptionParams {
            kernel_lengths: kernel_lengths.to_vec(),
            weights,
            bias,
        })
    }

    pub fn max_kernel(&self) -> usize {
        *self.kernel_lengths.iter().max().expect("non-empty")
    }

    /// Output extent for an input of `s` steps.
    pub fn out_len(&self, s: usize) -> Result<usize> {
        let max_l = self.max_kernel();
        if max_l > s {
            return Err(CoreError::KernelTooLong {
                kernel: max_l,
                extent: s,
            });
        }
        Ok(s - max_l + 1)
    }

    pub fn params(&self) -> Vec<Param<T>> {
        let mut out: Vec<Param<T>> = self.weights.clone();
        out.push(self.bias.clone());
        out
    }
}

/// Records the inception module on the tape: convolve per kernel, keep the
/// trailing steps of each branch, concatenate channels, add bias.
pub fn inception_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    p: &InceptionParams<T>,
) -> Result<TensorRef> {
    let s = tape.shape_of(x)[3];
    let keep = p.out_len(s)?;
    let mut branches = Vec::with_capacity(p.weights.len());
    for w in &p.weights {
        let wr = tape.param(w);
        let conv = tape.conv1d(x, wr)?;
        branches.push(tape.time_tail(conv, keep)?);
    }
    let cat = tape.channel_concat(&branches)?;
    let bias = tape.param(&p.bias);
    tape.bias_add(cat, bias)
}

/// Tape-free twin of [`inception_forward`].
pub fn inception_forward_eval<T: Scalar>(x: &Tensor<T>, p: &InceptionParams<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(CoreError::ShapeMismatch {
            op: "inception_forward",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let (b, c_in, n, s) = (shape[0], shape[1], shape[2], shape[3]);
    let keep = p.out_len(s)?;
    let branch_c = p.weights[0].shape()[0];
    let c_out = branch_c * p.weights.len();
    let mut out = vec![T::zero(); b * c_out * n * keep];
    let mut conv_buf = Vec::new();
    for (wi, w) in p.weights.iter().enumerate() {
        let l = p.kernel_lengths[wi];
        let s_out = s - l + 1;
        conv_buf.clear();
        conv_buf.resize(b * branch_c * n * s_out, T::zero());
        kernels::conv1d(
            x.data(),
            w.borrow().data(),
            b,
            c_in,
            n,
            s,
            branch_c,
            l,
            &mut conv_buf,
        );
        // Copy the trailing `keep` steps into the concatenated layout.
        let skip = s_out - keep;
        for bi in 0..b {
            for c in 0..branch_c {
                for ni in 0..n {
                    let src = ((bi * branch_c + c) * n + ni) * s_out + skip;
                    let dst = ((bi * c_out + wi * branch_c + c) * n + ni) * keep;
                    out[dst..dst + keep].copy_from_slice(&conv_buf[src..src + keep]);
                }
            }
        }
    }
    let bias = p.bias.borrow();
    let slab = n * keep;
    for bi in 0..b {
        for c in 0..c_out {
            let bv = bias.data()[c];
            for v in &mut out[(bi * c_out + c) * slab..(bi * c_out + c + 1) * slab] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(vec![b, c_out, n, keep], out)
}

/// A gated block: filter and gate inception modules with shared geometry.
#[derive(Debug, Clone)]
pub struct GatedBlockParams<T: Scalar> {
    pub filter: InceptionParams<T>,
    pub gate: InceptionParams<T>,
}

impl<T: Scalar> GatedBlockParams<T> {
    pub fn new<R: Rng>(
        prefix: &str,
        kernel_lengths: &[usize],
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GatedBlockParams {
            filter: InceptionParams::new(
                &format!("{prefix}.filter"),
                kernel_lengths,
                c_in,
                c_out,
                rng,
            )?,
            gate: InceptionParams::new(
                &format!("{prefix}.gate"),
                kernel_lengths,
                c_in,
                c_out,
                rng,
            )?,
        })
    }

    pub fn out_len(&self, s: usize) -> Result<usize> {
        self.filter.out_len(s)
    }

    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = self.filter.params();
        out.extend(self.gate.params());
        out
    }
}

/// Records `tanh(filter(x)) * sigmoid(gate(x))` on the tape.
pub fn gated_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    p: &GatedBlockParams<T>,
) -> Result<TensorRef> {
    let f = inception_forward(tape, x, &p.filter)?;
    let f = tape.tanh(f);
    let g = inception_forward(tape, x, &p.gate)?;
    let g = tape.sigmoid(g);
    tape.mul(f, g)
}

/// Tape-free twin of [`gated_forward`].
pub fn gated_forward_eval<T: Scalar>(x: &Tensor<T>, p: &GatedBlockParams<T>) -> Result<Tensor<T>> {
    let mut f = inception_forward_eval(x, &p.filter)?;
    for v in f.data_mut() {
        *v = v.tanh();
    }
    let g = inception_forward_eval(x, &p.gate)?;
    let one = T::one();
    let data: Vec<T> = f
        .data()
        .iter()
        .zip(g.data())
        .map(|(fv, gv)| *fv * (one / (one + (-*gv).exp())))
        .collect();
    Tensor::from_vec(f.shape().to_vec(), data)
}
