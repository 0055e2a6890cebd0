//! Raw compute routines shared by the recording forward pass, the backward
//! pass, and the tape-free inference path, so both paths produce
//! bitwise-identical values.
//!
//! Every loop runs sequentially with a fixed index order; dot products use a
//! fixed four-way accumulator split. Nothing here allocates besides the
//! explicitly returned buffers.
//!
//! Layout conventions: matrices are row-major; activation tensors are
//! `[batch, channel, node, step]` with the step axis contiguous.

#![allow(clippy::too_many_arguments)] // raw kernels take flat dimension lists on purpose

use crate::scalar::Scalar;

/// Dot product with four accumulators (fixed lane assignment, so results
/// are reproducible and the compiler can pipeline the adds).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `out[m*n] = a[m*k] * b[k*n]`, accumulating over `k` in ascending order.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m*n] = a[m*k] * b^T` where `b` is stored `[n*k]`.
///
/// Both factors are read row-wise, so `out[i*n+j]` and a later
/// `matmul_nt(b, a)[j*m+i]` evaluate the same products in the same order.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m*n] = a^T * b` where `a` is stored `[k*m]` and `b` is `[k*n]`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = T::zero());
    for l in 0..k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &ali) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += ali * bv;
            }
        }
    }
}

/// Valid (no padding) convolution along the step axis.
///
/// `x` is `[b, c_in, n, s]`, `w` is `[c_out, c_in, l]` flattened, `out` is
/// `[b, c_out, n, s - l + 1]`.
pub fn conv1d<T: Scalar>(
    x: &[T],
    w: &[T],
    b: usize,
    c_in: usize,
    n: usize,
    s: usize,
    c_out: usize,
    l: usize,
    out: &mut [T],
) {
    let s_out = s - l + 1;
    debug_assert_eq!(x.len(), b * c_in * n * s);
    debug_assert_eq!(w.len(), c_out * c_in * l);
    debug_assert_eq!(out.len(), b * c_out * n * s_out);
    out.iter_mut().for_each(|v| *v = T::zero());
    for bi in 0..b {
        for o in 0..c_out {
            for c in 0..c_in {
                let w_oc = &w[(o * c_in + c) * l..(o * c_in + c + 1) * l];
                for ni in 0..n {
                    let x_row = &x[((bi * c_in + c) * n + ni) * s..][..s];
                    let out_row = &mut out[((bi * c_out + o) * n + ni) * s_out..][..s_out];
                    for (li, &wl) in w_oc.iter().enumerate() {
                        let shifted = &x_row[li..li + s_out];
                        for (ov, &xv) in out_row.iter_mut().zip(shifted) {
                            *ov += wl * xv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv1d`] with respect to the input.
pub fn conv1d_bwd_x<T: Scalar>(
    dout: &[T],
    w: &[T],
    b: usize,
    c_in: usize,
    n: usize,
    s: usize,
    c_out: usize,
    l: usize,
    dx: &mut [T],
) {
    let s_out = s - l + 1;
    for bi in 0..b {
        for c in 0..c_in {
            for o in 0..c_out {
                let w_oc = &w[(o * c_in + c) * l..(o * c_in + c + 1) * l];
                for ni in 0..n {
                    let dout_row = &dout[((bi * c_out + o) * n + ni) * s_out..][..s_out];
                    let dx_row = &mut dx[((bi * c_in + c) * n + ni) * s..][..s];
                    for (li, &wl) in w_oc.iter().enumerate() {
                        let target = &mut dx_row[li..li + s_out];
                        for (dv, &gv) in target.iter_mut().zip(dout_row) {
                            *dv += wl * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv1d`] with respect to the weights.
pub fn conv1d_bwd_w<T: Scalar>(
    dout: &[T],
    x: &[T],
    b: usize,
    c_in: usize,
    n: usize,
    s: usize,
    c_out: usize,
    l: usize,
    dw: &mut [T],
) {
    let s_out = s - l + 1;
    for bi in 0..b {
        for o in 0..c_out {
            for c in 0..c_in {
                let dw_oc = &mut dw[(o * c_in + c) * l..(o * c_in + c + 1) * l];
                for ni in 0..n {
                    let x_row = &x[((bi * c_in + c) * n + ni) * s..][..s];
                    let dout_row = &dout[((bi * c_out + o) * n + ni) * s_out..][..s_out];
                    for (li, dwv) in dw_oc.iter_mut().enumerate() {
                        *dwv += dot(dout_row, &x_row[li..li + s_out]);
                    }
                }
            }
        }
    }
}

/// Per-channel linear map: `out[b,o,n,s] = sum_c x[b,c,n,s] * w[c,o]`.
pub fn chan_linear<T: Scalar>(
    x: &[T],
    w: &[T],
    b: usize,
    c_in: usize,
    slab: usize,
    c_out: usize,
    out: &mut [T],
) {
    debug_assert_eq!(x.len(), b * c_in * slab);
    debug_assert_eq!(w.len(), c_in * c_out);
    debug_assert_eq!(out.len(), b * c_out * slab);
    out.iter_mut().for_each(|v| *v = T::zero());
    for bi in 0..b {
        for o in 0..c_out {
            let out_slab = bi * c_out + o;
            for c in 0..c_in {
                let wco = w[c * c_out + o];
                let x_slab = &x[(bi * c_in + c) * slab..][..slab];
                let out_slab = &mut out[out_slab * slab..][..slab];
                for (ov, &xv) in out_slab.iter_mut().zip(x_slab) {
                    *ov += wco * xv;
                }
            }
        }
    }
}

/// Gradient of [`chan_linear`] with respect to the input.
pub fn chan_linear_bwd_x<T: Scalar>(
    dout: &[T],
    w: &[T],
    b: usize,
    c_in: usize,
    slab: usize,
    c_out: usize,
    dx: &mut [T],
) {
    for bi in 0..b {
        for c in 0..c_in {
            for o in 0..c_out {
                let wco = w[c * c_out + o];
                let dout_slab = &dout[(bi * c_out + o) * slab..][..slab];
                let dx_slab = &mut dx[(bi * c_in + c) * slab..][..slab];
                for (dv, &gv) in dx_slab.iter_mut().zip(dout_slab) {
                    *dv += wco * gv;
                }
            }
        }
    }
}

/// Gradient of [`chan_linear`] with respect to the weights.
pub fn chan_linear_bwd_w<T: Scalar>(
    dout: &[T],
    x: &[T],
    b: usize,
    c_in: usize,
    slab: usize,
    c_out: usize,
    dw: &mut [T],
) {
    for bi in 0..b {
        for c in 0..c_in {
            let x_slab = &x[(bi * c_in + c) * slab..][..slab];
            for o in 0..c_out {
                let dout_slab = &dout[(bi * c_out + o) * slab..][..slab];
                dw[c * c_out + o] += dot(x_slab, dout_slab);
            }
        }
    }
}

/// Sparse row storage for an adjacency matrix: only nonzero entries.
#[derive(Debug, Clone)]
pub struct SparseRows<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    /// Collects the nonzero entries of a dense `n x n` matrix.
    pub fn from_dense(a: &[T], n: usize) -> Self {
        debug_assert_eq!(a.len(), n * n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = a[i * n + j];
                if v != T::zero() {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseRows {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Graph propagation `out[b,c,i,s] = sum_j a[i,j] * x[b,c,j,s]`, skipping
/// the structural zeros of `a`.
pub fn node_mix<T: Scalar>(a: &SparseRows<T>, x: &[T], b: usize, c: usize, s: usize, out: &mut [T]) {
    let n = a.n;
    debug_assert_eq!(x.len(), b * c * n * s);
    debug_assert_eq!(out.len(), b * c * n * s);
    out.iter_mut().for_each(|v| *v = T::zero());
    for slab in 0..b * c {
        let x_mat = &x[slab * n * s..][..n * s];
        let out_mat = &mut out[slab * n * s..][..n * s];
        for i in 0..n {
            let (lo, hi) = (a.row_ptr[i], a.row_ptr[i + 1]);
            let out_row = &mut out_mat[i * s..i * s + s];
            for (ji, &aij) in a.cols[lo..hi].iter().zip(&a.vals[lo..hi]) {
                let x_row = &x_mat[*ji * s..][..s];
                for (ov, &xv) in out_row.iter_mut().zip(x_row) {
                    *ov += aij * xv;
                }
            }
        }
    }
}

/// Gradient of [`node_mix`] with respect to the mixed input `x`.
pub fn node_mix_bwd_x<T: Scalar>(
    a: &SparseRows<T>,
    dout: &[T],
    b: usize,
    c: usize,
    s: usize,
    dx: &mut [T],
) {
    let n = a.n;
    for slab in 0..b * c {
        let dout_mat = &dout[slab * n * s..][..n * s];
        let dx_mat = &mut dx[slab * n * s..][..n * s];
        for i in 0..n {
            let (lo, hi) = (a.row_ptr[i], a.row_ptr[i + 1]);
            let dout_row = &dout_mat[i * s..][..s];
            for (ji, &aij) in a.cols[lo..hi].iter().zip(&a.vals[lo..hi]) {
                let dx_row = &mut dx_mat[*ji * s..][..s];
                for (dv, &gv) in dx_row.iter_mut().zip(dout_row) {
                    *dv += aij * gv;
                }
            }
        }
    }
}

/// Gradient of [`node_mix`] with respect to the adjacency, evaluated only
/// at its structurally nonzero positions. Entries of `da` at structural
/// zeros are left untouched; callers that need those gradients must use a
/// dense adjacency. In the nowcasting model the adjacency reaching this op
/// has passed through top-k pruning, whose backward discards exactly the
/// positions skipped here, so the composition is exact.
pub fn node_mix_bwd_a<T: Scalar>(
    a: &SparseRows<T>,
    x: &[T],
    dout: &[T],
    b: usize,
    c: usize,
    s: usize,
    da: &mut [T],
) {
    let n = a.n;
    debug_assert_eq!(da.len(), n * n);
    for slab in 0..b * c {
        let x_mat = &x[slab * n * s..][..n * s];
        let dout_mat = &dout[slab * n * s..][..n * s];
        for i in 0..n {
            let (lo, hi) = (a.row_ptr[i], a.row_ptr[i + 1]);
            let dout_row = &dout_mat[i * s..][..s];
            for ji in lo..hi {
                let j = a.cols[ji];
                da[i * n + j] += dot(dout_row, &x_mat[j * s..][..s]);
            }
        }
    }
}

/// Keeps the `k` strongest nonzero entries of every row, zeroing the rest.
///
/// Ties are broken toward the lower column index; rows with fewer than `k`
/// nonzero entries keep exactly their nonzero entries. Returns the pruned
/// dense matrix and the boolean keep-mask. `k` larger than `n` behaves as
/// `k == n`.
pub fn topk_rows<T: Scalar>(a: &[T], n: usize, k: usize) -> (Vec<T>, Vec<bool>) {
    debug_assert_eq!(a.len(), n * n);
    let k = k.min(n);
    let mut out = vec![T::zero(); n * n];
    let mut mask = vec![false; n * n];
    let mut entries: Vec<(T, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        entries.clear();
        entries.extend(
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, v)| (*v, j)),
        );
        entries.sort_unstable_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .expect("adjacency entries must be finite")
                .then(x.1.cmp(&y.1))
        });
        for &(v, j) in entries.iter().take(k) {
            out[i * n + j] = v;
            mask[i * n + j] = true;
        }
    }
    (out, mask)
}

/// Adds self-loops and divides each row by its degree:
/// `out = D^-1 (a + I)` with `D_i = 1 + sum_j a[i,j]`.
///
/// Returns the normalized matrix and the degree vector.
pub fn row_normalize<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    debug_assert_eq!(a.len(), n * n);
    let mut out = vec![T::zero(); n * n];
    let mut deg = vec![T::zero(); n];
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let mut d = T::zero();
        for (j, &v) in row.iter().enumerate() {
            d += if i == j { v + T::one() } else { v };
        }
        deg[i] = d;
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, &v) in row.iter().enumerate() {
            let p = if i == j { v + T::one() } else { v };
            out_row[j] = p / d;
        }
    }
    (out, deg)
}
