//! Learned sparse adjacency over grid cells.
//!
//! Two independent embedding matrices are pushed through per-side linear
//! maps and a saturating nonlinearity; the difference of their cross
//! products is squashed and rectified:
//!
//! ```text
//! M1 = tanh(alpha * E1 * Theta1)
//! M2 = tanh(alpha * E2 * Theta2)
//! A  = relu(tanh(alpha * (M1 M2^T - M2 M1^T)))
//! ```
//!
//! The antisymmetric difference means at most one of `A[i][j]` and
//! `A[j][i]` is nonzero, so the learned graph is directed: influence flows
//! one way between any pair of cells. This holds *exactly* in floating
//! point, because both cross products evaluate the same dot products in the
//! same index order, making `D[i][j]` the exact negation of `D[j][i]`.
//!
//! The dense result is pruned to the `k` strongest neighbours per row and
//! row-normalized with self-loops before propagation.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels;
use crate::tensor::{Param, Tape, Tensor, TensorRef};

/// Standard deviation for embedding and projection initialization.
const INIT_STD: f64 = 0.1;

/// Trainable state defining the graph: two embedding matrices, their
/// linear projections, and the saturation gain.
#[derive(Debug, Clone)]
pub struct NodeEmbeddings<T: Scalar> {
    pub e1: Param<T>,
    pub e2: Param<T>,
    pub theta1: Param<T>,
    pub theta2: Param<T>,
    pub alpha: T,
}

impl<T: Scalar> NodeEmbeddings<T> {
    /// Fresh embeddings with entries drawn from N(0, 0.1).
    pub fn new<R: Rng>(n_node: usize, d_emb: usize, alpha: T, rng: &mut R) -> Self {
        NodeEmbeddings {
            e1: Param::new("embeddings.e1", Tensor::randn(&[n_node, d_emb], INIT_STD, rng)),
            e2: Param::new("embeddings.e2", Tensor::randn(&[n_node, d_emb], INIT_STD, rng)),
            theta1: Param::new(
                "embeddings.theta1",
                Tensor::randn(&[d_emb, d_emb], INIT_STD, rng),
            ),
            theta2: Param::new(
                "embeddings.theta2",
                Tensor::randn(&[d_emb, d_emb], INIT_STD, rng),
            ),
            alpha,
        }
    }

    pub fn n_node(&self) -> usize {
        self.e1.shape()[0]
    }

    pub fn d_emb(&self) -> usize {
        self.e1.shape()[1]
    }

    pub fn params(&self) -> Vec<Param<T>> {
        vec![
            self.e1.clone(),
            self.e2.clone(),
            self.theta1.clone(),
            self.theta2.clone(),
        ]
    }
}

/// Records the adjacency computation on the tape; output is `[n, n]` with
/// entries in `[0, 1)`.
pub fn learn_adjacency<T: Scalar>(
    tape: &mut Tape<T>,
    emb: &NodeEmbeddings<T>,
) -> Result<TensorRef> {
    let e1 = tape.param(&emb.e1);
    let e2 = tape.param(&emb.e2);
    let t1 = tape.param(&emb.theta1);
    let t2 = tape.param(&emb.theta2);

    let p1 = tape.matmul(e1, t1)?;
    let p1 = tape.scale(p1, emb.alpha);
    let m1 = tape.tanh(p1);

    let p2 = tape.matmul(e2, t2)?;
    let p2 = tape.scale(p2, emb.alpha);
    let m2 = tape.tanh(p2);

    let cross12 = tape.matmul_nt(m1, m2)?;
    let cross21 = tape.matmul_nt(m2, m1)?;
    let diff = tape.sub(cross12, cross21)?;
    let diff = tape.scale(diff, emb.alpha);
    let squashed = tape.tanh(diff);
    Ok(tape.relu(squashed))
}

/// Tape-free twin of [`learn_adjacency`]; bitwise identical to the
/// recorded forward because both run the same kernels in the same order.
pub fn learn_adjacency_eval<T: Scalar>(emb: &NodeEmbeddings<T>) -> Tensor<T> {
    let n = emb.n_node();
    let d = emb.d_emb();
    let project = |e: &Param<T>, theta: &Param<T>| -> Vec<T> {
        let mut m = vec![T::zero(); n * d];
        kernels::matmul(e.borrow().data(), theta.borrow().data(), n, d, d, &mut m);
        for v in &mut m {
            *v = (*v * emb.alpha).tanh();
        }
        m
    };
    let m1 = project(&emb.e1, &emb.theta1);
    let m2 = project(&emb.e2, &emb.theta2);
    let mut cross12 = vec![T::zero(); n * n];
    let mut cross21 = vec![T::zero(); n * n];
    kernels::matmul_nt(&m1, &m2, n, d, n, &mut cross12);
    kernels::matmul_nt(&m2, &m1, n, d, n, &mut cross21);
    let data: Vec<T> = cross12
        .iter()
        .zip(&cross21)
        .map(|(a, b)| {
            let v = ((*a - *b) * emb.alpha).tanh();
            if v > T::zero() {
                v
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(vec![n, n], data).expect("square shape")
}

/// A pruned adjacency: the dense matrix with at most `k` nonzero entries
/// per row, plus the keep-mask that produced it.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph<T: Scalar> {
    pub dense: Tensor<T>,
    /// Effective neighbour budget after clamping to the node count.
    pub k: usize,
    pub mask: Vec<bool>,
}

impl<T: Scalar> AdjacencyGraph<T> {
    pub fn n_node(&self) -> usize {
        self.dense.shape()[0]
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Keeps the `k` strongest nonzero entries of each row.
///
/// `k` greater than the node count is clamped; callers that care (the
/// training loop) surface the clamp in their run log.
pub fn topk_prune<T: Scalar>(a: &Tensor<T>, k: usize) -> Result<AdjacencyGraph<T>> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(CoreError::ShapeMismatch {
            op: "topk_prune",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let n = shape[0];
    if k == 0 {
        return Err(CoreError::InvalidConfig(
            "neighbour budget k must be at least 1".into(),
        ));
    }
    let k = k.min(n);
    let (dense, mask) = kernels::topk_rows(a.data(), n, k);
    Ok(AdjacencyGraph {
        dense: Tensor::from_vec(vec![n, n], dense).expect("square shape"),
        k,
        mask,
    })
}

/// Adds self-loops and row-normalizes: `D^-1 (A + I)`. Rows sum to one, so
/// propagation averages rather than amplifies.
pub fn normalize_adjacency<T: Scalar>(g: &AdjacencyGraph<T>) -> Tensor<T> {
    let n = g.n_node();
    let (out, _) = kernels::row_normalize(g.dense.data(), n);
    Tensor::from_vec(vec![n, n], out).expect("square shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embeddings(n: usize, d: usize, seed: u64) -> NodeEmbeddings<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NodeEmbeddings::new(n, d, 3.0, &mut rng)
    }

    #[test]
    fn zero_embeddings_give_zero_adjacency() {
        let emb = embeddings(4, 3, 0);
        emb.e1.set_values(&[0.0; 12]).unwrap();
        emb.e2.set_values(&[0.0; 12]).unwrap();
        let a = learn_adjacency_eval(&emb);
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_sides_give_zero_adjacency() {
        let emb = embeddings(5, 4, 1);
        emb.e2.set_values(&emb.e1.values()).unwrap();
        emb.theta2.set_values(&emb.theta1.values()).unwrap();
        let a = learn_adjacency_eval(&emb);
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn at_most_one_direction_per_pair_is_nonzero() {
        for seed in 0..20 {
            let emb = embeddings(6, 4, seed);
            let a = learn_adjacency_eval(&emb);
            for i in 0..6 {
                for j in 0..6 {
                    assert_eq!(
                        a.at2(i, j) * a.at2(j, i),
                        0.0,
                        "seed {seed}: both ({i},{j}) and ({j},{i}) nonzero"
                    );
                }
            }
        }
    }

    #[test]
    fn adjacency_entries_live_in_the_unit_interval() {
        let emb = embeddings(8, 5, 3);
        let a = learn_adjacency_eval(&emb);
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn tape_and_eval_paths_agree_bitwise() {
        let emb = embeddings(6, 4, 4);
        let eval = learn_adjacency_eval(&emb);
        let mut tape = Tape::new();
        let a = learn_adjacency(&mut tape, &emb).unwrap();
        assert_eq!(tape.value(a), eval.data());
    }

    #[test]
    fn adjacency_gradients_match_finite_differences() {
        use crate::tensor::gradcheck::check_gradients;
        let emb = embeddings(5, 4, 7);

        // Precondition for differentiability: no pre-rectifier magnitude
        // may sit within the finite-difference step of the kink at zero.
        let a0 = learn_adjacency_eval(&emb);
        let mut min_offdiag = f64::INFINITY;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let v = a0.at2(i, j).max(a0.at2(j, i));
                    min_offdiag = min_offdiag.min(v);
                }
            }
        }
        assert!(min_offdiag > 1e-3, "seed puts an entry too close to zero");

        let params = emb.params();
        let report = check_gradients(
            &params,
            || {
                let mut tape = Tape::new();
                let a = learn_adjacency(&mut tape, &emb)?;
                let loss = tape.sum_all(a);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn prune_clamps_oversized_k_and_counts_nonzeros() {
        let a = Tensor::from_vec(vec![2, 2], vec![0.0, 0.4, 0.2, 0.0]).unwrap();
        let g = topk_prune(&a, 100).unwrap();
        assert_eq!(g.k, 2);
        assert_eq!(g.nnz(), 2);
        assert_eq!(g.dense.data(), a.data());

        assert!(topk_prune(&a, 0).is_err());
        let bad = Tensor::<f64>::zeros(&[2, 3]);
        assert!(topk_prune(&bad, 1).is_err());
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        for seed in 0..5 {
            let emb = embeddings(7, 4, seed);
            let a = learn_adjacency_eval(&emb);
            let g = topk_prune(&a, 3).unwrap();
            let norm = normalize_adjacency(&g);
            for i in 0..7 {
                let sum: f64 = (0..7).map(|j| norm.at2(i, j)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                // Self-loop present even when the row was pruned empty.
                assert!(norm.at2(i, i) > 0.0);
            }
        }
    }
}
