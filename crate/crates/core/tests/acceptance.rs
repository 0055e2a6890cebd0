//! Acceptance gate: ten end-to-end checks that the engine earns its
//! keep, from gradient correctness through full-pipeline learning,
//! reproducibility, and forecast-quality orderings.
//!
//! Each test prints one `[PASS]` line; a failing test reports through
//! the harness as usual. Run with `--nocapture` to see the lines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use gridcast_core::data::io::{read_sequence, write_sequence};
use gridcast_core::data::synth::{synthesize_storms, StormConfig};
use gridcast_core::data::zr::{dbz_to_rainrate, rainrate_to_dbz};
use gridcast_core::gcn::{gcn_forward_eval, GcnLayerParams};
use gridcast_core::graph::{
    learn_adjacency, learn_adjacency_eval, normalize_adjacency, topk_prune, NodeEmbeddings,
};
use gridcast_core::model::ModelForecaster;
use gridcast_core::temporal::{gated_forward, GatedBlockParams};
use gridcast_core::tensor::gradcheck::check_gradients;
use gridcast_core::verify::psd::radial_psd;
use gridcast_core::verify::{ContingencyTable, InputMeanBaseline};
use gridcast_core::{
    evaluate_split, train, EvalOptions, NowcastConfig, NowcastDataset, NowcastModel, Param, Split,
    Tape, Tensor,
};

// ---------------------------------------------------------------------------
// 1. Analytic gradients match central finite differences for every
//    differentiable operation and for the whole model on a 3x3 grid.

#[test]
fn c01_analytic_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut check = |label: &str, report: gridcast_core::tensor::gradcheck::GradCheckReport| {
        assert!(
            report.max_rel_err < 1e-4,
            "{label}: max relative error {} at {:?}",
            report.max_rel_err,
            report.worst
        );
        worst = worst.max(report.max_rel_err);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // matmul (both orientations).
    let a = Param::new("a", Tensor::<f64>::randn(&[3, 4], 0.8, &mut rng));
    let b = Param::new("b", Tensor::<f64>::randn(&[4, 2], 0.8, &mut rng));
    let c = Param::new("c", Tensor::<f64>::randn(&[5, 4], 0.8, &mut rng));
    check(
        "matmul",
        check_gradients(
            &[a.clone(), b.clone()],
            || {
                let mut tape = Tape::new();
                let pa = tape.param(&a);
                let pb = tape.param(&b);
                let prod = tape.matmul(pa, pb)?;
                let loss = tape.sum_all(prod);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );
    check(
        "matmul transposed",
        check_gradients(
            &[a.clone(), c.clone()],
            || {
                let mut tape = Tape::new();
                let pa = tape.param(&a);
                let pc = tape.param(&c);
                let prod = tape.matmul_nt(pa, pc)?;
                let loss = tape.sum_all(prod);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // Temporal convolution with bias.
    let x = Param::new("x", Tensor::<f64>::randn(&[2, 3, 4, 6], 0.8, &mut rng));
    let w = Param::new("w", Tensor::<f64>::randn(&[2, 3, 1, 3], 0.8, &mut rng));
    let bias = Param::new("bias", Tensor::<f64>::randn(&[2], 0.8, &mut rng));
    check(
        "temporal convolution + bias",
        check_gradients(
            &[x.clone(), w.clone(), bias.clone()],
            || {
                let mut tape = Tape::new();
                let px = tape.param(&x);
                let pw = tape.param(&w);
                let pb = tape.param(&bias);
                let conv = tape.conv1d(px, pw)?;
                let biased = tape.bias_add(conv, pb)?;
                let loss = tape.sum_all(biased);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // The elementwise set: add, sub, mul, scale, tanh, sigmoid, relu, abs.
    // Offsets keep every relu/abs input away from the kink at zero.
    let u = Param::new(
        "u",
        Tensor::from_vec(
            vec![6],
            vec![0.7f64, -0.9, 1.3, -1.7, 0.4, -0.2],
        )
        .unwrap(),
    );
    let v = Param::new(
        "v",
        Tensor::from_vec(vec![6], vec![0.3f64, 0.8, -0.5, 0.9, -1.1, 0.6]).unwrap(),
    );
    check(
        "elementwise set",
        check_gradients(
            &[u.clone(), v.clone()],
            || {
                let mut tape = Tape::new();
                let pu = tape.param(&u);
                let pv = tape.param(&v);
                let sum = tape.add(pu, pv)?;
                let diff = tape.sub(pu, pv)?;
                let prod = tape.mul(sum, diff)?;
                let scaled = tape.scale(prod, 0.7);
                let th = tape.tanh(scaled);
                let sg = tape.sigmoid(th);
                let shifted = tape.scale(sg, 3.0); // sigmoid > 0, so 3*sg is kink-free
                let re = tape.relu(shifted);
                let ab = tape.abs(re);
                let loss = tape.sum_all(ab);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // L1 loss (targets offset so no residual sits on the |.| kink).
    let p = Param::new("p", Tensor::<f64>::randn(&[2, 1, 4, 1], 0.8, &mut rng));
    let target = Tensor::<f64>::randn(&[2, 1, 4, 1], 0.8, &mut rng);
    check(
        "l1 loss",
        check_gradients(
            std::slice::from_ref(&p),
            || {
                let mut tape = Tape::new();
                let pp = tape.param(&p);
                let t = tape.constant(target.clone());
                let loss = tape.l1_loss(pp, t)?;
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // Adjacency learner. The antisymmetric construction pins the
    // diagonal at zero for every parameter value, so only off-diagonal
    // magnitudes need to stay clear of the rectifier kink.
    let emb = NodeEmbeddings::<f64>::new(5, 4, 3.0, &mut ChaCha8Rng::seed_from_u64(7));
    let a0 = learn_adjacency_eval(&emb);
    let mut min_offdiag = f64::INFINITY;
    for i in 0..5 {
        for j in 0..5 {
            if i != j {
                min_offdiag = min_offdiag.min(a0.at2(i, j).max(a0.at2(j, i)));
            }
        }
    }
    assert!(min_offdiag > 1e-3, "draw left an entry near the kink");
    check(
        "adjacency learner",
        check_gradients(
            &emb.params(),
            || {
                let mut tape = Tape::new();
                let adj = learn_adjacency(&mut tape, &emb)?;
                let loss = tape.sum_all(adj);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // Graph propagation layer.
    let layer = GcnLayerParams::<f64>::new("gcn", 2, 3, 2, &mut rng);
    let gx = Param::new("gx", Tensor::<f64>::randn(&[2, 3, 4, 3], 0.8, &mut rng));
    let emb4 = NodeEmbeddings::<f64>::new(4, 3, 3.0, &mut rng);
    let a_norm = normalize_adjacency(&topk_prune(&learn_adjacency_eval(&emb4), 2).unwrap());
    let mut gcn_params = layer.params();
    gcn_params.push(gx.clone());
    check(
        "graph propagation",
        check_gradients(
            &gcn_params,
            || {
                let mut tape = Tape::new();
                let px = tape.param(&gx);
                let pa = tape.constant(a_norm.clone());
                let out = gridcast_core::gcn::gcn_forward(&mut tape, px, pa, &layer)?;
                let loss = tape.sum_all(out);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // Gated inception block.
    let block = GatedBlockParams::<f64>::new("blk", &[2, 3], 2, 4, &mut rng).unwrap();
    let bx = Param::new("bx", Tensor::<f64>::randn(&[2, 2, 3, 5], 0.8, &mut rng));
    let mut block_params = block.params();
    block_params.push(bx.clone());
    check(
        "gated temporal block",
        check_gradients(
            &block_params,
            || {
                let mut tape = Tape::new();
                let px = tape.param(&bx);
                let out = gated_forward(&mut tape, px, &block)?;
                let loss = tape.sum_all(out);
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    // The full model on a 3x3 grid.
    let cfg = NowcastConfig {
        input_len: 3,
        horizon: 1,
        channels: 1,
        embed_dim: 2,
        top_k: 2,
        gcn_depth: 1,
        kernel_lengths: vec![2],
        hidden: 2,
        learning_rate: 1e-3,
        weight_decay: 0.0,
        batch_size: 2,
        epochs: 1,
        alpha: 3.0,
        seed: 7,
    };
    let model = NowcastModel::<f64>::new(cfg, 9).unwrap();
    let mut mrng = ChaCha8Rng::seed_from_u64(41);
    let mx = Tensor::randn(&[2, 1, 9, 3], 0.5, &mut mrng);
    let my = Tensor::randn(&[2, 1, 9, 1], 0.5, &mut mrng);
    check(
        "full model on a 3x3 grid",
        check_gradients(
            &model.params(),
            || {
                let mut tape = Tape::new();
                let pred = model.forward(&mut tape, mx.clone())?;
                let yr = tape.constant(my.clone());
                let loss = tape.l1_loss(pred, yr)?;
                Ok((tape, loss))
            },
            1e-5,
            1e-6,
        )
        .unwrap(),
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient suite took {elapsed:.1}s");
    println!(
        "[PASS] gradients: every op and the full model match finite differences \
         (worst rel err {worst:.2e}, {elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// 2. Structural invariants of learned graphs over 1,000 random draws.

#[test]
fn c02_learned_graphs_hold_their_structural_invariants() {
    for draw in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let n = rng.random_range(2..=12usize);
        let d = rng.random_range(1..=6usize);
        let k = rng.random_range(1..=n);
        let emb = NodeEmbeddings::<f64>::new(n, d, 3.0, &mut rng);
        let a = learn_adjacency_eval(&emb);

        for i in 0..n {
            for j in 0..n {
                let v = a.at2(i, j);
                assert!((0.0..1.0).contains(&v), "entry out of [0,1): {v}");
                assert_eq!(
                    a.at2(i, j) * a.at2(j, i),
                    0.0,
                    "complementary sparsity violated at ({i},{j}) draw {draw}"
                );
            }
        }

        let pruned = topk_prune(&a, k).unwrap();
        for i in 0..n {
            let nnz = (0..n).filter(|&j| pruned.dense.at2(i, j) != 0.0).count();
            assert!(nnz <= k, "row {i} kept {nnz} > k={k} entries");
        }

        let norm = normalize_adjacency(&pruned);
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| norm.at2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
        }
    }
    println!(
        "[PASS] graph invariants: 1000 random draws (n <= 12) are nonnegative, \
         complementary-sparse, k-sparse after pruning, and row-stochastic"
    );
}

// ---------------------------------------------------------------------------
// 3. Graph propagation equals the explicit dense matrix-power readout.

#[test]
fn c03_graph_propagation_matches_dense_matrix_power_oracle() {
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial);
        let n = rng.random_range(2..=5usize);
        let depth = rng.random_range(1..=3usize);
        let (b, c_in, c_out, s) = (
            rng.random_range(1..=3usize),
            rng.random_range(1..=3usize),
            rng.random_range(1..=3usize),
            rng.random_range(1..=4usize),
        );

        let emb = NodeEmbeddings::<f64>::new(n, 3, 3.0, &mut rng);
        let a_norm = normalize_adjacency(&topk_prune(&learn_adjacency_eval(&emb), n).unwrap());
        let layer = GcnLayerParams::<f64>::new("oracle", depth, c_in, c_out, &mut rng);
        let x = Tensor::<f64>::randn(&[b, c_in, n, s], 0.9, &mut rng);

        let got = gcn_forward_eval(&x, &a_norm, &layer).unwrap();

        // Oracle: sum over hops of A^hop X W_hop, with A^hop built by
        // plain dense matrix powers.
        let adj = |i: usize, j: usize| a_norm.at2(i, j);
        let weights: Vec<Vec<f64>> = layer
            .hop_weights
            .iter()
            .map(|w| w.borrow().data().to_vec())
            .collect();
        for bi in 0..b {
            for si in 0..s {
                // X slice as an n x c_in matrix.
                let xm: Vec<f64> = (0..n * c_in)
                    .map(|idx| {
                        let (ni, ci) = (idx / c_in, idx % c_in);
                        x.data()[((bi * c_in + ci) * n + ni) * s + si]
                    })
                    .collect();
                // Running power A^hop as a dense n x n matrix.
                let mut apow: Vec<f64> = (0..n * n)
                    .map(|idx| if idx / n == idx % n { 1.0 } else { 0.0 })
                    .collect();
                let mut expect = vec![0.0f64; n * c_out];
                for w in &weights {
                    // expect += (apow · xm) · w
                    for ni in 0..n {
                        for co in 0..c_out {
                            let mut acc = 0.0;
                            for ci in 0..c_in {
                                let mut hx = 0.0;
                                for nj in 0..n {
                                    hx += apow[ni * n + nj] * xm[nj * c_in + ci];
                                }
                                acc += hx * w[ci * c_out + co];
                            }
                            expect[ni * c_out + co] += acc;
                        }
                    }
                    // apow <- apow · A
                    let mut next = vec![0.0f64; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for m in 0..n {
                                acc += apow[i * n + m] * adj(m, j);
                            }
                            next[i * n + j] = acc;
                        }
                    }
                    apow = next;
                }
                for ni in 0..n {
                    for co in 0..c_out {
                        let g = got.data()[((bi * c_out + co) * n + ni) * s + si];
                        let e = expect[ni * c_out + co];
                        let rel = (g - e).abs() / e.abs().max(1e-9);
                        assert!(
                            rel < 1e-6,
                            "trial {trial}: ({bi},{co},{ni},{si}) got {g}, oracle {e}"
                        );
                        worst = worst.max(rel);
                    }
                }
            }
        }
    }
    println!(
        "[PASS] propagation oracle: 50 random instances (n <= 5, depth <= 3) match \
         dense matrix powers (worst rel err {worst:.2e})"
    );
}

// ---------------------------------------------------------------------------
// 4. Categorical scores against brute-force counting; spectra obey Parseval.

#[test]
fn c04_categorical_scores_match_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10_000 {
        let pred: Vec<f32> = (0..9).map(|_| f32::from(rng.random_range(0..=1u8))).collect();
        let truth: Vec<f32> = (0..9).map(|_| f32::from(rng.random_range(0..=1u8))).collect();
        let table = ContingencyTable::from_fields(&pred, &truth, 0.5);

        let (mut a, mut b, mut c, mut d) = (0u64, 0u64, 0u64, 0u64);
        for (p, t) in pred.iter().zip(&truth) {
            match (*p > 0.5, *t > 0.5) {
                (true, true) => a += 1,
                (true, false) => b += 1,
                (false, true) => c += 1,
                (false, false) => d += 1,
            }
        }
        assert_eq!(
            (table.hits, table.false_alarms, table.misses, table.correct_negatives),
            (a, b, c, d)
        );

        let csi_oracle = if a + b + c > 0 {
            Some(a as f64 / (a + b + c) as f64)
        } else {
            None
        };
        match (table.csi(), csi_oracle) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
            (None, None) => {}
            other => panic!("csi definedness mismatch: {other:?}"),
        }
        let denom = ((a + c) * (c + d) + (a + b) * (b + d)) as f64;
        let hss_oracle = if denom > 0.0 {
            Some(2.0 * (a as f64 * d as f64 - b as f64 * c as f64) / denom)
        } else {
            None
        };
        match (table.hss(), hss_oracle) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
            (None, None) => {}
            other => panic!("hss definedness mismatch: {other:?}"),
        }
    }

    // No-skill tables (ad = bc) score exactly zero; perfect tables score one.
    for a in 0..=6u64 {
        for b in 0..=6u64 {
            for c in 0..=6u64 {
                for d in 0..=6u64 {
                    let t = ContingencyTable {
                        hits: a,
                        false_alarms: b,
                        misses: c,
                        correct_negatives: d,
                        threshold: 0.5,
                    };
                    if a * d == b * c {
                        if let Some(h) = t.hss() {
                            assert!(h.abs() < 1e-12, "ad=bc table {a},{b},{c},{d} gave {h}");
                        }
                    }
                    if b == 0 && c == 0 && a > 0 && d > 0 {
                        assert_eq!(t.hss(), Some(1.0));
                        assert_eq!(t.csi(), Some(1.0));
                    }
                }
            }
        }
    }

    // Parseval: total spectral power equals the mean squared pixel value.
    for (w, h, seed) in [(16usize, 16usize, 1u64), (12, 20, 2), (33, 17, 3)] {
        let mut frng = ChaCha8Rng::seed_from_u64(seed);
        let field: Vec<f32> = (0..w * h).map(|_| frng.random_range(-1.0..1.0f32)).collect();
        let psd = radial_psd(&field, w, h).unwrap();
        let mean_sq: f64 = field.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / (w * h) as f64;
        let rel = (psd.total - mean_sq).abs() / mean_sq.abs();
        assert!(rel < 1e-6, "{w}x{h}: total {} vs mean square {mean_sq}", psd.total);
    }

    println!(
        "[PASS] score oracles: 10000 random binary rasters match brute-force counts; \
         no-skill tables score 0, perfect tables score 1; spectra obey Parseval to 1e-6"
    );
}

// ---------------------------------------------------------------------------
// 5. Power-spectrum shapes: constant, pure cosine, white noise.

#[test]
fn c05_power_spectra_have_the_expected_shapes() {
    // A constant field has no power beyond the zero-frequency bin.
    let constant = vec![3.25f32; 32 * 32];
    let psd = radial_psd(&constant, 32, 32).unwrap();
    for (i, &p) in psd.curve.iter().enumerate() {
        assert!(
            p.abs() < 1e-12 * psd.dc.max(1.0),
            "constant field leaked power {p} into bin {}",
            i + 1
        );
    }

    // An axis-aligned integer-frequency cosine concentrates in one bin.
    let (w, h, k0) = (32usize, 32usize, 3usize);
    let field: Vec<f32> = (0..w * h)
        .map(|idx| {
            let x = (idx % w) as f64;
            (2.0 * std::f64::consts::PI * k0 as f64 * x / w as f64).cos() as f32
        })
        .collect();
    let psd = radial_psd(&field, w, h).unwrap();
    let peak = psd.curve[k0 - 1];
    for (i, &p) in psd.curve.iter().enumerate() {
        if i + 1 != k0 {
            assert!(
                p < 1e-10 * peak,
                "cosine leaked {p} into bin {} (peak {peak})",
                i + 1
            );
        }
    }

    // White noise is flat: every bin's 100-seed mean within 20% of the
    // grand mean.
    let n_bins = 32 / 2;
    let mut bin_means = vec![0.0f64; n_bins];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let field: Vec<f32> = (0..32 * 32)
            .map(|_| {
                let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
                v as f32
            })
            .collect();
        let psd = radial_psd(&field, 32, 32).unwrap();
        for (m, &p) in bin_means.iter_mut().zip(&psd.curve) {
            *m += p / 100.0;
        }
    }
    let grand = bin_means.iter().sum::<f64>() / n_bins as f64;
    for (i, &m) in bin_means.iter().enumerate() {
        assert!(
            (m - grand).abs() < 0.2 * grand,
            "white-noise bin {} mean {m} deviates more than 20% from {grand}",
            i + 1
        );
    }

    println!(
        "[PASS] spectra: constant fields are silent, a pure cosine occupies one bin \
         (leakage < 1e-10 of peak), white noise is flat within 20% over 100 seeds"
    );
}

// ---------------------------------------------------------------------------
// 6. Reflectivity <-> rain-rate conversion.

#[test]
fn c06_reflectivity_rainrate_conversion_is_correct_and_invertible() {
    let at_one = rainrate_to_dbz(1.0).unwrap();
    assert!(
        (at_one - 17.674).abs() <= 1e-3,
        "1 mm/h maps to {at_one} dBZ"
    );

    // Log-spaced sweep over three and a half decades, endpoints included.
    let mut worst: f64 = 0.0;
    for i in 0..=200 {
        let r = 0.01 * (300.0f64 / 0.01).powf(i as f64 / 200.0);
        let back = dbz_to_rainrate(rainrate_to_dbz(r).unwrap());
        let rel = (back - r).abs() / r;
        worst = worst.max(rel);
        assert!(rel < 1e-9, "roundtrip at {r} mm/h drifted {rel}");
    }
    println!(
        "[PASS] unit conversion: 1 mm/h -> {at_one:.4} dBZ; roundtrip over \
         [0.01, 300] mm/h within 1e-9 (worst {worst:.2e})"
    );
}

// ---------------------------------------------------------------------------
// Shared fixtures for the training-based checks.

/// Hyperparameters sized for a single core: narrower than the defaults
/// but the same architecture, with a learning rate to match.
fn desk_config(seed: u64) -> NowcastConfig {
    NowcastConfig {
        embed_dim: 16,
        hidden: 12,
        learning_rate: 3e-3,
        batch_size: 16,
        epochs: 5,
        seed,
        ..NowcastConfig::default()
    }
}

fn masked_test_mae<F: gridcast_core::Forecaster>(fc: &mut F, ds: &NowcastDataset) -> f64 {
    evaluate_split(fc, ds, Split::Test, &EvalOptions::default())
        .unwrap()
        .mae
        .expect("test split has unmasked samples")
}

// ---------------------------------------------------------------------------
// 7. The trained model beats the input-mean baseline by at least 10%.

#[test]
fn c07_trained_model_beats_the_input_mean_baseline() {
    let started = Instant::now();
    let seq = synthesize_storms(&StormConfig::default()); // 160x160, 600 frames
    let cfg = desk_config(0);
    let ds = NowcastDataset::prepare(&seq, cfg.channels, cfg.input_len, cfg.horizon).unwrap();
    assert_eq!(ds.n_node(), 32 * 32, "downsampled grid is 32x32");

    let mut model = NowcastModel::<f32>::new(cfg, ds.n_node()).unwrap();
    let log = train(&mut model, &ds).unwrap();

    let first = log.records.first().unwrap().train_l1;
    let last = log.records.last().unwrap().train_l1;
    assert!(
        last < first,
        "training L1 did not decrease: first {first}, last {last}"
    );

    let model_mae = masked_test_mae(&mut ModelForecaster { model: &model }, &ds);
    let baseline_mae = masked_test_mae(&mut InputMeanBaseline, &ds);
    assert!(
        model_mae <= 0.9 * baseline_mae,
        "model test MAE {model_mae} is not 10% below the input-mean baseline {baseline_mae}"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "end-to-end run took {elapsed:.0}s");
    println!(
        "[PASS] learning signal: test MAE {model_mae:.4} vs baseline {baseline_mae:.4} \
         ({:.0}% below), train L1 {first:.4} -> {last:.4}, {elapsed:.0}s",
        100.0 * (1.0 - model_mae / baseline_mae)
    );
}

// ---------------------------------------------------------------------------
// 8. Five input channels beat one, and cost strictly more wall-clock time.

#[test]
fn c08_five_channels_beat_one_channel_at_higher_cost() {
    // A noisy, fine-grained storm field: per-pixel noise is where the
    // smoothed input channels carry information the raw channel lacks.
    let seq = synthesize_storms(&StormConfig {
        width: 40,
        height: 40,
        n_frames: 300,
        noise_dbz: 2.0,
        seed: 2,
        ..StormConfig::default()
    });
    let make_config = |channels: usize| NowcastConfig {
        channels,
        hidden: 4,
        embed_dim: 8,
        top_k: 4,
        kernel_lengths: vec![2, 3],
        epochs: 3,
        learning_rate: 3e-3,
        batch_size: 16,
        seed: 1,
        ..NowcastConfig::default()
    };
    // The clock covers channel construction plus training; the extra
    // channels cost both augmentation and wider input convolutions.
    let run = |channels: usize| {
        let cfg = make_config(channels);
        let t0 = Instant::now();
        let ds = NowcastDataset::prepare(&seq, channels, cfg.input_len, cfg.horizon).unwrap();
        let mut model = NowcastModel::<f32>::new(cfg, ds.n_node()).unwrap();
        train(&mut model, &ds).unwrap();
        let seconds = t0.elapsed().as_secs_f64();
        let mae = masked_test_mae(&mut ModelForecaster { model: &model }, &ds);
        (mae, seconds)
    };

    // Untimed warmup so neither measured run pays first-touch costs.
    let (_, _) = run(5);

    // Training is bit-deterministic, so repeating a configuration redoes
    // identical work: the minimum over interleaved repetitions is the
    // same computation with scheduler noise stripped, and the model
    // (hence the MAE) is the same object in every repetition.
    let mut sec1 = f64::INFINITY;
    let mut sec5 = f64::INFINITY;
    let (mut mae1, mut mae5) = (0.0, 0.0);
    let mut raw = Vec::new();
    for _ in 0..3 {
        let (m1, t1) = run(1);
        let (m5, t5) = run(5);
        sec1 = sec1.min(t1);
        sec5 = sec5.min(t5);
        mae1 = m1;
        mae5 = m5;
        raw.push((t1, t5));
    }

    assert!(
        mae5 < mae1,
        "five channels did not beat one: {mae5} vs {mae1}"
    );
    assert!(
        sec5 > sec1,
        "five channels were not costlier: {sec5}s vs {sec1}s (raw {raw:?})"
    );
    println!(
        "[PASS] channel ablation: five channels reach MAE {mae5:.4} vs {mae1:.4} for one, \
         at {sec5:.3}s vs {sec1:.3}s"
    );
}

// ---------------------------------------------------------------------------
// 9. Training and raster i/o are bit-reproducible.

#[test]
fn c09_training_and_raster_io_are_bit_reproducible() {
    let seq = synthesize_storms(&StormConfig {
        width: 40,
        height: 40,
        n_frames: 60,
        seed: 2,
        ..StormConfig::default()
    });
    let cfg = NowcastConfig {
        input_len: 5,
        horizon: 2,
        channels: 5,
        embed_dim: 4,
        top_k: 4,
        gcn_depth: 2,
        kernel_lengths: vec![2, 3],
        hidden: 4,
        learning_rate: 2e-3,
        weight_decay: 1e-5,
        batch_size: 4,
        epochs: 2,
        alpha: 3.0,
        seed: 11,
    };
    let ds = NowcastDataset::prepare(&seq, cfg.channels, cfg.input_len, cfg.horizon).unwrap();

    let run = |out: &std::path::Path| {
        let mut model = NowcastModel::<f32>::new(cfg.clone(), ds.n_node()).unwrap();
        let log = train(&mut model, &ds).unwrap();
        model.save(out, &ds.normalizer).unwrap();
        log
    };
    let dir = tempfile::tempdir().unwrap();
    let (path_a, path_b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let log_a = run(&path_a);
    let log_b = run(&path_b);

    assert!(log_a.same_losses(&log_b), "loss trajectories diverged");
    assert_eq!(log_a.best_epoch, log_b.best_epoch);
    assert_eq!(log_a.adjacency.len(), log_b.adjacency.len());
    for (ea, eb) in log_a.adjacency.iter().zip(&log_b.adjacency) {
        assert!(
            ea.iter().zip(eb).all(|(x, y)| x.to_bits() == y.to_bits()),
            "adjacency snapshots diverged"
        );
    }
    let bytes_a = std::fs::read(&path_a).unwrap();
    let bytes_b = std::fs::read(&path_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "checkpoint files differ");

    // Raster roundtrip: write, read, write again — byte-exact both times.
    let raster1 = dir.path().join("seq1.rdr");
    let raster2 = dir.path().join("seq2.rdr");
    write_sequence(&raster1, &seq).unwrap();
    let reread = read_sequence(&raster1).unwrap();
    assert!(
        seq.frames
            .iter()
            .zip(&reread.frames)
            .all(|(x, y)| x.to_bits() == y.to_bits()),
        "samples changed across the roundtrip"
    );
    write_sequence(&raster2, &reread).unwrap();
    assert_eq!(
        std::fs::read(&raster1).unwrap(),
        std::fs::read(&raster2).unwrap(),
        "raster files differ after roundtrip"
    );

    println!(
        "[PASS] reproducibility: identical seeds give bitwise-equal checkpoints, loss \
         trajectories, and adjacency snapshots; raster files roundtrip byte-exactly"
    );
}

// ---------------------------------------------------------------------------
// 10. Error does not shrink as the forecast horizon grows.

#[test]
fn c10_error_grows_with_forecast_horizon() {
    let seq = synthesize_storms(&StormConfig {
        width: 80,
        height: 80,
        n_frames: 300,
        seed: 1,
        ..StormConfig::default()
    });
    let mut maes = Vec::new();
    for horizon in [5usize, 15] {
        let cfg = NowcastConfig {
            horizon,
            epochs: 3,
            ..desk_config(3)
        };
        let ds = NowcastDataset::prepare(&seq, cfg.channels, cfg.input_len, horizon).unwrap();
        let mut model = NowcastModel::<f32>::new(cfg, ds.n_node()).unwrap();
        train(&mut model, &ds).unwrap();
        maes.push(masked_test_mae(&mut ModelForecaster { model: &model }, &ds));
    }
    let (near, far) = (maes[0], maes[1]);
    assert!(
        far >= near,
        "error shrank with horizon: {far} at 15 frames vs {near} at 5"
    );
    println!(
        "[PASS] horizon degradation: test MAE {near:.4} at 5 frames ahead vs {far:.4} \
         at 15 frames ahead"
    );
}
