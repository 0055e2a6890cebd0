//! Forecast verification: masked error statistics, categorical skill
//! scores, and radially averaged power spectra.
//!
//! All scores follow the same aggregation rule: compute per sample, then
//! average over the samples where the score is defined. A sample leaves a
//! score undefined instead of poisoning the average — e.g. a fully masked
//! frame has no error, and a constant frame has no correlation.

pub mod psd;

use serde::{Deserialize, Serialize};

use crate::data::zr::rainrate_to_dbz;
use crate::data::{NowcastDataset, Split};
use crate::error::{CoreError, Result};

pub use psd::{radial_psd, RadialPsd};

/// Pixels where the true value falls below this are excluded from error
/// statistics: near-zero reflectivity is mostly clear sky, and scoring it
/// would reward predicting "nothing" everywhere.
pub const DEFAULT_MASK_FLOOR: f32 = 1e-3;

/// Rain/no-rain event threshold for the categorical scores, in mm/h.
pub const DEFAULT_RAIN_THRESHOLD_MM: f64 = 0.5;

/// Error statistics of one sample over its unmasked pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleErrors {
    pub mae: f64,
    pub rmse: f64,
    /// Pearson correlation; `None` when either field is constant over
    /// the unmasked pixels.
    pub corr: Option<f64>,
}

/// Mean absolute error, root-mean-square error, and Pearson correlation
/// over the pixels where `truth >= mask_floor`. Returns `None` when every
/// pixel is masked. Panics in debug builds if shapes differ.
pub fn masked_errors(pred: &[f32], truth: &[f32], mask_floor: f32) -> Option<SampleErrors> {
    assert_eq!(pred.len(), truth.len(), "prediction/truth length mismatch");
    let mut n = 0usize;
    let (mut abs_sum, mut sq_sum) = (0.0f64, 0.0f64);
    let (mut p_sum, mut t_sum) = (0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if t < mask_floor {
            continue;
        }
        let (p, t) = (p as f64, t as f64);
        let d = p - t;
        abs_sum += d.abs();
        sq_sum += d * d;
        p_sum += p;
        t_sum += t;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let (p_mean, t_mean) = (p_sum / nf, t_sum / nf);
    let (mut cov, mut p_var, mut t_var) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if t < mask_floor {
            continue;
        }
        let (dp, dt) = (p as f64 - p_mean, t as f64 - t_mean);
        cov += dp * dt;
        p_var += dp * dp;
        t_var += dt * dt;
    }
    let corr = if p_var > 0.0 && t_var > 0.0 {
        Some(cov / (p_var.sqrt() * t_var.sqrt()))
    } else {
        None
    };
    let mae = abs_sum / nf;
    let rmse = (sq_sum / nf).sqrt();
    // Power-mean inequality: the quadratic mean dominates the arithmetic
    // mean on any pixel population.
    debug_assert!(rmse >= mae - 1e-12);
    Some(SampleErrors { mae, rmse, corr })
}

/// 2×2 rain/no-rain contingency counts at a fixed event threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// Event predicted and observed.
    pub hits: u64,
    /// Event predicted, none observed.
    pub false_alarms: u64,
    /// Event observed, none predicted.
    pub misses: u64,
    /// No event predicted or observed.
    pub correct_negatives: u64,
    /// Event threshold, in the units of the compared fields.
    pub threshold: f64,
}

impl ContingencyTable {
    /// Counts events (`value >= threshold`) over all pixels of one
    /// prediction/truth pair.
    pub fn from_fields(pred: &[f32], truth: &[f32], threshold: f32) -> Self {
        assert_eq!(pred.len(), truth.len(), "prediction/truth length mismatch");
        let mut t = ContingencyTable {
            threshold: threshold as f64,
            ..ContingencyTable::default()
        };
        for (&p, &o) in pred.iter().zip(truth.iter()) {
            match (p >= threshold, o >= threshold) {
                (true, true) => t.hits += 1,
                (true, false) => t.false_alarms += 1,
                (false, true) => t.misses += 1,
                (false, false) => t.correct_negatives += 1,
            }
        }
        t
    }

    /// Pixels counted in the table.
    pub fn total(&self) -> u64 {
        self.hits + self.false_alarms + self.misses + self.correct_negatives
    }

    /// Critical success index `a / (a + b + c)` — the fraction of
    /// relevant pixels (predicted or observed event) that are hits.
    /// `None` when no pixel is relevant.
    pub fn csi(&self) -> Option<f64> {
        let denom = self.hits + self.false_alarms + self.misses;
        if denom == 0 {
            return None;
        }
        Some(self.hits as f64 / denom as f64)
    }

    /// Heidke skill score `2(ad - bc) / [(a+c)(c+d) + (a+b)(b+d)]` —
    /// accuracy rescaled so random forecasts with matching marginals
    /// score zero and a perfect forecast scores one. `None` when the
    /// denominator vanishes (single-class tables).
    pub fn hss(&self) -> Option<f64> {
        let (a, b, c, d) = (
            self.hits as f64,
            self.false_alarms as f64,
            self.misses as f64,
            self.correct_negatives as f64,
        );
        let denom = (a + c) * (c + d) + (a + b) * (b + d);
        if denom == 0.0 {
            return None;
        }
        Some(2.0 * (a * d - b * c) / denom)
    }
}

/// Anything that can produce normalized single-frame forecasts for
/// dataset samples. Implementations return `samples.len() * n_node`
/// values, batch-major.
pub trait Forecaster {
    fn predict(&mut self, ds: &NowcastDataset, samples: &[usize]) -> Result<Vec<f32>>;
}

/// Persistence-style reference forecaster: predicts the per-node mean of
/// the raw-reflectivity channel over the input window. Any trained model
/// worth keeping must beat it.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputMeanBaseline;

impl Forecaster for InputMeanBaseline {
    fn predict(&mut self, ds: &NowcastDataset, samples: &[usize]) -> Result<Vec<f32>> {
        let n = ds.n_node();
        let mut out = vec![0.0f32; samples.len() * n];
        for (bi, &sample) in samples.iter().enumerate() {
            let Some(&start) = ds.starts.get(sample) else {
                return Err(CoreError::InvalidConfig(format!(
                    "sample {sample} out of range ({} windows)",
                    ds.starts.len()
                )));
            };
            let slot = &mut out[bi * n..(bi + 1) * n];
            for t in start..start + ds.input_len {
                for (acc, &v) in slot.iter_mut().zip(ds.stack.frame(0, t).iter()) {
                    *acc += v / ds.input_len as f32;
                }
            }
        }
        Ok(out)
    }
}

/// Knobs of [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Pixels with normalized truth below this are excluded from error
    /// statistics.
    pub mask_floor: f32,
    /// Rain/no-rain threshold in mm/h; converted to normalized units
    /// through the reflectivity power law and the dataset's bounds.
    pub rain_threshold_mm: f64,
    /// Report MAE/RMSE in physical units (dBZ) instead of normalized
    /// units. Correlation and the categorical scores are unaffected.
    pub denormalize: bool,
    /// Samples per forecaster call.
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mask_floor: DEFAULT_MASK_FLOOR,
            rain_threshold_mm: DEFAULT_RAIN_THRESHOLD_MM,
            denormalize: false,
            batch: 16,
        }
    }
}

/// One wavenumber of the sample-aggregated power spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdBin {
    /// Wavenumber (annulus index, starting at 1).
    pub k: usize,
    /// Mean power over samples.
    pub mean: f64,
    /// 25th/50th/75th percentile of per-sample power.
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Aggregated verification scores over a set of samples.
///
/// Every score is the mean of its per-sample values over the samples
/// where it is defined; `None` means it was defined on none of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub corr: Option<f64>,
    pub csi: Option<f64>,
    pub hss: Option<f64>,
    /// Radial power spectrum of the predictions, aggregated bin-wise.
    pub psd: Vec<PsdBin>,
    /// Samples evaluated.
    pub n_samples: usize,
    /// Samples whose pixels were all masked (excluded from error means).
    pub n_masked: usize,
    /// Forecast horizon of the dataset, in frames.
    pub horizon: usize,
    /// Event threshold actually applied, in normalized units.
    pub event_threshold: f64,
}

/// Linear-interpolation percentile of `sorted` (ascending), `q ∈ [0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Converts a rain-rate threshold in mm/h to the dataset's normalized
/// units.
pub fn normalized_event_threshold(ds: &NowcastDataset, rain_mm: f64) -> Result<f32> {
    let dbz = rainrate_to_dbz(rain_mm)?;
    Ok(ds.normalizer.apply(dbz as f32))
}

/// Runs `forecaster` over `samples` and aggregates every score.
///
/// Predictions are requested in chunks of `opts.batch`; error statistics
/// honor the mask floor on normalized truth; the event threshold for
/// CSI/HSS is `opts.rain_threshold_mm` converted through the power law
/// and the dataset bounds; the power spectrum is computed on physical
/// (denormalized) prediction fields.
pub fn evaluate<F: Forecaster>(
    forecaster: &mut F,
    ds: &NowcastDataset,
    samples: &[usize],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(CoreError::EmptyDataset(
            "no samples to evaluate".to_string(),
        ));
    }
    if opts.batch == 0 {
        return Err(CoreError::InvalidConfig(
            "evaluation batch size must be positive".to_string(),
        ));
    }
    let n = ds.n_node();
    let event_threshold = normalized_event_threshold(ds, opts.rain_threshold_mm)?;

    let mut maes = Vec::new();
    let mut rmses = Vec::new();
    let mut corrs = Vec::new();
    let mut csis = Vec::new();
    let mut hsses = Vec::new();
    let mut n_masked = 0usize;
    let mut psd_curves: Vec<Vec<f64>> = Vec::new();

    for chunk in samples.chunks(opts.batch) {
        let preds = forecaster.predict(ds, chunk)?;
        if preds.len() != chunk.len() * n {
            return Err(CoreError::ShapeMismatch {
                op: "evaluate",
                lhs: vec![preds.len()],
                rhs: vec![chunk.len(), n],
            });
        }
        for (bi, &sample) in chunk.iter().enumerate() {
            let pred = &preds[bi * n..(bi + 1) * n];
            if let Some(bad) = pred.iter().position(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite {
                    context: format!("prediction pixel {bad} of sample {sample}"),
                });
            }
            let truth = ds.stack.frame(0, ds.target_frame(sample));

            match masked_errors(pred, truth, opts.mask_floor) {
                Some(errs) => {
                    if opts.denormalize {
                        // The mask and correlation live on normalized
                        // values; the affine scale only stretches the
                        // error magnitudes.
                        let scale = ds.normalizer.max - ds.normalizer.min;
                        maes.push(errs.mae * scale);
                        rmses.push(errs.rmse * scale);
                    } else {
                        maes.push(errs.mae);
                        rmses.push(errs.rmse);
                    }
                    if let Some(c) = errs.corr {
                        corrs.push(c);
                    }
                }
                None => n_masked += 1,
            }

            let table = ContingencyTable::from_fields(pred, truth, event_threshold);
            if let Some(v) = table.csi() {
                csis.push(v);
            }
            if let Some(v) = table.hss() {
                hsses.push(v);
            }

            let physical: Vec<f32> = pred.iter().map(|&v| ds.normalizer.invert(v)).collect();
            psd_curves.push(radial_psd(&physical, ds.stack.width, ds.stack.height)?.curve);
        }
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let n_bins = psd_curves.first().map_or(0, Vec::len);
    let psd = (0..n_bins)
        .map(|i| {
            let mut values: Vec<f64> = psd_curves.iter().map(|c| c[i]).collect();
            values.sort_by(|a, b| a.total_cmp(b));
            PsdBin {
                k: i + 1,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                p25: percentile(&values, 0.25),
                p50: percentile(&values, 0.50),
                p75: percentile(&values, 0.75),
            }
        })
        .collect();

    Ok(MetricReport {
        mae: mean(&maes),
        rmse: mean(&rmses),
        corr: mean(&corrs),
        csi: mean(&csis),
        hss: mean(&hsses),
        psd,
        n_samples: samples.len(),
        n_masked,
        horizon: ds.horizon,
        event_threshold: event_threshold as f64,
    })
}

/// Convenience wrapper: evaluates one chronological split of the dataset.
pub fn evaluate_split<F: Forecaster>(
    forecaster: &mut F,
    ds: &NowcastDataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let samples = ds.split_samples(split);
    evaluate(forecaster, ds, &samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize_storms, StormConfig};
    use crate::data::{AugmentedStack, Normalizer, NowcastDataset};

    #[test]
    fn masked_errors_match_hand_arithmetic() {
        // Differences are ±0.1 up to the rounding of the f32 inputs.
        let errs = masked_errors(&[0.2, 0.4], &[0.1, 0.5], 1e-3).unwrap();
        assert!((errs.mae - 0.1).abs() < 1e-7);
        assert!((errs.rmse - 0.1).abs() < 1e-7);
        assert!((errs.corr.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_scores_zero_error() {
        let truth = [0.3f32, 0.8, 0.5, 0.2];
        let errs = masked_errors(&truth, &truth, 1e-3).unwrap();
        assert_eq!(errs.mae, 0.0);
        assert_eq!(errs.rmse, 0.0);
        assert!((errs.corr.unwrap() - 1.0).abs() < 1e-12);
        // Constant truth leaves correlation undefined even when exact.
        let flat = [0.4f32, 0.4];
        assert_eq!(masked_errors(&flat, &flat, 1e-3).unwrap().corr, None);
    }

    #[test]
    fn low_truth_pixels_are_excluded() {
        // Pixel 0 sits below the floor: only pixel 1 is scored.
        let errs = masked_errors(&[9.0, 0.3], &[5e-4, 0.2], 1e-3).unwrap();
        assert!((errs.mae - 0.1).abs() < 1e-6);
        assert_eq!(errs.corr, None);
        // All pixels masked → no statistics at all.
        assert_eq!(masked_errors(&[1.0, 1.0], &[1e-4, 5e-4], 1e-3), None);
    }

    #[test]
    fn rmse_dominates_mae_on_random_fields() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pred: Vec<f32> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
            let truth: Vec<f32> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
            let errs = masked_errors(&pred, &truth, 1e-3).unwrap();
            assert!(errs.rmse >= errs.mae);
            if let Some(c) = errs.corr {
                assert!((-1.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn contingency_counts_match_enumeration() {
        // Events at threshold 0.5: pred {1,1,0,0}, truth {1,0,1,0}.
        let pred = [0.9f32, 0.8, 0.1, 0.2];
        let truth = [0.7f32, 0.3, 0.6, 0.1];
        let t = ContingencyTable::from_fields(&pred, &truth, 0.5);
        assert_eq!(
            (t.hits, t.false_alarms, t.misses, t.correct_negatives),
            (1, 1, 1, 1)
        );
        assert_eq!(t.total(), 4);

        // Threshold above every value: nothing but correct negatives.
        let t = ContingencyTable::from_fields(&pred, &truth, 2.0);
        assert_eq!(
            (t.hits, t.false_alarms, t.misses, t.correct_negatives),
            (0, 0, 0, 4)
        );
        assert_eq!(t.csi(), None);
    }

    #[test]
    fn skill_scores_match_hand_values() {
        let t = ContingencyTable {
            hits: 5,
            false_alarms: 2,
            misses: 3,
            correct_negatives: 10,
            threshold: 0.5,
        };
        assert!((t.csi().unwrap() - 0.5).abs() < 1e-12);
        assert!((t.hss().unwrap() - 88.0 / 188.0).abs() < 1e-12);

        let perfect = ContingencyTable {
            hits: 7,
            correct_negatives: 3,
            ..ContingencyTable::default()
        };
        assert_eq!(perfect.csi(), Some(1.0));
        assert_eq!(perfect.hss(), Some(1.0));
    }

    #[test]
    fn random_forecasts_with_matching_marginals_have_zero_skill() {
        // Brute force over every small table with a·d = b·c.
        let mut checked = 0;
        for a in 0..5u64 {
            for b in 0..5u64 {
                for c in 0..5u64 {
                    for d in 0..5u64 {
                        if a * d != b * c {
                            continue;
                        }
                        let t = ContingencyTable {
                            hits: a,
                            false_alarms: b,
                            misses: c,
                            correct_negatives: d,
                            threshold: 0.0,
                        };
                        if let Some(h) = t.hss() {
                            assert!(h.abs() < 1e-12, "a={a} b={b} c={c} d={d}: {h}");
                            checked += 1;
                        }
                    }
                }
            }
        }
        assert!(checked > 50);
    }

    /// A forecaster that echoes the truth back, for exercising the
    /// aggregation plumbing.
    struct TruthTeller;
    impl Forecaster for TruthTeller {
        fn predict(&mut self, ds: &NowcastDataset, samples: &[usize]) -> Result<Vec<f32>> {
            let n = ds.n_node();
            let mut out = Vec::with_capacity(samples.len() * n);
            for &s in samples {
                out.extend_from_slice(ds.stack.frame(0, ds.target_frame(s)));
            }
            Ok(out)
        }
    }

    fn toy_dataset() -> NowcastDataset {
        let seq = synthesize_storms(&StormConfig {
            width: 40,
            height: 40,
            n_frames: 30,
            n_blobs: 3,
            velocity: (0.9, 0.4),
            rotation: 0.0,
            noise_dbz: 0.3,
            seed: 5,
        });
        NowcastDataset::prepare(&seq, 1, 13, 10).unwrap()
    }

    #[test]
    fn echoing_the_truth_is_a_perfect_score() {
        let ds = toy_dataset();
        let samples: Vec<usize> = (0..ds.starts.len()).collect();
        let report = evaluate(&mut TruthTeller, &ds, &samples, &EvalOptions::default()).unwrap();
        assert_eq!(report.n_samples, samples.len());
        assert_eq!(report.n_masked, 0);
        assert!(report.mae.unwrap() < 1e-12);
        assert!(report.rmse.unwrap() < 1e-12);
        assert!((report.corr.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(report.csi, Some(1.0));
        assert_eq!(report.hss, Some(1.0));
        assert_eq!(report.horizon, 10);
        assert_eq!(report.psd.len(), ds.stack.width.min(ds.stack.height) / 2);
        for bin in &report.psd {
            assert!(bin.p25 <= bin.p50 && bin.p50 <= bin.p75);
        }
    }

    #[test]
    fn baseline_produces_finite_scores_and_denormalized_scale() {
        let ds = toy_dataset();
        let samples: Vec<usize> = (0..ds.starts.len()).collect();
        let norm = evaluate(
            &mut InputMeanBaseline,
            &ds,
            &samples,
            &EvalOptions::default(),
        )
        .unwrap();
        let phys = evaluate(
            &mut InputMeanBaseline,
            &ds,
            &samples,
            &EvalOptions {
                denormalize: true,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        let scale = ds.normalizer.max - ds.normalizer.min;
        assert!(norm.mae.unwrap() > 0.0);
        assert!((phys.mae.unwrap() - norm.mae.unwrap() * scale).abs() < 1e-9);
        assert!((phys.rmse.unwrap() - norm.rmse.unwrap() * scale).abs() < 1e-9);
        // Correlation and categorical skill ignore the scale change.
        assert_eq!(phys.corr, norm.corr);
        assert_eq!(phys.csi, norm.csi);
        assert_eq!(phys.hss, norm.hss);
    }

    #[test]
    fn fully_masked_samples_are_counted_not_averaged() {
        // Hand-built dataset: frame 23 (the only test target) is all
        // zeros, so the one test sample is fully masked.
        let (w, h, frames) = (4usize, 4usize, 25usize);
        let n = w * h;
        let mut data = vec![0.5f32; frames * n];
        data[23 * n..24 * n].fill(0.0);
        let ds = NowcastDataset {
            stack: AugmentedStack {
                width: w,
                height: h,
                n_frames: frames,
                channels: 1,
                data,
            },
            starts: vec![0, 1, 2],
            train: 0..1,
            val: 1..2,
            test: 2..3,
            input_len: 13,
            horizon: 10,
            normalizer: Normalizer { min: 0.0, max: 55.0 },
        };
        // Sample 1 targets frame 23 → fully masked; sample 0 targets 22.
        let report =
            evaluate(&mut TruthTeller, &ds, &[0, 1], &EvalOptions::default()).unwrap();
        assert_eq!(report.n_masked, 1);
        assert_eq!(report.n_samples, 2);
        assert!(report.mae.unwrap() < 1e-12);
    }

    #[test]
    fn percentiles_interpolate_linearly() {
        let v = [1.0f64, 2.0, 3.0, 4.0];
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-12);
        assert!((percentile(&v, 0.25) - 1.75).abs() < 1e-12);
        assert!((percentile(&v, 0.0) - 1.0).abs() < 1e-12);
        assert!((percentile(&v, 1.0) - 4.0).abs() < 1e-12);
    }
}
