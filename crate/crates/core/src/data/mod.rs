//! Radar data handling: synthesis, augmentation, normalization, raster
//! IO, and windowed dataset assembly.
//!
//! The pipeline from a raw reflectivity sequence to training batches is:
//!
//! 1. [`augment_stack`] — per frame, derive smoothed context channels at
//!    full resolution, then thin every channel onto the coarse grid;
//! 2. [`window_starts`] — enumerate sliding input windows paired with a
//!    single target frame a fixed horizon ahead;
//! 3. [`chronological_split`] — partition the windows 6/2/2 into
//!    train/validation/test along the time axis, so evaluation windows
//!    always lie in the future of every training window;
//! 4. [`Normalizer`] — map reflectivities into `[0, 1]` with bounds
//!    fitted on the frames the training split touches, never on later
//!    frames;
//! 5. [`NowcastDataset::batch`] — gather windows into dense model inputs
//!    `[batch, channels, nodes, steps]` and targets `[batch, 1, nodes, 1]`.

pub mod augment;
pub mod io;
pub mod synth;
pub mod zr;

use std::ops::Range;

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use augment::{augment_channels, downsample, AUGMENTED_CHANNELS, DOWNSAMPLE_STRIDE};
use io::RdrMeta;

/// A gridded scalar field over time: `n_frames` frames of `width × height`
/// samples, frame-major and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarSequence {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub frames: Vec<f32>,
    pub meta: RdrMeta,
}

impl RadarSequence {
    /// Samples of frame `t`, row-major.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.frames[t * n..(t + 1) * n]
    }

    /// Pixels per frame.
    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Affine map of a physical value range onto `[0, 1]`.
///
/// `apply` clamps, so values outside the fitted range (possible when the
/// bounds come from the training split only) still land in `[0, 1]`;
/// `invert` maps a unit-interval value back to physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    /// Fits bounds over `values`. Errors on an empty slice, non-finite
    /// samples, or a constant field (whose range cannot be normalized).
    pub fn fit<'a, I>(values: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = &'a f32>,
    {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut count = 0usize;
        for &v in values {
            if !v.is_finite() {
                return Err(CoreError::NonFinite {
                    context: format!("sample {count} while fitting normalization bounds"),
                });
            }
            let v = v as f64;
            min = min.min(v);
            max = max.max(v);
            count += 1;
        }
        if count == 0 {
            return Err(CoreError::EmptyDataset(
                "no samples to fit normalization bounds on".to_string(),
            ));
        }
        if min == max {
            return Err(CoreError::DegenerateRange(min));
        }
        Ok(Normalizer { min, max })
    }

    /// Maps `x` into `[0, 1]`, clamping values outside the fitted range.
    pub fn apply(&self, x: f32) -> f32 {
        let y = (x as f64 - self.min) / (self.max - self.min);
        y.clamp(0.0, 1.0) as f32
    }

    /// Maps a unit-interval value back into physical units.
    pub fn invert(&self, y: f32) -> f32 {
        (y as f64 * (self.max - self.min) + self.min) as f32
    }
}

/// Start indices of every valid input window.
///
/// A window starting at `i` consumes input frames `i .. i + input_len`
/// and predicts frame `i + input_len - 1 + horizon`. Errors when the
/// sequence is too short to produce a single window.
pub fn window_starts(
    n_frames: usize,
    input_len: usize,
    horizon: usize,
) -> Result<Vec<usize>, CoreError> {
    if input_len == 0 || horizon == 0 {
        return Err(CoreError::InvalidConfig(format!(
            "window length and horizon must be positive, got {input_len} and {horizon}"
        )));
    }
    let needed = input_len + horizon;
    if n_frames < needed {
        return Err(CoreError::EmptyDataset(format!(
            "{n_frames} frames cannot fit one window of {input_len} inputs plus horizon {horizon} ({needed} frames needed)"
        )));
    }
    Ok((0..=n_frames - needed).collect())
}

/// Splits `n` chronologically ordered samples into contiguous
/// train/validation/test index ranges of 60%, 20%, and the remainder.
pub fn chronological_split(n: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
    let train_end = n * 6 / 10;
    let val_end = n * 8 / 10;
    (0..train_end, train_end..val_end, val_end..n)
}

/// A multi-channel frame stack on the coarse grid, channel-major:
/// sample `(c, t, p)` sits at `((c * n_frames + t) * n_pixels + p)`.
#[derive(Debug, Clone)]
pub struct AugmentedStack {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl AugmentedStack {
    /// Pixels per frame on the coarse grid.
    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Frame `t` of channel `c`, row-major.
    pub fn frame(&self, c: usize, t: usize) -> &[f32] {
        let n = self.n_pixels();
        let base = (c * self.n_frames + t) * n;
        &self.data[base..base + n]
    }
}

/// Builds the channel stack for `seq` on the coarse grid.
///
/// With `channels == 1` each frame is thinned onto the coarse grid as-is;
/// with the full channel count every frame also carries its smoothed
/// variants, computed at full resolution *before* thinning so the context
/// channels see structure between the kept pixels. No other channel
/// count is meaningful.
pub fn augment_stack(seq: &RadarSequence, channels: usize) -> Result<AugmentedStack, CoreError> {
    if channels != 1 && channels != AUGMENTED_CHANNELS {
        return Err(CoreError::InvalidConfig(format!(
            "channel stack supports 1 or {AUGMENTED_CHANNELS} channels, got {channels}"
        )));
    }
    let (cw, ch) = (
        seq.width.div_ceil(DOWNSAMPLE_STRIDE),
        seq.height.div_ceil(DOWNSAMPLE_STRIDE),
    );
    let coarse_n = cw * ch;
    let mut data = vec![0.0f32; channels * seq.n_frames * coarse_n];
    for t in 0..seq.n_frames {
        let frame = seq.frame(t);
        if channels == 1 {
            let (small, w2, h2) = downsample(frame, seq.width, seq.height, DOWNSAMPLE_STRIDE);
            debug_assert_eq!((w2, h2), (cw, ch));
            data[t * coarse_n..(t + 1) * coarse_n].copy_from_slice(&small);
        } else {
            let (chans, w2, h2) = augment_channels(frame, seq.width, seq.height)?;
            debug_assert_eq!((w2, h2), (cw, ch));
            for (c, chan) in chans.iter().enumerate() {
                let base = (c * seq.n_frames + t) * coarse_n;
                data[base..base + coarse_n].copy_from_slice(chan);
            }
        }
    }
    Ok(AugmentedStack {
        width: cw,
        height: ch,
        n_frames: seq.n_frames,
        channels,
        data,
    })
}

/// A prepared nowcasting dataset: normalized channel stack plus windowed
/// sample bookkeeping and the chronological split.
#[derive(Debug, Clone)]
pub struct NowcastDataset {
    /// Normalized channel stack on the coarse grid.
    pub stack: AugmentedStack,
    /// First-input frame index of each sample, in time order.
    pub starts: Vec<usize>,
    /// Index ranges into `starts` for the three splits.
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub input_len: usize,
    pub horizon: usize,
    /// The bounds the stack was normalized with.
    pub normalizer: Normalizer,
}

impl NowcastDataset {
    /// Prepares `seq` end to end, fitting normalization bounds on the
    /// frames the training split touches (all channels, up to and
    /// including the last training target frame).
    pub fn prepare(
        seq: &RadarSequence,
        channels: usize,
        input_len: usize,
        horizon: usize,
    ) -> Result<Self, CoreError> {
        let stack = augment_stack(seq, channels)?;
        let starts = window_starts(seq.n_frames, input_len, horizon)?;
        let (train, val, test) = chronological_split(starts.len());
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(CoreError::EmptyDataset(format!(
                "{} windows split into {}/{}/{} train/validation/test; every split needs at least one window",
                starts.len(),
                train.len(),
                val.len(),
                test.len()
            )));
        }
        let last_train_frame = starts[train.end - 1] + input_len - 1 + horizon;
        let n = stack.n_pixels();
        let mut fit_values: Vec<f32> = Vec::with_capacity(stack.channels * (last_train_frame + 1) * n);
        for c in 0..stack.channels {
            for t in 0..=last_train_frame {
                fit_values.extend_from_slice(stack.frame(c, t));
            }
        }
        let normalizer = Normalizer::fit(&fit_values)?;
        Self::finish(stack, starts, train, val, test, input_len, horizon, normalizer)
    }

    /// Like [`NowcastDataset::prepare`] but normalizing with bounds fixed
    /// elsewhere — typically the bounds stored in a trained model, so
    /// inference sees inputs on the same scale training did.
    pub fn prepare_with_norm(
        seq: &RadarSequence,
        channels: usize,
        input_len: usize,
        horizon: usize,
        normalizer: Normalizer,
    ) -> Result<Self, CoreError> {
        let stack = augment_stack(seq, channels)?;
        let starts = window_starts(seq.n_frames, input_len, horizon)?;
        let (train, val, test) = chronological_split(starts.len());
        Self::finish(stack, starts, train, val, test, input_len, horizon, normalizer)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        mut stack: AugmentedStack,
        starts: Vec<usize>,
        train: Range<usize>,
        val: Range<usize>,
        test: Range<usize>,
        input_len: usize,
        horizon: usize,
        normalizer: Normalizer,
    ) -> Result<Self, CoreError> {
        for v in stack.data.iter_mut() {
            *v = normalizer.apply(*v);
        }
        Ok(NowcastDataset {
            stack,
            starts,
            train,
            val,
            test,
            input_len,
            horizon,
            normalizer,
        })
    }

    /// Grid cells per frame — the node count of the graph.
    pub fn n_node(&self) -> usize {
        self.stack.n_pixels()
    }

    /// Channels per input window.
    pub fn channels(&self) -> usize {
        self.stack.channels
    }

    /// Frame index a sample's target comes from.
    pub fn target_frame(&self, sample: usize) -> usize {
        self.starts[sample] + self.input_len - 1 + self.horizon
    }

    /// Gathers samples into model input and target tensors.
    ///
    /// Inputs have shape `[batch, channels, nodes, input_len]`; targets
    /// hold the raw-reflectivity channel of the target frame, shape
    /// `[batch, 1, nodes, 1]`. Both are normalized.
    pub fn batch<T: Scalar>(&self, samples: &[usize]) -> Result<(Tensor<T>, Tensor<T>), CoreError> {
        if samples.is_empty() {
            return Err(CoreError::EmptyDataset("empty batch requested".to_string()));
        }
        let (b, c, n, s) = (
            samples.len(),
            self.stack.channels,
            self.n_node(),
            self.input_len,
        );
        let mut inputs = vec![T::zero(); b * c * n * s];
        let mut targets = vec![T::zero(); b * n];
        for (bi, &sample) in samples.iter().enumerate() {
            let Some(&start) = self.starts.get(sample) else {
                return Err(CoreError::InvalidConfig(format!(
                    "sample {sample} out of range ({} windows)",
                    self.starts.len()
                )));
            };
            for ci in 0..c {
                for (si, t) in (start..start + s).enumerate() {
                    let frame = self.stack.frame(ci, t);
                    for (ni, &v) in frame.iter().enumerate() {
                        inputs[((bi * c + ci) * n + ni) * s + si] = T::from_f32(v);
                    }
                }
            }
            let target = self.stack.frame(0, self.target_frame(sample));
            for (ni, &v) in target.iter().enumerate() {
                targets[bi * n + ni] = T::from_f32(v);
            }
        }
        Ok((
            Tensor::from_vec(vec![b, c, n, s], inputs)?,
            Tensor::from_vec(vec![b, 1, n, 1], targets)?,
        ))
    }

    /// Sample indices of one split, in chronological order.
    pub fn split_samples(&self, split: Split) -> Vec<usize> {
        let range = match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        };
        range.clone().collect()
    }
}

/// The three chronological partitions of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[cfg(test)]
mod tests {
    use super::synth::{synthesize_storms, StormConfig};
    use super::*;

    #[test]
    fn window_count_matches_frames_minus_window_and_horizon() {
        let starts = window_starts(25, 13, 10).unwrap();
        assert_eq!(starts, vec![0, 1, 2]);
        assert!(matches!(
            window_starts(22, 13, 10),
            Err(CoreError::EmptyDataset(_))
        ));
        // Exactly one window fits when frames == inputs + horizon.
        assert_eq!(window_starts(23, 13, 10).unwrap(), vec![0]);
    }

    #[test]
    fn chronological_split_is_six_two_two() {
        assert_eq!(chronological_split(10), (0..6, 6..8, 8..10));
        assert_eq!(chronological_split(11), (0..6, 6..8, 8..11));
        assert_eq!(chronological_split(3), (0..1, 1..2, 2..3));
        let (tr, va, te) = chronological_split(357);
        assert_eq!(tr.len() + va.len() + te.len(), 357);
        assert!(tr.end == va.start && va.end == te.start);
    }

    #[test]
    fn normalizer_maps_fitted_range_onto_unit_interval() {
        let norm = Normalizer::fit(&[2.0f32, 3.0, 4.0]).unwrap();
        assert_eq!(norm.apply(2.0), 0.0);
        assert_eq!(norm.apply(4.0), 1.0);
        assert_eq!(norm.apply(3.0), 0.5);
        // Out-of-range values clamp instead of escaping the interval.
        assert_eq!(norm.apply(5.0), 1.0);
        assert_eq!(norm.apply(-1.0), 0.0);
        // Round trip within the range.
        for x in [2.0f32, 2.7, 3.3, 4.0] {
            assert!((norm.invert(norm.apply(x)) - x).abs() < 1e-6);
        }
    }

    #[test]
    fn normalizer_rejects_empty_constant_and_non_finite_input() {
        assert!(matches!(
            Normalizer::fit(&[]),
            Err(CoreError::EmptyDataset(_))
        ));
        assert!(matches!(
            Normalizer::fit(&[7.0f32, 7.0, 7.0]),
            Err(CoreError::DegenerateRange(v)) if v == 7.0
        ));
        assert!(matches!(
            Normalizer::fit(&[1.0f32, f32::NAN]),
            Err(CoreError::NonFinite { .. })
        ));
    }

    fn small_sequence() -> RadarSequence {
        synthesize_storms(&StormConfig {
            width: 40,
            height: 35,
            n_frames: 25,
            n_blobs: 3,
            velocity: (0.8, 0.3),
            rotation: 0.0,
            noise_dbz: 0.4,
            seed: 11,
        })
    }

    #[test]
    fn prepare_builds_normalized_batches_with_expected_shapes() {
        let seq = small_sequence();
        let ds = NowcastDataset::prepare(&seq, 5, 13, 10).unwrap();
        assert_eq!((ds.stack.width, ds.stack.height), (8, 7));
        assert_eq!(ds.n_node(), 56);
        assert_eq!(ds.starts.len(), 3);
        assert_eq!((ds.train.clone(), ds.val.clone(), ds.test.clone()), (0..1, 1..2, 2..3));
        let (x, y) = ds.batch::<f32>(&[0, 1]).unwrap();
        assert_eq!(x.shape(), &[2, 5, 56, 13]);
        assert_eq!(y.shape(), &[2, 1, 56, 1]);
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // The target of sample 1 is the raw channel of frame 1+13-1+10.
        assert_eq!(ds.target_frame(1), 23);
        let frame = ds.stack.frame(0, 23);
        assert_eq!(&y.data()[56..112], frame);
    }

    #[test]
    fn consecutive_windows_share_shifted_input_frames() {
        let seq = small_sequence();
        let ds = NowcastDataset::prepare(&seq, 1, 13, 10).unwrap();
        let (x, _) = ds.batch::<f32>(&[0, 1]).unwrap();
        let n = ds.n_node();
        let s = ds.input_len;
        // Step j of window 1 is step j+1 of window 0, for every node.
        for node in 0..n {
            for j in 0..s - 1 {
                assert_eq!(
                    x.data()[(n + node) * s + j],
                    x.data()[node * s + j + 1],
                    "node {node} step {j}"
                );
            }
        }
    }

    #[test]
    fn normalization_bounds_come_from_training_frames_only() {
        let seq = small_sequence();
        let ds = NowcastDataset::prepare(&seq, 1, 13, 10).unwrap();
        // Train split is window 0 → frames 0..=22 feed the fit.
        let last_train_frame = ds.target_frame(ds.train.end - 1);
        assert_eq!(last_train_frame, 22);
        let stack = augment_stack(&seq, 1).unwrap();
        let fit: Vec<f32> = (0..=last_train_frame)
            .flat_map(|t| stack.frame(0, t).iter().copied())
            .collect();
        let expect = Normalizer::fit(&fit).unwrap();
        assert_eq!(ds.normalizer, expect);
        // Frames past the training range played no part: frame 23 and 24
        // exist but a fit over all frames would widen the bounds only if
        // they held more extreme values, which the clamp then absorbs.
        let all = Normalizer::fit(&stack.data).unwrap();
        assert!(all.min <= expect.min && all.max >= expect.max);
    }

    #[test]
    fn external_bounds_are_used_verbatim() {
        let seq = small_sequence();
        let norm = Normalizer { min: 0.0, max: 55.0 };
        let ds = NowcastDataset::prepare_with_norm(&seq, 1, 13, 10, norm).unwrap();
        assert_eq!(ds.normalizer, norm);
        let stack = augment_stack(&seq, 1).unwrap();
        for (a, &b) in ds.stack.data.iter().zip(stack.data.iter()) {
            assert_eq!(*a, norm.apply(b));
        }
    }

    #[test]
    fn single_channel_stack_is_the_thinned_raw_sequence() {
        let seq = small_sequence();
        let one = augment_stack(&seq, 1).unwrap();
        let five = augment_stack(&seq, 5).unwrap();
        assert_eq!(one.channels, 1);
        assert_eq!(five.channels, 5);
        // Channel 0 of the full stack is exactly the single-channel stack.
        assert_eq!(&five.data[..one.data.len()], &one.data[..]);
        assert!(matches!(
            augment_stack(&seq, 3),
            Err(CoreError::InvalidConfig(_))
        ));
    }
}
