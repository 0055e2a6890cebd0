//! Spatial channel augmentation and grid downsampling.
//!
//! Model inputs carry the raw reflectivity plus progressively smoothed
//! copies (mean filters of 3, 5, 9, and 25 pixels square), all computed at
//! full resolution *before* the grid is thinned, so the smooth channels
//! summarize neighbourhoods that the downsampled raw channel skips over.

use crate::error::{CoreError, Result};

/// Side lengths of the smoothing windows, one augmented channel each.
pub const MEAN_FILTER_SIZES: [usize; 4] = [3, 5, 9, 25];

/// Every fifth pixel survives downsampling.
pub const DOWNSAMPLE_STRIDE: usize = 5;

/// Number of channels after augmentation (raw + one per filter).
pub const AUGMENTED_CHANNELS: usize = 1 + MEAN_FILTER_SIZES.len();

/// Box mean with edge replication, computed through an integral image in
/// f64 so window sums are order-independent and exact to rounding.
pub fn mean_filter(frame: &[f32], w: usize, h: usize, size: usize) -> Result<Vec<f32>> {
    assert_eq!(frame.len(), w * h);
    if size == 0 || size.is_multiple_of(2) {
        return Err(CoreError::InvalidConfig(format!(
            "mean filter size must be odd and positive, got {size}"
        )));
    }
    if w < size || h < size {
        return Err(CoreError::InvalidConfig(format!(
            "frame {w}x{h} is smaller than the {size}x{size} filter window"
        )));
    }
    let r = size / 2;
    let (pw, ph) = (w + 2 * r, h + 2 * r);

    // Padded copy with replicated edges.
    let mut padded = vec![0.0f64; pw * ph];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            padded[py * pw + px] = frame[sy * w + sx] as f64;
        }
    }

    // Inclusive prefix sums over rows then columns, with a zero border so
    // lookups need no branching: integral[(y+1)(pw+1) + (x+1)] holds the
    // sum of padded[0..=y][0..=x].
    let iw = pw + 1;
    let mut integral = vec![0.0f64; iw * (ph + 1)];
    for y in 0..ph {
        let mut row_sum = 0.0f64;
        for x in 0..pw {
            row_sum += padded[y * pw + x];
            integral[(y + 1) * iw + (x + 1)] = integral[y * iw + (x + 1)] + row_sum;
        }
    }

    let area = (size * size) as f64;
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let (y0, y1) = (y, y + size);
        for x in 0..w {
            let (x0, x1) = (x, x + size);
            let sum = integral[y1 * iw + x1] - integral[y0 * iw + x1]
                - integral[y1 * iw + x0]
                + integral[y0 * iw + x0];
            out[y * w + x] = (sum / area) as f32;
        }
    }
    Ok(out)
}

/// Keeps every `stride`-th pixel starting at the origin; output dimensions
/// are the ceilings of the input dimensions over the stride.
pub fn downsample(frame: &[f32], w: usize, h: usize, stride: usize) -> (Vec<f32>, usize, usize) {
    assert!(stride >= 1);
    assert_eq!(frame.len(), w * h);
    let ow = w.div_ceil(stride);
    let oh = h.div_ceil(stride);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            out.push(frame[y * stride * w + x * stride]);
        }
    }
    (out, ow, oh)
}

/// Expands one full-resolution frame into its augmented, downsampled
/// channels: raw first, then one channel per mean filter size.
pub fn augment_channels(frame: &[f32], w: usize, h: usize) -> Result<(Vec<Vec<f32>>, usize, usize)> {
    let (raw, ow, oh) = downsample(frame, w, h, DOWNSAMPLE_STRIDE);
    let mut channels = Vec::with_capacity(AUGMENTED_CHANNELS);
    channels.push(raw);
    for &size in &MEAN_FILTER_SIZES {
        let smoothed = mean_filter(frame, w, h, size)?;
        let (ds, _, _) = downsample(&smoothed, w, h, DOWNSAMPLE_STRIDE);
        channels.push(ds);
    }
    Ok((channels, ow, oh))
}
