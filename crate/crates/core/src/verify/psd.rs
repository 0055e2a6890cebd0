//! Radially averaged power spectral density of a 2-D field.
//!
//! The field is Fourier-transformed, the squared magnitudes are scaled so
//! the total power equals the mean of the squared pixel values (a
//! Parseval identity that the tests pin down), and power is averaged over
//! integer annuli of the centered frequency radius. The curve starts at
//! wavenumber 1: the DC bin only measures the field's mean and is
//! reported separately.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{CoreError, Result};

/// Radial power spectrum of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialPsd {
    /// Mean power in annulus `k`, for `k = 1 ..= curve.len()`; entry
    /// `curve[i]` is wavenumber `i + 1`. Length is `min(w, h) / 2`.
    pub curve: Vec<f64>,
    /// Power of the DC component (the squared field mean).
    pub dc: f64,
    /// Total power over every frequency, annulus-binned or not; equals
    /// the mean of the squared pixel values.
    pub total: f64,
}

/// Computes the radial power spectrum of a `w × h` row-major field.
///
/// Frequencies are centered (`kx ∈ (-w/2, w/2]`), each cell's power goes
/// to the annulus `round(√(kx² + ky²))`, and the curve reports the mean
/// power per annulus for wavenumbers `1 ..= min(w, h)/2`. Corner cells
/// beyond the last full annulus contribute to `total` but not to the
/// curve.
pub fn radial_psd(field: &[f32], w: usize, h: usize) -> Result<RadialPsd> {
    if w < 4 || h < 4 {
        return Err(CoreError::InvalidConfig(format!(
            "radial spectrum needs at least a 4x4 field, got {w}x{h}"
        )));
    }
    if field.len() != w * h {
        return Err(CoreError::InvalidConfig(format!(
            "field holds {} samples but dimensions are {w}x{h}",
            field.len()
        )));
    }
    if let Some(bad) = field.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: format!("field sample {bad} in radial spectrum"),
        });
    }

    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    // Rows first, then columns via a transpose: after both passes,
    // spectrum[x * h + y] holds F(kx = x, ky = y).
    let mut rows: Vec<Complex<f64>> = field
        .iter()
        .map(|&v| Complex::new(v as f64, 0.0))
        .collect();
    row_fft.process(&mut rows);
    let mut spectrum = vec![Complex::new(0.0, 0.0); w * h];
    for y in 0..h {
        for x in 0..w {
            spectrum[x * h + y] = rows[y * w + x];
        }
    }
    col_fft.process(&mut spectrum);

    let norm = 1.0 / ((w * h) as f64 * (w * h) as f64);
    let k_max = w.min(h) / 2;
    let mut sums = vec![0.0f64; k_max + 1];
    let mut counts = vec![0usize; k_max + 1];
    let mut total = 0.0f64;
    let mut dc = 0.0f64;
    for x in 0..w {
        // Signed centered frequency for index x.
        let kx = if x <= w / 2 { x as f64 } else { x as f64 - w as f64 };
        for y in 0..h {
            let ky = if y <= h / 2 { y as f64 } else { y as f64 - h as f64 };
            let power = spectrum[x * h + y].norm_sqr() * norm;
            total += power;
            if x == 0 && y == 0 {
                dc = power;
                continue;
            }
            let bin = (kx * kx + ky * ky).sqrt().round() as usize;
            if bin <= k_max {
                sums[bin] += power;
                counts[bin] += 1;
            }
        }
    }
    let curve = (1..=k_max)
        .map(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 })
        .collect();
    Ok(RadialPsd { curve, dc, total })
}
