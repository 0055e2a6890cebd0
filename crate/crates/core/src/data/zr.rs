//! Reflectivity / rain-rate conversion.
//!
//! Uses the power-law relation `Z = a R^b` with a = 58.53 and b = 1.56,
//! expressed in logarithmic units:
//!
//! ```text
//! dBZ = 10 log10(a) + 10 b log10(R)
//! ```
//!
//! Both directions are exact inverses of each other up to floating-point
//! rounding; rain rate must be strictly positive since log10 diverges at
//! zero.

use crate::error::{CoreError, Result};

/// Multiplicative constant of the Z-R power law.
pub const ZR_A: f64 = 58.53;
/// Exponent of the Z-R power law.
pub const ZR_B: f64 = 1.56;

/// `10 log10(a)`, the reflectivity of 1 mm/h rain.
pub fn dbz_offset() -> f64 {
    10.0 * ZR_A.log10()
}

/// Converts rain rate in mm/h to reflectivity in dBZ. Errors when the
/// rate is zero or negative.
pub fn rainrate_to_dbz(r: f64) -> Result<f64> {
    if r <= 0.0 || !r.is_finite() {
        return Err(CoreError::Domain(format!(
            "rain rate must be positive and finite, got {r}"
        )));
    }
    Ok(dbz_offset() + 10.0 * ZR_B * r.log10())
}

/// Converts reflectivity in dBZ to rain rate in mm/h. Defined for all
/// finite reflectivities; very negative dBZ simply maps to tiny rates.
pub fn dbz_to_rainrate(dbz: f64) -> f64 {
    10f64.powf((dbz - dbz_offset()) / (10.0 * ZR_B))
}
