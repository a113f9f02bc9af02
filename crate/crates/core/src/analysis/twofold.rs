//! Two-fold coincidence counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window of relative delays `center ± half_width`, ps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow {
    pub center: f64,
    pub half_width: f64,
}

impl CoincidenceWindow {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        let w = CoincidenceWindow { center, half_width };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(Error::invalid(format!(
                "half-width must be > 0, got {}",
                self.half_width
            )));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("window center must be finite"));
        }
        Ok(())
    }

    /// Inclusive integer delay bounds.
    pub(crate) fn bounds(&self) -> (i64, i64) {
        (
            (self.center - self.half_width).ceil() as i64,
            (self.center + self.half_width).floor() as i64,
        )
    }

    #[inline]
    pub fn contains(&self, delay: i64) -> bool {
        (delay as f64 - self.center).abs() <= self.half_width
    }
}

/// Number of tag pairs `(a, b)` with `t_b − t_a` inside the window.
///
/// Both streams must be time-sorted. Runs in a single pass with two
/// monotone cursors.
pub fn twofold_count(a: &[u64], b: &[u64], window: &CoincidenceWindow) -> Result<u64> {
    window.validate()?;
    let (lo_d, hi_d) = window.bounds();
    if hi_d < lo_d {
        return Ok(0);
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut n = 0u64;
    let nb = b.len();
    for &ta in a {
        let lo_t = ta as i64 + lo_d;
        let hi_t = ta as i64 + hi_d;
        while lo < nb && (b[lo] as i64) < lo_t {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < nb && (b[hi] as i64) <= hi_t {
            hi += 1;
        }
        n += (hi - lo) as u64;
    }
    Ok(n)
}

/// Coincidences in `window` minus the mean of two side windows displaced by
/// ±`side_offset`, as a background estimate.
pub fn net_twofold(
    a: &[u64],
    b: &[u64],
    window: &CoincidenceWindow,
    side_offset: f64,
) -> Result<f64> {
    let on = twofold_count(a, b, window)? as f64;
    let mut off = 0.0;
    for s in [-side_offset, side_offset] {
        off += twofold_count(
            a,
            b,
            &CoincidenceWindow {
                center: window.center + s,
                ..*window
            },
        )? as f64;
    }
    Ok(on - 0.5 * off)
}
