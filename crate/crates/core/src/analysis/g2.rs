//! Cross-correlation histograms between two tag streams.

use serde::Serialize;

use crate::error::{Error, Result};

/// Delay histogram of `t_b − t_a` with bins centred on multiples of the bin width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Histogram {
    pub bin_width: f64,
    /// Half-range: bins run from `-k_max` to `k_max`.
    pub k_max: i64,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    /// Observation time used to normalize, ps.
    pub duration_ps: f64,
    /// False when either stream was empty; `g2()` is then all zeros.
    pub normalizable: bool,
}

impl G2Histogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Delay at the centre of bin `i`, ps.
    pub fn bin_center(&self, i: usize) -> f64 {
        (i as i64 - self.k_max) as f64 * self.bin_width
    }

    /// Expected counts per bin for uncorrelated streams.
    pub fn accidental_level(&self) -> f64 {
        if !self.normalizable || self.duration_ps <= 0.0 {
            return 0.0;
        }
        self.n_a as f64 * self.n_b as f64 * self.bin_width / self.duration_ps
    }

    pub fn g2(&self) -> Vec<f64> {
        let acc = self.accidental_level();
        self.counts
            .iter()
            .map(|&c| if acc > 0.0 { c as f64 / acc } else { 0.0 })
            .collect()
    }

    /// Index and normalized value of the highest bin.
    pub fn peak(&self) -> Option<(usize, f64)> {
        let g = self.g2();
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i)))?;
        Some((i, g[i]))
    }

    /// Mean normalized value over bins with `|delay| >= min_delay`.
    pub fn floor(&self, min_delay: f64) -> Option<f64> {
        let g = self.g2();
        let far: Vec<f64> = (0..g.len())
            .filter(|&i| self.bin_center(i).abs() >= min_delay)
            .map(|i| g[i])
            .collect();
        (!far.is_empty()).then(|| far.iter().sum::<f64>() / far.len() as f64)
    }
}

/// Bin index of delay `d` for bins centred on multiples of `bin`.
#[inline]
pub(crate) fn bin_of(d: i64, bin: i64) -> i64 {
    (2 * d + bin).div_euclid(2 * bin)
}

fn bin_width_ps(bin: f64) -> Result<i64> {
    if !(bin.is_finite() && bin >= 1.0) {
        return Err(Error::invalid(format!(
            "bin width must be >= 1 ps, got {bin}"
        )));
    }
    Ok(bin.round() as i64)
}

/// Histogram of `t_b − t_a` over ±`range` with bins of width `bin`.
///
/// Normalizes over the span covered by the two streams.
pub fn g2_histogram(a: &[u64], b: &[u64], bin: f64, range: f64) -> Result<G2Histogram> {
    let span = match (a.first(), a.last(), b.first(), b.last()) {
        (Some(a0), Some(a1), Some(b0), Some(b1)) => (*a1.max(b1) - *a0.min(b0)) as f64,
        _ => 0.0,
    };
    g2_histogram_over(a, b, bin, range, span)
}

/// As [`g2_histogram`] with an explicit normalization duration in ps.
pub fn g2_histogram_over(
    a: &[u64],
    b: &[u64],
    bin: f64,
    range: f64,
    duration_ps: f64,
) -> Result<G2Histogram> {
    let w = bin_width_ps(bin)?;
    if !(range.is_finite() && range >= bin) {
        return Err(Error::invalid(format!(
            "range {range} must be at least one bin ({bin})"
        )));
    }
    let k_max = (range / w as f64).floor() as i64;
    let mut counts = vec![0u64; (2 * k_max + 1) as usize];
    // Extreme delays that still land in an edge bin.
    let lo = -k_max * w - w / 2;
    let hi = k_max * w + (w - 1) / 2;
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        for &tb in &b[start..] {
            let d = tb as i64 - ta;
            if d > hi {
                break;
            }
            counts[(bin_of(d, w) + k_max) as usize] += 1;
        }
    }
    let normalizable = !a.is_empty() && !b.is_empty() && duration_ps > 0.0;
    Ok(G2Histogram {
        bin_width: w as f64,
        k_max,
        counts,
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        duration_ps,
        normalizable,
    })
}
