//! Recovery of the relative clock offset between two correlated streams.

use statrs::distribution::{DiscreteCDF, Poisson};

use super::g2::{g2_histogram, g2_histogram_over};
use crate::error::{Error, Result};

/// False-alarm probability for declaring a correlation peak, before the
/// correction for the number of bins searched.
const FALSE_ALARM: f64 = 1e-3;

/// Delay `t_b − t_a` of the cross-correlation peak, to bin resolution.
///
/// The peak must stand at least 5σ above the median bin and be improbable as
/// a Poisson fluctuation anywhere in the searched range; otherwise the
/// streams are reported as uncorrelated.
pub fn estimate_offset(a: &[u64], b: &[u64], search_range: f64, bin: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "offset estimation needs two non-empty streams",
        ));
    }
    let h = g2_histogram(a, b, bin, search_range)?;
    let (peak_i, _) = h.peak().expect("histogram has bins");
    let peak = h.counts[peak_i] as f64;
    let mut sorted = h.counts.clone();
    sorted.sort_unstable();
    let floor = sorted[sorted.len() / 2] as f64;
    let nbins = h.counts.len() as f64;
    let tail = if floor > 0.0 {
        let p = Poisson::new(floor).expect("positive mean");
        p.sf(peak as u64 - 1)
    } else if peak > 0.0 {
        // Empty background: demand a handful of coincident counts.
        if peak >= 5.0 {
            0.0
        } else {
            1.0
        }
    } else {
        1.0
    };
    if peak < floor + 5.0 * floor.sqrt() || tail >= FALSE_ALARM / nbins {
        return Err(Error::NoSignal(format!(
            "no correlation peak: max bin {peak} over floor {floor} in {nbins} bins"
        )));
    }
    Ok(h.bin_center(peak_i))
}

/// Background-subtracted centroid of the correlation peak near `coarse`.
///
/// Uses `fine_bin` bins over ±`half_span` and the mean of the outer quarter
/// of the span as background.
pub fn refine_offset(
    a: &[u64],
    b: &[u64],
    coarse: f64,
    half_span: f64,
    fine_bin: f64,
) -> Result<f64> {
    let shifted: Vec<u64> = b
        .iter()
        .filter_map(|&t| {
            let s = t as f64 - coarse.round();
            (s >= 0.0).then_some(s as u64)
        })
        .collect();
    let duration = match (a.first(), a.last()) {
        (Some(x), Some(y)) => (*y - *x).max(1) as f64,
        _ => return Err(Error::invalid("empty reference stream")),
    };
    let h = g2_histogram_over(a, &shifted, fine_bin, half_span, duration)?;
    let n = h.counts.len();
    let outer: Vec<f64> = (0..n)
        .filter(|&i| h.bin_center(i).abs() >= 0.75 * half_span)
        .map(|i| h.counts[i] as f64)
        .collect();
    let bg = if outer.is_empty() {
        0.0
    } else {
        outer.iter().sum::<f64>() / outer.len() as f64
    };
    let (mut w, mut m) = (0.0, 0.0);
    for i in 0..n {
        let x = h.bin_center(i);
        if x.abs() < 0.75 * half_span {
            let e = (h.counts[i] as f64 - bg).max(0.0);
            w += e;
            m += e * x;
        }
    }
    if w <= 0.0 {
        return Err(Error::NoSignal(
            "no excess counts around the coarse offset".into(),
        ));
    }
    Ok(coarse.round() + m / w)
}
