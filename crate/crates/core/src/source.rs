//! Warm-vapor biphoton source: Poisson pair emissions with a Laplace
//! signal-idler delay.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::polarization::{bell_state, BellKind, TwoQubitState};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Delays are drawn from a Laplace law truncated at this many coherence times.
pub const DELAY_CUTOFF_TAUS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    pub label: String,
    /// Pairs per second at the source output.
    pub pair_rate: f64,
    /// Laplace scale of the signal-idler delay, ps.
    pub coherence_time: f64,
    pub emitted_state: TwoQubitState,
}

impl SourceParams {
    pub fn new(label: impl Into<String>, pair_rate: f64, coherence_time: f64) -> Result<Self> {
        let p = SourceParams {
            label: label.into(),
            pair_rate,
            coherence_time,
            emitted_state: bell_state(BellKind::PhiPlus),
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose coherence time reproduces `g2_peak` at `pair_rate`.
    pub fn from_g2(label: impl Into<String>, pair_rate: f64, g2_peak: f64) -> Result<Self> {
        let tau = coherence_time_for_g2(pair_rate, g2_peak)?;
        Self::new(label, pair_rate, tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate.is_finite() && self.pair_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "source {}: pair rate {} must be finite and non-negative",
                self.label, self.pair_rate
            )));
        }
        if !(self.coherence_time.is_finite() && self.coherence_time > 0.0) {
            return Err(Error::invalid(format!(
                "source {}: coherence time {} must be positive",
                self.label, self.coherence_time
            )));
        }
        Ok(())
    }

    /// Largest |signal − idler| delay the sampler can produce, ps.
    pub fn max_delay(&self) -> f64 {
        DELAY_CUTOFF_TAUS * self.coherence_time
    }
}

/// One biphoton emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEmission<'a> {
    /// 1324-nm photon emission time, ps.
    pub t_idler: i64,
    /// 795-nm photon emission time, ps.
    pub t_signal: i64,
    pub state: &'a TwoQubitState,
    pub source_label: &'a str,
}

impl PairEmission<'_> {
    pub fn delay(&self) -> i64 {
        self.t_signal - self.t_idler
    }
}

/// `τc = 1/(2·R·(g2 − 1))` in ps, inverting the peak of [`expected_g2`].
pub fn coherence_time_for_g2(pair_rate: f64, g2_peak: f64) -> Result<f64> {
    if !(g2_peak.is_finite() && g2_peak > 1.0) {
        return Err(Error::invalid(format!("g2 peak {g2_peak} must exceed 1")));
    }
    if !(pair_rate.is_finite() && pair_rate > 0.0) {
        return Err(Error::invalid(format!(
            "pair rate {pair_rate} must be positive"
        )));
    }
    Ok(PS_PER_S / (2.0 * pair_rate * (g2_peak - 1.0)))
}

/// Model cross-correlation `1 + exp(−|τ|/τc)/(2Rτc)` at delay `tau` ps.
pub fn expected_g2(params: &SourceParams, tau: f64) -> f64 {
    if params.pair_rate <= 0.0 {
        return 1.0;
    }
    let rtau = params.pair_rate * params.coherence_time / PS_PER_S;
    1.0 + (-tau.abs() / params.coherence_time).exp() / (2.0 * rtau)
}

/// Homogeneous Poisson arrival times on `[t_start, t_end)` at `rate_per_s`.
///
/// Times are accumulated in floating point from `t_start` and rounded to
/// whole picoseconds, so the result is sorted.
pub(crate) fn poisson_times<R: Rng + ?Sized>(
    rate_per_s: f64,
    t_start: i64,
    t_end: i64,
    rng: &mut R,
    out: &mut Vec<i64>,
) {
    if rate_per_s <= 0.0 || t_end <= t_start {
        return;
    }
    let mean_gap = PS_PER_S / rate_per_s;
    let span = (t_end - t_start) as f64;
    let mut acc = 0.0f64;
    loop {
        let g: f64 = rng.sample(Exp1);
        acc += g * mean_gap;
        if acc >= span {
            break;
        }
        let t = t_start + acc as i64;
        if t >= t_end {
            break;
        }
        out.push(t);
    }
}

/// Symmetric Laplace delay with scale `tau`, truncated at `cutoff` by rejection.
#[inline]
pub(crate) fn laplace_delay<R: Rng + ?Sized>(tau: f64, cutoff: f64, rng: &mut R) -> f64 {
    loop {
        let bits: u64 = rng.random();
        // Low bit picks the sign; the rest feed an exponential variate.
        let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let mag = -u.ln() * tau;
        if mag <= cutoff {
            return if bits & 1 == 0 { mag } else { -mag };
        }
    }
}

/// Emissions of one source on `[t_start, t_end)`, sorted by idler time.
pub fn sample_emissions<'a, R: Rng + ?Sized>(
    params: &'a SourceParams,
    t_start: i64,
    t_end: i64,
    rng: &mut R,
) -> Result<Vec<PairEmission<'a>>> {
    if t_end < t_start {
        return Err(Error::invalid(format!(
            "emission interval end {t_end} precedes start {t_start}"
        )));
    }
    params.validate()?;
    let mut idlers = Vec::new();
    poisson_times(params.pair_rate, t_start, t_end, rng, &mut idlers);
    let cutoff = params.max_delay();
    Ok(idlers
        .into_iter()
        .map(|t| {
            let d = laplace_delay(params.coherence_time, cutoff, rng);
            PairEmission {
                t_idler: t,
                t_signal: t + d.round() as i64,
                state: &params.emitted_state,
                source_label: &params.label,
            }
        })
        .collect())
}
