//! Single-photon detectors and the time-tag record they emit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::poisson_times;

pub type ChannelId = u16;

/// Flag bit marking a dark count. Cleared in blind exports.
pub const FLAG_DARK: u16 = 1;

/// Jitter draws are truncated at this many standard deviations.
pub const JITTER_CUTOFF_SIGMAS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimeTagRecord {
    pub timestamp: u64,
    pub channel: ChannelId,
    pub flags: u16,
}

impl TimeTagRecord {
    pub fn is_dark(&self) -> bool {
        self.flags & FLAG_DARK != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub channel: ChannelId,
    pub efficiency: f64,
    /// Gaussian timing jitter, standard deviation in ps.
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: f64,
    /// Dark counts per second.
    pub dark_rate_hz: f64,
}

impl DetectorParams {
    /// Typical free-running silicon avalanche photodiode.
    pub fn spad(channel: ChannelId) -> Self {
        DetectorParams {
            channel,
            efficiency: 0.65,
            jitter_sigma_ps: 350.0,
            dead_time_ps: 25_000.0,
            dark_rate_hz: 250.0,
        }
    }

    /// Typical superconducting nanowire detector.
    pub fn snspd(channel: ChannelId, efficiency: f64) -> Self {
        DetectorParams {
            channel,
            efficiency,
            jitter_sigma_ps: 50.0,
            dead_time_ps: 20_000.0,
            dark_rate_hz: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config("efficiency", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("jitter_sigma_ps", self.jitter_sigma_ps),
            ("dead_time_ps", self.dead_time_ps),
            ("dark_rate_hz", self.dark_rate_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Zero-mean Gaussian draw truncated at ±10σ, rounded to ps.
#[inline]
pub(crate) fn jitter<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> i64 {
    if sigma <= 0.0 {
        return 0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= JITTER_CUTOFF_SIGMAS {
            return (z * sigma).round() as i64;
        }
    }
}

/// Streaming detector back end: jitter, clock offset, dark counts and
/// non-paralyzable dead time, released in time order up to a watermark.
#[derive(Debug, Clone)]
pub(crate) struct DetectorPipeline {
    pub(crate) channel: ChannelId,
    sigma: f64,
    offset: i64,
    dead_time: i64,
    dark_rate: f64,
    last_accepted: Option<i64>,
    pending: Vec<(i64, u16)>,
    pub(crate) dropped_dead: u64,
    pub(crate) dropped_negative: u64,
}

impl DetectorPipeline {
    /// `sigma` is the total timing spread; `offset` shifts every tag.
    pub(crate) fn new(params: &DetectorParams, sigma: f64, offset: i64) -> Self {
        DetectorPipeline {
            channel: params.channel,
            sigma,
            offset,
            dead_time: params.dead_time_ps.round() as i64,
            dark_rate: params.dark_rate_hz,
            last_accepted: None,
            pending: Vec::new(),
            dropped_dead: 0,
            dropped_negative: 0,
        }
    }

    /// Lower bound on the tag time of a photon arriving at true time `t`.
    pub(crate) fn earliest_tag(&self, t: i64) -> i64 {
        t + self.offset - (JITTER_CUTOFF_SIGMAS * self.sigma).ceil() as i64 - 1
    }

    #[inline]
    pub(crate) fn push<R: Rng + ?Sized>(&mut self, t: i64, rng: &mut R) {
        let j = jitter(self.sigma, rng);
        self.pending.push((t + j + self.offset, 0));
    }

    /// Dark counts on the true-time interval `[t0, t1)`.
    pub(crate) fn add_darks<R: Rng + ?Sized>(&mut self, t0: i64, t1: i64, rng: &mut R) {
        let start = self.pending.len();
        let mut times = Vec::new();
        poisson_times(self.dark_rate, t0, t1, rng, &mut times);
        self.pending
            .extend(times.into_iter().map(|t| (t + self.offset, FLAG_DARK)));
        debug_assert!(self.pending.len() >= start);
    }

    /// Emits every pending tag with time `< watermark`, in order.
    pub(crate) fn flush(&mut self, watermark: i64, out: &mut Vec<TimeTagRecord>) {
        self.pending.sort_unstable();
        let n = self.pending.partition_point(|&(t, _)| t < watermark);
        for &(t, flags) in &self.pending[..n] {
            if t < 0 {
                self.dropped_negative += 1;
                continue;
            }
            if let Some(last) = self.last_accepted {
                if t - last < self.dead_time {
                    self.dropped_dead += 1;
                    continue;
                }
            }
            self.last_accepted = Some(t);
            out.push(TimeTagRecord {
                timestamp: t as u64,
                channel: self.channel,
                flags,
            });
        }
        self.pending.drain(..n);
    }

    pub(crate) fn pending_len(&self) -> usize {
        self.pending.len()
    }
}

/// Converts time-sorted photon arrivals (ps) into tags over `[t_start, t_end)`.
///
/// Tags that jitter would place before time zero are discarded.
pub fn detect<R: Rng + ?Sized>(
    arrivals: &[i64],
    params: &DetectorParams,
    t_start: i64,
    t_end: i64,
    rng: &mut R,
) -> Result<Vec<TimeTagRecord>> {
    params.validate()?;
    if arrivals.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("arrivals are not time-sorted"));
    }
    if t_end < t_start {
        return Err(Error::invalid("dark-count interval end precedes start"));
    }
    let mut pipe = DetectorPipeline::new(params, params.jitter_sigma_ps, 0);
    for &t in arrivals {
        if rng.random::<f64>() < params.efficiency {
            pipe.push(t, rng);
        }
    }
    pipe.add_darks(t_start, t_end, rng);
    let mut out = Vec::with_capacity(pipe.pending_len());
    pipe.flush(i64::MAX, &mut out);
    Ok(out)
}
