//! Closed-form expected four-fold rates for a scenario.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::bsm::{herald_probability, heralded_state};
use crate::engine::config::Scenario;
use crate::error::{Error, Result};
use crate::polarization::{
    apply_local, hwp_operator, BellKind, PolarizationOperator, TwoQubitState,
};

/// Midpoint nodes used to average over the herald click separation.
const DT_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedRate {
    /// Four-folds from two genuinely swapped pairs, /s.
    pub true_rate_hz: f64,
    /// Four-folds with at least one uncorrelated spoke tag, /s.
    pub accidental_rate_hz: f64,
}

impl ExpectedRate {
    pub fn total(&self) -> f64 {
        self.true_rate_hz + self.accidental_rate_hz
    }
}

/// `ln Φ(z)` for the standard normal CDF.
fn ln_phi(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of a symmetric Laplace delay (scale `tau`) plus Gaussian jitter `sigma`.
pub fn laplace_gauss_cdf(x: f64, tau: f64, sigma: f64) -> f64 {
    if tau <= 0.0 {
        return if sigma > 0.0 {
            phi(x / sigma)
        } else if x >= 0.0 {
            1.0
        } else {
            0.0
        };
    }
    if sigma <= 0.0 {
        return if x >= 0.0 {
            1.0 - 0.5 * (-x / tau).exp()
        } else {
            0.5 * (x / tau).exp()
        };
    }
    let a = sigma * sigma / (2.0 * tau * tau);
    let lo = 0.5 * (a - x / tau + ln_phi(x / sigma - sigma / tau)).exp();
    let hi = 0.5 * (a + x / tau + ln_phi(-x / sigma - sigma / tau)).exp();
    (phi(x / sigma) - lo + hi).clamp(0.0, 1.0)
}

/// Probability that `delay + Laplace(tau) + N(0, sigma)` lies in `[-h, h]`.
fn capture(delay: f64, h: f64, tau: f64, sigma: f64) -> f64 {
    (laplace_gauss_cdf(h - delay, tau, sigma) - laplace_gauss_cdf(-h - delay, tau, sigma)).max(0.0)
}

/// Detected rate after non-paralyzable dead time.
fn dead_time_rate(rate: f64, dead_ps: f64) -> f64 {
    rate / (1.0 + rate * dead_ps * 1e-12)
}

/// Expected four-fold rate at one waveplate setting for ROI half-width `roi_ps`.
///
/// Counts heralds with both hub clicks within `min(roi, bsm_window)` and both
/// signals within `roi` of their calibrated delay. Accidentals are first
/// order in the spoke singles.
pub fn expected_fourfold_rate(
    sc: &Scenario,
    hwp1_deg: f64,
    hwp2_deg: f64,
    roi_ps: f64,
    herald: BellKind,
) -> Result<ExpectedRate> {
    if !(roi_ps.is_finite() && roi_ps > 0.0) {
        return Err(Error::invalid(format!("roi {roi_ps} must be > 0")));
    }
    if !herald.is_heraldable() {
        return Err(Error::invalid(format!(
            "{herald} cannot be heralded by this analyzer"
        )));
    }
    let id = PolarizationOperator::identity();
    let hwp = [hwp_operator(hwp1_deg)?, hwp_operator(hwp2_deg)?];
    let rho: Vec<TwoQubitState> = (0..2)
        .map(|k| apply_local(&hwp[k], &id, sc.state(k)))
        .collect::<Result<_>>()?;

    let w_eff = roi_ps.min(sc.analysis().bsm_window_ps);
    let eta_h = sc.hub_efficiency();
    let hub_sigma = crate::bsm::BsmPort::ALL
        .iter()
        .map(|p| sc.hub_sigma(*p))
        .sum::<f64>()
        / 4.0;
    let tau = [0, 1].map(|k| sc.spokes[k].source.coherence_time);
    let sigma = [0, 1].map(|k| sc.spoke_sigma(k).hypot(hub_sigma));
    let idler_flux =
        [0, 1].map(|k| sc.spokes[k].source.pair_rate * sc.spokes[k].idler_to_bsm * eta_h);

    let pass = [0, 1].map(|k| rho[k].population(0, 0) + rho[k].population(0, 1));
    let singles = [0, 1].map(|k| {
        let det = sc.spoke_detector(k);
        let eta = sc.spokes[k].signal_transmission * det.efficiency;
        let incident = sc.spokes[k].source.pair_rate * pass[k] * eta + det.dark_rate_hz;
        dead_time_rate(incident, det.dead_time_ps)
    });
    // Detection efficiency of a signal reaching the analyzer, including dead time.
    let sig_eta = [0, 1].map(|k| {
        let det = sc.spoke_detector(k);
        sc.spokes[k].signal_transmission
            * det.efficiency
            * (1.0 - singles[k] * det.dead_time_ps * 1e-12)
    });
    let acc = [0, 1].map(|k| singles[k] * 2.0 * roi_ps * 1e-12);

    // Cross-source heralds: the later click's source is shifted by dt.
    let cross_pairs = idler_flux[0] * idler_flux[1] * 2.0 * w_eff * 1e-12;
    let mut true_sum = 0.0;
    let mut acc_sum = 0.0;
    for i in 0..DT_NODES {
        let dt = (i as f64 + 0.5) / DT_NODES as f64 * w_eff;
        let v = crate::bsm::pair_overlap(dt, &sc.bsm);
        let ph = herald_probability(&rho[0], &rho[1], herald, v)?;
        if ph <= 0.0 {
            continue;
        }
        let st = heralded_state(&rho[0], &rho[1], herald, v)?;
        let p_both = st.population(0, 0);
        let p1 = st.population(0, 0) + st.population(0, 1);
        let p2 = st.population(0, 0) + st.population(1, 0);
        let c0 = [
            capture(0.0, roi_ps, tau[0], sigma[0]),
            capture(0.0, roi_ps, tau[1], sigma[1]),
        ];
        let cs = [
            capture(dt, roi_ps, tau[0], sigma[0]),
            capture(dt, roi_ps, tau[1], sigma[1]),
        ];
        let cap_both = 0.5 * (cs[0] * c0[1] + c0[0] * cs[1]);
        let cap = [0.5 * (cs[0] + c0[0]), 0.5 * (cs[1] + c0[1])];
        true_sum += ph * p_both * cap_both * sig_eta[0] * sig_eta[1];
        let q1 = p1 * cap[0] * sig_eta[0];
        let q2 = p2 * cap[1] * sig_eta[1];
        acc_sum += ph
            * (q1 * (1.0 - q2) * acc[1]
                + q2 * (1.0 - q1) * acc[0]
                + (1.0 - q1) * (1.0 - q2) * acc[0] * acc[1]);
    }
    let true_rate = cross_pairs * true_sum / DT_NODES as f64;
    let mut accidental = cross_pairs * acc_sum / DT_NODES as f64;

    // Two idlers of one source landing on a herald pattern.
    for k in 0..2 {
        let r = &rho[k];
        let sig_h = [r.population(0, 0), r.population(0, 1)];
        let idl = [
            r.population(0, 0) + r.population(1, 0),
            r.population(0, 1) + r.population(1, 1),
        ];
        // Distinct ports with opposite polarizations.
        let p_pattern = idl[0] * idl[1];
        if p_pattern <= 0.0 {
            continue;
        }
        let pairs = idler_flux[k] * idler_flux[k] * w_eff * 1e-12;
        let mut cap = 0.0;
        for i in 0..DT_NODES {
            let dt = (i as f64 + 0.5) / DT_NODES as f64 * w_eff;
            cap += 0.5
                * (capture(dt, roi_ps, tau[k], sigma[k]) + capture(0.0, roi_ps, tau[k], sigma[k]));
        }
        cap /= DT_NODES as f64;
        // Expected captured signals given one H and one V idler.
        let signals = (sig_h[0] / idl[0] + sig_h[1] / idl[1]) * cap * sig_eta[k];
        accidental += pairs * p_pattern * signals.min(1.0) * acc[1 - k];
    }
    Ok(ExpectedRate {
        true_rate_hz: true_rate.max(0.0),
        accidental_rate_hz: accidental.max(0.0),
    })
}
