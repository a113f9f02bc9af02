//! Long-duration monitoring of one spoke-to-hub link under polarization drift.
//!
//! Each sample draws Poisson coincidence counts from analytic rates for the
//! current drift rotation instead of generating tags.

use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::bsm::BsmPort;
use crate::chsh::{chsh_s, correlation_e, JointCounts};
use crate::engine::config::{Scenario, StabilityConfig, TIMELINE_ORIGIN_PS};
use crate::engine::oracle::laplace_gauss_cdf;
use crate::error::{Error, Result};
use crate::fiber::LinkDrift;
use crate::polarization::{
    apply_local, joint_projection_prob, PolarizationOperator, TwoQubitState,
};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySample {
    pub t_hours: f64,
    /// Net spoke-hub coincidence rate referred to the splitter input, /s.
    pub pair_rate_hz: f64,
    pub visibility_hv: f64,
    pub visibility_diag: f64,
    pub s: f64,
    pub s_err: f64,
    /// Rotation angle of the link at the sample, rad.
    pub drift_angle_rad: f64,
}

struct LinkModel {
    state: TwoQubitState,
    /// Coincidence rate per unit joint projection probability, /s.
    scale: f64,
    /// Rate of uncorrelated coincidences per pair of analyzer ports, /s.
    accidental: f64,
    referral: f64,
}

impl LinkModel {
    fn new(sc: &Scenario, cfg: &StabilityConfig) -> Self {
        let k = cfg.link;
        let spoke = &sc.spokes[k];
        let det = sc.spoke_detector(k);
        let hub_eta = sc.hub_efficiency();
        let hub_sigma = BsmPort::ALL.iter().map(|p| sc.hub_sigma(*p)).sum::<f64>() / 4.0;
        let hub_dark = sc
            .config
            .detectors
            .hub
            .iter()
            .map(|d| d.dark_rate_hz)
            .sum::<f64>()
            / 4.0;
        let tau = spoke.source.coherence_time;
        let sigma = sc.spoke_sigma(k).hypot(hub_sigma);
        let h = cfg.roi_ps;
        let cap = laplace_gauss_cdf(h, tau, sigma) - laplace_gauss_cdf(-h, tau, sigma);
        let r = spoke.source.pair_rate;
        let sig_eta = spoke.signal_transmission * det.efficiency;
        // Each analyzer port sees half of either photon on average.
        let s_spoke = 0.5 * r * sig_eta + det.dark_rate_hz;
        let s_hub = 0.5 * r * spoke.idler_to_bsm * hub_eta + hub_dark;
        LinkModel {
            state: *sc.state(k),
            scale: r * sig_eta * spoke.idler_to_bsm * hub_eta * cap,
            accidental: s_spoke * s_hub * 2.0 * h * 1e-12,
            referral: sc.bsm_transmission() * hub_eta,
        }
    }

    /// Expected coincidence rate with waveplates at `hwp_s`, `hwp_i` degrees.
    fn rate(&self, rho: &TwoQubitState, hwp_s: f64, hwp_i: f64) -> f64 {
        self.scale * joint_projection_prob(rho, 2.0 * hwp_s, 2.0 * hwp_i) + self.accidental
    }
}

fn draw(mean: f64, rng: &mut SimRng) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite mean").sample(rng)
    } else {
        0.0
    }
}

fn visibility(max: f64, min: f64) -> f64 {
    if max + min > 0.0 {
        (max - min) / (max + min)
    } else {
        0.0
    }
}

/// Simulates `total_hours` of monitoring with a sample every
/// `sample_interval_s`, starting at t = 0.
pub fn run_stability(
    sc: &Scenario,
    total_hours: f64,
    sample_interval_s: f64,
) -> Result<Vec<StabilitySample>> {
    if !(total_hours.is_finite() && total_hours > 0.0) {
        return Err(Error::invalid(format!(
            "total_hours {total_hours} must be > 0"
        )));
    }
    if !(sample_interval_s.is_finite() && sample_interval_s > 0.0) {
        return Err(Error::invalid(format!(
            "sample interval {sample_interval_s} must be > 0"
        )));
    }
    let cfg = sc.config.stability.clone().unwrap_or_default();
    if cfg.link > 1 {
        return Err(Error::config("stability.link", "must be 0 or 1"));
    }
    let model = LinkModel::new(sc, &cfg);
    let link = &sc.spokes[cfg.link].idler_link;
    let seed = sc.config.master_seed;
    let mut drift = LinkDrift::new(
        &link.fiber,
        &link.apc,
        TIMELINE_ORIGIN_PS,
        stream(seed, &format!("drift-idler-{}", cfg.link), 0),
    );
    let settings = sc.analysis().settings;
    let xs = [settings.a, settings.a_prime];
    let ys = [settings.b, settings.b_prime];
    let n = (total_hours * 3600.0 / sample_interval_s + 1e-9).floor() as u64 + 1;
    let burst = cfg.burst_s;
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let t_s = i as f64 * sample_interval_s;
        drift.advance_to(TIMELINE_ORIGIN_PS + (t_s * 1e12).round() as i64);
        let rho = apply_local(
            &PolarizationOperator::identity(),
            &drift.rotation(),
            &model.state,
        )?;
        let mut rng = stream(seed, "stability", i);
        let mut counts = |a: f64, b: f64| draw(model.rate(&rho, a, b) * burst, &mut rng);

        let mut e = Vec::with_capacity(4);
        for x in xs {
            for y in ys {
                let c = [
                    counts(x, y),
                    counts(x + 45.0, y + 45.0),
                    counts(x, y + 45.0),
                    counts(x + 45.0, y),
                ];
                e.push(correlation_e(&JointCounts {
                    counts: c,
                    live_time_s: [burst; 4],
                })?);
            }
        }
        let chsh = chsh_s([e[0], e[1], e[2], e[3]], settings);

        let hv = [
            counts(0.0, 0.0),
            counts(0.0, 45.0),
            counts(45.0, 0.0),
            counts(45.0, 45.0),
        ];
        let diag = [counts(22.5, 22.5), counts(22.5, 67.5)];
        // Both analyzer outputs are summed, so halve to match a single polarizer setting.
        let net = 0.5 * (hv.iter().sum::<f64>() - 4.0 * model.accidental * burst);
        out.push(StabilitySample {
            t_hours: t_s / 3600.0,
            pair_rate_hz: net / burst / model.referral,
            visibility_hv: visibility(hv[0], hv[1]),
            visibility_diag: visibility(diag[0], diag[1]),
            s: chsh.s,
            s_err: chsh.standard_error,
            drift_angle_rad: drift.state().angle(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::{tests::minimal_json, ScenarioConfig};

    fn scenario(drift: f64, apc: bool) -> Scenario {
        let mut c = ScenarioConfig::from_json_str(&minimal_json()).unwrap();
        c.links.idler[0].fiber.drift_rate = drift;
        c.links.idler[0].apc.enabled = apc;
        c.resolve().unwrap()
    }

    #[test]
    fn no_drift_is_flat() {
        let sc = scenario(0.0, false);
        let s = run_stability(&sc, 2.0, 600.0).unwrap();
        assert_eq!(s.len(), 13);
        let mean = s.iter().map(|x| x.pair_rate_hz).sum::<f64>() / s.len() as f64;
        for x in &s {
            assert!((x.pair_rate_hz / mean - 1.0).abs() < 0.02, "{x:?}");
            assert!((x.s - s[0].s).abs() < 5.0 * x.s_err, "{x:?}");
            assert_eq!(x.drift_angle_rad, 0.0);
        }
        assert!(s[0].s > 2.5);
    }

    #[test]
    fn deterministic() {
        let sc = scenario(0.3, true);
        assert_eq!(
            run_stability(&sc, 1.0, 300.0).unwrap(),
            run_stability(&sc, 1.0, 300.0).unwrap()
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        let sc = scenario(0.0, false);
        assert!(run_stability(&sc, 0.0, 600.0).is_err());
        assert!(run_stability(&sc, 1.0, -1.0).is_err());
    }
}
