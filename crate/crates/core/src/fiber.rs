//! Fiber links: attenuation, group delay, polarization drift and the
//! periodic compensation loop.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::PolarizationOperator;
use crate::rng::SimRng;

/// Group delay of standard single-mode fiber, ps per km (4.9 ns/m).
pub const GROUP_DELAY_PS_PER_KM: f64 = 4.9e6;

pub const PS_PER_HOUR: f64 = 3.6e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    #[serde(default)]
    pub length_km: f64,
    /// Total fiber loss including connectors, dB.
    #[serde(default)]
    pub loss_db: f64,
    /// Explicit propagation delay; derived from the length when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ps: Option<f64>,
    /// Scale of the polarization random walk, rad/√h.
    #[serde(default)]
    pub drift_rate: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        FiberParams {
            length_km: 0.0,
            loss_db: 0.0,
            delay_ps: None,
            drift_rate: 0.0,
        }
    }
}

impl FiberParams {
    pub fn delay(&self) -> f64 {
        self.delay_ps
            .unwrap_or(self.length_km * GROUP_DELAY_PS_PER_KM)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("length_km", self.length_km),
            ("loss_db", self.loss_db),
            ("drift_rate", self.drift_rate),
            ("delay_ps", self.delay_ps.unwrap_or(0.0)),
        ];
        for (name, v) in checks {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApcParams {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "ApcParams::default_interval")]
    pub check_interval_s: f64,
    /// Rotation angle tolerated before a correction, rad.
    #[serde(default = "ApcParams::default_tolerance")]
    pub tolerance_rad: f64,
    #[serde(default = "ApcParams::default_insertion_loss")]
    pub insertion_loss_db: f64,
}

impl ApcParams {
    fn default_interval() -> f64 {
        30.0
    }
    fn default_tolerance() -> f64 {
        0.1
    }
    fn default_insertion_loss() -> f64 {
        2.0
    }

    pub fn disabled() -> Self {
        ApcParams {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.check_interval_s.is_finite() && self.check_interval_s > 0.0) {
            return Err(Error::config("check_interval_s", "must be > 0"));
        }
        if !(self.tolerance_rad.is_finite() && self.tolerance_rad >= 0.0) {
            return Err(Error::config("tolerance_rad", "must be >= 0"));
        }
        if !(self.insertion_loss_db.is_finite() && self.insertion_loss_db >= 0.0) {
            return Err(Error::config("insertion_loss_db", "must be >= 0"));
        }
        Ok(())
    }

    pub fn check_interval_ps(&self) -> i64 {
        (self.check_interval_s * 1e12).round().max(1.0) as i64
    }
}

impl Default for ApcParams {
    fn default() -> Self {
        ApcParams {
            enabled: true,
            check_interval_s: Self::default_interval(),
            tolerance_rad: Self::default_tolerance(),
            insertion_loss_db: Self::default_insertion_loss(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftState {
    pub current_rotation: PolarizationOperator,
    /// Simulation time of the last drift step, ps.
    pub last_update: i64,
}

impl DriftState {
    pub fn new(t: i64) -> Self {
        DriftState {
            current_rotation: PolarizationOperator::identity(),
            last_update: t,
        }
    }

    pub fn angle(&self) -> f64 {
        self.current_rotation.rotation_angle()
    }
}

/// Converts a loss in dB to a transmission probability.
pub fn db_to_transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Survival probability through fiber plus compensator insertion loss.
pub fn transmission_probability(fiber: &FiberParams, apc: &ApcParams) -> f64 {
    let il = if apc.enabled {
        apc.insertion_loss_db
    } else {
        0.0
    };
    db_to_transmission(fiber.loss_db + il)
}

/// Uniformly distributed unit vector.
fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Advances the polarization random walk to `now`.
pub fn step_drift<R: Rng + ?Sized>(
    state: &DriftState,
    now: i64,
    drift_rate: f64,
    rng: &mut R,
) -> Result<DriftState> {
    if now < state.last_update {
        return Err(Error::invalid(format!(
            "drift step to {now} ps precedes last update {} ps",
            state.last_update
        )));
    }
    let dt_h = (now - state.last_update) as f64 / PS_PER_HOUR;
    if dt_h == 0.0 || drift_rate == 0.0 {
        return Ok(DriftState {
            current_rotation: state.current_rotation,
            last_update: now,
        });
    }
    let sigma = drift_rate * dt_h.sqrt();
    let z: f64 = StandardNormal.sample(rng);
    let axis = random_axis(rng);
    let step = PolarizationOperator::rotation(axis, sigma * z);
    Ok(DriftState {
        current_rotation: step.compose(&state.current_rotation),
        last_update: now,
    })
}

/// One compensation check: resets the rotation when it exceeds tolerance.
pub fn apc_cycle(state: &DriftState, apc: &ApcParams, _now: i64) -> (DriftState, bool) {
    if apc.enabled && state.angle() > apc.tolerance_rad {
        (
            DriftState {
                current_rotation: PolarizationOperator::identity(),
                last_update: state.last_update,
            },
            true,
        )
    } else {
        (*state, false)
    }
}

/// Time evolution of one link's rotation on the compensation check grid.
///
/// Drift is stepped at every grid instant and the compensator (if enabled)
/// acts right after, so the rotation is piecewise constant between checks.
#[derive(Debug, Clone)]
pub struct LinkDrift {
    drift_rate: f64,
    apc: ApcParams,
    state: DriftState,
    rng: SimRng,
    interval: i64,
    next_check: i64,
    pub checks: u64,
    pub corrections: u64,
}

impl LinkDrift {
    pub fn new(fiber: &FiberParams, apc: &ApcParams, t0: i64, rng: SimRng) -> Self {
        let interval = apc.check_interval_ps();
        LinkDrift {
            drift_rate: fiber.drift_rate,
            apc: apc.clone(),
            state: DriftState::new(t0),
            rng,
            interval,
            next_check: t0 + interval,
            checks: 0,
            corrections: 0,
        }
    }

    /// Processes every check instant `≤ t`.
    pub fn advance_to(&mut self, t: i64) {
        while self.next_check <= t {
            let now = self.next_check;
            self.state = step_drift(&self.state, now, self.drift_rate, &mut self.rng)
                .expect("check grid is monotone");
            let (s, corrected) = apc_cycle(&self.state, &self.apc, now);
            self.state = s;
            self.checks += 1;
            self.corrections += u64::from(corrected);
            self.next_check += self.interval;
        }
    }

    pub fn rotation(&self) -> PolarizationOperator {
        self.state.current_rotation
    }

    pub fn state(&self) -> &DriftState {
        &self.state
    }
}

/// A photon that survived a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    /// Index of the photon in the input sequence.
    pub index: usize,
    pub time: i64,
    /// Rotation accumulated in the fiber at transit time.
    pub rotation: PolarizationOperator,
}

/// Sends time-sorted photons (emission times) through a link.
pub fn transmit<R: Rng + ?Sized>(
    emissions: &[i64],
    fiber: &FiberParams,
    apc: &ApcParams,
    drift: &mut LinkDrift,
    rng: &mut R,
) -> Result<Vec<Arrival>> {
    if emissions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("photon events are not time-sorted"));
    }
    let p = transmission_probability(fiber, apc);
    let delay = fiber.delay().round() as i64;
    let mut out = Vec::with_capacity((emissions.len() as f64 * p * 1.1) as usize + 8);
    for (index, &t) in emissions.iter().enumerate() {
        if rng.random::<f64>() < p {
            drift.advance_to(t);
            out.push(Arrival {
                index,
                time: t + delay,
                rotation: drift.rotation(),
            });
        }
    }
    Ok(out)
}
