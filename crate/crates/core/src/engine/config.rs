//! Scenario configuration: the JSON document accepted by the engine, its
//! validation, and resolution into concrete model parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsm::{BsmParams, BsmPort};
use crate::detector::{ChannelId, DetectorParams};
use crate::error::{Error, Result};
use crate::fiber::{db_to_transmission, transmission_probability, ApcParams, FiberParams};
use crate::polarization::{bell_state, BellKind, TwoQubitState};
use crate::source::{coherence_time_for_g2, SourceParams};

/// Tags are laid out on a timeline starting here so that negative clock
/// offsets never produce negative timestamps.
pub const TIMELINE_ORIGIN_PS: i64 = 1_000_000_000;

/// Largest accepted magnitude of a node clock offset, ps.
pub const MAX_CLOCK_OFFSET_PS: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    /// Free-form provenance notes keyed by field path.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
    pub sources: [SourceConfig; 2],
    pub links: LinksConfig,
    pub bsm: BsmConfig,
    pub detectors: DetectorsConfig,
    #[serde(default)]
    pub clocks: ClocksConfig,
    pub acquisition: AcquisitionPlan,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub label: String,
    /// Pairs per second at the source. Exclusive with `target_spoke_singles_hz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_rate_hz: Option<f64>,
    /// Calibrate the pair rate so the spoke detector sees this singles rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_spoke_singles_hz: Option<f64>,
    /// Peak signal-idler cross-correlation. Exclusive with `coherence_time_ps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2_peak: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_time_ps: Option<f64>,
    #[serde(default = "default_state")]
    pub state: BellKind,
}

fn default_state() -> BellKind {
    BellKind::PhiPlus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default)]
    pub fiber: FiberParams,
    #[serde(default = "ApcParams::disabled")]
    pub apc: ApcParams,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            fiber: FiberParams::default(),
            apc: ApcParams::disabled(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksConfig {
    /// 1324-nm arms, source k to the hub.
    pub idler: [LinkConfig; 2],
    /// 795-nm arms, source k to its spoke analyzer.
    #[serde(default)]
    pub signal: [LinkConfig; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsmConfig {
    pub excess_loss_db: f64,
    pub hom_visibility: f64,
    /// Defaults to the mean coherence time of the two sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_width_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsConfig {
    /// Spoke detectors behind the S1 and S2 analyzers.
    pub spoke: [DetectorParams; 2],
    /// Hub detectors in the order Port1-H, Port1-V, Port2-H, Port2-V.
    pub hub: [DetectorParams; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    #[serde(default)]
    pub offset_ps: f64,
    #[serde(default = "default_sync_jitter")]
    pub sync_jitter_sigma_ps: f64,
}

fn default_sync_jitter() -> f64 {
    30.0
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel {
            offset_ps: 0.0,
            sync_jitter_sigma_ps: default_sync_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ClocksConfig {
    #[serde(default)]
    pub spoke: [ClockModel; 2],
    #[serde(default)]
    pub hub: ClockModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellEntry {
    pub hwp1_deg: f64,
    pub hwp2_deg: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionPlan {
    pub dwells: Vec<DwellEntry>,
    #[serde(default = "one")]
    pub n_cycles: u32,
    /// Duration multiplier applied by the paper-scale switch.
    #[serde(default = "ten")]
    pub paper_scale_factor: f64,
}

fn one() -> u32 {
    1
}
fn ten() -> f64 {
    10.0
}

/// Waveplate angles of a CHSH measurement, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for ChshSettings {
    fn default() -> Self {
        ChshSettings {
            a: 0.0,
            a_prime: 22.5,
            b: 11.25,
            b_prime: 33.75,
        }
    }
}

impl ChshSettings {
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("settings `{s}`: {e}")))?;
        if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "settings `{s}` must be four finite angles a,a',b,b'"
            )));
        }
        Ok(ChshSettings {
            a: v[0],
            a_prime: v[1],
            b: v[2],
            b_prime: v[3],
        })
    }

    /// The sixteen (hwp1, hwp2) dwells needed for one S estimate.
    pub fn required_dwells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(16);
        for x in [self.a, self.a + 45.0, self.a_prime, self.a_prime + 45.0] {
            for y in [self.b, self.b + 45.0, self.b_prime, self.b_prime + 45.0] {
                out.push((x, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Largest click separation forming a herald, ps.
    #[serde(default = "default_window")]
    pub bsm_window_ps: f64,
    #[serde(default = "default_rois")]
    pub roi_ps: Vec<f64>,
    #[serde(default = "default_herald")]
    pub herald: BellKind,
    #[serde(default)]
    pub settings: ChshSettings,
    /// Leading span used to locate the spoke-hub correlation peaks, ps.
    #[serde(default = "default_calibration")]
    pub calibration_ps: f64,
    #[serde(default = "default_search")]
    pub offset_search_ps: f64,
    /// Explicit spoke window centers, bypassing calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers_ps: Option<[f64; 2]>,
}

fn default_window() -> f64 {
    1000.0
}
fn default_rois() -> Vec<f64> {
    vec![
        250.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0, 5000.0,
    ]
}
fn default_herald() -> BellKind {
    BellKind::PsiMinus
}
fn default_calibration() -> f64 {
    1e11
}
fn default_search() -> f64 {
    2.5e8
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bsm_window_ps: default_window(),
            roi_ps: default_rois(),
            herald: default_herald(),
            settings: ChshSettings::default(),
            calibration_ps: default_calibration(),
            offset_search_ps: default_search(),
            centers_ps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Which spoke-to-hub link is monitored (0 or 1).
    #[serde(default)]
    pub link: usize,
    #[serde(default = "default_sample_interval")]
    pub sample_interval_s: f64,
    #[serde(default = "one_f")]
    pub burst_s: f64,
    #[serde(default = "default_window")]
    pub roi_ps: f64,
    #[serde(default = "default_hours")]
    pub hours: f64,
}

fn default_sample_interval() -> f64 {
    600.0
}
fn one_f() -> f64 {
    1.0
}
fn default_hours() -> f64 {
    30.0
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            link: 0,
            sample_interval_s: default_sample_interval(),
            burst_s: 1.0,
            roi_ps: default_window(),
            hours: default_hours(),
        }
    }
}

/// Role of a tag channel in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Spoke1,
    Spoke2,
    Hub(BsmPort),
}

impl ChannelRole {
    pub fn name(self) -> String {
        match self {
            ChannelRole::Spoke1 => "spoke1".into(),
            ChannelRole::Spoke2 => "spoke2".into(),
            ChannelRole::Hub(p) => format!("hub {}", p.name()),
        }
    }
}

/// Channel map for the six detectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMap {
    pub spoke: [ChannelId; 2],
    /// Port1-H, Port1-V, Port2-H, Port2-V.
    pub hub: [ChannelId; 4],
}

impl ChannelMap {
    pub fn all(&self) -> [(ChannelId, ChannelRole); 6] {
        [
            (self.spoke[0], ChannelRole::Spoke1),
            (self.spoke[1], ChannelRole::Spoke2),
            (self.hub[0], ChannelRole::Hub(BsmPort::P1H)),
            (self.hub[1], ChannelRole::Hub(BsmPort::P1V)),
            (self.hub[2], ChannelRole::Hub(BsmPort::P2H)),
            (self.hub[3], ChannelRole::Hub(BsmPort::P2V)),
        ]
    }
}

/// Parameters of one spoke after resolution.
#[derive(Debug, Clone)]
pub struct ResolvedSpoke {
    pub source: SourceParams,
    pub idler_link: LinkConfig,
    pub signal_link: LinkConfig,
    /// Probability the idler reaches the splitter (fiber, compensator, BSM loss).
    pub idler_to_bsm: f64,
    /// Probability the signal reaches its analyzer.
    pub signal_transmission: f64,
    pub idler_delay_ps: i64,
    pub signal_delay_ps: i64,
}

/// A validated configuration with derived model parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub spokes: [ResolvedSpoke; 2],
    pub bsm: BsmParams,
    pub channels: ChannelMap,
    pub config_hash: String,
}

fn check(cond: bool, path: impl Into<String>, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

/// Re-roots a field-local config error under `prefix`.
fn nest(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        Error::InvalidArgument(m) => Error::config(prefix.to_string(), m),
        other => other,
    })
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path.is_empty() { ".".into() } else { path },
                e.into_inner().to_string(),
            )
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Multiplies every dwell duration by the paper-scale factor.
    pub fn paper_scaled(&self) -> Self {
        let mut c = self.clone();
        let f = c.acquisition.paper_scale_factor;
        for d in &mut c.acquisition.dwells {
            d.duration_s *= f;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Validates the configuration and derives the model parameters.
    pub fn resolve(&self) -> Result<Scenario> {
        check(!self.name.trim().is_empty(), "name", "must not be empty")?;

        for k in 0..2 {
            let p = format!("links.idler[{k}]");
            nest(&format!("{p}.fiber"), self.links.idler[k].fiber.validate())?;
            nest(&format!("{p}.apc"), self.links.idler[k].apc.validate())?;
            let p = format!("links.signal[{k}]");
            nest(&format!("{p}.fiber"), self.links.signal[k].fiber.validate())?;
            nest(&format!("{p}.apc"), self.links.signal[k].apc.validate())?;
        }
        for k in 0..2 {
            nest(
                &format!("detectors.spoke[{k}]"),
                self.detectors.spoke[k].validate(),
            )?;
        }
        for k in 0..4 {
            nest(
                &format!("detectors.hub[{k}]"),
                self.detectors.hub[k].validate(),
            )?;
        }
        let mut ids: Vec<ChannelId> = self.detectors.spoke.iter().map(|d| d.channel).collect();
        ids.extend(self.detectors.hub.iter().map(|d| d.channel));
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        check(
            sorted.len() == ids.len(),
            "detectors",
            format!("channel ids must be unique, got {ids:?}"),
        )?;

        let clocks = [
            &self.clocks.spoke[0],
            &self.clocks.spoke[1],
            &self.clocks.hub,
        ];
        let names = ["clocks.spoke[0]", "clocks.spoke[1]", "clocks.hub"];
        for (c, n) in clocks.iter().zip(names) {
            check(
                c.offset_ps.is_finite() && c.offset_ps.abs() <= MAX_CLOCK_OFFSET_PS,
                format!("{n}.offset_ps"),
                format!("must satisfy |offset| <= {MAX_CLOCK_OFFSET_PS:e}"),
            )?;
            check(
                c.sync_jitter_sigma_ps.is_finite() && c.sync_jitter_sigma_ps >= 0.0,
                format!("{n}.sync_jitter_sigma_ps"),
                "must be >= 0",
            )?;
        }

        let acq = &self.acquisition;
        check(
            !acq.dwells.is_empty(),
            "acquisition.dwells",
            "must not be empty",
        )?;
        check(acq.n_cycles >= 1, "acquisition.n_cycles", "must be >= 1")?;
        check(
            finite_pos(acq.paper_scale_factor),
            "acquisition.paper_scale_factor",
            "must be > 0",
        )?;
        for (i, d) in acq.dwells.iter().enumerate() {
            let p = format!("acquisition.dwells[{i}]");
            check(
                finite_pos(d.duration_s),
                format!("{p}.duration_s"),
                "must be > 0",
            )?;
            check(
                d.hwp1_deg.is_finite(),
                format!("{p}.hwp1_deg"),
                "must be finite",
            )?;
            check(
                d.hwp2_deg.is_finite(),
                format!("{p}.hwp2_deg"),
                "must be finite",
            )?;
        }

        let an = &self.analysis;
        check(
            finite_pos(an.bsm_window_ps),
            "analysis.bsm_window_ps",
            "must be > 0",
        )?;
        check(
            !an.roi_ps.is_empty(),
            "analysis.roi_ps",
            "must not be empty",
        )?;
        check(
            an.roi_ps.iter().all(|r| finite_pos(*r)) && an.roi_ps.windows(2).all(|w| w[0] < w[1]),
            "analysis.roi_ps",
            "must be positive and strictly increasing",
        )?;
        check(
            an.herald.is_heraldable(),
            "analysis.herald",
            "only psi+ and psi- can be heralded",
        )?;
        check(
            finite_pos(an.calibration_ps),
            "analysis.calibration_ps",
            "must be > 0",
        )?;
        check(
            finite_pos(an.offset_search_ps),
            "analysis.offset_search_ps",
            "must be > 0",
        )?;
        if let Some(st) = &self.stability {
            check(st.link < 2, "stability.link", "must be 0 or 1")?;
            check(
                finite_pos(st.sample_interval_s),
                "stability.sample_interval_s",
                "must be > 0",
            )?;
            check(finite_pos(st.burst_s), "stability.burst_s", "must be > 0")?;
            check(finite_pos(st.roi_ps), "stability.roi_ps", "must be > 0")?;
            check(finite_pos(st.hours), "stability.hours", "must be > 0")?;
        }

        let bsm_t = db_to_transmission(self.bsm.excess_loss_db.max(0.0));
        let mut resolved = Vec::with_capacity(2);
        for k in 0..2 {
            let sc = &self.sources[k];
            let p = format!("sources[{k}]");
            check(
                !sc.label.trim().is_empty(),
                format!("{p}.label"),
                "must not be empty",
            )?;
            let il = &self.links.idler[k];
            let sl = &self.links.signal[k];
            let signal_t = transmission_probability(&sl.fiber, &sl.apc);
            let det = &self.detectors.spoke[k];
            let rate = match (sc.pair_rate_hz, sc.target_spoke_singles_hz) {
                (Some(r), None) => {
                    check(
                        r.is_finite() && r >= 0.0,
                        format!("{p}.pair_rate_hz"),
                        "must be >= 0",
                    )?;
                    r
                }
                (None, Some(m)) => {
                    check(
                        finite_pos(m),
                        format!("{p}.target_spoke_singles_hz"),
                        "must be > 0",
                    )?;
                    calibrate_pair_rate(m, det, signal_t)
                        .map_err(|msg| Error::config(format!("{p}.target_spoke_singles_hz"), msg))?
                }
                _ => {
                    return Err(Error::config(
                        p,
                        "exactly one of pair_rate_hz and target_spoke_singles_hz is required",
                    ))
                }
            };
            let tau = match (sc.g2_peak, sc.coherence_time_ps) {
                (Some(g), None) => {
                    check(
                        g.is_finite() && g > 1.0,
                        format!("{p}.g2_peak"),
                        "must exceed 1",
                    )?;
                    check(
                        rate > 0.0,
                        format!("{p}.g2_peak"),
                        "needs a positive pair rate",
                    )?;
                    coherence_time_for_g2(rate, g)?
                }
                (None, Some(t)) => {
                    check(
                        finite_pos(t),
                        format!("{p}.coherence_time_ps"),
                        "must be > 0",
                    )?;
                    t
                }
                _ => {
                    return Err(Error::config(
                        p,
                        "exactly one of g2_peak and coherence_time_ps is required",
                    ))
                }
            };
            let source = SourceParams {
                label: sc.label.clone(),
                pair_rate: rate,
                coherence_time: tau,
                emitted_state: bell_state(sc.state),
            };
            resolved.push(ResolvedSpoke {
                source,
                idler_link: il.clone(),
                signal_link: sl.clone(),
                idler_to_bsm: transmission_probability(&il.fiber, &il.apc) * bsm_t,
                signal_transmission: signal_t,
                idler_delay_ps: il.fiber.delay().round() as i64,
                signal_delay_ps: sl.fiber.delay().round() as i64,
            });
        }
        check(
            resolved[0].source.label != resolved[1].source.label,
            "sources[1].label",
            "source labels must differ",
        )?;

        let width = self.bsm.overlap_width_ps.unwrap_or(
            0.5 * (resolved[0].source.coherence_time + resolved[1].source.coherence_time),
        );
        let bsm = BsmParams {
            excess_loss_db: self.bsm.excess_loss_db,
            hom_visibility: self.bsm.hom_visibility,
            overlap_width_ps: width,
        };
        nest("bsm", bsm.validate())?;

        let channels = ChannelMap {
            spoke: [
                self.detectors.spoke[0].channel,
                self.detectors.spoke[1].channel,
            ],
            hub: [
                self.detectors.hub[0].channel,
                self.detectors.hub[1].channel,
                self.detectors.hub[2].channel,
                self.detectors.hub[3].channel,
            ],
        };
        let spokes: [ResolvedSpoke; 2] = resolved.try_into().expect("two spokes");
        Ok(Scenario {
            config: self.clone(),
            spokes,
            bsm,
            channels,
            config_hash: self.hash(),
        })
    }
}

/// Pair rate that yields `singles` detected counts per second at a spoke
/// detector, inverting non-paralyzable dead time and removing darks.
///
/// Assumes the analyzer transmits half of the signal photons on average.
pub fn calibrate_pair_rate(
    singles: f64,
    det: &DetectorParams,
    signal_transmission: f64,
) -> std::result::Result<f64, String> {
    let tau = det.dead_time_ps * 1e-12;
    let denom = 1.0 - singles * tau;
    if denom <= 0.0 {
        return Err(format!(
            "singles rate {singles} is above the dead-time limit"
        ));
    }
    let true_rate = singles / denom - det.dark_rate_hz;
    let per_pair = 0.5 * signal_transmission * det.efficiency;
    if true_rate <= 0.0 || per_pair <= 0.0 {
        return Err("target is not reachable with this detector and arm".into());
    }
    Ok(true_rate / per_pair)
}

impl Scenario {
    pub fn spoke_detector(&self, k: usize) -> &DetectorParams {
        &self.config.detectors.spoke[k]
    }

    pub fn hub_detector(&self, port: BsmPort) -> &DetectorParams {
        &self.config.detectors.hub[port.index()]
    }

    pub fn analysis(&self) -> &AnalysisConfig {
        &self.config.analysis
    }

    /// Mean hub detector efficiency.
    pub fn hub_efficiency(&self) -> f64 {
        self.config
            .detectors
            .hub
            .iter()
            .map(|d| d.efficiency)
            .sum::<f64>()
            / 4.0
    }

    pub fn bsm_transmission(&self) -> f64 {
        self.bsm.transmission()
    }

    pub fn state(&self, k: usize) -> &TwoQubitState {
        &self.spokes[k].source.emitted_state
    }

    /// Total timing spread of a spoke or hub tag: detector jitter and
    /// residual clock jitter in quadrature.
    pub fn spoke_sigma(&self, k: usize) -> f64 {
        self.spoke_detector(k)
            .jitter_sigma_ps
            .hypot(self.config.clocks.spoke[k].sync_jitter_sigma_ps)
    }

    pub fn hub_sigma(&self, port: BsmPort) -> f64 {
        self.hub_detector(port)
            .jitter_sigma_ps
            .hypot(self.config.clocks.hub.sync_jitter_sigma_ps)
    }

    /// Pairing horizon for arrivals at the splitter, ps.
    pub fn pairing_horizon(&self) -> i64 {
        (10.0 * self.bsm.overlap_width_ps).clamp(1.0, 1e6).round() as i64
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn minimal_json() -> String {
        r#"{
            "name": "t",
            "sources": [
                {"label": "S1", "pair_rate_hz": 1e6, "g2_peak": 80},
                {"label": "S2", "pair_rate_hz": 1e6, "coherence_time_ps": 1500}
            ],
            "links": {"idler": [{}, {"fiber": {"loss_db": 1.0}}]},
            "bsm": {"excess_loss_db": 1.3, "hom_visibility": 0.8},
            "detectors": {
                "spoke": [
                    {"channel": 1, "efficiency": 0.65, "jitter_sigma_ps": 350, "dead_time_ps": 25000, "dark_rate_hz": 250},
                    {"channel": 2, "efficiency": 0.65, "jitter_sigma_ps": 350, "dead_time_ps": 25000, "dark_rate_hz": 250}
                ],
                "hub": [
                    {"channel": 3, "efficiency": 0.85, "jitter_sigma_ps": 50, "dead_time_ps": 20000, "dark_rate_hz": 100},
                    {"channel": 4, "efficiency": 0.85, "jitter_sigma_ps": 50, "dead_time_ps": 20000, "dark_rate_hz": 100},
                    {"channel": 5, "efficiency": 0.85, "jitter_sigma_ps": 50, "dead_time_ps": 20000, "dark_rate_hz": 100},
                    {"channel": 6, "efficiency": 0.85, "jitter_sigma_ps": 50, "dead_time_ps": 20000, "dark_rate_hz": 100}
                ]
            },
            "acquisition": {"dwells": [{"hwp1_deg": 0, "hwp2_deg": 0, "duration_s": 0.01}]}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_resolves() {
        let c = ScenarioConfig::from_json_str(&minimal_json()).unwrap();
        let s = c.resolve().unwrap();
        assert!((s.spokes[0].source.coherence_time - 1e12 / (2.0 * 1e6 * 79.0)).abs() < 1e-6);
        assert!(
            (s.bsm.overlap_width_ps - 0.5 * (s.spokes[0].source.coherence_time + 1500.0)).abs()
                < 1e-9
        );
        assert!((s.spokes[1].idler_to_bsm - 10f64.powf(-0.23)).abs() < 1e-12);
        assert_eq!(s.spokes[0].signal_transmission, 1.0);
        assert_eq!(s.config.analysis.herald, BellKind::PsiMinus);
        assert_eq!(s.config_hash.len(), 64);
    }

    #[test]
    fn unknown_fields_are_rejected_with_path() {
        let bad = minimal_json().replace(
            "\"hom_visibility\": 0.8",
            "\"hom_visibility\": 0.8, \"bogus\": 1",
        );
        match ScenarioConfig::from_json_str(&bad) {
            Err(Error::Config { path, message }) => {
                assert!(path.starts_with("bsm"), "{path}");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_errors_report_nested_path() {
        let bad = minimal_json().replace("\"loss_db\": 1.0", "\"loss_db\": \"x\"");
        match ScenarioConfig::from_json_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "links.idler[1].fiber.loss_db"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_report_field_path() {
        let cases = [
            (
                "\"hom_visibility\": 0.8",
                "\"hom_visibility\": 1.8",
                "bsm.hom_visibility",
            ),
            ("\"g2_peak\": 80", "\"g2_peak\": 1", "sources[0].g2_peak"),
            (
                "\"duration_s\": 0.01",
                "\"duration_s\": 0",
                "acquisition.dwells[0].duration_s",
            ),
            (
                "\"loss_db\": 1.0",
                "\"loss_db\": -1.0",
                "links.idler[1].fiber.loss_db",
            ),
            ("{\"channel\": 2,", "{\"channel\": 1,", "detectors"),
        ];
        for (from, to, want) in cases {
            let c = ScenarioConfig::from_json_str(&minimal_json().replacen(from, to, 1)).unwrap();
            match c.resolve() {
                Err(Error::Config { path, .. }) => assert_eq!(path, want),
                other => panic!("{want}: {other:?}"),
            }
        }
    }

    #[test]
    fn calibration_inverts_singles_model() {
        let det = DetectorParams::spad(1);
        let r = calibrate_pair_rate(1.7e6, &det, 1.0).unwrap();
        let true_rate = r * 0.5 * 0.65 + 250.0;
        let measured = true_rate / (1.0 + true_rate * 25e-9);
        assert!((measured - 1.7e6).abs() < 1e-3);
        assert!(calibrate_pair_rate(5e7, &det, 1.0).is_err());
    }

    #[test]
    fn chsh_settings_parse_and_dwells() {
        let s = ChshSettings::parse("0, 22.5,11.25,33.75").unwrap();
        assert_eq!(s, ChshSettings::default());
        assert_eq!(s.required_dwells().len(), 16);
        assert!(ChshSettings::parse("0,1,2").is_err());
        assert!(ChshSettings::parse("0,1,2,x").is_err());
    }
}
