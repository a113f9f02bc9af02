//! Heralded four-fold coincidences: a BSM click pair plus one tag on each
//! spoke, analysed in a single streaming pass.
//!
//! Definitions shared by every entry point:
//!
//! * Hub clicks from the four BSM detectors are merged in time order and
//!   grouped into clusters, maximal chains whose consecutive gaps are at most
//!   the BSM window.
//! * A cluster of exactly two clicks on different detectors whose pattern
//!   heralds a Bell state is a herald. Its reference time is the earlier
//!   click and `dt` the click separation.
//! * For each spoke the nearest tag to `t_ref + center` is matched to the
//!   herald. The event passes a window set when both matched distances are
//!   within the spoke half-widths and `dt` is within the herald limit.
//! * Events are attributed to the dwell containing `t_ref + center_1`.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::offset::{estimate_offset, refine_offset};
use super::twofold::{net_twofold, CoincidenceWindow};
use crate::bsm::{herald_from_clicks, BsmPort, ClickPattern};
use crate::detector::{ChannelId, TimeTagRecord};
use crate::engine::config::{AnalysisConfig, ChannelMap};
use crate::engine::dataset::{dwell_at, DwellAnnotation, RunMetadata, TagDataset, TagSink};
use crate::error::{Error, Result};
use crate::polarization::BellKind;

/// Span at the start of the calibration buffer used for the coarse offset search.
const COARSE_SPAN_PS: u64 = 20_000_000_000;
const COARSE_BIN_PS: f64 = 100.0;
/// Window used to count spoke-hub pairs during calibration.
const PAIR_WINDOW_PS: f64 = 10_000.0;
const PAIR_SIDE_OFFSET_PS: f64 = 200_000.0;
/// Slack against floating-point rounding when pruning candidate tags.
const SLACK_PS: f64 = 2.0;

/// Which channels form the analyzer and what counts as a herald.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldMap {
    pub channels: ChannelMap,
    /// Largest separation between consecutive clicks of one cluster, ps.
    pub bsm_window_ps: f64,
}

/// Spoke windows relative to the herald reference time, plus a limit on
/// the herald click separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourfoldWindows {
    pub spoke: [CoincidenceWindow; 2],
    pub max_herald_dt_ps: f64,
}

impl FourfoldWindows {
    /// Square region of interest: half-width `h` on both spokes and `dt <= h`.
    pub fn roi(centers: [f64; 2], h: f64) -> Self {
        FourfoldWindows {
            spoke: [
                CoincidenceWindow {
                    center: centers[0],
                    half_width: h,
                },
                CoincidenceWindow {
                    center: centers[1],
                    half_width: h,
                },
            ],
            max_herald_dt_ps: h,
        }
    }

    fn validate(&self) -> Result<()> {
        self.spoke[0].validate()?;
        self.spoke[1].validate()?;
        if !(self.max_herald_dt_ps >= 0.0) {
            return Err(Error::invalid("herald separation limit must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourfoldEvent {
    pub t_ref: u64,
    pub dwell: Option<u32>,
    pub kind: BellKind,
    pub dt: u64,
    /// Distance of the matched spoke tags from their window centres, ps.
    pub d: [f64; 2],
}

impl FourfoldEvent {
    fn passes(&self, w: &FourfoldWindows) -> bool {
        self.dt as f64 <= w.max_herald_dt_ps
            && self.d[0] <= w.spoke[0].half_width
            && self.d[1] <= w.spoke[1].half_width
    }
}

/// Four-fold counts keyed by herald kind and dwell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourfoldCount {
    pub per_dwell: BTreeMap<BellKind, Vec<u64>>,
    /// Events whose reference time falls outside every dwell.
    pub outside: BTreeMap<BellKind, u64>,
}

impl FourfoldCount {
    fn empty(n_dwells: usize) -> Self {
        let kinds = [BellKind::PsiPlus, BellKind::PsiMinus];
        FourfoldCount {
            per_dwell: kinds.iter().map(|k| (*k, vec![0; n_dwells])).collect(),
            outside: kinds.iter().map(|k| (*k, 0)).collect(),
        }
    }

    fn add(&mut self, kind: BellKind, dwell: Option<u32>) {
        match dwell {
            Some(d) => self.per_dwell.get_mut(&kind).expect("heraldable kind")[d as usize] += 1,
            None => *self.outside.get_mut(&kind).expect("heraldable kind") += 1,
        }
    }

    pub fn get(&self, kind: BellKind, dwell: usize) -> u64 {
        self.per_dwell
            .get(&kind)
            .and_then(|v| v.get(dwell))
            .copied()
            .unwrap_or(0)
    }

    /// Total over dwells (events outside dwells excluded).
    pub fn total(&self, kind: BellKind) -> u64 {
        self.per_dwell.get(&kind).map_or(0, |v| v.iter().sum())
    }
}

/// Analyzer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzerSettings {
    pub herald_map: HeraldMap,
    /// Largest spoke half-width that will be queried, ps.
    pub max_roi_ps: f64,
    /// Fixed spoke window centres; calibrated from the data when absent.
    pub centers_ps: Option<[f64; 2]>,
    /// Leading span buffered for calibration; zero disables buffering.
    pub calibration_ps: f64,
    pub offset_search_ps: f64,
}

impl AnalyzerSettings {
    pub fn from_config(cfg: &AnalysisConfig, channels: &ChannelMap, max_roi_ps: f64) -> Self {
        AnalyzerSettings {
            herald_map: HeraldMap {
                channels: channels.clone(),
                bsm_window_ps: cfg.bsm_window_ps,
            },
            max_roi_ps,
            centers_ps: cfg.centers_ps,
            calibration_ps: cfg.calibration_ps,
            offset_search_ps: cfg.offset_search_ps,
        }
    }

    /// Settings stored with a dataset, widened to cover `max_roi_ps`.
    pub fn for_metadata(meta: &RunMetadata, max_roi_ps: f64) -> Self {
        let default = AnalysisConfig::default();
        let cfg = meta.config.as_ref().map_or(&default, |c| &c.analysis);
        let max = cfg.roi_ps.iter().copied().fold(max_roi_ps, f64::max);
        Self::from_config(cfg, &meta.channels, max)
    }

    fn validate(&self) -> Result<()> {
        if !(self.herald_map.bsm_window_ps.is_finite() && self.herald_map.bsm_window_ps > 0.0) {
            return Err(Error::invalid("BSM window must be > 0"));
        }
        if !(self.max_roi_ps.is_finite() && self.max_roi_ps > 0.0) {
            return Err(Error::invalid("ROI must be > 0"));
        }
        if self.centers_ps.is_none() && !(self.calibration_ps > 0.0) {
            return Err(Error::invalid(
                "window centres need either explicit values or a calibration span",
            ));
        }
        Ok(())
    }
}

/// Result of one analysis pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourfoldAnalysis {
    pub centers_ps: [f64; 2],
    pub calibrated: bool,
    pub bsm_window_ps: f64,
    pub max_roi_ps: f64,
    /// Background-subtracted spoke-hub coincidences per second during calibration.
    pub spoke_hub_rate_hz: Option<[f64; 2]>,
    /// The same divided by the hub-side transmission factor.
    pub pair_rate_hz: Option<[f64; 2]>,
    pub dwells: Vec<DwellAnnotation>,
    /// Singles per channel per dwell.
    pub singles: BTreeMap<ChannelId, Vec<u64>>,
    /// Heralds per kind per dwell, regardless of spoke tags.
    pub heralds: FourfoldCount,
    pub events: Vec<FourfoldEvent>,
}

impl FourfoldAnalysis {
    pub fn live_time_s(&self) -> f64 {
        self.dwells.iter().map(DwellAnnotation::live_time_s).sum()
    }

    /// Counts for an arbitrary window set. Spoke window centres must match
    /// the analysis centres and half-widths must not exceed the maximum ROI.
    pub fn count(&self, windows: &FourfoldWindows) -> Result<FourfoldCount> {
        windows.validate()?;
        for k in 0..2 {
            if (windows.spoke[k].center - self.centers_ps[k]).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "spoke {} window centre {} differs from the analysed centre {}",
                    k + 1,
                    windows.spoke[k].center,
                    self.centers_ps[k]
                )));
            }
            if windows.spoke[k].half_width > self.max_roi_ps {
                return Err(Error::invalid(format!(
                    "half-width {} exceeds the analysed maximum {}",
                    windows.spoke[k].half_width, self.max_roi_ps
                )));
            }
        }
        let mut c = FourfoldCount::empty(self.dwells.len());
        for e in self.events.iter().filter(|e| e.passes(windows)) {
            c.add(e.kind, e.dwell);
        }
        Ok(c)
    }

    pub fn roi_counts(&self, h: f64) -> Result<FourfoldCount> {
        self.count(&FourfoldWindows::roi(self.centers_ps, h))
    }

    /// Counts for every ROI in `roi_list`.
    pub fn roi_sweep(&self, roi_list: &[f64], herald: BellKind) -> Result<RoiSweep> {
        validate_roi_list(roi_list)?;
        check_herald(herald)?;
        let live = self.live_time_s();
        let points = roi_list
            .iter()
            .map(|&h| {
                let counts = self.roi_counts(h)?;
                let total = counts.total(herald);
                Ok(RoiPoint {
                    roi_ps: h,
                    total,
                    rate_hz: if live > 0.0 { total as f64 / live } else { 0.0 },
                    counts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoiSweep {
            herald,
            live_time_s: live,
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiPoint {
    pub roi_ps: f64,
    pub counts: FourfoldCount,
    pub total: u64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiSweep {
    pub herald: BellKind,
    pub live_time_s: f64,
    pub points: Vec<RoiPoint>,
}

pub fn validate_roi_list(roi_list: &[f64]) -> Result<()> {
    if roi_list.is_empty() {
        return Err(Error::invalid("ROI list is empty"));
    }
    if !roi_list.iter().all(|r| r.is_finite() && *r > 0.0)
        || !roi_list.windows(2).all(|w| w[0] < w[1])
    {
        return Err(Error::invalid(format!(
            "ROI list {roi_list:?} must be positive and strictly increasing"
        )));
    }
    Ok(())
}

fn check_herald(kind: BellKind) -> Result<()> {
    if kind.is_heraldable() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{kind} cannot be heralded by this analyzer"
        )))
    }
}

/// Ensures the dataset carries all six analyzer channels.
fn check_channels(dataset: &TagDataset, map: &ChannelMap) -> Result<()> {
    for (ch, role) in map.all() {
        if !dataset.streams.contains_key(&ch) {
            return Err(Error::invalid(format!(
                "dataset has no channel {ch} ({})",
                role.name()
            )));
        }
    }
    Ok(())
}

/// Replay block length used for in-memory datasets, ps.
const REPLAY_BLOCK_PS: u64 = 10_000_000_000;

/// Runs the streaming analyzer over an in-memory dataset.
pub fn analyze_dataset(
    dataset: &TagDataset,
    settings: &AnalyzerSettings,
) -> Result<FourfoldAnalysis> {
    check_channels(dataset, &settings.herald_map.channels)?;
    let mut a = FourfoldAnalyzer::new(settings.clone())?;
    dataset.replay(&mut a, REPLAY_BLOCK_PS)?;
    a.into_result()
}

/// Four-fold counts for one window set.
pub fn fourfold_coincidences(
    dataset: &TagDataset,
    windows: &FourfoldWindows,
    herald_map: &HeraldMap,
) -> Result<FourfoldCount> {
    windows.validate()?;
    let settings = AnalyzerSettings {
        herald_map: herald_map.clone(),
        max_roi_ps: windows.spoke[0].half_width.max(windows.spoke[1].half_width),
        centers_ps: Some([windows.spoke[0].center, windows.spoke[1].center]),
        calibration_ps: 0.0,
        offset_search_ps: 0.0,
    };
    analyze_dataset(dataset, &settings)?.count(windows)
}

/// ROI sweep using the analysis settings recorded with the dataset.
pub fn roi_sweep(dataset: &TagDataset, roi_list: &[f64], herald: BellKind) -> Result<RoiSweep> {
    validate_roi_list(roi_list)?;
    check_herald(herald)?;
    let settings =
        AnalyzerSettings::for_metadata(&dataset.metadata, *roi_list.last().expect("non-empty"));
    analyze_dataset(dataset, &settings)?.roi_sweep(roi_list, herald)
}

#[derive(Debug, Clone, Copy)]
struct Herald {
    t_ref: u64,
    dt: u64,
    kind: BellKind,
}

#[derive(Debug, Default, Clone, Copy)]
struct Cluster {
    n: u32,
    first: (u64, u8),
    second: (u64, u8),
    last: u64,
}

/// Streaming analyzer. Feed it tags through [`TagSink`], then call
/// [`FourfoldAnalyzer::into_result`].
pub struct FourfoldAnalyzer {
    settings: AnalyzerSettings,
    slot_of: BTreeMap<ChannelId, usize>,
    channel_of: [ChannelId; 6],
    dwells: Vec<DwellAnnotation>,
    hub_factor: f64,
    t_start: u64,
    calibrating: bool,
    cal_buf: [Vec<u64>; 6],
    centers: [f64; 2],
    calibrated: bool,
    spoke_hub_rate: Option<[f64; 2]>,
    pair_rate: Option<[f64; 2]>,
    wm: [u64; 6],
    hub: [VecDeque<u64>; 4],
    spoke: [VecDeque<u64>; 2],
    cluster: Cluster,
    pending: VecDeque<Herald>,
    events: Vec<FourfoldEvent>,
    heralds: FourfoldCount,
    singles: [Vec<u64>; 6],
    single_cursor: [usize; 6],
    started: bool,
    finished: bool,
}

impl FourfoldAnalyzer {
    pub fn new(settings: AnalyzerSettings) -> Result<Self> {
        settings.validate()?;
        let ch = &settings.herald_map.channels;
        let channel_of = [
            ch.spoke[0],
            ch.spoke[1],
            ch.hub[0],
            ch.hub[1],
            ch.hub[2],
            ch.hub[3],
        ];
        let slot_of = channel_of
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i))
            .collect::<BTreeMap<_, _>>();
        if slot_of.len() != 6 {
            return Err(Error::invalid(format!(
                "analyzer channels must be distinct, got {channel_of:?}"
            )));
        }
        Ok(FourfoldAnalyzer {
            centers: settings.centers_ps.unwrap_or([0.0; 2]),
            settings,
            slot_of,
            channel_of,
            dwells: Vec::new(),
            hub_factor: 0.0,
            t_start: 0,
            calibrating: false,
            cal_buf: Default::default(),
            calibrated: false,
            spoke_hub_rate: None,
            pair_rate: None,
            wm: [0; 6],
            hub: Default::default(),
            spoke: Default::default(),
            cluster: Cluster::default(),
            pending: VecDeque::new(),
            events: Vec::new(),
            heralds: FourfoldCount::empty(0),
            singles: Default::default(),
            single_cursor: [0; 6],
            started: false,
            finished: false,
        })
    }

    pub fn into_result(self) -> Result<FourfoldAnalysis> {
        if !self.finished {
            return Err(Error::invalid(
                "analyzer has not seen the end of the stream",
            ));
        }
        let singles = (0..6)
            .map(|s| (self.channel_of[s], self.singles[s].clone()))
            .collect();
        Ok(FourfoldAnalysis {
            centers_ps: self.centers,
            calibrated: self.calibrated,
            bsm_window_ps: self.settings.herald_map.bsm_window_ps,
            max_roi_ps: self.settings.max_roi_ps,
            spoke_hub_rate_hz: self.spoke_hub_rate,
            pair_rate_hz: self.pair_rate,
            dwells: self.dwells,
            singles,
            heralds: self.heralds,
            events: self.events,
        })
    }

    fn calibration_end(&self) -> u64 {
        self.t_start
            .saturating_add(self.settings.calibration_ps.max(0.0) as u64)
    }

    fn count_singles(&mut self, slot: usize, tags: &[u64]) {
        let n = self.dwells.len();
        for &t in tags {
            let c = &mut self.single_cursor[slot];
            while *c < n && self.dwells[*c].end_ps <= t {
                *c += 1;
            }
            if *c < n && self.dwells[*c].contains(t) {
                self.singles[slot][*c] += 1;
            }
        }
    }

    fn ingest(&mut self, slot: usize, tags: &[u64]) {
        self.count_singles(slot, tags);
        if slot < 2 {
            self.spoke[slot].extend(tags.iter().copied());
        } else {
            self.hub[slot - 2].extend(tags.iter().copied());
        }
    }

    fn calibrate(&mut self) -> Result<()> {
        let buf = std::mem::take(&mut self.cal_buf);
        let mut hub: Vec<u64> = buf[2..].iter().flatten().copied().collect();
        hub.sort_unstable();
        let span_end = buf
            .iter()
            .filter_map(|b| b.last())
            .max()
            .copied()
            .unwrap_or(self.t_start);
        let span = (span_end
            .min(self.calibration_end())
            .saturating_sub(self.t_start)) as f64
            * 1e-12;

        if self.settings.centers_ps.is_none() {
            let coarse_end = self.t_start.saturating_add(COARSE_SPAN_PS);
            let hub_early = &hub[..hub.partition_point(|&t| t < coarse_end)];
            for k in 0..2 {
                let spoke_early = &buf[k][..buf[k].partition_point(|&t| t < coarse_end)];
                if hub_early.is_empty() || spoke_early.is_empty() {
                    return Err(Error::NoSignal(format!(
                        "no spoke {} or hub tags in the calibration span",
                        k + 1
                    )));
                }
                let coarse = estimate_offset(
                    hub_early,
                    spoke_early,
                    self.settings.offset_search_ps,
                    COARSE_BIN_PS,
                )
                .map_err(|e| match e {
                    Error::NoSignal(m) => Error::NoSignal(format!("spoke {} vs hub: {m}", k + 1)),
                    other => other,
                })?;
                self.centers[k] =
                    refine_offset(&hub, &buf[k], coarse, 5000.0, 20.0).unwrap_or(coarse);
            }
            self.calibrated = true;
        }

        if span > 0.0 && !hub.is_empty() {
            let mut rates = [0.0; 2];
            for k in 0..2 {
                let w = CoincidenceWindow {
                    center: self.centers[k],
                    half_width: PAIR_WINDOW_PS,
                };
                rates[k] = net_twofold(&hub, &buf[k], &w, PAIR_SIDE_OFFSET_PS)? / span;
            }
            self.spoke_hub_rate = Some(rates);
            if self.hub_factor > 0.0 {
                self.pair_rate = Some(rates.map(|r| r / self.hub_factor));
            }
        }

        self.calibrating = false;
        for (slot, tags) in buf.iter().enumerate() {
            self.ingest(slot, tags);
        }
        Ok(())
    }

    fn next_hub(&self, safe: u64) -> Option<(usize, u64)> {
        let mut best: Option<(usize, u64)> = None;
        for (i, q) in self.hub.iter().enumerate() {
            if let Some(&t) = q.front() {
                if t < safe && best.is_none_or(|(_, b)| t < b) {
                    best = Some((i, t));
                }
            }
        }
        best
    }

    fn close_cluster(&mut self) {
        let c = std::mem::take(&mut self.cluster);
        if c.n != 2 || c.first.1 == c.second.1 {
            return;
        }
        let pattern = ClickPattern::new(&[
            BsmPort::from_index(c.first.1 as usize),
            BsmPort::from_index(c.second.1 as usize),
        ]);
        if let Some(kind) = herald_from_clicks(pattern) {
            self.pending.push_back(Herald {
                t_ref: c.first.0,
                dt: c.second.0 - c.first.0,
                kind,
            });
        }
    }

    fn process(&mut self) {
        let w = self.settings.herald_map.bsm_window_ps;
        let safe = self.wm[2..].iter().copied().min().expect("four hub slots");
        while let Some((i, t)) = self.next_hub(safe) {
            self.hub[i].pop_front();
            if self.cluster.n > 0 && (t - self.cluster.last) as f64 > w {
                self.close_cluster();
            }
            let c = &mut self.cluster;
            match c.n {
                0 => c.first = (t, i as u8),
                1 => c.second = (t, i as u8),
                _ => {}
            }
            c.n += 1;
            c.last = t;
        }
        if self.cluster.n > 0 && safe as f64 > self.cluster.last as f64 + w {
            self.close_cluster();
        }

        let h = self.settings.max_roi_ps;
        while let Some(&hd) = self.pending.front() {
            let ready = (0..2)
                .all(|k| self.wm[k] as f64 > hd.t_ref as f64 + self.centers[k] + h + SLACK_PS);
            if !ready {
                break;
            }
            self.pending.pop_front();
            let dwell = dwell_at(
                &self.dwells,
                (hd.t_ref as f64 + self.centers[0]).round().max(0.0) as u64,
            );
            if let Some(d) = dwell {
                self.heralds.add(hd.kind, Some(d as u32));
            } else {
                self.heralds.add(hd.kind, None);
            }
            let d = [0, 1].map(|k| self.nearest(k, hd.t_ref, h));
            if hd.dt as f64 <= w && d[0] <= h && d[1] <= h {
                self.events.push(FourfoldEvent {
                    t_ref: hd.t_ref,
                    dwell: dwell.map(|x| x as u32),
                    kind: hd.kind,
                    dt: hd.dt,
                    d,
                });
            }
        }

        // Drop spoke tags no future herald can reach.
        let mut lb = safe;
        if self.cluster.n > 0 {
            lb = lb.min(self.cluster.first.0);
        }
        if let Some(p) = self.pending.front() {
            lb = lb.min(p.t_ref);
        }
        for q in &self.hub {
            if let Some(&t) = q.front() {
                lb = lb.min(t);
            }
        }
        for k in 0..2 {
            let cut = lb as f64 + self.centers[k] - h - SLACK_PS;
            while self.spoke[k].front().is_some_and(|&t| (t as f64) < cut) {
                self.spoke[k].pop_front();
            }
        }
    }

    /// Distance from `t_ref + center_k` to the nearest spoke-`k` tag, or
    /// infinity when none lies within `h`.
    fn nearest(&mut self, k: usize, t_ref: u64, h: f64) -> f64 {
        let c = self.centers[k];
        let x = t_ref as f64 + c;
        let q = &mut self.spoke[k];
        while q.front().is_some_and(|&t| (t as f64) < x - h - SLACK_PS) {
            q.pop_front();
        }
        let mut best = f64::INFINITY;
        for &t in q.iter() {
            if t as f64 > x + h + SLACK_PS {
                break;
            }
            let d = ((t as i64 - t_ref as i64) as f64 - c).abs();
            if d < best {
                best = d;
            }
        }
        best
    }
}

impl TagSink for FourfoldAnalyzer {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()> {
        if self.started {
            return Err(Error::invalid("analyzer already used"));
        }
        self.started = true;
        self.dwells = meta.dwells.clone();
        self.hub_factor = meta.hub_factor;
        self.t_start = meta.t_start_ps;
        self.heralds = FourfoldCount::empty(self.dwells.len());
        for s in &mut self.singles {
            *s = vec![0; self.dwells.len()];
        }
        self.calibrating = self.settings.calibration_ps > 0.0;
        Ok(())
    }

    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        let Some(&slot) = self.slot_of.get(&channel) else {
            return Ok(());
        };
        let times: Vec<u64> = tags.iter().map(|t| t.timestamp).collect();
        if self.calibrating {
            self.cal_buf[slot].extend_from_slice(&times);
        } else {
            self.ingest(slot, &times);
        }
        Ok(())
    }

    fn advance(&mut self, marks: &[(ChannelId, u64)]) -> Result<()> {
        for &(ch, m) in marks {
            if let Some(&slot) = self.slot_of.get(&ch) {
                self.wm[slot] = self.wm[slot].max(m);
            }
        }
        if self.calibrating {
            let lowest = self.wm.iter().copied().min().expect("six slots");
            if lowest < self.calibration_end() {
                return Ok(());
            }
            self.calibrate()?;
        }
        self.process();
        Ok(())
    }

    fn finish(&mut self, _meta: &RunMetadata) -> Result<()> {
        self.wm = [u64::MAX; 6];
        if self.calibrating {
            self.calibrate()?;
        }
        self.process();
        if self.cluster.n > 0 {
            self.close_cluster();
            self.process();
        }
        self.finished = true;
        Ok(())
    }
}
