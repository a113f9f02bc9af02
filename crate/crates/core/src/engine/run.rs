//! Discrete-event generation of the six tag streams.
//!
//! Time is processed in short segments aligned to the dwell schedule. Each
//! segment draws the pairs of both sources, thins away pairs where neither
//! photon can be detected, and routes idlers that reach the splitter through
//! a pairing stage that decides which ones meet another photon there. Tags
//! are released to the sink behind per-channel watermarks, so memory stays
//! bounded by the segment length rather than the run length.

use std::collections::VecDeque;

use log::debug;
use rand::Rng;

use super::config::{Scenario, ScenarioConfig, TIMELINE_ORIGIN_PS};
use super::dataset::{
    schedule, MemorySink, RunMetadata, RunStats, TagDataset, TagSink, METADATA_VERSION,
};
use crate::bsm::{pair_overlap, BsmPort, SwapTable};
use crate::detector::{ChannelId, DetectorPipeline, TimeTagRecord};
use crate::error::Result;
use crate::fiber::LinkDrift;
use crate::polarization::{apply_local_unchecked, hwp_operator, TwoQubitState};
use crate::rng::{stream, SimRng};
use crate::source::{laplace_delay, poisson_times};

/// Segment length, ps.
pub const SEGMENT_PS: i64 = 10_000_000_000;

/// Idler that reached the splitter and is waiting to be resolved.
#[derive(Debug, Clone, Copy)]
struct BsmItem {
    t_arr: i64,
    t_sig: i64,
    seg: u32,
    src: u8,
}

struct SegmentCtx {
    seg: u32,
    /// (signal after its analysis waveplate, idler after its fiber).
    rho: [TwoQubitState; 2],
    table: SwapTable,
}

struct SpokeModel {
    rate: f64,
    tau: f64,
    cutoff: f64,
    p_idler: f64,
    sig_eta: f64,
    d_idler: i64,
    d_sig: i64,
    label: String,
}

struct Engine<'s> {
    sc: &'s Scenario,
    seed: u64,
    horizon: i64,
    spokes: [SpokeModel; 2],
    hub_eta: [f64; 4],
    spoke_pipes: [DetectorPipeline; 2],
    hub_pipes: [DetectorPipeline; 4],
    idler_drift: [LinkDrift; 2],
    signal_drift: [LinkDrift; 2],
    ctxs: VecDeque<SegmentCtx>,
    carry: Vec<BsmItem>,
    fresh: [Vec<BsmItem>; 2],
    merged: Vec<BsmItem>,
    times: Vec<i64>,
    out: Vec<TimeTagRecord>,
    marks: Vec<(ChannelId, u64)>,
    stats: RunStats,
}

/// Simulates the scenario and collects all tags in memory.
pub fn run_scenario(config: &ScenarioConfig) -> Result<TagDataset> {
    let sc = config.resolve()?;
    let mut sink = MemorySink::new();
    run_scenario_into(&sc, &mut sink)?;
    sink.into_dataset()
}

/// Metadata for a run before any tag has been generated.
pub fn initial_metadata(sc: &Scenario) -> RunMetadata {
    let dwells = schedule(&sc.config);
    RunMetadata {
        version: METADATA_VERSION,
        scenario: sc.config.name.clone(),
        config_hash: sc.config_hash.clone(),
        seed: sc.config.master_seed,
        origin_ps: TIMELINE_ORIGIN_PS as u64,
        t_start_ps: dwells.first().map_or(0, |d| d.start_ps),
        t_end_ps: dwells.last().map_or(0, |d| d.end_ps),
        channels: sc.channels.clone(),
        dwells,
        spoke_efficiency: [
            sc.spoke_detector(0).efficiency,
            sc.spoke_detector(1).efficiency,
        ],
        hub_factor: sc.bsm_transmission() * sc.hub_efficiency(),
        stats: None,
        config: Some(sc.config.clone()),
    }
}

/// Simulates the scenario, streaming tags into `sink`. Returns the final
/// metadata (also passed to `sink.finish`).
pub fn run_scenario_into<S: TagSink + ?Sized>(sc: &Scenario, sink: &mut S) -> Result<RunMetadata> {
    let mut meta = initial_metadata(sc);
    sink.begin(&meta)?;
    let mut eng = Engine::new(sc);
    let mut seg: u32 = 0;
    for d in &meta.dwells {
        let h = [hwp_operator(d.hwp1_deg)?, hwp_operator(d.hwp2_deg)?];
        let mut t0 = d.start_ps as i64;
        let end = d.end_ps as i64;
        while t0 < end {
            let t1 = (t0 + SEGMENT_PS).min(end);
            eng.segment(seg, t0, t1, &h, sink)?;
            seg += 1;
            t0 = t1;
        }
        debug!("dwell {} done ({} segments so far)", d.index, seg);
    }
    eng.finish(seg, sink)?;
    meta.stats = Some(eng.stats);
    sink.finish(&meta)?;
    Ok(meta)
}

fn merge3(a: &[BsmItem], b: &[BsmItem], c: &[BsmItem], out: &mut Vec<BsmItem>) {
    out.clear();
    out.reserve(a.len() + b.len() + c.len());
    let key = |x: &BsmItem| (x.t_arr, x.src);
    let (mut i, mut j, mut k) = (0, 0, 0);
    loop {
        let ka = a.get(i).map(key);
        let kb = b.get(j).map(key);
        let kc = c.get(k).map(key);
        let best = [ka, kb, kc].into_iter().flatten().min();
        let Some(best) = best else { break };
        if ka == Some(best) {
            out.push(a[i]);
            i += 1;
        } else if kb == Some(best) {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(c[k]);
            k += 1;
        }
    }
}

impl<'s> Engine<'s> {
    fn new(sc: &'s Scenario) -> Self {
        let seed = sc.config.master_seed;
        let t0 = TIMELINE_ORIGIN_PS;
        let spokes = [0, 1].map(|k| {
            let r = &sc.spokes[k];
            SpokeModel {
                rate: r.source.pair_rate,
                tau: r.source.coherence_time,
                cutoff: r.source.max_delay(),
                p_idler: r.idler_to_bsm,
                sig_eta: r.signal_transmission * sc.spoke_detector(k).efficiency,
                d_idler: r.idler_delay_ps,
                d_sig: r.signal_delay_ps,
                label: r.source.label.clone(),
            }
        });
        let clocks = &sc.config.clocks;
        let spoke_pipes = [0, 1].map(|k| {
            DetectorPipeline::new(
                sc.spoke_detector(k),
                sc.spoke_sigma(k),
                clocks.spoke[k].offset_ps.round() as i64,
            )
        });
        let hub_pipes = BsmPort::ALL.map(|p| {
            DetectorPipeline::new(
                sc.hub_detector(p),
                sc.hub_sigma(p),
                clocks.hub.offset_ps.round() as i64,
            )
        });
        let idler_drift = [0, 1].map(|k| {
            let l = &sc.spokes[k].idler_link;
            LinkDrift::new(
                &l.fiber,
                &l.apc,
                t0,
                stream(seed, &format!("drift-idler-{k}"), 0),
            )
        });
        let signal_drift = [0, 1].map(|k| {
            let l = &sc.spokes[k].signal_link;
            LinkDrift::new(
                &l.fiber,
                &l.apc,
                t0,
                stream(seed, &format!("drift-signal-{k}"), 0),
            )
        });
        let stats = RunStats {
            pair_rate_hz: [spokes[0].rate, spokes[1].rate],
            coherence_time_ps: [spokes[0].tau, spokes[1].tau],
            ..RunStats::default()
        };
        Engine {
            sc,
            seed,
            horizon: sc.pairing_horizon(),
            spokes,
            hub_eta: BsmPort::ALL.map(|p| sc.hub_detector(p).efficiency),
            spoke_pipes,
            hub_pipes,
            idler_drift,
            signal_drift,
            ctxs: VecDeque::new(),
            carry: Vec::new(),
            fresh: [Vec::new(), Vec::new()],
            merged: Vec::new(),
            times: Vec::new(),
            out: Vec::new(),
            marks: Vec::new(),
            stats,
        }
    }

    fn d_idler_min(&self) -> i64 {
        self.spokes[0].d_idler.min(self.spokes[1].d_idler)
    }

    fn segment<S: TagSink + ?Sized>(
        &mut self,
        seg: u32,
        t0: i64,
        t1: i64,
        hwp: &[crate::polarization::PolarizationOperator; 2],
        sink: &mut S,
    ) -> Result<()> {
        for k in 0..2 {
            self.idler_drift[k].advance_to(t0);
            self.signal_drift[k].advance_to(t0);
        }
        let rho = [0, 1].map(|k| {
            let u_sig = hwp[k].compose(&self.signal_drift[k].rotation());
            apply_local_unchecked(&u_sig, &self.idler_drift[k].rotation(), self.sc.state(k))
        });
        let pass = [0, 1].map(|k| rho[k].population(0, 0) + rho[k].population(0, 1));
        let table = SwapTable::new(&rho[0], &rho[1]);
        self.ctxs.push_back(SegmentCtx { seg, rho, table });

        for k in 0..2 {
            let mut rng = stream(self.seed, &self.spokes[k].label, seg as u64);
            let m = &self.spokes[k];
            let p_s = (pass[k] * m.sig_eta).clamp(0.0, 1.0);
            let p_keep = m.p_idler + (1.0 - m.p_idler) * p_s;
            self.times.clear();
            poisson_times(m.rate * p_keep, t0, t1, &mut rng, &mut self.times);
            self.stats.pairs_simulated[k] += self.times.len() as u64;
            let thr = if p_keep > 0.0 {
                m.p_idler / p_keep
            } else {
                0.0
            };
            let fresh = &mut self.fresh[k];
            fresh.clear();
            for &t in &self.times {
                let u: f64 = rng.random();
                let delta = laplace_delay(m.tau, m.cutoff, &mut rng).round() as i64;
                let t_sig = t + delta + m.d_sig;
                if u < thr {
                    fresh.push(BsmItem {
                        t_arr: t + m.d_idler,
                        t_sig,
                        seg,
                        src: k as u8,
                    });
                } else {
                    self.spoke_pipes[k].push(t_sig, &mut rng);
                }
            }
        }

        let mut merged = std::mem::take(&mut self.merged);
        merge3(&self.carry, &self.fresh[0], &self.fresh[1], &mut merged);
        let mut rng = stream(self.seed, "hub", seg as u64);
        let cutoff = t1 + self.d_idler_min();
        self.resolve(&merged, Some(cutoff), &mut rng);
        self.merged = merged;

        let mut rng = stream(self.seed, "dark", seg as u64);
        for p in self.spoke_pipes.iter_mut().chain(self.hub_pipes.iter_mut()) {
            p.add_darks(t0, t1, &mut rng);
        }

        // Lower bounds on the true time of anything still to come per channel.
        let hub_lb = self
            .carry
            .first()
            .map_or(i64::MAX, |c| c.t_arr)
            .min(t1 + self.d_idler_min());
        let mut spoke_lb = [0, 1].map(|k| {
            let m = &self.spokes[k];
            t1 + m.d_sig - m.cutoff.ceil() as i64 - 1
        });
        for c in &self.carry {
            let k = c.src as usize;
            spoke_lb[k] = spoke_lb[k].min(c.t_sig);
        }
        let wm_spoke = [0, 1].map(|k| self.spoke_pipes[k].earliest_tag(spoke_lb[k]));
        let wm_hub = [0, 1, 2, 3].map(|d| self.hub_pipes[d].earliest_tag(hub_lb));
        self.flush(&wm_spoke, &wm_hub, sink)?;

        let oldest = self.carry.iter().map(|c| c.seg).min().unwrap_or(seg);
        while self.ctxs.front().is_some_and(|c| c.seg < oldest) {
            self.ctxs.pop_front();
        }
        Ok(())
    }

    fn finish<S: TagSink + ?Sized>(&mut self, seg: u32, sink: &mut S) -> Result<()> {
        let items = std::mem::take(&mut self.carry);
        let mut rng = stream(self.seed, "hub", seg as u64);
        self.resolve(&items, None, &mut rng);
        self.flush(&[i64::MAX; 2], &[i64::MAX; 4], sink)?;
        for k in 0..2 {
            self.stats.apc_checks[k] = self.idler_drift[k].checks;
            self.stats.apc_corrections[k] = self.idler_drift[k].corrections;
        }
        for p in self.spoke_pipes.iter().chain(self.hub_pipes.iter()) {
            self.stats.dead_time_drops.insert(p.channel, p.dropped_dead);
        }
        Ok(())
    }

    fn flush<S: TagSink + ?Sized>(
        &mut self,
        wm_spoke: &[i64; 2],
        wm_hub: &[i64; 4],
        sink: &mut S,
    ) -> Result<()> {
        self.marks.clear();
        let pipes = self
            .spoke_pipes
            .iter_mut()
            .zip(wm_spoke)
            .chain(self.hub_pipes.iter_mut().zip(wm_hub));
        for (pipe, &wm) in pipes {
            self.out.clear();
            pipe.flush(wm, &mut self.out);
            if !self.out.is_empty() {
                sink.accept(pipe.channel, &self.out)?;
                *self.stats.tags_per_channel.entry(pipe.channel).or_default() +=
                    self.out.len() as u64;
            }
            let mark = if wm == i64::MAX {
                u64::MAX
            } else {
                wm.max(0) as u64
            };
            self.marks.push((pipe.channel, mark));
        }
        sink.advance(&self.marks)
    }

    fn ctx(&self, seg: u32) -> &SegmentCtx {
        let front = self.ctxs.front().expect("context present").seg;
        &self.ctxs[(seg - front) as usize]
    }

    /// Resolves every item that can no longer gain a partner. With a cutoff,
    /// items too close to it are kept in the carry queue.
    fn resolve(&mut self, items: &[BsmItem], cutoff: Option<i64>, rng: &mut SimRng) {
        let hz = self.horizon;
        let n = items.len();
        let mut i = 0;
        while i < n {
            let a = items[i];
            if cutoff.is_some_and(|c| a.t_arr + 2 * hz >= c) {
                break;
            }
            if i + 1 < n {
                let b = items[i + 1];
                let gap = b.t_arr - a.t_arr;
                if b.src != a.src && gap <= hz {
                    let rival = items
                        .get(i + 2)
                        .is_some_and(|c| c.src != b.src && c.t_arr - b.t_arr < gap);
                    if !rival {
                        let (x, y) = if a.src == 0 { (a, b) } else { (b, a) };
                        self.resolve_pair(x, y, rng);
                        i += 2;
                        continue;
                    }
                }
            }
            self.resolve_single(a, rng);
            i += 1;
        }
        self.carry.clear();
        self.carry.extend_from_slice(&items[i..]);
    }

    fn resolve_pair(&mut self, x: BsmItem, y: BsmItem, rng: &mut SimRng) {
        self.stats.idlers_paired += 2;
        let v = pair_overlap((y.t_arr - x.t_arr) as f64, &self.sc.bsm);
        let cross;
        let table = if x.seg == y.seg {
            &self.ctx(x.seg).table
        } else {
            cross = SwapTable::new(&self.ctx(x.seg).rho[0], &self.ctx(y.seg).rho[1]);
            &cross
        };
        let (sa, sb, dx, dy);
        if rng.random::<f64>() < v {
            let (a, b, class) = SwapTable::class(table.interfering.sample(rng.random()));
            let (p, q) = class.detectors(rng);
            (sa, sb, dx, dy) = (a, b, p, q);
        } else {
            let ia = table.pop_a.sample(rng.random());
            let ib = table.pop_b.sample(rng.random());
            let bits: u32 = rng.random();
            sa = ia >> 1;
            sb = ib >> 1;
            dx = BsmPort::from_port_pol((bits & 1) as usize, ia & 1);
            dy = BsmPort::from_port_pol(((bits >> 1) & 1) as usize, ib & 1);
        }
        self.emit(x, sa, dx, rng);
        self.emit(y, sb, dy, rng);
    }

    fn resolve_single(&mut self, a: BsmItem, rng: &mut SimRng) {
        self.stats.idlers_unpaired += 1;
        let t = &self.ctx(a.seg).table;
        let cdf = if a.src == 0 { &t.pop_a } else { &t.pop_b };
        let i = cdf.sample(rng.random());
        let bit: u32 = rng.random();
        let d = BsmPort::from_port_pol((bit & 1) as usize, i & 1);
        self.emit(a, i >> 1, d, rng);
    }

    /// Detection of the signal (outcome 0 = transmitted) and of the idler.
    fn emit(&mut self, it: BsmItem, signal_outcome: usize, det: BsmPort, rng: &mut SimRng) {
        let k = it.src as usize;
        if signal_outcome == 0 && rng.random::<f64>() < self.spokes[k].sig_eta {
            self.spoke_pipes[k].push(it.t_sig, rng);
        }
        if rng.random::<f64>() < self.hub_eta[det.index()] {
            self.hub_pipes[det.index()].push(it.t_arr, rng);
        }
    }
}
