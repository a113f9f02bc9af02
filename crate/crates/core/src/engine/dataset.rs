//! Tag datasets, run metadata and the sink interface the engine streams into.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{ChannelMap, ScenarioConfig, TIMELINE_ORIGIN_PS};
use crate::detector::{ChannelId, TimeTagRecord, FLAG_DARK};
use crate::error::{Error, Result};

pub const METADATA_VERSION: u32 = 1;

/// One acquisition interval at fixed waveplate angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellAnnotation {
    pub index: usize,
    pub cycle: u32,
    /// Position of the entry in the acquisition plan.
    pub entry: usize,
    pub hwp1_deg: f64,
    pub hwp2_deg: f64,
    pub start_ps: u64,
    pub end_ps: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl DwellAnnotation {
    pub fn live_time_s(&self) -> f64 {
        (self.end_ps - self.start_ps) as f64 * 1e-12
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start_ps && t < self.end_ps
    }
}

/// Expands the acquisition plan into consecutive dwells on the timeline.
pub fn schedule(config: &ScenarioConfig) -> Vec<DwellAnnotation> {
    let mut out = Vec::new();
    let mut t = TIMELINE_ORIGIN_PS as u64;
    for cycle in 0..config.acquisition.n_cycles {
        for (entry, d) in config.acquisition.dwells.iter().enumerate() {
            let len = (d.duration_s * 1e12).round().max(1.0) as u64;
            out.push(DwellAnnotation {
                index: out.len(),
                cycle,
                entry,
                hwp1_deg: d.hwp1_deg,
                hwp2_deg: d.hwp2_deg,
                start_ps: t,
                end_ps: t + len,
                label: d.label.clone(),
            });
            t += len;
        }
    }
    out
}

/// Index of the dwell containing `t`, if any. `dwells` must be sorted.
pub fn dwell_at(dwells: &[DwellAnnotation], t: u64) -> Option<usize> {
    let i = dwells.partition_point(|d| d.end_ps <= t);
    (i < dwells.len() && dwells[i].contains(t)).then_some(i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunStats {
    /// Resolved source pair rates, pairs/s.
    pub pair_rate_hz: [f64; 2],
    /// Resolved coherence times, ps.
    pub coherence_time_ps: [f64; 2],
    /// Pairs with at least one photon that could be detected.
    pub pairs_simulated: [u64; 2],
    pub idlers_paired: u64,
    pub idlers_unpaired: u64,
    pub tags_per_channel: BTreeMap<ChannelId, u64>,
    pub dead_time_drops: BTreeMap<ChannelId, u64>,
    pub apc_checks: [u64; 2],
    pub apc_corrections: [u64; 2],
}

/// Sidecar document describing a tag dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub version: u32,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub origin_ps: u64,
    pub t_start_ps: u64,
    pub t_end_ps: u64,
    pub channels: ChannelMap,
    pub dwells: Vec<DwellAnnotation>,
    /// Spoke detector efficiencies, used for rate corrections.
    pub spoke_efficiency: [f64; 2],
    /// Hub-side transmission factor (splitter loss times mean hub efficiency).
    pub hub_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<RunStats>,
    /// Echo of the generating configuration; absent for external data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
}

impl RunMetadata {
    /// Metadata for tags that did not come from the simulator.
    pub fn external(name: &str, channels: ChannelMap, dwells: Vec<DwellAnnotation>) -> Self {
        RunMetadata {
            version: METADATA_VERSION,
            scenario: name.to_string(),
            config_hash: String::new(),
            seed: 0,
            origin_ps: 0,
            t_start_ps: dwells.first().map_or(0, |d| d.start_ps),
            t_end_ps: dwells.last().map_or(0, |d| d.end_ps),
            channels,
            dwells,
            spoke_efficiency: [1.0, 1.0],
            hub_factor: 0.0,
            stats: None,
            config: None,
        }
    }

    pub fn live_time_s(&self) -> f64 {
        self.dwells.iter().map(DwellAnnotation::live_time_s).sum()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(format!("dataset.{}", e.path()), e.into_inner().to_string()))
    }
}

/// Tags of one channel, time-sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelStream {
    pub timestamps: Vec<u64>,
    pub flags: Vec<u16>,
}

impl ChannelStream {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn push(&mut self, r: &TimeTagRecord) {
        self.timestamps.push(r.timestamp);
        self.flags.push(r.flags);
    }

    pub fn records(&self, channel: ChannelId) -> impl Iterator<Item = TimeTagRecord> + '_ {
        self.timestamps
            .iter()
            .zip(&self.flags)
            .map(move |(&timestamp, &flags)| TimeTagRecord {
                timestamp,
                channel,
                flags,
            })
    }
}

/// Per-channel tag streams plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDataset {
    pub metadata: RunMetadata,
    pub streams: BTreeMap<ChannelId, ChannelStream>,
}

impl TagDataset {
    /// Builds a dataset from sorted per-channel timestamps. Channels of the
    /// map that are missing from `streams` are created empty.
    pub fn from_timestamps(
        metadata: RunMetadata,
        streams: BTreeMap<ChannelId, Vec<u64>>,
    ) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (c, _) in metadata.channels.all() {
            out.insert(c, ChannelStream::default());
        }
        for (c, ts) in streams {
            if ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(format!(
                    "channel {c} timestamps are not sorted"
                )));
            }
            let n = ts.len();
            out.insert(
                c,
                ChannelStream {
                    timestamps: ts,
                    flags: vec![0; n],
                },
            );
        }
        Ok(TagDataset {
            metadata,
            streams: out,
        })
    }

    pub fn stream(&self, channel: ChannelId) -> Option<&ChannelStream> {
        self.streams.get(&channel)
    }

    pub fn timestamps(&self, channel: ChannelId) -> &[u64] {
        self.streams
            .get(&channel)
            .map(|s| s.timestamps.as_slice())
            .unwrap_or(&[])
    }

    pub fn total_tags(&self) -> usize {
        self.streams.values().map(ChannelStream::len).sum()
    }

    /// Copy with every dark-count marker cleared.
    pub fn blind(&self) -> TagDataset {
        let mut d = self.clone();
        for s in d.streams.values_mut() {
            for f in &mut s.flags {
                *f &= !FLAG_DARK;
            }
        }
        d
    }

    /// Replays the dataset into a sink in time blocks of `block_ps`.
    pub fn replay<S: TagSink + ?Sized>(&self, sink: &mut S, block_ps: u64) -> Result<()> {
        sink.begin(&self.metadata)?;
        let chans: Vec<(ChannelId, &ChannelStream)> =
            self.streams.iter().map(|(c, s)| (*c, s)).collect();
        let mut pos = vec![0usize; chans.len()];
        let first = chans
            .iter()
            .filter_map(|(_, s)| s.timestamps.first())
            .min()
            .copied();
        let last = chans
            .iter()
            .filter_map(|(_, s)| s.timestamps.last())
            .max()
            .copied();
        let mut buf = Vec::new();
        if let (Some(first), Some(last)) = (first, last) {
            let block = block_ps.max(1);
            let mut end = first.saturating_add(block);
            loop {
                let mut marks = Vec::with_capacity(chans.len());
                for (ci, (ch, s)) in chans.iter().enumerate() {
                    let stop = pos[ci] + s.timestamps[pos[ci]..].partition_point(|&t| t < end);
                    buf.clear();
                    buf.extend((pos[ci]..stop).map(|i| TimeTagRecord {
                        timestamp: s.timestamps[i],
                        channel: *ch,
                        flags: s.flags[i],
                    }));
                    if !buf.is_empty() {
                        sink.accept(*ch, &buf)?;
                    }
                    pos[ci] = stop;
                    marks.push((*ch, end));
                }
                sink.advance(&marks)?;
                if end > last {
                    break;
                }
                end = end.saturating_add(block);
            }
        }
        let marks: Vec<(ChannelId, u64)> = chans.iter().map(|(c, _)| (*c, u64::MAX)).collect();
        sink.advance(&marks)?;
        sink.finish(&self.metadata)
    }
}

/// Consumer of time-ordered tag streams.
///
/// `accept` delivers tags of one channel in time order. `advance` promises
/// that every tag of each listed channel earlier than the mark has been
/// delivered. `finish` receives the final metadata including run statistics.
pub trait TagSink {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()>;
    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()>;
    fn advance(&mut self, marks: &[(ChannelId, u64)]) -> Result<()>;
    fn finish(&mut self, meta: &RunMetadata) -> Result<()>;
}

impl<A: TagSink, B: TagSink> TagSink for (A, B) {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()> {
        self.0.begin(meta)?;
        self.1.begin(meta)
    }
    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        self.0.accept(channel, tags)?;
        self.1.accept(channel, tags)
    }
    fn advance(&mut self, marks: &[(ChannelId, u64)]) -> Result<()> {
        self.0.advance(marks)?;
        self.1.advance(marks)
    }
    fn finish(&mut self, meta: &RunMetadata) -> Result<()> {
        self.0.finish(meta)?;
        self.1.finish(meta)
    }
}

impl<S: TagSink + ?Sized> TagSink for &mut S {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()> {
        (**self).begin(meta)
    }
    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        (**self).accept(channel, tags)
    }
    fn advance(&mut self, marks: &[(ChannelId, u64)]) -> Result<()> {
        (**self).advance(marks)
    }
    fn finish(&mut self, meta: &RunMetadata) -> Result<()> {
        (**self).finish(meta)
    }
}

/// Collects everything into a [`TagDataset`].
#[derive(Debug, Default)]
pub struct MemorySink {
    streams: BTreeMap<ChannelId, ChannelStream>,
    meta: Option<RunMetadata>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_dataset(self) -> Result<TagDataset> {
        let metadata = self
            .meta
            .ok_or_else(|| Error::invalid("run did not finish; no metadata recorded"))?;
        Ok(TagDataset {
            metadata,
            streams: self.streams,
        })
    }
}

impl TagSink for MemorySink {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()> {
        for (c, _) in meta.channels.all() {
            self.streams.entry(c).or_default();
        }
        Ok(())
    }

    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        let s = self.streams.entry(channel).or_default();
        s.timestamps.reserve(tags.len());
        s.flags.reserve(tags.len());
        for t in tags {
            s.push(t);
        }
        Ok(())
    }

    fn advance(&mut self, _marks: &[(ChannelId, u64)]) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, meta: &RunMetadata) -> Result<()> {
        self.meta = Some(meta.clone());
        Ok(())
    }
}

/// Counts tags per channel and discards them.
#[derive(Debug, Default, Clone)]
pub struct CountingSink {
    pub counts: BTreeMap<ChannelId, u64>,
}

impl TagSink for CountingSink {
    fn begin(&mut self, _meta: &RunMetadata) -> Result<()> {
        Ok(())
    }
    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        *self.counts.entry(channel).or_default() += tags.len() as u64;
        Ok(())
    }
    fn advance(&mut self, _marks: &[(ChannelId, u64)]) -> Result<()> {
        Ok(())
    }
    fn finish(&mut self, _meta: &RunMetadata) -> Result<()> {
        Ok(())
    }
}
