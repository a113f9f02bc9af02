//! Streaming four-fold counter against the all-combinations oracle on a small
//! hand-built dataset.
//!
//! ```bash
//! cargo run --example fourfold_oracle
//! ```

use std::collections::BTreeMap;

use qswap::analysis::{fourfold_coincidences, CoincidenceWindow, FourfoldWindows, HeraldMap};
use qswap::engine::config::ChannelMap;
use qswap::engine::dataset::{DwellAnnotation, RunMetadata, TagDataset};

fn main() -> qswap::Result<()> {
    let map = ChannelMap {
        spoke: [1, 2],
        hub: [3, 4, 5, 6],
    };
    let dwell = DwellAnnotation {
        index: 0,
        cycle: 0,
        entry: 0,
        hwp1_deg: 0.0,
        hwp2_deg: 0.0,
        start_ps: 0,
        end_ps: 1_000_000,
        label: String::new(),
    };
    let meta = RunMetadata::external("demo", map.clone(), vec![dwell]);
    let mut tags: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
    // Herald P1H + P2V at 10_000 and 10_300; signals 500 ps after on both spokes.
    tags.insert(3, vec![10_000, 50_000]);
    tags.insert(6, vec![10_300]);
    tags.insert(4, vec![]);
    tags.insert(5, vec![50_200]);
    tags.insert(1, vec![10_480, 50_600]);
    tags.insert(2, vec![10_520, 70_000]);
    let ds = TagDataset::from_timestamps(meta, tags)?;
    let w = FourfoldWindows {
        spoke: [
            CoincidenceWindow::new(500.0, 100.0)?,
            CoincidenceWindow::new(500.0, 100.0)?,
        ],
        max_herald_dt_ps: 1000.0,
    };
    let herald = HeraldMap {
        channels: map,
        bsm_window_ps: 1000.0,
    };
    let c = fourfold_coincidences(&ds, &w, &herald)?;
    for (kind, per) in &c.per_dwell {
        println!("{kind}: {per:?}");
    }
    Ok(())
}
