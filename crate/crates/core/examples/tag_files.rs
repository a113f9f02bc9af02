//! Write a short simulated run as tag files, read it back, and recover the
//! spoke-to-hub clock offset from the streams alone.
//!
//! ```bash
//! cargo run --release --example tag_files
//! ```

use qswap::analysis::{estimate_offset, refine_offset};
use qswap::engine::{run_scenario, ScenarioConfig};
use qswap::io::{read_dataset, write_dataset};

fn main() -> qswap::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/local.json");
    let mut cfg = ScenarioConfig::from_path(path.as_ref())?;
    cfg.acquisition.dwells.truncate(1);
    cfg.acquisition.dwells[0].duration_s = 0.05;
    let ds = run_scenario(&cfg)?;

    let dir = std::env::temp_dir().join("qswap-tag-files");
    let files = write_dataset(&ds, &dir, false)?;
    for f in &files {
        let n = std::fs::metadata(f).map(|m| m.len()).unwrap_or(0);
        println!("{:>40} {n:>12} bytes", f.display());
    }
    let back = read_dataset(&dir)?;
    assert_eq!(back.streams, ds.streams);

    let ch = &back.metadata.channels;
    let spoke = back.timestamps(ch.spoke[0]);
    let mut hub: Vec<u64> = ch
        .hub
        .iter()
        .flat_map(|c| back.timestamps(*c).iter().copied())
        .collect();
    hub.sort_unstable();
    let coarse = estimate_offset(&hub, spoke, 1e7, 100.0)?;
    let fine = refine_offset(&hub, spoke, coarse, 5_000.0, 20.0)?;
    let clocks = &cfg.clocks;
    println!(
        "spoke1 - hub delay: coarse {coarse:.0} ps, refined {fine:.1} ps (clock offsets {} and {})",
        clocks.spoke[0].offset_ps, clocks.hub.offset_ps
    );
    Ok(())
}
