//! Simulate a swapping preset in memory, stream it through the four-fold
//! analyzer and print S against the four-fold rate.
//!
//! ```bash
//! cargo run --release --example swapping -- presets/local.json 0.1
//! cargo run --release --example swapping -- presets/nyc.json 0.05
//! ```
//!
//! The second argument scales every dwell duration.

use std::path::PathBuf;

use qswap::analysis::{AnalyzerSettings, FourfoldAnalyzer};
use qswap::chsh::s_vs_rate_from_analysis;
use qswap::engine::run::{initial_metadata, run_scenario_into};
use qswap::engine::ScenarioConfig;

fn main() -> qswap::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../presets/local.json"
        ))
    });
    let scale: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let mut cfg = ScenarioConfig::from_path(&path)?;
    for d in &mut cfg.acquisition.dwells {
        d.duration_s *= scale;
    }
    let sc = cfg.resolve()?;
    let an = sc.analysis().clone();
    let max_roi = an.roi_ps.iter().copied().fold(0.0, f64::max);
    let meta = initial_metadata(&sc);
    let mut analyzer = FourfoldAnalyzer::new(AnalyzerSettings::for_metadata(&meta, max_roi))?;
    let meta = run_scenario_into(&sc, &mut analyzer)?;
    let result = analyzer.into_result()?;

    if let Some(st) = &meta.stats {
        let live = meta.live_time_s();
        let s1 = st
            .tags_per_channel
            .get(&sc.channels.spoke[0])
            .copied()
            .unwrap_or(0) as f64
            / live;
        let s2 = st
            .tags_per_channel
            .get(&sc.channels.spoke[1])
            .copied()
            .unwrap_or(0) as f64
            / live;
        println!("spoke singles {s1:.3e} / {s2:.3e} per s over {live:.1} s");
    }
    if let Some([p1, p2]) = result.pair_rate_hz {
        println!("spoke-hub pair rates {p1:.4e} / {p2:.4e} per s");
    }
    let points = s_vs_rate_from_analysis(
        &result,
        &an.roi_ps,
        an.herald,
        an.settings,
        meta.spoke_efficiency,
    )?;
    println!(
        "{:>8} {:>10} {:>12} {:>14}",
        "roi_ps", "rate /s", "corrected", "S"
    );
    for p in points {
        println!(
            "{:>8} {:>10.2} {:>12.2} {:>8.3} ± {:.3}",
            p.roi_ps, p.measured_rate_hz, p.corrected_rate_hz, p.s, p.standard_error
        );
    }
    Ok(())
}
