//! Thirty hours of link monitoring with and without polarization compensation.
//!
//! ```bash
//! cargo run --release --example stability_series
//! ```

use qswap::engine::{run_stability, ScenarioConfig};

fn main() -> qswap::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/stability.json");
    let base = ScenarioConfig::from_path(path.as_ref())?;
    let st = base.stability.clone().unwrap_or_default();
    for apc in [true, false] {
        let mut cfg = base.clone();
        for l in &mut cfg.links.idler {
            l.apc.enabled = apc;
        }
        let s = run_stability(&cfg.resolve()?, st.hours, st.sample_interval_s)?;
        let mean = s.iter().map(|x| x.pair_rate_hz).sum::<f64>() / s.len() as f64;
        let dev = s
            .iter()
            .map(|x| (x.pair_rate_hz / mean - 1.0).abs())
            .fold(0.0, f64::max);
        let min_s = s.iter().map(|x| x.s).fold(f64::INFINITY, f64::min);
        println!(
            "APC {}: {} samples, pair rate {mean:.4e}/s (max excursion {:.2}%), min S {min_s:.3}",
            if apc { "on " } else { "off" },
            s.len(),
            100.0 * dev
        );
        for x in s.iter().step_by(18) {
            println!(
                "  t={:>5.1} h  V_hv={:.3}  V_diag={:.3}  S={:.3}",
                x.t_hours, x.visibility_hv, x.visibility_diag, x.s
            );
        }
    }
    Ok(())
}
