//! Warm-vapor pair source: draw emissions, detect both arms and recover the
//! signal-idler cross-correlation peak from the tag streams.
//!
//! ```bash
//! cargo run --release --example source_g2 -- 80
//! ```

use qswap::analysis::g2_histogram;
use qswap::detector::{detect, DetectorParams};
use qswap::rng::stream;
use qswap::source::{expected_g2, sample_emissions, SourceParams};

fn main() -> qswap::Result<()> {
    let g2_peak: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(80.0);
    let src = SourceParams::from_g2("S1", 4.1e6, g2_peak)?;
    println!(
        "pair rate {:.2e}/s, g2 peak {g2_peak} -> coherence time {:.0} ps",
        src.pair_rate, src.coherence_time
    );

    let t_end = 500_000_000_000; // 0.5 s
    let mut rng = stream(1, "example-source", 0);
    let pairs = sample_emissions(&src, 0, t_end, &mut rng)?;
    let mut idlers: Vec<i64> = pairs.iter().map(|p| p.t_idler).collect();
    let mut signals: Vec<i64> = pairs.iter().map(|p| p.t_signal).collect();
    idlers.sort_unstable();
    signals.sort_unstable();

    let mut det = DetectorParams::snspd(1, 0.85);
    det.dark_rate_hz = 0.0;
    let a: Vec<u64> = detect(
        &signals,
        &DetectorParams {
            channel: 2,
            jitter_sigma_ps: 0.0,
            ..det.clone()
        },
        0,
        t_end,
        &mut rng,
    )?
    .iter()
    .map(|r| r.timestamp)
    .collect();
    let b: Vec<u64> = detect(
        &idlers,
        &DetectorParams {
            jitter_sigma_ps: 0.0,
            ..det
        },
        0,
        t_end,
        &mut rng,
    )?
    .iter()
    .map(|r| r.timestamp)
    .collect();
    println!("{} pairs, {} / {} tags", pairs.len(), a.len(), b.len());

    let h = g2_histogram(&a, &b, 100.0, 100_000.0)?;
    if let Some((i, peak)) = h.peak() {
        println!(
            "measured peak {peak:.1} at {:.0} ps (model at 0: {:.1})",
            h.bin_center(i),
            expected_g2(&src, 0.0)
        );
    }
    if let Some(f) = h.floor(50_000.0) {
        println!("floor beyond 50 ns (past the dead time): {f:.3}");
    }
    Ok(())
}
