//! Closed-form four-fold rates across ROI widths for a preset, and the S value
//! those mean rates imply.
//!
//! ```bash
//! cargo run --example rate_oracle -- presets/nyc.json
//! ```

use std::path::PathBuf;

use qswap::chsh::{chsh_s, correlation_e, JointCounts};
use qswap::engine::{expected_fourfold_rate, ScenarioConfig};

fn main() -> qswap::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../presets/local.json"
            ))
        });
    let sc = ScenarioConfig::from_path(&path)?.resolve()?;
    let an = sc.analysis().clone();
    let set = an.settings;
    println!(
        "{}: pair rates {:.3e} / {:.3e} per s",
        sc.config.name, sc.spokes[0].source.pair_rate, sc.spokes[1].source.pair_rate
    );
    println!(
        "{:>8} {:>12} {:>12} {:>8}",
        "roi_ps", "true /s", "accid. /s", "S"
    );
    for &h in &an.roi_ps {
        let (mut t, mut a) = (0.0, 0.0);
        let mut e = Vec::new();
        for x in [set.a, set.a_prime] {
            for y in [set.b, set.b_prime] {
                let mut c = [0.0; 4];
                for (i, (dx, dy)) in [(0.0, 0.0), (45.0, 45.0), (0.0, 45.0), (45.0, 0.0)]
                    .into_iter()
                    .enumerate()
                {
                    let r = expected_fourfold_rate(&sc, x + dx, y + dy, h, an.herald)?;
                    t += r.true_rate_hz / 16.0;
                    a += r.accidental_rate_hz / 16.0;
                    c[i] = r.total();
                }
                e.push(correlation_e(&JointCounts::uniform(c))?);
            }
        }
        let s = chsh_s([e[0], e[1], e[2], e[3]], set).s;
        println!("{h:>8} {t:>12.4} {a:>12.4} {s:>8.3}");
    }
    Ok(())
}
