//! Polarization drift on a deployed link with and without the compensator.
//!
//! ```bash
//! cargo run --example fiber_drift
//! ```

use qswap::fiber::{ApcParams, FiberParams, LinkDrift};
use qswap::rng::stream;

const HOUR_PS: i64 = 3_600_000_000_000_000;

fn main() {
    let fiber = FiberParams {
        length_km: 8.8,
        loss_db: 6.5,
        drift_rate: 0.3,
        ..FiberParams::default()
    };
    let on = ApcParams::default();
    let off = ApcParams::disabled();
    let mut a = LinkDrift::new(&fiber, &on, 0, stream(3, "drift", 0));
    let mut b = LinkDrift::new(&fiber, &off, 0, stream(3, "drift", 0));
    println!(
        "{:>6} {:>14} {:>14}",
        "hours", "angle APC on", "angle APC off"
    );
    for h in (0..=30).step_by(3) {
        a.advance_to(h * HOUR_PS);
        b.advance_to(h * HOUR_PS);
        println!(
            "{h:>6} {:>14.3} {:>14.3}",
            a.state().angle(),
            b.state().angle()
        );
    }
    println!(
        "compensator: {} checks, {} corrections",
        a.checks, a.corrections
    );
}
