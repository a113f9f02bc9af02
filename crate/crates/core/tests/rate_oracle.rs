//! The closed-form four-fold rate against a short Monte Carlo run.

use std::path::Path;

use qswap::analysis::{AnalyzerSettings, FourfoldAnalyzer};
use qswap::cli::{prepare_config, SimulateOptions};
use qswap::engine::expected_fourfold_rate;
use qswap::engine::run::{initial_metadata, run_scenario_into};
use qswap::polarization::BellKind;

#[test]
fn oracle_rate_matches_simulation() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/local.json");
    let opts = SimulateOptions {
        seed: Some(21),
        duration_scale: Some(0.1),
        ..Default::default()
    };
    let sc = prepare_config(&path, &opts).unwrap().resolve().unwrap();
    let mut an = FourfoldAnalyzer::new(AnalyzerSettings::for_metadata(&initial_metadata(&sc), 2000.0)).unwrap();
    run_scenario_into(&sc, &mut an).unwrap();
    let res = an.into_result().unwrap();
    assert!(res.calibrated);

    for h in [750.0, 2000.0] {
        let counts = res.roi_counts(h).unwrap();
        for kind in [BellKind::PsiMinus, BellKind::PsiPlus] {
            let mut expected = 0.0;
            let mut measured = 0;
            for (i, d) in res.dwells.iter().enumerate() {
                let secs = (d.end_ps - d.start_ps) as f64 * 1e-12;
                expected += expected_fourfold_rate(&sc, d.hwp1_deg, d.hwp2_deg, h, kind).unwrap().total() * secs;
                measured += counts.get(kind, i);
            }
            let ratio = measured as f64 / expected;
            // The oracle drops higher-order multi-pair terms, worth a few percent.
            let tol = 0.1 + 3.0 / expected.sqrt();
            assert!((ratio - 1.0).abs() < tol, "{kind} roi {h}: {measured} vs {expected:.1}");
        }
    }
}
