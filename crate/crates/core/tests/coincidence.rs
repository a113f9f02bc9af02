mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{brute_fourfold, brute_twofold, random_case, MAP};
use qswap::analysis::{
    fourfold_coincidences, twofold_count, AnalyzerSettings, CoincidenceWindow, FourfoldAnalyzer,
    FourfoldWindows, HeraldMap,
};
use qswap::engine::dataset::{DwellAnnotation, RunMetadata, TagDataset};
use qswap::polarization::BellKind;

fn herald_map(window: f64) -> HeraldMap {
    HeraldMap {
        channels: MAP,
        bsm_window_ps: window,
    }
}

fn windows(centers: [f64; 2], hw: [f64; 2], max_dt: f64) -> FourfoldWindows {
    FourfoldWindows {
        spoke: [
            CoincidenceWindow::new(centers[0], hw[0]).unwrap(),
            CoincidenceWindow::new(centers[1], hw[1]).unwrap(),
        ],
        max_herald_dt_ps: max_dt,
    }
}

#[test]
fn twofold_matches_all_pairs() {
    for seed in 0..60 {
        let c = random_case(seed, 3000, false);
        let a = c.dataset.timestamps(1);
        let b = c.dataset.timestamps(3);
        for (center, hw) in [
            (0.0, 1000.0),
            (c.centers[0], c.half_width[0]),
            (-2500.5, 0.5),
        ] {
            let w = CoincidenceWindow::new(center, hw).unwrap();
            assert_eq!(
                twofold_count(a, b, &w).unwrap(),
                brute_twofold(a, b, center, hw),
                "seed {seed}"
            );
        }
    }
}

#[test]
fn fourfold_matches_exhaustive_search() {
    for seed in 0..60 {
        let c = random_case(1000 + seed, 3000, false);
        let w = windows(c.centers, c.half_width, c.max_dt);
        let got = fourfold_coincidences(&c.dataset, &w, &herald_map(c.window)).unwrap();
        let want = brute_fourfold(
            &c.dataset,
            &MAP,
            c.window,
            c.centers,
            c.half_width,
            c.max_dt,
        );
        assert_eq!(got.per_dwell, want.per_dwell, "seed {seed}");
        assert_eq!(got.outside, want.outside, "seed {seed}");
    }
}

#[test]
fn fourfold_is_independent_of_replay_block() {
    for seed in 0..15 {
        let c = random_case(5000 + seed, 2000, false);
        let w = windows(c.centers, [c.half_width[0]; 2], c.max_dt);
        let settings = AnalyzerSettings {
            herald_map: herald_map(c.window),
            max_roi_ps: c.half_width[0],
            centers_ps: Some(c.centers),
            calibration_ps: 0.0,
            offset_search_ps: 0.0,
        };
        let mut results = Vec::new();
        for block in [1_000, 77_777, 10_000_000, u64::MAX / 4] {
            let mut a = FourfoldAnalyzer::new(settings.clone()).unwrap();
            c.dataset.replay(&mut a, block).unwrap();
            results.push(a.into_result().unwrap().count(&w).unwrap());
        }
        for r in &results[1..] {
            assert_eq!(r, &results[0], "seed {seed}");
        }
    }
}

fn dataset(tags: &[(u16, &[u64])], dwells: &[(u64, u64)]) -> TagDataset {
    let dw = dwells
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| DwellAnnotation {
            index: i,
            cycle: 0,
            entry: i,
            hwp1_deg: 0.0,
            hwp2_deg: 0.0,
            start_ps: s,
            end_ps: e,
            label: String::new(),
        })
        .collect();
    let map: BTreeMap<u16, Vec<u64>> = tags.iter().map(|(c, t)| (*c, t.to_vec())).collect();
    TagDataset::from_timestamps(RunMetadata::external("planted", MAP, dw), map).unwrap()
}

fn count(ds: &TagDataset, kind: BellKind) -> Vec<u64> {
    let w = windows([500.0, 500.0], [100.0, 100.0], 1000.0);
    fourfold_coincidences(ds, &w, &herald_map(1000.0))
        .unwrap()
        .per_dwell[&kind]
        .clone()
}

#[test]
fn planted_psi_minus_and_psi_plus() {
    let ds = dataset(
        &[
            (3, &[10_000, 50_000]),
            (4, &[50_300]),
            (6, &[10_300]),
            (1, &[10_480, 50_550]),
            (2, &[10_520, 50_450]),
        ],
        &[(0, 1_000_000)],
    );
    assert_eq!(count(&ds, BellKind::PsiMinus), vec![1]);
    assert_eq!(count(&ds, BellKind::PsiPlus), vec![1]);
}

#[test]
fn three_click_clusters_and_same_detector_pairs_are_not_heralds() {
    let ds = dataset(
        &[
            (3, &[10_000, 10_600, 90_000, 90_400]),
            (6, &[10_300]),
            (1, &[10_500, 90_500]),
            (2, &[10_500, 90_500]),
        ],
        &[(0, 1_000_000)],
    );
    assert_eq!(count(&ds, BellKind::PsiMinus), vec![0]);
    assert_eq!(count(&ds, BellKind::PsiPlus), vec![0]);
}

#[test]
fn chained_clusters_split_on_gaps_beyond_the_window() {
    // 3 -> 6 gap 900 forms a herald; the next click is 1001 ps later.
    let ds = dataset(
        &[
            (3, &[10_000]),
            (6, &[10_900]),
            (5, &[11_901]),
            (1, &[10_500]),
            (2, &[10_500]),
        ],
        &[(0, 1_000_000)],
    );
    assert_eq!(count(&ds, BellKind::PsiMinus), vec![1]);
}

#[test]
fn spoke_tags_outside_the_roi_do_not_count() {
    let ds = dataset(
        &[
            (3, &[10_000]),
            (6, &[10_200]),
            (1, &[10_601]),
            (2, &[10_500]),
        ],
        &[(0, 1_000_000)],
    );
    assert_eq!(count(&ds, BellKind::PsiMinus), vec![0]);
}

#[test]
fn events_are_attributed_by_the_first_spoke_window() {
    // t_ref + 500 = 100_400 lies in the second dwell although t_ref does not.
    let ds = dataset(
        &[
            (3, &[99_900]),
            (6, &[100_000]),
            (1, &[100_400]),
            (2, &[100_400]),
        ],
        &[(0, 100_000), (100_000, 200_000)],
    );
    assert_eq!(count(&ds, BellKind::PsiMinus), vec![0, 1]);
}

#[test]
fn missing_channel_is_rejected() {
    let mut ds = dataset(&[(3, &[10_000]), (6, &[10_200])], &[(0, 1_000_000)]);
    ds.streams.remove(&2);
    let w = windows([500.0, 500.0], [100.0, 100.0], 1000.0);
    assert!(fourfold_coincidences(&ds, &w, &herald_map(1000.0)).is_err());
}

fn sorted(v: Vec<u64>) -> Vec<u64> {
    let mut v = v;
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn twofold_proptest(
        a in prop::collection::vec(0u64..200_000, 0..300).prop_map(sorted),
        b in prop::collection::vec(0u64..200_000, 0..300).prop_map(sorted),
        center in -5000.0f64..5000.0,
        hw in 0.5f64..5000.0,
    ) {
        let w = CoincidenceWindow::new(center, hw).unwrap();
        prop_assert_eq!(twofold_count(&a, &b, &w).unwrap(), brute_twofold(&a, &b, center, hw));
    }

    #[test]
    fn twofold_monotone_in_width(
        a in prop::collection::vec(0u64..100_000, 0..200).prop_map(sorted),
        b in prop::collection::vec(0u64..100_000, 0..200).prop_map(sorted),
        hw in 1.0f64..3000.0,
        extra in 0.0f64..3000.0,
    ) {
        let n1 = twofold_count(&a, &b, &CoincidenceWindow::new(0.0, hw).unwrap()).unwrap();
        let n2 = twofold_count(&a, &b, &CoincidenceWindow::new(0.0, hw + extra).unwrap()).unwrap();
        prop_assert!(n2 >= n1);
    }

    #[test]
    fn fourfold_monotone_in_roi(seed in 0u64..10_000, h in 50.0f64..2000.0, extra in 0.0f64..2000.0) {
        let c = random_case(seed, 400, false);
        let hm = herald_map(c.window);
        let small = fourfold_coincidences(&c.dataset, &windows(c.centers, [h; 2], h), &hm).unwrap();
        let big = fourfold_coincidences(&c.dataset, &windows(c.centers, [h + extra; 2], h + extra), &hm).unwrap();
        for k in [BellKind::PsiPlus, BellKind::PsiMinus] {
            prop_assert!(big.total(k) >= small.total(k));
        }
    }
}

#[test]
fn random_cases_are_not_vacuous() {
    let (mut tags, mut events, mut twofolds) = (0, 0, 0);
    for seed in 0..60 {
        let c = random_case(1000 + seed, 3000, false);
        tags += c.dataset.total_tags();
        let b = brute_fourfold(
            &c.dataset,
            &MAP,
            c.window,
            c.centers,
            c.half_width,
            c.max_dt,
        );
        events += b.per_dwell.values().flatten().sum::<u64>() + b.outside.values().sum::<u64>();
        twofolds += brute_twofold(
            c.dataset.timestamps(1),
            c.dataset.timestamps(3),
            0.0,
            1000.0,
        );
    }
    eprintln!("tags {tags} four-folds {events} two-folds {twofolds}");
    assert!(events > 500 && twofolds > 500);
}
