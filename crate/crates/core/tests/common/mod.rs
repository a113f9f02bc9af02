//! Test-side oracles shared by the integration and acceptance targets.
//!
//! Everything here is written from the definitions, without the library's
//! streaming machinery.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use qswap::engine::config::ChannelMap;
use qswap::engine::dataset::{DwellAnnotation, RunMetadata, TagDataset};
use qswap::polarization::BellKind;

pub const MAP: ChannelMap = ChannelMap {
    spoke: [1, 2],
    hub: [3, 4, 5, 6],
};

/// All pairs with `|t_b - t_a - center| <= half_width`.
pub fn brute_twofold(a: &[u64], b: &[u64], center: f64, half_width: f64) -> u64 {
    let mut n = 0;
    for &x in a {
        for &y in b {
            if ((y as i64 - x as i64) as f64 - center).abs() <= half_width {
                n += 1;
            }
        }
    }
    n
}

/// Herald kind for two distinct hub detectors (0..4 = P1H, P1V, P2H, P2V).
fn herald_kind(i: usize, j: usize) -> Option<BellKind> {
    let (lo, hi) = (i.min(j), i.max(j));
    match (lo, hi) {
        (0, 1) | (2, 3) => Some(BellKind::PsiPlus),
        (0, 3) | (1, 2) => Some(BellKind::PsiMinus),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Herald {
    pub t_ref: u64,
    pub dt: u64,
    pub kind: BellKind,
}

/// Heralds by chaining all hub clicks whose consecutive gaps are within `window`
/// and keeping two-click chains on different detectors.
pub fn brute_heralds(ds: &TagDataset, map: &ChannelMap, window: f64) -> Vec<Herald> {
    let mut clicks: Vec<(u64, usize)> = Vec::new();
    for (i, ch) in map.hub.iter().enumerate() {
        clicks.extend(ds.timestamps(*ch).iter().map(|&t| (t, i)));
    }
    clicks.sort_unstable();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=clicks.len() {
        let split = i == clicks.len() || (clicks[i].0 - clicks[i - 1].0) as f64 > window;
        if !split {
            continue;
        }
        let c = &clicks[start..i];
        if c.len() == 2 && c[0].1 != c[1].1 {
            if let Some(kind) = herald_kind(c[0].1, c[1].1) {
                out.push(Herald {
                    t_ref: c[0].0,
                    dt: c[1].0 - c[0].0,
                    kind,
                });
            }
        }
        start = i;
    }
    out
}

/// Four-fold counts per herald kind and dwell, plus events outside all dwells.
pub struct BruteFourfold {
    pub per_dwell: BTreeMap<BellKind, Vec<u64>>,
    pub outside: BTreeMap<BellKind, u64>,
}

pub fn brute_fourfold(
    ds: &TagDataset,
    map: &ChannelMap,
    window: f64,
    centers: [f64; 2],
    half_width: [f64; 2],
    max_dt: f64,
) -> BruteFourfold {
    let dwells = &ds.metadata.dwells;
    let kinds = [BellKind::PsiPlus, BellKind::PsiMinus];
    let mut r = BruteFourfold {
        per_dwell: kinds.iter().map(|k| (*k, vec![0; dwells.len()])).collect(),
        outside: kinds.iter().map(|k| (*k, 0)).collect(),
    };
    for h in brute_heralds(ds, map, window) {
        if h.dt as f64 > max_dt {
            continue;
        }
        let hit = (0..2).all(|k| {
            ds.timestamps(map.spoke[k])
                .iter()
                .any(|&t| ((t as i64 - h.t_ref as i64) as f64 - centers[k]).abs() <= half_width[k])
        });
        if !hit {
            continue;
        }
        let x = (h.t_ref as f64 + centers[0]).round().max(0.0) as u64;
        match dwells.iter().position(|d| d.start_ps <= x && x < d.end_ps) {
            Some(i) => r.per_dwell.get_mut(&h.kind).unwrap()[i] += 1,
            None => *r.outside.get_mut(&h.kind).unwrap() += 1,
        }
    }
    r
}

/// Parameters used to build one random dataset.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub dataset: TagDataset,
    pub window: f64,
    pub centers: [f64; 2],
    pub half_width: [f64; 2],
    pub max_dt: f64,
}

/// Random six-channel dataset with up to `max_per_channel` tags per channel.
/// Uniform background is mixed with planted herald-plus-signal groups so
/// every branch of the matching logic is exercised.
pub fn random_case(seed: u64, max_per_channel: usize, force_max: bool) -> RandomCase {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_of = |rng: &mut StdRng| -> usize {
        if force_max {
            max_per_channel
        } else {
            let e = rng.random_range(0.0..(max_per_channel as f64).log10());
            10f64.powf(e).floor() as usize
        }
    };
    let mean_gap = 10f64.powf(rng.random_range(2.5..4.5));
    let base: u64 = 10_000_000;
    let window = rng.random_range(100.0..3000.0f64).round();
    let centers = [
        rng.random_range(-5e5..5e5f64),
        rng.random_range(-5e5..5e5f64),
    ];
    let half_width = [
        rng.random_range(50.0..4000.0),
        rng.random_range(50.0..4000.0),
    ];
    let max_dt = rng.random_range(0.3 * window..window * 1.2);

    let mut ch: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
    let mut span_max = 0u64;
    for &c in MAP.spoke.iter().chain(MAP.hub.iter()) {
        let n = n_of(&mut rng);
        let span = (n as f64 * mean_gap) as u64 + 1;
        span_max = span_max.max(span);
        let v: Vec<u64> = (0..n).map(|_| base + rng.random_range(0..span)).collect();
        ch.insert(c, v);
    }
    let planted = rng.random_range(0..=max_per_channel / 3);
    let patterns = [(0, 3), (1, 2), (0, 1), (2, 3), (0, 2), (1, 1)];
    for _ in 0..planted {
        let t = base + rng.random_range(0..span_max.max(1));
        let (i, j) = if rng.random_bool(0.85) {
            patterns[rng.random_range(0..4)]
        } else {
            patterns[rng.random_range(4..6)]
        };
        let dt = rng.random_range(0..=(window as u64));
        for (k, tk) in [(i, t), (j, t + dt)] {
            let v = ch.get_mut(&MAP.hub[k]).unwrap();
            if v.len() < max_per_channel {
                v.push(tk);
            }
        }
        for k in 0..2 {
            let jitter = rng.random_range(-1.2 * half_width[k]..1.2 * half_width[k]);
            let ts = (t as f64 + centers[k] + jitter).round().max(0.0) as u64;
            let v = ch.get_mut(&MAP.spoke[k]).unwrap();
            if v.len() < max_per_channel {
                v.push(ts);
            }
        }
    }
    for v in ch.values_mut() {
        v.sort_unstable();
    }

    // Dwells with gaps between them, some tags falling outside all of them.
    let end = base + span_max + 2_000_000;
    let n_dwells = rng.random_range(1..=5usize);
    let mut cuts: Vec<u64> = (0..2 * n_dwells)
        .map(|_| rng.random_range(base..end))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let dwells: Vec<DwellAnnotation> = cuts
        .chunks_exact(2)
        .filter(|c| c[1] > c[0])
        .enumerate()
        .map(|(i, c)| DwellAnnotation {
            index: i,
            cycle: 0,
            entry: i,
            hwp1_deg: 0.0,
            hwp2_deg: 0.0,
            start_ps: c[0],
            end_ps: c[1],
            label: String::new(),
        })
        .collect();
    let meta = RunMetadata::external("random", MAP, dwells);
    RandomCase {
        dataset: TagDataset::from_timestamps(meta, ch).expect("sorted"),
        window,
        centers,
        half_width,
        max_dt,
    }
}

/// Joint probabilities for one correlation: `[ab, a⊥b⊥, ab⊥, a⊥b]`.
pub fn e_from_probs(p: [f64; 4]) -> f64 {
    (p[0] + p[1] - p[2] - p[3]) / p.iter().sum::<f64>()
}
