//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run everything with `cargo test --test acceptance`, or a subset with
//! `cargo test --test acceptance -- 4 5 6`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::{brute_fourfold, brute_twofold, random_case, MAP};
use qswap::analysis::{
    fourfold_coincidences, g2_histogram, twofold_count, AnalyzerSettings, CoincidenceWindow, FourfoldAnalysis,
    FourfoldAnalyzer, FourfoldWindows, HeraldMap,
};
use qswap::bsm::{heralded_state, pair_overlap};
use qswap::chsh::same_hwp_angle;
use qswap::cli::{
    cmd_analyze, cmd_simulate, cmd_stability, AnalysisReport, AnalyzeOptions, AnalyzePlan, RunManifest,
    SimulateOptions, StabilityOptions,
};
use qswap::engine::dataset::RunMetadata;
use qswap::engine::run::{initial_metadata, run_scenario_into};
use qswap::engine::{run_stability, Scenario, ScenarioConfig};
use qswap::polarization::{bell_state, joint_projection_prob, BellKind, TwoQubitState};
use qswap::source::sample_emissions;

type Check = std::result::Result<String, String>;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn load(name: &str) -> Scenario {
    ScenarioConfig::from_path(&preset(name)).unwrap().resolve().unwrap()
}

fn stream_run(sc: &Scenario) -> (RunMetadata, FourfoldAnalysis) {
    let an = sc.analysis();
    let max_roi = an.roi_ps.iter().copied().fold(0.0, f64::max);
    let mut a = FourfoldAnalyzer::new(AnalyzerSettings::for_metadata(&initial_metadata(sc), max_roi)).unwrap();
    let meta = run_scenario_into(sc, &mut a).unwrap();
    (meta, a.into_result().unwrap())
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn s_table(report: &AnalysisReport) -> String {
    report
        .s_vs_rate
        .iter()
        .map(|p| format!("{}ps:{:.3}/s S={:.3}±{:.3}", p.roi_ps, p.measured_rate_hz, p.s, p.standard_error))
        .collect::<Vec<_>>()
        .join(", ")
}

struct Local {
    sc: Scenario,
    analysis: FourfoldAnalysis,
    report: AnalysisReport,
    seconds: f64,
    singles: [f64; 2],
}

fn local_run() -> Local {
    let sc = load("local.json");
    let t0 = Instant::now();
    let (meta, analysis) = stream_run(&sc);
    let plan = AnalyzePlan::new(&meta, &AnalyzeOptions::default()).unwrap();
    let report = AnalysisReport::build(&analysis, &plan, meta.spoke_efficiency).unwrap();
    let seconds = t0.elapsed().as_secs_f64();
    let st = meta.stats.as_ref().unwrap();
    let live = meta.t_end_ps.saturating_sub(meta.t_start_ps) as f64 * 1e-12;
    let singles = [0, 1].map(|k| st.tags_per_channel[&sc.channels.spoke[k]] as f64 / live);
    Local {
        sc,
        analysis,
        report,
        seconds,
        singles,
    }
}

fn c1_local(l: &Local) -> Check {
    let eff = l.report.spoke_efficiency;
    let hit = l
        .report
        .s_vs_rate
        .iter()
        .find(|p| (100.0..=400.0).contains(&p.measured_rate_hz) && p.s > 2.0);
    let corrected_ok = eff == [0.65, 0.65]
        && l
            .report
            .s_vs_rate
            .iter()
            .all(|p| (p.corrected_rate_hz - p.measured_rate_hz / (0.65 * 0.65)).abs() <= 1e-9 * p.corrected_rate_hz.max(1.0));
    let detail = format!(
        "singles {:.3e}/{:.3e} /s; {}; hit {}; corrected {}; {:.0} s",
        l.singles[0],
        l.singles[1],
        s_table(&l.report),
        hit.map_or("none".into(), |p| format!(
            "{} ps rate {:.1} (corrected {:.1}) S={:.3}±{:.3}",
            p.roi_ps, p.measured_rate_hz, p.corrected_rate_hz, p.s, p.standard_error
        )),
        if corrected_ok { "= measured/0.65²" } else { "WRONG" },
        l.seconds
    );
    verdict(hit.is_some() && corrected_ok && l.seconds <= 900.0, detail)
}

fn c3_hierarchy(l: &Local) -> Check {
    let h = 1000.0;
    let find = |hwp1: f64| {
        l.report
            .fringes
            .iter()
            .find(|c| c.roi_ps == h && same_hwp_angle(c.hwp1_deg, hwp1))
            .map(|c| c.fit)
    };
    let (Some(hv), Some(diag)) = (find(0.0), find(22.5)) else {
        return Err("fringe families missing".into());
    };
    let herald = l.report.herald;
    let diag_dwells: Vec<bool> = l.analysis.dwells.iter().map(|d| same_hwp_angle(d.hwp1_deg, 22.5)).collect();
    let v: Vec<f64> = l
        .analysis
        .events
        .iter()
        .filter(|e| e.kind == herald && e.dt as f64 <= h && e.d[0] <= h && e.d[1] <= h)
        .filter(|e| e.dwell.is_some_and(|d| diag_dwells[d as usize]))
        .map(|e| pair_overlap(e.dt as f64, &l.sc.bsm))
        .collect();
    let v_bar = v.iter().sum::<f64>() / v.len().max(1) as f64;
    let predicted = hv.visibility * v_bar;
    let sigma = diag.visibility_err.hypot(v_bar * hv.visibility_err);
    let detail = format!(
        "roi {h} ps: V_hv {:.4}±{:.4} > V_diag {:.4}±{:.4}; predicted V_hv×overlap {:.4} (mean overlap {:.4} over {} events), {:.2}σ",
        hv.visibility,
        hv.visibility_err,
        diag.visibility,
        diag.visibility_err,
        predicted,
        v_bar,
        v.len(),
        (diag.visibility - predicted).abs() / sigma
    );
    verdict(hv.visibility > diag.visibility && (diag.visibility - predicted).abs() <= 3.0 * sigma, detail)
}

fn c2_remote() -> Check {
    let sc = load("nyc.json");
    let t0 = Instant::now();
    let (meta, analysis) = stream_run(&sc);
    let plan = AnalyzePlan::new(&meta, &AnalyzeOptions::default()).unwrap();
    let report = AnalysisReport::build(&analysis, &plan, meta.spoke_efficiency).unwrap();
    let seconds = t0.elapsed().as_secs_f64();
    let (lo, hi) = (0.65 / 3.0, 0.65 * 3.0);
    let hit = report
        .s_vs_rate
        .iter()
        .find(|p| (lo..=hi).contains(&p.measured_rate_hz) && p.s > 2.0);
    let detail = format!(
        "pair rates {:?} /s; {}; hit {}; {:.0} s",
        analysis.pair_rate_hz.map(|r| r.map(|x| x.round())),
        s_table(&report),
        hit.map_or("none".into(), |p| format!(
            "{} ps rate {:.3} S={:.3}±{:.3}",
            p.roi_ps, p.measured_rate_hz, p.s, p.standard_error
        )),
        seconds
    );
    verdict(hit.is_some() && seconds <= 1800.0, detail)
}

fn c4_g2() -> Check {
    let sc = load("local.json");
    let src = &sc.spokes[0].source;
    let t_end = (1.5e6 / src.pair_rate * 1e12) as i64;
    let mut rng = qswap::rng::stream(4, "acceptance-g2", 0);
    let pairs = sample_emissions(src, 0, t_end, &mut rng).unwrap();
    let mut a: Vec<u64> = pairs.iter().map(|p| p.t_idler as u64).collect();
    let mut b: Vec<u64> = pairs.iter().map(|p| p.t_signal as u64).collect();
    a.sort_unstable();
    b.sort_unstable();
    let h = g2_histogram(&a, &b, 20.0, 100_000.0).unwrap();
    let (_, peak) = h.peak().unwrap();
    let floor = h.floor(30_000.0).unwrap();
    let detail = format!("{} pairs, peak {peak:.2} (target 80 ± 4), floor {floor:.4}", pairs.len());
    verdict(pairs.len() >= 1_000_000 && (peak - 80.0).abs() <= 4.0 && (0.98..=1.02).contains(&floor), detail)
}

fn c5_exactness() -> Check {
    let mut tags = 0usize;
    let mut fourfolds = 0u64;
    let mut twofolds = 0u64;
    for seed in 0..200u64 {
        let c = random_case(90_000 + seed, 10_000, seed < 4);
        tags = tags.max(c.dataset.streams.values().map(|s| s.len()).max().unwrap_or(0));
        let ds = &c.dataset;
        for (x, y, center, hw) in [
            (1u16, 3u16, 0.0, 1000.0),
            (2, 6, c.centers[1], c.half_width[1]),
            (3, 4, -c.window, c.window / 2.0),
        ] {
            let w = CoincidenceWindow::new(center, hw).unwrap();
            let got = twofold_count(ds.timestamps(x), ds.timestamps(y), &w).unwrap();
            let want = brute_twofold(ds.timestamps(x), ds.timestamps(y), center, hw);
            if got != want {
                return Err(format!("seed {seed} two-fold {x}-{y}: {got} != {want}"));
            }
            twofolds += want;
        }
        let w = FourfoldWindows {
            spoke: [
                CoincidenceWindow::new(c.centers[0], c.half_width[0]).unwrap(),
                CoincidenceWindow::new(c.centers[1], c.half_width[1]).unwrap(),
            ],
            max_herald_dt_ps: c.max_dt,
        };
        let hm = HeraldMap {
            channels: MAP,
            bsm_window_ps: c.window,
        };
        let got = fourfold_coincidences(ds, &w, &hm).unwrap();
        let want = brute_fourfold(ds, &MAP, c.window, c.centers, c.half_width, c.max_dt);
        if got.per_dwell != want.per_dwell || got.outside != want.outside {
            return Err(format!("seed {seed} four-fold mismatch"));
        }
        fourfolds += want.per_dwell.values().flatten().sum::<u64>() + want.outside.values().sum::<u64>();
    }
    Ok(format!(
        "200 datasets (largest channel {tags} tags): {twofolds} two-folds and {fourfolds} four-folds identical"
    ))
}

/// Signal-pair state left after projecting the two idlers, computed from
/// amplitudes of the four-photon product state.
fn amplitude_oracle(v: f64) -> TwoQubitState {
    let phi = [1.0, 0.0, 0.0, 1.0].map(|x| x / 2f64.sqrt());
    // Amplitude of (s1, i1, i2, s2) for two phi+ pairs.
    let amp = |s1: usize, i1: usize, i2: usize, s2: usize| phi[2 * s1 + i1] * phi[2 * s2 + i2];
    let project = |idler: [f64; 4]| {
        let mut psi = [0.0; 4];
        for (s1, s2) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    psi[2 * s1 + s2] += idler[2 * i1 + i2] * amp(s1, i1, i2, s2);
                }
            }
        }
        psi
    };
    let outer = |p: [f64; 4]| -> [f64; 16] {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                m[4 * r + c] = p[r] * p[c];
            }
        }
        m
    };
    let s = 1.0 / 2f64.sqrt();
    let coherent = outer(project([0.0, s, -s, 0.0]));
    // Distinguishable photons: the same click pattern from H⊗V or V⊗H, incoherently.
    let hv = outer(project([0.0, 1.0, 0.0, 0.0]));
    let vh = outer(project([0.0, 0.0, 1.0, 0.0]));
    let mut rho = [0.0; 16];
    for i in 0..16 {
        rho[i] = v * coherent[i] + (1.0 - v) * 0.5 * (hv[i] + vh[i]);
    }
    let tr: f64 = (0..4).map(|i| rho[5 * i]).sum();
    TwoQubitState::new(rho.map(|x| C64::new(x / tr, 0.0))).unwrap()
}

fn c6_algebra() -> Check {
    let phi = bell_state(BellKind::PhiPlus);
    let mut worst_v = 0.0f64;
    let mut worst_rho = 0.0f64;
    for v in [0.0, 0.5, 0.8, 1.0] {
        let s = heralded_state(&phi, &phi, BellKind::PsiMinus, v).unwrap();
        let same = joint_projection_prob(&s, 45.0, 45.0);
        let cross = joint_projection_prob(&s, 45.0, 135.0);
        worst_v = worst_v.max(((cross - same) / (cross + same) - v).abs());
        worst_rho = worst_rho.max(s.max_abs_diff(&amplitude_oracle(v)));
    }
    let at_one = heralded_state(&phi, &phi, BellKind::PsiMinus, 1.0)
        .unwrap()
        .max_abs_diff(&bell_state(BellKind::PsiMinus));
    let detail = format!(
        "diagonal visibility error {worst_v:.1e}, oracle entry error {worst_rho:.1e}, v=1 vs psi- {at_one:.1e}"
    );
    verdict(worst_v <= 1e-9 && worst_rho <= 1e-9 && at_one <= 1e-9, detail)
}

const IDEAL: &str = r#"{
    "name": "ideal",
    "master_seed": 77,
    "sources": [
        {"label": "S1", "pair_rate_hz": 1e7, "coherence_time_ps": 10},
        {"label": "S2", "pair_rate_hz": 1e7, "coherence_time_ps": 10}
    ],
    "links": {"idler": [{}, {}]},
    "bsm": {"excess_loss_db": 0, "hom_visibility": 1, "overlap_width_ps": 1e12},
    "detectors": {
        "spoke": [
            {"channel": 1, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0},
            {"channel": 2, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0}
        ],
        "hub": [
            {"channel": 3, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0},
            {"channel": 4, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0},
            {"channel": 5, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0},
            {"channel": 6, "efficiency": 1, "jitter_sigma_ps": 0, "dead_time_ps": 0, "dark_rate_hz": 0}
        ]
    },
    "clocks": {
        "spoke": [{"offset_ps": 0, "sync_jitter_sigma_ps": 0}, {"offset_ps": 0, "sync_jitter_sigma_ps": 0}],
        "hub": {"offset_ps": 0, "sync_jitter_sigma_ps": 0}
    },
    "acquisition": {"dwells": []},
    "analysis": {"roi_ps": [100], "bsm_window_ps": 100}
}"#;

fn c7_tsirelson() -> Check {
    let mut cfg = ScenarioConfig::from_json_str(IDEAL).unwrap();
    let set = cfg.analysis.settings;
    for (x, y) in set.required_dwells() {
        cfg.acquisition.dwells.push(qswap::engine::config::DwellEntry {
            hwp1_deg: x,
            hwp2_deg: y,
            duration_s: 0.6,
            label: String::new(),
        });
    }
    let sc = cfg.resolve().unwrap();
    let (meta, analysis) = stream_run(&sc);
    let plan = AnalyzePlan::new(&meta, &AnalyzeOptions::default()).unwrap();
    let report = AnalysisReport::build(&analysis, &plan, meta.spoke_efficiency).unwrap();
    let p = &report.s_vs_rate[0];
    let t = 2.0 * 2f64.sqrt();
    let detail = format!(
        "{} four-folds, S = {:.4} ± {:.4} ({:.2}σ from 2√2)",
        p.counts,
        p.s,
        p.standard_error,
        (p.s - t).abs() / p.standard_error
    );
    verdict(p.counts >= 10_000 && (p.s - t).abs() <= 3.0 * p.standard_error, detail)
}

fn c8_stability() -> Check {
    let t0 = Instant::now();
    let base = ScenarioConfig::from_path(&preset("stability.json")).unwrap();
    let st = base.stability.clone().unwrap();
    let on = run_stability(&base.resolve().unwrap(), st.hours, st.sample_interval_s).unwrap();
    let mut off_cfg = base.clone();
    for l in &mut off_cfg.links.idler {
        l.apc.enabled = false;
    }
    let off = run_stability(&off_cfg.resolve().unwrap(), st.hours, st.sample_interval_s).unwrap();
    let mean = on.iter().map(|x| x.pair_rate_hz).sum::<f64>() / on.len() as f64;
    let excursion = on.iter().map(|x| (x.pair_rate_hz / mean - 1.0).abs()).fold(0.0, f64::max);
    let min_on = on.iter().map(|x| x.s).fold(f64::INFINITY, f64::min);
    let min_off = off.iter().map(|x| x.s).fold(f64::INFINITY, f64::min);
    let seconds = t0.elapsed().as_secs_f64();
    let detail = format!(
        "{} h, {} samples: APC on rate {:.0}/s ±{:.2}% min S {min_on:.3}; APC off min S {min_off:.3}; {seconds:.1} s",
        st.hours,
        on.len(),
        mean,
        100.0 * excursion
    );
    verdict(excursion <= 0.05 && min_on > 2.0 && min_off < 2.0 && seconds <= 600.0, detail)
}

fn artifacts(m: &RunManifest) -> Vec<(String, String)> {
    m.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
}

fn c9_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let opts = SimulateOptions {
        seed: Some(11),
        duration_scale: Some(0.02),
        ..Default::default()
    };
    let cfg = preset("local.json");
    let mut sims = Vec::new();
    let mut ans = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("sim{k}"));
        sims.push(artifacts(&cmd_simulate(&cfg, &out, &opts).unwrap()));
        let (m, _) = cmd_analyze(&out, &dir.path().join(format!("an{k}")), &AnalyzeOptions::default()).unwrap();
        ans.push(artifacts(&m));
        std::fs::remove_dir_all(&out).unwrap();
    }
    let mut stab = Vec::new();
    for k in 0..2 {
        let (m, _) = cmd_stability(
            &preset("stability.json"),
            2.0,
            &dir.path().join(format!("st{k}")),
            &StabilityOptions::default(),
        )
        .unwrap();
        stab.push(artifacts(&m));
    }
    let detail = format!(
        "simulate {} files, analyze {} files, stability {} file(s) hash-identical across reruns",
        sims[0].len(),
        ans[0].len(),
        stab[0].len()
    );
    verdict(sims[0] == sims[1] && ans[0] == ans[1] && stab[0] == stab[1] && !sims[0].is_empty(), detail)
}

#[derive(serde::Deserialize)]
struct Baseline {
    twofold_min_tags_per_s: f64,
}

fn c10_throughput() -> Check {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("perf_baseline.json")).unwrap();
    let base: Baseline = serde_json::from_str(&text).unwrap();
    let mut rng = StdRng::seed_from_u64(10);
    let n = 5_000_000;
    let gen = |rng: &mut StdRng| {
        let mut t = 0u64;
        (0..n)
            .map(|_| {
                t += rng.random_range(1..2000u64);
                t
            })
            .collect::<Vec<u64>>()
    };
    let a = gen(&mut rng);
    let b = gen(&mut rng);
    let w = CoincidenceWindow::new(0.0, 500.0).unwrap();
    let mut best = f64::INFINITY;
    let mut count = 0;
    for _ in 0..5 {
        let t0 = Instant::now();
        count = std::hint::black_box(twofold_count(&a, &b, &w).unwrap());
        best = best.min(t0.elapsed().as_secs_f64());
    }
    let rate = 2.0 * n as f64 / best;
    let detail = format!(
        "{:.3e} tags/s single-threaded ({count} coincidences), threshold {:.1e}",
        rate, base.twofold_min_tags_per_s
    );
    verdict(rate >= base.twofold_min_tags_per_s, detail)
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut run = |k: u32, name: &'static str, f: &mut dyn FnMut() -> Check| {
        if !on(k) {
            return;
        }
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, text) = match &r {
            Ok(s) => ("PASS", s),
            Err(s) => ("FAIL", s),
        };
        println!("{tag} {k:>2} {name}: {text}");
        results.push((k, name, r));
    };

    let local = if on(1) || on(3) { Some(local_run()) } else { None };
    run(1, "local swapping S>2 near 200/s", &mut || c1_local(local.as_ref().unwrap()));
    run(2, "remote swapping S>2 near 0.65/s", &mut c2_remote);
    run(3, "visibility hierarchy", &mut || c3_hierarchy(local.as_ref().unwrap()));
    run(4, "g2 peak and floor", &mut c4_g2);
    run(5, "coincidence exactness", &mut c5_exactness);
    run(6, "heralded-state algebra", &mut c6_algebra);
    run(7, "ideal-limit Tsirelson", &mut c7_tsirelson);
    run(8, "stability with and without APC", &mut c8_stability);
    run(9, "determinism", &mut c9_determinism);
    run(10, "two-fold throughput", &mut c10_throughput);

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
