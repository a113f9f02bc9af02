//! Commands behind the `qswap` binary: simulate a scenario to a dataset
//! directory, analyze a dataset into tables, and run a stability series.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::fourfold::{
    validate_roi_list, AnalyzerSettings, FourfoldAnalysis, FourfoldAnalyzer,
};
use crate::chsh::{
    fit_fringe, s_vs_rate_from_analysis, same_hwp_angle, FringeFit, SRatePoint, SettingTable,
};
use crate::engine::config::{ChshSettings, ScenarioConfig};
use crate::engine::dataset::RunMetadata;
use crate::engine::run::run_scenario_into;
use crate::engine::stability::{run_stability, StabilitySample};
use crate::error::{Error, Result};
use crate::io::qtag::{channel_file_name, SIDECAR};
use crate::io::{read_metadata, stream_dataset, write_atomic, QtagDirSink};
use crate::polarization::BellKind;

pub const MANIFEST: &str = "manifest.json";

/// Streaming block used when reading dataset directories, ps.
const STREAM_BLOCK_PS: u64 = 10_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub config_path: String,
    pub out_dir: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    fn new(
        command: &str,
        scenario: &str,
        config_path: &Path,
        out_dir: &Path,
        seed: Option<u64>,
    ) -> Self {
        RunManifest {
            command: command.into(),
            scenario: scenario.into(),
            config_path: config_path.display().to_string(),
            out_dir: out_dir.display().to_string(),
            seed,
            artifacts: Vec::new(),
        }
    }

    fn add(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let (sha256, bytes) = hash_file(path)?;
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.artifacts.push(Artifact {
            path: rel.display().to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Re-hashes every artifact; returns the paths that are missing or changed.
    pub fn verify(&self, out_dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| {
                hash_file(&out_dir.join(&a.path))
                    .map(|(h, n)| h != a.sha256 || n != a.bytes)
                    .unwrap_or(true)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((hex::encode(h.finalize()), n))
}

/// Sizes the global thread pool from `QTAG_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("QTAG_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::invalid(format!("QTAG_THREADS=`{v}` must be a positive integer"))
        })?;
    if rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_err()
    {
        warn!("thread pool already initialised; QTAG_THREADS ignored");
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub seed: Option<u64>,
    /// Restore full paper-length dwells.
    pub paper_scale: bool,
    /// Extra multiplier on every dwell duration.
    pub duration_scale: Option<f64>,
}

/// Loads a config and applies command-line overrides.
pub fn prepare_config(config_path: &Path, opts: &SimulateOptions) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_path(config_path)?;
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
    }
    if opts.paper_scale {
        cfg = cfg.paper_scaled();
    }
    if let Some(f) = opts.duration_scale {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::invalid(format!("duration scale {f} must be > 0")));
        }
        for d in &mut cfg.acquisition.dwells {
            d.duration_s *= f;
        }
    }
    Ok(cfg)
}

/// Simulates a scenario into `out_dir` as tag files plus sidecar and manifest.
pub fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    opts: &SimulateOptions,
) -> Result<RunManifest> {
    let cfg = prepare_config(config_path, opts)?;
    let sc = cfg.resolve()?;
    create_dir(out_dir)?;
    info!("simulating `{}` with seed {}", cfg.name, cfg.master_seed);
    let mut sink = QtagDirSink::new(out_dir, false)?;
    let meta = run_scenario_into(&sc, &mut sink)?;
    if let Some(st) = &meta.stats {
        info!(
            "pairs simulated {:?}, tags per channel {:?}",
            st.pairs_simulated, st.tags_per_channel
        );
    }
    let mut m = RunManifest::new(
        "simulate",
        &cfg.name,
        config_path,
        out_dir,
        Some(cfg.master_seed),
    );
    for p in sink.written() {
        m.add(out_dir, p)?;
    }
    m.write(out_dir)?;
    Ok(m)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// ROI half-widths, ps; the dataset's configured list when absent.
    pub roi_ps: Option<Vec<f64>>,
    pub herald: Option<BellKind>,
    pub settings: Option<ChshSettings>,
}

impl AnalyzeOptions {
    /// Checks the explicit choices without looking at any data.
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.roi_ps {
            validate_roi_list(r)?;
        }
        if let Some(h) = self.herald {
            check_heraldable(h)?;
        }
        Ok(())
    }
}

fn check_heraldable(h: BellKind) -> Result<()> {
    if h.is_heraldable() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{h} cannot be heralded by this analyzer")))
    }
}

/// Resolved analysis choices for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzePlan {
    pub roi_ps: Vec<f64>,
    pub herald: BellKind,
    pub settings: ChshSettings,
}

impl AnalyzePlan {
    pub fn new(meta: &RunMetadata, opts: &AnalyzeOptions) -> Result<Self> {
        let cfg = meta
            .config
            .as_ref()
            .map(|c| c.analysis.clone())
            .unwrap_or_default();
        let plan = AnalyzePlan {
            roi_ps: opts.roi_ps.clone().unwrap_or(cfg.roi_ps),
            herald: opts.herald.unwrap_or(cfg.herald),
            settings: opts.settings.unwrap_or(cfg.settings),
        };
        validate_roi_list(&plan.roi_ps)?;
        check_heraldable(plan.herald)?;
        Ok(plan)
    }
}

/// Streams a dataset directory through the four-fold analyzer.
pub fn analyze_dir(data_dir: &Path, max_roi_ps: f64) -> Result<(RunMetadata, FourfoldAnalysis)> {
    let meta = read_metadata(data_dir)?;
    let missing: Vec<String> = meta
        .channels
        .all()
        .iter()
        .filter(|(ch, _)| !data_dir.join(channel_file_name(*ch)).is_file())
        .map(|(ch, role)| format!("{ch} ({})", role.name()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "dataset is missing channels {}",
            missing.join(", ")
        )));
    }
    let mut analyzer = FourfoldAnalyzer::new(AnalyzerSettings::for_metadata(&meta, max_roi_ps))?;
    stream_dataset(data_dir, &mut analyzer, STREAM_BLOCK_PS)?;
    Ok((meta, analyzer.into_result()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub dwell_index: usize,
    pub hwp1_deg: f64,
    pub hwp2_deg: f64,
    pub herald: String,
    pub roi_ps: f64,
    pub counts: u64,
    pub live_time_s: f64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeRow {
    pub roi_ps: f64,
    pub hwp1_deg: f64,
    pub hwp2_deg: f64,
    pub counts: u64,
    pub live_time_s: f64,
    pub rate_hz: f64,
    pub model_rate_hz: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    pub phase_deg: f64,
}

/// Fit of one fringe: fixed first waveplate, second waveplate rotated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeCurve {
    pub roi_ps: f64,
    pub hwp1_deg: f64,
    /// `(hwp2_deg, counts, live_time_s)` aggregated over dwells.
    pub points: Vec<(f64, u64, f64)>,
    pub fit: FringeFit,
    /// Live time the fitted counts are normalised to, s.
    pub reference_live_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ERow {
    pub roi_ps: f64,
    pub pair: String,
    pub hwp1_deg: f64,
    pub hwp2_deg: f64,
    pub n_ab: f64,
    pub n_a_perp_b_perp: f64,
    pub n_a_b_perp: f64,
    pub n_a_perp_b: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_err")]
    pub e_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SRateRow {
    roi_ps: f64,
    counts: u64,
    live_time_s: f64,
    measured_rate_hz: f64,
    rate_err_hz: f64,
    corrected_rate_hz: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "S_err")]
    s_err: f64,
}

/// Every table produced from one analysis pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub herald: BellKind,
    pub settings: ChshSettings,
    pub centers_ps: [f64; 2],
    pub spoke_hub_rate_hz: Option<[f64; 2]>,
    pub pair_rate_hz: Option<[f64; 2]>,
    pub spoke_efficiency: [f64; 2],
    pub live_time_s: f64,
    pub counts: Vec<CountRow>,
    pub fringes: Vec<FringeCurve>,
    pub e_table: Vec<ERow>,
    pub s_vs_rate: Vec<SRatePoint>,
}

fn angle_key(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Dwell families with a fixed first waveplate and at least five distinct
/// second-waveplate angles spanning 90°.
fn fringe_families(analysis: &FourfoldAnalysis) -> Vec<f64> {
    let mut fam: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
    for d in &analysis.dwells {
        let k = angle_key(d.hwp1_deg.rem_euclid(90.0));
        let e = fam.entry(k).or_insert((d.hwp1_deg, Vec::new()));
        if !e.1.iter().any(|x| (x - d.hwp2_deg).abs() < 1e-6) {
            e.1.push(d.hwp2_deg);
        }
    }
    fam.into_values()
        .filter(|(_, v)| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.len() >= 5 && hi - lo >= 90.0 - 1e-6
        })
        .map(|(h, _)| h)
        .collect()
}

fn fringe_curve(
    analysis: &FourfoldAnalysis,
    per_dwell: &[u64],
    roi: f64,
    hwp1: f64,
) -> Result<FringeCurve> {
    let mut pts: BTreeMap<i64, (f64, u64, f64)> = BTreeMap::new();
    for d in analysis
        .dwells
        .iter()
        .filter(|d| same_hwp_angle(d.hwp1_deg, hwp1))
    {
        let e = pts
            .entry(angle_key(d.hwp2_deg))
            .or_insert((d.hwp2_deg, 0, 0.0));
        e.1 += per_dwell.get(d.index).copied().unwrap_or(0);
        e.2 += d.live_time_s();
    }
    let points: Vec<(f64, u64, f64)> = pts.into_values().filter(|p| p.2 > 0.0).collect();
    let t_ref = points.iter().map(|p| p.2).sum::<f64>() / points.len().max(1) as f64;
    let data: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.0, p.1 as f64 * t_ref / p.2))
        .collect();
    Ok(FringeCurve {
        roi_ps: roi,
        hwp1_deg: hwp1,
        fit: fit_fringe(&data)?,
        points,
        reference_live_time_s: t_ref,
    })
}

impl AnalysisReport {
    pub fn build(
        analysis: &FourfoldAnalysis,
        plan: &AnalyzePlan,
        spoke_efficiency: [f64; 2],
    ) -> Result<Self> {
        let herald = plan.herald;
        let per_roi: Vec<(f64, Vec<u64>)> = plan
            .roi_ps
            .par_iter()
            .map(|&h| {
                let c = analysis.roi_counts(h)?;
                Ok((
                    h,
                    c.per_dwell
                        .get(&herald)
                        .cloned()
                        .unwrap_or_else(|| vec![0; analysis.dwells.len()]),
                ))
            })
            .collect::<Result<_>>()?;

        let mut counts = Vec::new();
        for (h, per) in &per_roi {
            for d in &analysis.dwells {
                let n = per.get(d.index).copied().unwrap_or(0);
                let live = d.live_time_s();
                counts.push(CountRow {
                    dwell_index: d.index,
                    hwp1_deg: d.hwp1_deg,
                    hwp2_deg: d.hwp2_deg,
                    herald: herald.to_string(),
                    roi_ps: *h,
                    counts: n,
                    live_time_s: live,
                    rate_hz: if live > 0.0 { n as f64 / live } else { 0.0 },
                });
            }
        }

        let families = fringe_families(analysis);
        let mut fringes = Vec::new();
        for (h, per) in &per_roi {
            for &hwp1 in &families {
                match fringe_curve(analysis, per, *h, hwp1) {
                    Ok(c) => fringes.push(c),
                    Err(Error::NoSignal(msg)) => warn!("fringe at hwp1 {hwp1} roi {h}: {msg}"),
                    Err(e) => return Err(e),
                }
            }
        }

        let labels = ["ab", "ab'", "a'b", "a'b'"];
        let s = plan.settings;
        let angles = [
            (s.a, s.b),
            (s.a, s.b_prime),
            (s.a_prime, s.b),
            (s.a_prime, s.b_prime),
        ];
        let mut e_table = Vec::new();
        for (h, per) in &per_roi {
            let table = SettingTable::build(&analysis.dwells, per, plan.settings)?;
            let r = match table.chsh() {
                Ok(r) => r,
                Err(Error::NoSignal(msg)) => {
                    warn!("correlations at roi {h}: {msg}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (i, (x, y)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let j = table.joint(x, y);
                e_table.push(ERow {
                    roi_ps: *h,
                    pair: labels[i].into(),
                    hwp1_deg: angles[i].0,
                    hwp2_deg: angles[i].1,
                    n_ab: j.counts[0],
                    n_a_perp_b_perp: j.counts[1],
                    n_a_b_perp: j.counts[2],
                    n_a_perp_b: j.counts[3],
                    e: r.e_values[i].e,
                    e_err: r.e_values[i].sigma,
                });
            }
        }
        let s_vs_rate = s_vs_rate_from_analysis(
            analysis,
            &plan.roi_ps,
            herald,
            plan.settings,
            spoke_efficiency,
        )?;
        Ok(AnalysisReport {
            herald,
            settings: plan.settings,
            centers_ps: analysis.centers_ps,
            spoke_hub_rate_hz: analysis.spoke_hub_rate_hz,
            pair_rate_hz: analysis.pair_rate_hz,
            spoke_efficiency,
            live_time_s: analysis.live_time_s(),
            counts,
            fringes,
            e_table,
            s_vs_rate,
        })
    }

    pub fn fringe_rows(&self) -> Vec<FringeRow> {
        let mut rows = Vec::new();
        for c in &self.fringes {
            let f = &c.fit;
            for &(t, n, live) in &c.points {
                let k = f.amplitude / 2.0;
                let model = f.offset + k * (1.0 + (4.0 * (t - f.phase)).to_radians().cos());
                rows.push(FringeRow {
                    roi_ps: c.roi_ps,
                    hwp1_deg: c.hwp1_deg,
                    hwp2_deg: t,
                    counts: n,
                    live_time_s: live,
                    rate_hz: n as f64 / live,
                    model_rate_hz: model / c.reference_live_time_s,
                    visibility: f.visibility,
                    visibility_err: f.visibility_err,
                    phase_deg: f.phase,
                });
            }
        }
        rows
    }

    fn s_rows(&self) -> Vec<SRateRow> {
        self.s_vs_rate
            .iter()
            .map(|p| SRateRow {
                roi_ps: p.roi_ps,
                counts: p.counts,
                live_time_s: p.live_time_s,
                measured_rate_hz: p.measured_rate_hz,
                rate_err_hz: p.rate_err_hz,
                corrected_rate_hz: p.corrected_rate_hz,
                s: p.s,
                s_err: p.standard_error,
            })
            .collect()
    }
}

/// Serialises rows as CSV with a header (written even when `rows` is empty).
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

const COUNT_HEADER: &[&str] = &[
    "dwell_index",
    "hwp1_deg",
    "hwp2_deg",
    "herald",
    "roi_ps",
    "counts",
    "live_time_s",
    "rate_hz",
];
const FRINGE_HEADER: &[&str] = &[
    "roi_ps",
    "hwp1_deg",
    "hwp2_deg",
    "counts",
    "live_time_s",
    "rate_hz",
    "model_rate_hz",
    "visibility",
    "visibility_err",
    "phase_deg",
];
const E_HEADER: &[&str] = &[
    "roi_ps",
    "pair",
    "hwp1_deg",
    "hwp2_deg",
    "n_ab",
    "n_a_perp_b_perp",
    "n_a_b_perp",
    "n_a_perp_b",
    "E",
    "E_err",
];
const S_HEADER: &[&str] = &[
    "roi_ps",
    "counts",
    "live_time_s",
    "measured_rate_hz",
    "rate_err_hz",
    "corrected_rate_hz",
    "S",
    "S_err",
];

/// Analyzes a dataset directory and writes the result tables to `out_dir`.
pub fn cmd_analyze(
    data_dir: &Path,
    out_dir: &Path,
    opts: &AnalyzeOptions,
) -> Result<(RunManifest, AnalysisReport)> {
    opts.validate()?;
    let meta = read_metadata(data_dir)?;
    let plan = AnalyzePlan::new(&meta, opts)?;
    let max_roi = plan.roi_ps.iter().copied().fold(0.0, f64::max);
    let (meta, analysis) = analyze_dir(data_dir, max_roi)?;
    let report = AnalysisReport::build(&analysis, &plan, meta.spoke_efficiency)?;
    create_dir(out_dir)?;
    let files: [(&str, Vec<u8>); 5] = [
        ("counts.csv", to_csv(&report.counts, COUNT_HEADER)?),
        ("fringes.csv", to_csv(&report.fringe_rows(), FRINGE_HEADER)?),
        ("e_table.csv", to_csv(&report.e_table, E_HEADER)?),
        ("s_vs_rate.csv", to_csv(&report.s_rows(), S_HEADER)?),
        ("plotdata.json", {
            let mut v = serde_json::to_vec_pretty(&report).expect("report serializes");
            v.push(b'\n');
            v
        }),
    ];
    let mut m = RunManifest::new(
        "analyze",
        &meta.scenario,
        &data_dir.join(SIDECAR),
        out_dir,
        Some(meta.seed),
    );
    for (name, bytes) in files {
        let p = out_dir.join(name);
        write_atomic(&p, &bytes)?;
        m.add(out_dir, &p)?;
    }
    m.write(out_dir)?;
    Ok((m, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StabilityRow {
    t_hours: f64,
    pair_rate_hz: f64,
    visibility_hv: f64,
    visibility_diag: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "S_err")]
    s_err: f64,
    drift_angle_rad: f64,
}

const STABILITY_HEADER: &[&str] = &[
    "t_hours",
    "pair_rate_hz",
    "visibility_hv",
    "visibility_diag",
    "S",
    "S_err",
    "drift_angle_rad",
];

#[derive(Debug, Clone, Default)]
pub struct StabilityOptions {
    pub seed: Option<u64>,
    /// Disable polarization compensation on every link.
    pub no_apc: bool,
}

/// Runs the stability series and writes `stability.csv`.
pub fn cmd_stability(
    config_path: &Path,
    hours: f64,
    out_dir: &Path,
    opts: &StabilityOptions,
) -> Result<(RunManifest, Vec<StabilitySample>)> {
    let mut cfg = ScenarioConfig::from_path(config_path)?;
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
    }
    if opts.no_apc {
        for l in cfg
            .links
            .idler
            .iter_mut()
            .chain(cfg.links.signal.iter_mut())
        {
            l.apc.enabled = false;
        }
    }
    let sc = cfg.resolve()?;
    let interval = cfg.stability.clone().unwrap_or_default().sample_interval_s;
    let samples = run_stability(&sc, hours, interval)?;
    let rows: Vec<StabilityRow> = samples
        .iter()
        .map(|s| StabilityRow {
            t_hours: s.t_hours,
            pair_rate_hz: s.pair_rate_hz,
            visibility_hv: s.visibility_hv,
            visibility_diag: s.visibility_diag,
            s: s.s,
            s_err: s.s_err,
            drift_angle_rad: s.drift_angle_rad,
        })
        .collect();
    create_dir(out_dir)?;
    let p = out_dir.join("stability.csv");
    write_atomic(&p, &to_csv(&rows, STABILITY_HEADER)?)?;
    let mut m = RunManifest::new(
        "stability",
        &cfg.name,
        config_path,
        out_dir,
        Some(cfg.master_seed),
    );
    m.add(out_dir, &p)?;
    m.write(out_dir)?;
    Ok((m, samples))
}
