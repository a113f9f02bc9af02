//! Fringes, correlation values and the CHSH parameter from coincidence counts.

use log::warn;
use serde::Serialize;

use crate::analysis::fourfold::{validate_roi_list, FourfoldAnalysis, FourfoldCount};
use crate::engine::config::ChshSettings;
use crate::engine::dataset::DwellAnnotation;
use crate::error::{Error, Result};
use crate::polarization::BellKind;

pub const TSIRELSON: f64 = 2.0 * std::f64::consts::SQRT_2;

const FIT_TOLERANCE: f64 = 1e-9;
const FIT_MAX_ITER: usize = 200;

/// Least-squares fringe `offset + amplitude·(1 + cos 4(θ − phase))/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FringeFit {
    /// Peak-to-trough height, counts.
    pub amplitude: f64,
    /// `(max − min)/(max + min)` of the fitted curve, clamped to [0, 1].
    pub visibility: f64,
    pub visibility_err: f64,
    /// Waveplate angle of the maximum, degrees in (−45, 45].
    pub phase: f64,
    /// Fitted minimum, counts.
    pub offset: f64,
    /// Pearson χ² per degree of freedom.
    pub residual: f64,
    pub iterations: usize,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (j, xj) in x.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][j] = b[i];
        }
        *xj = det(&m) / d;
    }
    Some(x)
}

fn invert3(a: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut inv = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        let col = solve3(a, e)?;
        for i in 0..3 {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Fits `y = M + Kc·cos4θ + Ks·sin4θ` by iteratively reweighted least squares
/// with Poisson weights, starting from the unweighted solution.
pub fn fit_fringe(points: &[(f64, f64)]) -> Result<FringeFit> {
    if points
        .iter()
        .any(|(t, y)| !t.is_finite() || !y.is_finite() || *y < 0.0)
    {
        return Err(Error::invalid(
            "fringe points must be finite with non-negative counts",
        ));
    }
    let mut angles: Vec<f64> = points.iter().map(|p| p.0).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let span = angles
        .last()
        .zip(angles.first())
        .map_or(0.0, |(hi, lo)| hi - lo);
    if angles.len() < 5 || span < 90.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "fringe fit needs at least 5 distinct angles spanning 90 degrees, got {} spanning {span}",
            angles.len()
        )));
    }
    let ymax = points.iter().map(|p| p.1).fold(0.0, f64::max);
    if ymax <= 0.0 {
        return Err(Error::NoSignal("all fringe counts are zero".into()));
    }
    let basis: Vec<[f64; 3]> = points
        .iter()
        .map(|(t, _)| {
            let (s, c) = (4.0 * t.to_radians()).sin_cos();
            [1.0, c, s]
        })
        .collect();
    let normal = |w: &dyn Fn(usize) -> f64| {
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (i, x) in basis.iter().enumerate() {
            let wi = w(i);
            for r in 0..3 {
                b[r] += wi * x[r] * points[i].1;
                for c in 0..3 {
                    a[r][c] += wi * x[r] * x[c];
                }
            }
        }
        (a, b)
    };
    let (a, b) = normal(&|_| 1.0);
    let mut p = solve3(a, b).ok_or_else(|| Error::invalid("degenerate fringe design"))?;
    let floor = 1e-6 * points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let predict = |p: &[f64; 3], i: usize| {
        (p[0] * basis[i][0] + p[1] * basis[i][1] + p[2] * basis[i][2]).max(floor)
    };
    let mut iterations = 0;
    for it in 1..=FIT_MAX_ITER {
        iterations = it;
        let cur = p;
        let (a, b) = normal(&|i| 1.0 / predict(&cur, i));
        let next = solve3(a, b).ok_or_else(|| Error::invalid("degenerate fringe design"))?;
        let scale = next
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let change = next
            .iter()
            .zip(&cur)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale;
        p = next;
        if change < FIT_TOLERANCE {
            break;
        }
    }
    let (m, kc, ks) = (p[0], p[1], p[2]);
    let k = kc.hypot(ks);
    let visibility = if m > 0.0 {
        (k / m).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let phase = ks.atan2(kc).to_degrees() / 4.0;

    let chi2: f64 = (0..points.len())
        .map(|i| (points[i].1 - predict(&p, i)).powi(2) / predict(&p, i))
        .sum();
    let dof = points.len().saturating_sub(3).max(1) as f64;
    let (a, _) = normal(&|i| 1.0 / predict(&p, i));
    let visibility_err = match invert3(a) {
        Some(cov) if k > 0.0 && m > 0.0 => {
            let g = [-k / (m * m), kc / (k * m), ks / (k * m)];
            let mut v = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    v += g[r] * cov[r][c] * g[c];
                }
            }
            v.max(0.0).sqrt()
        }
        _ => 0.0,
    };
    Ok(FringeFit {
        amplitude: 2.0 * k,
        visibility,
        visibility_err,
        phase,
        offset: m - k,
        residual: chi2 / dof,
        iterations,
    })
}

/// Counts and live times of the four joint outcomes of one setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct JointCounts {
    /// `(a, b)`, `(a⊥, b⊥)`, `(a, b⊥)`, `(a⊥, b)`.
    pub counts: [f64; 4],
    pub live_time_s: [f64; 4],
}

impl JointCounts {
    /// Equal live time for every outcome.
    pub fn uniform(counts: [f64; 4]) -> Self {
        JointCounts {
            counts,
            live_time_s: [1.0; 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub e: f64,
    pub sigma: f64,
    pub total_counts: f64,
}

/// `E = (C(a,b) + C(a⊥,b⊥) − C(a,b⊥) − C(a⊥,b)) / total`, evaluated on rates
/// so unequal live times do not bias it.
pub fn correlation_e(c: &JointCounts) -> Result<Correlation> {
    if c.counts.iter().any(|n| !(n.is_finite() && *n >= 0.0))
        || c.live_time_s.iter().any(|t| !(*t > 0.0))
    {
        return Err(Error::invalid("counts must be >= 0 and live times > 0"));
    }
    let sign = [1.0, 1.0, -1.0, -1.0];
    let rates: Vec<f64> = (0..4).map(|i| c.counts[i] / c.live_time_s[i]).collect();
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoSignal(
            "no coincidences for this setting pair".into(),
        ));
    }
    let e = (0..4).map(|i| sign[i] * rates[i]).sum::<f64>() / total;
    let var = (0..4)
        .map(|i| (sign[i] - e).powi(2) * c.counts[i] / c.live_time_s[i].powi(2))
        .sum::<f64>()
        / (total * total);
    Ok(Correlation {
        e: e.clamp(-1.0, 1.0),
        sigma: var.sqrt(),
        total_counts: c.counts.iter().sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChshResult {
    pub s: f64,
    pub standard_error: f64,
    /// `E(a,b)`, `E(a,b′)`, `E(a′,b)`, `E(a′,b′)`.
    pub e_values: [Correlation; 4],
    pub settings: ChshSettings,
    /// S exceeds the quantum bound by more than three standard errors.
    pub unphysical: bool,
}

/// `S = |E(a,b) − E(a,b′)| + |E(a′,b) + E(a′,b′)|` with errors added in quadrature.
pub fn chsh_s(e: [Correlation; 4], settings: ChshSettings) -> ChshResult {
    let s = (e[0].e - e[1].e).abs() + (e[2].e + e[3].e).abs();
    let standard_error = e.iter().map(|x| x.sigma * x.sigma).sum::<f64>().sqrt();
    let unphysical = s > TSIRELSON + 3.0 * standard_error;
    if unphysical {
        warn!("S = {s:.4} exceeds 2√2 by more than 3σ (σ = {standard_error:.4})");
    }
    ChshResult {
        s,
        standard_error,
        e_values: e,
        settings,
        unphysical,
    }
}

/// True when two waveplate angles give the same analysis (period 90°).
pub fn same_hwp_angle(x: f64, y: f64) -> bool {
    let d = (x - y).rem_euclid(90.0);
    d < 1e-6 || 90.0 - d < 1e-6
}

/// Counts and live time per setting combination, summed over cycles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingTable {
    pub settings: ChshSettings,
    /// Row-major over `[a, a⊥, a′, a′⊥] × [b, b⊥, b′, b′⊥]`.
    pub counts: [[u64; 4]; 4],
    pub live_time_s: [[f64; 4]; 4],
    /// Dwells that contributed.
    pub dwells: Vec<usize>,
}

impl SettingTable {
    pub fn build(
        dwells: &[DwellAnnotation],
        per_dwell: &[u64],
        settings: ChshSettings,
    ) -> Result<Self> {
        let xs = [
            settings.a,
            settings.a + 45.0,
            settings.a_prime,
            settings.a_prime + 45.0,
        ];
        let ys = [
            settings.b,
            settings.b + 45.0,
            settings.b_prime,
            settings.b_prime + 45.0,
        ];
        let mut counts = [[0u64; 4]; 4];
        let mut live = [[0.0; 4]; 4];
        let mut used = Vec::new();
        for d in dwells {
            let i = xs.iter().position(|x| same_hwp_angle(*x, d.hwp1_deg));
            let j = ys.iter().position(|y| same_hwp_angle(*y, d.hwp2_deg));
            if let (Some(i), Some(j)) = (i, j) {
                counts[i][j] += per_dwell.get(d.index).copied().unwrap_or(0);
                live[i][j] += d.live_time_s();
                used.push(d.index);
            }
        }
        let missing: Vec<String> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| live[i][j] <= 0.0)
            .map(|(i, j)| format!("({}, {})", xs[i], ys[j]))
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "dataset lacks dwells for HWP settings {}",
                missing.join(", ")
            )));
        }
        Ok(SettingTable {
            settings,
            counts,
            live_time_s: live,
            dwells: used,
        })
    }

    /// Joint counts for analysis indices `x ∈ {0: a, 1: a′}`, `y ∈ {0: b, 1: b′}`.
    pub fn joint(&self, x: usize, y: usize) -> JointCounts {
        let (i, ip, j, jp) = (2 * x, 2 * x + 1, 2 * y, 2 * y + 1);
        JointCounts {
            counts: [
                self.counts[i][j] as f64,
                self.counts[ip][jp] as f64,
                self.counts[i][jp] as f64,
                self.counts[ip][j] as f64,
            ],
            live_time_s: [
                self.live_time_s[i][j],
                self.live_time_s[ip][jp],
                self.live_time_s[i][jp],
                self.live_time_s[ip][j],
            ],
        }
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn total_live_time_s(&self) -> f64 {
        self.live_time_s.iter().flatten().sum()
    }

    pub fn chsh(&self) -> Result<ChshResult> {
        let e = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(x, y)| correlation_e(&self.joint(x, y)));
        let [e0, e1, e2, e3] = e;
        Ok(chsh_s([e0?, e1?, e2?, e3?], self.settings))
    }
}

/// One point of an S-versus-rate curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SRatePoint {
    pub roi_ps: f64,
    pub counts: u64,
    pub live_time_s: f64,
    /// Four-fold rate over the CHSH dwells, /s.
    pub measured_rate_hz: f64,
    pub rate_err_hz: f64,
    /// Measured rate divided by the spoke detector efficiencies.
    pub corrected_rate_hz: f64,
    pub s: f64,
    pub standard_error: f64,
    pub e_values: [f64; 4],
    pub e_errors: [f64; 4],
}

/// S and four-fold rate for every ROI of an analysis pass.
pub fn s_vs_rate_from_analysis(
    analysis: &FourfoldAnalysis,
    roi_list: &[f64],
    herald: BellKind,
    settings: ChshSettings,
    spoke_efficiency: [f64; 2],
) -> Result<Vec<SRatePoint>> {
    validate_roi_list(roi_list)?;
    let eff = spoke_efficiency[0] * spoke_efficiency[1];
    if !(eff > 0.0) {
        return Err(Error::invalid("spoke efficiencies must be positive"));
    }
    let mut out = Vec::with_capacity(roi_list.len());
    for &h in roi_list {
        let counts: FourfoldCount = analysis.roi_counts(h)?;
        let per_dwell = counts.per_dwell.get(&herald).cloned().unwrap_or_default();
        let table = SettingTable::build(&analysis.dwells, &per_dwell, settings)?;
        let n = table.total_counts();
        let live = table.total_live_time_s();
        let rate = n as f64 / live;
        let r = match table.chsh() {
            Ok(r) => r,
            Err(Error::NoSignal(_)) => {
                log::warn!("roi {h} ps: a setting pair has no four-folds, point skipped");
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(SRatePoint {
            roi_ps: h,
            counts: n,
            live_time_s: live,
            measured_rate_hz: rate,
            rate_err_hz: (n as f64).sqrt() / live,
            corrected_rate_hz: rate / eff,
            s: r.s,
            standard_error: r.standard_error,
            e_values: r.e_values.map(|c| c.e),
            e_errors: r.e_values.map(|c| c.sigma),
        });
    }
    if out.is_empty() {
        return Err(Error::NoSignal(format!(
            "no ROI has four-folds at every setting for {herald}"
        )));
    }
    Ok(out)
}

/// S versus four-fold rate across `roi_list` for a tag dataset.
pub fn s_vs_rate(
    dataset: &crate::engine::dataset::TagDataset,
    roi_list: &[f64],
    herald: BellKind,
    settings: ChshSettings,
) -> Result<Vec<SRatePoint>> {
    use crate::analysis::fourfold::{analyze_dataset, AnalyzerSettings};
    validate_roi_list(roi_list)?;
    let a = analyze_dataset(
        dataset,
        &AnalyzerSettings::for_metadata(&dataset.metadata, *roi_list.last().expect("non-empty")),
    )?;
    s_vs_rate_from_analysis(
        &a,
        roi_list,
        herald,
        settings,
        dataset.metadata.spoke_efficiency,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{bell_state, joint_projection_prob, TwoQubitState};
    use crate::rng::stream;
    use rand_distr::{Distribution, Poisson};

    fn synth(v: f64, phase: f64, amp: f64, floor: f64) -> Vec<(f64, f64)> {
        (0..=8)
            .map(|i| {
                let t = i as f64 * 11.25;
                (
                    t,
                    floor + amp * (1.0 + v * (4.0 * (t - phase)).to_radians().cos()) / 2.0,
                )
            })
            .collect()
    }

    #[test]
    fn noiseless_fringes_are_recovered() {
        let f = fit_fringe(&synth(1.0, 0.0, 1000.0, 0.0)).unwrap();
        assert!((f.visibility - 1.0).abs() < 1e-6, "{f:?}");
        assert!(f.phase.abs() < 1e-4);
        let f = fit_fringe(&synth(0.8, 0.0, 1000.0, 0.0)).unwrap();
        assert!((f.visibility - 0.8).abs() < 1e-6, "{f:?}");
        let f = fit_fringe(&synth(0.5, 10.0, 400.0, 0.0)).unwrap();
        assert!(
            (f.phase - 10.0).abs() < 1e-6 && (f.visibility - 0.5).abs() < 1e-6,
            "{f:?}"
        );
    }

    #[test]
    fn fringe_preconditions() {
        let few: Vec<(f64, f64)> = synth(1.0, 0.0, 10.0, 1.0).into_iter().take(4).collect();
        assert!(matches!(fit_fringe(&few), Err(Error::InvalidArgument(_))));
        let narrow: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 5.0, 3.0)).collect();
        assert!(matches!(
            fit_fringe(&narrow),
            Err(Error::InvalidArgument(_))
        ));
        let zeros: Vec<(f64, f64)> = (0..9).map(|i| (i as f64 * 11.25, 0.0)).collect();
        assert!(matches!(fit_fringe(&zeros), Err(Error::NoSignal(_))));
    }

    #[test]
    fn noisy_fringe_visibility_scatter() {
        let clean = synth(0.9, 0.0, 2e4, 0.0);
        let mut rng = stream(11, "fringe", 0);
        let mut vs = Vec::new();
        for _ in 0..100 {
            let pts: Vec<(f64, f64)> = clean
                .iter()
                .map(|(t, y)| {
                    (
                        *t,
                        if *y > 0.0 {
                            Poisson::new(*y).unwrap().sample(&mut rng)
                        } else {
                            0.0
                        },
                    )
                })
                .collect();
            vs.push(fit_fringe(&pts).unwrap().visibility);
        }
        assert!(vs.iter().all(|v| (v - 0.9).abs() < 0.02), "{vs:?}");
    }

    #[test]
    fn correlation_basics() {
        let e = correlation_e(&JointCounts::uniform([100.0, 100.0, 0.0, 0.0])).unwrap();
        assert_eq!(e.e, 1.0);
        assert_eq!(
            correlation_e(&JointCounts::uniform([5.0; 4])).unwrap().e,
            0.0
        );
        assert!(matches!(
            correlation_e(&JointCounts::uniform([0.0; 4])),
            Err(Error::NoSignal(_))
        ));
    }

    fn exact_e(rho: &TwoQubitState, a: f64, b: f64) -> Correlation {
        let p = |x, y| joint_projection_prob(rho, x, y);
        correlation_e(&JointCounts::uniform([
            p(a, b),
            p(a + 90.0, b + 90.0),
            p(a, b + 90.0),
            p(a + 90.0, b),
        ]))
        .unwrap()
    }

    #[test]
    fn tsirelson_and_werner() {
        let psi = bell_state(BellKind::PsiMinus);
        let e = exact_e(&psi, 0.0, 22.5);
        assert!((e.e + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let run = |rho: &TwoQubitState| {
            chsh_s(
                [
                    exact_e(rho, 0.0, 22.5),
                    exact_e(rho, 0.0, 67.5),
                    exact_e(rho, 45.0, 22.5),
                    exact_e(rho, 45.0, 67.5),
                ],
                ChshSettings::default(),
            )
        };
        assert!((run(&psi).s - TSIRELSON).abs() < 1e-9);
        let werner = psi.mix(&TwoQubitState::maximally_mixed(), 0.8).unwrap();
        assert!((run(&werner).s - TSIRELSON * 0.8).abs() < 1e-9);
    }

    #[test]
    fn unphysical_s_is_flagged() {
        let c = |e| Correlation {
            e,
            sigma: 0.01,
            total_counts: 1e4,
        };
        let r = chsh_s([c(1.0), c(-1.0), c(1.0), c(1.0)], ChshSettings::default());
        assert_eq!(r.s, 4.0);
        assert!(r.unphysical);
    }

    #[test]
    fn s_is_scale_invariant() {
        let j = JointCounts::uniform([90.0, 80.0, 12.0, 9.0]);
        let k = JointCounts::uniform(j.counts.map(|x| x * 7.0));
        assert!((correlation_e(&j).unwrap().e - correlation_e(&k).unwrap().e).abs() < 1e-15);
    }

    #[test]
    fn angle_matching_is_modulo_ninety() {
        assert!(same_hwp_angle(0.0, 90.0));
        assert!(same_hwp_angle(22.5, -67.5));
        assert!(same_hwp_angle(33.75, 123.75 + 1e-9));
        assert!(!same_hwp_angle(0.0, 45.0));
    }
}
