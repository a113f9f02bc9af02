//! Linear-optics Bell-state measurement: a 50:50 splitter followed by one
//! polarizing beamsplitter per output port, four detectors.
//!
//! Partial distinguishability of the two input photons is a scalar mixture:
//! with probability `overlap` they interfere, otherwise they route
//! independently.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{idx, BellKind, TwoQubitState, C64};

/// One of the four hub detectors, `Port{1,2}` × `{H,V}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BsmPort {
    P1H,
    P1V,
    P2H,
    P2V,
}

impl BsmPort {
    pub const ALL: [BsmPort; 4] = [BsmPort::P1H, BsmPort::P1V, BsmPort::P2H, BsmPort::P2V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> BsmPort {
        Self::ALL[i & 3]
    }

    /// Detector behind splitter output `port` (0 or 1) for polarization `pol`
    /// (0 = H, 1 = V).
    pub fn from_port_pol(port: usize, pol: usize) -> BsmPort {
        Self::from_index(2 * (port & 1) + (pol & 1))
    }

    pub fn port(self) -> usize {
        self.index() >> 1
    }

    pub fn pol(self) -> usize {
        self.index() & 1
    }

    pub fn name(self) -> &'static str {
        match self {
            BsmPort::P1H => "Port1-H",
            BsmPort::P1V => "Port1-V",
            BsmPort::P2H => "Port2-H",
            BsmPort::P2V => "Port2-V",
        }
    }
}

/// Set of hub detectors that fired.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ClickPattern(u8);

impl ClickPattern {
    pub const EMPTY: ClickPattern = ClickPattern(0);

    pub fn new(ports: &[BsmPort]) -> Self {
        ports.iter().fold(Self::EMPTY, |p, &d| p.with(d))
    }

    pub fn from_bits(bits: u8) -> Self {
        ClickPattern(bits & 0xF)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn with(self, d: BsmPort) -> Self {
        ClickPattern(self.0 | (1 << d.index()))
    }

    pub fn contains(self, d: BsmPort) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = BsmPort> {
        BsmPort::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

impl fmt::Debug for ClickPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.iter().map(BsmPort::name))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsmParams {
    pub excess_loss_db: f64,
    /// Squared mode overlap at zero arrival-time difference.
    pub hom_visibility: f64,
    /// Decay scale of the overlap with arrival-time difference, ps.
    pub overlap_width_ps: f64,
}

impl BsmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.excess_loss_db.is_finite() && self.excess_loss_db >= 0.0) {
            return Err(Error::config("excess_loss_db", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.hom_visibility) {
            return Err(Error::config("hom_visibility", "must lie in [0, 1]"));
        }
        if !(self.overlap_width_ps.is_finite() && self.overlap_width_ps > 0.0) {
            return Err(Error::config("overlap_width_ps", "must be > 0"));
        }
        Ok(())
    }

    pub fn transmission(&self) -> f64 {
        crate::fiber::db_to_transmission(self.excess_loss_db)
    }
}

/// Herald map of the splitter-plus-PBS analyzer.
pub fn herald_from_clicks(pattern: ClickPattern) -> Option<BellKind> {
    use BsmPort::*;
    if pattern == ClickPattern::new(&[P1H, P1V]) || pattern == ClickPattern::new(&[P2H, P2V]) {
        Some(BellKind::PsiPlus)
    } else if pattern == ClickPattern::new(&[P1H, P2V]) || pattern == ClickPattern::new(&[P1V, P2H])
    {
        Some(BellKind::PsiMinus)
    } else {
        None
    }
}

/// Mode overlap of two photons arriving `dt` ps apart.
pub fn pair_overlap(dt: f64, params: &BsmParams) -> f64 {
    params.hom_visibility * (-dt.abs() / params.overlap_width_ps).exp()
}

const PSI_MINUS_AMP: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_1_SQRT_2,
    -std::f64::consts::FRAC_1_SQRT_2,
    0.0,
];
const PSI_PLUS_AMP: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
    0.0,
];

fn bell_amp(kind: BellKind) -> [f64; 4] {
    match kind {
        BellKind::PsiMinus => PSI_MINUS_AMP,
        BellKind::PsiPlus => PSI_PLUS_AMP,
        _ => unreachable!("only Psi states are heraldable"),
    }
}

/// `⟨k|σ|k⟩` for a real amplitude vector `k`.
fn expect_real(sigma: &[[C64; 4]; 4], k: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        if k[i] == 0.0 {
            continue;
        }
        for j in 0..4 {
            acc += k[i] * k[j] * sigma[i][j].re;
        }
    }
    acc
}

/// Exact lossless probabilities of every click pattern for two photons
/// entering the two splitter inputs with joint polarization `joint`
/// (first factor = photon at input 1).
///
/// Patterns with one detector correspond to both photons at that detector.
/// The returned probabilities sum to 1.
pub fn two_photon_click_probabilities(
    joint: &TwoQubitState,
    overlap: f64,
) -> Vec<(ClickPattern, f64)> {
    let v = overlap.clamp(0.0, 1.0);
    let m = joint.matrix();
    let mut probs = [[0.0f64; 4]; 4]; // [det_a][det_b], upper-triangular use

    // Interfering part: Ψ∓ heralds, bunching for HH and VV.
    let p_minus = expect_real(m, &PSI_MINUS_AMP);
    let p_plus = expect_real(m, &PSI_PLUS_AMP);
    let p_hh = m[idx(0, 0)][idx(0, 0)].re;
    let p_vv = m[idx(1, 1)][idx(1, 1)].re;
    use BsmPort::*;
    let mut add = |a: BsmPort, b: BsmPort, p: f64| {
        let (i, j) = if a <= b {
            (a.index(), b.index())
        } else {
            (b.index(), a.index())
        };
        probs[i][j] += p;
    };
    add(P1H, P2V, v * p_minus / 2.0);
    add(P1V, P2H, v * p_minus / 2.0);
    add(P1H, P1V, v * p_plus / 2.0);
    add(P2H, P2V, v * p_plus / 2.0);
    add(P1H, P1H, v * p_hh / 2.0);
    add(P2H, P2H, v * p_hh / 2.0);
    add(P1V, P1V, v * p_vv / 2.0);
    add(P2V, P2V, v * p_vv / 2.0);

    // Distinguishable part: independent routing, H/V from the populations.
    for x in 0..2 {
        for y in 0..2 {
            let p = (1.0 - v) * m[idx(x, y)][idx(x, y)].re;
            for pa in 0..2 {
                for pb in 0..2 {
                    add(
                        BsmPort::from_port_pol(pa, x),
                        BsmPort::from_port_pol(pb, y),
                        p / 4.0,
                    );
                }
            }
        }
    }

    let mut out = Vec::with_capacity(10);
    for i in 0..4 {
        for j in i..4 {
            let pat = ClickPattern::new(&[BsmPort::from_index(i), BsmPort::from_index(j)]);
            out.push((pat, probs[i][j].max(0.0)));
        }
    }
    out
}

/// Click-pattern probabilities including per-photon excess loss before the
/// splitter. Outcomes where only one photon survives route it uniformly by
/// its marginal polarization; the empty pattern carries the double loss.
pub fn click_probabilities_with_loss(
    joint: &TwoQubitState,
    overlap: f64,
    params: &BsmParams,
) -> Vec<(ClickPattern, f64)> {
    let t = params.transmission();
    let mut acc: std::collections::BTreeMap<ClickPattern, f64> = Default::default();
    for (p, w) in two_photon_click_probabilities(joint, overlap) {
        *acc.entry(p).or_default() += t * t * w;
    }
    let ra = joint.reduced_first();
    let rb = joint.reduced_second();
    for (r, _) in [(ra, 0), (rb, 1)] {
        for pol in 0..2 {
            for port in 0..2 {
                let pat = ClickPattern::new(&[BsmPort::from_port_pol(port, pol)]);
                *acc.entry(pat).or_default() += t * (1.0 - t) * r[pol][pol].re / 2.0;
            }
        }
    }
    *acc.entry(ClickPattern::EMPTY).or_default() += (1.0 - t) * (1.0 - t);
    acc.into_iter().collect()
}

/// Samples the click pattern of one photon pair at the analyzer.
pub fn two_photon_click_distribution<R: Rng + ?Sized>(
    joint: &TwoQubitState,
    overlap: f64,
    rng: &mut R,
) -> ClickPattern {
    let table = two_photon_click_probabilities(joint, overlap);
    let u: f64 = rng.random::<f64>() * table.iter().map(|(_, p)| p).sum::<f64>();
    let mut c = 0.0;
    for (pat, p) in &table {
        c += p;
        if u < c {
            return *pat;
        }
    }
    table.last().map(|(p, _)| *p).unwrap_or_default()
}

/// Partial matrix element `⟨x|ρ|x⟩` over the idler (second factor):
/// an unnormalized 2×2 operator on the signal.
fn idler_slice(rho: &TwoQubitState, x: usize) -> [[C64; 2]; 2] {
    let m = rho.matrix();
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for s in 0..2 {
        for s2 in 0..2 {
            out[s][s2] = m[idx(s, x)][idx(s2, x)];
        }
    }
    out
}

/// Unnormalized heralded signal state; its trace is the herald probability
/// given that both idlers reach the splitter.
fn heralded_numerator(
    state_a: &TwoQubitState,
    state_b: &TwoQubitState,
    herald: BellKind,
    overlap: f64,
) -> [[C64; 4]; 4] {
    let v = overlap.clamp(0.0, 1.0);
    let k = bell_amp(herald);
    let a = state_a.matrix();
    let b = state_b.matrix();
    let mut n = [[C64::new(0.0, 0.0); 4]; 4];
    // Interfering branch: project the idler pair on |k⟩.
    for s1 in 0..2 {
        for s2 in 0..2 {
            for t1 in 0..2 {
                for t2 in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for x in 0..2 {
                        for y in 0..2 {
                            let kxy = k[idx(x, y)];
                            if kxy == 0.0 {
                                continue;
                            }
                            for x2 in 0..2 {
                                for y2 in 0..2 {
                                    let k2 = k[idx(x2, y2)];
                                    if k2 == 0.0 {
                                        continue;
                                    }
                                    acc += a[idx(s1, x)][idx(t1, x2)]
                                        * b[idx(s2, y)][idx(t2, y2)]
                                        * (kxy * k2);
                                }
                            }
                        }
                    }
                    n[idx(s1, s2)][idx(t1, t2)] += acc * v;
                }
            }
        }
    }
    // Distinguishable branch: idlers found in opposite H/V populations.
    let (ah, av) = (idler_slice(state_a, 0), idler_slice(state_a, 1));
    let (bh, bv) = (idler_slice(state_b, 0), idler_slice(state_b, 1));
    for s1 in 0..2 {
        for s2 in 0..2 {
            for t1 in 0..2 {
                for t2 in 0..2 {
                    let d = ah[s1][t1] * bv[s2][t2] + av[s1][t1] * bh[s2][t2];
                    n[idx(s1, s2)][idx(t1, t2)] += d * (0.5 * (1.0 - v));
                }
            }
        }
    }
    n
}

/// Probability that a pair of idlers reaching the splitter yields the
/// `herald` click patterns.
pub fn herald_probability(
    state_a: &TwoQubitState,
    state_b: &TwoQubitState,
    herald: BellKind,
    overlap: f64,
) -> Result<f64> {
    if !herald.is_heraldable() {
        return Err(Error::invalid(format!(
            "{herald} cannot be heralded by this analyzer"
        )));
    }
    let n = heralded_numerator(state_a, state_b, herald, overlap);
    Ok((0..4).map(|i| n[i][i].re).sum())
}

/// State of the two signal photons (S1, S2) conditioned on `herald`.
///
/// `state_a`, `state_b` are the pair states of each source in
/// (signal, idler) order, including any rotations already applied.
pub fn heralded_state(
    state_a: &TwoQubitState,
    state_b: &TwoQubitState,
    herald: BellKind,
    overlap: f64,
) -> Result<TwoQubitState> {
    if !herald.is_heraldable() {
        return Err(Error::invalid(format!(
            "{herald} cannot be heralded by this analyzer"
        )));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} outside [0, 1]")));
    }
    let mut n = heralded_numerator(state_a, state_b, herald, overlap);
    let tr: f64 = (0..4).map(|i| n[i][i].re).sum();
    if tr <= 1e-300 {
        return Err(Error::NoSignal(format!(
            "{herald} herald has zero probability"
        )));
    }
    for row in n.iter_mut() {
        for e in row.iter_mut() {
            *e /= tr;
        }
    }
    // Symmetrize away rounding so the result passes the Hermiticity check.
    for i in 0..4 {
        n[i][i].im = 0.0;
        for j in (i + 1)..4 {
            let avg = (n[i][j] + n[j][i].conj()) * 0.5;
            n[i][j] = avg;
            n[j][i] = avg.conj();
        }
    }
    Ok(TwoQubitState::from_matrix_unchecked(n))
}

/// Idler Bell class produced by the interfering branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IdlerClass {
    PsiMinus,
    PsiPlus,
    BunchH,
    BunchV,
}

impl IdlerClass {
    const ALL: [IdlerClass; 4] = [
        IdlerClass::PsiMinus,
        IdlerClass::PsiPlus,
        IdlerClass::BunchH,
        IdlerClass::BunchV,
    ];

    /// Detectors for the two idlers, in arbitrary photon order.
    pub(crate) fn detectors<R: Rng + ?Sized>(self, rng: &mut R) -> (BsmPort, BsmPort) {
        use BsmPort::*;
        let bits: u32 = rng.random();
        let (a, b) = match (self, bits & 1 == 0) {
            (IdlerClass::PsiMinus, true) => (P1H, P2V),
            (IdlerClass::PsiMinus, false) => (P1V, P2H),
            (IdlerClass::PsiPlus, true) => (P1H, P1V),
            (IdlerClass::PsiPlus, false) => (P2H, P2V),
            (IdlerClass::BunchH, true) => (P1H, P1H),
            (IdlerClass::BunchH, false) => (P2H, P2H),
            (IdlerClass::BunchV, true) => (P1V, P1V),
            (IdlerClass::BunchV, false) => (P2V, P2V),
        };
        if bits & 2 == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Cumulative distribution over a small discrete outcome set.
#[derive(Debug, Clone)]
pub(crate) struct Cdf<const N: usize> {
    c: [f64; N],
}

impl<const N: usize> Cdf<N> {
    pub(crate) fn new(p: [f64; N]) -> Self {
        let total: f64 = p.iter().map(|x| x.max(0.0)).sum();
        let mut c = [0.0; N];
        let mut acc = 0.0;
        for i in 0..N {
            acc += p[i].max(0.0) / total.max(f64::MIN_POSITIVE);
            c[i] = acc;
        }
        c[N - 1] = f64::INFINITY;
        Cdf { c }
    }

    #[inline]
    pub(crate) fn sample(&self, u: f64) -> usize {
        let mut i = 0;
        while u >= self.c[i] {
            i += 1;
        }
        i
    }
}

/// Joint outcome tables for two pairs whose idlers meet at the splitter.
///
/// States are in (signal, idler) order with the signal already rotated by its
/// analysis waveplate and the idler by its fiber. Signal outcome 0 means the
/// photon is transmitted by the analysis polarizer.
#[derive(Debug, Clone)]
pub(crate) struct SwapTable {
    /// Over `(a, b, class)` flattened as `8a + 4b + class`.
    pub(crate) interfering: Cdf<16>,
    /// Over `(a, x)` populations of each pair, `2a + x`.
    pub(crate) pop_a: Cdf<4>,
    pub(crate) pop_b: Cdf<4>,
}

impl SwapTable {
    pub(crate) fn new(rho_a: &TwoQubitState, rho_b: &TwoQubitState) -> Self {
        let a = rho_a.matrix();
        let b = rho_b.matrix();
        let mut p = [0.0; 16];
        for sa in 0..2 {
            for sb in 0..2 {
                // Idler-pair operator conditioned on signal outcomes (sa, sb).
                let mut sigma = [[C64::new(0.0, 0.0); 4]; 4];
                for x in 0..2 {
                    for y in 0..2 {
                        for x2 in 0..2 {
                            for y2 in 0..2 {
                                sigma[idx(x, y)][idx(x2, y2)] =
                                    a[idx(sa, x)][idx(sa, x2)] * b[idx(sb, y)][idx(sb, y2)];
                            }
                        }
                    }
                }
                let base = 8 * sa + 4 * sb;
                p[base] = expect_real(&sigma, &PSI_MINUS_AMP);
                p[base + 1] = expect_real(&sigma, &PSI_PLUS_AMP);
                p[base + 2] = sigma[0][0].re;
                p[base + 3] = sigma[3][3].re;
            }
        }
        let pop = |m: &[[C64; 4]; 4]| [m[0][0].re, m[1][1].re, m[2][2].re, m[3][3].re];
        SwapTable {
            interfering: Cdf::new(p),
            pop_a: Cdf::new(pop(a)),
            pop_b: Cdf::new(pop(b)),
        }
    }

    pub(crate) fn class(i: usize) -> (usize, usize, IdlerClass) {
        (i >> 3, (i >> 2) & 1, IdlerClass::ALL[i & 3])
    }
}
