//! Polarization-qubit algebra in the Jones formalism.
//!
//! Single-photon operators are 2×2 complex matrices in the `{H, V}` basis.
//! Photon-pair states are 4×4 density matrices in the ordered basis
//! `{HH, HV, VH, VV}`, first factor = first photon.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Numerical slack for Hermiticity and trace checks on construction.
pub const STATE_TOLERANCE: f64 = 1e-12;
/// Most negative eigenvalue tolerated in a density matrix.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
/// Unitarity slack accepted by [`apply_local`].
pub const UNITARY_TOLERANCE: f64 = 1e-9;

pub(crate) type Mat2 = [[C64; 2]; 2];
pub(crate) type Mat4 = [[C64; 4]; 4];

/// Basis index of `|ab⟩` where `a`, `b` are 0 (H) or 1 (V).
#[inline]
pub(crate) const fn idx(a: usize, b: usize) -> usize {
    2 * a + b
}

/// A 2×2 complex operator acting on one polarization qubit.
#[derive(Clone, Copy, PartialEq)]
pub struct PolarizationOperator {
    m: Mat2,
}

impl fmt::Debug for PolarizationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries()).finish()
    }
}

impl Default for PolarizationOperator {
    fn default() -> Self {
        Self::identity()
    }
}

impl PolarizationOperator {
    pub const fn identity() -> Self {
        PolarizationOperator {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    /// Builds an operator from row-major entries without any validation.
    pub fn from_entries(e: [C64; 4]) -> Self {
        PolarizationOperator {
            m: [[e[0], e[1]], [e[2], e[3]]],
        }
    }

    pub fn entries(&self) -> [C64; 4] {
        [self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]]
    }

    /// Half-waveplate with its fast axis at `theta_deg`.
    pub fn half_waveplate(theta_deg: f64) -> Result<Self> {
        hwp_operator(theta_deg)
    }

    /// SU(2) element rotating the Poincaré sphere by `angle` radians about
    /// `axis` (Stokes components S1, S2, S3; need not be normalized).
    ///
    /// A zero axis yields the identity.
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if norm == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let (nx, ny, nz) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
        let (s, c) = (angle / 2.0).sin_cos();
        // exp(-i θ/2 n·σ) with σ1 = Z (H/V), σ2 = X (diagonal), σ3 = Y (circular).
        PolarizationOperator {
            m: [
                [C64::new(c, -s * nx), C64::new(-s * nz, -s * ny)],
                [C64::new(s * nz, -s * ny), C64::new(c, s * nx)],
            ],
        }
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        PolarizationOperator {
            m: mul2(&self.m, &rhs.m),
        }
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        PolarizationOperator {
            m: [
                [m[0][0].conj(), m[1][0].conj()],
                [m[0][1].conj(), m[1][1].conj()],
            ],
        }
    }

    /// Largest entry-wise deviation of `U·U†` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = mul2(&self.m, &self.dagger().m);
        let mut worst: f64 = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((v - target).norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    /// Poincaré-sphere angle of the closest rotation, from `|tr U| = 2 cos(θ/2)`
    /// after removing the global phase. Result lies in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        // Normalize to unit determinant so the trace is phase-free.
        let phase = det.sqrt();
        let tr = (self.m[0][0] + self.m[1][1]) / phase;
        let half = (tr.norm() / 2.0).clamp(0.0, 1.0);
        2.0 * half.acos()
    }

    /// Applies the operator to a Jones vector.
    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }
}

/// The four maximally entangled two-qubit states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BellKind {
    #[serde(rename = "phi+", alias = "phi_plus")]
    PhiPlus,
    #[serde(rename = "phi-", alias = "phi_minus")]
    PhiMinus,
    #[serde(rename = "psi+", alias = "psi_plus")]
    PsiPlus,
    #[serde(rename = "psi-", alias = "psi_minus")]
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PhiPlus,
        BellKind::PhiMinus,
        BellKind::PsiPlus,
        BellKind::PsiMinus,
    ];

    /// Ψ± are the only states a splitter-plus-PBS analyzer can herald.
    pub fn is_heraldable(self) -> bool {
        matches!(self, BellKind::PsiPlus | BellKind::PsiMinus)
    }

    /// Amplitudes in the `{HH, HV, VH, VV}` basis.
    pub fn amplitudes(self) -> [C64; 4] {
        let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        match self {
            BellKind::PhiPlus => [r, ZERO, ZERO, r],
            BellKind::PhiMinus => [r, ZERO, ZERO, -r],
            BellKind::PsiPlus => [ZERO, r, r, ZERO],
            BellKind::PsiMinus => [ZERO, r, -r, ZERO],
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            BellKind::PhiPlus => "phi+",
            BellKind::PhiMinus => "phi-",
            BellKind::PsiPlus => "psi+",
            BellKind::PsiMinus => "psi-",
        }
    }
}

impl fmt::Display for BellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for BellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phi+" | "phi_plus" | "phiplus" => Ok(BellKind::PhiPlus),
            "phi-" | "phi_minus" | "phiminus" => Ok(BellKind::PhiMinus),
            "psi+" | "psi_plus" | "psiplus" => Ok(BellKind::PsiPlus),
            "psi-" | "psi_minus" | "psiminus" => Ok(BellKind::PsiMinus),
            other => Err(Error::invalid(format!("unknown Bell state `{other}`"))),
        }
    }
}

/// Density matrix of a photon pair's joint polarization.
///
/// Validated once on construction; operations that preserve validity
/// analytically (unitary conjugation, normalized conditioning) skip the check.
#[derive(Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    m: Mat4,
}

impl fmt::Debug for TwoQubitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut l = f.debug_list();
        for row in &self.m {
            l.entry(row);
        }
        l.finish()
    }
}

impl TwoQubitState {
    /// Builds a state from 16 row-major entries, checking Hermiticity,
    /// unit trace and positivity.
    pub fn new(entries: [C64; 16]) -> Result<Self> {
        let mut m = [[ZERO; 4]; 4];
        for (k, e) in entries.iter().enumerate() {
            m[k / 4][k % 4] = *e;
        }
        let state = TwoQubitState { m };
        state.validate()?;
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(m: Mat4) -> Self {
        TwoQubitState { m }
    }

    /// `|ψ⟩⟨ψ|` for a (normalized) amplitude vector.
    pub fn pure(amplitudes: [C64; 4]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid(
                "pure state needs a non-zero amplitude vector",
            ));
        }
        let scale = 1.0 / norm.sqrt();
        let a: Vec<C64> = amplitudes.iter().map(|x| x * scale).collect();
        let mut m = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = a[i] * a[j].conj();
            }
        }
        Ok(TwoQubitState { m })
    }

    pub fn maximally_mixed() -> Self {
        let mut m = [[ZERO; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = C64::new(0.25, 0.0);
        }
        TwoQubitState { m }
    }

    /// Convex combination `w·self + (1−w)·other`.
    pub fn mix(&self, other: &Self, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("mixing weight {w} outside [0, 1]")));
        }
        let mut m = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = self.m[i][j] * w + other.m[i][j] * (1.0 - w);
            }
        }
        Ok(TwoQubitState { m })
    }

    pub fn entries(&self) -> [C64; 16] {
        let mut out = [ZERO; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[4 * i + j] = self.m[i][j];
            }
        }
        out
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.m[row][col]
    }

    pub(crate) fn matrix(&self) -> &Mat4 {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.m[i][i].re).sum()
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.overlap(self)
    }

    /// `tr(ρσ)`, real for Hermitian arguments.
    pub fn overlap(&self, other: &Self) -> f64 {
        let mut acc = ZERO;
        for i in 0..4 {
            for k in 0..4 {
                acc += self.m[i][k] * other.m[k][i];
            }
        }
        acc.re
    }

    /// Largest entry-wise distance to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            for j in 0..4 {
                if !(self.m[i][j].re.is_finite() && self.m[i][j].im.is_finite()) {
                    return Err(Error::invalid("density matrix has non-finite entries"));
                }
                if (self.m[i][j] - self.m[j][i].conj()).norm() > STATE_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "density matrix not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        if !is_positive_semidefinite(&self.m, EIGEN_TOLERANCE) {
            return Err(Error::invalid("density matrix has a negative eigenvalue"));
        }
        Ok(())
    }

    /// Reduced state of the first photon.
    pub fn reduced_first(&self) -> Mat2 {
        let mut r = [[ZERO; 2]; 2];
        for a in 0..2 {
            for a2 in 0..2 {
                for b in 0..2 {
                    r[a][a2] += self.m[idx(a, b)][idx(a2, b)];
                }
            }
        }
        r
    }

    /// Reduced state of the second photon.
    pub fn reduced_second(&self) -> Mat2 {
        let mut r = [[ZERO; 2]; 2];
        for b in 0..2 {
            for b2 in 0..2 {
                for a in 0..2 {
                    r[b][b2] += self.m[idx(a, b)][idx(a, b2)];
                }
            }
        }
        r
    }

    /// Population `⟨ab|ρ|ab⟩` with `a`, `b` ∈ {0 = H, 1 = V}.
    pub fn population(&self, a: usize, b: usize) -> f64 {
        self.m[idx(a, b)][idx(a, b)].re
    }
}

/// Pure-state density matrix of the named Bell state.
pub fn bell_state(kind: BellKind) -> TwoQubitState {
    TwoQubitState::pure(kind.amplitudes()).expect("Bell amplitudes are normalized")
}

/// Half-waveplate Jones matrix `[[cos2θ, sin2θ], [sin2θ, −cos2θ]]`.
pub fn hwp_operator(theta_deg: f64) -> Result<PolarizationOperator> {
    if !theta_deg.is_finite() {
        return Err(Error::invalid(format!(
            "waveplate angle {theta_deg} is not finite"
        )));
    }
    let (s, c) = (2.0 * theta_deg.to_radians()).sin_cos();
    Ok(PolarizationOperator {
        m: [
            [C64::new(c, 0.0), C64::new(s, 0.0)],
            [C64::new(s, 0.0), C64::new(-c, 0.0)],
        ],
    })
}

/// `(uA ⊗ uB) ρ (uA ⊗ uB)†`.
pub fn apply_local(
    u_a: &PolarizationOperator,
    u_b: &PolarizationOperator,
    rho: &TwoQubitState,
) -> Result<TwoQubitState> {
    for (name, u) in [("first", u_a), ("second", u_b)] {
        let err = u.unitarity_error();
        if err > UNITARY_TOLERANCE {
            return Err(Error::invalid(format!(
                "{name} operator is not unitary (deviation {err:.3e})"
            )));
        }
    }
    Ok(apply_local_unchecked(u_a, u_b, rho))
}

pub(crate) fn apply_local_unchecked(
    u_a: &PolarizationOperator,
    u_b: &PolarizationOperator,
    rho: &TwoQubitState,
) -> TwoQubitState {
    let k = kron(&u_a.m, &u_b.m);
    let kd = dagger4(&k);
    TwoQubitState {
        m: mul4(&mul4(&k, &rho.m), &kd),
    }
}

/// Linear analyzer state `cosγ|H⟩ + sinγ|V⟩`.
pub fn analyzer(gamma_deg: f64) -> [C64; 2] {
    let (s, c) = gamma_deg.to_radians().sin_cos();
    [C64::new(c, 0.0), C64::new(s, 0.0)]
}

/// Probability that both photons pass linear polarizers at analysis angles
/// `alpha_deg` (first photon) and `beta_deg` (second photon).
pub fn joint_projection_prob(rho: &TwoQubitState, alpha_deg: f64, beta_deg: f64) -> f64 {
    let a = analyzer(alpha_deg);
    let b = analyzer(beta_deg);
    product_projection_prob(rho, a, b)
}

/// `⟨a⊗b|ρ|a⊗b⟩` for arbitrary single-photon vectors.
pub fn product_projection_prob(rho: &TwoQubitState, a: [C64; 2], b: [C64; 2]) -> f64 {
    let v = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += v[i].conj() * rho.m[i][j] * v[j];
        }
    }
    acc.re.clamp(0.0, 1.0)
}

pub(crate) fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub(crate) fn mul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            if aik == ZERO {
                continue;
            }
            for j in 0..4 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub(crate) fn dagger4(a: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

pub(crate) fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[idx(i, k)][idx(j, l)] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Cholesky of `m + tol·I`; succeeds iff every eigenvalue of `m` is ≥ −tol
/// (up to rounding).
fn is_positive_semidefinite(m: &Mat4, tol: f64) -> bool {
    let mut a = *m;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += C64::new(tol, 0.0);
    }
    let mut l = [[ZERO; 4]; 4];
    for j in 0..4 {
        let mut d = a[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        if d < 0.0 {
            return false;
        }
        let dj = d.sqrt();
        l[j][j] = C64::new(dj, 0.0);
        for i in (j + 1)..4 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = if dj > 0.0 { s / dj } else { ZERO };
            if dj == 0.0 && s.norm() > 1e-9 {
                return false;
            }
        }
    }
    true
}
