//! Two-qubit states and the entanglement metrics reported for them.
//!
//! Amplitudes are ordered `|00⟩, |01⟩, |10⟩, |11⟩` (index `2·A + B`).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Hermiticity, trace and positivity tolerance for density matrices.
pub const DENSITY_TOL: f64 = 1e-10;

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pure state of the two dual-rail qubits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoQubitKet(Vector4<C64>);

impl TwoQubitKet {
    /// Normalises `amplitudes`; fails if the vector has (numerically) zero norm.
    pub fn new(amplitudes: [C64; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::degenerate("two-qubit state has zero norm"));
        }
        Ok(Self(v.unscale(norm)))
    }

    pub fn from_real(amplitudes: [f64; 4]) -> Result<Self> {
        Self::new(amplitudes.map(|a| c(a, 0.0)))
    }

    /// Computational basis state `|index⟩` with `index = 2·A + B`.
    pub fn basis(index: usize) -> Self {
        assert!(index < 4, "basis index out of range");
        let mut v = Vector4::zeros();
        v[index] = c(1.0, 0.0);
        Self(v)
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn vector(&self) -> &Vector4<C64> {
        &self.0
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &TwoQubitKet) -> C64 {
        self.0.dotc(&other.0)
    }

    /// `|⟨self|other⟩|²`, which ignores global phase.
    pub fn overlap(&self, other: &TwoQubitKet) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn projector(&self) -> Mat4 {
        self.0 * self.0.adjoint()
    }
}

/// The four maximally entangled two-qubit states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellLabel {
    #[serde(rename = "phi+")]
    PhiPlus,
    #[serde(rename = "phi-")]
    PhiMinus,
    #[serde(rename = "psi+")]
    PsiPlus,
    #[serde(rename = "psi-")]
    PsiMinus,
}

impl BellLabel {
    pub const ALL: [BellLabel; 4] = [
        BellLabel::PhiPlus,
        BellLabel::PhiMinus,
        BellLabel::PsiPlus,
        BellLabel::PsiMinus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BellLabel::PhiPlus => "phi+",
            BellLabel::PhiMinus => "phi-",
            BellLabel::PsiPlus => "psi+",
            BellLabel::PsiMinus => "psi-",
        }
    }
}

impl fmt::Display for BellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BellLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phi+" | "phiplus" | "Φ+" => Ok(BellLabel::PhiPlus),
            "phi-" | "phiminus" | "Φ-" => Ok(BellLabel::PhiMinus),
            "psi+" | "psiplus" | "Ψ+" => Ok(BellLabel::PsiPlus),
            "psi-" | "psiminus" | "Ψ-" => Ok(BellLabel::PsiMinus),
            other => Err(Error::validation(format!("unknown Bell state '{other}'"))),
        }
    }
}

pub fn bell_state(label: BellLabel) -> TwoQubitKet {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let amps = match label {
        BellLabel::PhiPlus => [h, 0.0, 0.0, h],
        BellLabel::PhiMinus => [h, 0.0, 0.0, -h],
        BellLabel::PsiPlus => [0.0, h, h, 0.0],
        BellLabel::PsiMinus => [0.0, h, -h, 0.0],
    };
    TwoQubitKet(Vector4::from(amps.map(|a| c(a, 0.0))))
}

/// Single-qubit pure state, `α|0⟩ + β|1⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleQubitState(Vector2<C64>);

impl SingleQubitState {
    pub fn new(alpha: C64, beta: C64) -> Result<Self> {
        let v = Vector2::new(alpha, beta);
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::degenerate("single-qubit state has zero norm"));
        }
        Ok(Self(v.unscale(norm)))
    }

    pub(crate) fn from_unit(v: Vector2<C64>) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9);
        Self(v)
    }

    pub fn vector(&self) -> &Vector2<C64> {
        &self.0
    }

    pub fn inner(&self, other: &SingleQubitState) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn projector(&self) -> Mat2 {
        self.0 * self.0.adjoint()
    }

    /// `|self⟩ ⊗ |other⟩` in the `2·A + B` ordering.
    pub fn tensor(&self, other: &SingleQubitState) -> TwoQubitKet {
        let a = &self.0;
        let b = &other.0;
        TwoQubitKet(Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]))
    }
}

/// `|0⟩, |1⟩, |+⟩, |−⟩, |i⟩, |−i⟩`.
pub fn pauli_eigenstates() -> [SingleQubitState; 6] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = |a: C64, b: C64| SingleQubitState(Vector2::new(a, b));
    [
        s(c(1.0, 0.0), c(0.0, 0.0)),
        s(c(0.0, 0.0), c(1.0, 0.0)),
        s(c(h, 0.0), c(h, 0.0)),
        s(c(h, 0.0), c(-h, 0.0)),
        s(c(h, 0.0), c(0.0, h)),
        s(c(h, 0.0), c(0.0, -h)),
    ]
}

pub fn pauli_x() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub fn pauli_y() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub fn pauli_z() -> Mat2 {
    Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

/// Kronecker product in the `2·A + B` ordering.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

fn max_hermitian_defect<const N: usize>(
    m: &nalgebra::SMatrix<C64, N, N>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..N {
        for j in 0..N {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn hermitian_part<const N: usize>(m: &nalgebra::SMatrix<C64, N, N>) -> nalgebra::SMatrix<C64, N, N> {
    (m + m.adjoint()).scale(0.5)
}

fn check_density<const N: usize>(
    m: &nalgebra::SMatrix<C64, N, N>,
    min_eigenvalue: impl FnOnce(&nalgebra::SMatrix<C64, N, N>) -> f64,
) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::validation("density matrix has non-finite entries"));
    }
    let defect = max_hermitian_defect(m);
    if defect > DENSITY_TOL {
        return Err(Error::validation(format!(
            "density matrix is not Hermitian (max defect {defect:.3e})"
        )));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
        return Err(Error::validation(format!(
            "density matrix trace is {:.12} + {:.3e}i, expected 1",
            tr.re, tr.im
        )));
    }
    let min_eig = min_eigenvalue(&hermitian_part(m));
    if min_eig < -DENSITY_TOL {
        return Err(Error::validation(format!(
            "density matrix is not positive semidefinite (eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Validated two-qubit density matrix: Hermitian, PSD and unit trace, each
/// within [`DENSITY_TOL`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Mat4);

impl DensityMatrix {
    pub fn new(m: Mat4) -> Result<Self> {
        check_density(&m, |h| h.symmetric_eigenvalues().min())?;
        Ok(Self(hermitian_part(&m)))
    }

    /// Builds a density matrix from any Hermitian matrix by clipping negative
    /// eigenvalues to zero and renormalising the trace.
    pub fn nearest_physical(m: &Mat4) -> Result<Self> {
        let eig = hermitian_part(m).symmetric_eigen();
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let total: f64 = clipped.iter().sum();
        if !(total > 1e-300) || !total.is_finite() {
            return Err(Error::degenerate("matrix has no positive spectrum"));
        }
        let d = Mat4::from_diagonal(&clipped.map(|l| c(l / total, 0.0)));
        let v = &eig.eigenvectors;
        Self::new(v * d * v.adjoint())
    }

    pub fn from_ket(psi: &TwoQubitKet) -> Self {
        Self(psi.projector())
    }

    pub fn maximally_mixed() -> Self {
        Self(Mat4::identity().scale(0.25))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    /// `Tr(ρ·Π)` for a Hermitian operator `Π`.
    pub fn expectation(&self, op: &Mat4) -> f64 {
        (self.0 * op).trace().re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let mut e: Vec<f64> = self.0.symmetric_eigenvalues().iter().cloned().collect();
        e.sort_by(|a, b| a.total_cmp(b));
        [e[0], e[1], e[2], e[3]]
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }
}

/// Validated single-qubit density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitDensity(Mat2);

impl QubitDensity {
    pub fn new(m: Mat2) -> Result<Self> {
        check_density(&m, |h| h.symmetric_eigenvalues().min())?;
        Ok(Self(hermitian_part(&m)))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = self.0.symmetric_eigenvalues();
        if e[0] <= e[1] {
            [e[0], e[1]]
        } else {
            [e[1], e[0]]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Qubit {
    A,
    B,
}

/// `⟨target|ρ|target⟩`.
///
/// Both arguments are validated at construction, so this cannot fail.
pub fn fidelity(rho: &DensityMatrix, target: &TwoQubitKet) -> f64 {
    let v = target.vector();
    let f = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
    f.clamp(0.0, 1.0)
}

/// Wootters concurrence.
///
/// Uses the Hermitian form `√(√ρ ρ̃ √ρ)`, whose eigenvalues equal the square
/// roots of the eigenvalues of `ρ ρ̃`.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let yy = kron(&pauli_y(), &pauli_y());
    let m = rho.matrix();
    let spin_flipped = yy * m.conjugate() * yy;

    let eig = m.symmetric_eigen();
    let root = eig.eigenvalues.map(|l| c(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    let sqrt_rho = v * Mat4::from_diagonal(&root) * v.adjoint();
    let h = sqrt_rho * spin_flipped * sqrt_rho;

    let mut lambdas: Vec<f64> = hermitian_part(&h)
        .symmetric_eigenvalues()
        .iter()
        .map(|&mu| mu.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0)
}

pub fn partial_trace(rho: &DensityMatrix, keep: Qubit) -> QubitDensity {
    let m = rho.matrix();
    let reduced = Mat2::from_fn(|i, j| match keep {
        Qubit::A => m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)],
        Qubit::B => m[(i, j)] + m[(2 + i, 2 + j)],
    });
    QubitDensity(hermitian_part(&reduced))
}

/// `−Σ λ ln λ` in nats, with `0·ln 0 = 0`.
pub fn von_neumann_entropy(rho: &QubitDensity) -> f64 {
    rho.eigenvalues()
        .iter()
        .map(|&l| l.max(0.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum::<f64>()
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

    #[test]
    fn bell_amplitudes() {
        let phi = bell_state(BellLabel::PhiPlus).amplitudes();
        assert_abs_diff_eq!(phi[0].re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(phi[3].re, FRAC_1_SQRT_2, epsilon = 1e-15);
        let psi = bell_state(BellLabel::PsiMinus).amplitudes();
        assert_abs_diff_eq!(psi[1].re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(psi[2].re, -FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_eq!(psi[0], c(0.0, 0.0));
    }

    #[test]
    fn bell_states_are_orthonormal() {
        for a in BellLabel::ALL {
            for b in BellLabel::ALL {
                let rho = DensityMatrix::from_ket(&bell_state(a));
                let f = fidelity(&rho, &bell_state(b));
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(f, expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn pauli_eigenstates_are_mutually_unbiased() {
        let s = pauli_eigenstates();
        assert_abs_diff_eq!(s[2].inner(&s[0]).norm_sqr(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[4].inner(&s[5]).norm(), 0.0, epsilon = 1e-15);
        for i in 0..6 {
            for j in 0..6 {
                let o = s[i].inner(&s[j]).norm_sqr();
                if i / 2 == j / 2 {
                    assert_abs_diff_eq!(o, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-15);
                } else {
                    assert_abs_diff_eq!(o, 0.5, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn pauli_eigenstates_match_operators() {
        let s = pauli_eigenstates();
        let ops = [pauli_z(), pauli_x(), pauli_y()];
        for (k, op) in ops.iter().enumerate() {
            for (sign, state) in [(1.0, &s[2 * k]), (-1.0, &s[2 * k + 1])] {
                let v = state.vector();
                let diff = op * v - v.scale(sign);
                assert!(diff.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn fidelity_of_maximally_mixed_is_quarter() {
        let rho = DensityMatrix::maximally_mixed();
        for b in BellLabel::ALL {
            assert_abs_diff_eq!(fidelity(&rho, &bell_state(b)), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn concurrence_limits() {
        for b in BellLabel::ALL {
            let rho = DensityMatrix::from_ket(&bell_state(b));
            let cc = concurrence(&rho);
            assert_abs_diff_eq!(cc, 1.0, epsilon = 1e-9);
            assert!(cc > FRAC_1_SQRT_2);
        }
        let rho = DensityMatrix::from_ket(&TwoQubitKet::basis(0));
        assert_abs_diff_eq!(concurrence(&rho), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(concurrence(&DensityMatrix::maximally_mixed()), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn werner_concurrence_closed_form() {
        // p|Ψ−⟩⟨Ψ−| + (1−p) I/4 has C = max(0, (3p − 1)/2).
        for p in [0.2, 0.5, 0.8, 0.95] {
            let m = bell_state(BellLabel::PsiMinus).projector().scale(p)
                + Mat4::identity().scale((1.0 - p) / 4.0);
            let rho = DensityMatrix::new(m).unwrap();
            let expected = ((3.0 * p - 1.0) / 2.0).max(0.0);
            assert_abs_diff_eq!(concurrence(&rho), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn partial_trace_cases() {
        let rho = DensityMatrix::from_ket(&bell_state(BellLabel::PhiPlus));
        for q in [Qubit::A, Qubit::B] {
            let r = partial_trace(&rho, q);
            let half = Mat2::identity().scale(0.5);
            assert!((r.matrix() - half).norm() < 1e-15);
            assert_abs_diff_eq!(von_neumann_entropy(&r), LN_2, epsilon = 1e-12);
        }
        let rho = DensityMatrix::from_ket(&TwoQubitKet::basis(1));
        let ra = partial_trace(&rho, Qubit::A);
        assert_abs_diff_eq!(ra.matrix()[(0, 0)].re, 1.0, epsilon = 1e-15);
        let rb = partial_trace(&rho, Qubit::B);
        assert_abs_diff_eq!(rb.matrix()[(1, 1)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(von_neumann_entropy(&ra), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_unphysical_matrices() {
        let mut m = Mat4::identity().scale(0.25);
        m[(0, 1)] = c(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err(), "non-Hermitian accepted");

        let m = Mat4::identity().scale(0.3);
        assert!(DensityMatrix::new(m).is_err(), "trace 1.2 accepted");

        let m = Mat4::from_diagonal(&Vector4::new(c(0.6, 0.0), c(0.6, 0.0), c(-0.2, 0.0), c(0.0, 0.0)));
        assert!(DensityMatrix::new(m).is_err(), "negative eigenvalue accepted");

        assert!(TwoQubitKet::from_real([0.0; 4]).is_err());
    }

    #[test]
    fn nearest_physical_clips() {
        let m = Mat4::from_diagonal(&Vector4::new(c(0.6, 0.0), c(0.6, 0.0), c(-0.2, 0.0), c(0.0, 0.0)));
        let rho = DensityMatrix::nearest_physical(&m).unwrap();
        let e = rho.eigenvalues();
        assert_abs_diff_eq!(e[3], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bell_labels_parse() {
        for b in BellLabel::ALL {
            assert_eq!(b.as_str().parse::<BellLabel>().unwrap(), b);
        }
        assert!("chi".parse::<BellLabel>().is_err());
    }
}
