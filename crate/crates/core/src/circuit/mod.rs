//! Deterministic model of the chip: pump splitting, first-order SPDC state
//! generation, reconfiguration phases, analysis interferometers and the
//! resulting two-qubit projectors.
//!
//! Conventions:
//! - directional coupler `DC = (1/√2)[[1, i], [i, 1]]`;
//! - MZI `U(φ) = DC · diag(e^{iφ}, 1) · DC`, so `|U₀₀|² = sin²(φ/2)`;
//! - analysis stage `M(φ, θ) = U(φ) · diag(e^{iθ}, 1)` with `θ` on the
//!   logical-0 rail;
//! - detector rail `j` projects onto `M†|j⟩`.

mod calibration;

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{bell_state, c, BellLabel, Mat2, Mat4, SingleQubitState, TwoQubitKet, C64};

pub use calibration::{
    calib_phase_from_voltage, fit_calibration, voltage_for_phase, CalibrationFit, ThermalCalib,
    MAX_FIT_RESTARTS,
};

/// Largest squeezing parameter accepted by the first-order pair model.
pub const MAX_SQUEEZING: f64 = 0.1;

/// The eight thermo-optic phases of the circuit, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Pump splitting MZI.
    pub phi1: f64,
    /// Passive relative pump phase between the two sources.
    #[serde(default)]
    pub theta1: f64,
    pub theta2: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub theta3: f64,
    pub phi4: f64,
    pub theta4: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        let z = AnalysisPhases::for_setting(PauliSetting::new(Pauli::Z, Pauli::Z));
        Self {
            phi1: FRAC_PI_2,
            theta1: 0.0,
            theta2: 0.0,
            phi2: 0.0,
            phi3: z.phi3,
            theta3: z.theta3,
            phi4: z.phi4,
            theta4: z.theta4,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        for s in Shifter::ALL {
            if !self.get(s).is_finite() {
                return Err(Error::validation(format!("phase {s} is not finite")));
            }
        }
        Ok(())
    }

    pub fn get(&self, s: Shifter) -> f64 {
        match s {
            Shifter::Phi1 => self.phi1,
            Shifter::Theta1 => self.theta1,
            Shifter::Theta2 => self.theta2,
            Shifter::Phi2 => self.phi2,
            Shifter::Phi3 => self.phi3,
            Shifter::Theta3 => self.theta3,
            Shifter::Phi4 => self.phi4,
            Shifter::Theta4 => self.theta4,
        }
    }

    pub fn set(&mut self, s: Shifter, value: f64) {
        let slot = match s {
            Shifter::Phi1 => &mut self.phi1,
            Shifter::Theta1 => &mut self.theta1,
            Shifter::Theta2 => &mut self.theta2,
            Shifter::Phi2 => &mut self.phi2,
            Shifter::Phi3 => &mut self.phi3,
            Shifter::Theta3 => &mut self.theta3,
            Shifter::Phi4 => &mut self.phi4,
            Shifter::Theta4 => &mut self.theta4,
        };
        *slot = value;
    }

    pub fn analysis(&self) -> AnalysisPhases {
        AnalysisPhases {
            phi3: self.phi3,
            theta3: self.theta3,
            phi4: self.phi4,
            theta4: self.theta4,
        }
    }

    pub fn with_analysis(mut self, a: AnalysisPhases) -> Self {
        self.phi3 = a.phi3;
        self.theta3 = a.theta3;
        self.phi4 = a.phi4;
        self.theta4 = a.theta4;
        self
    }

    /// Phases reduced to `[0, 2π)` for comparison.
    pub fn reduced(&self) -> Self {
        let mut out = *self;
        for s in Shifter::ALL {
            out.set(s, self.get(s).rem_euclid(TAU));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shifter {
    Phi1,
    Theta1,
    Theta2,
    Phi2,
    Phi3,
    Theta3,
    Phi4,
    Theta4,
}

impl Shifter {
    pub const ALL: [Shifter; 8] = [
        Shifter::Phi1,
        Shifter::Theta1,
        Shifter::Theta2,
        Shifter::Phi2,
        Shifter::Phi3,
        Shifter::Theta3,
        Shifter::Phi4,
        Shifter::Theta4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shifter::Phi1 => "phi1",
            Shifter::Theta1 => "theta1",
            Shifter::Theta2 => "theta2",
            Shifter::Phi2 => "phi2",
            Shifter::Phi3 => "phi3",
            Shifter::Theta3 => "theta3",
            Shifter::Phi4 => "phi4",
            Shifter::Theta4 => "theta4",
        }
    }
}

impl fmt::Display for Shifter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shifter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shifter::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown phase shifter '{s}'")))
    }
}

/// SPDC efficiencies (per √mW) and total pump power (mW).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub eta_a: f64,
    pub eta_b: f64,
    pub p0: f64,
}

impl Default for SourceParams {
    /// Source A is √3 times more efficient than B, so balanced pumping needs
    /// `φ1 = π/3`. Pump power 0.15 mW.
    fn default() -> Self {
        Self {
            eta_a: 3f64.sqrt() * 0.05,
            eta_b: 0.05,
            p0: 0.15,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_a", self.eta_a), ("eta_b", self.eta_b), ("p0", self.p0)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Rejects pump settings where either squeezing parameter reaches
    /// [`MAX_SQUEEZING`] and the first-order pair expansion breaks down.
    pub fn check_squeezing(&self, phi1: f64) -> Result<()> {
        let (ra, rb) = self.squeezing(phi1);
        let r = ra.abs().max(rb.abs());
        if r >= MAX_SQUEEZING {
            return Err(Error::validation(format!(
                "squeezing parameter {r:.3} exceeds the first-order limit {MAX_SQUEEZING}"
            )));
        }
        Ok(())
    }

    /// Squeezing amplitudes `(r_a, r_b) = η_k √P_k`, signed by the field
    /// amplitude of the pump splitter.
    pub fn squeezing(&self, phi1: f64) -> (f64, f64) {
        let root = self.p0.sqrt();
        (
            self.eta_a * root * (phi1 / 2.0).sin(),
            self.eta_b * root * (phi1 / 2.0).cos(),
        )
    }
}

/// Pump powers `(P_A, P_B)` behind the splitting MZI.
pub fn pump_split(phi1: f64, p0: f64) -> Result<(f64, f64)> {
    if !p0.is_finite() || p0 < 0.0 {
        return Err(Error::validation(format!("pump power must be >= 0, got {p0}")));
    }
    let s = (phi1 / 2.0).sin();
    let pa = p0 * s * s;
    Ok((pa, p0 - pa))
}

/// Post-selected two-qubit state at first order in the squeezing.
///
/// Source A feeds `|00⟩, |01⟩` with phase `e^{i(θ1 + 2θ2)}`; source B feeds
/// `|10⟩, |11⟩`. `φ2` rotates the second qubit.
pub fn generate_state(cfg: &PhaseConfig, src: &SourceParams) -> Result<TwoQubitKet> {
    cfg.validate()?;
    src.validate()?;
    src.check_squeezing(cfg.phi1)?;
    let (ra, rb) = src.squeezing(cfg.phi1);
    let s2 = (cfg.phi2 / 2.0).sin();
    let c2 = (cfg.phi2 / 2.0).cos();
    let phase = C64::from_polar(1.0, cfg.theta1 + 2.0 * cfg.theta2);
    let a = phase * ra;
    let amps = [a * s2, a * c2, c(rb * c2, 0.0), c(-rb * s2, 0.0)];
    let norm2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    // Pair amplitudes below 1e-12 of the full-pump amplitude count as "off".
    let scale = (src.eta_a.powi(2) + src.eta_b.powi(2)) * src.p0;
    if !(norm2 > 1e-24 * scale) {
        return Err(Error::degenerate(
            "no photon pairs are generated with these pump settings (both sources off)",
        ));
    }
    TwoQubitKet::new(amps)
}

/// `φ1` that equalises the two source amplitudes, `η_a sin(φ1/2) = η_b cos(φ1/2)`.
pub fn balanced_phi1(src: &SourceParams) -> Result<f64> {
    if src.eta_a <= 0.0 || src.eta_b <= 0.0 {
        return Err(Error::validation(
            "balanced pumping needs both source efficiencies > 0",
        ));
    }
    Ok(2.0 * (src.eta_b / src.eta_a).atan())
}

/// Coefficients of a ket in the Bell basis, ordered `Φ+, Φ−, Ψ+, Ψ−`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BellCoefficients(pub [C64; 4]);

impl BellCoefficients {
    pub fn magnitudes(&self) -> [f64; 4] {
        self.0.map(|z| z.norm())
    }

    pub fn recompose(&self) -> Result<TwoQubitKet> {
        let mut amps = [c(0.0, 0.0); 4];
        for (coef, label) in self.0.iter().zip(BellLabel::ALL) {
            for (slot, a) in amps.iter_mut().zip(bell_state(label).amplitudes()) {
                *slot += coef * a;
            }
        }
        TwoQubitKet::new(amps)
    }
}

pub fn bell_decompose(psi: &TwoQubitKet) -> BellCoefficients {
    BellCoefficients(BellLabel::ALL.map(|l| bell_state(l).inner(psi)))
}

pub fn directional_coupler() -> Mat2 {
    let h = FRAC_1_SQRT_2;
    Mat2::new(c(h, 0.0), c(0.0, h), c(0.0, h), c(h, 0.0))
}

/// `diag(e^{iθ}, 1)`.
pub fn phase_shifter(theta: f64) -> Mat2 {
    Mat2::new(C64::from_polar(1.0, theta), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0))
}

pub fn mzi_transfer(phi: f64) -> Mat2 {
    let dc = directional_coupler();
    dc * phase_shifter(phi) * dc
}

/// Analysis stage of one qubit: phase on the logical-0 rail, then the MZI.
pub fn analysis_unitary(phi: f64, theta: f64) -> Mat2 {
    mzi_transfer(phi) * phase_shifter(theta)
}

/// Qubit state that a detector on `rail` (0 = first rail) projects onto.
pub fn detector_state(phi: f64, theta: f64, rail: usize) -> SingleQubitState {
    assert!(rail < 2, "rail index out of range");
    let m = analysis_unitary(phi, theta);
    let u = Vector2::new(m[(rail, 0)].conj(), m[(rail, 1)].conj());
    SingleQubitState::from_unit(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn as_char(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Analysis phases `(φ, θ)` that send the `+1` eigenstate to the first
    /// rail and the `−1` eigenstate to the second.
    pub fn analysis_phases(self) -> (f64, f64) {
        match self {
            Pauli::X => (FRAC_PI_2, 0.0),
            Pauli::Y => (FRAC_PI_2, FRAC_PI_2),
            Pauli::Z => (PI, 0.0),
        }
    }
}

/// Pair of local Pauli measurements, e.g. `XZ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PauliSetting {
    pub a: Pauli,
    pub b: Pauli,
}

impl PauliSetting {
    pub const fn new(a: Pauli, b: Pauli) -> Self {
        Self { a, b }
    }

    /// All nine settings in canonical order `XX, XY, XZ, YX, …, ZZ`.
    pub fn all() -> [PauliSetting; 9] {
        let mut out = [PauliSetting::new(Pauli::X, Pauli::X); 9];
        for (i, a) in Pauli::ALL.into_iter().enumerate() {
            for (j, b) in Pauli::ALL.into_iter().enumerate() {
                out[3 * i + j] = PauliSetting::new(a, b);
            }
        }
        out
    }

    pub fn index(self) -> usize {
        let idx = |p: Pauli| Pauli::ALL.iter().position(|&q| q == p).unwrap();
        3 * idx(self.a) + idx(self.b)
    }

    pub fn label(self) -> String {
        format!("{}{}", self.a.as_char(), self.b.as_char())
    }
}

impl fmt::Display for PauliSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.a.as_char(), self.b.as_char())
    }
}

impl FromStr for PauliSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = |ch: char| match ch.to_ascii_uppercase() {
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(Error::validation(format!("invalid Pauli setting '{s}'"))),
        };
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 2 {
            return Err(Error::validation(format!("invalid Pauli setting '{s}'")));
        }
        Ok(PauliSetting::new(p(chars[0])?, p(chars[1])?))
    }
}

impl Serialize for PauliSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for PauliSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four analysis phases `(φ3, θ3, φ4, θ4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisPhases {
    pub phi3: f64,
    pub theta3: f64,
    pub phi4: f64,
    pub theta4: f64,
}

impl AnalysisPhases {
    pub fn for_setting(setting: PauliSetting) -> Self {
        let (phi3, theta3) = setting.a.analysis_phases();
        let (phi4, theta4) = setting.b.analysis_phases();
        Self {
            phi3,
            theta3,
            phi4,
            theta4,
        }
    }
}

pub fn projection_setting(a: Pauli, b: Pauli) -> AnalysisPhases {
    AnalysisPhases::for_setting(PauliSetting::new(a, b))
}

/// One of the four qubit-A/qubit-B detector pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorPair {
    AC,
    AD,
    BC,
    BD,
}

impl DetectorPair {
    /// Record ordering `(a,c), (a,d), (b,c), (b,d)`.
    pub const ALL: [DetectorPair; 4] = [
        DetectorPair::AC,
        DetectorPair::AD,
        DetectorPair::BC,
        DetectorPair::BD,
    ];

    /// Rail index on qubit A (0 = a, 1 = b).
    pub fn rail_a(self) -> usize {
        match self {
            DetectorPair::AC | DetectorPair::AD => 0,
            DetectorPair::BC | DetectorPair::BD => 1,
        }
    }

    /// Rail index on qubit B (0 = c, 1 = d).
    pub fn rail_b(self) -> usize {
        match self {
            DetectorPair::AC | DetectorPair::BC => 0,
            DetectorPair::AD | DetectorPair::BD => 1,
        }
    }

    pub fn index(self) -> usize {
        2 * self.rail_a() + self.rail_b()
    }

    /// Detector indices into the `a, b, c, d` efficiency array.
    pub fn detectors(self) -> (usize, usize) {
        (self.rail_a(), 2 + self.rail_b())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorPair::AC => "ac",
            DetectorPair::AD => "ad",
            DetectorPair::BC => "bc",
            DetectorPair::BD => "bd",
        }
    }
}

impl FromStr for DetectorPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorPair::ALL
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::validation(format!("unknown detector pair '{s}'")))
    }
}

/// Rank-1 projector for a detector pair under arbitrary analysis phases.
pub fn projector_for_phases(pair: DetectorPair, phases: &AnalysisPhases) -> Mat4 {
    let ua = detector_state(phases.phi3, phases.theta3, pair.rail_a());
    let ub = detector_state(phases.phi4, phases.theta4, pair.rail_b());
    ua.tensor(&ub).projector()
}

pub fn projector_for(pair: DetectorPair, setting: PauliSetting) -> Mat4 {
    projector_for_phases(pair, &AnalysisPhases::for_setting(setting))
}

/// The 36 projectors indexed `[setting.index()][pair.index()]`.
pub fn all_projectors() -> [[Mat4; 4]; 9] {
    PauliSetting::all().map(|s| DetectorPair::ALL.map(|p| projector_for(p, s)))
}

/// The eight named states the generator is programmed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetState {
    /// Computational basis state, index `2·A + B`.
    Basis(u8),
    Bell(BellLabel),
}

impl TargetState {
    pub const ALL: [TargetState; 8] = [
        TargetState::Basis(0),
        TargetState::Basis(1),
        TargetState::Basis(2),
        TargetState::Basis(3),
        TargetState::Bell(BellLabel::PsiPlus),
        TargetState::Bell(BellLabel::PsiMinus),
        TargetState::Bell(BellLabel::PhiPlus),
        TargetState::Bell(BellLabel::PhiMinus),
    ];

    pub fn ket(self) -> TwoQubitKet {
        match self {
            TargetState::Basis(i) => TwoQubitKet::basis(i as usize),
            TargetState::Bell(l) => bell_state(l),
        }
    }

    pub fn is_bell(self) -> bool {
        matches!(self, TargetState::Bell(_))
    }

    pub fn label(self) -> String {
        match self {
            TargetState::Basis(i) => format!("{}{}", i >> 1, i & 1),
            TargetState::Bell(l) => l.as_str().to_string(),
        }
    }

    /// Phase presets derived from the generation formula.
    ///
    /// Basis states pump a single source (`φ1 ∈ {0, π}`) and pick the second
    /// qubit with `φ2`; Bell states use balanced pumping and choose parity with
    /// `φ2` and sign with `θ2`. `θ2` compensates a nonzero `θ1`. The analysis
    /// phases are left at the `ZZ` setting.
    pub fn preset_phases(self, src: &SourceParams, theta1: f64) -> Result<PhaseConfig> {
        let (phi1, phi2, theta2) = match self {
            TargetState::Basis(0) => (PI, PI, PI),
            TargetState::Basis(1) => (PI, 0.0, 0.0),
            TargetState::Basis(2) => (0.0, 0.0, PI),
            TargetState::Basis(3) => (0.0, PI, 0.0),
            TargetState::Basis(i) => {
                return Err(Error::validation(format!("basis index {i} out of range")))
            }
            TargetState::Bell(label) => {
                let phi1 = balanced_phi1(src)?;
                match label {
                    BellLabel::PsiPlus => (phi1, 0.0, 0.0),
                    BellLabel::PsiMinus => (phi1, 0.0, FRAC_PI_2),
                    BellLabel::PhiPlus => (phi1, PI, FRAC_PI_2),
                    BellLabel::PhiMinus => (phi1, PI, 0.0),
                }
            }
        };
        Ok(PhaseConfig {
            phi1,
            theta1,
            theta2: theta2 - theta1 / 2.0,
            phi2,
            ..PhaseConfig::default()
        })
    }
}

impl fmt::Display for TargetState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for TargetState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "00" => Ok(TargetState::Basis(0)),
            "01" => Ok(TargetState::Basis(1)),
            "10" => Ok(TargetState::Basis(2)),
            "11" => Ok(TargetState::Basis(3)),
            other => other
                .parse::<BellLabel>()
                .map(TargetState::Bell)
                .map_err(|_| {
                    Error::validation(format!(
                        "unknown target '{other}' (expected 00, 01, 10, 11, phi+, phi-, psi+, psi-)"
                    ))
                }),
        }
    }
}

impl Serialize for TargetState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for TargetState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
