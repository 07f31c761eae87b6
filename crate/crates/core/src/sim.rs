//! Stochastic acquisition: turns ideal states into Poissonian coincidence
//! counts with detector efficiencies, accidentals and an effective coherence
//! model. Also simulates the two-photon N00N fringe, heater calibration
//! scans and the coincidence-to-accidental ratio.
//!
//! Every stochastic function takes an explicit seed and derives one sub-seed
//! per independent unit of work (setting, grid point), so results do not
//! depend on evaluation order or thread count.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    calib_phase_from_voltage, generate_state, projector_for_phases, AnalysisPhases, DetectorPair,
    PauliSetting, PhaseConfig, Shifter, SourceParams, ThermalCalib,
};
use crate::error::{Error, Result};
use crate::quantum::{DensityMatrix, Mat4, TwoQubitKet};
use crate::rng::{derive_seed, rng_from_seed};

/// Efficiencies of the detectors on rails `a, b, c, d`, coincidence window
/// and dark-count rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBank {
    pub eta: [f64; 4],
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default)]
    pub dark_hz: f64,
}

fn default_window() -> f64 {
    1e-9
}

impl Default for DetectorBank {
    fn default() -> Self {
        Self {
            eta: [1.0; 4],
            window_s: default_window(),
            dark_hz: 0.0,
        }
    }
}

impl DetectorBank {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.eta.iter().enumerate() {
            if !(e.is_finite() && *e > 0.0 && *e <= 1.0) {
                return Err(Error::validation(format!(
                    "detector efficiency eta[{i}] must lie in (0, 1], got {e}"
                )));
            }
        }
        if !(self.window_s.is_finite() && self.window_s >= 0.0) {
            return Err(Error::validation("coincidence window must be >= 0"));
        }
        if !(self.dark_hz.is_finite() && self.dark_hz >= 0.0) {
            return Err(Error::validation("dark-count rate must be >= 0"));
        }
        Ok(())
    }

    /// `η_j · η_k` for a detector pair.
    pub fn pair_efficiency(&self, pair: DetectorPair) -> f64 {
        let (j, k) = pair.detectors();
        self.eta[j] * self.eta[k]
    }
}

/// Effective noise: `visibility` scales coherences between the two sources'
/// contributions, `phase_jitter` (rad, Gaussian) further damps them by
/// `exp(−σ²/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub visibility: f64,
    #[serde(default)]
    pub phase_jitter: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl NoiseModel {
    pub const fn ideal() -> Self {
        Self {
            visibility: 1.0,
            phase_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.visibility.is_finite() && (0.0..=1.0).contains(&self.visibility)) {
            return Err(Error::validation(format!(
                "visibility must lie in [0, 1], got {}",
                self.visibility
            )));
        }
        if !(self.phase_jitter.is_finite() && self.phase_jitter >= 0.0) {
            return Err(Error::validation("phase jitter must be >= 0"));
        }
        Ok(())
    }

    /// Residual inter-source coherence `V·exp(−σ²/2)`.
    pub fn coherence(&self) -> f64 {
        self.visibility * (-0.5 * self.phase_jitter * self.phase_jitter).exp()
    }
}

/// Mixes `|ψ⟩⟨ψ|` with its source-dephased version.
///
/// Coherences between the source-A block `{|00⟩, |01⟩}` and the source-B
/// block `{|10⟩, |11⟩}` are multiplied by [`NoiseModel::coherence`].
pub fn apply_noise(psi: &TwoQubitKet, nm: &NoiseModel) -> Result<DensityMatrix> {
    nm.validate()?;
    let k = nm.coherence();
    let mut m = psi.projector();
    for i in 0..4 {
        for j in 0..4 {
            if i / 2 != j / 2 {
                m[(i, j)] *= k;
            }
        }
    }
    DensityMatrix::new(m)
}

/// Two-fold accidental rate `S_j · S_k · τ`.
pub fn accidental_rate(singles_j: f64, singles_k: f64, window_s: f64) -> f64 {
    singles_j * singles_k * window_s
}

/// Expected counts for one analysis setting, split into true coincidences
/// and accidentals, in the record order `(a,c), (a,d), (b,c), (b,d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedCounts {
    pub signal: [f64; 4],
    pub accidental: [f64; 4],
}

impl ExpectedCounts {
    pub fn total(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.signal[i] + self.accidental[i])
    }
}

fn check_rate_and_time(pair_rate: f64, t: f64) -> Result<()> {
    if !(pair_rate.is_finite() && pair_rate >= 0.0) {
        return Err(Error::validation(format!("pair rate must be >= 0, got {pair_rate}")));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::validation(format!("integration time must be > 0, got {t}")));
    }
    Ok(())
}

/// Expected counts under arbitrary analysis phases.
///
/// `pair_rate` is the rate of pairs reaching the four output rails; singles
/// on a rail are `pair_rate · η · P(rail) + dark`.
pub fn expected_counts_for_phases(
    rho: &DensityMatrix,
    phases: &AnalysisPhases,
    det: &DetectorBank,
    pair_rate: f64,
    t: f64,
) -> Result<ExpectedCounts> {
    det.validate()?;
    check_rate_and_time(pair_rate, t)?;
    let probs = DetectorPair::ALL.map(|p| rho.expectation(&projector_for_phases(p, phases)).max(0.0));
    Ok(counts_from_probabilities(&probs, det, pair_rate, t))
}

fn counts_from_probabilities(probs: &[f64; 4], det: &DetectorBank, pair_rate: f64, t: f64) -> ExpectedCounts {
    // Marginal rail probabilities: a, b from qubit A; c, d from qubit B.
    let marginal = [
        probs[0] + probs[1],
        probs[2] + probs[3],
        probs[0] + probs[2],
        probs[1] + probs[3],
    ];
    let singles: [f64; 4] = [0, 1, 2, 3].map(|i| pair_rate * det.eta[i] * marginal[i] + det.dark_hz);
    let mut out = ExpectedCounts {
        signal: [0.0; 4],
        accidental: [0.0; 4],
    };
    for pair in DetectorPair::ALL {
        let i = pair.index();
        let (j, k) = pair.detectors();
        out.signal[i] = det.pair_efficiency(pair) * pair_rate * t * probs[i];
        out.accidental[i] = accidental_rate(singles[j], singles[k], det.window_s) * t;
    }
    out
}

/// `C̃_jk = η_j η_k · rate · t · Tr(ρ Π_jk)` plus accidentals.
pub fn expected_counts(
    rho: &DensityMatrix,
    setting: PauliSetting,
    det: &DetectorBank,
    pair_rate: f64,
    t: f64,
) -> Result<ExpectedCounts> {
    expected_counts_for_phases(rho, &AnalysisPhases::for_setting(setting), det, pair_rate, t)
}

fn poisson(mean: f64, rng: &mut impl rand::Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// Independent Poisson draws per channel; deterministic given `seed`.
pub fn sample_counts(expected: &[f64; 4], seed: u64) -> [f64; 4] {
    let mut rng = rng_from_seed(seed);
    expected.map(|m| poisson(m, &mut rng))
}

/// Coincidences for one analysis setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceRecord {
    pub setting: PauliSetting,
    /// Counts for `(a,c), (a,d), (b,c), (b,d)`.
    pub counts: [f64; 4],
    pub integration_s: f64,
    #[serde(default)]
    pub accidentals_subtracted: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CoincidenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::validation(format!(
                "record {} has negative or non-finite counts",
                self.setting
            )));
        }
        if !(self.integration_s.is_finite() && self.integration_s > 0.0) {
            return Err(Error::validation(format!(
                "record {} has non-positive integration time",
                self.setting
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Acquisition parameters shared by all settings of one tomography run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub detectors: DetectorBank,
    pub noise: NoiseModel,
    pub pair_rate_hz: f64,
    pub integration_s: f64,
    pub subtract_accidentals: bool,
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        self.detectors.validate()?;
        self.noise.validate()?;
        check_rate_and_time(self.pair_rate_hz, self.integration_s)
    }
}

/// Full nine-setting data set for a programmed state.
pub fn acquire_tomography(
    cfg: &PhaseConfig,
    src: &SourceParams,
    acq: &Acquisition,
    seed: u64,
) -> Result<Vec<CoincidenceRecord>> {
    acq.validate()?;
    let psi = generate_state(cfg, src)?;
    let rho = apply_noise(&psi, &acq.noise)?;
    acquire_from_state(&rho, acq, seed)
}

/// Samples a nine-setting data set from a given density matrix.
///
/// With `subtract_accidentals`, an independent Poisson background estimate
/// (as from an off-peak histogram window) is subtracted and clipped at zero.
pub fn acquire_from_state(
    rho: &DensityMatrix,
    acq: &Acquisition,
    seed: u64,
) -> Result<Vec<CoincidenceRecord>> {
    acq.validate()?;
    PauliSetting::all()
        .into_par_iter()
        .map(|setting| {
            let exp = expected_counts(
                rho,
                setting,
                &acq.detectors,
                acq.pair_rate_hz,
                acq.integration_s,
            )?;
            let sub = derive_seed(seed, setting.index() as u64);
            let raw = sample_counts(&exp.total(), derive_seed(sub, 0));
            let counts = if acq.subtract_accidentals {
                let bg = sample_counts(&exp.accidental, derive_seed(sub, 1));
                [0, 1, 2, 3].map(|i| (raw[i] - bg[i]).max(0.0))
            } else {
                raw
            };
            Ok(CoincidenceRecord {
                setting,
                counts,
                integration_s: acq.integration_s,
                accidentals_subtracted: acq.subtract_accidentals,
                seed: Some(sub),
            })
        })
        .collect()
}

/// Noise-free records holding the exact expected signal counts.
pub fn expected_records(
    rho: &DensityMatrix,
    det: &DetectorBank,
    pair_rate: f64,
    t: f64,
) -> Result<Vec<CoincidenceRecord>> {
    PauliSetting::all()
        .into_iter()
        .map(|setting| {
            let exp = expected_counts(rho, setting, det, pair_rate, t)?;
            Ok(CoincidenceRecord {
                setting,
                counts: exp.signal,
                integration_s: t,
                accidentals_subtracted: true,
                seed: None,
            })
        })
        .collect()
}

/// Coincidence probability across the two output rails of an MZI set to
/// 50:50 when a two-photon N00N state enters it, as a function of the phase
/// `θ3` applied to one arm: `(1 + K·cos(2θ3 + δ))/2` with coherence `K`.
pub fn noon_coincidence_probability(theta3: f64, coherence: f64, offset: f64) -> f64 {
    0.5 * (1.0 + coherence * (2.0 * theta3 + offset).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub x: f64,
    pub counts: f64,
    pub expected: f64,
}

/// Poisson-sampled time-reversed HOM fringe over a `θ3` grid.
///
/// The two-photon phase doubles `θ3`; jitter on `θ3` therefore damps the
/// fringe by `exp(−2σ²)` on top of the visibility.
pub fn noon_fringe(
    theta3_grid: &[f64],
    nm: &NoiseModel,
    pair_rate: f64,
    t: f64,
    offset: f64,
    seed: u64,
) -> Result<Vec<FringePoint>> {
    nm.validate()?;
    check_rate_and_time(pair_rate, t)?;
    if theta3_grid.is_empty() {
        return Err(Error::validation("fringe grid is empty"));
    }
    let coherence = nm.visibility * (-2.0 * nm.phase_jitter * nm.phase_jitter).exp();
    Ok(theta3_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let expected = pair_rate * t * noon_coincidence_probability(x, coherence, offset);
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            FringePoint {
                x,
                counts: poisson(expected, &mut rng),
                expected,
            }
        })
        .collect())
}

/// Fringe contrast estimates for a `2x`-periodic fringe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityEstimate {
    /// `(max − min)/(max + min)` of the fitted sinusoid.
    pub fit: f64,
    pub fit_std: f64,
    /// Fitted maximum combined with the smallest measured value.
    pub hybrid: f64,
    pub hybrid_std: f64,
    pub mean: f64,
    pub amplitude: f64,
    /// Fringe phase `δ` in `mean + amplitude·cos(2x + δ)`.
    pub phase: f64,
    pub reduced_chi2: f64,
}

/// Minimum number of fringe points accepted by [`visibility`].
pub const MIN_FRINGE_POINTS: usize = 6;

/// Fits `mean + amplitude·cos(2x + δ)` (equivalently
/// `A(1 + V cos(2x + δ))/2`) by Poisson-weighted linear least squares.
pub fn visibility(points: &[(f64, f64)]) -> Result<VisibilityEstimate> {
    if points.len() < MIN_FRINGE_POINTS {
        return Err(Error::validation(format!(
            "visibility fit needs at least {MIN_FRINGE_POINTS} points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite() || *y < 0.0) {
        return Err(Error::validation("fringe contains negative or non-finite values"));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| (a.min(*x), b.max(*x)));
    if hi - lo < PI * (1.0 - 1e-9) {
        return Err(Error::validation(format!(
            "fringe grid spans {:.3} rad, need at least one period (π)",
            hi - lo
        )));
    }

    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(x, y) in points {
        let w = 1.0 / y.max(1.0);
        let row = Vector3::new(1.0, (2.0 * x).cos(), (2.0 * x).sin());
        ata += row * row.transpose() * w;
        aty += row * (y * w);
    }
    let residual_fail = |reason: &str| Error::Fit {
        reason: reason.to_string(),
        residual_rms: f64::NAN,
    };
    let cov = ata
        .try_inverse()
        .ok_or_else(|| residual_fail("fringe design matrix is singular"))?;
    let coef = cov * aty;
    let chi2: f64 = points
        .iter()
        .map(|&(x, y)| {
            let m = coef[0] + coef[1] * (2.0 * x).cos() + coef[2] * (2.0 * x).sin();
            (m - y).powi(2) / y.max(1.0)
        })
        .sum();
    let dof = (points.len() - 3) as f64;
    let reduced = chi2 / dof;
    let rms = (points
        .iter()
        .map(|&(x, y)| (coef[0] + coef[1] * (2.0 * x).cos() + coef[2] * (2.0 * x).sin() - y).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let mean = coef[0];
    if !(mean > 0.0) {
        return Err(Error::Fit {
            reason: format!("fitted fringe mean {mean:.3e} is not positive"),
            residual_rms: rms,
        });
    }
    let cov = cov * reduced.max(1.0);
    let amp = coef[1].hypot(coef[2]);
    let phase = -coef[2].atan2(coef[1]);

    let propagate = |g: Vector3<f64>| (g.transpose() * cov * g)[(0, 0)].max(0.0).sqrt();
    let (du1, du2) = if amp > 0.0 {
        (coef[1] / amp, coef[2] / amp)
    } else {
        (0.0, 0.0)
    };
    let fit = (amp / mean).clamp(0.0, 1.0);
    let fit_std = propagate(Vector3::new(-amp / (mean * mean), du1 / mean, du2 / mean));

    let fmax = mean + amp;
    let ymin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let denom = fmax + ymin;
    let hybrid = ((fmax - ymin) / denom).clamp(0.0, 1.0);
    let var_max = propagate(Vector3::new(1.0, du1, du2)).powi(2);
    let var_min = ymin.max(1.0);
    let d_max = 2.0 * ymin / (denom * denom);
    let d_min = -2.0 * fmax / (denom * denom);
    let hybrid_std = (d_max * d_max * var_max + d_min * d_min * var_min).sqrt();

    Ok(VisibilityEstimate {
        fit,
        fit_std,
        hybrid,
        hybrid_std,
        mean,
        amplitude: amp,
        phase,
        reduced_chi2: reduced,
    })
}

/// Fringe period from a fit with free angular frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period: f64,
    pub period_std: f64,
}

/// Weighted χ² of the best `c0 + c1 cos(kx) + c2 sin(kx)` at fixed `k`.
fn chi2_at_frequency(points: &[(f64, f64)], k: f64) -> f64 {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(x, y) in points {
        let w = 1.0 / y.max(1.0);
        let row = Vector3::new(1.0, (k * x).cos(), (k * x).sin());
        ata += row * row.transpose() * w;
        aty += row * (y * w);
    }
    let Some(inv) = ata.try_inverse() else {
        return f64::INFINITY;
    };
    let c = inv * aty;
    points
        .iter()
        .map(|&(x, y)| (c[0] + c[1] * (k * x).cos() + c[2] * (k * x).sin() - y).powi(2) / y.max(1.0))
        .sum()
}

/// Fits the angular frequency of a sinusoidal fringe by scanning `k` over
/// `[0.25, 6]` rad⁻¹ and refining with golden-section search. The error bar
/// comes from the χ² curvature, inflated by the reduced χ² when above one.
pub fn fit_fringe_period(points: &[(f64, f64)]) -> Result<PeriodEstimate> {
    if points.len() < MIN_FRINGE_POINTS {
        return Err(Error::validation(format!(
            "period fit needs at least {MIN_FRINGE_POINTS} points, got {}",
            points.len()
        )));
    }
    let n = 1200;
    let (k_lo, k_hi) = (0.25, 6.0);
    let step = (k_hi - k_lo) / n as f64;
    let best = (0..=n)
        .map(|i| k_lo + step * i as f64)
        .map(|k| (k, chi2_at_frequency(points, k)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap_or(2.0);
    let (mut a, mut b) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c1 = b - g * (b - a);
        let c2 = a + g * (b - a);
        if chi2_at_frequency(points, c1) < chi2_at_frequency(points, c2) {
            b = c2;
        } else {
            a = c1;
        }
    }
    let k = 0.5 * (a + b);
    let chi_min = chi2_at_frequency(points, k);
    if !chi_min.is_finite() {
        return Err(Error::Fit {
            reason: "fringe frequency fit is singular".into(),
            residual_rms: f64::NAN,
        });
    }
    let h = 1e-4 * k;
    let curv = (chi2_at_frequency(points, k + h) - 2.0 * chi_min + chi2_at_frequency(points, k - h)) / (h * h);
    let dof = (points.len() - 4).max(1) as f64;
    let k_std = if curv > 0.0 {
        (2.0 / curv).sqrt() * (chi_min / dof).max(1.0).sqrt()
    } else {
        f64::INFINITY
    };
    let period = 2.0 * PI / k;
    Ok(PeriodEstimate {
        period,
        period_std: period * k_std / k,
    })
}

/// What a heater calibration scan sweeps and which coincidences it monitors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSetup {
    pub shifter: Shifter,
    pub calib: ThermalCalib,
    /// Phases of all other shifters, including the analysis setting.
    pub base: PhaseConfig,
    pub source: SourceParams,
    pub acquisition: Acquisition,
    pub monitor: DetectorPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub voltage: f64,
    /// Measured coincidence rate (Hz).
    pub rate: f64,
    /// Expected rate (Hz).
    pub expected: f64,
}

/// Sweeps one heater voltage and records the monitored coincidence rate.
pub fn calibration_scan(setup: &ScanSetup, voltages: &[f64], seed: u64) -> Result<Vec<ScanPoint>> {
    setup.calib.validate()?;
    let acq = &setup.acquisition;
    acq.validate()?;
    voltages
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut cfg = setup.base;
            cfg.set(setup.shifter, calib_phase_from_voltage(&setup.calib, v));
            let psi = generate_state(&cfg, &setup.source)?;
            let rho = apply_noise(&psi, &acq.noise)?;
            let exp = expected_counts_for_phases(
                &rho,
                &cfg.analysis(),
                &acq.detectors,
                acq.pair_rate_hz,
                acq.integration_s,
            )?;
            let k = setup.monitor.index();
            let mean = exp.signal[k] + exp.accidental[k];
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let counts = poisson(mean, &mut rng);
            Ok(ScanPoint {
                voltage: v,
                rate: counts / acq.integration_s,
                expected: mean / acq.integration_s,
            })
        })
        .collect()
}

/// Coincidence-to-accidental ratio of a single pair source at generation
/// rate `pgr`, detected on rails `a` (signal) and `c` (idler).
///
/// Returns infinity when the accidental rate vanishes (zero window).
pub fn coincidence_to_accidental(pgr: f64, det: &DetectorBank) -> f64 {
    let (ej, ek) = (det.eta[0], det.eta[2]);
    let true_rate = pgr * ej * ek;
    let acc = accidental_rate(pgr * ej + det.dark_hz, pgr * ek + det.dark_hz, det.window_s);
    if acc > 0.0 {
        true_rate / acc
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarPoint {
    pub pgr: f64,
    pub car: f64,
}

pub fn car_sweep(pgrs: &[f64], det: &DetectorBank) -> Result<Vec<CarPoint>> {
    det.validate()?;
    if pgrs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::validation("pair generation rates must be > 0"));
    }
    Ok(pgrs
        .iter()
        .map(|&pgr| CarPoint {
            pgr,
            car: coincidence_to_accidental(pgr, det),
        })
        .collect())
}

/// Least-squares slope of `ln CAR` against `ln PGR`; `None` with fewer than
/// two finite points.
pub fn loglog_slope(points: &[CarPoint]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.car.is_finite() && p.car > 0.0)
        .map(|p| (p.pgr.ln(), p.car.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Probabilities `Tr(ρ Π)` for the four detector pairs of one setting.
pub fn setting_probabilities(rho: &DensityMatrix, projectors: &[Mat4; 4]) -> [f64; 4] {
    [0, 1, 2, 3].map(|i| rho.expectation(&projectors[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{all_projectors, Pauli};
    use crate::quantum::{bell_state, concurrence, fidelity, BellLabel};
    use approx::assert_abs_diff_eq;

    fn unit_bank() -> DetectorBank {
        DetectorBank {
            eta: [1.0; 4],
            window_s: 0.0,
            dark_hz: 0.0,
        }
    }

    fn phi_plus() -> DensityMatrix {
        DensityMatrix::from_ket(&bell_state(BellLabel::PhiPlus))
    }

    #[test]
    fn noiseless_limit_is_pure() {
        let psi = bell_state(BellLabel::PsiPlus);
        let rho = apply_noise(&psi, &NoiseModel::ideal()).unwrap();
        assert!((rho.matrix() - psi.projector()).norm() < 1e-15);
    }

    #[test]
    fn full_dephasing_kills_entanglement() {
        let nm = NoiseModel {
            visibility: 0.0,
            phase_jitter: 0.0,
        };
        let rho = apply_noise(&bell_state(BellLabel::PhiPlus), &nm).unwrap();
        for (i, want) in [0.5, 0.0, 0.0, 0.5].into_iter().enumerate() {
            assert_abs_diff_eq!(rho.matrix()[(i, i)].re, want, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(rho.matrix()[(0, 3)].norm(), 0.0);
        assert_abs_diff_eq!(concurrence(&rho), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn partial_visibility_fidelity() {
        // Brute-force assembly: V|Φ+⟩⟨Φ+| + (1−V)·diag(½,0,0,½).
        let v = 0.85;
        let target = bell_state(BellLabel::PhiPlus);
        let dephased = {
            let mut m = Mat4::zeros();
            m[(0, 0)] = 0.5.into();
            m[(3, 3)] = 0.5.into();
            m
        };
        let assembled = target.projector().scale(v) + dephased.scale(1.0 - v);
        let oracle = DensityMatrix::new(assembled).unwrap();
        let f_oracle = fidelity(&oracle, &target);
        assert_abs_diff_eq!(f_oracle, 0.925, epsilon = 1e-12);
        let nm = NoiseModel {
            visibility: v,
            phase_jitter: 0.0,
        };
        let rho = apply_noise(&target, &nm).unwrap();
        assert_abs_diff_eq!(fidelity(&rho, &target), f_oracle, epsilon = 1e-12);
    }

    #[test]
    fn jitter_damps_coherence() {
        let nm = NoiseModel {
            visibility: 1.0,
            phase_jitter: 0.3,
        };
        let rho = apply_noise(&bell_state(BellLabel::PsiPlus), &nm).unwrap();
        assert_abs_diff_eq!(rho.matrix()[(1, 2)].re, 0.5 * (-0.045f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn expected_counts_examples() {
        let zz = PauliSetting::new(Pauli::Z, Pauli::Z);
        let e = expected_counts(&phi_plus(), zz, &unit_bank(), 1000.0, 2.0).unwrap();
        let want = [1000.0, 0.0, 0.0, 1000.0];
        for i in 0..4 {
            assert_abs_diff_eq!(e.total()[i], want[i], epsilon = 1e-9);
        }
        let det = DetectorBank {
            eta: [1.0, 1.0, 0.5, 0.5],
            ..unit_bank()
        };
        let e = expected_counts(&phi_plus(), zz, &det, 1000.0, 2.0).unwrap();
        let want = [500.0, 0.0, 0.0, 500.0];
        for i in 0..4 {
            assert_abs_diff_eq!(e.total()[i], want[i], epsilon = 1e-9);
        }
        let det = DetectorBank {
            dark_hz: 100.0,
            window_s: 1e-9,
            ..unit_bank()
        };
        let e = expected_counts(&phi_plus(), zz, &det, 0.0, 2.0).unwrap();
        for i in 0..4 {
            assert_eq!(e.signal[i], 0.0);
            assert_abs_diff_eq!(e.accidental[i], 100.0 * 100.0 * 1e-9 * 2.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn expected_counts_sum_to_rate_times_efficiency() {
        let det = DetectorBank {
            eta: [0.3, 0.3, 0.3, 0.3],
            ..unit_bank()
        };
        let rho = apply_noise(&bell_state(BellLabel::PsiMinus), &NoiseModel { visibility: 0.7, phase_jitter: 0.1 }).unwrap();
        for s in PauliSetting::all() {
            let e = expected_counts(&rho, s, &det, 1234.0, 2.0).unwrap();
            let total: f64 = e.signal.iter().sum();
            assert_abs_diff_eq!(total, 0.09 * 1234.0 * 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn accidental_rate_examples() {
        assert_abs_diff_eq!(accidental_rate(1e5, 1e5, 1e-9), 10.0, epsilon = 1e-12);
        assert_eq!(accidental_rate(1e5, 1e5, 0.0), 0.0);
    }

    #[test]
    fn car_scales_inversely_with_pgr() {
        let det = DetectorBank {
            eta: [0.1; 4],
            window_s: 1e-9,
            dark_hz: 0.0,
        };
        let pgrs: Vec<f64> = (0..=20).map(|i| 10f64.powf(4.0 + 0.1 * i as f64)).collect();
        let pts = car_sweep(&pgrs, &det).unwrap();
        let slope = loglog_slope(&pts).unwrap();
        assert_abs_diff_eq!(slope, -1.0, epsilon = 1e-9);
        assert!(loglog_slope(&pts[..1]).is_none());
        let open = DetectorBank { window_s: 0.0, ..det };
        assert!(coincidence_to_accidental(1e5, &open).is_infinite());
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_counts(&[0.0; 4], 3), [0.0; 4]);
        let a = sample_counts(&[10.0, 200.0, 3000.0, 0.5], 11);
        let b = sample_counts(&[10.0, 200.0, 3000.0, 0.5], 11);
        assert_eq!(a, b);
        assert_ne!(a, sample_counts(&[10.0, 200.0, 3000.0, 0.5], 12));
    }

    #[test]
    fn poisson_mean() {
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i| sample_counts(&[1000.0, 0.0, 0.0, 0.0], derive_seed(99, i))[0])
            .sum::<f64>()
            / n as f64;
        let tol = 3.0 * (1000.0 / n as f64).sqrt();
        assert!((mean - 1000.0).abs() < tol, "mean {mean}");
    }

    #[test]
    fn phi_plus_probability_table() {
        let rho = phi_plus();
        let proj = all_projectors();
        for s in PauliSetting::all() {
            let p = setting_probabilities(&rho, &proj[s.index()]);
            match (s.a, s.b) {
                (Pauli::X, Pauli::X) | (Pauli::Z, Pauli::Z) => {
                    assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
                    assert_abs_diff_eq!(p[3], 0.5, epsilon = 1e-12);
                }
                (Pauli::Y, Pauli::Y) => {
                    assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
                    assert_abs_diff_eq!(p[2], 0.5, epsilon = 1e-12);
                }
                _ => p.iter().for_each(|&x| assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12)),
            }
        }
    }

    #[test]
    fn visibility_of_perfect_and_flat_fringes() {
        let perfect: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64 * PI / 20.0;
                (x, 1000.0 * (1.0 + (2.0 * x).cos()) / 2.0)
            })
            .collect();
        let v = visibility(&perfect).unwrap();
        assert_abs_diff_eq!(v.fit, 1.0, epsilon = 1e-6);
        let flat: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * PI / 20.0, 500.0)).collect();
        let v = visibility(&flat).unwrap();
        assert_abs_diff_eq!(v.fit, 0.0, epsilon = 1e-9);
        assert!(visibility(&perfect[..3]).is_err());
        let zeros: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.4, 0.0)).collect();
        assert!(matches!(visibility(&zeros), Err(Error::Fit { .. })));
    }

    #[test]
    fn fringe_period_recovered() {
        let pts: Vec<(f64, f64)> = (0..=60)
            .map(|i| {
                let x = i as f64 * 2.0 * PI / 60.0;
                (x, 1000.0 * (1.0 + 0.9 * (2.0 * x + 0.4).cos()) / 2.0)
            })
            .collect();
        let p = fit_fringe_period(&pts).unwrap();
        assert_abs_diff_eq!(p.period, PI, epsilon = 1e-6);
    }

    #[test]
    fn flat_calibration_scan_when_monitored_source_is_dark() {
        // φ1 = 0 pumps only source B, which never reaches detector pair (a, c).
        let setup = ScanSetup {
            shifter: Shifter::Phi2,
            calib: ThermalCalib {
                xi0: 0.1,
                alpha: 1.0,
                beta: 0.02,
            },
            base: PhaseConfig {
                phi1: 0.0,
                ..PhaseConfig::default()
            },
            source: SourceParams::default(),
            acquisition: Acquisition {
                detectors: DetectorBank::default(),
                noise: NoiseModel::ideal(),
                pair_rate_hz: 1000.0,
                integration_s: 1.0,
                subtract_accidentals: false,
            },
            monitor: DetectorPair::AC,
        };
        let v: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let scan = calibration_scan(&setup, &v, 5).unwrap();
        assert!(scan.iter().all(|p| p.rate == 0.0 && p.expected < 1e-20));
    }
}
