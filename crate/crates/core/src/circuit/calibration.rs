//! Thermo-optic phase shifter model `ξ(V) = ξ0 + αV²/(1 + βV²)`, its
//! inverse, and the fringe fit that extracts `(ξ0, α, β)` from a voltage scan.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, LmOptions};

/// Maximum number of local refinements tried by [`fit_calibration`].
pub const MAX_FIT_RESTARTS: usize = 16;

/// Minimum number of scan points accepted by [`fit_calibration`].
pub const MIN_SCAN_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalCalib {
    /// Phase at zero voltage (rad).
    pub xi0: f64,
    /// Quadratic coefficient (rad/V²).
    pub alpha: f64,
    /// Saturation coefficient (1/V²).
    #[serde(default)]
    pub beta: f64,
}

impl ThermalCalib {
    pub fn validate(&self) -> Result<()> {
        if !self.xi0.is_finite() || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::validation("calibration parameters must be finite"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::validation(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.beta < 0.0 {
            return Err(Error::validation(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Highest phase the heater reaches, `ξ0 + α/β`, or infinity for `β = 0`.
    pub fn saturation(&self) -> f64 {
        if self.beta > 0.0 {
            self.xi0 + self.alpha / self.beta
        } else {
            f64::INFINITY
        }
    }
}

pub fn calib_phase_from_voltage(c: &ThermalCalib, v: f64) -> f64 {
    let v2 = v * v;
    c.xi0 + c.alpha * v2 / (1.0 + c.beta * v2)
}

/// Smallest nonnegative voltage that realises `target` modulo 2π.
pub fn voltage_for_phase(c: &ThermalCalib, target: f64) -> Result<f64> {
    c.validate()?;
    if !target.is_finite() {
        return Err(Error::validation("target phase must be finite"));
    }
    // Higher branches only add 2π, so the smallest nonnegative lift is the
    // only candidate worth checking against the saturation bound.
    let delta = (target - c.xi0).rem_euclid(TAU);
    let delta = if TAU - delta < 1e-12 { 0.0 } else { delta };
    if c.beta > 0.0 && delta >= c.alpha / c.beta {
        return Err(Error::Unreachable {
            target,
            saturation: c.saturation(),
        });
    }
    Ok((delta / (c.alpha - c.beta * delta)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub calib: ThermalCalib,
    /// Fringe amplitude `A` in `A·sin²((m·ξ(V) + δ)/2) + B`.
    pub amplitude: f64,
    pub background: f64,
    /// Total fringe offset `δ`; `ξ0 = δ/m` assumes the fringe reference phase is zero.
    pub offset: f64,
    pub harmonic: f64,
    pub residual_norm: f64,
    pub residual_rms: f64,
    pub restarts: usize,
}

impl CalibrationFit {
    pub fn predict(&self, v: f64) -> f64 {
        let g = calib_phase_from_voltage(&self.calib, v) - self.calib.xi0;
        let x = self.harmonic * g + self.offset;
        self.amplitude * (x / 2.0).sin().powi(2) + self.background
    }
}

struct Scan<'a> {
    v: &'a [f64],
    y: &'a [f64],
    m: f64,
}

impl Scan<'_> {
    fn phase(&self, v: f64, alpha: f64, beta: f64) -> f64 {
        let v2 = v * v;
        self.m * alpha * v2 / (1.0 + beta * v2)
    }

    /// For fixed `(α, β)` the model is linear in `[1, cos, sin]`; returns the
    /// residual sum of squares and the linear coefficients.
    fn project(&self, alpha: f64, beta: f64) -> Option<(f64, Vector3<f64>)> {
        let mut ata = Matrix3::zeros();
        let mut aty = Vector3::zeros();
        for (&v, &y) in self.v.iter().zip(self.y) {
            let x = self.phase(v, alpha, beta);
            let row = Vector3::new(1.0, x.cos(), x.sin());
            ata += row * row.transpose();
            aty += row * y;
        }
        let coef = ata.cholesky()?.solve(&aty);
        let rss = self
            .v
            .iter()
            .zip(self.y)
            .map(|(&v, &y)| {
                let x = self.phase(v, alpha, beta);
                let r = coef[0] + coef[1] * x.cos() + coef[2] * x.sin() - y;
                r * r
            })
            .sum();
        Some((rss, coef))
    }

    fn residuals(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (delta, alpha, beta, amp, bg) = (p[0], p[1], p[2], p[3], p[4]);
        let n = self.v.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 5);
        for (i, (&v, &y)) in self.v.iter().zip(self.y).enumerate() {
            let v2 = v * v;
            let den = 1.0 + beta * v2;
            let x = self.m * alpha * v2 / den + delta;
            let s = (x / 2.0).sin();
            r[i] = amp * s * s + bg - y;
            let dx = amp * x.sin() / 2.0;
            j[(i, 0)] = dx;
            j[(i, 1)] = dx * self.m * v2 / den;
            j[(i, 2)] = -dx * self.m * alpha * v2 * v2 / (den * den);
            j[(i, 3)] = s * s;
            j[(i, 4)] = 1.0;
        }
        (r, j)
    }
}

/// Fits `rate = A·sin²((m·(ξ(V) − ξ0) + δ)/2) + B` to a voltage scan.
///
/// `harmonic` is the fringe multiplicity `m` of the monitored signal (1 when
/// the detected rate follows the shifter's phase, 2 when it follows twice the
/// phase). A coarse `(α, β)` grid with the linear parameters eliminated seeds
/// up to [`MAX_FIT_RESTARTS`] Levenberg–Marquardt refinements; the best one
/// wins.
pub fn fit_calibration(scan: &[(f64, f64)], harmonic: f64) -> Result<CalibrationFit> {
    if scan.len() < MIN_SCAN_POINTS {
        return Err(Error::validation(format!(
            "calibration fit needs at least {MIN_SCAN_POINTS} points, got {}",
            scan.len()
        )));
    }
    if !(harmonic.is_finite() && harmonic > 0.0) {
        return Err(Error::validation("fringe harmonic must be > 0"));
    }
    if scan.iter().any(|(v, y)| !v.is_finite() || !y.is_finite()) {
        return Err(Error::validation("calibration scan contains non-finite values"));
    }
    let v: Vec<f64> = scan.iter().map(|p| p.0).collect();
    let y: Vec<f64> = scan.iter().map(|p| p.1).collect();
    let data = Scan { v: &v, y: &y, m: harmonic };

    let vmax = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let vmin = v.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    if vmax <= 0.0 {
        return Err(Error::validation("calibration scan has no nonzero voltage"));
    }
    let y_scale = y.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);

    // Grid over total fringe phase across the scan and the saturation ratio βV²max.
    let max_span = TAU * (scan.len() as f64 / 3.0).max(2.0);
    let spans: Vec<f64> = geometric(PI, max_span, 240);
    let mut kappas = vec![0.0];
    kappas.extend(geometric(1e-3, 20.0, 40));
    let mut grid = Vec::with_capacity(spans.len() * kappas.len());
    for &kappa in &kappas {
        for &span in &spans {
            let alpha = span * (1.0 + kappa) / (harmonic * vmax * vmax);
            let beta = kappa / (vmax * vmax);
            if let Some((rss, coef)) = data.project(alpha, beta) {
                grid.push((rss, alpha, beta, coef));
            }
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));

    let lower = [f64::NEG_INFINITY, 1e-12, 0.0, 0.0, f64::NEG_INFINITY];
    let upper = [f64::INFINITY; 5];
    let opts = LmOptions::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    let mut restarts = 0;
    for (_, alpha, beta, coef) in &grid {
        if restarts >= MAX_FIT_RESTARTS {
            break;
        }
        // Skip seeds that sit next to one already refined.
        if seeds
            .iter()
            .any(|(a, b)| ((a - alpha) / alpha).abs() < 0.02 && (b - beta).abs() <= 0.02 * b.max(1e-6 / (vmax * vmax)))
        {
            continue;
        }
        seeds.push((*alpha, *beta));
        restarts += 1;
        let half = coef[1].hypot(coef[2]);
        let delta = coef[2].atan2(-coef[1]);
        let x0 = [delta, *alpha, *beta, 2.0 * half, coef[0] - half];
        let fit = levenberg_marquardt(|p| data.residuals(p), &x0, &lower, &upper, &opts);
        if !fit.cost.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(c, _)| fit.cost < *c) {
            best = Some((fit.cost, fit.x));
        }
    }

    let Some((cost, p)) = best else {
        return Err(Error::Fit {
            reason: format!("no refinement converged after {restarts} restarts"),
            residual_rms: f64::NAN,
        });
    };
    let n = scan.len() as f64;
    let rms = (cost / n).sqrt();
    let (delta, alpha, beta, amp, bg) = (p[0], p[1], p[2], p[3], p[4]);

    if amp <= 1e-9 * y_scale || amp < 3.0 * rms {
        return Err(Error::Fit {
            reason: format!("no fringe in scan (fitted amplitude {amp:.3e})"),
            residual_rms: rms,
        });
    }
    let span = data.phase(vmax, alpha, beta) - data.phase(vmin, alpha, beta);
    if span < TAU * (1.0 - 1e-9) {
        return Err(Error::Fit {
            reason: format!("scan covers {:.3} fringe periods, need at least 1", span / TAU),
            residual_rms: rms,
        });
    }
    let offset = delta.rem_euclid(TAU);
    Ok(CalibrationFit {
        calib: ThermalCalib {
            xi0: offset / harmonic,
            alpha,
            beta,
        },
        amplitude: amp,
        background: bg,
        offset,
        harmonic,
        residual_norm: cost.sqrt(),
        residual_rms: rms,
        restarts,
    })
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    const TRUE: ThermalCalib = ThermalCalib {
        xi0: 0.3,
        alpha: 1.0,
        beta: 0.02,
    };

    fn synthetic(noise: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..=300)
            .map(|i| {
                let v = 8.0 * i as f64 / 300.0;
                let phase = calib_phase_from_voltage(&TRUE, v);
                let rate = 900.0 * (phase / 2.0).sin().powi(2) + 40.0;
                (v, rate * (1.0 + noise * normal.sample(&mut rng)))
            })
            .collect()
    }

    #[test]
    fn phase_model_limits() {
        assert_eq!(calib_phase_from_voltage(&TRUE, 0.0), 0.3);
        let quad = ThermalCalib { beta: 0.0, ..TRUE };
        assert_abs_diff_eq!(calib_phase_from_voltage(&quad, 3.0), 0.3 + 9.0, epsilon = 1e-15);
        let mut last = 0.3;
        for k in 1..60 {
            let p = calib_phase_from_voltage(&TRUE, k as f64 * 5.0);
            assert!(p >= last && p < TRUE.saturation());
            last = p;
        }
        assert_abs_diff_eq!(calib_phase_from_voltage(&TRUE, 1e6), TRUE.saturation(), epsilon = 1e-6);
    }

    #[test]
    fn voltage_inverse_round_trip() {
        assert_eq!(voltage_for_phase(&TRUE, 0.3).unwrap(), 0.0);
        for target in [-5.0, -0.5, 0.0, 0.29, 1.0, 3.0, 6.0, 12.5] {
            let v = voltage_for_phase(&TRUE, target).unwrap();
            assert!(v >= 0.0);
            let back = calib_phase_from_voltage(&TRUE, v);
            let diff = (back - target).rem_euclid(TAU);
            assert!(diff.min(TAU - diff) < 1e-9, "target {target}: got {back}");
        }
    }

    #[test]
    fn saturated_heater_rejects_phase() {
        // α/β = 2 rad: phases beyond ξ0 + 2 are unreachable on every branch.
        let c = ThermalCalib { xi0: 0.0, alpha: 0.2, beta: 0.1 };
        assert!(voltage_for_phase(&c, 1.5).is_ok());
        match voltage_for_phase(&c, 3.0) {
            Err(Error::Unreachable { saturation, .. }) => assert_abs_diff_eq!(saturation, 2.0),
            other => panic!("expected saturation error, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let fit = fit_calibration(&synthetic(0.0, 1), 1.0).unwrap();
        assert_abs_diff_eq!(fit.calib.xi0, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.calib.alpha, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.calib.beta, 0.02, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.amplitude, 900.0, epsilon = 1e-4);
    }

    #[test]
    fn noisy_fit_within_one_percent() {
        for seed in 0..5 {
            let fit = fit_calibration(&synthetic(0.01, seed), 1.0).unwrap();
            assert!((fit.calib.xi0 / 0.3 - 1.0).abs() < 0.01, "{fit:?}");
            assert!((fit.calib.alpha - 1.0).abs() < 0.01, "{fit:?}");
            assert!((fit.calib.beta / 0.02 - 1.0).abs() < 0.01, "{fit:?}");
        }
    }

    #[test]
    fn flat_scan_is_rejected() {
        let flat: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * 0.2, 500.0)).collect();
        assert!(matches!(fit_calibration(&flat, 1.0), Err(Error::Fit { .. })));
    }

    #[test]
    fn too_few_points() {
        let scan: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fit_calibration(&scan, 1.0), Err(Error::Validation(_))));
    }
}
