//! Experiment configuration: one JSON document shared by all subcommands.
//! Every section except `seed` has defaults matching the reproduction
//! scenario; see `docs/config.md` for the schema.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use bellgen_core::circuit::{
    generate_state, DetectorPair, PauliSetting, PhaseConfig, Shifter, SourceParams, TargetState, ThermalCalib,
};
use bellgen_core::quantum::TwoQubitKet;
use bellgen_core::sim::{Acquisition, DetectorBank, NoiseModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Named target (`"00"`, …, `"psi+"`); its phases come from the preset
    /// derivation. Mutually exclusive with `phases`.
    #[serde(default)]
    pub target: Option<TargetState>,
    /// Explicit phase set; the reference state is then the ideal output.
    #[serde(default)]
    pub phases: Option<PhaseConfig>,
    /// Passive pump phase assumed when deriving preset phases.
    #[serde(default)]
    pub theta1: f64,
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default = "scenario_detectors")]
    pub detectors: DetectorBank,
    #[serde(default)]
    pub noise: NoiseModel,
    /// On-chip pair rate reaching the output rails (Hz).
    #[serde(default = "default_pair_rate")]
    pub pair_rate_hz: f64,
    #[serde(default = "default_integration")]
    pub integration_s: f64,
    #[serde(default = "yes")]
    pub subtract_accidentals: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Heater calibrations; when present, reports include drive voltages.
    #[serde(default)]
    pub heaters: BTreeMap<Shifter, ThermalCalib>,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub noon: NoonSection,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub car: CarSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Free-form, inert metadata (wavelengths, device names, …).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn scenario_detectors() -> DetectorBank {
    DetectorBank {
        eta: [0.0100, 0.0095, 0.0105, 0.0098],
        window_s: 1e-9,
        dark_hz: 0.0,
    }
}

fn default_pair_rate() -> f64 {
    1e7
}

fn default_integration() -> f64 {
    2.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographySection {
    pub starts: usize,
    /// Monte Carlo replicas; 0 disables error bars.
    pub mc_samples: usize,
    pub mc_starts: usize,
    pub max_iter: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        Self {
            starts: 8,
            mc_samples: 50,
            mc_starts: 8,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoonSection {
    pub theta3_start: f64,
    pub theta3_stop: f64,
    pub points: usize,
    /// Detected two-photon rate feeding the fringe (Hz).
    pub rate_hz: f64,
    pub offset: f64,
    /// Overrides the top-level noise model for this measurement.
    pub noise: Option<NoiseModel>,
}

impl Default for NoonSection {
    fn default() -> Self {
        Self {
            theta3_start: 0.0,
            theta3_stop: PI,
            points: 31,
            rate_hz: 1000.0,
            offset: 0.0,
            noise: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Two-column CSV (volts, counts/s), optional header; relative paths
    /// resolve against the config file's directory.
    #[serde(default)]
    pub scan_file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticScan>,
    #[serde(default = "one")]
    pub harmonic: f64,
    /// Phases to convert into drive voltages with the fitted calibration.
    #[serde(default)]
    pub lookup_phases: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScan {
    pub shifter: Shifter,
    pub heater: ThermalCalib,
    #[serde(default)]
    pub voltage_start: f64,
    #[serde(default = "default_voltage_stop")]
    pub voltage_stop: f64,
    #[serde(default = "default_scan_points")]
    pub points: usize,
    /// Phases of the other shifters; defaults to balanced pumping with
    /// `θ2 = φ2 = 0`.
    #[serde(default)]
    pub base: Option<PhaseConfig>,
    #[serde(default = "default_scan_setting")]
    pub analysis: PauliSetting,
    #[serde(default = "default_monitor")]
    pub monitor: DetectorPair,
}

fn default_voltage_stop() -> f64 {
    10.0
}

fn default_scan_points() -> usize {
    201
}

fn default_scan_setting() -> PauliSetting {
    "ZZ".parse().expect("static label")
}

fn default_monitor() -> DetectorPair {
    DetectorPair::AC
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarSection {
    pub pgr_start_hz: f64,
    pub pgr_stop_hz: f64,
    pub points: usize,
}

impl Default for CarSection {
    fn default() -> Self {
        Self {
            pgr_start_hz: 1e4,
            pgr_stop_hz: 1e6,
            points: 21,
        }
    }
}

impl CarSection {
    /// Log-spaced rates; a single point uses `pgr_start_hz`.
    pub fn rates(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.pgr_start_hz],
            n => {
                let (a, b) = (self.pgr_start_hz.ln(), self.pgr_stop_hz.ln());
                let mut rates: Vec<f64> =
                    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
                rates[0] = self.pgr_start_hz;
                rates[n - 1] = self.pgr_stop_hz;
                rates
            }
        }
    }
}

/// Inclusive linear grid.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Parsed configuration plus what the command line layered on top.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Directory of the config file, for resolving relative paths.
    pub base_dir: PathBuf,
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                path: (path != ".").then_some(path),
                message: e.into_inner().to_string(),
            }
        })
    }

    /// SHA-256 of the canonical (sorted-key) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let ctx = |path: &'static str| move |e: bellgen_core::Error| CliError::config(path, e);
        if self.target.is_some() && self.phases.is_some() {
            return Err(CliError::config("phases", "give either `target` or `phases`, not both"));
        }
        if let Some(p) = &self.phases {
            p.validate().map_err(ctx("phases"))?;
        }
        if !self.theta1.is_finite() {
            return Err(CliError::config("theta1", "must be finite"));
        }
        self.source.validate().map_err(ctx("source"))?;
        self.detectors.validate().map_err(ctx("detectors"))?;
        self.noise.validate().map_err(ctx("noise"))?;
        if !(self.pair_rate_hz.is_finite() && self.pair_rate_hz >= 0.0) {
            return Err(CliError::config("pair_rate_hz", "must be finite and >= 0"));
        }
        if !(self.integration_s.is_finite() && self.integration_s > 0.0) {
            return Err(CliError::config("integration_s", "must be > 0"));
        }
        for (shifter, calib) in &self.heaters {
            calib
                .validate()
                .map_err(|e| CliError::config(format!("heaters.{}", shifter.as_str()), e))?;
        }
        let t = &self.tomography;
        if t.starts == 0 || t.mc_starts == 0 {
            return Err(CliError::config("tomography.starts", "need at least one start"));
        }
        if t.mc_samples != 0 && t.mc_samples < bellgen_core::tomography::MIN_MC_SAMPLES {
            return Err(CliError::config(
                "tomography.mc_samples",
                format!(
                    "use 0 to disable or at least {}",
                    bellgen_core::tomography::MIN_MC_SAMPLES
                ),
            ));
        }
        if let Some(nm) = &self.noon.noise {
            nm.validate().map_err(ctx("noon.noise"))?;
        }
        if !(self.noon.rate_hz.is_finite() && self.noon.rate_hz >= 0.0) {
            return Err(CliError::config("noon.rate_hz", "must be finite and >= 0"));
        }
        let c = &self.car;
        if !(c.pgr_start_hz > 0.0 && c.pgr_stop_hz > 0.0 && c.pgr_start_hz.is_finite() && c.pgr_stop_hz.is_finite()) {
            return Err(CliError::config("car", "pair generation rates must be finite and > 0"));
        }
        if let Some(cal) = &self.calibration {
            if cal.scan_file.is_some() == cal.synthetic.is_some() {
                return Err(CliError::config(
                    "calibration",
                    "give exactly one of `scan_file` or `synthetic`",
                ));
            }
            if let Some(s) = &cal.synthetic {
                s.heater.validate().map_err(ctx("calibration.synthetic.heater"))?;
            }
        }
        Ok(())
    }

    pub fn acquisition(&self) -> Acquisition {
        Acquisition {
            detectors: self.detectors,
            noise: self.noise,
            pair_rate_hz: self.pair_rate_hz,
            integration_s: self.integration_s,
            subtract_accidentals: self.subtract_accidentals,
        }
    }

    /// Phase settings and reference ket for the configured target.
    pub fn resolve_target(&self) -> Result<(String, PhaseConfig, TwoQubitKet), CliError> {
        match (self.target, self.phases) {
            (Some(t), None) => {
                let phases = t
                    .preset_phases(&self.source, self.theta1)
                    .map_err(|e| CliError::config("target", e))?;
                Ok((t.label(), phases, t.ket()))
            }
            (None, Some(p)) => {
                let ket = generate_state(&p, &self.source).map_err(CliError::core("phases"))?;
                Ok(("custom".to_string(), p, ket))
            }
            _ => Err(CliError::config("target", "missing: set `target` or `phases`")),
        }
    }
}

/// Reads, validates and hashes a config; `seed_override` wins over the file.
pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if seed_override.is_some() {
        config.seed = seed_override;
    }
    let seed = config
        .seed
        .ok_or_else(|| CliError::config("seed", "missing: set `seed` in the config or pass --seed"))?;
    config.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let hash = config.hash();
    Ok(Loaded {
        config,
        seed,
        base_dir,
        hash,
    })
}
