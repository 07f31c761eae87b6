//! The five pipelines behind the subcommands. Each returns an [`Outcome`]
//! holding the canonical JSON report, an optional CSV table and a short
//! human summary; writing files is left to the caller.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use bellgen_core::circuit::{
    balanced_phi1, bell_decompose, fit_calibration, generate_state, voltage_for_phase, AnalysisPhases, DetectorPair,
    PhaseConfig, TargetState,
};
use bellgen_core::quantum::{BellLabel, TwoQubitKet, C64};
use bellgen_core::rng::derive_seed;
use bellgen_core::sim::{
    acquire_tomography, apply_noise, calibration_scan, car_sweep, fit_fringe_period, loglog_slope, noon_fringe,
    visibility, ScanSetup,
};
use bellgen_core::tomography::{mle_reconstruct, monte_carlo_uncertainty, Metrics, MleOptions};
use serde_json::{json, Value};

use crate::config::{linear_grid, Loaded};
use crate::error::CliError;
use crate::report::{complex_pair, csv_number, matrix_pairs, render_csv, to_canonical};

const STREAM_ACQUIRE: u64 = 1;
const STREAM_STARTS: u64 = 2;
const STREAM_MONTE_CARLO: u64 = 3;
const STREAM_NOON: u64 = 4;
const STREAM_SCAN: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Tomography,
    Noon,
    Calibrate,
    CarSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Tomography => "tomography",
            Command::Noon => "noon",
            Command::Calibrate => "calibrate",
            Command::CarSweep => "car-sweep",
        }
    }

    /// Stem of the report files.
    pub fn file_stem(self) -> &'static str {
        match self {
            Command::CarSweep => "car_sweep",
            other => other.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub csv: Option<String>,
    /// Additional `(file name, contents)` pairs.
    pub extra_files: Vec<(String, String)>,
    pub summary: String,
    pub warnings: Vec<String>,
}

pub fn run(command: Command, loaded: &Loaded) -> Result<Outcome, CliError> {
    let mut outcome = match command {
        Command::Generate => generate(loaded),
        Command::Tomography => tomography(loaded),
        Command::Noon => noon(loaded),
        Command::Calibrate => calibrate(loaded),
        Command::CarSweep => car(loaded),
    }?;
    if let Value::Object(map) = &mut outcome.report {
        map.insert("command".into(), json!(command.name()));
        map.insert("config_hash".into(), json!(loaded.hash));
        map.insert("seed".into(), json!(loaded.seed));
        map.insert("warnings".into(), json!(outcome.warnings));
    }
    outcome.report = to_canonical(&outcome.report);
    Ok(outcome)
}

/// Rotates the global phase so the largest amplitude is real and positive.
fn fix_global_phase(psi: &TwoQubitKet) -> [C64; 4] {
    let a = psi.amplitudes();
    let lead = a
        .iter()
        .copied()
        .fold(C64::new(0.0, 0.0), |best, z| if z.norm() > best.norm() + 1e-12 { z } else { best });
    let phase = C64::from_polar(1.0, -lead.arg());
    a.map(|z| z * phase)
}

fn heater_voltages(loaded: &Loaded, phases: &PhaseConfig) -> Result<BTreeMap<String, f64>, CliError> {
    loaded
        .config
        .heaters
        .iter()
        .map(|(shifter, calib)| {
            voltage_for_phase(calib, phases.get(*shifter))
                .map(|v| (shifter.as_str().to_string(), v))
                .map_err(|e| CliError::config(format!("heaters.{}", shifter.as_str()), e))
        })
        .collect()
}

fn generate(loaded: &Loaded) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let (label, phases, target) = cfg.resolve_target()?;
    let psi = generate_state(&phases, &cfg.source).map_err(CliError::core("generate"))?;
    let amplitudes = fix_global_phase(&psi);
    let bell = bell_decompose(&psi);
    let decomposition: BTreeMap<&str, Value> = BellLabel::ALL
        .iter()
        .zip(bell.0)
        .map(|(l, z)| (l.as_str(), json!({"re": z.re, "im": z.im, "magnitude": z.norm()})))
        .collect();
    let (r_a, r_b) = cfg.source.squeezing(phases.phi1);
    let fidelity = psi.overlap(&target);
    let report = json!({
        "target": label,
        "phases": phases,
        "heater_voltages": heater_voltages(loaded, &phases)?,
        "squeezing": {"r_a": r_a, "r_b": r_b},
        "state": {
            "basis": ["00", "01", "10", "11"],
            "amplitudes": amplitudes.map(complex_pair),
        },
        "bell_decomposition": decomposition,
        "fidelity_to_target": fidelity,
    });
    let csv = render_csv(
        &["basis", "re", "im", "probability"],
        ["00", "01", "10", "11"].iter().zip(amplitudes).map(|(b, z)| {
            vec![b.to_string(), csv_number(z.re), csv_number(z.im), csv_number(z.norm_sqr())]
        }),
    );
    let mut summary = format!("target {label}: overlap with ideal target {fidelity:.12}\n");
    for (b, z) in ["00", "01", "10", "11"].iter().zip(amplitudes) {
        let _ = writeln!(summary, "  |{b}⟩  {:+.6} {:+.6}i", z.re, z.im);
    }
    Ok(Outcome {
        report,
        csv: Some(csv),
        extra_files: Vec::new(),
        summary,
        warnings: Vec::new(),
    })
}

fn metrics_json(m: &Metrics) -> Value {
    json!({
        "fidelity": m.fidelity,
        "concurrence": m.concurrence,
        "entropy_a": m.entropy_a,
        "entropy_b": m.entropy_b,
        "purity": m.purity,
    })
}

fn tomography(loaded: &Loaded) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let (label, phases, target) = cfg.resolve_target()?;
    let acq = cfg.acquisition();
    let records = acquire_tomography(&phases, &cfg.source, &acq, derive_seed(loaded.seed, STREAM_ACQUIRE))
        .map_err(CliError::core("acquisition"))?;
    let psi = generate_state(&phases, &cfg.source).map_err(CliError::core("generate"))?;
    let truth = apply_noise(&psi, &acq.noise).map_err(CliError::core("noise"))?;

    let section = cfg.tomography;
    let opts = MleOptions {
        starts: section.starts,
        max_iter: section.max_iter,
        seed: derive_seed(loaded.seed, STREAM_STARTS),
        ..MleOptions::default()
    };
    let result = mle_reconstruct(&records, &opts).map_err(|source| {
        let diag = json!({"error": source.to_string(), "records": records});
        CliError::Core {
            context: "tomography",
            source,
            diagnostics: Some((
                "tomography-diagnostics.json".into(),
                crate::report::render_json(&to_canonical(&diag)),
            )),
        }
    })?;
    let metrics = result.metrics(&target);
    let uncertainties = if section.mc_samples > 0 {
        let mc_opts = MleOptions {
            starts: section.mc_starts,
            ..opts
        };
        Some(
            monte_carlo_uncertainty(
                &records,
                &target,
                section.mc_samples,
                derive_seed(loaded.seed, STREAM_MONTE_CARLO),
                &mc_opts,
            )
            .map_err(CliError::core("monte_carlo"))?,
        )
    } else {
        None
    };

    let norms: BTreeMap<&str, f64> = DetectorPair::ALL
        .iter()
        .map(|p| (p.as_str(), result.norms[p.index()]))
        .collect();
    let report = json!({
        "target": label,
        "phases": phases,
        "heater_voltages": heater_voltages(loaded, &phases)?,
        "acquisition": acq,
        "records": records,
        "reconstruction": {
            "rho": matrix_pairs(result.rho.matrix()),
            "eigenvalues": result.rho.eigenvalues(),
            "norms": norms,
            "residual": result.residual,
            "best_start": result.best_start,
            "starts": result.starts,
        },
        "metrics": metrics_json(&metrics),
        "uncertainties": uncertainties,
        "model_truth": metrics_json(&Metrics::evaluate(&truth, &target)),
    });

    let std = |f: fn(&bellgen_core::tomography::Uncertainties) -> f64| uncertainties.as_ref().map_or(f64::NAN, f);
    let rows = [
        ("fidelity", metrics.fidelity, std(|u| u.fidelity)),
        ("concurrence", metrics.concurrence, std(|u| u.concurrence)),
        ("entropy_a", metrics.entropy_a, std(|u| u.entropy_a)),
        ("entropy_b", metrics.entropy_b, std(|u| u.entropy_b)),
        ("purity", metrics.purity, f64::NAN),
    ];
    let csv = render_csv(
        &["metric", "value", "std"],
        rows.iter().map(|(n, v, s)| vec![n.to_string(), csv_number(*v), csv_number(*s)]),
    );
    let cell = |v: f64, s: f64| {
        if s.is_finite() {
            format!("{v:.4} ± {s:.4}")
        } else {
            format!("{v:.4}")
        }
    };
    let mut summary = format!(
        "{:<8}{:<18}{:<18}{:<18}{:<18}\n",
        "state", "F", "C", "S_A", "S_B"
    );
    let _ = writeln!(
        summary,
        "{:<8}{:<18}{:<18}{:<18}{:<18}",
        label,
        cell(rows[0].1, rows[0].2),
        cell(rows[1].1, rows[1].2),
        cell(rows[2].1, rows[2].2),
        cell(rows[3].1, rows[3].2),
    );
    let records_json = crate::report::render_json(&to_canonical(&records));
    Ok(Outcome {
        report,
        csv: Some(csv),
        extra_files: vec![("records.json".into(), records_json)],
        summary,
        warnings: Vec::new(),
    })
}

fn noon(loaded: &Loaded) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let section = cfg.noon;
    let nm = section.noise.unwrap_or(cfg.noise);
    let grid = linear_grid(section.theta3_start, section.theta3_stop, section.points);
    let points = noon_fringe(
        &grid,
        &nm,
        section.rate_hz,
        cfg.integration_s,
        section.offset,
        derive_seed(loaded.seed, STREAM_NOON),
    )
    .map_err(CliError::core("noon"))?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.counts)).collect();
    let vis = visibility(&xy).map_err(CliError::core("noon.visibility"))?;
    let period = fit_fringe_period(&xy).map_err(CliError::core("noon.period"))?;
    let report = json!({
        "noise": nm,
        "fringe_coherence": nm.visibility * (-2.0 * nm.phase_jitter * nm.phase_jitter).exp(),
        "visibility": vis,
        "period": period,
        "points": points,
    });
    let csv = render_csv(
        &["theta3", "counts", "expected"],
        points
            .iter()
            .map(|p| vec![csv_number(p.x), csv_number(p.counts), csv_number(p.expected)]),
    );
    let summary = format!(
        "visibility (fit) {:.4} ± {:.4}; hybrid {:.4} ± {:.4}; period {:.4} ± {:.4} rad\n",
        vis.fit, vis.fit_std, vis.hybrid, vis.hybrid_std, period.period, period.period_std
    );
    Ok(Outcome {
        report,
        csv: Some(csv),
        extra_files: Vec::new(),
        summary,
        warnings: Vec::new(),
    })
}

/// Reads a two-column `volts, counts/s` CSV; a non-numeric first row is
/// treated as a header.
pub fn read_scan(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let io = |e: &dyn std::fmt::Display| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io(&e))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| io(&e))?;
        if row.len() < 2 {
            return Err(io(&format!("line {}: expected two columns", i + 1)));
        }
        match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(v), Ok(r)) => out.push((v, r)),
            _ if i == 0 => continue,
            _ => return Err(io(&format!("line {}: non-numeric value", i + 1))),
        }
    }
    Ok(out)
}

fn calibrate(loaded: &Loaded) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let section = cfg
        .calibration
        .as_ref()
        .ok_or_else(|| CliError::config("calibration", "missing: add a `calibration` section"))?;
    let (origin, scan, truth) = if let Some(file) = &section.scan_file {
        let path = loaded.base_dir.join(file);
        ("file", read_scan(&path)?, None)
    } else {
        let s = section.synthetic.as_ref().expect("validated: one scan source");
        let base = match s.base {
            Some(b) => b,
            None => PhaseConfig {
                phi1: balanced_phi1(&cfg.source).unwrap_or(std::f64::consts::FRAC_PI_2),
                ..PhaseConfig::default()
            },
        }
        .with_analysis(AnalysisPhases::for_setting(s.analysis));
        let setup = ScanSetup {
            shifter: s.shifter,
            calib: s.heater,
            base,
            source: cfg.source,
            acquisition: cfg.acquisition(),
            monitor: s.monitor,
        };
        let voltages = linear_grid(s.voltage_start, s.voltage_stop, s.points);
        let pts = calibration_scan(&setup, &voltages, derive_seed(loaded.seed, STREAM_SCAN))
            .map_err(CliError::core("calibration.synthetic"))?;
        ("synthetic", pts.iter().map(|p| (p.voltage, p.rate)).collect(), Some(s.heater))
    };
    let fit = fit_calibration(&scan, section.harmonic).map_err(CliError::core("calibration"))?;
    let lookup = section
        .lookup_phases
        .iter()
        .enumerate()
        .map(|(i, &phase)| {
            voltage_for_phase(&fit.calib, phase)
                .map(|v| json!({"phase": phase, "voltage": v}))
                .map_err(|e| CliError::config(format!("calibration.lookup_phases[{i}]"), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = json!({
        "scan_source": origin,
        "points": scan.len(),
        "fit": fit,
        "saturation_phase": fit.calib.saturation(),
        "truth": truth,
        "lookup": lookup,
    });
    let csv = render_csv(
        &["voltage", "rate", "fit"],
        scan.iter()
            .map(|&(v, r)| vec![csv_number(v), csv_number(r), csv_number(fit.predict(v))]),
    );
    let summary = format!(
        "xi0 {:.6} rad, alpha {:.6} rad/V², beta {:.6} /V² (rms residual {:.3e}, {} restarts)\n",
        fit.calib.xi0, fit.calib.alpha, fit.calib.beta, fit.residual_rms, fit.restarts
    );
    Ok(Outcome {
        report,
        csv: Some(csv),
        extra_files: Vec::new(),
        summary,
        warnings: Vec::new(),
    })
}

fn car(loaded: &Loaded) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let rates = cfg.car.rates();
    let points = car_sweep(&rates, &cfg.detectors).map_err(CliError::core("car"))?;
    let slope = loglog_slope(&points);
    let mut warnings = Vec::new();
    if points.iter().any(|p| p.car.is_infinite()) {
        warnings.push("accidental rate is zero (coincidence window 0): CAR is unbounded, written as inf in CSV and null in JSON".to_string());
    }
    let report = json!({
        "detectors": cfg.detectors,
        "rows": points.iter().map(|p| json!({"pgr_hz": p.pgr, "car": p.car})).collect::<Vec<_>>(),
        "loglog_slope": slope,
    });
    let csv = render_csv(
        &["pgr_hz", "car"],
        points.iter().map(|p| vec![csv_number(p.pgr), csv_number(p.car)]),
    );
    let summary = match slope {
        Some(s) => format!("{} points, log-log slope {s:.4}\n", points.len()),
        None => format!("{} point(s), slope undefined\n", points.len()),
    };
    Ok(Outcome {
        report,
        csv: Some(csv),
        extra_files: Vec::new(),
        summary,
        warnings,
    })
}

/// Human-readable description of what a command will do with this config.
pub fn explain(command: Command, loaded: &Loaded) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let mut s = String::new();
    let _ = writeln!(s, "command: {}  seed: {}  config sha256: {}", command.name(), loaded.seed, loaded.hash);
    let describe_target = |s: &mut String| -> Result<(), CliError> {
        let (label, p, _) = cfg.resolve_target()?;
        let _ = writeln!(s, "target: {label}");
        let _ = writeln!(
            s,
            "phases: phi1 {:.6}  theta1 {:.6}  theta2 {:.6}  phi2 {:.6}",
            p.phi1, p.theta1, p.theta2, p.phi2
        );
        if let Some(t) = cfg.target {
            let _ = writeln!(s, "{}", preset_note(t));
        }
        Ok(())
    };
    match command {
        Command::Generate => {
            describe_target(&mut s)?;
            let _ = writeln!(s, "computes the post-selected two-photon state, its Bell-basis coefficients and the overlap with the target.");
        }
        Command::Tomography => {
            describe_target(&mut s)?;
            let t = cfg.tomography;
            let _ = writeln!(
                s,
                "simulates 9 Pauli settings × 4 detector pairs at {} Hz pair rate for {} s each (visibility {}, jitter {} rad, accidentals subtracted: {}),",
                cfg.pair_rate_hz, cfg.integration_s, cfg.noise.visibility, cfg.noise.phase_jitter, cfg.subtract_accidentals
            );
            let _ = writeln!(
                s,
                "then reconstructs ρ = T†T/Tr(T†T) with 4 detector-pair norms from {} starts and {} Poisson resamples ({} starts each).",
                t.starts, t.mc_samples, t.mc_starts
            );
        }
        Command::Noon => {
            let n = cfg.noon;
            let _ = writeln!(
                s,
                "samples the two-photon fringe (1 + V cos(2θ3 + δ))/2 at {} points over [{}, {}] rad, {} Hz for {} s per point, then fits visibility and period.",
                n.points, n.theta3_start, n.theta3_stop, n.rate_hz, cfg.integration_s
            );
        }
        Command::Calibrate => {
            let _ = writeln!(s, "fits rate = A·sin²((m·ξ(V) + δ)/2) + B with ξ(V) = ξ0 + αV²/(1 + βV²); ξ0 is reported as δ/m.");
        }
        Command::CarSweep => {
            let c = cfg.car;
            let _ = writeln!(
                s,
                "evaluates CAR = true / accidental coincidences for {} rates in [{}, {}] Hz with a {} s window and fits the log-log slope.",
                c.points, c.pgr_start_hz, c.pgr_stop_hz, cfg.detectors.window_s
            );
        }
    }
    Ok(s)
}

fn preset_note(t: TargetState) -> &'static str {
    match t {
        TargetState::Basis(0) => "preset: only source A pumped (φ1 = π); φ2 = π routes both photons to the logical-0 rails. With φ2 = 0 the same pump gives |01⟩, so φ2 = 0 cannot serve |00⟩ and |11⟩ alike.",
        TargetState::Basis(1) => "preset: only source A pumped (φ1 = π); φ2 = 0 sends the idler to rail d.",
        TargetState::Basis(2) => "preset: only source B pumped (φ1 = 0); φ2 = 0, θ2 = π.",
        TargetState::Basis(_) => "preset: only source B pumped (φ1 = 0); φ2 = π flips the idler rail so source B yields |11⟩.",
        TargetState::Bell(_) => "preset: φ1 = 2·atan(η_b/η_a) equalises the two sources' pair amplitudes; φ2 selects Φ (π) or Ψ (0) and θ2 the relative sign, shifted by −θ1/2.",
    }
}
