//! Maximum-likelihood two-qubit tomography from the 36 coincidence counts of
//! the nine Pauli-pair settings.
//!
//! The density matrix is parametrised as `ρ = T†T / Tr(T†T)` with `T` lower
//! triangular, so every parameter vector maps to a physical state. Each
//! detector pair carries a free normalisation `N_jk` absorbing its relative
//! efficiency. Expected counts are
//!
//! ```text
//! C̃_{jk,ℓ} = N_jk p_{jk,ℓ} · Σ C / Σ N p,     p_{jk,ℓ} = Tr(ρ Π_{jk,ℓ})
//! ```
//!
//! and the objective is the squared distance `Σ (C − C̃)²`, minimised over
//! the 16 `T` parameters and the 4 norms.

use nalgebra::Vector4;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{detector_state, AnalysisPhases, DetectorPair, PauliSetting};
use crate::error::{Error, Result};
use crate::optim::{minimize_bounded, LbfgsOptions};
use crate::quantum::{
    c, concurrence, fidelity, kron, partial_trace, pauli_x, pauli_y, pauli_z, von_neumann_entropy,
    DensityMatrix, Mat2, Mat4, Qubit, TwoQubitKet, C64,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sim::CoincidenceRecord;

/// Lower and upper bound on each detector-pair norm.
pub const NORM_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// Fewest Monte Carlo resamples accepted by [`monte_carlo_uncertainty`].
pub const MIN_MC_SAMPLES: usize = 50;

/// Strictly lower-triangular positions in parameter order.
const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

/// The 16 reals of a lower-triangular `T`: four real diagonal entries
/// followed by `(re, im)` of `T[1,0], T[2,0], T[2,1], T[3,0], T[3,1], T[3,2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TParams(pub [f64; 16]);

impl TParams {
    pub fn identity() -> Self {
        let mut p = [0.0; 16];
        p[..4].fill(1.0);
        Self(p)
    }

    pub fn matrix(&self) -> Mat4 {
        let p = &self.0;
        let mut t = Mat4::zeros();
        for i in 0..4 {
            t[(i, i)] = c(p[i], 0.0);
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            t[(i, j)] = c(p[4 + 2 * k], p[5 + 2 * k]);
        }
        t
    }

    /// Reads the lower triangle of `t`; diagonal imaginary parts are dropped.
    pub fn from_matrix(t: &Mat4) -> Self {
        let mut p = [0.0; 16];
        for i in 0..4 {
            p[i] = t[(i, i)].re;
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            p[4 + 2 * k] = t[(i, j)].re;
            p[5 + 2 * k] = t[(i, j)].im;
        }
        Self(p)
    }
}

/// `T†T / Tr(T†T)`.
pub fn rho_from_t(t: &TParams) -> Result<DensityMatrix> {
    let m = t.matrix();
    let g = m.adjoint() * m;
    let z = g.trace().re;
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::degenerate("T parameters are all zero"));
    }
    DensityMatrix::new(g.unscale(z))
}

/// Lower-triangular `T` with `T†T = ρ`.
///
/// Runs a Cholesky factorisation of the index-reversed matrix `JρJ = LL†`
/// and returns `T = J L† J`. Columns whose pivot vanishes (rank deficiency)
/// are left at zero.
pub fn t_from_rho(rho: &DensityMatrix) -> TParams {
    let m = rho.matrix();
    let r = Mat4::from_fn(|i, j| m[(3 - i, 3 - j)]);
    let mut l = Mat4::zeros();
    for j in 0..4 {
        let mut d = r[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 1e-12 {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = c(djj, 0.0);
        for i in j + 1..4 {
            let mut s = r[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    let la = l.adjoint();
    let t = Mat4::from_fn(|i, j| la[(3 - i, 3 - j)]);
    TParams::from_matrix(&t)
}

/// Product-state kets `u` with `Π = u u†`, indexed `[setting][pair]`.
fn projector_kets() -> [[Vector4<C64>; 4]; 9] {
    PauliSetting::all().map(|s| {
        let ph = AnalysisPhases::for_setting(s);
        DetectorPair::ALL.map(|p| {
            let ua = detector_state(ph.phi3, ph.theta3, p.rail_a());
            let ub = detector_state(ph.phi4, ph.theta4, p.rail_b());
            *ua.tensor(&ub).vector()
        })
    })
}

/// Counts arranged `[setting.index()][pair.index()]`, checked for
/// completeness (each of the nine settings exactly once).
fn count_table(records: &[CoincidenceRecord]) -> Result<[[f64; 4]; 9]> {
    if records.len() != 9 {
        return Err(Error::validation(format!(
            "tomography needs 9 settings, got {} records",
            records.len()
        )));
    }
    let mut table = [[f64::NAN; 4]; 9];
    let mut seen = [false; 9];
    for r in records {
        r.validate()?;
        let i = r.setting.index();
        if seen[i] {
            return Err(Error::validation(format!("setting {} appears twice", r.setting)));
        }
        seen[i] = true;
        table[i] = r.counts;
    }
    let total: f64 = table.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::validation("all coincidence counts are zero"));
    }
    Ok(table)
}

/// Precomputed data for repeated objective evaluations.
struct Problem {
    counts: [f64; 36],
    total: f64,
    kets: [Vector4<C64>; 36],
}

impl Problem {
    fn new(records: &[CoincidenceRecord]) -> Result<Self> {
        let table = count_table(records)?;
        let kets = projector_kets();
        let mut counts = [0.0; 36];
        let mut flat = [Vector4::zeros(); 36];
        for s in 0..9 {
            for p in 0..4 {
                counts[4 * s + p] = table[s][p];
                flat[4 * s + p] = kets[s][p];
            }
        }
        Ok(Self {
            total: counts.iter().sum(),
            counts,
            kets: flat,
        })
    }

    /// Objective divided by `(Σ C)²`, so its scale is independent of the
    /// number of counts. Writes the gradient with respect to the 16 `T`
    /// parameters followed by the 4 log-norms when `grad` is given.
    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut p16 = [0.0; 16];
        p16.copy_from_slice(&x[..16]);
        let t = TParams(p16).matrix();
        let z: f64 = t.iter().map(|v| v.norm_sqr()).sum();
        if !(z > 0.0 && z.is_finite()) {
            return f64::INFINITY;
        }
        let norms: [f64; 4] = [0, 1, 2, 3].map(|i| x[16 + i].exp());
        let mut v = [Vector4::<C64>::zeros(); 36];
        let mut prob = [0.0; 36];
        for m in 0..36 {
            v[m] = t * self.kets[m];
            prob[m] = v[m].norm_squared() / z;
        }
        let s = self.total;
        let d: f64 = (0..36).map(|m| norms[m % 4] * prob[m]).sum();
        if !(d > 0.0) {
            return f64::INFINITY;
        }
        let mut value = 0.0;
        let mut g = [0.0; 36];
        let mut model = [0.0; 36];
        for m in 0..36 {
            model[m] = s * norms[m % 4] * prob[m] / d;
            let r = self.counts[m] - model[m];
            value += r * r;
            g[m] = -2.0 * r;
        }
        let scale = 1.0 / (s * s);
        if let Some(out) = grad {
            let h: f64 = (0..36).map(|m| g[m] * model[m]).sum::<f64>() / s;
            // dL/dp_m and dL/dN_m share the factor (g_m − h)·S/D.
            let mut a = [0.0; 36];
            let mut dn = [0.0; 4];
            for m in 0..36 {
                let common = (g[m] - h) * s / d;
                a[m] = common * norms[m % 4];
                dn[m % 4] += common * prob[m];
            }
            let mut gm = Mat4::zeros();
            let mut ap = 0.0;
            for m in 0..36 {
                gm += (v[m] * self.kets[m].adjoint()).scale(a[m]);
                ap += a[m] * prob[m];
            }
            let gt = (gm - t.scale(ap)).scale(2.0 / z);
            for i in 0..4 {
                out[i] = gt[(i, i)].re * scale;
            }
            for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
                out[4 + 2 * k] = gt[(i, j)].re * scale;
                out[5 + 2 * k] = gt[(i, j)].im * scale;
            }
            for i in 0..4 {
                out[16 + i] = dn[i] * norms[i] * scale;
            }
        }
        value * scale
    }
}

/// `Σ (C − C̃)²` over the 36 counts.
pub fn likelihood(t: &TParams, norms: &[f64; 4], records: &[CoincidenceRecord]) -> Result<f64> {
    if norms.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::validation("norms must be positive and finite"));
    }
    rho_from_t(t)?;
    let problem = Problem::new(records)?;
    let mut x = [0.0; 20];
    x[..16].copy_from_slice(&t.0);
    for i in 0..4 {
        x[16 + i] = norms[i].ln();
    }
    Ok(problem.evaluate(&x, None) * problem.total * problem.total)
}

fn pauli_basis() -> [Mat2; 4] {
    [Mat2::identity(), pauli_x(), pauli_y(), pauli_z()]
}

/// Direct Pauli-expectation inversion, clipped to the nearest physical state.
pub fn linear_inversion(records: &[CoincidenceRecord]) -> Result<DensityMatrix> {
    let table = count_table(records)?;
    // expectation[i][j] for σ_i ⊗ σ_j, i, j ∈ {I, X, Y, Z}.
    let mut sums = [[0.0; 4]; 4];
    let mut weights = [[0.0; 4]; 4];
    for s in PauliSetting::all() {
        let n = table[s.index()];
        let tot: f64 = n.iter().sum();
        if tot <= 0.0 {
            continue;
        }
        let a = s.a as usize + 1;
        let b = s.b as usize + 1;
        let estimates = [
            (0, b, (n[0] - n[1] + n[2] - n[3]) / tot),
            (a, 0, (n[0] + n[1] - n[2] - n[3]) / tot),
            (a, b, (n[0] - n[1] - n[2] + n[3]) / tot),
        ];
        for (i, j, e) in estimates {
            sums[i][j] += e;
            weights[i][j] += 1.0;
        }
    }
    let basis = pauli_basis();
    let mut m = kron(&basis[0], &basis[0]).scale(0.25);
    for i in 0..4 {
        for j in 0..4 {
            if (i, j) != (0, 0) && weights[i][j] > 0.0 {
                m += kron(&basis[i], &basis[j]).scale(0.25 * sums[i][j] / weights[i][j]);
            }
        }
    }
    DensityMatrix::nearest_physical(&m).or_else(|_| Ok(DensityMatrix::maximally_mixed()))
}

/// `T` factor of the linear-inversion estimate.
pub fn linear_inversion_seed(records: &[CoincidenceRecord]) -> Result<TParams> {
    Ok(t_from_rho(&linear_inversion(records)?))
}

/// Per-pair norms implied by a state: observed pair totals over predicted
/// pair probabilities, scaled so a perfectly balanced bank gives 1.
fn norms_for_state(table: &[[f64; 4]; 9], rho: &DensityMatrix) -> [f64; 4] {
    let kets = projector_kets();
    let total: f64 = table.iter().flatten().sum();
    [0, 1, 2, 3].map(|p| {
        let counts: f64 = (0..9).map(|s| table[s][p]).sum();
        let probs: f64 = (0..9)
            .map(|s| {
                let u = kets[s][p];
                (u.adjoint() * rho.matrix() * u)[(0, 0)].re
            })
            .sum();
        let n = if probs > 1e-9 {
            counts / probs / (total / 9.0)
        } else {
            1.0
        };
        if n.is_finite() && n > 0.0 {
            n.clamp(NORM_BOUNDS.0, NORM_BOUNDS.1)
        } else {
            1.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions {
    /// Number of starting points: identity-mixed, linear inversion, then
    /// random draws.
    pub starts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Seed for the random starts.
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iter: 2000,
            rel_tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fidelity: f64,
    pub concurrence: f64,
    /// Entropy of qubit A's reduced state (nats).
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub purity: f64,
}

impl Metrics {
    pub fn evaluate(rho: &DensityMatrix, target: &TwoQubitKet) -> Self {
        Self {
            fidelity: fidelity(rho, target),
            concurrence: concurrence(rho),
            entropy_a: von_neumann_entropy(&partial_trace(rho, Qubit::A)),
            entropy_b: von_neumann_entropy(&partial_trace(rho, Qubit::B)),
            purity: rho.purity(),
        }
    }
}

/// One-sigma Monte Carlo spreads of the reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainties {
    pub fidelity: f64,
    pub concurrence: f64,
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub samples: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    /// Norms for `(a,c), (a,d), (b,c), (b,d)`, with their product fixed to
    /// the linear-inversion estimate.
    pub norms: [f64; 4],
    /// `Σ (C − C̃)²` at the optimum.
    pub residual: f64,
    pub best_start: usize,
    pub starts: Vec<StartReport>,
}

impl TomographyResult {
    pub fn metrics(&self, target: &TwoQubitKet) -> Metrics {
        Metrics::evaluate(&self.rho, target)
    }
}

fn random_start(seed: u64) -> TParams {
    let mut rng = rng_from_seed(seed);
    let mut p = [0.0; 16];
    for v in p.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    TParams(p)
}

/// Multi-start bounded minimisation over `T` and the four log-norms.
///
/// Starts run in parallel; the winner is the lowest objective among
/// converged starts, ties going to the lower start index, so the output does
/// not depend on scheduling.
pub fn mle_reconstruct(records: &[CoincidenceRecord], opts: &MleOptions) -> Result<TomographyResult> {
    if opts.starts == 0 {
        return Err(Error::validation("at least one start is required"));
    }
    let problem = Problem::new(records)?;
    let table = count_table(records)?;
    let lin = linear_inversion(records)?;
    let lin_norms = norms_for_state(&table, &lin);

    let starts: Vec<(TParams, [f64; 4])> = (0..opts.starts)
        .map(|i| match i {
            0 => (TParams::identity(), [1.0; 4]),
            1 => (t_from_rho(&lin), lin_norms),
            _ => (random_start(derive_seed(opts.seed, i as u64)), [1.0; 4]),
        })
        .collect();

    let (lo, hi) = (NORM_BOUNDS.0.ln(), NORM_BOUNDS.1.ln());
    let mut lower = [f64::NEG_INFINITY; 20];
    let mut upper = [f64::INFINITY; 20];
    lower[16..].fill(lo);
    upper[16..].fill(hi);
    let lbfgs = LbfgsOptions {
        max_iter: opts.max_iter,
        rel_tol: opts.rel_tol,
        ..LbfgsOptions::default()
    };

    let runs: Vec<_> = starts
        .par_iter()
        .map(|(t0, n0)| {
            let mut x0 = [0.0; 20];
            x0[..16].copy_from_slice(&t0.0);
            for i in 0..4 {
                x0[16 + i] = n0[i].ln();
            }
            minimize_bounded(
                |x, g| problem.evaluate(x, Some(g)),
                &x0,
                &lower,
                &upper,
                &lbfgs,
            )
        })
        .collect();

    let reports: Vec<StartReport> = runs
        .iter()
        .map(|m| StartReport {
            objective: m.value * problem.total * problem.total,
            iterations: m.iterations,
            converged: m.converged && m.value.is_finite(),
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .filter(|(i, _)| reports[*i].converged)
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        let diag: Vec<String> = reports
            .iter()
            .enumerate()
            .map(|(i, r)| format!("start {i}: objective {:.4e} after {} iterations", r.objective, r.iterations))
            .collect();
        return Err(Error::Reconstruction(format!(
            "no start converged within {} iterations ({})",
            opts.max_iter,
            diag.join("; ")
        )));
    };

    let x = &runs[best].x;
    let mut tp = [0.0; 16];
    tp.copy_from_slice(&x[..16]);
    let rho = rho_from_t(&TParams(tp)).map_err(|e| Error::Reconstruction(e.to_string()))?;

    // The objective is invariant under a common rescaling of the norms; fix
    // the product to that of the linear-inversion norms.
    let raw: [f64; 4] = [0, 1, 2, 3].map(|i| x[16 + i].exp());
    let log_gap = lin_norms.iter().map(|n| n.ln()).sum::<f64>() - raw.iter().map(|n| n.ln()).sum::<f64>();
    let k = (log_gap / 4.0).exp();
    let norms = raw.map(|n| (n * k).clamp(NORM_BOUNDS.0, NORM_BOUNDS.1));

    Ok(TomographyResult {
        rho,
        norms,
        residual: reports[best].objective,
        best_start: best,
        starts: reports,
    })
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Replaces every count `n` by a draw from `Poisson(n)`; empty channels
/// stay empty.
pub fn poisson_resample(records: &[CoincidenceRecord], seed: u64) -> Vec<CoincidenceRecord> {
    let mut rng = rng_from_seed(seed);
    records
        .iter()
        .map(|r| CoincidenceRecord {
            counts: r.counts.map(|n| {
                if n > 0.0 {
                    Poisson::new(n).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
                } else {
                    0.0
                }
            }),
            seed: None,
            ..r.clone()
        })
        .collect()
}

/// Resamples every count as `Poisson(observed)`, reconstructs each replica
/// and reports the standard deviation of the metrics against `target`.
///
/// Replica `i` uses sub-seed `derive_seed(seed, i)` for both resampling and
/// its random starts, so the result is bit-reproducible. Fails when more
/// than 10% of replicas cannot be reconstructed.
pub fn monte_carlo_uncertainty(
    records: &[CoincidenceRecord],
    target: &TwoQubitKet,
    n_samples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<Uncertainties> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::validation(format!(
            "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    count_table(records)?;
    let outcomes: Vec<Option<Metrics>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let sub = derive_seed(seed, i as u64);
            let replica = poisson_resample(records, derive_seed(sub, 0));
            let o = MleOptions {
                seed: derive_seed(sub, 1),
                ..*opts
            };
            mle_reconstruct(&replica, &o).ok().map(|res| res.metrics(target))
        })
        .collect();

    let ok: Vec<Metrics> = outcomes.iter().flatten().copied().collect();
    let failures = n_samples - ok.len();
    if failures * 10 > n_samples {
        return Err(Error::Reconstruction(format!(
            "{failures} of {n_samples} Monte Carlo replicas failed to reconstruct"
        )));
    }
    let col = |f: fn(&Metrics) -> f64| sample_std(&ok.iter().map(f).collect::<Vec<_>>());
    Ok(Uncertainties {
        fidelity: col(|m| m.fidelity),
        concurrence: col(|m| m.concurrence),
        entropy_a: col(|m| m.entropy_a),
        entropy_b: col(|m| m.entropy_b),
        samples: n_samples,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bell_state, BellLabel};
    use crate::sim::{expected_records, DetectorBank};
    use approx::assert_abs_diff_eq;

    fn unit_bank() -> DetectorBank {
        DetectorBank {
            eta: [1.0; 4],
            window_s: 0.0,
            dark_hz: 0.0,
        }
    }

    fn exact(rho: &DensityMatrix) -> Vec<CoincidenceRecord> {
        expected_records(rho, &unit_bank(), 1000.0, 2.0).unwrap()
    }

    #[test]
    fn identity_t_is_maximally_mixed() {
        let rho = rho_from_t(&TParams::identity()).unwrap();
        assert!((rho.matrix() - Mat4::identity().scale(0.25)).norm() < 1e-15);
        assert!(matches!(rho_from_t(&TParams([0.0; 16])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_diagonal_entry_is_basis_projector() {
        let mut p = [0.0; 16];
        p[2] = 3.0;
        let rho = rho_from_t(&TParams(p)).unwrap();
        assert_abs_diff_eq!(rho.matrix()[(2, 2)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn t_factor_round_trip() {
        let t = random_start(17);
        let rho = rho_from_t(&t).unwrap();
        let back = rho_from_t(&t_from_rho(&rho)).unwrap();
        assert!((rho.matrix() - back.matrix()).norm() < 1e-12);
        let pure = DensityMatrix::from_ket(&bell_state(BellLabel::PsiMinus));
        let back = rho_from_t(&t_from_rho(&pure)).unwrap();
        assert!((pure.matrix() - back.matrix()).norm() < 1e-12);
    }

    #[test]
    fn likelihood_vanishes_at_truth() {
        let rho = rho_from_t(&random_start(3)).unwrap();
        let recs = exact(&rho);
        let l = likelihood(&t_from_rho(&rho), &[1.0; 4], &recs).unwrap();
        assert!(l < 1e-9, "{l}");
    }

    #[test]
    fn likelihood_is_quadratic_in_a_count() {
        let rho = DensityMatrix::from_ket(&bell_state(BellLabel::PhiPlus));
        let mut recs = exact(&rho);
        let t = t_from_rho(&rho);
        let k = 7.0;
        recs[4].counts[1] += k;
        let l = likelihood(&t, &[1.0; 4], &recs).unwrap();
        // Σ C grows by k, so each C̃_i shifts by k·q_i with q_i = p_i / Σ p.
        let probs: Vec<f64> = exact(&rho).iter().flat_map(|r| r.counts).map(|n| n / 2000.0).collect();
        let total: f64 = probs.iter().sum();
        let hit = 4 * 4 + 1;
        let oracle: f64 = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = p / total;
                if i == hit { (k * (1.0 - q)).powi(2) } else { (k * q).powi(2) }
            })
            .sum();
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-9 * oracle);
        assert!(l > 0.85 * k * k && l <= k * k, "{l}");
    }

    #[test]
    fn incomplete_records_rejected() {
        let recs = exact(&DensityMatrix::maximally_mixed());
        assert!(matches!(likelihood(&TParams::identity(), &[1.0; 4], &recs[..8]), Err(Error::Validation(_))));
        let mut dup = recs.clone();
        dup[8] = dup[0].clone();
        assert!(mle_reconstruct(&dup, &MleOptions::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rho = rho_from_t(&random_start(5)).unwrap();
        let mut recs = exact(&rho);
        recs[2].counts[0] += 30.0;
        let problem = Problem::new(&recs).unwrap();
        let mut x = [0.0; 20];
        x[..16].copy_from_slice(&random_start(9).0);
        x[16..].copy_from_slice(&[0.1, -0.2, 0.05, 0.3]);
        let mut g = [0.0; 20];
        problem.evaluate(&x, Some(&mut g));
        for i in 0..20 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (problem.evaluate(&xp, None) - problem.evaluate(&xm, None)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn linear_inversion_examples() {
        let basis = DensityMatrix::from_ket(&TwoQubitKet::basis(0));
        let seed = rho_from_t(&linear_inversion_seed(&exact(&basis)).unwrap()).unwrap();
        assert_abs_diff_eq!(seed.matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
        let mixed = DensityMatrix::maximally_mixed();
        let seed = rho_from_t(&linear_inversion_seed(&exact(&mixed)).unwrap()).unwrap();
        assert!((seed.matrix() - mixed.matrix()).norm() < 1e-12);
    }

    #[test]
    fn noiseless_bell_round_trip() {
        for label in BellLabel::ALL {
            let psi = bell_state(label);
            let res = mle_reconstruct(&exact(&DensityMatrix::from_ket(&psi)), &MleOptions::default()).unwrap();
            let f = res.metrics(&psi).fidelity;
            assert!(f >= 0.9999, "{label}: {f}");
        }
    }

    #[test]
    fn detector_efficiency_recovered_as_norm_ratio() {
        let psi = bell_state(BellLabel::PsiPlus);
        let rho = DensityMatrix::from_ket(&psi);
        let det = DetectorBank {
            eta: [1.0, 0.5, 1.0, 1.0],
            ..unit_bank()
        };
        let recs = expected_records(&rho, &det, 1000.0, 2.0).unwrap();
        let res = mle_reconstruct(&recs, &MleOptions::default()).unwrap();
        assert!(res.metrics(&psi).fidelity > 0.9999);
        assert_abs_diff_eq!(res.norms[2] / res.norms[0], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(res.norms[3] / res.norms[1], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn monte_carlo_needs_enough_samples() {
        let psi = bell_state(BellLabel::PhiPlus);
        let recs = exact(&DensityMatrix::from_ket(&psi));
        assert!(monte_carlo_uncertainty(&recs, &psi, 10, 1, &MleOptions::default()).is_err());
    }
}
