//! Small dense optimisers: a box-constrained limited-memory quasi-Newton
//! method (projected L-BFGS) for the tomography likelihood and a projected
//! Levenberg–Marquardt solver for the heater-calibration fit.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop when `|Δf| ≤ rel_tol · max(|f|, f_floor)`.
    pub rel_tol: f64,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Objective scale below which relative changes are measured absolutely.
    pub f_floor: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            rel_tol: 1e-10,
            grad_tol: 1e-14,
            f_floor: 1e-20,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` subject to `lower ≤ x ≤ upper` (use infinities for free
/// variables). `f` writes the gradient into its second argument and returns
/// the value.
pub fn minimize_bounded<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if !fx.is_finite() {
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = (0..n)
            .filter(|&i| free[i])
            .map(|i| g[i].abs())
            .fold(0.0, f64::max);
        if pg_norm <= opts.grad_tol {
            converged = true;
            break;
        }

        let mut d = two_loop(&g, &free, &history);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            history.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = dot(&d, &g);
        }

        let mut step = if history.is_empty() {
            (1.0 / pg_norm).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            project(&mut x_new, lower, upper);
            let f_new = f(&x_new, &mut g_new);
            evaluations += 1;
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if f_new.is_finite() && f_new <= fx + 1e-4 * decrease.min(0.0) {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    history.push_back((s, y, 1.0 / sy));
                    if history.len() > opts.memory {
                        history.pop_front();
                    }
                }
                let change = (fx - f_new).abs();
                let scale = fx.abs().max(f_new.abs()).max(opts.f_floor);
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                if change <= opts.rel_tol * scale {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if converged {
            break;
        }
        if !accepted {
            if history.is_empty() {
                // No descent along steepest descent: numerically stationary.
                converged = true;
                break;
            }
            history.clear();
        }
    }

    Minimum {
        x,
        value: fx,
        iterations,
        evaluations,
        converged,
    }
}

fn two_loop(g: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let n = g.len();
    let mask = |v: &mut Vec<f64>| {
        for i in 0..n {
            if !free[i] {
                v[i] = 0.0;
            }
        }
    };
    let mut q = g.to_vec();
    mask(&mut q);
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for i in 0..n {
            q[i] -= a * y[i];
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let yy = dot(y, y);
        if yy > 0.0 {
            let gamma = dot(s, y) / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for i in 0..n {
            q[i] += (a - b) * s[i];
        }
    }
    mask(&mut q);
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresFit {
    pub x: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and box projection.
///
/// `model` returns the residual vector and its Jacobian at a point.
pub fn levenberg_marquardt<F>(
    mut model: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> LeastSquaresFit
where
    F: FnMut(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut r, mut j) = model(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter && cost.is_finite() {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        if jtr.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let (r_t, j_t) = model(&trial);
            let cost_t = r_t.norm_squared();
            if cost_t.is_finite() && cost_t < cost {
                let rel = (cost - cost_t) / cost.max(1e-300);
                let step: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let xscale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
                x = trial;
                r = r_t;
                j = j_t;
                cost = cost_t;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel <= opts.rel_tol || step <= 1e-15 * xscale {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            // No decrease at any damping: stationary to working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    LeastSquaresFit {
        x,
        cost,
        iterations,
        converged,
    }
}
