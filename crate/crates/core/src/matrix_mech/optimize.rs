//! Noise-scale optimization for the frequency oracle `A = B = I`:
//!
//! ```text
//! minimize    2 * sum_x s_x^2
//! subject to  1/s_x + 1/s_x' <= E(x, x')   for all x != x'
//! ```
//!
//! `E_S` metrics are solved after reducing to the two orbits (values inside
//! and outside `S`). Everything else goes through a log-barrier method in the
//! reciprocal scales `u = 1/s`, where the constraints are linear and the
//! objective `sum u^-2` is convex.

use nalgebra::{DMatrix, DVector};

use super::MatrixMechanism;
use crate::error::{domain_err, Error, Result};
use crate::metrics::Metric;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyScales {
    pub scales: Vec<f64>,
    /// Total expected squared error per owner, `2 * sum s^2`.
    pub objective: f64,
}

impl FrequencyScales {
    fn from_scales(scales: Vec<f64>) -> Self {
        let objective = 2.0 * scales.iter().map(|s| s * s).sum::<f64>();
        FrequencyScales { scales, objective }
    }

    pub fn mechanism(&self) -> Result<MatrixMechanism> {
        MatrixMechanism::identity(self.scales.clone())
    }
}

/// Optimal per-value Laplace scales for frequency estimation under `metric`.
pub fn optimize_frequency_scales(metric: &Metric) -> Result<FrequencyScales> {
    let m = metric.domain().total_size();
    if m == 1 {
        return Ok(FrequencyScales::from_scales(vec![0.0]));
    }
    match (metric.sensitive_set(), metric.epsilon()) {
        (Some(set), Some(eps)) => {
            let (inside, outside) = super_sensitive_orbits(m, set.len(), eps);
            let mut scales = vec![outside; m];
            for v in set {
                scales[v - 1] = inside;
            }
            Ok(FrequencyScales::from_scales(scales))
        }
        _ => optimize_frequency_scales_generic(metric),
    }
}

/// Scales `(inside S, outside S)` for `E_S` with `|S| = k`.
///
/// Pairs outside `S` never bind: `1/a + 1/b <= eps` already forces
/// `b > 1/eps`. So `b` is eliminated and the search is over `a` alone.
fn super_sensitive_orbits(m: usize, k: usize, eps: f64) -> (f64, f64) {
    if k == 0 {
        return (0.0, 1.0 / eps);
    }
    if k == m {
        return (2.0 / eps, 0.0);
    }
    let (kf, rest) = (k as f64, (m - k) as f64);
    let outside = |a: f64| 1.0 / (eps - 1.0 / a);
    let f = |a: f64| kf * a * a + rest * outside(a).powi(2);
    let lo = if k >= 2 { 2.0 / eps } else { (1.0 + 1e-12) / eps };
    let mut hi = 2.0 * lo.max(1.0 / eps);
    while f(2.0 * hi) < f(hi) {
        hi *= 2.0;
    }
    let a = golden_section(f, lo, 2.0 * hi);
    (a, outside(a))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the bracket end can beat the interior when the optimum sits on `lo`
    [lo, mid, hi].into_iter().min_by(|x, y| f(*x).total_cmp(&f(*y))).unwrap()
}

const BARRIER_GAP: f64 = 1e-10;

/// Barrier-method solve for an arbitrary metric, bypassing orbit reduction.
pub fn optimize_frequency_scales_generic(metric: &Metric) -> Result<FrequencyScales> {
    let table = metric.to_dense();
    let m = table.len();
    if m == 1 {
        return Ok(FrequencyScales::from_scales(vec![0.0]));
    }
    let mut pairs = Vec::new();
    for x in 0..m {
        for y in x + 1..m {
            let e = table[x][y].min(table[y][x]);
            if e.is_nan() || e <= 0.0 {
                return Err(Error::Infeasible(format!(
                    "E({}, {}) = {e}; distinct values need a positive distance",
                    x + 1,
                    y + 1
                )));
            }
            if e.is_finite() {
                pairs.push((x, y, e));
            }
        }
    }
    // values with no finite constraint can go noiseless
    let mut bound = vec![f64::INFINITY; m];
    for &(x, y, e) in &pairs {
        bound[x] = bound[x].min(e);
        bound[y] = bound[y].min(e);
    }
    let active: Vec<usize> = (0..m).filter(|&x| bound[x].is_finite()).collect();
    let mut slot = vec![usize::MAX; m];
    for (i, &x) in active.iter().enumerate() {
        slot[x] = i;
    }
    let cons: Vec<(usize, usize, f64)> = pairs.iter().map(|&(x, y, e)| (slot[x], slot[y], e)).collect();
    let u0: Vec<f64> = active.iter().map(|&x| 0.25 * bound[x]).collect();
    let u = barrier_solve(u0, &cons)?;
    let mut scales = vec![0.0; m];
    for (i, &x) in active.iter().enumerate() {
        scales[x] = 1.0 / u[i];
    }
    Ok(FrequencyScales::from_scales(scales))
}

fn barrier_solve(mut u: Vec<f64>, cons: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let n = u.len();
    let count = (cons.len() + n) as f64;
    let objective = |u: &[f64]| u.iter().map(|v| v.powi(-2)).sum::<f64>();
    let phi = |u: &[f64], t: f64| -> f64 {
        if u.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        let mut val = t * objective(u) - u.iter().map(|v| v.ln()).sum::<f64>();
        for &(x, y, e) in cons {
            let slack = e - u[x] - u[y];
            if slack <= 0.0 {
                return f64::INFINITY;
            }
            val -= slack.ln();
        }
        val
    };
    let mut t = count / objective(&u);
    for _outer in 0..200 {
        for _newton in 0..100 {
            let mut grad = DVector::<f64>::zeros(n);
            let mut hess = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let v = u[i];
                grad[i] = -2.0 * t * v.powi(-3) - 1.0 / v;
                hess[(i, i)] = 6.0 * t * v.powi(-4) + v.powi(-2);
            }
            for &(x, y, e) in cons {
                let inv = 1.0 / (e - u[x] - u[y]);
                let w = inv * inv;
                grad[x] += inv;
                grad[y] += inv;
                hess[(x, x)] += w;
                hess[(y, y)] += w;
                hess[(x, y)] += w;
                hess[(y, x)] += w;
            }
            let chol = hess
                .cholesky()
                .ok_or_else(|| Error::Infeasible("barrier Hessian lost definiteness".into()))?;
            let step = chol.solve(&(-&grad));
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let current = phi(&u, t);
            let mut alpha = 1.0;
            let mut trial: Vec<f64>;
            loop {
                trial = u.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                if phi(&trial, t) <= current - 0.25 * alpha * decrement {
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break;
                }
            }
            if alpha < 1e-20 {
                break;
            }
            u = trial;
        }
        if count / t <= BARRIER_GAP * objective(&u) {
            return Ok(u);
        }
        t *= 20.0;
    }
    Err(Error::Infeasible("barrier method did not converge".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsSweepRow {
    pub sensitive_count: usize,
    /// `n * 2 * sum s^2` at the optimum for `S = {1..k}`.
    pub optimized_total: f64,
    /// Uniform-epsilon frequency oracle, `8 n m / eps^2`.
    pub baseline_total: f64,
}

/// Optimized `E_S` utility against the uniform-epsilon baseline as `|S|` varies.
pub fn es_sweep(m: usize, n: u64, epsilon: f64, sizes: &[usize]) -> Result<Vec<EsSweepRow>> {
    let baseline = 8.0 * m as f64 * n as f64 / (epsilon * epsilon);
    sizes
        .iter()
        .map(|&k| {
            if k > m {
                return Err(domain_err!("|S| = {k} exceeds m = {m}"));
            }
            let set: Vec<usize> = (1..=k).collect();
            let opt = optimize_frequency_scales(&Metric::super_sensitive(m, epsilon, &set)?)?;
            Ok(EsSweepRow {
                sensitive_count: k,
                optimized_total: opt.objective * n as f64,
                baseline_total: baseline,
            })
        })
        .collect()
}
