//! Critical momenta, critical times and cusp detection.
//!
//! A dynamical critical momentum `k*` is a zero of `d̂_i(k)·d̂_f(k)`; at
//! `t_c^(n) = (2n+1)π / (2 ε_f(k*))` the Loschmidt amplitude of that mode
//! vanishes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{evaluate_mode, momentum_grid, quench_geometry, QuenchSetup};

pub const SCAN_INTERVALS: usize = 1024;
pub const ROOT_TOLERANCE: f64 = 1e-12;
pub const ONSET_TOLERANCE: f64 = 1e-10;

/// `k* = arccos[(1 + g_i g_f)/(g_i + g_f)]` when the argument lies strictly
/// inside `(-1, 1)`; boundary values map to `k* ∈ {0, π}` and count as no
/// DQPT.
pub fn tfim_critical_momentum(g_i: f64, g_f: f64) -> Option<f64> {
    let denom = g_i + g_f;
    if denom == 0.0 {
        return None;
    }
    let arg = (1.0 + g_i * g_f) / denom;
    (arg.abs() < 1.0).then(|| arg.acos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RootScan {
    /// Roots in increasing order.
    pub roots: Vec<f64>,
    pub sign_changes: usize,
}

/// Sign scan of `cos θ(k)` over 1024 intervals of the half zone followed by
/// bisection of every bracketed root to `1e-12` in `k`.
///
/// Tangential zeros (no sign change) are not detected.
pub fn scan_critical_momenta(q: &QuenchSetup) -> Result<RootScan> {
    let grid = momentum_grid(SCAN_INTERVALS + 1)?;
    let cos_at = |k: f64| -> Result<f64> { Ok(quench_geometry(q, k)?.cos_theta) };
    let values = grid
        .points
        .iter()
        .map(|&k| cos_at(k))
        .collect::<Result<Vec<_>>>()?;
    let mut roots = Vec::new();
    for j in 0..grid.len() {
        if values[j] == 0.0 {
            roots.push(grid.points[j]);
            continue;
        }
        if j + 1 == grid.len() || values[j + 1] == 0.0 || values[j].signum() == values[j + 1].signum() {
            continue;
        }
        let (mut a, mut b) = (grid.points[j], grid.points[j + 1]);
        let mut fa = values[j];
        while b - a > ROOT_TOLERANCE {
            let m = 0.5 * (a + b);
            let fm = cos_at(m)?;
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        roots.push(0.5 * (a + b));
    }
    let sign_changes = roots.len();
    Ok(RootScan { roots, sign_changes })
}

/// All critical momenta: closed form for TFIM pairs, scan otherwise.
pub fn critical_roots(q: &QuenchSetup) -> Result<Vec<f64>> {
    match q.tfim_fields() {
        Some((gi, gf)) => Ok(tfim_critical_momentum(gi, gf).into_iter().collect()),
        None => Ok(scan_critical_momenta(q)?.roots),
    }
}

/// The smallest critical momentum, if any.
pub fn critical_momentum(q: &QuenchSetup) -> Result<Option<f64>> {
    Ok(critical_roots(q)?.first().copied())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalData {
    pub k_star: f64,
    pub eps_f_star: f64,
    /// `t_c^(n)` for `n = 0..=n_max`.
    pub t_c: Vec<f64>,
    /// Number of critical momenta found (the data describe the smallest).
    pub root_count: usize,
}

pub fn critical_times(q: &QuenchSetup, n_max: usize) -> Result<CriticalData> {
    let roots = critical_roots(q)?;
    let k_star = *roots.first().ok_or(Error::NoDqpt)?;
    let eps_f_star = evaluate_mode(&q.final_, k_star)?.eps;
    let t0 = PI / (2.0 * eps_f_star);
    Ok(CriticalData {
        k_star,
        eps_f_star,
        t_c: (0..=n_max).map(|n| (2 * n + 1) as f64 * t0).collect(),
        root_count: roots.len(),
    })
}

/// Values of `g_f` in `[lo, hi]` where TFIM quenches from `g_i` switch
/// between having and not having a critical momentum.
pub fn onset_scan(g_i: f64, range: (f64, f64), steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidCount("onset scan needs at least 2 steps".into()));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::Config(vec![format!("invalid g_f range [{lo}, {hi}]")]));
    }
    let exists = |g: f64| tfim_critical_momentum(g_i, g).is_some();
    let step = (hi - lo) / (steps - 1) as f64;
    let gs: Vec<f64> = (0..steps)
        .map(|i| if i + 1 == steps { hi } else { lo + step * i as f64 })
        .collect();
    let mut out = Vec::new();
    for w in gs.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let ea = exists(a);
        if ea == exists(b) {
            continue;
        }
        while b - a > ONSET_TOLERANCE {
            let m = 0.5 * (a + b);
            if exists(m) == ea {
                a = m;
            } else {
                b = m;
            }
        }
        out.push(0.5 * (a + b));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuspParams {
    /// A slope jump must exceed this multiple of the median jump.
    pub factor: f64,
    /// Width of the local-maximum window in samples.
    pub window: usize,
}

impl Default for CuspParams {
    fn default() -> Self {
        Self {
            factor: 5.0,
            window: 5,
        }
    }
}

pub const MIN_CUSP_SAMPLES: usize = 16;

/// Flags samples where the forward-difference slope jumps by more than
/// `factor × median` jump and the value is a maximum over the window.
pub fn detect_cusps(ts: &[f64], values: &[f64], params: &CuspParams) -> Result<Vec<f64>> {
    let n = ts.len().min(values.len());
    if n < MIN_CUSP_SAMPLES || ts.len() != values.len() {
        return Err(Error::TooFewSamples {
            got: n,
            need: MIN_CUSP_SAMPLES,
        });
    }
    let dt = ts[1] - ts[0];
    if !(dt > 0.0) {
        return Err(Error::NonUniformSamples { index: 1 });
    }
    for i in 1..n {
        if ((ts[i] - ts[i - 1]) - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformSamples { index: i });
        }
    }
    let slopes: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let jumps: Vec<f64> = slopes.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let threshold = params.factor * median(&jumps);
    let half = params.window / 2;
    let mut cusps = Vec::new();
    let mut last: Option<usize> = None;
    // jumps[i - 1] sits at sample i
    for i in 1..n - 1 {
        if jumps[i - 1] <= threshold {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let peak = values[lo..=hi].iter().all(|&v| values[i] >= v);
        if !peak || last.is_some_and(|j| i - j <= half) {
            continue;
        }
        last = Some(i);
        cusps.push(ts[i]);
    }
    Ok(cusps)
}

/// Indices `i` with `v[i-1] < v[i] >= v[i+1]`.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
