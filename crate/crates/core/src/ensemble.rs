//! Densities over the half Brillouin zone.
//!
//! Two evaluation schemes are offered. `FiniteN` sums over the midpoint
//! grid of `M` modes, representing `N = 2M` sites. `Quadrature` evaluates
//! the thermodynamic-limit integrals with composite Gauss–Legendre
//! panels, more of them for larger `t`, graded toward every critical
//! momentum where `ln|G_k|²` is nearly singular and toward both zone edges
//! where near-critical bands vary on the scale of the gap.
//!
//! Normalizations (`ΔE_k`, `P_k`, `δE_k²` from [`crate::dynamics`]):
//!
//! | quantity | FiniteN            | Quadrature                 |
//! |----------|--------------------|----------------------------|
//! | Δe, p, δe² | `(1/N) Σ_k X_k`  | `(1/2π) ∫₀^π X_k dk`       |
//! | λ        | `−(2/N) Σ ln|G_k|²` | `−(1/π) ∫₀^π ln|G_k|² dk` |
//! | λ_snr    | `(2/N) Σ ln(1+R_k)` | n/a                        |
//!
//! Reductions always run sequentially over sorted momenta, so results do
//! not depend on how callers parallelize.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dqpt::critical_roots;
use crate::dynamics::{observables_from_geometry, snr_ratio};
use crate::error::{Error, Result};
use crate::model::{momentum_grid, quench_geometry, ModeGeometry, QuenchSetup};
use crate::quadrature::{graded_edges, CompositeRule};

pub const DEFAULT_PANELS: usize = 64;
pub const DEFAULT_NODES_PER_PANEL: usize = 16;
/// `|G_k|²` is floored here before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-30;
/// Halvings of the uniform panel width toward each critical momentum.
pub const GRADING_LEVELS: usize = 30;
/// Halvings toward `k = 0` and `k = π`.
pub const EDGE_GRADING_LEVELS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureParams {
    pub panels_base: usize,
    pub nodes_per_panel: usize,
}

impl Default for QuadratureParams {
    fn default() -> Self {
        Self {
            panels_base: DEFAULT_PANELS,
            nodes_per_panel: DEFAULT_NODES_PER_PANEL,
        }
    }
}

impl QuadratureParams {
    /// `max(panels_base, ceil(10 t ε_max / 2π))`.
    pub fn panel_count(&self, t_hint: f64, eps_max: f64) -> usize {
        let scaled = (10.0 * t_hint * eps_max / (2.0 * PI)).ceil();
        if scaled.is_finite() && scaled > self.panels_base as f64 {
            scaled as usize
        } else {
            self.panels_base
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvaluationScheme {
    FiniteN { modes: usize },
    Quadrature(QuadratureParams),
}

impl Default for EvaluationScheme {
    fn default() -> Self {
        EvaluationScheme::Quadrature(QuadratureParams::default())
    }
}

impl EvaluationScheme {
    fn validate(&self) -> Result<()> {
        match *self {
            EvaluationScheme::FiniteN { modes: 0 } => {
                Err(Error::InvalidCount("FiniteN scheme needs M >= 1".into()))
            }
            EvaluationScheme::Quadrature(p) if p.panels_base == 0 || p.nodes_per_panel == 0 => {
                Err(Error::InvalidCount("quadrature needs panels and nodes >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Composite Gauss–Legendre integral of `f` over `(0, π)`.
///
/// The panel count follows [`QuadratureParams::panel_count`]; `refine_at`
/// adds graded panels toward the listed momenta.
pub fn integrate_halfbz<F>(
    mut f: F,
    t_hint: f64,
    eps_max: f64,
    params: &QuadratureParams,
    refine_at: &[f64],
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let panels = params.panel_count(t_hint, eps_max);
    let levels = if refine_at.is_empty() { 0 } else { GRADING_LEVELS };
    let rule = CompositeRule::from_edges(
        &graded_edges(0.0, PI, panels, refine_at, levels),
        params.nodes_per_panel,
    );
    let mut acc = 0.0;
    for (&k, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(k)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { k });
        }
        acc += w * v;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityObservables {
    pub t: f64,
    pub e_density: f64,
    pub p_density: f64,
    pub var_density: f64,
    /// `Δe / sqrt(δe²)`; zero when both vanish.
    pub snr_density: f64,
    pub rate_lambda: f64,
    /// Only defined on finite grids.
    pub rate_lambda_snr: Option<f64>,
    /// `sqrt(N) · snr_density`, finite grids only.
    pub snr_extensive: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationObservables {
    pub e_inf: f64,
    pub var_inf: f64,
    pub snr_inf_density: f64,
}

/// Weighted mode table: geometry plus the weight each mode carries in the
/// sums (`1` per mode on grids, the quadrature weight otherwise).
#[derive(Clone, Debug)]
struct ModeTable {
    modes: Vec<(f64, ModeGeometry)>,
}

impl ModeTable {
    fn from_points(q: &QuenchSetup, nodes: &[f64], weights: &[f64]) -> Result<Self> {
        let modes = nodes
            .iter()
            .zip(weights)
            .map(|(&k, &w)| Ok((w, quench_geometry(q, k)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { modes })
    }
}

/// Raw weighted sums at one time.
#[derive(Default)]
struct Sums {
    energy: f64,
    power: f64,
    variance: f64,
    log_surv: f64,
    log_snr: f64,
}

fn accumulate(table: &ModeTable, t: f64) -> Result<Sums> {
    let mut s = Sums::default();
    for (w, g) in &table.modes {
        let o = observables_from_geometry(g, t);
        let log_surv = o.surv_prob.max(LOG_FLOOR).ln();
        let log_snr = o.snr.ln_1p();
        if !(o.delta_e.is_finite() && o.power.is_finite() && o.variance.is_finite() && log_snr.is_finite()) {
            return Err(Error::NonFinite { k: g.k });
        }
        s.energy += w * o.delta_e;
        s.power += w * o.power;
        s.variance += w * o.variance;
        s.log_surv += w * log_surv;
        s.log_snr += w * log_snr;
    }
    Ok(s)
}

/// Uniform panels graded toward the critical momenta and, more mildly,
/// toward both zone edges (nodes stay far above the gap threshold there).
fn mesh(panels: usize, critical: &[f64]) -> Vec<f64> {
    let mut edges = graded_edges(0.0, PI, panels, critical, GRADING_LEVELS);
    edges.extend(graded_edges(0.0, PI, panels, &[0.0, PI], EDGE_GRADING_LEVELS));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

/// A quench prepared for repeated evaluation under one scheme.
#[derive(Clone, Debug)]
pub struct Ensemble {
    q: QuenchSetup,
    scheme: EvaluationScheme,
    eps_max: f64,
    critical: Vec<f64>,
    /// Grid table (FiniteN) or the table for the base panel count.
    base: ModeTable,
    base_panels: usize,
}

impl Ensemble {
    pub fn new(q: &QuenchSetup, scheme: EvaluationScheme) -> Result<Self> {
        scheme.validate()?;
        match scheme {
            EvaluationScheme::FiniteN { modes } => {
                let grid = momentum_grid(modes)?;
                let ones = vec![1.0; grid.len()];
                let base = ModeTable::from_points(q, &grid.points, &ones)?;
                let eps_max = base.modes.iter().fold(0.0f64, |m, (_, g)| m.max(g.eps_f));
                Ok(Self {
                    q: q.clone(),
                    scheme,
                    eps_max,
                    critical: Vec::new(),
                    base,
                    base_panels: 0,
                })
            }
            EvaluationScheme::Quadrature(p) => {
                let critical = critical_roots(q)?;
                let rule = CompositeRule::from_edges(
                    &mesh(p.panels_base, &critical),
                    p.nodes_per_panel,
                );
                let base = ModeTable::from_points(q, &rule.nodes, &rule.weights)?;
                let eps_max = base.modes.iter().fold(0.0f64, |m, (_, g)| m.max(g.eps_f));
                Ok(Self {
                    q: q.clone(),
                    scheme,
                    eps_max,
                    critical,
                    base,
                    base_panels: p.panels_base,
                })
            }
        }
    }

    pub fn setup(&self) -> &QuenchSetup {
        &self.q
    }

    pub fn scheme(&self) -> EvaluationScheme {
        self.scheme
    }

    /// Largest final-band energy over the base nodes.
    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    /// Critical momenta the quadrature mesh is graded toward.
    pub fn critical_momenta(&self) -> &[f64] {
        &self.critical
    }

    fn sums_at(&self, t: f64) -> Result<Sums> {
        match self.scheme {
            EvaluationScheme::FiniteN { .. } => accumulate(&self.base, t),
            EvaluationScheme::Quadrature(p) => {
                let panels = p.panel_count(t, self.eps_max);
                if panels == self.base_panels {
                    return accumulate(&self.base, t);
                }
                let rule = CompositeRule::from_edges(
                    &mesh(panels, &self.critical),
                    p.nodes_per_panel,
                );
                accumulate(&ModeTable::from_points(&self.q, &rule.nodes, &rule.weights)?, t)
            }
        }
    }

    pub fn density(&self, t: f64) -> Result<DensityObservables> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidTime(t));
        }
        let s = self.sums_at(t)?;
        let (e, p, var, lambda, lambda_snr, sites) = match self.scheme {
            EvaluationScheme::FiniteN { modes } => {
                let n = 2.0 * modes as f64;
                (
                    s.energy / n,
                    s.power / n,
                    s.variance / n,
                    -2.0 * s.log_surv / n,
                    Some(2.0 * s.log_snr / n),
                    Some(n),
                )
            }
            EvaluationScheme::Quadrature(_) => {
                let c = 1.0 / (2.0 * PI);
                (
                    s.energy * c,
                    s.power * c,
                    s.variance * c,
                    -s.log_surv / PI,
                    None,
                    None,
                )
            }
        };
        let var = var.max(0.0);
        let snr_density = snr_ratio(e, var);
        Ok(DensityObservables {
            t,
            e_density: e,
            p_density: p,
            var_density: var,
            snr_density,
            rate_lambda: lambda.max(0.0),
            rate_lambda_snr: lambda_snr,
            snr_extensive: sites.map(|n| n.sqrt() * snr_density),
        })
    }

    pub fn rate(&self, t: f64) -> Result<f64> {
        Ok(self.density(t)?.rate_lambda)
    }

    /// λ_snr; finite grids only.
    pub fn snr_rate(&self, t: f64) -> Result<f64> {
        self.density(t)?.rate_lambda_snr.ok_or_else(|| {
            Error::Config(vec!["lambda_snr is only defined on a FiniteN scheme".into()])
        })
    }

    pub fn saturation(&self) -> Result<SaturationObservables> {
        let mut energy = 0.0;
        let mut variance = 0.0;
        for (w, g) in &self.base.modes {
            let a = g.weight_a;
            energy += w * g.eps_i * a;
            variance += w * 4.0 * g.eps_i * g.eps_i * (a / 2.0 - 3.0 * a * a / 8.0);
        }
        let norm = match self.scheme {
            EvaluationScheme::FiniteN { modes } => 1.0 / (2.0 * modes as f64),
            EvaluationScheme::Quadrature(_) => 1.0 / (2.0 * PI),
        };
        let e_inf = energy * norm;
        let var_inf = (variance * norm).max(0.0);
        if !(e_inf.is_finite() && var_inf.is_finite()) {
            return Err(Error::NonFinite { k: f64::NAN });
        }
        Ok(SaturationObservables {
            e_inf,
            var_inf,
            snr_inf_density: snr_ratio(e_inf, var_inf),
        })
    }

    /// Trapezoidal time averages of `(e_density, var_density)` over
    /// `samples` uniform times in `[t0, t1]`.
    pub fn time_average(&self, t0: f64, t1: f64, samples: usize) -> Result<(f64, f64)> {
        if samples < 2 || !(t1 > t0) {
            return Err(Error::InvalidCount("time average needs t1 > t0 and >= 2 samples".into()));
        }
        let dt = (t1 - t0) / (samples - 1) as f64;
        let values = (0..samples)
            .into_par_iter()
            .map(|i| self.density(t0 + dt * i as f64))
            .collect::<Result<Vec<_>>>()?;
        let mut e = 0.0;
        let mut v = 0.0;
        for (i, d) in values.iter().enumerate() {
            let w = if i == 0 || i == samples - 1 { 0.5 } else { 1.0 };
            e += w * d.e_density;
            v += w * d.var_density;
        }
        let span = (samples - 1) as f64;
        Ok((e / span, v / span))
    }
}

pub fn density_observables(q: &QuenchSetup, t: f64, scheme: EvaluationScheme) -> Result<DensityObservables> {
    Ensemble::new(q, scheme)?.density(t)
}

pub fn saturation_observables(q: &QuenchSetup, scheme: EvaluationScheme) -> Result<SaturationObservables> {
    Ensemble::new(q, scheme)?.saturation()
}

pub fn rate_function(q: &QuenchSetup, t: f64, scheme: EvaluationScheme) -> Result<f64> {
    Ensemble::new(q, scheme)?.rate(t)
}

/// λ_snr on the `modes`-point midpoint grid (`N = 2 · modes`).
pub fn snr_rate_function(q: &QuenchSetup, t: f64, modes: usize) -> Result<f64> {
    Ensemble::new(q, EvaluationScheme::FiniteN { modes })?.snr_rate(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> EvaluationScheme {
        EvaluationScheme::default()
    }

    /// Composite trapezoid on `n` intervals of `[0, π]`, endpoints skipped
    /// where the integrand is undefined (the integrands used vanish there).
    fn trapezoid<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        let h = PI / n as f64;
        (1..n).map(|i| f(h * i as f64)).sum::<f64>() * h
    }

    #[test]
    fn integrate_simple_functions() {
        let p = QuadratureParams::default();
        let v = integrate_halfbz(|k| Ok(k.sin().powi(2)), 0.0, 1.0, &p, &[]).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-12);
        for t in [0.0, 3.0, 250.0] {
            let v = integrate_halfbz(|_| Ok(1.0), t, 4.6, &p, &[]).unwrap();
            assert!((v - PI).abs() < 1e-12, "t={t} err={}", v - PI);
        }
        let r = integrate_halfbz(|k| Ok(if k > 1.0 { f64::NAN } else { 0.0 }), 0.0, 1.0, &p, &[]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn weight_integral_against_trapezoid_oracle() {
        let q = QuenchSetup::tfim(0.0, 0.5);
        let oracle = trapezoid(|k| quench_geometry(&q, k).unwrap().weight_a, 1_000_000);
        assert!((oracle - PI / 8.0).abs() < 1e-10);
        let v = integrate_halfbz(
            |k| Ok(quench_geometry(&q, k)?.weight_a),
            0.0,
            3.0,
            &QuadratureParams::default(),
            &[],
        )
        .unwrap();
        assert!((v - PI / 8.0).abs() < 1e-10);
    }

    #[test]
    fn panel_count_scales_with_time() {
        let p = QuadratureParams::default();
        assert_eq!(p.panel_count(0.0, 4.6), 64);
        assert_eq!(p.panel_count(100.0, 4.6), (1000.0 * 4.6 / (2.0 * PI)).ceil() as usize);
    }

    #[test]
    fn everything_vanishes_at_time_zero() {
        for scheme in [quad(), EvaluationScheme::FiniteN { modes: 50 }] {
            let d = density_observables(&QuenchSetup::tfim(0.0, 1.3), 0.0, scheme).unwrap();
            assert_eq!(d.e_density, 0.0);
            assert_eq!(d.p_density, 0.0);
            assert_eq!(d.var_density, 0.0);
            assert_eq!(d.snr_density, 0.0);
            assert_eq!(d.rate_lambda, 0.0);
        }
    }

    #[test]
    fn short_time_energy_and_variance_laws() {
        let t = 1e-4;
        let gf = 1.3;
        let d = density_observables(&QuenchSetup::tfim(0.0, gf), t, quad()).unwrap();
        assert!((d.e_density / (t * t) / (4.0 * gf * gf) - 1.0).abs() < 1e-3);
        assert!((d.var_density / (t * t) / (16.0 * gf * gf) - 1.0).abs() < 1e-3);
        // Ratio of the two leading terms: 4 g² t² / (4 g t) = g t.
        assert!((d.snr_density / t / gf - 1.0).abs() < 1e-3);
    }

    #[test]
    fn saturation_closed_forms() {
        let s = saturation_observables(&QuenchSetup::tfim(0.0, 0.5), quad()).unwrap();
        assert!((s.e_inf - 0.125).abs() < 1e-12);
        let s = saturation_observables(&QuenchSetup::tfim(0.0, 1.3), quad()).unwrap();
        assert!((s.e_inf - 0.5).abs() < 1e-10);
        let s = saturation_observables(&QuenchSetup::tfim(0.7, 0.7), quad()).unwrap();
        assert_eq!((s.e_inf, s.var_inf, s.snr_inf_density), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rate_function_trivial_cases() {
        let q = QuenchSetup::tfim(0.0, 1.3);
        assert_eq!(rate_function(&q, 0.0, quad()).unwrap(), 0.0);
        let same = QuenchSetup::tfim(0.4, 0.4);
        for t in [0.5, 2.0, 9.0] {
            assert!(rate_function(&same, t, quad()).unwrap().abs() < 1e-15);
            assert!(rate_function(&same, t, EvaluationScheme::FiniteN { modes: 64 }).unwrap().abs() < 1e-15);
            assert_eq!(snr_rate_function(&same, t, 64).unwrap(), 0.0);
        }
        assert_eq!(snr_rate_function(&q, 0.0, 64).unwrap(), 0.0);
    }

    #[test]
    fn finite_grid_quantities() {
        let q = QuenchSetup::tfim(0.0, 1.3);
        let d = density_observables(&q, 0.7, EvaluationScheme::FiniteN { modes: 100 }).unwrap();
        assert!(d.rate_lambda_snr.unwrap() > 0.0);
        assert!((d.snr_extensive.unwrap() - 200f64.sqrt() * d.snr_density).abs() < 1e-12);
        let d = density_observables(&q, 0.7, quad()).unwrap();
        assert!(d.rate_lambda_snr.is_none() && d.snr_extensive.is_none());
        assert!(Ensemble::new(&q, quad()).unwrap().snr_rate(0.7).is_err());
    }

    #[test]
    fn scheme_validation() {
        let q = QuenchSetup::tfim(0.0, 1.3);
        assert!(Ensemble::new(&q, EvaluationScheme::FiniteN { modes: 0 }).is_err());
        assert!(Ensemble::new(
            &q,
            EvaluationScheme::Quadrature(QuadratureParams { panels_base: 0, nodes_per_panel: 16 })
        )
        .is_err());
    }

    #[test]
    fn finite_sum_converges_to_quadrature() {
        let q = QuenchSetup::tfim(0.0, 1.3);
        let fine = Ensemble::new(&q, EvaluationScheme::FiniteN { modes: 4000 }).unwrap();
        let quad = Ensemble::new(&q, quad()).unwrap();
        for i in 0..=16 {
            let t = 0.5 * i as f64;
            let a = fine.density(t).unwrap().e_density;
            let b = quad.density(t).unwrap().e_density;
            assert!((a - b).abs() < 1e-4, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn plateau_bound_and_power_consistency() {
        let q = QuenchSetup::tfim(0.0, 1.3);
        let ens = Ensemble::new(&q, quad()).unwrap();
        let e_inf = ens.saturation().unwrap().e_inf;
        let h = 1e-5;
        for i in 0..=80 {
            let t = 0.1 * i as f64;
            let d = ens.density(t).unwrap();
            assert!(d.e_density <= 2.0 * e_inf + 1e-10);
            if t > h {
                let fd = (ens.density(t + h).unwrap().e_density - ens.density(t - h).unwrap().e_density) / (2.0 * h);
                assert!((d.p_density - fd).abs() < 1e-5, "t={t}");
            }
        }
    }

    #[test]
    fn kink_in_saturation_energy() {
        let e = |gf: f64| saturation_observables(&QuenchSetup::tfim(0.0, gf), quad()).unwrap().e_inf;
        let h = 1e-3;
        let left = (e(1.0) - e(1.0 - h)) / h;
        let right = (e(1.0 + h) - e(1.0)) / h;
        assert!((left - 1.0).abs() < 1e-2, "left slope {left}");
        assert!(right.abs() < 1e-2, "right slope {right}");
    }
}
