//! Two-band Bloch Hamiltonians `H(k) = d0(k) I + d(k)·σ` and the per-mode
//! geometry of a quench between two of them.
//!
//! Momenta live on the open half Brillouin zone `(0, π)`. The scalar shift
//! `d0` is carried along but never enters stored-energy formulas: it drops
//! out of every energy difference.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::dsl::CompiledModel;
use crate::error::{Error, Result};

/// Band energies below this are treated as a closed gap.
pub const GAP_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochVector {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl BlochVector {
    pub fn new(d1: f64, d2: f64, d3: f64) -> Self {
        Self { d1, d2, d3 }
    }

    pub fn norm(&self) -> f64 {
        (self.d1 * self.d1 + self.d2 * self.d2 + self.d3 * self.d3).sqrt()
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.d1 * other.d1 + self.d2 * other.d2 + self.d3 * other.d3
    }

    pub fn cross(&self, other: &BlochVector) -> Self {
        Self::new(
            self.d2 * other.d3 - self.d3 * other.d2,
            self.d3 * other.d1 - self.d1 * other.d3,
            self.d1 * other.d2 - self.d2 * other.d1,
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.d1 * s, self.d2 * s, self.d3 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.d1.is_finite() && self.d2.is_finite() && self.d3.is_finite()
    }

    pub fn components(&self) -> [f64; 3] {
        [self.d1, self.d2, self.d3]
    }
}

#[derive(Clone)]
enum SpecForm {
    Tfim { g: f64 },
    Compiled(Arc<CompiledModel>),
}

/// A parameterized two-band Bloch Hamiltonian.
#[derive(Clone)]
pub struct TwoBandSpec {
    form: SpecForm,
}

impl fmt::Debug for TwoBandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            SpecForm::Tfim { g } => write!(f, "TwoBandSpec::Tfim {{ g: {g} }}"),
            SpecForm::Compiled(m) => write!(f, "TwoBandSpec::Model({:?})", m.params()),
        }
    }
}

/// Transverse-field Ising chain: `d(k) = (0, 2 sin k, 2(g − cos k))`, `d0 = 0`.
pub fn tfim_spec(g: f64) -> TwoBandSpec {
    TwoBandSpec {
        form: SpecForm::Tfim { g },
    }
}

impl TwoBandSpec {
    pub(crate) fn from_compiled(model: CompiledModel) -> Self {
        Self {
            form: SpecForm::Compiled(Arc::new(model)),
        }
    }

    pub fn d0(&self, k: f64) -> Result<f64> {
        match &self.form {
            SpecForm::Tfim { .. } => Ok(0.0),
            SpecForm::Compiled(m) => m.d0(k),
        }
    }

    /// Raw Bloch vector; finiteness is checked.
    pub fn d(&self, k: f64) -> Result<BlochVector> {
        let d = match &self.form {
            SpecForm::Tfim { g } => {
                let (s, c) = k.sin_cos();
                BlochVector::new(0.0, 2.0 * s, 2.0 * (g - c))
            }
            SpecForm::Compiled(m) => m.d(k)?,
        };
        if !d.is_finite() {
            return Err(Error::NonFinite { k });
        }
        Ok(d)
    }

    /// The transverse field when this spec is the closed-form TFIM.
    pub fn tfim_field(&self) -> Option<f64> {
        match self.form {
            SpecForm::Tfim { g } => Some(g),
            SpecForm::Compiled(_) => None,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        match &self.form {
            SpecForm::Tfim { g } => BTreeMap::from([("g".to_string(), *g)]),
            SpecForm::Compiled(m) => m.params().clone(),
        }
    }

    /// Returns a copy with one named parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Result<TwoBandSpec> {
        match &self.form {
            SpecForm::Tfim { .. } if name == "g" => Ok(tfim_spec(value)),
            SpecForm::Tfim { .. } => Err(Error::Config(vec![format!(
                "TFIM spec has no parameter `{name}` (only `g`)"
            )])),
            SpecForm::Compiled(m) => Ok(Self::from_compiled(m.with_param(name, value)?)),
        }
    }
}

/// Result of evaluating one spec at one momentum.
#[derive(Clone, Copy, Debug)]
pub struct ModeEvaluation {
    pub d: BlochVector,
    pub eps: f64,
    pub unit_d: BlochVector,
}

pub fn check_momentum(k: f64) -> Result<()> {
    if k > 0.0 && k < PI {
        Ok(())
    } else {
        Err(Error::MomentumOutOfRange(k))
    }
}

pub fn evaluate_mode(spec: &TwoBandSpec, k: f64) -> Result<ModeEvaluation> {
    check_momentum(k)?;
    let d = spec.d(k)?;
    let eps = d.norm();
    if eps < GAP_THRESHOLD {
        return Err(Error::GapClosing { k, eps });
    }
    Ok(ModeEvaluation {
        d,
        eps,
        unit_d: d.scale(1.0 / eps),
    })
}

/// An (initial, final) pair defining one sudden-quench charging protocol.
#[derive(Clone, Debug)]
pub struct QuenchSetup {
    pub initial: TwoBandSpec,
    pub final_: TwoBandSpec,
}

impl QuenchSetup {
    pub fn new(initial: TwoBandSpec, final_: TwoBandSpec) -> Self {
        Self { initial, final_ }
    }

    pub fn tfim(g_i: f64, g_f: f64) -> Self {
        Self::new(tfim_spec(g_i), tfim_spec(g_f))
    }

    /// `(g_i, g_f)` when both sides are closed-form TFIM specs.
    pub fn tfim_fields(&self) -> Option<(f64, f64)> {
        Some((self.initial.tfim_field()?, self.final_.tfim_field()?))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModeGeometry {
    pub k: f64,
    pub eps_i: f64,
    pub eps_f: f64,
    pub unit_i: BlochVector,
    pub unit_f: BlochVector,
    /// `d̂_i · d̂_f`, clamped to `[-1, 1]`.
    pub cos_theta: f64,
    /// Charging weight `A = 1 − cos²θ`.
    pub weight_a: f64,
}

pub fn quench_geometry(q: &QuenchSetup, k: f64) -> Result<ModeGeometry> {
    let i = evaluate_mode(&q.initial, k)?;
    let f = evaluate_mode(&q.final_, k)?;
    let cos_theta = i.unit_d.dot(&f.unit_d).clamp(-1.0, 1.0);
    // |d̂_i × d̂_f|² is exactly zero for parallel vectors, unlike 1 − cos²θ.
    let sin_sq = i.unit_d.cross(&f.unit_d).norm().powi(2).min(1.0);
    Ok(ModeGeometry {
        k,
        eps_i: i.eps,
        eps_f: f.eps,
        unit_i: i.unit_d,
        unit_f: f.unit_d,
        cos_theta,
        weight_a: sin_sq,
    })
}

/// Midpoint grid `k_n = π(n + ½)/M` on the half Brillouin zone.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumGrid {
    pub points: Vec<f64>,
}

impl MomentumGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lattice sites represented by the grid (`N = 2M`).
    pub fn sites(&self) -> usize {
        2 * self.points.len()
    }
}

pub fn momentum_grid(m: usize) -> Result<MomentumGrid> {
    if m == 0 {
        return Err(Error::InvalidCount("momentum grid needs M >= 1".into()));
    }
    let points = (0..m)
        .map(|n| PI * (n as f64 + 0.5) / m as f64)
        .collect();
    Ok(MomentumGrid { points })
}
