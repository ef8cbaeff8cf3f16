//! Exact single-mode quench dynamics.
//!
//! Each momentum sector is a two-level system rotated by
//! `U(t) = cos(ε_f t) I − i sin(ε_f t) d̂_f·σ`. With `p = A sin²(ε_f t)` the
//! excitation probability, every charging observable of the mode is a
//! closed form in `(ε_i, ε_f, A, t)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{check_momentum, evaluate_mode, quench_geometry, BlochVector, ModeGeometry, QuenchSetup, TwoBandSpec};

/// Floor for `sqrt(variance)` in the per-mode SNR.
pub const SNR_FLOOR: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2×2 complex matrix; the propagators built here are unitary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unitary2 {
    pub m: [[Complex64; 2]; 2],
}

impl Unitary2 {
    pub fn identity() -> Self {
        Self {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    /// `d·σ` for a Bloch vector.
    pub fn pauli_dot(d: &BlochVector) -> Self {
        Self {
            m: [
                [Complex64::new(d.d3, 0.0), Complex64::new(d.d1, -d.d2)],
                [Complex64::new(d.d1, d.d2), Complex64::new(-d.d3, 0.0)],
            ],
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        let mut m = [[ZERO; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self { m }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += o.m[i][j];
            }
        }
        Self { m }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            m: self.m.map(|row| row.map(|z| z * s)),
        }
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
        }
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// Largest elementwise modulus of `self − o`.
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.m[i][j] - o.m[i][j]).norm());
            }
        }
        worst
    }

    /// Largest elementwise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        self.adjoint().mul(self).max_abs_diff(&Self::identity())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

/// `cos(εt) I − i sin(εt) n̂·σ` for a unit vector `n̂`.
fn rotation(eps: f64, n: &BlochVector, t: f64) -> Unitary2 {
    let (s, c) = (eps * t).sin_cos();
    Unitary2 {
        m: [
            [Complex64::new(c, -s * n.d3), Complex64::new(-s * n.d2, -s * n.d1)],
            [Complex64::new(s * n.d2, -s * n.d1), Complex64::new(c, s * n.d3)],
        ],
    }
}

pub fn propagator_closed(q: &QuenchSetup, k: f64, t: f64) -> Result<Unitary2> {
    check_time(t)?;
    let f = evaluate_mode(&q.final_, k)?;
    Ok(rotation(f.eps, &f.unit_d, t))
}

/// Classical RK4 integration of `i ∂_t U = H_f(k) U` from `U(0) = I`.
///
/// No renormalization is applied. The step actually used is `t / n` with
/// `n = ceil(t / dt)`, so it never exceeds `dt`.
pub fn propagator_ode_oracle(q: &QuenchSetup, k: f64, t: f64, dt: f64) -> Result<Unitary2> {
    check_time(t)?;
    let f = evaluate_mode(&q.final_, k)?;
    let limit = 0.01 / f.eps;
    if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(Error::StepTooLarge { dt, limit });
    }
    if t == 0.0 {
        return Ok(Unitary2::identity());
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    // dU/dt = G U with G = −i H
    let gen = Unitary2::pauli_dot(&f.d).scale(Complex64::new(0.0, -1.0));
    let rhs = |u: &Unitary2| gen.mul(u);
    let half = Complex64::new(h / 2.0, 0.0);
    let full = Complex64::new(h, 0.0);
    let sixth = Complex64::new(h / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    let mut u = Unitary2::identity();
    for _ in 0..steps {
        let k1 = rhs(&u);
        let k2 = rhs(&u.add(&k1.scale(half)));
        let k3 = rhs(&u.add(&k2.scale(half)));
        let k4 = rhs(&u.add(&k3.scale(full)));
        let incr = k1.add(&k2.scale(two)).add(&k3.scale(two)).add(&k4);
        u = u.add(&incr.scale(sixth));
    }
    Ok(u)
}

/// Ground state of `d·σ` (eigenvalue `−ε`), phase fixed so the first
/// nonzero component is real and positive.
pub fn ground_state(spec: &TwoBandSpec, k: f64) -> Result<[Complex64; 2]> {
    let e = evaluate_mode(spec, k)?;
    let BlochVector { d1, d2, d3 } = e.d;
    // Two equivalent null vectors of (d·σ + ε); take the better conditioned one.
    let v = if d3 <= 0.0 {
        [Complex64::new(e.eps - d3, 0.0), Complex64::new(-d1, -d2)]
    } else {
        [Complex64::new(-d1, d2), Complex64::new(d3 + e.eps, 0.0)]
    };
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let mut v = [v[0] / norm, v[1] / norm];
    let lead = if v[0].norm() > 1e-14 { v[0] } else { v[1] };
    let phase = lead.conj() / lead.norm();
    v = [v[0] * phase, v[1] * phase];
    Ok(v)
}

pub fn loschmidt_amplitude(q: &QuenchSetup, k: f64, t: f64) -> Result<Complex64> {
    check_time(t)?;
    let g = quench_geometry(q, k)?;
    Ok(loschmidt_from_geometry(&g, t))
}

pub fn loschmidt_from_geometry(g: &ModeGeometry, t: f64) -> Complex64 {
    let (s, c) = (g.eps_f * t).sin_cos();
    Complex64::new(c, s * g.cos_theta)
}

/// Charging observables of one momentum mode at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeObservables {
    pub k: f64,
    pub t: f64,
    /// Stored energy `2 ε_i A sin²(ε_f t)`.
    pub delta_e: f64,
    /// `2 ε_i ε_f A sin(2 ε_f t)`.
    pub power: f64,
    pub loschmidt: Complex64,
    pub surv_prob: f64,
    pub exc_prob: f64,
    /// Charging-energy variance `4 ε_i² p (1 − p)`.
    pub variance: f64,
    pub snr: f64,
}

pub fn mode_observables(q: &QuenchSetup, k: f64, t: f64) -> Result<ModeObservables> {
    check_momentum(k)?;
    check_time(t)?;
    let g = quench_geometry(q, k)?;
    Ok(observables_from_geometry(&g, t))
}

pub fn observables_from_geometry(g: &ModeGeometry, t: f64) -> ModeObservables {
    let (s, c) = (g.eps_f * t).sin_cos();
    let s2 = s * s;
    let exc = g.weight_a * s2;
    let surv = c * c + s2 * g.cos_theta * g.cos_theta;
    let delta_e = 2.0 * g.eps_i * exc;
    let variance = 4.0 * g.eps_i * g.eps_i * exc * (1.0 - exc);
    ModeObservables {
        k: g.k,
        t,
        delta_e,
        power: 2.0 * g.eps_i * g.eps_f * g.weight_a * (2.0 * g.eps_f * t).sin(),
        loschmidt: Complex64::new(c, s * g.cos_theta),
        surv_prob: surv,
        exc_prob: exc,
        variance: variance.max(0.0),
        snr: snr_ratio(delta_e, variance),
    }
}

pub(crate) fn snr_ratio(signal: f64, variance: f64) -> f64 {
    if signal == 0.0 {
        return 0.0;
    }
    signal / variance.max(0.0).sqrt().max(SNR_FLOOR)
}

/// `⟨ψ| d·σ |ψ⟩` for a normalized two-component state.
pub fn bloch_expectation(d: &BlochVector, psi: [Complex64; 2]) -> f64 {
    let h = Unitary2::pauli_dot(d).apply(psi);
    (psi[0].conj() * h[0] + psi[1].conj() * h[1]).re
}
