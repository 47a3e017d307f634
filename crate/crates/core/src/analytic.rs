//! Closed-form gate analytics: detuned evolution amplitudes, Bell fidelity
//! versus accumulated phase, the intrinsic error components and the
//! off-resonant |DD⟩ amplitude with and without the mid-gate phase flip.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ion_physics::{CouplingSet, SystemParams};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// Off-resonant carrier-sideband error.
    pub eta1: f64,
    /// Off-resonant J-coupling error (upper bound).
    pub eta2: f64,
    pub eta_tot: f64,
    /// Phase accumulated from the dark-state shift over one gate.
    pub phi: f64,
    pub j_delta: f64,
    pub phase_flip: bool,
}

/// Amplitudes of |DD⟩, |ud⟩, |du⟩ together with the cosine factors that
/// build the off-resonant |DD⟩ amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionAmplitudes {
    pub a_dd: C64,
    pub a_ud: C64,
    pub a_du: C64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta1_flip: Option<f64>,
    pub beta2_flip: Option<f64>,
}

/// Evolution of |DD⟩ under the gate Hamiltonian with a dark-state shift `delta`.
pub fn detuned_evolution(j_tot: f64, delta: f64, t: f64) -> EvolutionAmplitudes {
    let jd = (delta * delta + 2.0 * j_tot * j_tot).sqrt();
    let (s, c) = (jd * t).sin_cos();
    let global = C64::from_polar(1.0, 3.0 * delta * t);
    let a_dd = global * C64::new(c, delta / jd * s);
    let a_s = global * C64::new(0.0, j_tot / jd * s);
    EvolutionAmplitudes {
        a_dd,
        a_ud: a_s,
        a_du: a_s,
        beta1: f64::NAN,
        beta2: f64::NAN,
        beta1_flip: None,
        beta2_flip: None,
    }
}

/// Fidelity of the target Bell state when |DD⟩ carries a residual phase `phi`.
pub fn bell_fidelity_phase(phi: f64) -> f64 {
    let p = wrap_phase(phi);
    (3.0 + 2.0 * p.cos() + 2.0 * (2.0 * p).cos() + (3.0 * p).cos()) / 8.0
}

/// Reduce to (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Carrier-sideband error for the two-ion axial spectrum.
pub fn eta1(omega: f64, nu1: f64) -> f64 {
    475.0 * PI * PI * omega.powi(4) / (4608.0 * nu1.powi(4))
}

/// Off-resonant J-coupling error bound.
pub fn eta2(j0: f64, omega: f64, phase_flip: bool) -> f64 {
    let r = j0 * j0 / (omega * omega);
    if phase_flip {
        4.0 * r * r
    } else {
        r
    }
}

pub fn error_budget(params: &SystemParams, c: &CouplingSet, phase_flip: bool) -> Result<ErrorBudget> {
    let omega = params.drive();
    let pole = SQRT_2 * params.nu1;
    if omega >= pole {
        return Err(Error::AbovePole { omega, pole });
    }
    let e1 = eta1(omega, params.nu1);
    let e2 = if omega > 0.0 { eta2(c.j0, omega, phase_flip) } else { f64::INFINITY };
    let j_delta = c.j_delta();
    let phi = if j_delta > 0.0 { PI * c.mean_shift() / j_delta } else { 0.0 };
    Ok(ErrorBudget {
        eta1: e1,
        eta2: e2.min(1.0),
        eta_tot: (e1 + e2).min(1.0),
        phi,
        j_delta,
        phase_flip,
    })
}

/// |DD⟩ amplitude after one gate when the J-coupling also drives the
/// off-resonant |DD⟩ ↔ |uu⟩, |dd⟩ transitions.
pub fn off_resonant_amplitude(j0: f64, omega: f64, phase_flip: bool) -> EvolutionAmplitudes {
    let j2 = j0 * j0;
    let o2 = omega * omega;
    let r = (4.0 * j2 * j2 + o2 * o2).sqrt();
    let upper = (2.0 * j2 + o2 + r).sqrt();
    // 2J² + Ω² − r rewritten to avoid cancellation for Ω ≫ J
    let lower = (4.0 * j2 * o2 / (2.0 * j2 + o2 + r)).sqrt();
    let beta = |scale: f64| {
        (
            (PI * upper / (scale * SQRT_2 * j0)).cos(),
            (PI * lower / (scale * SQRT_2 * j0)).cos(),
        )
    };
    let (b1, b2) = beta(1.0);
    let mix = (2.0 * j2 - o2) / (2.0 * r);
    let mut a = 0.5 * (b1 + b2) + mix * (b1 - b2);
    let mut out = EvolutionAmplitudes {
        a_dd: C64::new(0.0, 0.0),
        a_ud: C64::new(0.0, 0.0),
        a_du: C64::new(0.0, 0.0),
        beta1: b1,
        beta2: b2,
        beta1_flip: None,
        beta2_flip: None,
    };
    if phase_flip {
        let (b1f, b2f) = beta(2.0);
        a -= 2.0 * j2 * o2 / (4.0 * j2 * j2 + o2 * o2) * (b1f - b2f).powi(2);
        out.beta1_flip = Some(b1f);
        out.beta2_flip = Some(b2f);
    }
    out.a_dd = C64::new(a, 0.0);
    out
}
