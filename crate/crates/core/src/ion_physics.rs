//! Closed-form physical parameters of the two-ion chain: normal modes,
//! gradient-induced spin-motion couplings, J-coupling strengths, Doppler
//! limits, Breit-Rabi field sensitivities and optimal drive strengths.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::error::{Error, Result};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Ion species, trap and drive parameters. Frequencies in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub ion_mass: f64,
    /// Axial magnetic-field gradient in T/m.
    pub gradient: f64,
    /// Axial centre-of-mass secular frequency.
    pub nu1: f64,
    pub n_ions: usize,
    /// Dressing Rabi frequency on each ion.
    pub drive_rabi: [f64; 2],
    /// Mean static field at the ions, in tesla.
    pub b0: f64,
    /// Doppler-cooling transition linewidth.
    pub linewidth: f64,
    pub bohr_magneton: f64,
    pub hbar: f64,
    pub g_factor: f64,
    /// Zero-field hyperfine splitting.
    pub omega0: f64,
}

impl SystemParams {
    /// ¹⁷¹Yb⁺ defaults with the given gradient (T/m), COM frequency and drive (rad/s).
    pub fn yb171(gradient: f64, nu1: f64, drive: f64) -> Self {
        Self {
            ion_mass: 171.0 * ATOMIC_MASS_UNIT,
            gradient,
            nu1,
            n_ions: 2,
            drive_rabi: [drive, drive],
            b0: 7.5e-4,
            linewidth: 2.0 * PI * 19.6e6,
            bohr_magneton: BOHR_MAGNETON,
            hbar: HBAR,
            g_factor: 2.0,
            omega0: 2.0 * PI * 12.642_812e9,
        }
    }

    pub fn with_drive(mut self, drive: f64) -> Self {
        self.drive_rabi = [drive, drive];
        self
    }

    /// Mean of the two per-ion drive strengths.
    pub fn drive(&self) -> f64 {
        0.5 * (self.drive_rabi[0] + self.drive_rabi[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions != 2 {
            return Err(Error::UnsupportedIonCount(self.n_ions));
        }
        let positive = [
            ("ion_mass", self.ion_mass),
            ("nu1", self.nu1),
            ("bohr_magneton", self.bohr_magneton),
            ("hbar", self.hbar),
            ("omega0", self.omega0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("gradient", self.gradient),
            ("drive_rabi[0]", self.drive_rabi[0]),
            ("drive_rabi[1]", self.drive_rabi[1]),
            ("linewidth", self.linewidth),
            ("b0", self.b0),
            ("g_factor", self.g_factor),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Axial normal modes of the two-ion chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    /// Mode frequencies, COM first.
    pub frequencies: Vec<f64>,
    /// `participation[j][n]`: amplitude of ion `j` in mode `n`.
    pub participation: [[f64; 2]; 2],
    /// Zero-point extents sqrt(ħ/(2mν)) in metres.
    pub extents: Vec<f64>,
}

pub fn mode_spectrum(params: &SystemParams) -> Result<ModeSpectrum> {
    if params.n_ions != 2 {
        return Err(Error::UnsupportedIonCount(params.n_ions));
    }
    if !(params.nu1 > 0.0) {
        return Err(Error::InvalidParameter("nu1 must be positive".into()));
    }
    let frequencies = vec![params.nu1, 3f64.sqrt() * params.nu1];
    let s = 1.0 / SQRT_2;
    let extents = frequencies
        .iter()
        .map(|nu| (params.hbar / (2.0 * params.ion_mass * nu)).sqrt())
        .collect();
    Ok(ModeSpectrum { frequencies, participation: [[s, s], [s, -s]], extents })
}

/// Gradient-induced couplings. Mode sums run over the first `modes_included` modes;
/// `j0` always sums over the full spectrum since the static J-coupling is
/// mediated by every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    /// `epsilon[j][n]`
    pub epsilon: [[f64; 2]; 2],
    pub j0: f64,
    pub j_eff: f64,
    pub j_tot: f64,
    /// Per-ion energy shift of the dark state.
    pub shift: [f64; 2],
    /// `g1[j][k][n]`
    pub g1: [[[f64; 2]; 2]; 2],
    /// `g2[j][n]`
    pub g2: [[f64; 2]; 2],
    pub mode_frequencies: [f64; 2],
    pub modes_included: usize,
}

impl CouplingSet {
    /// Mean dark-state shift of the two ions.
    pub fn mean_shift(&self) -> f64 {
        0.5 * (self.shift[0] + self.shift[1])
    }

    /// Effective Rabi frequency of the |DD⟩ ↔ (|ud⟩+|du⟩)/√2 oscillation.
    pub fn j_delta(&self) -> f64 {
        let d = self.mean_shift();
        (d * d + 2.0 * self.j_tot * self.j_tot).sqrt()
    }

    /// Recompute the sideband-induced sums keeping only the first `n` modes.
    pub fn restricted(&self, n: usize) -> Self {
        let n = n.min(2);
        let mut out = self.clone();
        out.modes_included = n;
        out.j_eff = (0..n).map(|m| 2.0 * self.g1[0][1][m]).sum();
        out.j_tot = out.j0 + out.j_eff;
        for j in 0..2 {
            out.shift[j] = (0..n).map(|m| self.g1[j][j][m]).sum();
        }
        out
    }
}

pub fn couplings(params: &SystemParams, modes: &ModeSpectrum) -> Result<CouplingSet> {
    params.validate()?;
    let mut epsilon = [[0.0; 2]; 2];
    for (j, row) in epsilon.iter_mut().enumerate() {
        for (n, e) in row.iter_mut().enumerate() {
            let nu = modes.frequencies[n];
            *e = params.bohr_magneton * params.gradient * modes.participation[j][n] * modes.extents[n]
                / (params.hbar * nu);
        }
    }
    let j0: f64 = (0..2).map(|n| epsilon[0][n] * epsilon[1][n] * modes.frequencies[n]).sum();

    let om = params.drive_rabi;
    let mut g1 = [[[0.0; 2]; 2]; 2];
    let mut g2 = [[0.0; 2]; 2];
    for n in 0..2 {
        let nu = modes.frequencies[n];
        for &o in &om {
            let den = 2.0 * nu * nu - o * o;
            if den.abs() < 1e-6 * nu * nu {
                return Err(Error::ResonantDenominator { mode: n });
            }
        }
        for j in 0..2 {
            for k in 0..2 {
                // cross terms use the product of the two drive amplitudes
                let o2 = om[j] * om[k];
                let o_mean2 = 0.5 * (om[j] * om[j] + om[k] * om[k]);
                let den = 2.0 * nu * nu - o_mean2;
                g1[j][k][n] = epsilon[j][n] * epsilon[k][n] * o2 * nu / (2.0 * den);
            }
            let den = 2.0 * nu * nu - om[j] * om[j];
            g2[j][n] = epsilon[j][n].powi(2) * om[j].powi(3) / (SQRT_2 * den);
        }
    }

    let n_bar = doppler_limit(params, modes);
    for n in 0..2 {
        for j in 0..2 {
            if epsilon[j][n].abs() * n_bar[n].sqrt() >= 0.3 {
                log::warn!(
                    "outside Lamb-Dicke regime: ion {j} mode {n} eps*sqrt(nbar) = {:.3}",
                    epsilon[j][n].abs() * n_bar[n].sqrt()
                );
            }
        }
    }

    let full = CouplingSet {
        epsilon,
        j0,
        j_eff: 0.0,
        j_tot: 0.0,
        shift: [0.0; 2],
        g1,
        g2,
        mode_frequencies: [modes.frequencies[0], modes.frequencies[1]],
        modes_included: 2,
    };
    Ok(full.restricted(2))
}

/// Doppler-cooling limit Γ/(2ν) per mode.
pub fn doppler_limit(params: &SystemParams, modes: &ModeSpectrum) -> Vec<f64> {
    modes.frequencies.iter().map(|nu| params.linewidth / (2.0 * nu)).collect()
}

/// Breit-Rabi first-order field sensitivities of the three F = 1 levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivities {
    pub dbw_p1: f64,
    pub dbw_m1: f64,
    pub dbw_0p: f64,
    pub xi: f64,
}

impl Sensitivities {
    pub fn ratio_m1(&self) -> f64 {
        self.dbw_m1 / self.dbw_p1
    }

    pub fn ratio_0p(&self) -> f64 {
        self.dbw_0p / self.dbw_p1
    }
}

pub fn sensitivities(params: &SystemParams, b: f64) -> Result<Sensitivities> {
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!("field must be positive, got {b}")));
    }
    let xi = params.g_factor * params.bohr_magneton / (params.hbar * params.omega0);
    let quad = xi * xi * b / (1.0 + (xi * b).powi(2)).sqrt();
    let w0 = params.omega0;
    Ok(Sensitivities {
        dbw_p1: 0.5 * w0 * (xi + quad),
        dbw_m1: 0.5 * w0 * (-xi + quad),
        dbw_0p: w0 * quad,
        xi,
    })
}

/// Drive strength minimising the intrinsic gate error.
///
/// Without the phase flip the optimum is closed form; with it the total error
/// is minimised numerically on (0, ν₁/√2).
pub fn optimal_drive(params: &SystemParams, phase_flip: bool) -> Result<f64> {
    params.validate()?;
    if !(params.gradient > 0.0) {
        return Err(Error::InvalidParameter("optimal drive needs a non-zero gradient".into()));
    }
    if !phase_flip {
        let mu = params.bohr_magneton * params.gradient;
        let inner = mu * mu / (5.0 * 19f64.sqrt() * params.hbar * params.ion_mass * PI);
        return Ok(2.0 * inner.cbrt());
    }
    let modes = mode_spectrum(params)?;
    let j0 = couplings(&params.clone().with_drive(0.0), &modes)?.j0;
    let nu1 = params.nu1;
    let cost = |log_om: f64| {
        let om = log_om.exp();
        analytic::eta1(om, nu1) + analytic::eta2(j0, om, true)
    };
    let hi = (nu1 / SQRT_2).ln();
    let lo = (nu1 * 1e-6).ln();
    let (a, b) = bracket_minimum(&cost, lo, hi, 200).ok_or(Error::NoInteriorMinimum {
        lo: lo.exp(),
        hi: hi.exp(),
    })?;
    Ok(golden_section(&cost, a, b, 1e-6).exp())
}

/// Grid search for a sub-interval whose interior point beats both neighbours.
fn bracket_minimum(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Option<(f64, f64)> {
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let (imin, _) = ys
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    if imin == 0 || imin == n {
        return None;
    }
    Some((xs[imin - 1], xs[imin + 1]))
}

/// Golden-section search on a log-frequency axis; `rel_tol` applies to exp(x).
fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    // width in log space approximates relative width of the frequency
    while (b - a) > rel_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Gate duration π/J_δ.
pub fn gate_time(c: &CouplingSet) -> Result<f64> {
    if !(c.j_tot > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gate time needs a positive coupling, got J_tot = {}",
            c.j_tot
        )));
    }
    Ok(PI / c.j_delta())
}
