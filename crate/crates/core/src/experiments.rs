//! Runners behind the command-line subcommands. Each returns plain row
//! structs; formatting and file output live in the binary.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::error_budget;
use crate::config::ModelChoice;
use crate::error::{Error, Result};
use crate::ion_physics::{couplings, doppler_limit, gate_time, mode_spectrum, optimal_drive, SystemParams};
use crate::noise::{
    derive_seed, fid_experiment, pdd_experiment, voltage_to_b_psd, b_per_volt, position_psd, FidConfig, FidResult,
    PddConfig, VoltageNoiseParams,
};
use crate::propagate::{bell_experiment, fidelity_series, BellConfig, Method, ModelKind, NoiseSpec, SeriesPoint};
use crate::stats::{loglog_slope, Summary};

const TWO_PI: f64 = 2.0 * PI;

/// Closed-form gate parameters, frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRow {
    pub gradient: f64,
    pub nu1_hz: f64,
    pub drive_hz: f64,
    pub j0_hz: f64,
    pub j_eff_hz: f64,
    pub j_tot_hz: f64,
    pub shift_hz: f64,
    pub gate_time: f64,
    pub omega_opt_hz: f64,
    pub omega_opt_flip_hz: Option<f64>,
    pub eta_tot: Option<f64>,
    pub eta_tot_flip: Option<f64>,
    pub lamb_dicke: [[f64; 2]; 2],
    pub n_bar_min: Vec<f64>,
}

pub fn params_table(p: &SystemParams) -> Result<ParamsRow> {
    let modes = mode_spectrum(p)?;
    let c = couplings(p, &modes)?;
    let to_hz = |w: f64| w / TWO_PI;
    Ok(ParamsRow {
        gradient: p.gradient,
        nu1_hz: to_hz(p.nu1),
        drive_hz: to_hz(p.drive()),
        j0_hz: to_hz(c.j0),
        j_eff_hz: to_hz(c.j_eff),
        j_tot_hz: to_hz(c.j_tot),
        shift_hz: to_hz(c.mean_shift()),
        gate_time: gate_time(&c).unwrap_or(f64::INFINITY),
        omega_opt_hz: optimal_drive(p, false).map(to_hz).unwrap_or(f64::NAN),
        omega_opt_flip_hz: optimal_drive(p, true).ok().map(to_hz),
        eta_tot: error_budget(p, &c, false).ok().map(|b| b.eta_tot),
        eta_tot_flip: error_budget(p, &c, true).ok().map(|b| b.eta_tot),
        lamb_dicke: c.epsilon,
        n_bar_min: doppler_limit(p, &modes),
    })
}

/// Grid of gate runs over drive, secular frequency, gradient and phase flip.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub base: SystemParams,
    /// rad/s
    pub drives: Vec<f64>,
    /// rad/s
    pub nus: Vec<f64>,
    pub gradients: Vec<f64>,
    pub phase_flip: Vec<bool>,
    pub models: Vec<ModelChoice>,
    pub fock_cutoffs: Vec<usize>,
    pub method: Method,
    pub truncation_tol: Option<f64>,
}

impl ScanSpec {
    /// Drive scan at fixed physical parameters.
    pub fn drives(base: SystemParams, drives: Vec<f64>, models: Vec<ModelChoice>) -> Self {
        Self {
            nus: vec![base.nu1],
            gradients: vec![base.gradient],
            base,
            drives,
            phase_flip: vec![false],
            models,
            fock_cutoffs: vec![2, 2],
            method: Method::Auto,
            truncation_tol: Some(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub gradient: f64,
    pub nu1_hz: f64,
    pub drive_hz: f64,
    pub phase_flip: bool,
    pub gate_time: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta_tot: f64,
    pub exact: Option<f64>,
    pub exact_leakage: Option<f64>,
    pub approx: Option<f64>,
}

fn scan_point(spec: &ScanSpec, gradient: f64, nu: f64, drive: f64, flip: bool) -> Result<Option<ScanRow>> {
    let mut p = spec.base.clone().with_drive(drive);
    p.gradient = gradient;
    p.nu1 = nu;
    let modes = mode_spectrum(&p)?;
    let c = couplings(&p, &modes)?;
    let budget = match error_budget(&p, &c, flip) {
        Ok(b) => b,
        Err(Error::AbovePole { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut row = ScanRow {
        gradient,
        nu1_hz: nu / TWO_PI,
        drive_hz: drive / TWO_PI,
        phase_flip: flip,
        gate_time: gate_time(&c)?,
        eta1: budget.eta1,
        eta2: budget.eta2,
        eta_tot: budget.eta_tot,
        exact: None,
        exact_leakage: None,
        approx: None,
    };
    for model in &spec.models {
        let kind = match model {
            ModelChoice::Exact => ModelKind::Exact { fock_cutoffs: spec.fock_cutoffs.clone() },
            ModelChoice::Approx => ModelKind::Approx,
        };
        let mut cfg = BellConfig::new(p.clone(), kind);
        cfg.phase_flip = flip;
        cfg.method = spec.method;
        cfg.truncation_tol = spec.truncation_tol;
        let r = bell_experiment(&cfg)?;
        match model {
            ModelChoice::Exact => {
                row.exact = Some(r.infidelity);
                row.exact_leakage = Some(r.leakage);
            }
            ModelChoice::Approx => row.approx = Some(r.infidelity),
        }
    }
    Ok(Some(row))
}

/// Closed-form and simulated intrinsic errors over the grid; points at or
/// above the sideband pole are skipped.
pub fn error_scan(spec: &ScanSpec) -> Result<Vec<ScanRow>> {
    let mut points = Vec::new();
    for &g in &spec.gradients {
        for &nu in &spec.nus {
            for &flip in &spec.phase_flip {
                for &d in &spec.drives {
                    points.push((g, nu, d, flip));
                }
            }
        }
    }
    let rows: Vec<Option<ScanRow>> =
        points.par_iter().map(|&(g, nu, d, flip)| scan_point(spec, g, nu, d, flip)).collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Oscillation period (in the drive, Hz) of the exact infidelity at low drive.
pub fn oscillation_period_hz(p: &SystemParams) -> Result<f64> {
    let c = couplings(p, &mode_spectrum(p)?)?;
    Ok(2.0 * SQRT_2 * c.j0 / TWO_PI)
}

/// Log-log slope of the per-period oscillation amplitude (max − min) of
/// `values` against `drives`. Bins hold consecutive drives spanning one period.
pub fn envelope_slope(drives: &[f64], values: &[f64], period: f64) -> Option<(f64, Vec<(f64, f64)>)> {
    if drives.is_empty() || period <= 0.0 {
        return None;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut start = 0;
    while start < drives.len() {
        let mut end = start;
        while end < drives.len() && drives[end] < drives[start] + period {
            end += 1;
        }
        if end - start >= 4 && end < drives.len() {
            let w = &values[start..end];
            let hi = w.iter().cloned().fold(f64::MIN, f64::max);
            let lo = w.iter().cloned().fold(f64::MAX, f64::min);
            let centre = drives[start..end].iter().sum::<f64>() / (end - start) as f64;
            bins.push((centre, hi - lo));
        }
        start = end.max(start + 1);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = bins.iter().cloned().unzip();
    loglog_slope(&x, &y).map(|s| (s, bins))
}

/// Fidelity time series of a noise-free gate.
pub fn evolve_series(cfg: &BellConfig, t_end: f64, n_times: usize) -> Result<Vec<SeriesPoint>> {
    if n_times < 2 || !(t_end > 0.0) {
        return Err(Error::InvalidParameter("time series needs t_end > 0 and at least two points".into()));
    }
    let times: Vec<f64> = (0..n_times).map(|k| t_end * k as f64 / (n_times - 1) as f64).collect();
    Ok(fidelity_series(cfg, &times)?.0)
}

/// Time and value of the fidelity maximum, refined by a parabola through
/// the largest sample and its neighbours.
pub fn fidelity_peak(series: &[SeriesPoint]) -> Option<(f64, f64)> {
    let k = (0..series.len()).max_by(|&a, &b| series[a].fidelity.partial_cmp(&series[b].fidelity).unwrap())?;
    if k == 0 || k + 1 == series.len() {
        return Some((series[k].t, series[k].fidelity));
    }
    let (a, b, c) = (series[k - 1].fidelity, series[k].fidelity, series[k + 1].fidelity);
    let h = series[k + 1].t - series[k].t;
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return Some((series[k].t, b));
    }
    let x = 0.5 * (a - c) / den;
    Some((series[k].t + x * h, b - 0.25 * (a - c) * x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Cdd,
    Pdd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCompareSpec {
    /// Gate parameters; the drive field is replaced by each entry of `drives`.
    pub params: SystemParams,
    /// Continuous-decoupling drives, rad/s.
    pub drives: Vec<f64>,
    pub t2s: Vec<f64>,
    pub n_pulses: Vec<usize>,
    /// Run each point without and/or with amplitude noise.
    pub amplitude_flags: Vec<bool>,
    pub amplitude_rel: f64,
    pub amplitude_tau_c: f64,
    pub pulse_rabi: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub independent_ions: bool,
    /// Also run the continuous scheme with amplitude noise only.
    pub amplitude_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub t2: Option<f64>,
    pub scheme: Scheme,
    /// Continuous-decoupling drive in Hz; none for the pulsed scheme.
    pub drive_hz: Option<f64>,
    pub n_pulses: usize,
    pub amplitude_noise: bool,
    pub mean_infidelity: f64,
    pub sem: f64,
    pub n: usize,
}

fn cdd_run(spec: &NoiseCompareSpec, drive: f64, t2: Option<f64>, amp: bool, seed: u64) -> Result<f64> {
    let mut cfg = BellConfig::new(spec.params.clone().with_drive(drive), ModelKind::Approx);
    cfg.noise = NoiseSpec {
        t2,
        amplitude_rel: amp.then_some(spec.amplitude_rel),
        amplitude_tau_c: spec.amplitude_tau_c,
        independent_ions: spec.independent_ions,
    };
    cfg.seed = seed;
    Ok(bell_experiment(&cfg)?.infidelity)
}

fn pdd_run(spec: &NoiseCompareSpec, t2: f64, n: usize, amp: bool, seed: u64) -> Result<f64> {
    let mut cfg = PddConfig::new(spec.params.clone(), n);
    cfg.pulse_rabi = spec.pulse_rabi;
    cfg.t2 = Some(t2);
    cfg.amplitude_rel = amp.then_some(spec.amplitude_rel);
    cfg.amplitude_tau_c = spec.amplitude_tau_c;
    cfg.independent_ions = spec.independent_ions;
    cfg.seed = seed;
    Ok(pdd_experiment(&cfg)?.infidelity)
}

/// Mean infidelities of continuous and XY4-pulsed decoupling. Realisation i
/// of every scheme uses the noise seed derived from (master seed, i).
pub fn noise_compare(spec: &NoiseCompareSpec) -> Result<Vec<NoiseRow>> {
    if spec.n_realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realisation".into()));
    }
    if spec.drives.is_empty() {
        return Err(Error::InvalidParameter("need at least one continuous-decoupling drive".into()));
    }
    #[derive(Clone, Copy)]
    enum Job {
        Cdd(f64, Option<f64>, bool),
        Pdd(f64, usize, bool),
    }
    let mut jobs = Vec::new();
    for &t2 in &spec.t2s {
        for &amp in &spec.amplitude_flags {
            for &d in &spec.drives {
                jobs.push(Job::Cdd(d, Some(t2), amp));
            }
            for &n in &spec.n_pulses {
                jobs.push(Job::Pdd(t2, n, amp));
            }
        }
    }
    if spec.amplitude_only {
        for &d in &spec.drives {
            jobs.push(Job::Cdd(d, None, false));
            jobs.push(Job::Cdd(d, None, true));
        }
    }
    let runs: Vec<(usize, u64)> =
        (0..jobs.len()).flat_map(|j| (0..spec.n_realizations as u64).map(move |i| (j, i))).collect();
    let values: Vec<f64> = runs
        .par_iter()
        .map(|&(j, i)| {
            let seed = derive_seed(spec.master_seed, i);
            match jobs[j] {
                Job::Cdd(d, t2, amp) => cdd_run(spec, d, t2, amp, seed),
                Job::Pdd(t2, n, amp) => pdd_run(spec, t2, n, amp, seed),
            }
        })
        .collect::<Result<_>>()?;
    Ok(jobs
        .iter()
        .zip(values.chunks(spec.n_realizations))
        .map(|(job, v)| {
            let s = Summary::of(v);
            let (t2, scheme, drive_hz, n_pulses, amplitude_noise) = match *job {
                Job::Cdd(d, t2, amp) => (t2, Scheme::Cdd, Some(d / TWO_PI), 0, amp),
                Job::Pdd(t2, n, amp) => (Some(t2), Scheme::Pdd, None, n, amp),
            };
            NoiseRow { t2, scheme, drive_hz, n_pulses, amplitude_noise, mean_infidelity: s.mean, sem: s.sem, n: s.n }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageRow {
    pub nu_z_hz: f64,
    pub omega_hz: f64,
    pub s_v: f64,
    pub s_z: f64,
    pub s_b: f64,
    pub db_dv: f64,
}

/// S_z and S_B over `omegas` (rad/s) for each secular frequency in `nus` (rad/s).
pub fn voltage_table(p: &SystemParams, v: &VoltageNoiseParams, omegas: &[f64], nus: &[f64]) -> Result<Vec<VoltageRow>> {
    let mut rows = Vec::new();
    for &nu in nus {
        let mut q = p.clone();
        q.nu1 = nu;
        for &w in omegas {
            rows.push(VoltageRow {
                nu_z_hz: nu / TWO_PI,
                omega_hz: w / TWO_PI,
                s_v: v.spectrum.at(w),
                s_z: position_psd(w, v, &q)?,
                s_b: voltage_to_b_psd(w, v, &q)?,
                db_dv: b_per_volt(w, v, &q)?,
            });
        }
    }
    Ok(rows)
}

/// Local exponents of S_B in the gradient and the secular frequency,
/// from doubling the gradient and halving ν_z at ω = ν_z/100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub gradient: f64,
    pub secular: f64,
}

pub fn psd_scaling_exponents(p: &SystemParams, v: &VoltageNoiseParams) -> Result<ScalingExponents> {
    let w = p.nu1 / 100.0;
    let base = voltage_to_b_psd(w, v, p)?;
    let mut g2 = p.clone();
    g2.gradient *= 2.0;
    let mut nu2 = p.clone();
    nu2.nu1 /= 2.0;
    Ok(ScalingExponents {
        gradient: (voltage_to_b_psd(w, v, &g2)? / base).ln() / 2f64.ln(),
        secular: (voltage_to_b_psd(w, v, &nu2)? / base).ln() / 0.5f64.ln(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidComparison {
    pub bare: FidResult,
    pub dressed: FidResult,
    /// Dressed over bare fitted coherence time.
    pub ratio: f64,
}

/// Free-induction decay with and without the dressing field on the probed ion.
/// The dressed run samples `span_factor` times longer.
pub fn fid_comparison(
    p: &SystemParams,
    t2: f64,
    dressing: f64,
    t_end: f64,
    n_times: usize,
    span_factor: f64,
    n_realizations: usize,
    seed: u64,
) -> Result<FidComparison> {
    if n_times < 2 {
        return Err(Error::InvalidParameter("FID needs at least two sample times".into()));
    }
    let grid = |end: f64| (1..=n_times).map(|k| end * k as f64 / n_times as f64).collect::<Vec<_>>();
    let bare = fid_experiment(&FidConfig {
        params: p.clone(),
        t2,
        drive: None,
        n_realizations,
        times: grid(t_end),
        seed,
    })?;
    let dressed = fid_experiment(&FidConfig {
        params: p.clone(),
        t2,
        drive: Some(dressing),
        n_realizations,
        times: grid(t_end * span_factor),
        seed,
    })?;
    let ratio = dressed.decay_time / bare.decay_time;
    Ok(FidComparison { bare, dressed, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::VoltageSpectrum;

    fn low_gradient() -> SystemParams {
        SystemParams::yb171(20.0, TWO_PI * 140e3, TWO_PI * 20e3)
    }

    #[test]
    fn params_row() {
        let r = params_table(&low_gradient()).unwrap();
        assert!((r.j0_hz - 39.4).abs() < 0.4);
        assert!((r.gate_time - 8.86e-3).abs() < 0.09e-3);
        assert!((r.n_bar_min[0] - 70.0).abs() < 0.7);
        assert!((r.n_bar_min[1] - 40.4).abs() < 0.4);
    }

    #[test]
    fn envelope_of_modulated_power_law() {
        let period = 0.1;
        let x: Vec<f64> = (0..2000).map(|k| 4.0 + k as f64 * 0.001).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(-2) * (1.0 + (2.0 * PI * v / period).sin())).collect();
        let (s, bins) = envelope_slope(&x, &y, period).unwrap();
        assert!(bins.len() > 10);
        assert!((s + 2.0).abs() < 0.05, "slope {s}");
    }

    #[test]
    fn peak_refinement() {
        let pts: Vec<SeriesPoint> = (0..11)
            .map(|k| {
                let t = k as f64 * 0.1;
                SeriesPoint { t, fidelity: 1.0 - (t - 0.537).powi(2), leakage: 0.0, p_dd: 0.0, p_ud_du: 0.0 }
            })
            .collect();
        let (t, f) = fidelity_peak(&pts).unwrap();
        assert!((t - 0.537).abs() < 1e-12 && (f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scan_skips_points_above_pole() {
        let p = low_gradient();
        let spec = ScanSpec::drives(p.clone(), vec![TWO_PI * 10e3, p.nu1 * 2.0], vec![]);
        let rows = error_scan(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].exact.is_none());
    }

    #[test]
    fn voltage_exponents() {
        let v = VoltageNoiseParams::new(0.2, 50e-6, VoltageSpectrum::White { level: 1e-14 });
        let e = psd_scaling_exponents(&low_gradient(), &v).unwrap();
        assert!((e.gradient - 2.0).abs() < 1e-12);
        assert!((e.secular + 4.0).abs() < 4e-3);
        let rows = voltage_table(&low_gradient(), &v, &[10.0, 100.0], &[low_gradient().nu1]).unwrap();
        assert_eq!(rows.len(), 2);
    }
}
