//! One runner per subcommand. Each turns the loaded configuration into
//! tables, a JSON summary and an optional `--check` verdict.

use std::f64::consts::PI;

use anyhow::{bail, Result};
use gate_lab_core::analytic::error_budget;
use gate_lab_core::config::{ExperimentConfig, ModelChoice};
use gate_lab_core::experiments::{
    envelope_slope, fid_comparison, fidelity_peak, noise_compare, oscillation_period_hz, params_table,
    psd_scaling_exponents, voltage_table, error_scan, NoiseCompareSpec, ScanSpec, Scheme,
};
use gate_lab_core::hilbert::write_snapshot;
use gate_lab_core::ion_physics::{couplings, mode_spectrum};
use gate_lab_core::mcwf::{hot_gate_experiment, trajectory_seed, HotGateConfig};
use gate_lab_core::propagate::{bell_experiment, fidelity_series};
use gate_lab_core::stats::{loglog_slope, spearman};
use gate_lab_core::SystemParams;
use serde_json::json;

use crate::output::{num, opt, Artifacts, Check, Table};

const TWO_PI: f64 = 2.0 * PI;

/// Desk-scale ceilings; anything larger needs `--full`.
const DESK_REALIZATIONS: usize = 50;
const DESK_TRAJECTORIES: usize = 100;
const DESK_N_MAX: usize = 100;

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub hash: &'a str,
    pub seed: u64,
    pub check: bool,
    pub full: bool,
    pub dump_states: bool,
}

impl Ctx<'_> {
    fn params(&self) -> Result<SystemParams> {
        Ok(self.cfg.physical.system_params()?)
    }
}

fn hz_grid(grid: &Option<gate_lab_core::config::Grid>, fallback: f64) -> Result<Vec<f64>> {
    Ok(match grid {
        Some(g) => g.values()?,
        None => vec![fallback],
    })
}

pub fn params(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let r = params_table(&p)?;
    let mut t = Table::new(
        "params",
        vec![
            "gradient", "nu1_hz", "drive_hz", "j0_hz", "j_eff_hz", "j_tot_hz", "shift_hz", "gate_time_s",
            "omega_opt_hz", "omega_opt_flip_hz", "eta_tot", "eta_tot_flip", "n_bar_min",
        ],
    );
    t.push(vec![
        num(r.gradient),
        num(r.nu1_hz),
        num(r.drive_hz),
        num(r.j0_hz),
        num(r.j_eff_hz),
        num(r.j_tot_hz),
        num(r.shift_hz),
        num(r.gate_time),
        num(r.omega_opt_hz),
        opt(r.omega_opt_flip_hz),
        opt(r.eta_tot),
        opt(r.eta_tot_flip),
        r.n_bar_min.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "),
    ]);
    println!("J0/2pi        {:>12.4} Hz", r.j0_hz);
    println!("J_tot/2pi     {:>12.4} Hz", r.j_tot_hz);
    println!("shift/2pi     {:>12.4} Hz", r.shift_hz);
    println!("gate time     {:>12.4} ms", r.gate_time * 1e3);
    println!("Omega_opt/2pi {:>12.4} kHz", r.omega_opt_hz / 1e3);
    if let Some(f) = r.omega_opt_flip_hz {
        println!("  with flip   {:>12.4} kHz", f / 1e3);
    }
    if let Some(e) = r.eta_tot {
        println!("eta_tot       {:>12.4e}", e);
    }
    println!("n_bar_min     {:?}", r.n_bar_min);
    let check = ctx.check.then(|| {
        let passed = r.gate_time.is_finite() && r.j0_hz > 0.0 && r.eta_tot.is_some();
        Check { passed, detail: format!("gate time {} s, eta_tot {:?}", r.gate_time, r.eta_tot) }
    });
    Ok(Artifacts { tables: vec![t], summary: serde_json::to_value(&r)?, blobs: Vec::new(), check })
}

pub fn evolve(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let mut bell = ctx.cfg.bell_config(p.clone(), ctx.cfg.model_kind(), ctx.hash);
    bell.seed = ctx.seed;
    let tau = bell.resolved_gate_time().unwrap_or(f64::INFINITY);
    let t_end = match ctx.cfg.numeric.t_end_s {
        Some(t) => t,
        None if tau.is_finite() => 1.4 * tau,
        None => bail!("no coupling: set numeric.t_end_s for the time series"),
    };
    let n = ctx.cfg.numeric.n_times;
    let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
    let (series, states) = fidelity_series(&bell, &times)?;
    let mut t = Table::new("evolve", vec!["t_s", "fidelity", "leakage", "p_dd", "p_ud_du"]);
    for s in &series {
        t.push(vec![num(s.t), num(s.fidelity), num(s.leakage), num(s.p_dd), num(s.p_ud_du)]);
    }
    let peak = fidelity_peak(&series);
    let at_gate = if tau.is_finite() { Some(bell_experiment(&bell)?) } else { None };
    let eta = couplings(&p, &mode_spectrum(&p)?)
        .ok()
        .and_then(|c| error_budget(&p, &c, bell.phase_flip).ok())
        .map(|b| b.eta_tot);
    let summary = json!({
        "gate_time_s": tau.is_finite().then_some(tau),
        "peak_time_s": peak.map(|x| x.0),
        "peak_fidelity": peak.map(|x| x.1),
        "fidelity_at_gate": at_gate.as_ref().map(|r| r.bell_fidelity),
        "infidelity_at_gate": at_gate.as_ref().map(|r| r.infidelity),
        "leakage_at_gate": at_gate.as_ref().map(|r| r.leakage),
        "eta_tot": eta,
        "seed": ctx.seed,
        "config_hash": ctx.hash,
    });
    let mut blobs = Vec::new();
    if ctx.dump_states {
        for (k, s) in states.iter().enumerate() {
            let mut buf = Vec::new();
            write_snapshot(&mut buf, s)?;
            blobs.push((format!("states/t{k:05}.bin"), buf));
        }
    }
    let check = ctx.check.then(|| {
        if !tau.is_finite() {
            let worst = series.iter().map(|s| (s.fidelity - 0.25).abs()).fold(0.0, f64::max);
            return Check { passed: worst < 1e-9, detail: format!("no coupling, largest deviation from 1/4: {worst:e}") };
        }
        match (peak, eta) {
            (Some((tp, fp)), Some(eta)) => {
                let passed = ((tp - tau) / tau).abs() <= 0.01 && 1.0 - fp <= 3.0 * eta;
                Check { passed, detail: format!("peak at {tp} s (gate time {tau} s), 1 - F = {}, eta_tot = {eta}", 1.0 - fp) }
            }
            _ => Check { passed: false, detail: "no fidelity peak or error budget".into() },
        }
    });
    Ok(Artifacts { tables: vec![t], summary, blobs, check })
}

pub fn error_scan_run(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let s = &ctx.cfg.scan;
    let hz = |v: Vec<f64>| v.into_iter().map(|x| TWO_PI * x).collect::<Vec<_>>();
    let spec = ScanSpec {
        base: p.clone(),
        drives: hz(hz_grid(&s.drives_hz, p.drive() / TWO_PI)?),
        nus: hz(hz_grid(&s.nu1_hz, p.nu1 / TWO_PI)?),
        gradients: hz_grid(&s.gradients, p.gradient)?,
        phase_flip: s.phase_flip.clone(),
        models: s.models.clone(),
        fock_cutoffs: ctx.cfg.numeric.fock_cutoffs.clone(),
        method: ctx.cfg.numeric.method,
        truncation_tol: ctx.cfg.numeric.truncation_tol,
    };
    let rows = error_scan(&spec)?;
    let mut t = Table::new(
        "error_scan",
        vec![
            "gradient", "nu1_hz", "drive_hz", "phase_flip", "gate_time_s", "eta1", "eta2", "eta_tot", "exact",
            "exact_leakage", "approx",
        ],
    );
    for r in &rows {
        t.push(vec![
            num(r.gradient),
            num(r.nu1_hz),
            num(r.drive_hz),
            r.phase_flip.to_string(),
            num(r.gate_time),
            num(r.eta1),
            num(r.eta2),
            num(r.eta_tot),
            opt(r.exact),
            opt(r.exact_leakage),
            opt(r.approx),
        ]);
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.exact.map(|e| e / r.eta_tot)).collect();
    let max_ratio = ratios.iter().cloned().fold(f64::NAN, f64::max);
    let mut tables = vec![t];
    let mut envelope = serde_json::Value::Null;
    if let Some(g) = &s.envelope_drives_hz {
        let dense = ScanSpec { drives: hz(g.values()?), models: vec![ModelChoice::Exact], ..spec.clone() };
        let dense_rows = error_scan(&dense)?;
        let (x, y): (Vec<f64>, Vec<f64>) = dense_rows.iter().filter_map(|r| r.exact.map(|e| (r.drive_hz, e))).unzip();
        let mut et = Table::new("envelope", vec!["drive_hz", "exact"]);
        for (a, b) in x.iter().zip(&y) {
            et.push(vec![num(*a), num(*b)]);
        }
        tables.push(et);
        let period = oscillation_period_hz(&p)?;
        envelope = json!({
            "oscillation_period_hz": period,
            "envelope_slope": envelope_slope(&x, &y, period).map(|v| v.0),
            "raw_slope": loglog_slope(&x, &y),
        });
    }
    let summary = json!({
        "points": rows.len(),
        "max_exact_over_eta_tot": (!ratios.is_empty()).then_some(max_ratio),
        "envelope": envelope,
        "config_hash": ctx.hash,
    });
    let check = ctx.check.then(|| {
        let passed = !ratios.is_empty() && ratios.iter().all(|r| *r <= 3.0);
        Check { passed, detail: format!("{} simulated points, largest exact/eta_tot = {max_ratio}", ratios.len()) }
    });
    Ok(Artifacts { tables, summary, blobs: Vec::new(), check })
}

pub fn noise_compare_run(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let c = ctx.cfg;
    let n_real = c.sampling.n_realizations;
    if n_real > DESK_REALIZATIONS && !ctx.full {
        bail!("{n_real} realisations is a full-scale run; pass --full to proceed");
    }
    if ctx.full {
        log::warn!("full-scale noise comparison with {n_real} realisations per point: expect hours on one core");
    }
    let drives = hz_grid(&c.scan.drives_hz, p.drive() / TWO_PI)?.into_iter().map(|d| TWO_PI * d).collect();
    let spec = NoiseCompareSpec {
        params: p,
        drives,
        t2s: c.scan.t2_s.clone(),
        n_pulses: c.scan.n_pulses.clone(),
        amplitude_flags: c.scan.amplitude_noise.clone(),
        amplitude_rel: c.noise.amplitude_rel.unwrap_or(5e-3),
        amplitude_tau_c: c.noise.amplitude_tau_c_s,
        pulse_rabi: TWO_PI * c.noise.pulse_rabi_hz,
        n_realizations: n_real,
        master_seed: ctx.seed,
        independent_ions: c.noise.independent_ions,
        amplitude_only: true,
    };
    let rows = noise_compare(&spec)?;
    let mut t = Table::new(
        "noise_compare",
        vec!["t2_s", "scheme", "drive_hz", "n_pulses", "amplitude_noise", "mean_infidelity", "sem", "n"],
    );
    for r in &rows {
        t.push(vec![
            opt(r.t2),
            match r.scheme {
                Scheme::Cdd => "cdd".into(),
                Scheme::Pdd => "pdd".into(),
            },
            opt(r.drive_hz),
            r.n_pulses.to_string(),
            r.amplitude_noise.to_string(),
            num(r.mean_infidelity),
            num(r.sem),
            r.n.to_string(),
        ]);
    }
    let mut per_t2 = Vec::new();
    let mut passed = true;
    for &t2 in &spec.t2s {
        for &amp in &spec.amplitude_flags {
            let sel = |s: Scheme| rows.iter().filter(move |r| r.scheme == s && r.t2 == Some(t2) && r.amplitude_noise == amp);
            let best_cdd = sel(Scheme::Cdd).map(|r| r.mean_infidelity).fold(f64::INFINITY, f64::min);
            let best_pdd = sel(Scheme::Pdd).map(|r| r.mean_infidelity).fold(f64::INFINITY, f64::min);
            passed &= sel(Scheme::Pdd).all(|r| best_cdd < r.mean_infidelity);
            per_t2.push(json!({"t2_s": t2, "amplitude_noise": amp, "best_cdd": best_cdd, "best_pdd": best_pdd}));
        }
    }
    let mut amp_shift: f64 = 0.0;
    let only: Vec<_> = rows.iter().filter(|r| r.t2.is_none()).collect();
    for pair in only.chunks(2) {
        amp_shift = amp_shift.max((pair[1].mean_infidelity - pair[0].mean_infidelity).abs());
    }
    let summary = json!({
        "realizations": n_real,
        "master_seed": ctx.seed,
        "best": per_t2,
        "amplitude_only_shift": amp_shift,
        "config_hash": ctx.hash,
    });
    let check = ctx.check.then(|| Check {
        passed: passed && amp_shift < 1e-4,
        detail: format!("continuous below pulsed at every pulse count: {passed}; amplitude-only shift {amp_shift}"),
    });
    Ok(Artifacts { tables: vec![t], summary, blobs: Vec::new(), check })
}

pub fn hot_gate_run(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let s = &ctx.cfg.sampling;
    if (s.n_samples * s.n_traj > DESK_TRAJECTORIES || s.n_max > DESK_N_MAX) && !ctx.full {
        bail!("{} x {} trajectories up to n = {} is a full-scale run; pass --full to proceed", s.n_samples, s.n_traj, s.n_max);
    }
    if ctx.full {
        log::warn!("full-scale hot gate ({} x {} trajectories, n_max = {}): expect many hours", s.n_samples, s.n_traj, s.n_max);
    }
    let mut cfg = HotGateConfig::new(p.clone(), s.n_bar, s.n_max, s.n_samples, s.n_traj);
    cfg.bath_n_bar = s.bath_n_bar.unwrap_or(s.n_bar);
    cfg.heating_rate = s.heating_rate;
    cfg.stretch_cutoff = s.stretch_cutoff;
    cfg.seed = ctx.seed;
    cfg.truncation_tol = ctx.cfg.numeric.truncation_tol;
    cfg.config_hash = ctx.hash.to_string();
    let r = hot_gate_experiment(&cfg)?;
    // reference: ground state, no heating
    let mut cold = cfg.clone();
    cold.n_bar = 0.0;
    cold.bath_n_bar = 0.0;
    cold.heating_rate = 0.0;
    cold.n_samples = 1;
    cold.n_traj = 1;
    let f0 = hot_gate_experiment(&cold)?;

    let mut t = Table::new("hot_gate", vec!["sample_index", "initial_n", "mean_infidelity", "sem"]);
    for x in &r.samples {
        t.push(vec![x.index.to_string(), x.initial_n.to_string(), num(x.mean_infidelity), num(x.sem)]);
    }
    let mut tt = Table::new("trajectories", vec!["sample_index", "trajectory", "seed", "fidelity"]);
    for (i, row) in r.batch.per_traj_fidelity.iter().enumerate() {
        for (k, f) in row.iter().enumerate() {
            tt.push(vec![i.to_string(), k.to_string(), trajectory_seed(ctx.seed, i, k).to_string(), num(*f)]);
        }
    }
    let n: Vec<f64> = r.samples.iter().map(|x| x.initial_n as f64).collect();
    let inf: Vec<f64> = r.samples.iter().map(|x| x.mean_infidelity).collect();
    let rho = spearman(&n, &inf);
    let worst = inf.iter().cloned().fold(0.0, f64::max);
    let summary = json!({
        "average_fidelity": 1.0 - r.average_infidelity,
        "average_infidelity": r.average_infidelity,
        "sem": r.sem,
        "reference_infidelity": f0.average_infidelity,
        "largest_sample_infidelity": worst,
        "rank_correlation": rho,
        "gate_time_s": r.gate_time,
        "initial_fock": r.batch.initial_fock,
        "master_seed": ctx.seed,
        "config_hash": ctx.hash,
    });
    let check = ctx.check.then(|| {
        let mut passed = r.average_infidelity < 3.2e-4 && rho.map_or(false, |x| x > 0.0);
        if ctx.full {
            passed &= r.average_infidelity > 0.8e-4 && worst < 1e-3;
        }
        Check { passed, detail: format!("average 1 - F = {}, rank correlation {rho:?}", r.average_infidelity) }
    });
    Ok(Artifacts { tables: vec![t, tt], summary, blobs: Vec::new(), check })
}

pub fn voltage_noise(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let v = ctx.cfg.voltage.params();
    v.validate()?;
    let omegas: Vec<f64> = ctx.cfg.voltage.omega_hz.values()?.into_iter().map(|w| TWO_PI * w).collect();
    let mut nus = vec![p.nu1];
    nus.extend(ctx.cfg.voltage.nu_z_hz.iter().map(|n| TWO_PI * n));
    let rows = voltage_table(&p, &v, &omegas, &nus)?;
    let mut t = Table::new("voltage_noise", vec!["nu_z_hz", "omega_hz", "s_v", "s_z", "s_b", "db_dv"]);
    for r in &rows {
        t.push(vec![num(r.nu_z_hz), num(r.omega_hz), num(r.s_v), num(r.s_z), num(r.s_b), num(r.db_dv)]);
    }
    let e = psd_scaling_exponents(&p, &v)?;
    let summary = json!({
        "gradient_exponent": e.gradient,
        "secular_exponent": e.secular,
        "config_hash": ctx.hash,
    });
    let check = ctx.check.then(|| Check {
        passed: ((e.gradient - 2.0) / 2.0).abs() <= 1e-3 && ((e.secular + 4.0) / 4.0).abs() <= 1e-3,
        detail: format!("exponents {} (gradient), {} (secular frequency)", e.gradient, e.secular),
    });
    Ok(Artifacts { tables: vec![t], summary, blobs: Vec::new(), check })
}

pub fn fid(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.params()?;
    let f = &ctx.cfg.fid;
    let n_real = ctx.cfg.sampling.n_realizations;
    if n_real > 10 * DESK_REALIZATIONS && !ctx.full {
        bail!("{n_real} realisations is a full-scale run; pass --full to proceed");
    }
    let r = fid_comparison(&p, f.t2_s, TWO_PI * f.dressing_hz, f.t_end_s, f.n_times, f.dressed_span_factor, n_real, ctx.seed)?;
    let mut t = Table::new("fid", vec!["run", "t_s", "coherence", "sem"]);
    for (name, res) in [("bare", &r.bare), ("dressed", &r.dressed)] {
        for k in 0..res.times.len() {
            t.push(vec![name.into(), num(res.times[k]), num(res.coherence[k]), num(res.sem[k])]);
        }
    }
    let summary = json!({
        "bare_decay_time_s": r.bare.decay_time,
        "dressed_decay_time_s": r.dressed.decay_time,
        "ratio": r.ratio,
        "realizations": n_real,
        "seed": ctx.seed,
        "config_hash": ctx.hash,
    });
    let check = ctx.check.then(|| Check { passed: r.ratio > 10.0, detail: format!("dressed/bare coherence time {}", r.ratio) });
    Ok(Artifacts { tables: vec![t], summary, blobs: Vec::new(), check })
}
