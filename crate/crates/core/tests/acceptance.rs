//! Acceptance suite. Every test writes one `PASS`/`FAIL` line straight to
//! stdout (bypassing the harness capture) and then asserts on the same
//! outcome. Full-scale runs are `#[ignore]`d; run them with `--ignored`.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use gate_lab_core::analytic::error_budget;
use gate_lab_core::config::ModelChoice;
use gate_lab_core::experiments::{
    envelope_slope, fid_comparison, fidelity_peak, noise_compare, oscillation_period_hz, params_table,
    psd_scaling_exponents, error_scan, NoiseCompareSpec, NoiseRow, ScanSpec, Scheme,
};
use gate_lab_core::hilbert::operator_from_symbol;
use gate_lab_core::ion_physics::{couplings, mode_spectrum, optimal_drive};
use gate_lab_core::mcwf::{hot_gate_experiment, mcwf_propagate, HotGateConfig};
use gate_lab_core::noise::{dephasing_ou, derive_seed, ou_trace, VoltageSpectrum};
use gate_lab_core::propagate::{bell_experiment, fidelity_series, BellConfig, ModelKind};
use gate_lab_core::stats::{linear_fit, loglog_slope, spearman, Summary};
use gate_lab_core::{
    BasisLayout, CollapseSet, Frame, HamiltonianModel, PropagationSpec, SpinLevel, StateVector, SystemParams, Term,
    VoltageNoiseParams, C64,
};
use nalgebra::Matrix2;

const TWO_PI: f64 = 2.0 * PI;

fn report(id: &str, title: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "\nacceptance {id} {verdict} {title}: {detail} [{:.1} s]\n",
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

fn within_factor(x: f64, target: f64, factor: f64) -> bool {
    x > 0.0 && x <= target * factor && x >= target / factor
}

fn low_gradient(drive_hz: f64) -> SystemParams {
    SystemParams::yb171(20.0, TWO_PI * 140e3, TWO_PI * drive_hz)
}

fn exact_cfg(p: SystemParams) -> BellConfig {
    BellConfig::new(p, ModelKind::Exact { fock_cutoffs: vec![2, 2] })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn bare(l: SpinLevel) -> [C64; 4] {
    let mut v = [C64::new(0.0, 0.0); 4];
    v[l as usize] = C64::new(1.0, 0.0);
    v
}

#[test]
fn c01_parameter_closed_forms() {
    let t = Instant::now();
    let low = params_table(&low_gradient(20e3)).unwrap();
    let high = params_table(&SystemParams::yb171(150.0, TWO_PI * 412.7e3, TWO_PI * 20e3)).unwrap();
    let checks = [
        within(low.j0_hz, 39.4, 0.01),
        within(high.j0_hz, 254.9, 0.01),
        within(low.omega_opt_hz, 8.1e3, 0.02),
        within(low.n_bar_min[0], 70.0, 0.01),
        within(low.n_bar_min[1], 40.4, 0.01),
    ];
    let pass = checks.iter().all(|&c| c);
    let detail = format!(
        "J0 = {:.2} Hz and {:.2} Hz, optimal drive {:.3} kHz, Doppler limits {:.2} / {:.2}",
        low.j0_hz,
        high.j0_hz,
        low.omega_opt_hz / 1e3,
        low.n_bar_min[0],
        low.n_bar_min[1]
    );
    report("C1", "parameter closed forms", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c02_intrinsic_error_scan() {
    let t = Instant::now();
    let base = low_gradient(20e3);
    let drives = linspace(4e3, 30e3, 64).into_iter().map(|d| TWO_PI * d).collect();
    let rows = error_scan(&ScanSpec::drives(base.clone(), drives, vec![ModelChoice::Exact, ModelChoice::Approx])).unwrap();
    assert_eq!(rows.len(), 64);

    let max_ratio = rows.iter().map(|r| r.exact.unwrap() / r.eta_tot).fold(0.0, f64::max);
    let (hx, hy): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.drive_hz >= 20e3).map(|r| (r.drive_hz, r.exact.unwrap())).unzip();
    let high_slope = loglog_slope(&hx, &hy).unwrap();
    let residual = rows
        .iter()
        .filter(|r| (6e3..=20e3).contains(&r.drive_hz))
        .map(|r| ((r.approx.unwrap() - r.exact.unwrap()) / r.exact.unwrap()).abs())
        .fold(0.0, f64::max);
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.drive_hz <= 6e3).map(|r| (r.drive_hz, r.exact.unwrap())).unzip();
    let raw_low = loglog_slope(&lx, &ly).unwrap();

    // The low-drive error oscillates with a period of ~111 Hz in the drive;
    // its envelope is resolved on a dense grid.
    let dense: Vec<f64> = linspace(4e3, 6e3, 401).into_iter().map(|d| TWO_PI * d).collect();
    let dense_rows = error_scan(&ScanSpec::drives(base.clone(), dense, vec![ModelChoice::Exact])).unwrap();
    let (dx, dy): (Vec<f64>, Vec<f64>) = dense_rows.iter().map(|r| (r.drive_hz, r.exact.unwrap())).unzip();
    let (low_slope, bins) = envelope_slope(&dx, &dy, oscillation_period_hz(&base).unwrap()).unwrap();

    let pass = max_ratio <= 3.0 && (low_slope + 2.0).abs() <= 0.2 && (high_slope - 4.0).abs() <= 0.2 && residual < 0.15;
    let detail = format!(
        "max exact/eta_tot {max_ratio:.3}, low-band envelope slope {low_slope:.3} ({} periods; raw 64-point slope {raw_low:.2}), \
         high-band slope {high_slope:.3}, max approx residual on [6, 20] kHz {residual:.3}",
        bins.len()
    );
    report("C2", "intrinsic-error scan", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c03_fidelity_time_series() {
    let t = Instant::now();
    let cfg = exact_cfg(low_gradient(20e3));
    let times = linspace(8.6e-3, 9.1e-3, 51);
    let (series, _) = fidelity_series(&cfg, &times).unwrap();
    let (t_peak, f_peak) = fidelity_peak(&series).unwrap();
    let c = couplings(&cfg.params, &mode_spectrum(&cfg.params).unwrap()).unwrap();
    let eta = error_budget(&cfg.params, &c, false).unwrap().eta_tot;
    let inf = 1.0 - f_peak;
    let pass = within(t_peak, 8.86e-3, 0.01) && within_factor(inf, 4.3e-4, 3.0);
    let detail = format!("peak at {:.4} ms with 1 - F = {inf:.3e} (closed-form eta_tot {eta:.3e})", t_peak * 1e3);
    report("C3", "fidelity time series", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c04_optimal_point_error() {
    let t = Instant::now();
    let r = bell_experiment(&exact_cfg(low_gradient(8e3))).unwrap();
    let pass = within_factor(r.infidelity, 1.8e-5, 2.0);
    let detail = format!("1 - F = {:.3e} at 8 kHz, gate time {:.4} ms", r.infidelity, r.gate_time * 1e3);
    report("C4", "optimal-point intrinsic error", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c05_phase_flip_speedup() {
    let t = Instant::now();
    let p = SystemParams::yb171(150.0, TWO_PI * 205.8e3, TWO_PI * 17.2e3);
    let mut cfg = BellConfig::new(p.clone(), ModelKind::Approx);
    cfg.phase_flip = true;
    let r = bell_experiment(&cfg).unwrap();
    let best = optimal_drive(&p, true).unwrap() / TWO_PI;
    let mut exact = exact_cfg(p.clone());
    exact.phase_flip = true;
    let e = bell_experiment(&exact).unwrap();
    let pass = r.infidelity <= 2e-4 && within(r.gate_time, 345e-6, 0.02) && within(best, 17.2e3, 0.02);
    let detail = format!(
        "effective-model 1 - F = {:.3e} at {:.2} us, optimal flipped drive {:.3} kHz (info: full model 1 - F = {:.3e})",
        r.infidelity,
        r.gate_time * 1e6,
        best / 1e3,
        e.infidelity
    );
    report("C5", "phase-flip speedup", pass, &detail, t);
    assert!(pass, "{detail}");
}

fn noise_spec(n_realizations: usize, t2s: Vec<f64>, drives_khz: &[f64]) -> NoiseCompareSpec {
    NoiseCompareSpec {
        params: SystemParams::yb171(20.0, TWO_PI * 138.9e3, 0.0),
        drives: drives_khz.iter().map(|d| TWO_PI * d * 1e3).collect(),
        t2s,
        n_pulses: vec![4, 8, 16, 32, 60],
        amplitude_flags: vec![true],
        amplitude_rel: 5e-3,
        amplitude_tau_c: 0.5e-3,
        pulse_rabi: TWO_PI * 50e3,
        n_realizations,
        master_seed: 2024,
        independent_ions: false,
        amplitude_only: true,
    }
}

fn best_cdd(rows: &[NoiseRow], t2: f64) -> &NoiseRow {
    rows.iter()
        .filter(|r| r.scheme == Scheme::Cdd && r.t2 == Some(t2))
        .min_by(|a, b| a.mean_infidelity.partial_cmp(&b.mean_infidelity).unwrap())
        .unwrap()
}

#[test]
fn c06_noise_comparison() {
    let t = Instant::now();
    let t2s = vec![1e-3, 8e-3, 40e-3];
    let rows = noise_compare(&noise_spec(20, t2s.clone(), &[8.0, 20.0, 40.0])).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for &t2 in &t2s {
        let cdd = best_cdd(&rows, t2);
        let pdd: Vec<&NoiseRow> = rows.iter().filter(|r| r.scheme == Scheme::Pdd && r.t2 == Some(t2)).collect();
        let best_pdd = pdd.iter().map(|r| r.mean_infidelity).fold(f64::INFINITY, f64::min);
        pass &= pdd.iter().all(|r| cdd.mean_infidelity < r.mean_infidelity);
        parts.push(format!(
            "T2 {:.0} ms: CDD {:.2e} at {:.0} kHz vs best PDD {best_pdd:.2e}",
            t2 * 1e3,
            cdd.mean_infidelity,
            cdd.drive_hz.unwrap() / 1e3
        ));
    }
    let only: Vec<&NoiseRow> = rows.iter().filter(|r| r.t2.is_none()).collect();
    let mut amp_shift: f64 = 0.0;
    for pair in only.chunks(2) {
        amp_shift = amp_shift.max((pair[1].mean_infidelity - pair[0].mean_infidelity).abs());
    }
    pass &= amp_shift < 1e-4;
    let detail = format!("{}; amplitude-noise-only shift {amp_shift:.2e}", parts.join("; "));
    report("C6", "noise comparison (desk scale)", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
#[ignore = "full scale, hours on one core"]
fn c06_noise_comparison_full_scale() {
    let t = Instant::now();
    let drives: Vec<f64> = (1..=12).map(|k| 4.0 * k as f64).collect();
    let rows = noise_compare(&noise_spec(100, vec![40e-3], &drives)).unwrap();
    let cdd = best_cdd(&rows, 40e-3);
    let pass = within_factor(cdd.mean_infidelity, 4.6e-5, 3.0);
    let detail = format!(
        "best CDD at T2 = 40 ms: {:.3e} ± {:.1e} at {:.0} kHz",
        cdd.mean_infidelity,
        cdd.sem,
        cdd.drive_hz.unwrap() / 1e3
    );
    report("C6-full", "noise comparison (full scale)", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c07_ou_statistics() {
    let t = Instant::now();
    let n = 10_000;
    let (i0, lag) = (10, 20);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut var_expected = 0.0;
    for k in 0..n {
        let p = dephasing_ou(1e-3, derive_seed(77, k as u64)).unwrap();
        assert!((p.tau_c - lag as f64 * p.dt).abs() < 1e-12 * p.tau_c);
        var_expected = p.stationary_variance();
        let tr = ou_trace(&p, (i0 + lag) as f64 * p.dt).unwrap();
        a.push(tr.values[i0]);
        b.push(tr.values[i0 + lag]);
    }
    let sa = Summary::of(&a);
    let sb = Summary::of(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - sa.mean) * (y - sb.mean)).sum::<f64>() / (n - 1) as f64;
    let corr = cov / (sa.std * sb.std);
    let var = sa.std * sa.std;
    let pass = within(var, var_expected, 0.05) && within(corr, (-1.0f64).exp(), 0.10);
    let detail = format!(
        "variance / (c tau_c / 2) = {:.4}, lag-tau_c correlation {corr:.4} (e^-1 = {:.4})",
        var / var_expected,
        (-1.0f64).exp()
    );
    report("C7", "OU statistics", pass, &detail, t);
    assert!(pass, "{detail}");
}

/// Dense Lindblad integration (RK4) of a driven two-level system decaying
/// from the upper level; returns the upper-level population.
fn lindblad_upper(omega: f64, gamma: f64, times: &[f64]) -> Vec<f64> {
    type M = Matrix2<C64>;
    let c = |x: f64| C64::new(x, 0.0);
    let i = C64::new(0.0, 1.0);
    let h = M::new(c(0.0), c(omega / 2.0), c(omega / 2.0), c(0.0));
    let l = M::new(c(0.0), c(gamma.sqrt()), c(0.0), c(0.0));
    let ld = l.adjoint();
    let ldl = ld * l;
    let f = |r: &M| -> M { (h * r - r * h) * (-i) + l * r * ld - (ldl * r + r * ldl) * c(0.5) };
    let mut rho = M::new(c(1.0), c(0.0), c(0.0), c(0.0));
    let dt: f64 = 1e-8;
    let mut t: f64 = 0.0;
    let mut out = Vec::new();
    for &target in times {
        while t < target - 1e-15 {
            let h_ = dt.min(target - t);
            let k1 = f(&rho);
            let k2 = f(&(rho + k1 * c(h_ / 2.0)));
            let k3 = f(&(rho + k2 * c(h_ / 2.0)));
            let k4 = f(&(rho + k3 * c(h_)));
            rho += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h_ / 6.0);
            t += h_;
        }
        out.push(rho[(1, 1)].re);
    }
    out
}

/// Heating and cooling jump counts and the integrated occupation ∫n dt,
/// reconstructed from the jump records of trajectories started in |0⟩.
fn jump_statistics(jumps: &[Vec<(f64, usize)>], t_end: f64) -> (f64, f64, f64) {
    let (mut heat, mut cool, mut area) = (0.0, 0.0, 0.0);
    for rec in jumps {
        let (mut n, mut last) = (0.0, 0.0);
        for &(tj, ch) in rec {
            area += n * (tj - last);
            last = tj;
            if ch == 0 {
                heat += 1.0;
                n += 1.0;
            } else {
                cool += 1.0;
                n -= 1.0;
            }
        }
        area += n * (t_end - last);
    }
    (heat, cool, area)
}

#[test]
fn c08_mcwf_validity() {
    let t = Instant::now();
    let (rate, n_bar, n_traj) = (100.0, 1.0, 500);

    // thermal relaxation of an empty mode, no Hamiltonian
    let l = BasisLayout::new(&[15]);
    let h = HamiltonianModel::new("idle", Frame::BareInteraction, &l);
    let heat = CollapseSet::heating(&l, 0, rate, n_bar).unwrap();
    let psi0 = StateVector::product(&l, bare(SpinLevel::Zero), bare(SpinLevel::Zero), &[0]).unwrap();
    let t_end = 30.0 / rate;
    let times = linspace(t_end / 120.0, t_end, 120);
    let mut spec = PropagationSpec::new(0.0, t_end).with_samples(times.clone());
    spec.truncation_tol = None;
    let occupation = |s: &StateVector| vec![s.fock_populations(0).iter().enumerate().map(|(n, p)| n as f64 * p).sum()];
    let r = mcwf_propagate(&h, &heat, &psi0, &spec, n_traj, 8, occupation).unwrap();
    let records: Vec<Vec<(f64, usize)>> = r.trajectories.iter().map(|tr| tr.jumps.clone()).collect();
    let (up, down, area) = jump_statistics(&records, t_end);
    // d⟨n⟩/dt = ṅ·n̄·(⟨n⟩ + 1) − ṅ·(1 + n̄)·⟨n⟩: maximum-likelihood rates
    let up_rate = up / (area + n_traj as f64 * t_end);
    let down_rate = down / area;
    let rate_est = down_rate - up_rate;
    let n_bar_est = up_rate / rate_est;
    // relaxation curve as an info line: asymptote from the late half, rate from a log-linear fit
    let late: Vec<f64> = r.mean.iter().zip(&times).filter(|(_, &s)| s > 0.5 * t_end).map(|(m, _)| m[0]).collect();
    let asymptote = Summary::of(&late).mean;
    let (ex, ey): (Vec<f64>, Vec<f64>) = r
        .mean
        .iter()
        .zip(&times)
        .filter(|(m, &s)| s < 2.0 / rate && m[0] < n_bar)
        .map(|(m, &s)| (s, (1.0 - m[0] / n_bar).ln()))
        .unzip();
    let curve_rate = -linear_fit(&ex, &ey).map(|(s, _)| s).unwrap_or(f64::NAN);
    let relax_ok = within(rate_est, rate, 0.05) && within(n_bar_est, n_bar, 0.05);

    // driven two-level decay against the master equation
    let ls = BasisLayout::spin_only();
    let (omega, gamma): (f64, f64) = (TWO_PI * 20e3, 3e4);
    let mut h2 = HamiltonianModel::new("rabi", Frame::BareInteraction, &ls);
    let lower = operator_from_symbol("proj:0:+1", 0, &ls).unwrap();
    h2.push(Term::new("x", lower.add(&lower.adjoint()).unwrap(), omega / 2.0)).unwrap();
    let decay = CollapseSet::new(&ls, vec![("decay".into(), lower.scale(C64::new(gamma.sqrt(), 0.0)))]).unwrap();
    let psi2 = StateVector::product(&ls, bare(SpinLevel::Zero), bare(SpinLevel::Zero), &[]).unwrap();
    let t2 = linspace(1.5e-5, 1.2e-4, 8);
    let mut spec2 = PropagationSpec::new(0.0, 1.2e-4).with_samples(t2.clone());
    spec2.rel_tol = 1e-8;
    let upper = operator_from_symbol("proj:+1:+1", 0, &ls).unwrap();
    let r2 = mcwf_propagate(&h2, &decay, &psi2, &spec2, 500, 31, |s| vec![s.expectation(&upper).re]).unwrap();
    let oracle = lindblad_upper(omega, gamma, &t2);
    let worst = oracle
        .iter()
        .enumerate()
        .map(|(k, want)| (r2.mean[k][0] - want).abs() / r2.sem[k][0])
        .fold(0.0, f64::max);
    let oracle_ok = worst <= 3.0;

    let pass = relax_ok && oracle_ok;
    let detail = format!(
        "jump statistics give rate {rate_est:.2}/s (set {rate}) and bath occupation {n_bar_est:.4} (set {n_bar}) \
         from {up} + {down} jumps; curve asymptote {asymptote:.3}, early-time rate {curve_rate:.1}/s (info); \
         two-level oracle worst deviation {worst:.2} sem"
    );
    report("C8", "MCWF validity", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c09_hot_gate_desk_scale() {
    let t = Instant::now();
    let mut cfg = HotGateConfig::new(low_gradient(8e3), 5.0, 40, 8, 5);
    cfg.seed = 4;
    let r = hot_gate_experiment(&cfg).unwrap();
    let n: Vec<f64> = r.samples.iter().map(|s| s.initial_n as f64).collect();
    let inf: Vec<f64> = r.samples.iter().map(|s| s.mean_infidelity).collect();
    let rho = spearman(&n, &inf).unwrap_or(f64::NAN);
    let pass = r.average_infidelity < 3.2e-4 && rho > 0.0;
    let detail = format!(
        "average 1 - F = {:.3e} ± {:.1e}, rank correlation (n, 1 - F) = {rho:.3}, initial n {:?}",
        r.average_infidelity, r.sem, r.batch.initial_fock
    );
    report("C9", "hot gate (desk scale)", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
#[ignore = "full scale, many hours on one core"]
fn c09_hot_gate_full_scale() {
    let t = Instant::now();
    let mut cfg = HotGateConfig::new(low_gradient(8e3), 70.0, 250, 40, 20);
    cfg.seed = 4;
    let r = hot_gate_experiment(&cfg).unwrap();
    let worst = r.samples.iter().map(|s| s.mean_infidelity).fold(0.0, f64::max);
    let pass = within_factor(r.average_infidelity, 1.6e-4, 2.0) && worst < 1e-3;
    let detail = format!("average 1 - F = {:.3e} ± {:.1e}, largest sample {worst:.2e}", r.average_infidelity, r.sem);
    report("C9-full", "hot gate (full scale)", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c10_dephasing_and_voltage_analytics() {
    let t = Instant::now();
    let p = low_gradient(20e3);
    let fid = fid_comparison(&p, 0.5e-3, TWO_PI * 200e3, 1.5e-3, 16, 4.0, 100, 5).unwrap();
    let v = VoltageNoiseParams::new(0.1, 100e-6, VoltageSpectrum::White { level: 1e-16 });
    let e = psd_scaling_exponents(&p, &v).unwrap();
    let pass = fid.ratio > 10.0 && within(e.gradient, 2.0, 1e-3) && within(e.secular, -4.0, 1e-3);
    let detail = format!(
        "bare decay {:.3} ms, dressed {:.2} ms (ratio {:.1}); S_B exponents {:.5} in the gradient, {:.5} in nu_z",
        fid.bare.decay_time * 1e3,
        fid.dressed.decay_time * 1e3,
        fid.ratio,
        e.gradient,
        e.secular
    );
    report("C10", "dephasing and voltage-noise analytics", pass, &detail, t);
    assert!(pass, "{detail}");
}
