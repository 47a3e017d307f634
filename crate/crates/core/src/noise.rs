//! Ornstein-Uhlenbeck noise traces, the pulsed-decoupling baseline,
//! free-induction decay and voltage-noise spectra.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hamiltonian::{attach_noise, carrier, AmplitudeNoise, DephasingTraces, Envelope, Frame, HamiltonianModel, NoiseSet, Term};
use crate::hilbert::{spin_matrix, BasisLayout, DressedLevel, Level, Operator, OperatorKind, SpinLevel, StateVector};
use crate::ion_physics::{couplings, mode_spectrum, sensitivities, SystemParams};
use crate::propagate::{propagate, FidelityReport, PropagationSpec};
use crate::C64;

/// Sampled noise path x(t), held constant on each grid cell [t0 + k·dt, t0 + (k+1)·dt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub values: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
    pub seed: u64,
}

impl NoiseTrace {
    pub fn constant(value: f64, dt: f64, len: usize) -> Self {
        Self { values: vec![value; len], dt, t0: 0.0, seed: 0 }
    }

    /// End of the covered interval.
    pub fn end(&self) -> f64 {
        self.t0 + self.values.len() as f64 * self.dt
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        let end = self.end();
        let slack = 1e-9 * self.dt;
        if self.values.is_empty() || t < self.t0 - slack || t > end + slack {
            return Err(Error::TraceUnderrun { start: self.t0, end, needed: t });
        }
        let k = ((t - self.t0) / self.dt).floor().max(0.0) as usize;
        Ok(self.values[k.min(self.values.len() - 1)])
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| self.t0 + k as f64 * self.dt)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    /// Correlation time.
    pub tau_c: f64,
    /// Diffusion constant c; the stationary variance is c·τ_c/2.
    pub diffusion: f64,
    pub dt: f64,
    pub seed: u64,
}

impl OUParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0) {
            return Err(Error::InvalidParameter(format!("tau_c must be positive, got {}", self.tau_c)));
        }
        if !(self.diffusion >= 0.0) {
            return Err(Error::InvalidParameter(format!("diffusion must be non-negative, got {}", self.diffusion)));
        }
        if !(self.dt > 0.0 && self.dt <= self.tau_c / 10.0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!("dt = {} must lie in (0, tau_c/10]", self.dt)));
        }
        Ok(())
    }

    pub fn stationary_variance(&self) -> f64 {
        self.diffusion * self.tau_c / 2.0
    }
}

/// Exact discretisation of the OU process on ceil(span/dt) + 1 grid points,
/// started from the stationary distribution.
pub fn ou_trace(p: &OUParams, span: f64) -> Result<NoiseTrace> {
    p.validate()?;
    if !(span >= 0.0) {
        return Err(Error::InvalidParameter(format!("span must be non-negative, got {span}")));
    }
    let len = (span / p.dt).ceil() as usize + 1;
    let mut values = Vec::with_capacity(len);
    if p.diffusion == 0.0 {
        values.resize(len, 0.0);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let decay = (-p.dt / p.tau_c).exp();
        let kick = (p.stationary_variance() * (1.0 - decay * decay)).sqrt();
        let g: f64 = StandardNormal.sample(&mut rng);
        let mut x = p.stationary_variance().sqrt() * g;
        values.push(x);
        for _ in 1..len {
            let g: f64 = StandardNormal.sample(&mut rng);
            x = x * decay + kick * g;
            values.push(x);
        }
    }
    Ok(NoiseTrace { values, dt: p.dt, t0: 0.0, seed: p.seed })
}

/// Seed of realisation `index` under `master`: first eight bytes of SHA-256(master ‖ index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// OU parameters for dephasing of |+1⟩ with coherence time T₂.
pub fn dephasing_ou(t2: f64, seed: u64) -> Result<OUParams> {
    if !(t2 > 0.0) {
        return Err(Error::InvalidParameter(format!("T2 must be positive, got {t2}")));
    }
    let tau_c = t2 / 100.0;
    Ok(OUParams { tau_c, diffusion: 2.0 / (t2 * tau_c * tau_c), dt: tau_c / 20.0, seed })
}

/// δω₊₁(t) trace(s) plus the sensitivity ratios fixing δω₋₁ and δω₀′ at field `b0`.
pub fn dephasing_traces(
    params: &SystemParams,
    t2: f64,
    b0: f64,
    span: f64,
    seed: u64,
    independent_ions: bool,
) -> Result<DephasingTraces> {
    let s = sensitivities(params, b0)?;
    let first = Arc::new(ou_trace(&dephasing_ou(t2, seed)?, span)?);
    let mut per_ion = vec![first];
    if independent_ions {
        per_ion.push(Arc::new(ou_trace(&dephasing_ou(t2, derive_seed(seed, 1))?, span)?));
    }
    Ok(DephasingTraces { per_ion, ratio_m1: s.ratio_m1(), ratio_0p: s.ratio_0p() })
}

/// Common drive-amplitude fluctuation δΩ(t) with relative size `rel` and correlation time `tau_c`.
pub fn amplitude_noise(drive: f64, rel: f64, tau_c: f64, span: f64, seed: u64) -> Result<AmplitudeNoise> {
    if !(rel >= 0.0) {
        return Err(Error::InvalidParameter(format!("relative amplitude noise must be non-negative, got {rel}")));
    }
    let p = OUParams { tau_c, diffusion: 2.0 * (rel * drive).powi(2) / tau_c, dt: tau_c / 20.0, seed };
    Ok(AmplitudeNoise { trace: Arc::new(ou_trace(&p, span)?), reference: drive })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseAxis {
    X,
    Y,
}

/// XY4 refocusing schedule laid over a free-evolution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddSchedule {
    pub n_pulses: usize,
    pub pulse_rabi: f64,
    /// Free-evolution time, excluding the pulses.
    pub free_time: f64,
    pub axes: Vec<PulseAxis>,
    /// Pulse centres.
    pub timing: Vec<f64>,
}

impl PddSchedule {
    /// Gaps of free_time/2N at both ends and free_time/N between pulses.
    pub fn xy4(n_pulses: usize, pulse_rabi: f64, free_time: f64) -> Result<Self> {
        if n_pulses % 4 != 0 {
            return Err(Error::InvalidParameter(format!("XY4 needs a multiple of 4 pulses, got {n_pulses}")));
        }
        if !(pulse_rabi > 0.0 && free_time > 0.0) {
            return Err(Error::InvalidParameter("pulse Rabi frequency and free time must be positive".into()));
        }
        let tp = PI / pulse_rabi;
        let gap = if n_pulses > 0 { free_time / n_pulses as f64 } else { 0.0 };
        let timing = (0..n_pulses).map(|k| gap / 2.0 + k as f64 * (gap + tp) + tp / 2.0).collect();
        let axes = (0..n_pulses).map(|k| if k % 2 == 0 { PulseAxis::X } else { PulseAxis::Y }).collect();
        Ok(Self { n_pulses, pulse_rabi, free_time, axes, timing })
    }

    pub fn pulse_duration(&self) -> f64 {
        PI / self.pulse_rabi
    }

    pub fn total_duration(&self) -> f64 {
        self.free_time + self.n_pulses as f64 * self.pulse_duration()
    }

    pub fn windows(&self, axis: PulseAxis) -> Vec<(f64, f64)> {
        let half = self.pulse_duration() / 2.0;
        self.timing
            .iter()
            .zip(&self.axes)
            .filter(|(_, a)| **a == axis)
            .map(|(c, _)| (c - half, c + half))
            .collect()
    }

    pub fn check_fits(&self, window: f64) -> Result<()> {
        if self.total_duration() > window {
            Err(Error::ScheduleOverflow)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddConfig {
    pub params: SystemParams,
    pub n_pulses: usize,
    pub pulse_rabi: f64,
    pub t2: Option<f64>,
    pub amplitude_rel: Option<f64>,
    pub amplitude_tau_c: f64,
    pub independent_ions: bool,
    /// Upper limit on the schedule length, pulses included.
    pub max_duration: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl PddConfig {
    pub fn new(params: SystemParams, n_pulses: usize) -> Self {
        Self {
            params,
            n_pulses,
            pulse_rabi: 2.0 * PI * 50e3,
            t2: None,
            amplitude_rel: None,
            amplitude_tau_c: 0.5e-3,
            independent_ions: false,
            max_duration: None,
            seed: 0,
            config_hash: String::new(),
        }
    }
}

fn bare_op(kind: OperatorKind) -> nalgebra::DMatrix<C64> {
    spin_matrix(kind).expect("spin operator")
}

/// Bare J-coupling −2J₀|+1+1⟩⟨+1+1| with global X/Y π pulses on the {|0⟩, |+1⟩} qubits.
pub fn pdd_model(j0: f64, schedule: &PddSchedule) -> Result<HamiltonianModel> {
    let l = BasisLayout::spin_only();
    let mut m = HamiltonianModel::new("pdd", Frame::BareInteraction, &l);
    let pp = bare_op(OperatorKind::Projector(Level::Bare(SpinLevel::Plus), Level::Bare(SpinLevel::Plus)));
    m.add_static("j-coupling", Operator::embed(&l, &[(0, pp.clone()), (1, pp)]), -2.0 * j0)?;
    let lower = bare_op(OperatorKind::Projector(Level::Bare(SpinLevel::Zero), Level::Bare(SpinLevel::Plus)));
    let x = &lower + lower.adjoint();
    let yl = &lower * C64::new(0.0, -1.0);
    let y = &yl + yl.adjoint();
    for (axis, local) in [(PulseAxis::X, x), (PulseAxis::Y, y)] {
        let w = schedule.windows(axis);
        if w.is_empty() {
            continue;
        }
        let op = Operator::embed(&l, &[(0, local.clone())]).add(&Operator::embed(&l, &[(1, local)]))?;
        let mut term = Term::new(format!("pulse-{axis:?}"), op, schedule.pulse_rabi / 2.0).driven(1, schedule.pulse_rabi);
        term.envelope = Envelope::windows(w);
        m.push(term)?;
    }
    Ok(m)
}

/// Initial PDD state (|0⟩ + |+1⟩)⊗(|0⟩ + |+1⟩)/2.
pub fn pdd_initial() -> Result<StateVector> {
    let mut plus = [C64::new(0.0, 0.0); 4];
    plus[SpinLevel::Zero as usize] = C64::new(FRAC_1_SQRT_2, 0.0);
    plus[SpinLevel::Plus as usize] = C64::new(FRAC_1_SQRT_2, 0.0);
    StateVector::product(&BasisLayout::spin_only(), plus, plus, &[])
}

/// Run the XY4-decoupled bare gate with and without noise and report the
/// overlap of the two final states.
pub fn pdd_experiment(cfg: &PddConfig) -> Result<FidelityReport> {
    let start = Instant::now();
    cfg.params.validate()?;
    let c = couplings(&cfg.params, &mode_spectrum(&cfg.params)?)?;
    if c.j0 == 0.0 {
        return Err(Error::InvalidParameter("PDD gate needs a non-zero spin-spin coupling".into()));
    }
    let free = PI / (2.0 * c.j0.abs());
    let schedule = PddSchedule::xy4(cfg.n_pulses, cfg.pulse_rabi, free)?;
    if let Some(w) = cfg.max_duration {
        schedule.check_fits(w)?;
    }
    let span = schedule.total_duration();
    let ideal_model = pdd_model(c.j0, &schedule)?;
    let mut noise = NoiseSet::default();
    if let Some(t2) = cfg.t2 {
        let mut d = dephasing_traces(&cfg.params, t2, cfg.params.b0, span, derive_seed(cfg.seed, 0), cfg.independent_ions)?;
        // the qubit is {|0⟩, |+1⟩}: only its own transition frequency fluctuates
        d.ratio_m1 = 0.0;
        d.ratio_0p = 0.0;
        noise.dephasing = Some(d);
    }
    if let Some(rel) = cfg.amplitude_rel {
        noise.amplitude = Some(amplitude_noise(cfg.pulse_rabi, rel, cfg.amplitude_tau_c, span, derive_seed(cfg.seed, 1))?);
    }
    let noisy = attach_noise(&ideal_model, &noise)?;
    let psi0 = pdd_initial()?;
    let spec = PropagationSpec::new(0.0, span);
    let ideal = propagate(&ideal_model, &psi0, &spec)?.pop().expect("one sample");
    let psi = propagate(&noisy, &psi0, &spec)?.pop().expect("one sample");
    let f = ideal.inner(&psi).norm_sqr().min(1.0);
    let comp = [SpinLevel::Zero as usize, SpinLevel::Plus as usize];
    let kept: f64 = comp
        .iter()
        .flat_map(|&a| comp.map(|b| (a, b)))
        .map(|(a, b)| psi.amplitudes[4 * a + b].norm_sqr())
        .sum();
    Ok(FidelityReport {
        bell_fidelity: f,
        infidelity: 1.0 - f,
        gate_time: span,
        leakage: (1.0 - kept).max(0.0),
        seed: cfg.seed,
        config_hash: cfg.config_hash.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidConfig {
    pub params: SystemParams,
    pub t2: f64,
    /// Dressing Rabi frequency on the probed ion; `None` for bare free decay.
    pub drive: Option<f64>,
    pub n_realizations: usize,
    pub times: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub times: Vec<f64>,
    pub coherence: Vec<f64>,
    pub sem: Vec<f64>,
    /// Fitted 1/e decay time.
    pub decay_time: f64,
}

/// Decay of ⟨2|D⟩⟨D| − 1⟩ on ion 1 prepared in |D⟩, averaged over noise realisations.
pub fn fid_experiment(cfg: &FidConfig) -> Result<FidResult> {
    if cfg.times.is_empty() || cfg.n_realizations == 0 {
        return Err(Error::InvalidParameter("FID needs sample times and at least one realisation".into()));
    }
    let span = cfg.times.iter().cloned().fold(0.0, f64::max);
    let l = BasisLayout::spin_only();
    let mut base = HamiltonianModel::new("fid", Frame::BareInteraction, &l);
    if let Some(om) = cfg.drive {
        base.push(Term::new("carrier[0]", carrier(&l, 0), om / 2.0).driven(1, om))?;
    }
    let dark = DressedLevel::Dark.bare_vector();
    let psi0 = StateVector::product(&l, dark, DressedLevel::ZeroPrime.bare_vector(), &[])?;
    let probe = Operator::embed(&l, &[(0, bare_op(OperatorKind::Projector(Level::Dressed(DressedLevel::Dark), Level::Dressed(DressedLevel::Dark))))]);
    let spec = PropagationSpec::new(0.0, span).with_samples(cfg.times.clone());
    let runs: Vec<Vec<f64>> = (0..cfg.n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let d = dephasing_traces(&cfg.params, cfg.t2, cfg.params.b0, span, derive_seed(cfg.seed, i), false)?;
            let m = attach_noise(&base, &NoiseSet { dephasing: Some(d), amplitude: None })?;
            let states = propagate(&m, &psi0, &spec)?;
            Ok(states.iter().map(|s| 2.0 * s.expectation(&probe).re - 1.0).collect())
        })
        .collect::<Result<_>>()?;
    let n = cfg.times.len();
    let mut coherence = Vec::with_capacity(n);
    let mut sem = Vec::with_capacity(n);
    for k in 0..n {
        let col: Vec<f64> = runs.iter().map(|r| r[k]).collect();
        let s = crate::stats::Summary::of(&col);
        coherence.push(s.mean);
        sem.push(s.sem);
    }
    let decay_time = fit_decay_time(&cfg.times, &coherence);
    Ok(FidResult { times: cfg.times.clone(), coherence, sem, decay_time })
}

/// Least-squares fit of ln χ = −t/T through the origin on points with χ > 0.2.
/// Returns infinity when no decay is resolved.
pub fn fit_decay_time(times: &[f64], chi: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &c) in times.iter().zip(chi) {
        if t > 0.0 && c > 0.2 {
            num += t * c.ln();
            den += t * t;
        }
    }
    if den == 0.0 || num >= 0.0 {
        f64::INFINITY
    } else {
        -den / num
    }
}

/// Electrode voltage-noise spectrum S_V(ω) in V²/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VoltageSpectrum {
    White { level: f64 },
    /// level·(reference/ω)^exponent
    PowerLaw { level: f64, exponent: f64, reference: f64 },
}

impl VoltageSpectrum {
    pub fn at(&self, omega: f64) -> f64 {
        match *self {
            VoltageSpectrum::White { level } => level,
            VoltageSpectrum::PowerLaw { level, exponent, reference } => level * (reference / omega.abs()).powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageNoiseParams {
    /// Geometric factor relating electrode voltage to axial field, E = α·V/d.
    pub alpha_z: f64,
    /// Ion-electrode distance in metres.
    pub distance: f64,
    pub spectrum: VoltageSpectrum,
    pub charge: f64,
}

impl VoltageNoiseParams {
    pub fn new(alpha_z: f64, distance: f64, spectrum: VoltageSpectrum) -> Self {
        Self { alpha_z, distance, spectrum, charge: crate::ion_physics::ELEMENTARY_CHARGE }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) {
            return Err(Error::InvalidParameter(format!("electrode distance must be positive, got {}", self.distance)));
        }
        Ok(())
    }

    /// Electric-field noise S_E(ω).
    pub fn field_psd(&self, omega: f64) -> f64 {
        (self.alpha_z / self.distance).powi(2) * self.spectrum.at(omega)
    }
}

fn response(omega: f64, params: &SystemParams) -> Result<f64> {
    let nu2 = params.nu1 * params.nu1;
    let den = nu2 - omega * omega;
    if den.abs() < 1e-6 * nu2 {
        return Err(Error::InvalidParameter(format!("ω = {omega} is at the secular pole {}", params.nu1)));
    }
    Ok(1.0 / (params.ion_mass * den))
}

/// Axial position noise S_z(ω) in m²/Hz.
pub fn position_psd(omega: f64, p: &VoltageNoiseParams, params: &SystemParams) -> Result<f64> {
    p.validate()?;
    Ok((p.charge * response(omega, params)?).powi(2) * p.field_psd(omega))
}

/// ∂B/∂V at frequency ω, in T/V.
pub fn b_per_volt(omega: f64, p: &VoltageNoiseParams, params: &SystemParams) -> Result<f64> {
    p.validate()?;
    Ok(p.charge * params.gradient * p.alpha_z * response(omega, params)? / p.distance)
}

/// Magnetic-field noise S_B(ω) in T²/Hz.
pub fn voltage_to_b_psd(omega: f64, p: &VoltageNoiseParams, params: &SystemParams) -> Result<f64> {
    Ok(b_per_volt(omega, p, params)?.powi(2) * p.spectrum.at(omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagate::{bell_experiment, BellConfig, ModelKind};

    const TWO_PI: f64 = 2.0 * PI;

    fn low_gradient() -> SystemParams {
        SystemParams::yb171(20.0, TWO_PI * 140e3, TWO_PI * 20e3)
    }

    #[test]
    fn zero_diffusion_gives_zero_trace() {
        let t = ou_trace(&OUParams { tau_c: 1e-3, diffusion: 0.0, dt: 5e-5, seed: 3 }, 1e-2).unwrap();
        assert!(t.is_zero());
        assert_eq!(t.values.len(), 201);
    }

    #[test]
    fn ou_validation() {
        assert!(ou_trace(&OUParams { tau_c: 1e-3, diffusion: 1.0, dt: 2e-4, seed: 0 }, 1.0).is_err());
        assert!(ou_trace(&OUParams { tau_c: 0.0, diffusion: 1.0, dt: 1e-5, seed: 0 }, 1.0).is_err());
        assert!(ou_trace(&OUParams { tau_c: 1.0, diffusion: -1.0, dt: 1e-2, seed: 0 }, 1.0).is_err());
    }

    #[test]
    fn prefix_stable_in_span() {
        let p = OUParams { tau_c: 1e-3, diffusion: 5.0, dt: 5e-5, seed: 99 };
        let long = ou_trace(&p, 2e-2).unwrap();
        let short = ou_trace(&p, 1e-2).unwrap();
        assert_eq!(&long.values[..short.values.len()], &short.values[..]);
        let other = ou_trace(&OUParams { seed: 100, ..p }, 1e-2).unwrap();
        assert_ne!(other.values, short.values);
    }

    #[test]
    fn ensemble_variance_and_correlation() {
        let p = OUParams { tau_c: 1.0, diffusion: 2.0, dt: 0.05, seed: 0 };
        let n = 4000;
        let (mut v0, mut v1, mut c) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let tr = ou_trace(&OUParams { seed: derive_seed(7, i), ..p }, 2.0).unwrap();
            let (a, b) = (tr.values[10], tr.values[30]);
            v0 += a * a;
            v1 += b * b;
            c += a * b;
        }
        let var = p.stationary_variance();
        assert!((v0 / n as f64 / var - 1.0).abs() < 0.08);
        assert!((v1 / n as f64 / var - 1.0).abs() < 0.08);
        let rho = c / (v0 * v1).sqrt();
        assert!((rho / (-1.0f64).exp() - 1.0).abs() < 0.12, "rho = {rho}");
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
    }

    #[test]
    fn dephasing_ratio_pointwise() {
        let p = low_gradient();
        let d = dephasing_traces(&p, 1e-3, 7.5e-4, 2e-3, 5, false).unwrap();
        assert_eq!(d.per_ion.len(), 1);
        assert!((d.ratio_m1 + 0.9967).abs() < 5e-4);
        let ind = dephasing_traces(&p, 1e-3, 7.5e-4, 2e-3, 5, true).unwrap();
        assert_eq!(ind.per_ion.len(), 2);
        assert_eq!(ind.per_ion[0].values, d.per_ion[0].values);
        assert_ne!(ind.per_ion[1].values, d.per_ion[0].values);
    }

    #[test]
    fn trace_lookup() {
        let t = NoiseTrace { values: vec![1.0, 2.0, 3.0], dt: 0.5, t0: 1.0, seed: 0 };
        assert_eq!(t.value_at(1.0).unwrap(), 1.0);
        assert_eq!(t.value_at(1.49).unwrap(), 1.0);
        assert_eq!(t.value_at(1.5).unwrap(), 2.0);
        assert_eq!(t.value_at(2.5).unwrap(), 3.0);
        assert!(t.value_at(0.9).is_err());
        assert!(t.value_at(2.6).is_err());
    }

    #[test]
    fn xy4_layout() {
        let s = PddSchedule::xy4(8, TWO_PI * 50e3, 8e-3).unwrap();
        let tp = 1e-5;
        assert!((s.pulse_duration() - tp).abs() < 1e-15);
        assert!((s.total_duration() - (8e-3 + 8.0 * tp)).abs() < 1e-15);
        assert!((s.timing[0] - (0.5e-3 + tp / 2.0)).abs() < 1e-15);
        assert!((s.timing[1] - s.timing[0] - (1e-3 + tp)).abs() < 1e-15);
        assert_eq!(s.axes[..4], [PulseAxis::X, PulseAxis::Y, PulseAxis::X, PulseAxis::Y]);
        let last = s.timing[7] + tp / 2.0;
        assert!((s.total_duration() - last - 0.5e-3).abs() < 1e-15);
        assert!(PddSchedule::xy4(6, 1.0, 1.0).is_err());
        assert!(matches!(s.check_fits(8e-3), Err(Error::ScheduleOverflow)));
    }

    #[test]
    fn pdd_without_pulses_or_noise_is_the_bare_gate() {
        let p = low_gradient();
        let r = pdd_experiment(&PddConfig::new(p.clone(), 0)).unwrap();
        assert!(r.infidelity < 1e-6);
        // compare against the controlled-phase target directly
        let c = couplings(&p, &mode_spectrum(&p).unwrap()).unwrap();
        let s = PddSchedule::xy4(0, TWO_PI * 50e3, PI / (2.0 * c.j0)).unwrap();
        let m = pdd_model(c.j0, &s).unwrap();
        let psi = propagate(&m, &pdd_initial().unwrap(), &PropagationSpec::new(0.0, s.total_duration())).unwrap();
        let idx = |a: SpinLevel, b: SpinLevel| 4 * a as usize + b as usize;
        let amp = &psi[0].amplitudes;
        assert!((amp[idx(SpinLevel::Zero, SpinLevel::Zero)] - C64::new(0.5, 0.0)).norm() < 1e-9);
        assert!((amp[idx(SpinLevel::Plus, SpinLevel::Plus)] - C64::new(-0.5, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn pdd_pulses_flip_the_qubit() {
        // a single X pulse pair returns the state; check one π pulse on |0⟩
        let s = PddSchedule::xy4(4, TWO_PI * 50e3, 1e-3).unwrap();
        let m = pdd_model(0.0, &s).unwrap();
        let l = BasisLayout::spin_only();
        let mut zero = [C64::new(0.0, 0.0); 4];
        zero[0] = C64::new(1.0, 0.0);
        let psi0 = StateVector::product(&l, zero, zero, &[]).unwrap();
        let t_after_first = s.timing[0] + s.pulse_duration() / 2.0 + 1e-6;
        let out = propagate(&m, &psi0, &PropagationSpec::new(0.0, t_after_first)).unwrap();
        let p = out[0].amplitudes[4 * 3 + 3].norm_sqr();
        assert!((p - 1.0).abs() < 1e-9, "population {p}");
    }

    #[test]
    fn pdd_overflow_and_noise_determinism() {
        let mut cfg = PddConfig::new(low_gradient(), 8);
        cfg.max_duration = Some(6e-3);
        assert!(matches!(pdd_experiment(&cfg), Err(Error::ScheduleOverflow)));
        cfg.max_duration = None;
        cfg.t2 = Some(8e-3);
        cfg.amplitude_rel = Some(5e-3);
        cfg.seed = 4;
        let a = pdd_experiment(&cfg).unwrap();
        let b = pdd_experiment(&cfg).unwrap();
        assert_eq!(a.infidelity.to_bits(), b.infidelity.to_bits());
        assert!(a.infidelity > 0.0 && a.infidelity < 0.5);
    }

    #[test]
    fn amplitude_noise_barely_affects_cdd() {
        let mut cfg = BellConfig::new(low_gradient(), ModelKind::Approx);
        let clean = bell_experiment(&cfg).unwrap().infidelity;
        cfg.noise.amplitude_rel = Some(5e-3);
        for seed in 0..3 {
            cfg.seed = seed;
            let r = bell_experiment(&cfg).unwrap();
            assert!((r.infidelity - clean).abs() < 1e-4);
        }
    }

    #[test]
    fn bare_fid_recovers_t2() {
        let cfg = FidConfig {
            params: low_gradient(),
            t2: 1e-3,
            drive: None,
            n_realizations: 300,
            times: (1..=10).map(|k| k as f64 * 1.5e-4).collect(),
            seed: 1,
        };
        let r = fid_experiment(&cfg).unwrap();
        assert!((r.decay_time / 1e-3 - 1.0).abs() < 0.15, "T = {}", r.decay_time);
    }

    #[test]
    fn decay_fit() {
        let t: Vec<f64> = (1..20).map(|k| k as f64 * 0.1).collect();
        let chi: Vec<f64> = t.iter().map(|x| (-x / 0.7f64).exp()).collect();
        assert!((fit_decay_time(&t, &chi) - 0.7).abs() < 1e-12);
        assert_eq!(fit_decay_time(&t, &vec![1.0; t.len()]), f64::INFINITY);
    }

    #[test]
    fn voltage_psd_scalings() {
        let p = low_gradient();
        let v = VoltageNoiseParams::new(0.3, 100e-6, VoltageSpectrum::White { level: 1e-16 });
        let w = p.nu1 / 100.0;
        assert_eq!(voltage_to_b_psd(w, &VoltageNoiseParams { alpha_z: 0.0, ..v }, &p).unwrap(), 0.0);
        let base = voltage_to_b_psd(w, &v, &p).unwrap();
        let mut p2 = p.clone();
        p2.gradient *= 2.0;
        assert!((voltage_to_b_psd(w, &v, &p2).unwrap() / base - 4.0).abs() < 1e-12);
        let mut p3 = p.clone();
        p3.nu1 /= 2.0;
        let r = voltage_to_b_psd(w, &v, &p3).unwrap() / base;
        assert!((r / 16.0 - 1.0).abs() < 1e-3, "ratio {r}");
        assert!(voltage_to_b_psd(p.nu1, &v, &p).is_err());
        let sz = position_psd(w, &v, &p).unwrap();
        assert!((base / sz - p.gradient.powi(2)).abs() < 1e-9 * p.gradient.powi(2));
    }
}
