//! Monte-Carlo wave-function trajectories with motional heating, thermal
//! Fock-state sampling and the heated-gate experiment.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_exact, HamiltonianModel};
use crate::hilbert::{mode_matrix, thermal_distribution, BasisLayout, Operator, OperatorKind, StateVector, N_IONS};
use crate::ion_physics::{couplings, gate_time, mode_spectrum, SystemParams};
use crate::noise::derive_seed;
use crate::ode::{Dopri5, StepControl, Tolerances};
use crate::propagate::{initial_state, spin_observables, Compiled, FidelityReport, PropagationSpec};
use crate::stats::Summary;
use crate::C64;

/// Largest norm loss accepted in one integrator step.
const MAX_STEP_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct CollapseSet {
    pub operators: Vec<Operator>,
    pub labels: Vec<String>,
}

impl CollapseSet {
    pub fn new(layout: &BasisLayout, operators: Vec<(String, Operator)>) -> Result<Self> {
        for (label, op) in &operators {
            if op.layout().fock_cutoffs != layout.fock_cutoffs {
                return Err(Error::LayoutMismatch(format!("collapse operator `{label}` built on a different layout")));
            }
        }
        let (labels, operators) = operators.into_iter().unzip();
        Ok(Self { operators, labels })
    }

    /// No dissipation.
    pub fn empty() -> Self {
        Self { operators: Vec::new(), labels: Vec::new() }
    }

    /// Heating of `mode` towards a bath occupation `n_bar` at rate `rate` (quanta/s):
    /// √(ṅ·n̄)·a† and √(ṅ·(1 + n̄))·a.
    pub fn heating(layout: &BasisLayout, mode: usize, rate: f64, n_bar: f64) -> Result<Self> {
        if mode >= layout.n_modes() {
            return Err(Error::IndexOutOfRange { index: mode, limit: layout.n_modes() });
        }
        if !(rate >= 0.0 && n_bar >= 0.0) {
            return Err(Error::InvalidParameter("heating rate and bath occupation must be non-negative".into()));
        }
        let nmax = layout.fock_cutoffs[mode];
        let ad = mode_matrix(OperatorKind::Create, nmax).expect("mode operator");
        let a = mode_matrix(OperatorKind::Annihilate, nmax).expect("mode operator");
        let up = Operator::embed(layout, &[(N_IONS + mode, ad)]).scale(C64::new((rate * n_bar).sqrt(), 0.0));
        let down = Operator::embed(layout, &[(N_IONS + mode, a)]).scale(C64::new((rate * (1.0 + n_bar)).sqrt(), 0.0));
        Self::new(layout, vec![(format!("heat[{mode}]"), up), (format!("cool[{mode}]"), down)])
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// Σ C†C
    pub fn damping(&self, layout: &BasisLayout) -> Result<Operator> {
        let mut acc = Operator::zeros(layout);
        for c in &self.operators {
            acc = acc.add(&c.adjoint().matmul(c)?)?;
        }
        Ok(acc)
    }
}

/// Inverse-CDF draws from the Bose-Einstein distribution renormalised to [0, n_max].
pub fn sample_fock(n_bar: f64, n_max: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = thermal_distribution(n_bar, n_max.max(1))?;
    let total: f64 = dist.probabilities[..=n_max].iter().sum();
    let mut cdf = Vec::with_capacity(n_max + 1);
    let mut acc = 0.0;
    for p in &dist.probabilities[..=n_max] {
        acc += p / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            cdf.iter().position(|&c| u < c).unwrap_or(n_max)
        })
        .collect())
}

/// Outcome of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// (time, collapse-operator index) of every jump.
    pub jumps: Vec<(f64, usize)>,
    /// Observables at each sample time.
    pub observables: Vec<Vec<f64>>,
}

fn pick_channel(collapse: &CollapseSet, psi: &[C64], u: f64) -> (usize, Vec<C64>) {
    let outs: Vec<Vec<C64>> = collapse.operators.iter().map(|c| c.apply(psi)).collect();
    let weights: Vec<f64> = outs.iter().map(|v| v.iter().map(|a| a.norm_sqr()).sum()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut k = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            k = i;
            break;
        }
    }
    let norm = weights[k].sqrt();
    let v = outs[k].iter().map(|a| a / norm).collect();
    (k, v)
}

/// Propagate one trajectory under H − (i/2)ΣC†C with quantum jumps.
/// `observe` receives the normalised state at every sample time.
pub fn run_trajectory<F>(
    model: &HamiltonianModel,
    collapse: &CollapseSet,
    psi0: &StateVector,
    spec: &PropagationSpec,
    seed: u64,
    observe: &F,
) -> Result<TrajectoryRecord>
where
    F: Fn(&StateVector) -> Vec<f64>,
{
    let compiled = compile(model, collapse, psi0, spec)?;
    trajectory(&compiled, collapse, psi0, spec, seed, observe)
}

fn compile<'a>(
    model: &'a HamiltonianModel,
    collapse: &CollapseSet,
    psi0: &StateVector,
    spec: &PropagationSpec,
) -> Result<(Compiled<'a>, f64)> {
    let layout = model.layout();
    if psi0.layout().fock_cutoffs != layout.fock_cutoffs {
        return Err(Error::LayoutMismatch("initial state and model use different layouts".into()));
    }
    for c in &collapse.operators {
        if c.layout().fock_cutoffs != layout.fock_cutoffs {
            return Err(Error::LayoutMismatch("collapse operators and model use different layouts".into()));
        }
    }
    let max_step = spec.validate(model)?;
    model.check_window(spec.t_start, spec.t_end)?;
    let mut compiled = Compiled::new(model)?;
    if !collapse.is_empty() {
        compiled.add_constant(collapse.damping(layout)?.scale(C64::new(0.0, -0.5)))?;
    }
    Ok((compiled, max_step))
}

fn trajectory<F>(
    (compiled, max_step): &(Compiled, f64),
    collapse: &CollapseSet,
    psi0: &StateVector,
    spec: &PropagationSpec,
    seed: u64,
    observe: &F,
) -> Result<TrajectoryRecord>
where
    F: Fn(&StateVector) -> Vec<f64>,
{
    let layout = psi0.layout().clone();
    let (times, is_sample) = compiled.event_times(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| if collapse.is_empty() { 0.0 } else { rng.gen::<f64>() };
    let mut threshold = draw(&mut rng);
    let mut y: Vec<C64> = psi0.amplitudes.iter().cloned().collect();
    let tol = Tolerances { rel: spec.rel_tol, abs: spec.abs_tol, max_step: *max_step };
    let mut ig = Dopri5::new(y.len(), tol);
    let mut jumps = Vec::new();
    let mut observables = Vec::new();
    let mut t = spec.t_start;
    for (&te, &sample) in times.iter().zip(&is_sample) {
        if te > t {
            let frozen = compiled.frozen_coefficients(0.5 * (t + te))?;
            let mut f = |t: f64, y: &[C64], dy: &mut [C64]| compiled.rhs(&frozen, t, y, dy);
            ig.reset();
            while t < te {
                let r = threshold;
                let mut check = |_t: f64, new: &[C64], old: &[C64]| {
                    let n_old: f64 = old.iter().map(|a| a.norm_sqr()).sum();
                    let n_new: f64 = new.iter().map(|a| a.norm_sqr()).sum();
                    if (n_old - n_new) / n_old > MAX_STEP_JUMP_PROBABILITY {
                        StepControl::Reject
                    } else if n_new < r {
                        StepControl::Stop
                    } else {
                        StepControl::Accept
                    }
                };
                let reached = ig.integrate(&mut f, t, te, &mut y, &mut check).map_err(|e| match e {
                    Error::StepUnderflow { t } => Error::JumpStepTooLarge { t },
                    e => e,
                })?;
                let n: f64 = y.iter().map(|a| a.norm_sqr()).sum();
                if n < threshold {
                    let (k, v) = pick_channel(collapse, &y, rng.gen());
                    y = v;
                    jumps.push((reached, k));
                    threshold = draw(&mut rng);
                    ig.reset();
                }
                t = reached;
            }
        }
        if sample {
            let mut psi = StateVector::new(&layout, DVector::from_vec(y.clone()))?;
            psi.normalize();
            if let Some(tol) = spec.truncation_tol {
                psi.check_truncation(tol)?;
            }
            observables.push(observe(&psi));
        }
    }
    Ok(TrajectoryRecord { seed, jumps, observables })
}

/// Trajectory averages at each sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McwfResult {
    pub times: Vec<f64>,
    /// mean[sample][observable]
    pub mean: Vec<Vec<f64>>,
    pub sem: Vec<Vec<f64>>,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Run `n_traj` trajectories (seeded from `seed` and the trajectory index) in parallel.
pub fn mcwf_propagate<F>(
    model: &HamiltonianModel,
    collapse: &CollapseSet,
    psi0: &StateVector,
    spec: &PropagationSpec,
    n_traj: usize,
    seed: u64,
    observe: F,
) -> Result<McwfResult>
where
    F: Fn(&StateVector) -> Vec<f64> + Sync,
{
    if n_traj == 0 {
        return Err(Error::InvalidParameter("need at least one trajectory".into()));
    }
    let compiled = compile(model, collapse, psi0, spec)?;
    let trajectories: Vec<TrajectoryRecord> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| trajectory(&compiled, collapse, psi0, spec, derive_seed(seed, i), &observe))
        .collect::<Result<_>>()?;
    let times = if spec.sample_times.is_empty() { vec![spec.t_end] } else { spec.sample_times.clone() };
    let n_obs = trajectories[0].observables.first().map_or(0, |o| o.len());
    let mut mean = Vec::with_capacity(times.len());
    let mut sem = Vec::with_capacity(times.len());
    for s in 0..times.len() {
        let (m, e): (Vec<f64>, Vec<f64>) = (0..n_obs)
            .map(|k| {
                let col: Vec<f64> = trajectories.iter().map(|tr| tr.observables[s][k]).collect();
                let sm = Summary::of(&col);
                (sm.mean, sm.sem)
            })
            .unzip();
        mean.push(m);
        sem.push(e);
    }
    Ok(McwfResult { times, mean, sem, trajectories })
}

/// Sampled initial Fock states and the per-trajectory gate fidelities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub n_traj: usize,
    pub master_seed: u64,
    pub initial_fock: Vec<usize>,
    /// per_traj_fidelity[sample][trajectory]
    pub per_traj_fidelity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotGateConfig {
    pub params: SystemParams,
    /// Mean occupation the initial Fock states are drawn from.
    pub n_bar: f64,
    /// Bath occupation in the heating operators.
    pub bath_n_bar: f64,
    pub heating_rate: f64,
    pub n_max: usize,
    pub n_samples: usize,
    pub n_traj: usize,
    /// Keep the stretch mode (cutoff given) instead of dropping it.
    pub stretch_cutoff: Option<usize>,
    pub seed: u64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub truncation_tol: Option<f64>,
    pub config_hash: String,
}

impl HotGateConfig {
    pub fn new(params: SystemParams, n_bar: f64, n_max: usize, n_samples: usize, n_traj: usize) -> Self {
        Self {
            params,
            n_bar,
            bath_n_bar: n_bar,
            heating_rate: 100.0,
            n_max,
            n_samples,
            n_traj,
            stretch_cutoff: None,
            seed: 0,
            rel_tol: 1e-8,
            abs_tol: 1e-11,
            truncation_tol: Some(1e-6),
            config_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotGateSample {
    pub index: usize,
    pub initial_n: usize,
    pub mean_infidelity: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotGateResult {
    pub samples: Vec<HotGateSample>,
    pub batch: TrajectoryBatch,
    pub average_infidelity: f64,
    pub sem: f64,
    pub gate_time: f64,
    pub report: FidelityReport,
}

/// Seed of trajectory `traj` of sample `sample`.
pub fn trajectory_seed(master: u64, sample: usize, traj: usize) -> u64 {
    derive_seed(derive_seed(master, sample as u64), traj as u64)
}

/// Gate with the first-order sideband model on the centre-of-mass mode,
/// thermally sampled initial Fock states and heating jumps.
pub fn hot_gate_experiment(cfg: &HotGateConfig) -> Result<HotGateResult> {
    let start = Instant::now();
    if cfg.n_samples == 0 || cfg.n_traj == 0 {
        return Err(Error::InvalidParameter("need at least one sample and one trajectory".into()));
    }
    let modes = mode_spectrum(&cfg.params)?;
    let mut cutoffs = vec![cfg.n_max];
    cutoffs.extend(cfg.stretch_cutoff);
    let layout = BasisLayout::new(&cutoffs);
    let c = couplings(&cfg.params, &modes)?.restricted(cutoffs.len());
    let tau = gate_time(&c)?;
    let model = build_exact(&cfg.params, &modes, &c, &layout)?;
    let collapse = CollapseSet::heating(&layout, 0, cfg.heating_rate, cfg.bath_n_bar)?;
    let initial_fock = sample_fock(cfg.n_bar, cfg.n_max, cfg.n_samples, derive_seed(cfg.seed, u64::MAX))?;
    let mut spec = PropagationSpec::new(0.0, tau);
    spec.rel_tol = cfg.rel_tol;
    spec.abs_tol = cfg.abs_tol;
    spec.truncation_tol = cfg.truncation_tol;
    let compiled = compile(&model, &collapse, &StateVector::zeros(&layout), &spec)?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.n_samples).flat_map(|s| (0..cfg.n_traj).map(move |k| (s, k))).collect();
    let fid: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, k)| {
            let mut fock = vec![initial_fock[s]];
            fock.extend(cfg.stretch_cutoff.map(|_| 0));
            let psi0 = StateVector::from_spin_state(&layout, &initial_state(), &fock)?;
            let rec = trajectory(&compiled, &collapse, &psi0, &spec, trajectory_seed(cfg.seed, s, k), &|psi| {
                vec![spin_observables(psi).fidelity]
            })?;
            Ok(rec.observables[0][0])
        })
        .collect::<Result<_>>()?;
    let per_traj_fidelity: Vec<Vec<f64>> = fid.chunks(cfg.n_traj).map(|c| c.to_vec()).collect();
    let samples: Vec<HotGateSample> = per_traj_fidelity
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let inf: Vec<f64> = f.iter().map(|x| 1.0 - x).collect();
            let s = Summary::of(&inf);
            HotGateSample { index: i, initial_n: initial_fock[i], mean_infidelity: s.mean, sem: s.sem }
        })
        .collect();
    let all: Vec<f64> = fid.iter().map(|x| 1.0 - x).collect();
    let total = Summary::of(&all);
    let report = FidelityReport {
        bell_fidelity: 1.0 - total.mean,
        infidelity: total.mean,
        gate_time: tau,
        leakage: f64::NAN,
        seed: cfg.seed,
        config_hash: cfg.config_hash.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(HotGateResult {
        samples,
        batch: TrajectoryBatch { n_traj: cfg.n_traj, master_seed: cfg.seed, initial_fock, per_traj_fidelity },
        average_infidelity: total.mean,
        sem: total.sem,
        gate_time: tau,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Frame, Term};
    use crate::hilbert::{operator_from_symbol, SpinLevel};
    use crate::propagate::{propagate, Method};
    use nalgebra::Matrix2;
    use std::f64::consts::PI;

    fn bare(l: SpinLevel) -> [C64; 4] {
        let mut v = [C64::new(0.0, 0.0); 4];
        v[l as usize] = C64::new(1.0, 0.0);
        v
    }

    #[test]
    fn fock_sampling() {
        assert!(sample_fock(0.0, 10, 50, 1).unwrap().iter().all(|&n| n == 0));
        let s = sample_fock(70.0, 250, 10_000, 2).unwrap();
        let d = thermal_distribution(70.0, 250).unwrap();
        let z: f64 = d.probabilities.iter().sum();
        let want: f64 = d.probabilities.iter().enumerate().map(|(n, p)| n as f64 * p / z).sum();
        let got = s.iter().sum::<usize>() as f64 / s.len() as f64;
        assert!((got - want).abs() < 3.0, "{got} vs {want}");
        assert_eq!(sample_fock(3.0, 20, 40, 9).unwrap(), sample_fock(3.0, 20, 40, 9).unwrap());
    }

    #[test]
    fn heating_operators() {
        let l = BasisLayout::new(&[4]);
        let c = CollapseSet::heating(&l, 0, 100.0, 2.0).unwrap();
        assert_eq!(c.operators.len(), 2);
        let d = c.damping(&l).unwrap().diagonal();
        // ṅ(n̄(n+1) + (1+n̄)n) below the top level
        for (i, want) in [(0usize, 200.0), (1, 700.0), (2, 1200.0)] {
            assert!((d[l.index([0, 0], &[i])].re - want).abs() < 1e-9);
        }
        assert!(CollapseSet::heating(&l, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn empty_collapse_matches_deterministic_run() {
        let l = BasisLayout::spin_only();
        let mut h = HamiltonianModel::new("rabi", Frame::BareInteraction, &l);
        let sp = operator_from_symbol("sp:+1", 0, &l).unwrap();
        h.push(Term::new("x", sp.add(&sp.adjoint()).unwrap(), 2.0 * PI * 1e3)).unwrap();
        let psi0 = StateVector::product(&l, bare(SpinLevel::Zero), bare(SpinLevel::Zero), &[]).unwrap();
        let times = vec![1e-4, 2e-4, 3e-4];
        let spec = PropagationSpec::new(0.0, 3e-4).with_samples(times.clone());
        let det = propagate(&h, &psi0, &spec.clone().with_method(Method::Eigen)).unwrap();
        let p = operator_from_symbol("proj:+1:+1", 0, &l).unwrap();
        let r = mcwf_propagate(&h, &CollapseSet::empty(), &psi0, &spec, 3, 0, |s| vec![s.expectation(&p).re]).unwrap();
        for (k, s) in det.iter().enumerate() {
            let want = (2.0 * PI * 1e3 * times[k]).sin().powi(2);
            assert!((r.mean[k][0] - want).abs() < 1e-8, "{} vs {want}", r.mean[k][0]);
            assert!((s.expectation(&p).re - want).abs() < 1e-8);
            assert!(r.sem[k][0] < 1e-15);
        }
        assert!(r.trajectories.iter().all(|t| t.jumps.is_empty()));
    }

    /// Dense Lindblad integration of a driven, decaying two-level system.
    fn lindblad_excited(omega: f64, gamma: f64, times: &[f64]) -> Vec<f64> {
        type M = Matrix2<C64>;
        let i = C64::new(0.0, 1.0);
        let h = M::new(C64::new(0.0, 0.0), C64::new(omega / 2.0, 0.0), C64::new(omega / 2.0, 0.0), C64::new(0.0, 0.0));
        // basis (g, e); lowering |g⟩⟨e|
        let c = M::new(C64::new(0.0, 0.0), C64::new(gamma.sqrt(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let cd = c.adjoint();
        let cdc = cd * c;
        let f = |r: &M| -> M { (h * r - r * h) * (-i) + c * r * cd - (cdc * r + r * cdc) * C64::new(0.5, 0.0) };
        let mut rho = M::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let dt: f64 = 1e-8;
        let mut t = 0.0;
        let mut out = Vec::new();
        for &target in times {
            while t < target - 1e-15 {
                let h_ = dt.min(target - t);
                let k1 = f(&rho);
                let k2 = f(&(rho + k1 * C64::new(h_ / 2.0, 0.0)));
                let k3 = f(&(rho + k2 * C64::new(h_ / 2.0, 0.0)));
                let k4 = f(&(rho + k3 * C64::new(h_, 0.0)));
                rho += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h_ / 6.0, 0.0);
                t += h_;
            }
            out.push(rho[(1, 1)].re);
        }
        out
    }

    #[test]
    fn two_level_decay_matches_master_equation() {
        let l = BasisLayout::spin_only();
        let omega = 2.0 * PI * 20e3;
        let gamma: f64 = 3e4;
        let mut h = HamiltonianModel::new("rabi", Frame::BareInteraction, &l);
        let lower = operator_from_symbol("proj:0:+1", 0, &l).unwrap();
        h.push(Term::new("x", lower.add(&lower.adjoint()).unwrap(), omega / 2.0)).unwrap();
        let c = CollapseSet::new(&l, vec![("decay".into(), lower.scale(C64::new(gamma.sqrt(), 0.0)))]).unwrap();
        let psi0 = StateVector::product(&l, bare(SpinLevel::Zero), bare(SpinLevel::Zero), &[]).unwrap();
        let times: Vec<f64> = (1..=8).map(|k| k as f64 * 1.5e-5).collect();
        let mut spec = PropagationSpec::new(0.0, 1.2e-4).with_samples(times.clone());
        spec.rel_tol = 1e-8;
        let p = operator_from_symbol("proj:+1:+1", 0, &l).unwrap();
        let r = mcwf_propagate(&h, &c, &psi0, &spec, 400, 17, |s| vec![s.expectation(&p).re]).unwrap();
        let oracle = lindblad_excited(omega, gamma, &times);
        for (k, want) in oracle.iter().enumerate() {
            let (m, e) = (r.mean[k][0], r.sem[k][0]);
            assert!((m - want).abs() < 3.0 * e + 1e-3, "t={}: {m} ± {e} vs {want}", times[k]);
        }
        // a re-run of one trajectory reproduces its jump record
        let one = run_trajectory(&h, &c, &psi0, &spec, r.trajectories[5].seed, &|s: &StateVector| vec![s.expectation(&p).re]).unwrap();
        assert_eq!(one, r.trajectories[5]);
    }

    #[test]
    fn layout_checks() {
        let l = BasisLayout::new(&[3]);
        let other = BasisLayout::new(&[4]);
        assert!(CollapseSet::heating(&other, 0, 1.0, 1.0).and_then(|c| CollapseSet::new(&l, vec![("x".into(), c.operators[0].clone())])).is_err());
    }
}
