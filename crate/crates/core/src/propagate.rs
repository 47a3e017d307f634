//! Schrödinger propagation of [`HamiltonianModel`]s, Bell-state gate
//! experiments and fidelity extraction.
//!
//! Three routes are available. Models whose time dependence is generated by
//! the diagonal motional Hamiltonian G, i.e. H(t) = e^{iGt} K(t) e^{−iGt}
//! with K piecewise constant, are solved exactly by exponentiating K + G on
//! each constant piece, either by eigendecomposition (few long pieces) or by
//! a truncated Taylor series of the propagator's action (many short pieces).
//! Everything else goes through adaptive Dormand-Prince.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{
    attach_noise, build_approx, build_exact, AmplitudeNoise, Envelope, HamiltonianModel, NoiseSet,
};
use crate::hilbert::{BasisLayout, DressedLevel, Operator, StateVector};
use crate::ion_physics::{couplings, gate_time, mode_spectrum, CouplingSet, SystemParams};
use crate::noise::{amplitude_noise, dephasing_traces, NoiseTrace};
use crate::ode::{Dopri5, StepControl, Tolerances};
use crate::C64;

pub use crate::hamiltonian::phase_flip_schedule;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Auto,
    Eigen,
    Taylor,
    RungeKutta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSpec {
    pub t_start: f64,
    pub t_end: f64,
    /// Upper bound on the Runge-Kutta step; `None` means 1/(50·f_max).
    pub max_step: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Times at which states are returned; the end time is used when empty.
    pub sample_times: Vec<f64>,
    pub method: Method,
    pub norm_tol: f64,
    /// Largest population allowed in the highest Fock level of any mode.
    pub truncation_tol: Option<f64>,
}

impl PropagationSpec {
    pub fn new(t_start: f64, t_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            max_step: None,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            sample_times: Vec::new(),
            method: Method::Auto,
            norm_tol: 1e-9,
            truncation_tol: Some(1e-6),
        }
    }

    pub fn with_samples(mut self, times: Vec<f64>) -> Self {
        self.sample_times = times;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn samples(&self) -> Vec<f64> {
        if self.sample_times.is_empty() {
            vec![self.t_end]
        } else {
            self.sample_times.clone()
        }
    }

    pub(crate) fn validate(&self, model: &HamiltonianModel) -> Result<f64> {
        if !(self.t_end >= self.t_start) {
            return Err(Error::InvalidParameter("propagation span must be non-negative".into()));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        for &t in &self.sample_times {
            if t < self.t_start || t > self.t_end {
                return Err(Error::InvalidParameter(format!("sample time {t} outside the span")));
            }
        }
        if self.sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("sample times must be sorted".into()));
        }
        let f_max = model.max_frequency() / (2.0 * PI);
        let limit = if f_max > 0.0 { 1.0 / (50.0 * f_max) } else { f64::INFINITY };
        match self.max_step {
            Some(h) if h > limit * (1.0 + 1e-12) => {
                Err(Error::InvalidParameter(format!("max_step {h:e} exceeds 1/(50 f_max) = {limit:e}")))
            }
            Some(h) if h <= 0.0 => Err(Error::InvalidParameter("max_step must be positive".into())),
            Some(h) => Ok(h),
            None => Ok(limit.min((self.t_end - self.t_start).max(1e-300))),
        }
    }
}

#[derive(Debug, Clone)]
enum GroupEnvelope {
    Constant,
    Rotating(f64),
    Trace(Arc<NoiseTrace>),
    Windows(Arc<Vec<(f64, f64)>>),
}

/// Terms with identical time dependence merged into one operator.
#[derive(Debug, Clone)]
pub(crate) struct Group {
    op: Operator,
    envelope: GroupEnvelope,
    drive_power: Option<i32>,
    norm1: f64,
}

/// A model prepared for repeated right-hand-side evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Compiled<'a> {
    model: &'a HamiltonianModel,
    groups: Vec<Group>,
    generator: Option<Vec<f64>>,
    dense: Option<Vec<DMatrix<C64>>>,
}

fn column_norm(op: &Operator) -> f64 {
    let mut cols = vec![0.0; op.dim()];
    for (_, c, v) in op.entries() {
        cols[c] += v.norm();
    }
    cols.into_iter().fold(0.0, f64::max)
}

impl<'a> Compiled<'a> {
    pub(crate) fn new(model: &'a HamiltonianModel) -> Result<Self> {
        let mut groups: Vec<Group> = Vec::new();
        for term in &model.terms {
            let power = term.drive.map(|d| d.power);
            let (env, scale) = match &term.envelope {
                Envelope::Constant => (GroupEnvelope::Constant, 1.0),
                Envelope::Rotating(w) => (GroupEnvelope::Rotating(*w), 1.0),
                Envelope::Trace { trace, scale } => (GroupEnvelope::Trace(trace.clone()), *scale),
                Envelope::Windows(w) => (GroupEnvelope::Windows(w.clone()), 1.0),
            };
            let op = term.operator.scale(term.coeff * scale);
            let slot = groups.iter_mut().find(|g| {
                g.drive_power == power
                    && match (&g.envelope, &env) {
                        (GroupEnvelope::Constant, GroupEnvelope::Constant) => true,
                        (GroupEnvelope::Rotating(a), GroupEnvelope::Rotating(b)) => a == b,
                        (GroupEnvelope::Trace(a), GroupEnvelope::Trace(b)) => Arc::ptr_eq(a, b),
                        (GroupEnvelope::Windows(a), GroupEnvelope::Windows(b)) => Arc::ptr_eq(a, b),
                        _ => false,
                    }
            });
            match slot {
                Some(g) => g.op = g.op.add(&op)?,
                None => groups.push(Group { op, envelope: env, drive_power: power, norm1: 0.0 }),
            }
        }
        for g in &mut groups {
            g.norm1 = column_norm(&g.op);
        }
        Ok(Self { model, groups, generator: model.rotating_generator.clone(), dense: None })
    }

    pub(crate) fn event_times(&self, spec: &PropagationSpec) -> (Vec<f64>, Vec<bool>) {
        event_times(self.model, spec)
    }

    /// Add a time-independent (possibly non-Hermitian) operator.
    pub(crate) fn add_constant(&mut self, op: Operator) -> Result<()> {
        match self.groups.iter_mut().find(|g| matches!(g.envelope, GroupEnvelope::Constant) && g.drive_power.is_none()) {
            Some(g) => g.op = g.op.add(&op)?,
            None => self.groups.push(Group { op, envelope: GroupEnvelope::Constant, drive_power: None, norm1: 0.0 }),
        }
        for g in &mut self.groups {
            g.norm1 = column_norm(&g.op);
        }
        self.dense = None;
        Ok(())
    }

    fn drive(&self, g: &Group, t: f64) -> Result<f64> {
        match g.drive_power {
            Some(p) => self.model.drive_factor(&crate::hamiltonian::DriveTag { power: p, nominal: 0.0 }, t),
            None => Ok(1.0),
        }
    }

    /// Coefficient of group `g` at time t; `frozen` drops the rotating phase.
    fn coefficient(&self, g: &Group, t: f64, frozen: bool) -> Result<C64> {
        let env = match &g.envelope {
            GroupEnvelope::Constant => C64::new(1.0, 0.0),
            GroupEnvelope::Rotating(w) => {
                if frozen {
                    C64::new(1.0, 0.0)
                } else {
                    C64::from_polar(1.0, w * t)
                }
            }
            GroupEnvelope::Trace(tr) => C64::new(tr.value_at(t)?, 0.0),
            GroupEnvelope::Windows(w) => C64::new(crate::hamiltonian::window_value(w, t), 0.0),
        };
        Ok(env * self.drive(g, t)?)
    }

    /// dy = −i·H(t)·y with the piecewise-constant factors `frozen` of the
    /// current segment (from [`Compiled::frozen_coefficients`]).
    pub(crate) fn rhs(&self, frozen: &[C64], t: f64, y: &[C64], dy: &mut [C64]) {
        dy.iter_mut().for_each(|v| *v = ZERO);
        for (g, c) in self.groups.iter().zip(frozen) {
            if *c == ZERO {
                continue;
            }
            let c = match g.envelope {
                GroupEnvelope::Rotating(w) => c * C64::from_polar(1.0, w * t),
                _ => *c,
            };
            g.op.apply_add(C64::new(0.0, -1.0) * c, y, dy);
        }
    }

    /// Whether H(t) = e^{iGt} K(t) e^{−iGt} with K piecewise constant.
    fn frame_compatible(&self) -> bool {
        let g = self.generator.as_deref();
        for grp in &self.groups {
            let w = match grp.envelope {
                GroupEnvelope::Rotating(w) => w,
                _ => 0.0,
            };
            if w != 0.0 && g.is_none() {
                return false;
            }
            if let Some(g) = g {
                let scale = g.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                for (r, c, _) in grp.op.entries() {
                    if (g[r] - g[c] - w).abs() > 1e-9 * scale {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub(crate) fn frozen_coefficients(&self, t: f64) -> Result<Vec<C64>> {
        self.groups.iter().map(|g| self.coefficient(g, t, true)).collect()
    }

    fn frozen_dense(&mut self, coeffs: &[C64]) -> DMatrix<C64> {
        if self.dense.is_none() {
            self.dense = Some(self.groups.iter().map(|g| g.op.to_dense()).collect());
        }
        let mats = self.dense.as_ref().unwrap();
        let n = self.model.layout().total_dim();
        let mut k = DMatrix::from_element(n, n, ZERO);
        for (m, c) in mats.iter().zip(coeffs) {
            if *c != ZERO {
                k += m * *c;
            }
        }
        if let Some(g) = &self.generator {
            for i in 0..n {
                k[(i, i)] += C64::new(g[i], 0.0);
            }
        }
        k
    }

    fn norm_bound(&self, coeffs: &[C64]) -> f64 {
        let gmax = self.generator.as_ref().map(|g| g.iter().fold(0.0f64, |a, b| a.max(b.abs()))).unwrap_or(0.0);
        self.groups.iter().zip(coeffs).map(|(g, c)| g.norm1 * c.norm()).sum::<f64>() + gmax
    }

    fn apply_frozen(&self, coeffs: &[C64], x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for (g, c) in self.groups.iter().zip(coeffs) {
            if *c != ZERO {
                g.op.apply_add(*c, x, y);
            }
        }
        if let Some(g) = &self.generator {
            for i in 0..x.len() {
                y[i] += x[i] * g[i];
            }
        }
    }
}

/// Event times: sorted union of breakpoints, samples and the end point.
fn event_times(model: &HamiltonianModel, spec: &PropagationSpec) -> (Vec<f64>, Vec<bool>) {
    let samples = spec.samples();
    let mut ev: Vec<(f64, bool)> = model.breakpoints(spec.t_start, spec.t_end).into_iter().map(|t| (t, false)).collect();
    ev.extend(samples.iter().map(|&t| (t, true)));
    ev.push((spec.t_end, false));
    ev.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
    let mut times = Vec::new();
    let mut is_sample = Vec::new();
    for (t, s) in ev {
        // a time can be sampled several times (duplicate sample times)
        if let Some(&last) = times.last() {
            if t == last && !s {
                continue;
            }
        }
        times.push(t);
        is_sample.push(s);
    }
    (times, is_sample)
}

fn choose_method(c: &Compiled, model: &HamiltonianModel, spec: &PropagationSpec) -> Method {
    if spec.method != Method::Auto {
        return spec.method;
    }
    if !c.frame_compatible() {
        return Method::RungeKutta;
    }
    let dim = model.layout().total_dim();
    let pieces = model.breakpoints(spec.t_start, spec.t_end).len() + 1;
    if pieces <= 64 && dim <= 1024 {
        return Method::Eigen;
    }
    let coeffs = c.frozen_coefficients(spec.t_start).unwrap_or_default();
    let work = c.norm_bound(&coeffs) * (spec.t_end - spec.t_start);
    if work < 1e6 {
        Method::Taylor
    } else if dim <= 1024 {
        Method::Eigen
    } else {
        Method::RungeKutta
    }
}

/// Propagate `psi0` under `model` and return the states at the sample times.
pub fn propagate(model: &HamiltonianModel, psi0: &StateVector, spec: &PropagationSpec) -> Result<Vec<StateVector>> {
    if psi0.layout().fock_cutoffs != model.layout().fock_cutoffs {
        return Err(Error::LayoutMismatch("initial state and model use different layouts".into()));
    }
    let n0 = psi0.norm_sqr();
    if (n0 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("initial state norm² is {n0}")));
    }
    let max_step = spec.validate(model)?;
    model.check_window(spec.t_start, spec.t_end)?;
    let mut compiled = Compiled::new(model)?;
    let method = choose_method(&compiled, model, spec);
    if matches!(method, Method::Eigen | Method::Taylor) && !compiled.frame_compatible() {
        return Err(Error::InvalidParameter(
            "model time dependence is not generated by the motional frame; use Runge-Kutta".into(),
        ));
    }
    log::debug!("propagating `{}` (dim {}) with {:?}", model.label, psi0.layout().total_dim(), method);
    let out = match method {
        Method::Eigen | Method::Taylor => exponential_route(&mut compiled, psi0, spec, method == Method::Eigen)?,
        _ => rk_route(&compiled, psi0, spec, max_step)?,
    };
    for psi in &out {
        let drift = (psi.norm_sqr() - 1.0).abs();
        if drift > spec.norm_tol {
            return Err(Error::NormDrift { drift, tol: spec.norm_tol });
        }
        if let Some(tol) = spec.truncation_tol {
            psi.check_truncation(tol)?;
        }
    }
    Ok(out)
}

fn exponential_route(c: &mut Compiled, psi0: &StateVector, spec: &PropagationSpec, eigen: bool) -> Result<Vec<StateVector>> {
    let (times, is_sample) = event_times(c.model, spec);
    let layout = psi0.layout().clone();
    let n = layout.total_dim();
    let gen = c.generator.clone();
    let rotate = |v: &mut [C64], t: f64| {
        if let Some(g) = &gen {
            for (x, gi) in v.iter_mut().zip(g) {
                *x *= C64::from_polar(1.0, gi * t);
            }
        }
    };
    let mut phi: Vec<C64> = psi0.amplitudes.iter().cloned().collect();
    rotate(&mut phi, -spec.t_start);
    let mut out = Vec::new();
    let mut t = spec.t_start;
    let mut cache: Option<(Vec<C64>, HermitianEigen)> = None;
    let mut scratch = vec![ZERO; n];
    let mut term = vec![ZERO; n];
    for (&te, &sample) in times.iter().zip(&is_sample) {
        if te > t {
            let coeffs = c.frozen_coefficients(0.5 * (t + te))?;
            let h = te - t;
            if eigen {
                let fresh = match &cache {
                    Some((k, _)) => k != &coeffs,
                    None => true,
                };
                if fresh {
                    let k = c.frozen_dense(&coeffs);
                    cache = Some((coeffs.clone(), HermitianEigen::new(&k)?));
                }
                cache.as_ref().unwrap().1.evolve(h, &mut phi);
            } else {
                taylor_step(c, &coeffs, h, &mut phi, &mut scratch, &mut term);
            }
            t = te;
        }
        if sample {
            let mut psi = phi.clone();
            rotate(&mut psi, t);
            out.push(StateVector::new(&layout, DVector::from_vec(psi))?);
        }
    }
    Ok(out)
}

/// Eigendecomposition of a Hermitian generator. nalgebra's symmetric solver
/// returns wrong eigenvectors on some block-degenerate spectra, so this goes
/// through faer.
struct HermitianEigen {
    vectors: DMatrix<C64>,
    values: Vec<f64>,
}

impl HermitianEigen {
    fn new(h: &DMatrix<C64>) -> Result<Self> {
        let n = h.nrows();
        let m = faer::Mat::<C64>::from_fn(n, n, |i, j| h[(i, j)]);
        let eig = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::InvalidParameter(format!("eigendecomposition failed: {e:?}")))?;
        let u = eig.U();
        let s = eig.S();
        Ok(Self {
            vectors: DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
            values: (0..n).map(|k| s[k].re).collect(),
        })
    }

    /// x ← exp(−iHh)·x
    fn evolve(&self, h: f64, x: &mut [C64]) {
        let v = DVector::from_column_slice(x);
        let mut y = self.vectors.ad_mul(&v);
        for (yi, e) in y.iter_mut().zip(&self.values) {
            *yi *= C64::from_polar(1.0, -e * h);
        }
        x.copy_from_slice((&self.vectors * y).as_slice());
    }
}

/// φ ← exp(−i·A·h)·φ by substepped Taylor series, A = K + G.
fn taylor_step(c: &Compiled, coeffs: &[C64], h: f64, phi: &mut [C64], acc: &mut [C64], term: &mut [C64]) {
    let norm = c.norm_bound(coeffs) * h;
    let substeps = (norm / 0.5).ceil().max(1.0) as usize;
    let dt = h / substeps as f64;
    let mut next = vec![ZERO; phi.len()];
    for _ in 0..substeps {
        acc.copy_from_slice(phi);
        term.copy_from_slice(phi);
        for k in 1..=40 {
            c.apply_frozen(coeffs, term, &mut next);
            let f = C64::new(0.0, -dt / k as f64);
            let mut size = 0.0f64;
            for (tv, nv) in term.iter_mut().zip(&next) {
                *tv = nv * f;
                size = size.max(tv.norm());
            }
            for (a, tv) in acc.iter_mut().zip(term.iter()) {
                *a += tv;
            }
            if size < 1e-17 {
                break;
            }
        }
        phi.copy_from_slice(acc);
    }
}

fn rk_route(c: &Compiled, psi0: &StateVector, spec: &PropagationSpec, max_step: f64) -> Result<Vec<StateVector>> {
    let (times, is_sample) = event_times(c.model, spec);
    let layout = psi0.layout().clone();
    let mut y: Vec<C64> = psi0.amplitudes.iter().cloned().collect();
    let tol = Tolerances { rel: spec.rel_tol, abs: spec.abs_tol, max_step };
    let mut ig = Dopri5::new(y.len(), tol);
    let mut t = spec.t_start;
    let mut out = Vec::new();
    for (&te, &sample) in times.iter().zip(&is_sample) {
        if te > t {
            let frozen = c.frozen_coefficients(0.5 * (t + te))?;
            let mut f = |t: f64, y: &[C64], dy: &mut [C64]| c.rhs(&frozen, t, y, dy);
            ig.reset();
            ig.integrate(&mut f, t, te, &mut y, &mut |_, _, _| StepControl::Accept)?;
            t = te;
        }
        if sample {
            out.push(StateVector::new(&layout, DVector::from_vec(y.clone()))?);
        }
    }
    Ok(out)
}

/// Two-ion spin state (|0′⟩ + |D⟩)⊗(|0′⟩ + |D⟩)/2, with the |DD⟩ sign set by `sign`.
pub fn bell_spin_state(sign: f64) -> [C64; 16] {
    let zp = DressedLevel::ZeroPrime.bare_vector();
    let dk = DressedLevel::Dark.bare_vector();
    let mut s = [ZERO; 16];
    for a in 0..4 {
        for b in 0..4 {
            s[4 * a + b] = (zp[a] * zp[b] + zp[a] * dk[b] + dk[a] * zp[b] + dk[a] * dk[b] * sign) * 0.5;
        }
    }
    s
}

/// Initial gate state.
pub fn initial_state() -> [C64; 16] {
    bell_spin_state(1.0)
}

/// Target state after a perfect gate.
pub fn target_state() -> [C64; 16] {
    bell_spin_state(-1.0)
}

fn two_ion(a: DressedLevel, b: DressedLevel) -> DVector<C64> {
    let va = a.bare_vector();
    let vb = b.bare_vector();
    DVector::from_fn(16, |i, _| va[i / 4] * vb[i % 4])
}

fn overlap(rho: &DMatrix<C64>, v: &DVector<C64>) -> f64 {
    (v.adjoint() * rho * v)[(0, 0)].re
}

/// Spin observables of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinObservables {
    pub fidelity: f64,
    pub leakage: f64,
    pub p_dd: f64,
    pub p_ud_du: f64,
}

pub fn spin_observables(psi: &StateVector) -> SpinObservables {
    let mut rho = psi.reduced_spin_density();
    let tr = rho.trace().re;
    if tr > 0.0 {
        rho /= C64::new(tr, 0.0);
    }
    let target = DVector::from_column_slice(&target_state());
    use DressedLevel::*;
    let computational: f64 = [ZeroPrime, Dark]
        .iter()
        .flat_map(|&a| [ZeroPrime, Dark].map(move |b| (a, b)))
        .map(|(a, b)| overlap(&rho, &two_ion(a, b)))
        .sum();
    SpinObservables {
        fidelity: overlap(&rho, &target).clamp(0.0, 1.0),
        leakage: (1.0 - computational).max(0.0),
        p_dd: overlap(&rho, &two_ion(Dark, Dark)),
        p_ud_du: overlap(&rho, &two_ion(Up, Down)) + overlap(&rho, &two_ion(Down, Up)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub bell_fidelity: f64,
    pub infidelity: f64,
    pub gate_time: f64,
    pub leakage: f64,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Full model with the given Fock cutoffs (one entry per simulated mode).
    Exact { fock_cutoffs: Vec<usize> },
    /// Effective spin-only model.
    Approx,
}

/// Noise sources for a gate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub t2: Option<f64>,
    /// Relative drive-amplitude fluctuation δΩ/Ω.
    pub amplitude_rel: Option<f64>,
    pub amplitude_tau_c: f64,
    pub independent_ions: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { t2: None, amplitude_rel: None, amplitude_tau_c: 0.5e-3, independent_ions: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellConfig {
    pub params: SystemParams,
    pub model: ModelKind,
    pub gate_time: Option<f64>,
    pub phase_flip: bool,
    pub noise: NoiseSpec,
    pub initial_fock: Vec<usize>,
    pub seed: u64,
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub truncation_tol: Option<f64>,
    pub config_hash: String,
}

impl BellConfig {
    pub fn new(params: SystemParams, model: ModelKind) -> Self {
        Self {
            params,
            model,
            gate_time: None,
            phase_flip: false,
            noise: NoiseSpec::default(),
            initial_fock: Vec::new(),
            seed: 0,
            method: Method::Auto,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            truncation_tol: Some(1e-6),
            config_hash: String::new(),
        }
    }

    pub fn layout(&self) -> BasisLayout {
        match &self.model {
            ModelKind::Exact { fock_cutoffs } => BasisLayout::new(fock_cutoffs),
            ModelKind::Approx => BasisLayout::spin_only(),
        }
    }

    /// Couplings, with the sideband sums restricted to the simulated modes.
    pub fn couplings(&self) -> Result<CouplingSet> {
        let modes = mode_spectrum(&self.params)?;
        let c = couplings(&self.params, &modes)?;
        Ok(match &self.model {
            ModelKind::Exact { fock_cutoffs } => c.restricted(fock_cutoffs.len()),
            ModelKind::Approx => c,
        })
    }

    pub fn resolved_gate_time(&self) -> Result<f64> {
        match self.gate_time {
            Some(t) => Ok(t),
            None => gate_time(&self.couplings()?),
        }
    }

    /// Noise-free model including the optional phase flip.
    pub fn build_model(&self) -> Result<HamiltonianModel> {
        let layout = self.layout();
        let c = self.couplings()?;
        let model = match &self.model {
            ModelKind::Exact { .. } => build_exact(&self.params, &mode_spectrum(&self.params)?, &c, &layout)?,
            ModelKind::Approx => build_approx(&self.params, &c, &layout)?,
        };
        if self.phase_flip {
            phase_flip_schedule(&model, self.resolved_gate_time()?)
        } else {
            Ok(model)
        }
    }

    /// Noise traces for this configuration's seed, covering [0, span].
    pub fn noise_set(&self, span: f64) -> Result<NoiseSet> {
        let mut set = NoiseSet::default();
        if let Some(t2) = self.noise.t2 {
            set.dephasing = Some(dephasing_traces(
                &self.params,
                t2,
                self.params.b0,
                span,
                crate::noise::derive_seed(self.seed, 0),
                self.noise.independent_ions,
            )?);
        }
        if let Some(rel) = self.noise.amplitude_rel {
            let AmplitudeNoise { trace, reference } = amplitude_noise(
                self.params.drive(),
                rel,
                self.noise.amplitude_tau_c,
                span,
                crate::noise::derive_seed(self.seed, 1),
            )?;
            set.amplitude = Some(AmplitudeNoise { trace, reference });
        }
        Ok(set)
    }

    pub fn initial(&self, layout: &BasisLayout) -> Result<StateVector> {
        let fock = if self.initial_fock.is_empty() { vec![0; layout.n_modes()] } else { self.initial_fock.clone() };
        StateVector::from_spin_state(layout, &initial_state(), &fock)
    }
}

/// Run the gate from the product initial state and report the Bell fidelity at the gate time.
pub fn bell_experiment(cfg: &BellConfig) -> Result<FidelityReport> {
    let start = Instant::now();
    let tau = cfg.resolved_gate_time()?;
    let base = cfg.build_model()?;
    let noise = cfg.noise_set(tau)?;
    let model = attach_noise(&base, &noise)?;
    let layout = cfg.layout();
    let psi0 = cfg.initial(&layout)?;
    let mut spec = PropagationSpec::new(0.0, tau);
    spec.method = cfg.method;
    spec.rel_tol = cfg.rel_tol;
    spec.abs_tol = cfg.abs_tol;
    spec.truncation_tol = cfg.truncation_tol;
    let psi = propagate(&model, &psi0, &spec)?.pop().expect("one sample");
    let obs = spin_observables(&psi);
    Ok(FidelityReport {
        bell_fidelity: obs.fidelity,
        infidelity: 1.0 - obs.fidelity,
        gate_time: tau,
        leakage: obs.leakage,
        seed: cfg.seed,
        config_hash: cfg.config_hash.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub fidelity: f64,
    pub leakage: f64,
    pub p_dd: f64,
    pub p_ud_du: f64,
}

/// Spin observables of a noise-free gate run at each requested time.
pub fn fidelity_series(cfg: &BellConfig, times: &[f64]) -> Result<(Vec<SeriesPoint>, Vec<StateVector>)> {
    let model = cfg.build_model()?;
    let t_end = times.iter().cloned().fold(0.0, f64::max);
    let noise = cfg.noise_set(t_end)?;
    let model = attach_noise(&model, &noise)?;
    let layout = cfg.layout();
    let psi0 = cfg.initial(&layout)?;
    let mut spec = PropagationSpec::new(0.0, t_end).with_samples(times.to_vec());
    spec.method = cfg.method;
    spec.rel_tol = cfg.rel_tol;
    spec.abs_tol = cfg.abs_tol;
    spec.truncation_tol = cfg.truncation_tol;
    let states = propagate(&model, &psi0, &spec)?;
    let pts = times
        .iter()
        .zip(&states)
        .map(|(&t, s)| {
            let o = spin_observables(s);
            SeriesPoint { t, fidelity: o.fidelity, leakage: o.leakage, p_dd: o.p_dd, p_ud_du: o.p_ud_du }
        })
        .collect();
    Ok((pts, states))
}
