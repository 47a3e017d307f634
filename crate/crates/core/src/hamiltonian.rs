//! Hamiltonian models as sums of static operators times scalar envelopes,
//! all in the interaction picture of the static Zeeman Hamiltonian.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{spin_matrix, BasisLayout, DressedLevel, Level, Operator, OperatorKind, SpinLevel, N_IONS};
use crate::ion_physics::{CouplingSet, ModeSpectrum, SystemParams};
use crate::noise::NoiseTrace;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    BareInteraction,
    DressedInteraction,
    ShiftInteraction,
}

/// Scalar time dependence of a term.
#[derive(Debug, Clone)]
pub enum Envelope {
    Constant,
    /// exp(i·ω·t)
    Rotating(f64),
    /// `scale · x(t)` with zero-order hold on the trace grid.
    Trace { trace: Arc<NoiseTrace>, scale: f64 },
    /// 1 inside any of the half-open windows [start, end), 0 elsewhere.
    Windows(Arc<Vec<(f64, f64)>>),
}

impl Envelope {
    pub fn windows(w: Vec<(f64, f64)>) -> Self {
        Envelope::Windows(Arc::new(w))
    }
}

pub(crate) fn window_value(w: &[(f64, f64)], t: f64) -> f64 {
    if w.iter().any(|&(a, b)| t >= a && t < b) {
        1.0
    } else {
        0.0
    }
}

/// Marks a term whose strength is proportional to the drive amplitude to the given power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveTag {
    pub power: i32,
    /// Drive strength the term was built with.
    pub nominal: f64,
}

#[derive(Debug, Clone)]
pub struct Term {
    pub label: String,
    pub operator: Operator,
    pub coeff: C64,
    pub envelope: Envelope,
    pub drive: Option<DriveTag>,
}

impl Term {
    pub fn new(label: impl Into<String>, operator: Operator, coeff: f64) -> Self {
        Self { label: label.into(), operator, coeff: C64::new(coeff, 0.0), envelope: Envelope::Constant, drive: None }
    }

    pub fn rotating(mut self, freq: f64) -> Self {
        self.envelope = Envelope::Rotating(freq);
        self
    }

    pub fn driven(mut self, power: i32, nominal: f64) -> Self {
        self.drive = Some(DriveTag { power, nominal });
        self
    }

    pub fn is_time_dependent(&self) -> bool {
        !matches!(self.envelope, Envelope::Constant)
    }
}

/// Common drive-amplitude fluctuation δΩ(t) relative to a reference drive.
#[derive(Debug, Clone)]
pub struct AmplitudeNoise {
    pub trace: Arc<NoiseTrace>,
    pub reference: f64,
}

#[derive(Debug, Clone)]
pub struct HamiltonianModel {
    pub label: String,
    pub frame: Frame,
    layout: BasisLayout,
    pub terms: Vec<Term>,
    /// Diagonal of Σ ν_n a†a; every rotating envelope is generated by it.
    pub rotating_generator: Option<Vec<f64>>,
    pub amplitude_noise: Option<AmplitudeNoise>,
    pub flip_time: Option<f64>,
}

impl HamiltonianModel {
    pub fn new(label: impl Into<String>, frame: Frame, layout: &BasisLayout) -> Self {
        Self {
            label: label.into(),
            frame,
            layout: layout.clone(),
            terms: Vec::new(),
            rotating_generator: None,
            amplitude_noise: None,
            flip_time: None,
        }
    }

    pub fn layout(&self) -> &BasisLayout {
        &self.layout
    }

    pub fn push(&mut self, term: Term) -> Result<()> {
        if term.operator.layout().fock_cutoffs != self.layout.fock_cutoffs {
            return Err(Error::LayoutMismatch(format!("term `{}` built on a different layout", term.label)));
        }
        self.terms.push(term);
        Ok(())
    }

    /// Add a static term.
    pub fn add_static(&mut self, label: &str, operator: Operator, coeff: f64) -> Result<()> {
        self.push(Term::new(label, operator, coeff))
    }

    pub fn has_drive_terms(&self) -> bool {
        self.terms.iter().any(|t| t.drive.is_some())
    }

    /// Multiplier applied to a drive-tagged term at time t.
    pub fn drive_factor(&self, tag: &DriveTag, t: f64) -> Result<f64> {
        let mut f = 1.0;
        if let Some(an) = &self.amplitude_noise {
            if an.reference > 0.0 {
                f *= (1.0 + an.trace.value_at(t)? / an.reference).powi(tag.power);
            }
        }
        if let Some(tf) = self.flip_time {
            if t >= tf && tag.power % 2 != 0 {
                f = -f;
            }
        }
        Ok(f)
    }

    /// Scalar multiplying term `k`'s operator at time t.
    pub fn coefficient(&self, k: usize, t: f64) -> Result<C64> {
        let term = &self.terms[k];
        let env = match &term.envelope {
            Envelope::Constant => C64::new(1.0, 0.0),
            Envelope::Rotating(w) => C64::from_polar(1.0, w * t),
            Envelope::Trace { trace, scale } => C64::new(scale * trace.value_at(t)?, 0.0),
            Envelope::Windows(w) => C64::new(window_value(w, t), 0.0),
        };
        let drive = match &term.drive {
            Some(tag) => self.drive_factor(tag, t)?,
            None => 1.0,
        };
        Ok(term.coeff * env * drive)
    }

    /// Full operator H(t).
    pub fn operator_at(&self, t: f64) -> Result<Operator> {
        let mut h = Operator::zeros(&self.layout);
        for (k, term) in self.terms.iter().enumerate() {
            h = h.add(&term.operator.scale(self.coefficient(k, t)?))?;
        }
        Ok(h)
    }

    pub fn hermiticity_residual(&self, t: f64) -> Result<f64> {
        Ok(self.operator_at(t)?.hermiticity_residual())
    }

    /// Largest angular frequency appearing in any envelope.
    pub fn max_frequency(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match t.envelope {
                Envelope::Rotating(w) => w.abs(),
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }

    /// Times in (t0, t1) where some coefficient jumps.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        if let Some(tf) = self.flip_time {
            if tf > t0 && tf < t1 {
                pts.push(tf);
            }
        }
        for term in &self.terms {
            if let Envelope::Windows(w) = &term.envelope {
                for &(a, b) in w.iter() {
                    pts.extend([a, b].into_iter().filter(|&t| t > t0 && t < t1));
                }
            }
        }
        let mut grids: Vec<&NoiseTrace> = self
            .terms
            .iter()
            .filter_map(|t| match &t.envelope {
                Envelope::Trace { trace, .. } => Some(trace.as_ref()),
                _ => None,
            })
            .collect();
        if let Some(an) = &self.amplitude_noise {
            grids.push(an.trace.as_ref());
        }
        let mut seen: Vec<(f64, f64)> = Vec::new();
        for g in grids {
            if seen.iter().any(|&(a, b)| a == g.t0 && b == g.dt) {
                continue;
            }
            seen.push((g.t0, g.dt));
            let k0 = ((t0 - g.t0) / g.dt).floor().max(0.0) as usize + 1;
            let mut k = k0;
            loop {
                let t = g.t0 + k as f64 * g.dt;
                if t >= t1 {
                    break;
                }
                if t > t0 {
                    pts.push(t);
                }
                k += 1;
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1e-300));
        pts
    }

    /// Fail unless every noise trace covers [t0, t1].
    pub fn check_window(&self, t0: f64, t1: f64) -> Result<()> {
        let check = |tr: &NoiseTrace| {
            for t in [t0, t1] {
                tr.value_at(t)?;
            }
            Ok::<(), Error>(())
        };
        for term in &self.terms {
            if let Envelope::Trace { trace, .. } = &term.envelope {
                check(trace)?;
            }
        }
        if let Some(an) = &self.amplitude_noise {
            check(&an.trace)?;
        }
        Ok(())
    }
}

fn local(kind: OperatorKind) -> nalgebra::DMatrix<C64> {
    spin_matrix(kind).expect("spin operator kind")
}

fn proj(a: DressedLevel, b: DressedLevel) -> nalgebra::DMatrix<C64> {
    local(OperatorKind::Projector(Level::Dressed(a), Level::Dressed(b)))
}

/// −2·Z⊗Z with Z = |+1⟩⟨+1| − |−1⟩⟨−1| on the two ions.
fn spin_spin(layout: &BasisLayout) -> Operator {
    let plus = local(OperatorKind::Projector(Level::Bare(SpinLevel::Plus), Level::Bare(SpinLevel::Plus)));
    let minus = local(OperatorKind::Projector(Level::Bare(SpinLevel::Minus), Level::Bare(SpinLevel::Minus)));
    let z = plus - minus;
    Operator::embed(layout, &[(0, z.clone()), (1, z)])
}

/// σ₊⁺ + σ₊⁻ + h.c. on one ion.
pub(crate) fn carrier(layout: &BasisLayout, ion: usize) -> Operator {
    let up = local(OperatorKind::Raise(SpinLevel::Plus)) + local(OperatorKind::Raise(SpinLevel::Minus));
    let x = &up + up.adjoint();
    Operator::embed(layout, &[(ion, x)])
}

/// (σ₊⁺ − σ₊⁻) − h.c. on one ion.
fn sideband_spin() -> nalgebra::DMatrix<C64> {
    let a = local(OperatorKind::Raise(SpinLevel::Plus)) - local(OperatorKind::Raise(SpinLevel::Minus));
    &a - a.adjoint()
}

/// S₊⁽¹⁾S₋⁽²⁾ + S₋⁽¹⁾S₊⁽²⁾
fn exchange(layout: &BasisLayout) -> Operator {
    let sp = local(OperatorKind::DressedRaise);
    let sm = local(OperatorKind::DressedLower);
    Operator::embed(layout, &[(0, sp.clone()), (1, sm.clone())])
        .add(&Operator::embed(layout, &[(0, sm), (1, sp)]))
        .expect("same layout")
}

/// S₊S₋ + S₋S₊ = 2|D⟩⟨D| + |u⟩⟨u| + |d⟩⟨d| on one ion.
fn single_shift(layout: &BasisLayout, ion: usize) -> Operator {
    let m = proj(DressedLevel::Dark, DressedLevel::Dark) * C64::new(2.0, 0.0)
        + proj(DressedLevel::Up, DressedLevel::Up)
        + proj(DressedLevel::Down, DressedLevel::Down);
    Operator::embed(layout, &[(ion, m)])
}

/// |uu⟩⟨DD| + |DD⟩⟨dd| + h.c.
fn pair_flip(layout: &BasisLayout) -> Operator {
    use DressedLevel::*;
    let a = Operator::embed(layout, &[(0, proj(Up, Dark)), (1, proj(Up, Dark))]);
    let b = Operator::embed(layout, &[(0, proj(Dark, Down)), (1, proj(Dark, Down))]);
    let s = a.add(&b).expect("same layout");
    s.add(&s.adjoint()).expect("same layout")
}

fn dressed_z(layout: &BasisLayout, ion: usize) -> Operator {
    Operator::embed(layout, &[(ion, local(OperatorKind::DressedZ))])
}

fn motional_generator(layout: &BasisLayout, modes: &[f64]) -> Vec<f64> {
    let dims = layout.slot_dims();
    let n = layout.total_dim();
    let mut g = vec![0.0; n];
    for (i, gi) in g.iter_mut().enumerate() {
        let mut rem = i;
        for slot in (N_IONS..dims.len()).rev() {
            let occ = rem % dims[slot];
            rem /= dims[slot];
            *gi += modes[slot - N_IONS] * occ as f64;
        }
    }
    g
}

/// Static J-coupling, carrier drives and first-order sideband terms.
pub fn build_exact(
    params: &SystemParams,
    modes: &ModeSpectrum,
    c: &CouplingSet,
    layout: &BasisLayout,
) -> Result<HamiltonianModel> {
    let n_modes = layout.n_modes();
    if n_modes == 0 || n_modes > modes.frequencies.len() {
        return Err(Error::InvalidParameter(format!(
            "exact model needs 1 or 2 motional modes, layout has {n_modes}"
        )));
    }
    let mut m = HamiltonianModel::new("exact", Frame::BareInteraction, layout);
    m.add_static("spin-spin", spin_spin(layout), -2.0 * c.j0)?;
    for ion in 0..N_IONS {
        let om = params.drive_rabi[ion];
        m.push(Term::new(format!("carrier[{ion}]"), carrier(layout, ion), om / 2.0).driven(1, om))?;
    }
    let y = sideband_spin();
    for ion in 0..N_IONS {
        let om = params.drive_rabi[ion];
        for n in 0..n_modes {
            let eps = c.epsilon[ion][n];
            if eps == 0.0 {
                continue;
            }
            let nu = modes.frequencies[n];
            let nmax = layout.fock_cutoffs[n];
            let ad = crate::hilbert::mode_matrix(OperatorKind::Create, nmax).unwrap();
            let a = crate::hilbert::mode_matrix(OperatorKind::Annihilate, nmax).unwrap();
            let up = Operator::embed(layout, &[(ion, y.clone()), (N_IONS + n, ad)]);
            let down = Operator::embed(layout, &[(ion, y.clone()), (N_IONS + n, a)]);
            let amp = eps * om / 2.0;
            m.push(Term::new(format!("sideband+[{ion},{n}]"), up, amp).rotating(nu).driven(1, om))?;
            m.push(Term::new(format!("sideband-[{ion},{n}]"), down, -amp).rotating(-nu).driven(1, om))?;
        }
    }
    m.rotating_generator = Some(motional_generator(layout, &modes.frequencies[..n_modes]));
    Ok(m)
}

/// Time-independent effective gate Hamiltonian with off-resonant J-coupling
/// terms and the dressing splitting.
pub fn build_approx(params: &SystemParams, c: &CouplingSet, layout: &BasisLayout) -> Result<HamiltonianModel> {
    let mut m = HamiltonianModel::new("approx", Frame::BareInteraction, layout);
    let reference = params.drive();
    let ex = exchange(layout);
    m.add_static("gate-static", ex.clone(), -c.j0)?;
    m.push(Term::new("gate-induced", ex, -c.j_eff).driven(2, reference))?;
    for ion in 0..N_IONS {
        m.push(Term::new(format!("single[{ion}]"), single_shift(layout, ion), -c.shift[ion]).driven(2, params.drive_rabi[ion]))?;
    }
    m.add_static("pair-flip", pair_flip(layout), -c.j0)?;
    for ion in 0..N_IONS {
        let om = params.drive_rabi[ion];
        m.push(Term::new(format!("splitting[{ion}]"), dressed_z(layout, ion), om / SQRT_2).driven(1, om))?;
    }
    Ok(m)
}

/// Leading-order effective Hamiltonian of the sideband terms in the dressed
/// interaction picture, including the phonon-number dependent shift.
pub fn build_magnus_effective(
    params: &SystemParams,
    modes: &ModeSpectrum,
    c: &CouplingSet,
    layout: &BasisLayout,
) -> Result<HamiltonianModel> {
    let mut m = HamiltonianModel::new("magnus-effective", Frame::DressedInteraction, layout);
    let reference = params.drive();
    let n_sum = c.modes_included;
    let pair: f64 = (0..n_sum).map(|n| 2.0 * c.g1[0][1][n]).sum();
    m.push(Term::new("pair", exchange(layout), -pair).driven(2, reference))?;
    for ion in 0..N_IONS {
        let s: f64 = (0..n_sum).map(|n| c.g1[ion][ion][n]).sum();
        m.push(Term::new(format!("single[{ion}]"), single_shift(layout, ion), -s).driven(2, params.drive_rabi[ion]))?;
    }
    for n in 0..layout.n_modes().min(modes.frequencies.len()) {
        let num = crate::hilbert::mode_matrix(OperatorKind::Number, layout.fock_cutoffs[n]).unwrap();
        for ion in 0..N_IONS {
            let op = Operator::embed(layout, &[(ion, local(OperatorKind::DressedZ)), (N_IONS + n, num.clone())]);
            m.push(Term::new(format!("phonon-shift[{ion},{n}]"), op, -c.g2[ion][n]).driven(3, params.drive_rabi[ion]))?;
        }
    }
    Ok(m)
}

/// Magnetic dephasing traces: δω₊₁(t) per ion (one shared trace or one per
/// ion) with δω₋₁ and δω₀′ following from the field-sensitivity ratios.
#[derive(Debug, Clone)]
pub struct DephasingTraces {
    pub per_ion: Vec<Arc<NoiseTrace>>,
    pub ratio_m1: f64,
    pub ratio_0p: f64,
}

#[derive(Debug, Clone, Default)]
pub struct NoiseSet {
    pub dephasing: Option<DephasingTraces>,
    pub amplitude: Option<AmplitudeNoise>,
}

/// Add Σ_j Σ_m (δω_m/2)(|m⟩⟨m| − |0⟩⟨0|) and drive-amplitude fluctuations.
pub fn attach_noise(model: &HamiltonianModel, noise: &NoiseSet) -> Result<HamiltonianModel> {
    let mut m = model.clone();
    if let Some(d) = &noise.dephasing {
        if d.per_ion.is_empty() || d.per_ion.len() > N_IONS {
            return Err(Error::InvalidParameter("dephasing needs one shared trace or one per ion".into()));
        }
        for ion in 0..N_IONS {
            let trace = &d.per_ion[ion.min(d.per_ion.len() - 1)];
            if trace.is_zero() {
                continue;
            }
            for (level, ratio) in [(SpinLevel::Plus, 1.0), (SpinLevel::Minus, d.ratio_m1), (SpinLevel::ZeroPrime, d.ratio_0p)] {
                let op = Operator::embed(&m.layout, &[(ion, local(OperatorKind::BareZ(level)))]);
                m.push(Term {
                    label: format!("dephasing[{ion},{level:?}]"),
                    operator: op,
                    coeff: C64::new(1.0, 0.0),
                    envelope: Envelope::Trace { trace: trace.clone(), scale: ratio / 2.0 },
                    drive: None,
                })?;
            }
        }
    }
    if let Some(a) = &noise.amplitude {
        if !a.trace.is_zero() {
            if m.amplitude_noise.is_some() {
                return Err(Error::InvalidParameter("model already carries amplitude noise".into()));
            }
            m.amplitude_noise = Some(a.clone());
        }
    }
    Ok(m)
}

/// Flip the sign of the drive at τ/2: terms tagged with odd drive power change sign.
pub fn phase_flip_schedule(model: &HamiltonianModel, tau: f64) -> Result<HamiltonianModel> {
    if model.flip_time.is_some() {
        return Err(Error::FlipAlreadyApplied);
    }
    if !model.has_drive_terms() {
        return Err(Error::UntaggedDrive);
    }
    let mut m = model.clone();
    m.flip_time = Some(tau / 2.0);
    m.label = format!("{}+flip", m.label);
    Ok(m)
}
