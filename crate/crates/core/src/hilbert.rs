//! Composite Hilbert space of two four-level ions and truncated motional
//! modes: basis layout, embedded operators, state vectors and the per-ion
//! change of basis to the dressed states.
//!
//! Global ordering is ion 1 ⊗ ion 2 ⊗ mode 1 ⊗ mode 2 (slowest index
//! first). Each ion's levels are ordered |0⟩, |0′⟩, |−1⟩, |+1⟩.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

pub const SPIN_DIM: usize = 4;
pub const N_IONS: usize = 2;
/// Dimension at and above which operators are stored sparse.
pub const DEFAULT_DENSE_THRESHOLD: usize = 512;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinLevel {
    Zero = 0,
    ZeroPrime = 1,
    Minus = 2,
    Plus = 3,
}

/// Eigenstates of the continuous dressing drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DressedLevel {
    Up = 0,
    Down = 1,
    Dark = 2,
    ZeroPrime = 3,
}

impl DressedLevel {
    pub const ALL: [DressedLevel; 4] =
        [DressedLevel::Up, DressedLevel::Down, DressedLevel::Dark, DressedLevel::ZeroPrime];

    /// Components in the bare level order.
    pub fn bare_vector(self) -> [C64; 4] {
        let h = 0.5;
        let s = FRAC_1_SQRT_2;
        let v = match self {
            DressedLevel::Up => [s, 0.0, h, h],
            DressedLevel::Down => [-s, 0.0, h, h],
            DressedLevel::Dark => [0.0, 0.0, -s, s],
            DressedLevel::ZeroPrime => [0.0, 1.0, 0.0, 0.0],
        };
        v.map(|x| C64::new(x, 0.0))
    }
}

/// Either kind of single-ion level, for projectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Bare(SpinLevel),
    Dressed(DressedLevel),
}

impl Level {
    fn vector(self) -> [C64; 4] {
        match self {
            Level::Bare(b) => {
                let mut v = [ZERO; 4];
                v[b as usize] = ONE;
                v
            }
            Level::Dressed(d) => d.bare_vector(),
        }
    }

    fn parse(s: &str) -> Option<Level> {
        Some(match s {
            "0" => Level::Bare(SpinLevel::Zero),
            "0p" | "0'" => Level::Bare(SpinLevel::ZeroPrime),
            "-1" => Level::Bare(SpinLevel::Minus),
            "+1" => Level::Bare(SpinLevel::Plus),
            "u" => Level::Dressed(DressedLevel::Up),
            "d" => Level::Dressed(DressedLevel::Down),
            "D" => Level::Dressed(DressedLevel::Dark),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisLayout {
    /// Highest retained Fock level of each mode.
    pub fock_cutoffs: Vec<usize>,
    pub dense_threshold: usize,
}

impl BasisLayout {
    pub fn new(fock_cutoffs: &[usize]) -> Self {
        Self { fock_cutoffs: fock_cutoffs.to_vec(), dense_threshold: DEFAULT_DENSE_THRESHOLD }
    }

    pub fn spin_only() -> Self {
        Self::new(&[])
    }

    pub fn with_dense_threshold(mut self, threshold: usize) -> Self {
        self.dense_threshold = threshold;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.fock_cutoffs.len()
    }

    pub fn fock_dim(&self, mode: usize) -> usize {
        self.fock_cutoffs[mode] + 1
    }

    pub fn motional_dim(&self) -> usize {
        self.fock_cutoffs.iter().map(|n| n + 1).product()
    }

    pub fn spin_dim(&self) -> usize {
        SPIN_DIM.pow(N_IONS as u32)
    }

    pub fn total_dim(&self) -> usize {
        self.spin_dim() * self.motional_dim()
    }

    /// Dimension of every tensor slot, slowest first.
    pub fn slot_dims(&self) -> Vec<usize> {
        let mut d = vec![SPIN_DIM; N_IONS];
        d.extend(self.fock_cutoffs.iter().map(|n| n + 1));
        d
    }

    fn strides(&self) -> Vec<usize> {
        let dims = self.slot_dims();
        let mut s = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * dims[k + 1];
        }
        s
    }

    pub fn index(&self, spins: [usize; 2], fock: &[usize]) -> usize {
        let s = self.strides();
        let mut i = spins[0] * s[0] + spins[1] * s[1];
        for (m, &n) in fock.iter().enumerate() {
            i += n * s[2 + m];
        }
        i
    }

    fn is_dense(&self) -> bool {
        self.total_dim() < self.dense_threshold
    }

    fn same_space(&self, other: &BasisLayout) -> bool {
        self.fock_cutoffs == other.fock_cutoffs
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(DMatrix<C64>),
    Sparse(CsrMatrix<C64>),
}

/// Linear operator on the layout's Hilbert space.
#[derive(Debug, Clone)]
pub struct Operator {
    layout: BasisLayout,
    repr: Repr,
}

impl Operator {
    pub fn zeros(layout: &BasisLayout) -> Self {
        Self::from_triplets(layout, Vec::new())
    }

    pub fn identity(layout: &BasisLayout) -> Self {
        let n = layout.total_dim();
        Self::from_triplets(layout, (0..n).map(|i| (i, i, ONE)).collect())
    }

    /// Build from (row, col, value) entries; duplicates are summed.
    pub fn from_triplets(layout: &BasisLayout, entries: Vec<(usize, usize, C64)>) -> Self {
        let n = layout.total_dim();
        let repr = if layout.is_dense() {
            let mut m = DMatrix::from_element(n, n, ZERO);
            for (r, c, v) in entries {
                m[(r, c)] += v;
            }
            Repr::Dense(m)
        } else {
            let mut coo = CooMatrix::new(n, n);
            for (r, c, v) in entries {
                coo.push(r, c, v);
            }
            Repr::Sparse(CsrMatrix::from(&coo))
        };
        Self { layout: layout.clone(), repr }
    }

    pub fn from_dense(layout: &BasisLayout, m: DMatrix<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::LayoutMismatch(format!(
                "matrix is {}x{}, layout needs {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        if layout.is_dense() {
            return Ok(Self { layout: layout.clone(), repr: Repr::Dense(m) });
        }
        let mut t = Vec::new();
        for c in 0..n {
            for r in 0..n {
                if m[(r, c)] != ZERO {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Ok(Self::from_triplets(layout, t))
    }

    /// Embed local factors (slot index, local matrix) padded with identities.
    /// Slots 0 and 1 are the ions, slots 2.. the modes.
    pub fn embed(layout: &BasisLayout, factors: &[(usize, DMatrix<C64>)]) -> Self {
        let dims = layout.slot_dims();
        let strides = layout.strides();
        let mut local: Vec<Vec<(usize, usize, C64)>> =
            dims.iter().map(|&d| (0..d).map(|i| (i, i, ONE)).collect()).collect();
        for (slot, m) in factors {
            let mut nz = Vec::new();
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    if m[(r, c)] != ZERO {
                        nz.push((r, c, m[(r, c)]));
                    }
                }
            }
            local[*slot] = nz;
        }
        let mut entries = vec![(0usize, 0usize, ONE)];
        for (k, nz) in local.iter().enumerate() {
            let mut next = Vec::with_capacity(entries.len() * nz.len());
            for &(r, c, v) in &entries {
                for &(lr, lc, lv) in nz {
                    next.push((r + lr * strides[k], c + lc * strides[k], v * lv));
                }
            }
            entries = next;
        }
        Self::from_triplets(layout, entries)
    }

    pub fn layout(&self) -> &BasisLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse(_))
    }

    /// Non-zero entries as (row, col, value).
    pub fn entries(&self) -> Vec<(usize, usize, C64)> {
        match &self.repr {
            Repr::Dense(m) => {
                let mut t = Vec::new();
                for c in 0..m.ncols() {
                    for r in 0..m.nrows() {
                        if m[(r, c)] != ZERO {
                            t.push((r, c, m[(r, c)]));
                        }
                    }
                }
                t
            }
            Repr::Sparse(s) => s.triplet_iter().filter(|t| *t.2 != ZERO).map(|(r, c, v)| (r, c, *v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Sparse(s) => {
                let n = self.dim();
                let mut m = DMatrix::from_element(n, n, ZERO);
                for (r, c, v) in s.triplet_iter() {
                    m[(r, c)] += *v;
                }
                m
            }
        }
    }

    /// y ← y + alpha·A·x
    pub fn apply_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        match &self.repr {
            Repr::Dense(m) => {
                let n = m.nrows();
                for c in 0..n {
                    let xc = alpha * x[c];
                    if xc == ZERO {
                        continue;
                    }
                    let col = m.column(c);
                    for (yr, a) in y.iter_mut().zip(col.iter()) {
                        *yr += a * xc;
                    }
                }
            }
            Repr::Sparse(s) => {
                let offsets = s.row_offsets();
                let cols = s.col_indices();
                let vals = s.values();
                for (r, yr) in y.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for k in offsets[r]..offsets[r + 1] {
                        acc += vals[k] * x[cols[k]];
                    }
                    *yr += alpha * acc;
                }
            }
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; x.len()];
        self.apply_add(ONE, x, &mut y);
        y
    }

    pub fn adjoint(&self) -> Self {
        let t = self.entries().into_iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(&self.layout, t)
    }

    pub fn scale(&self, alpha: C64) -> Self {
        match &self.repr {
            Repr::Dense(m) => Self { layout: self.layout.clone(), repr: Repr::Dense(m * alpha) },
            Repr::Sparse(s) => {
                let mut s = s.clone();
                s.values_mut().iter_mut().for_each(|v| *v *= alpha);
                Self { layout: self.layout.clone(), repr: Repr::Sparse(s) }
            }
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.check_layout(other)?;
        Ok(match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => Self { layout: self.layout.clone(), repr: Repr::Dense(a + b) },
            _ => {
                let mut t = self.entries();
                t.extend(other.entries());
                Self::from_triplets(&self.layout, t)
            }
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        self.add(&other.scale(-ONE))
    }

    pub fn matmul(&self, other: &Operator) -> Result<Self> {
        self.check_layout(other)?;
        Ok(match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => Self { layout: self.layout.clone(), repr: Repr::Dense(a * b) },
            (Repr::Sparse(a), Repr::Sparse(b)) => Self { layout: self.layout.clone(), repr: Repr::Sparse(a * b) },
            _ => Self::from_dense(&self.layout, self.to_dense() * other.to_dense())?,
        })
    }

    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|e| e.2.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    /// max |A − A†|
    pub fn hermiticity_residual(&self) -> f64 {
        self.sub(&self.adjoint()).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() < tol
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let mut d = vec![ZERO; self.dim()];
        for (r, c, v) in self.entries() {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    fn check_layout(&self, other: &Operator) -> Result<()> {
        if !self.layout.same_space(&other.layout) {
            return Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout.fock_cutoffs, other.layout.fock_cutoffs
            )));
        }
        Ok(())
    }
}

/// Elementary operator kinds understood by [`operator_factory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// |m⟩⟨m| − |0⟩⟨0|
    BareZ(SpinLevel),
    /// |m⟩⟨0|
    Raise(SpinLevel),
    /// |0⟩⟨m|
    Lower(SpinLevel),
    DressedRaise,
    DressedLower,
    DressedZ,
    Projector(Level, Level),
    Annihilate,
    Create,
    Number,
}

impl OperatorKind {
    pub fn acts_on_mode(self) -> bool {
        matches!(self, OperatorKind::Annihilate | OperatorKind::Create | OperatorKind::Number)
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    /// Symbols: `sz:+1`, `sp:-1`, `sm:0p`, `S+`, `S-`, `Sz`, `proj:u:D`, `a`, `adag`, `n`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownOperator(s.to_string());
        let transition = |t: &str| match Level::parse(t) {
            Some(Level::Bare(l)) if l != SpinLevel::Zero => Ok(l),
            _ => Err(bad()),
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["S+"] => Ok(OperatorKind::DressedRaise),
            ["S-"] => Ok(OperatorKind::DressedLower),
            ["Sz"] => Ok(OperatorKind::DressedZ),
            ["a"] => Ok(OperatorKind::Annihilate),
            ["adag"] => Ok(OperatorKind::Create),
            ["n"] => Ok(OperatorKind::Number),
            ["sz", t] => Ok(OperatorKind::BareZ(transition(t)?)),
            ["sp", t] => Ok(OperatorKind::Raise(transition(t)?)),
            ["sm", t] => Ok(OperatorKind::Lower(transition(t)?)),
            ["proj", a, b] => Ok(OperatorKind::Projector(
                Level::parse(a).ok_or_else(bad)?,
                Level::parse(b).ok_or_else(bad)?,
            )),
            _ => Err(bad()),
        }
    }
}

fn outer(a: [C64; 4], b: [C64; 4]) -> DMatrix<C64> {
    DMatrix::from_fn(4, 4, |r, c| a[r] * b[c].conj())
}

fn bare(l: SpinLevel) -> [C64; 4] {
    Level::Bare(l).vector()
}

/// Single-ion 4×4 matrix of a spin operator kind.
pub fn spin_matrix(kind: OperatorKind) -> Option<DMatrix<C64>> {
    let dv = |l: DressedLevel| l.bare_vector();
    Some(match kind {
        OperatorKind::BareZ(m) => outer(bare(m), bare(m)) - outer(bare(SpinLevel::Zero), bare(SpinLevel::Zero)),
        OperatorKind::Raise(m) => outer(bare(m), bare(SpinLevel::Zero)),
        OperatorKind::Lower(m) => outer(bare(SpinLevel::Zero), bare(m)),
        OperatorKind::DressedRaise => {
            outer(dv(DressedLevel::Up), dv(DressedLevel::Dark)) + outer(dv(DressedLevel::Dark), dv(DressedLevel::Down))
        }
        OperatorKind::DressedLower => {
            outer(dv(DressedLevel::Dark), dv(DressedLevel::Up)) + outer(dv(DressedLevel::Down), dv(DressedLevel::Dark))
        }
        OperatorKind::DressedZ => {
            outer(dv(DressedLevel::Up), dv(DressedLevel::Up)) - outer(dv(DressedLevel::Down), dv(DressedLevel::Down))
        }
        OperatorKind::Projector(a, b) => outer(a.vector(), b.vector()),
        _ => return None,
    })
}

/// Single-mode (n_max+1)-square matrix of a bosonic operator kind.
pub fn mode_matrix(kind: OperatorKind, n_max: usize) -> Option<DMatrix<C64>> {
    let d = n_max + 1;
    let mut m = DMatrix::from_element(d, d, ZERO);
    match kind {
        OperatorKind::Annihilate => (1..d).for_each(|n| m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0)),
        OperatorKind::Create => (1..d).for_each(|n| m[(n, n - 1)] = C64::new((n as f64).sqrt(), 0.0)),
        OperatorKind::Number => (0..d).for_each(|n| m[(n, n)] = C64::new(n as f64, 0.0)),
        _ => return None,
    }
    Some(m)
}

/// Elementary operator on ion `index` (spin kinds) or mode `index` (bosonic kinds).
pub fn operator_factory(kind: OperatorKind, index: usize, layout: &BasisLayout) -> Result<Operator> {
    if kind.acts_on_mode() {
        if index >= layout.n_modes() {
            return Err(Error::IndexOutOfRange { index, limit: layout.n_modes() });
        }
        let m = mode_matrix(kind, layout.fock_cutoffs[index]).expect("bosonic kind");
        Ok(Operator::embed(layout, &[(N_IONS + index, m)]))
    } else {
        if index >= N_IONS {
            return Err(Error::IndexOutOfRange { index, limit: N_IONS });
        }
        let m = spin_matrix(kind).expect("spin kind");
        Ok(Operator::embed(layout, &[(index, m)]))
    }
}

/// Same as [`operator_factory`] with the kind given by its symbol.
pub fn operator_from_symbol(symbol: &str, index: usize, layout: &BasisLayout) -> Result<Operator> {
    operator_factory(symbol.parse()?, index, layout)
}

/// Pure state on the layout's Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: BasisLayout,
    pub amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(layout: &BasisLayout, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::LayoutMismatch(format!(
                "state has {} amplitudes, layout needs {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { layout: layout.clone(), amplitudes })
    }

    pub fn zeros(layout: &BasisLayout) -> Self {
        Self { layout: layout.clone(), amplitudes: DVector::from_element(layout.total_dim(), ZERO) }
    }

    /// Product state: a two-ion spin state (16 amplitudes, ion 1 slowest) times Fock states.
    pub fn from_spin_state(layout: &BasisLayout, spin: &[C64; 16], fock: &[usize]) -> Result<Self> {
        if fock.len() != layout.n_modes() {
            return Err(Error::LayoutMismatch(format!("{} Fock indices for {} modes", fock.len(), layout.n_modes())));
        }
        for (m, &n) in fock.iter().enumerate() {
            if n > layout.fock_cutoffs[m] {
                return Err(Error::IndexOutOfRange { index: n, limit: layout.fock_cutoffs[m] + 1 });
            }
        }
        let mut psi = Self::zeros(layout);
        for s1 in 0..4 {
            for s2 in 0..4 {
                psi.amplitudes[layout.index([s1, s2], fock)] = spin[4 * s1 + s2];
            }
        }
        Ok(psi)
    }

    /// Product of two single-ion states and Fock states.
    pub fn product(layout: &BasisLayout, ion1: [C64; 4], ion2: [C64; 4], fock: &[usize]) -> Result<Self> {
        let mut spin = [ZERO; 16];
        for a in 0..4 {
            for b in 0..4 {
                spin[4 * a + b] = ion1[a] * ion2[b];
            }
        }
        Self::from_spin_state(layout, &spin, fock)
    }

    pub fn layout(&self) -> &BasisLayout {
        &self.layout
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.amplitudes /= C64::new(n, 0.0);
        }
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn expectation(&self, op: &Operator) -> C64 {
        let y = op.apply(self.amplitudes.as_slice());
        self.amplitudes.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// Spin density matrix (16×16) with the motion traced out.
    pub fn reduced_spin_density(&self) -> DMatrix<C64> {
        let m = self.layout.motional_dim();
        let s = self.layout.spin_dim();
        let view = DMatrix::from_column_slice(m, s, self.amplitudes.as_slice());
        // column k of `view` is the motional wavefunction attached to spin index k
        view.transpose() * view.conjugate()
    }

    /// Occupation probabilities of each Fock level of `mode`.
    pub fn fock_populations(&self, mode: usize) -> Vec<f64> {
        let dims = self.layout.slot_dims();
        let strides = self.layout.strides();
        let slot = N_IONS + mode;
        let mut p = vec![0.0; dims[slot]];
        for (i, a) in self.amplitudes.iter().enumerate() {
            p[(i / strides[slot]) % dims[slot]] += a.norm_sqr();
        }
        p
    }

    /// Fail if any mode carries more than `threshold` population in its highest level.
    pub fn check_truncation(&self, threshold: f64) -> Result<()> {
        let norm = self.norm_sqr();
        for mode in 0..self.layout.n_modes() {
            let p = self.fock_populations(mode);
            let top = p[p.len() - 1] / norm;
            if top > threshold {
                return Err(Error::Truncation { mode, population: top });
            }
        }
        Ok(())
    }
}

/// Per-ion unitary whose rows are the dressed states (u, d, D, 0′) in bare coordinates.
pub fn dressed_unitary() -> DMatrix<C64> {
    let mut w = DMatrix::from_element(4, 4, ZERO);
    for (row, l) in DressedLevel::ALL.iter().enumerate() {
        let v = l.bare_vector();
        for c in 0..4 {
            w[(row, c)] = v[c].conj();
        }
    }
    w
}

/// Objects that can be re-expressed in dressed coordinates. In dressed
/// coordinates each ion's slots hold (u, d, D, 0′) instead of (0, 0′, −1, +1).
pub trait DressedTransform: Sized {
    fn to_dressed(&self) -> Self;
    fn from_dressed(&self) -> Self;
}

fn full_dressed_unitary(layout: &BasisLayout, inverse: bool) -> Operator {
    let w = dressed_unitary();
    let w = if inverse { w.adjoint() } else { w };
    Operator::embed(layout, &[(0, w.clone()), (1, w)])
}

impl DressedTransform for Operator {
    fn to_dressed(&self) -> Self {
        let w = full_dressed_unitary(&self.layout, false);
        let wd = full_dressed_unitary(&self.layout, true);
        w.matmul(self).and_then(|x| x.matmul(&wd)).expect("same layout")
    }

    fn from_dressed(&self) -> Self {
        let w = full_dressed_unitary(&self.layout, false);
        let wd = full_dressed_unitary(&self.layout, true);
        wd.matmul(self).and_then(|x| x.matmul(&w)).expect("same layout")
    }
}

impl DressedTransform for StateVector {
    fn to_dressed(&self) -> Self {
        let w = full_dressed_unitary(&self.layout, false);
        Self { layout: self.layout.clone(), amplitudes: DVector::from_vec(w.apply(self.amplitudes.as_slice())) }
    }

    fn from_dressed(&self) -> Self {
        let wd = full_dressed_unitary(&self.layout, true);
        Self { layout: self.layout.clone(), amplitudes: DVector::from_vec(wd.apply(self.amplitudes.as_slice())) }
    }
}

pub fn dressed_transform<T: DressedTransform>(x: &T) -> T {
    x.to_dressed()
}

pub fn inverse_dressed_transform<T: DressedTransform>(x: &T) -> T {
    x.from_dressed()
}

/// Bose-Einstein occupation probabilities on [0, n_max] and the mass beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalDistribution {
    pub probabilities: Vec<f64>,
    pub tail_mass: f64,
}

pub fn thermal_distribution(n_bar: f64, n_max: usize) -> Result<ThermalDistribution> {
    if !(n_bar >= 0.0) {
        return Err(Error::InvalidParameter(format!("mean occupation must be non-negative, got {n_bar}")));
    }
    if n_max < 1 {
        return Err(Error::InvalidParameter("Fock cutoff must be at least 1".into()));
    }
    let q = n_bar / (1.0 + n_bar);
    let p0 = 1.0 / (1.0 + n_bar);
    let probabilities: Vec<f64> = (0..=n_max).map(|n| p0 * q.powi(n as i32)).collect();
    // geometric tail: P(n > n_max) = q^(n_max+1)
    let tail_mass = q.powi(n_max as i32 + 1);
    Ok(ThermalDistribution { probabilities, tail_mass })
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    spin_levels: Vec<String>,
    fock_cutoffs: Vec<usize>,
    total_dim: usize,
    ordering: String,
}

/// Write a JSON header line followed by little-endian (re, im) f64 pairs.
pub fn write_snapshot<W: Write>(mut w: W, psi: &StateVector) -> Result<()> {
    let header = SnapshotHeader {
        format: "complex128-le".into(),
        spin_levels: vec!["0".into(), "0'".into(), "-1".into(), "+1".into()],
        fock_cutoffs: psi.layout.fock_cutoffs.clone(),
        total_dim: psi.layout.total_dim(),
        ordering: "ion1,ion2,mode1..modeN (slowest first)".into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for a in psi.amplitudes.iter() {
        w.write_all(&a.re.to_le_bytes())?;
        w.write_all(&a.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<StateVector> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
    if header.format != "complex128-le" {
        return Err(Error::Snapshot(format!("unsupported format {}", header.format)));
    }
    let layout = BasisLayout::new(&header.fock_cutoffs);
    if layout.total_dim() != header.total_dim {
        return Err(Error::Snapshot("dimension does not match Fock cutoffs".into()));
    }
    let mut buf = vec![0u8; 16 * header.total_dim];
    r.read_exact(&mut buf)?;
    let amps = buf
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            C64::new(re, im)
        })
        .collect();
    StateVector::new(&layout, DVector::from_vec(amps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn local(kind: &str) -> DMatrix<C64> {
        spin_matrix(kind.parse().unwrap()).unwrap()
    }

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn dimensions() {
        let l = BasisLayout::new(&[2, 2]);
        assert_eq!(l.total_dim(), 144);
        assert_eq!(BasisLayout::new(&[250]).total_dim(), 4016);
        assert_eq!(BasisLayout::spin_only().total_dim(), 16);
        assert_eq!(l.index([3, 0], &[0, 1]), 3 * 36 + 1);
        assert_eq!(l.index([0, 1], &[2, 0]), 9 + 2 * 3);
    }

    #[test]
    fn ladder_products() {
        let sp = local("S+");
        let sm = local("S-");
        let p = |a: &str| local(&format!("proj:{a}:{a}"));
        assert!(max_diff(&(&sp * &sm), &(p("u") + p("D"))) < 1e-15);
        assert!(max_diff(&(&sp * &sm - &sm * &sp), &local("Sz")) < 1e-15);
        assert!(max_diff(&local("Sz"), &(p("u") - p("d"))) < 1e-15);
    }

    #[test]
    fn bosonic_ladder() {
        let l = BasisLayout::new(&[3]);
        let a = operator_factory(OperatorKind::Annihilate, 0, &l).unwrap();
        let psi = StateVector::product(&l, bare(SpinLevel::Zero), bare(SpinLevel::Zero), &[2]).unwrap();
        let out = a.apply(psi.amplitudes.as_slice());
        let target = l.index([0, 0], &[1]);
        for (i, v) in out.iter().enumerate() {
            let want = if i == target { 2f64.sqrt() } else { 0.0 };
            assert!((v - C64::new(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn canonical_commutator_below_cutoff() {
        let l = BasisLayout::new(&[5]);
        let a = operator_factory(OperatorKind::Annihilate, 0, &l).unwrap();
        let ad = operator_factory(OperatorKind::Create, 0, &l).unwrap();
        let c = a.commutator(&ad).unwrap().to_dense();
        for s in 0..16 {
            for n in 0..5 {
                let i = s * 6 + n;
                assert!((c[(i, i)] - ONE).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn carrier_is_diagonal_in_dressed_frame() {
        let om = 1.7;
        let l = BasisLayout::spin_only();
        let half = C64::new(om / 2.0, 0.0);
        let mut h = Operator::zeros(&l);
        for m in ["+1", "-1"] {
            let sp = operator_from_symbol(&format!("sp:{m}"), 0, &l).unwrap();
            h = h.add(&sp.add(&sp.adjoint()).unwrap().scale(half)).unwrap();
        }
        let hd = dressed_transform(&h).to_dense();
        let s = om / 2f64.sqrt();
        // ion 2 idle, so check the diagonal on ion 1's slots with ion 2 in slot 0
        let want = [s, -s, 0.0, 0.0];
        for a in 0..4 {
            assert!((hd[(4 * a, 4 * a)] - C64::new(want[a], 0.0)).norm() < 1e-12);
        }
        let off: f64 = (0..16)
            .flat_map(|r| (0..16).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| hd[(r, c)].norm())
            .fold(0.0, f64::max);
        assert!(off < 1e-12);
    }

    #[test]
    fn dressed_coordinates_of_basis_states() {
        let l = BasisLayout::spin_only();
        let psi = StateVector::product(&l, bare(SpinLevel::Zero), bare(SpinLevel::ZeroPrime), &[]).unwrap();
        let d = dressed_transform(&psi);
        let s = FRAC_1_SQRT_2;
        let i_u = l.index([DressedLevel::Up as usize, DressedLevel::ZeroPrime as usize], &[]);
        let i_d = l.index([DressedLevel::Down as usize, DressedLevel::ZeroPrime as usize], &[]);
        assert!((d.amplitudes[i_u] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((d.amplitudes[i_d] - C64::new(-s, 0.0)).norm() < 1e-15);

        let mut e = StateVector::zeros(&l);
        e.amplitudes[l.index([DressedLevel::Dark as usize, DressedLevel::ZeroPrime as usize], &[])] = ONE;
        let b = inverse_dressed_transform(&e);
        assert!((b.amplitudes[l.index([3, 1], &[])] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((b.amplitudes[l.index([2, 1], &[])] - C64::new(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn dressed_unitary_is_unitary() {
        let w = dressed_unitary();
        assert!(max_diff(&(&w * w.adjoint()), &DMatrix::identity(4, 4)) < 1e-12);
    }

    #[test]
    fn embedding_commutes_with_transform() {
        let l = BasisLayout::new(&[2]);
        let x = local("sz:+1") + local("sp:-1") * C64::new(0.3, 0.2);
        let w = dressed_unitary();
        let local_t = &w * &x * w.adjoint();
        let lhs = dressed_transform(&Operator::embed(&l, &[(1, x)]));
        let rhs = Operator::embed(&l, &[(1, local_t)]);
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn sparse_and_dense_agree() {
        let l = BasisLayout::new(&[3, 2]);
        let ls = l.clone().with_dense_threshold(1);
        for sym in ["S+", "sz:0p", "a", "adag", "n"] {
            let idx = 1;
            let d = operator_from_symbol(sym, idx, &l).unwrap();
            let s = operator_from_symbol(sym, idx, &ls).unwrap();
            assert!(s.is_sparse() && !d.is_sparse());
            assert!(max_diff(&d.to_dense(), &s.to_dense()) < 1e-15);
            let x: Vec<C64> = (0..l.total_dim()).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
            let yd = d.apply(&x);
            let ys = s.apply(&x);
            assert!(yd.iter().zip(&ys).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    #[test]
    fn factory_errors() {
        let l = BasisLayout::new(&[2]);
        assert!(matches!("foo".parse::<OperatorKind>(), Err(Error::UnknownOperator(_))));
        assert!(matches!("sz:0".parse::<OperatorKind>(), Err(Error::UnknownOperator(_))));
        assert!(matches!(operator_factory(OperatorKind::Annihilate, 1, &l), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(operator_factory(OperatorKind::DressedZ, 2, &l), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn thermal_distribution_values() {
        let t = thermal_distribution(0.0, 5).unwrap();
        assert_eq!(t.probabilities[0], 1.0);
        assert!(t.probabilities[1..].iter().all(|&p| p == 0.0));
        let t = thermal_distribution(1.0, 5).unwrap();
        assert_relative_eq!(t.probabilities[0], 0.5);
        assert_relative_eq!(t.probabilities[1], 0.25);
        let t = thermal_distribution(70.0, 250).unwrap();
        let mass: f64 = t.probabilities.iter().sum();
        assert!(mass >= 0.95);
        assert_relative_eq!(mass + t.tail_mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_density_of_product_state() {
        let l = BasisLayout::new(&[2, 1]);
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let ion1 = [s, s, ZERO, ZERO];
        let psi = StateVector::product(&l, ion1, bare(SpinLevel::Plus), &[1, 1]).unwrap();
        let rho = psi.reduced_spin_density();
        assert_relative_eq!(rho[(3, 3)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(rho[(3, 7)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(rho.trace().re, 1.0, epsilon = 1e-15);
        let pops = psi.fock_populations(0);
        for (got, want) in pops.iter().zip([0.0, 1.0, 0.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
        assert!(matches!(psi.check_truncation(1e-6), Err(Error::Truncation { mode: 1, .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let l = BasisLayout::new(&[1]);
        let amps = DVector::from_fn(l.total_dim(), |i, _| C64::new(i as f64 * 0.1, -(i as f64)));
        let psi = StateVector::new(&l, amps).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &psi).unwrap();
        let back = read_snapshot(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, psi);
    }

    proptest! {
        #[test]
        fn transform_round_trip(re in proptest::collection::vec(-1.0f64..1.0, 48), im in proptest::collection::vec(-1.0f64..1.0, 48)) {
            let l = BasisLayout::new(&[2]);
            let amps = DVector::from_iterator(48, re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)));
            let psi = StateVector::new(&l, amps).unwrap();
            let back = inverse_dressed_transform(&dressed_transform(&psi));
            let err = (&back.amplitudes - &psi.amplitudes).iter().map(|x| x.norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
        }
    }
}
