//! Sparse simulation of the subspace-preserving path-recording oracle.
//!
//! A state is a sparse superposition over keys `(sys, relations)` where `sys`
//! is the computational-basis value of every adversary-visible qubit and each
//! relation slot holds a pair of multisets `(L, R)` of ordered pairs. The
//! oracle acts on a bit field of `sys` (its query register `A`) and one slot.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, haar_on_subspace, stream_rng, CMatrix, CVector, SubspaceSpec, C64, ZERO};

pub type Pair = (u64, u64);

/// Default truncation of `|L| + |R|`.
pub const DEFAULT_T_MAX: usize = 6;
/// Default cap on the number of stored keys.
pub const DEFAULT_KEY_BUDGET: usize = 1_000_000;

const PRUNE: f64 = 1e-30;
const CANCELLATION_TOL: f64 = 1e-24;

/// Multisets stored as sorted vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub left: Vec<Pair>,
    pub right: Vec<Pair>,
}

fn insert_sorted(v: &[Pair], p: Pair) -> Vec<Pair> {
    let mut out = v.to_vec();
    let i = out.partition_point(|q| *q <= p);
    out.insert(i, p);
    out
}

fn remove_at(v: &[Pair], i: usize) -> Vec<Pair> {
    let mut out = v.to_vec();
    out.remove(i);
    out
}

impl Relation {
    pub fn new(mut left: Vec<Pair>, mut right: Vec<Pair>) -> Self {
        left.sort_unstable();
        right.sort_unstable();
        Self { left, right }
    }

    pub fn size(&self) -> usize {
        self.left.len() + self.right.len()
    }

    /// Distinct second components of `L ∪ R`.
    pub fn image(&self) -> BTreeSet<u64> {
        self.left.iter().chain(&self.right).map(|p| p.1).collect()
    }

    /// Distinct first components of `L ∪ R`.
    pub fn domain(&self) -> BTreeSet<u64> {
        self.left.iter().chain(&self.right).map(|p| p.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub sys: u64,
    pub rels: Vec<Relation>,
}

/// Sparse joint state of the adversary registers and the relation registers.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationState {
    sys_bits: usize,
    slots: usize,
    t_max: usize,
    key_budget: usize,
    amps: HashMap<RecordKey, C64>,
}

impl RelationState {
    pub fn empty(sys_bits: usize, slots: usize, t_max: usize) -> Result<Self> {
        if sys_bits > 63 {
            return Err(Error::ResourceLimit(format!("{sys_bits} adversary qubits")));
        }
        Ok(Self { sys_bits, slots, t_max, key_budget: DEFAULT_KEY_BUDGET, amps: HashMap::new() })
    }

    /// `|sys⟩|∅⟩…|∅⟩`.
    pub fn basis(sys_bits: usize, slots: usize, t_max: usize, sys: u64) -> Result<Self> {
        let mut s = Self::empty(sys_bits, slots, t_max)?;
        s.check_sys(sys)?;
        s.amps.insert(RecordKey { sys, rels: vec![Relation::default(); slots] }, C64::new(1.0, 0.0));
        Ok(s)
    }

    /// Dense adversary vector tensored with empty relations.
    pub fn from_sys_vector(v: &CVector, slots: usize, t_max: usize) -> Result<Self> {
        let bits = v.len().trailing_zeros() as usize;
        if 1usize << bits != v.len() {
            return Err(Error::InvalidArgument("vector length must be a power of two".into()));
        }
        let mut s = Self::empty(bits, slots, t_max)?;
        for (i, z) in v.iter().enumerate() {
            if z.norm_sqr() > PRUNE {
                s.amps.insert(RecordKey { sys: i as u64, rels: vec![Relation::default(); slots] }, *z);
            }
        }
        Ok(s)
    }

    pub fn with_key_budget(mut self, budget: usize) -> Self {
        self.key_budget = budget;
        self
    }

    pub fn insert(&mut self, key: RecordKey, amp: C64) -> Result<()> {
        self.check_sys(key.sys)?;
        if key.rels.len() != self.slots {
            return Err(Error::DimensionMismatch { expected: self.slots, found: key.rels.len() });
        }
        if let Some(r) = key.rels.iter().find(|r| r.size() > self.t_max) {
            return Err(Error::TruncationExceeded { size: r.size(), t_max: self.t_max });
        }
        *self.amps.entry(key).or_insert(ZERO) += amp;
        self.check_budget()
    }

    fn check_sys(&self, sys: u64) -> Result<()> {
        if self.sys_bits < 64 && sys >> self.sys_bits != 0 {
            return Err(Error::InvalidArgument(format!("basis value {sys} exceeds {} bits", self.sys_bits)));
        }
        Ok(())
    }

    fn check_budget(&self) -> Result<()> {
        if self.amps.len() > self.key_budget {
            return Err(Error::KeyBudgetExceeded(self.key_budget));
        }
        Ok(())
    }

    fn like(&self) -> Self {
        Self { amps: HashMap::new(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            sys_bits: self.sys_bits,
            slots: self.slots,
            t_max: self.t_max,
            key_budget: self.key_budget,
            amps: HashMap::new(),
        }
    }

    fn add_amp(&mut self, key: RecordKey, amp: C64) {
        *self.amps.entry(key).or_insert(ZERO) += amp;
    }

    fn pruned(mut self) -> Result<Self> {
        self.amps.retain(|_, z| z.norm_sqr() > PRUNE);
        self.check_budget()?;
        Ok(self)
    }

    /// Intermediate terms of a query may exceed the truncation by one before
    /// they cancel.
    fn widened(&self) -> Self {
        Self { t_max: self.t_max + 1, ..self.clone() }
    }

    fn narrowed(mut self, t_max: usize) -> Result<Self> {
        self.t_max = t_max;
        let mut spill = 0.0;
        let mut largest = 0;
        self.amps.retain(|k, z| {
            let size = k.rels.iter().map(Relation::size).max().unwrap_or(0);
            if size > t_max {
                spill += z.norm_sqr();
                largest = largest.max(size);
                return false;
            }
            true
        });
        if spill > CANCELLATION_TOL {
            return Err(Error::TruncationExceeded { size: largest, t_max });
        }
        self.pruned()
    }

    pub fn sys_bits(&self) -> usize {
        self.sys_bits
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitude(&self, key: &RecordKey) -> C64 {
        self.amps.get(key).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RecordKey, &C64)> {
        self.amps.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|z| z.norm_sqr()).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, z) in &other.amps {
            out.add_amp(k.clone(), *z);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, z) in &other.amps {
            out.add_amp(k.clone(), -*z);
        }
        out
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.amps.values_mut().for_each(|z| *z *= c);
        out
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.sub(other).norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amps.iter().map(|(k, z)| z.conj() * other.amplitude(k)).sum()
    }

    /// Marginal distribution of a computational-basis measurement of `sys`.
    pub fn sys_probabilities(&self) -> HashMap<u64, f64> {
        let mut p = HashMap::new();
        for (k, z) in &self.amps {
            *p.entry(k.sys).or_insert(0.0) += z.norm_sqr();
        }
        p
    }

    /// Reduced density matrix on `sys` (relations traced out).
    pub fn reduced_density(&self) -> Result<CMatrix> {
        if self.sys_bits > linalg::MAX_DENSE_QUBITS {
            return Err(Error::ResourceLimit(format!("dense {}-qubit density", self.sys_bits)));
        }
        let dim = 1usize << self.sys_bits;
        let mut by_rel: HashMap<&Vec<Relation>, Vec<(u64, C64)>> = HashMap::new();
        for (k, z) in &self.amps {
            by_rel.entry(&k.rels).or_default().push((k.sys, *z));
        }
        let mut rho = CMatrix::zeros(dim, dim);
        for v in by_rel.values() {
            for &(a, za) in v {
                for &(b, zb) in v {
                    rho[(a as usize, b as usize)] += za * zb.conj();
                }
            }
        }
        Ok(rho)
    }

    /// Dense `sys` vector; fails unless every relation is empty.
    pub fn to_sys_vector(&self) -> Result<CVector> {
        if self.sys_bits > 20 {
            return Err(Error::ResourceLimit(format!("dense {}-qubit vector", self.sys_bits)));
        }
        let mut v = CVector::zeros(1usize << self.sys_bits);
        for (k, z) in &self.amps {
            if k.rels.iter().any(|r| r.size() > 0) {
                return Err(Error::Precondition("state is entangled with relation registers".into()));
            }
            v[k.sys as usize] += *z;
        }
        Ok(v)
    }

    /// Applies a `2^w × 2^w` unitary to the `w` qubits of `sys` at `offset`.
    pub fn apply_sys_unitary(&self, offset: usize, g: &CMatrix) -> Result<Self> {
        let field = BitField::new(self.sys_bits, offset, g.nrows().trailing_zeros() as usize)?;
        if 1usize << field.width != g.nrows() || g.nrows() != g.ncols() {
            return Err(Error::DimensionMismatch { expected: 1 << field.width, found: g.nrows() });
        }
        let mut out = self.like();
        for (k, z) in &self.amps {
            let a = field.get(k.sys) as usize;
            for r in 0..g.nrows() {
                let c = g[(r, a)];
                if c != ZERO {
                    out.add_amp(RecordKey { sys: field.set(k.sys, r as u64), rels: k.rels.clone() }, c * z);
                }
            }
        }
        out.pruned()
    }

    /// Relabels `sys` values by a bijection.
    pub fn permute_sys(&self, f: impl Fn(u64) -> u64) -> Result<Self> {
        let mut out = self.like();
        for (k, z) in &self.amps {
            let s = f(k.sys);
            self.check_sys(s)?;
            out.add_amp(RecordKey { sys: s, rels: k.rels.clone() }, *z);
        }
        if out.amps.len() != self.amps.len() {
            return Err(Error::InvalidArgument("relabelling is not injective".into()));
        }
        Ok(out)
    }

    pub fn swap_fields(&self, a: usize, b: usize, width: usize) -> Result<Self> {
        let fa = BitField::new(self.sys_bits, a, width)?;
        let fb = BitField::new(self.sys_bits, b, width)?;
        if a < b + width && b < a + width && a != b {
            return Err(Error::InvalidArgument("overlapping fields".into()));
        }
        self.permute_sys(|s| {
            let (va, vb) = (fa.get(s), fb.get(s));
            fb.set(fa.set(s, vb), va)
        })
    }
}

/// `width` qubits of an `nbits`-qubit register starting at `offset` from the
/// most significant end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitField {
    pub shift: usize,
    pub width: usize,
}

impl BitField {
    pub fn new(nbits: usize, offset: usize, width: usize) -> Result<Self> {
        if offset + width > nbits || width == 0 || width > 62 {
            return Err(Error::InvalidArgument(format!(
                "field [{offset}, {offset}+{width}) outside {nbits}-qubit register"
            )));
        }
        Ok(Self { shift: nbits - offset - width, width })
    }

    fn mask(&self) -> u64 {
        (1u64 << self.width) - 1
    }

    pub fn get(&self, s: u64) -> u64 {
        (s >> self.shift) & self.mask()
    }

    pub fn set(&self, s: u64, v: u64) -> u64 {
        (s & !(self.mask() << self.shift)) | (v << self.shift)
    }
}

/// The oracle on one query field and one relation slot. Active values are
/// `a < d`; values `a ≥ d` are left untouched by every operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecordingOracle {
    pub d: u64,
    pub field: BitField,
    pub slot: usize,
}

/// `1/√(d − k)`; a saturated relation has no fresh values and the sum is empty.
fn coefficient(d: u64, used: usize) -> f64 {
    if used as u64 >= d {
        return 0.0;
    }
    1.0 / ((d - used as u64) as f64).sqrt()
}

impl PathRecordingOracle {
    pub fn new(d: u64, field: BitField, slot: usize) -> Result<Self> {
        if d == 0 || d > 1u64 << field.width {
            return Err(Error::InvalidArgument(format!("d = {d} does not fit the {}-qubit field", field.width)));
        }
        Ok(Self { d, field, slot })
    }

    /// Oracle on the whole register of an `n`-qubit state with slot 0.
    pub fn for_spec(spec: &SubspaceSpec) -> Result<Self> {
        Self::new(spec.d as u64, BitField::new(spec.n, 0, spec.n)?, 0)
    }

    fn check(&self, st: &RelationState) -> Result<()> {
        if self.slot >= st.slots || self.field.shift + self.field.width > st.sys_bits {
            return Err(Error::InvalidArgument("oracle does not fit the state layout".into()));
        }
        Ok(())
    }

    fn map(
        &self,
        st: &RelationState,
        f: impl Fn(u64, &Relation, &mut Vec<(u64, Relation, f64)>) -> Result<()>,
    ) -> Result<RelationState> {
        self.check(st)?;
        let mut out = st.like();
        let mut buf = Vec::new();
        for (k, z) in &st.amps {
            let a = self.field.get(k.sys);
            if a >= self.d {
                out.add_amp(k.clone(), *z);
                continue;
            }
            buf.clear();
            f(a, &k.rels[self.slot], &mut buf)?;
            for (y, rel, c) in buf.drain(..) {
                if rel.size() > st.t_max {
                    return Err(Error::TruncationExceeded { size: rel.size(), t_max: st.t_max });
                }
                let mut rels = k.rels.clone();
                rels[self.slot] = rel;
                out.add_amp(RecordKey { sys: self.field.set(k.sys, y), rels }, z * c);
            }
            if out.amps.len() > st.key_budget {
                return Err(Error::KeyBudgetExceeded(st.key_budget));
            }
        }
        out.pruned()
    }

    /// `|x,L,R⟩ ↦ Σ_{y ∉ Im(L∪R)} (d − |Im(L∪R)|)^{-1/2} |y, L∪{(x,y)}, R⟩`.
    pub fn left(&self, st: &RelationState) -> Result<RelationState> {
        let d = self.d;
        self.map(st, |x, rel, out| {
            let im = rel.image();
            let c = coefficient(d, im.len());
            for y in (0..d).filter(|y| !im.contains(y)) {
                out.push((y, Relation { left: insert_sorted(&rel.left, (x, y)), right: rel.right.clone() }, c));
            }
            Ok(())
        })
    }

    /// Adjoint of [`Self::left`] in the orthonormal key basis.
    pub fn left_adjoint(&self, st: &RelationState) -> Result<RelationState> {
        let d = self.d;
        self.map(st, |y, rel, out| {
            let mut last = None;
            for (i, &(x, yy)) in rel.left.iter().enumerate() {
                if yy != y || last == Some((x, yy)) {
                    continue;
                }
                last = Some((x, yy));
                let rest = Relation { left: remove_at(&rel.left, i), right: rel.right.clone() };
                let im = rest.image();
                if im.contains(&y) {
                    continue;
                }
                out.push((x, rest, coefficient(d, im.len())));
            }
            Ok(())
        })
    }

    /// `|x,L,R⟩ ↦ Σ_{y ∉ Dom(L∪R)} (d − |Dom(L∪R)|)^{-1/2} |y, L, R∪{(y,x)}⟩`.
    pub fn right(&self, st: &RelationState) -> Result<RelationState> {
        let d = self.d;
        self.map(st, |x, rel, out| {
            let dom = rel.domain();
            let c = coefficient(d, dom.len());
            for y in (0..d).filter(|y| !dom.contains(y)) {
                out.push((y, Relation { left: rel.left.clone(), right: insert_sorted(&rel.right, (y, x)) }, c));
            }
            Ok(())
        })
    }

    /// Adjoint of [`Self::right`] in the orthonormal key basis.
    pub fn right_adjoint(&self, st: &RelationState) -> Result<RelationState> {
        let d = self.d;
        self.map(st, |y, rel, out| {
            let mut last = None;
            for (i, &(yy, x)) in rel.right.iter().enumerate() {
                if yy != y || last == Some((yy, x)) {
                    continue;
                }
                last = Some((yy, x));
                let rest = Relation { left: rel.left.clone(), right: remove_at(&rel.right, i) };
                let dom = rest.domain();
                if dom.contains(&y) {
                    continue;
                }
                out.push((x, rest, coefficient(d, dom.len())));
            }
            Ok(())
        })
    }

    fn split(&self, st: &RelationState) -> (RelationState, RelationState) {
        let (mut active, mut fixed) = (st.like(), st.like());
        for (k, z) in &st.amps {
            if self.field.get(k.sys) < self.d {
                active.amps.insert(k.clone(), *z);
            } else {
                fixed.amps.insert(k.clone(), *z);
            }
        }
        (active, fixed)
    }

    /// `O = O^L(I − O^R O^R†) + (I − O^L O^L†) O^R†` on active values, the
    /// identity on `a ≥ d`.
    pub fn forward(&self, st: &RelationState) -> Result<RelationState> {
        self.check(st)?;
        let (psi, fixed) = self.split(&st.widened());
        let r_dag = self.right_adjoint(&psi)?;
        let part1 = self.left(&psi.sub(&self.right(&r_dag)?))?;
        let part2 = r_dag.sub(&self.left(&self.left_adjoint(&r_dag)?)?);
        part1.add(&part2).add(&fixed).narrowed(st.t_max)
    }

    /// `O† = (I − O^R O^R†) O^L† + O^R (I − O^L O^L†)` on active values, the
    /// identity on `a ≥ d`.
    pub fn inverse(&self, st: &RelationState) -> Result<RelationState> {
        self.check(st)?;
        let (psi, fixed) = self.split(&st.widened());
        let l_dag = self.left_adjoint(&psi)?;
        let part1 = l_dag.sub(&self.right(&self.right_adjoint(&l_dag)?)?);
        let part2 = self.right(&psi.sub(&self.left(&l_dag)?))?;
        part1.add(&part2).add(&fixed).narrowed(st.t_max)
    }

    /// `O^L† O^R†` applied to the active part. The forward query loses
    /// exactly `‖O^L† O^R† ψ‖²` of norm.
    pub fn isometry_defect(&self, st: &RelationState) -> Result<RelationState> {
        let (psi, _) = self.split(st);
        self.left_adjoint(&self.right_adjoint(&psi)?)
    }
}

pub fn pro_left(o: &PathRecordingOracle, st: &RelationState) -> Result<RelationState> {
    o.left(st)
}

pub fn pro_right(o: &PathRecordingOracle, st: &RelationState) -> Result<RelationState> {
    o.right(st)
}

pub fn pro_forward(o: &PathRecordingOracle, st: &RelationState) -> Result<RelationState> {
    o.forward(st)
}

pub fn pro_inverse(o: &PathRecordingOracle, st: &RelationState) -> Result<RelationState> {
    o.inverse(st)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
pub enum PlanStep {
    /// Query on the leading `n` qubits.
    Query { direction: Direction },
    /// Row-major `[re, im]` entries of a `2^w × 2^w` unitary on qubits
    /// `offset..offset+w`.
    Unitary { offset: usize, matrix: Vec<[f64; 2]> },
    SwapFields { a: usize, b: usize, width: usize },
}

/// Query register of `n` qubits followed by `workspace` qubits, a sparse
/// initial state and a step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPlan {
    pub n: usize,
    pub d: usize,
    pub workspace: usize,
    /// `(basis index, [re, im])`, normalised on load.
    pub initial: Vec<(u64, [f64; 2])>,
    pub steps: Vec<PlanStep>,
}

/// Row-major `[re, im]` pairs to a validated unitary.
pub fn matrix_from_pairs(entries: &[[f64; 2]]) -> Result<CMatrix> {
    let dim = (entries.len() as f64).sqrt().round() as usize;
    if dim * dim != entries.len() || !dim.is_power_of_two() {
        return Err(Error::Parse(format!("{} entries do not form a 2^w square", entries.len())));
    }
    let m = CMatrix::from_row_iterator(dim, dim, entries.iter().map(|p| C64::new(p[0], p[1])));
    linalg::UnitaryMatrix::try_new(m).map(|u| u.into_inner())
}

impl PlanStep {
    pub fn unitary(offset: usize, m: &CMatrix) -> Self {
        let matrix = m.transpose().iter().map(|z| [z.re, z.im]).collect();
        PlanStep::Unitary { offset, matrix }
    }
}

impl AdversaryPlan {
    pub fn spec(&self) -> Result<SubspaceSpec> {
        SubspaceSpec::new(self.n, self.d)
    }

    pub fn sys_bits(&self) -> usize {
        self.n + self.workspace
    }

    pub fn queries(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, PlanStep::Query { .. })).count()
    }

    /// Normalised initial state with `slots` empty relation registers.
    pub fn initial_state(&self, slots: usize, t_max: usize) -> Result<RelationState> {
        let mut st = RelationState::empty(self.sys_bits(), slots, t_max)?;
        let norm: f64 = self.initial.iter().map(|(_, z)| z[0] * z[0] + z[1] * z[1]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("initial state is zero".into()));
        }
        for &(s, z) in &self.initial {
            st.insert(RecordKey { sys: s, rels: vec![Relation::default(); slots] }, C64::new(z[0], z[1]) / norm)?;
        }
        Ok(st)
    }

    /// Two forward queries on classical inputs `x1 ≠ x2`; the first answer is
    /// parked in the workspace. Final layout: `A = y2`, `W = y1`.
    pub fn classical_distinct(n: usize, d: usize, x1: u64, x2: u64) -> Result<Self> {
        if x1 == x2 || x1.max(x2) >= d as u64 {
            return Err(Error::InvalidArgument("need distinct inputs in [d]".into()));
        }
        Ok(Self {
            n,
            d,
            workspace: n,
            initial: vec![((x1 << n) | x2, [1.0, 0.0])],
            steps: vec![
                PlanStep::Query { direction: Direction::Forward },
                PlanStep::SwapFields { a: 0, b: n, width: n },
                PlanStep::Query { direction: Direction::Forward },
            ],
        })
    }

    /// Forward query on `|0⟩`, Fourier transform on `[d]`, forward query.
    pub fn fourier(n: usize, d: usize) -> Result<Self> {
        let spec = SubspaceSpec::new(n, d)?;
        let h = crate::ensembles::fourier_unitary(&spec)?;
        let matrix = h.matrix().transpose().iter().map(|z| [z.re, z.im]).collect();
        Ok(Self {
            n,
            d,
            workspace: 0,
            initial: vec![(0, [1.0, 0.0])],
            steps: vec![
                PlanStep::Query { direction: Direction::Forward },
                PlanStep::Unitary { offset: 0, matrix },
                PlanStep::Query { direction: Direction::Forward },
            ],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum AdversaryMode {
    PathRecording { t_max: usize },
    SampledUnitary { samples: usize, seed: u64 },
}

/// Measurement statistics of the adversary registers at the end of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryOutcome {
    pub sys_bits: usize,
    /// Sorted `(basis value, probability)` pairs with non-zero mass.
    pub probabilities: Vec<(u64, f64)>,
    /// Per-outcome standard errors (sampled mode only).
    pub standard_errors: Option<Vec<f64>>,
    /// Reduced density matrix when `sys_bits ≤ 8`.
    pub density: Option<CMatrix>,
}

impl AdversaryOutcome {
    pub fn probability(&self, s: u64) -> f64 {
        self.probabilities
            .binary_search_by_key(&s, |p| p.0)
            .map(|i| self.probabilities[i].1)
            .unwrap_or(0.0)
    }
}

const DENSITY_BITS: usize = 8;

/// Runs the non-query steps itself and hands each query to `query`.
pub fn execute_plan(
    plan: &AdversaryPlan,
    mut st: RelationState,
    query: &mut dyn FnMut(Direction, RelationState) -> Result<RelationState>,
) -> Result<RelationState> {
    for step in &plan.steps {
        st = match step {
            PlanStep::Query { direction } => query(*direction, st)?,
            PlanStep::Unitary { offset, matrix } => st.apply_sys_unitary(*offset, &matrix_from_pairs(matrix)?)?,
            PlanStep::SwapFields { a, b, width } => st.swap_fields(*a, *b, *width)?,
        };
    }
    Ok(st)
}

pub fn run_plan_recording(plan: &AdversaryPlan, t_max: usize) -> Result<RelationState> {
    let oracle = PathRecordingOracle::new(plan.d as u64, BitField::new(plan.sys_bits(), 0, plan.n)?, 0)?;
    execute_plan(plan, plan.initial_state(1, t_max)?, &mut |dir, st| match dir {
        Direction::Forward => oracle.forward(&st),
        Direction::Inverse => oracle.inverse(&st),
    })
}

enum DenseStep {
    Query(Direction),
    Unitary(usize, CMatrix),
    Swap(BitField, BitField),
}

/// A plan with its unitaries parsed and validated once, for repeated dense
/// simulation.
pub struct DensePlan {
    n: usize,
    bits: usize,
    initial: CVector,
    steps: Vec<DenseStep>,
}

impl DensePlan {
    pub fn new(plan: &AdversaryPlan) -> Result<Self> {
        let bits = plan.sys_bits();
        if bits > crate::circuits::MAX_STATEVECTOR_QUBITS {
            return Err(Error::ResourceLimit(format!("{bits} adversary qubits")));
        }
        let mut initial = CVector::zeros(1usize << bits);
        let norm: f64 = plan.initial.iter().map(|(_, z)| z[0] * z[0] + z[1] * z[1]).sum::<f64>().sqrt();
        if norm == 0.0 || plan.initial.iter().any(|(s, _)| *s as usize >= initial.len()) {
            return Err(Error::InvalidArgument("initial state is zero or out of range".into()));
        }
        for &(s, z) in &plan.initial {
            initial[s as usize] += C64::new(z[0], z[1]) / norm;
        }
        let steps = plan
            .steps
            .iter()
            .map(|step| {
                Ok(match step {
                    PlanStep::Query { direction } => DenseStep::Query(*direction),
                    PlanStep::Unitary { offset, matrix } => {
                        let m = matrix_from_pairs(matrix)?;
                        if offset + m.nrows().trailing_zeros() as usize > bits {
                            return Err(Error::InvalidArgument(format!("unitary at {offset} exceeds {bits} qubits")));
                        }
                        DenseStep::Unitary(*offset, m)
                    }
                    PlanStep::SwapFields { a, b, width } => {
                        DenseStep::Swap(BitField::new(bits, *a, *width)?, BitField::new(bits, *b, *width)?)
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n: plan.n, bits, initial, steps })
    }

    /// Final adversary vector with every query answered by `u` (or `u†`).
    pub fn run(&self, u: &CMatrix) -> Result<CVector> {
        if u.nrows() != 1 << self.n || u.ncols() != u.nrows() {
            return Err(Error::DimensionMismatch { expected: 1 << self.n, found: u.nrows() });
        }
        let bits = self.bits;
        let mut v = self.initial.clone();
        let u_dag = u.adjoint();
        for step in &self.steps {
            match step {
                DenseStep::Query(Direction::Forward) => linalg::apply_on_qubits(&mut v, bits, 0, u),
                DenseStep::Query(Direction::Inverse) => linalg::apply_on_qubits(&mut v, bits, 0, &u_dag),
                DenseStep::Unitary(offset, m) => linalg::apply_on_qubits(&mut v, bits, *offset, m),
                DenseStep::Swap(fa, fb) => {
                    let old = v.clone();
                    for s in 0..old.len() as u64 {
                        let (va, vb) = (fa.get(s), fb.get(s));
                        v[fb.set(fa.set(s, vb), va) as usize] = old[s as usize];
                    }
                }
            }
        }
        Ok(v)
    }
}

/// Dense simulation of a plan with every query answered by `u` (or `u†`).
pub fn run_plan_dense(plan: &AdversaryPlan, u: &CMatrix) -> Result<CVector> {
    DensePlan::new(plan)?.run(u)
}

/// Executes a plan against the path-recording oracle or against Haar
/// unitaries on the active block.
pub fn adversary_run(plan: &AdversaryPlan, mode: AdversaryMode) -> Result<AdversaryOutcome> {
    let spec = plan.spec()?;
    let bits = plan.sys_bits();
    match mode {
        AdversaryMode::PathRecording { t_max } => {
            let st = run_plan_recording(plan, t_max)?;
            let mut probabilities: Vec<(u64, f64)> = st.sys_probabilities().into_iter().collect();
            probabilities.sort_by_key(|p| p.0);
            let density = if bits <= DENSITY_BITS { Some(st.reduced_density()?) } else { None };
            Ok(AdversaryOutcome { sys_bits: bits, probabilities, standard_errors: None, density })
        }
        AdversaryMode::SampledUnitary { samples, seed } => {
            if bits > 14 {
                return Err(Error::ResourceLimit(format!("dense simulation of {bits} qubits")));
            }
            if samples == 0 {
                return Err(Error::InvalidArgument("need at least one sample".into()));
            }
            let dim = 1usize << bits;
            let dense = DensePlan::new(plan)?;
            let chunks = samples.div_ceil(256);
            let parts: Vec<(Vec<f64>, Vec<f64>, Option<CMatrix>)> = (0..chunks)
                .into_par_iter()
                .map(|c| -> Result<_> {
                    let mut rng = stream_rng(seed, c as u64);
                    let mut p = vec![0.0; dim];
                    let mut p2 = vec![0.0; dim];
                    let mut rho = (bits <= DENSITY_BITS).then(|| CMatrix::zeros(dim, dim));
                    for _ in 0..256.min(samples - c * 256) {
                        let u = haar_on_subspace(&spec, &mut rng);
                        let v = dense.run(u.matrix())?;
                        for (i, z) in v.iter().enumerate() {
                            let q = z.norm_sqr();
                            p[i] += q;
                            p2[i] += q * q;
                        }
                        if let Some(r) = rho.as_mut() {
                            *r += &v * v.adjoint();
                        }
                    }
                    Ok((p, p2, rho))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = samples as f64;
            let mut p = vec![0.0; dim];
            let mut p2 = vec![0.0; dim];
            let mut rho = (bits <= DENSITY_BITS).then(|| CMatrix::zeros(dim, dim));
            for (a, b, r) in parts {
                for i in 0..dim {
                    p[i] += a[i];
                    p2[i] += b[i];
                }
                if let (Some(acc), Some(r)) = (rho.as_mut(), r) {
                    *acc += r;
                }
            }
            let mut probabilities = Vec::new();
            let mut errors = Vec::new();
            for i in 0..dim {
                if p[i] > 0.0 {
                    let mean = p[i] / n;
                    probabilities.push((i as u64, mean));
                    errors.push(((p2[i] / n - mean * mean).max(0.0) / n).sqrt());
                }
            }
            Ok(AdversaryOutcome {
                sys_bits: bits,
                probabilities,
                standard_errors: Some(errors),
                density: rho.map(|r| r.unscale(n)),
            })
        }
    }
}

/// Collision statistics of the two-query classical-distinct adversary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CollisionComparison {
    pub d: usize,
    pub samples: usize,
    /// Exact, from the path-recording state.
    pub collision_record: f64,
    /// Fraction of Haar trials whose two measured answers coincide.
    pub collision_haar: f64,
    pub standard_error: f64,
    /// `|collision_haar − collision_record|`.
    pub statistic: f64,
    /// `1/(d+1)`, the Haar collision probability.
    pub collision_haar_exact: f64,
}

/// Path-recording vs Haar for two forward queries on `|0⟩` and `|1⟩` with
/// `d = 2^n`. Haar trials draw only the two needed columns.
pub fn classical_distinct_comparison(n: usize, samples: usize, seed: u64) -> Result<CollisionComparison> {
    let d = 1usize << n;
    if d < 2 || samples == 0 {
        return Err(Error::InvalidArgument("need d ≥ 2 and samples ≥ 1".into()));
    }
    let plan = AdversaryPlan::classical_distinct(n, d, 0, 1)?;
    let st = run_plan_recording(&plan, 2)?;
    let field_w = BitField::new(2 * n, n, n)?;
    let field_a = BitField::new(2 * n, 0, n)?;
    let collision_record: f64 = st
        .sys_probabilities()
        .iter()
        .filter(|(s, _)| field_a.get(**s) == field_w.get(**s))
        .map(|(_, p)| p)
        .sum::<f64>()
        + 0.0;
    let chunks = samples.div_ceil(1000);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut hits = 0usize;
            for _ in 0..1000.min(samples - c * 1000) {
                let cols = linalg::haar_isometry(d, 2, &mut rng);
                let y1 = sample_column(&cols, 0, &mut rng);
                let y2 = sample_column(&cols, 1, &mut rng);
                hits += (y1 == y2) as usize;
            }
            hits
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(CollisionComparison {
        d,
        samples,
        collision_record,
        collision_haar: p,
        standard_error: (p * (1.0 - p) / samples as f64).sqrt(),
        statistic: (p - collision_record).abs(),
        collision_haar_exact: 1.0 / (d + 1) as f64,
    })
}

fn sample_column<R: Rng + ?Sized>(m: &CMatrix, col: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        acc += m[(i, col)].norm_sqr();
        if u < acc {
            return i;
        }
    }
    m.nrows() - 1
}
