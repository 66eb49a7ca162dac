//! Unitary circuits in deferred-measurement normal form and their channels.
//!
//! Qubit 0 is the most significant bit. An `m`-wide circuit with `n` inputs
//! prepares `m − n` leading ancillas in `|1⟩`, runs its gates and keeps the
//! trailing `n_out` wires.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMatrix, DensityMatrix, UnitaryMatrix, C64, MAX_DENSE_QUBITS, ONE, ZERO};

/// Widest register accepted by the matrix-free simulator.
pub const MAX_STATEVECTOR_QUBITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    X,
    Y,
    Z,
    H,
    S,
    T,
    Cnot,
    Cz,
    Swap,
    Toffoli,
    Matrix,
}

impl GateKind {
    pub const ALL: [GateKind; 11] = [
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::H,
        GateKind::S,
        GateKind::T,
        GateKind::Cnot,
        GateKind::Cz,
        GateKind::Swap,
        GateKind::Toffoli,
        GateKind::Matrix,
    ];

    /// Fixed arity, `None` for `MATRIX`.
    pub fn arity(self) -> Option<usize> {
        match self {
            GateKind::X | GateKind::Y | GateKind::Z | GateKind::H | GateKind::S | GateKind::T => Some(1),
            GateKind::Cnot | GateKind::Cz | GateKind::Swap => Some(2),
            GateKind::Toffoli => Some(3),
            GateKind::Matrix => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::H => "H",
            GateKind::S => "S",
            GateKind::T => "T",
            GateKind::Cnot => "CNOT",
            GateKind::Cz => "CZ",
            GateKind::Swap => "SWAP",
            GateKind::Toffoli => "TOFFOLI",
            GateKind::Matrix => "MATRIX",
        }
    }

    /// Matrix of a fixed gate in the order of its targets.
    pub fn fixed_matrix(self) -> Option<CMatrix> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m2 = |v: [C64; 4]| CMatrix::from_row_slice(2, 2, &v);
        Some(match self {
            GateKind::X => m2([ZERO, ONE, ONE, ZERO]),
            GateKind::Y => m2([ZERO, c64(0.0, -1.0), c64(0.0, 1.0), ZERO]),
            GateKind::Z => m2([ONE, ZERO, ZERO, -ONE]),
            GateKind::H => m2([c64(s, 0.0), c64(s, 0.0), c64(s, 0.0), c64(-s, 0.0)]),
            GateKind::S => m2([ONE, ZERO, ZERO, c64(0.0, 1.0)]),
            GateKind::T => m2([ONE, ZERO, ZERO, c64(s, s)]),
            GateKind::Cnot => permutation(2, |x| if x & 2 != 0 { x ^ 1 } else { x }),
            GateKind::Cz => {
                let mut m = CMatrix::identity(4, 4);
                m[(3, 3)] = -ONE;
                m
            }
            GateKind::Swap => permutation(2, |x| ((x & 1) << 1) | (x >> 1)),
            GateKind::Toffoli => permutation(3, |x| if x & 6 == 6 { x ^ 1 } else { x }),
            GateKind::Matrix => return None,
        })
    }
}

fn permutation(k: usize, f: impl Fn(usize) -> usize) -> CMatrix {
    let dim = 1 << k;
    let mut m = CMatrix::zeros(dim, dim);
    for x in 0..dim {
        m[(f(x), x)] = ONE;
    }
    m
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const MEASUREMENT_KINDS: [&str; 5] = ["MEASURE", "M", "MEASUREMENT", "RESET", "MEASURE_Z"];

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.to_ascii_uppercase();
        if MEASUREMENT_KINDS.contains(&up.as_str()) {
            return Err(Error::Parse(format!(
                "gate kind {s:?}: measurements are not allowed, defer them to the end of the circuit"
            )));
        }
        GateKind::ALL
            .into_iter()
            .find(|k| k.name() == up)
            .ok_or_else(|| Error::Parse(format!("unknown gate kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGate", into = "RawGate")]
pub struct GateOp {
    kind: GateKind,
    targets: Vec<usize>,
    matrix: CMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGate {
    kind: String,
    targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<[f64; 2]>>,
}

impl TryFrom<RawGate> for GateOp {
    type Error = Error;

    fn try_from(raw: RawGate) -> Result<Self> {
        let kind: GateKind = raw.kind.parse()?;
        match (kind, raw.matrix) {
            (GateKind::Matrix, Some(entries)) => {
                let dim = 1usize << raw.targets.len();
                if entries.len() != dim * dim {
                    return Err(Error::Parse(format!(
                        "MATRIX on {} qubits needs {} entries, found {}",
                        raw.targets.len(),
                        dim * dim,
                        entries.len()
                    )));
                }
                let m = CMatrix::from_row_iterator(dim, dim, entries.iter().map(|p| c64(p[0], p[1])));
                GateOp::matrix(raw.targets, m)
            }
            (GateKind::Matrix, None) => Err(Error::Parse("MATRIX gate without payload".into())),
            (_, Some(_)) => Err(Error::Parse(format!("{kind} gate takes no matrix"))),
            (_, None) => GateOp::new(kind, raw.targets),
        }
    }
}

impl From<GateOp> for RawGate {
    fn from(g: GateOp) -> Self {
        let matrix = (g.kind == GateKind::Matrix).then(|| {
            let dim = g.matrix.nrows();
            (0..dim).flat_map(|r| (0..dim).map(move |c| (r, c))).map(|(r, c)| [g.matrix[(r, c)].re, g.matrix[(r, c)].im]).collect()
        });
        RawGate { kind: g.kind.name().to_string(), targets: g.targets, matrix }
    }
}

fn check_distinct(targets: &[usize]) -> Result<()> {
    for (i, t) in targets.iter().enumerate() {
        if targets[..i].contains(t) {
            return Err(Error::InvalidArgument(format!("repeated target {t}")));
        }
    }
    Ok(())
}

impl GateOp {
    pub fn new(kind: GateKind, targets: Vec<usize>) -> Result<Self> {
        let matrix = kind
            .fixed_matrix()
            .ok_or_else(|| Error::InvalidArgument("MATRIX gates need an explicit unitary".into()))?;
        if Some(targets.len()) != kind.arity() {
            return Err(Error::InvalidArgument(format!("{kind} takes {:?} targets", kind.arity().unwrap_or(0))));
        }
        check_distinct(&targets)?;
        Ok(Self { kind, targets, matrix })
    }

    pub fn matrix(targets: Vec<usize>, m: CMatrix) -> Result<Self> {
        if targets.is_empty() || m.nrows() != 1 << targets.len() {
            return Err(Error::DimensionMismatch { expected: 1 << targets.len(), found: m.nrows() });
        }
        check_distinct(&targets)?;
        let m = UnitaryMatrix::try_new(m)?.into_inner();
        Ok(Self { kind: GateKind::Matrix, targets, matrix: m })
    }

    pub fn kind(&self) -> GateKind {
        self.kind
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Matrix in the order of `targets` (first target most significant).
    pub fn unitary(&self) -> &CMatrix {
        &self.matrix
    }
}

/// Applies `g` to qubits `targets` of an `nq`-qubit vector.
pub fn apply_gate(state: &mut [C64], nq: usize, targets: &[usize], g: &CMatrix) {
    let k = targets.len();
    let dim = 1usize << k;
    let shifts: Vec<usize> = targets.iter().map(|t| nq - 1 - t).collect();
    let mask: usize = shifts.iter().map(|s| 1usize << s).sum();
    let offsets: Vec<usize> = (0..dim)
        .map(|local| (0..k).filter(|j| local >> (k - 1 - j) & 1 == 1).map(|j| 1usize << shifts[j]).sum())
        .collect();
    let mut buf = vec![ZERO; dim];
    for base in 0..state.len() {
        if base & mask != 0 {
            continue;
        }
        for (b, off) in buf.iter_mut().zip(&offsets) {
            *b = state[base + off];
        }
        for (r, off) in offsets.iter().enumerate() {
            state[base + off] = (0..dim).map(|c| g[(r, c)] * buf[c]).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumCircuit {
    pub n: usize,
    pub n_out: usize,
    pub m: usize,
    pub gates: Vec<GateOp>,
}

impl QuantumCircuit {
    pub fn new(n: usize, n_out: usize, m: usize, gates: Vec<GateOp>) -> Result<Self> {
        let q = Self { n, n_out, m, gates };
        q.validate()?;
        Ok(q)
    }

    /// A single `MATRIX` gate across all `m` wires.
    pub fn from_unitary(n: usize, n_out: usize, u: &UnitaryMatrix) -> Result<Self> {
        let m = u.dim().trailing_zeros() as usize;
        if 1 << m != u.dim() {
            return Err(Error::InvalidArgument("unitary dimension is not a power of two".into()));
        }
        Self::new(n, n_out, m, vec![GateOp::matrix((0..m).collect(), u.matrix().clone())?])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n > self.m || self.n_out > self.m {
            return Err(Error::InvalidArgument(format!(
                "need n ≤ m and n_out ≤ m, got n = {}, n_out = {}, m = {}",
                self.n, self.n_out, self.m
            )));
        }
        if self.m > MAX_STATEVECTOR_QUBITS {
            return Err(Error::ResourceLimit(format!("{} qubits", self.m)));
        }
        for g in &self.gates {
            if let Some(t) = g.targets.iter().find(|t| **t >= self.m) {
                return Err(Error::InvalidArgument(format!("target {t} outside width {}", self.m)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let q: Self = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        q.validate()?;
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuit serialises")
    }

    pub fn size(&self) -> usize {
        self.gates.len()
    }

    pub fn ancillas(&self) -> usize {
        self.m - self.n
    }

    /// Runs the gates on an `m`-qubit state vector.
    pub fn simulate(&self, state: &mut [C64]) -> Result<()> {
        if state.len() != 1 << self.m {
            return Err(Error::DimensionMismatch { expected: 1 << self.m, found: state.len() });
        }
        for g in &self.gates {
            apply_gate(state, self.m, &g.targets, &g.matrix);
        }
        Ok(())
    }
}

fn check_dense(m: usize) -> Result<()> {
    if m > MAX_DENSE_QUBITS {
        return Err(Error::ResourceLimit(format!("dense {m}-qubit operator exceeds {MAX_DENSE_QUBITS}")));
    }
    Ok(())
}

/// Product of the embedded gates, first gate rightmost.
pub fn compose_unitary(q: &QuantumCircuit) -> Result<UnitaryMatrix> {
    q.validate()?;
    check_dense(q.m)?;
    let dim = 1usize << q.m;
    let mut u = CMatrix::identity(dim, dim);
    for g in &q.gates {
        if g.targets.iter().copied().eq(0..q.m) {
            u = &g.matrix * u;
            continue;
        }
        for j in 0..dim {
            apply_gate(u.column_mut(j).as_mut_slice(), q.m, &g.targets, &g.matrix);
        }
    }
    UnitaryMatrix::try_new(u)
}

/// `|1^c⟩⟨1^c| ⊗ G + (I − |1^c⟩⟨1^c|) ⊗ I`.
pub fn controlled_matrix(c: usize, g: &CMatrix) -> CMatrix {
    let k = g.nrows();
    let dim = k << c;
    let mut m = CMatrix::identity(dim, dim);
    m.view_mut((dim - k, dim - k), (k, k)).copy_from(g);
    m
}

/// Width `c + m`; every gate gains `c` leading controls on the new wires.
pub fn controlled_lift(q: &QuantumCircuit, c: usize) -> Result<QuantumCircuit> {
    q.validate()?;
    if c == 0 {
        return Ok(q.clone());
    }
    check_dense(q.m + c)?;
    let gates = q
        .gates
        .iter()
        .map(|g| {
            let targets = (0..c).chain(g.targets.iter().map(|t| t + c)).collect();
            GateOp::matrix(targets, controlled_matrix(c, &g.matrix))
        })
        .collect::<Result<Vec<_>>>()?;
    QuantumCircuit::new(q.n, q.n_out, q.m + c, gates)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelRepr {
    /// `ρ ↦ Tr_{leading m − out}[V (|1⟩⟨1|^{⊗ ancilla_ones} ⊗ ρ) V†]`.
    Dilation { v: UnitaryMatrix, ancilla_ones: usize },
    /// `J = Σ_{ij} |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)`, input factor first.
    Choi(CMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    in_qubits: usize,
    out_qubits: usize,
    repr: ChannelRepr,
}

const CHANNEL_TOL: f64 = 1e-9;

impl Channel {
    pub fn from_dilation(v: UnitaryMatrix, in_qubits: usize, out_qubits: usize) -> Result<Self> {
        let m = v.dim().trailing_zeros() as usize;
        if 1 << m != v.dim() || in_qubits > m || out_qubits > m {
            return Err(Error::InvalidArgument(format!(
                "dilation of dim {} cannot map {in_qubits} to {out_qubits} qubits",
                v.dim()
            )));
        }
        Ok(Self { in_qubits, out_qubits, repr: ChannelRepr::Dilation { v, ancilla_ones: m - in_qubits } })
    }

    /// Validates complete positivity and trace preservation within 1e−9.
    pub fn from_choi(j: CMatrix, in_qubits: usize, out_qubits: usize) -> Result<Self> {
        let (di, dout) = (1usize << in_qubits, 1usize << out_qubits);
        if j.nrows() != di * dout || j.ncols() != di * dout {
            return Err(Error::DimensionMismatch { expected: di * dout, found: j.nrows() });
        }
        let herm = linalg::hermiticity_defect(&j);
        if herm > CHANNEL_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let low = j.clone().symmetric_eigen().eigenvalues.min();
        if low < -CHANNEL_TOL {
            return Err(Error::NotDensity(format!("Choi matrix has eigenvalue {low}")));
        }
        let mut tp = 0.0f64;
        for i in 0..di {
            for k in 0..di {
                let tr: C64 = (0..dout).map(|a| j[(i * dout + a, k * dout + a)]).sum();
                let want = if i == k { ONE } else { ZERO };
                tp = tp.max((tr - want).norm());
            }
        }
        if tp > CHANNEL_TOL {
            return Err(Error::InvalidArgument(format!("Choi matrix is not trace preserving ({tp:.2e})")));
        }
        Ok(Self { in_qubits, out_qubits, repr: ChannelRepr::Choi(j) })
    }

    pub fn in_qubits(&self) -> usize {
        self.in_qubits
    }

    pub fn out_qubits(&self) -> usize {
        self.out_qubits
    }

    pub fn repr(&self) -> &ChannelRepr {
        &self.repr
    }

    /// Kraus operators `K_e` with `K_e[a, i] = V[(e, a), (1…1, i)]`.
    fn kraus(v: &UnitaryMatrix, ancilla_ones: usize, in_qubits: usize, out_qubits: usize) -> Vec<CMatrix> {
        let (di, dout) = (1usize << in_qubits, 1usize << out_qubits);
        let env = v.dim() / dout;
        let ones = ((1usize << ancilla_ones) - 1) << in_qubits;
        (0..env)
            .map(|e| CMatrix::from_fn(dout, di, |a, i| v.matrix()[(e * dout + a, ones | i)]))
            .collect()
    }

    pub fn choi(&self) -> CMatrix {
        match &self.repr {
            ChannelRepr::Choi(j) => j.clone(),
            ChannelRepr::Dilation { v, ancilla_ones } => {
                let (di, dout) = (1usize << self.in_qubits, 1usize << self.out_qubits);
                let mut j = CMatrix::zeros(di * dout, di * dout);
                for k in Self::kraus(v, *ancilla_ones, self.in_qubits, self.out_qubits) {
                    let vec = linalg::CVector::from_fn(di * dout, |r, _| k[(r % dout, r / dout)]);
                    j += &vec * vec.adjoint();
                }
                j
            }
        }
    }

    /// `Φ(ρ)` as a raw matrix (no validation of `ρ`).
    pub fn apply_matrix(&self, rho: &CMatrix) -> Result<CMatrix> {
        let (di, dout) = (1usize << self.in_qubits, 1usize << self.out_qubits);
        if rho.nrows() != di || rho.ncols() != di {
            return Err(Error::DimensionMismatch { expected: di, found: rho.nrows() });
        }
        Ok(match &self.repr {
            ChannelRepr::Dilation { v, ancilla_ones } => {
                let mut out = CMatrix::zeros(dout, dout);
                for k in Self::kraus(v, *ancilla_ones, self.in_qubits, self.out_qubits) {
                    out += &k * rho * k.adjoint();
                }
                out
            }
            ChannelRepr::Choi(j) => CMatrix::from_fn(dout, dout, |a, b| {
                let mut s = ZERO;
                for i in 0..di {
                    for k in 0..di {
                        s += rho[(i, k)] * j[(i * dout + a, k * dout + b)];
                    }
                }
                s
            }),
        })
    }
}

pub fn channel_of(q: &QuantumCircuit) -> Result<Channel> {
    Channel::from_dilation(compose_unitary(q)?, q.n, q.n_out)
}

pub fn channel_apply(phi: &Channel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let out = phi.apply_matrix(rho.matrix())?;
    DensityMatrix::try_new((&out + out.adjoint()).scale(0.5))
}

/// `‖J(Φ0) − J(Φ1)‖₁ / 2^n`, in `[0, 2]`.
pub fn choi_distance(a: &Channel, b: &Channel) -> Result<f64> {
    if a.in_qubits != b.in_qubits || a.out_qubits != b.out_qubits {
        return Err(Error::InvalidArgument(format!(
            "signatures differ: {}→{} vs {}→{}",
            a.in_qubits, a.out_qubits, b.in_qubits, b.out_qubits
        )));
    }
    Ok(linalg::trace_norm(&(a.choi() - b.choi())) / (1u64 << a.in_qubits) as f64)
}

/// Random circuit of `s` gates drawn from the fixed gate set and random
/// one- and two-qubit `MATRIX` gates.
pub fn random_circuit<R: Rng + ?Sized>(n: usize, n_out: usize, m: usize, s: usize, rng: &mut R) -> Result<QuantumCircuit> {
    let mut gates = Vec::with_capacity(s);
    for _ in 0..s {
        let kinds: Vec<GateKind> = GateKind::ALL.into_iter().filter(|k| k.arity().unwrap_or(1) <= m).collect();
        let kind = kinds[rng.random_range(0..kinds.len())];
        let arity = kind.arity().unwrap_or_else(|| rng.random_range(1..=m.min(2)));
        let mut wires: Vec<usize> = (0..m).collect();
        for i in 0..arity {
            let j = rng.random_range(i..m);
            wires.swap(i, j);
        }
        let targets = wires[..arity].to_vec();
        gates.push(if kind == GateKind::Matrix {
            GateOp::matrix(targets, linalg::haar_unitary(1 << arity, rng).into_inner())?
        } else {
            GateOp::new(kind, targets)?
        });
    }
    QuantumCircuit::new(n, n_out, m, gates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, max_abs_diff, random_density, stream_rng};

    fn gate(kind: GateKind, t: &[usize]) -> GateOp {
        GateOp::new(kind, t.to_vec()).unwrap()
    }

    #[test]
    fn empty_circuit_is_identity() {
        let q = QuantumCircuit::new(2, 2, 2, vec![]).unwrap();
        assert_eq!(compose_unitary(&q).unwrap().matrix(), &CMatrix::identity(4, 4));
    }

    #[test]
    fn single_x() {
        let q = QuantumCircuit::new(1, 1, 1, vec![gate(GateKind::X, &[0])]).unwrap();
        assert_eq!(compose_unitary(&q).unwrap().matrix(), &GateKind::X.fixed_matrix().unwrap());
    }

    #[test]
    fn bell_state() {
        let q = QuantumCircuit::new(2, 2, 2, vec![gate(GateKind::H, &[0]), gate(GateKind::Cnot, &[0, 1])]).unwrap();
        let u = compose_unitary(&q).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let col = u.matrix().column(0);
        let want = [s, 0.0, 0.0, s];
        for i in 0..4 {
            assert!((col[i] - c64(want[i], 0.0)).norm() < 1e-15);
        }
    }

    // Oracle: embedding by Kronecker products with explicit swaps.
    #[test]
    fn gate_embedding_matches_kron() {
        let mut rng = stream_rng(31, 0);
        let g = linalg::haar_unitary(4, &mut rng).into_inner();
        let i2 = CMatrix::identity(2, 2);
        let q = QuantumCircuit::new(3, 3, 3, vec![GateOp::matrix(vec![2, 1], g.clone()).unwrap()]).unwrap();
        let u = compose_unitary(&q).unwrap();
        let swap = GateKind::Swap.fixed_matrix().unwrap();
        let s02 = kron(&swap, &i2) * kron(&i2, &swap) * kron(&swap, &i2);
        let want = &s02 * kron(&g, &i2) * &s02;
        assert!(max_abs_diff(u.matrix(), &want) < 1e-14);
    }

    #[test]
    fn swap_example_outputs_constant_one() {
        let q = QuantumCircuit::new(1, 1, 2, vec![gate(GateKind::Swap, &[0, 1])]).unwrap();
        let phi = channel_of(&q).unwrap();
        let mut rng = stream_rng(32, 0);
        for _ in 0..5 {
            let out = channel_apply(&phi, &random_density(2, &mut rng)).unwrap();
            assert!(max_abs_diff(out.matrix(), DensityMatrix::basis(2, 1).unwrap().matrix()) < 1e-14);
        }
    }

    // Oracle: Choi matrix built from Φ(|i⟩⟨j|) = X|i⟩⟨j|X by hand.
    #[test]
    fn cnot_from_ancilla_is_x_conjugation() {
        let q = QuantumCircuit::new(1, 1, 2, vec![gate(GateKind::Cnot, &[0, 1])]).unwrap();
        let j = channel_of(&q).unwrap().choi();
        let mut want = CMatrix::zeros(4, 4);
        for i in 0..2 {
            for k in 0..2 {
                want[(i * 2 + (1 - i), k * 2 + (1 - k))] = ONE;
            }
        }
        assert!(max_abs_diff(&j, &want) < 1e-15);
    }

    #[test]
    fn identity_channel_and_distance_examples() {
        let id = channel_of(&QuantumCircuit::new(1, 1, 1, vec![]).unwrap()).unwrap();
        let x = channel_of(&QuantumCircuit::new(1, 1, 1, vec![gate(GateKind::X, &[0])]).unwrap()).unwrap();
        assert_eq!(choi_distance(&id, &id).unwrap(), 0.0);
        assert!((choi_distance(&id, &x).unwrap() - 2.0).abs() < 1e-12);
        let rho = random_density(2, &mut stream_rng(33, 0));
        assert!(max_abs_diff(channel_apply(&id, &rho).unwrap().matrix(), rho.matrix()) < 1e-15);
        let two = channel_of(&QuantumCircuit::new(2, 1, 2, vec![]).unwrap()).unwrap();
        assert!(choi_distance(&id, &two).is_err());
    }

    #[test]
    fn apply_matches_choi_contraction() {
        let mut rng = stream_rng(34, 0);
        for _ in 0..10 {
            let q = random_circuit(2, 1, 3, 8, &mut rng).unwrap();
            let phi = channel_of(&q).unwrap();
            let via_choi = Channel::from_choi(phi.choi(), 2, 1).unwrap();
            let rho = random_density(4, &mut rng);
            let a = channel_apply(&phi, &rho).unwrap();
            let b = channel_apply(&via_choi, &rho).unwrap();
            assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-9);
        }
    }

    // Oracle: full statevector evolution of |1…1⟩⟨1…1| ⊗ ρ followed by a
    // partial trace over the leading wires.
    #[test]
    fn channel_matches_dense_partial_trace() {
        let mut rng = stream_rng(35, 0);
        for _ in 0..10 {
            let q = random_circuit(1, 2, 3, 6, &mut rng).unwrap();
            let u = compose_unitary(&q).unwrap();
            let rho = random_density(2, &mut rng);
            let anc = DensityMatrix::basis(4, 3).unwrap();
            let big = u.matrix() * kron(anc.matrix(), rho.matrix()) * u.matrix().adjoint();
            let want = linalg::partial_trace_leading(&big, 3, 2).unwrap();
            let got = channel_apply(&channel_of(&q).unwrap(), &rho).unwrap();
            assert!(max_abs_diff(got.matrix(), &want) < 1e-12);
        }
    }

    #[test]
    fn lift_examples() {
        let x = QuantumCircuit::new(1, 1, 1, vec![gate(GateKind::X, &[0])]).unwrap();
        assert_eq!(controlled_lift(&x, 0).unwrap(), x);
        let cx = compose_unitary(&controlled_lift(&x, 1).unwrap()).unwrap();
        assert!(max_abs_diff(cx.matrix(), &GateKind::Cnot.fixed_matrix().unwrap()) < 1e-15);
        let h = QuantumCircuit::new(1, 1, 1, vec![gate(GateKind::H, &[0])]).unwrap();
        let ch = compose_unitary(&controlled_lift(&h, 2).unwrap()).unwrap();
        let mut want = CMatrix::identity(8, 8);
        want.view_mut((6, 6), (2, 2)).copy_from(&GateKind::H.fixed_matrix().unwrap());
        assert!(max_abs_diff(ch.matrix(), &want) < 1e-15);
    }

    #[test]
    fn measurement_rejected_at_parse() {
        let s = r#"{"n":1,"n_out":1,"m":1,"gates":[{"kind":"MEASURE","targets":[0]}]}"#;
        let e = QuantumCircuit::from_json(s).unwrap_err();
        assert!(e.to_string().contains("measurement"));
        let s = r#"{"n":1,"n_out":1,"m":1,"gates":[{"kind":"H","targets":[1]}]}"#;
        assert!(QuantumCircuit::from_json(s).is_err());
        let s = r#"{"n":1,"n_out":1,"m":2,"gates":[{"kind":"CNOT","targets":[1,1]}]}"#;
        assert!(QuantumCircuit::from_json(s).is_err());
        let s = r#"{"n":1,"n_out":1,"m":1,"gates":[{"kind":"MATRIX","targets":[0],"matrix":[[1,0],[1,0],[0,0],[1,0]]}]}"#;
        assert!(QuantumCircuit::from_json(s).is_err());
    }

    #[test]
    fn json_round_trip() {
        let q = random_circuit(2, 1, 3, 12, &mut stream_rng(36, 0)).unwrap();
        let back = QuantumCircuit::from_json(&q.to_json()).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn width_cap_for_dense_operations() {
        let q = QuantumCircuit::new(13, 13, 13, vec![]).unwrap();
        assert!(matches!(compose_unitary(&q), Err(Error::ResourceLimit(_))));
        let mut v = vec![ZERO; 1 << 13];
        v[0] = ONE;
        let q = QuantumCircuit::new(13, 13, 13, vec![gate(GateKind::X, &[12])]).unwrap();
        q.simulate(&mut v).unwrap();
        assert_eq!(v[1], ONE);
    }
}
