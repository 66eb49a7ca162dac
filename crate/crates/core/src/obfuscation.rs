//! Obfuscation pipeline: `QObf`/`QEval` over a unitary-obfuscator backend,
//! the `μ^unif` sampler on unitary extensions, and the ideal functionality.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::{compose_unitary, controlled_lift, Channel, GateOp, QuantumCircuit};
use crate::ensembles::{spspru_build, SpsPruKey};
use crate::error::{Error, Result};
use crate::linalg::{
    self, c64, haar_on_subspace, haar_unitary, kron, stream_rng, CMatrix, CVector, DensityMatrix,
    SubspaceSpec, UnitaryMatrix, MAX_DENSE_QUBITS, ONE,
};
use crate::path_recording::{
    execute_plan, AdversaryPlan, BitField, Direction, PathRecordingOracle, RelationState,
};
use crate::prp::OracleMode;

/// `𝕡 = (n, n′, m, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitParameter {
    pub n: usize,
    pub n_out: usize,
    pub m: usize,
    pub s: usize,
}

impl CircuitParameter {
    pub fn new(n: usize, n_out: usize, m: usize, s: usize) -> Result<Self> {
        if n > m || n_out > m {
            return Err(Error::InvalidArgument(format!("need n, n_out ≤ m, got ({n}, {n_out}, {m}, {s})")));
        }
        Ok(Self { n, n_out, m, s })
    }

    pub fn of(q: &QuantumCircuit) -> Self {
        Self { n: q.n, n_out: q.n_out, m: q.m, s: q.size() }
    }

    /// `m′ = λ + m`.
    pub fn m_prime(&self, lambda: usize) -> usize {
        lambda + self.m
    }

    /// Active dimension `2^{m′} − 2^n` of the subspace-preserving layer.
    pub fn active_dim(&self, lambda: usize) -> Result<usize> {
        let mp = self.m_prime(lambda);
        if mp > 62 {
            return Err(Error::ResourceLimit(format!("{mp} qubits")));
        }
        let d = (1usize << mp) - (1usize << self.n);
        if d == 0 {
            return Err(Error::InvalidArgument("λ = 0 with n = m leaves no active block".into()));
        }
        Ok(d)
    }
}

/// Quantum auxiliary state `ψ̃` of a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState(pub CVector);

/// Classical part of an obfuscated unitary. Opaque outside the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleHandle {
    payload: UnitaryMatrix,
    qubits: usize,
}

impl OracleHandle {
    pub fn qubits(&self) -> usize {
        self.qubits
    }
}

pub trait UnitaryObfuscatorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn obfuscate(&self, lambda: usize, circuit: &QuantumCircuit) -> Result<(AuxState, OracleHandle)>;

    /// Returns the output and the recovered auxiliary state.
    fn eval(&self, oracle: &OracleHandle, aux: AuxState, state: &CVector) -> Result<(CVector, AuxState)>;

    /// Declared functionality error.
    fn tolerance(&self) -> f64;
}

/// Stores the unitary in the clear and applies it exactly. No security.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransparentBackend;

impl UnitaryObfuscatorBackend for TransparentBackend {
    fn name(&self) -> &str {
        "transparent"
    }

    fn obfuscate(&self, _lambda: usize, circuit: &QuantumCircuit) -> Result<(AuxState, OracleHandle)> {
        let payload = compose_unitary(circuit)?;
        let mut aux = CVector::zeros(2);
        aux[0] = ONE;
        Ok((AuxState(aux), OracleHandle { payload, qubits: circuit.m }))
    }

    fn eval(&self, oracle: &OracleHandle, aux: AuxState, state: &CVector) -> Result<(CVector, AuxState)> {
        if state.len() != oracle.payload.dim() {
            return Err(Error::DimensionMismatch { expected: oracle.payload.dim(), found: state.len() });
        }
        Ok((oracle.payload.matrix() * state, aux))
    }

    fn tolerance(&self) -> f64 {
        1e-12
    }
}

pub fn reference_backend() -> Arc<dyn UnitaryObfuscatorBackend> {
    Arc::new(TransparentBackend)
}

pub fn backend_by_name(name: &str) -> Result<Arc<dyn UnitaryObfuscatorBackend>> {
    match name {
        "transparent" | "reference" => Ok(reference_backend()),
        _ => Err(Error::InvalidArgument(format!("unknown backend {name:?}"))),
    }
}

#[derive(Clone)]
pub struct ObfuscationProgram {
    pub parameter: CircuitParameter,
    pub lambda: usize,
    pub m_prime: usize,
    pub spec: SubspaceSpec,
    aux: AuxState,
    oracle: OracleHandle,
    backend: Arc<dyn UnitaryObfuscatorBackend>,
    keys: (SpsPruKey, SpsPruKey),
    evaluations: usize,
}

/// JSON summary of a program without its secret material.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProgramManifest {
    pub backend: String,
    pub lambda: usize,
    pub parameter: CircuitParameter,
    pub m_prime: usize,
    pub spec: SubspaceSpec,
    pub aux_qubits: usize,
    pub oracle_qubits: usize,
}

impl std::fmt::Debug for ObfuscationProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObfuscationProgram")
            .field("parameter", &self.parameter)
            .field("lambda", &self.lambda)
            .field("spec", &self.spec)
            .field("backend", &self.backend.name())
            .finish_non_exhaustive()
    }
}

impl ObfuscationProgram {
    pub fn aux(&self) -> &AuxState {
        &self.aux
    }

    pub fn oracle(&self) -> &OracleHandle {
        &self.oracle
    }

    /// Keys `(k, k′)` drawn by `qobf`.
    pub fn keys(&self) -> (SpsPruKey, SpsPruKey) {
        self.keys
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// The wrapped unitary `Q′`, exposed by the transparent backend only.
    pub fn transparent_unitary(&self) -> Result<&UnitaryMatrix> {
        if self.backend.name() != "transparent" {
            return Err(Error::Backend("backend does not expose its unitary".into()));
        }
        Ok(&self.oracle.payload)
    }

    pub fn manifest(&self) -> ProgramManifest {
        ProgramManifest {
            backend: self.backend.name().to_string(),
            lambda: self.lambda,
            parameter: self.parameter,
            m_prime: self.m_prime,
            spec: self.spec,
            aux_qubits: self.aux.0.len().trailing_zeros() as usize,
            oracle_qubits: self.oracle.qubits,
        }
    }
}

/// `Q′ = (PRU_{k′} ⊗ I_{n′}) ∘ ctrl_{1^λ}-U_Q ∘ spsPRU_k` as a circuit of
/// width `m′`, with the keyed layers as explicit `MATRIX` gates.
pub fn assemble_wrapped_circuit(
    lambda: usize,
    q: &QuantumCircuit,
    k: &SpsPruKey,
    k_prime: &SpsPruKey,
    mode: OracleMode,
) -> Result<QuantumCircuit> {
    let p = CircuitParameter::of(q);
    let mp = p.m_prime(lambda);
    if mp > MAX_DENSE_QUBITS {
        return Err(Error::ResourceLimit(format!("λ + m = {mp} exceeds {MAX_DENSE_QUBITS}")));
    }
    let spec = SubspaceSpec::new(mp, p.active_dim(lambda)?)?;
    let sps = spspru_build(&spec, k, mode)?.to_unitary()?;
    let mut gates = vec![GateOp::matrix((0..mp).collect(), sps.into_inner())?];
    gates.extend(controlled_lift(q, lambda)?.gates);
    let lead = mp - p.n_out;
    if lead > 0 {
        let pru = spspru_build(&SubspaceSpec::full(lead)?, k_prime, mode)?.to_unitary()?;
        gates.push(GateOp::matrix((0..lead).collect(), pru.into_inner())?);
    }
    QuantumCircuit::new(p.n, p.n_out, mp, gates)
}

pub fn qobf<R: Rng + ?Sized>(
    lambda: usize,
    q: &QuantumCircuit,
    backend: Arc<dyn UnitaryObfuscatorBackend>,
    mode: OracleMode,
    rng: &mut R,
) -> Result<ObfuscationProgram> {
    q.validate()?;
    let parameter = CircuitParameter::of(q);
    let m_prime = parameter.m_prime(lambda);
    let spec = SubspaceSpec::new(m_prime, parameter.active_dim(lambda)?)?;
    let k = SpsPruKey::random(rng);
    let k_prime = SpsPruKey::random(rng);
    let wrapped = assemble_wrapped_circuit(lambda, q, &k, &k_prime, mode)?;
    let (aux, oracle) = backend.obfuscate(lambda, &wrapped)?;
    Ok(ObfuscationProgram { parameter, lambda, m_prime, spec, aux, oracle, backend, keys: (k, k_prime), evaluations: 0 })
}

/// `|1^a⟩ ⊗ ψ`.
fn with_ancilla_ones(psi: &CVector, ancillas: usize) -> CVector {
    let mut v = CVector::zeros(psi.len() << ancillas);
    let base = ((1usize << ancillas) - 1) * psi.len();
    v.rows_mut(base, psi.len()).copy_from(psi);
    v
}

/// Keeps the trailing `keep` qubits of `|v⟩⟨v|`.
fn trailing_marginal(v: &CVector, keep: usize) -> CMatrix {
    let dk = 1usize << keep;
    let env = v.len() / dk;
    CMatrix::from_fn(dk, dk, |a, b| (0..env).map(|e| v[e * dk + a] * v[e * dk + b].conj()).sum())
}

/// One pure-state evaluation; the recovered aux replaces the stored one.
pub fn qeval_pure(program: &mut ObfuscationProgram, psi: &CVector) -> Result<CMatrix> {
    let p = program.parameter;
    if psi.len() != 1 << p.n {
        return Err(Error::DimensionMismatch { expected: 1 << p.n, found: psi.len() });
    }
    let input = with_ancilla_ones(psi, program.m_prime - p.n);
    let before = program.aux.clone();
    let (out, aux) = program.backend.eval(&program.oracle, program.aux.clone(), &input)?;
    let drift = (&aux.0 - &before.0).camax();
    if aux.0.len() != before.0.len() || drift > 1e-9 {
        return Err(Error::Backend(format!("auxiliary state not recovered (drift {drift:.2e})")));
    }
    program.aux = aux;
    program.evaluations += 1;
    Ok(trailing_marginal(&out, p.n_out))
}

/// Evaluates on a mixed input through its eigen-ensemble.
pub fn qeval(program: &mut ObfuscationProgram, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let p = program.parameter;
    if rho.dim() != 1 << p.n {
        return Err(Error::DimensionMismatch { expected: 1 << p.n, found: rho.dim() });
    }
    let eig = rho.matrix().clone().symmetric_eigen();
    let dout = 1usize << p.n_out;
    let mut out = CMatrix::zeros(dout, dout);
    for (k, &w) in eig.eigenvalues.iter().enumerate() {
        if w.abs() < 1e-15 {
            continue;
        }
        let v = eig.eigenvectors.column(k).into_owned();
        out += qeval_pure(program, &v)?.scale(w);
    }
    DensityMatrix::try_new((&out + out.adjoint()).scale(0.5))
}

/// Choi matrix of the evaluated program, assembled from `2^{2n}` density
/// inputs by polarisation: `|i⟩⟨j| = P + iY − (1+i)/2 (|i⟩⟨i| + |j⟩⟨j|)`.
pub fn qeval_channel(program: &mut ObfuscationProgram) -> Result<Channel> {
    let p = program.parameter;
    let (di, dout) = (1usize << p.n, 1usize << p.n_out);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut diag = Vec::with_capacity(di);
    for i in 0..di {
        let mut e = CVector::zeros(di);
        e[i] = ONE;
        diag.push(qeval_pure(program, &e)?);
    }
    let mut j = CMatrix::zeros(di * dout, di * dout);
    for i in 0..di {
        for k in 0..di {
            let block = if i == k {
                diag[i].clone()
            } else {
                let mut plus = CVector::zeros(di);
                plus[i] = c64(s, 0.0);
                plus[k] = c64(s, 0.0);
                let mut yv = plus.clone();
                yv[k] = c64(0.0, s);
                let pp = qeval_pure(program, &plus)?;
                let py = qeval_pure(program, &yv)?;
                pp + py * c64(0.0, 1.0) - (&diag[i] + &diag[k]) * c64(0.5, 0.5)
            };
            j.view_mut((i * dout, k * dout), (dout, dout)).copy_from(&block);
        }
    }
    Channel::from_choi((&j + j.adjoint()).scale(0.5), p.n, p.n_out)
}

/// `W = (U ⊗ I_{n′}) V U′`, `U ∼ Haar(2^{m−n′})`, `U′` Haar on
/// `span{|x⟩ : x < 2^m − 2^n}` and the identity on the ancilla-ones sector.
pub fn mu_unif_sample<R: Rng + ?Sized>(v: &UnitaryMatrix, n: usize, n_out: usize, rng: &mut R) -> Result<UnitaryMatrix> {
    let m = v.dim().trailing_zeros() as usize;
    if 1 << m != v.dim() || n > m || n_out > m {
        return Err(Error::InvalidArgument(format!("dim {} inconsistent with n = {n}, n_out = {n_out}", v.dim())));
    }
    let left = kron(haar_unitary(1 << (m - n_out), rng).matrix(), &CMatrix::identity(1 << n_out, 1 << n_out));
    let d = (1usize << m) - (1usize << n);
    let right = if d == 0 {
        CMatrix::identity(v.dim(), v.dim())
    } else {
        haar_on_subspace(&SubspaceSpec::new(m, d)?, rng).into_inner()
    };
    UnitaryMatrix::try_new(left * v.matrix() * right)
}

/// Choi distance between the channel extended by `w` and `phi`.
pub fn extension_defect(w: &UnitaryMatrix, n: usize, n_out: usize, phi: &Channel) -> Result<f64> {
    crate::circuits::choi_distance(&Channel::from_dilation(w.clone(), n, n_out)?, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum IdealMode {
    PathRecording { t_max: usize },
    MonteCarloHaar { seed: u64 },
    ExactSampledW { seed: u64 },
}

impl IdealMode {
    pub fn parse(name: &str, seed: u64, t_max: usize) -> Result<Self> {
        match name {
            "path-recording" => Ok(Self::PathRecording { t_max }),
            "monte-carlo-haar" | "monte-carlo" => Ok(Self::MonteCarloHaar { seed }),
            "exact-sampled-w" => Ok(Self::ExactSampledW { seed }),
            _ => Err(Error::InvalidArgument(format!("unknown ideal mode {name:?}"))),
        }
    }
}

enum IdealState {
    Recording { outer: PathRecordingOracle, inner: PathRecordingOracle, t_max: usize },
    Sampled { w: UnitaryMatrix },
}

/// Stateful ideal functionality; queries must be serialised.
pub struct IdealFunctionality {
    lambda: usize,
    parameter: CircuitParameter,
    mode: IdealMode,
    lifted: UnitaryMatrix,
    state: IdealState,
    queries: usize,
}

/// Per-mode caps on `λ + m`.
pub const MAX_IDEAL_RECORDING_QUBITS: usize = 8;
pub const MAX_IDEAL_SAMPLED_QUBITS: usize = 10;

pub fn ideal_init(lambda: usize, q: &QuantumCircuit, mode: IdealMode) -> Result<IdealFunctionality> {
    q.validate()?;
    let parameter = CircuitParameter::of(q);
    let width = parameter.m_prime(lambda);
    let cap = match mode {
        IdealMode::PathRecording { .. } => MAX_IDEAL_RECORDING_QUBITS,
        _ => MAX_IDEAL_SAMPLED_QUBITS,
    };
    if width > cap {
        return Err(Error::ResourceLimit(format!("λ + m = {width} exceeds {cap} in this mode")));
    }
    let d = parameter.active_dim(lambda)?;
    let lifted = compose_unitary(&controlled_lift(q, lambda)?)?;
    let lead = width - parameter.n_out;
    let state = match mode {
        IdealMode::PathRecording { t_max } => IdealState::Recording {
            outer: PathRecordingOracle::new(d as u64, BitField { shift: 0, width }, 0)?,
            inner: PathRecordingOracle::new(1u64 << lead, BitField { shift: parameter.n_out, width: lead.max(1) }, 1)?,
            t_max,
        },
        IdealMode::MonteCarloHaar { seed } => {
            let mut rng = stream_rng(seed, 0x4944_4541);
            let r = haar_on_subspace(&SubspaceSpec::new(width, d)?, &mut rng);
            let r2 = haar_unitary(1 << lead, &mut rng);
            let outer = kron(r2.matrix(), &CMatrix::identity(1 << parameter.n_out, 1 << parameter.n_out));
            IdealState::Sampled { w: UnitaryMatrix::try_new(outer * lifted.matrix() * r.matrix())? }
        }
        IdealMode::ExactSampledW { seed } => {
            let mut rng = stream_rng(seed, 0x4944_4541);
            IdealState::Sampled { w: mu_unif_sample(&lifted, parameter.n, parameter.n_out, &mut rng)? }
        }
    };
    Ok(IdealFunctionality { lambda, parameter, mode, lifted, state, queries: 0 })
}

impl IdealFunctionality {
    /// `(λ, 𝕡)`.
    pub fn advertised(&self) -> (usize, CircuitParameter) {
        (self.lambda, self.parameter)
    }

    pub fn mode(&self) -> IdealMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        self.parameter.m_prime(self.lambda)
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    /// The fixed `W` of a sampled instance.
    pub fn sampled_unitary(&self) -> Option<&UnitaryMatrix> {
        match &self.state {
            IdealState::Sampled { w } => Some(w),
            IdealState::Recording { .. } => None,
        }
    }

    /// Joint state `ψ ⊗ |∅⟩^{⊗2}` for a vector on the query register
    /// followed by `log2(len) − (λ+m)` reference qubits.
    pub fn prepare(&self, psi: &CVector) -> Result<RelationState> {
        let t_max = match self.state {
            IdealState::Recording { t_max, .. } => t_max,
            IdealState::Sampled { .. } => 0,
        };
        let st = RelationState::from_sys_vector(psi, 2, t_max)?;
        if st.sys_bits() < self.width() {
            return Err(Error::DimensionMismatch { expected: 1 << self.width(), found: psi.len() });
        }
        Ok(st)
    }

    /// Query with `b = +1` (`forward = true`) or `b = −1` on the leading
    /// `λ + m` qubits of the joint state.
    pub fn query(&mut self, forward: bool, st: &RelationState) -> Result<RelationState> {
        let width = self.width();
        if st.sys_bits() < width || st.slots() != 2 {
            return Err(Error::DimensionMismatch { expected: width, found: st.sys_bits() });
        }
        let shift = st.sys_bits() - width;
        let out = match &self.state {
            IdealState::Recording { outer, inner, t_max } => {
                if self.queries >= *t_max {
                    return Err(Error::QueryBudgetExhausted(*t_max));
                }
                let outer = PathRecordingOracle { field: BitField { shift, width }, ..*outer };
                let lead = inner.field.width;
                let inner = PathRecordingOracle { field: BitField { shift: shift + self.parameter.n_out, width: lead }, ..*inner };
                let leads = width > self.parameter.n_out;
                if forward {
                    let a = outer.forward(st)?;
                    let b = a.apply_sys_unitary(0, &self.embed(st.sys_bits(), self.lifted.matrix())?)?;
                    if leads { inner.forward(&b)? } else { b }
                } else {
                    let a = if leads { inner.inverse(st)? } else { st.clone() };
                    let b = a.apply_sys_unitary(0, &self.embed(st.sys_bits(), &self.lifted.matrix().adjoint())?)?;
                    outer.inverse(&b)?
                }
            }
            IdealState::Sampled { w } => {
                let g = if forward { w.matrix().clone() } else { w.matrix().adjoint() };
                st.apply_sys_unitary(0, &self.embed(st.sys_bits(), &g)?)?
            }
        };
        self.queries += 1;
        Ok(out)
    }

    /// `g` on the leading `λ+m` qubits, identity on the reference.
    fn embed(&self, total: usize, g: &CMatrix) -> Result<CMatrix> {
        let extra = total - self.width();
        if extra == 0 {
            return Ok(g.clone());
        }
        if total > MAX_DENSE_QUBITS {
            return Err(Error::ResourceLimit(format!("{total}-qubit joint register")));
        }
        Ok(kron(g, &CMatrix::identity(1 << extra, 1 << extra)))
    }
}

/// `b ∈ {+1, −1}` form of [`IdealFunctionality::query`].
pub fn ideal_query(f: &mut IdealFunctionality, b: i8, st: &RelationState) -> Result<RelationState> {
    match b {
        1 => f.query(true, st),
        -1 => f.query(false, st),
        _ => Err(Error::InvalidArgument(format!("b must be ±1, got {b}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutcomeRow {
    pub outcome: u64,
    pub p_record: f64,
    pub p_sampled: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IdealCompareReport {
    pub lambda: usize,
    pub parameter: CircuitParameter,
    pub queries: usize,
    pub samples: usize,
    /// `½ Σ |p_sampled − p_record|`.
    pub total_variation: f64,
    /// Sum of per-outcome standard errors, a scale for `total_variation`.
    pub total_variation_se: f64,
    /// Largest `|p_sampled − p_record| / se` over outcomes with `se > 0`.
    pub max_z: f64,
    pub rows: Vec<OutcomeRow>,
    /// Every outcome within 3σ (plus 1e−9).
    pub pass: bool,
}

fn outcome_distribution(st: &RelationState) -> Vec<(u64, f64)> {
    let mut p: Vec<(u64, f64)> = st.sys_probabilities().into_iter().collect();
    p.sort_by_key(|r| r.0);
    p
}

/// Exact path-recording distribution vs the mean over `samples` Monte-Carlo
/// Haar instances of the plan's final measurement distribution.
pub fn ideal_compare(
    lambda: usize,
    q: &QuantumCircuit,
    plan: &AdversaryPlan,
    samples: usize,
    seed: u64,
) -> Result<IdealCompareReport> {
    let parameter = CircuitParameter::of(q);
    if plan.n != parameter.m_prime(lambda) {
        return Err(Error::InvalidArgument(format!("plan query register {} ≠ λ + m = {}", plan.n, parameter.m_prime(lambda))));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let t = plan.queries();
    let mut rec = ideal_init(lambda, q, IdealMode::PathRecording { t_max: t.max(1) + 1 })?;
    let cap = t.max(1) + 1;
    let final_rec = execute_plan(plan, plan.initial_state(2, cap)?, &mut |dir, st| {
        rec.query(dir == Direction::Forward, &st)
    })?;
    let p_rec = outcome_distribution(&final_rec);
    let dim = 1usize << plan.sys_bits();
    use rayon::prelude::*;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut f = ideal_init(lambda, q, IdealMode::MonteCarloHaar { seed: seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) })?;
            let out = execute_plan(plan, plan.initial_state(2, 0)?, &mut |dir, st| f.query(dir == Direction::Forward, &st))?;
            let mut p = vec![0.0; dim];
            for (s, v) in out.sys_probabilities() {
                p[s as usize] += v;
            }
            let p2 = p.iter().map(|x| x * x).collect();
            Ok((p, p2))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (p, p2) in parts {
        for i in 0..dim {
            mean[i] += p[i];
            sq[i] += p2[i];
        }
    }
    let n = samples as f64;
    let mut rec_full = vec![0.0; dim];
    for (s, v) in p_rec {
        rec_full[s as usize] = v;
    }
    let mut rows = Vec::new();
    let (mut tv, mut tv_se, mut max_z, mut pass) = (0.0, 0.0, 0.0f64, true);
    for i in 0..dim {
        let m = mean[i] / n;
        let se = ((sq[i] / n - m * m).max(0.0) / (n - 1.0).max(1.0)).sqrt();
        let diff = (m - rec_full[i]).abs();
        if m == 0.0 && rec_full[i] == 0.0 {
            continue;
        }
        tv += 0.5 * diff;
        tv_se += 0.5 * se;
        if se > 0.0 {
            max_z = max_z.max(diff / se);
        }
        pass &= diff <= 3.0 * se + 1e-9;
        rows.push(OutcomeRow { outcome: i as u64, p_record: rec_full[i], p_sampled: m, standard_error: se });
    }
    Ok(IdealCompareReport {
        lambda,
        parameter,
        queries: t,
        samples,
        total_variation: tv,
        total_variation_se: tv_se,
        max_z,
        rows,
        pass,
    })
}

/// A single forward query on `|1^{λ+m−n}⟩ ⊗ |ψ⟩` for a random `ψ`, with one
/// reference qubit entangled with the query register.
pub fn single_query_plan<R: Rng + ?Sized>(lambda: usize, p: &CircuitParameter, rng: &mut R) -> Result<AdversaryPlan> {
    let width = p.m_prime(lambda);
    let psi = linalg::random_state(1 << (width + 1), rng);
    Ok(AdversaryPlan {
        n: width,
        d: p.active_dim(lambda)?,
        workspace: 1,
        initial: psi.iter().enumerate().map(|(i, z)| (i as u64, [z.re, z.im])).collect(),
        steps: vec![crate::path_recording::PlanStep::Query { direction: Direction::Forward }],
    })
}

/// `‖a − b‖_max` of the pure states' amplitudes after a round trip.
pub fn round_trip_error(f: &mut IdealFunctionality, st: &RelationState) -> Result<f64> {
    let there = f.query(true, st)?;
    let back = f.query(false, &there)?;
    Ok(back.distance(st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{channel_apply, channel_of, choi_distance, random_circuit, GateKind};
    use crate::linalg::{max_abs_diff, random_density, random_state};

    fn identity_circuit() -> QuantumCircuit {
        QuantumCircuit::new(1, 1, 1, vec![]).unwrap()
    }

    #[test]
    fn parameter_derivations() {
        let p = CircuitParameter::new(1, 1, 2, 3).unwrap();
        assert_eq!(p.m_prime(2), 4);
        assert_eq!(p.active_dim(2).unwrap(), 14);
        assert!(CircuitParameter::new(3, 1, 2, 0).is_err());
        assert!(CircuitParameter::new(2, 2, 2, 0).unwrap().active_dim(0).is_err());
    }

    #[test]
    fn identity_program_reproduces_input() {
        let mut rng = stream_rng(41, 0);
        let mut prog = qobf(2, &identity_circuit(), reference_backend(), OracleMode::KeyedMixer, &mut rng).unwrap();
        for _ in 0..20 {
            let rho = random_density(2, &mut rng);
            let out = qeval(&mut prog, &rho).unwrap();
            assert!(max_abs_diff(out.matrix(), rho.matrix()) < 1e-9);
        }
    }

    #[test]
    fn swap_program_is_constant() {
        let q = QuantumCircuit::new(1, 1, 2, vec![GateOp::new(GateKind::Swap, vec![0, 1]).unwrap()]).unwrap();
        let mut rng = stream_rng(42, 0);
        let mut prog = qobf(2, &q, reference_backend(), OracleMode::ExactRandom, &mut rng).unwrap();
        let ch = qeval_channel(&mut prog).unwrap();
        let one = DensityMatrix::basis(2, 1).unwrap();
        for _ in 0..3 {
            let out = channel_apply(&ch, &random_density(2, &mut rng)).unwrap();
            assert!(max_abs_diff(out.matrix(), one.matrix()) < 1e-9);
        }
    }

    #[test]
    fn x_program_flips() {
        let q = QuantumCircuit::new(1, 1, 1, vec![GateOp::new(GateKind::X, vec![0]).unwrap()]).unwrap();
        let mut prog = qobf(2, &q, reference_backend(), OracleMode::KeyedMixer, &mut stream_rng(43, 0)).unwrap();
        let out = qeval(&mut prog, &DensityMatrix::basis(2, 0).unwrap()).unwrap();
        assert!(max_abs_diff(out.matrix(), DensityMatrix::basis(2, 1).unwrap().matrix()) < 1e-9);
    }

    #[test]
    fn qobf_is_deterministic_under_seed() {
        let q = random_circuit(1, 1, 2, 5, &mut stream_rng(44, 1)).unwrap();
        let a = qobf(1, &q, reference_backend(), OracleMode::KeyedMixer, &mut stream_rng(44, 0)).unwrap();
        let b = qobf(1, &q, reference_backend(), OracleMode::KeyedMixer, &mut stream_rng(44, 0)).unwrap();
        assert_eq!(a.keys(), b.keys());
        assert_eq!(a.transparent_unitary().unwrap(), b.transparent_unitary().unwrap());
    }

    #[test]
    fn random_programs_match_their_circuits() {
        let mut rng = stream_rng(45, 0);
        for _ in 0..4 {
            let m = rng.random_range(1..=3usize);
            let n = rng.random_range(0..=m.min(2));
            let n_out = rng.random_range(0..=m.min(2));
            let q = random_circuit(n, n_out, m, 6, &mut rng).unwrap();
            let mut prog = qobf(2, &q, reference_backend(), OracleMode::KeyedMixer, &mut rng).unwrap();
            let got = qeval_channel(&mut prog).unwrap();
            assert!(choi_distance(&got, &channel_of(&q).unwrap()).unwrap() < 1e-8);
        }
    }

    #[test]
    fn transparent_backend_contract() {
        let u = haar_unitary(4, &mut stream_rng(46, 0));
        let q = QuantumCircuit::from_unitary(2, 2, &u).unwrap();
        let be = TransparentBackend;
        let (aux, oracle) = be.obfuscate(1, &q).unwrap();
        let v = random_state(4, &mut stream_rng(46, 1));
        let (out, aux2) = be.eval(&oracle, aux.clone(), &v).unwrap();
        assert!((&out - u.matrix() * &v).camax() < 1e-12);
        assert_eq!(aux, aux2);
        let (out2, _) = be.eval(&oracle, aux2, &out).unwrap();
        assert!((&out2 - u.matrix() * u.matrix() * &v).camax() < 1e-12);
    }

    #[test]
    fn mu_unif_samples_extend_the_channel() {
        let mut rng = stream_rng(47, 0);
        let q = random_circuit(2, 1, 3, 8, &mut rng).unwrap();
        let v = compose_unitary(&q).unwrap();
        let phi = channel_of(&q).unwrap();
        for _ in 0..20 {
            let w = mu_unif_sample(&v, 2, 1, &mut rng).unwrap();
            assert!(extension_defect(&w, 2, 1, &phi).unwrap() < 1e-9);
        }
        let full = QuantumCircuit::new(2, 2, 2, vec![GateOp::new(GateKind::Cnot, vec![0, 1]).unwrap()]).unwrap();
        let v = compose_unitary(&full).unwrap();
        let w = mu_unif_sample(&v, 2, 2, &mut rng).unwrap();
        let ratio = w.matrix() * v.matrix().adjoint();
        let phase = ratio[(0, 0)];
        assert!((phase.norm() - 1.0).abs() < 1e-12);
        assert!(max_abs_diff(&ratio, &(CMatrix::identity(4, 4) * phase)) < 1e-12);
    }

    #[test]
    fn ideal_advertises_and_fixes_w() {
        let q = identity_circuit();
        let f = ideal_init(1, &q, IdealMode::MonteCarloHaar { seed: 3 }).unwrap();
        assert_eq!(f.advertised(), (1, CircuitParameter::new(1, 1, 1, 0).unwrap()));
        let g = ideal_init(1, &q, IdealMode::MonteCarloHaar { seed: 3 }).unwrap();
        assert_eq!(f.sampled_unitary(), g.sampled_unitary());
    }

    #[test]
    fn ideal_round_trips_in_both_modes() {
        let q = identity_circuit();
        let mut rng = stream_rng(48, 0);
        for mode in [IdealMode::MonteCarloHaar { seed: 5 }, IdealMode::PathRecording { t_max: 4 }] {
            let mut f = ideal_init(1, &q, mode).unwrap();
            let st = f.prepare(&random_state(8, &mut rng)).unwrap();
            assert!(round_trip_error(&mut f, &st).unwrap() < 1e-9);
        }
    }

    #[test]
    fn ideal_repeated_sampled_query_is_stable() {
        let q = random_circuit(1, 1, 2, 4, &mut stream_rng(49, 1)).unwrap();
        let mut f = ideal_init(1, &q, IdealMode::ExactSampledW { seed: 9 }).unwrap();
        let st = f.prepare(&random_state(8, &mut stream_rng(49, 2))).unwrap();
        let a = f.query(true, &st).unwrap();
        let b = f.query(true, &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ideal_output_marginal_matches_channel() {
        let q = identity_circuit();
        let mut f = ideal_init(1, &q, IdealMode::MonteCarloHaar { seed: 11 }).unwrap();
        for y in 0..2u64 {
            let mut psi = CVector::zeros(4);
            psi[(0b10 | y) as usize] = ONE;
            let out = f.query(true, &f.prepare(&psi).unwrap()).unwrap();
            let p = out.sys_probabilities();
            let py: f64 = p.iter().filter(|(s, _)| **s & 1 == y).map(|(_, v)| v).sum();
            assert!((py - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ideal_budget_is_enforced() {
        let mut f = ideal_init(1, &identity_circuit(), IdealMode::PathRecording { t_max: 1 }).unwrap();
        let st = f.prepare(&random_state(4, &mut stream_rng(50, 0))).unwrap();
        let st = f.query(true, &st).unwrap();
        assert!(matches!(f.query(true, &st), Err(Error::QueryBudgetExhausted(1))));
    }

    #[test]
    fn compare_with_no_queries_is_zero() {
        let q = identity_circuit();
        let mut plan = single_query_plan(1, &CircuitParameter::of(&q), &mut stream_rng(51, 0)).unwrap();
        plan.steps.clear();
        let r = ideal_compare(1, &q, &plan, 20, 1).unwrap();
        assert!(r.total_variation < 1e-12);
    }
}
