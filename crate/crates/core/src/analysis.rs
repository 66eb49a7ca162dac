//! Jordan blocks of projector pairs, the nearest subspace-fixing unitary,
//! dilation alignment and the distinguishing-experiment harness.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{hybrid_oracle, HybridLevel, SpsPru, SpsPruKey};
use crate::ensembles::spspru_layers;
use crate::error::{Error, Result};
use crate::linalg::{
    self, haar_on_subspace, operator_norm, stream_rng, CMatrix, CVector, ProjectorMatrix, SubspaceSpec,
    UnitaryMatrix, C64, ONE, ZERO,
};
use crate::path_recording::{AdversaryPlan, DensePlan, Direction, PlanStep};
use crate::prp::OracleMode;

/// Two-dimensional blocks need `θ ∈ (ANGLE_EPS, π/2 − ANGLE_EPS)`.
pub const ANGLE_EPS: f64 = 1e-6;
const EIGEN_EXACT: f64 = 1e-10;
/// Test constant for `‖V − W‖_op ≤ FIXING_CONSTANT · δ`.
pub const FIXING_CONSTANT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq)]
pub enum JordanBlock {
    /// `Π_A x = a x`, `Π_B x = b x`.
    OneDim { a: u8, b: u8, vector: CVector },
    /// `Π_A = |u⟩⟨u|`, `Π_B = |v⟩⟨v|` on `span{u, u⊥} = span{v, v⊥}`, with
    /// `⟨u|v⟩ = cos θ`, `⟨u⊥|v⟩ = sin θ`, `⟨u⊥|v⊥⟩ = cos θ`.
    TwoDim { theta: f64, u: CVector, u_perp: CVector, v: CVector, v_perp: CVector },
}

impl JordanBlock {
    pub fn dim(&self) -> usize {
        match self {
            JordanBlock::OneDim { .. } => 1,
            JordanBlock::TwoDim { .. } => 2,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            JordanBlock::TwoDim { theta, .. } => Some(*theta),
            JordanBlock::OneDim { .. } => None,
        }
    }

    fn part_a(&self) -> CMatrix {
        match self {
            JordanBlock::OneDim { a, vector, .. } => vector * vector.adjoint() * C64::from(*a as f64),
            JordanBlock::TwoDim { u, .. } => u * u.adjoint(),
        }
    }

    fn part_b(&self) -> CMatrix {
        match self {
            JordanBlock::OneDim { b, vector, .. } => vector * vector.adjoint() * C64::from(*b as f64),
            JordanBlock::TwoDim { v, .. } => v * v.adjoint(),
        }
    }
}

/// Serializable view of a block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JordanBlockRecord {
    pub dim: usize,
    pub a: Option<u8>,
    pub b: Option<u8>,
    pub theta: Option<f64>,
    /// `[x]` or `[u, u⊥, v, v⊥]` as `[re, im]` pairs.
    pub vectors: Vec<Vec<[f64; 2]>>,
}

impl From<&JordanBlock> for JordanBlockRecord {
    fn from(b: &JordanBlock) -> Self {
        let pairs = |v: &CVector| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
        match b {
            JordanBlock::OneDim { a, b, vector } => {
                Self { dim: 1, a: Some(*a), b: Some(*b), theta: None, vectors: vec![pairs(vector)] }
            }
            JordanBlock::TwoDim { theta, u, u_perp, v, v_perp } => Self {
                dim: 2,
                a: None,
                b: None,
                theta: Some(*theta),
                vectors: vec![pairs(u), pairs(u_perp), pairs(v), pairs(v_perp)],
            },
        }
    }
}

/// Orthonormal basis of the range of a projector.
fn range_basis(p: &CMatrix) -> CMatrix {
    let eig = p.clone().symmetric_eigen();
    let cols: Vec<CVector> = (0..p.nrows())
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        CMatrix::zeros(p.nrows(), 0)
    } else {
        CMatrix::from_columns(&cols)
    }
}

/// Eigenpairs of `B† P B` lifted back through `B`.
fn compressed_eigen(basis: &CMatrix, p: &CMatrix) -> Vec<(f64, CVector)> {
    if basis.ncols() == 0 {
        return Vec::new();
    }
    let m = basis.adjoint() * p * basis;
    let eig = ((&m + m.adjoint()) * C64::from(0.5)).symmetric_eigen();
    (0..basis.ncols())
        .map(|k| (eig.eigenvalues[k], basis * eig.eigenvectors.column(k)))
        .collect()
}

/// Jordan blocks of `(Π_A, Π_B)` from the spectrum of `Π_A Π_B Π_A`.
pub fn jordan_decompose(pa: &ProjectorMatrix, pb: &ProjectorMatrix) -> Result<Vec<JordanBlock>> {
    let dim = pa.dim();
    if pb.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: pb.dim() });
    }
    let (a, b) = (pa.matrix(), pb.matrix());
    let mut blocks = Vec::new();
    let mut used = CMatrix::zeros(dim, dim);
    for (c2, u) in compressed_eigen(&range_basis(a), b) {
        let c2 = c2.clamp(0.0, 1.0);
        let theta = c2.sqrt().acos();
        let u = u.normalize();
        if c2 > 1.0 - EIGEN_EXACT || theta < ANGLE_EPS {
            used += &u * u.adjoint();
            blocks.push(JordanBlock::OneDim { a: 1, b: 1, vector: u });
        } else if c2 < EIGEN_EXACT || theta > std::f64::consts::FRAC_PI_2 - ANGLE_EPS {
            used += &u * u.adjoint();
            blocks.push(JordanBlock::OneDim { a: 1, b: 0, vector: u });
        } else {
            let v = (b * &u).normalize();
            let cos = u.dotc(&v).re;
            let u_perp = (&v - &u * C64::from(cos)).normalize();
            let sin = u_perp.dotc(&v).re;
            let v_perp = &u * C64::from(-sin) + &u_perp * C64::from(cos);
            used += &u * u.adjoint() + &u_perp * u_perp.adjoint();
            blocks.push(JordanBlock::TwoDim { theta: sin.atan2(cos), u, u_perp, v, v_perp });
        }
    }
    let rest = CMatrix::identity(dim, dim) - used;
    for (lam, x) in compressed_eigen(&range_basis(&rest), b) {
        let x = x.normalize();
        blocks.push(JordanBlock::OneDim { a: 0, b: u8::from(lam > 0.5), vector: x });
    }
    Ok(blocks)
}

/// `(‖Π_A − Σ parts‖, ‖Π_B − Σ parts‖)` entrywise maxima.
pub fn jordan_reconstruction_error(pa: &ProjectorMatrix, pb: &ProjectorMatrix, blocks: &[JordanBlock]) -> (f64, f64) {
    let dim = pa.dim();
    let mut ra = CMatrix::zeros(dim, dim);
    let mut rb = CMatrix::zeros(dim, dim);
    for blk in blocks {
        ra += blk.part_a();
        rb += blk.part_b();
    }
    (linalg::max_abs_diff(&ra, pa.matrix()), linalg::max_abs_diff(&rb, pb.matrix()))
}

/// Quantities along the constructive proof: `δ = ‖VΠ − Π‖`, `‖Π′ − Π‖ ≤ 2δ`,
/// `max sin θ_j ≤ 2δ`, `‖R − I‖ ≤ max 2 sin(θ_j/2)` and `‖V − W‖ ≤ δ + 2‖R − I‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixingConstruction {
    pub w: UnitaryMatrix,
    pub delta: f64,
    pub projector_gap: f64,
    pub max_sin_theta: f64,
    pub max_half_angle_chord: f64,
    pub rotation_defect: f64,
    pub distance: f64,
    /// `‖WΠ − Π‖_max`.
    pub fixing_error: f64,
}

impl FixingConstruction {
    /// Every intermediate inequality, with `tol` slack.
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.projector_gap <= 2.0 * self.delta + tol
            && self.max_sin_theta <= self.projector_gap + tol
            && self.max_sin_theta <= 2.0 * self.delta + tol
            && self.rotation_defect <= self.max_half_angle_chord + tol
            && self.distance <= self.delta + 2.0 * self.rotation_defect + tol
            && self.distance <= FIXING_CONSTANT * self.delta + tol
    }
}

pub fn nearest_subspace_fixing(v: &UnitaryMatrix, pi: &ProjectorMatrix) -> Result<FixingConstruction> {
    let dim = v.dim();
    if pi.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: pi.dim() });
    }
    let (vm, p) = (v.matrix(), pi.matrix());
    let delta = operator_norm(&(vm * p - p));
    if delta >= 0.5 {
        return Err(Error::Precondition(format!("δ = {delta:.4} must be below 1/2")));
    }
    let pp = vm * p * vm.adjoint();
    let pp = (&pp + pp.adjoint()) * C64::from(0.5);
    let projector_gap = operator_norm(&(&pp - p));
    let pi_prime = ProjectorMatrix::try_new(pp)?;
    let blocks = jordan_decompose(pi, &pi_prime)?;
    let mut r = CMatrix::identity(dim, dim);
    let (mut max_sin, mut max_chord) = (0.0f64, 0.0f64);
    for blk in &blocks {
        match blk {
            JordanBlock::OneDim { a, b, .. } if a != b => {
                return Err(Error::Precondition("a one-dimensional block with mismatched eigenvalues".into()));
            }
            JordanBlock::OneDim { .. } => {}
            JordanBlock::TwoDim { theta, u, u_perp, v, v_perp } => {
                if (std::f64::consts::FRAC_PI_2 - theta).abs() < ANGLE_EPS {
                    return Err(Error::Precondition("orthogonal Jordan pair".into()));
                }
                r += u * v.adjoint() + u_perp * v_perp.adjoint() - v * v.adjoint() - v_perp * v_perp.adjoint();
                max_sin = max_sin.max(theta.sin());
                max_chord = max_chord.max(2.0 * (theta / 2.0).sin());
            }
        }
    }
    let u = &r * vm;
    let w = p + &u * (CMatrix::identity(dim, dim) - p);
    let w = UnitaryMatrix::try_new(w)?;
    let fixing_error = linalg::max_abs_diff(&(w.matrix() * p), p);
    Ok(FixingConstruction {
        distance: operator_norm(&(vm - w.matrix())),
        w,
        delta,
        projector_gap,
        max_sin_theta: max_sin,
        max_half_angle_chord: max_chord,
        rotation_defect: operator_norm(&(r - CMatrix::identity(dim, dim))),
        fixing_error,
    })
}

pub fn nearest_subspace_fixing_unitary(v: &UnitaryMatrix, pi: &ProjectorMatrix) -> Result<UnitaryMatrix> {
    nearest_subspace_fixing(v, pi).map(|c| c.w)
}

/// Columns of `v` on the ancilla-ones sector `|1^{m−n}⟩ ⊗ |x⟩`.
fn ones_sector(v: &UnitaryMatrix, n: usize) -> CMatrix {
    let m = v.dim().trailing_zeros() as usize;
    let base = ((1usize << (m - n)) - 1) << n;
    v.matrix().columns(base, 1 << n).into_owned()
}

/// Best `U` (Frobenius sense) aligning `(U ⊗ I_{n′}) V0` to `V1` on the
/// ancilla-ones sector, and the operator-norm residual.
pub fn align_dilations(v0: &UnitaryMatrix, v1: &UnitaryMatrix, n: usize, n_out: usize) -> Result<(UnitaryMatrix, f64)> {
    let m = v0.dim().trailing_zeros() as usize;
    if v0.dim() != v1.dim() || 1 << m != v0.dim() || n > m || n_out > m {
        return Err(Error::DimensionMismatch { expected: v0.dim(), found: v1.dim() });
    }
    let (a0, a1) = (ones_sector(v0, n), ones_sector(v1, n));
    let (env, dout) = (1usize << (m - n_out), 1usize << n_out);
    let cross = CMatrix::from_fn(env, env, |e, f| {
        let mut s = ZERO;
        for a in 0..dout {
            for i in 0..a0.ncols() {
                s += a0[(e * dout + a, i)] * a1[(f * dout + a, i)].conj();
            }
        }
        s
    });
    let svd = cross.svd(true, true);
    let (x, y) = (svd.u.expect("u"), svd.v_t.expect("v_t").adjoint());
    let u = UnitaryMatrix::try_new(&y * x.adjoint())?;
    let lifted = linalg::kron(u.matrix(), &CMatrix::identity(dout, dout));
    let residual = operator_norm(&(lifted * a0 - a1));
    Ok((u, residual))
}

/// Oracle families sampled freshly on every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum OracleFamily {
    /// Keyed construction; `with_f = false` deletes the `F_f` layer.
    SpsPru { n: usize, d: usize, mode: OracleMode, with_f: bool },
    /// Haar on the active block, identity on `S`.
    Haar { n: usize, d: usize },
    Hybrid { n: usize, d: usize, level: u8, mode: OracleMode },
}

impl OracleFamily {
    pub fn spec(&self) -> Result<SubspaceSpec> {
        match *self {
            Self::SpsPru { n, d, .. } | Self::Haar { n, d } | Self::Hybrid { n, d, .. } => SubspaceSpec::new(n, d),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<UnitaryMatrix> {
        let spec = self.spec()?;
        match *self {
            Self::SpsPru { mode, with_f, .. } => {
                let key = SpsPruKey::random(rng);
                SpsPru::from_layers(spec, &spspru_layers(&spec, &key, mode, with_f)?)?.to_unitary()
            }
            Self::Haar { .. } => Ok(haar_on_subspace(&spec, rng)),
            Self::Hybrid { level, mode, .. } => hybrid_oracle(HybridLevel::from_index(level)?, &spec, mode, rng)?.to_unitary(),
        }
    }
}

fn mode_name(m: OracleMode) -> &'static str {
    match m {
        OracleMode::ExactRandom => "exact",
        OracleMode::KeyedMixer => "mixer",
    }
}

impl fmt::Display for OracleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::SpsPru { n, d, mode, with_f: true } => write!(f, "spspru:n={n},d={d},mode={}", mode_name(mode)),
            Self::SpsPru { n, d, mode, with_f: false } => write!(f, "spspru-no-f:n={n},d={d},mode={}", mode_name(mode)),
            Self::Haar { n, d } => write!(f, "haar:n={n},d={d}"),
            Self::Hybrid { n, d, level, mode } => write!(f, "hybrid:n={n},d={d},level={level},mode={}", mode_name(mode)),
        }
    }
}

/// `kind:key=value,...` with kinds `spspru`, `spspru-no-f`, `haar`, `hybrid`.
impl FromStr for OracleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut n = None;
        let mut d = None;
        let mut level = None;
        let mut mode = OracleMode::KeyedMixer;
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got {kv:?}")))?;
            let num = || v.parse::<usize>().map_err(|e| Error::Parse(format!("{k}: {e}")));
            match k {
                "n" => n = Some(num()?),
                "d" => d = Some(num()?),
                "level" => level = Some(num()? as u8),
                "mode" => mode = v.parse()?,
                _ => return Err(Error::Parse(format!("unknown oracle key {k:?}"))),
            }
        }
        let n = n.ok_or_else(|| Error::Parse("oracle spec needs n".into()))?;
        let d = d.unwrap_or(1usize << n.min(62));
        let fam = match kind {
            "spspru" => Self::SpsPru { n, d, mode, with_f: true },
            "spspru-no-f" => Self::SpsPru { n, d, mode, with_f: false },
            "haar" => Self::Haar { n, d },
            "hybrid" => Self::Hybrid { n, d, level: level.ok_or_else(|| Error::Parse("hybrid needs level".into()))?, mode },
            _ => return Err(Error::Parse(format!("unknown oracle family {kind:?}"))),
        };
        fam.spec()?;
        Ok(fam)
    }
}

/// Query plan plus an accepting set of final basis outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguishingAdversary {
    pub plan: AdversaryPlan,
    pub accept: Vec<u64>,
}

impl DistinguishingAdversary {
    /// Two queries on `|0…0⟩|+i⟩` copies of the `n`-qubit register, then a
    /// `Y`-basis measurement of qubit `n − 1` of each copy; accepts on equal
    /// outcomes. Needs `d ≥ 2`. A real orthogonal oracle block maps `|+i⟩`
    /// to `|±i⟩` up to phase on both copies alike and always accepts.
    pub fn equal_y_outcomes(n: usize, d: usize) -> Result<Self> {
        if n == 0 || d < 2 {
            return Err(Error::InvalidArgument("need n ≥ 1 and d ≥ 2".into()));
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus_i = [(0u64, [s, 0.0]), (1u64, [0.0, s])];
        let initial = plus_i
            .iter()
            .flat_map(|&(a, za)| {
                plus_i.iter().map(move |&(b, zb)| {
                    let z = C64::new(za[0], za[1]) * C64::new(zb[0], zb[1]);
                    ((a << n) | b, [z.re, z.im])
                })
            })
            .collect();
        // S† then H maps |+i⟩ ↦ |0⟩ and |−i⟩ ↦ |1⟩.
        let h = CMatrix::from_row_slice(2, 2, &[ONE * s, ONE * s, ONE * s, -ONE * s]);
        let sdg = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, C64::new(0.0, -1.0)]);
        let y_meas = h * sdg;
        let steps = vec![
            PlanStep::Query { direction: Direction::Forward },
            PlanStep::SwapFields { a: 0, b: n, width: n },
            PlanStep::Query { direction: Direction::Forward },
            PlanStep::unitary(n - 1, &y_meas),
            PlanStep::unitary(2 * n - 1, &y_meas),
        ];
        let accept = (0..1u64 << (2 * n)).filter(|s| (s >> n) & 1 == s & 1).collect();
        Ok(Self { plan: AdversaryPlan { n, d, workspace: n, initial, steps }, accept })
    }

    /// Swap test between one forward answer on `|0⟩` and one on `|1⟩`, with
    /// the control ancilla as the last qubit.
    pub fn swap_test(n: usize, d: usize) -> Result<Self> {
        let total = 2 * n + 1;
        let h = crate::circuits::GateKind::H.fixed_matrix().expect("H");
        let dim = 1usize << total;
        let mut cswap = CMatrix::zeros(dim, dim);
        for s in 0..dim {
            let (a, b) = (s >> (n + 1), (s >> 1) & ((1 << n) - 1));
            let t = if s & 1 == 1 { (b << (n + 1)) | (a << 1) | 1 } else { s };
            cswap[(t, s)] = ONE;
        }
        let plan = AdversaryPlan {
            n,
            d,
            workspace: n + 1,
            initial: vec![(1u64 << (n + 1), [1.0, 0.0])],
            steps: vec![
                PlanStep::Query { direction: Direction::Forward },
                PlanStep::SwapFields { a: 0, b: n, width: n },
                PlanStep::Query { direction: Direction::Forward },
                PlanStep::unitary(2 * n, &h),
                PlanStep::unitary(0, &cswap),
                PlanStep::unitary(2 * n, &h),
            ],
        };
        let accept = (0..1u64 << total).filter(|s| s & 1 == 0).collect();
        Ok(Self { plan, accept })
    }

    #[cfg(test)]
    fn acceptance(&self, u: &UnitaryMatrix) -> Result<f64> {
        acceptance_probability(&DensePlan::new(&self.plan)?, &self.accept, u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherReport {
    pub oracle_a: String,
    pub oracle_b: String,
    pub trials: usize,
    pub queries: usize,
    pub acceptance_rate_a: f64,
    pub acceptance_rate_b: f64,
    /// `rate_a − rate_b`.
    pub advantage: f64,
    /// `√(p_a(1−p_a)/N + p_b(1−p_b)/N)`.
    pub std_error: f64,
    /// `advantage / std_error` (0 when both rates are degenerate).
    pub z_score: f64,
    /// `18 t(t+1) / d^{1/8}`.
    pub analytic_bound: f64,
    /// The analytic bound is at least 2 and says nothing.
    pub bound_vacuous: bool,
}

fn acceptance_probability(dense: &DensePlan, accept: &[u64], u: &UnitaryMatrix) -> Result<f64> {
    let v = dense.run(u.matrix())?;
    Ok(accept.iter().map(|&s| v.get(s as usize).map_or(0.0, |z| z.norm_sqr())).sum())
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const CHUNK: usize = 500;

fn acceptance_rate(family: &OracleFamily, adv: &DistinguishingAdversary, trials: usize, seed: u64, stream: u64) -> Result<f64> {
    let chunks = trials.div_ceil(CHUNK);
    let dense = DensePlan::new(&adv.plan)?;
    let hits: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<usize> {
            let mut rng = stream_rng(seed, (stream << 24) | c as u64);
            let mut hits = 0;
            for _ in 0..CHUNK.min(trials - c * CHUNK) {
                let u = family.sample(&mut rng)?;
                let p = acceptance_probability(&dense, &adv.accept, &u)?;
                hits += usize::from(rng.random::<f64>() < p);
            }
            Ok(hits)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / trials as f64)
}

/// Each side runs on RNG streams derived from its family's label, so
/// swapping the two families negates the estimate exactly; identical labels
/// fall back to per-side streams.
pub fn distinguish_experiment(
    a: &OracleFamily,
    b: &OracleFamily,
    adversary: &DistinguishingAdversary,
    trials: usize,
    seed: u64,
) -> Result<DistinguisherReport> {
    let (sa, sb) = (a.spec()?, b.spec()?);
    if sa.n != sb.n || sa.n != adversary.plan.n {
        return Err(Error::DimensionMismatch { expected: sa.n, found: sb.n.max(adversary.plan.n) });
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let (la, lb) = (a.to_string(), b.to_string());
    let (mut ka, mut kb) = (fnv1a(&la) >> 24, fnv1a(&lb) >> 24);
    if la == lb {
        ka = fnv1a(&format!("{la}#0")) >> 24;
        kb = fnv1a(&format!("{lb}#1")) >> 24;
    }
    let pa = acceptance_rate(a, adversary, trials, seed, ka)?;
    let pb = acceptance_rate(b, adversary, trials, seed, kb)?;
    let n = trials as f64;
    let se = (pa * (1.0 - pa) / n + pb * (1.0 - pb) / n).sqrt();
    let advantage = pa - pb;
    let t = adversary.plan.queries() as f64;
    let bound = 18.0 * t * (t + 1.0) / (sa.d as f64).powf(0.125);
    Ok(DistinguisherReport {
        oracle_a: la,
        oracle_b: lb,
        trials,
        queries: adversary.plan.queries(),
        acceptance_rate_a: pa,
        acceptance_rate_b: pb,
        advantage,
        std_error: se,
        z_score: if se > 0.0 { advantage / se } else { 0.0 },
        analytic_bound: bound,
        bound_vacuous: bound >= 2.0,
    })
}

/// `W₀ · exp(εK)` with `W₀Π = Π`, `Π` the first `rank` basis projector, `K`
/// anti-Hermitian of unit operator norm.
pub fn near_fixing_instance<R: Rng + ?Sized>(dim: usize, rank: usize, eps: f64, rng: &mut R) -> Result<(UnitaryMatrix, ProjectorMatrix)> {
    let pi = CMatrix::from_fn(dim, dim, |i, j| if i == j && i < rank { ONE } else { ZERO });
    let mut w0 = CMatrix::identity(dim, dim);
    if dim > rank {
        let block = linalg::haar_unitary(dim - rank, rng).into_inner();
        w0.view_mut((rank, rank), (dim - rank, dim - rank)).copy_from(&block);
    }
    let g = linalg::ginibre(dim, dim, rng);
    let k = (&g - g.adjoint()) * C64::from(0.5);
    let k = &k / C64::from(operator_norm(&k));
    let eig = (&k * C64::new(0.0, -1.0)).symmetric_eigen();
    let phases = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(0.0, eps * l).exp()));
    let e = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    Ok((UnitaryMatrix::try_new(w0 * e)?, ProjectorMatrix::try_new(pi)?))
}
