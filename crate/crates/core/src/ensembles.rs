//! Restricted unitary ensembles on `span{|x⟩ : x ∈ [d]}`: the three-layer
//! phase/Fourier ensemble, its second-moment twirls, the permutation-phase
//! sandwich and the keyed subspace-preserving construction.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, haar_isometry, operator_norm, partial_transpose_second, pi_epr, pi_eq, pi_prime, pi_sym,
    stream_rng, CMatrix, CVector, SubspaceSpec, UnitaryMatrix, C64, ONE, ZERO,
};
use crate::prp::{FunctionOracle, OracleMode, PrfKey, PrpInstance};

/// `f : [d] → Z_modulus`, extended by zero off `[d]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseFunction {
    pub values: Vec<u64>,
    pub modulus: u64,
}

impl PhaseFunction {
    pub fn new(values: Vec<u64>, modulus: u64) -> Result<Self> {
        if modulus == 0 || values.iter().any(|&v| v >= modulus) {
            return Err(Error::InvalidArgument(format!("phase values must lie in [0, {modulus})")));
        }
        Ok(Self { values, modulus })
    }

    pub fn random<R: Rng + ?Sized>(d: usize, modulus: u64, rng: &mut R) -> Self {
        Self { values: (0..d).map(|_| rng.random_range(0..modulus)).collect(), modulus }
    }

    pub fn phases(&self) -> Vec<C64> {
        self.values
            .iter()
            .map(|&v| C64::from_polar(1.0, TAU * v as f64 / self.modulus as f64))
            .collect()
    }
}

/// A bijection of `[d]`, identity off `[d]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub table: Vec<u64>,
}

impl PermutationSpec {
    pub fn new(table: Vec<u64>) -> Result<Self> {
        let d = table.len();
        let mut seen = vec![false; d];
        for &v in &table {
            if v as usize >= d || seen[v as usize] {
                return Err(Error::InvalidArgument("table is not a permutation".into()));
            }
            seen[v as usize] = true;
        }
        Ok(Self { table })
    }

    pub fn identity(d: usize) -> Self {
        Self { table: (0..d as u64).collect() }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut t: Vec<u64> = (0..d as u64).collect();
        t.shuffle(rng);
        Self { table: t }
    }
}

fn check_len(spec: &SubspaceSpec, len: usize) -> Result<()> {
    if len != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, found: len });
    }
    Ok(())
}

/// `Z_f|x⟩ = ω^{f(x)}|x⟩` on `[d]` with `ω = e^{2πi/modulus}`.
pub fn phase_unitary(spec: &SubspaceSpec, f: &PhaseFunction) -> Result<UnitaryMatrix> {
    check_len(spec, f.values.len())?;
    let diag = CMatrix::from_diagonal(&CVector::from_vec(f.phases()));
    UnitaryMatrix::try_new(spec.embed(&diag)?)
}

/// `H_d|x⟩ = d^{-1/2} Σ_y ω_d^{xy}|y⟩` on `[d]`.
pub fn fourier_block(d: usize) -> CMatrix {
    let s = 1.0 / (d as f64).sqrt();
    CMatrix::from_fn(d, d, |y, x| C64::from_polar(s, TAU * ((x * y) % d) as f64 / d as f64))
}

pub fn fourier_unitary(spec: &SubspaceSpec) -> Result<UnitaryMatrix> {
    UnitaryMatrix::try_new(spec.embed(&fourier_block(spec.d))?)
}

/// `P_π|x⟩ = |π(x)⟩`.
pub fn permutation_unitary(spec: &SubspaceSpec, p: &PermutationSpec) -> Result<UnitaryMatrix> {
    check_len(spec, p.table.len())?;
    let mut m = CMatrix::zeros(spec.d, spec.d);
    for (x, &y) in p.table.iter().enumerate() {
        m[(y as usize, x)] = ONE;
    }
    UnitaryMatrix::try_new(spec.embed(&m)?)
}

/// `Z_{f3} H_d Z_{f2} H_d Z_{f1}` as a `d×d` block, phases mod `d`.
pub fn threefold_block(d: usize, f1: &[u64], f2: &[u64], f3: &[u64]) -> CMatrix {
    let h = fourier_block(d);
    let ph = |f: &[u64]| -> Vec<C64> {
        f.iter().map(|&v| C64::from_polar(1.0, TAU * (v % d as u64) as f64 / d as f64)).collect()
    };
    let (z1, z2, z3) = (ph(f1), ph(f2), ph(f3));
    let mid = CMatrix::from_fn(d, d, |y, x| (0..d).map(|z| h[(y, z)] * z2[z] * h[(z, x)]).sum());
    CMatrix::from_fn(d, d, |y, x| z3[y] * mid[(y, x)] * z1[x])
}

pub fn threefold_sample<R: Rng + ?Sized>(spec: &SubspaceSpec, rng: &mut R) -> UnitaryMatrix {
    let d = spec.d;
    let f: Vec<Vec<u64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(0..d as u64)).collect()).collect();
    let block = threefold_block(d, &f[0], &f[1], &f[2]);
    UnitaryMatrix::try_new(spec.embed(&block).expect("block is d×d")).expect("product of unitaries")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    ThreeFold,
    Haar,
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threefold" | "three-fold" | "3fold" => Ok(Self::ThreeFold),
            "haar" => Ok(Self::Haar),
            other => Err(Error::InvalidArgument(format!("unknown ensemble `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TwirlMode {
    /// Average over every phase triple (three-fold ensemble only).
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Second moments of an ensemble `C` on `C^d`, each applied to `Π^eq`:
/// `conj = E[C⊗C Π C†⊗C†]`, `inv = E[C†⊗C† Π C⊗C]`,
/// `conj_mixed = E[(C⊗C̄) Π (C†⊗C^T)]`, `inv_mixed = E[(C†⊗C^T) Π (C⊗C̄)]`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub d: usize,
    pub samples: usize,
    pub conj: CMatrix,
    pub inv: CMatrix,
    pub conj_mixed: CMatrix,
    pub inv_mixed: CMatrix,
    /// Largest entrywise standard error of `conj` and `inv` (Monte-Carlo only).
    pub standard_error: Option<f64>,
}

#[derive(Clone)]
struct Acc {
    sums: [CMatrix; 4],
    sq: [nalgebra::DMatrix<f64>; 2],
    count: usize,
}

impl Acc {
    fn new(d: usize) -> Self {
        let z = CMatrix::zeros(d * d, d * d);
        let r = nalgebra::DMatrix::<f64>::zeros(d * d, d * d);
        Self { sums: [z.clone(), z.clone(), z.clone(), z], sq: [r.clone(), r], count: 0 }
    }

    fn add(&mut self, c: &CMatrix, track_sq: bool) {
        let d = c.nrows();
        let mut sample: [CMatrix; 4] = std::array::from_fn(|_| CMatrix::zeros(d * d, d * d));
        for x in 0..d {
            let col: Vec<C64> = (0..d).map(|i| c[(i, x)]).collect();
            let row: Vec<C64> = (0..d).map(|i| c[(x, i)].conj()).collect();
            let pairs: [(&[C64], bool); 4] = [(&col, false), (&row, false), (&col, true), (&row, true)];
            for (k, (v, mixed)) in pairs.iter().enumerate() {
                let w = CVector::from_fn(d * d, |ij, _| {
                    let (i, j) = (ij / d, ij % d);
                    v[i] * if *mixed { v[j].conj() } else { v[j] }
                });
                sample[k] += &w * w.adjoint();
            }
        }
        if track_sq {
            for k in 0..2 {
                self.sq[k] += sample[k].map(|z| z.norm_sqr());
            }
        }
        for k in 0..4 {
            self.sums[k] += &sample[k];
        }
        self.count += 1;
    }

    fn merge(mut self, o: Acc) -> Acc {
        for k in 0..4 {
            self.sums[k] += &o.sums[k];
        }
        for k in 0..2 {
            self.sq[k] += &o.sq[k];
        }
        self.count += o.count;
        self
    }
}

fn digits(mut idx: usize, d: usize, out: &mut [u64]) {
    for v in out.iter_mut() {
        *v = (idx % d) as u64;
        idx /= d;
    }
}

/// Largest `d` accepted by exhaustive enumeration (`d^{3d}` triples).
pub const MAX_EXACT_D: usize = 4;

pub fn moments_exact_threefold(d: usize) -> Result<Moments> {
    if d == 0 || d > MAX_EXACT_D {
        return Err(Error::ResourceLimit(format!("exhaustive twirl needs 1 ≤ d ≤ {MAX_EXACT_D}")));
    }
    let per = d.pow(d as u32);
    let acc = (0..per)
        .into_par_iter()
        .map(|i2| {
            let mut acc = Acc::new(d);
            let (mut f1, mut f2, mut f3) = (vec![0; d], vec![0; d], vec![0; d]);
            digits(i2, d, &mut f2);
            for i1 in 0..per {
                digits(i1, d, &mut f1);
                for i3 in 0..per {
                    digits(i3, d, &mut f3);
                    acc.add(&threefold_block(d, &f1, &f2, &f3), false);
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(d), Acc::merge);
    Ok(finish(d, acc, false))
}

fn finish(d: usize, acc: Acc, mc: bool) -> Moments {
    let n = acc.count as f64;
    let [conj, inv, conj_mixed, inv_mixed] = acc.sums.map(|m| m.unscale(n));
    let standard_error = mc.then(|| {
        let mut worst: f64 = 0.0;
        for (k, mean) in [&conj, &inv].iter().enumerate() {
            for (s, m) in acc.sq[k].iter().zip(mean.iter()) {
                let var = (s / n - m.norm_sqr()).max(0.0);
                worst = worst.max((var / n).sqrt());
            }
        }
        worst
    });
    Moments { d, samples: acc.count, conj, inv, conj_mixed, inv_mixed, standard_error }
}

const MC_CHUNK: usize = 1000;

/// Monte-Carlo moments. Sample `i` is drawn from stream `i / 1000` of `seed`
/// so the result does not depend on the thread count.
pub fn moments_monte_carlo(d: usize, ensemble: EnsembleKind, samples: usize, seed: u64) -> Result<Moments> {
    if d == 0 || samples == 0 {
        return Err(Error::InvalidArgument("need d ≥ 1 and at least one sample".into()));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let spec = SubspaceSpec { n: 64 - (d as u64 - 1).leading_zeros() as usize, d };
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = Acc::new(d);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            for _ in 0..count {
                let u = match ensemble {
                    EnsembleKind::Haar => haar_isometry(d, d, &mut rng),
                    EnsembleKind::ThreeFold => spec.restrict(threefold_sample(&spec, &mut rng).matrix()),
                };
                acc.add(&u, true);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(d), Acc::merge);
    Ok(finish(d, acc, true))
}

/// `(2d−1)/d² Π^eq + (2d−2)/d² Π'`. This is the twirl of `Π^eq` by the
/// three-fold ensemble in either direction for `d ≠ 2`; see
/// [`threefold_exact_twirl`].
pub fn threefold_closed_form(d: usize) -> CMatrix {
    let dd = (d * d) as f64;
    pi_eq(d).scale((2 * d - 1) as f64 / dd) + pi_prime(d).scale((2 * d - 2) as f64 / dd)
}

/// `2/(d+1) Π^sym`.
pub fn haar_closed_form(d: usize) -> CMatrix {
    pi_sym(d).scale(2.0 / (d + 1) as f64)
}

/// `1/(d(d+1))`.
pub fn design_epsilon(d: usize) -> f64 {
    1.0 / (d * (d + 1)) as f64
}

/// The twirl of `Π^eq` by the three-fold ensemble. At `d = 2` all phases are
/// `±1`, every sample is a monomial matrix and `Π^eq` is left invariant.
pub fn threefold_exact_twirl(d: usize) -> CMatrix {
    if d == 2 {
        pi_eq(2)
    } else {
        threefold_closed_form(d)
    }
}

/// `max(d−1, 2)/(d²(d+1))`, the deviation of [`threefold_closed_form`] from
/// the Haar twirl.
pub fn threefold_closed_form_deviation(d: usize) -> f64 {
    if d == 1 {
        return 0.0;
    }
    (d - 1).max(2) as f64 / (d * d * (d + 1)) as f64
}

/// Operator-norm deviation of [`threefold_exact_twirl`] from the Haar twirl:
/// `2/3` at `d = 2`, [`threefold_closed_form_deviation`] otherwise.
pub fn threefold_exact_deviation(d: usize) -> f64 {
    if d == 2 {
        2.0 / 3.0
    } else {
        threefold_closed_form_deviation(d)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TwirlReport {
    pub n: usize,
    pub d: usize,
    pub ensemble: EnsembleKind,
    pub mode: String,
    pub samples: usize,
    pub deviation_conjugate: f64,
    pub deviation_inverse: f64,
    pub epsilon_bound: f64,
    pub expected_deviation: f64,
    pub closed_form_error_conjugate: f64,
    pub closed_form_error_inverse: f64,
    pub standard_error: Option<f64>,
    pub pass: bool,
}

/// Deviation of the ensemble's twirl of `Π^eq` from the Haar value, compared
/// with the design bound `1/(d(d+1))`.
pub fn design_check(spec: &SubspaceSpec, ensemble: EnsembleKind, mode: TwirlMode) -> Result<TwirlReport> {
    let d = spec.d;
    let m = match (ensemble, mode) {
        (EnsembleKind::ThreeFold, TwirlMode::Exact) => moments_exact_threefold(d)?,
        (EnsembleKind::Haar, TwirlMode::Exact) => {
            return Err(Error::InvalidArgument("exact mode enumerates the three-fold ensemble only".into()))
        }
        (e, TwirlMode::MonteCarlo { samples, seed }) => moments_monte_carlo(d, e, samples, seed)?,
    };
    let haar = haar_closed_form(d);
    let reference = match ensemble {
        EnsembleKind::ThreeFold => threefold_closed_form(d),
        EnsembleKind::Haar => haar.clone(),
    };
    let expected = match ensemble {
        EnsembleKind::ThreeFold => threefold_exact_deviation(d),
        EnsembleKind::Haar => 0.0,
    };
    let dev_c = operator_norm(&(&m.conj - &haar));
    let dev_i = operator_norm(&(&m.inv - &haar));
    let eps = design_epsilon(d);
    let slack = match m.standard_error {
        None => 1e-10,
        Some(se) => 5.0 * se * (d * d) as f64,
    };
    let pass = dev_c.max(dev_i) <= eps + slack;
    Ok(TwirlReport {
        n: spec.n,
        d,
        ensemble,
        mode: match mode {
            TwirlMode::Exact => "exact".into(),
            TwirlMode::MonteCarlo { .. } => "monte-carlo".into(),
        },
        samples: m.samples,
        deviation_conjugate: dev_c,
        deviation_inverse: dev_i,
        epsilon_bound: eps,
        expected_deviation: expected,
        closed_form_error_conjugate: linalg::max_abs_diff(&m.conj, &reference),
        closed_form_error_inverse: linalg::max_abs_diff(&m.inv, &reference),
        standard_error: m.standard_error,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KeyLemmaSide {
    /// `‖E[A⊗A Π^eq A†⊗A†]‖`.
    pub eq_norm: f64,
    /// `‖E[(A⊗Ā) Π^eq (A†⊗A^T)] − Π^EPR‖`.
    pub epr_norm: f64,
    pub lhs: f64,
    pub argmax: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KeyLemmaReport {
    pub d: usize,
    pub t: usize,
    /// `A = C†`.
    pub inverse_side: KeyLemmaSide,
    /// `A = C`.
    pub forward_side: KeyLemmaSide,
    pub rhs: f64,
    pub eq_bound: f64,
    pub epr_bound: f64,
    /// `‖(E C†⊗C† Π C⊗C)^{T₂} − E (C†⊗C^T) Π (C⊗C̄)‖`, zero up to rounding.
    pub transpose_consistency: f64,
    pub pass: bool,
}

/// `max_{ℓ+r≤t} d/(d−ℓ−r+1) (ℓ a + r b + 2r√((ℓ+r)/d))`.
pub fn key_lemma_lhs(d: usize, t: usize, a: f64, b: f64) -> (f64, (usize, usize)) {
    let mut best = (0.0, (0, 0));
    for l in 0..=t {
        for r in 0..=(t - l) {
            if l + r == 0 {
                continue;
            }
            let k = (l + r) as f64;
            let v = d as f64 / (d as f64 - k + 1.0)
                * (l as f64 * a + r as f64 * b + 2.0 * r as f64 * (k / d as f64).sqrt());
            if v > best.0 {
                best = (v, (l, r));
            }
        }
    }
    best
}

pub fn key_lemma_check(d: usize, t: usize, mode: TwirlMode) -> Result<KeyLemmaReport> {
    if t == 0 || t > d {
        return Err(Error::InvalidArgument(format!("need 1 ≤ t ≤ d (t = {t}, d = {d})")));
    }
    let m = match mode {
        TwirlMode::Exact => moments_exact_threefold(d)?,
        TwirlMode::MonteCarlo { samples, seed } => moments_monte_carlo(d, EnsembleKind::ThreeFold, samples, seed)?,
    };
    let epr = pi_epr(d);
    let side = |eq: &CMatrix, mixed: &CMatrix| {
        let a = operator_norm(eq);
        let b = operator_norm(&(mixed - &epr));
        let (lhs, argmax) = key_lemma_lhs(d, t, a, b);
        KeyLemmaSide { eq_norm: a, epr_norm: b, lhs, argmax }
    };
    let inverse_side = side(&m.inv, &m.inv_mixed);
    let forward_side = side(&m.conj, &m.conj_mixed);
    let rhs = 6.0 * t as f64 * (t as f64 / d as f64).sqrt();
    let eq_bound = 3.0 / (d + 1) as f64;
    let epr_bound = 2.0 / (d + 1) as f64;
    let tol = 1e-9;
    let transpose_consistency = linalg::max_abs_diff(&partial_transpose_second(&m.inv, d)?, &m.inv_mixed);
    let pass = [&inverse_side, &forward_side]
        .iter()
        .all(|s| s.lhs <= rhs + tol && s.eq_norm <= eq_bound + tol && s.epr_norm <= epr_bound + tol);
    Ok(KeyLemmaReport { d, t, inverse_side, forward_side, rhs, eq_bound, epr_bound, transpose_consistency, pass })
}

/// Unitary Fourier transform on a length-`d` slice, in either direction.
#[derive(Clone)]
struct Dft {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Dft {
    fn new(d: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            fwd: p.plan_fft(d, FftDirection::Inverse),
            inv: p.plan_fft(d, FftDirection::Forward),
            scale: 1.0 / (d as f64).sqrt(),
        }
    }

    /// `H_d` (positive exponent).
    fn apply(&self, v: &mut [C64]) {
        self.fwd.process(v);
        v.iter_mut().for_each(|z| *z *= self.scale);
    }

    fn apply_adjoint(&self, v: &mut [C64]) {
        self.inv.process(v);
        v.iter_mut().for_each(|z| *z *= self.scale);
    }
}

/// Layers of `D̂ · P_π · F_f · Ĉ` with `Ĉ = Z_{c3} H Z_{c2} H Z_{c1}`,
/// `D̂ = Z_{e3} H Z_{e2} H Z_{e1}`. Acts as the identity on `x ≥ d`.
#[derive(Clone)]
pub struct SpsPru {
    spec: SubspaceSpec,
    c: [Vec<C64>; 3],
    e: [Vec<C64>; 3],
    perm: Vec<u64>,
    inv_perm: Vec<u64>,
    f: Option<Vec<C64>>,
    dft: Dft,
}

impl std::fmt::Debug for SpsPru {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpsPru").field("spec", &self.spec).field("has_f", &self.f.is_some()).finish()
    }
}

pub struct SpsPruLayers {
    pub c: [PhaseFunction; 3],
    pub e: [PhaseFunction; 3],
    pub perm: PermutationSpec,
    /// `None` removes the `F_f` layer (a deliberately broken variant).
    pub f: Option<PhaseFunction>,
}

impl SpsPru {
    pub fn from_layers(spec: SubspaceSpec, layers: &SpsPruLayers) -> Result<Self> {
        let d = spec.d;
        for p in layers.c.iter().chain(layers.e.iter()) {
            check_len(&spec, p.values.len())?;
            if p.modulus != d as u64 {
                return Err(Error::InvalidArgument("Fourier-layer phases are taken mod d".into()));
            }
        }
        check_len(&spec, layers.perm.table.len())?;
        if let Some(f) = &layers.f {
            check_len(&spec, f.values.len())?;
        }
        let mut inv_perm = vec![0u64; d];
        for (x, &y) in layers.perm.table.iter().enumerate() {
            inv_perm[y as usize] = x as u64;
        }
        Ok(Self {
            spec,
            c: std::array::from_fn(|i| layers.c[i].phases()),
            e: std::array::from_fn(|i| layers.e[i].phases()),
            perm: layers.perm.table.clone(),
            inv_perm,
            f: layers.f.as_ref().map(PhaseFunction::phases),
            dft: Dft::new(d),
        })
    }

    /// Uniformly random layers: a sample of the permutation-phase sandwich
    /// around two independent three-fold unitaries.
    pub fn random<R: Rng + ?Sized>(spec: SubspaceSpec, with_f: bool, rng: &mut R) -> Self {
        let d = spec.d;
        let layers = SpsPruLayers {
            c: std::array::from_fn(|_| PhaseFunction::random(d, d as u64, rng)),
            e: std::array::from_fn(|_| PhaseFunction::random(d, d as u64, rng)),
            perm: PermutationSpec::random(d, rng),
            f: with_f.then(|| PhaseFunction::random(d, 3, rng)),
        };
        Self::from_layers(spec, &layers).expect("layers sized to d")
    }

    pub fn spec(&self) -> SubspaceSpec {
        self.spec
    }

    fn threefold(&self, z: &[Vec<C64>; 3], v: &mut [C64]) {
        mul_diag(v, &z[0]);
        self.dft.apply(v);
        mul_diag(v, &z[1]);
        self.dft.apply(v);
        mul_diag(v, &z[2]);
    }

    fn threefold_adjoint(&self, z: &[Vec<C64>; 3], v: &mut [C64]) {
        mul_diag_conj(v, &z[2]);
        self.dft.apply_adjoint(v);
        mul_diag_conj(v, &z[1]);
        self.dft.apply_adjoint(v);
        mul_diag_conj(v, &z[0]);
    }

    /// In-place `v ← O v` on a full `2^n` vector.
    pub fn apply(&self, v: &mut [C64]) -> Result<()> {
        self.check(v.len())?;
        let d = self.spec.d;
        let a = &mut v[..d];
        self.threefold(&self.c, a);
        if let Some(f) = &self.f {
            mul_diag(a, f);
        }
        let tmp: Vec<C64> = a.to_vec();
        for (x, z) in tmp.into_iter().enumerate() {
            a[self.perm[x] as usize] = z;
        }
        self.threefold(&self.e, a);
        Ok(())
    }

    pub fn apply_inverse(&self, v: &mut [C64]) -> Result<()> {
        self.check(v.len())?;
        let d = self.spec.d;
        let a = &mut v[..d];
        self.threefold_adjoint(&self.e, a);
        let tmp: Vec<C64> = a.to_vec();
        for (y, z) in tmp.into_iter().enumerate() {
            a[self.inv_perm[y] as usize] = z;
        }
        if let Some(f) = &self.f {
            mul_diag_conj(a, f);
        }
        self.threefold_adjoint(&self.c, a);
        Ok(())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.spec.dim() {
            return Err(Error::DimensionMismatch { expected: self.spec.dim(), found: len });
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.spec.n > linalg::MAX_DENSE_QUBITS {
            return Err(Error::ResourceLimit(format!("dense {}-qubit matrix", self.spec.n)));
        }
        let dim = self.spec.dim();
        let mut m = CMatrix::identity(dim, dim);
        let mut col = vec![ZERO; dim];
        for x in 0..self.spec.d {
            col.iter_mut().for_each(|z| *z = ZERO);
            col[x] = ONE;
            self.apply(&mut col)?;
            for (y, z) in col.iter().enumerate() {
                m[(y, x)] = *z;
            }
        }
        Ok(m)
    }

    pub fn to_unitary(&self) -> Result<UnitaryMatrix> {
        UnitaryMatrix::try_new(self.to_matrix()?)
    }
}

fn mul_diag(v: &mut [C64], z: &[C64]) {
    v.iter_mut().zip(z).for_each(|(a, b)| *a *= b);
}

fn mul_diag_conj(v: &mut [C64], z: &[C64]) {
    v.iter_mut().zip(z).for_each(|(a, b)| *a *= b.conj());
}

/// One sample of `D·P_π·F_f·C` with `C, D` from the three-fold ensemble.
pub fn spru_sample<R: Rng + ?Sized>(spec: &SubspaceSpec, rng: &mut R) -> Result<UnitaryMatrix> {
    SpsPru::random(*spec, true, rng).to_unitary()
}

/// `(k_PRP, k_PRF, k_PRF')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpsPruKey {
    pub prp: PrfKey,
    pub prf: PrfKey,
    pub prf_prime: PrfKey,
}

impl SpsPruKey {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { prp: PrfKey::random(rng), prf: PrfKey::random(rng), prf_prime: PrfKey::random(rng) }
    }
}

fn bits_for(n: usize) -> u32 {
    n.max(1) as u32
}

/// Derives every layer from the key: `π = PRP(k_PRP)`, `f = PRF(k_PRF, ·) mod 3`,
/// `f'_{i,j}(x) = PRF'(k_PRF', (i, j, x)) mod d`.
pub fn spspru_layers(spec: &SubspaceSpec, key: &SpsPruKey, mode: OracleMode, with_f: bool) -> Result<SpsPruLayers> {
    let d = spec.d;
    if spec.n + 3 > 64 {
        return Err(Error::ResourceLimit(format!("{} qubits", spec.n)));
    }
    let prp = PrpInstance::from_key(d as u64, mode, key.prp)?;
    let prf = FunctionOracle::new(mode, key.prf, bits_for(spec.n), 64)?;
    let prf2 = FunctionOracle::new(mode, key.prf_prime, spec.n as u32 + 3, 64)?;
    let layer = |i: u64, j: u64| -> Result<PhaseFunction> {
        let vals = (0..d as u64)
            .map(|x| Ok(prf2.eval((i << (spec.n + 2)) | (j << spec.n) | x)? % d as u64))
            .collect::<Result<Vec<_>>>()?;
        PhaseFunction::new(vals, d as u64)
    };
    let f = if with_f {
        let vals = (0..d as u64).map(|x| Ok(prf.eval(x)? % 3)).collect::<Result<Vec<_>>>()?;
        Some(PhaseFunction::new(vals, 3)?)
    } else {
        None
    };
    Ok(SpsPruLayers {
        c: [layer(0, 1)?, layer(0, 2)?, layer(0, 3)?],
        e: [layer(1, 1)?, layer(1, 2)?, layer(1, 3)?],
        perm: PermutationSpec::new(prp.table())?,
        f,
    })
}

pub fn spspru_build(spec: &SubspaceSpec, key: &SpsPruKey, mode: OracleMode) -> Result<SpsPru> {
    SpsPru::from_layers(*spec, &spspru_layers(spec, key, mode, true)?)
}

/// Hybrid sequence from the keyed construction to Haar on the active block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HybridLevel {
    /// Keyed construction.
    Real = 0,
    /// `f` uniformly random.
    RandomF = 1,
    /// Also `f'` uniformly random.
    RandomFPrime = 2,
    /// Also `π` uniformly random.
    RandomPi = 3,
    /// Haar on the active block.
    Haar = 4,
}

impl HybridLevel {
    pub fn from_index(i: u8) -> Result<Self> {
        Ok(match i {
            0 => Self::Real,
            1 => Self::RandomF,
            2 => Self::RandomFPrime,
            3 => Self::RandomPi,
            4 => Self::Haar,
            _ => return Err(Error::InvalidArgument(format!("hybrid level {i} not in 0..=4"))),
        })
    }
}

/// A sampled oracle at a given hybrid level; levels 0 to 3 are matrix-free.
pub enum HybridOracle {
    Layers(SpsPru),
    Dense(UnitaryMatrix),
}

impl HybridOracle {
    pub fn to_unitary(&self) -> Result<UnitaryMatrix> {
        match self {
            Self::Layers(s) => s.to_unitary(),
            Self::Dense(u) => Ok(u.clone()),
        }
    }
}

pub fn hybrid_oracle<R: Rng + ?Sized>(
    level: HybridLevel,
    spec: &SubspaceSpec,
    mode: OracleMode,
    rng: &mut R,
) -> Result<HybridOracle> {
    if level == HybridLevel::Haar {
        return Ok(HybridOracle::Dense(linalg::haar_on_subspace(spec, rng)));
    }
    let key = SpsPruKey::random(rng);
    let mut layers = spspru_layers(spec, &key, mode, true)?;
    let d = spec.d;
    if level as u8 >= 1 {
        layers.f = Some(PhaseFunction::random(d, 3, rng));
    }
    if level as u8 >= 2 {
        layers.c = std::array::from_fn(|_| PhaseFunction::random(d, d as u64, rng));
        layers.e = std::array::from_fn(|_| PhaseFunction::random(d, d as u64, rng));
    }
    if level as u8 >= 3 {
        layers.perm = PermutationSpec::random(d, rng);
    }
    Ok(HybridOracle::Layers(SpsPru::from_layers(*spec, &layers)?))
}

/// `ω_3`-valued example values used in documentation and tests.
pub fn cube_root_phase(k: u64) -> C64 {
    C64::from_polar(1.0, TAU * (k % 3) as f64 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, max_abs_diff};

    #[test]
    fn fourier_d2_is_hadamard_block() {
        let spec = SubspaceSpec::new(2, 2).unwrap();
        let h = fourier_unitary(&spec).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [[s, s, 0., 0.], [s, -s, 0., 0.], [0., 0., 1., 0.], [0., 0., 0., 1.]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((h.matrix()[(i, j)] - c64(expect[i][j], 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn phase_and_permutation_examples() {
        let spec = SubspaceSpec::new(2, 3).unwrap();
        let z = phase_unitary(&spec, &PhaseFunction::new(vec![0, 1, 2], 3).unwrap()).unwrap();
        let expect = [ONE, cube_root_phase(1), cube_root_phase(2), ONE];
        for i in 0..4 {
            assert!((z.matrix()[(i, i)] - expect[i]).norm() < 1e-15);
        }
        let p = permutation_unitary(&spec, &PermutationSpec::new(vec![1, 2, 0]).unwrap()).unwrap();
        assert_eq!(p.matrix()[(1, 0)], ONE);
        assert_eq!(p.matrix()[(0, 2)], ONE);
        assert_eq!(p.matrix()[(3, 3)], ONE);
        assert!(PermutationSpec::new(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn threefold_block_matches_dense_product() {
        let spec = SubspaceSpec::new(2, 3).unwrap();
        let f1 = PhaseFunction::new(vec![1, 0, 2], 3).unwrap();
        let f2 = PhaseFunction::new(vec![2, 2, 1], 3).unwrap();
        let f3 = PhaseFunction::new(vec![0, 1, 1], 3).unwrap();
        let h = fourier_unitary(&spec).unwrap();
        let dense = phase_unitary(&spec, &f3).unwrap().matrix()
            * h.matrix()
            * phase_unitary(&spec, &f2).unwrap().matrix()
            * h.matrix()
            * phase_unitary(&spec, &f1).unwrap().matrix();
        let block = threefold_block(3, &f1.values, &f2.values, &f3.values);
        assert!(max_abs_diff(&spec.embed(&block).unwrap(), &dense) < 1e-14);
    }

    // Brute-force oracle: build the full (d²×d²) conjugation for every triple.
    fn brute_twirl(d: usize) -> (CMatrix, CMatrix) {
        let per = d.pow(d as u32);
        let (mut c, mut i) = (CMatrix::zeros(d * d, d * d), CMatrix::zeros(d * d, d * d));
        let (mut f1, mut f2, mut f3) = (vec![0; d], vec![0; d], vec![0; d]);
        for a in 0..per {
            digits(a, d, &mut f1);
            for b in 0..per {
                digits(b, d, &mut f2);
                for e in 0..per {
                    digits(e, d, &mut f3);
                    let u = threefold_block(d, &f1, &f2, &f3);
                    let uu = u.kronecker(&u);
                    c += &uu * pi_eq(d) * uu.adjoint();
                    i += uu.adjoint() * pi_eq(d) * &uu;
                }
            }
        }
        let n = (per * per * per) as f64;
        (c.unscale(n), i.unscale(n))
    }

    #[test]
    fn exhaustive_twirl_matches_bruteforce() {
        for d in [1, 2, 3] {
            let m = moments_exact_threefold(d).unwrap();
            let (c, i) = brute_twirl(d);
            assert!(max_abs_diff(&m.conj, &c) < 1e-12);
            assert!(max_abs_diff(&m.inv, &i) < 1e-12);
            assert!(max_abs_diff(&m.conj, &threefold_exact_twirl(d)) < 1e-12);
            assert!(max_abs_diff(&m.inv, &threefold_exact_twirl(d)) < 1e-12);
        }
        for d in [1, 3] {
            let m = moments_exact_threefold(d).unwrap();
            assert!(max_abs_diff(&m.conj, &threefold_closed_form(d)) < 1e-12);
        }
    }

    #[test]
    fn d2_twirl_is_degenerate() {
        let m = moments_exact_threefold(2).unwrap();
        assert!((max_abs_diff(&m.conj, &threefold_closed_form(2)) - 0.25).abs() < 1e-12);
        let dev = operator_norm(&(&m.conj - haar_closed_form(2)));
        assert!((dev - 2.0 / 3.0).abs() < 1e-12);
        assert!(dev > design_epsilon(2));
    }

    #[test]
    fn closed_form_deviation_values() {
        for (d, v) in [(1usize, 0.0), (2, 1.0 / 6.0), (3, 1.0 / 18.0), (4, 3.0 / 80.0)] {
            let dev = operator_norm(&(threefold_closed_form(d) - haar_closed_form(d)));
            assert!((dev - v).abs() < 1e-12, "d={d}: {dev}");
            assert!((threefold_closed_form_deviation(d) - v).abs() < 1e-15);
        }
        assert!((threefold_exact_deviation(2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(threefold_exact_deviation(3), threefold_closed_form_deviation(3));
    }

    #[test]
    fn design_check_exact_examples() {
        let r = design_check(&SubspaceSpec::new(2, 2).unwrap(), EnsembleKind::ThreeFold, TwirlMode::Exact).unwrap();
        assert!((r.deviation_conjugate - 2.0 / 3.0).abs() < 1e-10);
        assert!(!r.pass);
        let r = design_check(&SubspaceSpec::new(2, 3).unwrap(), EnsembleKind::ThreeFold, TwirlMode::Exact).unwrap();
        assert!((r.deviation_inverse - 1.0 / 18.0).abs() < 1e-10);
        assert!(r.pass);
    }

    #[test]
    fn haar_mc_twirl_close_to_closed_form() {
        let m = moments_monte_carlo(2, EnsembleKind::Haar, 20_000, 9).unwrap();
        assert!(max_abs_diff(&m.conj, &haar_closed_form(2)) < 0.02);
        assert!(max_abs_diff(&m.inv, &haar_closed_form(2)) < 0.02);
        let se = m.standard_error.unwrap();
        assert!(se > 0.0 && se < 0.01);
    }

    #[test]
    fn mc_is_deterministic() {
        let a = moments_monte_carlo(2, EnsembleKind::ThreeFold, 2500, 3).unwrap();
        let b = moments_monte_carlo(2, EnsembleKind::ThreeFold, 2500, 3).unwrap();
        assert_eq!(a.conj, b.conj);
    }

    #[test]
    fn key_lemma_d3_t1_values() {
        let r = key_lemma_check(3, 1, TwirlMode::Exact).unwrap();
        for s in [&r.inverse_side, &r.forward_side] {
            assert!((s.eq_norm - 5.0 / 9.0).abs() < 1e-10);
            assert!((s.epr_norm - 1.0 / 3.0).abs() < 1e-10);
            assert!((s.lhs - (1.0 / 3.0 + 2.0 / 3f64.sqrt())).abs() < 1e-10);
            assert_eq!(s.argmax, (0, 1));
        }
        assert!((r.rhs - 6.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!(r.transpose_consistency < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn threefold_partial_transpose_closed_form() {
        // (twirl)^{T2} − Π^EPR = Π^eq/d² + (d−1)/d² I − Π^EPR/d.
        for d in [3usize] {
            let m = moments_exact_threefold(d).unwrap();
            let dd = (d * d) as f64;
            let id = CMatrix::identity(d * d, d * d);
            let expect = pi_eq(d).unscale(dd) + id.scale((d - 1) as f64 / dd) - pi_epr(d).unscale(d as f64);
            let got = partial_transpose_second(&m.inv, d).unwrap() - pi_epr(d);
            assert!(max_abs_diff(&got, &expect) < 1e-12);
        }
    }

    #[test]
    fn haar_partial_transpose_lemma() {
        for d in 1..6 {
            let lhs = partial_transpose_second(&haar_closed_form(d), d).unwrap() - pi_epr(d);
            let rhs = (CMatrix::identity(d * d, d * d) - pi_epr(d)).unscale((d + 1) as f64);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn spspru_fixes_subspace_and_is_unitary() {
        let spec = SubspaceSpec::new(4, 8).unwrap();
        let key = SpsPruKey { prp: PrfKey([1, 2]), prf: PrfKey([3, 4]), prf_prime: PrfKey([5, 6]) };
        let o = spspru_build(&spec, &key, OracleMode::KeyedMixer).unwrap();
        let u = o.to_unitary().unwrap();
        for x in 8..16 {
            for y in 0..16 {
                let e = if x == y { ONE } else { ZERO };
                assert!((u.matrix()[(y, x)] - e).norm() < 1e-12);
                assert!((u.matrix()[(x, y)] - e).norm() < 1e-12);
            }
        }
        let again = spspru_build(&spec, &key, OracleMode::KeyedMixer).unwrap().to_matrix().unwrap();
        assert_eq!(&again, u.matrix());
    }

    #[test]
    fn spspru_matrix_free_matches_dense_layers() {
        let spec = SubspaceSpec::new(3, 6).unwrap();
        let key = SpsPruKey { prp: PrfKey([7, 2]), prf: PrfKey([3, 9]), prf_prime: PrfKey([5, 1]) };
        let layers = spspru_layers(&spec, &key, OracleMode::KeyedMixer, true).unwrap();
        let h = fourier_unitary(&spec).unwrap().into_inner();
        let z = |p: &PhaseFunction| phase_unitary(&spec, p).unwrap().into_inner();
        let tf = |l: &[PhaseFunction; 3]| z(&l[2]) * &h * z(&l[1]) * &h * z(&l[0]);
        let dense = tf(&layers.e)
            * permutation_unitary(&spec, &layers.perm).unwrap().into_inner()
            * z(layers.f.as_ref().unwrap())
            * tf(&layers.c);
        let o = SpsPru::from_layers(spec, &layers).unwrap();
        assert!(max_abs_diff(&o.to_matrix().unwrap(), &dense) < 1e-12);
        let mut v: Vec<C64> = (0..8).map(|k| c64(k as f64, 1.0 - k as f64)).collect();
        let orig = v.clone();
        o.apply(&mut v).unwrap();
        o.apply_inverse(&mut v).unwrap();
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn hybrids_are_unitary_and_fix_s() {
        let spec = SubspaceSpec::new(3, 5).unwrap();
        let mut rng = stream_rng(1, 1);
        for lvl in 0..=4u8 {
            let o = hybrid_oracle(HybridLevel::from_index(lvl).unwrap(), &spec, OracleMode::ExactRandom, &mut rng)
                .unwrap();
            let u = o.to_unitary().unwrap();
            for x in 5..8 {
                assert!((u.matrix()[(x, x)] - ONE).norm() < 1e-12);
            }
        }
        assert!(HybridLevel::from_index(5).is_err());
    }

    #[test]
    fn spru_sample_is_unitary() {
        let spec = SubspaceSpec::new(2, 3).unwrap();
        let mut rng = stream_rng(2, 2);
        let u = spru_sample(&spec, &mut rng).unwrap();
        assert!((u.matrix()[(3, 3)] - ONE).norm() < 1e-12);
    }
}
