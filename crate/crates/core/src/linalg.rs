//! Dense complex linear algebra: validated matrix wrappers, norms, partial
//! operations on bipartite spaces, Haar sampling and the unitary diamond
//! distance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance used when validating unitarity, hermiticity and projectors.
pub const VALIDATION_TOL: f64 = 1e-9;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Deterministic RNG for stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn check_finite(m: &CMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    Ok(())
}

pub fn unitarity_defect(m: &CMatrix) -> f64 {
    let id = CMatrix::identity(m.nrows(), m.ncols());
    max_abs_diff(&(m.adjoint() * m), &id)
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// A square matrix with `U†U = I` up to [`VALIDATION_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    pub fn try_new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m)?;
        let dev = unitarity_defect(&m);
        if dev > VALIDATION_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn compose(&self, rhs: &UnitaryMatrix) -> Self {
        Self(&self.0 * &rhs.0)
    }
}

/// Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn try_new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m)?;
        let dev = hermiticity_defect(&m);
        if dev > VALIDATION_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > VALIDATION_TOL {
            return Err(Error::NotDensity(format!("trace {tr}")));
        }
        let h = (&m + m.adjoint()).scale(0.5);
        let min = h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -VALIDATION_TOL {
            return Err(Error::NotDensity(format!("eigenvalue {min:.3e}")));
        }
        Ok(Self(m))
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        let nrm = psi.norm();
        if (nrm - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::NotDensity(format!("state norm {nrm}")));
        }
        Ok(Self(psi * psi.adjoint()))
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidArgument(format!("basis index {k} out of range {dim}")));
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = ONE;
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

/// Hermitian idempotent.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorMatrix(CMatrix);

impl ProjectorMatrix {
    pub fn try_new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m)?;
        let dev = hermiticity_defect(&m);
        if dev > VALIDATION_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let dev = max_abs_diff(&(&m * &m), &m);
        if dev > VALIDATION_TOL {
            return Err(Error::NotProjector(dev));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.trace().re.round() as usize
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

/// The split of `(C^2)^{⊗n}` into the active block `span{|x⟩ : x < d}` and
/// the fixed subspace `S = span{|x⟩ : x ≥ d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SubspaceSpec {
    pub n: usize,
    pub d: usize,
}

/// Widest register for which dense matrices are built.
pub const MAX_DENSE_QUBITS: usize = 12;

impl SubspaceSpec {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if n > 62 {
            return Err(Error::ResourceLimit(format!("{n} qubits")));
        }
        if d < 1 || d > 1usize << n {
            return Err(Error::InvalidArgument(format!("d = {d} must lie in [1, 2^{n}]")));
        }
        Ok(Self { n, d })
    }

    /// Whole register active.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, 1usize << n)
    }

    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn is_fixed(&self, x: usize) -> bool {
        x >= self.d
    }

    /// Embeds a `d×d` block on `[d]` as `block ⊕ I_S`.
    pub fn embed(&self, block: &CMatrix) -> Result<CMatrix> {
        if block.nrows() != self.d || block.ncols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: block.nrows() });
        }
        let dim = self.dim();
        let mut m = CMatrix::identity(dim, dim);
        m.view_mut((0, 0), (self.d, self.d)).copy_from(block);
        Ok(m)
    }

    pub fn restrict(&self, full: &CMatrix) -> CMatrix {
        full.view((0, 0), (self.d, self.d)).into_owned()
    }

    /// Projector onto `S`.
    pub fn fixed_projector(&self) -> CMatrix {
        let dim = self.dim();
        CMatrix::from_fn(dim, dim, |i, j| if i == j && i >= self.d { ONE } else { ZERO })
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Sum of singular values.
pub fn trace_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().sum()
}

/// `Tr` over the leading `total_qubits − keep_last` qubits (qubit 0 is the
/// most significant bit of the basis index).
pub fn partial_trace_leading(a: &CMatrix, total_qubits: usize, keep_last: usize) -> Result<CMatrix> {
    let dim = 1usize << total_qubits;
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: a.nrows() });
    }
    if keep_last > total_qubits {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {keep_last} of {total_qubits} qubits"
        )));
    }
    let keep = 1usize << keep_last;
    let outer = dim / keep;
    Ok(CMatrix::from_fn(keep, keep, |i, j| {
        (0..outer).map(|h| a[(h * keep + i, h * keep + j)]).sum()
    }))
}

/// Partial transpose on the second factor of `C^d ⊗ C^d`:
/// `|x⟩⟨y| ⊗ |z⟩⟨w| ↦ |x⟩⟨y| ⊗ |w⟩⟨z|`.
pub fn partial_transpose_second(o: &CMatrix, d: usize) -> Result<CMatrix> {
    if o.nrows() != d * d || o.ncols() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, found: o.nrows() });
    }
    let mut out = CMatrix::zeros(d * d, d * d);
    for x in 0..d {
        for y in 0..d {
            for z in 0..d {
                for w in 0..d {
                    out[(x * d + w, y * d + z)] = o[(x * d + z, y * d + w)];
                }
            }
        }
    }
    Ok(out)
}

/// Swap operator `F|x,y⟩ = |y,x⟩` on `C^d ⊗ C^d`.
pub fn flip(d: usize) -> CMatrix {
    let mut f = CMatrix::zeros(d * d, d * d);
    for x in 0..d {
        for y in 0..d {
            f[(y * d + x, x * d + y)] = ONE;
        }
    }
    f
}

/// `Π^eq = Σ_x |xx⟩⟨xx|`.
pub fn pi_eq(d: usize) -> CMatrix {
    let mut p = CMatrix::zeros(d * d, d * d);
    for x in 0..d {
        p[(x * d + x, x * d + x)] = ONE;
    }
    p
}

/// `Π^sym = (I + F)/2`.
pub fn pi_sym(d: usize) -> CMatrix {
    (CMatrix::identity(d * d, d * d) + flip(d)).scale(0.5)
}

/// `Π' = Π^sym − Π^eq`, the symmetric span of `|xy⟩ + |yx⟩`, `x ≠ y`.
pub fn pi_prime(d: usize) -> CMatrix {
    pi_sym(d) - pi_eq(d)
}

/// Projector onto `(1/√d) Σ_x |xx⟩`.
pub fn pi_epr(d: usize) -> CMatrix {
    let mut p = CMatrix::zeros(d * d, d * d);
    let v = C64::new(1.0 / d as f64, 0.0);
    for x in 0..d {
        for y in 0..d {
            p[(x * d + x, y * d + y)] = v;
        }
    }
    p
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Complex Ginibre matrix with `N(0, 1/2)` real and imaginary parts.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(dim, |_, _| gaussian(rng));
    let n = v.norm();
    v.unscale(n)
}

/// Mixed state `G G† / Tr(G G†)` from a square Ginibre matrix.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, dim, rng);
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix(m.map(|z| z / tr))
}

/// First `k` columns of a Haar unitary on `C^d`.
pub fn haar_isometry<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> CMatrix {
    assert!(k <= d && d > 0);
    let z = ginibre(d, k, rng);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> UnitaryMatrix {
    UnitaryMatrix(haar_isometry(d, d, rng))
}

/// Haar unitary on `[d]`, identity on `S`.
pub fn haar_on_subspace<R: Rng + ?Sized>(spec: &SubspaceSpec, rng: &mut R) -> UnitaryMatrix {
    let block = haar_isometry(spec.d, spec.d, rng);
    UnitaryMatrix(spec.embed(&block).expect("block has dimension d"))
}

/// Eigenvalues of a normal matrix via the complex Schur form.
pub fn eigenvalues_normal(m: &CMatrix) -> Vec<C64> {
    m.clone()
        .schur()
        .eigenvalues()
        .map(|v| v.iter().cloned().collect())
        .unwrap_or_default()
}

/// Distance from the origin to the convex hull of unit-modulus points with
/// the given arguments.
pub fn hull_distance_from_origin(angles: &[f64]) -> f64 {
    use std::f64::consts::{PI, TAU};
    if angles.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = angles.iter().map(|t| t.rem_euclid(TAU)).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut max_gap = TAU - (a[a.len() - 1] - a[0]);
    for w in a.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    if max_gap <= PI {
        return 0.0;
    }
    let span = TAU - max_gap;
    (span / 2.0).cos()
}

/// `‖U·U† − V·V†‖_⋄ = 2√(1 − ν²)` with `ν` the distance from 0 to the hull of
/// the spectrum of `U†V`.
pub fn diamond_distance_unitary(u: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), found: v.dim() });
    }
    let w = u.matrix().adjoint() * v.matrix();
    let angles: Vec<f64> = eigenvalues_normal(&w).iter().map(|z| z.arg()).collect();
    let nu = hull_distance_from_origin(&angles).min(1.0);
    Ok(2.0 * (1.0 - nu * nu).max(0.0).sqrt())
}

/// Applies a `2^w × 2^w` matrix to the `w` qubits starting at `offset`
/// (counted from the most significant end) of an `nq`-qubit vector.
pub fn apply_on_qubits(state: &mut CVector, nq: usize, offset: usize, g: &CMatrix) {
    let w = (g.nrows() as f64).log2().round() as usize;
    assert_eq!(1usize << w, g.nrows());
    assert!(offset + w <= nq);
    let low = 1usize << (nq - offset - w);
    let block = 1usize << w;
    let high = 1usize << offset;
    let mut buf = vec![ZERO; block];
    for h in 0..high {
        for l in 0..low {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = state[(h * block + k) * low + l];
            }
            for r in 0..block {
                let mut acc = ZERO;
                for (k, b) in buf.iter().enumerate() {
                    acc += g[(r, k)] * b;
                }
                state[(h * block + r) * low + l] = acc;
            }
        }
    }
}
