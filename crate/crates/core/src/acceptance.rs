//! End-to-end acceptance checks, one function per criterion.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    distinguish_experiment, jordan_decompose, jordan_reconstruction_error, near_fixing_instance,
    nearest_subspace_fixing, DistinguishingAdversary, OracleFamily, FIXING_CONSTANT,
};
use crate::circuits::{channel_apply, channel_of, choi_distance, compose_unitary, random_circuit, QuantumCircuit};
use crate::ensembles::{
    design_check, haar_closed_form, key_lemma_check, moments_monte_carlo, spspru_build, threefold_closed_form_deviation,
    EnsembleKind, SpsPruKey, TwirlMode,
};
use crate::error::Result;
use crate::linalg::{
    self, ginibre, kron, max_abs_diff, operator_norm, partial_transpose_second, pi_epr, random_state, stream_rng,
    unitarity_defect, CMatrix, DensityMatrix, ProjectorMatrix, SubspaceSpec, UnitaryMatrix, C64, ONE,
};
use crate::obfuscation::{
    extension_defect, ideal_compare, ideal_init, mu_unif_sample, qeval_channel, qeval_pure, qobf, reference_backend,
    round_trip_error, single_query_plan, CircuitParameter, IdealMode,
};
use crate::path_recording::{
    classical_distinct_comparison, BitField, PathRecordingOracle, RecordKey, Relation, RelationState,
};
use crate::prp::{prp_permutation_chi_square, factorial, OracleMode, PrfKey, PrpInstance};

pub const CRITERIA: usize = 13;
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub seconds: f64,
    pub budget_seconds: f64,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CriterionResult {
    /// `PASS 1 name  key=value ...`
    pub fn line(&self) -> String {
        let metrics: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        format!(
            "{} criterion {:>2} {} ({:.1}s) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            metrics.join(" ")
        )
    }
}

struct Builder {
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
    pass: bool,
}

impl Builder {
    fn new() -> Self {
        Self { metrics: BTreeMap::new(), notes: Vec::new(), pass: true }
    }

    fn metric(&mut self, k: impl Into<String>, v: f64) {
        self.metrics.insert(k.into(), v);
    }

    /// Records `value` and requires `value ≤ bound`.
    fn at_most(&mut self, k: impl Into<String>, value: f64, bound: f64) {
        let k = k.into();
        if !(value <= bound) {
            self.pass = false;
            self.notes.push(format!("{k} = {value:.6e} exceeds {bound:.6e}"));
        }
        self.metric(k, value);
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.pass = false;
            self.notes.push(what.into());
        }
    }
}

const NAMES: [&str; CRITERIA] = [
    "exact restricted-design verification",
    "haar twirl closed forms",
    "partial-transpose norm lemma",
    "key-lemma inequality",
    "prp correctness and uniformity",
    "spspru structure",
    "path-recording exactness",
    "path-recording vs haar",
    "pipeline functionality",
    "mu-unif sampler",
    "ideal-functionality equivalence",
    "nearest subspace-fixing unitary",
    "null-advantage sanity",
];

const BUDGETS: [f64; CRITERIA] = [30.0, 120.0, 10.0, 60.0, 120.0, 30.0, 30.0, 300.0, 120.0, 120.0, 120.0, 30.0, 300.0];

pub fn criterion_name(id: usize) -> Option<&'static str> {
    NAMES.get(id.wrapping_sub(1)).copied()
}

/// Runs criterion `id` (1-based). Exceeding the runtime budget fails it.
pub fn run_criterion(id: usize, seed: u64) -> Result<CriterionResult> {
    let name = criterion_name(id)
        .ok_or_else(|| crate::Error::InvalidArgument(format!("criterion {id} not in 1..={CRITERIA}")))?;
    let start = Instant::now();
    let mut b = Builder::new();
    match id {
        1 => c1_restricted_design(&mut b)?,
        2 => c2_haar_twirl(&mut b, seed)?,
        3 => c3_partial_transpose(&mut b, seed),
        4 => c4_key_lemma(&mut b)?,
        5 => c5_prp(&mut b, seed)?,
        6 => c6_spspru(&mut b, seed)?,
        7 => c7_path_recording(&mut b, seed)?,
        8 => c8_recording_vs_haar(&mut b, seed)?,
        9 => c9_pipeline(&mut b, seed)?,
        10 => c10_mu_unif(&mut b, seed)?,
        11 => c11_ideal(&mut b, seed)?,
        12 => c12_fixing(&mut b, seed)?,
        _ => c13_distinguisher(&mut b, seed)?,
    }
    let seconds = start.elapsed().as_secs_f64();
    let budget = BUDGETS[id - 1];
    b.require(seconds <= budget, format!("runtime {seconds:.1}s over the {budget}s budget"));
    Ok(CriterionResult {
        id,
        name: name.to_string(),
        pass: b.pass,
        seconds,
        budget_seconds: budget,
        metrics: b.metrics,
        notes: b.notes,
    })
}

pub fn run_all(seed: u64) -> Result<Vec<CriterionResult>> {
    (1..=CRITERIA).map(|i| run_criterion(i, seed)).collect()
}

fn c1_restricted_design(b: &mut Builder) -> Result<()> {
    for (n, d) in [(1usize, 2usize), (2, 3)] {
        let r = design_check(&SubspaceSpec::new(n, d)?, EnsembleKind::ThreeFold, TwirlMode::Exact)?;
        let dev = r.deviation_conjugate.max(r.deviation_inverse);
        let target = threefold_closed_form_deviation(d);
        b.metric(format!("d{d}_triples"), r.samples as f64);
        b.at_most(format!("d{d}_closed_form_error"), r.closed_form_error_conjugate.max(r.closed_form_error_inverse), 1e-10);
        b.metric(format!("d{d}_deviation"), dev);
        b.at_most(format!("d{d}_deviation_gap"), (dev - target).abs(), 1e-10);
        b.at_most(format!("d{d}_deviation_over_bound"), dev - r.epsilon_bound, 1e-12);
        if d == 2 && dev > target + 1e-10 {
            b.notes.push("d = 2: all phases are ±1, so every sample is monomial and the twirl of Π^eq is Π^eq itself".into());
        }
    }
    Ok(())
}

fn c2_haar_twirl(b: &mut Builder, seed: u64) -> Result<()> {
    for d in [2usize, 3] {
        let m = moments_monte_carlo(d, EnsembleKind::Haar, 100_000, seed)?;
        let haar = haar_closed_form(d);
        b.at_most(format!("d{d}_twirl_error"), max_abs_diff(&m.conj, &haar).max(max_abs_diff(&m.inv, &haar)), 5e-3);
        let epr = pi_epr(d);
        let target = (CMatrix::identity(d * d, d * d) - &epr).scale(1.0 / (d + 1) as f64);
        let err = max_abs_diff(&(partial_transpose_second(&m.conj, d)? - &epr), &target)
            .max(max_abs_diff(&(partial_transpose_second(&m.inv, d)? - &epr), &target));
        b.at_most(format!("d{d}_transpose_error"), err, 5e-3);
    }
    Ok(())
}

fn c3_partial_transpose(b: &mut Builder, seed: u64) {
    let mut rng = stream_rng(seed, 3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for d in [2usize, 3, 4] {
        for i in 0..200 {
            let o = match i % 3 {
                0 => ginibre(d * d, d * d, &mut rng),
                1 => linalg::haar_unitary(d * d, &mut rng).into_inner(),
                _ => {
                    let v = random_state(d * d, &mut rng);
                    let w = random_state(d * d, &mut rng);
                    &v * w.adjoint()
                }
            };
            let ratio = operator_norm(&partial_transpose_second(&o, d).expect("square")) / (d as f64 * operator_norm(&o));
            worst = worst.max(ratio);
            count += 1;
        }
    }
    b.metric("operators", count as f64);
    b.at_most("worst_ratio", worst, 1.0 + 1e-12);
}

fn c4_key_lemma(b: &mut Builder) -> Result<()> {
    let r = key_lemma_check(3, 1, TwirlMode::Exact)?;
    for (side, s) in [("inverse", &r.inverse_side), ("forward", &r.forward_side)] {
        b.at_most(format!("{side}_lhs"), s.lhs, r.rhs + 1e-9);
        b.at_most(format!("{side}_eq_norm"), s.eq_norm, r.eq_bound + 1e-9);
        b.at_most(format!("{side}_epr_norm"), s.epr_norm, r.epr_bound + 1e-9);
    }
    b.metric("rhs", r.rhs);
    Ok(())
}

fn c5_prp(b: &mut Builder, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, 5);
    for d in [1u64, 2, 5, 10, 256, 1000] {
        for mode in [OracleMode::KeyedMixer, OracleMode::ExactRandom] {
            let p = PrpInstance::from_key(d, mode, PrfKey::random(&mut rng))?;
            let table = p.table();
            let mut seen = vec![false; d as usize];
            let mut ok = true;
            for (x, &y) in table.iter().enumerate() {
                ok &= y < d && !std::mem::replace(&mut seen[y as usize], true);
                ok &= p.inverse(y)? == x as u64;
            }
            b.require(ok, format!("d = {d} ({mode:?}) is not a bijection with matching inverse"));
        }
    }
    for d in [3usize, 4] {
        let r = prp_permutation_chi_square(d, 1000 * factorial(d), OracleMode::ExactRandom, seed)?;
        b.metric(format!("d{d}_chi2"), r.statistic);
        b.metric(format!("d{d}_p_value"), r.p_value);
        b.require(r.p_value >= 0.001, format!("d = {d} permutations rejected at p = {:.2e}", r.p_value));
    }
    Ok(())
}

fn c6_spspru(b: &mut Builder, seed: u64) -> Result<()> {
    let spec = SubspaceSpec::new(4, 8)?;
    let mut rng = stream_rng(seed, 6);
    let (mut fix, mut unit) = (0.0f64, 0.0f64);
    let mut exact = true;
    for i in 0..50 {
        let mode = if i % 2 == 0 { OracleMode::KeyedMixer } else { OracleMode::ExactRandom };
        let key = SpsPruKey::random(&mut rng);
        let u = spspru_build(&spec, &key, mode)?.to_unitary()?;
        for x in 8..16 {
            let col = u.matrix().column(x);
            for r in 0..16 {
                let want = if r == x { ONE } else { C64::new(0.0, 0.0) };
                fix = fix.max((col[r] - want).norm());
            }
        }
        unit = unit.max(unitarity_defect(u.matrix()));
        if mode == OracleMode::KeyedMixer {
            exact &= spspru_build(&spec, &key, mode)?.to_unitary()? == u;
        }
    }
    b.at_most("fixed_sector_error", fix, 1e-9);
    b.at_most("unitarity_defect", unit, 1e-9);
    b.require(exact, "key reuse did not reproduce the matrix bit for bit");
    Ok(())
}

fn c7_path_recording(b: &mut Builder, seed: u64) -> Result<()> {
    let mut worst_amp = 0.0f64;
    for n in [1usize, 2, 3] {
        let d = 1u64 << n;
        let o = PathRecordingOracle::new(d, BitField::new(n, 0, n)?, 0)?;
        for k in 0..(d as usize).min(3) {
            let left: Vec<(u64, u64)> = (0..k as u64).map(|j| ((j + 1) % d, j)).collect();
            let rel = Relation::new(left, vec![]);
            let used = rel.image().len();
            let mut st = RelationState::empty(n, 1, 4)?;
            st.insert(RecordKey { sys: 0, rels: vec![rel] }, ONE)?;
            let out = o.forward(&st)?;
            let want = 1.0 / ((d as usize - used) as f64).sqrt();
            b.require(out.len() == d as usize - used, format!("d = {d}, |Im| = {used}: {} terms", out.len()));
            for (_, z) in out.iter() {
                worst_amp = worst_amp.max((z - C64::new(want, 0.0)).norm());
            }
        }
    }
    b.at_most("fresh_amplitude_error", worst_amp, 0.0);

    let mut rng = stream_rng(seed, 7);
    let o = PathRecordingOracle::new(4, BitField::new(3, 0, 2)?, 0)?;
    let mut worst_rt = 0.0f64;
    for i in 0..50 {
        let mut st = RelationState::from_sys_vector(&random_state(8, &mut rng), 1, 3)?;
        for _ in 0..(i % 3) {
            st = if rng.random::<bool>() { o.forward(&st)? } else { o.inverse(&st)? };
            st = st.apply_sys_unitary(0, linalg::haar_unitary(8, &mut rng).matrix())?;
        }
        worst_rt = worst_rt.max(o.inverse(&o.forward(&st)?)?.distance(&st));
        worst_rt = worst_rt.max(o.forward(&o.inverse(&st)?)?.distance(&st));
    }
    b.at_most("round_trip_error", worst_rt, 1e-9);

    let o = PathRecordingOracle::new(3, BitField::new(2, 0, 2)?, 0)?;
    let mut st = RelationState::empty(2, 1, 3)?;
    st.insert(RecordKey { sys: 3, rels: vec![Relation::default()] }, ONE)?;
    st.insert(RecordKey { sys: 3, rels: vec![Relation::new(vec![(0, 1)], vec![(2, 0)])] }, C64::new(0.0, 0.5))?;
    let fixed = o.forward(&st)? == st && o.inverse(&st)? == st;
    b.require(fixed, "x outside [d] was not fixed exactly");
    Ok(())
}

fn c8_recording_vs_haar(b: &mut Builder, seed: u64) -> Result<()> {
    let mut prev: Option<(f64, f64)> = None;
    for n in [2usize, 4, 6, 8] {
        let r = classical_distinct_comparison(n, 10_000, seed)?;
        let d = r.d;
        b.metric(format!("d{d}_statistic"), r.statistic);
        b.metric(format!("d{d}_standard_error"), r.standard_error);
        b.at_most(format!("d{d}_record_collision"), r.collision_record, 0.0);
        if let Some((s, se)) = prev {
            b.require(
                r.statistic <= s + 3.0 * (se + r.standard_error),
                format!("statistic rose at d = {d}: {:.4} after {s:.4}", r.statistic),
            );
        }
        prev = Some((r.statistic, r.standard_error));
    }
    Ok(())
}

fn c9_pipeline(b: &mut Builder, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, 9);
    let (mut worst, mut aux_drift, mut reuse) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let m = rng.random_range(1..=3usize);
        let n = rng.random_range(0..=m.min(2));
        let n_out = rng.random_range(0..=m.min(2));
        let q = random_circuit(n, n_out, m, 6, &mut rng)?;
        let phi = channel_of(&q)?;
        let mut prog = qobf(2, &q, reference_backend(), OracleMode::KeyedMixer, &mut rng)?;
        worst = worst.max(choi_distance(&qeval_channel(&mut prog)?, &phi)?);
        let aux0 = prog.aux().clone();
        for _ in 0..2 {
            let psi = random_state(1 << n, &mut rng);
            let out = qeval_pure(&mut prog, &psi)?;
            let want = channel_apply(&phi, &DensityMatrix::pure(&psi)?)?;
            reuse = reuse.max(max_abs_diff(&out, want.matrix()));
        }
        aux_drift = aux_drift.max((&prog.aux().0 - &aux0.0).camax());
    }
    b.at_most("choi_distance", worst, 1e-8);
    b.at_most("sequential_output_error", reuse, 1e-9);
    b.at_most("aux_drift", aux_drift, 1e-9);
    Ok(())
}

/// `E[W ⊗ W̄]` over `samples` draws.
fn first_moment<R: Rng + ?Sized>(v: &UnitaryMatrix, n: usize, n_out: usize, samples: usize, phi: &crate::circuits::Channel, worst: &mut f64, rng: &mut R) -> Result<CMatrix> {
    let dim = v.dim();
    let mut acc = CMatrix::zeros(dim * dim, dim * dim);
    for _ in 0..samples {
        let w = mu_unif_sample(v, n, n_out, rng)?;
        *worst = worst.max(extension_defect(&w, n, n_out, phi)?);
        acc += kron(w.matrix(), &w.matrix().map(|z| z.conj()));
    }
    Ok(acc.scale(1.0 / samples as f64))
}

fn c10_mu_unif(b: &mut Builder, seed: u64) -> Result<()> {
    let (m, n, n_out) = (4usize, 2usize, 1usize);
    let mut rng = stream_rng(seed, 10);
    let q = random_circuit(n, n_out, m, 10, &mut rng)?;
    let phi = channel_of(&q)?;
    let v = compose_unitary(&q)?;
    // Another extension: rotate the discarded wires after and the
    // non-ancilla-ones inputs before.
    let left = kron(linalg::haar_unitary(1 << (m - n_out), &mut rng).matrix(), &CMatrix::identity(1 << n_out, 1 << n_out));
    let right = linalg::haar_on_subspace(&SubspaceSpec::new(m, (1 << m) - (1 << n))?, &mut rng);
    let v2 = UnitaryMatrix::try_new(left * v.matrix() * right.matrix())?;
    b.at_most("base_extension_gap", extension_defect(&v2, n, n_out, &phi)?, 1e-9);
    let mut worst = 0.0f64;
    let m1 = first_moment(&v, n, n_out, 1000, &phi, &mut worst, &mut rng)?;
    let m2 = first_moment(&v2, n, n_out, 1000, &phi, &mut worst, &mut rng)?;
    b.at_most("extension_defect", worst, 1e-9);
    b.at_most("first_moment_gap", max_abs_diff(&m1, &m2), 5e-2);
    Ok(())
}

fn c11_ideal(b: &mut Builder, seed: u64) -> Result<()> {
    let q = QuantumCircuit::new(1, 1, 1, vec![])?;
    let p = CircuitParameter::of(&q);
    let mut rng = stream_rng(seed, 11);
    let plan = single_query_plan(1, &p, &mut rng)?;
    let r = ideal_compare(1, &q, &plan, 10_000, seed)?;
    b.metric("total_variation", r.total_variation);
    b.at_most("max_z", r.max_z, 3.0);
    b.require(r.pass, "an outcome probability is outside its 3σ band");
    for (label, mode) in [("recording", IdealMode::PathRecording { t_max: 2 }), ("monte_carlo", IdealMode::MonteCarloHaar { seed })] {
        let mut f = ideal_init(1, &q, mode)?;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let st = f.prepare(&random_state(1 << (p.m_prime(1) + 1), &mut rng))?;
            worst = worst.max(round_trip_error(&mut f, &st)?);
            f = ideal_init(1, &q, mode)?;
        }
        b.at_most(format!("{label}_round_trip_error"), worst, 1e-9);
    }
    Ok(())
}

fn c12_fixing(b: &mut Builder, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, 12);
    let (mut fix, mut ratio, mut recon, mut max_delta) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut chain = true;
    for _ in 0..100 {
        let dim = rng.random_range(4..=8usize);
        let rank = rng.random_range(1..dim);
        let eps = rng.random_range(0.005..0.1);
        let (v, pi) = near_fixing_instance(dim, rank, eps, &mut rng)?;
        let c = nearest_subspace_fixing(&v, &pi)?;
        max_delta = max_delta.max(c.delta);
        fix = fix.max(c.fixing_error);
        ratio = ratio.max(c.distance / c.delta);
        chain &= c.chain_holds(1e-9);
        let pp = v.matrix() * pi.matrix() * v.matrix().adjoint();
        let pp = ProjectorMatrix::try_new((&pp + pp.adjoint()).scale(0.5))?;
        let blocks = jordan_decompose(&pi, &pp)?;
        let (ea, eb) = jordan_reconstruction_error(&pi, &pp, &blocks);
        recon = recon.max(ea.max(eb));
    }
    b.at_most("max_delta", max_delta, 0.1);
    b.at_most("fixing_error", fix, 1e-9);
    b.at_most("distance_over_delta", ratio, FIXING_CONSTANT);
    b.at_most("jordan_reconstruction_error", recon, 1e-8);
    b.require(chain, "an intermediate inequality of the construction failed");
    Ok(())
}

fn c13_distinguisher(b: &mut Builder, seed: u64) -> Result<()> {
    let n = 10_000;
    let same: OracleFamily = "spspru:n=4,d=8,mode=exact".parse()?;
    let haar8: OracleFamily = "haar:n=4,d=8".parse()?;
    let swap = DistinguishingAdversary::swap_test(4, 8)?;
    let r = distinguish_experiment(&same, &same, &swap, n, seed)?;
    b.metric("null_advantage", r.advantage);
    b.at_most("null_abs_z", r.z_score.abs(), 3.0);
    let r = distinguish_experiment(&same, &haar8, &swap, n, seed)?;
    b.metric("spspru_vs_haar_d8_z", r.z_score);

    let broken: OracleFamily = "spspru-no-f:n=2,d=2,mode=exact".parse()?;
    let haar2: OracleFamily = "haar:n=2,d=2".parse()?;
    let adv = DistinguishingAdversary::equal_y_outcomes(2, 2)?;
    let r = distinguish_experiment(&broken, &haar2, &adv, n, seed)?;
    b.metric("broken_d2_advantage", r.advantage);
    b.metric("broken_d2_z", r.z_score);
    b.require(r.z_score > 5.0, format!("broken variant only at {:.2}σ", r.z_score));

    let broken8: OracleFamily = "spspru-no-f:n=4,d=8,mode=exact".parse()?;
    let adv8 = DistinguishingAdversary::equal_y_outcomes(4, 8)?;
    let r = distinguish_experiment(&broken8, &haar8, &adv8, n, seed)?;
    b.metric("broken_d8_z", r.z_score);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cover_every_criterion() {
        assert_eq!(criterion_name(1), Some(NAMES[0]));
        assert!(criterion_name(0).is_none() && criterion_name(14).is_none());
        assert!(run_criterion(14, 0).is_err());
    }

    #[test]
    fn builder_records_failures() {
        let mut b = Builder::new();
        b.at_most("x", 2.0, 1.0);
        assert!(!b.pass && b.notes.len() == 1);
        let mut b = Builder::new();
        b.at_most("nan", f64::NAN, 1.0);
        assert!(!b.pass);
    }
}
