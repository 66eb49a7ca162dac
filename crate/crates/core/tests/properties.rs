use proptest::prelude::*;
use rand::Rng;

use qobf_core::analysis::{
    distinguish_experiment, jordan_decompose, jordan_reconstruction_error, near_fixing_instance, nearest_subspace_fixing,
    DistinguishingAdversary, JordanBlock, OracleFamily, ANGLE_EPS,
};
use qobf_core::circuits::{channel_of, compose_unitary, controlled_lift, random_circuit, QuantumCircuit};
use qobf_core::ensembles::{spspru_build, SpsPruKey};
use qobf_core::linalg::{
    self, diamond_distance_unitary, haar_isometry, haar_on_subspace, haar_unitary, operator_norm,
    partial_trace_leading, partial_transpose_second, random_density, random_state, stream_rng, trace_norm, CMatrix,
    ProjectorMatrix, SubspaceSpec, C64, ONE, ZERO,
};
use qobf_core::obfuscation::{extension_defect, mu_unif_sample};
use qobf_core::path_recording::{BitField, PathRecordingOracle, RecordKey, Relation, RelationState};
use qobf_core::prp::{OracleMode, PrfKey, PrpInstance};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn random_projector(dim: usize, rank: usize, rng: &mut impl Rng) -> ProjectorMatrix {
    if rank == 0 {
        return ProjectorMatrix::try_new(CMatrix::zeros(dim, dim)).unwrap();
    }
    let q = haar_isometry(dim, rank, rng);
    ProjectorMatrix::try_new(&q * q.adjoint()).unwrap()
}

/// Min eigenvalue of a Hermitian matrix.
fn min_eigen(m: &CMatrix) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `Tr` over the trailing `2^out` factor.
fn trace_trailing(m: &CMatrix, out: usize) -> CMatrix {
    let dout = 1usize << out;
    let din = m.nrows() / dout;
    CMatrix::from_fn(din, din, |i, j| (0..dout).map(|a| m[(i * dout + a, j * dout + a)]).sum())
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn partial_transpose_norm_at_most_d(d in 2usize..=4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let o = linalg::ginibre(d * d, d * d, &mut rng);
        let pt = partial_transpose_second(&o, d).unwrap();
        prop_assert!(operator_norm(&pt) <= d as f64 * operator_norm(&o) + 1e-9);
    }

    #[test]
    fn operator_norm_is_unitarily_invariant(dim in 2usize..=8, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let a = linalg::ginibre(dim, dim, &mut rng);
        let (u, v) = (haar_unitary(dim, &mut rng), haar_unitary(dim, &mut rng));
        let b = u.matrix() * &a * v.matrix();
        prop_assert!((operator_norm(&b) - operator_norm(&a)).abs() < 1e-9);
        let c = linalg::ginibre(dim, dim, &mut rng);
        prop_assert!(operator_norm(&(&a * &c)) <= operator_norm(&a) * operator_norm(&c) + 1e-9);
    }

    #[test]
    fn haar_on_subspace_fixes_s(n in 1usize..=4, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let d = 1 + ((((1usize << n) - 1) as f64) * frac) as usize;
        let spec = SubspaceSpec::new(n, d).unwrap();
        let w = haar_on_subspace(&spec, &mut stream_rng(seed, 0));
        for x in d..1 << n {
            for r in 0..1 << n {
                let want = if r == x { ONE } else { ZERO };
                prop_assert_eq!(w.matrix()[(r, x)], want);
            }
        }
    }

    #[test]
    fn diamond_distance_bounds_state_distinction(dim in 2usize..=4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let (u, v) = (haar_unitary(dim, &mut rng), haar_unitary(dim, &mut rng));
        let dd = diamond_distance_unitary(&u, &v).unwrap();
        for _ in 0..20 {
            let psi = random_state(dim, &mut rng);
            let rho = &psi * psi.adjoint();
            let diff = u.matrix() * &rho * u.matrix().adjoint() - v.matrix() * &rho * v.matrix().adjoint();
            prop_assert!(trace_norm(&diff) <= dd + 1e-6);
        }
    }

    #[test]
    fn partial_trace_is_trace_preserving_and_positive(total in 1usize..=4, keep in 0usize..=4, seed in any::<u64>()) {
        let keep = keep.min(total);
        let rho = random_density(1 << total, &mut stream_rng(seed, 0));
        let red = partial_trace_leading(rho.matrix(), total, keep).unwrap();
        prop_assert!((red.trace() - C64::new(1.0, 0.0)).norm() < 1e-9);
        prop_assert!(min_eigen(&red) > -1e-9);
    }

    #[test]
    fn prp_is_a_bijection_with_inverse(d in 1u64..=4096, exact in any::<bool>(), k0 in any::<u64>(), k1 in any::<u64>()) {
        let mode = if exact { OracleMode::ExactRandom } else { OracleMode::KeyedMixer };
        let p = PrpInstance::from_key(d, mode, PrfKey([k0, k1])).unwrap();
        let table = p.table();
        let mut seen = vec![false; d as usize];
        for (x, &y) in table.iter().enumerate() {
            prop_assert!(y < d && !seen[y as usize]);
            seen[y as usize] = true;
            prop_assert_eq!(p.inverse(y).unwrap(), x as u64);
        }
    }

    #[test]
    fn spspru_preserves_s(n in 1usize..=4, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let d = 1 + ((((1usize << n) - 1) as f64) * frac) as usize;
        let spec = SubspaceSpec::new(n, d).unwrap();
        let key = SpsPruKey::random(&mut stream_rng(seed, 0));
        let u = spspru_build(&spec, &key, OracleMode::KeyedMixer).unwrap().to_unitary().unwrap();
        prop_assert!(linalg::unitarity_defect(u.matrix()) < 1e-9);
        for x in d..1 << n {
            for r in 0..1 << n {
                let want = if r == x { 1.0 } else { 0.0 };
                prop_assert!((u.matrix()[(r, x)] - C64::new(want, 0.0)).norm() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn recording_oracle_fixes_values_outside_d(d in 1u64..4, sys in 0u64..4, l in proptest::collection::vec((0u64..4, 0u64..4), 0..3), r in proptest::collection::vec((0u64..4, 0u64..4), 0..2)) {
        prop_assume!(sys >= d);
        let o = PathRecordingOracle::new(d, BitField::new(2, 0, 2).unwrap(), 0).unwrap();
        let mut st = RelationState::empty(2, 1, 6).unwrap();
        st.insert(RecordKey { sys, rels: vec![Relation::new(l, r)] }, ONE).unwrap();
        prop_assert_eq!(&o.forward(&st).unwrap(), &st);
        prop_assert_eq!(&o.inverse(&st).unwrap(), &st);
    }

    #[test]
    fn fresh_forward_queries_record_distinct_images(n in 1usize..=3, t in 1usize..=3, seed in any::<u64>()) {
        let d = 1u64 << n;
        prop_assume!(t as u64 <= d);
        // Query register followed by t − 1 parking fields.
        let bits = n * t;
        let o = PathRecordingOracle::new(d, BitField::new(bits, 0, n).unwrap(), 0).unwrap();
        let mut rng = stream_rng(seed, 0);
        let x: u64 = rng.random_range(0..d);
        let mut st = RelationState::basis(bits, 1, t, x << (bits - n)).unwrap();
        for q in 0..t {
            st = o.forward(&st).unwrap();
            if q + 1 < t {
                st = st.swap_fields(0, n * (q + 1), n).unwrap();
                let y: u64 = rng.random_range(0..d);
                st = st.permute_sys(|s| s ^ (y << (bits - n))).unwrap();
            }
        }
        prop_assert!((st.norm_sqr() - 1.0).abs() < 1e-9);
        for (k, _) in st.iter() {
            let rel = &k.rels[0];
            prop_assert_eq!(rel.left.len(), t);
            prop_assert!(rel.right.is_empty());
            prop_assert_eq!(rel.image().len(), t);
        }
    }

    #[test]
    fn alternating_queries_preserve_norm(ops in proptest::collection::vec(any::<bool>(), 1..=3), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let o = PathRecordingOracle::new(4, BitField::new(3, 0, 2).unwrap(), 0).unwrap();
        let mut st = RelationState::from_sys_vector(&random_state(8, &mut rng), 1, 3).unwrap();
        for fwd in ops {
            st = if fwd { o.forward(&st).unwrap() } else { o.inverse(&st).unwrap() };
            prop_assert!((st.norm_sqr() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn controlled_lift_matches_block_formula(m in 1usize..=3, c in 0usize..=2, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let q = random_circuit(0, 0, m, 5, &mut rng).unwrap();
        let u = compose_unitary(&q).unwrap();
        let lifted = compose_unitary(&controlled_lift(&q, c).unwrap()).unwrap();
        let big = 1usize << (m + c);
        let dm = 1usize << m;
        let mut want = CMatrix::identity(big, big);
        want.view_mut((big - dm, big - dm), (dm, dm)).copy_from(u.matrix());
        prop_assert!(linalg::max_abs_diff(lifted.matrix(), &want) < 1e-10);
    }

    #[test]
    fn channels_are_cptp(m in 1usize..=3, n in 0usize..=3, n_out in 0usize..=3, seed in any::<u64>()) {
        let (n, n_out) = (n.min(m), n_out.min(m));
        let q = random_circuit(n, n_out, m, 6, &mut stream_rng(seed, 0)).unwrap();
        let j = channel_of(&q).unwrap().choi();
        prop_assert!(min_eigen(&j) > -1e-8);
        let tp = trace_trailing(&j, n_out);
        prop_assert!(linalg::max_abs_diff(&tp, &CMatrix::identity(1 << n, 1 << n)) < 1e-8);
    }

    #[test]
    fn circuit_json_round_trips(m in 1usize..=3, seed in any::<u64>()) {
        let q = random_circuit(1.min(m), 1, m, 6, &mut stream_rng(seed, 0)).unwrap();
        let back = QuantumCircuit::from_json(&q.to_json()).unwrap();
        prop_assert_eq!(back, q);
    }

    #[test]
    fn mu_unif_samples_extend_the_channel(m in 1usize..=3, n in 0usize..=3, n_out in 0usize..=3, seed in any::<u64>()) {
        let (n, n_out) = (n.min(m), n_out.min(m));
        let mut rng = stream_rng(seed, 0);
        let q = random_circuit(n, n_out, m, 6, &mut rng).unwrap();
        let phi = channel_of(&q).unwrap();
        let w = mu_unif_sample(&compose_unitary(&q).unwrap(), n, n_out, &mut rng).unwrap();
        prop_assert!(extension_defect(&w, n, n_out, &phi).unwrap() < 1e-9);
    }

    #[test]
    fn jordan_blocks_partition_and_reconstruct(dim in 2usize..=7, ra in 0usize..=7, rb in 0usize..=7, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let pa = random_projector(dim, ra.min(dim), &mut rng);
        let pb = random_projector(dim, rb.min(dim), &mut rng);
        let blocks = jordan_decompose(&pa, &pb).unwrap();
        prop_assert_eq!(blocks.iter().map(JordanBlock::dim).sum::<usize>(), dim);
        let (ea, eb) = jordan_reconstruction_error(&pa, &pb, &blocks);
        prop_assert!(ea < 1e-8 && eb < 1e-8);
        for b in &blocks {
            if let Some(theta) = b.theta() {
                prop_assert!(theta > ANGLE_EPS && theta < std::f64::consts::FRAC_PI_2 - ANGLE_EPS);
            }
        }
    }

    #[test]
    fn fixing_construction_inequalities(dim in 3usize..=8, rank in 1usize..=7, eps in 0.001f64..0.2, seed in any::<u64>()) {
        let rank = rank.min(dim - 1);
        let (v, pi) = near_fixing_instance(dim, rank, eps, &mut stream_rng(seed, 0)).unwrap();
        let c = nearest_subspace_fixing(&v, &pi).unwrap();
        prop_assert!(c.fixing_error < 1e-9);
        prop_assert!(c.projector_gap <= 2.0 * c.delta + 1e-9);
        prop_assert!(c.max_sin_theta <= 2.0 * c.delta + 1e-9);
        prop_assert!(c.rotation_defect <= c.max_half_angle_chord + 1e-9);
        prop_assert!(c.distance <= c.delta + 2.0 * c.rotation_defect + 1e-9);
        let wpi = c.w.matrix() * pi.matrix();
        prop_assert!(linalg::max_abs_diff(&wpi, pi.matrix()) < 1e-9);
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn swapping_oracles_negates_advantage(seed in any::<u64>(), d in 2usize..=4) {
        let a: OracleFamily = format!("spspru:n=2,d={d},mode=exact").parse().unwrap();
        let b: OracleFamily = format!("haar:n=2,d={d}").parse().unwrap();
        let adv = DistinguishingAdversary::swap_test(2, d).unwrap();
        let ab = distinguish_experiment(&a, &b, &adv, 200, seed).unwrap();
        let ba = distinguish_experiment(&b, &a, &adv, 200, seed).unwrap();
        prop_assert_eq!(ab.advantage, -ba.advantage);
        prop_assert!((0.0..=1.0).contains(&ab.acceptance_rate_a) && (0.0..=1.0).contains(&ab.acceptance_rate_b));
    }
}

