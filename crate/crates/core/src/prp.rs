//! Function oracles and a swap-or-not / sometimes-recurse permutation over
//! an arbitrary domain `[d]` built from any such oracle.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Largest domain the converter accepts (the oracle encoding reserves 44 bits
/// for domain points).
pub const MAX_PRP_DOMAIN: u64 = 1 << 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Lazily sampled i.i.d. uniform table.
    ExactRandom,
    /// Keyed add-rotate-xor mixing of `key ‖ input`. Not a vetted PRF.
    KeyedMixer,
}

impl std::str::FromStr for OracleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact-random" | "exact-random-table" => Ok(Self::ExactRandom),
            "mixer" | "keyed-mixer" => Ok(Self::KeyedMixer),
            other => Err(Error::InvalidArgument(format!("unknown oracle mode `{other}`"))),
        }
    }
}

/// 128-bit key. In exact-random mode it seeds the table sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrfKey(pub [u64; 2]);

impl PrfKey {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self([rng.next_u64(), rng.next_u64()])
    }
}

enum OracleKind {
    Table(Mutex<(ChaCha8Rng, HashMap<u64, u64>)>),
    Mixer([u64; 2]),
}

/// A function `{0,1}^input_bits → {0,1}^output_bits`.
pub struct FunctionOracle {
    input_bits: u32,
    output_bits: u32,
    kind: OracleKind,
}

impl std::fmt::Debug for FunctionOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionOracle")
            .field("input_bits", &self.input_bits)
            .field("output_bits", &self.output_bits)
            .field("mode", &self.mode())
            .finish()
    }
}

#[inline]
fn sipround(v: &mut [u64; 4]) {
    v[0] = v[0].wrapping_add(v[1]);
    v[1] = v[1].rotate_left(13);
    v[1] ^= v[0];
    v[0] = v[0].rotate_left(32);
    v[2] = v[2].wrapping_add(v[3]);
    v[3] = v[3].rotate_left(16);
    v[3] ^= v[2];
    v[0] = v[0].wrapping_add(v[3]);
    v[3] = v[3].rotate_left(21);
    v[3] ^= v[0];
    v[2] = v[2].wrapping_add(v[1]);
    v[1] = v[1].rotate_left(17);
    v[1] ^= v[2];
    v[2] = v[2].rotate_left(32);
}

fn mix(key: [u64; 2], x: u64) -> u64 {
    let mut v = [
        key[0] ^ 0x736f_6d65_7073_6575,
        key[1] ^ 0x646f_7261_6e64_6f6d,
        key[0] ^ 0x6c79_6765_6e65_7261,
        key[1] ^ 0x7465_6462_7974_6573,
    ];
    v[3] ^= x;
    sipround(&mut v);
    sipround(&mut v);
    v[0] ^= x;
    v[2] ^= 0xff;
    for _ in 0..4 {
        sipround(&mut v);
    }
    v[0] ^ v[1] ^ v[2] ^ v[3]
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

impl FunctionOracle {
    pub fn new(mode: OracleMode, key: PrfKey, input_bits: u32, output_bits: u32) -> Result<Self> {
        if input_bits == 0 || input_bits > 64 || output_bits == 0 || output_bits > 64 {
            return Err(Error::InvalidArgument(format!(
                "oracle widths must lie in 1..=64 (got {input_bits}, {output_bits})"
            )));
        }
        let kind = match mode {
            OracleMode::ExactRandom => {
                let mut seed = [0u8; 32];
                seed[..8].copy_from_slice(&key.0[0].to_le_bytes());
                seed[8..16].copy_from_slice(&key.0[1].to_le_bytes());
                OracleKind::Table(Mutex::new((ChaCha8Rng::from_seed(seed), HashMap::new())))
            }
            OracleMode::KeyedMixer => OracleKind::Mixer(key.0),
        };
        Ok(Self { input_bits, output_bits, kind })
    }

    /// Exact-random oracle pre-populated with a recorded transcript. Inputs
    /// outside the transcript are sampled from a fresh stream of `key`.
    pub fn from_transcript(
        key: PrfKey,
        input_bits: u32,
        output_bits: u32,
        transcript: &[(u64, u64)],
    ) -> Result<Self> {
        let o = Self::new(OracleMode::ExactRandom, key, input_bits, output_bits)?;
        if let OracleKind::Table(t) = &o.kind {
            let mut g = t.lock().unwrap();
            g.0.set_stream(1);
            for &(x, y) in transcript {
                if x > mask(input_bits) || y > mask(output_bits) {
                    return Err(Error::InvalidArgument("transcript entry out of range".into()));
                }
                g.1.insert(x, y);
            }
        }
        Ok(o)
    }

    pub fn mode(&self) -> OracleMode {
        match self.kind {
            OracleKind::Table(_) => OracleMode::ExactRandom,
            OracleKind::Mixer(_) => OracleMode::KeyedMixer,
        }
    }

    pub fn input_bits(&self) -> u32 {
        self.input_bits
    }

    pub fn output_bits(&self) -> u32 {
        self.output_bits
    }

    pub fn eval(&self, x: u64) -> Result<u64> {
        if x > mask(self.input_bits) {
            return Err(Error::InvalidArgument(format!(
                "input {x:#x} does not fit in {} bits",
                self.input_bits
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: u64) -> u64 {
        let m = mask(self.output_bits);
        match &self.kind {
            OracleKind::Mixer(k) => mix(*k, x) & m,
            OracleKind::Table(t) => {
                let mut g = t.lock().unwrap();
                let (rng, memo) = &mut *g;
                *memo.entry(x).or_insert_with(|| rng.next_u64() & m)
            }
        }
    }

    /// Sorted record of every value sampled so far (empty in mixer mode).
    pub fn transcript(&self) -> Vec<(u64, u64)> {
        match &self.kind {
            OracleKind::Mixer(_) => Vec::new(),
            OracleKind::Table(t) => {
                let g = t.lock().unwrap();
                let mut v: Vec<(u64, u64)> = g.1.iter().map(|(a, b)| (*a, *b)).collect();
                v.sort_unstable();
                v
            }
        }
    }
}

/// `prf_eval(oracle, x)`: one oracle query with input-width checking.
pub fn prf_eval(oracle: &FunctionOracle, x: u64) -> Result<u64> {
    oracle.eval(x)
}

fn rounds_for(n: u64) -> u32 {
    let n = n.max(2);
    let log = 64 - (n - 1).leading_zeros();
    8 * log + 64
}

const TAG_KEY: u64 = 0;
const TAG_BIT: u64 = 1;

fn encode(tag: u64, level: u32, round: u32, value: u64) -> u64 {
    debug_assert!(level < 64 && round < 4096 && value < MAX_PRP_DOMAIN);
    (tag << 62) | ((level as u64) << 56) | ((round as u64) << 44) | value
}

fn uniform_below(word: u64, n: u64) -> u64 {
    ((word as u128 * n as u128) >> 64) as u64
}

/// A permutation of `[d]` computed by the full-domain converter from a
/// 64-bit-input function oracle.
#[derive(Debug, Clone)]
pub struct PrpInstance {
    d: u64,
    oracle: Arc<FunctionOracle>,
}

impl PrpInstance {
    pub fn new(d: u64, oracle: Arc<FunctionOracle>) -> Result<Self> {
        if d == 0 || d > MAX_PRP_DOMAIN {
            return Err(Error::InvalidArgument(format!("PRP domain {d} out of range")));
        }
        if oracle.input_bits() != 64 || oracle.output_bits() != 64 {
            return Err(Error::InvalidArgument("converter needs a 64→64-bit oracle".into()));
        }
        Ok(Self { d, oracle })
    }

    pub fn from_key(d: u64, mode: OracleMode, key: PrfKey) -> Result<Self> {
        Self::new(d, Arc::new(FunctionOracle::new(mode, key, 64, 64)?))
    }

    pub fn domain(&self) -> u64 {
        self.d
    }

    pub fn oracle(&self) -> &FunctionOracle {
        &self.oracle
    }

    fn round_key(&self, level: u32, round: u32, n: u64) -> u64 {
        uniform_below(self.oracle.eval_unchecked(encode(TAG_KEY, level, round, 0)), n)
    }

    fn round_bit(&self, level: u32, round: u32, point: u64) -> bool {
        self.oracle.eval_unchecked(encode(TAG_BIT, level, round, point)) & 1 == 1
    }

    fn swap_round(&self, level: u32, round: u32, n: u64, x: u64) -> u64 {
        let k = self.round_key(level, round, n);
        let partner = (k + n - x) % n;
        if self.round_bit(level, round, x.max(partner)) {
            partner
        } else {
            x
        }
    }

    fn shuffle(&self, level: u32, n: u64, mut x: u64) -> u64 {
        for r in 0..rounds_for(n) {
            x = self.swap_round(level, r, n, x);
        }
        x
    }

    fn unshuffle(&self, level: u32, n: u64, mut x: u64) -> u64 {
        for r in (0..rounds_for(n)).rev() {
            x = self.swap_round(level, r, n, x);
        }
        x
    }

    fn check(&self, x: u64) -> Result<()> {
        if x >= self.d {
            return Err(Error::InvalidArgument(format!("{x} outside PRP domain [{}]", self.d)));
        }
        Ok(())
    }

    pub fn eval(&self, x: u64) -> Result<u64> {
        self.check(x)?;
        let (mut n, mut level, mut x) = (self.d, 0u32, x);
        while n > 1 {
            x = self.shuffle(level, n, x);
            let half = n / 2;
            if x >= half {
                break;
            }
            n = half;
            level += 1;
        }
        Ok(x)
    }

    pub fn inverse(&self, y: u64) -> Result<u64> {
        self.check(y)?;
        let mut sizes = Vec::new();
        let mut n = self.d;
        while n > 1 {
            sizes.push(n);
            if y >= n / 2 {
                break;
            }
            n /= 2;
        }
        let mut x = y;
        for (level, &n) in sizes.iter().enumerate().rev() {
            x = self.unshuffle(level as u32, n, x);
        }
        Ok(x)
    }

    /// The whole permutation as a table `x ↦ π(x)`.
    pub fn table(&self) -> Vec<u64> {
        (0..self.d).map(|x| self.eval(x).expect("in domain")).collect()
    }
}

pub fn prp_eval(p: &PrpInstance, x: u64) -> Result<u64> {
    p.eval(x)
}

pub fn prp_inverse(p: &PrpInstance, y: u64) -> Result<u64> {
    p.inverse(y)
}

/// Lehmer-code rank of a permutation of `[k]`.
pub fn permutation_rank(perm: &[u64]) -> usize {
    let k = perm.len();
    let mut rank = 0usize;
    for i in 0..k {
        let smaller = perm[i + 1..].iter().filter(|&&v| v < perm[i]).count();
        rank = rank * (k - i) + smaller;
    }
    rank
}

pub fn factorial(k: usize) -> usize {
    (1..=k).product()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub samples: usize,
}

/// Pearson test of `counts` against the uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquareReport {
    let n: u64 = counts.iter().sum();
    let k = counts.len();
    let expect = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dof = k.saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    ChiSquareReport { statistic: stat, dof, p_value: p, samples: n as usize }
}

/// Draws `samples` independent keys and tests the induced permutations of
/// `[d]` for uniformity over all `d!` permutations.
pub fn prp_permutation_chi_square(d: usize, samples: usize, mode: OracleMode, seed: u64) -> Result<ChiSquareReport> {
    if d == 0 || d > 8 {
        return Err(Error::InvalidArgument(format!("permutation test needs 1 ≤ d ≤ 8 (got {d})")));
    }
    let mut counts = vec![0u64; factorial(d)];
    let mut rng = crate::linalg::stream_rng(seed, 0x5052_5020);
    for _ in 0..samples {
        let p = PrpInstance::from_key(d as u64, mode, PrfKey::random(&mut rng))?;
        counts[permutation_rank(&p.table())] += 1;
    }
    Ok(chi_square_uniform(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_formula() {
        assert_eq!(rounds_for(1), 72);
        assert_eq!(rounds_for(2), 72);
        assert_eq!(rounds_for(3), 80);
        assert_eq!(rounds_for(1000), 144);
        assert_eq!(rounds_for(1024), 144);
        assert_eq!(rounds_for(1025), 152);
    }

    #[test]
    fn lehmer_rank_is_bijective() {
        let mut seen = vec![false; 24];
        let mut a = [0u64, 1, 2, 3];
        // Heap's algorithm over all permutations.
        fn heap(k: usize, a: &mut [u64; 4], seen: &mut Vec<bool>) {
            if k == 1 {
                let r = permutation_rank(a);
                assert!(!seen[r]);
                seen[r] = true;
                return;
            }
            for i in 0..k {
                heap(k - 1, a, seen);
                if k % 2 == 0 {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
            }
        }
        heap(4, &mut a, &mut seen);
        assert!(seen.iter().all(|&s| s));
        assert_eq!(permutation_rank(&[0, 1, 2, 3]), 0);
        assert_eq!(permutation_rank(&[3, 2, 1, 0]), 23);
    }

    #[test]
    fn bijective_with_inverse() {
        for mode in [OracleMode::KeyedMixer, OracleMode::ExactRandom] {
            for d in [1u64, 2, 3, 5, 10, 256, 1000] {
                let p = PrpInstance::from_key(d, mode, PrfKey([d, 99])).unwrap();
                let t = p.table();
                let mut seen = vec![false; d as usize];
                for (x, &y) in t.iter().enumerate() {
                    assert!(y < d);
                    assert!(!seen[y as usize]);
                    seen[y as usize] = true;
                    assert_eq!(p.inverse(y).unwrap(), x as u64);
                }
            }
        }
    }

    #[test]
    fn out_of_domain_errors() {
        let p = PrpInstance::from_key(5, OracleMode::KeyedMixer, PrfKey([1, 2])).unwrap();
        assert!(p.eval(5).is_err());
        assert!(p.inverse(7).is_err());
        let o = FunctionOracle::new(OracleMode::KeyedMixer, PrfKey([1, 2]), 4, 8).unwrap();
        assert!(o.eval(16).is_err());
        assert!(o.eval(15).unwrap() < 256);
    }

    #[test]
    fn exact_random_is_memoised_and_replayable() {
        let o = FunctionOracle::new(OracleMode::ExactRandom, PrfKey([5, 6]), 64, 64).unwrap();
        let a = o.eval(123).unwrap();
        assert_eq!(o.eval(123).unwrap(), a);
        let p = PrpInstance::new(10, Arc::new(o)).unwrap();
        let t1 = p.table();
        let tr = p.oracle().transcript();
        let replay = FunctionOracle::from_transcript(PrfKey([0, 0]), 64, 64, &tr).unwrap();
        let q = PrpInstance::new(10, Arc::new(replay)).unwrap();
        assert_eq!(q.table(), t1);
        assert_eq!(q.oracle().transcript(), tr);
    }

    #[test]
    fn exact_random_outputs_uniform() {
        let o = FunctionOracle::new(OracleMode::ExactRandom, PrfKey([8, 8]), 16, 3).unwrap();
        let mut counts = vec![0u64; 8];
        for x in 0..10_000u64 {
            counts[o.eval(x).unwrap() as usize] += 1;
        }
        assert!(chi_square_uniform(&counts).p_value > 1e-3);
    }

    #[test]
    fn mixer_outputs_uniform() {
        let o = FunctionOracle::new(OracleMode::KeyedMixer, PrfKey([3, 1]), 20, 4).unwrap();
        let mut counts = vec![0u64; 16];
        for x in 0..10_000u64 {
            counts[o.eval(x).unwrap() as usize] += 1;
        }
        assert!(chi_square_uniform(&counts).p_value > 1e-3);
    }

    #[test]
    fn permutation_uniform_for_small_domains() {
        let r = prp_permutation_chi_square(3, 6000, OracleMode::KeyedMixer, 11).unwrap();
        assert!(r.p_value > 1e-3, "{r:?}");
        let r = prp_permutation_chi_square(3, 6000, OracleMode::ExactRandom, 12).unwrap();
        assert!(r.p_value > 1e-3, "{r:?}");
    }

    #[test]
    fn chi_square_matches_reference_value() {
        // The chi^2 survival function with 2 dof is exp(-x/2).
        let r = chi_square_uniform(&[10, 30, 20]);
        assert!((r.statistic - 10.0).abs() < 1e-12);
        assert!((r.p_value - (-5.0f64).exp()).abs() < 1e-12);
    }
}
