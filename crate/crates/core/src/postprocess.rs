//! Classical post-processing: sifting, error estimation, parity-based
//! reconciliation and Toeplitz privacy amplification.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::quantum::MeasurementDirection;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostprocessError {
    #[error("sequence lengths differ: {alice} vs {bob}")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("key is empty")]
    EmptyKey,
    #[error("sample fraction must lie in (0, 1)")]
    InvalidFraction,
    #[error("leak budget t = {t} plus security margin s = {s} leaves nothing of an {n}-bit key")]
    BudgetExceeded { t: usize, s: usize, n: usize },
    #[error("Toeplitz seed has {actual} bits, expected {expected}")]
    SeedLengthMismatch { expected: usize, actual: usize },
    #[error("invalid reconciliation parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStage {
    Raw,
    Sifted,
    Reconciled,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    bits: BitString,
    stage: KeyStage,
    leaked_bits: usize,
}

impl KeyMaterial {
    pub fn new(bits: BitString, stage: KeyStage) -> Self {
        Self { bits, stage, leaked_bits: 0 }
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn into_bits(self) -> BitString {
        self.bits
    }

    pub fn stage(&self) -> KeyStage {
        self.stage
    }

    pub fn leaked_bits(&self) -> usize {
        self.leaked_bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Moves to a later stage with new bits and extra disclosed information.
    ///
    /// # Panics
    /// If `stage` is not strictly later than the current stage.
    pub fn advance(self, bits: BitString, stage: KeyStage, extra_leak: usize) -> Self {
        assert!(stage > self.stage, "key stage must move forward ({:?} -> {:?})", self.stage, stage);
        Self { bits, stage, leaked_bits: self.leaked_bits + extra_leak }
    }
}

// ---------------------------------------------------------------------------
// Sifting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sifted {
    pub alice_key: BitString,
    pub bob_key: BitString,
    pub kept_positions: Vec<usize>,
}

/// Keeps the positions where Bob got a result in the same basis Alice used.
pub fn sift(
    alice: &[(MeasurementDirection, bool)],
    bob: &[Option<(MeasurementDirection, bool)>],
) -> Result<Sifted, PostprocessError> {
    if alice.len() != bob.len() {
        return Err(PostprocessError::LengthMismatch { alice: alice.len(), bob: bob.len() });
    }
    let mut out = Sifted { alice_key: BitString::new(), bob_key: BitString::new(), kept_positions: Vec::new() };
    for (i, (&(a_basis, a_bit), b)) in alice.iter().zip(bob).enumerate() {
        if let Some((b_basis, b_bit)) = *b {
            if a_basis == b_basis {
                out.alice_key.push(a_bit);
                out.bob_key.push(b_bit);
                out.kept_positions.push(i);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Error estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ErrorEstimate {
    Proceed { rate: f64, sampled: Vec<usize>, alice: BitString, bob: BitString },
    Abort { rate: f64, sampled: Vec<usize> },
}

impl ErrorEstimate {
    pub fn rate(&self) -> f64 {
        match self {
            ErrorEstimate::Proceed { rate, .. } | ErrorEstimate::Abort { rate, .. } => *rate,
        }
    }

    pub fn sampled(&self) -> &[usize] {
        match self {
            ErrorEstimate::Proceed { sampled, .. } | ErrorEstimate::Abort { sampled, .. } => sampled,
        }
    }
}

/// Publicly compares a random `⌈fraction·n⌉`-bit sample and drops it from
/// both keys. Aborts iff the observed rate exceeds `r_max`.
pub fn estimate_error_rate<R: Rng + ?Sized>(
    alice: &BitString,
    bob: &BitString,
    sample_fraction: f64,
    r_max: f64,
    rng: &mut R,
) -> Result<ErrorEstimate, PostprocessError> {
    if alice.len() != bob.len() {
        return Err(PostprocessError::LengthMismatch { alice: alice.len(), bob: bob.len() });
    }
    if alice.is_empty() {
        return Err(PostprocessError::EmptyKey);
    }
    if !(sample_fraction > 0.0 && sample_fraction < 1.0) {
        return Err(PostprocessError::InvalidFraction);
    }
    let n = alice.len();
    let k = ((sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sampled = index::sample(rng, n, k).into_vec();
    sampled.sort_unstable();
    let mismatches = sampled.iter().filter(|&&i| alice[i] != bob[i]).count();
    let rate = mismatches as f64 / k as f64;
    if rate > r_max {
        return Ok(ErrorEstimate::Abort { rate, sampled });
    }
    let mut in_sample = vec![false; n];
    for &i in &sampled {
        in_sample[i] = true;
    }
    let keep = |key: &BitString| key.iter().zip(&in_sample).filter(|(_, &s)| !s).map(|(b, _)| b).collect();
    Ok(ErrorEstimate::Proceed { rate, alice: keep(alice), bob: keep(bob), sampled })
}

// ---------------------------------------------------------------------------
// Reconciliation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "length")]
pub enum BlockLengthRule {
    /// `ℓ = max(2, round(0.73 / R))`, the whole key when `R = 0`.
    Heuristic,
    Fixed(usize),
}

impl BlockLengthRule {
    pub fn block_length(&self, error_rate: f64, key_len: usize) -> usize {
        let raw = match *self {
            BlockLengthRule::Fixed(l) => l,
            BlockLengthRule::Heuristic if error_rate <= 0.0 => key_len,
            BlockLengthRule::Heuristic => ((0.73 / error_rate).round() as usize).max(2),
        };
        raw.clamp(1, key_len.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationParams {
    pub block_length: BlockLengthRule,
    /// Error-rate estimate that feeds the block length rule.
    pub error_rate: f64,
    pub passes: usize,
    /// Consecutive clean subset rounds required to finish.
    pub stage2_rounds: usize,
    /// Hard cap on subset rounds, in case the key never settles.
    pub max_stage2_rounds: usize,
}

impl Default for ReconciliationParams {
    fn default() -> Self {
        Self {
            block_length: BlockLengthRule::Heuristic,
            error_rate: 0.0,
            passes: 2,
            stage2_rounds: 20,
            max_stage2_rounds: 10_000,
        }
    }
}

impl ReconciliationParams {
    pub fn with_error_rate(error_rate: f64) -> Self {
        Self { error_rate, ..Self::default() }
    }

    fn validate(&self) -> Result<(), PostprocessError> {
        if self.passes == 0 {
            return Err(PostprocessError::InvalidParams("passes must be at least 1"));
        }
        if self.stage2_rounds == 0 {
            return Err(PostprocessError::InvalidParams("stage-2 rounds must be at least 1"));
        }
        if let BlockLengthRule::Fixed(0) = self.block_length {
            return Err(PostprocessError::InvalidParams("block length must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityKind {
    Block,
    Bisection,
    Subset,
}

/// One parity value announced by Alice and Bob's agree/disagree reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityDisclosure {
    pub stage: u8,
    pub pass: usize,
    pub kind: ParityKind,
    pub alice_parity: bool,
    pub agreed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciliation {
    pub alice: BitString,
    pub bob: BitString,
    /// Number of parity values sent over the public channel.
    pub leaked_bits: usize,
    /// Parities whose information was removed by discarding a bit of the
    /// compared subset.
    pub compensated_bits: usize,
    pub errors_corrected: usize,
    pub stage2_rounds_run: usize,
    pub disclosures: Vec<ParityDisclosure>,
    /// Seeds of the public permutations and subset draws, in order of use.
    pub public_seeds: Vec<u64>,
}

impl Reconciliation {
    /// Parity information that no discarded bit cancels out.
    pub fn uncompensated_leak(&self) -> usize {
        self.leaked_bits - self.compensated_bits
    }
}

struct Reconciler {
    alice: Vec<bool>,
    bob: Vec<bool>,
    doomed: Vec<bool>,
    leaked: usize,
    compensated: usize,
    corrected: usize,
    disclosures: Vec<ParityDisclosure>,
    stage: u8,
    pass: usize,
}

impl Reconciler {
    fn parities(&self, positions: &[usize]) -> (bool, bool) {
        positions.iter().fold((false, false), |(a, b), &p| (a ^ self.alice[p], b ^ self.bob[p]))
    }

    /// Announces the parity of `positions`, then discards the last bit of
    /// the subset that is not already scheduled for deletion.
    fn disclose(&mut self, positions: &[usize], kind: ParityKind) -> bool {
        let (pa, pb) = self.parities(positions);
        self.leaked += 1;
        self.disclosures.push(ParityDisclosure {
            stage: self.stage,
            pass: self.pass,
            kind,
            alice_parity: pa,
            agreed: pa == pb,
        });
        if let Some(&last) = positions.iter().rev().find(|&&p| !self.doomed[p]) {
            self.doomed[last] = true;
            self.compensated += 1;
        }
        pa == pb
    }

    /// Compares the parity of `positions`; on disagreement bisects until the
    /// erroneous bit is found and schedules it for deletion. Returns whether
    /// the first comparison disagreed.
    fn check(&mut self, positions: &[usize], kind: ParityKind) -> bool {
        if positions.is_empty() {
            return false;
        }
        if self.disclose(positions, kind) {
            return false;
        }
        let mut sub = positions;
        while sub.len() > 1 {
            let (left, right) = sub.split_at(sub.len().div_ceil(2));
            sub = if self.disclose(left, ParityKind::Bisection) { right } else { left };
        }
        self.doomed[sub[0]] = true;
        self.corrected += 1;
        true
    }

    fn compact(&mut self) {
        let keep: Vec<bool> = self.doomed.iter().map(|d| !d).collect();
        let filter = |v: &[bool]| v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&b, _)| b).collect::<Vec<_>>();
        self.alice = filter(&self.alice);
        self.bob = filter(&self.bob);
        self.doomed = vec![false; self.alice.len()];
    }
}

/// Two-stage interactive reconciliation.
///
/// Stage 1 permutes the key publicly, splits it into blocks of length `ℓ`
/// and runs a parity comparison with bisective search on each block.
/// Stage 2 compares parities of random half-size subsets until
/// `stage2_rounds` consecutive subsets agree. Every disclosed parity is
/// followed by discarding one bit of the compared subset.
pub fn reconcile<R: Rng + ?Sized>(
    alice: &BitString,
    bob: &BitString,
    params: &ReconciliationParams,
    rng: &mut R,
) -> Result<Reconciliation, PostprocessError> {
    if alice.len() != bob.len() {
        return Err(PostprocessError::LengthMismatch { alice: alice.len(), bob: bob.len() });
    }
    params.validate()?;
    let n = alice.len();
    let mut r = Reconciler {
        alice: alice.as_slice().to_vec(),
        bob: bob.as_slice().to_vec(),
        doomed: vec![false; n],
        leaked: 0,
        compensated: 0,
        corrected: 0,
        disclosures: Vec::new(),
        stage: 1,
        pass: 0,
    };
    let mut public_seeds = Vec::new();

    for pass in 0..params.passes {
        let len = r.alice.len();
        if len == 0 {
            break;
        }
        r.pass = pass;
        let seed: u64 = rng.random();
        public_seeds.push(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut <crate::rng::SimRng as rand::SeedableRng>::seed_from_u64(seed));
        let ell = params.block_length.block_length(params.error_rate, len);
        for block in order.chunks(ell) {
            r.check(block, ParityKind::Block);
        }
        r.compact();
    }

    r.stage = 2;
    r.pass = 0;
    let mut clean_streak = 0;
    let mut rounds = 0;
    while clean_streak < params.stage2_rounds && rounds < params.max_stage2_rounds {
        let len = r.alice.len();
        if len < 2 {
            break;
        }
        let seed: u64 = rng.random();
        public_seeds.push(seed);
        let mut subset =
            index::sample(&mut <crate::rng::SimRng as rand::SeedableRng>::seed_from_u64(seed), len, len / 2).into_vec();
        subset.sort_unstable();
        let found = r.check(&subset, ParityKind::Subset);
        r.compact();
        clean_streak = if found { 0 } else { clean_streak + 1 };
        rounds += 1;
        r.pass = rounds;
    }

    Ok(Reconciliation {
        alice: r.alice.into(),
        bob: r.bob.into(),
        leaked_bits: r.leaked,
        compensated_bits: r.compensated,
        errors_corrected: r.corrected,
        stage2_rounds_run: rounds,
        disclosures: r.disclosures,
        public_seeds,
    })
}

// ---------------------------------------------------------------------------
// Privacy amplification
// ---------------------------------------------------------------------------

/// Seed of an `n → r` binary Toeplitz hash: `T[i][j] = seed[i − j + n − 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToeplitzSeed {
    bits: BitString,
}

impl ToeplitzSeed {
    pub fn new(bits: BitString) -> Self {
        Self { bits }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Self {
        let len = (n + r).saturating_sub(1);
        Self { bits: (0..len).map(|_| rng.random::<bool>()).collect() }
    }

    /// The seed whose matrix is the `n × n` identity.
    pub fn identity(n: usize) -> Self {
        Self { bits: (0..2 * n - 1).map(|k| k == n - 1).collect() }
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

fn pack_words(bits: impl Iterator<Item = bool>) -> Vec<u64> {
    let mut words = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 64 == 0 {
            words.push(0);
        }
        if b {
            *words.last_mut().unwrap() |= 1 << (i % 64);
        }
    }
    words
}

/// 64 bits of `words` starting at bit `offset`, zero beyond the end.
fn window(words: &[u64], offset: usize) -> u64 {
    let (w, s) = (offset / 64, offset % 64);
    let lo = words.get(w).copied().unwrap_or(0) >> s;
    let hi = if s == 0 { 0 } else { words.get(w + 1).copied().unwrap_or(0) << (64 - s) };
    lo | hi
}

/// Multiplies `key` by the Toeplitz matrix of `seed`, producing `r` bits.
pub fn toeplitz_hash(key: &BitString, r: usize, seed: &ToeplitzSeed) -> Result<BitString, PostprocessError> {
    let n = key.len();
    let expected = (n + r).saturating_sub(1);
    if seed.len() != expected {
        return Err(PostprocessError::SeedLengthMismatch { expected, actual: seed.len() });
    }
    if n == 0 || r == 0 {
        return Ok(BitString::zeros(r));
    }
    // Row i of T is the window rev[r−1−i .. r−1−i+n] of the reversed seed.
    let rev = pack_words(seed.bits.iter().collect::<Vec<_>>().into_iter().rev());
    let key_words = pack_words(key.iter());
    let tail_mask = if n.is_multiple_of(64) { u64::MAX } else { (1u64 << (n % 64)) - 1 };
    Ok((0..r)
        .map(|i| {
            let start = r - 1 - i;
            let mut acc = 0u64;
            for (w, &kw) in key_words.iter().enumerate() {
                let mut row = window(&rev, start + 64 * w);
                if w + 1 == key_words.len() {
                    row &= tail_mask;
                }
                acc ^= row & kw;
            }
            acc.count_ones() % 2 == 1
        })
        .collect())
}

/// Distils `r = n − t − s` bits from a reconciled key.
pub fn privacy_amplify(
    key: &KeyMaterial,
    t: usize,
    s: usize,
    seed: &ToeplitzSeed,
) -> Result<KeyMaterial, PostprocessError> {
    let n = key.len();
    if t + s >= n {
        return Err(PostprocessError::BudgetExceeded { t, s, n });
    }
    let r = n - t - s;
    let out = toeplitz_hash(key.bits(), r, seed)?;
    Ok(key.clone().advance(out, KeyStage::Final, 0))
}

/// Conservative bound on Eve's information: the reconciliation leak plus
/// twice the bits an error rate `R` could hide, clamped below `n`.
pub fn leak_budget(error_rate: f64, n: usize, reconciliation_leak: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let r = error_rate.clamp(0.0, 0.5);
    let estimate = reconciliation_leak + (2.0 * n as f64 * r).ceil() as usize;
    estimate.min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    fn random_bits(n: usize, rng: &mut SimRng) -> BitString {
        (0..n).map(|_| rng.random::<bool>()).collect()
    }

    fn noisy_copy(key: &BitString, p: f64, rng: &mut SimRng) -> BitString {
        key.iter().map(|b| b ^ rng.random_bool(p)).collect()
    }

    const R: MeasurementDirection = MeasurementDirection::RECTILINEAR;
    const D: MeasurementDirection = MeasurementDirection::DIAGONAL;

    #[test]
    fn sift_examples() {
        let alice = vec![(R, true), (D, false), (R, false)];
        let all = vec![Some((R, true)), Some((D, false)), Some((R, false))];
        let s = sift(&alice, &all).unwrap();
        assert_eq!(s.alice_key.len(), 3);
        assert_eq!(s.kept_positions, vec![0, 1, 2]);

        let none = vec![None; 3];
        let s = sift(&alice, &none).unwrap();
        assert!(s.alice_key.is_empty() && s.bob_key.is_empty() && s.kept_positions.is_empty());

        let mixed = vec![Some((D, true)), None, Some((R, true))];
        let s = sift(&alice, &mixed).unwrap();
        assert_eq!(s.kept_positions, vec![2]);
        assert_eq!(s.bob_key.to_string(), "1");

        assert_eq!(sift(&alice, &none[..2]), Err(PostprocessError::LengthMismatch { alice: 3, bob: 2 }));
    }

    #[test]
    fn sift_keeps_about_half_with_random_bases() {
        let mut g = rng(1);
        let n = 10_000;
        let alice: Vec<_> = (0..n).map(|_| (if g.random() { R } else { D }, g.random())).collect();
        let bob: Vec<_> = (0..n).map(|_| Some((if g.random() { R } else { D }, g.random()))).collect();
        let s = sift(&alice, &bob).unwrap();
        let frac = s.kept_positions.len() as f64 / n as f64;
        // binomial oracle: σ = 0.005
        assert!((frac - 0.5).abs() <= 0.02, "frac = {frac}");
        assert!(s.kept_positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn estimate_examples() {
        let mut g = rng(2);
        let key = random_bits(400, &mut g);
        match estimate_error_rate(&key, &key, 0.25, 0.11, &mut g).unwrap() {
            ErrorEstimate::Proceed { rate, alice, bob, sampled } => {
                assert_eq!(rate, 0.0);
                assert_eq!(sampled.len(), 100);
                assert_eq!(alice.len(), 300);
                assert_eq!(alice, bob);
            }
            other => panic!("unexpected {other:?}"),
        }
        let est = estimate_error_rate(&key, &key.complement(), 0.25, 0.99, &mut g).unwrap();
        assert!(matches!(est, ErrorEstimate::Abort { rate, .. } if rate == 1.0));
        assert_eq!(
            estimate_error_rate(&BitString::new(), &BitString::new(), 0.25, 0.1, &mut g),
            Err(PostprocessError::EmptyKey)
        );
    }

    #[test]
    fn estimate_tracks_channel_flips() {
        let mut g = rng(3);
        let key = random_bits(4096, &mut g);
        let noisy = noisy_copy(&key, 0.05, &mut g);
        let est = estimate_error_rate(&key, &noisy, 0.25, 0.11, &mut g).unwrap();
        assert!((est.rate() - 0.05).abs() <= 0.02, "rate = {}", est.rate());
    }

    #[test]
    fn block_length_rule() {
        assert_eq!(BlockLengthRule::Heuristic.block_length(0.0, 500), 500);
        assert_eq!(BlockLengthRule::Heuristic.block_length(0.03, 500), 24);
        assert_eq!(BlockLengthRule::Heuristic.block_length(0.11, 500), 7);
        assert_eq!(BlockLengthRule::Heuristic.block_length(0.45, 500), 2);
        assert_eq!(BlockLengthRule::Heuristic.block_length(0.01, 30), 30);
        assert_eq!(BlockLengthRule::Fixed(8).block_length(0.2, 64), 8);
    }

    #[test]
    fn reconcile_identical_inputs() {
        let mut g = rng(4);
        let key = random_bits(128, &mut g);
        let params = ReconciliationParams::default();
        let out = reconcile(&key, &key, &params, &mut g).unwrap();
        assert_eq!(out.alice, out.bob);
        assert_eq!(out.errors_corrected, 0);
        // one whole-key block parity per pass, then the clean subset rounds
        assert_eq!(out.leaked_bits, params.passes + params.stage2_rounds);
        assert_eq!(out.alice.len(), 128 - out.leaked_bits);
        assert_eq!(out.uncompensated_leak(), 0);
    }

    /// Hand trace of the bisection on an 8-bit block with the error at
    /// offset 5: [0..4] agree → right; [4,5] disagree → left; [4] agree →
    /// right; located at 5 after three bisection parities.
    #[test]
    fn bisection_trace_single_error() {
        let alice = vec![false; 8];
        let mut bob = alice.clone();
        bob[5] = true;
        let mut r = Reconciler {
            alice,
            bob,
            doomed: vec![false; 8],
            leaked: 0,
            compensated: 0,
            corrected: 0,
            disclosures: Vec::new(),
            stage: 1,
            pass: 0,
        };
        let block: Vec<usize> = (0..8).collect();
        assert!(r.check(&block, ParityKind::Block));
        let kinds: Vec<_> = r.disclosures.iter().map(|d| (d.kind, d.agreed)).collect();
        assert_eq!(
            kinds,
            vec![
                (ParityKind::Block, false),
                (ParityKind::Bisection, true),
                (ParityKind::Bisection, false),
                (ParityKind::Bisection, true),
            ]
        );
        assert!(r.doomed[5]);
        // block parity discards bit 7, [0..4] discards 3, [4,5] discards 5 and
        // [4] discards 4
        let doomed: Vec<usize> = (0..8).filter(|&i| r.doomed[i]).collect();
        assert_eq!(doomed, vec![3, 4, 5, 7]);
        r.compact();
        assert_eq!(r.alice, r.bob);
    }

    #[test]
    fn single_error_located_within_log2_block() {
        let mut g = rng(5);
        let alice = random_bits(64, &mut g);
        let mut bob = alice.clone().into_vec();
        bob[37] ^= true;
        let bob = BitString::from(bob);
        let params = ReconciliationParams { block_length: BlockLengthRule::Fixed(8), passes: 1, ..Default::default() };
        let out = reconcile(&alice, &bob, &params, &mut g).unwrap();
        assert_eq!(out.alice, out.bob);
        assert_eq!(out.errors_corrected, 1);
        let stage1: Vec<_> = out.disclosures.iter().filter(|d| d.stage == 1).collect();
        let blocks = stage1.iter().filter(|d| d.kind == ParityKind::Block).count();
        let bisections = stage1.iter().filter(|d| d.kind == ParityKind::Bisection).count();
        assert_eq!(blocks, 8);
        assert!(bisections <= 3, "bisections = {bisections}");
        assert_eq!(stage1.iter().filter(|d| !d.agreed && d.kind == ParityKind::Block).count(), 1);
    }

    #[test]
    fn reconcile_rejects_bad_input() {
        let mut g = rng(6);
        let a = random_bits(10, &mut g);
        let b = random_bits(11, &mut g);
        assert!(matches!(
            reconcile(&a, &b, &ReconciliationParams::default(), &mut g),
            Err(PostprocessError::LengthMismatch { .. })
        ));
        let bad = ReconciliationParams { passes: 0, ..Default::default() };
        assert!(matches!(reconcile(&a, &a, &bad, &mut g), Err(PostprocessError::InvalidParams(_))));
    }

    #[test]
    fn reconcile_at_three_percent() {
        let mut g = rng(7);
        let mut failures = 0;
        for _ in 0..500 {
            let a = random_bits(2048, &mut g);
            let b = noisy_copy(&a, 0.03, &mut g);
            let out = reconcile(&a, &b, &ReconciliationParams::with_error_rate(0.03), &mut g).unwrap();
            assert!(out.alice.len() <= 2048);
            assert_eq!(out.leaked_bits, out.disclosures.len());
            failures += (out.alice != out.bob) as usize;
        }
        assert!(failures <= 1, "failures = {failures}");
    }

    fn naive_toeplitz(key: &BitString, r: usize, seed: &ToeplitzSeed) -> BitString {
        let n = key.len();
        (0..r).map(|i| (0..n).fold(false, |acc, j| acc ^ (seed.bits()[i + n - 1 - j] & key[j]))).collect()
    }

    #[test]
    fn toeplitz_matches_naive_matrix_product() {
        let mut g = rng(8);
        for &(n, r) in &[(1, 1), (8, 3), (63, 20), (64, 64), (65, 7), (200, 130), (700, 333)] {
            let key = random_bits(n, &mut g);
            let seed = ToeplitzSeed::random(n, r, &mut g);
            assert_eq!(toeplitz_hash(&key, r, &seed).unwrap(), naive_toeplitz(&key, r, &seed), "n={n} r={r}");
        }
    }

    #[test]
    fn privacy_amplify_examples() {
        let mut g = rng(9);
        let key = KeyMaterial::new(random_bits(16, &mut g), KeyStage::Reconciled);
        let out = privacy_amplify(&key, 0, 0, &ToeplitzSeed::identity(16)).unwrap();
        assert_eq!(out.bits(), key.bits());
        assert_eq!(out.stage(), KeyStage::Final);

        let key8 = KeyMaterial::new(random_bits(8, &mut g), KeyStage::Reconciled);
        let seed = ToeplitzSeed::random(8, 3, &mut g);
        assert_eq!(privacy_amplify(&key8, 3, 2, &seed).unwrap().len(), 3);

        assert_eq!(privacy_amplify(&key8, 5, 3, &seed), Err(PostprocessError::BudgetExceeded { t: 5, s: 3, n: 8 }));
        assert_eq!(
            privacy_amplify(&key8, 3, 1, &seed),
            Err(PostprocessError::SeedLengthMismatch { expected: 11, actual: 10 })
        );
    }

    /// Exhaustive universality oracle: for n = 8, r = 4 every one of the
    /// 2^11 seeds is enumerated, and each pair x ≠ y collides on exactly
    /// 2^11 / 2^4 = 128 of them.
    #[test]
    fn toeplitz_family_is_exactly_universal_small() {
        let (n, r) = (8usize, 4usize);
        let seeds: Vec<ToeplitzSeed> = (0u32..1 << (n + r - 1))
            .map(|s| ToeplitzSeed::new((0..n + r - 1).map(|k| s >> k & 1 == 1).collect()))
            .collect();
        let as_bits = |v: u32| -> BitString { (0..n).map(|k| v >> k & 1 == 1).collect() };
        for &(x, y) in &[(0u32, 1u32), (3, 200), (17, 255), (128, 1), (85, 170)] {
            let (bx, by) = (as_bits(x), as_bits(y));
            let collisions =
                seeds.iter().filter(|s| toeplitz_hash(&bx, r, s).unwrap() == toeplitz_hash(&by, r, s).unwrap()).count();
            assert_eq!(collisions, 128, "pair ({x}, {y})");
        }
    }

    #[test]
    fn toeplitz_avalanche() {
        let mut g = rng(10);
        let (n, r) = (64, 32);
        let mut flipped = 0usize;
        let trials = 1000;
        for _ in 0..trials {
            let key = random_bits(n, &mut g);
            let seed = ToeplitzSeed::random(n, r, &mut g);
            let mut other = key.clone().into_vec();
            let i = g.random_range(0..n);
            other[i] ^= true;
            let a = toeplitz_hash(&key, r, &seed).unwrap();
            let b = toeplitz_hash(&BitString::from(other), r, &seed).unwrap();
            assert_eq!(a, toeplitz_hash(&key, r, &seed).unwrap());
            flipped += a.hamming_distance(&b);
        }
        let rate = flipped as f64 / (trials * r) as f64;
        assert!((rate - 0.5).abs() <= 0.05, "rate = {rate}");
    }

    #[test]
    fn leak_budget_examples() {
        assert_eq!(leak_budget(0.0, 100, 0), 0);
        // 120 + ⌈2·1000·0.05⌉ = 120 + 100
        assert_eq!(leak_budget(0.05, 1000, 120), 220);
        assert_eq!(leak_budget(0.4, 10, 9), 9);
        assert_eq!(leak_budget(0.1, 0, 5), 0);
    }

    proptest::proptest! {
        #[test]
        fn leak_budget_monotone(r1 in 0.0f64..0.5, r2 in 0.0f64..0.5, n in 1usize..5000, l1 in 0usize..3000, l2 in 0usize..3000) {
            let (rlo, rhi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (llo, lhi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            proptest::prop_assert!(leak_budget(rlo, n, llo) <= leak_budget(rhi, n, llo));
            proptest::prop_assert!(leak_budget(rlo, n, llo) <= leak_budget(rlo, n, lhi));
            proptest::prop_assert!(leak_budget(rhi, n, lhi) < n);
        }

        #[test]
        fn sift_outputs_aligned(
            rows in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY, proptest::option::of((proptest::bool::ANY, proptest::bool::ANY))), 0..300)
        ) {
            let basis = |b: bool| if b { D } else { R };
            let alice: Vec<_> = rows.iter().map(|&(ab, abit, _)| (basis(ab), abit)).collect();
            let bob: Vec<_> = rows.iter().map(|&(_, _, b)| b.map(|(bb, bbit)| (basis(bb), bbit))).collect();
            let s = sift(&alice, &bob).unwrap();
            proptest::prop_assert_eq!(s.alice_key.len(), s.bob_key.len());
            proptest::prop_assert_eq!(s.alice_key.len(), s.kept_positions.len());
            proptest::prop_assert!(s.kept_positions.iter().all(|&p| p < rows.len()));
        }
    }
}
