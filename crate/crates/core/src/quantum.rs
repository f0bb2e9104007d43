//! Pure-state simulator for up to four spin-½ particles.
//!
//! Qubit 0 is the most significant bit of a basis index, so for two qubits
//! the amplitude order is `|00⟩, |01⟩, |10⟩, |11⟩`. Measurement directions
//! live in the x–z plane: angle θ is the unit vector `(sin θ, 0, cos θ)`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_QUBITS: usize = 4;

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("state would hold {0} qubits, limit is {MAX_QUBITS}")]
    TooManyQubits(usize),
    #[error("qubit {qubit} out of range for a {num_qubits}-qubit state")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("total-spin measurement needs two distinct qubits, got {0} twice")]
    SameQubit(usize),
    #[error("amplitude vector of length {0} is not a power of two in 2..=16")]
    BadDimension(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
}

/// A direction in the x–z plane of the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementDirection(f64);

impl MeasurementDirection {
    /// The rectilinear basis ⊘ (spin along z).
    pub const RECTILINEAR: Self = Self(0.0);
    /// The diagonal basis ⊙ (spin along x).
    pub const DIAGONAL: Self = Self(FRAC_PI_2);

    /// Builds a direction, wrapping the angle into `[0, 2π)`.
    pub fn new(angle: f64) -> Self {
        let mut a = angle.rem_euclid(TAU);
        if a >= TAU {
            a = 0.0;
        }
        Self(a)
    }

    pub fn angle(self) -> f64 {
        self.0
    }

    /// Single-qubit eigenvector of the spin projector along this direction.
    pub fn eigenvector(self, outcome: Outcome) -> [f64; 2] {
        let (s, c) = (self.0 / 2.0).sin_cos();
        match outcome {
            Outcome::Plus => [c, s],
            Outcome::Minus => [-s, c],
        }
    }

    /// Short label used in transcripts and reports.
    pub fn symbol(self) -> String {
        if self == Self::RECTILINEAR {
            "⊘".to_string()
        } else if self == Self::DIAGONAL {
            "⊙".to_string()
        } else {
            format!("{:.4}", self.0)
        }
    }
}

impl fmt::Display for MeasurementDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol())
    }
}

/// Result of a projective spin measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    /// Bit encoding: `+1 → 0`, `−1 → 1`.
    pub fn bit(self) -> bool {
        self == Outcome::Minus
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Outcome::Minus
        } else {
            Outcome::Plus
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

/// Total spin of a qubit pair: `s = 0` is the singlet, `s = 1` the triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TotalSpin {
    Singlet,
    Triplet,
}

impl TotalSpin {
    pub fn s(self) -> u8 {
        match self {
            TotalSpin::Singlet => 0,
            TotalSpin::Triplet => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Computational basis state; `bits[0]` is qubit 0.
    pub fn basis(bits: &[bool]) -> Result<Self, QuantumError> {
        if bits.is_empty() || bits.len() > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(bits.len()));
        }
        let n = bits.len();
        let index = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits: n, amplitudes })
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self, QuantumError> {
        let len = amplitudes.len();
        if !len.is_power_of_two() || !(2..=1 << MAX_QUBITS).contains(&len) {
            return Err(QuantumError::BadDimension(len));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(Self { num_qubits: len.trailing_zeros() as usize, amplitudes })
    }

    /// One qubit in the `outcome` eigenstate of the spin along `dir`.
    pub fn eigenstate(dir: MeasurementDirection, outcome: Outcome) -> Self {
        let [a, b] = dir.eigenvector(outcome);
        Self { num_qubits: 1, amplitudes: vec![Complex64::new(a, 0.0), Complex64::new(b, 0.0)] }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Equality up to a global phase.
    pub fn approx_eq_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        if self.num_qubits != other.num_qubits {
            return false;
        }
        let overlap: Complex64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum();
        (overlap.norm() - 1.0).abs() <= tol
    }

    fn check_qubit(&self, qubit: usize) -> Result<(), QuantumError> {
        if qubit >= self.num_qubits {
            Err(QuantumError::QubitOutOfRange { qubit, num_qubits: self.num_qubits })
        } else {
            Ok(())
        }
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    /// Amplitude of `⟨e|_qubit ψ⟩` for every basis index of the remaining
    /// qubits, indexed by the full index with the measured bit cleared.
    fn project_onto(&self, qubit: usize, e: [f64; 2]) -> Vec<(usize, Complex64)> {
        let m = self.mask(qubit);
        (0..self.amplitudes.len())
            .filter(|i| i & m == 0)
            .map(|i| (i, self.amplitudes[i] * e[0] + self.amplitudes[i | m] * e[1]))
            .collect()
    }

    pub fn born_probability(
        &self,
        qubit: usize,
        dir: MeasurementDirection,
        outcome: Outcome,
    ) -> Result<f64, QuantumError> {
        self.check_qubit(qubit)?;
        let e = dir.eigenvector(outcome);
        let p: f64 = self.project_onto(qubit, e).iter().map(|(_, c)| c.norm_sqr()).sum();
        Ok(p.clamp(0.0, 1.0))
    }

    /// Collapses `qubit` onto the given eigenvector; `weight` is the Born
    /// probability of that branch and must be positive.
    fn collapse(&self, qubit: usize, e: [f64; 2], weight: f64) -> Self {
        let m = self.mask(qubit);
        let scale = 1.0 / weight.sqrt();
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); self.amplitudes.len()];
        for (i, c) in self.project_onto(qubit, e) {
            let c = c * scale;
            amplitudes[i] = c * e[0];
            amplitudes[i | m] = c * e[1];
        }
        Self { num_qubits: self.num_qubits, amplitudes }
    }

    /// Projective measurement of one qubit's spin along `dir`.
    pub fn measure_spin<R: Rng + ?Sized>(
        &self,
        qubit: usize,
        dir: MeasurementDirection,
        rng: &mut R,
    ) -> Result<(Outcome, StateVector), QuantumError> {
        let p_plus = self.born_probability(qubit, dir, Outcome::Plus)?;
        let u: f64 = rng.random();
        let outcome = if u < p_plus { Outcome::Plus } else { Outcome::Minus };
        let weight = if outcome == Outcome::Plus { p_plus } else { 1.0 - p_plus };
        Ok((outcome, self.collapse(qubit, dir.eigenvector(outcome), weight)))
    }

    /// Discards whatever `qubit` held and puts it in the pure state `new`.
    ///
    /// The old qubit is traced out by measuring it in the computational basis
    /// and forgetting the result, which samples the remaining qubits from
    /// their reduced state.
    pub fn replace_qubit<R: Rng + ?Sized>(
        &self,
        qubit: usize,
        new: [f64; 2],
        rng: &mut R,
    ) -> Result<StateVector, QuantumError> {
        let (outcome, collapsed) = self.measure_spin(qubit, MeasurementDirection::RECTILINEAR, rng)?;
        let m = self.mask(qubit);
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); self.amplitudes.len()];
        for i in (0..self.amplitudes.len()).filter(|i| i & m == 0) {
            let rest = if outcome.bit() { collapsed.amplitudes[i | m] } else { collapsed.amplitudes[i] };
            amplitudes[i] = rest * new[0];
            amplitudes[i | m] = rest * new[1];
        }
        Ok(Self { num_qubits: self.num_qubits, amplitudes })
    }

    /// Projects the `(q1, q2)` pair onto its singlet or triplet subspace.
    pub fn measure_total_spin<R: Rng + ?Sized>(
        &self,
        q1: usize,
        q2: usize,
        rng: &mut R,
    ) -> Result<(TotalSpin, StateVector), QuantumError> {
        self.check_qubit(q1)?;
        self.check_qubit(q2)?;
        if q1 == q2 {
            return Err(QuantumError::SameQubit(q1));
        }
        let (m1, m2) = (self.mask(q1), self.mask(q2));
        // Singlet component (|01⟩ − |10⟩)/√2 of the pair, per rest index.
        let singlet: Vec<(usize, Complex64)> = (0..self.amplitudes.len())
            .filter(|i| i & (m1 | m2) == 0)
            .map(|i| (i, (self.amplitudes[i | m2] - self.amplitudes[i | m1]) * FRAC_1_SQRT_2))
            .collect();
        let p0: f64 = singlet.iter().map(|(_, c)| c.norm_sqr()).sum::<f64>().clamp(0.0, 1.0);
        let u: f64 = rng.random();
        let mut projected = vec![Complex64::new(0.0, 0.0); self.amplitudes.len()];
        for &(i, c) in &singlet {
            projected[i | m2] = c * FRAC_1_SQRT_2;
            projected[i | m1] = -c * FRAC_1_SQRT_2;
        }
        let (result, amplitudes, weight) = if u < p0 {
            (TotalSpin::Singlet, projected, p0)
        } else {
            let rest = self.amplitudes.iter().zip(&projected).map(|(a, p)| a - p).collect();
            (TotalSpin::Triplet, rest, 1.0 - p0)
        };
        let scale = 1.0 / weight.sqrt();
        let amplitudes = amplitudes.into_iter().map(|a: Complex64| a * scale).collect();
        Ok((result, Self { num_qubits: self.num_qubits, amplitudes }))
    }
}

/// The two-qubit singlet `(|01⟩ − |10⟩)/√2`.
pub fn make_singlet() -> StateVector {
    let z = Complex64::new(0.0, 0.0);
    StateVector {
        num_qubits: 2,
        amplitudes: vec![z, Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(-FRAC_1_SQRT_2, 0.0), z],
    }
}

/// Kronecker product; `a`'s qubits come first.
pub fn tensor(a: &StateVector, b: &StateVector) -> Result<StateVector, QuantumError> {
    let n = a.num_qubits + b.num_qubits;
    if n > MAX_QUBITS {
        return Err(QuantumError::TooManyQubits(n));
    }
    let amplitudes = a.amplitudes.iter().flat_map(|x| b.amplitudes.iter().map(move |y| x * y)).collect();
    Ok(StateVector { num_qubits: n, amplitudes })
}

/// A uniformly random pure state on the x–z great circle.
pub fn random_plane_state<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let phi: f64 = rng.random::<f64>() * 2.0 * PI;
    let (s, c) = (phi / 2.0).sin_cos();
    [c, s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn singlet_amplitudes_and_norm() {
        let s = make_singlet();
        let a = s.amplitudes();
        assert_eq!(a.len(), 4);
        assert!((a[1].re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((a[2].re + FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(a[0].norm(), 0.0);
        assert_eq!(a[3].norm(), 0.0);
        assert!((s.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
    }

    #[test]
    fn tensor_shapes() {
        let zero = StateVector::basis(&[false]).unwrap();
        let one = StateVector::basis(&[true]).unwrap();
        let zz = tensor(&zero, &zero).unwrap();
        assert_eq!(zz, StateVector::basis(&[false, false]).unwrap());

        let ss = tensor(&make_singlet(), &make_singlet()).unwrap();
        assert_eq!(ss.amplitudes().len(), 16);
        assert!((ss.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);

        assert_eq!(tensor(&one, &make_singlet()).unwrap().num_qubits(), 3);
        assert_eq!(tensor(&ss, &one), Err(QuantumError::TooManyQubits(5)));
    }

    #[test]
    fn born_probability_examples() {
        let zero = StateVector::basis(&[false]).unwrap();
        let p = zero.born_probability(0, MeasurementDirection::RECTILINEAR, Outcome::Plus).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        let p = zero.born_probability(0, MeasurementDirection::DIAGONAL, Outcome::Plus).unwrap();
        assert!((p - 0.5).abs() < 1e-15);

        let s = make_singlet();
        for k in 0..16 {
            let dir = MeasurementDirection::new(k as f64 * 0.41);
            let plus = s.born_probability(0, dir, Outcome::Plus).unwrap();
            let minus = s.born_probability(0, dir, Outcome::Minus).unwrap();
            assert!((plus - 0.5).abs() < 1e-12);
            assert!((plus + minus - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            s.born_probability(2, MeasurementDirection::RECTILINEAR, Outcome::Plus),
            Err(QuantumError::QubitOutOfRange { qubit: 2, num_qubits: 2 })
        );
    }

    #[test]
    fn eigenstate_measures_deterministically() {
        let mut r = rng(1);
        let zero = StateVector::basis(&[false]).unwrap();
        for _ in 0..100 {
            let (o, _) = zero.measure_spin(0, MeasurementDirection::RECTILINEAR, &mut r).unwrap();
            assert_eq!(o, Outcome::Plus);
            assert!(!o.bit());
        }
    }

    #[test]
    fn repeated_measurement_is_stable() {
        let mut r = rng(2);
        for k in 0..50 {
            let dir = MeasurementDirection::new(k as f64 * 0.3);
            let (first, post) = make_singlet().measure_spin(1, dir, &mut r).unwrap();
            assert!((post.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
            let (second, _) = post.measure_spin(1, dir, &mut r).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn singlet_same_direction_anticorrelated() {
        let mut r = rng(3);
        for k in 0..8 {
            let dir = MeasurementDirection::new(k as f64 * PI / 4.0);
            let mut ones = 0;
            for _ in 0..1250 {
                let (a, post) = make_singlet().measure_spin(0, dir, &mut r).unwrap();
                let (b, _) = post.measure_spin(1, dir, &mut r).unwrap();
                assert_ne!(a.bit(), b.bit());
                ones += a.bit() as usize;
            }
            // Marginal is uniform: 625 ± 3σ (σ ≈ 17.7).
            assert!((ones as i64 - 625).abs() < 60, "ones = {ones}");
        }
    }

    #[test]
    fn conjugate_readout_on_singlet_is_uniform() {
        let mut r = rng(4);
        let trials = 10_000;
        let mut plus = 0;
        for _ in 0..trials {
            let (_, post) = make_singlet().measure_spin(0, MeasurementDirection::RECTILINEAR, &mut r).unwrap();
            let p = post.born_probability(1, MeasurementDirection::DIAGONAL, Outcome::Plus).unwrap();
            assert!((p - 0.5).abs() < 1e-12);
            let (o, _) = post.measure_spin(1, MeasurementDirection::DIAGONAL, &mut r).unwrap();
            plus += (o == Outcome::Plus) as usize;
        }
        let frac = plus as f64 / trials as f64;
        assert!((frac - 0.5).abs() <= 0.02, "frac = {frac}");
    }

    #[test]
    fn total_spin_eigenstates() {
        let mut r = rng(5);
        for _ in 0..100 {
            let (s, post) = make_singlet().measure_total_spin(0, 1, &mut r).unwrap();
            assert_eq!(s, TotalSpin::Singlet);
            assert!(post.approx_eq_up_to_phase(&make_singlet(), 1e-9));
            let zz = StateVector::basis(&[false, false]).unwrap();
            let (s, post) = zz.measure_total_spin(0, 1, &mut r).unwrap();
            assert_eq!(s, TotalSpin::Triplet);
            assert!(post.approx_eq_up_to_phase(&zz, 1e-9));
        }
        let s = make_singlet();
        assert_eq!(s.measure_total_spin(1, 1, &mut r).unwrap_err(), QuantumError::SameQubit(1));
        assert!(matches!(s.measure_total_spin(0, 3, &mut r), Err(QuantumError::QubitOutOfRange { .. })));
    }

    /// Independent oracle: builds `P0 = |ψ−⟩⟨ψ−|` on qubits (1, 3) of a
    /// 4-qubit register as an explicit 16×16 matrix and evaluates ⟨ψ|P0|ψ⟩.
    fn singlet_projector_probability(state: &StateVector, q1: usize, q2: usize) -> f64 {
        let n = state.num_qubits();
        let dim = 1 << n;
        let bit = |i: usize, q: usize| (i >> (n - 1 - q)) & 1;
        let mut p = 0.0;
        for row in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for col in 0..dim {
                let same_rest = (0..n).filter(|&q| q != q1 && q != q2).all(|q| bit(row, q) == bit(col, q));
                if !same_rest {
                    continue;
                }
                let sgn = |i: usize| match (bit(i, q1), bit(i, q2)) {
                    (0, 1) => FRAC_1_SQRT_2,
                    (1, 0) => -FRAC_1_SQRT_2,
                    _ => 0.0,
                };
                acc += state.amplitudes()[col] * (sgn(row) * sgn(col));
            }
            p += (state.amplitudes()[row].conj() * acc).re;
        }
        p
    }

    #[test]
    fn swapping_probability_matches_matrix_oracle() {
        let joint = tensor(&make_singlet(), &make_singlet()).unwrap();
        let oracle = singlet_projector_probability(&joint, 1, 3);
        assert!((oracle - 0.25).abs() < 1e-12);

        let mut r = rng(6);
        let trials = 20_000;
        let mut singlets = 0;
        for _ in 0..trials {
            let (s, post) = joint.measure_total_spin(1, 3, &mut r).unwrap();
            assert!((post.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
            if s == TotalSpin::Singlet {
                singlets += 1;
                for dir in [MeasurementDirection::RECTILINEAR, MeasurementDirection::DIAGONAL] {
                    let (a, p2) = post.measure_spin(0, dir, &mut r).unwrap();
                    let (b, _) = p2.measure_spin(2, dir, &mut r).unwrap();
                    assert_ne!(a, b);
                }
            }
        }
        let frac = singlets as f64 / trials as f64;
        // σ = sqrt(0.25·0.75/20000) ≈ 0.0031
        assert!((frac - oracle).abs() < 0.0125, "frac = {frac}");
    }

    #[test]
    fn replace_qubit_gives_requested_state() {
        let mut r = rng(7);
        let target = MeasurementDirection::new(FRAC_PI_4).eigenvector(Outcome::Minus);
        let out = make_singlet().replace_qubit(1, target, &mut r).unwrap();
        let p = out.born_probability(1, MeasurementDirection::new(FRAC_PI_4), Outcome::Minus).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        // The other qubit is left in a computational basis state.
        let p0 = out.born_probability(0, MeasurementDirection::RECTILINEAR, Outcome::Plus).unwrap();
        assert!(p0 < 1e-12 || (p0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direction_wraps() {
        assert_eq!(MeasurementDirection::new(TAU).angle(), 0.0);
        assert!((MeasurementDirection::new(-FRAC_PI_2).angle() - 3.0 * FRAC_PI_2).abs() < 1e-15);
        assert_eq!(MeasurementDirection::RECTILINEAR.to_string(), "⊘");
        assert_eq!(MeasurementDirection::DIAGONAL.to_string(), "⊙");
    }
}
