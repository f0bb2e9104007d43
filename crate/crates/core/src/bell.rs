//! Correlation coefficients and the CHSH statistic.
//!
//! Direction sets follow the E91 layout: Alice measures along
//! `{0, π/4, π/2}`, Bob along `{π/4, π/2, 3π/4}`. The two equal-angle
//! pairs produce key bits; the four pairs below enter the Bell statistic.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{MeasurementDirection, Outcome};

pub const ALICE_ANGLES: [f64; 3] = [0.0, FRAC_PI_4, FRAC_PI_2];
pub const BOB_ANGLES: [f64; 3] = [FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];

pub const A1: MeasurementDirection = MeasurementDirection::RECTILINEAR;
pub const A3: MeasurementDirection = MeasurementDirection::DIAGONAL;

pub fn b1() -> MeasurementDirection {
    MeasurementDirection::new(FRAC_PI_4)
}

pub fn b3() -> MeasurementDirection {
    MeasurementDirection::new(3.0 * FRAC_PI_4)
}

/// The four `(alice, bob)` pairs of the CHSH combination, with their signs.
pub fn chsh_pairs() -> [(MeasurementDirection, MeasurementDirection, f64); 4] {
    [(A1, b1(), 1.0), (A1, b3(), -1.0), (A3, b1(), 1.0), (A3, b3(), 1.0)]
}

/// Default detection threshold: the classical CHSH bound.
pub const DEFAULT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellError {
    #[error("no records to correlate")]
    EmptyRecords,
    #[error("records mix direction pairs")]
    MixedDirections,
    #[error("no estimate for direction pair ({alice}, {bob})")]
    MissingPair { alice: f64, bob: f64 },
    #[error("threshold {0} outside (√2, 2√2)")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub alice_dir: MeasurementDirection,
    pub bob_dir: MeasurementDirection,
    pub alice: Outcome,
    pub bob: Outcome,
}

impl PairRecord {
    fn key(&self) -> (u64, u64) {
        (self.alice_dir.angle().to_bits(), self.bob_dir.angle().to_bits())
    }

    fn product(&self) -> i64 {
        (self.alice.value() * self.bob.value()) as i64
    }
}

/// `(N₊₊ + N₋₋ − N₊₋ − N₋₊) / N` for records sharing one direction pair.
pub fn correlation_coefficient(records: &[PairRecord]) -> Result<f64, BellError> {
    let first = records.first().ok_or(BellError::EmptyRecords)?;
    if records.iter().any(|r| r.key() != first.key()) {
        return Err(BellError::MixedDirections);
    }
    let sum: i64 = records.iter().map(PairRecord::product).sum();
    Ok(sum as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub alice_dir: MeasurementDirection,
    pub bob_dir: MeasurementDirection,
    pub e: f64,
    pub count: usize,
}

/// Correlation estimates grouped by direction pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    pairs: Vec<PairEstimate>,
}

impl BellEstimate {
    pub fn from_records(records: &[PairRecord]) -> Self {
        let mut acc: BTreeMap<(u64, u64), (MeasurementDirection, MeasurementDirection, i64, usize)> = BTreeMap::new();
        for r in records {
            let entry = acc.entry(r.key()).or_insert((r.alice_dir, r.bob_dir, 0, 0));
            entry.2 += r.product();
            entry.3 += 1;
        }
        let pairs = acc
            .into_values()
            .map(|(alice_dir, bob_dir, sum, count)| PairEstimate {
                alice_dir,
                bob_dir,
                e: sum as f64 / count as f64,
                count,
            })
            .collect();
        Self { pairs }
    }

    /// Builds an estimate directly from known correlation values.
    pub fn from_values(values: &[(MeasurementDirection, MeasurementDirection, f64)]) -> Self {
        let pairs =
            values.iter().map(|&(alice_dir, bob_dir, e)| PairEstimate { alice_dir, bob_dir, e, count: 0 }).collect();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[PairEstimate] {
        &self.pairs
    }

    pub fn get(&self, alice: MeasurementDirection, bob: MeasurementDirection) -> Option<&PairEstimate> {
        self.pairs.iter().find(|p| p.alice_dir == alice && p.bob_dir == bob)
    }

    pub fn e(&self, alice: MeasurementDirection, bob: MeasurementDirection) -> Option<f64> {
        self.get(alice, bob).map(|p| p.e)
    }
}

/// `S = E(a1,b1) − E(a1,b3) + E(a3,b1) + E(a3,b3)`.
pub fn chsh_s(estimate: &BellEstimate) -> Result<f64, BellError> {
    chsh_pairs().iter().try_fold(0.0, |s, &(a, b, sign)| {
        estimate.e(a, b).map(|e| s + sign * e).ok_or(BellError::MissingPair { alice: a.angle(), bob: b.angle() })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Compromised,
}

pub fn detect_eavesdropping(s: f64, threshold: f64) -> Result<Verdict, BellError> {
    if !(threshold > SQRT_2 && threshold < 2.0 * SQRT_2) {
        return Err(BellError::InvalidThreshold(threshold));
    }
    Ok(if s.abs() > threshold { Verdict::Clean } else { Verdict::Compromised })
}
