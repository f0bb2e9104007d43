//! Key distribution protocols and the pieces they share: reports,
//! one-time-pad authentication keys, basis encoding and peer verification.

pub mod auth;
pub mod bb84;
pub mod epr;
mod pipeline;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pipeline::PipelineParams;

use crate::adversary::EveView;
use crate::bell::{BellError, BellEstimate, Verdict};
use crate::bits::BitString;
use crate::channel::{ChannelError, MessageTag, PartyId, QuantumChannelConfig, Transcript};
use crate::postprocess::PostprocessError;
use crate::quantum::{MeasurementDirection, QuantumError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("authentication key already used")]
    KeyReuse,
    #[error("key has {have} bits, {need} needed")]
    KeyTooShort { need: usize, have: usize },
    #[error("not enough rounds for every CHSH direction pair")]
    InsufficientBellRounds,
    #[error("no basis-matching positions to verify")]
    InsufficientEvidence,
    #[error("position {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0:?} is not registered with the center")]
    UnregisteredParty(PartyId),
    #[error("transcript has no {0:?} message")]
    MissingMessage(MessageTag),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Bell(#[from] BellError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Bb84,
    Epr,
    AuthInit,
    AuthSession,
}

/// Why a session stopped without producing a key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum AbortReason {
    /// No sifted bits survived.
    InsufficientKey,
    ErrorRateExceeded {
        rate: f64,
        r_max: f64,
    },
    BellTestFailed {
        s: f64,
        threshold: f64,
    },
    SpotCheckFailed {
        link: PartyId,
        mismatch_rate: f64,
    },
    /// `verifier` refused to authenticate its peer.
    PeerRejected {
        verifier: PartyId,
    },
    BudgetExceeded {
        t: usize,
        s: usize,
        n: usize,
    },
    TooFewDelivered {
        delivered: usize,
        needed: usize,
    },
    KeyTooShortForRenewal {
        need: usize,
        have: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellSummary {
    pub estimate: BellEstimate,
    pub s: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub rounds: usize,
    pub delivered: usize,
    pub sifted_len: usize,
    /// Error rate estimated from the disclosed sample.
    pub qber: Option<f64>,
    /// Mismatch rate over the whole sifted key; a simulator diagnostic that
    /// the parties themselves never see.
    pub sifted_qber: Option<f64>,
    pub bell: Option<BellSummary>,
    /// Bob's verdict on Alice, for authenticated sessions.
    pub alice_verified: Option<bool>,
    /// Alice's verdict on Bob, for authenticated sessions.
    pub bob_verified: Option<bool>,
    /// Authentication rounds where Alice's direction matched the key basis.
    pub matching_positions: Option<usize>,
    pub reconciled_len: usize,
    pub parity_bits_disclosed: usize,
    pub uncompensated_leak: usize,
    pub leak_budget: usize,
    pub security_s: usize,
    pub final_key_alice: BitString,
    pub final_key_bob: BitString,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    #[serde(skip)]
    pub transcript: Transcript,
    #[serde(skip)]
    pub eve: Option<EveView>,
}

impl SessionReport {
    pub(crate) fn new(protocol: ProtocolKind, seed: u64, rounds: usize, security_s: usize) -> Self {
        Self {
            protocol,
            seed,
            rounds,
            delivered: 0,
            sifted_len: 0,
            qber: None,
            sifted_qber: None,
            bell: None,
            alice_verified: None,
            bob_verified: None,
            matching_positions: None,
            reconciled_len: 0,
            parity_bits_disclosed: 0,
            uncompensated_leak: 0,
            leak_budget: 0,
            security_s,
            final_key_alice: BitString::new(),
            final_key_bob: BitString::new(),
            aborted: false,
            abort_reason: None,
            transcript: Transcript::new(),
            eve: None,
        }
    }

    pub(crate) fn abort(&mut self, by: PartyId, reason: AbortReason) {
        let code = serde_json::to_vec(&reason).expect("reason serializes");
        self.transcript.post(by, MessageTag::Abort, code);
        self.final_key_alice = BitString::new();
        self.final_key_bob = BitString::new();
        self.aborted = true;
        self.abort_reason = Some(reason);
    }

    pub fn keys_match(&self) -> bool {
        self.final_key_alice == self.final_key_bob
    }

    pub fn final_len(&self) -> usize {
        self.final_key_alice.len()
    }
}

// ---------------------------------------------------------------------------
// Authentication keys
// ---------------------------------------------------------------------------

/// Pre-shared one-time key. Encrypting with it marks it used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthKey {
    bits: BitString,
    used: bool,
}

impl AuthKey {
    pub fn new(bits: BitString) -> Self {
        Self { bits, used: false }
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

    pub fn is_used(&self) -> bool {
        self.used
    }

    pub fn mark_used(&mut self) {
        self.used = true;
    }

    fn check(&self, need: usize) -> Result<(), ProtocolError> {
        if self.used {
            return Err(ProtocolError::KeyReuse);
        }
        if self.bits.len() < need {
            return Err(ProtocolError::KeyTooShort { need, have: self.bits.len() });
        }
        Ok(())
    }
}

pub fn otp_encrypt(message: &BitString, key: &mut AuthKey) -> Result<BitString, ProtocolError> {
    key.check(message.len())?;
    key.used = true;
    Ok(message.xor_prefix(&key.bits))
}

pub fn otp_decrypt(ciphertext: &BitString, key: &AuthKey) -> Result<BitString, ProtocolError> {
    key.check(ciphertext.len())?;
    Ok(ciphertext.xor_prefix(&key.bits))
}

// ---------------------------------------------------------------------------
// Key-selected bases
// ---------------------------------------------------------------------------

/// Which basis a key bit of 0 selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisConvention {
    /// 0 → ⊘, 1 → ⊙.
    #[default]
    ZeroRectilinear,
    /// 0 → ⊙, 1 → ⊘.
    ZeroDiagonal,
}

impl BasisConvention {
    fn basis(self, bit: bool) -> MeasurementDirection {
        let diagonal = match self {
            BasisConvention::ZeroRectilinear => bit,
            BasisConvention::ZeroDiagonal => !bit,
        };
        if diagonal {
            MeasurementDirection::DIAGONAL
        } else {
            MeasurementDirection::RECTILINEAR
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSequence(Vec<MeasurementDirection>);

impl BasisSequence {
    pub fn as_slice(&self) -> &[MeasurementDirection] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse of [`key_to_bases`].
    pub fn to_key(&self, convention: BasisConvention) -> BitString {
        self.0.iter().map(|&d| convention.basis(true) == d).collect()
    }
}

impl fmt::Display for BasisSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|d| write!(f, "{d}"))
    }
}

pub fn key_to_bases(key: &BitString, convention: BasisConvention) -> BasisSequence {
    BasisSequence(key.iter().map(|b| convention.basis(b)).collect())
}

// ---------------------------------------------------------------------------
// Peer verification
// ---------------------------------------------------------------------------

/// Checks that `received` and `own` are anticorrelated on `matching`
/// positions, allowing a mismatch rate up to `tolerance`.
pub fn verify_peer(
    received: &BitString,
    own: &BitString,
    matching: &[usize],
    tolerance: f64,
) -> Result<bool, ProtocolError> {
    if matching.is_empty() {
        return Err(ProtocolError::InsufficientEvidence);
    }
    let len = received.len().min(own.len());
    let mut violations = 0;
    for &i in matching {
        if i >= len {
            return Err(ProtocolError::IndexOutOfRange { index: i, len });
        }
        violations += (received[i] == own[i]) as usize;
    }
    Ok(violations as f64 / matching.len() as f64 <= tolerance)
}

/// Mismatch tolerance for anticorrelation checks over `k` positions: zero on
/// a noiseless link, otherwise the depolarizing error `p/2` plus three
/// binomial standard deviations.
pub fn default_tolerance(channel: &QuantumChannelConfig, k: usize) -> f64 {
    if channel.is_noiseless() || k == 0 {
        return 0.0;
    }
    let q = channel.depolarize_probability / 2.0;
    q + 3.0 * (q * (1.0 - q) / k as f64).sqrt()
}
