//! Entanglement-based key distribution with a CHSH eavesdropping test.
//!
//! Alice holds the pair source and sends the second qubit of each singlet
//! to Bob. Equal-direction rounds become key bits (Bob flips his), the four
//! CHSH direction pairs feed the Bell statistic, the rest are discarded.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::distill;
use super::{AbortReason, BellSummary, PipelineParams, ProtocolError, ProtocolKind, SessionReport};
use crate::bell::{
    chsh_pairs, chsh_s, detect_eavesdropping, BellEstimate, PairRecord, Verdict, ALICE_ANGLES, BOB_ANGLES,
    DEFAULT_THRESHOLD,
};
use crate::bits::BitString;
use crate::channel::{Delivery, MessageTag, PartyId, PayloadWriter, QuantumChannel, QuantumChannelConfig};
use crate::quantum::{make_singlet, MeasurementDirection, Outcome};
use crate::rng::{SeedTree, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprConfig {
    pub num_pairs: usize,
    /// Fraction of CHSH-setting rounds whose outcomes are disclosed.
    #[serde(default = "one")]
    pub bell_sample_fraction: f64,
    #[serde(default = "default_threshold")]
    pub bell_threshold: f64,
    #[serde(default)]
    pub pipeline: PipelineParams,
}

fn one() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl EprConfig {
    pub fn new(num_pairs: usize) -> Self {
        Self {
            num_pairs,
            bell_sample_fraction: 1.0,
            bell_threshold: DEFAULT_THRESHOLD,
            pipeline: PipelineParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EprRound {
    pub alice_dir: MeasurementDirection,
    pub bob_dir: MeasurementDirection,
    pub alice: Outcome,
    /// `None` when the qubit was lost in transit.
    pub bob: Option<Outcome>,
}

pub(crate) fn draw_direction(angles: &[f64; 3], rng: &mut SimRng) -> MeasurementDirection {
    MeasurementDirection::new(angles[rng.random_range(0..3)])
}

fn run_rounds(num_pairs: usize, link: &mut QuantumChannel, tree: &SeedTree) -> Result<Vec<EprRound>, ProtocolError> {
    let mut alice_rng = tree.stream(Stream::Alice);
    let mut bob_rng = tree.stream(Stream::Bob);
    let mut rounds = Vec::with_capacity(num_pairs);
    for round in 0..num_pairs {
        let alice_dir = draw_direction(&ALICE_ANGLES, &mut alice_rng);
        let bob_dir = draw_direction(&BOB_ANGLES, &mut bob_rng);
        let pair = make_singlet();
        let (alice, bob) = match link.transmit(pair.clone(), 1, round)? {
            Delivery::Delivered(state) => {
                let (a, state) = state.measure_spin(0, alice_dir, &mut alice_rng)?;
                let (b, _) = state.measure_spin(1, bob_dir, &mut bob_rng)?;
                (a, Some(b))
            }
            Delivery::Lost => (pair.measure_spin(0, alice_dir, &mut alice_rng)?.0, None),
        };
        rounds.push(EprRound { alice_dir, bob_dir, alice, bob });
    }
    Ok(rounds)
}

pub(crate) fn is_chsh_round(a: MeasurementDirection, b: MeasurementDirection) -> bool {
    chsh_pairs().iter().any(|&(x, y, _)| x == a && y == b)
}

/// Estimates the CHSH statistic from disclosed rounds. Every CHSH direction
/// pair must appear at least once.
pub(crate) fn bell_summary(records: &[PairRecord], threshold: f64) -> Result<BellSummary, ProtocolError> {
    let estimate = BellEstimate::from_records(records);
    let s = chsh_s(&estimate).map_err(|_| ProtocolError::InsufficientBellRounds)?;
    let verdict = detect_eavesdropping(s, threshold)?;
    Ok(BellSummary { estimate, s, threshold, verdict })
}

/// Measures `num_pairs` singlets with E91 directions and evaluates CHSH on
/// every CHSH-setting round, without key extraction.
pub fn bell_test(num_pairs: usize, channel: &QuantumChannelConfig, seed: u64) -> Result<BellSummary, ProtocolError> {
    let tree = SeedTree::new(seed);
    let mut link = QuantumChannel::new(channel.clone(), 0, tree.stream(Stream::Channel), tree.stream(Stream::Eve))?;
    let rounds = run_rounds(num_pairs, &mut link, &tree)?;
    let records: Vec<PairRecord> = rounds
        .iter()
        .filter(|r| is_chsh_round(r.alice_dir, r.bob_dir))
        .filter_map(|r| {
            r.bob.map(|b| PairRecord { alice_dir: r.alice_dir, bob_dir: r.bob_dir, alice: r.alice, bob: b })
        })
        .collect();
    bell_summary(&records, DEFAULT_THRESHOLD)
}

pub fn run_epr(config: &EprConfig, channel: &QuantumChannelConfig, seed: u64) -> Result<SessionReport, ProtocolError> {
    if config.num_pairs == 0 {
        return Err(ProtocolError::InvalidConfig("num_pairs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.bell_sample_fraction) {
        return Err(ProtocolError::InvalidConfig("bell_sample_fraction must lie in [0, 1]".into()));
    }
    config.pipeline.validate()?;
    let tree = SeedTree::new(seed);
    let mut public = tree.stream(Stream::Public);
    let mut link = QuantumChannel::new(channel.clone(), 0, tree.stream(Stream::Channel), tree.stream(Stream::Eve))?;
    let rounds = run_rounds(config.num_pairs, &mut link, &tree)?;

    let mut report = SessionReport::new(ProtocolKind::Epr, seed, config.num_pairs, config.pipeline.security_s);
    report.transcript.extend_quantum_events(link.take_events());
    let delivered: Vec<usize> = (0..rounds.len()).filter(|&i| rounds[i].bob.is_some()).collect();
    let lost: Vec<usize> = (0..rounds.len()).filter(|&i| rounds[i].bob.is_none()).collect();
    report.delivered = delivered.len();
    let dirs = |f: fn(&EprRound) -> MeasurementDirection| delivered.iter().map(|&i| f(&rounds[i])).collect::<Vec<_>>();
    let t = &mut report.transcript;
    t.post(PartyId::Bob, MessageTag::Losses, PayloadWriter::new().positions(&lost).finish());
    t.post(PartyId::Alice, MessageTag::Bases, PayloadWriter::new().directions(&dirs(|r| r.alice_dir)).finish());
    t.post(PartyId::Bob, MessageTag::Bases, PayloadWriter::new().directions(&dirs(|r| r.bob_dir)).finish());

    // Bell test on a public random subset of the CHSH-setting rounds.
    let chsh: Vec<usize> =
        delivered.iter().copied().filter(|&i| is_chsh_round(rounds[i].alice_dir, rounds[i].bob_dir)).collect();
    let take = (config.bell_sample_fraction * chsh.len() as f64).round() as usize;
    let mut picked: Vec<usize> = index::sample(&mut public, chsh.len(), take).into_iter().map(|k| chsh[k]).collect();
    picked.sort_unstable();
    let records: Vec<PairRecord> = picked
        .iter()
        .map(|&i| {
            let r = &rounds[i];
            PairRecord { alice_dir: r.alice_dir, bob_dir: r.bob_dir, alice: r.alice, bob: r.bob.unwrap() }
        })
        .collect();
    let alice_out: BitString = records.iter().map(|r| r.alice.bit()).collect();
    let bob_out: BitString = records.iter().map(|r| r.bob.bit()).collect();
    let t = &mut report.transcript;
    t.post(PartyId::Alice, MessageTag::BellRounds, PayloadWriter::new().positions(&picked).finish());
    t.post(PartyId::Alice, MessageTag::BellOutcomes, PayloadWriter::new().bits(&alice_out).finish());
    t.post(PartyId::Bob, MessageTag::BellOutcomes, PayloadWriter::new().bits(&bob_out).finish());

    let bell = bell_summary(&records, config.bell_threshold)?;
    let (s, verdict) = (bell.s, bell.verdict);
    report.bell = Some(bell);
    if verdict == Verdict::Compromised {
        report.abort(PartyId::Alice, AbortReason::BellTestFailed { s, threshold: config.bell_threshold });
        report.eve = link.into_interceptor().map(|i| i.into_view());
        return Ok(report);
    }

    let key_rounds: Vec<usize> =
        delivered.iter().copied().filter(|&i| rounds[i].alice_dir == rounds[i].bob_dir).collect();
    report.transcript.post(PartyId::Alice, MessageTag::KeyRounds, PayloadWriter::new().positions(&key_rounds).finish());
    let alice_key: BitString = key_rounds.iter().map(|&i| rounds[i].alice.bit()).collect();
    let bob_key: BitString = key_rounds.iter().map(|&i| !rounds[i].bob.unwrap().bit()).collect();
    distill(&mut report, &alice_key, &bob_key, &config.pipeline, &mut public)?;
    report.eve = link.into_interceptor().map(|i| i.into_view());
    Ok(report)
}
