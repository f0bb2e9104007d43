//! Prepare-and-measure key distribution with two conjugate bases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::distill;
use super::{PipelineParams, ProtocolError, ProtocolKind, SessionReport};
use crate::channel::{Delivery, MessageTag, PartyId, PayloadWriter, QuantumChannel, QuantumChannelConfig};
use crate::postprocess::sift;
use crate::quantum::{MeasurementDirection, Outcome, StateVector};
use crate::rng::{SeedTree, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bb84Config {
    pub num_pulses: usize,
    #[serde(default)]
    pub pipeline: PipelineParams,
}

impl Bb84Config {
    pub fn new(num_pulses: usize) -> Self {
        Self { num_pulses, pipeline: PipelineParams::default() }
    }
}

fn conjugate_basis(rng: &mut SimRng) -> MeasurementDirection {
    if rng.random::<bool>() {
        MeasurementDirection::DIAGONAL
    } else {
        MeasurementDirection::RECTILINEAR
    }
}

pub fn run_bb84(
    config: &Bb84Config,
    channel: &QuantumChannelConfig,
    seed: u64,
) -> Result<SessionReport, ProtocolError> {
    if config.num_pulses == 0 {
        return Err(ProtocolError::InvalidConfig("num_pulses must be positive".into()));
    }
    config.pipeline.validate()?;
    let tree = SeedTree::new(seed);
    let mut alice_rng = tree.stream(Stream::Alice);
    let mut bob_rng = tree.stream(Stream::Bob);
    let mut public = tree.stream(Stream::Public);
    let mut link = QuantumChannel::new(channel.clone(), 0, tree.stream(Stream::Channel), tree.stream(Stream::Eve))?;

    let mut alice = Vec::with_capacity(config.num_pulses);
    let mut bob = Vec::with_capacity(config.num_pulses);
    for round in 0..config.num_pulses {
        let bit: bool = alice_rng.random();
        let basis = conjugate_basis(&mut alice_rng);
        alice.push((basis, bit));
        let state = StateVector::eigenstate(basis, Outcome::from_bit(bit));
        let bob_basis = conjugate_basis(&mut bob_rng);
        bob.push(match link.transmit(state, 0, round)? {
            Delivery::Delivered(s) => {
                let (outcome, _) = s.measure_spin(0, bob_basis, &mut bob_rng)?;
                Some((bob_basis, outcome.bit()))
            }
            Delivery::Lost => None,
        });
    }

    let mut report = SessionReport::new(ProtocolKind::Bb84, seed, config.num_pulses, config.pipeline.security_s);
    report.transcript.extend_quantum_events(link.take_events());
    let lost: Vec<usize> = (0..bob.len()).filter(|&i| bob[i].is_none()).collect();
    report.delivered = bob.len() - lost.len();
    let bob_bases: Vec<MeasurementDirection> = bob.iter().flatten().map(|&(d, _)| d).collect();
    let alice_bases: Vec<MeasurementDirection> =
        alice.iter().zip(&bob).filter(|(_, b)| b.is_some()).map(|(&(d, _), _)| d).collect();
    let sifted = sift(&alice, &bob)?;
    let t = &mut report.transcript;
    t.post(PartyId::Bob, MessageTag::Losses, PayloadWriter::new().positions(&lost).finish());
    t.post(PartyId::Bob, MessageTag::Bases, PayloadWriter::new().directions(&bob_bases).finish());
    t.post(PartyId::Alice, MessageTag::Bases, PayloadWriter::new().directions(&alice_bases).finish());
    t.post(PartyId::Alice, MessageTag::KeyRounds, PayloadWriter::new().positions(&sifted.kept_positions).finish());

    distill(&mut report, &sifted.alice_key, &sifted.bob_key, &config.pipeline, &mut public)?;
    report.eve = link.into_interceptor().map(|i| i.into_view());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AttackStrategy, EvePolicy};

    #[test]
    fn honest_run_produces_matching_keys() {
        let report = run_bb84(&Bb84Config::new(4000), &QuantumChannelConfig::ideal(), 11).unwrap();
        assert!(!report.aborted);
        assert!(report.keys_match());
        assert_eq!(report.sifted_qber, Some(0.0));
        // about half of the pulses survive sifting
        assert!((report.sifted_len as f64 / 4000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn full_intercept_resend_triggers_abort() {
        let attack = AttackStrategy::InterceptResend { fraction: 1.0, policy: EvePolicy::RandomConjugate };
        let report = run_bb84(&Bb84Config::new(4000), &QuantumChannelConfig::with_attack(attack), 12).unwrap();
        assert!(report.aborted);
        let q = report.sifted_qber.unwrap();
        assert!((q - 0.25).abs() < 0.04, "qber = {q}");
        assert_eq!(report.eve.unwrap().observed.len(), 4000);
    }

    #[test]
    fn same_seed_same_transcript() {
        let cfg = QuantumChannelConfig { loss_probability: 0.1, ..QuantumChannelConfig::ideal() };
        let a = run_bb84(&Bb84Config::new(1000), &cfg, 99).unwrap();
        let b = run_bb84(&Bb84Config::new(1000), &cfg, 99).unwrap();
        assert_eq!(a.transcript.to_bytes(), b.transcript.to_bytes());
        assert_eq!(a, b);
    }
}
