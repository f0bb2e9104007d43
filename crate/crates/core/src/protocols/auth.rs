//! Center-assisted authenticated key distribution.
//!
//! An initial phase uses entanglement swapping through a trusted center to
//! give Alice and Bob a shared authentication key `K₁`. Each later session
//! spends `K₁` once: Bob measures some rounds in bases chosen by `K₁` and
//! sends the outcomes one-time-padded with `K₁`; Alice checks them against
//! her own anticorrelated outcomes, then echoes the decrypted message so
//! Bob can check her. A successful session renews `K₁` from its final key.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::epr::{bell_summary, draw_direction, is_chsh_round};
use super::pipeline::distill;
use super::{
    default_tolerance, key_to_bases, otp_decrypt, otp_encrypt, verify_peer, AbortReason, AuthKey, BasisConvention,
    PipelineParams, ProtocolError, ProtocolKind, SessionReport,
};
use crate::bell::{PairRecord, Verdict, ALICE_ANGLES, BOB_ANGLES, DEFAULT_THRESHOLD};
use crate::bits::BitString;
use crate::channel::{Delivery, MessageTag, PartyId, PayloadWriter, QuantumChannel, QuantumChannelConfig};
use crate::quantum::{make_singlet, tensor, MeasurementDirection, Outcome, StateVector, TotalSpin};
use crate::rng::{SeedTree, Stream};

// ---------------------------------------------------------------------------
// Center
// ---------------------------------------------------------------------------

/// What the center learns. It has no variant for key-round outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CenterObservation {
    TotalSpin { round: usize, spin: TotalSpin },
    SpotCheck { round: usize, link: PartyId, direction: MeasurementDirection, center: Outcome, party: Outcome },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CenterState {
    registered: BTreeSet<PartyId>,
    /// Rounds whose qubit from each party the center holds.
    stored: BTreeMap<PartyId, Vec<usize>>,
    observations: Vec<CenterObservation>,
}

impl CenterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, party: PartyId) {
        self.registered.insert(party);
    }

    pub fn is_registered(&self, party: PartyId) -> bool {
        self.registered.contains(&party)
    }

    pub fn stored(&self, party: PartyId) -> &[usize] {
        self.stored.get(&party).map_or(&[], Vec::as_slice)
    }

    pub fn observations(&self) -> &[CenterObservation] {
        &self.observations
    }
}

// ---------------------------------------------------------------------------
// Initial phase
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthInitConfig {
    pub rounds: usize,
    pub check_rounds: usize,
    /// `None` selects [`default_tolerance`].
    pub check_tolerance: Option<f64>,
    pub pipeline: PipelineParams,
}

impl Default for AuthInitConfig {
    fn default() -> Self {
        Self { rounds: 2048, check_rounds: 64, check_tolerance: None, pipeline: PipelineParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct AuthInitOutcome {
    pub report: SessionReport,
    pub alice_key: Option<AuthKey>,
    pub bob_key: Option<AuthKey>,
    /// Delivered rounds on which the center measured total spin.
    pub spin_measured: usize,
    /// Rounds with total spin 0, kept as raw key.
    pub kept_rounds: Vec<usize>,
    pub check_positions: Vec<usize>,
}

/// Distributes `K₁` through the center by entanglement swapping.
///
/// Qubits are ordered `[A, C, B, D]`: Alice keeps `A` of singlet `(A, C)`
/// and sends `C`; Bob keeps `B` of `(B, D)` and sends `D`.
pub fn run_auth_init(
    config: &AuthInitConfig,
    center: &mut CenterState,
    alice_link: &QuantumChannelConfig,
    bob_link: &QuantumChannelConfig,
    seed: u64,
) -> Result<AuthInitOutcome, ProtocolError> {
    for party in [PartyId::Alice, PartyId::Bob] {
        if !center.is_registered(party) {
            return Err(ProtocolError::UnregisteredParty(party));
        }
    }
    if config.rounds == 0 {
        return Err(ProtocolError::InvalidConfig("rounds must be positive".into()));
    }
    config.pipeline.validate()?;
    let tree = SeedTree::new(seed);
    let mut alice_rng = tree.stream(Stream::Alice);
    let mut bob_rng = tree.stream(Stream::Bob);
    let mut center_rng = tree.stream(Stream::Center);
    let mut public = tree.stream(Stream::Public);
    let eve = tree.child(u64::from(PartyId::Eve.code()));
    let mut link_a =
        QuantumChannel::new(alice_link.clone(), 0, tree.stream(Stream::Channel), tree.stream(Stream::Eve))?;
    let mut link_b =
        QuantumChannel::new(bob_link.clone(), 1, tree.stream(Stream::BobChannel), eve.stream(Stream::Eve))?;

    let mut report = SessionReport::new(ProtocolKind::AuthInit, seed, config.rounds, config.pipeline.security_s);
    report.transcript.post(PartyId::Alice, MessageTag::Register, vec![PartyId::Alice.code()]);
    report.transcript.post(PartyId::Bob, MessageTag::Register, vec![PartyId::Bob.code()]);

    let pair = tensor(&make_singlet(), &make_singlet())?;
    let mut states: Vec<(usize, StateVector)> = Vec::new();
    for round in 0..config.rounds {
        let Delivery::Delivered(s) = link_a.transmit(pair.clone(), 1, round)? else { continue };
        let Delivery::Delivered(s) = link_b.transmit(s, 3, round)? else { continue };
        center.stored.entry(PartyId::Alice).or_default().push(round);
        center.stored.entry(PartyId::Bob).or_default().push(round);
        states.push((round, s));
    }
    report.transcript.extend_quantum_events(link_a.take_events());
    report.transcript.extend_quantum_events(link_b.take_events());
    report.delivered = states.len();

    // Spot checks: the center and each party measure their halves along a
    // direction the center announces; every check round must anticorrelate.
    let n_checks = config.check_rounds.min(states.len() / 2);
    let mut is_check = vec![false; states.len()];
    let mut picks = index::sample(&mut center_rng, states.len(), n_checks).into_vec();
    picks.sort_unstable();
    for &k in &picks {
        is_check[k] = true;
    }
    let check_positions: Vec<usize> = picks.iter().map(|&k| states[k].0).collect();
    let directions: Vec<MeasurementDirection> = picks
        .iter()
        .map(|_| {
            if center_rng.random::<bool>() {
                MeasurementDirection::DIAGONAL
            } else {
                MeasurementDirection::RECTILINEAR
            }
        })
        .collect();
    report.transcript.post(
        PartyId::Center,
        MessageTag::SpotCheck,
        PayloadWriter::new().positions(&check_positions).directions(&directions).finish(),
    );
    let mut alice_replies = BitString::new();
    let mut bob_replies = BitString::new();
    let mut mismatches = [0usize; 2];
    for (&k, &dir) in picks.iter().zip(&directions) {
        let (round, s) = &states[k];
        let (c, s) = s.measure_spin(1, dir, &mut center_rng)?;
        let (d, s) = s.measure_spin(3, dir, &mut center_rng)?;
        let (a, s) = s.measure_spin(0, dir, &mut alice_rng)?;
        let (b, _) = s.measure_spin(2, dir, &mut bob_rng)?;
        alice_replies.push(a.bit());
        bob_replies.push(b.bit());
        for (i, (link, center_out, party_out)) in [(PartyId::Alice, c, a), (PartyId::Bob, d, b)].into_iter().enumerate()
        {
            center.observations.push(CenterObservation::SpotCheck {
                round: *round,
                link,
                direction: dir,
                center: center_out,
                party: party_out,
            });
            mismatches[i] += (center_out == party_out) as usize;
        }
    }
    let t = &mut report.transcript;
    t.post(PartyId::Alice, MessageTag::SpotCheckReply, PayloadWriter::new().bits(&alice_replies).finish());
    t.post(PartyId::Bob, MessageTag::SpotCheckReply, PayloadWriter::new().bits(&bob_replies).finish());
    for (i, (link, cfg)) in [(PartyId::Alice, alice_link), (PartyId::Bob, bob_link)].into_iter().enumerate() {
        if n_checks == 0 {
            break;
        }
        let rate = mismatches[i] as f64 / n_checks as f64;
        let tolerance = config.check_tolerance.unwrap_or_else(|| default_tolerance(cfg, n_checks));
        if rate > tolerance {
            report.abort(PartyId::Center, AbortReason::SpotCheckFailed { link, mismatch_rate: rate });
            return Ok(AuthInitOutcome {
                report,
                alice_key: None,
                bob_key: None,
                spin_measured: 0,
                kept_rounds: Vec::new(),
                check_positions,
            });
        }
    }

    // Entanglement swapping on the remaining rounds.
    let mut spin_rounds = Vec::new();
    let mut spins = BitString::new();
    let mut kept = Vec::new();
    for (k, (round, s)) in states.iter().enumerate() {
        if is_check[k] {
            continue;
        }
        let (spin, s) = s.measure_total_spin(1, 3, &mut center_rng)?;
        center.observations.push(CenterObservation::TotalSpin { round: *round, spin });
        spin_rounds.push(*round);
        spins.push(spin == TotalSpin::Triplet);
        if spin == TotalSpin::Singlet {
            kept.push((*round, s));
        }
    }
    report.transcript.post(
        PartyId::Center,
        MessageTag::TotalSpin,
        PayloadWriter::new().positions(&spin_rounds).bits(&spins).finish(),
    );

    let readout = MeasurementDirection::RECTILINEAR;
    let mut alice_raw = BitString::new();
    let mut bob_raw = BitString::new();
    for (_, s) in &kept {
        let (a, s) = s.measure_spin(0, readout, &mut alice_rng)?;
        let (b, _) = s.measure_spin(2, readout, &mut bob_rng)?;
        alice_raw.push(a.bit());
        bob_raw.push(!b.bit());
    }
    let kept_rounds: Vec<usize> = kept.iter().map(|(r, _)| *r).collect();
    report.transcript.post(
        PartyId::Alice,
        MessageTag::KeyRounds,
        PayloadWriter::new().positions(&kept_rounds).finish(),
    );

    distill(&mut report, &alice_raw, &bob_raw, &config.pipeline, &mut public)?;
    let (alice_key, bob_key) = if report.aborted {
        (None, None)
    } else {
        (Some(AuthKey::new(report.final_key_alice.clone())), Some(AuthKey::new(report.final_key_bob.clone())))
    };
    let mut eve = link_a.into_interceptor().map(|i| i.into_view()).unwrap_or_default();
    if let Some(v) = link_b.into_interceptor() {
        eve.observed.extend(v.into_view().observed);
    }
    report.eve = Some(eve);
    Ok(AuthInitOutcome { report, alice_key, bob_key, spin_measured: spin_rounds.len(), kept_rounds, check_positions })
}

// ---------------------------------------------------------------------------
// Authenticated session
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthSessionConfig {
    pub rounds: usize,
    /// Authentication rounds as a fraction of `rounds`, capped by `|K₁|`.
    pub auth_fraction: f64,
    pub min_auth_rounds: usize,
    /// `None` selects [`default_tolerance`].
    pub verify_tolerance: Option<f64>,
    pub bell_threshold: f64,
    pub bell_sample_fraction: f64,
    pub convention: BasisConvention,
    pub pipeline: PipelineParams,
}

impl Default for AuthSessionConfig {
    fn default() -> Self {
        Self {
            rounds: 4096,
            auth_fraction: 0.25,
            min_auth_rounds: 64,
            verify_tolerance: None,
            bell_threshold: DEFAULT_THRESHOLD,
            bell_sample_fraction: 1.0,
            convention: BasisConvention::ZeroRectilinear,
            pipeline: PipelineParams::default(),
        }
    }
}

impl AuthSessionConfig {
    /// Number of authentication rounds for a key of `key_len` bits.
    pub fn auth_rounds(&self, key_len: usize) -> usize {
        let wanted = ((self.auth_fraction * self.rounds as f64).round() as usize).max(self.min_auth_rounds);
        wanted.min(key_len)
    }
}

#[derive(Debug, Clone)]
pub struct AuthSessionOutcome {
    pub report: SessionReport,
    pub fresh_alice: Option<AuthKey>,
    pub fresh_bob: Option<AuthKey>,
    pub auth_positions: Vec<usize>,
}

/// Deviations from honest behaviour, used by impersonation attacks.
#[derive(Debug, Clone, Default)]
pub(crate) struct Script {
    /// The Alice role continues even when its check of Bob fails.
    pub alice_ignores_verification: bool,
    /// The Bob role sends these positions and ciphertext instead of its own.
    pub bob_replay: Option<(Vec<usize>, BitString)>,
}

pub fn run_auth_session(
    config: &AuthSessionConfig,
    k1_alice: &mut AuthKey,
    k1_bob: &mut AuthKey,
    channel: &QuantumChannelConfig,
    seed: u64,
) -> Result<AuthSessionOutcome, ProtocolError> {
    run_auth_session_scripted(config, k1_alice, k1_bob, channel, seed, &Script::default())
}

pub(crate) fn run_auth_session_scripted(
    config: &AuthSessionConfig,
    k1_alice: &mut AuthKey,
    k1_bob: &mut AuthKey,
    channel: &QuantumChannelConfig,
    seed: u64,
    script: &Script,
) -> Result<AuthSessionOutcome, ProtocolError> {
    if k1_alice.is_used() || k1_bob.is_used() {
        return Err(ProtocolError::KeyReuse);
    }
    if config.rounds == 0 {
        return Err(ProtocolError::InvalidConfig("rounds must be positive".into()));
    }
    config.pipeline.validate()?;
    let k = config.auth_rounds(k1_bob.len());
    if k < config.min_auth_rounds {
        return Err(ProtocolError::KeyTooShort { need: config.min_auth_rounds, have: k1_bob.len() });
    }
    let tree = SeedTree::new(seed);
    let mut alice_rng = tree.stream(Stream::Alice);
    let mut bob_rng = tree.stream(Stream::Bob);
    let mut public = tree.stream(Stream::Public);
    let mut link = QuantumChannel::new(channel.clone(), 0, tree.stream(Stream::Channel), tree.stream(Stream::Eve))?;
    let mut report = SessionReport::new(ProtocolKind::AuthSession, seed, config.rounds, config.pipeline.security_s);

    let pairs: Vec<Option<StateVector>> = (0..config.rounds)
        .map(|round| match link.transmit(make_singlet(), 1, round)? {
            Delivery::Delivered(s) => Ok(Some(s)),
            Delivery::Lost => Ok(None),
        })
        .collect::<Result<_, ProtocolError>>()?;
    report.transcript.extend_quantum_events(link.take_events());
    let delivered: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].is_some()).collect();
    report.delivered = delivered.len();
    if delivered.len() < 2 * k {
        report.abort(PartyId::Bob, AbortReason::TooFewDelivered { delivered: delivered.len(), needed: 2 * k });
        return Ok(empty_outcome(report));
    }

    // Bob picks the authentication rounds among those that arrived; the j-th
    // uses the basis selected by bit j of his K₁.
    let mut auth_idx = index::sample(&mut bob_rng, delivered.len(), k).into_vec();
    auth_idx.sort_unstable();
    let auth_positions: Vec<usize> = auth_idx.iter().map(|&i| delivered[i]).collect();
    let bob_bases = key_to_bases(&k1_bob.bits().prefix(k), config.convention);

    let mut alice_dir = Vec::with_capacity(config.rounds);
    let mut alice_out = Vec::with_capacity(config.rounds);
    let mut bob_dir: Vec<Option<MeasurementDirection>> = vec![None; config.rounds];
    let mut bob_out: Vec<Option<Outcome>> = vec![None; config.rounds];
    let mut auth_slot = auth_positions.iter().copied().enumerate().peekable();
    for (round, pair) in pairs.iter().enumerate() {
        let dir = draw_direction(&ALICE_ANGLES, &mut alice_rng);
        let state = pair.clone().unwrap_or_else(make_singlet);
        let (a, state) = state.measure_spin(0, dir, &mut alice_rng)?;
        alice_dir.push(dir);
        alice_out.push(a);
        if pair.is_none() {
            continue;
        }
        let b_dir = match auth_slot.peek() {
            Some(&(j, pos)) if pos == round => {
                auth_slot.next();
                bob_bases.as_slice()[j]
            }
            _ => draw_direction(&BOB_ANGLES, &mut bob_rng),
        };
        bob_dir[round] = Some(b_dir);
        bob_out[round] = Some(state.measure_spin(1, b_dir, &mut bob_rng)?.0);
    }
    let is_auth: BTreeSet<usize> = auth_positions.iter().copied().collect();
    let key_candidates: Vec<usize> = delivered.iter().copied().filter(|i| !is_auth.contains(i)).collect();

    // Bell test on the non-authentication rounds.
    let lost: Vec<usize> = (0..config.rounds).filter(|&i| pairs[i].is_none()).collect();
    let cand_alice: Vec<MeasurementDirection> = key_candidates.iter().map(|&i| alice_dir[i]).collect();
    let cand_bob: Vec<MeasurementDirection> = key_candidates.iter().map(|&i| bob_dir[i].unwrap()).collect();
    let t = &mut report.transcript;
    t.post(PartyId::Bob, MessageTag::Losses, PayloadWriter::new().positions(&lost).finish());
    t.post(PartyId::Bob, MessageTag::KeyRounds, PayloadWriter::new().positions(&key_candidates).finish());
    t.post(PartyId::Bob, MessageTag::Bases, PayloadWriter::new().directions(&cand_bob).finish());
    t.post(PartyId::Alice, MessageTag::Bases, PayloadWriter::new().directions(&cand_alice).finish());

    let chsh: Vec<usize> =
        key_candidates.iter().copied().filter(|&i| is_chsh_round(alice_dir[i], bob_dir[i].unwrap())).collect();
    if !(0.0..=1.0).contains(&config.bell_sample_fraction) {
        return Err(ProtocolError::InvalidConfig("bell_sample_fraction must lie in [0, 1]".into()));
    }
    let take = (config.bell_sample_fraction * chsh.len() as f64).round() as usize;
    let mut picked: Vec<usize> = index::sample(&mut bob_rng, chsh.len(), take).into_iter().map(|j| chsh[j]).collect();
    picked.sort_unstable();
    let records: Vec<PairRecord> = picked
        .iter()
        .map(|&i| PairRecord {
            alice_dir: alice_dir[i],
            bob_dir: bob_dir[i].unwrap(),
            alice: alice_out[i],
            bob: bob_out[i].unwrap(),
        })
        .collect();
    let t = &mut report.transcript;
    t.post(PartyId::Bob, MessageTag::BellRounds, PayloadWriter::new().positions(&picked).finish());
    t.post(
        PartyId::Alice,
        MessageTag::BellOutcomes,
        PayloadWriter::new().bits(&records.iter().map(|r| r.alice.bit()).collect()).finish(),
    );
    t.post(
        PartyId::Bob,
        MessageTag::BellOutcomes,
        PayloadWriter::new().bits(&records.iter().map(|r| r.bob.bit()).collect()).finish(),
    );
    let bell = bell_summary(&records, config.bell_threshold)?;
    let (s, verdict) = (bell.s, bell.verdict);
    report.bell = Some(bell);
    if verdict == Verdict::Compromised {
        report.abort(PartyId::Alice, AbortReason::BellTestFailed { s, threshold: config.bell_threshold });
        return Ok(empty_outcome(report));
    }

    // Bob authenticates to Alice.
    let m_bob: BitString = auth_positions.iter().map(|&i| bob_out[i].unwrap().bit()).collect();
    let (sent_positions, y) = match &script.bob_replay {
        Some((positions, y)) => {
            k1_bob.mark_used();
            (positions.clone(), y.clone())
        }
        None => (auth_positions.clone(), otp_encrypt(&m_bob, k1_bob)?),
    };
    k1_bob.mark_used();
    let t = &mut report.transcript;
    t.post(PartyId::Bob, MessageTag::AuthPositions, PayloadWriter::new().positions(&sent_positions).finish());
    t.post(PartyId::Bob, MessageTag::AuthCiphertext, PayloadWriter::new().bits(&y).finish());

    let m_alice = otp_decrypt(&y, k1_alice)?;
    k1_alice.mark_used();
    let alice_bases = key_to_bases(&k1_alice.bits().prefix(sent_positions.len()), config.convention);
    let in_range = sent_positions.len() == m_alice.len() && sent_positions.iter().all(|&p| p < config.rounds);
    let matching: Vec<usize> = if in_range {
        (0..sent_positions.len()).filter(|&j| alice_dir[sent_positions[j]] == alice_bases.as_slice()[j]).collect()
    } else {
        Vec::new()
    };
    let own: BitString =
        if in_range { sent_positions.iter().map(|&p| alice_out[p].bit()).collect() } else { BitString::new() };
    let tolerance = config.verify_tolerance.unwrap_or_else(|| default_tolerance(channel, matching.len()));
    let bob_ok = match verify_peer(&m_alice, &own, &matching, tolerance) {
        Ok(ok) => ok,
        Err(ProtocolError::InsufficientEvidence | ProtocolError::IndexOutOfRange { .. }) => false,
        Err(e) => return Err(e),
    };
    report.bob_verified = Some(bob_ok);
    report.matching_positions = Some(matching.len());
    report.transcript.post(PartyId::Alice, MessageTag::Verdict, vec![bob_ok as u8]);
    if !bob_ok && !script.alice_ignores_verification {
        report.abort(PartyId::Alice, AbortReason::PeerRejected { verifier: PartyId::Alice });
        return Ok(AuthSessionOutcome { auth_positions, ..empty_outcome(report) });
    }

    // Alice authenticates to Bob by echoing the decrypted message.
    report.transcript.post(PartyId::Alice, MessageTag::AuthEcho, PayloadWriter::new().bits(&m_alice).finish());
    let alice_ok = m_alice == m_bob;
    report.alice_verified = Some(alice_ok);
    report.transcript.post(PartyId::Bob, MessageTag::Verdict, vec![alice_ok as u8]);
    if !alice_ok {
        report.abort(PartyId::Bob, AbortReason::PeerRejected { verifier: PartyId::Bob });
        return Ok(AuthSessionOutcome { auth_positions, ..empty_outcome(report) });
    }

    // Key from equal-direction rounds; Bob flips his bits.
    let key_rounds: Vec<usize> =
        key_candidates.iter().copied().filter(|&i| alice_dir[i] == bob_dir[i].unwrap()).collect();
    report.transcript.post(PartyId::Alice, MessageTag::KeyRounds, PayloadWriter::new().positions(&key_rounds).finish());
    let alice_key: BitString = key_rounds.iter().map(|&i| alice_out[i].bit()).collect();
    let bob_key: BitString = key_rounds.iter().map(|&i| !bob_out[i].unwrap().bit()).collect();
    distill(&mut report, &alice_key, &bob_key, &config.pipeline, &mut public)?;
    report.eve = link.into_interceptor().map(|i| i.into_view());
    if report.aborted {
        return Ok(AuthSessionOutcome { auth_positions, ..empty_outcome(report) });
    }

    // Carve the next authentication key from the front of the final key.
    let need = k1_alice.len();
    if report.final_len() <= need {
        let have = report.final_len();
        report.abort(PartyId::Alice, AbortReason::KeyTooShortForRenewal { need, have });
        return Ok(AuthSessionOutcome { auth_positions, ..empty_outcome(report) });
    }
    let fresh_alice = AuthKey::new(report.final_key_alice.prefix(need));
    let fresh_bob = AuthKey::new(report.final_key_bob.prefix(need));
    report.final_key_alice = report.final_key_alice.suffix_from(need);
    report.final_key_bob = report.final_key_bob.suffix_from(need);
    Ok(AuthSessionOutcome { report, fresh_alice: Some(fresh_alice), fresh_bob: Some(fresh_bob), auth_positions })
}

fn empty_outcome(report: SessionReport) -> AuthSessionOutcome {
    AuthSessionOutcome { report, fresh_alice: None, fresh_bob: None, auth_positions: Vec::new() }
}
