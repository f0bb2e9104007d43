use qkdsim::adversary::{replay_auth, AttackStrategy, EvePolicy};
use qkdsim::channel::{MessageTag, PartyId, QuantumChannelConfig, Transcript};
use qkdsim::protocols::auth::{run_auth_init, run_auth_session, AuthInitConfig, AuthSessionConfig, CenterState};
use qkdsim::protocols::epr::{run_epr, EprConfig};
use qkdsim::protocols::{AbortReason, AuthKey, ProtocolError};

fn k1_pair(seed: u64) -> (AuthKey, AuthKey) {
    let mut center = CenterState::new();
    center.register(PartyId::Alice);
    center.register(PartyId::Bob);
    let ideal = QuantumChannelConfig::ideal();
    let cfg = AuthInitConfig { rounds: 1024, ..AuthInitConfig::default() };
    let out = run_auth_init(&cfg, &mut center, &ideal, &ideal, seed).unwrap();
    (out.alice_key.unwrap(), out.bob_key.unwrap())
}

#[test]
fn replayed_authentication_is_rejected() {
    let ideal = QuantumChannelConfig::ideal();
    let cfg = AuthSessionConfig::default();
    let (mut ka, mut kb) = k1_pair(1);
    let old = run_auth_session(&cfg, &mut ka, &mut kb, &ideal, 2).unwrap();
    assert!(!old.report.aborted);

    let mut fresh_alice = old.fresh_alice.unwrap();
    let replay = replay_auth(&cfg, &old.report.transcript, &mut fresh_alice, &ideal, 3).unwrap();
    assert_eq!(replay.bob_verified, Some(false));
    assert_eq!(replay.abort_reason, Some(AbortReason::PeerRejected { verifier: PartyId::Alice }));
    assert!(fresh_alice.is_used());

    // the old key is spent
    assert_eq!(replay_auth(&cfg, &old.report.transcript, &mut ka, &ideal, 4).unwrap_err(), ProtocolError::KeyReuse);
}

#[test]
fn renewed_key_authenticates_the_next_session() {
    let ideal = QuantumChannelConfig::ideal();
    let cfg = AuthSessionConfig::default();
    let (mut ka, mut kb) = k1_pair(5);
    for seed in 6..9 {
        let out = run_auth_session(&cfg, &mut ka, &mut kb, &ideal, seed).unwrap();
        assert_eq!((out.report.alice_verified, out.report.bob_verified), (Some(true), Some(true)));
        ka = out.fresh_alice.unwrap();
        kb = out.fresh_bob.unwrap();
    }
}

#[test]
fn mild_noise_still_yields_equal_keys() {
    let noisy =
        QuantumChannelConfig { loss_probability: 0.05, depolarize_probability: 0.04, ..QuantumChannelConfig::ideal() };
    let report = run_epr(&EprConfig::new(40_000), &noisy, 10).unwrap();
    assert!(!report.aborted, "{:?}", report.abort_reason);
    assert!(report.keys_match());
    let q = report.sifted_qber.unwrap();
    assert!((q - 0.02).abs() < 0.01, "qber = {q}");

    let (mut ka, mut kb) = k1_pair(11);
    let out = run_auth_session(&AuthSessionConfig::default(), &mut ka, &mut kb, &noisy, 12).unwrap();
    assert_eq!(out.report.bob_verified, Some(true));
    assert_eq!(out.report.alice_verified, Some(true));
}

#[test]
fn partial_interception_lowers_bell_statistic() {
    let attack = AttackStrategy::InterceptResend { fraction: 0.5, policy: EvePolicy::RandomConjugate };
    let report = run_epr(&EprConfig::new(50_000), &QuantumChannelConfig::with_attack(attack), 13).unwrap();
    // S = −2√2 (1 − f) − √2 f at f = 0.5
    let expected = -1.5 * std::f64::consts::SQRT_2;
    let s = report.bell.unwrap().s;
    assert!((s - expected).abs() < 0.08, "s = {s}");
}

#[test]
fn transcript_survives_jsonl_round_trip() {
    let report = run_epr(&EprConfig::new(2000), &QuantumChannelConfig::ideal(), 14).unwrap();
    let text = report.transcript.to_jsonl();
    let back = Transcript::from_jsonl(&text).unwrap();
    assert_eq!(back.messages(), report.transcript.messages());
    assert!(back.find(MessageTag::ToeplitzSeed).next().is_some());
}
