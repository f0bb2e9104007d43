//! Eavesdropping strategies.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::channel::{ChannelError, MessageTag, PayloadReader, QuantumChannelConfig, Transcript};
use crate::protocols::auth::{run_auth_session_scripted, AuthSessionConfig, Script};
use crate::protocols::epr::{run_epr, EprConfig};
use crate::protocols::{AuthKey, ProtocolError, SessionReport};
use crate::quantum::{MeasurementDirection, Outcome, QuantumError, StateVector};
use crate::rng::{SeedTree, SimRng, Stream};

/// How Eve picks her measurement direction for an intercepted qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvePolicy {
    /// Uniformly one of ⊘ and ⊙.
    RandomConjugate,
    /// Uniform angle in `[0, π)`.
    RandomAngle,
}

impl EvePolicy {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> MeasurementDirection {
        match self {
            EvePolicy::RandomConjugate => {
                if rng.random::<bool>() {
                    MeasurementDirection::DIAGONAL
                } else {
                    MeasurementDirection::RECTILINEAR
                }
            }
            EvePolicy::RandomAngle => MeasurementDirection::new(rng.random::<f64>() * PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitmTarget {
    EprPlain,
    AuthSession,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackStrategy {
    #[default]
    None,
    InterceptResend {
        fraction: f64,
        policy: EvePolicy,
    },
    /// Eve terminates the channel and runs a separate session with each
    /// side. The quantum channel itself passes qubits through untouched.
    MitmImpersonation {
        target: MitmTarget,
    },
}

impl AttackStrategy {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if let AttackStrategy::InterceptResend { fraction, .. } = *self {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(ChannelError::InvalidProbability { name: "fraction", value: fraction });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub round: usize,
    pub direction: MeasurementDirection,
    pub outcome: Outcome,
}

/// Everything Eve learned during an attack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EveView {
    pub observed: Vec<Observation>,
    /// Key Eve shares with Alice, if her session with Alice completed.
    pub k_ae: Option<BitString>,
    /// Key Eve shares with Bob, if her session with Bob completed.
    pub k_eb: Option<BitString>,
}

/// Measures `qubit` along a policy-chosen direction and replaces it with the
/// eigenstate of the observed outcome.
pub fn intercept_resend<R: Rng + ?Sized>(
    state: &StateVector,
    qubit: usize,
    policy: EvePolicy,
    rng: &mut R,
) -> Result<(StateVector, MeasurementDirection, Outcome), QuantumError> {
    let dir = policy.draw(rng);
    let (outcome, collapsed) = state.measure_spin(qubit, dir, rng)?;
    let resent = collapsed.replace_qubit(qubit, dir.eigenvector(outcome), rng)?;
    Ok((resent, dir, outcome))
}

/// Per-qubit attack hook installed on a quantum channel.
#[derive(Debug)]
pub struct Interceptor {
    fraction: f64,
    policy: EvePolicy,
    rng: SimRng,
    view: EveView,
}

impl Interceptor {
    pub fn from_strategy(strategy: &AttackStrategy, rng: SimRng) -> Option<Self> {
        match *strategy {
            AttackStrategy::InterceptResend { fraction, policy } => {
                Some(Self { fraction, policy, rng, view: EveView::default() })
            }
            AttackStrategy::None | AttackStrategy::MitmImpersonation { .. } => None,
        }
    }

    pub fn on_qubit(&mut self, state: StateVector, qubit: usize, round: usize) -> Result<StateVector, QuantumError> {
        let u: f64 = self.rng.random();
        if u >= self.fraction {
            return Ok(state);
        }
        let (resent, direction, outcome) = intercept_resend(&state, qubit, self.policy, &mut self.rng)?;
        self.view.observed.push(Observation { round, direction, outcome });
        Ok(resent)
    }

    pub fn view(&self) -> &EveView {
        &self.view
    }

    pub fn into_view(self) -> EveView {
        self.view
    }
}

#[derive(Debug, Clone)]
pub struct MitmOutcome {
    pub eve: EveView,
    /// Session between Alice and Eve posing as Bob.
    pub alice_side: SessionReport,
    /// Session between Eve posing as Alice and Bob.
    pub bob_side: SessionReport,
}

/// Eve runs an honest EPR session with each party in turn.
pub fn mitm_epr(config: &EprConfig, channel: &QuantumChannelConfig, seed: u64) -> Result<MitmOutcome, ProtocolError> {
    let tree = SeedTree::new(seed);
    let alice_side = run_epr(config, channel, tree.child(1).master())?;
    let bob_side = run_epr(config, channel, tree.child(2).master())?;
    let eve = EveView {
        observed: Vec::new(),
        k_ae: (!alice_side.aborted).then(|| alice_side.final_key_bob.clone()),
        k_eb: (!bob_side.aborted).then(|| bob_side.final_key_alice.clone()),
    };
    Ok(MitmOutcome { eve, alice_side, bob_side })
}

/// Eve impersonates each party using a guessed authentication key of the
/// right length. Both real keys are consumed.
pub fn mitm_auth(
    config: &AuthSessionConfig,
    k1_alice: &mut AuthKey,
    k1_bob: &mut AuthKey,
    channel: &QuantumChannelConfig,
    seed: u64,
) -> Result<MitmOutcome, ProtocolError> {
    let tree = SeedTree::new(seed);
    let mut eve_rng = tree.stream(Stream::Eve);
    let mut guess = |len: usize| AuthKey::new((0..len).map(|_| eve_rng.random::<bool>()).collect());
    let mut as_bob = guess(k1_alice.len());
    let mut as_alice = guess(k1_bob.len());

    let alice_side =
        run_auth_session_scripted(config, k1_alice, &mut as_bob, channel, tree.child(1).master(), &Script::default())?;
    let script = Script { alice_ignores_verification: true, ..Script::default() };
    let bob_side = run_auth_session_scripted(config, &mut as_alice, k1_bob, channel, tree.child(2).master(), &script)?;
    let eve = EveView {
        observed: Vec::new(),
        k_ae: (!alice_side.report.aborted).then(|| alice_side.report.final_key_bob.clone()),
        k_eb: (!bob_side.report.aborted).then(|| bob_side.report.final_key_alice.clone()),
    };
    Ok(MitmOutcome { eve, alice_side: alice_side.report, bob_side: bob_side.report })
}

/// Replays Bob's authentication positions and ciphertext from a recorded
/// session against a new session with Alice.
pub fn replay_auth(
    config: &AuthSessionConfig,
    recorded: &Transcript,
    k1_alice: &mut AuthKey,
    channel: &QuantumChannelConfig,
    seed: u64,
) -> Result<SessionReport, ProtocolError> {
    let positions = recorded
        .find(MessageTag::AuthPositions)
        .next()
        .ok_or(ProtocolError::MissingMessage(MessageTag::AuthPositions))?;
    let ciphertext = recorded
        .find(MessageTag::AuthCiphertext)
        .next()
        .ok_or(ProtocolError::MissingMessage(MessageTag::AuthCiphertext))?;
    let positions = PayloadReader::new(&positions.payload).positions()?;
    let ciphertext = PayloadReader::new(&ciphertext.payload).bits()?;

    let mut rng = SeedTree::new(seed).stream(Stream::Eve);
    let mut eve_key = AuthKey::new((0..k1_alice.len()).map(|_| rng.random::<bool>()).collect());
    let script = Script { bob_replay: Some((positions, ciphertext)), ..Script::default() };
    Ok(run_auth_session_scripted(config, k1_alice, &mut eve_key, channel, seed, &script)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::make_singlet;
    use rand::SeedableRng;

    #[test]
    fn conjugate_policy_draws_both_bases() {
        let mut rng = SimRng::seed_from_u64(5);
        let diag =
            (0..10_000).filter(|_| EvePolicy::RandomConjugate.draw(&mut rng) == MeasurementDirection::DIAGONAL).count();
        assert!((diag as f64 / 10_000.0 - 0.5).abs() < 0.02);
        let angles: Vec<f64> = (0..1000).map(|_| EvePolicy::RandomAngle.draw(&mut rng).angle()).collect();
        assert!(angles.iter().all(|&a| (0.0..PI).contains(&a)));
    }

    #[test]
    fn resent_qubit_is_eigenstate_of_eve_outcome() {
        let mut rng = SimRng::seed_from_u64(6);
        let sent = StateVector::eigenstate(MeasurementDirection::DIAGONAL, Outcome::Minus);
        for _ in 0..50 {
            let (resent, dir, outcome) = intercept_resend(&sent, 0, EvePolicy::RandomAngle, &mut rng).unwrap();
            let p = resent.born_probability(0, dir, outcome).unwrap();
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn intercepting_half_of_a_singlet_breaks_correlation_in_other_basis() {
        // Eve measures ⊘ on Bob's qubit; Alice and Bob then measure ⊙.
        // Their outcomes become independent, so E(⊙,⊙) → 0.
        let mut rng = SimRng::seed_from_u64(7);
        let n = 10_000;
        let mut sum = 0i64;
        for _ in 0..n {
            let s = make_singlet();
            let (o, collapsed) = s.measure_spin(1, MeasurementDirection::RECTILINEAR, &mut rng).unwrap();
            let s = collapsed.replace_qubit(1, MeasurementDirection::RECTILINEAR.eigenvector(o), &mut rng).unwrap();
            let (a, s) = s.measure_spin(0, MeasurementDirection::DIAGONAL, &mut rng).unwrap();
            let (b, _) = s.measure_spin(1, MeasurementDirection::DIAGONAL, &mut rng).unwrap();
            sum += (a.value() * b.value()) as i64;
        }
        let e = sum as f64 / n as f64;
        assert!(e.abs() < 0.04, "e = {e}");
    }

    #[test]
    fn zero_fraction_never_intercepts() {
        let strategy = AttackStrategy::InterceptResend { fraction: 0.0, policy: EvePolicy::RandomConjugate };
        let mut eve = Interceptor::from_strategy(&strategy, SimRng::seed_from_u64(8)).unwrap();
        for r in 0..100 {
            let s = make_singlet();
            assert_eq!(eve.on_qubit(s.clone(), 1, r).unwrap(), s);
        }
        assert!(eve.view().observed.is_empty());
        assert!(AttackStrategy::InterceptResend { fraction: 1.5, policy: EvePolicy::RandomAngle }.validate().is_err());
    }

    #[test]
    fn strategy_serde_shape() {
        let s = AttackStrategy::InterceptResend { fraction: 1.0, policy: EvePolicy::RandomConjugate };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"intercept_resend","fraction":1.0,"policy":"random_conjugate"}"#);
    }
}
