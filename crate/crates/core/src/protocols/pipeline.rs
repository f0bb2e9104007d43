use serde::{Deserialize, Serialize};

use super::{AbortReason, ProtocolError, SessionReport};
use crate::bits::BitString;
use crate::channel::{MessageTag, PartyId, PayloadWriter};
use crate::postprocess::{
    estimate_error_rate, leak_budget, privacy_amplify, reconcile, BlockLengthRule, ErrorEstimate, KeyMaterial,
    KeyStage, ReconciliationParams, ToeplitzSeed,
};
use crate::rng::SimRng;

/// Classical post-processing parameters shared by every protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub r_max: f64,
    pub sample_fraction: f64,
    pub security_s: usize,
    pub passes: usize,
    pub stage2_rounds: usize,
    pub block_length: BlockLengthRule,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            r_max: 0.11,
            sample_fraction: 0.25,
            security_s: 10,
            passes: 2,
            stage2_rounds: 20,
            block_length: BlockLengthRule::Heuristic,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::InvalidConfig(m.to_string()));
        if !(0.0..=0.5).contains(&self.r_max) {
            return bad("r_max must lie in [0, 0.5]");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            return bad("sample_fraction must lie in (0, 1)");
        }
        if self.passes == 0 || self.stage2_rounds == 0 {
            return bad("passes and stage2_rounds must be positive");
        }
        if let BlockLengthRule::Fixed(0) = self.block_length {
            return bad("block length must be positive");
        }
        Ok(())
    }
}

/// Error estimation, reconciliation and privacy amplification on a sifted
/// key pair. Outcomes, including aborts, are written into `report`.
pub(crate) fn distill(
    report: &mut SessionReport,
    alice: &BitString,
    bob: &BitString,
    params: &PipelineParams,
    public: &mut SimRng,
) -> Result<(), ProtocolError> {
    report.sifted_len = alice.len();
    if alice.is_empty() {
        report.abort(PartyId::Alice, AbortReason::InsufficientKey);
        return Ok(());
    }
    report.sifted_qber = Some(alice.hamming_distance(bob) as f64 / alice.len() as f64);

    let estimate = estimate_error_rate(alice, bob, params.sample_fraction, params.r_max, public)?;
    let sampled = estimate.sampled().to_vec();
    let t = &mut report.transcript;
    t.post(PartyId::Alice, MessageTag::SampleRequest, PayloadWriter::new().positions(&sampled).finish());
    t.post(PartyId::Alice, MessageTag::SampleBits, PayloadWriter::new().bits(&alice.select(&sampled)).finish());
    t.post(PartyId::Bob, MessageTag::SampleBits, PayloadWriter::new().bits(&bob.select(&sampled)).finish());
    report.qber = Some(estimate.rate());
    let (rate, alice, bob) = match estimate {
        ErrorEstimate::Abort { rate, .. } => {
            report.abort(PartyId::Alice, AbortReason::ErrorRateExceeded { rate, r_max: params.r_max });
            return Ok(());
        }
        ErrorEstimate::Proceed { rate, alice, bob, .. } => (rate, alice, bob),
    };

    let recon_params = ReconciliationParams {
        block_length: params.block_length,
        error_rate: rate,
        passes: params.passes,
        stage2_rounds: params.stage2_rounds,
        ..ReconciliationParams::default()
    };
    let recon = reconcile(&alice, &bob, &recon_params, public)?;
    let parities: BitString = recon.disclosures.iter().map(|d| d.alice_parity).collect();
    let replies: BitString = recon.disclosures.iter().map(|d| d.agreed).collect();
    let t = &mut report.transcript;
    t.post(PartyId::Alice, MessageTag::PublicSeeds, PayloadWriter::new().u64s(&recon.public_seeds).finish());
    t.post(PartyId::Alice, MessageTag::Parity, PayloadWriter::new().bits(&parities).finish());
    t.post(PartyId::Bob, MessageTag::ParityReply, PayloadWriter::new().bits(&replies).finish());

    let n = recon.alice.len();
    report.reconciled_len = n;
    report.parity_bits_disclosed = recon.leaked_bits;
    report.uncompensated_leak = recon.uncompensated_leak();
    let t_budget = leak_budget(rate, n, recon.uncompensated_leak());
    report.leak_budget = t_budget;
    let s = params.security_s;
    if t_budget + s >= n {
        report.abort(PartyId::Alice, AbortReason::BudgetExceeded { t: t_budget, s, n });
        return Ok(());
    }

    let seed = ToeplitzSeed::random(n, n - t_budget - s, public);
    report.transcript.post(PartyId::Alice, MessageTag::ToeplitzSeed, PayloadWriter::new().bits(seed.bits()).finish());
    let amplify = |bits: BitString| {
        let key = KeyMaterial::new(bits, KeyStage::Reconciled);
        privacy_amplify(&key, t_budget, s, &seed)
    };
    report.final_key_alice = amplify(recon.alice)?.into_bits();
    report.final_key_bob = amplify(recon.bob)?.into_bits();
    Ok(())
}
