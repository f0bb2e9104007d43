use std::path::Path;

use qkdsim::adversary::{AttackStrategy, EvePolicy};
use qkdsim::channel::QuantumChannelConfig;
use qkdsim::postprocess::BlockLengthRule;
use qkdsim::protocols::auth::{AuthInitConfig, AuthSessionConfig};
use qkdsim::protocols::bb84::Bb84Config;
use qkdsim::protocols::epr::EprConfig;
use qkdsim::protocols::{BasisConvention, PipelineParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Bb84,
    Epr,
    AuthInit,
    AuthSession,
    MitmDemo,
}

impl Protocol {
    fn min_rounds(self) -> usize {
        match self {
            Protocol::Bb84 | Protocol::Epr | Protocol::MitmDemo => 64,
            Protocol::AuthInit | Protocol::AuthSession => 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    InterceptResend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLink {
    #[default]
    Alice,
    Bob,
}

/// Summary statistics an experiment can declare a tolerance on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    QberMean,
    EstimatedQberMean,
    AbsSMean,
    SMean,
    KeyMatchRate,
    MutualVerificationRate,
    AbortRate,
    FinalLenMean,
    EveSuccessRate,
    ImpostorRejectionRate,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::QberMean => "qber_mean",
            Metric::EstimatedQberMean => "estimated_qber_mean",
            Metric::AbsSMean => "abs_s_mean",
            Metric::SMean => "s_mean",
            Metric::KeyMatchRate => "key_match_rate",
            Metric::MutualVerificationRate => "mutual_verification_rate",
            Metric::AbortRate => "abort_rate",
            Metric::FinalLenMean => "final_len_mean",
            Metric::EveSuccessRate => "eve_success_rate",
            Metric::ImpostorRejectionRate => "impostor_rejection_rate",
        }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn init_rounds() -> usize {
    1024
}
fn check_rounds() -> usize {
    64
}
fn threshold() -> f64 {
    qkdsim::bell::DEFAULT_THRESHOLD
}
fn auth_fraction() -> f64 {
    0.25
}
fn default_r_max() -> f64 {
    PipelineParams::default().r_max
}
fn default_sample_fraction() -> f64 {
    PipelineParams::default().sample_fraction
}
fn default_security_s() -> usize {
    PipelineParams::default().security_s
}
fn default_passes() -> usize {
    PipelineParams::default().passes
}
fn default_stage2_rounds() -> usize {
    PipelineParams::default().stage2_rounds
}
fn policy() -> EvePolicy {
    EvePolicy::RandomConjugate
}

/// One experiment, read from a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub num_rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub transcripts: bool,

    #[serde(default)]
    pub loss_probability: f64,
    #[serde(default)]
    pub depolarize_probability: f64,
    #[serde(default)]
    pub attack: AttackKind,
    #[serde(default = "one_f")]
    pub attack_fraction: f64,
    #[serde(default = "policy")]
    pub attack_policy: EvePolicy,
    #[serde(default)]
    pub attack_link: AttackLink,

    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_sample_fraction")]
    pub sample_fraction: f64,
    #[serde(default = "default_security_s")]
    pub security_s: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default = "default_stage2_rounds")]
    pub stage2_rounds: usize,
    /// Fixed stage-1 block length; absent selects the error-rate heuristic.
    #[serde(default)]
    pub block_length: Option<usize>,

    #[serde(default = "one_f")]
    pub bell_sample_fraction: f64,
    #[serde(default = "threshold")]
    pub bell_threshold: f64,
    #[serde(default = "init_rounds")]
    pub init_rounds: usize,
    #[serde(default = "check_rounds")]
    pub check_rounds: usize,
    #[serde(default = "auth_fraction")]
    pub auth_fraction: f64,
    #[serde(default)]
    pub basis_convention: BasisConvention,

    #[serde(default)]
    pub expect_metric: Option<Metric>,
    #[serde(default)]
    pub expect_min: Option<f64>,
    #[serde(default)]
    pub expect_max: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let config: Self = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1".into());
        }
        let min = self.protocol.min_rounds();
        if self.num_rounds < min {
            return invalid(format!("num_rounds must be at least {min} for {:?}", self.protocol));
        }
        if self.protocol == Protocol::AuthSession && self.init_rounds < Protocol::AuthInit.min_rounds() {
            return invalid(format!("init_rounds must be at least {}", Protocol::AuthInit.min_rounds()));
        }
        if self.expect_metric.is_some() && self.expect_min.is_none() && self.expect_max.is_none() {
            return invalid("expect_metric needs expect_min or expect_max".into());
        }
        if self.expect_metric.is_none() && (self.expect_min.is_some() || self.expect_max.is_some()) {
            return invalid("expect_min/expect_max need expect_metric".into());
        }
        self.channel().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.bell_sample_fraction) {
            return invalid("bell_sample_fraction must lie in [0, 1]".into());
        }
        let root2 = std::f64::consts::SQRT_2;
        if !(self.bell_threshold > root2 && self.bell_threshold < 2.0 * root2) {
            return invalid("bell_threshold must lie in (√2, 2√2)".into());
        }
        if !(self.auth_fraction > 0.0 && self.auth_fraction <= 1.0) {
            return invalid("auth_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Git-style content hash: SHA-256 of `"blob <len>\0"` followed by the
    /// canonical JSON form of the resolved config.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(&body);
        hex::encode(h.finalize())
    }

    pub fn attack(&self) -> AttackStrategy {
        match self.attack {
            AttackKind::None => AttackStrategy::None,
            AttackKind::InterceptResend => {
                AttackStrategy::InterceptResend { fraction: self.attack_fraction, policy: self.attack_policy }
            }
        }
    }

    pub fn channel(&self) -> QuantumChannelConfig {
        QuantumChannelConfig {
            loss_probability: self.loss_probability,
            depolarize_probability: self.depolarize_probability,
            attack: self.attack(),
        }
    }

    pub fn honest_channel(&self) -> QuantumChannelConfig {
        QuantumChannelConfig { attack: AttackStrategy::None, ..self.channel() }
    }

    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            r_max: self.r_max,
            sample_fraction: self.sample_fraction,
            security_s: self.security_s,
            passes: self.passes,
            stage2_rounds: self.stage2_rounds,
            block_length: self.block_length.map_or(BlockLengthRule::Heuristic, BlockLengthRule::Fixed),
        }
    }

    pub fn bb84(&self) -> Bb84Config {
        Bb84Config { num_pulses: self.num_rounds, pipeline: self.pipeline() }
    }

    pub fn epr(&self) -> EprConfig {
        EprConfig {
            num_pairs: self.num_rounds,
            bell_sample_fraction: self.bell_sample_fraction,
            bell_threshold: self.bell_threshold,
            pipeline: self.pipeline(),
        }
    }

    pub fn auth_init(&self, rounds: usize) -> AuthInitConfig {
        AuthInitConfig { rounds, check_rounds: self.check_rounds, check_tolerance: None, pipeline: self.pipeline() }
    }

    pub fn auth_session(&self) -> AuthSessionConfig {
        AuthSessionConfig {
            rounds: self.num_rounds,
            auth_fraction: self.auth_fraction,
            bell_threshold: self.bell_threshold,
            bell_sample_fraction: self.bell_sample_fraction,
            convention: self.basis_convention,
            pipeline: self.pipeline(),
            ..AuthSessionConfig::default()
        }
    }
}
