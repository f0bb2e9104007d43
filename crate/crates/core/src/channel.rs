//! Quantum and classical channels.
//!
//! The quantum channel applies loss, depolarizing noise and an optional
//! interception hook to each transmitted qubit. The classical channel is an
//! append-only public transcript that every party, Eve included, can read.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AttackStrategy, Interceptor};
use crate::bits::BitString;
use crate::quantum::{random_plane_state, MeasurementDirection, QuantumError, StateVector};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("unknown sender id {0}")]
    UnknownSender(u8),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid transcript line: {0}")]
    BadLine(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyId {
    Alice,
    Bob,
    Center,
    Eve,
}

impl PartyId {
    pub fn code(self) -> u8 {
        match self {
            PartyId::Alice => 1,
            PartyId::Bob => 2,
            PartyId::Center => 3,
            PartyId::Eve => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ChannelError> {
        Ok(match code {
            1 => PartyId::Alice,
            2 => PartyId::Bob,
            3 => PartyId::Center,
            4 => PartyId::Eve,
            other => return Err(ChannelError::UnknownSender(other)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PartyId::Alice => "alice",
            PartyId::Bob => "bob",
            PartyId::Center => "center",
            PartyId::Eve => "eve",
        }
    }

    fn from_name(name: &str) -> Result<Self, ChannelError> {
        [PartyId::Alice, PartyId::Bob, PartyId::Center, PartyId::Eve]
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| ChannelError::BadLine(format!("sender {name:?}")))
    }
}

macro_rules! message_tags {
    ($($variant:ident = $code:literal, $name:literal;)*) => {
        /// Closed set of public-channel message types.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum MessageTag {
            $($variant,)*
        }

        impl MessageTag {
            pub fn code(self) -> u8 {
                match self {
                    $(MessageTag::$variant => $code,)*
                }
            }

            pub fn from_code(code: u8) -> Result<Self, ChannelError> {
                match code {
                    $($code => Ok(MessageTag::$variant),)*
                    other => Err(ChannelError::UnknownTag(other)),
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(MessageTag::$variant => $name,)*
                }
            }

            pub fn from_name(name: &str) -> Result<Self, ChannelError> {
                match name {
                    $($name => Ok(MessageTag::$variant),)*
                    _ => Err(ChannelError::BadLine(format!("tag {name:?}"))),
                }
            }
        }
    };
}

message_tags! {
    Register = 1, "register";
    Losses = 2, "losses";
    Bases = 3, "bases";
    SampleRequest = 4, "sample_request";
    SampleBits = 5, "sample_bits";
    PublicSeeds = 6, "public_seeds";
    Parity = 7, "parity";
    ParityReply = 8, "parity_reply";
    ToeplitzSeed = 9, "toeplitz_seed";
    BellRounds = 10, "bell_rounds";
    BellOutcomes = 11, "bell_outcomes";
    TotalSpin = 12, "total_spin";
    SpotCheck = 13, "spot_check";
    SpotCheckReply = 14, "spot_check_reply";
    KeyRounds = 15, "key_rounds";
    AuthPositions = 16, "auth_positions";
    AuthCiphertext = 17, "auth_ciphertext";
    AuthEcho = 18, "auth_echo";
    Verdict = 19, "verdict";
    Abort = 20, "abort";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassicalMessage {
    pub seq: u64,
    pub sender: PartyId,
    pub tag: MessageTag,
    pub payload: Vec<u8>,
}

impl ClassicalMessage {
    /// Wire form: `len:u32 | seq:u64 | sender:u8 | tag:u8 | payload`, big
    /// endian, where `len` counts everything after itself.
    pub fn encode(&self) -> Vec<u8> {
        let body_len = 8 + 1 + 1 + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.push(self.sender.code());
        out.push(self.tag.code());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one record, returning it and the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), ChannelError> {
        if bytes.len() < 4 {
            return Err(ChannelError::Malformed("short length prefix"));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if len < 10 || bytes.len() < 4 + len {
            return Err(ChannelError::Malformed("truncated record"));
        }
        let body = &bytes[4..4 + len];
        let seq = u64::from_be_bytes(body[..8].try_into().unwrap());
        let sender = PartyId::from_code(body[8])?;
        let tag = MessageTag::from_code(body[9])?;
        Ok((Self { seq, sender, tag, payload: body[10..].to_vec() }, 4 + len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumEventKind {
    Sent,
    Lost,
    Delivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantumEvent {
    pub round: usize,
    pub link: u8,
    pub kind: QuantumEventKind,
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    seq: u64,
    sender: String,
    tag: String,
    payload: String,
}

/// Append-only log of public messages plus the quantum send/lose/deliver
/// events of a session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    messages: Vec<ClassicalMessage>,
    quantum_events: Vec<QuantumEvent>,
}

/// Read position of one party in a transcript.
#[derive(Debug, Clone, Default)]
pub struct Reader {
    next: usize,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&mut self, sender: PartyId, tag: MessageTag, payload: Vec<u8>) -> &ClassicalMessage {
        let seq = self.messages.len() as u64;
        self.messages.push(ClassicalMessage { seq, sender, tag, payload });
        self.messages.last().unwrap()
    }

    pub fn read_next(&self, reader: &mut Reader) -> Option<&ClassicalMessage> {
        let msg = self.messages.get(reader.next)?;
        reader.next += 1;
        Some(msg)
    }

    pub fn messages(&self) -> &[ClassicalMessage] {
        &self.messages
    }

    pub fn quantum_events(&self) -> &[QuantumEvent] {
        &self.quantum_events
    }

    pub fn extend_quantum_events(&mut self, events: impl IntoIterator<Item = QuantumEvent>) {
        self.quantum_events.extend(events);
    }

    pub fn find(&self, tag: MessageTag) -> impl Iterator<Item = &ClassicalMessage> {
        self.messages.iter().filter(move |m| m.tag == tag)
    }

    /// Concatenated wire encoding of every message.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.messages.iter().flat_map(ClassicalMessage::encode).collect()
    }

    /// One JSON object per message with fields `seq, sender, tag, payload`
    /// in that order; the payload is lowercase hex.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let line = JsonLine {
                seq: m.seq,
                sender: m.sender.name().to_string(),
                tag: m.tag.name().to_string(),
                payload: m.payload.iter().fold(String::new(), |mut s, b| {
                    let _ = write!(s, "{b:02x}");
                    s
                }),
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ChannelError> {
        let mut t = Transcript::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let j: JsonLine = serde_json::from_str(line).map_err(|e| ChannelError::BadLine(e.to_string()))?;
            if !j.payload.len().is_multiple_of(2) {
                return Err(ChannelError::BadLine("odd hex length".into()));
            }
            let payload = (0..j.payload.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&j.payload[i..i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|e| ChannelError::BadLine(e.to_string()))?;
            let msg = ClassicalMessage {
                seq: j.seq,
                sender: PartyId::from_name(&j.sender)?,
                tag: MessageTag::from_name(&j.tag)?,
                payload,
            };
            if msg.seq != t.messages.len() as u64 {
                return Err(ChannelError::BadLine(format!("sequence gap at {}", msg.seq)));
            }
            t.messages.push(msg);
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------------------
// Payload encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.push(v);
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn bits(mut self, bits: &BitString) -> Self {
        self.buf.extend_from_slice(&(bits.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(&bits.to_bytes());
        self
    }

    pub fn positions(mut self, positions: &[usize]) -> Self {
        self.buf.extend_from_slice(&(positions.len() as u32).to_be_bytes());
        for &p in positions {
            self.buf.extend_from_slice(&(p as u32).to_be_bytes());
        }
        self
    }

    pub fn u64s(mut self, values: &[u64]) -> Self {
        self.buf.extend_from_slice(&(values.len() as u32).to_be_bytes());
        for &v in values {
            self.buf.extend_from_slice(&v.to_be_bytes());
        }
        self
    }

    pub fn directions(self, dirs: &[MeasurementDirection]) -> Self {
        let bits: Vec<u64> = dirs.iter().map(|d| d.angle().to_bits()).collect();
        self.u64s(&bits)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct PayloadReader<'a> {
    buf: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ChannelError> {
        if self.buf.len() < n {
            return Err(ChannelError::Malformed("payload ended early"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn len_prefix(&mut self) -> Result<usize, ChannelError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn u8(&mut self) -> Result<u8, ChannelError> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64, ChannelError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ChannelError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bits(&mut self) -> Result<BitString, ChannelError> {
        let len = self.len_prefix()?;
        let bytes = self.take(len.div_ceil(8))?;
        Ok(BitString::from_bytes(bytes, len))
    }

    pub fn positions(&mut self) -> Result<Vec<usize>, ChannelError> {
        let len = self.len_prefix()?;
        (0..len).map(|_| Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)).collect()
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>, ChannelError> {
        let len = self.len_prefix()?;
        (0..len).map(|_| self.u64()).collect()
    }

    pub fn directions(&mut self) -> Result<Vec<MeasurementDirection>, ChannelError> {
        Ok(self.u64s()?.into_iter().map(|b| MeasurementDirection::new(f64::from_bits(b))).collect())
    }
}

// ---------------------------------------------------------------------------
// Quantum channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumChannelConfig {
    pub loss_probability: f64,
    pub depolarize_probability: f64,
    pub attack: AttackStrategy,
}

impl Default for QuantumChannelConfig {
    fn default() -> Self {
        Self::ideal()
    }
}

impl QuantumChannelConfig {
    pub fn ideal() -> Self {
        Self { loss_probability: 0.0, depolarize_probability: 0.0, attack: AttackStrategy::None }
    }

    pub fn with_attack(attack: AttackStrategy) -> Self {
        Self { attack, ..Self::ideal() }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, value) in
            [("loss_probability", self.loss_probability), ("depolarize_probability", self.depolarize_probability)]
        {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError::InvalidProbability { name, value });
            }
        }
        self.attack.validate()
    }

    pub fn is_noiseless(&self) -> bool {
        self.depolarize_probability == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Delivered(StateVector),
    Lost,
}

/// One directed quantum link with its own random stream and attack hook.
#[derive(Debug)]
pub struct QuantumChannel {
    config: QuantumChannelConfig,
    link: u8,
    rng: SimRng,
    interceptor: Option<Interceptor>,
    events: Vec<QuantumEvent>,
}

impl QuantumChannel {
    pub fn new(config: QuantumChannelConfig, link: u8, rng: SimRng, eve_rng: SimRng) -> Result<Self, ChannelError> {
        config.validate()?;
        let interceptor = Interceptor::from_strategy(&config.attack, eve_rng);
        Ok(Self { config, link, rng, interceptor, events: Vec::new() })
    }

    pub fn config(&self) -> &QuantumChannelConfig {
        &self.config
    }

    /// Sends `qubit` of `state` through the channel.
    pub fn transmit(&mut self, state: StateVector, qubit: usize, round: usize) -> Result<Delivery, ChannelError> {
        use rand::Rng;
        self.log(round, QuantumEventKind::Sent);
        let lose: f64 = self.rng.random();
        let noise: f64 = self.rng.random();
        if lose < self.config.loss_probability {
            self.log(round, QuantumEventKind::Lost);
            return Ok(Delivery::Lost);
        }
        let mut state = state;
        if noise < self.config.depolarize_probability {
            let fresh = random_plane_state(&mut self.rng);
            state = state.replace_qubit(qubit, fresh, &mut self.rng)?;
        }
        if let Some(eve) = self.interceptor.as_mut() {
            state = eve.on_qubit(state, qubit, round)?;
        }
        self.log(round, QuantumEventKind::Delivered);
        Ok(Delivery::Delivered(state))
    }

    fn log(&mut self, round: usize, kind: QuantumEventKind) {
        self.events.push(QuantumEvent { round, link: self.link, kind });
    }

    pub fn events(&self) -> &[QuantumEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<QuantumEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn interceptor(&self) -> Option<&Interceptor> {
        self.interceptor.as_ref()
    }

    pub fn into_interceptor(self) -> Option<Interceptor> {
        self.interceptor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{make_singlet, Outcome};
    use crate::rng::{SeedTree, Stream};

    fn channel(config: QuantumChannelConfig, seed: u64) -> QuantumChannel {
        let t = SeedTree::new(seed);
        QuantumChannel::new(config, 0, t.stream(Stream::Channel), t.stream(Stream::Eve)).unwrap()
    }

    #[test]
    fn ideal_channel_is_identity() {
        let mut ch = channel(QuantumChannelConfig::ideal(), 1);
        for round in 0..100 {
            let s = make_singlet();
            assert_eq!(ch.transmit(s.clone(), 1, round).unwrap(), Delivery::Delivered(s));
        }
        assert_eq!(ch.events().len(), 200);
    }

    #[test]
    fn loss_rate_matches_configuration() {
        let cfg = QuantumChannelConfig { loss_probability: 0.1, ..QuantumChannelConfig::ideal() };
        let mut ch = channel(cfg, 2);
        let n = 10_000;
        let delivered =
            (0..n).filter(|&r| matches!(ch.transmit(make_singlet(), 1, r).unwrap(), Delivery::Delivered(_))).count();
        let frac = delivered as f64 / n as f64;
        // binomial oracle: σ = 0.003
        assert!((frac - 0.9).abs() <= 0.02, "frac = {frac}");
    }

    #[test]
    fn loss_events_are_independent_across_rounds() {
        // χ² test on consecutive (lost, lost) pairs against independence.
        let cfg = QuantumChannelConfig { loss_probability: 0.3, ..QuantumChannelConfig::ideal() };
        let mut ch = channel(cfg, 3);
        let lost: Vec<bool> =
            (0..10_000).map(|r| ch.transmit(make_singlet(), 1, r).unwrap() == Delivery::Lost).collect();
        let mut counts = [[0f64; 2]; 2];
        for w in lost.windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1.0;
        }
        let total: f64 = counts.iter().flatten().sum();
        let mut chi2 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let row: f64 = counts[i].iter().sum();
                let col: f64 = counts[0][j] + counts[1][j];
                let expected = row * col / total;
                chi2 += (counts[i][j] - expected).powi(2) / expected;
            }
        }
        // 1 degree of freedom, 99.9% quantile 10.83
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn full_depolarization_randomizes_readout() {
        let cfg = QuantumChannelConfig { depolarize_probability: 1.0, ..QuantumChannelConfig::ideal() };
        let mut ch = channel(cfg, 4);
        let mut rng = SeedTree::new(4).stream(Stream::Bob);
        let n = 10_000;
        let mut errors = 0;
        for r in 0..n {
            let sent = StateVector::eigenstate(MeasurementDirection::RECTILINEAR, Outcome::Plus);
            let Delivery::Delivered(s) = ch.transmit(sent, 0, r).unwrap() else { unreachable!() };
            let (o, _) = s.measure_spin(0, MeasurementDirection::RECTILINEAR, &mut rng).unwrap();
            errors += (o == Outcome::Minus) as usize;
        }
        let qber = errors as f64 / n as f64;
        assert!((qber - 0.5).abs() <= 0.03, "qber = {qber}");
    }

    #[test]
    fn message_round_trip_and_unknown_tag() {
        let mut t = Transcript::new();
        let payload = PayloadWriter::new().bits(&"1011".parse().unwrap()).positions(&[3, 9]).finish();
        let posted = t.post(PartyId::Bob, MessageTag::Bases, payload.clone()).clone();
        let mut reader = Reader::default();
        assert_eq!(t.read_next(&mut reader), Some(&posted));
        assert_eq!(t.read_next(&mut reader), None);

        let (decoded, used) = ClassicalMessage::decode(&posted.encode()).unwrap();
        assert_eq!(decoded, posted);
        assert_eq!(used, posted.encode().len());

        let mut bytes = posted.encode();
        bytes[13] = 0xEE;
        assert_eq!(ClassicalMessage::decode(&bytes).unwrap_err(), ChannelError::UnknownTag(0xEE));

        let mut r = PayloadReader::new(&decoded.payload);
        assert_eq!(r.bits().unwrap().to_string(), "1011");
        assert_eq!(r.positions().unwrap(), vec![3, 9]);
        assert!(r.u8().is_err());
    }

    #[test]
    fn jsonl_export_is_ordered_and_parses_back() {
        let mut t = Transcript::new();
        t.post(PartyId::Alice, MessageTag::Register, vec![1]);
        t.post(PartyId::Center, MessageTag::TotalSpin, vec![0xAB, 0x01]);
        let text = t.to_jsonl();
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"seq":0,"sender":"alice","tag":"register","payload":"01"}"#);
        assert_eq!(Transcript::from_jsonl(&text).unwrap().messages(), t.messages());
        assert!(Transcript::from_jsonl(r#"{"seq":0,"sender":"alice","tag":"nope","payload":""}"#).is_err());
    }

    #[test]
    fn invalid_probability_rejected() {
        let cfg = QuantumChannelConfig { loss_probability: 1.5, ..QuantumChannelConfig::ideal() };
        assert!(matches!(cfg.validate(), Err(ChannelError::InvalidProbability { .. })));
    }
}
