//! Round-by-round protocol sessions.
//!
//! A [`Session`] owns the persistent carrier (plus Eve's ancilla when she has
//! one) and walks each round through a fixed sequence of phases:
//!
//! ```text
//! Ready -> alice_entangle -> transmit -> receivers_disentangle
//!       -> measure_and_reconstruct -> refresh_carrier -> Ready
//! ```
//!
//! Round `k` carries message bit `k`. Odd rounds use the GHZ carrier with a
//! product encoding; even rounds the even-parity carrier with a parity
//! encoding. Data wires exist only within a round.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    cheat_declaration, install_entangling_attack, intercept_resend, AttackSpec, CheatSpec, EveLedger,
};
use crate::analysis::MAX_ANCILLA_DIM;
use crate::carriers::{
    carrier_fidelity, ghz, switch_carrier, CarrierKind, DataEncoding, ANCILLA_WIRE, CARRIER_WIRES, DATA_WIRES,
};
use crate::qsim::{PureState, QsimError, RegisterLayout};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("`{op}` called in phase {phase:?}")]
    Phase { op: &'static str, phase: Phase },
    #[error("data wires are already present")]
    DataWiresPresent,
    #[error("ancilla dimension {0} outside 1..=64")]
    AncillaDim(usize),
    #[error("attack ancilla dimension {spec} does not match session ancilla dimension {session}")]
    AncillaMismatch { session: usize, spec: usize },
    #[error("message is empty")]
    EmptyMessage,
    #[error("message contains a non-bit value {0}")]
    NotABit(u8),
    #[error("invalid detection policy: {0}")]
    Policy(String),
    #[error("noise probability {0} outside [0, 0.5]")]
    Noise(f64),
    #[error("invalid attack: {0}")]
    Attack(String),
    #[error(transparent)]
    State(#[from] QsimError),
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Receiver {
    Bob,
    Charlie,
}

impl Receiver {
    pub fn as_str(self) -> &'static str {
        match self {
            Receiver::Bob => "bob",
            Receiver::Charlie => "charlie",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundParity {
    Odd,
    Even,
}

impl RoundParity {
    pub fn of(round: u64) -> Self {
        if round % 2 == 1 {
            RoundParity::Odd
        } else {
            RoundParity::Even
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoundParity::Odd => "odd",
            RoundParity::Even => "even",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ready,
    Entangled,
    Transmitted,
    Disentangled,
    Measured,
}

/// What the receivers end up with: both bits on odd rounds, the XOR
/// reconstruction on even rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstructed {
    Pair(u8, u8),
    Bit(u8),
}

impl std::fmt::Display for Reconstructed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reconstructed::Pair(b, c) => write!(f, "{b}{c}"),
            Reconstructed::Bit(q) => write!(f, "{q}"),
        }
    }
}

/// Transcript entry for one round.
///
/// On even rounds the announcing receiver's field holds the declared bit, so
/// `bob_bit XOR charlie_bit` is always the reconstruction. The raw measurement
/// is kept in `measured`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub parity: RoundParity,
    pub sent: u8,
    pub bob_bit: u8,
    pub charlie_bit: u8,
    pub announced: Option<(Receiver, u8)>,
    pub reconstructed: Reconstructed,
    pub error: bool,
    /// Fidelity of the carrier with the expected |G⟩/|E⟩ at round start.
    pub carrier_fidelity: f64,
    /// Bits actually measured on (w1, w2).
    pub measured: (u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionPolicy {
    pub sample_fraction: f64,
    pub abort_threshold: f64,
    pub min_samples: usize,
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        Self { sample_fraction: 0.2, abort_threshold: 0.05, min_samples: 50 }
    }
}

impl DetectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(ProtocolError::Policy(format!("sample fraction {} outside (0, 1]", self.sample_fraction)));
        }
        if !(self.abort_threshold > 0.0 && self.abort_threshold < 1.0) {
            return Err(ProtocolError::Policy(format!("abort threshold {} outside (0, 1)", self.abort_threshold)));
        }
        if self.min_samples == 0 {
            return Err(ProtocolError::Policy("min_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Session-level settings that are not part of the attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    /// Who announces on even rounds. A cheating receiver always announces.
    pub announcer: Receiver,
    /// Independent bit-flip probability on each flying data wire.
    pub noise_p: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { announcer: Receiver::Bob, noise_p: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub message_len: usize,
    pub attack: AttackSpec,
    pub policy: DetectionPolicy,
    pub announcer: Receiver,
    pub noise_p: f64,
    pub ancilla_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveSummary {
    pub observations: usize,
    pub mutual_information_bits: Option<f64>,
    pub branch_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub qber_odd: f64,
    pub qber_even: f64,
    pub qber_total: f64,
    /// Fraction of even rounds whose measured bits have the wrong parity,
    /// before any announcement.
    pub receiver_disagreement_even: f64,
    pub detected: bool,
    pub rounds: usize,
    pub config_echo: ConfigEcho,
    pub seed: u64,
    pub eve: EveSummary,
}

/// Result of [`run_session`]: the report together with its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub report: SessionReport,
    pub transcript: Vec<RoundRecord>,
    pub ledger: EveLedger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    sent: u8,
    carrier_fidelity: f64,
}

pub struct Session {
    state: PureState,
    round: u64,
    expected: CarrierKind,
    phase: Phase,
    rng: SimRng,
    seed: u64,
    ancilla_dim: usize,
    options: SessionOptions,
    pending: Option<Pending>,
    transcript: Vec<RoundRecord>,
    ledger: EveLedger,
}

impl Session {
    /// Starts at round 1 with |G⟩ on the carrier and, for `ancilla_dim > 1`,
    /// Eve's ancilla in |0⟩.
    pub fn new(seed: u64, ancilla_dim: usize) -> Result<Self> {
        Self::with_options(seed, ancilla_dim, SessionOptions::default())
    }

    pub fn with_options(seed: u64, ancilla_dim: usize, options: SessionOptions) -> Result<Self> {
        if ancilla_dim == 0 || ancilla_dim > MAX_ANCILLA_DIM {
            return Err(ProtocolError::AncillaDim(ancilla_dim));
        }
        if !(0.0..=0.5).contains(&options.noise_p) {
            return Err(ProtocolError::Noise(options.noise_p));
        }
        let mut state = ghz();
        if ancilla_dim > 1 {
            let e = PureState::basis(RegisterLayout::new([(ANCILLA_WIRE, ancilla_dim)])?, &[0])?;
            state = state.tensor(&e)?;
        }
        Ok(Self {
            state,
            round: 1,
            expected: CarrierKind::Ghz,
            phase: Phase::Ready,
            rng: seeded(seed),
            seed,
            ancilla_dim,
            options,
            pending: None,
            transcript: Vec::new(),
            ledger: EveLedger::default(),
        })
    }

    pub fn state(&self) -> &PureState {
        &self.state
    }

    pub fn round_index(&self) -> u64 {
        self.round
    }

    pub fn parity(&self) -> RoundParity {
        RoundParity::of(self.round)
    }

    pub fn expected_carrier(&self) -> CarrierKind {
        self.expected
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn transcript(&self) -> &[RoundRecord] {
        &self.transcript
    }

    pub fn ledger(&self) -> &EveLedger {
        &self.ledger
    }

    pub(crate) fn ledger_mut(&mut self) -> &mut EveLedger {
        &mut self.ledger
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Draws `n` message bits from the session stream.
    pub fn random_bits(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| u8::from(self.rng.random_bool(0.5))).collect()
    }

    fn expect_phase(&self, op: &'static str, allowed: &[Phase]) -> Result<()> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(ProtocolError::Phase { op, phase: self.phase })
        }
    }

    fn canonical_order(&self) -> Vec<&'static str> {
        let mut order: Vec<&'static str> = CARRIER_WIRES.to_vec();
        order.extend(DATA_WIRES);
        if self.ancilla_dim > 1 {
            order.push(ANCILLA_WIRE);
        }
        order
    }

    /// Swaps in a new carrier(+ancilla) state between rounds.
    pub(crate) fn replace_carrier(&mut self, state: PureState) -> Result<()> {
        self.expect_phase("replace_carrier", &[Phase::Ready])?;
        if state.layout() != self.state.layout() {
            return Err(QsimError::DimensionMismatch { left: self.state.dim(), right: state.dim() }.into());
        }
        self.state = state;
        Ok(())
    }

    /// Adjoins the round's data wires and entangles them with Alice's carrier
    /// qubit: C_a1 C_a2 on odd rounds, C_a1 alone on even rounds.
    pub fn alice_entangle(&mut self, q: u8) -> Result<()> {
        if q > 1 {
            return Err(ProtocolError::NotABit(q));
        }
        if self.state.layout().contains(DATA_WIRES[0]) || self.state.layout().contains(DATA_WIRES[1]) {
            return Err(ProtocolError::DataWiresPresent);
        }
        self.expect_phase("alice_entangle", &[Phase::Ready])?;
        let fidelity = carrier_fidelity(&self.state, self.expected)?;
        let data = DataEncoding::for_round(self.round, q).state();
        let order = self.canonical_order();
        let mut s = self.state.tensor(&data)?.reorder(&order)?;
        s = s.apply_cnot("a", "w1")?;
        if self.parity() == RoundParity::Odd {
            s = s.apply_cnot("a", "w2")?;
        }
        self.state = s;
        self.pending = Some(Pending { sent: q, carrier_fidelity: fidelity });
        self.phase = Phase::Entangled;
        Ok(())
    }

    /// Sends the data wires through the channel, applying `attack`'s channel
    /// action and then honest bit-flip noise if configured.
    pub fn transmit(&mut self, attack: &AttackSpec) -> Result<()> {
        self.expect_phase("transmit", &[Phase::Entangled])?;
        if let AttackSpec::InterceptResend { rounds, wires } = attack {
            if rounds.includes(self.round) {
                let (post, bits) = intercept_resend(&self.state, *wires, &mut self.rng)?;
                self.state = post;
                let sent = self.pending.map(|p| p.sent).unwrap_or(0);
                self.ledger.record(self.round, sent, &bits);
            }
        }
        if self.options.noise_p > 0.0 {
            for w in DATA_WIRES {
                if self.rng.random_bool(self.options.noise_p) {
                    self.state = self.state.apply_x(w)?;
                }
            }
        }
        self.phase = Phase::Transmitted;
        Ok(())
    }

    /// Bob applies C_b1 and Charlie C_c2.
    pub fn receivers_disentangle(&mut self) -> Result<()> {
        self.expect_phase("receivers_disentangle", &[Phase::Transmitted])?;
        self.state = self.state.apply_cnot("b", "w1")?.apply_cnot("c", "w2")?;
        self.phase = Phase::Disentangled;
        Ok(())
    }

    /// Measures both data wires, performs the announcement on even rounds,
    /// records the round and discards the data wires.
    pub fn measure_and_reconstruct(&mut self, cheat: Option<&CheatSpec>) -> Result<RoundRecord> {
        self.expect_phase("measure_and_reconstruct", &[Phase::Disentangled])?;
        let pending = self.pending.take().expect("pending round after entangling");
        let outcome = self.state.measure(&DATA_WIRES, &mut self.rng)?;
        let (_, carrier) = outcome.post_state.discard_basis_wires(&DATA_WIRES)?;
        self.state = carrier;
        let (x, y) = (outcome.bits[0], outcome.bits[1]);
        let q = pending.sent;

        let record = match self.parity() {
            RoundParity::Odd => RoundRecord {
                round: self.round,
                parity: RoundParity::Odd,
                sent: q,
                bob_bit: x,
                charlie_bit: y,
                announced: None,
                reconstructed: Reconstructed::Pair(x, y),
                error: (x, y) != (q, q),
                carrier_fidelity: pending.carrier_fidelity,
                measured: (x, y),
            },
            RoundParity::Even => {
                let announcer = cheat.map_or(self.options.announcer, |c| c.who);
                let (own, other) = match announcer {
                    Receiver::Bob => (x, y),
                    Receiver::Charlie => (y, x),
                };
                let declared = match cheat {
                    Some(c) => cheat_declaration(own, c, &mut self.rng),
                    None => own,
                };
                let bit = declared ^ other;
                let (bob_bit, charlie_bit) = match announcer {
                    Receiver::Bob => (declared, y),
                    Receiver::Charlie => (x, declared),
                };
                RoundRecord {
                    round: self.round,
                    parity: RoundParity::Even,
                    sent: q,
                    bob_bit,
                    charlie_bit,
                    announced: Some((announcer, declared)),
                    reconstructed: Reconstructed::Bit(bit),
                    error: bit != q,
                    carrier_fidelity: pending.carrier_fidelity,
                    measured: (x, y),
                }
            }
        };
        self.transcript.push(record.clone());
        self.phase = Phase::Measured;
        Ok(record)
    }

    /// Every party applies H to their carrier qubit, which takes |G⟩ to |E⟩
    /// and back; the round counter advances.
    pub fn refresh_carrier(&mut self) -> Result<()> {
        self.expect_phase("refresh_carrier", &[Phase::Measured, Phase::Ready])?;
        self.state = switch_carrier(&self.state)?;
        self.round += 1;
        self.expected = self.expected.toggled();
        self.phase = Phase::Ready;
        Ok(())
    }

    /// Runs one round per message bit and returns the report.
    pub fn run(&mut self, message: &[u8], attack: &AttackSpec, policy: &DetectionPolicy) -> Result<SessionReport> {
        if message.is_empty() {
            return Err(ProtocolError::EmptyMessage);
        }
        if let Some(&bad) = message.iter().find(|&&b| b > 1) {
            return Err(ProtocolError::NotABit(bad));
        }
        policy.validate()?;
        if attack.ancilla_dim() != self.ancilla_dim {
            return Err(ProtocolError::AncillaMismatch { session: self.ancilla_dim, spec: attack.ancilla_dim() });
        }
        for (k, &q) in message.iter().enumerate() {
            if let AttackSpec::Entangling { spec, refresh_each_round } = attack {
                if k == 0 || *refresh_each_round {
                    install_entangling_attack(self, spec)?;
                }
            }
            self.alice_entangle(q)?;
            self.transmit(attack)?;
            self.receivers_disentangle()?;
            self.measure_and_reconstruct(attack.cheat())?;
            self.refresh_carrier()?;
        }
        let detected = detect(&self.transcript, policy, &mut self.rng);
        Ok(self.report(attack, policy, detected))
    }

    fn report(&self, attack: &AttackSpec, policy: &DetectionPolicy, detected: bool) -> SessionReport {
        let t = &self.transcript;
        let rate = |it: &mut dyn Iterator<Item = bool>| {
            let (n, k) = it.fold((0usize, 0usize), |(n, k), e| (n + 1, k + usize::from(e)));
            if n == 0 {
                0.0
            } else {
                k as f64 / n as f64
            }
        };
        let odd = |r: &&RoundRecord| r.parity == RoundParity::Odd;
        let even = |r: &&RoundRecord| r.parity == RoundParity::Even;
        SessionReport {
            qber_odd: rate(&mut t.iter().filter(odd).map(|r| r.error)),
            qber_even: rate(&mut t.iter().filter(even).map(|r| r.error)),
            qber_total: rate(&mut t.iter().map(|r| r.error)),
            receiver_disagreement_even: rate(
                &mut t.iter().filter(even).map(|r| (r.measured.0 ^ r.measured.1) != r.sent),
            ),
            detected,
            rounds: t.len(),
            config_echo: ConfigEcho {
                message_len: t.len(),
                attack: attack.clone(),
                policy: *policy,
                announcer: attack.cheat().map_or(self.options.announcer, |c| c.who),
                noise_p: self.options.noise_p,
                ancilla_dim: self.ancilla_dim,
            },
            seed: self.seed,
            eve: EveSummary {
                observations: self.ledger.observations.len(),
                mutual_information_bits: self.ledger.mutual_information(),
                branch_overlap: self.ledger.branch_overlap,
            },
        }
    }
}

/// Compares a uniformly sampled subsequence of the transcript with Alice's
/// bits. Fires when the sample holds at least `min_samples` rounds and its
/// error rate exceeds the abort threshold.
pub fn detect<R: Rng + ?Sized>(transcript: &[RoundRecord], policy: &DetectionPolicy, rng: &mut R) -> bool {
    let n = transcript.len();
    let k = ((policy.sample_fraction * n as f64).ceil() as usize).min(n);
    if k < policy.min_samples || k == 0 {
        return false;
    }
    let errors = index::sample(rng, n, k).iter().filter(|&i| transcript[i].error).count();
    errors as f64 / k as f64 > policy.abort_threshold
}

pub fn run_session(message: &[u8], attack: &AttackSpec, policy: &DetectionPolicy, seed: u64) -> Result<SessionRun> {
    run_session_with(message, attack, policy, SessionOptions::default(), seed)
}

pub fn run_session_with(
    message: &[u8],
    attack: &AttackSpec,
    policy: &DetectionPolicy,
    options: SessionOptions,
    seed: u64,
) -> Result<SessionRun> {
    let mut session = Session::with_options(seed, attack.ancilla_dim(), options)?;
    let report = session.run(message, attack, policy)?;
    Ok(SessionRun { report, transcript: session.transcript, ledger: session.ledger })
}

/// Like [`run_session_with`], with `n` message bits drawn from the session's
/// own stream before the first round.
pub fn run_random_session(
    n: usize,
    attack: &AttackSpec,
    policy: &DetectionPolicy,
    options: SessionOptions,
    seed: u64,
) -> Result<(Vec<u8>, SessionRun)> {
    let mut session = Session::with_options(seed, attack.ancilla_dim(), options)?;
    let message = session.random_bits(n);
    let report = session.run(&message, attack, policy)?;
    Ok((message, SessionRun { report, transcript: session.transcript, ledger: session.ledger }))
}
