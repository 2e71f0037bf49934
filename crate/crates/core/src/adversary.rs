//! Attack models: intercept–resend on the flying data wires, Eve's entangling
//! attack on the carrier, and a receiver lying in the public announcement.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{distinguishability, EntanglingAttackSpec};
use crate::carriers::{switch_carrier, CarrierKind, DATA_WIRES};
use crate::protocol::{ProtocolError, Receiver, Session};
use crate::qsim::{PureState, Result as QsimResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AttackSpec {
    None,
    InterceptResend {
        #[serde(default)]
        rounds: InterceptRounds,
        #[serde(default)]
        wires: InterceptWires,
    },
    Entangling {
        spec: EntanglingAttackSpec,
        #[serde(default)]
        refresh_each_round: bool,
    },
    Cheat(CheatSpec),
}

impl AttackSpec {
    /// Intercept–resend on both data wires in every round.
    pub fn intercept_all() -> Self {
        AttackSpec::InterceptResend { rounds: InterceptRounds::All, wires: InterceptWires::Both }
    }

    pub fn ancilla_dim(&self) -> usize {
        match self {
            AttackSpec::Entangling { spec, .. } => spec.ancilla_dim(),
            _ => 1,
        }
    }

    pub fn cheat(&self) -> Option<&CheatSpec> {
        match self {
            AttackSpec::Cheat(c) => Some(c),
            _ => None,
        }
    }
}

/// Which rounds Eve intercepts. Serialized as `"all"` or a list of round numbers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RoundsRepr", into = "RoundsRepr")]
pub enum InterceptRounds {
    #[default]
    All,
    Only(BTreeSet<u64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RoundsRepr {
    Keyword(String),
    List(Vec<u64>),
}

impl TryFrom<RoundsRepr> for InterceptRounds {
    type Error = String;

    fn try_from(r: RoundsRepr) -> Result<Self, String> {
        match r {
            RoundsRepr::Keyword(k) if k == "all" => Ok(InterceptRounds::All),
            RoundsRepr::Keyword(k) => Err(format!("unknown round selector `{k}`")),
            RoundsRepr::List(v) if v.is_empty() => Err("empty round set".into()),
            RoundsRepr::List(v) => Ok(InterceptRounds::Only(v.into_iter().collect())),
        }
    }
}

impl From<InterceptRounds> for RoundsRepr {
    fn from(r: InterceptRounds) -> Self {
        match r {
            InterceptRounds::All => RoundsRepr::Keyword("all".into()),
            InterceptRounds::Only(s) => RoundsRepr::List(s.into_iter().collect()),
        }
    }
}

impl InterceptRounds {
    pub fn includes(&self, round: u64) -> bool {
        match self {
            InterceptRounds::All => true,
            InterceptRounds::Only(s) => s.contains(&round),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptWires {
    #[default]
    Both,
    W1,
    W2,
}

impl InterceptWires {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            InterceptWires::Both => &DATA_WIRES,
            InterceptWires::W1 => &DATA_WIRES[..1],
            InterceptWires::W2 => &DATA_WIRES[1..],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheatMode {
    /// Always declares the opposite of the measured bit.
    Flip,
    /// Declares a fair coin, independent of the measured bit.
    #[default]
    Random,
}

/// A receiver who lies about their measured bit in even-round announcements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheatSpec {
    #[serde(default = "default_cheater")]
    pub who: Receiver,
    #[serde(default)]
    pub mode: CheatMode,
}

fn default_cheater() -> Receiver {
    Receiver::Bob
}

impl CheatSpec {
    pub fn new(who: Receiver, mode: CheatMode) -> Self {
        Self { who, mode }
    }
}

/// Measures `wires` in the computational basis and hands the collapsed state
/// on, which is the same as resending fresh qubits prepared in the observed
/// basis state. Returns the post-state and Eve's observed bits.
pub fn intercept_resend<R: Rng + ?Sized>(
    state: &PureState,
    wires: InterceptWires,
    rng: &mut R,
) -> QsimResult<(PureState, Vec<u8>)> {
    let out = state.measure(wires.names(), rng)?;
    Ok((out.post_state, out.bits))
}

pub fn cheat_declaration<R: Rng + ?Sized>(true_bit: u8, spec: &CheatSpec, rng: &mut R) -> u8 {
    match spec.mode {
        CheatMode::Flip => true_bit ^ 1,
        CheatMode::Random => u8::from(rng.random_bool(0.5)),
    }
}

/// Replaces the carrier and ancilla with Eve's branch state for the current
/// round: `Σ_i |i⟩ ⊗ η_i` on odd rounds and its Hadamard image on even rounds,
/// which is what the honest refresh would turn the odd form into.
pub fn install_entangling_attack(session: &mut Session, spec: &EntanglingAttackSpec) -> Result<(), ProtocolError> {
    if spec.ancilla_dim() != session.ancilla_dim() {
        return Err(ProtocolError::AncillaMismatch { session: session.ancilla_dim(), spec: spec.ancilla_dim() });
    }
    let odd_form = spec.carrier_state().map_err(|e| ProtocolError::Attack(e.to_string()))?;
    let state = match session.expected_carrier() {
        CarrierKind::Ghz => odd_form,
        CarrierKind::EvenParity => switch_carrier(&odd_form)?,
    };
    session.replace_carrier(state)?;
    session.ledger_mut().branch_overlap = distinguishability(spec).ok().map(|d| 1.0 - d);
    Ok(())
}

/// One intercepted round as seen by Eve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub round: u64,
    pub sent: u8,
    /// Observed bits packed most significant first, tagged with how many wires.
    pub observed: u8,
    pub wires: u8,
}

/// What Eve has gathered over a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EveLedger {
    pub observations: Vec<Observation>,
    /// |⟨η̂_0|η̂_7⟩| of an installed entangling attack.
    pub branch_overlap: Option<f64>,
}

impl EveLedger {
    pub fn record(&mut self, round: u64, sent: u8, bits: &[u8]) {
        let observed = bits.iter().fold(0u8, |acc, &b| (acc << 1) | b);
        self.observations.push(Observation { round, sent, observed, wires: bits.len() as u8 });
    }

    /// Plug-in estimate, in bits, of the mutual information between Eve's
    /// observations and Alice's bits. `None` without observations.
    pub fn mutual_information(&self) -> Option<f64> {
        if self.observations.is_empty() {
            return None;
        }
        // Observation codes are < 4 per wire count; key by (wires, observed).
        let mut joint = [[0usize; 2]; 16];
        for o in &self.observations {
            let key = usize::from(o.wires) * 4 + usize::from(o.observed);
            joint[key][usize::from(o.sent)] += 1;
        }
        let n = self.observations.len() as f64;
        let ps = [0, 1].map(|s| joint.iter().map(|row| row[s]).sum::<usize>() as f64 / n);
        let mut mi = 0.0;
        for row in &joint {
            let po = (row[0] + row[1]) as f64 / n;
            for s in 0..2 {
                if row[s] > 0 {
                    let pj = row[s] as f64 / n;
                    mi += pj * (pj / (po * ps[s])).log2();
                }
            }
        }
        Some(mi.max(0.0))
    }
}
