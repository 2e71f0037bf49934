//! The protocol's special states and the Hadamard carrier switch.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::qsim::{Gate1, PureState, RegisterLayout, Result, FRAC_1_SQRT_2};

/// Carrier wires held by Alice, Bob and Charlie.
pub const CARRIER_WIRES: [&str; 3] = ["a", "b", "c"];
/// Flying data wires; Bob holds `w1`, Charlie holds `w2`.
pub const DATA_WIRES: [&str; 2] = ["w1", "w2"];
/// Eve's ancilla.
pub const ANCILLA_WIRE: &str = "e";

pub const DEFAULT_CLASSIFY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierKind {
    Ghz,
    EvenParity,
}

impl CarrierKind {
    /// GHZ on odd rounds, even-parity on even rounds (rounds count from 1).
    pub fn for_round(round: u64) -> Self {
        if round % 2 == 1 {
            CarrierKind::Ghz
        } else {
            CarrierKind::EvenParity
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            CarrierKind::Ghz => CarrierKind::EvenParity,
            CarrierKind::EvenParity => CarrierKind::Ghz,
        }
    }

    pub fn reference(self) -> PureState {
        match self {
            CarrierKind::Ghz => ghz(),
            CarrierKind::EvenParity => even_parity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarrierStatus {
    Intact(CarrierKind),
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    Product,
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataEncoding {
    pub mode: EncodingMode,
    pub bit: u8,
}

impl DataEncoding {
    /// Product encoding on odd rounds, parity encoding on even rounds.
    pub fn for_round(round: u64, bit: u8) -> Self {
        let mode = if round % 2 == 1 { EncodingMode::Product } else { EncodingMode::Parity };
        Self { mode, bit }
    }

    pub fn state(&self) -> PureState {
        match self.mode {
            EncodingMode::Product => encode_product(self.bit),
            EncodingMode::Parity => encode_parity(self.bit),
        }
    }
}

fn from_real(names: &[&str], amps: &[f64]) -> PureState {
    let layout = RegisterLayout::qubits(names).expect("static layout");
    let amps = amps.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    PureState::from_amplitudes(layout, amps).expect("static state is normalized")
}

fn check_bit(q: u8) {
    assert!(q <= 1, "bit value must be 0 or 1, got {q}");
}

/// (|000⟩ + |111⟩)/√2 on `(a, b, c)`.
pub fn ghz() -> PureState {
    let mut amps = [0.0; 8];
    amps[0] = FRAC_1_SQRT_2;
    amps[7] = FRAC_1_SQRT_2;
    from_real(&CARRIER_WIRES, &amps)
}

/// Uniform superposition of the even-parity strings 000, 011, 101, 110.
pub fn even_parity() -> PureState {
    let amps: Vec<f64> = (0u32..8).map(|i| if i.count_ones() % 2 == 0 { 0.5 } else { 0.0 }).collect();
    from_real(&CARRIER_WIRES, &amps)
}

/// |q, q⟩ on `(w1, w2)`.
pub fn encode_product(q: u8) -> PureState {
    check_bit(q);
    let layout = RegisterLayout::qubits(&DATA_WIRES).expect("static layout");
    let q = usize::from(q);
    PureState::basis(layout, &[q, q]).expect("valid digits")
}

/// (|0, q⟩ + |1, q+1⟩)/√2 on `(w1, w2)`: every branch has digit sum q mod 2.
pub fn encode_parity(q: u8) -> PureState {
    check_bit(q);
    let mut amps = [0.0; 4];
    let q = usize::from(q);
    amps[q] = FRAC_1_SQRT_2;
    amps[0b10 | (q ^ 1)] = FRAC_1_SQRT_2;
    from_real(&DATA_WIRES, &amps)
}

pub fn decode_parity(b1: u8, b2: u8) -> u8 {
    (b1 ^ b2) & 1
}

/// Applies a Hadamard to each carrier wire, leaving everything else alone.
pub fn switch_carrier(s: &PureState) -> Result<PureState> {
    switch_carrier_with(s, &Gate1::hadamard())
}

/// [`switch_carrier`] with an explicit single-qubit gate in place of H.
pub fn switch_carrier_with(s: &PureState, gate: &Gate1) -> Result<PureState> {
    let mut out = s.apply_gate(CARRIER_WIRES[0], gate)?;
    for w in &CARRIER_WIRES[1..] {
        out = out.apply_gate(w, gate)?;
    }
    Ok(out)
}

/// ⟨ref|ρ_abc|ref⟩ where ρ_abc is the carrier reduction of `s`.
pub fn carrier_fidelity(s: &PureState, kind: CarrierKind) -> Result<f64> {
    let rho = s.reduced_density(&CARRIER_WIRES)?;
    rho.expectation(&kind.reference())
}

pub fn classify_carrier(s: &PureState, tolerance: f64) -> Result<CarrierStatus> {
    for kind in [CarrierKind::Ghz, CarrierKind::EvenParity] {
        if carrier_fidelity(s, kind)? >= 1.0 - tolerance {
            return Ok(CarrierStatus::Intact(kind));
        }
    }
    Ok(CarrierStatus::Degraded)
}
