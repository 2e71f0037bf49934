//! Simulation and analysis of three-party quantum secret sharing over a
//! reusable GHZ carrier.
//!
//! * [`qsim`]: dense state vectors over named subsystems.
//! * [`carriers`]: the GHZ and even-parity carriers and the data encodings.
//! * [`protocol`]: round-by-round sessions, transcripts and detection.
//! * [`adversary`]: intercept–resend, entangling and cheating-receiver attacks.
//! * [`analysis`]: branch-vector QBER formulas and the minimum-QBER search.
//! * [`export`]: CSV and JSON output.
//! * [`verify`]: cross-module self-checks.
//! * [`cli`]: the `qss` command-line tool.

pub mod adversary;
pub mod analysis;
pub mod carriers;
pub mod cli;
pub mod export;
pub mod protocol;
pub mod qsim;
pub mod rng;
pub mod verify;
