//! Cross-module self-checks behind `qss verify`.

use num_complex::Complex64;
use serde::Serialize;

use crate::adversary::AttackSpec;
use crate::analysis::{
    branch_decomposition, hadamard_transform_branches, pairing_identity, qber_even, qber_odd, EntanglingAttackSpec,
};
use crate::carriers::{encode_parity, even_parity, ghz, switch_carrier, switch_carrier_with, DATA_WIRES};
use crate::protocol::{run_random_session, DetectionPolicy, RoundParity, Session, SessionOptions};
use crate::qsim::{fidelity, DensityMatrix, Gate1, PureState, RegisterLayout, IDENTITY_TOLERANCE};
use crate::rng::{derive_seed, seeded};

/// Tolerance for closed-form checks.
pub const ALGEBRA_TOLERANCE: f64 = IDENTITY_TOLERANCE;
/// Width of sampled-statistics bands, in standard errors.
pub const SAMPLING_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Gate used by the carrier-switch check in place of H.
    pub hadamard: Gate1,
    pub random_specs: usize,
    pub monte_carlo_specs: usize,
    pub monte_carlo_rounds: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, hadamard: Gate1::hadamard(), random_specs: 200, monte_carlo_specs: 3, monte_carlo_rounds: 4000 }
    }
}

impl VerifyOptions {
    /// Replaces 1/√2 in the switch gate by a slightly wrong constant.
    pub fn with_corrupted_hadamard(mut self) -> Self {
        let h = Complex64::new(0.7, 0.0);
        self.hadamard = Gate1([[h, h], [h, -h]]);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        switch_duality(&opts.hadamard),
        parity_addition(),
        transit_secrecy(),
        branch_transform(opts),
        pairing(opts),
        analytic_vs_simulated(opts),
    ]
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", r.name, r.detail));
    }
    out
}

fn switch_duality(gate: &Gate1) -> CheckResult {
    let worst = [(ghz(), even_parity()), (even_parity(), ghz())]
        .iter()
        .map(|(from, to)| match switch_carrier_with(from, gate).and_then(|s| fidelity(&s, to)) {
            Ok(f) => (1.0 - f).abs(),
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    check("switch_duality", worst <= ALGEBRA_TOLERANCE, format!("max |1 - fidelity| = {worst:.3e}"))
}

/// C_a1 C_b2 |q̄⟩_ab |q̄′⟩_12 against |q̄⟩_ab |q̄+q̄′⟩_12, largest amplitude gap.
pub fn parity_addition_gap(q: u8, q2: u8) -> f64 {
    let on = |names: [&str; 2], bit: u8| {
        let raw = encode_parity(bit);
        PureState::from_amplitudes(RegisterLayout::qubits(&names).expect("qubits"), raw.amplitudes().to_vec())
            .expect("normalized")
    };
    let input = on(["a", "b"], q).tensor(&on(["w1", "w2"], q2)).expect("disjoint");
    let out = input.apply_cnot("a", "w1").and_then(|s| s.apply_cnot("b", "w2")).expect("qubit wires");
    let want = on(["a", "b"], q).tensor(&on(["w1", "w2"], q ^ q2)).expect("disjoint");
    out.amplitudes().iter().zip(want.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn parity_addition() -> CheckResult {
    let worst = (0..4u8).map(|k| parity_addition_gap(k >> 1, k & 1)).fold(0.0, f64::max);
    check("parity_addition", worst <= ALGEBRA_TOLERANCE, format!("max amplitude gap = {worst:.3e}"))
}

/// Data-wire reductions right after Alice entangles bit `q` on an honest
/// carrier, for the given round type.
pub fn transit_reductions(parity: RoundParity, q: u8) -> (DensityMatrix, [DensityMatrix; 2]) {
    let mut s = Session::new(0, 1).expect("valid session");
    if parity == RoundParity::Even {
        s.alice_entangle(0).expect("ready");
        s.transmit(&AttackSpec::None).expect("entangled");
        s.receivers_disentangle().expect("transmitted");
        s.measure_and_reconstruct(None).expect("disentangled");
        s.refresh_carrier().expect("measured");
    }
    s.alice_entangle(q).expect("ready");
    let st = s.state();
    let pair = st.reduced_density(&DATA_WIRES).expect("data wires");
    let singles = DATA_WIRES.map(|w| st.reduced_density(&[w]).expect("data wire"));
    (pair, singles)
}

fn transit_secrecy() -> CheckResult {
    let half = DensityMatrix::maximally_mixed(2);
    let mut pair_gap: f64 = 0.0;
    let mut single_gap: f64 = 0.0;
    for parity in [RoundParity::Odd, RoundParity::Even] {
        let (p0, s0) = transit_reductions(parity, 0);
        let (p1, s1) = transit_reductions(parity, 1);
        pair_gap = pair_gap.max(p0.trace_distance(&p1).unwrap_or(f64::INFINITY));
        for s in s0.iter().chain(&s1) {
            single_gap = single_gap.max(s.trace_distance(&half).unwrap_or(f64::INFINITY));
        }
    }
    check(
        "transit_secrecy",
        pair_gap <= ALGEBRA_TOLERANCE && single_gap <= ALGEBRA_TOLERANCE,
        format!("pair q0/q1 distance = {pair_gap:.3e}, single-wire distance from I/2 = {single_gap:.3e}"),
    )
}

fn random_specs(opts: &VerifyOptions, stream: u64) -> impl Iterator<Item = EntanglingAttackSpec> + '_ {
    (0..opts.random_specs).map(move |i| {
        let d = [1, 2, 4][i % 3];
        let mut rng = seeded(derive_seed(derive_seed(opts.seed, stream), i as u64));
        EntanglingAttackSpec::random(d, &mut rng).expect("valid dimension")
    })
}

/// Largest entrywise gap between the branch transform and the branch vectors
/// of the switched carrier state.
pub fn branch_transform_gap(spec: &EntanglingAttackSpec) -> f64 {
    let xi = hadamard_transform_branches(spec);
    let switched = spec.carrier_state().ok().and_then(|s| switch_carrier(&s).ok());
    match switched.and_then(|s| branch_decomposition(&s).ok()) {
        Some(direct) => direct.iter().zip(xi.flat()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max),
        None => f64::INFINITY,
    }
}

fn branch_transform(opts: &VerifyOptions) -> CheckResult {
    let worst = random_specs(opts, 1).map(|s| branch_transform_gap(&s)).fold(0.0, f64::max);
    check(
        "branch_transform",
        worst <= ALGEBRA_TOLERANCE,
        format!("{} specs, max gap vs state vector = {worst:.3e}", opts.random_specs),
    )
}

fn pairing(opts: &VerifyOptions) -> CheckResult {
    let worst = random_specs(opts, 2)
        .map(|s| {
            let (l, r) = pairing_identity(&s);
            (l - r).abs()
        })
        .fold(0.0, f64::max);
    check(
        "pairing_identity",
        worst <= ALGEBRA_TOLERANCE,
        format!("{} specs, max |lhs - rhs| = {worst:.3e}", opts.random_specs),
    )
}

/// Simulated error frequencies of a fresh-each-round entangling attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedQber {
    pub odd: f64,
    pub even: f64,
    pub odd_rounds: usize,
    pub even_rounds: usize,
}

pub fn simulate_entangling_qber(spec: &EntanglingAttackSpec, rounds: usize, seed: u64) -> SimulatedQber {
    let attack = AttackSpec::Entangling { spec: spec.clone(), refresh_each_round: true };
    let (_, run) = run_random_session(rounds, &attack, &DetectionPolicy::default(), SessionOptions::default(), seed)
        .expect("valid entangling session");
    let count = |p: RoundParity| run.transcript.iter().filter(|r| r.parity == p).count();
    SimulatedQber {
        odd: run.report.qber_odd,
        even: run.report.qber_even,
        odd_rounds: count(RoundParity::Odd),
        even_rounds: count(RoundParity::Even),
    }
}

/// |observed − p| in units of the binomial standard error at `p`; zero when
/// both agree exactly on a degenerate p.
pub fn standard_errors(observed: f64, p: f64, n: usize) -> f64 {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let gap = (observed - p).abs();
    if se == 0.0 {
        if gap <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gap / se
    }
}

fn analytic_vs_simulated(opts: &VerifyOptions) -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..opts.monte_carlo_specs {
        let mut rng = seeded(derive_seed(derive_seed(opts.seed, 3), i as u64));
        let spec = EntanglingAttackSpec::random(2, &mut rng).expect("valid dimension");
        let sim = simulate_entangling_qber(&spec, opts.monte_carlo_rounds, derive_seed(opts.seed, 100 + i as u64));
        let odd = standard_errors(sim.odd, qber_odd(&spec), sim.odd_rounds);
        let even = standard_errors(sim.even, qber_even(&hadamard_transform_branches(&spec)), sim.even_rounds);
        worst = worst.max(odd).max(even);
    }
    check(
        "analytic_vs_simulated",
        worst <= SAMPLING_BAND,
        format!(
            "{} specs x {} rounds, worst deviation = {worst:.2} s.e.",
            opts.monte_carlo_specs, opts.monte_carlo_rounds
        ),
    )
}
