//! Closed-form error rates of Eve's entangling attack and the search that
//! certifies the 25% average-QBER floor.
//!
//! Eve's attack is described by eight ancilla branch vectors η_i, one per
//! carrier basis state |i⟩ = |a b c⟩ with `a` the most significant bit:
//!
//! ```text
//! |Θ_odd⟩ = Σ_i |i⟩_abc ⊗ η_i
//! ```
//!
//! The end-of-round Hadamards map it to `|Θ_even⟩ = Σ_j |j⟩ ⊗ ξ_j` with
//! `ξ_j = 2^{-3/2} Σ_i (-1)^{popcount(i & j)} η_i`.
//!
//! Odd rounds decode correctly only on the branches 000 and 111; even rounds
//! only on even-parity branches. Working through the transform gives
//!
//! ```text
//! Σ_{j odd parity} ‖ξ_j‖² = ½ Σ_{i < ī} ‖η_i − η_ī‖²
//! ```
//!
//! where ī is the bitwise complement of i, so the pairs are (0,7), (1,6),
//! (2,5), (3,4).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::{ANCILLA_WIRE, CARRIER_WIRES};
use crate::qsim::{PureState, QsimError, RegisterLayout, NORM_TOLERANCE};
use crate::rng::derive_seed;

pub const BRANCHES: usize = 8;
pub const MAX_ANCILLA_DIM: usize = 64;

/// Branch indices that decode correctly in an odd round.
pub const ODD_HONEST_BRANCHES: [usize; 2] = [0, 7];
/// Odd-parity branch indices: these decode wrongly in an even round.
pub const EVEN_ERROR_BRANCHES: [usize; 4] = [1, 2, 4, 7];

const INV_2_SQRT_2: f64 = 0.353_553_390_593_273_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("branch vectors have total squared norm {0}, expected 1")]
    NotNormalized(f64),
    #[error("expected 8 branch vectors, got {0}")]
    BranchCount(usize),
    #[error("branch {branch} has length {len}, ancilla dimension is {dim}")]
    BranchLength { branch: usize, len: usize, dim: usize },
    #[error("ancilla dimension {0} outside 1..=64")]
    AncillaDim(usize),
    #[error("honest branch η_{0} has zero norm")]
    ZeroHonestBranch(usize),
    #[error("infeasible constraint: {0}")]
    Infeasible(String),
    #[error("search budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    State(#[from] QsimError),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Eve's eight branch vectors, stored flat as `eta[i * ancilla_dim + k]`.
///
/// The flat order coincides with the amplitude order of `Σ_i |i⟩ ⊗ η_i` on the
/// register `(a, b, c, e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct EntanglingAttackSpec {
    ancilla_dim: usize,
    eta: Vec<Complex64>,
}

/// JSON form: `eta[i]` is a list of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    ancilla_dim: usize,
    eta: Vec<Vec<(f64, f64)>>,
}

impl TryFrom<RawSpec> for EntanglingAttackSpec {
    type Error = AnalysisError;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let branches =
            raw.eta.into_iter().map(|b| b.into_iter().map(|(re, im)| Complex64::new(re, im)).collect()).collect();
        Self::new(raw.ancilla_dim, branches)
    }
}

impl From<EntanglingAttackSpec> for RawSpec {
    fn from(spec: EntanglingAttackSpec) -> Self {
        RawSpec {
            ancilla_dim: spec.ancilla_dim,
            eta: (0..BRANCHES).map(|i| spec.branch(i).iter().map(|z| (z.re, z.im)).collect()).collect(),
        }
    }
}

impl EntanglingAttackSpec {
    pub fn new(ancilla_dim: usize, branches: Vec<Vec<Complex64>>) -> Result<Self> {
        if branches.len() != BRANCHES {
            return Err(AnalysisError::BranchCount(branches.len()));
        }
        for (i, b) in branches.iter().enumerate() {
            if b.len() != ancilla_dim {
                return Err(AnalysisError::BranchLength { branch: i, len: b.len(), dim: ancilla_dim });
            }
        }
        Self::from_flat(ancilla_dim, branches.into_iter().flatten().collect())
    }

    pub fn from_flat(ancilla_dim: usize, eta: Vec<Complex64>) -> Result<Self> {
        if ancilla_dim == 0 || ancilla_dim > MAX_ANCILLA_DIM {
            return Err(AnalysisError::AncillaDim(ancilla_dim));
        }
        if eta.len() != BRANCHES * ancilla_dim {
            return Err(AnalysisError::BranchLength { branch: 0, len: eta.len(), dim: ancilla_dim });
        }
        let total: f64 = eta.iter().map(|z| z.norm_sqr()).sum();
        if !total.is_finite() || (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(AnalysisError::NotNormalized(total));
        }
        Ok(Self { ancilla_dim, eta })
    }

    /// Rescales arbitrary branch vectors to a normalized spec.
    pub fn normalized(ancilla_dim: usize, mut eta: Vec<Complex64>) -> Result<Self> {
        let total: f64 = eta.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if total == 0.0 || !total.is_finite() {
            return Err(AnalysisError::NotNormalized(total));
        }
        eta.iter_mut().for_each(|z| *z /= total);
        Self::from_flat(ancilla_dim, eta)
    }

    /// η_0 = η_7 = e_0/√2: a carrier that is unentangled with Eve.
    pub fn honest(ancilla_dim: usize) -> Result<Self> {
        let mut eta = vec![Complex64::new(0.0, 0.0); BRANCHES * ancilla_dim];
        eta[0] = Complex64::new(1.0, 0.0);
        eta[7 * ancilla_dim] = Complex64::new(1.0, 0.0);
        Self::normalized(ancilla_dim, eta)
    }

    /// Random spec, uniform on the unit sphere of the 8·d complex coordinates.
    pub fn random<R: Rng + ?Sized>(ancilla_dim: usize, rng: &mut R) -> Result<Self> {
        let eta = (0..BRANCHES * ancilla_dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(ancilla_dim, eta)
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn branch(&self, i: usize) -> &[Complex64] {
        &self.eta[i * self.ancilla_dim..(i + 1) * self.ancilla_dim]
    }

    pub fn flat(&self) -> &[Complex64] {
        &self.eta
    }

    pub fn branch_weight(&self, i: usize) -> f64 {
        norm_sqr(self.branch(i))
    }

    /// `Σ_i |i⟩ ⊗ η_i` on `(a, b, c, e)`; the ancilla is left out when d = 1.
    pub fn carrier_state(&self) -> Result<PureState> {
        let layout = carrier_layout(self.ancilla_dim)?;
        Ok(PureState::from_amplitudes(layout, self.eta.clone())?)
    }
}

/// Ancilla branch vectors of the even-round carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct XiVectors {
    ancilla_dim: usize,
    xi: Vec<Complex64>,
}

impl XiVectors {
    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn branch(&self, j: usize) -> &[Complex64] {
        &self.xi[j * self.ancilla_dim..(j + 1) * self.ancilla_dim]
    }

    pub fn flat(&self) -> &[Complex64] {
        &self.xi
    }

    pub fn total_weight(&self) -> f64 {
        norm_sqr(&self.xi)
    }

    /// Applies the (self-inverse) branch transform again.
    pub fn inverse_transform(&self) -> Result<EntanglingAttackSpec> {
        EntanglingAttackSpec::from_flat(self.ancilla_dim, walsh_hadamard(&self.xi, self.ancilla_dim))
    }
}

pub(crate) fn carrier_layout(ancilla_dim: usize) -> Result<RegisterLayout, QsimError> {
    let mut subs: Vec<(&str, usize)> = CARRIER_WIRES.iter().map(|w| (*w, 2)).collect();
    if ancilla_dim > 1 {
        subs.push((ANCILLA_WIRE, ancilla_dim));
    }
    RegisterLayout::new(subs)
}

/// Splits a state on `(a, b, c[, e])` into its eight ancilla branches.
pub fn branch_decomposition(state: &PureState) -> Result<Vec<Complex64>> {
    let names: Vec<&str> = state.layout().names().collect();
    let dim = state.dim() / BRANCHES;
    let expected: Vec<&str> = if dim > 1 { vec!["a", "b", "c", ANCILLA_WIRE] } else { vec!["a", "b", "c"] };
    if names != expected {
        return Err(QsimError::UnknownWire(format!("expected register {expected:?}, got {names:?}")).into());
    }
    Ok(state.amplitudes().to_vec())
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn parity(x: usize) -> bool {
    x.count_ones() % 2 == 1
}

fn walsh_hadamard(flat: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); flat.len()];
    for j in 0..BRANCHES {
        for i in 0..BRANCHES {
            let sign = if parity(i & j) { -INV_2_SQRT_2 } else { INV_2_SQRT_2 };
            for k in 0..d {
                out[j * d + k] += flat[i * d + k] * sign;
            }
        }
    }
    out
}

/// Odd-round error probability: weight outside the branches 000 and 111.
pub fn qber_odd(spec: &EntanglingAttackSpec) -> f64 {
    (0..BRANCHES).filter(|i| !ODD_HONEST_BRANCHES.contains(i)).map(|i| spec.branch_weight(i)).sum()
}

pub fn hadamard_transform_branches(spec: &EntanglingAttackSpec) -> XiVectors {
    XiVectors { ancilla_dim: spec.ancilla_dim, xi: walsh_hadamard(&spec.eta, spec.ancilla_dim) }
}

/// Even-round error probability: weight on the odd-parity branches.
pub fn qber_even(xi: &XiVectors) -> f64 {
    EVEN_ERROR_BRANCHES.iter().map(|&j| norm_sqr(xi.branch(j))).sum()
}

/// `(qber_even(ξ), ½ Σ_{i<ī} ‖η_i − η_ī‖²)`; the two agree for every spec.
pub fn pairing_identity(spec: &EntanglingAttackSpec) -> (f64, f64) {
    let lhs = qber_even(&hadamard_transform_branches(spec));
    let rhs = 0.5
        * (0..BRANCHES / 2)
            .map(|i| {
                let (x, y) = (spec.branch(i), spec.branch(7 - i));
                x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>()
            })
            .sum::<f64>();
    (lhs, rhs)
}

pub fn average_qber(spec: &EntanglingAttackSpec) -> f64 {
    0.5 * (qber_odd(spec) + qber_even(&hadamard_transform_branches(spec)))
}

/// 1 − |⟨η̂_0|η̂_7⟩|: 0 when Eve's honest-branch states coincide, 1 when they
/// are orthogonal.
pub fn distinguishability(spec: &EntanglingAttackSpec) -> Result<f64> {
    let (e0, e7) = (spec.branch(0), spec.branch(7));
    let (n0, n7) = (norm_sqr(e0).sqrt(), norm_sqr(e7).sqrt());
    if n0 == 0.0 {
        return Err(AnalysisError::ZeroHonestBranch(0));
    }
    if n7 == 0.0 {
        return Err(AnalysisError::ZeroHonestBranch(7));
    }
    let overlap: Complex64 = e0.iter().zip(e7).map(|(x, y)| x.conj() * y).sum();
    Ok((1.0 - overlap.norm() / (n0 * n7)).clamp(0.0, 1.0))
}

/// Whether the odd form lives on {000, 111} and the even form on the
/// even-parity branches, both within `tol` in squared norm.
pub fn is_switch_compatible(spec: &EntanglingAttackSpec, tol: f64) -> bool {
    qber_odd(spec) <= tol && qber_even(&hadamard_transform_branches(spec)) <= tol
}

/// Samples specs that satisfy [`is_switch_compatible`] exactly, by projecting
/// random branch vectors onto the null space of the support constraints.
///
/// The constraints are linear and act on each ancilla coordinate separately:
/// η_i = 0 for i ∉ {0, 7} and ξ_j = 0 for odd-parity j. The null space is
/// computed numerically rather than written down.
pub fn sample_switch_compatible(count: usize, ancilla_dim: usize, seed: u64) -> Result<Vec<EntanglingAttackSpec>> {
    if ancilla_dim == 0 || ancilla_dim > MAX_ANCILLA_DIM {
        return Err(AnalysisError::AncillaDim(ancilla_dim));
    }
    let mut rows: Vec<[Complex64; BRANCHES]> = Vec::new();
    for i in (0..BRANCHES).filter(|i| !ODD_HONEST_BRANCHES.contains(i)) {
        let mut r = [Complex64::new(0.0, 0.0); BRANCHES];
        r[i] = Complex64::new(1.0, 0.0);
        rows.push(r);
    }
    for j in EVEN_ERROR_BRANCHES {
        let mut r = [Complex64::new(0.0, 0.0); BRANCHES];
        for (i, x) in r.iter_mut().enumerate() {
            *x = Complex64::new(if parity(i & j) { -INV_2_SQRT_2 } else { INV_2_SQRT_2 }, 0.0);
        }
        rows.push(r);
    }
    let basis = gram_schmidt(&rows);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut eta: Vec<Complex64> = (0..BRANCHES * ancilla_dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        for k in 0..ancilla_dim {
            for r in &basis {
                let c: Complex64 = (0..BRANCHES).map(|i| r[i].conj() * eta[i * ancilla_dim + k]).sum();
                for i in 0..BRANCHES {
                    eta[i * ancilla_dim + k] -= c * r[i];
                }
            }
        }
        if norm_sqr(&eta) > 1e-20 {
            out.push(EntanglingAttackSpec::normalized(ancilla_dim, eta)?);
        }
    }
    Ok(out)
}

fn gram_schmidt(rows: &[[Complex64; BRANCHES]]) -> Vec<[Complex64; BRANCHES]> {
    let mut basis: Vec<[Complex64; BRANCHES]> = Vec::new();
    for row in rows {
        let mut v = *row;
        for b in &basis {
            let c: Complex64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let n = norm_sqr(&v).sqrt();
        if n > 1e-10 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraint {
    /// Lower bound on [`distinguishability`].
    pub min_distinguishability: f64,
    /// Optional upper bound on the odd-round error rate ε.
    pub max_epsilon: Option<f64>,
}

impl SearchConstraint {
    pub fn new(min_distinguishability: f64) -> Self {
        Self { min_distinguishability, max_epsilon: None }
    }

    fn validate(&self, ancilla_dim: usize) -> Result<()> {
        let d = self.min_distinguishability;
        if !(0.0..=1.0).contains(&d) {
            return Err(AnalysisError::Infeasible(format!("min_distinguishability {d} outside [0, 1]")));
        }
        if let Some(e) = self.max_epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(AnalysisError::Infeasible(format!("max_epsilon {e} outside [0, 1]")));
            }
        }
        if ancilla_dim == 1 && d > 0.0 {
            return Err(AnalysisError::Infeasible(
                "a one-dimensional ancilla cannot distinguish the honest branches".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSearchResult {
    pub best_spec: EntanglingAttackSpec,
    pub best_average: f64,
    pub epsilon: f64,
    pub distinguishability: f64,
    pub evaluations: u64,
    /// Lowest average QBER over every candidate evaluated, all of which are feasible.
    pub lowest_evaluated: f64,
    pub constraint: SearchConstraint,
    pub ancilla_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub distinguishability_constraint: f64,
    pub min_average_qber: f64,
    pub epsilon_at_min: f64,
    pub evaluations: u64,
}

/// Distinguishability grid used for frontier reports.
pub const FRONTIER_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

const HONEST_FLOOR: f64 = 1e-9;
const INITIAL_STEP: f64 = 0.1;
const MIN_STEP: f64 = 1e-9;
const MAX_REFINED_STARTS: usize = 4;

/// Maps raw coordinates onto a normalized spec satisfying `constraint`.
struct Projector {
    d: usize,
    constraint: SearchConstraint,
}

impl Projector {
    fn project(&self, x: &[f64]) -> Vec<Complex64> {
        let d = self.d;
        let mut eta: Vec<Complex64> = x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        let cap = 1.0 - self.constraint.min_distinguishability;

        if self.constraint.min_distinguishability > 0.0 || self.constraint.max_epsilon.is_some() {
            for i in ODD_HONEST_BRANCHES {
                if norm_sqr(&eta[i * d..(i + 1) * d]).sqrt() < HONEST_FLOOR {
                    eta[i * d] += Complex64::new(HONEST_FLOOR, 0.0);
                }
            }
        }

        if self.constraint.min_distinguishability > 0.0 {
            let (head, tail) = eta.split_at_mut(7 * d);
            let e0 = &head[..d];
            let e7 = &mut tail[..d];
            let (n0, n7) = (norm_sqr(e0).sqrt(), norm_sqr(e7).sqrt());
            let u0: Vec<Complex64> = e0.iter().map(|z| z / n0).collect();
            let u7: Vec<Complex64> = e7.iter().map(|z| z / n7).collect();
            let alpha: Complex64 = u0.iter().zip(&u7).map(|(a, b)| a.conj() * b).sum();
            if alpha.norm() > cap {
                let mut perp: Vec<Complex64> = u7.iter().zip(&u0).map(|(b, a)| b - alpha * a).collect();
                if norm_sqr(&perp).sqrt() < 1e-12 {
                    // u7 ∥ u0: take the basis direction least aligned with u0.
                    let k = (0..d).min_by(|&p, &q| u0[p].norm().total_cmp(&u0[q].norm())).expect("d >= 2");
                    perp = (0..d)
                        .map(|m| {
                            let ek = if m == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                            ek - u0[k].conj() * u0[m]
                        })
                        .collect();
                }
                let pn = norm_sqr(&perp).sqrt();
                let phase = if alpha.norm() > 0.0 { alpha / alpha.norm() } else { Complex64::new(1.0, 0.0) };
                let s = (1.0 - cap * cap).max(0.0).sqrt();
                for m in 0..d {
                    e7[m] = (phase * u0[m] * cap + perp[m] / pn * s) * n7;
                }
            }
        }

        if let Some(max_eps) = self.constraint.max_epsilon {
            let honest: f64 = ODD_HONEST_BRANCHES.iter().map(|&i| norm_sqr(&eta[i * d..(i + 1) * d])).sum();
            let eps: f64 = norm_sqr(&eta) - honest;
            if eps > 0.0 && eps / (eps + honest) > max_eps {
                let scale = if max_eps >= 1.0 { 1.0 } else { (max_eps * honest / (eps * (1.0 - max_eps))).sqrt() };
                for i in (0..BRANCHES).filter(|i| !ODD_HONEST_BRANCHES.contains(i)) {
                    eta[i * d..(i + 1) * d].iter_mut().for_each(|z| *z *= scale);
                }
            }
        }

        let n = norm_sqr(&eta).sqrt();
        eta.iter_mut().for_each(|z| *z /= n);
        eta
    }
}

struct Evaluator<'a> {
    projector: &'a Projector,
    evaluations: u64,
    budget: u64,
    lowest: f64,
}

impl Evaluator<'_> {
    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// Projects `x` in place and returns the objective.
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        let eta = self.projector.project(x);
        for (p, z) in x.chunks_exact_mut(2).zip(&eta) {
            p[0] = z.re;
            p[1] = z.im;
        }
        let spec = EntanglingAttackSpec { ancilla_dim: self.projector.d, eta };
        let v = average_qber(&spec);
        self.evaluations += 1;
        self.lowest = self.lowest.min(v);
        v
    }

    /// Projected gradient descent with an adaptive step: a step that lowers
    /// the objective is kept and lengthened, one that does not is halved.
    fn refine(&mut self, mut x: Vec<f64>, mut fx: f64) -> (Vec<f64>, f64) {
        let d = self.projector.d;
        let mut step = INITIAL_STEP;
        while step > MIN_STEP && !self.exhausted() {
            let eta: Vec<Complex64> = x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            let g = objective_gradient(&eta, d);
            let mut trial: Vec<f64> =
                x.chunks_exact(2).zip(&g).flat_map(|(p, gz)| [p[0] - step * gz.re, p[1] - step * gz.im]).collect();
            let ft = self.eval(&mut trial);
            if ft < fx {
                x = trial;
                fx = ft;
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        (x, fx)
    }
}

/// Gradient of the average QBER with respect to the real and imaginary parts
/// of η. The objective is the quadratic form ½ η†(A + W P W) η, where A drops
/// the honest branches, W is the branch Walsh–Hadamard transform and P keeps
/// the odd-parity branches.
fn objective_gradient(eta: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut odd = eta.to_vec();
    for i in ODD_HONEST_BRANCHES {
        odd[i * d..(i + 1) * d].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    }
    let mut xi = walsh_hadamard(eta, d);
    for j in (0..BRANCHES).filter(|j| !EVEN_ERROR_BRANCHES.contains(j)) {
        xi[j * d..(j + 1) * d].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    }
    let even = walsh_hadamard(&xi, d);
    odd.iter().zip(&even).map(|(a, b)| a + b).collect()
}

/// Multi-start search for the smallest average QBER under `constraint`.
///
/// A fifth of the budget goes to uniform random candidates on the unit
/// sphere; the best few are then refined in parallel by projected gradient
/// descent with the rest, drawing no further randomness. Results depend only
/// on `(constraint, budget, ancilla_dim, seed)`.
pub fn minimize_average_qber(
    constraint: &SearchConstraint,
    budget: u64,
    ancilla_dim: usize,
    seed: u64,
) -> Result<BoundSearchResult> {
    if budget == 0 {
        return Err(AnalysisError::ZeroBudget);
    }
    if ancilla_dim == 0 || ancilla_dim > MAX_ANCILLA_DIM {
        return Err(AnalysisError::AncillaDim(ancilla_dim));
    }
    constraint.validate(ancilla_dim)?;

    let projector = Projector { d: ancilla_dim, constraint: *constraint };
    let n_coords = 2 * BRANCHES * ancilla_dim;
    let n_random = (budget / 5).max(1);

    let mut sampler = Evaluator { projector: &projector, evaluations: 0, budget: n_random, lowest: f64::INFINITY };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n_random as usize);
    for _ in 0..n_random {
        let mut x: Vec<f64> = (0..n_coords).map(|_| rng.sample(StandardNormal)).collect();
        let fx = sampler.eval(&mut x);
        starts.push((x, fx));
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));

    let remaining = budget - n_random;
    let n_refine = (MAX_REFINED_STARTS as u64).min(remaining / 16) as usize;
    let per_start = if n_refine > 0 { remaining / n_refine as u64 } else { 0 };

    let refined: Vec<(Vec<f64>, f64, u64, f64)> = starts
        .iter()
        .take(n_refine)
        .cloned()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(x, fx)| {
            let mut ev = Evaluator { projector: &projector, evaluations: 0, budget: per_start, lowest: f64::INFINITY };
            let (y, fy) = ev.refine(x, fx);
            (y, fy, ev.evaluations, ev.lowest)
        })
        .collect();

    let mut evaluations = sampler.evaluations;
    let mut lowest = sampler.lowest;
    let (mut best_x, mut best_f) = starts.swap_remove(0);
    for (y, fy, n, low) in refined {
        evaluations += n;
        lowest = lowest.min(low);
        if fy < best_f {
            best_x = y;
            best_f = fy;
        }
    }

    let eta: Vec<Complex64> = best_x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    let best_spec = EntanglingAttackSpec::normalized(ancilla_dim, eta)?;
    let distinguishability = distinguishability(&best_spec).unwrap_or(0.0);
    Ok(BoundSearchResult {
        epsilon: qber_odd(&best_spec),
        best_average: average_qber(&best_spec),
        best_spec,
        distinguishability,
        evaluations,
        lowest_evaluated: lowest,
        constraint: *constraint,
        ancilla_dim,
        seed,
    })
}

/// Minimal average QBER at each distinguishability level in `grid`.
pub fn search_frontier(grid: &[f64], budget: u64, ancilla_dim: usize, seed: u64) -> Result<Vec<FrontierPoint>> {
    grid.iter()
        .enumerate()
        .map(|(k, &level)| {
            let r =
                minimize_average_qber(&SearchConstraint::new(level), budget, ancilla_dim, derive_seed(seed, k as u64))?;
            Ok(FrontierPoint {
                distinguishability_constraint: level,
                min_average_qber: r.best_average,
                epsilon_at_min: r.epsilon,
                evaluations: r.evaluations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carriers::switch_carrier;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec_from(d: usize, entries: &[(usize, usize, Complex64)]) -> EntanglingAttackSpec {
        let mut eta = vec![c(0.0, 0.0); BRANCHES * d];
        for &(i, k, z) in entries {
            eta[i * d + k] = z;
        }
        EntanglingAttackSpec::from_flat(d, eta).unwrap()
    }

    #[test]
    fn spec_validation() {
        let bad = vec![vec![c(0.5, 0.0)]; 8];
        assert!(matches!(EntanglingAttackSpec::new(1, bad), Err(AnalysisError::NotNormalized(_))));
        assert!(matches!(EntanglingAttackSpec::new(1, vec![vec![c(1.0, 0.0)]]), Err(AnalysisError::BranchCount(1))));
        assert!(matches!(EntanglingAttackSpec::from_flat(0, vec![]), Err(AnalysisError::AncillaDim(0))));
    }

    #[test]
    fn json_shape() {
        let s = EntanglingAttackSpec::honest(2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["ancilla_dim"], 2);
        assert_eq!(v["eta"].as_array().unwrap().len(), 8);
        assert!((v["eta"][7][0][0].as_f64().unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let back: EntanglingAttackSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"ancilla_dim": 1, "eta": [[[1.0, 0.0]], [[1.0, 0.0]], [], [], [], [], [], []]});
        assert!(serde_json::from_value::<EntanglingAttackSpec>(bad).is_err());
    }

    #[test]
    fn qber_odd_examples() {
        assert_eq!(qber_odd(&EntanglingAttackSpec::honest(3).unwrap()), 0.0);
        assert_eq!(qber_odd(&spec_from(1, &[(2, 0, c(1.0, 0.0))])), 1.0);
    }

    #[test]
    fn transform_examples() {
        let e = c(0.6, 0.8);
        let xi = hadamard_transform_branches(&spec_from(1, &[(0, 0, e)]));
        for j in 0..8 {
            assert!((xi.branch(j)[0] - e * INV_2_SQRT_2).norm() < 1e-15);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let xi = hadamard_transform_branches(&spec_from(2, &[(0, 1, c(h, 0.0)), (7, 1, c(h, 0.0))]));
        for j in 0..8 {
            let want = if parity(j) { 0.0 } else { 0.5 };
            assert!((xi.branch(j)[1] - c(want, 0.0)).norm() < 1e-15, "j={j}");
            assert_eq!(xi.branch(j)[0], c(0.0, 0.0));
        }
    }

    #[test]
    fn qber_even_examples() {
        let honest = EntanglingAttackSpec::honest(1).unwrap();
        assert!(qber_even(&hadamard_transform_branches(&honest)) < 1e-15);
        let single = spec_from(1, &[(0, 0, c(1.0, 0.0))]);
        assert!((qber_even(&hadamard_transform_branches(&single)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pairing_examples() {
        let (l, r) = pairing_identity(&EntanglingAttackSpec::honest(2).unwrap());
        assert!(l.abs() < 1e-15 && r.abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let orth = spec_from(2, &[(0, 0, c(h, 0.0)), (7, 1, c(h, 0.0))]);
        let (l, r) = pairing_identity(&orth);
        assert!((l - 0.5).abs() < 1e-12 && (r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn average_qber_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(average_qber(&EntanglingAttackSpec::honest(2).unwrap()), 0.0);
        let orth = spec_from(2, &[(0, 0, c(h, 0.0)), (7, 1, c(h, 0.0))]);
        assert!((average_qber(&orth) - 0.25).abs() < 1e-15);
        // ε = 0.1 spread over complementary pairs with equal vectors, honest
        // branches orthogonal with weight 0.45 each.
        let w = (0.45f64).sqrt();
        let o = (0.05f64).sqrt();
        let eps_spec = spec_from(2, &[(0, 0, c(w, 0.0)), (7, 1, c(w, 0.0)), (1, 0, c(o, 0.0)), (6, 0, c(o, 0.0))]);
        assert!((qber_odd(&eps_spec) - 0.1).abs() < 1e-12);
        assert!((average_qber(&eps_spec) - 0.275).abs() < 1e-12);
        assert!((distinguishability(&eps_spec).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_constrained_search_attains_the_linear_bound() {
        let constraint = SearchConstraint { min_distinguishability: 1.0, max_epsilon: Some(0.1) };
        let r = minimize_average_qber(&constraint, 10_000, 2, 3).unwrap();
        assert!(r.epsilon <= 0.1 + 1e-9);
        assert!(r.best_average >= 0.25 - 1e-9);
        assert!(r.best_average <= 0.25 + 1e-4);
    }

    #[test]
    fn distinguishability_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(distinguishability(&EntanglingAttackSpec::honest(2).unwrap()).unwrap() < 1e-15);
        let orth = spec_from(2, &[(0, 0, c(h, 0.0)), (7, 1, c(h, 0.0))]);
        assert_eq!(distinguishability(&orth).unwrap(), 1.0);
        // Unit honest-branch directions (1, 0) and (1/2, √3/2): overlap 1/2.
        let s3 = 3f64.sqrt() / 2.0;
        let half = spec_from(2, &[(0, 0, c(h, 0.0)), (7, 0, c(0.5 * h, 0.0)), (7, 1, c(s3 * h, 0.0))]);
        assert!((distinguishability(&half).unwrap() - 0.5).abs() < 1e-12);
        let missing = spec_from(1, &[(0, 0, c(1.0, 0.0))]);
        assert_eq!(distinguishability(&missing), Err(AnalysisError::ZeroHonestBranch(7)));
    }

    #[test]
    fn search_rejects_bad_inputs() {
        let c1 = SearchConstraint::new(1.0);
        assert_eq!(minimize_average_qber(&c1, 0, 2, 0).unwrap_err(), AnalysisError::ZeroBudget);
        assert!(matches!(minimize_average_qber(&c1, 10, 1, 0), Err(AnalysisError::Infeasible(_))));
        assert!(matches!(
            minimize_average_qber(&SearchConstraint::new(1.5), 10, 2, 0),
            Err(AnalysisError::Infeasible(_))
        ));
    }

    #[test]
    fn budget_of_one_returns_the_sampled_candidate() {
        let r = minimize_average_qber(&SearchConstraint::new(1.0), 1, 2, 9).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best_average, r.lowest_evaluated);
        assert!(r.best_average >= 0.25 - 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = EntanglingAttackSpec::random(2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let g = objective_gradient(spec.flat(), 2);
        let f = |eta: Vec<Complex64>| average_qber(&EntanglingAttackSpec { ancilla_dim: 2, eta });
        let h = 1e-6;
        for k in 0..spec.flat().len() {
            for (unit, part) in [(c(1.0, 0.0), g[k].re), (c(0.0, 1.0), g[k].im)] {
                let mut up = spec.flat().to_vec();
                let mut down = spec.flat().to_vec();
                up[k] += unit * h;
                down[k] -= unit * h;
                assert!(((f(up) - f(down)) / (2.0 * h) - part).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn unconstrained_search_finds_an_honest_spec() {
        let r = minimize_average_qber(&SearchConstraint::new(0.0), 10_000, 2, 1).unwrap();
        assert!(r.best_average <= 1e-9, "{}", r.best_average);
    }

    #[test]
    fn search_is_deterministic() {
        let c1 = SearchConstraint::new(0.5);
        let a = minimize_average_qber(&c1, 2_000, 2, 42).unwrap();
        let b = minimize_average_qber(&c1, 2_000, 2, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frontier_is_monotone() {
        let f = search_frontier(&FRONTIER_GRID, 5_000, 2, 11).unwrap();
        for w in f.windows(2) {
            assert!(w[1].min_average_qber >= w[0].min_average_qber - 1e-9, "{f:?}");
        }
        // The minimum over the frontier is D/4 with ε = 0.
        for p in &f {
            assert!((p.min_average_qber - p.distinguishability_constraint / 4.0).abs() < 1e-4, "{p:?}");
        }
    }

    #[test]
    fn switch_compatible_samples_have_equal_honest_branches() {
        for d in [1, 2, 4] {
            for spec in sample_switch_compatible(50, d, d as u64).unwrap() {
                assert!(is_switch_compatible(&spec, 1e-24));
                for k in 0..d {
                    assert!((spec.branch(0)[k] - spec.branch(7)[k]).norm() < 1e-10);
                }
                if d > 1 {
                    assert!(distinguishability(&spec).unwrap() < 1e-10);
                }
            }
        }
    }

    fn spec_strategy(d: usize) -> impl Strategy<Value = EntanglingAttackSpec> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 8 * d)
            .prop_filter("non-zero", |v| v.iter().any(|(x, y)| x.abs() + y.abs() > 1e-3))
            .prop_map(move |v| {
                EntanglingAttackSpec::normalized(d, v.into_iter().map(|(x, y)| c(x, y)).collect()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn transform_is_unitary_and_self_inverse(spec in (1usize..5).prop_flat_map(spec_strategy)) {
            let xi = hadamard_transform_branches(&spec);
            prop_assert!((xi.total_weight() - 1.0).abs() < 1e-12);
            let back = xi.inverse_transform().unwrap();
            for (x, y) in back.flat().iter().zip(spec.flat()) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn transform_matches_state_vector_switch(spec in (1usize..5).prop_flat_map(spec_strategy)) {
            let switched = switch_carrier(&spec.carrier_state().unwrap()).unwrap();
            let oracle = branch_decomposition(&switched).unwrap();
            let xi = hadamard_transform_branches(&spec);
            for (x, y) in xi.flat().iter().zip(&oracle) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn pairing_identity_holds(spec in (1usize..5).prop_flat_map(spec_strategy)) {
            let (l, r) = pairing_identity(&spec);
            prop_assert!((l - r).abs() < 1e-12);
        }

        #[test]
        fn perfect_information_costs_a_quarter(spec in spec_strategy(3)) {
            // Rotate η_7 to be orthogonal to η_0, then check the floor.
            let d = 3;
            let mut eta = spec.flat().to_vec();
            let e0: Vec<Complex64> = eta[..d].to_vec();
            let n0 = norm_sqr(&e0);
            prop_assume!(n0 > 1e-6);
            let alpha: Complex64 = e0.iter().zip(&eta[7 * d..]).map(|(a, b)| a.conj() * b).sum();
            for k in 0..d {
                eta[7 * d + k] -= alpha / n0 * e0[k];
            }
            prop_assume!(norm_sqr(&eta[7 * d..]) > 1e-6);
            let s = EntanglingAttackSpec::normalized(d, eta).unwrap();
            prop_assert!(distinguishability(&s).unwrap() > 1.0 - 1e-9);
            prop_assert!(average_qber(&s) >= 0.25 - 1e-12);
        }
    }
}
