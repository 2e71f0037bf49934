//! Dense state-vector kernel.
//!
//! States live on an ordered register of named subsystems. Basis indices use
//! mixed-radix arithmetic with the first subsystem most significant, so for the
//! canonical protocol register `(a, b, c, w1, w2, e)` the index of
//! `|a b c w1 w2⟩ ⊗ |k⟩_e` is `((((a·2 + b)·2 + c)·2 + w1)·2 + w2)·d + k`.
//!
//! Every operation takes its input by reference and returns a new value. The
//! only source of nondeterminism is the random stream passed to
//! [`PureState::measure`].

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

pub type Amplitude = Complex64;

/// Normalization tolerance for states that went through several gates.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Tolerance for exact algebraic identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

pub const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("duplicate subsystem name `{0}`")]
    DuplicateSubsystem(String),
    #[error("subsystem `{0}` has dimension zero")]
    ZeroDimension(String),
    #[error("unknown wire `{0}`")]
    UnknownWire(String),
    #[error("wire `{name}` has dimension {dim}, expected a qubit")]
    NotAQubit { name: String, dim: usize },
    #[error("control and target are both `{0}`")]
    SameWire(String),
    #[error("wire `{0}` listed more than once")]
    RepeatedWire(String),
    #[error("empty wire set")]
    EmptyWireSet,
    #[error("amplitude vector has length {actual}, layout needs {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("state norm is {0}, expected 1")]
    NotNormalized(f64),
    #[error("non-finite amplitude")]
    NonFinite,
    #[error("projection onto outcome {0:?} has zero probability")]
    ZeroProbability(Vec<u8>),
    #[error("wires {0:?} are not in a definite basis state")]
    NotInBasisState(Vec<String>),
}

pub type Result<T, E = QsimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    pub name: String,
    pub dim: usize,
}

/// Ordered list of named subsystems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterLayout {
    subsystems: Vec<Subsystem>,
}

impl RegisterLayout {
    pub fn new<S: Into<String>>(subsystems: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut out: Vec<Subsystem> = Vec::new();
        for (name, dim) in subsystems {
            let name = name.into();
            if dim == 0 {
                return Err(QsimError::ZeroDimension(name));
            }
            if out.iter().any(|s| s.name == name) {
                return Err(QsimError::DuplicateSubsystem(name));
            }
            out.push(Subsystem { name, dim });
        }
        Ok(Self { subsystems: out })
    }

    pub fn qubits(names: &[&str]) -> Result<Self> {
        Self::new(names.iter().map(|n| (*n, 2)))
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.subsystems.iter().map(|s| s.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.subsystems.iter().any(|s| s.name == name)
    }

    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.dim).product()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.subsystems.iter().position(|s| s.name == name).ok_or_else(|| QsimError::UnknownWire(name.to_string()))
    }

    pub fn dim_of(&self, name: &str) -> Result<usize> {
        Ok(self.subsystems[self.position(name)?].dim)
    }

    /// Index stride of the subsystem at `pos`.
    pub fn stride(&self, pos: usize) -> usize {
        self.subsystems[pos + 1..].iter().map(|s| s.dim).product()
    }

    fn qubit_stride(&self, name: &str) -> Result<usize> {
        let pos = self.position(name)?;
        let dim = self.subsystems[pos].dim;
        if dim != 2 {
            return Err(QsimError::NotAQubit { name: name.to_string(), dim });
        }
        Ok(self.stride(pos))
    }

    pub fn concat(&self, other: &RegisterLayout) -> Result<Self> {
        Self::new(self.subsystems.iter().chain(other.subsystems.iter()).map(|s| (s.name.clone(), s.dim)))
    }

    /// Digit of subsystem `pos` in basis index `index`.
    pub fn digit(&self, index: usize, pos: usize) -> usize {
        (index / self.stride(pos)) % self.subsystems[pos].dim
    }

    fn distinct_positions(&self, wires: &[&str]) -> Result<Vec<usize>> {
        if wires.is_empty() {
            return Err(QsimError::EmptyWireSet);
        }
        let mut out = Vec::with_capacity(wires.len());
        for w in wires {
            let p = self.position(w)?;
            if out.contains(&p) {
                return Err(QsimError::RepeatedWire(w.to_string()));
            }
            out.push(p);
        }
        Ok(out)
    }
}

impl fmt::Display for RegisterLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.subsystems.iter().map(|s| format!("{}:{}", s.name, s.dim)).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// A 2×2 complex matrix acting on one qubit wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate1(pub [[Complex64; 2]; 2]);

impl Gate1 {
    pub fn hadamard() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Gate1([[h, h], [h, -h]])
    }

    pub fn pauli_x() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Gate1([[z, o], [o, z]])
    }
}

/// Normalized pure state over a [`RegisterLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    layout: RegisterLayout,
    amps: Vec<Amplitude>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOutcome {
    /// One bit per measured wire, in the order requested.
    pub bits: Vec<u8>,
    /// Born probability of this outcome before renormalization.
    pub probability: f64,
    pub post_state: PureState,
}

impl PureState {
    pub fn from_amplitudes(layout: RegisterLayout, amps: Vec<Amplitude>) -> Result<Self> {
        let expected = layout.total_dim();
        if amps.len() != expected {
            return Err(QsimError::LengthMismatch { expected, actual: amps.len() });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QsimError::NonFinite);
        }
        let norm = norm_of(&amps);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QsimError::NotNormalized(norm));
        }
        Ok(Self { layout, amps })
    }

    /// Rescales an arbitrary non-zero vector to unit norm.
    pub fn normalized(layout: RegisterLayout, mut amps: Vec<Amplitude>) -> Result<Self> {
        let norm = norm_of(&amps);
        if norm == 0.0 || !norm.is_finite() {
            return Err(QsimError::NotNormalized(norm));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(layout, amps)
    }

    /// Computational basis state with the given digit per subsystem.
    pub fn basis(layout: RegisterLayout, digits: &[usize]) -> Result<Self> {
        if digits.len() != layout.subsystems.len() {
            return Err(QsimError::LengthMismatch { expected: layout.subsystems.len(), actual: digits.len() });
        }
        let mut index = 0;
        for (pos, (&d, s)) in digits.iter().zip(&layout.subsystems).enumerate() {
            if d >= s.dim {
                return Err(QsimError::DimensionMismatch { left: d, right: s.dim });
            }
            index += d * layout.stride(pos);
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); layout.total_dim()];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { layout, amps })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[Amplitude] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm_of(&self.amps)
    }

    /// Joint state with `self`'s subsystems first.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let layout = self.layout.concat(&other.layout)?;
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(PureState { layout, amps })
    }

    pub fn apply_gate(&self, wire: &str, gate: &Gate1) -> Result<PureState> {
        let stride = self.layout.qubit_stride(wire)?;
        let m = &gate.0;
        let mut amps = self.amps.clone();
        for i in 0..amps.len() {
            if (i / stride) % 2 == 0 {
                let (x0, x1) = (amps[i], amps[i + stride]);
                amps[i] = m[0][0] * x0 + m[0][1] * x1;
                amps[i + stride] = m[1][0] * x0 + m[1][1] * x1;
            }
        }
        Ok(PureState { layout: self.layout.clone(), amps })
    }

    pub fn apply_hadamard(&self, wire: &str) -> Result<PureState> {
        self.apply_gate(wire, &Gate1::hadamard())
    }

    pub fn apply_x(&self, wire: &str) -> Result<PureState> {
        self.apply_gate(wire, &Gate1::pauli_x())
    }

    /// CNOT: flips `target` on every basis state whose `control` bit is 1.
    pub fn apply_cnot(&self, control: &str, target: &str) -> Result<PureState> {
        if control == target {
            return Err(QsimError::SameWire(control.to_string()));
        }
        let cs = self.layout.qubit_stride(control)?;
        let ts = self.layout.qubit_stride(target)?;
        let mut amps = self.amps.clone();
        for i in 0..amps.len() {
            if (i / cs) % 2 == 1 && (i / ts) % 2 == 0 {
                amps.swap(i, i + ts);
            }
        }
        Ok(PureState { layout: self.layout.clone(), amps })
    }

    /// Index of `i` into the outcome table for `strides` (first wire most significant).
    fn outcome_index(i: usize, strides: &[usize]) -> usize {
        strides.iter().fold(0, |acc, &s| (acc << 1) | ((i / s) % 2))
    }

    fn qubit_strides(&self, wires: &[&str]) -> Result<Vec<usize>> {
        self.layout.distinct_positions(wires)?;
        wires.iter().map(|w| self.layout.qubit_stride(w)).collect()
    }

    /// Born probabilities of every outcome on `wires`, indexed with the first
    /// wire as the most significant bit.
    pub fn outcome_probabilities(&self, wires: &[&str]) -> Result<Vec<f64>> {
        let strides = self.qubit_strides(wires)?;
        let mut probs = vec![0.0; 1 << wires.len()];
        for (i, a) in self.amps.iter().enumerate() {
            probs[Self::outcome_index(i, &strides)] += a.norm_sqr();
        }
        Ok(probs)
    }

    /// Projects `wires` onto `bits` and renormalizes. Returns the branch
    /// probability alongside the post-state.
    pub fn project(&self, wires: &[&str], bits: &[u8]) -> Result<(f64, PureState)> {
        let strides = self.qubit_strides(wires)?;
        if bits.len() != wires.len() {
            return Err(QsimError::LengthMismatch { expected: wires.len(), actual: bits.len() });
        }
        let want = bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1));
        let mut amps = self.amps.clone();
        for (i, a) in amps.iter_mut().enumerate() {
            if Self::outcome_index(i, &strides) != want {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        let p = norm_of(&amps).powi(2);
        if p == 0.0 {
            return Err(QsimError::ZeroProbability(bits.to_vec()));
        }
        let n = p.sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
        Ok((p, PureState { layout: self.layout.clone(), amps }))
    }

    /// Samples a computational-basis measurement of `wires`.
    pub fn measure<R: Rng + ?Sized>(&self, wires: &[&str], rng: &mut R) -> Result<MeasurementOutcome> {
        let probs = self.outcome_probabilities(wires)?;
        let u: f64 = rng.random();
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            chosen = Some(k);
            acc += p / total;
            if u < acc {
                break;
            }
        }
        let k = chosen.ok_or(QsimError::ZeroProbability(Vec::new()))?;
        let n = wires.len();
        let bits: Vec<u8> = (0..n).map(|j| ((k >> (n - 1 - j)) & 1) as u8).collect();
        let (probability, post_state) = self.project(wires, &bits)?;
        Ok(MeasurementOutcome { bits, probability, post_state })
    }

    /// Partial trace onto `keep`. The returned matrix indexes the kept
    /// subsystems in the order given, first most significant.
    pub fn reduced_density(&self, keep: &[&str]) -> Result<DensityMatrix> {
        let keep_pos = self.layout.distinct_positions(keep)?;
        let subs = &self.layout.subsystems;
        let rest_pos: Vec<usize> = (0..subs.len()).filter(|p| !keep_pos.contains(p)).collect();
        let keep_dim: usize = keep_pos.iter().map(|&p| subs[p].dim).product();
        let rest_dim: usize = rest_pos.iter().map(|&p| subs[p].dim).product();

        // Rows indexed by the traced-out part, columns by the kept part.
        let mut m = vec![Complex64::new(0.0, 0.0); rest_dim * keep_dim];
        for (i, a) in self.amps.iter().enumerate() {
            let k = keep_pos.iter().fold(0, |acc, &p| acc * subs[p].dim + self.layout.digit(i, p));
            let r = rest_pos.iter().fold(0, |acc, &p| acc * subs[p].dim + self.layout.digit(i, p));
            m[r * keep_dim + k] = *a;
        }
        let mut entries = vec![Complex64::new(0.0, 0.0); keep_dim * keep_dim];
        for r in 0..rest_dim {
            let row = &m[r * keep_dim..(r + 1) * keep_dim];
            for (k1, a1) in row.iter().enumerate() {
                if *a1 == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (k2, a2) in row.iter().enumerate() {
                    entries[k1 * keep_dim + k2] += a1 * a2.conj();
                }
            }
        }
        Ok(DensityMatrix { dim: keep_dim, entries })
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(QsimError::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// Same state with subsystems permuted into `order`.
    pub fn reorder(&self, order: &[&str]) -> Result<PureState> {
        let positions = self.layout.distinct_positions(order)?;
        if positions.len() != self.layout.subsystems.len() {
            return Err(QsimError::LengthMismatch { expected: self.layout.subsystems.len(), actual: positions.len() });
        }
        let layout = RegisterLayout::new(
            positions.iter().map(|&p| (self.layout.subsystems[p].name.clone(), self.layout.subsystems[p].dim)),
        )?;
        let mut amps = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (i, a) in self.amps.iter().enumerate() {
            let j = positions
                .iter()
                .enumerate()
                .fold(0, |acc, (new_pos, &old_pos)| acc + self.layout.digit(i, old_pos) * layout.stride(new_pos));
            amps[j] = *a;
        }
        Ok(PureState { layout, amps })
    }

    /// Removes qubit wires that sit in a definite computational basis state
    /// (for example right after measuring them). Returns the bits they held.
    pub fn discard_basis_wires(&self, wires: &[&str]) -> Result<(Vec<u8>, PureState)> {
        let probs = self.outcome_probabilities(wires)?;
        let (k, p) =
            probs.iter().copied().enumerate().max_by(|x, y| x.1.total_cmp(&y.1)).expect("at least one outcome");
        if (p - 1.0).abs() > NORM_TOLERANCE {
            return Err(QsimError::NotInBasisState(wires.iter().map(|w| w.to_string()).collect()));
        }
        let n = wires.len();
        let bits: Vec<u8> = (0..n).map(|j| ((k >> (n - 1 - j)) & 1) as u8).collect();
        let strides = self.qubit_strides(wires)?;
        let layout = RegisterLayout::new(
            self.layout
                .subsystems
                .iter()
                .filter(|s| !wires.contains(&s.name.as_str()))
                .map(|s| (s.name.clone(), s.dim)),
        )?;
        let amps: Vec<Amplitude> = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| Self::outcome_index(*i, &strides) == k)
            .map(|(_, a)| *a)
            .collect();
        Ok((bits, PureState::normalized(layout, amps)?))
    }
}

fn norm_of(amps: &[Amplitude]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// |⟨s1|s2⟩|².
pub fn fidelity(s1: &PureState, s2: &PureState) -> Result<f64> {
    Ok(s1.inner(s2)?.norm_sqr().min(1.0))
}

pub fn trace_distance(m1: &DensityMatrix, m2: &DensityMatrix) -> Result<f64> {
    m1.trace_distance(m2)
}

/// Row-major square density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    /// Validates hermiticity, unit trace and positivity.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(QsimError::LengthMismatch { expected: dim * dim, actual: entries.len() });
        }
        let m = Self { dim, entries };
        let tr = m.trace();
        if !m.is_hermitian(NORM_TOLERANCE) || (tr.re - 1.0).abs() > NORM_TOLERANCE {
            return Err(QsimError::NotNormalized(tr.re));
        }
        if m.eigenvalues().iter().any(|&l| l < -NORM_TOLERANCE) {
            return Err(QsimError::NotNormalized(tr.re));
        }
        Ok(m)
    }

    pub fn from_pure(state: &PureState) -> Self {
        let d = state.dim();
        let mut entries = Vec::with_capacity(d * d);
        for a in state.amplitudes() {
            for b in state.amplitudes() {
                entries.push(a * b.conj());
            }
        }
        Self { dim: d, entries }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Complex64::new(1.0 / dim as f64, 0.0);
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        // ρ is Hermitian, so Tr(ρ²) = Σ |ρ_ij|².
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol))
    }

    /// ⟨ψ|ρ|ψ⟩, the fidelity of this state with a pure reference.
    pub fn expectation(&self, psi: &PureState) -> Result<f64> {
        if psi.dim() != self.dim {
            return Err(QsimError::DimensionMismatch { left: self.dim, right: psi.dim() });
        }
        let a = psi.amplitudes();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += a[i].conj() * self.get(i, j) * a[j];
            }
        }
        Ok(acc.re)
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim != other.dim {
            return Err(QsimError::DimensionMismatch { left: self.dim, right: other.dim });
        }
        Ok(self.entries.iter().zip(&other.entries).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(self.dim, &self.entries)
    }

    /// ½ Σ |λ_i(ρ − σ)|.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim != other.dim {
            return Err(QsimError::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let diff: Vec<Complex64> = self.entries.iter().zip(&other.entries).map(|(x, y)| x - y).collect();
        let d = 0.5 * hermitian_eigenvalues(self.dim, &diff).iter().map(|l| l.abs()).sum::<f64>();
        Ok(d.clamp(0.0, 1.0))
    }
}

fn hermitian_eigenvalues(dim: usize, entries: &[Complex64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(dim, dim, entries);
    // Symmetrize away rounding noise so the Hermitian solver sees an exact input.
    let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_state(layout: RegisterLayout, raw: &[(f64, f64)]) -> PureState {
        let amps = raw.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        PureState::normalized(layout, amps).unwrap()
    }

    fn assert_close(a: &PureState, b: &PureState, tol: f64) {
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() <= tol, "{x} vs {y}");
        }
    }

    fn bell_bar(q: u8, w: [&str; 2]) -> PureState {
        let layout = RegisterLayout::qubits(&w).unwrap();
        let mut amps = vec![c(0.0); 4];
        amps[usize::from(q)] = c(FRAC_1_SQRT_2);
        amps[usize::from(3 - q)] = c(FRAC_1_SQRT_2);
        PureState::from_amplitudes(layout, amps).unwrap()
    }

    #[test]
    fn layout_rejects_duplicates_and_zero_dims() {
        assert_eq!(RegisterLayout::qubits(&["a", "a"]), Err(QsimError::DuplicateSubsystem("a".into())));
        assert!(matches!(RegisterLayout::new([("e", 0)]), Err(QsimError::ZeroDimension(_))));
        let l = RegisterLayout::new([("a", 2), ("b", 2), ("e", 8)]).unwrap();
        assert_eq!(l.total_dim(), 32);
        assert_eq!(l.stride(0), 16);
        assert_eq!(l.stride(2), 1);
    }

    #[test]
    fn tensor_of_basis_states() {
        let z = PureState::basis(RegisterLayout::qubits(&["x"]).unwrap(), &[0]).unwrap();
        let z2 = PureState::basis(RegisterLayout::qubits(&["y"]).unwrap(), &[0]).unwrap();
        let t = z.tensor(&z2).unwrap();
        assert_eq!(t.amplitudes()[0], c(1.0));
        assert_eq!(t.layout().names().collect::<Vec<_>>(), vec!["x", "y"]);
        assert!(matches!(z.tensor(&z), Err(QsimError::DuplicateSubsystem(_))));
    }

    #[test]
    fn hadamard_on_basis_states() {
        let l = RegisterLayout::qubits(&["x"]).unwrap();
        let plus = PureState::basis(l.clone(), &[0]).unwrap().apply_hadamard("x").unwrap();
        assert!((plus.amplitudes()[0] - c(FRAC_1_SQRT_2)).norm() < 1e-15);
        assert!((plus.amplitudes()[1] - c(FRAC_1_SQRT_2)).norm() < 1e-15);
        let minus = PureState::basis(l, &[1]).unwrap().apply_hadamard("x").unwrap();
        assert!((minus.amplitudes()[0] - c(FRAC_1_SQRT_2)).norm() < 1e-15);
        assert!((minus.amplitudes()[1] + c(FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn gate_errors() {
        let l = RegisterLayout::new([("x", 2), ("e", 3)]).unwrap();
        let s = PureState::basis(l, &[0, 0]).unwrap();
        assert!(matches!(s.apply_hadamard("nope"), Err(QsimError::UnknownWire(_))));
        assert!(matches!(s.apply_hadamard("e"), Err(QsimError::NotAQubit { .. })));
        assert!(matches!(s.apply_cnot("x", "x"), Err(QsimError::SameWire(_))));
        assert!(matches!(s.apply_cnot("x", "e"), Err(QsimError::NotAQubit { .. })));
    }

    #[test]
    fn cnot_truth_table() {
        let l = RegisterLayout::qubits(&["a", "w1"]).unwrap();
        let s = PureState::basis(l.clone(), &[1, 0]).unwrap().apply_cnot("a", "w1").unwrap();
        assert_eq!(s, PureState::basis(l.clone(), &[1, 1]).unwrap());
        for q in 0..2 {
            let s = PureState::basis(l.clone(), &[0, q]).unwrap();
            assert_eq!(s.apply_cnot("a", "w1").unwrap(), s);
        }
    }

    #[test]
    fn barred_states_add_under_paired_cnots() {
        for q in 0..2u8 {
            for q2 in 0..2u8 {
                let input = bell_bar(q, ["a", "b"]).tensor(&bell_bar(q2, ["w1", "w2"])).unwrap();
                let out = input.apply_cnot("a", "w1").unwrap().apply_cnot("b", "w2").unwrap();
                let expected = bell_bar(q, ["a", "b"]).tensor(&bell_bar(q ^ q2, ["w1", "w2"])).unwrap();
                assert!(fidelity(&out, &expected).unwrap() > 1.0 - IDENTITY_TOLERANCE);
                assert_close(&out, &expected, IDENTITY_TOLERANCE);
            }
        }
    }

    #[test]
    fn measuring_a_basis_state_is_deterministic() {
        let l = RegisterLayout::qubits(&["w1", "w2"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for q in 0..2 {
            let s = PureState::basis(l.clone(), &[0, q]).unwrap();
            let out = s.measure(&["w1"], &mut rng).unwrap();
            assert_eq!(out.bits, vec![0]);
            assert_eq!(out.probability, 1.0);
        }
    }

    #[test]
    fn measurement_frequencies_of_plus_state() {
        let l = RegisterLayout::qubits(&["x"]).unwrap();
        let plus = PureState::basis(l, &[0]).unwrap().apply_hadamard("x").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let ones = (0..n).filter(|_| plus.measure(&["x"], &mut rng).unwrap().bits[0] == 1).count();
        let freq = ones as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * se, "freq {freq}");
    }

    #[test]
    fn zero_probability_projection_is_an_error() {
        let l = RegisterLayout::qubits(&["x"]).unwrap();
        let s = PureState::basis(l, &[0]).unwrap();
        assert_eq!(s.project(&["x"], &[1]).unwrap_err(), QsimError::ZeroProbability(vec![1]));
    }

    #[test]
    fn reduced_density_of_product_state() {
        let l = RegisterLayout::qubits(&["w1", "w2"]).unwrap();
        let s = PureState::basis(l, &[0, 0]).unwrap();
        let rho = s.reduced_density(&["w1"]).unwrap();
        assert_eq!(rho.get(0, 0), c(1.0));
        assert_eq!(rho.get(1, 1), c(0.0));
        assert_eq!(s.reduced_density(&[]), Err(QsimError::EmptyWireSet));
    }

    /// Brute-force partial trace by explicit basis sums over digit tuples.
    fn partial_trace_oracle(s: &PureState, keep: &[usize]) -> Vec<Complex64> {
        let dims: Vec<usize> = s.layout().subsystems().iter().map(|x| x.dim).collect();
        let n = dims.len();
        let digits_of = |mut i: usize| {
            let mut d = vec![0; n];
            for p in (0..n).rev() {
                d[p] = i % dims[p];
                i /= dims[p];
            }
            d
        };
        let kd: usize = keep.iter().map(|&p| dims[p]).product();
        let mut out = vec![c(0.0); kd * kd];
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                let (di, dj) = (digits_of(i), digits_of(j));
                let traced_equal = (0..n).filter(|p| !keep.contains(p)).all(|p| di[p] == dj[p]);
                if !traced_equal {
                    continue;
                }
                let ki = keep.iter().fold(0, |acc, &p| acc * dims[p] + di[p]);
                let kj = keep.iter().fold(0, |acc, &p| acc * dims[p] + dj[p]);
                out[ki * kd + kj] += s.amplitudes()[i] * s.amplitudes()[j].conj();
            }
        }
        out
    }

    #[test]
    fn single_wire_density_matrix_stays_valid() {
        let l = RegisterLayout::qubits(&["x"]).unwrap();
        let plus = PureState::basis(l, &[0]).unwrap().apply_hadamard("x").unwrap();
        let rho = DensityMatrix::from_pure(&plus);
        assert!(DensityMatrix::new(2, rho.entries().to_vec()).is_ok());
        assert!(DensityMatrix::new(2, vec![c(2.0), c(0.0), c(0.0), c(0.0)]).is_err());
        let mm = DensityMatrix::maximally_mixed(4);
        assert_eq!(mm.trace_distance(&mm).unwrap(), 0.0);
        assert!((mm.purity() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fidelity_dimension_mismatch() {
        let a = PureState::basis(RegisterLayout::qubits(&["x"]).unwrap(), &[0]).unwrap();
        let b = PureState::basis(RegisterLayout::qubits(&["x", "y"]).unwrap(), &[0, 0]).unwrap();
        assert!(matches!(fidelity(&a, &b), Err(QsimError::DimensionMismatch { .. })));
        let m2 = DensityMatrix::maximally_mixed(2);
        let m4 = DensityMatrix::maximally_mixed(4);
        assert!(trace_distance(&m2, &m4).is_err());
    }

    #[test]
    fn reorder_and_discard() {
        let l = RegisterLayout::new([("a", 2), ("e", 3), ("w1", 2)]).unwrap();
        let s = PureState::basis(l, &[1, 2, 1]).unwrap();
        let r = s.reorder(&["a", "w1", "e"]).unwrap();
        // digits (a, w1, e) = (1, 1, 2) with strides (6, 3, 1)
        assert_eq!(r.amplitudes()[6 + 3 + 2], c(1.0));
        let (bits, rest) = r.discard_basis_wires(&["w1"]).unwrap();
        assert_eq!(bits, vec![1]);
        assert_eq!(rest.layout().names().collect::<Vec<_>>(), vec!["a", "e"]);
        let plus = PureState::basis(RegisterLayout::qubits(&["x", "y"]).unwrap(), &[0, 0])
            .unwrap()
            .apply_hadamard("x")
            .unwrap();
        assert!(matches!(plus.discard_basis_wires(&["x"]), Err(QsimError::NotInBasisState(_))));
    }

    fn amps_strategy(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
            .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn tensor_preserves_norm(a in amps_strategy(4), b in amps_strategy(6)) {
            let s1 = random_state(RegisterLayout::qubits(&["a", "b"]).unwrap(), &a);
            let s2 = random_state(RegisterLayout::new([("e", 6)]).unwrap(), &b);
            let t = s1.tensor(&s2).unwrap();
            prop_assert!((t.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gates_are_unitary_and_hadamard_is_an_involution(raw in amps_strategy(24)) {
            let l = RegisterLayout::new([("a", 2), ("b", 2), ("e", 3), ("w1", 2)]).unwrap();
            let s = random_state(l, &raw);
            let h = s.apply_hadamard("b").unwrap();
            prop_assert!((h.norm() - 1.0).abs() < IDENTITY_TOLERANCE);
            let hh = h.apply_hadamard("b").unwrap();
            for (x, y) in hh.amplitudes().iter().zip(s.amplitudes()) {
                prop_assert!((x - y).norm() < IDENTITY_TOLERANCE);
            }
            let cx = s.apply_cnot("w1", "a").unwrap();
            prop_assert!((cx.norm() - 1.0).abs() < IDENTITY_TOLERANCE);
        }

        #[test]
        fn outcome_probabilities_sum_to_one(raw in amps_strategy(24)) {
            let l = RegisterLayout::new([("a", 2), ("b", 2), ("e", 3), ("w1", 2)]).unwrap();
            let s = random_state(l, &raw);
            for wires in [vec!["a"], vec!["w1", "b"], vec!["a", "b", "w1"]] {
                let total: f64 = s.outcome_probabilities(&wires).unwrap().iter().sum();
                prop_assert!((total - 1.0).abs() < NORM_TOLERANCE);
            }
        }

        #[test]
        fn repeated_measurement_agrees(raw in amps_strategy(8), seed in any::<u64>()) {
            let s = random_state(RegisterLayout::qubits(&["a", "b", "c"]).unwrap(), &raw);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first = s.measure(&["c", "a"], &mut rng).unwrap();
            prop_assert!((first.post_state.norm() - 1.0).abs() < NORM_TOLERANCE);
            let second = first.post_state.measure(&["c", "a"], &mut rng).unwrap();
            prop_assert_eq!(first.bits, second.bits);
            prop_assert!((second.probability - 1.0).abs() < NORM_TOLERANCE);
        }

        #[test]
        fn partial_trace_matches_index_sum_oracle(raw in amps_strategy(24)) {
            let l = RegisterLayout::new([("a", 2), ("e", 3), ("b", 2), ("w1", 2)]).unwrap();
            let s = random_state(l, &raw);
            for keep in [vec!["e"], vec!["w1", "a"], vec!["b", "e", "w1"]] {
                let rho = s.reduced_density(&keep).unwrap();
                let pos: Vec<usize> = keep.iter().map(|w| s.layout().position(w).unwrap()).collect();
                let oracle = partial_trace_oracle(&s, &pos);
                for (x, y) in rho.entries().iter().zip(&oracle) {
                    prop_assert!((x - y).norm() < 1e-12);
                }
                prop_assert!((rho.trace().re - 1.0).abs() < NORM_TOLERANCE);
                prop_assert!(rho.is_hermitian(NORM_TOLERANCE));
            }
        }

        #[test]
        fn gate_locality_across_a_product_cut(left in amps_strategy(4), right in amps_strategy(6)) {
            let s1 = random_state(RegisterLayout::qubits(&["a", "b"]).unwrap(), &left);
            let s2 = random_state(RegisterLayout::new([("c", 2), ("e", 3)]).unwrap(), &right);
            let s = s1.tensor(&s2).unwrap();
            let before = s.reduced_density(&["c", "e"]).unwrap();
            let after = s.apply_hadamard("a").unwrap().apply_cnot("b", "a").unwrap()
                .reduced_density(&["c", "e"]).unwrap();
            prop_assert!(before.max_abs_diff(&after).unwrap() < IDENTITY_TOLERANCE);
        }

        #[test]
        fn trace_distance_is_bounded(a in amps_strategy(4), b in amps_strategy(4)) {
            let l = RegisterLayout::qubits(&["a", "b"]).unwrap();
            let r1 = random_state(l.clone(), &a).reduced_density(&["a"]).unwrap();
            let r2 = random_state(l, &b).reduced_density(&["a"]).unwrap();
            let d = r1.trace_distance(&r2).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!(r1.eigenvalues().iter().all(|&l| l > -NORM_TOLERANCE));
        }
    }
}
