//! Gate-model circuit representation with exact statevector simulation,
//! optional finite-shot sampling, and full-unitary reconstruction for small
//! widths.
//!
//! Basis convention: qubit 0 is the least significant bit of the basis index.
//! This is stated once here and relied on everywhere else.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::numerics::{max_abs, CMatrix};

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("statevector/circuit width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("matrix block is not unitary (deviation {0:.3e})")]
    NonUnitaryBlock(f64),
    #[error("qubit index {0} out of range for width {1}")]
    QubitOutOfRange(usize, usize),
    #[error("duplicate qubit index {0} in gate")]
    DuplicateQubit(usize),
    #[error("block dimension {0} does not match {1} qubits")]
    BlockDimension(usize, usize),
    #[error("circuit contains no measurement")]
    NoMeasurement,
    #[error("circuit is too wide for unitary reconstruction: {0} > {1}")]
    TooWide(usize, usize),
    #[error("circuit contains a measurement; unitary is undefined")]
    ContainsMeasurement,
}

#[derive(Debug, Clone)]
pub enum Gate {
    H(usize),
    X(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Phase(usize, f64),
    Cnot {
        control: usize,
        target: usize,
    },
    CPhase {
        control: usize,
        target: usize,
        theta: f64,
    },
    Swap(usize, usize),
    /// Matrix-specified gate over an ordered qubit list; `qubits[0]` is the
    /// least significant bit of the block's basis index.
    UnitaryBlock {
        matrix: CMatrix,
        qubits: Vec<usize>,
    },
    ControlledUnitaryBlock {
        matrix: CMatrix,
        control: usize,
        qubits: Vec<usize>,
    },
    Measure {
        qubit: usize,
        cbit: usize,
    },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::H(q)
            | Gate::X(q)
            | Gate::Rx(q, _)
            | Gate::Ry(q, _)
            | Gate::Rz(q, _)
            | Gate::Phase(q, _) => vec![*q],
            Gate::Cnot { control, target } => vec![*control, *target],
            Gate::CPhase {
                control, target, ..
            } => vec![*control, *target],
            Gate::Swap(a, b) => vec![*a, *b],
            Gate::UnitaryBlock { qubits, .. } => qubits.clone(),
            Gate::ControlledUnitaryBlock {
                control, qubits, ..
            } => {
                let mut qs = qubits.clone();
                qs.push(*control);
                qs
            }
            Gate::Measure { qubit, .. } => vec![*qubit],
        }
    }

    /// Inverse gate. Measurements have none.
    pub fn dagger(&self) -> Result<Gate, CircuitError> {
        Ok(match self {
            Gate::H(q) => Gate::H(*q),
            Gate::X(q) => Gate::X(*q),
            Gate::Rx(q, t) => Gate::Rx(*q, -t),
            Gate::Ry(q, t) => Gate::Ry(*q, -t),
            Gate::Rz(q, t) => Gate::Rz(*q, -t),
            Gate::Phase(q, t) => Gate::Phase(*q, -t),
            Gate::Cnot { control, target } => Gate::Cnot {
                control: *control,
                target: *target,
            },
            Gate::CPhase {
                control,
                target,
                theta,
            } => Gate::CPhase {
                control: *control,
                target: *target,
                theta: -theta,
            },
            Gate::Swap(a, b) => Gate::Swap(*a, *b),
            Gate::UnitaryBlock { matrix, qubits } => Gate::UnitaryBlock {
                matrix: matrix.adjoint(),
                qubits: qubits.clone(),
            },
            Gate::ControlledUnitaryBlock {
                matrix,
                control,
                qubits,
            } => Gate::ControlledUnitaryBlock {
                matrix: matrix.adjoint(),
                control: *control,
                qubits: qubits.clone(),
            },
            Gate::Measure { .. } => return Err(CircuitError::ContainsMeasurement),
        })
    }

    /// Same gate acting on remapped qubit indices (`map[i]` is the new index
    /// of old qubit `i`).
    pub fn remap(&self, map: &[usize]) -> Gate {
        let m = |q: usize| map[q];
        match self {
            Gate::H(q) => Gate::H(m(*q)),
            Gate::X(q) => Gate::X(m(*q)),
            Gate::Rx(q, t) => Gate::Rx(m(*q), *t),
            Gate::Ry(q, t) => Gate::Ry(m(*q), *t),
            Gate::Rz(q, t) => Gate::Rz(m(*q), *t),
            Gate::Phase(q, t) => Gate::Phase(m(*q), *t),
            Gate::Cnot { control, target } => Gate::Cnot {
                control: m(*control),
                target: m(*target),
            },
            Gate::CPhase {
                control,
                target,
                theta,
            } => Gate::CPhase {
                control: m(*control),
                target: m(*target),
                theta: *theta,
            },
            Gate::Swap(a, b) => Gate::Swap(m(*a), m(*b)),
            Gate::UnitaryBlock { matrix, qubits } => Gate::UnitaryBlock {
                matrix: matrix.clone(),
                qubits: qubits.iter().map(|&q| m(q)).collect(),
            },
            Gate::ControlledUnitaryBlock {
                matrix,
                control,
                qubits,
            } => Gate::ControlledUnitaryBlock {
                matrix: matrix.clone(),
                control: m(*control),
                qubits: qubits.iter().map(|&q| m(q)).collect(),
            },
            Gate::Measure { qubit, cbit } => Gate::Measure {
                qubit: m(*qubit),
                cbit: *cbit,
            },
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Gate::H(_) => "h",
            Gate::X(_) => "x",
            Gate::Rx(..) => "rx",
            Gate::Ry(..) => "ry",
            Gate::Rz(..) => "rz",
            Gate::Phase(..) => "phase",
            Gate::Cnot { .. } => "cnot",
            Gate::CPhase { .. } => "cphase",
            Gate::Swap(..) => "swap",
            Gate::UnitaryBlock { .. } => "unitary",
            Gate::ControlledUnitaryBlock { .. } => "controlled_unitary",
            Gate::Measure { .. } => "measure",
        }
    }

    fn angle(&self) -> Option<f64> {
        match self {
            Gate::Rx(_, t) | Gate::Ry(_, t) | Gate::Rz(_, t) | Gate::Phase(_, t) => Some(*t),
            Gate::CPhase { theta, .. } => Some(*theta),
            _ => None,
        }
    }
}

pub fn check_unitary(u: &CMatrix, tol: f64) -> Result<(), CircuitError> {
    let n = u.nrows();
    let dev = max_abs(&(u.adjoint() * u - CMatrix::identity(n, n)));
    if dev > tol {
        return Err(CircuitError::NonUnitaryBlock(dev));
    }
    Ok(())
}

/// Ordered gate sequence over a fixed number of qubits.
#[derive(Debug, Clone)]
pub struct Circuit {
    pub width: usize,
    pub gates: Vec<Gate>,
    pub classical_bits: usize,
}

impl Circuit {
    pub fn new(width: usize) -> Self {
        Circuit {
            width,
            gates: Vec::new(),
            classical_bits: 0,
        }
    }

    pub fn push(&mut self, gate: Gate) -> Result<(), CircuitError> {
        let qs = gate.qubits();
        let mut seen = std::collections::HashSet::new();
        for &q in &qs {
            if q >= self.width {
                return Err(CircuitError::QubitOutOfRange(q, self.width));
            }
            if !seen.insert(q) {
                return Err(CircuitError::DuplicateQubit(q));
            }
        }
        match &gate {
            Gate::UnitaryBlock { matrix, qubits }
            | Gate::ControlledUnitaryBlock { matrix, qubits, .. } => {
                let dim = 1usize << qubits.len();
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(CircuitError::BlockDimension(matrix.nrows(), qubits.len()));
                }
                check_unitary(matrix, 1e-8)?;
            }
            Gate::Measure { cbit, .. } => {
                self.classical_bits = self.classical_bits.max(cbit + 1);
            }
            _ => {}
        }
        self.gates.push(gate);
        Ok(())
    }

    pub fn extend(&mut self, gates: impl IntoIterator<Item = Gate>) -> Result<(), CircuitError> {
        for g in gates {
            self.push(g)?;
        }
        Ok(())
    }

    pub fn append(&mut self, other: &Circuit) -> Result<(), CircuitError> {
        self.extend(other.gates.iter().cloned())
    }

    /// Inverse circuit (reversed daggered gates). Fails on measurements.
    pub fn dagger(&self) -> Result<Circuit, CircuitError> {
        let mut inv = Circuit::new(self.width);
        for g in self.gates.iter().rev() {
            inv.push(g.dagger()?)?;
        }
        Ok(inv)
    }

    pub fn has_measurement(&self) -> bool {
        self.gates.iter().any(|g| matches!(g, Gate::Measure { .. }))
    }

    /// Greedy layered depth over the gate list.
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.width];
        let mut depth = 0;
        for g in &self.gates {
            let qs = g.qubits();
            let d = qs.iter().map(|&q| level[q]).max().unwrap_or(0) + 1;
            for &q in &qs {
                level[q] = d;
            }
            depth = depth.max(d);
        }
        depth
    }

    /// Number of gates acting on exactly two qubits.
    pub fn two_qubit_count(&self) -> usize {
        self.gates.iter().filter(|g| g.qubits().len() == 2).count()
    }

    /// Two-qubit cost with matrix-specified blocks weighted by the minimum
    /// CNOT count a general unitary of that width requires (used when
    /// comparing exact blocks against compiled ones).
    pub fn two_qubit_weight(&self) -> usize {
        self.gates
            .iter()
            .map(|g| {
                let k = g.qubits().len();
                match (g, k) {
                    (Gate::Measure { .. }, _) | (_, 0 | 1) => 0,
                    (Gate::UnitaryBlock { .. } | Gate::ControlledUnitaryBlock { .. }, k)
                        if k > 2 =>
                    {
                        crate::aqc::cnot_lower_bound(k)
                    }
                    _ => 1,
                }
            })
            .sum()
    }

    /// JSON dump of the gate list for debugging.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct GateDump {
            kind: &'static str,
            qubits: Vec<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            angle: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            cbit: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            matrix: Option<Vec<Vec<[f64; 2]>>>,
        }
        let gates: Vec<GateDump> = self
            .gates
            .iter()
            .map(|g| {
                let matrix = match g {
                    Gate::UnitaryBlock { matrix, .. }
                    | Gate::ControlledUnitaryBlock { matrix, .. } => Some(
                        (0..matrix.nrows())
                            .map(|i| {
                                (0..matrix.ncols())
                                    .map(|j| [matrix[(i, j)].re, matrix[(i, j)].im])
                                    .collect()
                            })
                            .collect(),
                    ),
                    _ => None,
                };
                GateDump {
                    kind: g.kind_name(),
                    qubits: g.qubits(),
                    angle: g.angle(),
                    cbit: match g {
                        Gate::Measure { cbit, .. } => Some(*cbit),
                        _ => None,
                    },
                    matrix,
                }
            })
            .collect();
        serde_json::json!({
            "width": self.width,
            "classical_bits": self.classical_bits,
            "depth": self.depth(),
            "two_qubit_count": self.two_qubit_count(),
            "gates": gates,
        })
    }
}

/// Dense amplitude vector over `2^width` basis states, qubit 0 least
/// significant.
#[derive(Debug, Clone)]
pub struct Statevector {
    pub width: usize,
    pub amps: Vec<Complex64>,
}

impl Statevector {
    pub fn zero_state(width: usize) -> Self {
        let mut amps = vec![Complex64::ZERO; 1 << width];
        amps[0] = Complex64::ONE;
        Statevector { width, amps }
    }

    pub fn basis_state(width: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::ZERO; 1 << width];
        amps[index] = Complex64::ONE;
        Statevector { width, amps }
    }

    pub fn from_amplitudes(width: usize, amps: Vec<Complex64>) -> Self {
        assert_eq!(amps.len(), 1 << width);
        Statevector { width, amps }
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Statevector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Probability that `qubit` reads 1.
    pub fn prob_one(&self, qubit: usize) -> f64 {
        let mask = 1usize << qubit;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    fn apply_1q(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let mask = 1usize << q;
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[j] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    fn apply_block(&mut self, qubits: &[usize], matrix: &CMatrix, control: Option<usize>) {
        let k = qubits.len();
        let dim = 1usize << k;
        let mut block_mask = 0usize;
        for &q in qubits {
            block_mask |= 1 << q;
        }
        let cmask = control.map(|c| 1usize << c).unwrap_or(0);
        let mut sub = vec![Complex64::ZERO; dim];
        let mut out = vec![Complex64::ZERO; dim];
        // offsets of each block basis value within the full index
        let offsets: Vec<usize> = (0..dim)
            .map(|v| {
                let mut off = 0usize;
                for (bit, &q) in qubits.iter().enumerate() {
                    if v & (1 << bit) != 0 {
                        off |= 1 << q;
                    }
                }
                off
            })
            .collect();
        for base in 0..self.amps.len() {
            if base & block_mask != 0 {
                continue;
            }
            if base & cmask != cmask {
                continue;
            }
            for v in 0..dim {
                sub[v] = self.amps[base | offsets[v]];
            }
            for r in 0..dim {
                let mut acc = Complex64::ZERO;
                for cidx in 0..dim {
                    acc += matrix[(r, cidx)] * sub[cidx];
                }
                out[r] = acc;
            }
            for v in 0..dim {
                self.amps[base | offsets[v]] = out[v];
            }
        }
    }

    pub fn apply(&mut self, gate: &Gate) {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let zero = Complex64::ZERO;
        match gate {
            Gate::H(q) => self.apply_1q(*q, [[h, h], [h, -h]]),
            Gate::X(q) => self.apply_1q(*q, [[zero, Complex64::ONE], [Complex64::ONE, zero]]),
            Gate::Rx(q, t) => {
                let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
                let mi = Complex64::new(0.0, -s);
                self.apply_1q(
                    *q,
                    [[Complex64::new(c, 0.0), mi], [mi, Complex64::new(c, 0.0)]],
                );
            }
            Gate::Ry(q, t) => {
                let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
                self.apply_1q(
                    *q,
                    [
                        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                    ],
                );
            }
            Gate::Rz(q, t) => {
                let e0 = Complex64::from_polar(1.0, -t / 2.0);
                let e1 = Complex64::from_polar(1.0, t / 2.0);
                self.apply_1q(*q, [[e0, zero], [zero, e1]]);
            }
            Gate::Phase(q, t) => {
                let e = Complex64::from_polar(1.0, *t);
                self.apply_1q(*q, [[Complex64::ONE, zero], [zero, e]]);
            }
            Gate::Cnot { control, target } => {
                let (cm, tm) = (1usize << control, 1usize << target);
                for i in 0..self.amps.len() {
                    if i & cm != 0 && i & tm == 0 {
                        self.amps.swap(i, i | tm);
                    }
                }
            }
            Gate::CPhase {
                control,
                target,
                theta,
            } => {
                let e = Complex64::from_polar(1.0, *theta);
                let mask = (1usize << control) | (1usize << target);
                for i in 0..self.amps.len() {
                    if i & mask == mask {
                        self.amps[i] *= e;
                    }
                }
            }
            Gate::Swap(a, b) => {
                let (am, bm) = (1usize << a, 1usize << b);
                for i in 0..self.amps.len() {
                    // index with a=1,b=0 swaps with its a=0,b=1 partner
                    if i & am != 0 && i & bm == 0 {
                        self.amps.swap(i, i ^ am ^ bm);
                    }
                }
            }
            Gate::UnitaryBlock { matrix, qubits } => self.apply_block(qubits, matrix, None),
            Gate::ControlledUnitaryBlock {
                matrix,
                control,
                qubits,
            } => self.apply_block(qubits, matrix, Some(*control)),
            Gate::Measure { .. } => {} // deferred; sampling happens on the final state
        }
    }
}

/// Execute a circuit on an initial state. Measurements are deferred (the
/// returned state is the pre-measurement statevector).
pub fn run(circuit: &Circuit, initial: &Statevector) -> Result<Statevector, CircuitError> {
    if initial.width != circuit.width {
        return Err(CircuitError::WidthMismatch(initial.width, circuit.width));
    }
    let mut state = initial.clone();
    for g in &circuit.gates {
        state.apply(g);
    }
    Ok(state)
}

/// Draw `shots` samples of the measured classical bits from the Born
/// distribution of the circuit's final state. The PRNG is ChaCha8 seeded with
/// `seed`; all shots are drawn from that single stream in order, so a given
/// (circuit, shots, seed) triple always yields the same histogram.
pub fn sample(
    circuit: &Circuit,
    shots: u64,
    seed: u64,
) -> Result<HashMap<String, u64>, CircuitError> {
    let measures: Vec<(usize, usize)> = circuit
        .gates
        .iter()
        .filter_map(|g| match g {
            Gate::Measure { qubit, cbit } => Some((*qubit, *cbit)),
            _ => None,
        })
        .collect();
    if measures.is_empty() {
        return Err(CircuitError::NoMeasurement);
    }
    let state = run(circuit, &Statevector::zero_state(circuit.width))?;
    let nbits = circuit.classical_bits;
    // distribution over classical registers
    let mut probs = vec![0.0f64; 1 << nbits];
    for (i, a) in state.amps.iter().enumerate() {
        let p = a.norm_sqr();
        if p == 0.0 {
            continue;
        }
        let mut reg = 0usize;
        for &(q, c) in &measures {
            if i & (1 << q) != 0 {
                reg |= 1 << c;
            }
        }
        probs[reg] += p;
    }
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist: HashMap<String, u64> = HashMap::new();
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        let key: String = (0..nbits)
            .rev()
            .map(|b| if idx & (1 << b) != 0 { '1' } else { '0' })
            .collect();
        *hist.entry(key).or_insert(0) += 1;
    }
    Ok(hist)
}

const MAX_UNITARY_WIDTH: usize = 12;

/// Full unitary of a measurement-free circuit (width-guarded).
pub fn circuit_unitary(circuit: &Circuit) -> Result<CMatrix, CircuitError> {
    if circuit.width > MAX_UNITARY_WIDTH {
        return Err(CircuitError::TooWide(circuit.width, MAX_UNITARY_WIDTH));
    }
    if circuit.has_measurement() {
        return Err(CircuitError::ContainsMeasurement);
    }
    let dim = 1usize << circuit.width;
    let mut u = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let out = run(circuit, &Statevector::basis_state(circuit.width, col))?;
        for row in 0..dim {
            u[(row, col)] = out.amps[row];
        }
    }
    Ok(u)
}

/// `U^(2^k)` by repeated squaring, wrapped as a controlled block over
/// `qubits` (qubit list order: element 0 is the block's least significant
/// bit).
pub fn controlled_power(
    u: &CMatrix,
    k: u32,
    control: usize,
    qubits: Vec<usize>,
) -> Result<Gate, CircuitError> {
    check_unitary(u, 1e-8)?;
    let mut m = u.clone();
    for _ in 0..k {
        m = &m * &m;
    }
    Ok(Gate::ControlledUnitaryBlock {
        matrix: m,
        control,
        qubits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_circuit(width: usize, n_gates: usize, seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut circ = Circuit::new(width);
        for _ in 0..n_gates {
            let q = rng.random_range(0..width);
            let g = match rng.random_range(0..7) {
                0 => Gate::H(q),
                1 => Gate::X(q),
                2 => Gate::Rx(q, rng.random_range(-3.0..3.0)),
                3 => Gate::Ry(q, rng.random_range(-3.0..3.0)),
                4 => Gate::Rz(q, rng.random_range(-3.0..3.0)),
                5 => Gate::Phase(q, rng.random_range(-3.0..3.0)),
                _ if width >= 2 => {
                    let mut q2 = rng.random_range(0..width);
                    while q2 == q {
                        q2 = rng.random_range(0..width);
                    }
                    Gate::Cnot {
                        control: q,
                        target: q2,
                    }
                }
                _ => Gate::H(q),
            };
            circ.push(g).unwrap();
        }
        circ
    }

    fn random_state(width: usize, seed: u64) -> Statevector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amps: Vec<Complex64> = (0..1usize << width)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        Statevector::from_amplitudes(width, amps)
    }

    #[test]
    fn h_on_zero() {
        let mut circ = Circuit::new(1);
        circ.push(Gate::H(0)).unwrap();
        let out = run(&circ, &Statevector::zero_state(1)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.amps[0] - c(r, 0.)).norm() < 1e-12);
        assert!((out.amps[1] - c(r, 0.)).norm() < 1e-12);
    }

    #[test]
    fn cnot_control_q1() {
        // |10> means qubit 1 set, qubit 0 clear -> index 2
        let mut circ = Circuit::new(2);
        circ.push(Gate::Cnot {
            control: 1,
            target: 0,
        })
        .unwrap();
        let out = run(&circ, &Statevector::basis_state(2, 0b10)).unwrap();
        assert!((out.amps[0b11] - Complex64::ONE).norm() < 1e-12);
    }

    #[test]
    fn run_matches_unitary_product() {
        let circ = random_circuit(3, 20, 42);
        let u = circuit_unitary(&circ).unwrap();
        let psi = random_state(3, 43);
        let out = run(&circ, &psi).unwrap();
        let v = nalgebra::DVector::from_vec(psi.amps.clone());
        let expect = &u * v;
        for i in 0..8 {
            assert!((out.amps[i] - expect[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn sample_deterministic_outcome() {
        let mut circ = Circuit::new(1);
        circ.push(Gate::X(0)).unwrap();
        circ.push(Gate::Measure { qubit: 0, cbit: 0 }).unwrap();
        let hist = sample(&circ, 100, 1).unwrap();
        assert_eq!(hist.get("1"), Some(&100));
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn sample_h_within_binomial_bound() {
        let mut circ = Circuit::new(1);
        circ.push(Gate::H(0)).unwrap();
        circ.push(Gate::Measure { qubit: 0, cbit: 0 }).unwrap();
        let shots = 100_000u64;
        let hist = sample(&circ, shots, 7).unwrap();
        let f1 = *hist.get("1").unwrap_or(&0) as f64 / shots as f64;
        assert!((f1 - 0.5).abs() < 0.01, "f1 = {f1}");
    }

    #[test]
    fn sample_is_seed_stable() {
        let mut circ = random_circuit(3, 12, 9);
        for q in 0..3 {
            circ.push(Gate::Measure { qubit: q, cbit: q }).unwrap();
        }
        let a = sample(&circ, 5000, 123).unwrap();
        let b = sample(&circ, 5000, 123).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample(&Circuit::new(1), 10, 0),
            Err(CircuitError::NoMeasurement)
        ));
    }

    #[test]
    fn unitary_of_empty_and_x() {
        let circ = Circuit::new(1);
        let u = circuit_unitary(&circ).unwrap();
        assert!(max_abs(&(&u - CMatrix::identity(2, 2))) < 1e-12);
        let mut circ = Circuit::new(1);
        circ.push(Gate::X(0)).unwrap();
        let u = circuit_unitary(&circ).unwrap();
        assert!((u[(0, 1)] - Complex64::ONE).norm() < 1e-12);
        assert!((u[(1, 0)] - Complex64::ONE).norm() < 1e-12);
        assert!(u[(0, 0)].norm() < 1e-12 && u[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn unitary_is_unitary_on_qpe_style_circuit() {
        let mut circ = random_circuit(3, 25, 5);
        circ.push(Gate::CPhase {
            control: 0,
            target: 2,
            theta: 0.7,
        })
        .unwrap();
        circ.push(Gate::Swap(0, 2)).unwrap();
        let u = circuit_unitary(&circ).unwrap();
        assert!(max_abs(&(u.adjoint() * &u - CMatrix::identity(8, 8))) < 1e-10);
    }

    #[test]
    fn controlled_power_phase_addition() {
        // Z^2 = I
        let z = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::ONE,
            -Complex64::ONE,
        ]));
        let g = controlled_power(&z, 1, 1, vec![0]).unwrap();
        if let Gate::ControlledUnitaryBlock { matrix, .. } = &g {
            assert!(max_abs(&(matrix - CMatrix::identity(2, 2))) < 1e-12);
        } else {
            panic!("wrong gate kind");
        }
        // Phase(pi/4)^4 = Phase(pi)
        let p = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::ONE,
            Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
        ]));
        let g = controlled_power(&p, 2, 1, vec![0]).unwrap();
        if let Gate::ControlledUnitaryBlock { matrix, .. } = &g {
            assert!(
                (matrix[(1, 1)] - Complex64::from_polar(1.0, std::f64::consts::PI)).norm() < 1e-12
            );
        } else {
            panic!("wrong gate kind");
        }
    }

    #[test]
    fn controlled_power_matches_sequential_application() {
        let circ = random_circuit(2, 15, 77);
        let u = circuit_unitary(&circ).unwrap();
        let g = controlled_power(&u, 3, 2, vec![0, 1]).unwrap();
        let mut big = Circuit::new(3);
        big.push(g).unwrap();
        let mut seq = Circuit::new(3);
        for _ in 0..8 {
            seq.push(Gate::ControlledUnitaryBlock {
                matrix: u.clone(),
                control: 2,
                qubits: vec![0, 1],
            })
            .unwrap();
        }
        let ub = circuit_unitary(&big).unwrap();
        let us = circuit_unitary(&seq).unwrap();
        assert!(max_abs(&(&ub - &us)) < 1e-9);
    }

    #[test]
    fn swap_gate_swaps() {
        let mut circ = Circuit::new(2);
        circ.push(Gate::Swap(0, 1)).unwrap();
        let out = run(&circ, &Statevector::basis_state(2, 0b01)).unwrap();
        assert!((out.amps[0b10] - Complex64::ONE).norm() < 1e-12);
        let out = run(&circ, &Statevector::basis_state(2, 0b10)).unwrap();
        assert!((out.amps[0b01] - Complex64::ONE).norm() < 1e-12);
    }

    #[test]
    fn block_on_scattered_qubits_matches_dense() {
        // apply a random 2-qubit block on qubits (0, 2) of a 3-qubit register
        let sub = random_circuit(2, 10, 31);
        let u = circuit_unitary(&sub).unwrap();
        let mut circ = Circuit::new(3);
        circ.push(Gate::UnitaryBlock {
            matrix: u.clone(),
            qubits: vec![0, 2],
        })
        .unwrap();
        let got = circuit_unitary(&circ).unwrap();
        // dense reference: U_{(0,2)} = sum over qubit-1 value of identity
        let mut expect = CMatrix::zeros(8, 8);
        for r in 0..8usize {
            for cidx in 0..8usize {
                if (r >> 1) & 1 != (cidx >> 1) & 1 {
                    continue;
                }
                let rb = (r & 1) | ((r >> 2) & 1) << 1;
                let cb = (cidx & 1) | ((cidx >> 2) & 1) << 1;
                expect[(r, cidx)] = u[(rb, cb)];
            }
        }
        assert!(max_abs(&(&got - &expect)) < 1e-12);
    }

    #[test]
    fn dagger_inverts() {
        let circ = random_circuit(3, 20, 13);
        let mut both = circ.clone();
        both.append(&circ.dagger().unwrap()).unwrap();
        let u = circuit_unitary(&both).unwrap();
        assert!(max_abs(&(&u - CMatrix::identity(8, 8))) < 1e-9);
    }

    #[test]
    fn counts_are_recomputed_from_gate_list() {
        let mut circ = Circuit::new(3);
        circ.push(Gate::H(0)).unwrap();
        circ.push(Gate::Cnot {
            control: 0,
            target: 1,
        })
        .unwrap();
        circ.push(Gate::Cnot {
            control: 1,
            target: 2,
        })
        .unwrap();
        assert_eq!(circ.two_qubit_count(), 2);
        assert_eq!(circ.depth(), 3);
        // re-serialize through the JSON dump and recount
        let dump = circ.to_json();
        assert_eq!(dump["two_qubit_count"], 2);
        assert_eq!(dump["depth"], 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(25))]

        #[test]
        fn prop_norm_preserved(width in 1usize..=4, n_gates in 1usize..40, seed in 0u64..500) {
            let circ = random_circuit(width, n_gates, seed);
            let out = run(&circ, &random_state(width, seed ^ 0xabc)).unwrap();
            prop_assert!((out.norm_sq() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn prop_composition(width in 1usize..=3, seed in 0u64..500) {
            let c1 = random_circuit(width, 10, seed);
            let c2 = random_circuit(width, 10, seed ^ 0x55);
            let psi = random_state(width, seed ^ 0x77);
            let step = run(&c2, &run(&c1, &psi).unwrap()).unwrap();
            let mut joined = c1.clone();
            joined.append(&c2).unwrap();
            let direct = run(&joined, &psi).unwrap();
            for i in 0..psi.amps.len() {
                prop_assert!((step.amps[i] - direct.amps[i]).norm() < 1e-10);
            }
        }

        #[test]
        fn prop_sample_total_variation(seed in 0u64..100) {
            let mut circ = random_circuit(3, 15, seed);
            for q in 0..3 {
                circ.push(Gate::Measure { qubit: q, cbit: q }).unwrap();
            }
            let shots = 20_000u64;
            let hist = sample(&circ, shots, seed ^ 0x99).unwrap();
            let state = run(&circ, &Statevector::zero_state(3)).unwrap();
            let mut tv = 0.0;
            for reg in 0..8usize {
                let p: f64 = state.amps[reg].norm_sqr();
                let key: String = (0..3).rev().map(|b| if reg & (1 << b) != 0 { '1' } else { '0' }).collect();
                let f = *hist.get(&key).unwrap_or(&0) as f64 / shots as f64;
                tv += (p - f).abs();
            }
            tv /= 2.0;
            prop_assert!(tv < 5.0 / (shots as f64).sqrt());
        }
    }
}
