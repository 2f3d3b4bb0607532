//! HHL pipeline: Hamiltonian-evolution unitary, quantum phase estimation,
//! conditioned eigenvalue-inversion rotation, ancilla post-selection, and the
//! diagonally conditioned quadratic-form estimator y^T (K + sigma^2 I)^-1 y
//! used inside the marginal likelihood.
//!
//! Register layout of a built circuit: state qubits `0..n_b`, evaluation
//! register `n_b..n_b+n_l` (eval qubit 0 least significant), ancilla at
//! `n_b + n_l`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aqc::{self, AnsatzSpec, CompileOptions};
use crate::numerics::{
    self, check_hermitian, condition_number_real, eigh, psd_sqrt_real, CMatrix, CVector,
    NumericsError, RMatrix, RVector,
};
use crate::qcircuit::{controlled_power, run, sample, Circuit, CircuitError, Gate, Statevector};

#[derive(Debug, Error)]
pub enum HhlError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Aqc(#[from] aqc::AqcError),
    #[error(
        "matrix must be positive definite for unsigned phase decoding (min eigenvalue {0:.3e})"
    )]
    NotPositive(f64),
    #[error("eigenvalue {0:.3e} truncates to register value 0 with {1} evaluation qubits")]
    SingularAfterTruncation(f64, usize),
    #[error("inversion constant {c:.3e} exceeds smallest representable eigenvalue {lmin:.3e}")]
    CTooLarge { c: f64, lmin: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("right-hand side must be a unit vector (norm {0})")]
    RhsNotUnit(f64),
    #[error("evaluation qubit count {0} outside 1..=10")]
    BadEvalQubits(usize),
}

/// How the success-probability readout is obtained.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Backend {
    ExactStatevector,
    Sampled { shots: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RescaleMode {
    /// Condition the kernel, then take the square root; the quadratic form is
    /// recovered exactly through the identity
    /// y^T K^-1 y = (Dy)^T (DKD)^-1 (Dy).
    Exact,
    /// Square-root first, scale the root to unit diagonal, and rescale the
    /// readout by the minimum diagonal entry of D^-1 (heuristic).
    Dmin,
}

/// AQC budget forwarded to the QPE block compiler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AqcBudget {
    pub cnot_budget: usize,
    pub tolerance: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AqcBudget {
    fn default() -> Self {
        AqcBudget {
            cnot_budget: 3,
            tolerance: 1e-3,
            max_iters: 2000,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HhlConfig {
    /// Upper limit on evaluation qubits (the paper's cap of 8).
    pub eval_qubits_cap: usize,
    /// Force the evaluation-register size instead of deriving it from the
    /// condition number.
    pub eval_qubits: Option<usize>,
    /// Evolution time; default 2*pi*(1 - 2^-n_l) puts the top of the scaled
    /// spectrum on the highest representable phase.
    pub time_param: Option<f64>,
    /// Inversion constant C; default is the smallest representable
    /// eigenvalue on the phase grid.
    pub inversion_constant: Option<f64>,
    pub backend: Backend,
    pub rescale_mode: RescaleMode,
    pub aqc: Option<AqcBudget>,
}

impl Default for HhlConfig {
    fn default() -> Self {
        HhlConfig {
            eval_qubits_cap: 8,
            eval_qubits: None,
            time_param: None,
            inversion_constant: None,
            backend: Backend::ExactStatevector,
            rescale_mode: RescaleMode::Exact,
            aqc: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HhlResult {
    pub quadratic_form: f64,
    pub success_probability: f64,
    pub eval_qubits_used: usize,
    pub circuit_width: usize,
    pub circuit_depth: usize,
    pub two_qubit_count: usize,
    pub condition_number_before: f64,
    pub condition_number_after: f64,
}

/// U = exp(i A t) through the spectral decomposition of Hermitian A.
pub fn evolution_unitary(a: &CMatrix, t: f64) -> Result<CMatrix, HhlError> {
    let ed = eigh(a)?;
    Ok(ed.map_rebuild(|l| Complex64::from_polar(1.0, l * t)))
}

/// QFT gate sequence over `qubits` (element 0 = least significant bit):
/// |j> -> N^{-1/2} sum_k exp(2 pi i j k / N) |k>.
fn qft_gates(qubits: &[usize]) -> Vec<Gate> {
    let n = qubits.len();
    let mut gates = Vec::new();
    for i in (0..n).rev() {
        gates.push(Gate::H(qubits[i]));
        for j in (0..i).rev() {
            gates.push(Gate::CPhase {
                control: qubits[j],
                target: qubits[i],
                theta: std::f64::consts::PI / (1 << (i - j)) as f64,
            });
        }
    }
    for k in 0..n / 2 {
        gates.push(Gate::Swap(qubits[k], qubits[n - 1 - k]));
    }
    gates
}

/// Phase-estimation circuit: Hadamard layer on the evaluation register, the
/// controlled-U^{2^k} ladder, then the inverse QFT. State qubits occupy
/// `0..state_qubits`, evaluation qubits follow.
pub fn build_qpe(u: &CMatrix, n_l: usize, state_qubits: usize) -> Result<Circuit, HhlError> {
    build_qpe_with_blocks(u, n_l, state_qubits, None)
}

/// As `build_qpe`, but substituting compiled approximations for the
/// controlled-power blocks wherever the compilation converged.
pub fn build_qpe_with_blocks(
    u: &CMatrix,
    n_l: usize,
    state_qubits: usize,
    compiled: Option<&aqc::QpeBlockCompilation>,
) -> Result<Circuit, HhlError> {
    if u.nrows() != 1 << state_qubits {
        return Err(HhlError::DimensionMismatch(format!(
            "unitary is {}x{} but state register has {} qubits",
            u.nrows(),
            u.ncols(),
            state_qubits
        )));
    }
    if n_l == 0 {
        return Err(HhlError::BadEvalQubits(0));
    }
    let mut circ = Circuit::new(state_qubits + n_l);
    let eval: Vec<usize> = (state_qubits..state_qubits + n_l).collect();
    for &q in &eval {
        circ.push(Gate::H(q))?;
    }
    let state: Vec<usize> = (0..state_qubits).collect();
    for (k, &ctrl) in eval.iter().enumerate() {
        let substituted = compiled
            .and_then(|c| c.blocks.get(k))
            .filter(|b| b.converged)
            .map(|b| {
                // compiled block qubits: 0..state_qubits = state, last = control
                let mut map: Vec<usize> = state.clone();
                map.push(ctrl);
                b.circuit
                    .gates
                    .iter()
                    .map(|g| g.remap(&map))
                    .collect::<Vec<_>>()
            });
        match substituted {
            Some(gates) => circ.extend(gates)?,
            None => circ.push(controlled_power(u, k as u32, ctrl, state.clone())?)?,
        }
    }
    let mut qft = Circuit::new(state_qubits + n_l);
    qft.extend(qft_gates(&eval))?;
    circ.append(&qft.dagger()?)?;
    Ok(circ)
}

/// Ancilla rotation conditioned on the evaluation register: register value j
/// (eigenvalue `decode(j)`) rotates the ancilla so its |1> amplitude is
/// C / decode(j); j = 0 leaves the ancilla alone. Returned circuit has the
/// evaluation register at qubits `0..n_l` and the ancilla at `n_l`.
pub fn eigen_inversion_block(
    n_l: usize,
    c_const: f64,
    decode: &dyn Fn(usize) -> f64,
) -> Result<Circuit, HhlError> {
    let d = 1usize << n_l;
    let mut m = CMatrix::identity(2 * d, 2 * d);
    for j in 1..d {
        let lam = decode(j);
        if c_const > lam * (1.0 + 1e-12) {
            return Err(HhlError::CTooLarge {
                c: c_const,
                lmin: lam,
            });
        }
        let s = (c_const / lam).min(1.0);
        let c = (1.0 - s * s).max(0.0).sqrt();
        m[(j, j)] = Complex64::new(c, 0.0);
        m[(j + d, j)] = Complex64::new(s, 0.0);
        m[(j, j + d)] = Complex64::new(-s, 0.0);
        m[(j + d, j + d)] = Complex64::new(c, 0.0);
    }
    let mut circ = Circuit::new(n_l + 1);
    let qubits: Vec<usize> = (0..=n_l).collect();
    circ.push(Gate::UnitaryBlock { matrix: m, qubits })?;
    Ok(circ)
}

/// min(ceil(log2 kappa) + 1, cap): enough bits to separate the spectrum,
/// never beyond the cap.
pub fn size_eval_register(kappa: f64, cap: usize) -> usize {
    if !kappa.is_finite() {
        return cap;
    }
    let bits = kappa.max(1.0).log2().ceil() as usize + 1;
    bits.min(cap).max(1)
}

/// Deterministic completion of a unit vector to a unitary whose first column
/// is that vector (Gram-Schmidt against the computational basis).
fn state_prep_unitary(b: &CVector) -> CMatrix {
    let n = b.len();
    let mut cols: Vec<CVector> = vec![b.clone()];
    let mut j = 0usize;
    while cols.len() < n {
        let mut v = CVector::zeros(n);
        v[j] = Complex64::ONE;
        for u in &cols {
            let proj = u.dotc(&v);
            v -= u * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= Complex64::new(norm, 0.0);
            cols.push(v);
        }
        j += 1;
    }
    CMatrix::from_columns(&cols)
}

fn next_power_of_two(n: usize) -> usize {
    n.next_power_of_two()
}

/// Everything needed to interpret a built HHL circuit.
#[derive(Debug)]
pub struct HhlPlan {
    pub circuit: Circuit,
    pub n_b: usize,
    pub n_l: usize,
    /// spectrum scale factor s with A_scaled = s * A
    pub scale: f64,
    pub time_param: f64,
    pub c_const: f64,
}

impl HhlPlan {
    pub fn ancilla(&self) -> usize {
        self.n_b + self.n_l
    }
}

/// Build the full HHL circuit for Hermitian positive definite `a` and unit
/// right-hand side `b`: state preparation, QPE, inversion rotation, inverse
/// QPE, ancilla measurement.
pub fn build_hhl(
    a: &CMatrix,
    b: &CVector,
    cfg: &HhlConfig,
    n_l: usize,
) -> Result<HhlPlan, HhlError> {
    check_hermitian(a, 1e-10)?;
    if a.nrows() != b.len() {
        return Err(HhlError::DimensionMismatch(format!(
            "matrix {}x{} vs rhs length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !(1..=10).contains(&n_l) {
        return Err(HhlError::BadEvalQubits(n_l));
    }
    let bnorm = b.norm();
    if (bnorm - 1.0).abs() > 1e-8 {
        return Err(HhlError::RhsNotUnit(bnorm));
    }

    // pad to a power of two; padding eigenvalues sit at the top of the
    // spectrum (scaled value 1) with zero right-hand-side amplitude, so they
    // never contribute to the readout
    let n = a.nrows();
    let n_pad = next_power_of_two(n);
    let ed = eigh(a)?;
    let lmin = ed.eigenvalues[0];
    let lmax = ed.eigenvalues[ed.eigenvalues.len() - 1];
    if lmin <= 0.0 {
        return Err(HhlError::NotPositive(lmin));
    }
    let (a_pad, b_pad) = if n_pad == n {
        (a.clone(), b.clone())
    } else {
        let mut ap = CMatrix::identity(n_pad, n_pad).scale(lmax);
        ap.view_mut((0, 0), (n, n)).copy_from(a);
        let mut bp = CVector::zeros(n_pad);
        bp.rows_mut(0, n).copy_from(b);
        (ap, bp)
    };
    let n_b = n_pad.trailing_zeros() as usize;

    let scale = 1.0 / lmax;
    let grid = (1usize << n_l) as f64;
    let t = cfg
        .time_param
        .unwrap_or(2.0 * std::f64::consts::PI * (1.0 - 1.0 / grid));
    let decode = move |j: usize| j as f64 * 2.0 * std::f64::consts::PI / (t * grid);
    let c_default = decode(1);
    let c_const = cfg.inversion_constant.unwrap_or(c_default);

    // reject systems whose spectrum truncates to register value zero
    for &l in ed.eigenvalues.iter() {
        let j = (l * scale * t / (2.0 * std::f64::consts::PI) * grid).round();
        if j < 0.5 {
            return Err(HhlError::SingularAfterTruncation(l, n_l));
        }
    }

    let a_scaled = a_pad.scale(scale);
    let u = evolution_unitary(&a_scaled, t)?;

    let compiled = match &cfg.aqc {
        Some(budget) if n_b < 6 => {
            let spec = AnsatzSpec::new(n_b + 1, budget.cnot_budget);
            let opts = CompileOptions {
                max_iters: budget.max_iters,
                tolerance: budget.tolerance,
                restarts: budget.restarts,
                seed: budget.seed,
            };
            Some(aqc::compile_qpe_blocks(&a_scaled, t, n_l, &spec, &opts)?)
        }
        _ => None,
    };

    let width = n_b + n_l + 1;
    let mut circ = Circuit::new(width);
    circ.push(Gate::UnitaryBlock {
        matrix: state_prep_unitary(&b_pad),
        qubits: (0..n_b).collect(),
    })?;
    let qpe = build_qpe_with_blocks(&u, n_l, n_b, compiled.as_ref())?;
    circ.append(&qpe)?;
    let inv = eigen_inversion_block(n_l, c_const, &decode)?;
    let map: Vec<usize> = (n_b..=n_b + n_l).collect();
    circ.extend(inv.gates.iter().map(|g| g.remap(&map)))?;
    circ.append(&qpe.dagger()?)?;
    // readout post-selects on the evaluation register uncomputing to zero;
    // without that filter, leakage amplified by small grid eigenvalues leaves
    // a bias that does not shrink as n_l grows
    for k in 0..n_l {
        circ.push(Gate::Measure {
            qubit: n_b + k,
            cbit: k,
        })?;
    }
    circ.push(Gate::Measure {
        qubit: n_b + n_l,
        cbit: n_l,
    })?;

    Ok(HhlPlan {
        circuit: circ,
        n_b,
        n_l,
        scale,
        time_param: t,
        c_const,
    })
}

#[derive(Debug)]
pub struct HhlSolve {
    /// estimate of ||A^-1 b||^2 for the unit right-hand side
    pub solution_norm_sq: f64,
    /// probability of the ancilla reading 1 with the evaluation register
    /// uncomputed to zero
    pub success_probability: f64,
    /// post-selected solution direction (exact backend only)
    pub post_selected: Option<CVector>,
    pub plan: HhlPlan,
}

/// Build and execute an HHL solve, returning the recovered solution norm.
pub fn solve_norm(
    a: &CMatrix,
    b: &CVector,
    cfg: &HhlConfig,
    n_l: usize,
) -> Result<HhlSolve, HhlError> {
    let plan = build_hhl(a, b, cfg, n_l)?;
    let (p1, post_selected) = match &cfg.backend {
        Backend::ExactStatevector => {
            let state = run(&plan.circuit, &Statevector::zero_state(plan.circuit.width))?;
            let anc = plan.ancilla();
            // amplitudes with ancilla = 1 and evaluation register = 0
            let n = 1usize << plan.n_b;
            let anc_mask = 1usize << anc;
            let mut sol = CVector::zeros(n);
            for i in 0..n {
                sol[i] = state.amps[i | anc_mask];
            }
            let norm = sol.norm();
            let p1 = norm * norm;
            let post = if norm > 1e-12 {
                Some(sol / Complex64::new(norm, 0.0))
            } else {
                None
            };
            (p1, post)
        }
        Backend::Sampled { shots, seed } => {
            let hist = sample(&plan.circuit, *shots, *seed)?;
            let key: String = std::iter::once('1')
                .chain(std::iter::repeat_n('0', plan.n_l))
                .collect();
            let hits = *hist.get(&key).unwrap_or(&0);
            (hits as f64 / *shots as f64, None)
        }
    };
    let norm_sq = plan.scale * plan.scale * p1 / (plan.c_const * plan.c_const);
    Ok(HhlSolve {
        solution_norm_sq: norm_sq,
        success_probability: p1,
        post_selected,
        plan,
    })
}

/// Quadratic form y^T (K + diag(noise))^-1 y through the HHL pipeline:
/// square-root factorization, diagonal conditioning, HHL norm readout, and
/// rescaling back per the configured mode.
pub fn quadratic_form(
    k: &RMatrix,
    noise_diag: &RVector,
    y: &RVector,
    cfg: &HhlConfig,
) -> Result<HhlResult, HhlError> {
    if k.nrows() != y.len() || k.nrows() != noise_diag.len() {
        return Err(HhlError::DimensionMismatch(format!(
            "kernel {}x{}, noise {}, y {}",
            k.nrows(),
            k.ncols(),
            noise_diag.len(),
            y.len()
        )));
    }
    let n = k.nrows();
    let k_tot = k + RMatrix::from_diagonal(noise_diag);
    let cond_before = condition_number_real(&k_tot)?;
    let n_l = cfg
        .eval_qubits
        .unwrap_or_else(|| size_eval_register(cond_before, cfg.eval_qubits_cap));

    // conditioning + square root, per rescale mode
    let (system, rhs, readout_scale, cond_after) = match cfg.rescale_mode {
        RescaleMode::Exact => {
            let d: RVector = k_tot.diagonal().map(|v| 1.0 / v.sqrt());
            let dm = RMatrix::from_diagonal(&d);
            let conditioned = &dm * &k_tot * &dm;
            let root = psd_sqrt_real(&conditioned)?;
            let dy: RVector = y.component_mul(&d);
            let scale = dy.norm_squared();
            (root, dy, scale, condition_number_real(&conditioned)?)
        }
        RescaleMode::Dmin => {
            let root = psd_sqrt_real(&k_tot)?;
            let d: RVector = root.diagonal().map(|v| 1.0 / v.sqrt());
            let dm = RMatrix::from_diagonal(&d);
            let conditioned = &dm * &root * &dm;
            let d_min = root.diagonal().map(|v| v.sqrt()).min();
            let scale = y.norm_squared() * d_min;
            let cond = condition_number_real(&conditioned)?;
            (conditioned, y.clone(), scale, cond)
        }
    };

    let rhs_norm = rhs.norm();
    let b: CVector =
        CVector::from_iterator(n, rhs.iter().map(|&v| Complex64::new(v / rhs_norm, 0.0)));
    let sys_c = numerics::to_complex(&system);
    let solve = solve_norm(&sys_c, &b, cfg, n_l)?;
    let quad = readout_scale * solve.solution_norm_sq;

    Ok(HhlResult {
        quadratic_form: quad,
        success_probability: solve.success_probability,
        eval_qubits_used: n_l,
        circuit_width: solve.plan.circuit.width,
        circuit_depth: solve.plan.circuit.depth(),
        two_qubit_count: solve.plan.circuit.two_qubit_weight(),
        condition_number_before: cond_before,
        condition_number_after: cond_after,
    })
}
