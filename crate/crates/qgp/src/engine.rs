//! Negative log marginal likelihood with a pluggable quadratic-form backend
//! (classical solve or the HHL pipeline), spectrum regularization for the
//! quantum path, derivative-free hyperparameter optimization, and predictive
//! mean/variance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hhl::{self, HhlConfig, HhlError, HhlResult};
use crate::kernels::{
    assemble_joint, cross_kernel, cross_vectors, Channel, KernelError, LineHyperParams, RbfParams,
};
use crate::numerics::{cholesky_logdet, eigh_real, NumericsError, RMatrix, RVector};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Hhl(#[from] HhlError),
    #[error("hyperparameters must all be strictly positive and finite")]
    InvalidTheta,
    #[error("invalid training set: {0}")]
    InvalidData(String),
}

/// Time-stamped observations of the three channels. Per-channel lengths may
/// differ; times must be strictly increasing within a channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSet {
    pub times_ii: Vec<f64>,
    pub times_vj: Vec<f64>,
    pub times_vi: Vec<f64>,
    pub y_ii: Vec<f64>,
    pub y_vj: Vec<f64>,
    pub y_vi: Vec<f64>,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (t, y, name) in [
            (&self.times_ii, &self.y_ii, "i_i"),
            (&self.times_vj, &self.y_vj, "v_j"),
            (&self.times_vi, &self.y_vi, "v_i"),
        ] {
            if t.len() != y.len() {
                return Err(EngineError::InvalidData(format!(
                    "{name}: {} times vs {} values",
                    t.len(),
                    y.len()
                )));
            }
            if t.is_empty() {
                return Err(EngineError::InvalidData(format!("{name}: empty channel")));
            }
            if t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(EngineError::InvalidData(format!(
                    "{name}: times not strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times_ii.len() + self.times_vj.len() + self.times_vi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observations stacked in the joint-kernel layout [i_i, v_j, v_i].
    pub fn y_joint(&self) -> RVector {
        let mut y = Vec::with_capacity(self.len());
        y.extend_from_slice(&self.y_ii);
        y.extend_from_slice(&self.y_vj);
        y.extend_from_slice(&self.y_vi);
        RVector::from_vec(y)
    }

    /// Span of all observation times (used by scale-aware initialization).
    pub fn window(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in [&self.times_ii, &self.times_vj, &self.times_vi] {
            for &v in t.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo
    }
}

/// Regularization and circuit settings for the quantum backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantumOpts {
    pub hhl: HhlConfig,
    pub target_condition: f64,
    pub reg_floor: f64,
}

impl Default for QuantumOpts {
    fn default() -> Self {
        QuantumOpts {
            hhl: HhlConfig::default(),
            target_condition: 512.0,
            reg_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Backend {
    Classical,
    HhlExact(QuantumOpts),
    HhlSampled(QuantumOpts),
}

/// lambda such that cond(K + lambda I) = target when regularization is
/// active; the literal lambda_max/target - lambda_min overshoots the target
/// by up to one unit of condition number.
pub fn regularize(
    k: &RMatrix,
    target_condition: f64,
    floor: f64,
) -> Result<(RMatrix, f64), EngineError> {
    let ed = eigh_real(k)?;
    let lmin = ed.eigenvalues[0];
    let lmax = ed.eigenvalues[ed.eigenvalues.len() - 1];
    let needed = if target_condition > 1.0 {
        (lmax - target_condition * lmin) / (target_condition - 1.0)
    } else {
        0.0
    };
    let lam = needed.max(floor).max(0.0);
    Ok((k + RMatrix::identity(k.nrows(), k.nrows()).scale(lam), lam))
}

/// NLML from pre-assembled pieces: 1/2 quad + 1/2 logdet + (N/2) log 2 pi.
/// Quantum backends regularize the total matrix before handing it to the
/// HHL quadratic form; the log-determinant is always classical and uses the
/// same (possibly regularized) matrix as the quadratic term.
pub fn nlml_parts(
    k: &RMatrix,
    noise: &RVector,
    y: &RVector,
    backend: &Backend,
) -> Result<(f64, Option<HhlResult>), EngineError> {
    let n = y.len() as f64;
    let constant = 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    match backend {
        Backend::Classical => {
            let total = k + RMatrix::from_diagonal(noise);
            let (_, logdet) = cholesky_logdet(&total)?;
            let chol = total.cholesky().ok_or(NumericsError::NotPositiveDefinite)?;
            let quad = y.dot(&chol.solve(y));
            Ok((0.5 * quad + 0.5 * logdet + constant, None))
        }
        Backend::HhlExact(q) | Backend::HhlSampled(q) => {
            let total = k + RMatrix::from_diagonal(noise);
            let (_, lam) = regularize(&total, q.target_condition, q.reg_floor)?;
            let k_reg = k + RMatrix::identity(k.nrows(), k.nrows()).scale(lam);
            let mut cfg = q.hhl.clone();
            if matches!(backend, Backend::HhlExact(_)) {
                cfg.backend = hhl::Backend::ExactStatevector;
            } else if !matches!(cfg.backend, hhl::Backend::Sampled { .. }) {
                cfg.backend = hhl::Backend::Sampled {
                    shots: 100_000,
                    seed: 0,
                };
            }
            let res = hhl::quadratic_form(&k_reg, noise, y, &cfg)?;
            let total_reg = &k_reg + RMatrix::from_diagonal(noise);
            let (_, logdet) = cholesky_logdet(&total_reg)?;
            Ok((
                0.5 * res.quadratic_form + 0.5 * logdet + constant,
                Some(res),
            ))
        }
    }
}

pub fn nlml(
    theta: &LineHyperParams,
    data: &TrainingSet,
    backend: &Backend,
) -> Result<f64, EngineError> {
    nlml_with_stats(theta, data, backend).map(|(v, _)| v)
}

pub fn nlml_with_stats(
    theta: &LineHyperParams,
    data: &TrainingSet,
    backend: &Backend,
) -> Result<(f64, Option<HhlResult>), EngineError> {
    if !theta.is_valid() {
        return Err(EngineError::InvalidTheta);
    }
    data.validate()?;
    let jk = assemble_joint(&data.times_ii, &data.times_vj, &data.times_vi, theta)?;
    let noise = jk.noise_diagonal(theta);
    nlml_parts(&jk.matrix, &noise, &data.y_joint(), backend)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// budget of objective (NLML) evaluations
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// initial simplex spread in log-parameter space
    pub init_step: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            f_tol: 1e-10,
            x_tol: 1e-8,
            init_step: 0.4,
            seed: 0,
        }
    }
}

/// Aggregated HHL diagnostics across the NLML evaluations of one fit.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BackendStats {
    pub quantum_evaluations: usize,
    pub failed_evaluations: usize,
    pub mean_success_probability: f64,
    pub max_condition_before: f64,
    pub max_condition_after: f64,
    pub eval_qubits_used: usize,
    pub circuit_width: usize,
}

impl BackendStats {
    fn absorb(&mut self, r: &HhlResult) {
        let n = self.quantum_evaluations as f64;
        self.mean_success_probability =
            (self.mean_success_probability * n + r.success_probability) / (n + 1.0);
        self.quantum_evaluations += 1;
        self.max_condition_before = self.max_condition_before.max(r.condition_number_before);
        self.max_condition_after = self.max_condition_after.max(r.condition_number_after);
        self.eval_qubits_used = self.eval_qubits_used.max(r.eval_qubits_used);
        self.circuit_width = self.circuit_width.max(r.circuit_width);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_star: LineHyperParams,
    pub init: LineHyperParams,
    /// best objective value seen after each evaluation
    pub nlml_trace: Vec<f64>,
    /// objective evaluations consumed
    pub iterations: usize,
    pub backend_stats: Option<BackendStats>,
    /// wall-clock seconds; excluded from serialized reports so outputs stay
    /// byte-stable per seed
    #[serde(skip)]
    pub wall_time: f64,
}

fn to_log(theta: &LineHyperParams) -> [f64; 9] {
    [
        theta.current_kernel.variance.ln(),
        theta.current_kernel.weight.ln(),
        theta.voltage_kernel.variance.ln(),
        theta.voltage_kernel.weight.ln(),
        theta.r.ln(),
        theta.l.ln(),
        theta.noise_ii.ln(),
        theta.noise_vj.ln(),
        theta.noise_vi.ln(),
    ]
}

fn from_log(x: &[f64; 9]) -> LineHyperParams {
    LineHyperParams {
        current_kernel: RbfParams {
            variance: x[0].exp(),
            weight: x[1].exp(),
        },
        voltage_kernel: RbfParams {
            variance: x[2].exp(),
            weight: x[3].exp(),
        },
        r: x[4].exp(),
        l: x[5].exp(),
        noise_ii: x[6].exp(),
        noise_vj: x[7].exp(),
        noise_vi: x[8].exp(),
    }
}

/// Minimize NLML over the log-reparameterized 9-vector with Nelder-Mead.
/// `max_iters` caps objective evaluations (each one a quantum solve on the
/// HHL backends); evaluation failures count as +inf vertices rather than
/// aborting the fit.
pub fn fit(
    data: &TrainingSet,
    init: &LineHyperParams,
    opts: &FitOptions,
    backend: &Backend,
) -> Result<FitResult, EngineError> {
    if !init.is_valid() {
        return Err(EngineError::InvalidTheta);
    }
    data.validate()?;
    let start = std::time::Instant::now();

    let mut stats = BackendStats::default();
    let mut evals = 0usize;
    let mut trace: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    let eval = |x: &[f64; 9],
                stats: &mut BackendStats,
                evals: &mut usize,
                trace: &mut Vec<f64>,
                best: &mut f64|
     -> f64 {
        *evals += 1;
        let theta = from_log(x);
        let v = match nlml_with_stats(&theta, data, backend) {
            Ok((v, Some(r))) => {
                stats.absorb(&r);
                v
            }
            Ok((v, None)) => v,
            Err(_) => {
                stats.failed_evaluations += 1;
                f64::INFINITY
            }
        };
        if v < *best {
            *best = v;
        }
        trace.push(*best);
        v
    };

    // Alternate Nelder-Mead rounds with cyclic golden-section line searches.
    // The likelihood is badly conditioned in log space (L moves it orders of
    // magnitude less than the kernel scales), and a simplex alone tends to
    // let the flat coordinates drift; the axis-aligned searches pull them
    // back. Physical parameters are refined first so small budgets still
    // reach them.
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    const REFINE_ORDER: [usize; 9] = [4, 5, 0, 1, 2, 3, 6, 7, 8];
    let mut x_best = to_log(init);
    let mut f_best = f64::INFINITY;
    let mut step = opts.init_step;
    let mut span = 2.0f64;
    let mut restart_floor = f64::INFINITY;
    loop {
        if evals >= opts.max_iters {
            break;
        }
        if step <= 1e-7 {
            // restart from the incumbent with fresh scales while budget
            // remains; stop once a full pass no longer improves
            if restart_floor - f_best < opts.f_tol {
                break;
            }
            restart_floor = f_best;
            step = opts.init_step;
            span = 2.0;
        }
        let nm_round = (opts.max_iters / 4).clamp(30, 150);
        let nm_cap = (evals + nm_round).min(opts.max_iters);
        let x0 = x_best;
        let mut simplex: Vec<([f64; 9], f64)> = Vec::with_capacity(10);
        let f0 = eval(&x0, &mut stats, &mut evals, &mut trace, &mut best);
        simplex.push((x0, f0));
        for i in 0..9 {
            if evals >= nm_cap {
                break;
            }
            let mut xi = x0;
            xi[i] += step;
            let fi = eval(&xi, &mut stats, &mut evals, &mut trace, &mut best);
            simplex.push((xi, fi));
        }

        while evals < nm_cap && simplex.len() == 10 {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[9].1 - simplex[0].1;
            let xspread = (0..9)
                .map(|d| {
                    let vals = simplex.iter().map(|(x, _)| x[d]);
                    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                    let mn = vals.fold(f64::INFINITY, f64::min);
                    mx - mn
                })
                .fold(0.0f64, f64::max);
            if spread.abs() < opts.f_tol && xspread < opts.x_tol {
                break;
            }

            let mut centroid = [0.0f64; 9];
            for (x, _) in &simplex[..9] {
                for d in 0..9 {
                    centroid[d] += x[d] / 9.0;
                }
            }
            let worst = simplex[9];
            let mut xr = [0.0f64; 9];
            for d in 0..9 {
                xr[d] = centroid[d] + alpha * (centroid[d] - worst.0[d]);
            }
            let fr = eval(&xr, &mut stats, &mut evals, &mut trace, &mut best);

            if fr < simplex[0].1 {
                if evals < nm_cap {
                    let mut xe = [0.0f64; 9];
                    for d in 0..9 {
                        xe[d] = centroid[d] + gamma * (centroid[d] - worst.0[d]);
                    }
                    let fe = eval(&xe, &mut stats, &mut evals, &mut trace, &mut best);
                    simplex[9] = if fe < fr { (xe, fe) } else { (xr, fr) };
                } else {
                    simplex[9] = (xr, fr);
                }
            } else if fr < simplex[8].1 {
                simplex[9] = (xr, fr);
            } else if evals < nm_cap {
                let mut xc = [0.0f64; 9];
                for d in 0..9 {
                    xc[d] = centroid[d] + rho * (worst.0[d] - centroid[d]);
                }
                let fc = eval(&xc, &mut stats, &mut evals, &mut trace, &mut best);
                if fc < worst.1 {
                    simplex[9] = (xc, fc);
                } else {
                    // shrink toward the best vertex
                    let x_best = simplex[0].0;
                    for v in simplex.iter_mut().skip(1) {
                        if evals >= nm_cap {
                            break;
                        }
                        for (vd, &bd) in v.0.iter_mut().zip(x_best.iter()) {
                            *vd = bd + sigma * (*vd - bd);
                        }
                        v.1 = eval(&v.0, &mut stats, &mut evals, &mut trace, &mut best);
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < f_best {
            f_best = simplex[0].1;
            x_best = simplex[0].0;
        }

        // golden-section search per coordinate around the incumbent
        let gr = 0.5 * (5.0f64.sqrt() - 1.0);
        for &d in &REFINE_ORDER {
            if evals >= opts.max_iters {
                break;
            }
            let (mut a, mut b) = (x_best[d] - span, x_best[d] + span);
            let probe = |v: f64,
                         stats: &mut BackendStats,
                         evals: &mut usize,
                         trace: &mut Vec<f64>,
                         best: &mut f64|
             -> f64 {
                let mut x = x_best;
                x[d] = v;
                eval(&x, stats, evals, trace, best)
            };
            let mut x1 = b - gr * (b - a);
            let mut x2 = a + gr * (b - a);
            let mut f1 = probe(x1, &mut stats, &mut evals, &mut trace, &mut best);
            let mut f2 = probe(x2, &mut stats, &mut evals, &mut trace, &mut best);
            for _ in 0..8 {
                if evals >= opts.max_iters {
                    break;
                }
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - gr * (b - a);
                    f1 = probe(x1, &mut stats, &mut evals, &mut trace, &mut best);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + gr * (b - a);
                    f2 = probe(x2, &mut stats, &mut evals, &mut trace, &mut best);
                }
            }
            let (xc, fc) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            if fc < f_best {
                f_best = fc;
                x_best[d] = xc;
            }
        }

        step *= 0.25;
        span *= 0.5;
    }

    let theta_star = from_log(&x_best);
    let backend_stats = match backend {
        Backend::Classical => None,
        _ => Some(stats),
    };
    Ok(FitResult {
        theta_star,
        init: *init,
        nlml_trace: trace,
        iterations: evals,
        backend_stats,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// largest negative variance that was clamped to zero
    pub max_clamp: f64,
}

/// Predictive mean and variance per the GP conditional equations. Always
/// classical: one Cholesky factorization of the training matrix is reused
/// across all query points.
pub fn predict(
    channel: Channel,
    t_stars: &[f64],
    data: &TrainingSet,
    theta: &LineHyperParams,
) -> Result<Prediction, EngineError> {
    if !theta.is_valid() {
        return Err(EngineError::InvalidTheta);
    }
    data.validate()?;
    let jk = assemble_joint(&data.times_ii, &data.times_vj, &data.times_vi, theta)?;
    let total = &jk.matrix + RMatrix::from_diagonal(&jk.noise_diagonal(theta));
    let chol = total.cholesky().ok_or(NumericsError::NotPositiveDefinite)?;
    let alpha = chol.solve(&data.y_joint());

    let mut mean = Vec::with_capacity(t_stars.len());
    let mut variance = Vec::with_capacity(t_stars.len());
    let mut max_clamp = 0.0f64;
    for &t in t_stars {
        let q = cross_vectors(
            channel,
            t,
            &data.times_ii,
            &data.times_vj,
            &data.times_vi,
            theta,
        );
        mean.push(q.dot(&alpha));
        let k_ss = cross_kernel(channel, channel, t, t, theta);
        let v = k_ss - q.dot(&chol.solve(&q));
        if v < 0.0 {
            max_clamp = max_clamp.max(-v);
        }
        variance.push(v.max(0.0));
    }
    Ok(Prediction {
        mean,
        variance,
        max_clamp,
    })
}

/// Scale-aware starting point: kernel variances from per-channel sample
/// variance, lengthscales from a quarter of the observation window, noise at
/// 1% of signal variance, and R, L from a least-squares solve of the line
/// equation on interpolated signals.
pub fn initial_hyperparams(data: &TrainingSet) -> Result<LineHyperParams, EngineError> {
    data.validate()?;
    let var = |y: &[f64]| -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let v = y.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
        v.max(1e-12)
    };
    let v_ii = var(&data.y_ii);
    let v_vj = var(&data.y_vj);
    let v_vi = var(&data.y_vi);
    let window = data.window().max(1e-9);
    let w = 1.0 / (0.25 * window).powi(2);

    let (r0, l0) = line_least_squares(data).unwrap_or((1.0, 1.0));
    Ok(LineHyperParams {
        current_kernel: RbfParams {
            variance: v_ii,
            weight: w,
        },
        voltage_kernel: RbfParams {
            variance: v_vj.max(v_vi * 0.5),
            weight: w,
        },
        r: r0,
        l: l0,
        noise_ii: 0.01 * v_ii,
        noise_vj: 0.01 * v_vj,
        noise_vi: 0.01 * v_vi,
    })
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.partition_point(|&x| x < t) {
        0 => values[0],
        i if i >= times.len() => values[times.len() - 1],
        i => {
            let (t0, t1) = (times[i - 1], times[i]);
            let frac = (t - t0) / (t1 - t0);
            values[i - 1] * (1.0 - frac) + values[i] * frac
        }
    }
}

/// Least-squares (R, L) from v_i - v_j = R i + L di/dt on the v_i
/// timestamps, with interpolated i_i, v_j and a finite-difference current
/// derivative. Returns None when the normal equations are degenerate or the
/// estimates are not positive.
fn line_least_squares(data: &TrainingSet) -> Option<(f64, f64)> {
    let n = data.times_vi.len();
    if n < 3 {
        return None;
    }
    let h = {
        let span = data.times_ii.last()? - data.times_ii.first()?;
        (span / data.times_ii.len() as f64) * 0.1
    };
    let mut a = [0.0f64; 3];
    let mut b = [0.0f64; 2];
    for idx in 0..n {
        let t = data.times_vi[idx];
        let i0 = interp(&data.times_ii, &data.y_ii, t);
        let di = (interp(&data.times_ii, &data.y_ii, t + h)
            - interp(&data.times_ii, &data.y_ii, t - h))
            / (2.0 * h);
        let rhs = data.y_vi[idx] - interp(&data.times_vj, &data.y_vj, t);
        a[0] += i0 * i0;
        a[1] += i0 * di;
        a[2] += di * di;
        b[0] += i0 * rhs;
        b[1] += di * rhs;
    }
    let det = a[0] * a[2] - a[1] * a[1];
    if det.abs() < 1e-12 * (a[0] * a[2]).max(1e-300) {
        return None;
    }
    let r = (b[0] * a[2] - b[1] * a[1]) / det;
    let l = (a[0] * b[1] - a[1] * b[0]) / det;
    if r > 0.0 && l > 0.0 && r.is_finite() && l.is_finite() {
        Some((r, l))
    } else {
        None
    }
}
