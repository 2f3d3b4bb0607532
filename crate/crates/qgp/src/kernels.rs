//! RBF kernels, their derivatives, and the physics-informed cross-channel
//! covariances of the two-node line. The three observed channels are the
//! sending-end current i_i, the receiving-end voltage v_j, and the
//! sending-end voltage v_i, tied together by
//! v_i(t) = R i_i(t) + L di_i(t)/dt + v_j(t)
//! with i_i and v_j as independent zero-mean GP priors.

use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

use crate::numerics::RMatrix;
use crate::numerics::RVector;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown channel {0:?} (expected i_i, v_j or v_i)")]
    UnknownChannel(String),
    #[error("channel {0} has no time points")]
    EmptyChannel(&'static str),
}

/// One-dimensional RBF kernel sigma^2 exp(-0.5 w (t - t')^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RbfParams {
    pub variance: f64,
    pub weight: f64,
}

/// The nine hyperparameters of the line model: two RBF kernels, the line
/// parameters R and L, and one noise variance per channel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LineHyperParams {
    pub current_kernel: RbfParams,
    pub voltage_kernel: RbfParams,
    pub r: f64,
    pub l: f64,
    pub noise_ii: f64,
    pub noise_vj: f64,
    pub noise_vi: f64,
}

impl LineHyperParams {
    /// All nine entries must be strictly positive.
    pub fn is_valid(&self) -> bool {
        [
            self.current_kernel.variance,
            self.current_kernel.weight,
            self.voltage_kernel.variance,
            self.voltage_kernel.weight,
            self.r,
            self.l,
            self.noise_ii,
            self.noise_vj,
            self.noise_vi,
        ]
        .iter()
        .all(|&v| v > 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// sending-end current i_i
    #[serde(rename = "i_i")]
    Ii,
    /// receiving-end voltage v_j
    #[serde(rename = "v_j")]
    Vj,
    /// sending-end voltage v_i
    #[serde(rename = "v_i")]
    Vi,
}

impl Channel {
    /// Name used in file formats and CLI arguments.
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Ii => "i_i",
            Channel::Vj => "v_j",
            Channel::Vi => "v_i",
        }
    }
}

impl FromStr for Channel {
    type Err = KernelError;
    fn from_str(s: &str) -> Result<Self, KernelError> {
        match s {
            "i_i" => Ok(Channel::Ii),
            "v_j" => Ok(Channel::Vj),
            "v_i" => Ok(Channel::Vi),
            other => Err(KernelError::UnknownChannel(other.to_string())),
        }
    }
}

pub fn rbf(t: f64, t2: f64, p: &RbfParams) -> f64 {
    let tau = t - t2;
    p.variance * (-0.5 * p.weight * tau * tau).exp()
}

/// (dk/dt, dk/dt', d^2k/dt dt') of the RBF kernel at (t, t').
pub fn rbf_derivatives(t: f64, t2: f64, p: &RbfParams) -> (f64, f64, f64) {
    let tau = t - t2;
    let k = rbf(t, t2, p);
    let w = p.weight;
    (-w * tau * k, w * tau * k, w * (1.0 - w * tau * tau) * k)
}

/// Covariance between two channels at times (t, t'), derived by pushing the
/// line equation through the GP linear-operator closure. Exchange symmetry
/// k(a,b)(t,t') = k(b,a)(t',t) holds exactly.
pub fn cross_kernel(a: Channel, b: Channel, t: f64, t2: f64, th: &LineHyperParams) -> f64 {
    use Channel::*;
    match (a, b) {
        (Ii, Ii) => rbf(t, t2, &th.current_kernel),
        (Vj, Vj) => rbf(t, t2, &th.voltage_kernel),
        (Ii, Vj) | (Vj, Ii) => 0.0,
        (Vi, Ii) => {
            let k = rbf(t, t2, &th.current_kernel);
            let (dt, _, _) = rbf_derivatives(t, t2, &th.current_kernel);
            th.r * k + th.l * dt
        }
        (Ii, Vi) => {
            let k = rbf(t, t2, &th.current_kernel);
            let (_, dt2, _) = rbf_derivatives(t, t2, &th.current_kernel);
            th.r * k + th.l * dt2
        }
        (Vi, Vj) | (Vj, Vi) => rbf(t, t2, &th.voltage_kernel),
        (Vi, Vi) => {
            let k = rbf(t, t2, &th.current_kernel);
            let (dt, dt2, dtt) = rbf_derivatives(t, t2, &th.current_kernel);
            th.r * th.r * k
                + th.r * th.l * (dt + dt2)
                + th.l * th.l * dtt
                + rbf(t, t2, &th.voltage_kernel)
        }
    }
}

/// Channel layout of the joint kernel: [i_i, v_j, v_i].
pub const CHANNEL_ORDER: [Channel; 3] = [Channel::Ii, Channel::Vj, Channel::Vi];

/// Block-structured joint covariance over the three channels.
#[derive(Debug, Clone)]
pub struct JointKernel {
    pub matrix: RMatrix,
    pub times_ii: Vec<f64>,
    pub times_vj: Vec<f64>,
    pub times_vi: Vec<f64>,
}

impl JointKernel {
    pub fn size(&self) -> usize {
        self.times_ii.len() + self.times_vj.len() + self.times_vi.len()
    }

    /// Per-sample noise variances in the same layout as the matrix.
    pub fn noise_diagonal(&self, th: &LineHyperParams) -> RVector {
        let mut d = Vec::with_capacity(self.size());
        d.extend(std::iter::repeat_n(th.noise_ii, self.times_ii.len()));
        d.extend(std::iter::repeat_n(th.noise_vj, self.times_vj.len()));
        d.extend(std::iter::repeat_n(th.noise_vi, self.times_vi.len()));
        RVector::from_vec(d)
    }
}

fn labeled_times<'a>(
    t_ii: &'a [f64],
    t_vj: &'a [f64],
    t_vi: &'a [f64],
) -> impl Iterator<Item = (Channel, f64)> + Clone + 'a {
    t_ii.iter()
        .map(|&t| (Channel::Ii, t))
        .chain(t_vj.iter().map(|&t| (Channel::Vj, t)))
        .chain(t_vi.iter().map(|&t| (Channel::Vi, t)))
}

/// Noiseless joint kernel over the three training-time vectors, channel
/// order [i_i, v_j, v_i]. The upper triangle is computed and mirrored, so
/// the result equals its transpose exactly.
pub fn assemble_joint(
    t_ii: &[f64],
    t_vj: &[f64],
    t_vi: &[f64],
    th: &LineHyperParams,
) -> Result<JointKernel, KernelError> {
    for (ts, name) in [(t_ii, "i_i"), (t_vj, "v_j"), (t_vi, "v_i")] {
        if ts.is_empty() {
            return Err(KernelError::EmptyChannel(name));
        }
    }
    let labels: Vec<(Channel, f64)> = labeled_times(t_ii, t_vj, t_vi).collect();
    let n = labels.len();
    let mut m = RMatrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let (ca, ta) = labels[p];
            let (cb, tb) = labels[q];
            let v = cross_kernel(ca, cb, ta, tb, th);
            m[(p, q)] = v;
            m[(q, p)] = v;
        }
    }
    Ok(JointKernel {
        matrix: m,
        times_ii: t_ii.to_vec(),
        times_vj: t_vj.to_vec(),
        times_vi: t_vi.to_vec(),
    })
}

/// Cross-covariance vector between channel `s` at `t_star` and every
/// training sample, in the joint-kernel layout.
pub fn cross_vectors(
    s: Channel,
    t_star: f64,
    t_ii: &[f64],
    t_vj: &[f64],
    t_vi: &[f64],
    th: &LineHyperParams,
) -> RVector {
    let vals: Vec<f64> = labeled_times(t_ii, t_vj, t_vi)
        .map(|(cb, tb)| cross_kernel(s, cb, t_star, tb, th))
        .collect();
    RVector::from_vec(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{eigh_real, psd_sqrt_real};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn theta() -> LineHyperParams {
        LineHyperParams {
            current_kernel: RbfParams {
                variance: 1.3,
                weight: 4.0,
            },
            voltage_kernel: RbfParams {
                variance: 0.7,
                weight: 2.5,
            },
            r: 0.8,
            l: 0.15,
            noise_ii: 1e-3,
            noise_vj: 1e-3,
            noise_vi: 1e-3,
        }
    }

    #[test]
    fn rbf_values() {
        let p = RbfParams {
            variance: 2.5,
            weight: 3.0,
        };
        assert_eq!(rbf(1.7, 1.7, &p), 2.5);
        let p1 = RbfParams {
            variance: 1.0,
            weight: 1.0,
        };
        assert!((rbf(0.0, 2f64.sqrt(), &p1) - (-1f64).exp()).abs() < 1e-12);
        // monotone decay in lag
        let mut prev = rbf(0.0, 0.0, &p);
        for i in 1..50 {
            let v = rbf(0.0, i as f64 * 0.3, &p);
            assert!(v < prev);
            prev = v;
        }
        assert!(rbf(0.0, 1e3, &p) < 1e-300);
    }

    #[test]
    fn rbf_derivative_values() {
        let p = RbfParams {
            variance: 2.0,
            weight: 3.0,
        };
        let (dt, dt2, dtt) = rbf_derivatives(5.0, 5.0, &p);
        assert_eq!(dt, 0.0);
        assert_eq!(dt2, 0.0);
        assert!((dtt - 6.0).abs() < 1e-12);

        let p1 = RbfParams {
            variance: 1.0,
            weight: 1.0,
        };
        let e = (-0.5f64).exp();
        let (dt, dt2, dtt) = rbf_derivatives(1.0, 0.0, &p1);
        assert!((dt + e).abs() < 1e-12);
        assert!((dt2 - e).abs() < 1e-12);
        assert!(dtt.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_derivatives_match_finite_differences(
            t in -2.0..2.0f64,
            t2 in -2.0..2.0f64,
            var in 0.2..4.0f64,
            w in 0.2..8.0f64,
        ) {
            let p = RbfParams { variance: var, weight: w };
            let h = 1e-5 / w.sqrt();
            let (dt, dt2, dtt) = rbf_derivatives(t, t2, &p);
            let fd_t = (rbf(t + h, t2, &p) - rbf(t - h, t2, &p)) / (2.0 * h);
            let fd_t2 = (rbf(t, t2 + h, &p) - rbf(t, t2 - h, &p)) / (2.0 * h);
            let fd_tt = (rbf(t + h, t2 + h, &p) - rbf(t + h, t2 - h, &p)
                - rbf(t - h, t2 + h, &p) + rbf(t - h, t2 - h, &p))
                / (4.0 * h * h);
            let scale = var * w.max(1.0);
            prop_assert!((dt - fd_t).abs() <= 1e-6 * scale);
            prop_assert!((dt2 - fd_t2).abs() <= 1e-6 * scale);
            prop_assert!((dtt - fd_tt).abs() <= 1e-5 * scale * w.max(1.0));
        }

        #[test]
        fn prop_exchange_symmetry(
            t in -2.0..2.0f64,
            t2 in -2.0..2.0f64,
            a in 0usize..3,
            b in 0usize..3,
        ) {
            let th = theta();
            let (ca, cb) = (CHANNEL_ORDER[a], CHANNEL_ORDER[b]);
            let lhs = cross_kernel(ca, cb, t, t2, &th);
            let rhs = cross_kernel(cb, ca, t2, t, &th);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn prop_joint_kernel_psd(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let th = LineHyperParams {
                current_kernel: RbfParams {
                    variance: rng.random_range(0.1..4.0),
                    weight: rng.random_range(0.2..20.0),
                },
                voltage_kernel: RbfParams {
                    variance: rng.random_range(0.1..4.0),
                    weight: rng.random_range(0.2..20.0),
                },
                r: rng.random_range(0.01..2.0),
                l: rng.random_range(0.01..0.5),
                noise_ii: 1e-4,
                noise_vj: 1e-4,
                noise_vi: 1e-4,
            };
            let times = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
            };
            let (t_ii, t_vj, t_vi) =
                (times(&mut rng, 6), times(&mut rng, 5), times(&mut rng, 5));
            let jk = assemble_joint(&t_ii, &t_vj, &t_vi, &th).unwrap();
            prop_assert_eq!(&jk.matrix, &jk.matrix.transpose());
            let ed = eigh_real(&jk.matrix).unwrap();
            let max_diag = jk.matrix.diagonal().max();
            prop_assert!(ed.eigenvalues[0] >= -1e-8 * max_diag);
            // strictly PD once noise is added
            let noisy = &jk.matrix + RMatrix::from_diagonal(&jk.noise_diagonal(&th));
            prop_assert!(eigh_real(&noisy).unwrap().eigenvalues[0] > 0.0);
        }
    }

    #[test]
    fn degenerate_line_parameters() {
        let mut th = theta();
        th.r = 1e-300;
        th.l = 1e-300;
        let kv = rbf(0.3, 0.9, &th.voltage_kernel);
        assert!((cross_kernel(Channel::Vi, Channel::Vi, 0.3, 0.9, &th) - kv).abs() < 1e-12);
        assert!(cross_kernel(Channel::Vi, Channel::Ii, 0.3, 0.9, &th).abs() < 1e-12);
        th.r = 0.8;
        let ki = rbf(0.3, 0.9, &th.current_kernel);
        assert!((cross_kernel(Channel::Vi, Channel::Ii, 0.3, 0.9, &th) - th.r * ki).abs() < 1e-12);
    }

    #[test]
    fn joint_kernel_shapes() {
        let th = theta();
        let t11a: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let t11b: Vec<f64> = (0..11).map(|i| 0.05 + i as f64 * 0.1).collect();
        let t10: Vec<f64> = (0..10).map(|i| 0.02 + i as f64 * 0.1).collect();
        let jk = assemble_joint(&t11a, &t11b, &t10, &th).unwrap();
        assert_eq!(jk.matrix.nrows(), 32);
        assert_eq!(jk.matrix.ncols(), 32);
        assert!(matches!(
            assemble_joint(&[], &t11b, &t10, &th),
            Err(KernelError::EmptyChannel("i_i"))
        ));
    }

    #[test]
    fn single_point_block_structure() {
        let mut th = theta();
        th.r = 1e-300;
        th.l = 1e-300;
        let jk = assemble_joint(&[0.5], &[0.5], &[0.5], &th).unwrap();
        // i_i decouples from both voltages; v_j and v_i share k_V
        assert!(jk.matrix[(0, 1)].abs() < 1e-12);
        assert!(jk.matrix[(0, 2)].abs() < 1e-12);
        let kv = th.voltage_kernel.variance;
        assert!((jk.matrix[(1, 2)] - kv).abs() < 1e-12);
        assert!((jk.matrix[(0, 0)] - th.current_kernel.variance).abs() < 1e-12);
    }

    #[test]
    fn cross_vectors_match_joint_rows() {
        let th = theta();
        let t_ii = [0.1, 0.4, 0.9];
        let t_vj = [0.2, 0.6];
        let t_vi = [0.05, 0.75];
        let jk = assemble_joint(&t_ii, &t_vj, &t_vi, &th).unwrap();
        // v_j at a training time reproduces its row; i_i segment is zero
        let q = cross_vectors(Channel::Vj, 0.6, &t_ii, &t_vj, &t_vi, &th);
        for col in 0..jk.matrix.ncols() {
            assert!((q[col] - jk.matrix[(4, col)]).abs() < 1e-14);
        }
        assert_eq!(q[0], 0.0);
        assert_eq!(q[1], 0.0);
        assert_eq!(q[2], 0.0);
        let q = cross_vectors(Channel::Vi, 0.75, &t_ii, &t_vj, &t_vi, &th);
        for col in 0..jk.matrix.ncols() {
            assert!((q[col] - jk.matrix[(6, col)]).abs() < 1e-14);
        }
    }

    #[test]
    fn channel_parsing() {
        assert_eq!("i_i".parse::<Channel>().unwrap(), Channel::Ii);
        assert_eq!("v_j".parse::<Channel>().unwrap(), Channel::Vj);
        assert_eq!("v_i".parse::<Channel>().unwrap(), Channel::Vi);
        assert!(matches!(
            "v_k".parse::<Channel>(),
            Err(KernelError::UnknownChannel(_))
        ));
    }

    /// Monte-Carlo oracle: draw i_i and v_j paths from their RBF priors,
    /// propagate v_i through the line equation with a near-exact
    /// finite-difference derivative, and compare empirical covariances
    /// against cross_kernel within three standard errors.
    #[test]
    fn monte_carlo_cross_covariance() {
        let th = theta();
        let grid: Vec<f64> = (0..6).map(|i| i as f64 * 0.25).collect();
        let delta = 1e-3;
        // current sampled at each grid point plus t +/- delta for the
        // derivative; receiving voltage at the grid points
        let mut i_times = Vec::new();
        for &t in &grid {
            i_times.extend([t, t - delta, t + delta]);
        }
        let ni = i_times.len();
        let n = ni + grid.len();
        let mut cov = RMatrix::zeros(n, n);
        for a in 0..ni {
            for b in 0..ni {
                cov[(a, b)] = rbf(i_times[a], i_times[b], &th.current_kernel);
            }
        }
        for a in 0..grid.len() {
            for b in 0..grid.len() {
                cov[(ni + a, ni + b)] = rbf(grid[a], grid[b], &th.voltage_kernel);
            }
        }
        let root = psd_sqrt_real(&cov).unwrap();

        let paths = 20_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let npts = grid.len();
        // per-path channel values at the grid points
        let mut ii = vec![vec![0.0f64; npts]; paths];
        let mut vj = vec![vec![0.0f64; npts]; paths];
        let mut vi = vec![vec![0.0f64; npts]; paths];
        for p in 0..paths {
            let z = RVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &root * z;
            for (g, _) in grid.iter().enumerate() {
                let i0 = x[3 * g];
                let di = (x[3 * g + 2] - x[3 * g + 1]) / (2.0 * delta);
                let v = x[ni + g];
                ii[p][g] = i0;
                vj[p][g] = v;
                vi[p][g] = th.r * i0 + th.l * di + v;
            }
        }

        let check = |xa: &dyn Fn(usize, usize) -> f64,
                     xb: &dyn Fn(usize, usize) -> f64,
                     ca: Channel,
                     cb: Channel| {
            for ga in 0..npts {
                for gb in 0..npts {
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for p in 0..paths {
                        let prod = xa(p, ga) * xb(p, gb);
                        s += prod;
                        s2 += prod * prod;
                    }
                    let mean = s / paths as f64;
                    let var = (s2 / paths as f64 - mean * mean).max(0.0);
                    let se = (var / paths as f64).sqrt();
                    let expect = cross_kernel(ca, cb, grid[ga], grid[gb], &th);
                    assert!(
                        (mean - expect).abs() <= 3.0 * se + 1e-9,
                        "{ca:?}{cb:?} ({ga},{gb}): {mean} vs {expect}, se {se}"
                    );
                }
            }
        };
        check(&|p, g| vi[p][g], &|p, g| ii[p][g], Channel::Vi, Channel::Ii);
        check(&|p, g| vi[p][g], &|p, g| vj[p][g], Channel::Vi, Channel::Vj);
        check(&|p, g| vi[p][g], &|p, g| vi[p][g], Channel::Vi, Channel::Vi);
        check(&|p, g| ii[p][g], &|p, g| vj[p][g], Channel::Ii, Channel::Vj);
    }
}
