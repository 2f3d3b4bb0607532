//! Multi-output Gaussian process engine whose marginal-likelihood quadratic
//! form can be evaluated either classically or by a simulated HHL circuit
//! (quantum phase estimation, conditioned eigenvalue inversion, and
//! approximate-compiling depth reduction), applied to estimating the series
//! resistance and inductance of a two-node electrical line from noisy
//! voltage/current samples.

pub mod aqc;
pub mod engine;
pub mod hhl;
pub mod kernels;
pub mod lpe;
pub mod numerics;
pub mod qcircuit;
