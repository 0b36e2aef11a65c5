//! Numerics for one-dimensional quasi-periodic Schrödinger operators
//! `(Hx)_n = x_{n+1} + x_{n-1} + λ f(θ + nα) x_n`: rational-approximant band
//! structure, gap labels, Aubry-dual Bloch waves, reducibility to parabolic
//! normal form and gap-edge perturbation.

pub mod arithmetic;
pub mod cocycle;
pub mod duality;
pub mod error;
pub mod fourier;
pub mod hexfloat;
pub mod linalg;
pub mod pipeline;
pub mod reducibility;
pub mod spectrum;

pub use arithmetic::{estimate_beta, expand_cf, norm_dist, small_divisor, synth_liouville, BetaEstimate, Frequency};
pub use error::{Error, Result};
