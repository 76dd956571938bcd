//! Strong-disorder renormalization (RSRG-X) for XX chains under random X/Y
//! measurements, via the vectorized Lindbladian viewed as a non-Hermitian
//! two-leg spin ladder.

pub mod pauli;
pub mod liouville;
pub mod rulegen;
pub mod spectra;
pub mod rng;
pub mod ladder;
pub mod flow;

pub use num_complex::Complex64 as C64;
