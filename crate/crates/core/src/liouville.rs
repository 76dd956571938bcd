//! Small-N builders for the XX Hamiltonian, its measured Lindbladian and the
//! equivalent ladder operator, plus the closed-form modes used as checks.
//!
//! Vectorization is row-major: |ρ⟩⟩ = Σ ρ_ST |S⟩|T⟩, so the ket copy of site i
//! is qubit i and the bra copy is qubit N + i. The ladder form instead
//! interleaves rungs: rung i has its upper (ket) spin on qubit 2i and its
//! lower (bra) spin on qubit 2i + 1, and the lower rail is spin-flipped.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::pauli::{Axis, DenseOperator, PauliError, PauliString, PauliSum};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub const MAX_CHAIN_SITES: usize = 10;
pub const MAX_LADDER_RUNGS: usize = 5;
/// Residual ‖ℒv − λv‖ / ‖ℒ‖ accepted for the closed-form modes.
pub const MODE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiouvilleError {
    #[error("the chain needs an even number of sites, got {0}")]
    OddChain(usize),
    #[error("{what} supports at most {max} sites, got {n}")]
    Capacity { what: &'static str, n: usize, max: usize },
    #[error("expected {expected} {what} values, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("measurement rate {value} at site {site} is negative after scaling")]
    NegativeRate { site: usize, value: f64 },
    #[error("parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("a chain needs at least one site")]
    Empty,
    #[error("closed-form mode {label} failed verification (residual {residual:.3e})")]
    ModeCheck { label: &'static str, residual: f64 },
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

/// Microscopic model: XX couplings J_i on bond (i, i+1 mod N), measurement
/// rates p_i, global scale β on every rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    couplings: Vec<f64>,
    rates: Vec<f64>,
    beta: f64,
}

impl LadderSpec {
    pub fn new(couplings: Vec<f64>, rates: Vec<f64>, beta: f64) -> Result<Self, LiouvilleError> {
        let n = couplings.len();
        if n == 0 {
            return Err(LiouvilleError::Empty);
        }
        if rates.len() != n {
            return Err(LiouvilleError::LengthMismatch { what: "rate", expected: n, got: rates.len() });
        }
        if !beta.is_finite() {
            return Err(LiouvilleError::NonFinite("beta"));
        }
        if couplings.iter().any(|j| !j.is_finite()) {
            return Err(LiouvilleError::NonFinite("J"));
        }
        for (site, &p) in rates.iter().enumerate() {
            if !p.is_finite() {
                return Err(LiouvilleError::NonFinite("p"));
            }
            if p * beta < 0.0 {
                return Err(LiouvilleError::NegativeRate { site, value: p * beta });
            }
        }
        Ok(Self { couplings, rates, beta })
    }

    pub fn n_rungs(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// p_i β.
    pub fn effective_rate(&self, i: usize) -> f64 {
        self.rates[i] * self.beta
    }

    /// Σ p_i β.
    pub fn total_rate(&self) -> f64 {
        (0..self.n_rungs()).map(|i| self.effective_rate(i)).sum()
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, LiouvilleError> {
        Self::new(self.couplings.clone(), self.rates.clone(), beta)
    }

    fn require_even(&self) -> Result<(), LiouvilleError> {
        if self.n_rungs() % 2 == 1 {
            Err(LiouvilleError::OddChain(self.n_rungs()))
        } else {
            Ok(())
        }
    }
}

fn check_capacity(what: &'static str, n: usize, max: usize) -> Result<(), LiouvilleError> {
    if n > max {
        Err(LiouvilleError::Capacity { what, n, max })
    } else {
        Ok(())
    }
}

/// H = Σ −J_i (X_i X_{i+1} + Y_i Y_{i+1}), periodic.
pub fn hamiltonian_terms(spec: &LadderSpec) -> PauliSum {
    let n = spec.n_rungs();
    let mut h = PauliSum::new(n);
    for (i, &j) in spec.couplings().iter().enumerate() {
        let k = (i + 1) % n;
        h.push_pair(C64::new(-j, 0.0), i, Axis::X, k, Axis::X);
        h.push_pair(C64::new(-j, 0.0), i, Axis::Y, k, Axis::Y);
    }
    h
}

pub fn build_hamiltonian(spec: &LadderSpec) -> Result<DenseOperator, LiouvilleError> {
    spec.require_even()?;
    check_capacity("build_hamiltonian", spec.n_rungs(), MAX_CHAIN_SITES)?;
    Ok(hamiltonian_terms(spec).to_dense()?)
}

/// ℒ = −i(H⊗𝕀 − 𝕀⊗Hᵀ) + Σ (p_iβ/2)(X_i⊗X_i − Y_i⊗Y_i − 2𝕀).
///
/// Odd N is accepted here (N = 1 is the single-site check); the periodic
/// bond of a one-site chain is a constant and drops out of the commutator.
pub fn build_lindbladian(spec: &LadderSpec) -> Result<DenseOperator, LiouvilleError> {
    let n = spec.n_rungs();
    check_capacity("build_lindbladian", n, MAX_LADDER_RUNGS)?;
    let h = hamiltonian_terms(spec).to_dense()?;
    let id = DenseOperator::identity(h.dim());
    let coherent = &h.kron(&id) - &id.kron(&h.transpose());
    let mut l = coherent.scaled(-I);
    let mut diss = PauliSum::new(2 * n);
    for i in 0..n {
        let g = spec.effective_rate(i) / 2.0;
        diss.push_pair(C64::new(g, 0.0), i, Axis::X, n + i, Axis::X);
        diss.push_pair(C64::new(-g, 0.0), i, Axis::Y, n + i, Axis::Y);
        diss.push_identity(C64::new(-2.0 * g, 0.0));
    }
    l += &diss.to_dense()?;
    Ok(l)
}

/// Σ iJ_i[(𝒳_i𝒳_{i+1} + 𝒴_i𝒴_{i+1}) − (x_i x_{i+1} + y_i y_{i+1})]
///   + Σ (p_iβ/2)(𝒳_i x_i + 𝒴_i y_i − 2𝕀).
pub fn ladder_terms(spec: &LadderSpec) -> PauliSum {
    let n = spec.n_rungs();
    let mut l = PauliSum::new(2 * n);
    for (i, &j) in spec.couplings().iter().enumerate() {
        let k = (i + 1) % n;
        for axis in [Axis::X, Axis::Y] {
            l.push_pair(I * j, 2 * i, axis, 2 * k, axis);
            l.push_pair(-I * j, 2 * i + 1, axis, 2 * k + 1, axis);
        }
    }
    for i in 0..n {
        let v = spec.effective_rate(i) / 2.0;
        l.push_pair(C64::new(v, 0.0), 2 * i, Axis::X, 2 * i + 1, Axis::X);
        l.push_pair(C64::new(v, 0.0), 2 * i, Axis::Y, 2 * i + 1, Axis::Y);
        l.push_identity(C64::new(-2.0 * v, 0.0));
    }
    l
}

pub fn build_ladder_liouvillian(spec: &LadderSpec) -> Result<DenseOperator, LiouvilleError> {
    check_capacity("build_ladder_liouvillian", spec.n_rungs(), MAX_LADDER_RUNGS)?;
    Ok(ladder_terms(spec).to_dense()?)
}

/// Row-major vectorization of an operator on the chain.
pub fn vectorize(op: &DenseOperator) -> Vec<C64> {
    op.as_slice().to_vec()
}

pub fn unvectorize(v: &[C64]) -> DenseOperator {
    let d = (v.len() as f64).sqrt().round() as usize;
    DenseOperator::from_rows(d, v.to_vec())
}

#[derive(Debug, Clone)]
pub struct KnownMode {
    pub label: &'static str,
    pub vector: Vec<C64>,
    pub eigenvalue: C64,
    pub residual: f64,
}

fn product_string(n: usize, axis: Axis) -> PauliString {
    PauliString::new(n, (0..n).map(|i| (i, axis))).expect("sites in range")
}

/// The identity, parity and ∏X/∏Y modes with eigenvalues 0, −2Σpβ, −Σpβ,
/// −Σpβ, each verified against `build_lindbladian`.
pub fn known_modes(spec: &LadderSpec) -> Result<Vec<KnownMode>, LiouvilleError> {
    let n = spec.n_rungs();
    check_capacity("known_modes", n, MAX_LADDER_RUNGS)?;
    let l = build_lindbladian(spec)?;
    let lnorm = l.frobenius_norm().max(f64::MIN_POSITIVE);
    let total = spec.total_rate();
    let cases = [
        ("identity", PauliString::identity(n), 0.0),
        ("parity", product_string(n, Axis::Z), -2.0 * total),
        ("prod_x", product_string(n, Axis::X), -total),
        ("prod_y", product_string(n, Axis::Y), -total),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (label, s, lambda) in cases {
        let mut op = DenseOperator::zeros(1 << n);
        op.add_string(ONE, &s);
        let mut v = vectorize(&op);
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in v.iter_mut() {
            *z /= norm;
        }
        let lv = l.apply(&v);
        let eigenvalue = C64::new(lambda, 0.0);
        let residual = lv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - eigenvalue * b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / lnorm;
        if residual > MODE_TOL {
            return Err(LiouvilleError::ModeCheck { label, residual });
        }
        out.push(KnownMode { label, vector: v, eigenvalue, residual });
    }
    Ok(out)
}

/// Largest distance in a greedy nearest-neighbour matching of two multisets.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, y) in b.iter().enumerate() {
            if !used[j] {
                let d = (x - y).norm();
                if d < best.1 {
                    best = (j, d);
                }
            }
        }
        used[best.0] = true;
        worst = worst.max(best.1);
    }
    worst
}

/// Distance from `target` to the `rank`-th nearest element (rank 0 is the
/// nearest), so multiplicities can be checked.
pub fn nth_distance(values: &[C64], target: C64, rank: usize) -> f64 {
    let mut d: Vec<f64> = values.iter().map(|z| (z - target).norm()).collect();
    d.sort_by(f64::total_cmp);
    d.get(rank).copied().unwrap_or(f64::INFINITY)
}

/// Structural checks of a Lindbladian spectrum against the spec's analytic
/// content. Each field is an error magnitude; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumChecks {
    /// Distance of the nearest eigenvalue to 0.
    pub steady_state: f64,
    /// Distance of the nearest eigenvalue to −2Σpβ.
    pub parity_mode: f64,
    /// Distance of the second-nearest eigenvalue to −Σpβ (two modes).
    pub xy_modes: f64,
    /// Mismatch between {λ + Σpβ} and its negation.
    pub symmetry: f64,
    /// Largest real part.
    pub max_real: f64,
    /// Multiset mismatch between the two builders' spectra.
    pub builder_mismatch: f64,
    /// Frobenius norm of ℒ.
    pub norm: f64,
}

pub fn spectrum_checks(spec: &LadderSpec, lindblad: &[C64], ladder: &[C64], norm: f64) -> SpectrumChecks {
    let total = spec.total_rate();
    let shifted: Vec<C64> = lindblad.iter().map(|z| z + total).collect();
    let mirrored: Vec<C64> = shifted.iter().map(|z| -z).collect();
    SpectrumChecks {
        steady_state: nth_distance(lindblad, ZERO, 0),
        parity_mode: nth_distance(lindblad, C64::new(-2.0 * total, 0.0), 0),
        xy_modes: nth_distance(lindblad, C64::new(-total, 0.0), 1),
        symmetry: multiset_distance(&shifted, &mirrored),
        max_real: lindblad.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
        builder_mismatch: multiset_distance(lindblad, ladder),
        norm,
    }
}
