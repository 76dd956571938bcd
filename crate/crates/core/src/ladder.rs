//! Large-N decimation engine on the periodic ladder.
//!
//! Live rungs form a ring through `prev`/`next`; the cell stored at rung k
//! joins k to `next[k]`. Couplings are kept as [`LogValue`]s so that
//! strengths far below the f64 range stay representable. A max-heap of bond
//! magnitudes with per-bond version counters gives O(log N) selection; stale
//! heap entries are discarded when they surface.
//!
//! Disconnected stretches need no special casing: a type −1 cell is an
//! absent neighbour, and the rule tables carry those contexts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{self, BufRead, Write};

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowSnapshot;
use crate::liouville::MAX_LADDER_RUNGS;
use crate::pauli::PauliSum;
use crate::rng::{self, Purpose};
use crate::rulegen::{
    cell_terms, default_branch, vertical_terms, Branch, CellType, Context, DecimationRule,
    RuleKind, RuleTable,
};
use crate::spectra::eigenvalues_general;

pub const EVENT_SCHEMA_VERSION: u32 = 1;
/// Phases within this distance of 0 or π count as real.
const PHASE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LadderError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no rule for {0}")]
    MissingRule(String),
    #[error("rule {context} could not be derived: {reason}")]
    RuleFailed { context: String, reason: String },
    #[error("vertical bond on rung {0} is complex; no rule decimates it")]
    ComplexVertical(usize),
    #[error("cell at rung {0} carries a non-real coupling")]
    ComplexCoupling(usize),
    #[error("chain has no live bonds")]
    Empty,
    #[error("replay mismatch at step {step}: {detail}")]
    Replay { step: u64, detail: String },
    #[error("closeout failed: {0}")]
    Closeout(String),
    #[error("event log: {0}")]
    EventLog(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Log-domain values
// ---------------------------------------------------------------------------

/// Complex number as natural-log modulus plus phase in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    log_mag: f64,
    phase: f64,
}

fn wrap_phase(mut p: f64) -> f64 {
    if p > PI || p <= -PI {
        p = (p + PI).rem_euclid(TAU) - PI;
        if p == -PI {
            p = PI;
        }
    }
    p
}

impl LogValue {
    pub const ZERO: LogValue = LogValue { log_mag: f64::NEG_INFINITY, phase: 0.0 };
    pub const ONE: LogValue = LogValue { log_mag: 0.0, phase: 0.0 };

    pub fn from_parts(log_mag: f64, phase: f64) -> Self {
        if log_mag == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogValue { log_mag, phase: wrap_phase(phase) }
    }

    pub fn from_real(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogValue { log_mag: x.abs().ln(), phase: if x < 0.0 { PI } else { 0.0 } }
        }
    }

    pub fn from_complex(z: C64) -> Self {
        if z.re == 0.0 && z.im == 0.0 {
            Self::ZERO
        } else if z.im == 0.0 {
            Self::from_real(z.re)
        } else {
            LogValue { log_mag: z.norm().ln(), phase: z.arg() }
        }
    }

    pub fn log_mag(self) -> f64 {
        self.log_mag
    }

    pub fn phase(self) -> f64 {
        self.phase
    }

    pub fn is_zero(self) -> bool {
        self.log_mag == f64::NEG_INFINITY
    }

    /// Phase 0 or π (exact zero counts as real).
    pub fn is_real(self) -> bool {
        self.is_zero() || self.phase.abs() <= PHASE_TOL || (PI - self.phase.abs()) <= PHASE_TOL
    }

    /// ±1 for real values, 0 for exact zero.
    pub fn real_sign(self) -> f64 {
        if self.is_zero() {
            0.0
        } else if self.phase.abs() <= PI / 2.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_complex(self) -> C64 {
        if self.is_zero() {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.log_mag.exp(), self.phase)
    }

    pub fn mul(self, other: LogValue) -> LogValue {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        Self::from_parts(self.log_mag + other.log_mag, self.phase + other.phase)
    }

    pub fn div(self, other: LogValue) -> LogValue {
        assert!(!other.is_zero(), "division by an exact zero");
        if self.is_zero() {
            return Self::ZERO;
        }
        Self::from_parts(self.log_mag - other.log_mag, self.phase - other.phase)
    }

    pub fn scale(self, z: C64) -> LogValue {
        self.mul(Self::from_complex(z))
    }

    pub fn neg(self) -> LogValue {
        if self.is_zero() {
            self
        } else {
            Self::from_parts(self.log_mag, self.phase + PI)
        }
    }

    /// Log-sum-exp addition with phases.
    pub fn add(self, other: LogValue) -> LogValue {
        let (big, small) = if self.log_mag >= other.log_mag { (self, other) } else { (other, self) };
        if small.is_zero() {
            return big;
        }
        let ratio = C64::from_polar((small.log_mag - big.log_mag).exp(), small.phase - big.phase);
        // ln|1 + r| = ½ ln1p(2 Re r + |r|²)
        let t = 2.0 * ratio.re + ratio.norm_sqr();
        if t <= -1.0 {
            return Self::ZERO;
        }
        let sum = C64::new(1.0, 0.0) + ratio;
        Self::from_parts(big.log_mag + 0.5 * t.ln_1p(), big.phase + sum.im.atan2(sum.re))
    }

    /// Real part, keeping the sign in the phase.
    pub fn real_part(self) -> LogValue {
        if self.is_zero() || self.phase == 0.0 || self.phase == PI {
            return self;
        }
        let c = self.phase.cos();
        if c.abs() <= PHASE_TOL {
            return Self::ZERO;
        }
        LogValue { log_mag: self.log_mag + c.abs().ln(), phase: if c < 0.0 { PI } else { 0.0 } }
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({})·e^(i{})", self.log_mag, self.phase)
    }
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub ctype: CellType,
    pub strength: LogValue,
}

impl Cell {
    pub const DISCONNECTED: Cell = Cell { ctype: CellType::DISCONNECTED, strength: LogValue::ZERO };

    /// Zero strength or type −1 collapse to the disconnected cell.
    pub fn new(ctype: CellType, strength: LogValue) -> Cell {
        if !ctype.is_connected() || strength.is_zero() {
            Cell::DISCONNECTED
        } else {
            Cell { ctype, strength }
        }
    }

    pub fn is_connected(&self) -> bool {
        self.ctype.is_connected()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RungRole {
    /// Still live when the run stopped.
    Undecimated,
    /// Member of a decimated pair; `branch` is the state actually selected.
    Paired { partner: usize, branch: Branch },
    /// Vertical bond projected onto its longest-lived (maximally mixed) state.
    MixedSite,
    /// Vertical bond projected onto its fastest-decaying state.
    DecayingSite,
    /// Left over in a remainder too small to decimate; handled by exact
    /// diagonalization at closeout.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub kind: RuleKind,
    pub rung: usize,
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    log_mag: f64,
    bond: Bond,
    version: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Larger magnitude first; ties go to the lower rung, then J before p.
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_mag
            .total_cmp(&other.log_mag)
            .then_with(|| other.bond.rung.cmp(&self.bond.rung))
            .then_with(|| other.bond.kind.cmp(&self.bond.kind))
            .then_with(|| self.version.cmp(&other.version))
    }
}

/// Mutable state of one ladder; equality ignores the heap.
#[derive(Debug, Clone)]
pub struct Chain {
    n_original: usize,
    live: usize,
    alive: Vec<bool>,
    prev: Vec<usize>,
    next: Vec<usize>,
    cells: Vec<Cell>,
    verticals: Vec<LogValue>,
    roles: Vec<RungRole>,
    cell_version: Vec<u32>,
    vert_version: Vec<u32>,
    heap: BinaryHeap<HeapEntry>,
    gamma: f64,
    omega0: f64,
    steps: u64,
    non_monotone: u64,
    accumulator: C64,
    closeout: Option<C64>,
    drop_imag_vertical: bool,
}

impl PartialEq for Chain {
    fn eq(&self, o: &Self) -> bool {
        self.n_original == o.n_original
            && self.live == o.live
            && self.alive == o.alive
            && self.prev == o.prev
            && self.next == o.next
            && self.cells == o.cells
            && self.verticals == o.verticals
            && self.roles == o.roles
            && self.gamma.to_bits() == o.gamma.to_bits()
            && self.steps == o.steps
            && self.non_monotone == o.non_monotone
            && self.accumulator == o.accumulator
            && self.closeout == o.closeout
    }
}

/// Smallest ring accepted by `Chain::new`.
pub const MIN_RUNGS: usize = 1;

impl Chain {
    /// Ring with cell k joining rung k to rung k+1 (mod N) and vertical bond
    /// strengths `verticals` (v = pβ/2).
    pub fn new(cells: Vec<Cell>, verticals: Vec<LogValue>, drop_imag_vertical: bool) -> Result<Chain, LadderError> {
        let n = cells.len();
        if n < MIN_RUNGS || verticals.len() != n {
            return Err(LadderError::Config(format!(
                "need equal, nonzero numbers of cells and vertical bonds (got {n} and {})",
                verticals.len()
            )));
        }
        let mut chain = Chain {
            n_original: n,
            live: n,
            alive: vec![true; n],
            prev: (0..n).map(|k| (k + n - 1) % n).collect(),
            next: (0..n).map(|k| (k + 1) % n).collect(),
            cells,
            verticals,
            roles: vec![RungRole::Undecimated; n],
            cell_version: vec![0; n],
            vert_version: vec![0; n],
            heap: BinaryHeap::with_capacity(2 * n),
            gamma: f64::NAN,
            omega0: f64::NAN,
            steps: 0,
            non_monotone: 0,
            accumulator: C64::new(0.0, 0.0),
            closeout: None,
            drop_imag_vertical,
        };
        if n == 1 {
            chain.cells[0] = Cell::DISCONNECTED;
        }
        for k in 0..n {
            chain.cells[k] = Cell::new(chain.cells[k].ctype, chain.cells[k].strength);
            chain.push_cell(k);
            chain.push_vertical(k);
        }
        let top = chain.heap.peek().map(|e| e.log_mag);
        if let Some(lm) = top {
            chain.omega0 = lm;
            chain.gamma = -lm;
        }
        Ok(chain)
    }

    fn push_cell(&mut self, k: usize) {
        self.cell_version[k] = self.cell_version[k].wrapping_add(1);
        let c = self.cells[k];
        if c.is_connected() {
            self.heap.push(HeapEntry {
                log_mag: c.strength.log_mag(),
                bond: Bond { kind: RuleKind::J, rung: k },
                version: self.cell_version[k],
            });
        }
    }

    fn push_vertical(&mut self, k: usize) {
        self.vert_version[k] = self.vert_version[k].wrapping_add(1);
        let v = self.verticals[k];
        if !v.is_zero() {
            self.heap.push(HeapEntry {
                log_mag: v.log_mag(),
                bond: Bond { kind: RuleKind::P, rung: k },
                version: self.vert_version[k],
            });
        }
    }

    fn is_current(&self, e: &HeapEntry) -> bool {
        let k = e.bond.rung;
        self.alive[k]
            && match e.bond.kind {
                RuleKind::J => e.version == self.cell_version[k] && self.cells[k].is_connected(),
                RuleKind::P => e.version == self.vert_version[k] && !self.verticals[k].is_zero(),
            }
    }

    /// Largest live bond; ties resolved towards the lower rung, J first.
    pub fn strongest_bond(&mut self) -> Option<Bond> {
        while let Some(top) = self.heap.peek() {
            if self.is_current(top) {
                return Some(top.bond);
            }
            self.heap.pop();
        }
        None
    }

    pub fn n_original(&self) -> usize {
        self.n_original
    }

    /// Live rungs.
    pub fn survivors(&self) -> usize {
        self.live
    }

    /// Running Γ = −ln Ω with the monotone clamp.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// ln of the initial strongest bond.
    pub fn omega0_log(&self) -> f64 {
        self.omega0
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn non_monotone_count(&self) -> u64 {
        self.non_monotone
    }

    pub fn accumulated_eigenvalue(&self) -> C64 {
        self.accumulator + self.closeout.unwrap_or(C64::new(0.0, 0.0))
    }

    /// Shift terms gathered by decimation, without the closeout.
    pub fn accumulator(&self) -> C64 {
        self.accumulator
    }

    pub fn closeout(&self) -> Option<C64> {
        self.closeout
    }

    pub fn live_rungs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_original).filter(move |&k| self.alive[k])
    }

    /// Live rungs in ring order starting from the lowest index.
    pub fn ring_order(&self) -> Vec<usize> {
        let Some(start) = self.live_rungs().next() else { return Vec::new() };
        let mut out = vec![start];
        let mut k = self.next[start];
        while k != start {
            out.push(k);
            k = self.next[k];
        }
        out
    }

    pub fn cell(&self, k: usize) -> Cell {
        self.cells[k]
    }

    pub fn vertical(&self, k: usize) -> LogValue {
        self.verticals[k]
    }

    pub fn next_rung(&self, k: usize) -> usize {
        self.next[k]
    }

    pub fn prev_rung(&self, k: usize) -> usize {
        self.prev[k]
    }

    pub fn is_alive(&self, k: usize) -> bool {
        self.alive[k]
    }

    pub fn roles(&self) -> &[RungRole] {
        &self.roles
    }

    /// ζ of every live connected cell against the current Γ, clamped at 0.
    pub fn zeta_cells(&self) -> Vec<f64> {
        self.live_rungs()
            .filter(|&k| self.cells[k].is_connected())
            .map(|k| (-self.gamma - self.cells[k].strength.log_mag()).max(0.0))
            .collect()
    }

    /// ζ of every live nonzero vertical bond.
    pub fn zeta_verticals(&self) -> Vec<f64> {
        self.live_rungs()
            .filter(|&k| !self.verticals[k].is_zero())
            .map(|k| (-self.gamma - self.verticals[k].log_mag()).max(0.0))
            .collect()
    }

    /// Type census over live cells, indexed by code + 1.
    pub fn type_census(&self) -> [usize; 6] {
        let mut out = [0; 6];
        for k in self.live_rungs() {
            out[(self.cells[k].ctype.code() + 1) as usize] += 1;
        }
        out
    }

    fn distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        d.min(self.n_original - d)
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Bond-magnitude families. For vertical bonds the drawn value is v = p/2
/// before β; `Explicit` lists are physical couplings or rates p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    /// ζ ~ Exp(mean Γ₀), magnitude e^(−Γ₀−ζ).
    Exponential { gamma0: f64 },
    /// magnitude = scale·10^(−decades·u), u uniform on [0, 1).
    LogUniform { decades: f64, scale: f64 },
    Constant { value: f64 },
    Explicit { values: Vec<f64> },
    Zero,
}

impl Distribution {
    fn validate(&self, n: usize, what: &str) -> Result<(), LadderError> {
        let bad = |m: String| Err(LadderError::Config(format!("{what}: {m}")));
        match self {
            Distribution::Exponential { gamma0 } if !(*gamma0 > 0.0 && gamma0.is_finite()) => {
                bad(format!("Γ₀ must be positive and finite, got {gamma0}"))
            }
            Distribution::LogUniform { decades, scale } if !(*decades >= 0.0 && *scale > 0.0) => {
                bad(format!("log-uniform needs decades ≥ 0 and scale > 0, got {decades}, {scale}"))
            }
            Distribution::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                bad(format!("constant must be finite and non-negative, got {value}"))
            }
            Distribution::Explicit { values } if values.len() != n => {
                bad(format!("explicit list has {} entries for {n} rungs", values.len()))
            }
            Distribution::Explicit { values } if values.iter().any(|v| !v.is_finite()) => {
                bad("explicit list has non-finite entries".into())
            }
            _ => Ok(()),
        }
    }

    /// Signed magnitudes for sites 0..n, as the chain initializer draws them.
    pub fn values(&self, seed: u64, purpose: Purpose, n: usize) -> Vec<f64> {
        match self {
            Distribution::Explicit { values } => values.clone(),
            _ => (0..n).map(|k| self.draw_log(seed, purpose, k).map_or(0.0, f64::exp)).collect(),
        }
    }

    /// log|magnitude| at `site`, or None for zero.
    fn draw_log(&self, seed: u64, purpose: Purpose, site: usize) -> Option<f64> {
        let u = || rng::uniform(seed, purpose, site as u64, 0);
        match self {
            Distribution::Exponential { gamma0 } => {
                let zeta = -gamma0 * (-u()).ln_1p();
                Some(-gamma0 - zeta)
            }
            Distribution::LogUniform { decades, scale } => {
                Some(scale.ln() - decades * u() * std::f64::consts::LN_10)
            }
            Distribution::Constant { value } => (*value > 0.0).then(|| value.ln()),
            Distribution::Explicit { values } => {
                let v = values[site];
                (v != 0.0).then(|| v.abs().ln())
            }
            Distribution::Zero => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_rungs: usize,
    pub couplings: Distribution,
    pub rates: Distribution,
    pub beta: f64,
    /// Type given to every cell with nonzero coupling.
    pub initial_type: CellType,
    /// Per-cell types overriding `initial_type`.
    pub cell_types: Option<Vec<CellType>>,
    /// Each J is multiplied by exp(σ(2u − 1)) with this σ.
    pub coupling_noise: f64,
    pub drop_imag_vertical: bool,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(n_rungs: usize, couplings: Distribution, rates: Distribution) -> Self {
        ChainConfig {
            n_rungs,
            couplings,
            rates,
            beta: 1.0,
            initial_type: CellType::new(0).expect("valid"),
            cell_types: None,
            coupling_noise: 0.0,
            drop_imag_vertical: true,
            seed: 0,
        }
    }
}

/// Minimum size for randomly initialized large-N runs.
pub const MIN_INIT_RUNGS: usize = 6;

/// Draws a chain. Explicit lists may be shorter than `MIN_INIT_RUNGS` so
/// that small exact-diagonalization comparisons use the same path.
pub fn init_chain(cfg: &ChainConfig) -> Result<Chain, LadderError> {
    let n = cfg.n_rungs;
    let explicit = matches!(cfg.couplings, Distribution::Explicit { .. })
        && matches!(cfg.rates, Distribution::Explicit { .. } | Distribution::Zero);
    if n < MIN_INIT_RUNGS && !explicit {
        return Err(LadderError::Config(format!("need at least {MIN_INIT_RUNGS} rungs, got {n}")));
    }
    if n == 0 {
        return Err(LadderError::Config("empty chain".into()));
    }
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(LadderError::Config(format!("β must be finite and non-negative, got {}", cfg.beta)));
    }
    cfg.couplings.validate(n, "couplings")?;
    cfg.rates.validate(n, "rates")?;
    if let Some(types) = &cfg.cell_types {
        if types.len() != n {
            return Err(LadderError::Config(format!("{} cell types for {n} rungs", types.len())));
        }
    }
    if let Distribution::Explicit { values } = &cfg.rates {
        if values.iter().any(|&p| p < 0.0) {
            return Err(LadderError::Config("measurement rates must be non-negative".into()));
        }
    }
    let mut cells = Vec::with_capacity(n);
    let mut verticals = Vec::with_capacity(n);
    for k in 0..n {
        let ctype = cfg.cell_types.as_ref().map_or(cfg.initial_type, |t| t[k]);
        let strength = match cfg.couplings.draw_log(cfg.seed, Purpose::Coupling, k) {
            Some(mut lm) => {
                if cfg.coupling_noise > 0.0 {
                    let u = rng::uniform(cfg.seed, Purpose::CouplingNoise, k as u64, 0);
                    lm += cfg.coupling_noise * (2.0 * u - 1.0);
                }
                let sign = match &cfg.couplings {
                    Distribution::Explicit { values } if values[k] < 0.0 => PI,
                    _ => 0.0,
                };
                LogValue::from_parts(lm, sign)
            }
            None => LogValue::ZERO,
        };
        cells.push(Cell::new(ctype, strength));
        let v = match cfg.rates.draw_log(cfg.seed, Purpose::Rate, k) {
            Some(lm) if cfg.beta > 0.0 => {
                let half = if matches!(cfg.rates, Distribution::Explicit { .. }) { 0.5f64.ln() } else { 0.0 };
                LogValue::from_parts(lm + half + cfg.beta.ln(), 0.0)
            }
            _ => LogValue::ZERO,
        };
        verticals.push(v);
    }
    Chain::new(cells, verticals, cfg.drop_imag_vertical)
}

// ---------------------------------------------------------------------------
// Policy and events
// ---------------------------------------------------------------------------

/// Branch selection per step. Branches refer to the ℒ₀ of the bond as it
/// stands, sign of its coupling included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// Ground state of iℒ₀ for anti-Hermitian cells, longest-lived state
    /// for Hermitian cells and vertical bonds.
    Default,
    Constant { branch: Branch },
    /// Branch per step; steps past the end fall back to the default.
    Explicit { branches: Vec<Branch> },
    /// Fair coin per step.
    Random { seed: u64 },
}

impl Policy {
    fn branch(&self, step: u64, context: &Context) -> Branch {
        match self {
            Policy::Default => default_branch(context),
            Policy::Constant { branch } => *branch,
            Policy::Explicit { branches } => {
                branches.get(step as usize).copied().unwrap_or_else(|| default_branch(context))
            }
            Policy::Random { seed } => {
                if rng::uniform(*seed, Purpose::Policy, step, 0) < 0.5 {
                    Branch::Min
                } else {
                    Branch::Max
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecimationEvent {
    pub schema: u32,
    pub step: u64,
    pub kind: RuleKind,
    pub bond: Bond,
    /// Pre-decimation rungs: [A, a, b, B] for J-kind, [A, a, B] for p-kind;
    /// outer rungs may coincide or be missing in tiny remainders.
    pub location: Vec<usize>,
    /// −ln of the decimated bond magnitude.
    pub gamma: f64,
    pub context: Context,
    /// Branch chosen by the policy for the bond as it stands.
    pub branch: Branch,
    /// Table branch applied (flipped for negative couplings).
    pub rule_branch: Branch,
    pub new_type: CellType,
    /// Periodic original-lattice distance between the decimated pair.
    pub pair_separation: Option<usize>,
    pub rule: String,
    pub non_monotone: bool,
    /// An outer neighbour was missing (tiny remainder or disconnected side).
    pub absent_neighbor: bool,
    /// Two parallel cells on a two-rung remainder were merged first.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Decimated(Box<DecimationEvent>),
    /// The strongest bond sits in a remainder that cannot be decimated.
    Frozen,
    /// No live bonds remain.
    Exhausted,
}

struct Plan {
    kind: RuleKind,
    bond: Bond,
    a: usize,
    b: usize,
    outer_left: Option<usize>,
    outer_right: Option<usize>,
    left: Cell,
    right: Cell,
    /// Decimated coupling (J) or vertical bond value v (p).
    center: Cell,
    merged: bool,
}

fn absent_or(c: Cell) -> bool {
    !c.is_connected()
}

impl Chain {
    /// Geometry of decimating `bond`, or None if the remainder is too small.
    fn plan(&self, bond: Bond) -> Result<Option<Plan>, LadderError> {
        let n = self.live;
        let k = bond.rung;
        match bond.kind {
            RuleKind::J => {
                let (a, b) = (k, self.next[k]);
                let center = self.cells[a];
                match n {
                    0 | 1 => Ok(None),
                    2 => {
                        let back = self.cells[b];
                        let (center, merged) = if back.is_connected() {
                            match merge_parallel(center, back) {
                                Some(c) => (c, true),
                                None => return Ok(None),
                            }
                        } else {
                            (center, false)
                        };
                        Ok(Some(Plan {
                            kind: RuleKind::J,
                            bond,
                            a,
                            b,
                            outer_left: None,
                            outer_right: None,
                            left: Cell::DISCONNECTED,
                            right: Cell::DISCONNECTED,
                            center,
                            merged,
                        }))
                    }
                    _ => {
                        let (oa, ob) = (self.prev[a], self.next[b]);
                        let (left, right) = (self.cells[oa], self.cells[b]);
                        if n == 3 && !(absent_or(left) || absent_or(right)) {
                            return Ok(None);
                        }
                        Ok(Some(Plan {
                            kind: RuleKind::J,
                            bond,
                            a,
                            b,
                            outer_left: Some(oa),
                            outer_right: Some(ob),
                            left,
                            right,
                            center,
                            merged: false,
                        }))
                    }
                }
            }
            RuleKind::P => {
                let a = k;
                let center = Cell { ctype: CellType::DISCONNECTED, strength: self.verticals[a] };
                match n {
                    0 => Ok(None),
                    1 => Ok(Some(Plan {
                        kind: RuleKind::P,
                        bond,
                        a,
                        b: a,
                        outer_left: None,
                        outer_right: None,
                        left: Cell::DISCONNECTED,
                        right: Cell::DISCONNECTED,
                        center,
                        merged: false,
                    })),
                    _ => {
                        let (oa, ob) = (self.prev[a], self.next[a]);
                        let (mut left, mut right) = (self.cells[oa], self.cells[a]);
                        let mut merged = false;
                        if n == 2 && !(absent_or(left) || absent_or(right)) {
                            // Both cells join a to the same rung: read them as
                            // one cell a→b, leaving the left neighbour absent.
                            match merge_parallel(right, left) {
                                Some(c) => (left, right, merged) = (Cell::DISCONNECTED, c, true),
                                None => return Ok(None),
                            }
                        }
                        Ok(Some(Plan {
                            kind: RuleKind::P,
                            bond,
                            a,
                            b: a,
                            outer_left: Some(oa),
                            outer_right: Some(ob),
                            left,
                            right,
                            center,
                            merged,
                        }))
                    }
                }
            }
        }
    }

    /// Selects and decimates the strongest bond.
    pub fn decimate_step(&mut self, rules: &RuleTable, policy: &Policy) -> Result<StepOutcome, LadderError> {
        let Some(bond) = self.strongest_bond() else { return Ok(StepOutcome::Exhausted) };
        let Some(plan) = self.plan(bond)? else { return Ok(StepOutcome::Frozen) };
        let context = plan_context(&plan);
        let branch = policy.branch(self.steps, &context);
        let event = self.apply(plan, branch, rules)?;
        Ok(StepOutcome::Decimated(Box::new(event)))
    }

    /// Re-applies a logged event, checking that the chain agrees with it.
    pub fn apply_event(&mut self, event: &DecimationEvent, rules: &RuleTable) -> Result<(), LadderError> {
        let mismatch = |detail: String| LadderError::Replay { step: event.step, detail };
        if event.step != self.steps {
            return Err(mismatch(format!("chain is at step {}", self.steps)));
        }
        if !self.alive[event.bond.rung] {
            return Err(mismatch(format!("rung {} is not live", event.bond.rung)));
        }
        let plan = self
            .plan(event.bond)?
            .ok_or_else(|| mismatch("bond cannot be decimated here".into()))?;
        let context = plan_context(&plan);
        if context != event.context {
            return Err(mismatch(format!("context {context} differs from logged {}", event.context)));
        }
        let replayed = self.apply(plan, event.branch, rules)?;
        if replayed != *event {
            return Err(mismatch("recomputed event differs".into()));
        }
        Ok(())
    }

    fn apply(&mut self, plan: Plan, branch: Branch, rules: &RuleTable) -> Result<DecimationEvent, LadderError> {
        let context = plan_context(&plan);
        let c_val = match plan.kind {
            RuleKind::J => {
                if !plan.center.strength.is_real() {
                    return Err(LadderError::ComplexCoupling(plan.a));
                }
                plan.center.strength
            }
            RuleKind::P => {
                let v = plan.center.strength;
                if !v.is_real() {
                    return Err(LadderError::ComplexVertical(plan.a));
                }
                // c = p = 2v
                v.mul(LogValue::from_real(2.0))
            }
        };
        let rule_branch = if c_val.real_sign() < 0.0 { branch.opposite() } else { branch };
        let rule = lookup(rules, &context, rule_branch)?;
        let k = rule.coefficients();

        let bond_log = match plan.kind {
            RuleKind::J => plan.center.strength.log_mag(),
            RuleKind::P => plan.center.strength.log_mag(),
        };
        let raw_gamma = -bond_log;
        let non_monotone = if self.gamma.is_nan() || raw_gamma >= self.gamma {
            self.gamma = raw_gamma;
            false
        } else {
            self.non_monotone += 1;
            true
        };

        let jl = if plan.left.is_connected() { plan.left.strength } else { LogValue::ZERO };
        let jr = if plan.right.is_connected() { plan.right.strength } else { LogValue::ZERO };
        let new_j = jl.mul(jr).div(c_val).scale(k.amp);
        let mut dva = jl.mul(jl).div(c_val).scale(k.lvb);
        let mut dvb = jr.mul(jr).div(c_val).scale(k.rvb);
        if self.drop_imag_vertical {
            dva = dva.real_part();
            dvb = dvb.real_part();
        }

        // Eigenvalue shift, linear arithmetic.
        let cz = c_val.to_complex();
        let (va, vb) = match plan.kind {
            RuleKind::J => (self.verticals[plan.a].to_complex(), self.verticals[plan.b].to_complex()),
            RuleKind::P => (C64::new(0.0, 0.0), C64::new(0.0, 0.0)),
        };
        let over_c = |x: LogValue, coeff: C64| x.div(c_val).to_complex() * coeff;
        let mut shift = k.shift_const * cz + k.shift_lv * va + k.shift_rv * vb;
        shift += over_c(jl.mul(jl), k.shift_l2) + over_c(jr.mul(jr), k.shift_r2);
        if cz.norm() > 0.0 {
            shift += (k.shift_vl2 * va * va + k.shift_vr2 * vb * vb + k.shift_vlr * va * vb) / cz;
        }
        shift += 2.0 * (dva.to_complex() + dvb.to_complex());
        self.accumulator += shift;

        // Structural update.
        let new_type = if new_j.is_zero() { CellType::DISCONNECTED } else { rule.new_type };
        let removed: Vec<usize> = match plan.kind {
            RuleKind::J => vec![plan.a, plan.b],
            RuleKind::P => vec![plan.a],
        };
        for &r in &removed {
            self.alive[r] = false;
        }
        self.live -= removed.len();
        match (plan.outer_left, plan.outer_right) {
            (Some(oa), Some(ob)) => {
                self.next[oa] = ob;
                self.prev[ob] = oa;
                let new_cell = if oa == ob { Cell::DISCONNECTED } else { Cell::new(new_type, new_j) };
                self.cells[oa] = new_cell;
                self.verticals[oa] = self.verticals[oa].add(dva);
                self.verticals[ob] = self.verticals[ob].add(dvb);
                self.push_cell(oa);
                self.push_vertical(oa);
                if ob != oa {
                    self.push_vertical(ob);
                }
            }
            _ => {}
        }
        match plan.kind {
            RuleKind::J => {
                self.roles[plan.a] = RungRole::Paired { partner: plan.b, branch: rule_branch };
                self.roles[plan.b] = RungRole::Paired { partner: plan.a, branch: rule_branch };
            }
            RuleKind::P => {
                self.roles[plan.a] = match rule_branch {
                    Branch::Max => RungRole::MixedSite,
                    Branch::Min => RungRole::DecayingSite,
                };
            }
        }

        let location = match plan.kind {
            RuleKind::J => {
                let mut l: Vec<usize> = plan.outer_left.into_iter().collect();
                l.extend([plan.a, plan.b]);
                l.extend(plan.outer_right);
                l
            }
            RuleKind::P => {
                let mut l: Vec<usize> = plan.outer_left.into_iter().collect();
                l.push(plan.a);
                l.extend(plan.outer_right);
                l
            }
        };
        let event = DecimationEvent {
            schema: EVENT_SCHEMA_VERSION,
            step: self.steps,
            kind: plan.kind,
            bond: plan.bond,
            location,
            gamma: raw_gamma,
            context,
            branch,
            rule_branch,
            new_type: if plan.outer_left.is_some() && plan.outer_left != plan.outer_right {
                new_type
            } else {
                CellType::DISCONNECTED
            },
            pair_separation: (plan.kind == RuleKind::J).then(|| self.distance(plan.a, plan.b)),
            rule: format!("{context}/{rule_branch}"),
            non_monotone,
            absent_neighbor: plan.outer_left.is_none()
                || plan.outer_left == plan.outer_right
                || !plan.left.is_connected()
                || !plan.right.is_connected(),
            merged: plan.merged,
        };
        self.steps += 1;
        Ok(event)
    }

    /// Exact diagonalization of the live remainder; the eigenvalue with the
    /// largest real part (ties: largest imaginary part) joins the estimate.
    pub fn close_out(&mut self) -> Result<Option<C64>, LadderError> {
        let order = self.ring_order();
        let n = order.len();
        if n == 0 || n > MAX_LADDER_RUNGS {
            return Ok(None);
        }
        let pos = |k: usize| order.iter().position(|&x| x == k).expect("live rung");
        let mut terms = PauliSum::new(2 * n);
        for &k in &order {
            let c = self.cells[k];
            let (i, j) = (pos(k), pos(self.next[k]));
            if c.is_connected() && i != j {
                if !c.strength.is_real() {
                    return Err(LadderError::ComplexCoupling(k));
                }
                let strength = c.strength.log_mag().exp() * c.strength.real_sign();
                terms.extend(&cell_terms(2 * n, i, j, c.ctype, strength));
            }
            terms.extend(&vertical_terms(2 * n, pos(k), self.verticals[k].to_complex()));
        }
        let op = terms.to_dense().map_err(|e| LadderError::Closeout(e.to_string()))?;
        let values = eigenvalues_general(&op).map_err(|e| LadderError::Closeout(e.to_string()))?;
        let tol = 1e-9 * op.frobenius_norm().max(f64::MIN_POSITIVE);
        let best = values
            .iter()
            .copied()
            .fold(None::<C64>, |best, z| match best {
                None => Some(z),
                Some(b) if z.re > b.re + tol => Some(z),
                Some(b) if (z.re - b.re).abs() <= tol && z.im > b.im => Some(z),
                keep => keep,
            })
            .expect("nonempty spectrum");
        for &k in &order {
            self.roles[k] = RungRole::Frozen;
        }
        self.closeout = Some(best);
        Ok(Some(best))
    }
}

fn plan_context(plan: &Plan) -> Context {
    match plan.kind {
        RuleKind::J => Context::j(plan.left.ctype, plan.center.ctype, plan.right.ctype),
        RuleKind::P => Context::p(plan.left.ctype, plan.right.ctype),
    }
}

fn lookup<'a>(rules: &'a RuleTable, context: &Context, branch: Branch) -> Result<&'a DecimationRule, LadderError> {
    match rules.get(context, branch) {
        Some(Ok(r)) => Ok(r),
        Some(Err(reason)) => {
            Err(LadderError::RuleFailed { context: format!("{context}/{branch}"), reason: reason.clone() })
        }
        None => Err(LadderError::MissingRule(format!("{context}/{branch}"))),
    }
}

/// Sum of a cell a→b and a parallel cell b→a, read as one cell a→b.
fn merge_parallel(forward: Cell, back: Cell) -> Option<Cell> {
    let real = |c: Cell| c.strength.log_mag().exp() * c.strength.real_sign();
    if !forward.strength.is_real() || !back.strength.is_real() {
        return None;
    }
    let (g1, h1) = forward.ctype.template()?;
    let (g2, h2) = back.ctype.reversed().template()?;
    let (j1, j2) = (real(forward), real(back));
    let (g, h) = (g1 * j1 + g2 * j2, h1 * j1 + h2 * j2);
    let scale = j1.abs().max(j2.abs());
    let (t, amp) = CellType::classify(g / scale, h / scale, 1e-12)?;
    t.is_connected().then(|| Cell::new(t, LogValue::from_real(amp * scale)))
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub min_survivors: Option<usize>,
    pub max_steps: Option<u64>,
    pub gamma_target: Option<f64>,
}

impl StopCriteria {
    fn reached(&self, chain: &Chain) -> bool {
        self.min_survivors.is_some_and(|n| chain.survivors() <= n)
            || self.max_steps.is_some_and(|s| chain.steps() >= s)
            || self.gamma_target.is_some_and(|g| chain.gamma() >= g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum SnapshotSchedule {
    None,
    EverySteps { steps: u64 },
    GammaStep { delta: f64 },
    AtSteps { steps: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Criteria,
    Exhausted,
    Frozen,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<DecimationEvent>,
    pub snapshots: Vec<FlowSnapshot>,
    pub stop: StopReason,
}

pub fn run(
    chain: &mut Chain,
    rules: &RuleTable,
    policy: &Policy,
    stop: &StopCriteria,
    schedule: &SnapshotSchedule,
) -> Result<RunOutput, LadderError> {
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_gamma = chain.gamma();
    let mut at_steps: Vec<u64> = match schedule {
        SnapshotSchedule::AtSteps { steps } => {
            let mut s = steps.clone();
            s.sort_unstable();
            s.reverse();
            s
        }
        _ => Vec::new(),
    };
    let mut maybe_snapshot = |chain: &Chain, snapshots: &mut Vec<FlowSnapshot>, force: bool| {
        let due = match schedule {
            SnapshotSchedule::None => false,
            SnapshotSchedule::EverySteps { steps } => chain.steps() % steps.max(&1) == 0,
            SnapshotSchedule::GammaStep { delta } => {
                if chain.gamma() >= next_gamma {
                    while next_gamma <= chain.gamma() {
                        next_gamma += delta;
                    }
                    true
                } else {
                    false
                }
            }
            SnapshotSchedule::AtSteps { .. } => {
                let mut hit = false;
                while at_steps.last().is_some_and(|&s| s <= chain.steps()) {
                    at_steps.pop();
                    hit = true;
                }
                hit
            }
        };
        let last = snapshots.last().map(|s: &FlowSnapshot| s.step);
        if (due || (force && !matches!(schedule, SnapshotSchedule::None))) && last != Some(chain.steps()) {
            snapshots.push(FlowSnapshot::capture(chain));
        }
    };
    maybe_snapshot(chain, &mut snapshots, true);
    let reason = loop {
        if stop.reached(chain) {
            break StopReason::Criteria;
        }
        match chain.decimate_step(rules, policy)? {
            StepOutcome::Decimated(e) => events.push(*e),
            StepOutcome::Exhausted => break StopReason::Exhausted,
            StepOutcome::Frozen => break StopReason::Frozen,
        }
        maybe_snapshot(chain, &mut snapshots, false);
    };
    if reason != StopReason::Criteria {
        chain.close_out()?;
    }
    maybe_snapshot(chain, &mut snapshots, true);
    Ok(RunOutput { events, snapshots, stop: reason })
}

/// Runs every event of `events` from `initial`.
pub fn replay(initial: &Chain, events: &[DecimationEvent], rules: &RuleTable) -> Result<Chain, LadderError> {
    let mut chain = initial.clone();
    for e in events {
        chain.apply_event(e, rules)?;
    }
    Ok(chain)
}

// ---------------------------------------------------------------------------
// Final state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub pairs: Vec<(usize, usize, Branch)>,
    pub mixed_sites: Vec<usize>,
    pub decaying_sites: Vec<usize>,
    pub frozen: Vec<usize>,
    pub undecimated: Vec<usize>,
}

impl FinalState {
    pub fn classified(&self) -> usize {
        2 * self.pairs.len()
            + self.mixed_sites.len()
            + self.decaying_sites.len()
            + self.frozen.len()
            + self.undecimated.len()
    }
}

/// Classifies every original rung exactly once.
pub fn final_state_description(chain: &Chain) -> Result<FinalState, LadderError> {
    let mut out = FinalState {
        pairs: Vec::new(),
        mixed_sites: Vec::new(),
        decaying_sites: Vec::new(),
        frozen: Vec::new(),
        undecimated: Vec::new(),
    };
    for (k, role) in chain.roles().iter().enumerate() {
        match *role {
            RungRole::Paired { partner, branch } => {
                if chain.roles()[partner] != (RungRole::Paired { partner: k, branch }) {
                    return Err(LadderError::Closeout(format!("rung {k} has an unmatched partner")));
                }
                if k < partner {
                    out.pairs.push((k, partner, branch));
                }
            }
            RungRole::MixedSite => out.mixed_sites.push(k),
            RungRole::DecayingSite => out.decaying_sites.push(k),
            RungRole::Frozen => out.frozen.push(k),
            RungRole::Undecimated => {
                if !chain.is_alive(k) {
                    return Err(LadderError::Closeout(format!("rung {k} removed without a role")));
                }
                out.undecimated.push(k);
            }
        }
    }
    if out.classified() != chain.n_original() {
        return Err(LadderError::Closeout("rung classification is not a partition".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Event log I/O
// ---------------------------------------------------------------------------

pub fn write_events_jsonl<W: Write>(events: &[DecimationEvent], mut w: W) -> Result<(), LadderError> {
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| LadderError::EventLog(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_events_jsonl<R: BufRead>(r: R) -> Result<Vec<DecimationEvent>, LadderError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: DecimationEvent = serde_json::from_str(&line)
            .map_err(|err| LadderError::EventLog(format!("line {}: {err}", i + 1)))?;
        if e.schema != EVENT_SCHEMA_VERSION {
            return Err(LadderError::EventLog(format!("line {}: schema {} unsupported", i + 1, e.schema)));
        }
        out.push(e);
    }
    Ok(out)
}

/// Draws a uniformly random live rung; used by diagnostics that sample
/// couplings.
pub fn sample_live_rung(chain: &Chain, rng: &mut impl Rng) -> Option<usize> {
    let live: Vec<usize> = chain.live_rungs().collect();
    (!live.is_empty()).then(|| live[rng.gen_range(0..live.len())])
}

// ---------------------------------------------------------------------------
// Sextuple preset
// ---------------------------------------------------------------------------

/// Rungs of padding closing the ring around the clump.
pub const SEXTUPLE_PADDING_RUNGS: usize = 3;

/// A clump of six type-0 cells on rungs 0..=6 with J_k = α^(a_k) on cell
/// k → k+1 and rates p_k = β·α^(b_k), closed into a ring by padding rungs
/// whose couplings and rates are α^padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SextuplePreset {
    pub alpha: f64,
    pub beta: f64,
    pub j_exponents: [u8; 6],
    pub p_exponents: [u8; 7],
    pub padding: u8,
}

impl SextuplePreset {
    pub fn n_rungs(&self) -> usize {
        7 + SEXTUPLE_PADDING_RUNGS
    }

    pub fn couplings(&self) -> Vec<f64> {
        let pad = self.alpha.powi(self.padding as i32);
        let mut j: Vec<f64> = self.j_exponents.iter().map(|&a| self.alpha.powi(a as i32)).collect();
        j.resize(self.n_rungs(), pad);
        j
    }

    pub fn rates(&self) -> Vec<f64> {
        let pad = self.alpha.powi(self.padding as i32);
        let mut p: Vec<f64> = self.p_exponents.iter().map(|&b| self.alpha.powi(b as i32)).collect();
        p.resize(self.n_rungs(), pad);
        p
    }

    pub fn config(&self) -> ChainConfig {
        let mut cfg = ChainConfig::new(
            self.n_rungs(),
            Distribution::Explicit { values: self.couplings() },
            Distribution::Explicit { values: self.rates() },
        );
        cfg.beta = self.beta;
        cfg
    }

    /// Decimation sequence under the default policy, without closeout.
    pub fn events(&self, rules: &RuleTable) -> Result<Vec<DecimationEvent>, LadderError> {
        let mut chain = init_chain(&self.config())?;
        let mut events = Vec::new();
        while let StepOutcome::Decimated(e) = chain.decimate_step(rules, &Policy::Default)? {
            events.push(*e);
        }
        Ok(events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SextupleSearch {
    pub alpha: f64,
    pub beta: f64,
    pub max_j_exponent: u8,
    pub max_p_exponent: u8,
    pub padding: u8,
    pub max_trials: usize,
    pub seed: u64,
}

impl Default for SextupleSearch {
    fn default() -> Self {
        SextupleSearch {
            alpha: 0.1,
            beta: 1.0,
            max_j_exponent: 3,
            max_p_exponent: 6,
            padding: 8,
            max_trials: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SextupleHit {
    pub preset: SextuplePreset,
    pub events: Vec<DecimationEvent>,
    pub trials: usize,
}

/// Deterministic random search over exponent patterns for a preset whose
/// decimation sequence creates a type-2 cell. Candidates come from the
/// `Search` stream of the seed; the first hit is returned.
pub fn search_sextuple(search: &SextupleSearch, rules: &RuleTable) -> Result<Option<SextupleHit>, LadderError> {
    if !(search.alpha > 0.0 && search.alpha < 1.0) {
        return Err(LadderError::Config(format!("α must lie in (0, 1), got {}", search.alpha)));
    }
    let two = CellType::new(2).expect("valid");
    for trial in 0..search.max_trials {
        let draw = |slot: u64, max: u8| {
            let u = rng::uniform(search.seed, Purpose::Search, 2 * trial as u64 + slot / 8, slot % 8);
            ((u * (max as f64 + 1.0)) as u8).min(max)
        };
        let mut j_exponents = [0u8; 6];
        let mut p_exponents = [0u8; 7];
        for (k, a) in j_exponents.iter_mut().enumerate() {
            *a = draw(k as u64, search.max_j_exponent);
        }
        for (k, b) in p_exponents.iter_mut().enumerate() {
            *b = draw(6 + k as u64, search.max_p_exponent);
        }
        let preset = SextuplePreset { alpha: search.alpha, beta: search.beta, j_exponents, p_exponents, padding: search.padding };
        let events = match preset.events(rules) {
            Ok(ev) => ev,
            // Candidates that decimate a bond no rule covers are rejected.
            Err(LadderError::ComplexVertical(_) | LadderError::ComplexCoupling(_)) => continue,
            Err(e) => return Err(e),
        };
        if events.iter().any(|e| e.new_type == two) {
            return Ok(Some(SextupleHit { preset, events, trials: trial + 1 }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn rules() -> &'static RuleTable {
        static TABLE: OnceLock<RuleTable> = OnceLock::new();
        TABLE.get_or_init(|| RuleTable::generate(&Branch::BOTH))
    }

    fn t(code: i32) -> CellType {
        CellType::new(code).unwrap()
    }

    fn explicit(j: &[f64], p: &[f64]) -> ChainConfig {
        let mut cfg = ChainConfig::new(
            j.len(),
            Distribution::Explicit { values: j.to_vec() },
            Distribution::Explicit { values: p.to_vec() },
        );
        cfg.seed = 1;
        cfg
    }

    #[test]
    fn log_value_arithmetic() {
        let a = LogValue::from_real(3.0);
        let b = LogValue::from_real(-2.0);
        assert!((a.mul(b).to_complex() - C64::new(-6.0, 0.0)).norm() < 1e-12);
        assert!((a.add(b).to_complex() - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((b.div(a).to_complex() - C64::new(-2.0 / 3.0, 0.0)).norm() < 1e-12);
        assert!(a.add(a.neg()).is_zero());
        let z = LogValue::from_complex(C64::new(1.0, 1.0));
        assert!((z.real_part().to_complex() - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(LogValue::from_complex(C64::new(0.0, 2.0)).real_part().is_zero());
        let tiny = LogValue::from_parts(-5000.0, 0.0);
        assert_eq!(tiny.mul(tiny).log_mag(), -10000.0);
    }

    #[test]
    fn explicit_lists_are_exact() {
        let chain = init_chain(&explicit(&[0.5, 1.0, 0.5, 0.2], &[0.1, 0.2, 0.3, 0.4])).unwrap();
        for (k, j) in [0.5, 1.0, 0.5, 0.2].into_iter().enumerate() {
            assert!((chain.cell(k).strength.to_complex().re - j).abs() < 1e-15);
            assert_eq!(chain.cell(k).ctype, t(0));
        }
        assert!((chain.vertical(2).to_complex().re - 0.15).abs() < 1e-15);
    }

    #[test]
    fn strongest_bond_tie_goes_to_lower_rung() {
        let mut chain = init_chain(&explicit(&[2.0, 2.0, 1.0, 0.5, 0.5, 0.5], &[0.0; 6])).unwrap();
        assert_eq!(chain.strongest_bond(), Some(Bond { kind: RuleKind::J, rung: 0 }));
        let mut chain = init_chain(&explicit(&[1.0, 2.0, 3.0, 0.1, 0.1, 0.1], &[0.2; 6])).unwrap();
        assert_eq!(chain.strongest_bond(), Some(Bond { kind: RuleKind::J, rung: 2 }));
    }

    #[test]
    fn type0_step_arithmetic() {
        let mut chain = init_chain(&explicit(&[0.5, 1.0, 0.5, 0.1, 0.1, 0.1], &[0.0; 6])).unwrap();
        let out = chain.decimate_step(rules(), &Policy::Default).unwrap();
        let StepOutcome::Decimated(e) = out else { panic!("expected a decimation") };
        assert_eq!(e.location, vec![0, 1, 2, 3]);
        assert_eq!(e.new_type, t(0));
        let j = chain.cell(0).strength.to_complex();
        assert!((j - C64::new(0.25, 0.0)).norm() < 1e-14);
        assert_eq!(chain.next_rung(0), 3);
        assert_eq!(chain.survivors(), 4);
    }

    #[test]
    fn zeno_chain_stays_disconnected() {
        let mut cfg = ChainConfig::new(
            200,
            Distribution::Zero,
            Distribution::LogUniform { decades: 2.0, scale: 1.0 },
        );
        cfg.seed = 3;
        let mut chain = init_chain(&cfg).unwrap();
        let out = run(&mut chain, rules(), &Policy::Default, &StopCriteria::default(), &SnapshotSchedule::None).unwrap();
        assert!(out.events.iter().all(|e| e.kind == RuleKind::P && e.new_type == CellType::DISCONNECTED));
        assert_eq!(out.events.len(), 200);
        let fs = final_state_description(&chain).unwrap();
        assert_eq!(fs.mixed_sites.len(), 200);
        assert!(chain.accumulated_eigenvalue().im.abs() < 1e-15);
    }

    #[test]
    fn p_zero_accumulator_is_imaginary() {
        let mut cfg = ChainConfig::new(400, Distribution::LogUniform { decades: 3.0, scale: 1.0 }, Distribution::Zero);
        cfg.seed = 11;
        let mut chain = init_chain(&cfg).unwrap();
        run(&mut chain, rules(), &Policy::Default, &StopCriteria::default(), &SnapshotSchedule::None).unwrap();
        assert!(chain.accumulated_eigenvalue().re.abs() < 1e-12);
        let fs = final_state_description(&chain).unwrap();
        assert_eq!(2 * fs.pairs.len() + fs.frozen.len(), 400);
    }

    #[test]
    fn all_twos_stay_type_two() {
        let mut cfg = ChainConfig::new(
            2000,
            Distribution::Exponential { gamma0: 3.0 },
            Distribution::Exponential { gamma0: 3.0 },
        );
        cfg.initial_type = t(2);
        cfg.seed = 5;
        let mut chain = init_chain(&cfg).unwrap();
        let stop = StopCriteria { min_survivors: Some(50), ..Default::default() };
        let out = run(&mut chain, rules(), &Policy::Default, &stop, &SnapshotSchedule::None).unwrap();
        assert!(out.events.iter().all(|e| e.new_type == t(2)));
    }

    #[test]
    fn event_counts_conserve_rungs() {
        let mut cfg = ChainConfig::new(
            500,
            Distribution::LogUniform { decades: 4.0, scale: 1.0 },
            Distribution::LogUniform { decades: 4.0, scale: 1.0 },
        );
        cfg.seed = 2;
        let mut chain = init_chain(&cfg).unwrap();
        let mut live = chain.survivors();
        while let StepOutcome::Decimated(e) = chain.decimate_step(rules(), &Policy::Default).unwrap() {
            let drop = if e.kind == RuleKind::J { 2 } else { 1 };
            assert_eq!(live - chain.survivors(), drop);
            live = chain.survivors();
        }
    }

    #[test]
    fn replay_reproduces_final_chain() {
        let mut cfg = ChainConfig::new(
            300,
            Distribution::LogUniform { decades: 3.0, scale: 1.0 },
            Distribution::LogUniform { decades: 3.0, scale: 0.5 },
        );
        cfg.seed = 9;
        let initial = init_chain(&cfg).unwrap();
        let mut chain = initial.clone();
        let stop = StopCriteria { min_survivors: Some(10), ..Default::default() };
        let out = run(&mut chain, rules(), &Policy::Random { seed: 4 }, &stop, &SnapshotSchedule::None).unwrap();
        let replayed = replay(&initial, &out.events, rules()).unwrap();
        assert_eq!(replayed, chain);
        let mut buf = Vec::new();
        write_events_jsonl(&out.events, &mut buf).unwrap();
        let back = read_events_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, out.events);
    }

    #[test]
    fn stop_at_full_size_takes_no_steps() {
        let cfg = ChainConfig::new(50, Distribution::Exponential { gamma0: 2.0 }, Distribution::Zero);
        let mut chain = init_chain(&cfg).unwrap();
        let stop = StopCriteria { min_survivors: Some(50), ..Default::default() };
        let out = run(&mut chain, rules(), &Policy::Default, &stop, &SnapshotSchedule::None).unwrap();
        assert!(out.events.is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = ChainConfig::new(4, Distribution::Exponential { gamma0: 1.0 }, Distribution::Zero);
        assert!(init_chain(&cfg).is_err());
        let cfg = ChainConfig::new(10, Distribution::Exponential { gamma0: -1.0 }, Distribution::Zero);
        assert!(init_chain(&cfg).is_err());
    }
}
