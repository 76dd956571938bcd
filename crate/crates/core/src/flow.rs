//! Flow statistics and the analytic side of the RG flow.
//!
//! Snapshots of ζ samples from the engine are fitted with exponentials;
//! the fitted rates are compared with the f/g reduction and with a direct
//! finite-volume integration of the density flow equations.

use std::sync::Arc;

use rustfft::num_complex::Complex64 as FftC64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ladder::{Chain, DecimationEvent};
use crate::rulegen::RuleKind;

/// Fits are attached to a snapshot only above this sample count.
pub const MIN_FIT_SAMPLES: usize = 100;
/// Survival points with fewer samples beyond them are left out of the
/// goodness regression; the extreme tail of an empirical survival curve is
/// dominated by counting noise.
pub const GOODNESS_MIN_TAIL: usize = 10;
pub const ODE_TOL: f64 = 1e-10;
pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Grid length in units of Γ₀.
pub const DEFAULT_GRID_SPAN: f64 = 40.0;
pub const DEFAULT_DRIFT_LIMIT: f64 = 1e-4;
/// Beyond this |ζ_L − 2ζ_R| the soft minimum in the vertical-bond kernel
/// equals the hard minimum to better than e^(−30).
const KERNEL_BAND: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample {0} is negative or not finite")]
    BadSample(f64),
    #[error("Γ = {gamma} lies below Γ₀ = {gamma0}")]
    BeforeStart { gamma: f64, gamma0: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("normalization drift {drift:.3e} per unit Γ at Γ = {gamma:.4} exceeds {limit:.1e}; reduce the step")]
    Drift { drift: f64, gamma: f64, limit: f64 },
    #[error("ODE step size underflow at t = {0}")]
    StepUnderflow(f64),
}

// ---------------------------------------------------------------------------
// Exponential fits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// Maximum-likelihood rate 1/mean.
    pub rate: f64,
    pub stderr: f64,
    /// R² of ln(survival) against ζ; 1 for a perfect exponential, 0 when
    /// the samples carry no spread.
    pub goodness: f64,
    pub n: usize,
}

pub fn fit_exponential(samples: &[f64]) -> Result<ExpFit, FlowError> {
    if samples.len() < 2 {
        return Err(FlowError::TooFewSamples { needed: 2, got: samples.len() });
    }
    if let Some(&bad) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(FlowError::BadSample(bad));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return Ok(ExpFit { rate: f64::INFINITY, stderr: f64::INFINITY, goodness: 0.0, n });
    }
    let rate = 1.0 / mean;
    Ok(ExpFit { rate, stderr: rate / (n as f64).sqrt(), goodness: survival_r2(samples), n })
}

fn survival_r2(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .take(n.saturating_sub(GOODNESS_MIN_TAIL).max(2))
        .map(|(k, &x)| (x, (1.0 - (k as f64 + 0.5) / n as f64).ln()))
        .collect();
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / m, b + y / m));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let spread = pts.iter().fold(0.0f64, |acc, &(x, _)| acc.max(x.abs()));
    if sxx <= 1e-24 * m * spread * spread || syy <= 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub step: u64,
    pub gamma: f64,
    pub survivors: usize,
    pub zeta_j: Vec<f64>,
    pub zeta_p: Vec<f64>,
    pub fit_f: Option<ExpFit>,
    pub fit_g: Option<ExpFit>,
    pub non_monotone_count: u64,
}

fn fit_if_enough(samples: &[f64]) -> Option<ExpFit> {
    (samples.len() >= MIN_FIT_SAMPLES).then(|| fit_exponential(samples).ok()).flatten()
}

impl FlowSnapshot {
    pub fn capture(chain: &Chain) -> FlowSnapshot {
        let zeta_j = chain.zeta_cells();
        let zeta_p = chain.zeta_verticals();
        FlowSnapshot {
            step: chain.steps(),
            gamma: chain.gamma(),
            survivors: chain.survivors(),
            fit_f: fit_if_enough(&zeta_j),
            fit_g: fit_if_enough(&zeta_p),
            zeta_j,
            zeta_p,
            non_monotone_count: chain.non_monotone_count(),
        }
    }

    pub fn csv_header() -> &'static str {
        "step,gamma,n,fit_f,fit_f_err,fit_g,fit_g_err,goodness_f,goodness_g,n_j,n_p,non_monotone"
    }

    pub fn csv_row(&self) -> String {
        let field = |f: Option<ExpFit>, pick: fn(&ExpFit) -> f64| f.as_ref().map_or(String::new(), |x| pick(x).to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.gamma,
            self.survivors,
            field(self.fit_f, |x| x.rate),
            field(self.fit_f, |x| x.stderr),
            field(self.fit_g, |x| x.rate),
            field(self.fit_g, |x| x.stderr),
            field(self.fit_f, |x| x.goodness),
            field(self.fit_g, |x| x.goodness),
            self.zeta_j.len(),
            self.zeta_p.len(),
            self.non_monotone_count
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Uniform histogram on [0, max] normalized as a density.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<HistBin> {
    let max = samples.iter().copied().fold(0.0, f64::max);
    if samples.is_empty() || bins == 0 || max <= 0.0 {
        return Vec::new();
    }
    let w = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        counts[((x / w) as usize).min(bins - 1)] += 1;
    }
    let total = samples.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistBin {
            lo: k as f64 * w,
            hi: (k + 1) as f64 * w,
            count,
            density: count as f64 / (total * w),
        })
        .collect()
}

pub fn histogram_csv(bins: &[HistBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count,density\n");
    for b in bins {
        s.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.count, b.density));
    }
    s
}

// ---------------------------------------------------------------------------
// Fixed-point forms
// ---------------------------------------------------------------------------

/// exp(−ζ/Γ)Θ(ζ)/Γ.
pub fn idfp_density(zeta: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "Γ must be positive");
    if zeta < 0.0 {
        0.0
    } else {
        (-zeta / gamma).exp() / gamma
    }
}

/// The same density in coupling space, for J ≤ Ω and Ω = e^(−Γ) < 1.
pub fn idfp_coupling_density(j: f64, omega: f64) -> f64 {
    assert!(omega > 0.0 && omega < 1.0, "Ω must lie in (0, 1)");
    if j <= 0.0 || j > omega {
        return 0.0;
    }
    let l = omega.ln();
    -1.0 / (omega * l) * (omega / j).powf(1.0 + 1.0 / l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FgVariant {
    /// Closed forms for f and g, used verbatim.
    ClosedForm,
    /// The stated ODE pair from f(Γ₀) = g(Γ₀) = 1/Γ₀.
    OdeIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticModel {
    pub gamma0: f64,
    pub variant: FgVariant,
}

impl AnalyticModel {
    pub fn new(gamma0: f64, variant: FgVariant) -> Result<Self, FlowError> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(FlowError::Parameter(format!("Γ₀ must be positive, got {gamma0}")));
        }
        Ok(AnalyticModel { gamma0, variant })
    }

    fn check(&self, gamma: f64) -> Result<(), FlowError> {
        if gamma < self.gamma0 {
            Err(FlowError::BeforeStart { gamma, gamma0: self.gamma0 })
        } else {
            Ok(())
        }
    }
}

/// [f, g, ln n] under df = −f(f+g), dg = f(f+g), d ln n = −(g + 2f).
fn fg_rhs(_t: f64, y: &[f64; 3]) -> [f64; 3] {
    let (f, g) = (y[0], y[1]);
    [-f * (f + g), f * (f + g), -(g + 2.0 * f)]
}

fn solve_fg(model: &AnalyticModel, gamma: f64) -> Result<[f64; 3], FlowError> {
    let y0 = [1.0 / model.gamma0, 1.0 / model.gamma0, 0.0];
    dopri45(fg_rhs, y0, model.gamma0, gamma, ODE_TOL)
}

pub fn fg_prediction(model: &AnalyticModel, gamma: f64) -> Result<(f64, f64), FlowError> {
    model.check(gamma)?;
    let g0 = model.gamma0;
    match model.variant {
        FgVariant::ClosedForm => {
            let e = (-2.0 * (gamma - g0) / g0).exp();
            Ok((e / g0, (1.0 - e) / g0))
        }
        FgVariant::OdeIntegrated => {
            let y = solve_fg(model, gamma)?;
            Ok((y[0], y[1]))
        }
    }
}

/// n(Γ) from dn/dΓ = −(g + 2f)n with the model's f and g.
pub fn survivor_prediction(model: &AnalyticModel, gamma: f64, n0: f64) -> Result<f64, FlowError> {
    model.check(gamma)?;
    match model.variant {
        FgVariant::OdeIntegrated => Ok(n0 * solve_fg(model, gamma)?[2].exp()),
        FgVariant::ClosedForm => {
            let g0 = model.gamma0;
            let f = move |t: f64, y: &[f64; 1]| {
                let _ = y;
                let e = (-2.0 * (t - g0) / g0).exp();
                [-((1.0 - e) / g0 + 2.0 * e / g0)]
            };
            Ok(n0 * dopri45(f, [0.0], g0, gamma, ODE_TOL)?[0].exp())
        }
    }
}

/// Closed form N·exp[−2(Γ−Γ₀)/Γ₀ + ½(1 − e^(−2(Γ−Γ₀)/Γ₀))].
pub fn survivor_closed_form(gamma0: f64, gamma: f64, n0: f64) -> f64 {
    let x = 2.0 * (gamma - gamma0) / gamma0;
    n0 * (-x + 0.5 * (1.0 - (-x).exp())).exp()
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4)
// ---------------------------------------------------------------------------

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration from t0 to t1 with mixed
/// absolute/relative tolerance `tol`.
pub fn dopri45<const D: usize>(
    f: impl Fn(f64, &[f64; D]) -> [f64; D],
    y0: [f64; D],
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<[f64; D], FlowError> {
    let mut t = t0;
    let mut y = y0;
    if t1 == t0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    let mut h = dir * ((t1 - t0).abs() * 1e-3).max(1e-8);
    while (t1 - t) * dir > 0.0 {
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        let mut k = [[0.0; D]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for d in 0..D {
                    ys[d] += h * DP_A[s][j] * kj[d];
                }
            }
            k[s] = f(t + DP_C[s] * h, &ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for d in 0..D {
            let (mut s5, mut s4) = (0.0, 0.0);
            for s in 0..7 {
                s5 += DP_B5[s] * k[s][d];
                s4 += DP_B4[s] * k[s][d];
            }
            y5[d] += h * s5;
            let scale = tol * (1.0 + y[d].abs().max(y5[d].abs()));
            err = err.max((h * (s5 - s4)).abs() / scale);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(FlowError::StepUnderflow(t));
        }
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Finite-volume flow integrator
// ---------------------------------------------------------------------------

/// Uniform cell-centred grid on [0, zeta_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowGrid {
    pub points: usize,
    pub zeta_max: f64,
}

impl FlowGrid {
    pub fn new(points: usize, zeta_max: f64) -> Result<Self, FlowError> {
        if points < 8 || !(zeta_max > 0.0 && zeta_max.is_finite()) {
            return Err(FlowError::Parameter(format!("grid of {points} points on [0, {zeta_max}]")));
        }
        Ok(FlowGrid { points, zeta_max })
    }

    pub fn for_gamma0(gamma0: f64) -> Result<Self, FlowError> {
        FlowGrid::new(DEFAULT_GRID_POINTS, DEFAULT_GRID_SPAN * gamma0)
    }

    pub fn spacing(&self) -> f64 {
        self.zeta_max / self.points as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.spacing()
    }

    /// Exact cell averages of e^(−rate·ζ)·rate.
    pub fn exponential(&self, rate: f64) -> Vec<f64> {
        let dz = self.spacing();
        (0..self.points)
            .map(|k| {
                let (a, b) = (k as f64 * dz, (k + 1) as f64 * dz);
                ((-rate * a).exp() - (-rate * b).exp()) / dz
            })
            .collect()
    }

    /// Cell averages of an arbitrary density sampled at cell centres and
    /// rescaled to unit mass.
    pub fn sampled(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.points).map(|k| f(self.center(k)).max(0.0)).collect();
        let mass = self.mass(&raw);
        raw.into_iter().map(|x| x / mass).collect()
    }

    pub fn mass(&self, p: &[f64]) -> f64 {
        p.iter().sum::<f64>() * self.spacing()
    }

    pub fn mean(&self, p: &[f64]) -> f64 {
        p.iter().enumerate().map(|(k, x)| x * self.center(k)).sum::<f64>() * self.spacing() / self.mass(p)
    }

    pub fn l1(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.spacing()
    }

    /// L1 distance to the fixed-point density at Γ.
    pub fn l1_to_idfp(&self, p: &[f64], gamma: f64) -> f64 {
        self.l1(p, &self.exponential(1.0 / gamma))
    }

    /// Γ·p(Γη) sampled on this grid's cells read as η = ζ/Γ₀, by linear
    /// interpolation. Fixed in Γ at the fixed point, where it is e^(−η)/Γ₀.
    pub fn scaled_density(&self, p: &[f64], gamma: f64, gamma0: f64) -> Vec<f64> {
        let dz = self.spacing();
        (0..self.points)
            .map(|k| {
                let t = self.center(k) / gamma0 * gamma / dz - 0.5;
                let i = t.floor();
                if i < 0.0 {
                    return gamma * p[0];
                }
                let i = i as usize;
                if i + 1 >= p.len() {
                    return 0.0;
                }
                let w = t - i as f64;
                gamma * ((1.0 - w) * p[i] + w * p[i + 1])
            })
            .collect()
    }
}

/// Bookkeeping of the subtraction term in the vertical-bond equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PEquation {
    /// −2p_p(p_p(0) + p_J(0)): the subtraction matches the mass brought in
    /// by the kernel term, so p_p stays normalized.
    Conserving,
    /// −2p_p(p_p(0) + 2p_J(0)); loses mass at rate 2p_J(0).
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum FlowSystem {
    AllZeros,
    AllTwos { p_equation: PEquation, keep_log_7_2: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Γ step; defaults to the grid spacing, where upwind advection is an
    /// exact shift.
    pub dgamma: Option<f64>,
    /// Γ interval between recorded frames.
    pub record_every: f64,
    /// Largest tolerated normalization drift per unit Γ; None disables the
    /// check.
    pub drift_limit: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { dgamma: None, record_every: 1.0, drift_limit: Some(DEFAULT_DRIFT_LIMIT) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFrame {
    pub gamma: f64,
    pub p_j: Vec<f64>,
    pub p_p: Option<Vec<f64>>,
    pub mass_j: f64,
    pub mass_p: Option<f64>,
    /// Mass carried past ζ_max so far.
    pub beyond_j: f64,
    pub beyond_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub grid: FlowGrid,
    pub frames: Vec<FlowFrame>,
    /// Largest |d(mass)/dΓ| seen over any step, with mass carried through
    /// the far edge of the grid counted as retained.
    pub max_drift: f64,
    /// Per-step drift of each density, per unit Γ.
    pub drift_j: Vec<f64>,
    pub drift_p: Vec<f64>,
}

struct Convolver {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Convolver {
    fn new(points: usize) -> Self {
        let n = (2 * points).next_power_of_two();
        let mut planner = FftPlanner::new();
        Convolver { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Σ_{i+j=s} a_i a_j for s < 2·len.
    fn self_convolve(&self, a: &[f64]) -> Vec<f64> {
        let mut buf: Vec<FftC64> = a.iter().map(|&x| FftC64::new(x, 0.0)).collect();
        buf.resize(self.n, FftC64::new(0.0, 0.0));
        self.fwd.process(&mut buf);
        for z in buf.iter_mut() {
            *z = *z * *z;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().take(2 * a.len() - 1).map(|z| z.re * scale).collect()
    }
}

/// Deposits a point mass at ζ = x by linear weighting onto cell centres;
/// returns the mass that lands beyond the grid.
fn deposit(out: &mut [f64], dz: f64, x: f64, mass: f64) -> f64 {
    let m = out.len();
    let t = x / dz - 0.5;
    if t <= 0.0 {
        out[0] += mass / dz;
        return 0.0;
    }
    let k = t.floor() as usize;
    let w = t - k as f64;
    let mut lost = 0.0;
    if k < m {
        out[k] += (1.0 - w) * mass / dz;
    } else {
        lost += (1.0 - w) * mass;
    }
    if k + 1 < m {
        out[k + 1] += w * mass / dz;
    } else {
        lost += w * mass;
    }
    lost
}

/// Density of ζ_L + ζ_R + shift for independent draws from `p`; returns
/// the density and the mass falling past the grid.
fn additive_term(conv: &Convolver, grid: &FlowGrid, p: &[f64], shift: f64) -> (Vec<f64>, f64) {
    let dz = grid.spacing();
    let c = conv.self_convolve(p);
    let mut out = vec![0.0; p.len()];
    let mut lost = 0.0;
    for (s, &cs) in c.iter().enumerate() {
        if cs != 0.0 {
            lost += deposit(&mut out, dz, (s + 1) as f64 * dz + shift, cs * dz * dz);
        }
    }
    (out, lost)
}

/// Density of h(ζ_L, ζ_R) = −ln(e^(−ζ_L) + e^(−2ζ_R)) with ζ_L ~ `pl` and
/// ζ_R ~ `pr`. Away from the band |ζ_L − 2ζ_R| ≤ KERNEL_BAND the kernel is
/// the hard minimum and is summed with suffix sums. The masses past the
/// grid, `beyond_l` and `beyond_r`, sit in one virtual cell just past
/// ζ_max; where the hard minimum applies that placement is exact.
fn vertical_kernel_term(grid: &FlowGrid, pl: &[f64], pr: &[f64], beyond_l: f64, beyond_r: f64) -> (Vec<f64>, f64) {
    let m = grid.points;
    let dz = grid.spacing();
    let cells = m + 1;
    let mut a: Vec<f64> = pl.iter().map(|x| x * dz).collect();
    let mut b: Vec<f64> = pr.iter().map(|x| x * dz).collect();
    a.push(beyond_l.max(0.0));
    b.push(beyond_r.max(0.0));
    let x = |i: usize| grid.center(i);
    let y = |j: usize| 2.0 * grid.center(j);
    // suffix sums
    let mut a_tail = vec![0.0; cells + 1];
    let mut b_tail = vec![0.0; cells + 1];
    for i in (0..cells).rev() {
        a_tail[i] = a_tail[i + 1] + a[i];
        b_tail[i] = b_tail[i + 1] + b[i];
    }
    let band_cells = (KERNEL_BAND / dz).ceil() as usize;
    let mut out = vec![0.0; m];
    let mut lost = 0.0;
    // ζ_L well below 2ζ_R: h = ζ_L.
    for i in 0..cells {
        if a[i] == 0.0 {
            continue;
        }
        // first j with y_j > x_i + band
        let target = x(i) + KERNEL_BAND;
        let j0 = ((target / (2.0 * dz)) - 0.5).floor().max(-1.0) as i64 + 1;
        let j0 = (j0.max(0) as usize).min(cells);
        let w = b_tail[j0];
        if w > 0.0 {
            if i < m {
                out[i] += a[i] * w / dz;
            } else {
                lost += a[i] * w;
            }
        }
    }
    // 2ζ_R well below ζ_L: h = 2ζ_R.
    for j in 0..cells {
        if b[j] == 0.0 {
            continue;
        }
        let target = y(j) + KERNEL_BAND;
        let i0 = ((target / dz) - 0.5).floor().max(-1.0) as i64 + 1;
        let i0 = (i0.max(0) as usize).min(cells);
        let w = a_tail[i0];
        if w > 0.0 {
            lost += deposit(&mut out, dz, y(j), b[j] * w);
        }
    }
    // Band: exact kernel.
    for j in 0..cells {
        if b[j] == 0.0 {
            continue;
        }
        let yc = y(j);
        let centre = (yc / dz - 0.5).round() as i64;
        let lo = (centre - band_cells as i64 - 1).max(0) as usize;
        let hi = ((centre + band_cells as i64 + 1).max(0) as usize).min(cells);
        for i in lo..hi {
            if a[i] == 0.0 || (x(i) - yc).abs() > KERNEL_BAND {
                continue;
            }
            let (u, v) = (x(i), yc);
            let lo_ = u.min(v);
            let h = lo_ - (-(u - v).abs()).exp().ln_1p();
            lost += deposit(&mut out, dz, h, a[i] * b[j]);
        }
    }
    (out, lost)
}

/// Explicit finite-volume integration of the density flow from Γ = gamma0
/// to gamma_end. `p_p` is required for the all-2s system.
pub fn integrate_flow_equations(
    grid: FlowGrid,
    system: FlowSystem,
    p_j: Vec<f64>,
    p_p: Option<Vec<f64>>,
    gamma0: f64,
    gamma_end: f64,
    options: &FlowOptions,
) -> Result<FlowTrajectory, FlowError> {
    let m = grid.points;
    let dz = grid.spacing();
    let check_density = |p: &[f64], what: &str| -> Result<(), FlowError> {
        if p.len() != m {
            return Err(FlowError::Parameter(format!("{what} has {} cells, grid has {m}", p.len())));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(FlowError::Parameter(format!("{what} must be non-negative")));
        }
        let mass = grid.mass(p);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(FlowError::Parameter(format!("{what} has mass {mass}, expected 1")));
        }
        Ok(())
    };
    check_density(&p_j, "p_J")?;
    let two = matches!(system, FlowSystem::AllTwos { .. });
    let mut p_p = if two {
        let p = p_p.ok_or_else(|| FlowError::Parameter("all-2s flow needs a p_p density".into()))?;
        check_density(&p, "p_p")?;
        Some(p)
    } else {
        None
    };
    let dgamma = options.dgamma.unwrap_or(dz);
    if !(dgamma > 0.0 && dgamma <= dz * (1.0 + 1e-12)) {
        return Err(FlowError::Parameter(format!("dΓ = {dgamma} must lie in (0, {dz}]")));
    }
    if !(gamma_end >= gamma0) {
        return Err(FlowError::BeforeStart { gamma: gamma_end, gamma0 });
    }
    let nu = (dgamma / dz).min(1.0);
    let conv = Convolver::new(m);

    let mut p_j = p_j;
    let mut gamma = gamma0;
    // Mass past ζ_max. Additive pairs with a member out there stay out
    // there; the kernel term places it explicitly.
    let mut beyond_j = 0.0;
    let mut beyond_p = 0.0;
    let frame = |gamma: f64, pj: &[f64], pp: &Option<Vec<f64>>, bj: f64, bp: f64| FlowFrame {
        gamma,
        p_j: pj.to_vec(),
        p_p: pp.clone(),
        mass_j: grid.mass(pj),
        mass_p: pp.as_ref().map(|p| grid.mass(p)),
        beyond_j: bj,
        beyond_p: pp.as_ref().map(|_| bp),
    };
    let mut traj = FlowTrajectory {
        grid,
        frames: vec![frame(gamma, &p_j, &p_p, 0.0, 0.0)],
        max_drift: 0.0,
        drift_j: Vec::new(),
        drift_p: Vec::new(),
    };
    let mut next_record = gamma0 + options.record_every;
    let steps = ((gamma_end - gamma0) / dgamma).round() as u64;

    for step in 0..steps {
        let dg = if step + 1 == steps { gamma_end - gamma } else { dgamma };
        let nu_step = nu * dg / dgamma;
        let pj0 = p_j[0];
        let pp0 = p_p.as_ref().map_or(0.0, |p| p[0]);
        let mj = grid.mass(&p_j);
        let tail_pairs_j = (mj + beyond_j).powi(2) - mj * mj;

        let (src_j, lost_j_rate, src_p, lost_p_rate) = match system {
            FlowSystem::AllZeros => {
                let (c, lost) = additive_term(&conv, &grid, &p_j, 0.0);
                (c.into_iter().map(|x| pj0 * x).collect::<Vec<_>>(), pj0 * (lost + tail_pairs_j), None, 0.0)
            }
            FlowSystem::AllTwos { p_equation, keep_log_7_2 } => {
                let pp = p_p.as_ref().expect("all-2s state");
                let shift = if keep_log_7_2 { (3.5f64).ln() } else { 0.0 };
                let (c, lost_c) = additive_term(&conv, &grid, &p_j, shift);
                let sj: Vec<f64> =
                    p_j.iter().zip(&c).map(|(pj, cj)| -pp0 * pj + (pj0 + pp0) * cj).collect();
                let (hk, lost_h) = vertical_kernel_term(&grid, pp, &p_j, beyond_p, beyond_j);
                let k = match p_equation {
                    PEquation::Conserving => 1.0,
                    PEquation::AsPrinted => 2.0,
                };
                let linear_p = pp0 - 2.0 * (pp0 + k * pj0);
                let sp: Vec<f64> =
                    pp.iter().zip(&hk).map(|(p, h)| linear_p * p + 2.0 * (pp0 + pj0) * h).collect();
                // The linear terms act on the mass past the grid as well.
                (
                    sj,
                    (pj0 + pp0) * (lost_c + tail_pairs_j) - pp0 * beyond_j,
                    Some(sp),
                    2.0 * (pp0 + pj0) * lost_h + linear_p * beyond_p,
                )
            }
        };

        let advect = |p: &[f64], src: &[f64]| -> (Vec<f64>, f64) {
            let ghost = ghost_cell(p);
            let mut out = vec![0.0; m];
            for k in 0..m {
                let right = if k + 1 < m { p[k + 1] } else { ghost };
                out[k] = p[k] + nu_step * (right - p[k]) + dg * src[k];
            }
            // mass entering through the far edge this step
            (out, nu_step * ghost * dz)
        };
        let mass_before_j = grid.mass(&p_j);
        let (new_j, inflow_j) = advect(&p_j, &src_j);
        beyond_j += dg * lost_j_rate - inflow_j;
        let drift_j = (grid.mass(&new_j) - mass_before_j + dg * lost_j_rate - inflow_j) / dg;
        traj.drift_j.push(drift_j);
        let mut drift = drift_j.abs();
        if let (Some(pp), Some(sp)) = (p_p.as_ref(), src_p.as_ref()) {
            let mass_before = grid.mass(pp);
            let (new_p, inflow_p) = advect(pp, sp);
            beyond_p += dg * lost_p_rate - inflow_p;
            let d = (grid.mass(&new_p) - mass_before + dg * lost_p_rate - inflow_p) / dg;
            traj.drift_p.push(d);
            drift = drift.max(d.abs());
            p_p = Some(new_p.into_iter().map(|x| x.max(0.0)).collect());
        }
        p_j = new_j.into_iter().map(|x| x.max(0.0)).collect();
        gamma += dg;
        traj.max_drift = traj.max_drift.max(drift);
        if let Some(limit) = options.drift_limit {
            if drift > limit {
                return Err(FlowError::Drift { drift, gamma, limit });
            }
        }
        if gamma + 1e-12 >= next_record || step + 1 == steps {
            traj.frames.push(frame(gamma, &p_j, &p_p, beyond_j, beyond_p));
            while next_record <= gamma + 1e-12 {
                next_record += options.record_every;
            }
        }
    }
    Ok(traj)
}

/// Value beyond the last cell by exponential extrapolation.
fn ghost_cell(p: &[f64]) -> f64 {
    let m = p.len();
    let (a, b) = (p[m - 2], p[m - 1]);
    if a > 0.0 && b > 0.0 && b < a {
        b * b / a
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Pair statistics
// ---------------------------------------------------------------------------

/// Histogram of J-decimation pair separations in powers-of-two bins
/// [2^k, 2^(k+1)).
pub fn pair_length_histogram(events: &[DecimationEvent]) -> Vec<HistBin> {
    let seps: Vec<usize> = events
        .iter()
        .filter(|e| e.kind == RuleKind::J)
        .filter_map(|e| e.pair_separation)
        .filter(|&d| d > 0)
        .collect();
    let Some(&max) = seps.iter().max() else { return Vec::new() };
    let nbins = (usize::BITS - max.leading_zeros()) as usize;
    let mut counts = vec![0usize; nbins];
    for &d in &seps {
        counts[(usize::BITS - 1 - d.leading_zeros()) as usize] += 1;
    }
    let total = seps.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let (lo, hi) = ((1u64 << k) as f64, (1u64 << (k + 1)) as f64);
            HistBin { lo, hi, count, density: count as f64 / (total * (hi - lo)) }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub j_events: usize,
    pub p_events: usize,
}

impl RatioBin {
    /// J decimations per p decimation; None without p decimations.
    pub fn ratio(&self) -> Option<f64> {
        (self.p_events > 0).then(|| self.j_events as f64 / self.p_events as f64)
    }
}

/// J-vs-p decimation counts in consecutive Γ windows of width `width`.
pub fn decimation_ratio(events: &[DecimationEvent], width: f64) -> Vec<RatioBin> {
    if events.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let g0 = events.iter().map(|e| e.gamma).fold(f64::INFINITY, f64::min);
    let g1 = events.iter().map(|e| e.gamma).fold(f64::NEG_INFINITY, f64::max);
    let nb = (((g1 - g0) / width).floor() as usize) + 1;
    let mut bins: Vec<RatioBin> = (0..nb)
        .map(|k| RatioBin {
            gamma_lo: g0 + k as f64 * width,
            gamma_hi: g0 + (k + 1) as f64 * width,
            j_events: 0,
            p_events: 0,
        })
        .collect();
    for e in events {
        let k = (((e.gamma - g0) / width).floor() as usize).min(nb - 1);
        match e.kind {
            RuleKind::J => bins[k].j_events += 1,
            RuleKind::P => bins[k].p_events += 1,
        }
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fit_of_small_sample() {
        let fit = fit_exponential(&[1.0, 2.0, 3.0]).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-15);
        assert!(fit_exponential(&[1.0]).is_err());
        assert!(fit_exponential(&[1.0, -1.0]).is_err());
        assert_eq!(fit_exponential(&[2.0; 50]).unwrap().goodness, 0.0);
    }

    #[test]
    fn fit_recovers_unit_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..100_000).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let fit = fit_exponential(&xs).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.01);
        assert!(fit.goodness > 0.99);
    }

    #[test]
    fn idfp_normalization_and_origin() {
        let gamma = 3.0;
        assert!((idfp_density(0.0, gamma) - 1.0 / gamma).abs() < 1e-15);
        let grid = FlowGrid::new(200_000, 60.0 * gamma).unwrap();
        let dz = grid.spacing();
        let mass: f64 = (0..grid.points).map(|k| idfp_density(grid.center(k), gamma) * dz).sum();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn coupling_density_exponent() {
        let omega: f64 = 0.1;
        let l = omega.ln();
        let r = idfp_coupling_density(0.001, omega) / idfp_coupling_density(0.01, omega);
        assert!((r.ln() / 10f64.ln() - (1.0 + 1.0 / l)).abs() < 1e-12);
    }

    #[test]
    fn dopri_matches_exponential() {
        let y = dopri45(|_, y: &[f64; 1]| [-y[0]], [1.0], 0.0, 5.0, 1e-10).unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn fg_ode_conserves_sum() {
        let g0 = 2.0;
        let m = AnalyticModel::new(g0, FgVariant::OdeIntegrated).unwrap();
        let (f, g) = fg_prediction(&m, g0).unwrap();
        assert_eq!((f, g), (1.0 / g0, 1.0 / g0));
        for k in 1..=40 {
            let gamma = g0 + k as f64 * 0.1 * g0;
            let (f, g) = fg_prediction(&m, gamma).unwrap();
            assert!((f + g - 2.0 / g0).abs() < 1e-9);
        }
        assert!(fg_prediction(&m, 1.0).is_err());
    }

    #[test]
    fn closed_form_at_start() {
        let m = AnalyticModel::new(4.0, FgVariant::ClosedForm).unwrap();
        assert_eq!(fg_prediction(&m, 4.0).unwrap(), (0.25, 0.0));
        assert_eq!(survivor_prediction(&m, 4.0, 100.0).unwrap(), 100.0);
        assert_eq!(survivor_closed_form(4.0, 4.0, 100.0), 100.0);
    }

    #[test]
    fn convolution_conserves_mass() {
        let grid = FlowGrid::new(512, 40.0).unwrap();
        let p = grid.exponential(1.0);
        let conv = Convolver::new(grid.points);
        let (c, lost) = additive_term(&conv, &grid, &p, 0.0);
        let total = grid.mass(&c) + lost;
        assert!((total - grid.mass(&p).powi(2)).abs() < 1e-12);
        // mean of a sum is the sum of means
        assert!((grid.mean(&c) - 2.0 * grid.mean(&p)).abs() < 1e-3);
    }

    #[test]
    fn kernel_term_conserves_mass() {
        let grid = FlowGrid::new(256, 40.0).unwrap();
        let (pl, pr) = (grid.exponential(0.5), grid.exponential(1.0));
        let (h, lost) = vertical_kernel_term(&grid, &pl, &pr, 0.0, 0.0);
        let total = grid.mass(&h) + lost;
        assert!((total - grid.mass(&pl) * grid.mass(&pr)).abs() < 1e-12);
    }

    #[test]
    fn kernel_places_mass_past_the_grid() {
        let grid = FlowGrid::new(256, 40.0).unwrap();
        let (pl, pr) = (grid.exponential(0.5), grid.exponential(1.0));
        let (bl, br) = (0.01, 0.02);
        let (h, lost) = vertical_kernel_term(&grid, &pl, &pr, bl, br);
        let total = grid.mass(&h) + lost;
        assert!((total - (grid.mass(&pl) + bl) * (grid.mass(&pr) + br)).abs() < 1e-12);
        // A ζ_R past the grid leaves h = ζ_L, back on the grid.
        let (h0, _) = vertical_kernel_term(&grid, &pl, &pr, 0.0, 0.0);
        let gained = grid.mass(&h) - grid.mass(&h0);
        assert!(gained > 0.9 * grid.mass(&pl) * br);
    }

    #[test]
    fn all_twos_total_mass_is_conserved() {
        let g0 = 2.0;
        let grid = FlowGrid::new(256, 20.0 * g0).unwrap();
        let sys = FlowSystem::AllTwos { p_equation: PEquation::Conserving, keep_log_7_2: false };
        let t = integrate_flow_equations(grid, sys, grid.exponential(1.0 / g0), Some(grid.exponential(1.0 / g0)), g0, 2.0 * g0, &FlowOptions::default())
            .unwrap();
        let last = t.frames.last().unwrap();
        assert!(last.beyond_j > 1e-2, "flow should reach the grid edge");
        assert!((last.mass_j + last.beyond_j - 1.0).abs() < 1e-6);
        assert!((last.mass_p.unwrap() + last.beyond_p.unwrap() - 1.0).abs() < 1e-6);
        assert!(t.max_drift < 1e-6);
    }

    #[test]
    fn as_printed_equation_loses_vertical_mass() {
        let g0 = 2.0;
        let grid = FlowGrid::new(256, 20.0 * g0).unwrap();
        let sys = FlowSystem::AllTwos { p_equation: PEquation::AsPrinted, keep_log_7_2: false };
        let opts = FlowOptions { drift_limit: None, ..FlowOptions::default() };
        let t = integrate_flow_equations(grid, sys, grid.exponential(1.0 / g0), Some(grid.exponential(1.0 / g0)), g0, 2.0 * g0, &opts)
            .unwrap();
        assert!(t.frames.last().unwrap().mass_p.unwrap() < 0.9);
        let strict = integrate_flow_equations(grid, sys, grid.exponential(1.0 / g0), Some(grid.exponential(1.0 / g0)), g0, 2.0 * g0, &FlowOptions::default());
        assert!(matches!(strict, Err(FlowError::Drift { .. })));
    }

    #[test]
    fn kernel_agrees_with_brute_force() {
        let grid = FlowGrid::new(128, 80.0).unwrap();
        let (pl, pr) = (grid.exponential(0.2), grid.exponential(0.3));
        let (h, _) = vertical_kernel_term(&grid, &pl, &pr, 0.0, 0.0);
        let dz = grid.spacing();
        let mut brute = vec![0.0; grid.points];
        for i in 0..grid.points {
            for j in 0..grid.points {
                let (u, v) = (grid.center(i), 2.0 * grid.center(j));
                let hv = -((-u).exp() + (-v).exp()).ln();
                deposit(&mut brute, dz, hv, pl[i] * pr[j] * dz * dz);
            }
        }
        assert!(grid.l1(&h, &brute) < 1e-10);
    }

    #[test]
    fn pair_histogram_bins() {
        assert!(pair_length_histogram(&[]).is_empty());
    }
}
