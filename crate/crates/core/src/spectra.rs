//! Dense eigensolvers for complex matrices.
//!
//! Hermitian input goes through Householder tridiagonalization and implicit
//! QL. General input is balanced, reduced to Hessenberg form and driven to
//! complex Schur form by single-shift QR; eigenvectors on both sides come from
//! triangular solves against the Schur factor and are biorthonormalized
//! cluster by cluster.

use std::cmp::Ordering;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::pauli::DenseOperator;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Eigenvalues closer than this multiple of ‖A‖_F form a degenerate cluster.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Admissible ‖A − A†‖ / ‖A‖ for the Hermitian solver.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// QR sweeps allowed per unit of dimension before giving up.
pub const SWEEPS_PER_DIM: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("matrix is not Hermitian (relative defect {0:.3e})")]
    NotHermitian(f64),
    #[error("QR iteration did not converge; unconverged indices {0:?}")]
    NoConvergence(Vec<usize>),
    #[error("tridiagonal QL iteration did not converge at index {0}")]
    QlNoConvergence(usize),
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<C64>,
    /// Column k is the right eigenvector of eigenvalue k, unit 2-norm.
    pub right_vectors: DenseOperator,
    /// Row k is the left eigenvector of eigenvalue k, scaled so that
    /// left·right = identity within each nondefective cluster.
    pub left_vectors: DenseOperator,
    /// Largest of the relative eigen-residuals, the biorthonormality defect
    /// and ε·κ over eigenvalue condition numbers κ = ‖l‖‖r‖.
    pub residual_bound: f64,
    cluster_ids: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn right(&self, k: usize) -> Vec<C64> {
        self.right_vectors.column(k)
    }

    pub fn left(&self, k: usize) -> Vec<C64> {
        self.left_vectors.row(k).to_vec()
    }

    /// Indices sharing a degeneracy cluster with `k` (including `k`).
    pub fn cluster(&self, k: usize) -> Vec<usize> {
        let id = self.cluster_ids[k];
        (0..self.len()).filter(|&j| self.cluster_ids[j] == id).collect()
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        let id = self.cluster_ids[k];
        self.cluster_ids.iter().filter(|&&c| c == id).count() > 1
    }
}

#[inline]
fn abs1(z: C64) -> f64 {
    z.re.abs() + z.im.abs()
}

fn cmp_spectral(a: &C64, b: &C64) -> Ordering {
    b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im))
}

/// Indices of `values` in (real part desc, imaginary part asc) order.
pub fn spectral_order(values: &[C64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| cmp_spectral(&values[i], &values[j]).then(i.cmp(&j)));
    idx
}

fn cluster_ids(values: &[C64], tol: f64) -> Vec<usize> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

// ---------------------------------------------------------------------------
// Hermitian route
// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending.
pub fn eig_hermitian(a: &DenseOperator) -> Result<SpectralDecomposition, SpectraError> {
    let n = a.dim();
    let norm = a.frobenius_norm();
    let defect = a.hermiticity_defect();
    if defect > HERMITIAN_TOL * norm.max(f64::MIN_POSITIVE) && defect > 0.0 {
        return Err(SpectraError::NotHermitian(defect / norm));
    }
    let (d, e, q) = tridiagonalize(a);

    // Rotate the complex off-diagonal onto the positive reals.
    let mut phase = vec![ONE; n];
    let mut off = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let r = e[k].norm();
        off[k] = r;
        phase[k + 1] = if r > 0.0 { phase[k] * (e[k] / r) } else { phase[k] };
    }
    let mut diag = d;
    let mut z = vec![0.0; n * n];
    for k in 0..n {
        z[k * n + k] = 1.0;
    }
    tql2(&mut diag, &mut off, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j)));
    let eigenvalues: Vec<C64> = order.iter().map(|&k| C64::new(diag[k], 0.0)).collect();

    // W = Q · diag(phase) · Z, columns permuted into ascending order.
    let mut right = DenseOperator::zeros(n);
    for i in 0..n {
        for (col, &k) in order.iter().enumerate() {
            let mut acc = ZERO;
            for m in 0..n {
                let zmk = z[m * n + k];
                if zmk != 0.0 {
                    acc += q.get(i, m) * phase[m] * zmk;
                }
            }
            right.set(i, col, acc);
        }
    }
    let left = right.adjoint();
    let residual_bound = eigen_residual(a, &eigenvalues, &right, &left);
    let cluster_ids = cluster_ids(&eigenvalues, CLUSTER_TOL * norm);
    Ok(SpectralDecomposition { eigenvalues, right_vectors: right, left_vectors: left, residual_bound, cluster_ids })
}

/// Householder reduction A = Q T Q† with T Hermitian tridiagonal.
/// Returns (diagonal, subdiagonal, Q).
fn tridiagonalize(a: &DenseOperator) -> (Vec<f64>, Vec<C64>, DenseOperator) {
    let n = a.dim();
    let mut h = a.clone();
    let mut q = DenseOperator::identity(n);
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x: Vec<C64> = (k + 1..n).map(|i| h.get(i, k)).collect();
        let tail: f64 = x[1..].iter().map(|z| z.norm_sqr()).sum();
        if tail == 0.0 {
            continue;
        }
        let xnorm = (tail + x[0].norm_sqr()).sqrt();
        let ph = if x[0] == ZERO { ONE } else { x[0] / x[0].norm() };
        let alpha = -ph * xnorm;
        let mut v = x;
        v[0] -= alpha;
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in v.iter_mut() {
            *z /= vn;
        }
        // Two-sided update of the trailing block via p = Bv, w = p − (v†p)v.
        let mut p = vec![ZERO; m];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = h.row(k + 1 + i);
            *pi = (0..m).map(|j| row[k + 1 + j] * v[j]).sum();
        }
        let kk: C64 = v.iter().zip(&p).map(|(a, b)| a.conj() * b).sum();
        let w: Vec<C64> = p.iter().zip(&v).map(|(&pi, &vi)| pi - kk * vi).collect();
        for i in 0..m {
            for j in 0..m {
                let delta = (v[i] * w[j].conj() + w[i] * v[j].conj()) * 2.0;
                h.add_at(k + 1 + i, k + 1 + j, -delta);
            }
        }
        h.set(k + 1, k, alpha);
        h.set(k, k + 1, alpha.conj());
        for i in k + 2..n {
            h.set(i, k, ZERO);
            h.set(k, i, ZERO);
        }
        for r in 0..n {
            let s: C64 = (0..m).map(|j| q.get(r, k + 1 + j) * v[j]).sum();
            for j in 0..m {
                q.add_at(r, k + 1 + j, -(s * v[j].conj()) * 2.0);
            }
        }
    }
    let d = (0..n).map(|k| h.get(k, k).re).collect();
    let e = (0..n.saturating_sub(1)).map(|k| h.get(k + 1, k)).collect();
    (d, e, q)
}

/// Implicit QL on a real symmetric tridiagonal matrix (`e[k]` couples k and
/// k+1). Accumulates rotations into the row-major `v`.
fn tql2(d: &mut [f64], e: &mut [f64], v: &mut [f64]) -> Result<(), SpectraError> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > SWEEPS_PER_DIM * n.max(2) {
                    return Err(SpectraError::QlNoConvergence(l));
                }
                let g0 = d[l];
                let mut p = (d[l + 1] - g0) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g0 - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[k * n + i + 1];
                        v[k * n + i + 1] = s * v[k * n + i] + c * hk;
                        v[k * n + i] = c * v[k * n + i] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// General route
// ---------------------------------------------------------------------------

/// Parlett–Reinsch scaling by powers of two; returns D with A_bal = D⁻¹ A D.
fn balance(h: &mut DenseOperator) -> Vec<f64> {
    let n = h.dim();
    let radix = 2.0f64;
    let sq = radix * radix;
    let mut d = vec![1.0; n];
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += abs1(h.get(j, i));
                    r += abs1(h.get(i, j));
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= sq;
            }
            g = r * radix;
            while c >= g {
                f /= radix;
                c /= sq;
            }
            if (c + r) / f < 0.95 * s {
                changed = true;
                d[i] *= f;
                for j in 0..n {
                    let v = h.get(i, j) / f;
                    h.set(i, j, v);
                    let w = h.get(j, i) * f;
                    h.set(j, i, w);
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

/// Householder reduction to upper Hessenberg form, optionally accumulating Q.
fn hessenberg(h: &mut DenseOperator, mut q: Option<&mut DenseOperator>) {
    let n = h.dim();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<C64> = (k + 1..n).map(|i| h.get(i, k)).collect();
        let tail: f64 = x[1..].iter().map(|z| z.norm_sqr()).sum();
        if tail == 0.0 {
            continue;
        }
        let xnorm = (tail + x[0].norm_sqr()).sqrt();
        let ph = if x[0] == ZERO { ONE } else { x[0] / x[0].norm() };
        let alpha = -ph * xnorm;
        let mut v = x;
        v[0] -= alpha;
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in v.iter_mut() {
            *z /= vn;
        }
        let m = v.len();
        for j in k..n {
            let s: C64 = (0..m).map(|i| v[i].conj() * h.get(k + 1 + i, j)).sum();
            if s != ZERO {
                for i in 0..m {
                    h.add_at(k + 1 + i, j, -(v[i] * s) * 2.0);
                }
            }
        }
        let right = |mat: &mut DenseOperator| {
            for r in 0..n {
                let s: C64 = (0..m).map(|j| mat.get(r, k + 1 + j) * v[j]).sum();
                if s != ZERO {
                    for j in 0..m {
                        mat.add_at(r, k + 1 + j, -(s * v[j].conj()) * 2.0);
                    }
                }
            }
        };
        right(h);
        if let Some(q) = q.as_deref_mut() {
            right(q);
        }
        h.set(k + 1, k, alpha);
        for i in k + 2..n {
            h.set(i, k, ZERO);
        }
    }
}

/// Rotation G = [[c, s], [−s̄, c]] with G·(x, y)ᵀ = (r, 0)ᵀ.
fn givens(x: C64, y: C64) -> (f64, C64, C64) {
    if y == ZERO {
        return (1.0, ZERO, x);
    }
    if x == ZERO {
        let ny = y.norm();
        return (0.0, y.conj() / ny, C64::new(ny, 0.0));
    }
    let (nx, ny) = (x.norm(), y.norm());
    let nrm = nx.hypot(ny);
    let alpha = x / nx;
    (nx / nrm, alpha * y.conj() / nrm, alpha * nrm)
}

fn wilkinson(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let mid = (a + d) * 0.5;
    let (m1, m2) = (mid + disc, mid - disc);
    if (m1 - d).norm() <= (m2 - d).norm() {
        m1
    } else {
        m2
    }
}

/// Drives an upper Hessenberg matrix to upper triangular (Schur) form.
fn schur_qr(h: &mut DenseOperator, mut z: Option<&mut DenseOperator>) -> Result<(), SpectraError> {
    let n = h.dim();
    if n <= 1 {
        return Ok(());
    }
    let eps = f64::EPSILON;
    let smlnum = f64::MIN_POSITIVE * (n as f64 / eps);
    let max_total = SWEEPS_PER_DIM * n;
    let mut total = 0usize;
    let mut its = 0usize;
    let mut hi = n - 1;
    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let sub = abs1(h.get(lo, lo - 1));
            if sub <= smlnum {
                break;
            }
            let mut tst = abs1(h.get(lo - 1, lo - 1)) + abs1(h.get(lo, lo));
            if tst == 0.0 {
                if lo >= 2 {
                    tst += abs1(h.get(lo - 1, lo - 2));
                }
                if lo + 1 < n {
                    tst += abs1(h.get(lo + 1, lo));
                }
            }
            if sub <= eps * tst {
                break;
            }
            lo -= 1;
        }
        if lo > 0 {
            h.set(lo, lo - 1, ZERO);
        }
        if lo == hi {
            hi -= 1;
            its = 0;
            continue;
        }
        total += 1;
        its += 1;
        if total > max_total {
            return Err(SpectraError::NoConvergence((0..=hi).collect()));
        }
        let shift = if its % 10 == 0 {
            let anchor = if its % 20 == 0 { lo } else { hi };
            let sub = if anchor == lo { h.get(lo + 1, lo) } else { h.get(hi, hi - 1) };
            h.get(anchor, anchor) + abs1(sub) * 0.75
        } else {
            wilkinson(h.get(hi - 1, hi - 1), h.get(hi - 1, hi), h.get(hi, hi - 1), h.get(hi, hi))
        };
        for k in lo..hi {
            let (x, y) = if k == lo {
                (h.get(lo, lo) - shift, h.get(lo + 1, lo))
            } else {
                (h.get(k, k - 1), h.get(k + 1, k - 1))
            };
            let (c, s, r) = givens(x, y);
            if k > lo {
                h.set(k, k - 1, r);
                h.set(k + 1, k - 1, ZERO);
            }
            let sc = s.conj();
            for j in k..n {
                let (a, b) = (h.get(k, j), h.get(k + 1, j));
                h.set(k, j, a * c + s * b);
                h.set(k + 1, j, b * c - sc * a);
            }
            let rows = (k + 2).min(hi);
            for i in 0..=rows {
                let (a, b) = (h.get(i, k), h.get(i, k + 1));
                h.set(i, k, a * c + sc * b);
                h.set(i, k + 1, b * c - s * a);
            }
            if let Some(z) = z.as_deref_mut() {
                for i in 0..n {
                    let (a, b) = (z.get(i, k), z.get(i, k + 1));
                    z.set(i, k, a * c + sc * b);
                    z.set(i, k + 1, b * c - s * a);
                }
            }
        }
    }
    Ok(())
}

fn normalize(v: &mut [C64]) {
    let m = v.iter().map(|z| abs1(*z)).fold(0.0, f64::max);
    if m == 0.0 || !m.is_finite() {
        return;
    }
    for z in v.iter_mut() {
        *z /= m;
    }
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v.iter_mut() {
        *z /= n;
    }
}

/// Eigenvalues only, in spectral order.
pub fn eigenvalues_general(a: &DenseOperator) -> Result<Vec<C64>, SpectraError> {
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h, None);
    schur_qr(&mut h, None)?;
    let values: Vec<C64> = (0..h.dim()).map(|k| h.get(k, k)).collect();
    Ok(spectral_order(&values).into_iter().map(|k| values[k]).collect())
}

/// Full eigendecomposition of a general complex matrix.
pub fn eig_general(a: &DenseOperator) -> Result<SpectralDecomposition, SpectraError> {
    let n = a.dim();
    let norm = a.frobenius_norm();
    let mut t = a.clone();
    let scale = balance(&mut t);
    let mut z = DenseOperator::identity(n);
    hessenberg(&mut t, Some(&mut z));
    schur_qr(&mut t, Some(&mut z))?;

    let values: Vec<C64> = (0..n).map(|k| t.get(k, k)).collect();
    let tnorm = t.frobenius_norm();
    let smlnum = f64::MIN_POSITIVE * (n.max(1) as f64 / f64::EPSILON);

    let mut right = DenseOperator::zeros(n);
    let mut left = DenseOperator::zeros(n);
    for k in 0..n {
        let lambda = values[k];
        let smin = (f64::EPSILON * tnorm).max(smlnum);
        let guard = |mut den: C64| {
            if abs1(den) < smin {
                den = C64::new(smin, 0.0);
            }
            den
        };
        // Right: (T − λ)x = 0 with x_k = 1, back substitution upward.
        let mut x = vec![ZERO; n];
        x[k] = ONE;
        for j in (0..k).rev() {
            let s: C64 = (j + 1..=k).map(|m| t.get(j, m) * x[m]).sum();
            x[j] = -s / guard(t.get(j, j) - lambda);
            if abs1(x[j]) > 1e150 {
                for v in x.iter_mut() {
                    *v *= 1e-150;
                }
            }
        }
        // Left: wᵀ(T − λ) = 0 with w_k = 1, forward substitution.
        let mut w = vec![ZERO; n];
        w[k] = ONE;
        for j in k + 1..n {
            let s: C64 = (k..j).map(|m| w[m] * t.get(m, j)).sum();
            w[j] = -s / guard(t.get(j, j) - lambda);
            if abs1(w[j]) > 1e150 {
                for v in w.iter_mut() {
                    *v *= 1e-150;
                }
            }
        }
        let mut rv: Vec<C64> = (0..n)
            .map(|i| scale[i] * (0..=k).map(|m| z.get(i, m) * x[m]).sum::<C64>())
            .collect();
        let mut lv: Vec<C64> = (0..n)
            .map(|i| (k..n).map(|m| w[m] * z.get(i, m).conj()).sum::<C64>() / scale[i])
            .collect();
        normalize(&mut rv);
        normalize(&mut lv);
        for i in 0..n {
            right.set(i, k, rv[i]);
            left.set(k, i, lv[i]);
        }
    }

    let order = spectral_order(&values);
    let eigenvalues: Vec<C64> = order.iter().map(|&k| values[k]).collect();
    let right = DenseOperator::from_fn(n, |i, j| right.get(i, order[j]));
    let mut left = DenseOperator::from_fn(n, |i, j| left.get(order[i], j));
    let ids = cluster_ids(&eigenvalues, CLUSTER_TOL * norm);
    biorthonormalize(&ids, &right, &mut left);
    let residual_bound = eigen_residual(a, &eigenvalues, &right, &left);
    Ok(SpectralDecomposition { eigenvalues, right_vectors: right, left_vectors: left, residual_bound, cluster_ids: ids })
}

/// Rescales left vectors so that left·right is the identity on every
/// cluster whose Gram block is invertible.
fn biorthonormalize(ids: &[usize], right: &DenseOperator, left: &mut DenseOperator) {
    let n = ids.len();
    let mut seen = vec![false; n];
    for k in 0..n {
        if seen[k] {
            continue;
        }
        let members: Vec<usize> = (k..n).filter(|&j| ids[j] == ids[k]).collect();
        for &j in &members {
            seen[j] = true;
        }
        let m = members.len();
        let gram = DenseOperator::from_fn(m, |a, b| {
            let (ra, cb) = (members[a], members[b]);
            (0..n).map(|i| left.get(ra, i) * right.get(i, cb)).sum()
        });
        let rows: Vec<Vec<C64>> = members.iter().map(|&r| left.row(r).to_vec()).collect();
        match lu_factor(&gram) {
            Some(lu) => {
                for col in 0..n {
                    let rhs: Vec<C64> = rows.iter().map(|r| r[col]).collect();
                    let sol = lu.solve(&rhs);
                    for (a, &r) in members.iter().enumerate() {
                        left.set(r, col, sol[a]);
                    }
                }
            }
            None => {
                for (a, &r) in members.iter().enumerate() {
                    let g = gram.get(a, a);
                    if g.norm() > 0.0 {
                        for col in 0..n {
                            left.set(r, col, rows[a][col] / g);
                        }
                    }
                }
            }
        }
    }
}

fn eigen_residual(a: &DenseOperator, values: &[C64], right: &DenseOperator, left: &DenseOperator) -> f64 {
    let n = a.dim();
    if n == 0 {
        return 0.0;
    }
    let anorm = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let ar = a.matmul(right);
    let la = left.matmul(a);
    let lr = left.matmul(right);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let lam = values[k];
        let (mut rr, mut rn, mut lres, mut ln) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            rr += (ar.get(i, k) - lam * right.get(i, k)).norm_sqr();
            rn += right.get(i, k).norm_sqr();
            lres += (la.get(k, i) - lam * left.get(k, i)).norm_sqr();
            ln += left.get(k, i).norm_sqr();
        }
        let r1 = if rn > 0.0 { (rr / rn).sqrt() / anorm } else { f64::INFINITY };
        let r2 = if ln > 0.0 { (lres / ln).sqrt() / anorm } else { f64::INFINITY };
        // ε·κ_k estimates the eigenvalue error; it exposes defective input
        // whose vectors are individually accurate but nearly parallel.
        let kappa = (rn * ln).sqrt();
        worst = worst.max(r1).max(r2).max(f64::EPSILON * kappa);
        for j in 0..n {
            let target = if j == k { ONE } else { ZERO };
            worst = worst.max((lr.get(k, j) - target).norm());
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

// ---------------------------------------------------------------------------
// LU with partial pivoting
// ---------------------------------------------------------------------------

pub struct Lu {
    lu: DenseOperator,
    perm: Vec<usize>,
    sign: f64,
}

/// LU factorization; `None` when a pivot is negligible.
pub fn lu_factor(a: &DenseOperator) -> Option<Lu> {
    let n = a.dim();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let scale = a.max_abs();
    for k in 0..n {
        let (p, best) = (k..n)
            .map(|i| (i, lu.get(i, k).norm()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if best <= 1e-14 * scale || best == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..n {
                let (x, y) = (lu.get(k, j), lu.get(p, j));
                lu.set(k, j, y);
                lu.set(p, j, x);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let piv = lu.get(k, k);
        for i in k + 1..n {
            let f = lu.get(i, k) / piv;
            lu.set(i, k, f);
            if f != ZERO {
                for j in k + 1..n {
                    let v = lu.get(k, j);
                    lu.add_at(i, j, -f * v);
                }
            }
        }
    }
    Some(Lu { lu, perm, sign })
}

impl Lu {
    pub fn determinant(&self) -> C64 {
        (0..self.lu.dim()).map(|k| self.lu.get(k, k)).product::<C64>() * self.sign
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.dim();
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: C64 = (0..i).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: C64 = (i + 1..n).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] = (x[i] - s) / self.lu.get(i, i);
        }
        x
    }
}

/// Determinant by LU; zero for numerically singular input.
pub fn determinant(a: &DenseOperator) -> C64 {
    lu_factor(a).map_or(ZERO, |lu| lu.determinant())
}

/// Spectrum export rows: (index, eigenvalue, residual of that pair).
pub fn spectrum_rows(a: &DenseOperator, dec: &SpectralDecomposition) -> Vec<(usize, C64, f64)> {
    let anorm = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let ar = a.matmul(&dec.right_vectors);
    (0..dec.len())
        .map(|k| {
            let lam = dec.eigenvalues[k];
            let r: f64 = (0..a.dim())
                .map(|i| (ar.get(i, k) - lam * dec.right_vectors.get(i, k)).norm_sqr())
                .sum::<f64>()
                .sqrt();
            (k, lam, r / anorm)
        })
        .collect()
}
