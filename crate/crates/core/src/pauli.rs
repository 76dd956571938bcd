//! Dense operators on qubit registers and the Pauli-string basis.
//!
//! Site 0 is the most significant qubit, so `string_matrix` of a string is the
//! Kronecker product of its single-site factors in site order.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Largest register `string_matrix` will materialize.
pub const MAX_SITES: usize = 10;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PauliError {
    #[error("register of {0} sites exceeds the dense capacity of {MAX_SITES}")]
    Capacity(usize),
    #[error("site {site} out of range for a {site_count}-site register")]
    SiteOutOfRange { site: usize, site_count: usize },
    #[error("unrecognized Pauli label character {0:?}")]
    BadLabel(char),
    #[error("site counts differ ({0} vs {1})")]
    SiteCountMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn bits(self) -> (bool, bool) {
        match self {
            Axis::X => (true, false),
            Axis::Y => (true, true),
            Axis::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Option<Axis> {
        match (x, z) {
            (true, false) => Some(Axis::X),
            (true, true) => Some(Axis::Y),
            (false, true) => Some(Axis::Z),
            (false, false) => None,
        }
    }

    fn letter(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

/// Tensor product of single-site Paulis; sites absent from `factors` carry
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString {
    site_count: usize,
    factors: BTreeMap<usize, Axis>,
}

impl PauliString {
    pub fn identity(site_count: usize) -> Self {
        assert!(site_count > 0, "a Pauli string needs at least one site");
        Self { site_count, factors: BTreeMap::new() }
    }

    pub fn new(
        site_count: usize,
        factors: impl IntoIterator<Item = (usize, Axis)>,
    ) -> Result<Self, PauliError> {
        let mut s = Self::identity(site_count);
        for (site, axis) in factors {
            if site >= site_count {
                return Err(PauliError::SiteOutOfRange { site, site_count });
            }
            s.factors.insert(site, axis);
        }
        Ok(s)
    }

    /// Parses labels such as `"XIYZ"`, one character per site.
    pub fn from_label(label: &str) -> Result<Self, PauliError> {
        let mut s = Self::identity(label.chars().count());
        for (site, ch) in label.chars().enumerate() {
            let axis = match ch {
                'I' => continue,
                'X' => Axis::X,
                'Y' => Axis::Y,
                'Z' => Axis::Z,
                other => return Err(PauliError::BadLabel(other)),
            };
            s.factors.insert(site, axis);
        }
        Ok(s)
    }

    pub fn label(&self) -> String {
        (0..self.site_count)
            .map(|k| self.factors.get(&k).map_or('I', |a| a.letter()))
            .collect()
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn factors(&self) -> &BTreeMap<usize, Axis> {
        &self.factors
    }

    pub fn axis(&self, site: usize) -> Option<Axis> {
        self.factors.get(&site).copied()
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    /// Bit masks (x, z) with site 0 on the most significant bit.
    fn masks(&self) -> (usize, usize, u32) {
        let (mut x, mut z, mut ny) = (0usize, 0usize, 0u32);
        for (&site, &axis) in &self.factors {
            let bit = 1usize << (self.site_count - 1 - site);
            let (bx, bz) = axis.bits();
            if bx {
                x |= bit;
            }
            if bz {
                z |= bit;
            }
            if axis == Axis::Y {
                ny += 1;
            }
        }
        (x, z, ny)
    }

    fn from_masks(site_count: usize, x: usize, z: usize) -> Self {
        let mut s = Self::identity(site_count);
        for site in 0..site_count {
            let bit = 1usize << (site_count - 1 - site);
            if let Some(axis) = Axis::from_bits(x & bit != 0, z & bit != 0) {
                s.factors.insert(site, axis);
            }
        }
        s
    }

    /// Operator product `self · other = phase · string`.
    pub fn mul(&self, other: &PauliString) -> Result<(C64, PauliString), PauliError> {
        if self.site_count != other.site_count {
            return Err(PauliError::SiteCountMismatch(self.site_count, other.site_count));
        }
        let mut phase = ONE;
        let mut out = Self::identity(self.site_count);
        for site in 0..self.site_count {
            match (self.axis(site), other.axis(site)) {
                (None, None) => {}
                (Some(a), None) | (None, Some(a)) => {
                    out.factors.insert(site, a);
                }
                (Some(a), Some(b)) if a == b => {}
                (Some(a), Some(b)) => {
                    let (c, sign) = match (a, b) {
                        (Axis::X, Axis::Y) => (Axis::Z, 1.0),
                        (Axis::Y, Axis::Z) => (Axis::X, 1.0),
                        (Axis::Z, Axis::X) => (Axis::Y, 1.0),
                        (Axis::Y, Axis::X) => (Axis::Z, -1.0),
                        (Axis::Z, Axis::Y) => (Axis::X, -1.0),
                        (Axis::X, Axis::Z) => (Axis::Y, -1.0),
                        _ => unreachable!(),
                    };
                    phase *= I * sign;
                    out.factors.insert(site, c);
                }
            }
        }
        Ok((phase, out))
    }

    /// Visits the nonzero entries: column `b` maps to row `b ^ x` with the
    /// returned phase.
    fn for_each_entry(&self, mut f: impl FnMut(usize, usize, C64)) {
        let (x, z, ny) = self.masks();
        let base = I.powu(ny);
        for col in 0..(1usize << self.site_count) {
            let phase = if (col & z).count_ones() % 2 == 0 { base } else { -base };
            f(col ^ x, col, phase);
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Square complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    dim: usize,
    data: Vec<C64>,
}

impl DenseOperator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data must hold dim² entries");
        Self { dim, data }
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (k, &v) in values.iter().enumerate() {
            m.set(k, k, v);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of qubits when the dimension is a power of two.
    pub fn site_count(&self) -> Option<usize> {
        self.dim.is_power_of_two().then(|| self.dim.trailing_zeros() as usize)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, j)).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self.get(k, k)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&z| z * s).collect() }
    }

    /// ‖A − A†‖_F.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += (self.get(i, j) - self.get(j, i).conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// ‖A + A†‖_F.
    pub fn anti_hermiticity_defect(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += (self.get(i, j) + self.get(j, i).conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn matmul(&self, other: &DenseOperator) -> DenseOperator {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Row vector times matrix.
    pub fn apply_left(&self, u: &[C64]) -> Vec<C64> {
        assert_eq!(u.len(), self.dim);
        let mut out = vec![ZERO; self.dim];
        for (i, &ui) in u.iter().enumerate() {
            if ui == ZERO {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += ui * a;
            }
        }
        out
    }

    pub fn kron(&self, other: &DenseOperator) -> DenseOperator {
        let (n, m) = (self.dim, other.dim);
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self.get(i, j);
                if a == ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out.set(i * m + k, j * m + l, a * other.get(k, l));
                    }
                }
            }
        }
        out
    }

    /// Adds `coeff · P` in O(dim) using the permutation structure of `P`.
    pub fn add_string(&mut self, coeff: C64, s: &PauliString) {
        assert_eq!(1usize << s.site_count(), self.dim, "string does not fit this register");
        let n = self.dim;
        s.for_each_entry(|row, col, phase| self.data[row * n + col] += coeff * phase);
    }
}

impl Add for &DenseOperator {
    type Output = DenseOperator;
    fn add(self, rhs: &DenseOperator) -> DenseOperator {
        assert_eq!(self.dim, rhs.dim);
        DenseOperator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl Sub for &DenseOperator {
    type Output = DenseOperator;
    fn sub(self, rhs: &DenseOperator) -> DenseOperator {
        assert_eq!(self.dim, rhs.dim);
        DenseOperator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl Mul for &DenseOperator {
    type Output = DenseOperator;
    fn mul(self, rhs: &DenseOperator) -> DenseOperator {
        self.matmul(rhs)
    }
}

impl Neg for &DenseOperator {
    type Output = DenseOperator;
    fn neg(self) -> DenseOperator {
        self.scaled(-ONE)
    }
}

impl AddAssign<&DenseOperator> for DenseOperator {
    fn add_assign(&mut self, rhs: &DenseOperator) {
        assert_eq!(self.dim, rhs.dim);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

pub fn string_matrix(s: &PauliString) -> Result<DenseOperator, PauliError> {
    if s.site_count() > MAX_SITES {
        return Err(PauliError::Capacity(s.site_count()));
    }
    let mut m = DenseOperator::zeros(1 << s.site_count());
    m.add_string(ONE, s);
    Ok(m)
}

/// Default relative cutoff for `decompose`.
pub const DECOMPOSE_CUTOFF: f64 = 1e-10;

/// Pauli coefficients `c_s = Tr(P_s† A)/dim`, dropping those below
/// `DECOMPOSE_CUTOFF · ‖A‖`, where ‖A‖ = ‖A‖_F/√dim is the root-mean-square
/// singular value.
pub fn decompose(op: &DenseOperator) -> BTreeMap<PauliString, C64> {
    decompose_with_cutoff(op, DECOMPOSE_CUTOFF)
}

pub fn decompose_with_cutoff(op: &DenseOperator, rel_cutoff: f64) -> BTreeMap<PauliString, C64> {
    let n = op
        .site_count()
        .filter(|&n| n > 0)
        .expect("decompose needs a qubit-register operator");
    let dim = op.dim();
    let threshold = rel_cutoff * op.frobenius_norm() / (dim as f64).sqrt();
    let mut out = BTreeMap::new();
    for x in 0..dim {
        for z in 0..dim {
            let ny = (x & z).count_ones();
            let base = (-I).powu(ny);
            let mut acc = ZERO;
            for col in 0..dim {
                let a = op.get(col ^ x, col);
                if a == ZERO {
                    continue;
                }
                if (col & z).count_ones() % 2 == 0 {
                    acc += a;
                } else {
                    acc -= a;
                }
            }
            let c = base * acc / dim as f64;
            if c.norm() > threshold && c != ZERO {
                out.insert(PauliString::from_masks(n, x, z), c);
            }
        }
    }
    out
}

/// Rebuilds an operator from Pauli coefficients.
pub fn recompose(site_count: usize, coeffs: &BTreeMap<PauliString, C64>) -> DenseOperator {
    let mut m = DenseOperator::zeros(1 << site_count);
    for (s, &c) in coeffs {
        m.add_string(c, s);
    }
    m
}

/// Linear combination of Pauli strings on a fixed register.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    site_count: usize,
    terms: Vec<(C64, PauliString)>,
}

impl PauliSum {
    pub fn new(site_count: usize) -> Self {
        Self { site_count, terms: Vec::new() }
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn terms(&self) -> &[(C64, PauliString)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, coeff: C64, s: PauliString) {
        assert_eq!(s.site_count(), self.site_count);
        if coeff != ZERO {
            self.terms.push((coeff, s));
        }
    }

    /// Adds `coeff · A_i B_j`; coinciding sites are multiplied out.
    pub fn push_pair(&mut self, coeff: C64, i: usize, a: Axis, j: usize, b: Axis) {
        let n = self.site_count;
        let first = PauliString::new(n, [(i, a)]).expect("site in range");
        let second = PauliString::new(n, [(j, b)]).expect("site in range");
        let (phase, s) = first.mul(&second).expect("same register");
        self.push(coeff * phase, s);
    }

    pub fn push_identity(&mut self, coeff: C64) {
        self.push(coeff, PauliString::identity(self.site_count));
    }

    pub fn extend(&mut self, other: &PauliSum) {
        assert_eq!(other.site_count, self.site_count);
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn scaled(&self, s: C64) -> PauliSum {
        let mut out = PauliSum::new(self.site_count);
        for (c, p) in &self.terms {
            out.push(c * s, p.clone());
        }
        out
    }

    pub fn to_dense(&self) -> Result<DenseOperator, PauliError> {
        if self.site_count > MAX_SITES {
            return Err(PauliError::Capacity(self.site_count));
        }
        let mut m = DenseOperator::zeros(1 << self.site_count);
        for (c, s) in &self.terms {
            m.add_string(*c, s);
        }
        Ok(m)
    }
}
