//! Exact integer arithmetic for resonance vectors and resonance modules.
//!
//! Everything here is exact: entries are `i64`, intermediate products and
//! determinants are computed in checked `i128`. Overflow is reported as
//! [`LatticeError::Overflow`], never wrapped.

use std::fmt;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("zero mode")]
    ZeroMode,
    #[error("rank deficient")]
    RankDeficient,
    #[error("zero angle")]
    ZeroAngle,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid rank {rank} for dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },
    #[error("integer overflow in exact lattice arithmetic")]
    Overflow,
}

pub type Result<T> = std::result::Result<T, LatticeError>;

fn narrow(x: i128) -> Result<i64> {
    i64::try_from(x).map_err(|_| LatticeError::Overflow)
}

fn add(a: i128, b: i128) -> Result<i128> {
    a.checked_add(b).ok_or(LatticeError::Overflow)
}

fn mul(a: i128, b: i128) -> Result<i128> {
    a.checked_mul(b).ok_or(LatticeError::Overflow)
}

/// An integer Fourier mode `k ∈ Zⁿ`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntVector(Vec<i64>);

impl IntVector {
    pub fn new(entries: Vec<i64>) -> Self {
        IntVector(entries)
    }

    pub fn zeros(n: usize) -> Self {
        IntVector(vec![0; n])
    }

    /// The unit vector `e_i` in dimension `n`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0; n];
        v[i] = 1;
        IntVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    /// ℓ¹ norm, the `|k|` of the resonance literature.
    pub fn l1_norm(&self) -> u64 {
        self.0.iter().map(|x| x.unsigned_abs()).sum()
    }

    pub fn sup_norm(&self) -> u64 {
        self.0.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0)
    }

    /// Exact squared Euclidean norm.
    pub fn norm_sq(&self) -> i128 {
        self.0.iter().map(|&x| (x as i128) * (x as i128)).sum()
    }

    pub fn euclidean_norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Exact integer dot product.
    pub fn dot(&self, other: &IntVector) -> i128 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as i128) * (b as i128))
            .sum()
    }

    /// `k · x` for a real vector `x`.
    pub fn dot_real(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
    }

    pub fn neg(&self) -> IntVector {
        IntVector(self.0.iter().map(|x| -x).collect())
    }

    pub fn checked_add(&self, other: &IntVector) -> Result<IntVector> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.checked_add(b).ok_or(LatticeError::Overflow))
            .collect::<Result<Vec<_>>>()
            .map(IntVector)
    }

    pub fn checked_sub(&self, other: &IntVector) -> Result<IntVector> {
        self.checked_add(&other.neg())
    }

    pub fn checked_scale(&self, c: i64) -> Result<IntVector> {
        self.0
            .iter()
            .map(|&a| a.checked_mul(c).ok_or(LatticeError::Overflow))
            .collect::<Result<Vec<_>>>()
            .map(IntVector)
    }

    /// Canonical sign representative: first nonzero entry positive.
    pub fn canonical_sign(&self) -> IntVector {
        match self.0.iter().find(|&&x| x != 0) {
            Some(&x) if x < 0 => self.neg(),
            _ => self.clone(),
        }
    }

    pub fn is_canonical_sign(&self) -> bool {
        self.0.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
    }

    pub fn content(&self) -> u64 {
        self.0.iter().fold(0u64, |g, &x| g.gcd(&x.unsigned_abs()))
    }

    fn widened(&self) -> Vec<i128> {
        self.0.iter().map(|&x| x as i128).collect()
    }
}

impl fmt::Debug for IntVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for IntVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i64>> for IntVector {
    fn from(v: Vec<i64>) -> Self {
        IntVector(v)
    }
}

impl<const N: usize> From<[i64; N]> for IntVector {
    fn from(v: [i64; N]) -> Self {
        IntVector(v.to_vec())
    }
}

/// Splits `k = g·k'` with `g` the entry gcd and `k'` primitive.
pub fn primitive_part(k: &IntVector) -> Result<(IntVector, u64)> {
    if k.is_zero() {
        return Err(LatticeError::ZeroMode);
    }
    let g = k.content();
    let reduced = k.0.iter().map(|&x| x / g as i64).collect();
    Ok((IntVector(reduced), g))
}

fn check_dims(vectors: &[IntVector]) -> Result<usize> {
    let n = vectors.first().map(IntVector::dim).ok_or(LatticeError::RankDeficient)?;
    for v in vectors {
        if v.dim() != n {
            return Err(LatticeError::DimensionMismatch {
                expected: n,
                got: v.dim(),
            });
        }
    }
    Ok(n)
}

/// Fraction-free (Bareiss) determinant of a square integer matrix.
fn bareiss_det(mut m: Vec<Vec<i128>>) -> Result<i128> {
    let d = m.len();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..d {
        if m[k][k] == 0 {
            match (k + 1..d).find(|&r| m[r][k] != 0) {
                Some(r) => {
                    m.swap(k, r);
                    sign = -sign;
                }
                None => return Ok(0),
            }
        }
        for i in k + 1..d {
            for j in k + 1..d {
                let num = mul(m[i][j], m[k][k])?
                    .checked_sub(mul(m[i][k], m[k][j])?)
                    .ok_or(LatticeError::Overflow)?;
                m[i][j] = num / prev;
            }
        }
        prev = m[k][k];
    }
    Ok(sign * m[d - 1][d - 1])
}

/// Exact Gram determinant `det(AᵀA)` of the vectors (columns of `A`).
pub fn gram_determinant(basis: &[IntVector]) -> Result<i128> {
    check_dims(basis)?;
    let d = basis.len();
    let mut g = vec![vec![0i128; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = exact_dot(&basis[i], &basis[j])?;
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    bareiss_det(g)
}

fn exact_dot(a: &IntVector, b: &IntVector) -> Result<i128> {
    a.0.iter()
        .zip(&b.0)
        .try_fold(0i128, |acc, (&x, &y)| add(acc, mul(x as i128, y as i128)?))
}

/// `sqrt(det(AᵀA))`; invariant under unimodular change of basis.
pub fn module_volume(basis: &[IntVector]) -> Result<f64> {
    let g = gram_determinant(basis)?;
    if g <= 0 {
        return Err(LatticeError::RankDeficient);
    }
    Ok((g as f64).sqrt())
}

/// Row-style Hermite normal form of the given rows.
///
/// Returns the nonzero rows of the echelon form: pivots strictly move right,
/// are positive, and entries above each pivot are reduced into `[0, pivot)`.
/// The row lattice is unchanged.
pub(crate) fn hermite_rows(rows: &[Vec<i128>]) -> Result<Vec<Vec<i128>>> {
    let mut m: Vec<Vec<i128>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let mut pivot_row = 0;
    let mut pivots = Vec::new();
    for col in 0..ncols {
        if pivot_row == m.len() {
            break;
        }
        // Euclid on rows pivot_row.. at this column until a single nonzero remains.
        loop {
            let mut best: Option<usize> = None;
            for r in pivot_row..m.len() {
                if m[r][col] != 0 && best.is_none_or(|b| m[r][col].abs() < m[b][col].abs()) {
                    best = Some(r);
                }
            }
            let Some(b) = best else { break };
            m.swap(pivot_row, b);
            let mut done = true;
            for r in pivot_row + 1..m.len() {
                if m[r][col] != 0 {
                    let q = m[r][col].div_euclid(m[pivot_row][col]);
                    for c in col..ncols {
                        let t = mul(q, m[pivot_row][c])?;
                        m[r][c] = m[r][c].checked_sub(t).ok_or(LatticeError::Overflow)?;
                    }
                    if m[r][col] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        if m[pivot_row][col] == 0 {
            continue;
        }
        if m[pivot_row][col] < 0 {
            for c in col..ncols {
                m[pivot_row][c] = -m[pivot_row][c];
            }
        }
        let p = m[pivot_row][col];
        for r in 0..pivot_row {
            let q = m[r][col].div_euclid(p);
            if q != 0 {
                for c in col..ncols {
                    let t = mul(q, m[pivot_row][c])?;
                    m[r][c] = m[r][c].checked_sub(t).ok_or(LatticeError::Overflow)?;
                }
            }
        }
        pivots.push(col);
        pivot_row += 1;
    }
    m.truncate(pivot_row);
    Ok(m)
}

/// Basis of the integer kernel `{x ∈ Zⁿ : Mx = 0}` of an `m × n` matrix.
///
/// Unimodular column operations reduce `M` to column echelon form; the
/// transformed unit vectors of the zero columns span the kernel, which is
/// therefore saturated.
fn integer_kernel(rows: &[Vec<i128>], n: usize) -> Result<Vec<Vec<i128>>> {
    // Columns of [M; I], stored column-major.
    let mut cols: Vec<Vec<i128>> = (0..n)
        .map(|j| {
            let mut c: Vec<i128> = rows.iter().map(|r| r[j]).collect();
            c.extend((0..n).map(|i| i128::from(i == j)));
            c
        })
        .collect();
    let m = rows.len();
    let mut free: Vec<usize> = (0..n).collect();
    for r in 0..m {
        let active: Vec<usize> = free.iter().copied().filter(|&c| cols[c][r] != 0).collect();
        let Some((&first, rest)) = active.split_first() else {
            continue;
        };
        for &other in rest {
            let x = cols[first][r];
            let y = cols[other][r];
            let e = x.extended_gcd(&y);
            let (g, s, t) = (e.gcd, e.x, e.y);
            let (xg, yg) = (x / g, y / g);
            for i in 0..cols[first].len() {
                let a = cols[first][i];
                let b = cols[other][i];
                let na = add(mul(s, a)?, mul(t, b)?)?;
                let nb = add(mul(-yg, a)?, mul(xg, b)?)?;
                cols[first][i] = na;
                cols[other][i] = nb;
            }
        }
        free.retain(|&c| c != first);
    }
    Ok(free.into_iter().map(|c| cols[c][m..].to_vec()).collect())
}

fn to_rows(vectors: &[IntVector]) -> Vec<Vec<i128>> {
    vectors.iter().map(IntVector::widened).collect()
}

fn from_rows(rows: &[Vec<i128>]) -> Result<Vec<IntVector>> {
    rows.iter()
        .map(|r| r.iter().map(|&x| narrow(x)).collect::<Result<Vec<_>>>().map(IntVector))
        .collect()
}

/// A rank-`d` sublattice `Λ ⊂ Zⁿ`, `1 ≤ d < n`.
///
/// The stored basis is the Hermite normal form of the generators, so two
/// modules are equal iff their bases are equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResonanceModule {
    dim: usize,
    basis: Vec<IntVector>,
    gram: i128,
    maximal: bool,
}

impl ResonanceModule {
    /// Module generated over Z by independent `generators`.
    pub fn from_generators(generators: &[IntVector]) -> Result<Self> {
        let n = check_dims(generators)?;
        let d = generators.len();
        if d == 0 || d >= n {
            return Err(LatticeError::InvalidRank { rank: d, dim: n });
        }
        let hnf = hermite_rows(&to_rows(generators))?;
        if hnf.len() < d {
            return Err(LatticeError::RankDeficient);
        }
        let basis = from_rows(&hnf)?;
        let gram = gram_determinant(&basis)?;
        let saturated = saturated_rows(&basis, n)?;
        let maximal = gram == gram_determinant(&from_rows(&saturated)?)?;
        Ok(ResonanceModule {
            dim: n,
            basis,
            gram,
            maximal,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[IntVector] {
        &self.basis
    }

    /// `|Λ|²`, an exact positive integer.
    pub fn volume_squared(&self) -> i128 {
        self.gram
    }

    pub fn volume(&self) -> f64 {
        (self.gram as f64).sqrt()
    }

    pub fn is_maximal(&self) -> bool {
        self.maximal
    }

    /// Integer coordinates of `k` in the stored basis, if `k ∈ Λ`.
    pub fn coordinates(&self, k: &IntVector) -> Option<Vec<i64>> {
        if k.dim() != self.dim {
            return None;
        }
        let mut residual = k.widened();
        let mut coords = Vec::with_capacity(self.basis.len());
        for row in &self.basis {
            let col = row.0.iter().position(|&x| x != 0)?;
            let p = row.0[col] as i128;
            if residual[col] % p != 0 {
                return None;
            }
            let c = residual[col] / p;
            for (r, &b) in residual.iter_mut().zip(&row.0) {
                *r = r.checked_sub(c.checked_mul(b as i128)?)?;
            }
            coords.push(i64::try_from(c).ok()?);
        }
        residual.iter().all(|&x| x == 0).then_some(coords)
    }

    /// Exact membership `k ∈ Λ`.
    pub fn contains(&self, k: &IntVector) -> bool {
        self.coordinates(k).is_some()
    }

    /// Whether `k` lies in the real span of `Λ` (exact rank test).
    pub fn spans(&self, k: &IntVector) -> bool {
        let mut vs = self.basis.clone();
        vs.push(k.clone());
        matches!(gram_determinant(&vs), Ok(0))
    }

    /// Row-major integer matrix of the basis, for JSON export.
    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        self.basis.iter().map(|b| b.0.clone()).collect()
    }
}

impl Serialize for ResonanceModule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResonanceModule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<i64>> = Vec::deserialize(d)?;
        let gens: Vec<IntVector> = rows.into_iter().map(IntVector).collect();
        ResonanceModule::from_generators(&gens).map_err(serde::de::Error::custom)
    }
}

fn saturated_rows(generators: &[IntVector], n: usize) -> Result<Vec<Vec<i128>>> {
    let annihilator = integer_kernel(&to_rows(generators), n)?;
    let span = integer_kernel(&annihilator, n)?;
    hermite_rows(&span)
}

/// The maximal module `Span_R(generators) ∩ Zⁿ`.
pub fn saturate(generators: &[IntVector]) -> Result<ResonanceModule> {
    let n = check_dims(generators)?;
    let d = generators.len();
    if d == 0 || d >= n {
        return Err(LatticeError::InvalidRank { rank: d, dim: n });
    }
    if gram_determinant(generators)? == 0 {
        return Err(LatticeError::RankDeficient);
    }
    let rows = saturated_rows(generators, n)?;
    if rows.len() != d {
        return Err(LatticeError::RankDeficient);
    }
    let basis = from_rows(&rows)?;
    let gram = gram_determinant(&basis)?;
    Ok(ResonanceModule {
        dim: n,
        basis,
        gram,
        maximal: true,
    })
}

/// A basis `(k1', k2')` of `saturate({k1, k2})` with both ℓ¹ norms at most
/// `|k1|₁ + |k2|₁`.
///
/// `k1'` is the primitive part of `k1` and `k2' = s1·k1 + s2·k2` where `s2 > 0`
/// is the smallest positive `k2`-coefficient attained by the module and
/// `s1 ∈ [0, 1)` is the smallest admissible `k1`-coefficient.
pub fn bounded_basis(k1: &IntVector, k2: &IntVector) -> Result<(IntVector, IntVector)> {
    let module = saturate(&[k1.clone(), k2.clone()])?;
    let (k1p, g) = primitive_part(k1)?;
    let c1 = module.coordinates(k1).ok_or(LatticeError::RankDeficient)?;
    let c2 = module.coordinates(k2).ok_or(LatticeError::RankDeficient)?;
    let (a11, a21) = (c1[0] as i128, c1[1] as i128);
    let (a12, a22) = (c2[0] as i128, c2[1] as i128);
    let det = mul(a11, a22)?
        .checked_sub(mul(a12, a21)?)
        .ok_or(LatticeError::Overflow)?;
    if det == 0 {
        return Err(LatticeError::RankDeficient);
    }
    // A module point x = c1·b1 + c2·b2 = u·k1 + t·k2 has
    // t = (a11·c2 − a21·c1)/det and u = (a22·c1 − a12·c2)/det.
    let e = (-a21).extended_gcd(&a11);
    debug_assert_eq!(e.gcd, g as i128);
    let sign = det.signum();
    let (x1, x2) = (sign * e.x, sign * e.y);
    let b = module.basis();
    let point = b[0]
        .checked_scale(narrow(x1)?)?
        .checked_add(&b[1].checked_scale(narrow(x2)?)?)?;
    let u_num = mul(a22, x1)?
        .checked_sub(mul(a12, x2)?)
        .ok_or(LatticeError::Overflow)?
        * sign;
    let u_den = det.abs();
    // Shift by multiples of k1' = k1/g so that u ∈ [0, 1/g).
    let shift = -(mul(u_num, g as i128)?).div_euclid(u_den);
    let k2p = point.checked_add(&k1p.checked_scale(narrow(shift)?)?)?;
    Ok((k1p, k2p))
}

/// `sin ∠(k1, k2)` with Euclidean norms.
pub fn sin_angle(k1: &IntVector, k2: &IntVector) -> Result<f64> {
    if k1.is_zero() || k2.is_zero() {
        return Err(LatticeError::ZeroMode);
    }
    let g = gram_determinant(&[k1.clone(), k2.clone()])?;
    if g == 0 {
        return Err(LatticeError::ZeroAngle);
    }
    let denom = (k1.norm_sq() as f64).sqrt() * (k2.norm_sq() as f64).sqrt();
    Ok(((g as f64).sqrt() / denom).min(1.0))
}

/// Whether `module` is generated over Z by vectors of ℓ¹ norm at most `k_bound`.
///
/// Enumerates every module vector with `0 < |x|₁ ≤ K` (coefficients are
/// bounded through the inverse Gram matrix) and checks that they generate a
/// sublattice of index one.
pub fn is_k_lattice(module: &ResonanceModule, k_bound: f64) -> bool {
    if !(k_bound >= 1.0) {
        return false;
    }
    let basis = module.basis();
    let d = basis.len();
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| basis[i].dot(&basis[j]) as f64).collect())
        .collect();
    let Some(inv) = nalgebra::DMatrix::from_fn(d, d, |i, j| gram[i][j]).try_inverse() else {
        return false;
    };
    let bounds: Vec<i64> = (0..d)
        .map(|i| (k_bound * inv[(i, i)].max(0.0).sqrt() + 1e-9).floor() as i64)
        .collect();
    let mut short: Vec<Vec<i128>> = Vec::new();
    let mut coeffs: Vec<i64> = bounds.iter().map(|b| -b).collect();
    'outer: loop {
        let mut x = vec![0i128; module.dim()];
        for (c, b) in coeffs.iter().zip(basis) {
            for (xi, &bi) in x.iter_mut().zip(b.entries()) {
                *xi += (*c as i128) * (bi as i128);
            }
        }
        let l1: i128 = x.iter().map(|v| v.abs()).sum();
        if l1 > 0 && (l1 as f64) <= k_bound {
            short.push(coeffs.iter().map(|&c| c as i128).collect());
        }
        for i in 0..d {
            if coeffs[i] < bounds[i] {
                coeffs[i] += 1;
                continue 'outer;
            }
            coeffs[i] = -bounds[i];
        }
        break;
    }
    match hermite_rows(&short) {
        // index of the generated sublattice = product of the HNF pivots
        Ok(h) if h.len() == d => h
            .iter()
            .all(|row| row.iter().find(|&&x| x != 0) == Some(&1)),
        _ => false,
    }
}
