//! Frequency-space geometry: zone parameters, distances to resonance
//! hyperplanes, the resonant/non-resonant split and rational approximation
//! inside short intervals.

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{IntVector, LatticeError, ResonanceModule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("invalid zone parameter: {0}")]
    InvalidParameter(String),
    #[error("zero mode")]
    ZeroMode,
    #[error("hypothesis violated: K² = {k_sq} must be below 2/l = {bound}")]
    Hypothesis { k_sq: f64, bound: f64 },
    #[error("interval [{a}, {b}] is not a nondegenerate subinterval of [-1, 1]")]
    Interval { a: f64, b: f64 },
    #[error("no irreducible p/q with {k} < q < {q_max} in [{a}, {b}]")]
    NoRational { a: f64, b: f64, k: f64, q_max: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub type Result<T> = std::result::Result<T, ResonanceError>;

/// The parameter ensemble `(ε, β, s0, L, K, r, α)`:
/// `L = 12 s0`, `K = −L ln ε`, `r = √ε/β`, `α = r K/β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneParameters {
    pub epsilon: f64,
    pub beta: f64,
    pub s0: f64,
    pub l: f64,
    pub k: f64,
    pub r: f64,
    pub alpha: f64,
}

impl ZoneParameters {
    pub fn new(epsilon: f64, beta: f64, s0: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ResonanceError::InvalidParameter(format!(
                "epsilon = {epsilon} must lie in (0, 1)"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(ResonanceError::InvalidParameter(format!(
                "beta = {beta} must lie in (0, 1)"
            )));
        }
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(ResonanceError::InvalidParameter(format!(
                "s0 = {s0} must be positive"
            )));
        }
        let l = 12.0 * s0;
        let k = -l * epsilon.ln();
        if k < 1.0 {
            return Err(ResonanceError::InvalidParameter(format!(
                "K = {k} < 1: no resonance of order one is resolved"
            )));
        }
        let r = epsilon.sqrt() / beta;
        let alpha = r * k / beta;
        Ok(ZoneParameters {
            epsilon,
            beta,
            s0,
            l,
            k,
            r,
            alpha,
        })
    }

    /// Default desk-scale truncation `min(K, 20)`.
    pub fn default_k_cap(&self) -> f64 {
        self.k.min(20.0)
    }
}

/// A point `ω ∈ Rⁿ` of frequency space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(pub Vec<f64>);

impl Frequency {
    pub fn new(omega: Vec<f64>) -> Self {
        Frequency(omega)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    /// `|ω| = max_j |ω_j|`.
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Distance from `ω` to the hyperplane `R_k = {k·ω = 0}`.
///
/// Euclidean point-to-hyperplane distance; this is the one place the zone
/// metric is defined.
pub fn hyperplane_distance(omega: &[f64], k: &[f64], k_norm: f64) -> f64 {
    let dot: f64 = k.iter().zip(omega).map(|(a, b)| a * b).sum();
    dot.abs() / k_norm
}

pub fn dist_to_resonance(omega: &Frequency, k: &IntVector) -> Result<f64> {
    if k.is_zero() {
        return Err(ResonanceError::ZeroMode);
    }
    let kf: Vec<f64> = k.entries().iter().map(|&x| x as f64).collect();
    Ok(hyperplane_distance(&omega.0, &kf, k.euclidean_norm()))
}

fn push_shell(n: usize, s: i64, prefix: &mut Vec<i64>, out: &mut Vec<IntVector>) {
    let used: i64 = prefix.iter().map(|x| x.abs()).sum();
    let rest = s - used;
    if prefix.len() + 1 == n {
        for last in [-rest, rest] {
            prefix.push(last);
            let v = IntVector::new(prefix.clone());
            if v.is_canonical_sign() {
                out.push(v);
            }
            prefix.pop();
            if rest == 0 {
                break;
            }
        }
        return;
    }
    for x in -rest..=rest {
        prefix.push(x);
        push_shell(n, s, prefix, out);
        prefix.pop();
    }
}

/// Modes `k` with `|k|₁ = s`, one per `{k, −k}` pair, in lexicographic order.
pub fn shell(n: usize, s: u64) -> Vec<IntVector> {
    let mut out = Vec::new();
    if n > 0 && s > 0 {
        push_shell(n, s as i64, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// One representative of each `{k, −k}` with `0 < |k|₁ ≤ K`, ordered by
/// ℓ¹ norm and then lexicographically.
///
/// The number of modes grows like `Kⁿ`; callers choose `K` accordingly.
pub fn enumerate_modes(n: usize, k_bound: f64) -> impl Iterator<Item = IntVector> {
    let max = if k_bound >= 1.0 { k_bound.floor() as u64 } else { 0 };
    (1..=max).flat_map(move |s| shell(n, s))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZoneLabel {
    Resonant { witness: IntVector },
    NonResonant,
}

impl ZoneLabel {
    pub fn is_resonant(&self) -> bool {
        matches!(self, ZoneLabel::Resonant { .. })
    }

    pub fn witness(&self) -> Option<&IntVector> {
        match self {
            ZoneLabel::Resonant { witness } => Some(witness),
            ZoneLabel::NonResonant => None,
        }
    }
}

/// Result of classifying one frequency: the label plus the nearest mode
/// and its distance, reported for both zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: ZoneLabel,
    pub nearest: IntVector,
    pub distance: f64,
}

struct CachedMode {
    mode: IntVector,
    real: Vec<f64>,
    norm: f64,
}

/// Classifier with the truncated mode table cached, for repeated use over
/// grids and trajectories.
pub struct ZoneClassifier {
    dim: usize,
    k_cap: f64,
    alpha: f64,
    modes: Vec<CachedMode>,
}

impl ZoneClassifier {
    pub fn new(dim: usize, params: &ZoneParameters, k_cap: f64) -> Result<Self> {
        Self::with_threshold(dim, params.alpha, k_cap, Some(params.k))
    }

    /// Classifier for an explicit threshold `α` and cut-off.
    pub fn with_threshold(dim: usize, alpha: f64, k_cap: f64, k_max: Option<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(ResonanceError::InvalidParameter(format!("dimension {dim} < 2")));
        }
        if !(k_cap >= 1.0) {
            return Err(ResonanceError::InvalidParameter(format!("K_cap = {k_cap} < 1")));
        }
        if let Some(k) = k_max {
            if k_cap > k * (1.0 + 1e-12) {
                return Err(ResonanceError::InvalidParameter(format!(
                    "K_cap = {k_cap} exceeds K = {k}"
                )));
            }
        }
        if !(alpha >= 0.0) {
            return Err(ResonanceError::InvalidParameter(format!("alpha = {alpha} < 0")));
        }
        let modes = enumerate_modes(dim, k_cap)
            .map(|mode| CachedMode {
                real: mode.entries().iter().map(|&x| x as f64).collect(),
                norm: mode.euclidean_norm(),
                mode,
            })
            .collect();
        Ok(ZoneClassifier {
            dim,
            k_cap,
            alpha,
            modes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_cap(&self) -> f64 {
        self.k_cap
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Resonant iff some mode has distance strictly below `α`. Ties in the
    /// minimal distance go to the smallest `|k|₁`, then lexicographic order.
    pub fn classify(&self, omega: &[f64]) -> Classification {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, m) in self.modes.iter().enumerate() {
            let d = hyperplane_distance(omega, &m.real, m.norm);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let nearest = self.modes[best].mode.clone();
        let label = if best_d < self.alpha {
            ZoneLabel::Resonant {
                witness: nearest.clone(),
            }
        } else {
            ZoneLabel::NonResonant
        };
        Classification {
            label,
            nearest,
            distance: best_d,
        }
    }
}

pub fn classify(omega: &Frequency, params: &ZoneParameters, k_cap: f64) -> Result<Classification> {
    Ok(ZoneClassifier::new(omega.dim(), params, k_cap)?.classify(&omega.0))
}

/// `α, K` non-resonance modulo `Λ`: `|k·ω| > α` for every `0 < |k|₁ ≤ K`
/// outside the module. `None` stands for the trivial module `{0}`.
pub fn is_nonresonant_mod(
    omega: &Frequency,
    k_bound: f64,
    alpha: f64,
    module: Option<&ResonanceModule>,
) -> bool {
    enumerate_modes(omega.dim(), k_bound)
        .filter(|k| module.is_none_or(|m| !m.contains(k)))
        .all(|k| k.dot_real(&omega.0).abs() > alpha)
}

/// An irreducible `p/q ∈ [a, b]` with `K < q < 3/l`, `l = b − a`.
///
/// Scans the grid `m/Q`, `Q = ⌊3/l⌋`, upward from `a` and returns the first
/// point whose reduced denominator satisfies the bounds. When `3/l` is an
/// integer the grid can only produce `q ≤ Q = 3/l`, so points with `q = Q`
/// are skipped; if the grid yields nothing the smallest admissible
/// denominator is searched directly.
pub fn rational_in_interval(a: f64, b: f64, k_bound: f64) -> Result<(i64, u64)> {
    if !(a.is_finite() && b.is_finite() && -1.0 <= a && a < b && b <= 1.0) {
        return Err(ResonanceError::Interval { a, b });
    }
    let l = b - a;
    if !(k_bound > 0.0) || k_bound * k_bound >= 2.0 / l {
        return Err(ResonanceError::Hypothesis {
            k_sq: k_bound * k_bound,
            bound: 2.0 / l,
        });
    }
    // b − a carries rounding noise; an integer 3/l must stay excluded
    let raw = 3.0 / l;
    let q_max = if (raw - raw.round()).abs() <= 1e-9 * raw { raw.round() } else { raw };
    let admissible = |p: i64, q: i64| -> Option<(i64, u64)> {
        let g = p.gcd(&q);
        let (p, q) = (p / g, q / g);
        let x = p as f64 / q as f64;
        (x >= a && x <= b && (q as f64) > k_bound && (q as f64) < q_max).then_some((p, q as u64))
    };
    let big_q = q_max.floor() as i64;
    let start = (a * big_q as f64).ceil() as i64 - 1;
    let stop = (b * big_q as f64).floor() as i64 + 1;
    for m in start..=stop {
        if let Some(found) = admissible(m, big_q) {
            return Ok(found);
        }
    }
    let q_lo = k_bound.floor() as i64 + 1;
    let q_hi = q_max.ceil() as i64;
    for q in q_lo..=q_hi {
        let lo = (a * q as f64).ceil() as i64 - 1;
        let hi = (b * q as f64).floor() as i64 + 1;
        for p in lo..=hi {
            if p.gcd(&q) == 1 {
                if let Some(found) = admissible(p, q) {
                    return Ok(found);
                }
            }
        }
    }
    Err(ResonanceError::NoRational {
        a,
        b,
        k: k_bound,
        q_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn v<const N: usize>(a: [i64; N]) -> IntVector {
        IntVector::from(a)
    }

    #[test]
    fn zone_parameters_examples() {
        let p = ZoneParameters::new((-10f64).exp(), 0.5, 1.0).unwrap();
        assert!((p.l - 12.0).abs() < 1e-12);
        assert!((p.k - 120.0).abs() < 1e-9);
        assert!((p.r - 2.0 * (-5f64).exp()).abs() < 1e-15);
        assert!((p.r - 0.0134759).abs() < 1e-7);
        assert!((p.alpha - 3.23421).abs() < 1e-5);

        let p = ZoneParameters::new(E.powi(-20), 0.5, 1.0).unwrap();
        assert!((p.k - 240.0).abs() < 1e-9);
        assert!((p.r - 2.0 * (-10f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn zone_parameters_reject_degenerate() {
        assert!(ZoneParameters::new(0.999, 0.5, 1.0).is_err());
        assert!(ZoneParameters::new(1.0, 0.5, 1.0).is_err());
        assert!(ZoneParameters::new(0.1, 1.0, 1.0).is_err());
        assert!(ZoneParameters::new(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let d = |w: Vec<f64>, k: IntVector| dist_to_resonance(&Frequency(w), &k).unwrap();
        assert_eq!(d(vec![1.0, 0.0], v([0, 1])), 0.0);
        assert_eq!(d(vec![1.0, 1.0], v([1, -1])), 0.0);
        assert!((d(vec![1.0, 0.0, 0.0], v([1, 1, 1])) - 0.5773502691896258).abs() < 1e-15);
        assert!(dist_to_resonance(&Frequency(vec![1.0, 0.0]), &v([0, 0])).is_err());
    }

    #[test]
    fn distance_invariant_under_sign_and_scale() {
        let w = Frequency(vec![0.3, -1.7, 2.2]);
        let k = v([2, -1, 3]);
        let d0 = dist_to_resonance(&w, &k).unwrap();
        assert!((dist_to_resonance(&w, &k.neg()).unwrap() - d0).abs() < 1e-15);
        assert!((dist_to_resonance(&w, &k.checked_scale(5).unwrap()).unwrap() - d0).abs() < 1e-14);
    }

    #[test]
    fn enumerate_small_cases() {
        let m: Vec<_> = enumerate_modes(2, 1.0).collect();
        assert_eq!(m, vec![v([0, 1]), v([1, 0])]);
        let mut m: Vec<_> = enumerate_modes(2, 2.0).collect();
        m.sort();
        let mut want = vec![v([1, 0]), v([0, 1]), v([1, 1]), v([1, -1]), v([2, 0]), v([0, 2])];
        want.sort();
        assert_eq!(m, want);
    }

    fn binomial(n: u64, k: u64) -> u64 {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn enumerate_count_matches_l1_ball() {
        // points of the ℓ¹ ball: Σ_i 2^i C(n,i) C(K,i)
        for n in 2..=4u64 {
            for k in 1..=6u64 {
                let ball: u64 = (0..=n).map(|i| (1 << i) * binomial(n, i) * binomial(k, i)).sum();
                let count = enumerate_modes(n as usize, k as f64).count() as u64;
                assert_eq!(count, (ball - 1) / 2, "n={n} K={k}");
            }
        }
    }

    #[test]
    fn classify_planted_resonance() {
        let p = ZoneParameters::new(1e-4, 0.5, 0.1).unwrap();
        let w = Frequency(vec![1.0, 0.5 * p.alpha, 10.0]);
        let c = classify(&w, &p, 2.0).unwrap();
        assert_eq!(c.label, ZoneLabel::Resonant { witness: v([0, 1, 0]) });
    }

    #[test]
    fn classify_rejects_excess_cap() {
        let p = ZoneParameters::new(1e-2, 0.5, 0.1).unwrap();
        assert!(classify(&Frequency(vec![1.0, 2.0]), &p, p.k + 1.0).is_err());
    }

    #[test]
    fn classify_boundary_flips_with_alpha() {
        let w = [1.0, 0.1];
        // nearest mode (0,1) at distance 0.1
        let tight = ZoneClassifier::with_threshold(2, 0.1, 1.0, None).unwrap();
        assert!(!tight.classify(&w).label.is_resonant());
        let loose = ZoneClassifier::with_threshold(2, 0.2, 1.0, None).unwrap();
        assert!(loose.classify(&w).label.is_resonant());
    }

    #[test]
    fn nonresonant_mod_trivial_module() {
        let w = Frequency(vec![1.0, std::f64::consts::SQRT_2]);
        assert!(is_nonresonant_mod(&w, 3.0, 0.05, None));
        assert!(!is_nonresonant_mod(&w, 3.0, 0.5, None));
    }

    #[test]
    fn nonresonant_mod_planted() {
        let module = crate::lattice::saturate(&[v([1, -1, 0])]).unwrap();
        let on = Frequency(vec![1.0, 1.0, std::f64::consts::PI]);
        assert!(!is_nonresonant_mod(&on, 2.0, 0.1, None));
        assert!(is_nonresonant_mod(&on, 2.0, 0.1, Some(&module)));
        let near_other = Frequency(vec![1.0, 1.0, 2.02]);
        assert!(!is_nonresonant_mod(&near_other, 3.0, 0.1, Some(&module)));
    }

    fn check_rational(a: f64, b: f64, k: f64) {
        let (p, q) = rational_in_interval(a, b, k).unwrap();
        let x = p as f64 / q as f64;
        assert_eq!(p.gcd(&(q as i64)), 1);
        assert!(a <= x && x <= b, "{p}/{q} not in [{a},{b}]");
        assert!(q as f64 > k && (q as f64) < 3.0 / (b - a), "q = {q}");
    }

    #[test]
    fn rational_examples() {
        check_rational(0.0, 1.0, 1.0);
        check_rational(0.3, 0.5, 3.0);
        check_rational(-1.0, -0.9, 4.0);
    }

    #[test]
    fn rational_errors() {
        assert!(matches!(
            rational_in_interval(0.0, 0.5, 2.0),
            Err(ResonanceError::Hypothesis { .. })
        ));
        assert!(matches!(
            rational_in_interval(0.5, 1.5, 1.0),
            Err(ResonanceError::Interval { .. })
        ));
    }
}
