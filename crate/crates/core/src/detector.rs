//! Double-resonance detection along a frequency curve `t ↦ ω(I(t))`.
//!
//! If the direction `ω/|ω|` moves by at least a threshold, some normalized
//! component sweeps an interval that contains a rational `p/q` with large
//! denominator; at the crossing time `ω` lies on the hyperplane of
//! `k₂ = q eᵢ ∓ p eⱼ`, while confinement to the resonant zone supplies a
//! short `k₁` with `ω` close to `R_{k₁}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::lattice::{self, IntVector, LatticeError, ResonanceModule};
use crate::models::IntegrableModel;
use crate::resonance::{self, hyperplane_distance, ResonanceError, ZoneClassifier, ZoneParameters};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid frequency curve: {0}")]
    InvalidCurve(String),
    #[error("frequency vanishes at sample {0}")]
    ZeroFrequency(usize),
    #[error("no crossing guaranteed: direction drift {drift} is below the threshold {threshold}")]
    InsufficientDrift { drift: f64, threshold: f64 },
    #[error("not in N(ε): frequency at t = {t} is not within α of any resonance with |k|₁ ≤ {k_cap}")]
    NotInZone { t: f64, k_cap: f64 },
    #[error("modes {0} and {1} are linearly dependent")]
    DependentModes(IntVector, IntVector),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// Time-ordered frequency samples with non-vanishing sup-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCurve {
    times: Vec<f64>,
    omegas: Vec<Vec<f64>>,
}

impl FrequencyCurve {
    pub fn new(times: Vec<f64>, omegas: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != omegas.len() {
            return Err(DetectorError::InvalidCurve(format!(
                "{} times for {} frequencies",
                times.len(),
                omegas.len()
            )));
        }
        let n = omegas[0].len();
        if n < 2 {
            return Err(DetectorError::InvalidCurve(format!("dimension {n} < 2")));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DetectorError::InvalidCurve("times must be strictly increasing".into()));
        }
        for (idx, w) in omegas.iter().enumerate() {
            if w.len() != n || w.iter().any(|x| !x.is_finite()) {
                return Err(DetectorError::InvalidCurve(format!("bad frequency at sample {idx}")));
            }
            if sup_norm(w) == 0.0 {
                return Err(DetectorError::ZeroFrequency(idx));
            }
        }
        Ok(FrequencyCurve { times, omegas })
    }

    /// `ω(I(t))` along a trajectory.
    pub fn from_trajectory(traj: &Trajectory, model: &IntegrableModel) -> Result<Self> {
        let (times, omegas) = traj
            .samples()
            .iter()
            .map(|s| (s.t, model.frequency(&s.state.actions).0))
            .unzip();
        Self::new(times, omegas)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.omegas[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn omegas(&self) -> &[Vec<f64>] {
        &self.omegas
    }

    /// Piecewise-linear interpolation on segment `s` at fraction `u ∈ [0, 1]`.
    fn interpolate(&self, s: usize, u: f64) -> (f64, Vec<f64>) {
        let (a, b) = (&self.omegas[s], &self.omegas[s + 1]);
        let t = self.times[s] + u * (self.times[s + 1] - self.times[s]);
        (t, a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect())
    }
}

fn sup_norm(w: &[f64]) -> f64 {
    w.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s = sup_norm(w);
    w.iter().map(|x| x / s).collect()
}

/// Min and max of `ωᵢ(t)/|ω(t)|` over the samples, for each `i`.
pub fn component_ranges(curve: &FrequencyCurve) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); curve.dim()];
    for w in &curve.omegas {
        for (r, x) in out.iter_mut().zip(normalized(w)) {
            r.0 = r.0.min(x);
            r.1 = r.1.max(x);
        }
    }
    out
}

/// `max_t |ω(t)/|ω(t)| − ω(0)/|ω(0)||₂`.
pub fn direction_drift(curve: &FrequencyCurve) -> f64 {
    let start = normalized(&curve.omegas[0]);
    curve
        .omegas
        .iter()
        .map(|w| {
            normalized(w)
                .iter()
                .zip(&start)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Orthogonal projection of `ω` onto `{x : k₁·x = k₂·x = 0}` and the
/// Euclidean distance to it.
pub fn project_to_double_resonance(omega: &[f64], k1: &IntVector, k2: &IntVector) -> Result<(Vec<f64>, f64)> {
    let g11 = k1.norm_sq();
    let g22 = k2.norm_sq();
    let g12 = k1.dot(k2);
    let det = g11 * g22 - g12 * g12;
    if det == 0 || k1.dim() != omega.len() || k2.dim() != omega.len() {
        return Err(DetectorError::DependentModes(k1.clone(), k2.clone()));
    }
    let (a, b) = (k1.dot_real(omega), k2.dot_real(omega));
    let det = det as f64;
    let c1 = (g22 as f64 * a - g12 as f64 * b) / det;
    let c2 = (g11 as f64 * b - g12 as f64 * a) / det;
    let bar: Vec<f64> = omega
        .iter()
        .zip(k1.entries().iter().zip(k2.entries()))
        .map(|(w, (&x, &y))| w - c1 * x as f64 - c2 * y as f64)
        .collect();
    let dist = omega
        .iter()
        .zip(&bar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((bar, dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleResonanceWitness {
    pub t_star: f64,
    pub omega_star: Vec<f64>,
    pub k1: IntVector,
    pub k2: IntVector,
    pub module: ResonanceModule,
    /// `|ω(t*) − ω̄|`, `ω̄` the projection onto `R_{k₁} ∩ R_{k₂}`.
    pub distance: f64,
    pub omega_bar: Vec<f64>,
    /// Distance from `ω(t*)` to `R_{k₁}`.
    pub distance_k1: f64,
    /// `|k₂·ω(t*)| / (‖k₂‖₂ ‖ω(t*)‖₂)`.
    pub k2_residual: f64,
    pub p: i64,
    pub q: u64,
    pub i: usize,
    pub j: usize,
    /// Sub-interval of the `i`-th normalized range handed to the rational search.
    pub interval: (f64, f64),
    pub k_used: f64,
    pub delta: f64,
    pub drift_threshold: f64,
    pub direction_drift: f64,
}

/// Runs the detection on `curve`. `k_cap` truncates `params.k` for the
/// resonant-zone classification and the rational search.
pub fn detect(
    curve: &FrequencyCurve,
    params: &ZoneParameters,
    delta: f64,
    drift_threshold: f64,
    k_cap: f64,
) -> Result<DoubleResonanceWitness> {
    let n = curve.dim();
    let k_used = k_cap.min(params.k);
    let classifier = ZoneClassifier::new(n, params, k_used)?;
    for (t, w) in curve.times.iter().zip(&curve.omegas) {
        if !classifier.classify(w).label.is_resonant() {
            return Err(DetectorError::NotInZone { t: *t, k_cap: k_used });
        }
    }

    let drift = direction_drift(curve);
    if !(drift >= drift_threshold) || !(drift > 0.0) {
        return Err(DetectorError::InsufficientDrift {
            drift,
            threshold: drift_threshold,
        });
    }
    let ranges = component_ranges(curve);
    let i = ranges
        .iter()
        .position(|(lo, hi)| hi - lo >= drift_threshold / n as f64)
        .ok_or(DetectorError::InsufficientDrift {
            drift,
            threshold: drift_threshold,
        })?;
    let (lo, hi) = ranges[i];
    let mut interval = (lo, hi);
    let l = hi - lo;
    if k_used * k_used >= 2.0 / l {
        let half = 0.5 / (k_used * k_used);
        let mid = 0.5 * (lo + hi);
        interval = (mid - half, mid + half);
    }
    let (p, q) = resonance::rational_in_interval(interval.0, interval.1, k_used)?;
    let target = p as f64 / q as f64;

    let (t_star, omega_star) = locate_crossing(curve, i, target).ok_or(DetectorError::InsufficientDrift {
        drift,
        threshold: drift_threshold,
    })?;
    let j = (0..n)
        .filter(|&j| j != i)
        .max_by(|&a, &b| omega_star[a].abs().total_cmp(&omega_star[b].abs()).then(b.cmp(&a)))
        .expect("n ≥ 2");
    let mut k2 = vec![0i64; n];
    k2[i] = q as i64;
    k2[j] = -(omega_star[j].signum() as i64) * p;
    let k2 = IntVector::new(k2);

    let nearest = classifier.classify(&omega_star);
    let k1 = match nearest.label.witness() {
        Some(k) => k.clone(),
        None => return Err(DetectorError::NotInZone { t: t_star, k_cap: k_used }),
    };
    let module = lattice::saturate(&[k1.clone(), k2.clone()]).map_err(|e| match e {
        LatticeError::RankDeficient => DetectorError::DependentModes(k1.clone(), k2.clone()),
        other => other.into(),
    })?;
    let (omega_bar, distance) = project_to_double_resonance(&omega_star, &k1, &k2)?;
    let norm = omega_star.iter().map(|x| x * x).sum::<f64>().sqrt();
    let k2_residual = k2.dot_real(&omega_star).abs() / (k2.euclidean_norm() * norm);
    Ok(DoubleResonanceWitness {
        t_star,
        distance_k1: hyperplane_distance(
            &omega_star,
            &k1.entries().iter().map(|&x| x as f64).collect::<Vec<_>>(),
            k1.euclidean_norm(),
        ),
        omega_star,
        k1,
        k2,
        module,
        distance,
        omega_bar,
        k2_residual,
        p,
        q,
        i,
        j,
        interval,
        k_used,
        delta,
        drift_threshold,
        direction_drift: drift,
    })
}

/// First time at which the normalized `i`-th component of the interpolated
/// curve equals `target`, by bisection inside the bracketing segment.
fn locate_crossing(curve: &FrequencyCurve, i: usize, target: f64) -> Option<(f64, Vec<f64>)> {
    let g = |w: &[f64]| w[i] / sup_norm(w) - target;
    for s in 0..curve.len() {
        let gs = g(&curve.omegas[s]);
        if gs == 0.0 {
            return Some((curve.times[s], curve.omegas[s].clone()));
        }
        if s + 1 == curve.len() {
            break;
        }
        let gn = g(&curve.omegas[s + 1]);
        if gs.signum() == gn.signum() && gn != 0.0 {
            continue;
        }
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut ga = gs;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let (_, w) = curve.interpolate(s, m);
            let gm = g(&w);
            if gm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if gm.signum() == ga.signum() {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        // pick the endpoint with the smaller residual
        let (ta, wa) = curve.interpolate(s, a);
        let (tb, wb) = curve.interpolate(s, b);
        return Some(if g(&wa).abs() <= g(&wb).abs() { (ta, wa) } else { (tb, wb) });
    }
    None
}
