//! Integrable Hamiltonians `h(I) = ½ I·A·I + b·I`, trigonometric
//! perturbations `f(θ, I) = Σ c_k(I) cos(k·θ + φ_k)` and the standing
//! convexity assumptions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::IntVector;
use crate::poly::Polynomial;
use crate::resonance::Frequency;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix A must be square {n}×{n} and symmetric")]
    NotSymmetric { n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("perturbation mode {0} appears twice (up to sign)")]
    DuplicateMode(IntVector),
    #[error("coefficient of mode {mode} has degree {degree} > 2")]
    CoefficientDegree { mode: IntVector, degree: usize },
    #[error("convexity parameters invalid: {0}")]
    Convexity(String),
    #[error("empty sample region")]
    EmptyRegion,
    #[error("non-finite value in model input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrableModel {
    n: usize,
    /// row-major n×n
    a: Vec<f64>,
    b: Vec<f64>,
}

impl IntegrableModel {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(ModelError::NotSymmetric { n });
        }
        for i in 0..n {
            for j in 0..n {
                if !a[i][j].is_finite() {
                    return Err(ModelError::NonFinite);
                }
                if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                    return Err(ModelError::NotSymmetric { n });
                }
            }
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(IntegrableModel {
            n,
            a: a.into_iter().flatten().collect(),
            b,
        })
    }

    /// `h(I) = ½‖I‖²`.
    pub fn identity(n: usize) -> Self {
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(a, vec![0.0; n]).expect("identity is symmetric")
    }

    pub fn diagonal(d: &[f64], b: Vec<f64>) -> Result<Self> {
        let n = d.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
            .collect();
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn energy(&self, actions: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let ai: f64 = row.iter().zip(actions).map(|(x, y)| x * y).sum();
            quad += actions[i] * ai;
        }
        0.5 * quad + self.b.iter().zip(actions).map(|(x, y)| x * y).sum::<f64>()
    }

    /// `ω(I) = A·I + b` written into `out`.
    pub fn frequency_into(&self, actions: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            out[i] = self.b[i] + row.iter().zip(actions).map(|(x, y)| x * y).sum::<f64>();
        }
    }

    pub fn frequency(&self, actions: &[f64]) -> Frequency {
        let mut out = vec![0.0; self.n];
        self.frequency_into(actions, &mut out);
        Frequency(out)
    }

    /// Coefficients of the affine form `k·ω(I) = k·b + (Aᵀk)·I`.
    pub fn divisor_form(&self, k: &IntVector) -> (f64, Vec<f64>) {
        let c = k.dot_real(&self.b);
        let lin = (0..self.n)
            .map(|j| (0..self.n).map(|i| k.entries()[i] as f64 * self.a(i, j)).sum())
            .collect();
        (c, lin)
    }

    /// `max(sup_{‖I‖ ≤ R} ‖∇h‖, ‖∇²h‖)` in operator norm.
    pub fn derivative_bound(&self, radius: f64) -> f64 {
        let spectral = self
            .hessian()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let b_norm = self.b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (spectral * radius + b_norm).max(spectral)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTerm {
    pub mode: IntVector,
    pub coefficient: Polynomial<f64>,
    pub phase: f64,
    mode_real: Vec<f64>,
}

impl PerturbationTerm {
    pub fn new(mode: IntVector, coefficient: Polynomial<f64>, phase: f64) -> Self {
        let mode_real = mode.entries().iter().map(|&x| x as f64).collect();
        PerturbationTerm {
            mode,
            coefficient,
            phase,
            mode_real,
        }
    }

    /// Term `amplitude · cos(k·θ + φ)` with constant amplitude.
    pub fn cosine(mode: IntVector, amplitude: f64, phase: f64) -> Self {
        let n = mode.dim();
        Self::new(mode, Polynomial::constant(n, amplitude), phase)
    }

    pub fn angle(&self, theta: &[f64]) -> f64 {
        self.mode_real.iter().zip(theta).map(|(k, t)| k * t).sum::<f64>() + self.phase
    }

    pub fn mode_real(&self) -> &[f64] {
        &self.mode_real
    }
}

/// Finite trigonometric polynomial in `θ` with polynomial-in-`I`
/// coefficients of degree at most two.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    n: usize,
    terms: Vec<PerturbationTerm>,
}

impl Perturbation {
    pub fn zero(n: usize) -> Self {
        Perturbation { n, terms: Vec::new() }
    }

    pub fn new(n: usize, terms: Vec<PerturbationTerm>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &terms {
            if t.mode.dim() != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    got: t.mode.dim(),
                });
            }
            if t.coefficient.vars() != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    got: t.coefficient.vars(),
                });
            }
            if t.coefficient.degree() > 2 {
                return Err(ModelError::CoefficientDegree {
                    mode: t.mode.clone(),
                    degree: t.coefficient.degree(),
                });
            }
            if !t.phase.is_finite() {
                return Err(ModelError::NonFinite);
            }
            if !seen.insert(t.mode.canonical_sign()) {
                return Err(ModelError::DuplicateMode(t.mode.clone()));
            }
        }
        Ok(Perturbation { n, terms })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[PerturbationTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient.is_zero())
    }

    /// True when every coefficient is independent of `I`.
    pub fn is_angle_only(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient.degree() == 0)
    }

    pub fn scaled(&self, s: f64) -> Perturbation {
        Perturbation {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| PerturbationTerm::new(t.mode.clone(), t.coefficient.scale(s), t.phase))
                .collect(),
        }
    }

    pub fn eval(&self, theta: &[f64], actions: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coefficient.eval(actions) * t.angle(theta).cos())
            .sum()
    }

    /// `∂f/∂θ` accumulated into `out` (overwritten).
    pub fn grad_theta_into(&self, theta: &[f64], actions: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for t in &self.terms {
            let c = t.coefficient.eval(actions);
            let s = -c * t.angle(theta).sin();
            for (o, k) in out.iter_mut().zip(t.mode_real()) {
                *o += s * k;
            }
        }
    }

    /// `∂f/∂I` written into `out` (overwritten).
    pub fn grad_actions_into(&self, theta: &[f64], actions: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for t in &self.terms {
            if t.coefficient.degree() == 0 {
                continue;
            }
            let cos = t.angle(theta).cos();
            for (j, o) in out.iter_mut().enumerate() {
                *o += t.coefficient.partial(j).eval(actions) * cos;
            }
        }
    }

    /// `(∂θ f, ∂I f)`.
    pub fn gradient(&self, theta: &[f64], actions: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gt = vec![0.0; self.n];
        let mut gi = vec![0.0; self.n];
        self.grad_theta_into(theta, actions, &mut gt);
        self.grad_actions_into(theta, actions, &mut gi);
        (gt, gi)
    }

    /// Certified majorant of the analytic sup-norm on the complex
    /// neighbourhood of widths `(r, s)` around the real ball of radius
    /// `domain_radius`: `Σ_k |c_k|_{R+r} e^{|k|₁ s}`.
    pub fn sup_norm_bound(&self, r: f64, s: f64, domain_radius: f64) -> f64 {
        let rho = domain_radius + r;
        self.terms
            .iter()
            .map(|t| t.coefficient.majorant(rho) * (t.mode.l1_norm() as f64 * s).exp())
            .sum()
    }
}

/// `H(θ, I) = h(I) + f(θ, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSystem {
    pub integrable: IntegrableModel,
    pub perturbation: Perturbation,
}

impl HamiltonianSystem {
    pub fn new(integrable: IntegrableModel, perturbation: Perturbation) -> Result<Self> {
        if integrable.dim() != perturbation.dim() {
            return Err(ModelError::Dimension {
                expected: integrable.dim(),
                got: perturbation.dim(),
            });
        }
        Ok(HamiltonianSystem {
            integrable,
            perturbation,
        })
    }

    pub fn dim(&self) -> usize {
        self.integrable.dim()
    }

    pub fn energy(&self, theta: &[f64], actions: &[f64]) -> f64 {
        self.integrable.energy(actions) + self.perturbation.eval(theta, actions)
    }
}

/// The ensemble `(R, r0, s0, l, m, M)` of the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityParams {
    pub l: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub r0: f64,
    pub s0: f64,
}

impl ConvexityParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l, self.m, self.big_m, self.radius, self.r0, self.s0];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(ModelError::Convexity("all parameters must be positive".into()));
        }
        if self.m > self.big_m {
            return Err(ModelError::Convexity(format!("m = {} exceeds M = {}", self.m, self.big_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiConvexityReport {
    pub holds: bool,
    /// `min v·∇²h·v − m` over the samples and admissible unit `v`.
    pub worst_margin: f64,
    pub witness: Vec<f64>,
    pub worst_action: Vec<f64>,
}

/// Minimum of `v·A·v` over unit `v` with `|v·u| ≤ c`, `u` a unit vector.
///
/// Interior critical points are eigenvectors of `A`; on the boundary
/// `v·u = ±c` the problem reduces to a trust-region subproblem in `u⊥`,
/// solved through the eigendecomposition of the compressed matrix and a
/// monotone secular equation.
pub fn min_on_slab(a: &DMatrix<f64>, u: &DVector<f64>, c: f64) -> (f64, DVector<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut best = (f64::INFINITY, DVector::zeros(n));
    for i in 0..n {
        let e = eig.eigenvectors.column(i).into_owned();
        if e.dot(u).abs() <= c && eig.eigenvalues[i] < best.0 {
            best = (eig.eigenvalues[i], e);
        }
    }
    if c >= 1.0 {
        return best;
    }
    let q = orthonormal_complement(u);
    let compressed = q.transpose() * a * &q;
    let root = (1.0 - c * c).sqrt();
    let gamma = q.transpose() * (a * u) * (c / root);
    let (value, w) = trust_region_sphere(&compressed, &gamma);
    let total = c * c * u.dot(&(a * u)) + (1.0 - c * c) * value;
    if total < best.0 {
        let v = u * c + &q * w * root;
        best = (total, v);
    }
    best
}

/// Columns form an orthonormal basis of the complement of unit `u`.
fn orthonormal_complement(u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut basis: Vec<DVector<f64>> = vec![u.clone()];
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        let norm = e.norm();
        if norm > 1e-8 && basis.len() < n {
            basis.push(e / norm);
        }
    }
    DMatrix::from_columns(&basis[1..])
}

/// `min w·B·w + 2γ·w` subject to `‖w‖ = 1`.
fn trust_region_sphere(b: &DMatrix<f64>, gamma: &DVector<f64>) -> (f64, DVector<f64>) {
    let m = b.nrows();
    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let z: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let g: Vec<f64> = z.iter().map(|zi| zi.dot(gamma)).collect();
    let scale = 1.0 + mu.iter().fold(0.0f64, |a, x| a.max(x.abs())) + gamma.norm();
    let tol = 1e-12 * scale;
    let lowest = mu[0];
    let degenerate: Vec<usize> = (0..m).filter(|&i| mu[i] - lowest <= tol).collect();
    let objective = |w: &[f64]| -> f64 {
        (0..m).map(|i| mu[i] * w[i] * w[i] + 2.0 * g[i] * w[i]).sum()
    };
    let assemble = |w: &[f64]| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for i in 0..m {
            out += &z[i] * w[i];
        }
        out
    };

    if degenerate.iter().all(|&i| g[i].abs() <= tol) {
        // hard case: λ = μ₁ if the remaining components fit in the unit ball
        let mut w = vec![0.0; m];
        for i in 0..m {
            if !degenerate.contains(&i) {
                w[i] = -g[i] / (mu[i] - lowest);
            }
        }
        let norm_sq: f64 = w.iter().map(|x| x * x).sum();
        if norm_sq <= 1.0 {
            w[degenerate[0]] = (1.0 - norm_sq).sqrt();
            return (objective(&w), assemble(&w));
        }
    }
    let secular = |lambda: f64| -> f64 {
        (0..m)
            .map(|i| {
                let d = mu[i] - lambda;
                if d.abs() < f64::MIN_POSITIVE {
                    if g[i] == 0.0 { 0.0 } else { f64::INFINITY }
                } else {
                    (g[i] / d).powi(2)
                }
            })
            .sum()
    };
    let mut lo = lowest - gamma.norm() - 1.0;
    let mut hi = lowest;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if secular(mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = lo;
    let mut w: Vec<f64> = (0..m).map(|i| -g[i] / (mu[i] - lambda)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|x| *x /= norm);
    }
    (objective(&w), assemble(&w))
}

/// Samples the quasi-convexity condition: for each action `I`,
/// `v·∇²h·v ≥ m‖v‖²` whenever `|v·ω(I)| ≤ l‖v‖`, and `ω(I) ≠ 0`.
pub fn check_quasi_convex(
    model: &IntegrableModel,
    params: &ConvexityParams,
    samples: &[Vec<f64>],
) -> Result<QuasiConvexityReport> {
    params.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyRegion);
    }
    let a = model.hessian();
    let n = model.dim();
    let mut report = QuasiConvexityReport {
        holds: true,
        worst_margin: f64::INFINITY,
        witness: vec![0.0; n],
        worst_action: samples[0].clone(),
    };
    for sample in samples {
        if sample.len() != n {
            return Err(ModelError::Dimension {
                expected: n,
                got: sample.len(),
            });
        }
        let omega = DVector::from_vec(model.frequency(sample).0);
        let norm = omega.norm();
        if norm == 0.0 {
            report.holds = false;
            report.worst_action = sample.clone();
            report.worst_margin = f64::NEG_INFINITY;
            continue;
        }
        let (value, v) = min_on_slab(&a, &(omega / norm), params.l / norm);
        let margin = value - params.m;
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.witness = v.iter().copied().collect();
            report.worst_action = sample.clone();
        }
    }
    report.holds &= report.worst_margin >= 0.0;
    Ok(report)
}

/// Serializable model description (the `[model]` table of a config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convexity: Option<ConvexityParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub mode: Vec<i64>,
    #[serde(default)]
    pub phase: f64,
    pub coefficient: CoefficientSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Polynomial(Vec<MonomialSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialSpec {
    pub powers: Vec<u8>,
    pub value: f64,
}

impl ModelSpec {
    pub fn integrable(&self) -> Result<IntegrableModel> {
        IntegrableModel::new(self.a.clone(), self.b.clone())
    }

    /// Perturbation with unit amplitude scale; callers multiply by `ε`.
    pub fn perturbation(&self) -> Result<Perturbation> {
        let n = self.b.len();
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let coefficient = match &t.coefficient {
                    CoefficientSpec::Constant(c) => Polynomial::constant(n, *c),
                    CoefficientSpec::Polynomial(ms) => {
                        for m in ms {
                            if m.powers.len() != n {
                                return Err(ModelError::Dimension {
                                    expected: n,
                                    got: m.powers.len(),
                                });
                            }
                        }
                        Polynomial::from_terms(n, ms.iter().map(|m| (m.powers.clone(), m.value)))
                    }
                };
                Ok(PerturbationTerm::new(IntVector::new(t.mode.clone()), coefficient, t.phase))
            })
            .collect::<Result<Vec<_>>>()?;
        Perturbation::new(n, terms)
    }

    pub fn system(&self, epsilon: f64) -> Result<HamiltonianSystem> {
        HamiltonianSystem::new(self.integrable()?, self.perturbation()?.scaled(epsilon))
    }
}
