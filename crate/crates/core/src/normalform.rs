//! One explicit averaging step: Fourier truncation `T_K`, resonant
//! projection `P_Λ`, the homological equation and the Lie transform
//! `H ∘ Φ = H + {H, χ} + ½{{H, χ}, χ} + …`.
//!
//! Series are complex exponential sums `Σ c_k(I) e^{i k·θ}`. Coefficients
//! live in a class closed under products and `I`-derivatives: sums of
//! polynomial numerators over products of small divisors `(k·ω(I))^p`, with
//! `ω(I) = A·I + b` affine. Divisors are kept symbolic and evaluated lazily.
//!
//! Poisson bracket convention: `{F, G} = ∂θF·∂I G − ∂I F·∂θG`, so that
//! `d/dt (F ∘ φ_t) = {F, χ} ∘ φ_t` along the flow `θ' = ∂I χ, I' = −∂θ χ`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::lattice::{IntVector, ResonanceModule};
use crate::models::{IntegrableModel, Perturbation};
use crate::ode;
use crate::poly::Polynomial;

pub const DEFAULT_DEGREE_CAP: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalFormError {
    #[error("small divisor: |k·ω(I)| = {value} ≤ α = {alpha} for k = {mode} at I = {action:?}")]
    SmallDivisor {
        mode: IntVector,
        action: Vec<f64>,
        value: f64,
        alpha: f64,
    },
    #[error("coefficient degree {required} exceeds the cap {cap}; rerun with a cap of at least {required}")]
    DegreeCap { required: usize, cap: usize },
    #[error("Lie transform order must be 1 or 2, got {0}")]
    Order(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, NormalFormError>;

/// Product of divisor powers `Π (k·ω(I))^{-p}`, modes in canonical sign.
type Divisors = Vec<(IntVector, u32)>;

fn merge_divisors(a: &Divisors, b: &Divisors) -> Divisors {
    let mut map: BTreeMap<IntVector, u32> = a.iter().cloned().collect();
    for (k, p) in b {
        *map.entry(k.clone()).or_insert(0) += p;
    }
    map.into_iter().collect()
}

/// A coefficient function `Σ_D N_D(I) / D(I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffFn {
    vars: usize,
    parts: BTreeMap<Divisors, Polynomial<Complex64>>,
}

impl CoeffFn {
    pub fn zero(vars: usize) -> Self {
        CoeffFn {
            vars,
            parts: BTreeMap::new(),
        }
    }

    pub fn polynomial(p: Polynomial<Complex64>) -> Self {
        let mut c = Self::zero(p.vars());
        c.insert(Vec::new(), p);
        c
    }

    /// `(k·ω(I))^{-1}`.
    pub fn inverse_divisor(k: &IntVector) -> Self {
        let n = k.dim();
        let canon = k.canonical_sign();
        let sign = if canon == *k { 1.0 } else { -1.0 };
        let mut c = Self::zero(n);
        c.insert(vec![(canon, 1)], Polynomial::constant(n, Complex64::new(sign, 0.0)));
        c
    }

    fn insert(&mut self, key: Divisors, p: Polynomial<Complex64>) {
        if p.is_zero() {
            return;
        }
        let sum = match self.parts.remove(&key) {
            Some(q) => q.add(&p),
            None => p,
        };
        if !sum.is_zero() {
            self.parts.insert(key, sum);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    /// Largest numerator degree.
    pub fn degree(&self) -> usize {
        self.parts.values().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, p) in &other.parts {
            out.insert(k.clone(), p.clone());
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::zero(self.vars);
        for (k, p) in &self.parts {
            out.insert(k.clone(), p.scale(s));
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.vars);
        for (ka, pa) in &self.parts {
            for (kb, pb) in &other.parts {
                out.insert(merge_divisors(ka, kb), pa.mul(pb));
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = Self::zero(self.vars);
        for (k, p) in &self.parts {
            out.insert(k.clone(), p.map(|c| c.conj()));
        }
        out
    }

    /// `∂/∂I_j`, using `∂(k·ω)/∂I_j = (Aᵀk)_j`.
    pub fn partial(&self, j: usize, model: &IntegrableModel) -> Self {
        let mut out = Self::zero(self.vars);
        for (key, num) in &self.parts {
            out.insert(key.clone(), num.partial(j));
            for (idx, (k, p)) in key.iter().enumerate() {
                let (_, lin) = model.divisor_form(k);
                if lin[j] == 0.0 {
                    continue;
                }
                let mut bumped = key.clone();
                bumped[idx].1 += 1;
                let factor = Complex64::new(-(*p as f64) * lin[j], 0.0);
                out.insert(bumped, num.scale(factor));
            }
        }
        out
    }

    pub fn eval(&self, actions: &[f64], model: &IntegrableModel) -> Complex64 {
        let omega = model.frequency(actions);
        self.parts
            .iter()
            .map(|(key, num)| {
                let denom: f64 = key
                    .iter()
                    .map(|(k, p)| k.dot_real(&omega.0).powi(*p as i32))
                    .product();
                num.eval(actions) / denom
            })
            .sum()
    }
}

/// `Σ_k c_k(I) e^{i k·θ}` with finitely many modes.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierPolynomial {
    dim: usize,
    terms: BTreeMap<IntVector, CoeffFn>,
}

impl FourierPolynomial {
    pub fn zero(dim: usize) -> Self {
        FourierPolynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&IntVector, &CoeffFn)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, k: &IntVector) -> Option<&CoeffFn> {
        self.terms.get(k)
    }

    pub fn modes(&self) -> impl Iterator<Item = &IntVector> {
        self.terms.keys()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn insert(&mut self, k: IntVector, c: CoeffFn) {
        if c.is_zero() {
            return;
        }
        let sum = match self.terms.remove(&k) {
            Some(old) => old.add(&c),
            None => c,
        };
        if !sum.is_zero() {
            self.terms.insert(k, sum);
        }
    }

    /// `c cos(k·θ + φ) = (c/2)(e^{iφ} e^{ik·θ} + e^{−iφ} e^{−ik·θ})`.
    pub fn from_perturbation(f: &Perturbation) -> Self {
        let n = f.dim();
        let mut out = Self::zero(n);
        for t in f.terms() {
            let c = t.coefficient.to_complex();
            if t.mode.is_zero() {
                out.insert(t.mode.clone(), CoeffFn::polynomial(c.scale(Complex64::new(t.phase.cos(), 0.0))));
                continue;
            }
            let half = Complex64::from_polar(0.5, t.phase);
            out.insert(t.mode.clone(), CoeffFn::polynomial(c.scale(half)));
            out.insert(t.mode.neg(), CoeffFn::polynomial(c.scale(half.conj())));
        }
        out
    }

    /// `h(I)` as a mode-zero series.
    pub fn from_integrable(h: &IntegrableModel) -> Self {
        let n = h.dim();
        let mut p = Polynomial::<Complex64>::zero(n);
        for i in 0..n {
            for j in 0..n {
                let mut e = vec![0u8; n];
                e[i] += 1;
                e[j] += 1;
                p = p.add(&Polynomial::from_terms(n, [(e, Complex64::new(0.5 * h.a(i, j), 0.0))]));
            }
            p = p.add(&Polynomial::variable(n, i).scale(Complex64::new(h.b()[i], 0.0)));
        }
        let mut out = Self::zero(n);
        out.insert(IntVector::zeros(n), CoeffFn::polynomial(p));
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.insert(k.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, c) in &self.terms {
            out.insert(k.clone(), c.scale(s));
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.dim);
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                let k = ka.checked_add(kb).expect("mode overflow");
                out.insert(k, ca.mul(cb));
            }
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&IntVector) -> bool) -> Self {
        FourierPolynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, c)| (k.clone(), c.clone()))
                .collect(),
        }
    }

    /// `∂/∂θ_j`: multiplies `c_k` by `i k_j`.
    pub fn partial_theta(&self, j: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, c) in &self.terms {
            let kj = k.entries()[j];
            if kj != 0 {
                out.insert(k.clone(), c.scale(Complex64::new(0.0, kj as f64)));
            }
        }
        out
    }

    pub fn partial_action(&self, j: usize, model: &IntegrableModel) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, c) in &self.terms {
            out.insert(k.clone(), c.partial(j, model));
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        self.terms.values().map(CoeffFn::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, theta: &[f64], actions: &[f64], model: &IntegrableModel) -> Complex64 {
        self.terms
            .iter()
            .map(|(k, c)| c.eval(actions, model) * Complex64::from_polar(1.0, k.dot_real(theta)))
            .sum()
    }

    /// Largest `|c_k(I)|` over non-zero modes at the given action.
    pub fn max_coefficient(&self, actions: &[f64], model: &IntegrableModel) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| !k.is_zero())
            .map(|(_, c)| c.eval(actions, model).norm())
            .fold(0.0, f64::max)
    }

    /// Structural reality check: `c_{−k} = conj(c_k)` for every mode.
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|(k, c)| match self.terms.get(&k.neg()) {
            Some(other) => {
                let (conj, other) = (c.conj(), other.clone());
                // compare coefficient-wise with a relative tolerance
                conj.parts.len() == other.parts.len()
                    && conj.parts.iter().all(|(key, p)| {
                        other.parts.get(key).is_some_and(|q| {
                            let tol = 1e-12 * (1.0 + p.majorant(1.0));
                            let d = p.sub(q);
                            let ok = d.terms().all(|(_, x)| x.norm() <= tol);
                            ok
                        })
                    })
            }
            None => false,
        })
    }
}

/// `T_K φ`: keeps modes with `|k|₁ ≤ K`.
pub fn truncate(phi: &FourierPolynomial, k_bound: f64) -> FourierPolynomial {
    phi.filter(|k| (k.l1_norm() as f64) <= k_bound)
}

/// `P_Λ φ`: keeps modes in `Λ`; `None` is the trivial module (θ-average).
pub fn project(phi: &FourierPolynomial, module: Option<&ResonanceModule>) -> FourierPolynomial {
    phi.filter(|k| in_module(k, module))
}

fn in_module(k: &IntVector, module: Option<&ResonanceModule>) -> bool {
    match module {
        None => k.is_zero(),
        Some(m) => m.contains(k),
    }
}

/// `{F, G} = Σ_j ∂θ_j F ∂I_j G − ∂I_j F ∂θ_j G`.
pub fn poisson_bracket(
    f: &FourierPolynomial,
    g: &FourierPolynomial,
    model: &IntegrableModel,
) -> FourierPolynomial {
    let mut out = FourierPolynomial::zero(f.dim());
    for j in 0..f.dim() {
        let a = f.partial_theta(j).mul(&g.partial_action(j, model));
        let b = f.partial_action(j, model).mul(&g.partial_theta(j));
        out = out.add(&a).sub(&b);
    }
    out
}

/// First-order generator `χ` together with the data it was built from.
#[derive(Clone, Debug)]
pub struct GeneratingFunction {
    pub series: FourierPolynomial,
    pub k_bound: f64,
    pub alpha: f64,
    pub module: Option<ResonanceModule>,
}

impl GeneratingFunction {
    /// The part of `f` that `χ` removes: `T_K f − P_Λ T_K f`.
    pub fn removed_part(&self, f: &FourierPolynomial) -> FourierPolynomial {
        truncate(f, self.k_bound).filter(|k| !in_module(k, self.module.as_ref()))
    }
}

/// Solves `{h, χ} + (T_K f − P_Λ T_K f) = 0`, i.e. `χ_k = f_k / (i k·ω(I))`
/// for the retained non-resonant modes, after checking `|k·ω(I)| > α` at
/// every sample action.
pub fn solve_homological(
    f: &FourierPolynomial,
    model: &IntegrableModel,
    module: Option<&ResonanceModule>,
    k_bound: f64,
    alpha: f64,
    samples: &[Vec<f64>],
) -> Result<GeneratingFunction> {
    if f.dim() != model.dim() {
        return Err(NormalFormError::Dimension {
            expected: model.dim(),
            got: f.dim(),
        });
    }
    let mut chi = FourierPolynomial::zero(f.dim());
    let minus_i = Complex64::new(0.0, -1.0);
    for (k, c) in truncate(f, k_bound).terms() {
        if in_module(k, module) {
            continue;
        }
        for s in samples {
            let value = k.dot_real(&model.frequency(s).0);
            if !(value.abs() > alpha) {
                return Err(NormalFormError::SmallDivisor {
                    mode: k.clone(),
                    action: s.clone(),
                    value: value.abs(),
                    alpha,
                });
            }
        }
        chi.insert(k.clone(), c.mul(&CoeffFn::inverse_divisor(k)).scale(minus_i));
    }
    Ok(GeneratingFunction {
        series: chi,
        k_bound,
        alpha,
        module: module.cloned(),
    })
}

/// `h + g + remainder` after one Lie step.
#[derive(Clone, Debug)]
pub struct TransformedHamiltonian {
    pub integrable: IntegrableModel,
    /// `P_Λ` part of the transformed perturbation.
    pub normal: FourierPolynomial,
    /// Everything outside `Λ`.
    pub remainder: FourierPolynomial,
    pub order: usize,
    pub chi: GeneratingFunction,
}

impl TransformedHamiltonian {
    pub fn energy(&self, theta: &[f64], actions: &[f64]) -> f64 {
        self.integrable.energy(actions)
            + (self.normal.eval(theta, actions, &self.integrable)
                + self.remainder.eval(theta, actions, &self.integrable))
            .re
    }
}

fn check_cap(series: &FourierPolynomial, cap: usize) -> Result<()> {
    let d = series.max_degree();
    if d > cap {
        return Err(NormalFormError::DegreeCap { required: d, cap });
    }
    Ok(())
}

/// Lie transform of `H = h + f` by the time-one flow of `χ`, to `order` 1 or 2.
///
/// `{h, χ}` is replaced by `−(T_K f − P_Λ T_K f)`, which holds identically
/// for a solution of the homological equation; every other bracket is
/// computed in the coefficient class. Numerator degrees above `degree_cap`
/// are an error.
pub fn lie_transform(
    h: &IntegrableModel,
    f: &FourierPolynomial,
    chi: &GeneratingFunction,
    order: usize,
    degree_cap: usize,
) -> Result<TransformedHamiltonian> {
    if !(1..=2).contains(&order) {
        return Err(NormalFormError::Order(order));
    }
    let removed = chi.removed_part(f);
    let f_chi = poisson_bracket(f, &chi.series, h);
    check_cap(&f_chi, degree_cap)?;
    // {H, χ} = −removed + {f, χ}
    let first = f_chi.sub(&removed);
    let mut total = f.add(&first);
    if order == 2 {
        let second = poisson_bracket(&first, &chi.series, h);
        check_cap(&second, degree_cap)?;
        total = total.add(&second.scale(Complex64::new(0.5, 0.0)));
    }
    check_cap(&total, degree_cap)?;
    let module = chi.module.as_ref();
    Ok(TransformedHamiltonian {
        integrable: h.clone(),
        normal: project(&total, module),
        remainder: total.filter(|k| !in_module(k, module)),
        order,
        chi: chi.clone(),
    })
}

/// Time-one map of the Hamiltonian flow of `Re χ`, computed by adaptive
/// Runge–Kutta.
pub struct ChiFlow<'a> {
    model: &'a IntegrableModel,
    d_theta: Vec<FourierPolynomial>,
    d_action: Vec<FourierPolynomial>,
}

impl<'a> ChiFlow<'a> {
    pub fn new(chi: &GeneratingFunction, model: &'a IntegrableModel) -> Self {
        let n = model.dim();
        ChiFlow {
            model,
            d_theta: (0..n).map(|j| chi.series.partial_theta(j)).collect(),
            d_action: (0..n).map(|j| chi.series.partial_action(j, model)).collect(),
        }
    }

    pub fn map(&self, theta: &[f64], actions: &[f64], time: f64) -> (Vec<f64>, Vec<f64>) {
        let n = theta.len();
        let mut y0 = theta.to_vec();
        y0.extend_from_slice(actions);
        let y = ode::integrate(
            |y, out| {
                let (th, ac) = y.split_at(n);
                for j in 0..n {
                    out[j] = self.d_action[j].eval(th, ac, self.model).re;
                    out[n + j] = -self.d_theta[j].eval(th, ac, self.model).re;
                }
            },
            &y0,
            time,
            1e-13,
            1e-15,
        );
        (y[..n].to_vec(), y[n..].to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RemainderMeasurement {
    pub nonresonant_sup: f64,
    pub coordinate_shift_sup: f64,
}

/// Sup over `(θ, I)` grid points of the non-normal-form part and of the
/// action displacement `|Π_I Φ − I|` of the χ-flow.
pub fn measure_remainder(
    transformed: &TransformedHamiltonian,
    grid: &[(Vec<f64>, Vec<f64>)],
) -> RemainderMeasurement {
    let model = &transformed.integrable;
    let flow = ChiFlow::new(&transformed.chi, model);
    let mut out = RemainderMeasurement {
        nonresonant_sup: 0.0,
        coordinate_shift_sup: 0.0,
    };
    for (theta, actions) in grid {
        let r = transformed.remainder.eval(theta, actions, model).norm();
        out.nonresonant_sup = out.nonresonant_sup.max(r);
        if !transformed.chi.series.is_zero() {
            let (_, moved) = flow.map(theta, actions, 1.0);
            let shift = moved
                .iter()
                .zip(actions)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            out.coordinate_shift_sup = out.coordinate_shift_sup.max(shift);
        }
    }
    out
}
