//! Sparse multivariate polynomials in the actions `I`.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::Neg;

use num_complex::Complex64;
use num_traits::Num;

/// Scalar field for polynomial coefficients (`f64` or `Complex64`).
pub trait Coefficient:
    Copy + PartialEq + Debug + Num + Neg<Output = Self> + From<f64> + Send + Sync + 'static
{
    fn magnitude(self) -> f64;
}

impl Coefficient for f64 {
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Coefficient for Complex64 {
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Exponent vector of a monomial `I^e = Π I_j^{e_j}`.
pub type Exponents = Vec<u8>;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial<T: Coefficient = f64> {
    vars: usize,
    terms: BTreeMap<Exponents, T>,
}

impl<T: Coefficient> Polynomial<T> {
    pub fn zero(vars: usize) -> Self {
        Polynomial {
            vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: usize, c: T) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(vec![0; vars], c);
        p
    }

    /// The coordinate function `I_j`.
    pub fn variable(vars: usize, j: usize) -> Self {
        let mut e = vec![0; vars];
        e[j] = 1;
        let mut p = Self::zero(vars);
        p.add_term(e, T::one());
        p
    }

    /// `c + Σ_j a_j I_j`.
    pub fn affine(c: T, linear: &[T]) -> Self {
        let vars = linear.len();
        let mut p = Self::constant(vars, c);
        for (j, &a) in linear.iter().enumerate() {
            p = p.add(&Self::variable(vars, j).scale(a));
        }
        p
    }

    pub fn from_terms(vars: usize, terms: impl IntoIterator<Item = (Exponents, T)>) -> Self {
        let mut p = Self::zero(vars);
        for (e, c) in terms {
            assert_eq!(e.len(), vars, "exponent length");
            p.add_term(e, c);
        }
        p
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &T)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `0` for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&x| x as usize).sum())
            .max()
            .unwrap_or(0)
    }

    /// The constant coefficient if the polynomial has degree zero.
    pub fn as_constant(&self) -> Option<T> {
        match self.terms.len() {
            0 => Some(T::zero()),
            1 => self
                .terms
                .iter()
                .next()
                .filter(|(e, _)| e.iter().all(|&x| x == 0))
                .map(|(_, &c)| c),
            _ => None,
        }
    }

    fn add_term(&mut self, e: Exponents, c: T) {
        if c == T::zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(e) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == T::zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self::zero(self.vars);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.vars);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// `∂/∂I_j`.
    pub fn partial(&self, j: usize) -> Self {
        let mut out = Self::zero(self.vars);
        for (e, &c) in &self.terms {
            if e[j] > 0 {
                let mut d = e.clone();
                d[j] -= 1;
                out.add_term(d, c * T::from(e[j] as f64));
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> T {
        self.terms.iter().fold(T::zero(), |acc, (e, &c)| {
            let m: f64 = e.iter().zip(x).map(|(&p, &xi)| xi.powi(p as i32)).product();
            acc + c * T::from(m)
        })
    }

    /// `Σ |c_e| ρ^{|e|}`, a bound for `|p|` on the polydisc of radius `ρ`.
    pub fn majorant(&self, rho: f64) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c.magnitude() * rho.powi(e.iter().map(|&x| x as i32).sum()))
            .sum()
    }

    pub fn map<U: Coefficient>(&self, f: impl Fn(T) -> U) -> Polynomial<U> {
        let mut out = Polynomial::zero(self.vars);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), f(c));
        }
        out
    }
}

impl Polynomial<f64> {
    pub fn to_complex(&self) -> Polynomial<Complex64> {
        self.map(|c| Complex64::new(c, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_derivatives() {
        // p = 1 + 2 I0 + I0 I1
        let p = Polynomial::<f64>::from_terms(2, [(vec![0, 0], 1.0), (vec![1, 0], 2.0), (vec![1, 1], 1.0)]);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.eval(&[2.0, 3.0]), 1.0 + 4.0 + 6.0);
        assert_eq!(p.partial(0).eval(&[2.0, 3.0]), 2.0 + 3.0);
        assert_eq!(p.partial(1).eval(&[2.0, 3.0]), 2.0);
        let q = p.mul(&p);
        assert_eq!(q.eval(&[2.0, 3.0]), 121.0);
        assert!(p.sub(&p).is_zero());
        assert_eq!(p.majorant(1.0), 4.0);
    }

    #[test]
    fn constants() {
        let c = Polynomial::<f64>::constant(3, 2.5);
        assert_eq!(c.as_constant(), Some(2.5));
        assert_eq!(Polynomial::<f64>::zero(3).as_constant(), Some(0.0));
        assert_eq!(Polynomial::<f64>::variable(3, 1).as_constant(), None);
    }
}
