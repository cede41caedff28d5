use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Monomial;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse multivariate polynomial with real coefficients, kept in canonical
/// (graded-lex) order with no stored zero terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T: Scalar> {
    nvars: usize,
    terms: BTreeMap<Monomial, T>,
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, T::one())
    }

    /// The polynomial `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, var), T::one());
        p
    }

    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, T)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(Error::Dimension(format!("monomial has {} exponents, polynomial has {} variables", e.len(), nvars)));
            }
            p.add_term(Monomial::new(e), c);
        }
        Ok(p)
    }

    /// Affine form `c0 + sum_j coeffs[j] x_j`.
    pub fn linear(coeffs: &[T], c0: T) -> Self {
        let nvars = coeffs.len();
        let mut p = Self::constant(nvars, c0);
        for (j, &c) in coeffs.iter().enumerate() {
            p.add_term(Monomial::var(nvars, j), c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> T {
        self.terms.get(m).copied().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coeff(&Monomial::one(self.nvars))
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Lowest total degree among stored terms; `None` for the zero polynomial.
    pub fn min_degree(&self) -> Option<u32> {
        self.terms.keys().map(Monomial::degree).min()
    }

    pub fn max_abs_coeff(&self) -> T {
        self.terms.values().fold(T::zero(), |a, c| a.max(c.abs()))
    }

    /// Accumulate `c * m`, pruning the result if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: T) {
        debug_assert_eq!(m.nvars(), self.nvars);
        let entry = self.terms.entry(m).or_insert_with(T::zero);
        *entry += c;
        self.prune();
    }

    fn accumulate(&mut self, m: Monomial, c: T) {
        *self.terms.entry(m).or_insert_with(T::zero) += c;
    }

    fn prune(&mut self) {
        let eps = T::prune_threshold();
        self.terms.retain(|_, c| c.abs() >= eps);
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::Dimension(format!("polynomials in {} and {} variables", self.nvars, other.nvars)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.accumulate(m.clone(), c);
        }
        out.prune();
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.accumulate(m.clone(), -c);
        }
        out.prune();
        Ok(out)
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * s);
        }
        out.prune();
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = Self::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.accumulate(ma.mul(mb), ca * cb);
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::one(self.nvars);
        for _ in 0..k {
            out = out.mul(self).expect("same nvars");
        }
        out
    }

    /// Formal partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Self {
        assert!(var < self.nvars, "variable index out of range");
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.exponents()[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.exponents().to_vec();
            exps[var] -= 1;
            out.accumulate(Monomial::new(exps), c * T::from_u32(e).unwrap());
        }
        out.prune();
        out
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.nvars).map(|j| self.differentiate(j)).collect()
    }

    pub fn evaluate(&self, point: &[T]) -> Result<T> {
        if point.len() != self.nvars {
            return Err(Error::Dimension(format!("point of length {} for polynomial in {} variables", point.len(), self.nvars)));
        }
        Ok(self.eval(point))
    }

    /// Evaluation without the length check (callers guarantee the shape).
    pub fn eval(&self, point: &[T]) -> T {
        let maxd = self.degree() as usize;
        // powers[j][k] = x_j^k
        let powers: Vec<Vec<T>> = point
            .iter()
            .map(|&x| {
                let mut v = Vec::with_capacity(maxd + 1);
                let mut acc = T::one();
                for _ in 0..=maxd {
                    v.push(acc);
                    acc *= x;
                }
                v
            })
            .collect();
        let mut acc = T::zero();
        for (m, &c) in &self.terms {
            let mut t = c;
            for (j, &e) in m.exponents().iter().enumerate() {
                if e > 0 {
                    t *= powers[j][e as usize];
                }
            }
            acc += t;
        }
        acc
    }

    /// Returns the polynomial `y -> p(M y + b)` in `M.ncols()` variables.
    pub fn substitute_affine(&self, m: &DMatrix<T>, b: &DVector<T>) -> Result<Self> {
        if m.nrows() != self.nvars || b.len() != self.nvars {
            return Err(Error::Dimension(format!(
                "substitution of shape {}x{} (offset {}) into polynomial in {} variables",
                m.nrows(),
                m.ncols(),
                b.len(),
                self.nvars
            )));
        }
        let forms: Vec<Self> = (0..self.nvars)
            .map(|i| {
                let row: Vec<T> = (0..m.ncols()).map(|j| m[(i, j)]).collect();
                Self::linear(&row, b[i])
            })
            .collect();
        Ok(self.compose(&forms, m.ncols()))
    }

    /// Substitute each variable `x_i` by the polynomial `subs[i]` (all in `nvars_out` variables).
    pub fn compose(&self, subs: &[Self], nvars_out: usize) -> Self {
        assert_eq!(subs.len(), self.nvars);
        // cache[j][k] = subs[j]^k
        let mut cache: Vec<Vec<Self>> = vec![vec![Self::one(nvars_out)]; subs.len()];
        let mut out = Self::zero(nvars_out);
        for (mono, &c) in &self.terms {
            let mut t = Self::constant(nvars_out, c);
            for (j, &e) in mono.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while cache[j].len() <= e as usize {
                    let next = cache[j].last().unwrap().mul(&subs[j]).expect("same nvars");
                    cache[j].push(next);
                }
                t = t.mul(&cache[j][e as usize]).expect("same nvars");
            }
            for (m, &ct) in &t.terms {
                out.accumulate(m.clone(), ct);
            }
        }
        out.prune();
        out
    }

    /// Drop every term of total degree above `max_degree`.
    pub fn truncate(&self, max_degree: u32) -> Self {
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().filter(|(m, _)| m.degree() <= max_degree).map(|(m, c)| (m.clone(), *c)).collect(),
        }
    }

    /// Re-embed into a larger variable set: variable `j` maps to `map[j]`.
    pub fn embed(&self, nvars_out: usize, map: &[usize]) -> Self {
        assert_eq!(map.len(), self.nvars);
        let mut out = Self::zero(nvars_out);
        for (m, &c) in &self.terms {
            let mut exps = vec![0u32; nvars_out];
            for (j, &e) in m.exponents().iter().enumerate() {
                exps[map[j]] += e;
            }
            out.accumulate(Monomial::new(exps), c);
        }
        out.prune();
        out
    }

    pub fn map_coeffs<U: Scalar>(&self, f: impl Fn(T) -> U) -> Polynomial<U> {
        let mut out = Polynomial::<U>::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.accumulate(m.clone(), f(c));
        }
        out.prune();
        out
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr<T> {
    c: T,
    e: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr<T> {
    nvars: usize,
    terms: Vec<TermRepr<T>>,
}

impl<T: Scalar> Serialize for Polynomial<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr { nvars: self.nvars, terms: self.terms.iter().map(|(m, &c)| TermRepr { c, e: m.exponents().to_vec() }).collect() }
            .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Polynomial<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PolyRepr::<T>::deserialize(d)?;
        Polynomial::from_terms(repr.nvars, repr.terms.into_iter().map(|t| (t.e, t.c))).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = Polynomial<f64>;

    fn x() -> P {
        P::var(1, 0)
    }

    fn c1(c: f64) -> P {
        P::constant(1, c)
    }

    #[test]
    fn add_examples() {
        let a = x().pow(2);
        assert!(a.add(&a.neg()).unwrap().is_zero());
        let s = x().add(&c1(1.0)).unwrap().add(&x().sub(&c1(1.0)).unwrap()).unwrap();
        assert_eq!(s, x().scale(2.0));
        let x1 = P::var(2, 0);
        let x2 = P::var(2, 1);
        let p = x1.pow(2).add(&x2.scale(2.0)).unwrap();
        let q = p.add(&x2).unwrap();
        assert_eq!(q, x1.pow(2).add(&x2.scale(3.0)).unwrap());
    }

    #[test]
    fn mul_examples() {
        let a = x().add(&c1(1.0)).unwrap();
        let b = x().sub(&c1(1.0)).unwrap();
        let prod = a.mul(&b).unwrap();
        assert_eq!(prod, x().pow(2).sub(&c1(1.0)).unwrap());
        assert_eq!(a.mul(&c1(1.0)).unwrap(), a);
        let sq = prod.mul(&prod).unwrap();
        let expect = P::from_terms(1, vec![(vec![4], 1.0), (vec![2], -2.0), (vec![0], 1.0)]).unwrap();
        assert_eq!(sq, expect);
    }

    #[test]
    fn mismatch_is_an_error() {
        assert!(P::var(1, 0).add(&P::var(2, 0)).is_err());
        assert!(P::var(1, 0).mul(&P::var(2, 0)).is_err());
        assert!(P::var(2, 0).evaluate(&[1.0]).is_err());
    }

    #[test]
    fn differentiate_examples() {
        assert_eq!(x().pow(3).differentiate(0), x().pow(2).scale(3.0));
        assert!(P::var(2, 0).pow(2).differentiate(1).is_zero());
        let p = P::from_terms(1, vec![(vec![4], 1.0), (vec![2], -2.0), (vec![0], 1.0)]).unwrap();
        let expect = P::from_terms(1, vec![(vec![3], 4.0), (vec![1], -4.0)]).unwrap();
        assert_eq!(p.differentiate(0), expect);
    }

    #[test]
    fn substitute_examples() {
        let p = x().pow(2);
        let r = p.substitute_affine(&DMatrix::from_element(1, 1, 2.0), &DVector::from_element(1, 1.0)).unwrap();
        let expect = P::from_terms(1, vec![(vec![2], 4.0), (vec![1], 4.0), (vec![0], 1.0)]).unwrap();
        assert_eq!(r, expect);
        let id = x().substitute_affine(&DMatrix::identity(1, 1), &DVector::zeros(1)).unwrap();
        assert_eq!(id, x());
        let xy = P::var(2, 0).mul(&P::var(2, 1)).unwrap();
        let r = xy.substitute_affine(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), &DVector::zeros(2)).unwrap();
        assert_eq!(r, x().pow(2).neg());
        assert!(xy.substitute_affine(&DMatrix::identity(3, 1), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let x1 = P::var(2, 0);
        let x2 = P::var(2, 1);
        let p = x1.pow(2).add(&x2.scale(2.0)).unwrap();
        assert_eq!(p.evaluate(&[1.0, 1.0]).unwrap(), 3.0);
        let q = p.add(&P::constant(2, 7.5)).unwrap();
        assert_eq!(q.evaluate(&[0.0, 0.0]).unwrap(), 7.5);
        let r = P::from_terms(1, vec![(vec![4], 1.0), (vec![2], -2.0), (vec![0], 1.0)]).unwrap();
        assert_eq!(r.evaluate(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn tiny_coefficients_are_pruned() {
        let p = x().add(&x().scale(-1.0 + 1e-16)).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn json_encoding_is_canonical() {
        let p = P::from_terms(2, vec![(vec![0, 1], 2.0), (vec![2, 0], 1.0), (vec![0, 0], -1.0)]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"nvars":2,"terms":[{"c":-1.0,"e":[0,0]},{"c":2.0,"e":[0,1]},{"c":1.0,"e":[2,0]}]}"#);
        let back: P = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn generic_over_f32() {
        let p = Polynomial::<f32>::var(1, 0).pow(2);
        assert_eq!(p.evaluate(&[3.0]).unwrap(), 9.0f32);
    }
}
