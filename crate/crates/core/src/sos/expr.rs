//! Polynomials whose coefficients are affine in decision variables.

use std::collections::BTreeMap;

use crate::poly::Monomial;
use crate::Poly;

/// `c + sum coeff * var`, variables indexed by program-level ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(id: usize, coeff: f64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(id, coeff);
        Self { constant: 0.0, terms }
    }

    pub fn is_fixed(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        self.constant += s * other.constant;
        for (&v, &c) in &other.terms {
            *self.terms.entry(v).or_insert(0.0) += s * c;
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&v, &c)| c * values[v]).sum::<f64>()
    }
}

/// Polynomial in `nvars` variables with [`LinExpr`] coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyExpr {
    nvars: usize,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl PolyExpr {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn from_poly(p: &Poly) -> Self {
        let mut out = Self::zero(p.nvars());
        for (m, &c) in p.terms() {
            out.terms.insert(m.clone(), LinExpr::constant(c));
        }
        out
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn is_fixed(&self) -> bool {
        self.terms.values().all(LinExpr::is_fixed)
    }

    pub fn add_term(&mut self, m: Monomial, e: &LinExpr, s: f64) {
        self.terms.entry(m).or_default().add_scaled(e, s);
    }

    pub fn add_scaled(&mut self, other: &PolyExpr, s: f64) {
        for (m, e) in &other.terms {
            self.add_term(m.clone(), e, s);
        }
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        let mut out = PolyExpr::zero(self.nvars);
        out.add_scaled(self, s);
        out
    }

    pub fn mul_poly(&self, p: &Poly) -> PolyExpr {
        let mut out = PolyExpr::zero(self.nvars);
        for (m1, e) in &self.terms {
            for (m2, &c) in p.terms() {
                out.add_term(m1.mul(m2), e, c);
            }
        }
        out
    }

    /// Product where at least one factor has no decision variables.
    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        if let Some(p) = other.to_fixed() {
            self.mul_poly(&p)
        } else if let Some(p) = self.to_fixed() {
            other.mul_poly(&p)
        } else {
            panic!("product of two variable polynomials is not affine");
        }
    }

    pub fn differentiate(&self, var: usize) -> PolyExpr {
        let mut out = PolyExpr::zero(self.nvars);
        for (m, e) in &self.terms {
            let k = m.exponents()[var];
            if k == 0 {
                continue;
            }
            let mut exps = m.exponents().to_vec();
            exps[var] -= 1;
            out.add_term(Monomial::new(exps), e, k as f64);
        }
        out
    }

    /// `x -> self(subs(x))` with fixed polynomial substitutions in `nvars_out` variables.
    pub fn compose(&self, subs: &[Poly], nvars_out: usize) -> PolyExpr {
        let mut out = PolyExpr::zero(nvars_out);
        for (m, e) in &self.terms {
            let mono = Poly::from_terms(self.nvars, [(m.exponents().to_vec(), 1.0)]).expect("matching arity");
            let img = mono.compose(subs, nvars_out);
            for (m2, &c) in img.terms() {
                out.add_term(m2.clone(), e, c);
            }
        }
        out
    }

    pub fn to_fixed(&self) -> Option<Poly> {
        if !self.is_fixed() {
            return None;
        }
        Some(self.eval(&[]))
    }

    /// Substitute decision values.
    pub fn eval(&self, values: &[f64]) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (m, e) in &self.terms {
            p.add_term(m.clone(), e.eval(values));
        }
        p
    }

    /// Degree of monomials whose coefficient is not identically zero.
    pub fn degree(&self) -> u32 {
        self.terms.iter().filter(|(_, e)| !e.is_fixed() || e.constant != 0.0).map(|(m, _)| m.degree()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_arithmetic() {
        let x = Poly::var(1, 0);
        let v = PolyExpr::from_poly(&x.pow(2)).mul_poly(&Poly::constant(1, 0.0));
        assert!(v.to_fixed().unwrap().is_zero());
        let mut a = PolyExpr::zero(1);
        a.add_term(Monomial::new(vec![2]), &LinExpr::var(0, 1.0), 1.0);
        let b = a.mul(&PolyExpr::from_poly(&x.add(&Poly::one(1)).unwrap()));
        let p = b.eval(&[3.0]);
        assert_eq!(p, x.pow(3).scale(3.0).add(&x.pow(2).scale(3.0)).unwrap());
        let d = b.differentiate(0).eval(&[1.0]);
        assert_eq!(d, x.pow(2).scale(3.0).add(&x.scale(2.0)).unwrap());
        let c = a.compose(&[x.scale(2.0)], 1).eval(&[1.0]);
        assert_eq!(c, x.pow(2).scale(4.0));
        assert_eq!(b.degree(), 3);
    }
}
