use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Polynomial;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Polynomial map `R^nvars -> R^len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolynomialVector<T: Scalar> {
    nvars: usize,
    components: Vec<Polynomial<T>>,
}

impl<T: Scalar> PolynomialVector<T> {
    pub fn new(nvars: usize, components: Vec<Polynomial<T>>) -> Result<Self> {
        if let Some(p) = components.iter().find(|p| p.nvars() != nvars) {
            return Err(Error::Dimension(format!("component in {} variables, map declared over {}", p.nvars(), nvars)));
        }
        Ok(Self { nvars, components })
    }

    /// Identity map on `R^n`.
    pub fn identity(n: usize) -> Self {
        Self { nvars: n, components: (0..n).map(|j| Polynomial::var(n, j)).collect() }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Polynomial<T>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Polynomial<T> {
        &self.components[i]
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn evaluate(&self, point: &[T]) -> Result<Vec<T>> {
        if point.len() != self.nvars {
            return Err(Error::Dimension(format!("point of length {} for map over {} variables", point.len(), self.nvars)));
        }
        Ok(self.components.iter().map(|p| p.eval(point)).collect())
    }

    /// Symbolic Jacobian: `jac[i][j] = d f_i / d x_j`.
    pub fn jacobian(&self) -> Vec<Vec<Polynomial<T>>> {
        self.components.iter().map(Polynomial::gradient).collect()
    }

    pub fn substitute_affine(&self, m: &DMatrix<T>, b: &DVector<T>) -> Result<Self> {
        let components = self.components.iter().map(|p| p.substitute_affine(m, b)).collect::<Result<Vec<_>>>()?;
        Ok(Self { nvars: m.ncols(), components })
    }

    pub fn truncate(&self, max_degree: u32) -> Self {
        Self { nvars: self.nvars, components: self.components.iter().map(|p| p.truncate(max_degree)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_of_van_der_pol() {
        let x1 = Polynomial::<f64>::var(2, 0);
        let x2 = Polynomial::<f64>::var(2, 1);
        // (x2, -x1 + (1 - x1^2) x2)
        let f2 = x1.neg().add(&Polynomial::one(2).sub(&x1.pow(2)).unwrap().mul(&x2).unwrap()).unwrap();
        let f = PolynomialVector::new(2, vec![x2.clone(), f2]).unwrap();
        assert_eq!(f.evaluate(&[2.0, 0.0]).unwrap(), vec![0.0, -2.0]);
        let j = f.jacobian();
        let at = |p: &Polynomial<f64>| p.eval(&[2.0, 1.0]);
        assert_eq!(at(&j[0][0]), 0.0);
        assert_eq!(at(&j[0][1]), 1.0);
        assert_eq!(at(&j[1][0]), -1.0 - 4.0);
        assert_eq!(at(&j[1][1]), -3.0);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let r = PolynomialVector::new(2, vec![Polynomial::<f64>::var(1, 0)]);
        assert!(r.is_err());
    }
}
