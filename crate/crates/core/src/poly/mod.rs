//! Multivariate polynomial arithmetic in graded-lex canonical form.

mod monomial;
mod polynomial;
mod vector;

pub use monomial::{monomial_basis, Monomial};
pub use polynomial::Polynomial;
pub use vector::PolynomialVector;
