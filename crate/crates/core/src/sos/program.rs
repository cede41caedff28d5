//! Gram-matrix relaxation of sum-of-squares constraints into an SDP.

use nalgebra::DMatrix;

use super::expr::{LinExpr, PolyExpr};
use crate::error::{Error, Result};
use crate::poly::{monomial_basis, Monomial};
use crate::sdp::{solve_sdp, SdpOptions, SdpProblem, SdpStatus, Var};
use crate::Poly;

/// Margin below which a maximized Gram margin still counts as feasible.
pub const MARGIN_TOL: f64 = 1e-8;

/// Relative size below which fixed target coefficients are treated as zero.
const CHOP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SosConstraint {
    pub label: String,
    pub target: PolyExpr,
    pub basis: Vec<Monomial>,
    block: usize,
    margin: bool,
}

#[derive(Debug, Clone)]
pub struct SosProgram {
    nvars: usize,
    sdp: SdpProblem,
    vars: Vec<Var>,
    constraints: Vec<SosConstraint>,
    margin: Option<usize>,
    objective: LinExpr,
}

fn half_up(d: u32) -> u32 {
    d.div_ceil(2)
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        Self { nvars, sdp: SdpProblem::new(), vars: Vec::new(), constraints: Vec::new(), margin: None, objective: LinExpr::default() }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constraints(&self) -> &[SosConstraint] {
        &self.constraints
    }

    pub fn free(&mut self) -> usize {
        let i = self.sdp.add_free(1);
        self.vars.push(Var::Free(i));
        self.vars.len() - 1
    }

    /// Polynomial with free coefficients on the given monomials.
    pub fn free_poly(&mut self, monos: &[Monomial]) -> PolyExpr {
        let mut p = PolyExpr::zero(self.nvars);
        for m in monos {
            let v = self.free();
            p.add_term(m.clone(), &LinExpr::var(v, 1.0), 1.0);
        }
        p
    }

    fn gram(&mut self, basis: &[Monomial]) -> (usize, Vec<Vec<usize>>) {
        let b = self.sdp.add_block(basis.len());
        let mut ids = vec![vec![0; basis.len()]; basis.len()];
        for i in 0..basis.len() {
            for j in 0..=i {
                self.vars.push(Var::psd(b, i, j));
                ids[i][j] = self.vars.len() - 1;
                ids[j][i] = self.vars.len() - 1;
            }
        }
        (b, ids)
    }

    fn quadratic_form(&self, basis: &[Monomial], ids: &[Vec<usize>]) -> PolyExpr {
        let mut p = PolyExpr::zero(self.nvars);
        for i in 0..basis.len() {
            for j in 0..=i {
                let c = if i == j { 1.0 } else { 2.0 };
                p.add_term(basis[i].mul(&basis[j]), &LinExpr::var(ids[i][j], 1.0), c);
            }
        }
        p
    }

    /// SOS polynomial `b'Gb`, `G >= 0`, with `b` all monomials of degree
    /// `ceil(min_deg/2) ..= max_deg/2`.
    pub fn sos_poly(&mut self, min_deg: u32, max_deg: u32) -> PolyExpr {
        let basis = monomial_basis(self.nvars, max_deg / 2, half_up(min_deg));
        if basis.is_empty() {
            return PolyExpr::zero(self.nvars);
        }
        let (_, ids) = self.gram(&basis);
        self.quadratic_form(&basis, &ids)
    }

    fn margin_var(&mut self) -> usize {
        if let Some(t) = self.margin {
            return t;
        }
        let t = self.free();
        self.margin = Some(t);
        self.add_le(LinExpr::var(t, 1.0), 1.0);
        self.objective = LinExpr::var(t, -1.0);
        t
    }

    fn push_row(&mut self, e: &LinExpr) {
        let terms = e.terms.iter().map(|(&v, &c)| (self.vars[v], c)).collect();
        self.sdp.add_row(terms, -e.constant);
    }

    /// `e <= bound` through a nonnegative slack.
    pub fn add_le(&mut self, e: LinExpr, bound: f64) {
        let b = self.sdp.add_block(1);
        self.vars.push(Var::psd(b, 0, 0));
        let s = self.vars.len() - 1;
        let mut row = e;
        row.add_scaled(&LinExpr::var(s, 1.0), 1.0);
        row.constant -= bound;
        self.push_row(&row);
    }

    pub fn require_zero(&mut self, e: &PolyExpr) {
        let rows: Vec<LinExpr> = e.terms().map(|(_, l)| l.clone()).collect();
        for r in rows {
            if r.is_fixed() && r.constant == 0.0 {
                continue;
            }
            self.push_row(&r);
        }
    }

    /// Constrain `target` to be a sum of squares. With `margin`, the Gram
    /// matrix is `X + t I` for a shared maximized margin `t <= 1`.
    pub fn require_sos(&mut self, label: &str, target: &PolyExpr, margin: bool) -> Result<usize> {
        let scale = target.terms().filter(|(_, e)| e.is_fixed()).map(|(_, e)| e.constant.abs()).fold(0.0, f64::max).max(1.0);
        let mut kept = PolyExpr::zero(self.nvars);
        for (m, e) in target.terms() {
            if e.is_fixed() && e.constant.abs() <= CHOP * scale {
                continue;
            }
            kept.add_term(m.clone(), e, 1.0);
        }
        let degs: Vec<u32> = kept.terms().map(|(m, _)| m.degree()).collect();
        let (Some(&lo), Some(&hi)) = (degs.iter().min(), degs.iter().max()) else {
            // Zero target: trivially SOS.
            let c = SosConstraint { label: label.into(), target: kept, basis: vec![], block: usize::MAX, margin: false };
            self.constraints.push(c);
            return Ok(self.constraints.len() - 1);
        };
        if hi % 2 == 1 && kept.terms().filter(|(m, _)| m.degree() == hi).all(|(_, e)| e.is_fixed()) {
            return Err(Error::OddDegree(hi));
        }
        let basis = monomial_basis(self.nvars, hi / 2, half_up(lo));
        let (block, ids) = self.gram(&basis);
        let mut resid = kept.sub(&self.quadratic_form(&basis, &ids));
        if margin {
            let t = self.margin_var();
            for b in &basis {
                resid.add_term(b.mul(b), &LinExpr::var(t, 1.0), -1.0);
            }
        }
        self.require_zero(&resid);
        self.constraints.push(SosConstraint { label: label.into(), target: target.clone(), basis, block, margin });
        Ok(self.constraints.len() - 1)
    }

    /// Minimize a linear objective (replaces the margin objective).
    pub fn minimize(&mut self, e: LinExpr) {
        self.objective = e;
    }

    pub fn solve(&self) -> SosSolution {
        let mut sdp = self.sdp.clone();
        let obj: Vec<(Var, f64)> = self.objective.terms.iter().map(|(&v, &c)| (self.vars[v], c)).collect();
        sdp.set_objective(obj);
        let sol = solve_sdp(&sdp, &SdpOptions::default());
        let values: Vec<f64> = if matches!(sol.status, SdpStatus::Optimal) {
            self.vars.iter().map(|&v| sol.value(v)).collect()
        } else {
            vec![f64::NAN; self.vars.len()]
        };
        let margin = self.margin.map(|t| values[t]);
        let grams = self
            .constraints
            .iter()
            .map(|c| {
                if c.block == usize::MAX || values.iter().any(|v| v.is_nan()) {
                    return DMatrix::zeros(c.basis.len(), c.basis.len());
                }
                let mut g = sol.x_blocks[c.block].clone();
                if c.margin {
                    for i in 0..g.nrows() {
                        g[(i, i)] += margin.unwrap_or(0.0);
                    }
                }
                g
            })
            .collect();
        let feasible = sol.status == SdpStatus::Optimal && margin.is_none_or(|t| t >= -MARGIN_TOL);
        SosSolution {
            status: sol.status,
            feasible,
            margin,
            objective: sol.primal_objective,
            values,
            grams,
            constraints: self.constraints.clone(),
            iterations: sol.iterations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    pub status: SdpStatus,
    pub feasible: bool,
    pub margin: Option<f64>,
    pub objective: f64,
    pub values: Vec<f64>,
    pub grams: Vec<DMatrix<f64>>,
    pub constraints: Vec<SosConstraint>,
    pub iterations: usize,
}

impl SosSolution {
    pub fn poly(&self, e: &PolyExpr) -> Poly {
        e.eval(&self.values)
    }

    pub fn value(&self, e: &LinExpr) -> f64 {
        e.eval(&self.values)
    }

    /// Largest coefficient of `target - b'Gb` for constraint `ci`.
    pub fn identity_error(&self, ci: usize) -> f64 {
        let c = &self.constraints[ci];
        let mut p = self.poly(&c.target);
        let g = &self.grams[ci];
        for i in 0..c.basis.len() {
            for j in 0..c.basis.len() {
                p.add_term(c.basis[i].mul(&c.basis[j]), -g[(i, j)]);
            }
        }
        p.max_abs_coeff()
    }

    pub fn min_gram_eigenvalue(&self, ci: usize) -> f64 {
        let g = &self.grams[ci];
        if g.nrows() == 0 {
            return 0.0;
        }
        g.clone().symmetric_eigenvalues().min()
    }
}

/// Gram parameterization of a fixed polynomial, `max_degree` bounding the basis.
pub fn assemble_sos(target: &Poly, max_degree: u32) -> Result<(SosProgram, usize)> {
    let d = target.degree();
    if d % 2 == 1 {
        return Err(Error::OddDegree(d));
    }
    if d > 2 * max_degree {
        return Err(Error::Config(format!("target degree {d} exceeds twice the basis degree {max_degree}")));
    }
    let mut prog = SosProgram::new(target.nvars());
    let ci = prog.require_sos("target", &PolyExpr::from_poly(target), true)?;
    Ok((prog, ci))
}

/// Maximal Gram margin certificate for a fixed polynomial.
pub fn check_sos(target: &Poly) -> Result<SosSolution> {
    let (prog, _) = assemble_sos(target, target.degree().div_ceil(2))?;
    Ok(prog.solve())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(terms: &[(u32, f64)]) -> Poly {
        Poly::from_terms(1, terms.iter().map(|&(e, c)| (vec![e], c))).unwrap()
    }

    #[test]
    fn spec_examples() {
        let s = check_sos(&p(&[(0, 1.0), (2, 1.0)])).unwrap();
        assert!(s.feasible);
        assert!(s.identity_error(0) <= 1e-6);
        let s = check_sos(&p(&[(2, -1.0)])).unwrap();
        assert!(!s.feasible);
        let s = check_sos(&p(&[(4, 1.0), (2, -2.0), (0, 1.0)])).unwrap();
        assert!(s.feasible, "{:?}", s.margin);
        assert!(s.identity_error(0) <= 1e-6);
        assert!(matches!(check_sos(&p(&[(3, 1.0)])), Err(Error::OddDegree(3))));
    }

    #[test]
    fn multiplier_search() {
        // 1 - x^2 >= 0 on {x^2 <= 1/2}: 1 - x^2 - s (1/2 - x^2) with s = 1 is 1/2.
        let x2 = p(&[(2, 1.0)]);
        let mut prog = SosProgram::new(1);
        let s = prog.sos_poly(0, 0);
        let region = PolyExpr::from_poly(&p(&[(0, 0.5), (2, -1.0)]));
        let target = PolyExpr::from_poly(&Poly::one(1).sub(&x2).unwrap()).sub(&s.mul(&region));
        prog.require_sos("c", &target, true).unwrap();
        let sol = prog.solve();
        assert!(sol.feasible);
        assert!(sol.poly(&s).coeff(&Monomial::one(1)) >= 1.0 - 1e-6);
        assert!(sol.identity_error(0) < 1e-6);
    }
}
