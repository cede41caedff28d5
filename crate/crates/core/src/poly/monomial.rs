use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Exponent vector of a monomial, one entry per variable.
///
/// Ordering is graded lexicographic: lower total degree first, and within a
/// degree `x1` sorts before `x2` (larger leading exponents first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    pub fn one(nvars: usize) -> Self {
        Self { exps: vec![0; nvars] }
    }

    /// The monomial `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        let mut exps = vec![0; nvars];
        exps[var] = 1;
        Self { exps }
    }

    pub fn nvars(&self) -> usize {
        self.exps.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exps
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.nvars(), other.nvars());
        Monomial { exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect() }
    }

    /// True when every variable has an even exponent.
    pub fn is_even(&self) -> bool {
        self.exps.iter().all(|e| e % 2 == 0)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `nvars` variables with total degree in
/// `[min_degree, max_degree]`, in graded-lex order.
pub fn monomial_basis(nvars: usize, max_degree: u32, min_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    if min_degree > max_degree {
        return out;
    }
    for d in min_degree..=max_degree {
        let mut level = Vec::new();
        let mut cur = vec![0u32; nvars];
        compositions(nvars, 0, d, &mut cur, &mut level);
        level.sort();
        out.extend(level);
    }
    out
}

fn compositions(nvars: usize, idx: usize, remaining: u32, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(Monomial::new(Vec::new()));
        }
        return;
    }
    if idx == nvars - 1 {
        cur[idx] = remaining;
        out.push(Monomial::new(cur.clone()));
        cur[idx] = 0;
        return;
    }
    for e in 0..=remaining {
        cur[idx] = e;
        compositions(nvars, idx + 1, remaining - e, cur, out);
    }
    cur[idx] = 0;
}
