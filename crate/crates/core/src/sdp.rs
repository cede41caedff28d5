//! Dense primal-dual interior-point solver for small semidefinite programs.
//!
//! Primal: minimize `c'x + sum <C_j, X_j>` subject to
//! `A_f x + sum A_j(X_j) = b`, `X_j >= 0`, with `x` free.
//! Dual: maximize `b'y` subject to `A_f'y = c`, `S_j = C_j - A_j*(y) >= 0`.
//!
//! Search directions are HKM with a Mehrotra corrector. The Schur complement
//! is block diagonal over groups of rows sharing a matrix block, so it is
//! factored group by group and the free variables are eliminated through a
//! small dense saddle system.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A decision variable: free scalar, or entry `(i, j)` (with `i >= j`) of a
/// symmetric matrix block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Free(usize),
    Psd { block: usize, i: usize, j: usize },
}

impl Var {
    pub fn psd(block: usize, i: usize, j: usize) -> Self {
        if i >= j {
            Var::Psd { block, i, j }
        } else {
            Var::Psd { block, i: j, j: i }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    free: usize,
    blocks: Vec<usize>,
    rows: Vec<(Vec<(Var, f64)>, f64)>,
    objective: Vec<(Var, f64)>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` free variables, returning the index of the first.
    pub fn add_free(&mut self, count: usize) -> usize {
        let first = self.free;
        self.free += count;
        first
    }

    pub fn add_block(&mut self, size: usize) -> usize {
        self.blocks.push(size);
        self.blocks.len() - 1
    }

    /// Adds the equality `sum coeff * var = rhs`; a term on an off-diagonal
    /// entry multiplies `X_ij` itself (each entry appears once).
    pub fn add_row(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.rows.push((terms, rhs));
    }

    /// Linear objective to minimize.
    pub fn set_objective(&mut self, terms: Vec<(Var, f64)>) {
        self.objective = terms;
    }

    pub fn num_free(&self) -> usize {
        self.free
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x_free: Vec<f64>,
    pub x_blocks: Vec<DMatrix<f64>>,
    pub y: Vec<f64>,
    pub s_blocks: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn value(&self, v: Var) -> f64 {
        match v {
            Var::Free(i) => self.x_free[i],
            Var::Psd { block, i, j } => self.x_blocks[block][(i, j)],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100 }
    }
}

/// Row data split by kind: free coefficients and, per block, the entries of
/// the symmetric constraint matrix expanded to both triangles.
struct Row {
    free: Vec<(usize, f64)>,
    /// (block, entries (p, q, value)) with both (p, q) and (q, p) present.
    mats: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

struct Compiled {
    nf: usize,
    sizes: Vec<usize>,
    rows: Vec<Row>,
    b: DVector<f64>,
    c_free: DVector<f64>,
    c_blocks: Vec<DMatrix<f64>>,
    /// Rows grouped by shared blocks; rows without blocks are listed in `pure`.
    groups: Vec<Vec<usize>>,
    pure: Vec<usize>,
}

fn expand(entries: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(entries.len() * 2);
    for &(p, q, a) in entries {
        if p == q {
            out.push((p, p, a));
        } else {
            out.push((p, q, 0.5 * a));
            out.push((q, p, 0.5 * a));
        }
    }
    out
}

fn compile(p: &SdpProblem) -> Result<Compiled, SdpStatus> {
    let nb = p.blocks.len();
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for (terms, rhs) in &p.rows {
        let mut free = std::collections::BTreeMap::<usize, f64>::new();
        let mut mats = std::collections::BTreeMap::<usize, std::collections::BTreeMap<(usize, usize), f64>>::new();
        for &(v, a) in terms {
            if a == 0.0 {
                continue;
            }
            match v {
                Var::Free(i) => *free.entry(i).or_insert(0.0) += a,
                Var::Psd { block, i, j } => {
                    let (i, j) = if i >= j { (i, j) } else { (j, i) };
                    *mats.entry(block).or_default().entry((i, j)).or_insert(0.0) += a;
                }
            }
        }
        let free: Vec<(usize, f64)> = free.into_iter().filter(|(_, a)| *a != 0.0).collect();
        let mats: Vec<(usize, Vec<(usize, usize, f64)>)> = mats
            .into_iter()
            .map(|(blk, m)| (blk, expand(&m.into_iter().filter(|(_, a)| *a != 0.0).map(|((i, j), a)| (i, j, a)).collect::<Vec<_>>())))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        if free.is_empty() && mats.is_empty() {
            if rhs.abs() > 1e-12 {
                return Err(SdpStatus::PrimalInfeasible);
            }
            continue;
        }
        rows.push(Row { free, mats });
        b.push(*rhs);
    }
    let mut c_free = DVector::zeros(p.free);
    let mut c_blocks: Vec<DMatrix<f64>> = p.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    for &(v, a) in &p.objective {
        match v {
            Var::Free(i) => c_free[i] += a,
            Var::Psd { block, i, j } => {
                if i == j {
                    c_blocks[block][(i, i)] += a;
                } else {
                    c_blocks[block][(i, j)] += 0.5 * a;
                    c_blocks[block][(j, i)] += 0.5 * a;
                }
            }
        }
    }
    // Union-find over rows through shared blocks.
    let m = rows.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut k = i;
        while parent[k] != r {
            let next = parent[k];
            parent[k] = r;
            k = next;
        }
        r
    }
    let mut owner: Vec<Option<usize>> = vec![None; nb];
    for (i, row) in rows.iter().enumerate() {
        for (blk, _) in &row.mats {
            match owner[*blk] {
                None => owner[*blk] = Some(i),
                Some(o) => {
                    let (ra, rb) = (find(&mut parent, o), find(&mut parent, i));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut groups_map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    let mut pure = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if row.mats.is_empty() {
            pure.push(i);
        } else {
            let r = find(&mut parent, i);
            groups_map.entry(r).or_default().push(i);
        }
    }
    Ok(Compiled {
        nf: p.free,
        sizes: p.blocks.clone(),
        rows,
        b: DVector::from_vec(b),
        c_free,
        c_blocks,
        groups: groups_map.into_values().collect(),
        pure,
    })
}

impl Compiled {
    fn apply(&self, x_free: &DVector<f64>, xs: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| {
                let mut s: f64 = r.free.iter().map(|&(i, a)| a * x_free[i]).sum();
                for (blk, e) in &r.mats {
                    s += e.iter().map(|&(p, q, a)| a * xs[*blk][(p, q)]).sum::<f64>();
                }
                s
            }),
        )
    }

    /// `A_j(Z)` restricted to the matrix part.
    fn apply_mats(&self, zs: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.mats.iter().map(|(blk, e)| e.iter().map(|&(p, q, a)| a * zs[*blk][(p, q)]).sum::<f64>()).sum()),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        for (i, r) in self.rows.iter().enumerate() {
            for (blk, e) in &r.mats {
                for &(p, q, a) in e {
                    out[*blk][(p, q)] += a * y[i];
                }
            }
        }
        out
    }

    fn adjoint_free(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nf);
        for (i, r) in self.rows.iter().enumerate() {
            for &(k, a) in &r.free {
                out[k] += a * y[i];
            }
        }
        out
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Largest `alpha <= 1` (times 1/0.95 margin handled by caller) keeping `X + alpha dX` PSD.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    if x.nrows() == 1 {
        return if dx[(0, 0)] < 0.0 { -x[(0, 0)] / dx[(0, 0)] } else { f64::INFINITY };
    }
    let chol = match x.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let m = sym(&linv * dx * linv.transpose());
    let lmin = m.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Factored {
    /// Cholesky or LU factors of each group block.
    groups: Vec<GroupFactor>,
    /// Reduced saddle matrix over `[dx_free; dy_pure]`.
    reduced: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// `M11^-1 A1` columns per group (rows of the group x nf).
    minv_af: Vec<DMatrix<f64>>,
}

enum GroupFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl GroupFactor {
    fn solve(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match self {
            GroupFactor::Chol(c) => Some(c.solve(b)),
            GroupFactor::Lu(l) => l.solve(b),
        }
    }
}

fn schur_group(cp: &Compiled, group: &[usize], xs: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
    let g = group.len();
    let mut m = DMatrix::zeros(g, g);
    for a in 0..g {
        let ra = &cp.rows[group[a]];
        for b in a..g {
            let rb = &cp.rows[group[b]];
            let mut s = 0.0;
            for (blk_a, ea) in &ra.mats {
                for (blk_b, eb) in &rb.mats {
                    if blk_a != blk_b {
                        continue;
                    }
                    let x = &xs[*blk_a];
                    let si = &sinv[*blk_a];
                    // tr(A_a X A_b S^-1)
                    for &(p, q, va) in ea {
                        for &(r, t, vb) in eb {
                            s += va * vb * x[(q, r)] * si[(t, p)];
                        }
                    }
                }
            }
            m[(a, b)] = s;
            m[(b, a)] = s;
        }
    }
    m
}

fn factor(cp: &Compiled, xs: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> Option<Factored> {
    let nf = cp.nf;
    let mut groups = Vec::with_capacity(cp.groups.len());
    let mut minv_af = Vec::with_capacity(cp.groups.len());
    let np = cp.pure.len();
    let mut red = DMatrix::zeros(nf + np, nf + np);
    for group in &cp.groups {
        let m = schur_group(cp, group, xs, sinv);
        let fac = match m.clone().cholesky() {
            Some(c) => GroupFactor::Chol(c),
            None => {
                let scale = m.diagonal().abs().max().max(1e-300);
                let reg = &m + DMatrix::identity(m.nrows(), m.nrows()) * (1e-13 * scale);
                match reg.clone().cholesky() {
                    Some(c) => GroupFactor::Chol(c),
                    None => GroupFactor::Lu(reg.lu()),
                }
            }
        };
        let mut af = DMatrix::zeros(group.len(), nf);
        for (a, &ri) in group.iter().enumerate() {
            for &(k, v) in &cp.rows[ri].free {
                af[(a, k)] += v;
            }
        }
        let sol = if nf > 0 { fac.solve(&af)? } else { af.clone() };
        if nf > 0 {
            let block = af.transpose() * &sol;
            let mut view = red.view_mut((0, 0), (nf, nf));
            view -= block;
        }
        groups.push(fac);
        minv_af.push(sol);
    }
    for (c, &ri) in cp.pure.iter().enumerate() {
        for &(k, v) in &cp.rows[ri].free {
            red[(nf + c, k)] += v;
            red[(k, nf + c)] += v;
        }
    }
    let reduced = if nf + np > 0 { Some(red.lu()) } else { None };
    Some(Factored { groups, reduced, minv_af })
}

/// Solve `[M A_f; A_f' 0] [dy; dx] = [h; rf]` with two rounds of iterative
/// refinement against the unfactored operator.
fn solve_newton(
    cp: &Compiled,
    f: &Factored,
    xs: &[DMatrix<f64>],
    sinv: &[DMatrix<f64>],
    h: &DVector<f64>,
    rf: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (mut dy, mut dx) = solve_factored(cp, f, h, rf)?;
    for _ in 0..2 {
        let ady = cp.adjoint(&dy);
        let w: Vec<DMatrix<f64>> = (0..xs.len()).map(|j| sym(&xs[j] * &ady[j] * &sinv[j])).collect();
        let r1 = h - cp.apply(&dx, &w);
        let r2 = rf - cp.adjoint_free(&dy);
        let (ey, ex) = solve_factored(cp, f, &r1, &r2)?;
        dy += ey;
        dx += ex;
    }
    Some((dy, dx))
}

fn solve_factored(cp: &Compiled, f: &Factored, h: &DVector<f64>, rf: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let nf = cp.nf;
    let np = cp.pure.len();
    let mut dy = DVector::zeros(cp.rows.len());
    let mut minv_h: Vec<DMatrix<f64>> = Vec::with_capacity(cp.groups.len());
    for (gi, group) in cp.groups.iter().enumerate() {
        let hg = DMatrix::from_iterator(group.len(), 1, group.iter().map(|&r| h[r]));
        minv_h.push(f.groups[gi].solve(&hg)?);
    }
    let mut dx = DVector::zeros(nf);
    if let Some(lu) = &f.reduced {
        let mut rhs = DVector::zeros(nf + np);
        for k in 0..nf {
            rhs[k] = rf[k];
        }
        for (gi, group) in cp.groups.iter().enumerate() {
            for (a, &ri) in group.iter().enumerate() {
                for &(k, v) in &cp.rows[ri].free {
                    rhs[k] -= v * minv_h[gi][(a, 0)];
                }
            }
        }
        for (c, &ri) in cp.pure.iter().enumerate() {
            rhs[nf + c] = h[ri];
        }
        let sol = lu.solve(&rhs)?;
        for k in 0..nf {
            dx[k] = sol[k];
        }
        for (c, &ri) in cp.pure.iter().enumerate() {
            dy[ri] = sol[nf + c];
        }
    }
    for (gi, group) in cp.groups.iter().enumerate() {
        let corr = if nf > 0 { &f.minv_af[gi] * &dx } else { DVector::zeros(group.len()) };
        for (a, &ri) in group.iter().enumerate() {
            dy[ri] = minv_h[gi][(a, 0)] - corr[a];
        }
    }
    if dy.iter().chain(dx.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((dy, dx))
}

fn failure(status: SdpStatus, p: &SdpProblem) -> SdpSolution {
    SdpSolution {
        status,
        x_free: vec![0.0; p.free],
        x_blocks: p.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
        y: vec![0.0; p.rows.len()],
        s_blocks: p.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        gap: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        iterations: 0,
    }
}

struct Snapshot {
    xf: DVector<f64>,
    xs: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    ss: Vec<DMatrix<f64>>,
    pobj: f64,
    dobj: f64,
    pres: f64,
    dres: f64,
    score: f64,
}

impl Snapshot {
    /// Duality gap within 1e-7 and residuals within 1e-8.
    fn acceptable(&self) -> bool {
        let gap = (self.pobj - self.dobj).abs() / (1.0 + self.pobj.abs() + self.dobj.abs());
        self.pres <= 1e-7 && self.dres <= 1e-7 && gap <= 1e-7
    }
}

pub fn solve_sdp(p: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    let cp = match compile(p) {
        Ok(c) => c,
        Err(status) => return failure(status, p),
    };
    let nb = cp.sizes.len();
    let total: usize = cp.sizes.iter().sum();
    let norm_b = cp.b.norm();
    let norm_c = cp.c_free.norm() + cp.c_blocks.iter().map(|c| c.norm()).sum::<f64>();
    let scale_x = 10f64.max(norm_b.sqrt()).min(1e4);
    let scale_s = 10f64.max(norm_c.sqrt()).min(1e4);
    let mut xs: Vec<DMatrix<f64>> = cp.sizes.iter().map(|&s| DMatrix::identity(s, s) * scale_x).collect();
    let mut ss: Vec<DMatrix<f64>> = cp.sizes.iter().map(|&s| DMatrix::identity(s, s) * scale_s).collect();
    let mut xf = DVector::zeros(cp.nf);
    let mut y = DVector::zeros(cp.rows.len());
    let mut status = SdpStatus::IterationLimit;
    let mut iterations = 0;
    let mut stall = 0;
    let (mut pobj, mut dobj, mut pres, mut dres);
    let mut best: Option<Snapshot> = None;
    let mut since_best = 0;
    loop {
        let ax = cp.apply(&xf, &xs);
        let rp = &cp.b - &ax;
        let aty = cp.adjoint(&y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|j| &cp.c_blocks[j] - &aty[j] - &ss[j]).collect();
        let rf = &cp.c_free - cp.adjoint_free(&y);
        pobj = cp.c_free.dot(&xf) + (0..nb).map(|j| inner(&cp.c_blocks[j], &xs[j])).sum::<f64>();
        dobj = cp.b.dot(&y);
        pres = rp.norm() / (1.0 + norm_b);
        dres = (rf.norm() + rd.iter().map(|m| m.norm()).sum::<f64>()) / (1.0 + norm_c);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let mu = if total > 0 { (0..nb).map(|j| inner(&xs[j], &ss[j])).sum::<f64>() / total as f64 } else { 0.0 };
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            status = SdpStatus::Optimal;
            break;
        }
        let score = pres.max(dres).max(0.1 * gap);
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(Snapshot { xf: xf.clone(), xs: xs.clone(), y: y.clone(), ss: ss.clone(), pobj, dobj, pres, dres, score });
            since_best = 0;
        } else if best.as_ref().is_some_and(|b| b.acceptable() && (score > 1e3 * b.score || since_best >= 8)) {
            // Accuracy is being lost to ill-conditioning, or progress has stalled.
            status = SdpStatus::NumericalFailure;
            break;
        } else {
            since_best += 1;
        }
        // Infeasibility certificates from the current iterates.
        if dobj > 0.0 {
            let yh = &y / dobj;
            let af = cp.adjoint_free(&yh).norm();
            let lmax = cp
                .adjoint(&yh)
                .iter()
                .map(|m| if m.nrows() == 0 { f64::NEG_INFINITY } else { sym(m.clone()).symmetric_eigenvalues().max() })
                .fold(f64::NEG_INFINITY, f64::max);
            if af <= 1e-8 && lmax <= 1e-8 && dobj > 1e6 {
                status = SdpStatus::PrimalInfeasible;
                break;
            }
        }
        if pobj < 0.0 {
            let s = -1.0 / pobj;
            let res = cp.apply(&(&xf * s), &xs.iter().map(|m| m * s).collect::<Vec<_>>()).norm();
            if res <= 1e-8 && pobj < -1e6 {
                status = SdpStatus::DualInfeasible;
                break;
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let sinv: Vec<DMatrix<f64>> = match ss
            .iter()
            .map(|s| if s.nrows() == 0 { Some(s.clone()) } else { s.clone().cholesky().map(|c| c.inverse()) })
            .collect::<Option<Vec<_>>>()
        {
            Some(v) => v,
            None => {
                status = SdpStatus::NumericalFailure;
                break;
            }
        };
        let fac = match factor(&cp, &xs, &sinv) {
            Some(f) => f,
            None => {
                status = SdpStatus::NumericalFailure;
                break;
            }
        };
        // Predictor.
        let base: Vec<DMatrix<f64>> = (0..nb).map(|j| -&xs[j] - &xs[j] * &rd[j] * &sinv[j]).collect();
        let h_aff = &rp - cp.apply_mats(&base);
        let Some((dy_a, dx_a)) = solve_newton(&cp, &fac, &xs, &sinv, &h_aff, &rf) else {
            status = SdpStatus::NumericalFailure;
            break;
        };
        let ady = cp.adjoint(&dy_a);
        let ds_a: Vec<DMatrix<f64>> = (0..nb).map(|j| &rd[j] - &ady[j]).collect();
        let dxm_a: Vec<DMatrix<f64>> = (0..nb).map(|j| sym(-&xs[j] - &xs[j] * &ds_a[j] * &sinv[j])).collect();
        let ap = (0..nb).map(|j| max_step(&xs[j], &dxm_a[j])).fold(f64::INFINITY, f64::min).min(1.0);
        let ad = (0..nb).map(|j| max_step(&ss[j], &ds_a[j])).fold(f64::INFINITY, f64::min).min(1.0);
        let mu_aff = if total > 0 {
            (0..nb).map(|j| inner(&(&xs[j] + &dxm_a[j] * ap), &(&ss[j] + &ds_a[j] * ad))).sum::<f64>() / total as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        // Corrector.
        let base: Vec<DMatrix<f64>> =
            (0..nb).map(|j| &sinv[j] * (sigma * mu) - &xs[j] - &xs[j] * &rd[j] * &sinv[j] - &dxm_a[j] * &ds_a[j] * &sinv[j]).collect();
        let h = &rp - cp.apply_mats(&base);
        let Some((dy, dxf)) = solve_newton(&cp, &fac, &xs, &sinv, &h, &rf) else {
            status = SdpStatus::NumericalFailure;
            break;
        };
        let ady = cp.adjoint(&dy);
        let ds: Vec<DMatrix<f64>> = (0..nb).map(|j| &rd[j] - &ady[j]).collect();
        let dxm: Vec<DMatrix<f64>> =
            (0..nb).map(|j| sym(&sinv[j] * (sigma * mu) - &xs[j] - &xs[j] * &ds[j] * &sinv[j] - &dxm_a[j] * &ds_a[j] * &sinv[j])).collect();
        let ap = (0.95 * (0..nb).map(|j| max_step(&xs[j], &dxm[j])).fold(f64::INFINITY, f64::min)).min(1.0);
        let ad = (0.95 * (0..nb).map(|j| max_step(&ss[j], &ds[j])).fold(f64::INFINITY, f64::min)).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stall += 1;
            if stall > 3 {
                status = SdpStatus::NumericalFailure;
                break;
            }
        } else {
            stall = 0;
        }
        xf += &dxf * ap;
        y += &dy * ad;
        for j in 0..nb {
            xs[j] = sym(&xs[j] + &dxm[j] * ap);
            ss[j] = sym(&ss[j] + &ds[j] * ad);
        }
        let _ = dx_a;
    }
    if status == SdpStatus::IterationLimit || status == SdpStatus::NumericalFailure {
        // Fall back to the most accurate iterate when it meets the contract.
        if let Some(b) = best.filter(Snapshot::acceptable) {
            status = SdpStatus::Optimal;
            (xf, xs, y, ss) = (b.xf, b.xs, b.y, b.ss);
            (pobj, dobj, pres, dres) = (b.pobj, b.dobj, b.pres, b.dres);
        }
    }
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    SdpSolution {
        status,
        x_free: xf.iter().copied().collect(),
        x_blocks: xs,
        y: y.iter().copied().collect(),
        s_blocks: ss,
        primal_objective: pobj,
        dual_objective: dobj,
        gap,
        primal_residual: pres,
        dual_residual: dres,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_entry_feasible() {
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        p.add_row(vec![(Var::psd(b, 0, 0), 1.0)], 1.0);
        let s = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.x_blocks[0][(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn negative_diagonal_infeasible() {
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        p.add_row(vec![(Var::psd(b, 0, 0), 1.0)], -1.0);
        let s = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::PrimalInfeasible);
    }

    #[test]
    fn min_eigenvalue_by_sdp() {
        // maximize t s.t. C - t I = X >= 0  <=>  min -t, X + t I = C
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let mut p = SdpProblem::new();
        let t = p.add_free(1);
        let b = p.add_block(2);
        for i in 0..2 {
            for j in 0..=i {
                let mut terms = vec![(Var::psd(b, i, j), 1.0)];
                if i == j {
                    terms.push((Var::Free(t), 1.0));
                }
                p.add_row(terms, c[(i, j)]);
            }
        }
        p.set_objective(vec![(Var::Free(t), -1.0)]);
        let s = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        let want = c.symmetric_eigenvalues().min();
        assert!((s.x_free[0] - want).abs() < 1e-7, "{} vs {want}", s.x_free[0]);
        assert!(s.gap <= 1e-7);
    }

    #[test]
    fn linear_program_with_scalar_blocks() {
        // min x1 + 2 x2, x1 + x2 = 1, x >= 0  -> x = (1, 0)
        let mut p = SdpProblem::new();
        let a = p.add_block(1);
        let b = p.add_block(1);
        p.add_row(vec![(Var::psd(a, 0, 0), 1.0), (Var::psd(b, 0, 0), 1.0)], 1.0);
        p.set_objective(vec![(Var::psd(a, 0, 0), 1.0), (Var::psd(b, 0, 0), 2.0)]);
        let s = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.primal_objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn unbounded_detected() {
        // min -x with x = X_00 >= 0 free to grow: X_00 - X_11 = 0
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        p.add_row(vec![(Var::psd(b, 0, 0), 1.0), (Var::psd(b, 1, 1), -1.0)], 0.0);
        p.set_objective(vec![(Var::psd(b, 0, 0), -1.0)]);
        let s = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(s.status, SdpStatus::DualInfeasible);
    }
}
