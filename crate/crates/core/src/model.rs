//! Hybrid system definitions and the declarative model file format.
//!
//! A model is a cyclic sequence of phases. Each phase flows under
//! `x' = f(x, u)` until it reaches its exit surface `c_minus' x = d_minus`
//! with `guard(x) >= 0`, where the reset `x+ = delta(x)` moves the state to
//! the next phase. A single phase without a surface is a smooth system.
//!
//! Right-hand sides are polynomials over `(x, u, atoms)`; atoms are
//! `sin`/`cos` of a scaled, offset state coordinate and let mechanical
//! models be simulated exactly while still being polynomialized for
//! sum-of-squares work.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Poly, PolyVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AtomFn {
    Sin,
    Cos,
}

impl TryFrom<String> for AtomFn {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        match s.as_str() {
            "sin" => Ok(AtomFn::Sin),
            "cos" => Ok(AtomFn::Cos),
            other => Err(Error::UnsupportedAtom(other.to_string())),
        }
    }
}

impl From<AtomFn> for String {
    fn from(f: AtomFn) -> String {
        match f {
            AtomFn::Sin => "sin".into(),
            AtomFn::Cos => "cos".into(),
        }
    }
}

/// Scalar atom `fn(scale * x[var] + offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "fn")]
    pub func: AtomFn,
    pub var: usize,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl Atom {
    fn arg(&self, x: &[f64]) -> f64 {
        self.scale * x[self.var] + self.offset
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.func {
            AtomFn::Sin => self.arg(x).sin(),
            AtomFn::Cos => self.arg(x).cos(),
        }
    }

    /// d/dx[var] of the atom.
    pub fn derivative(&self, x: &[f64]) -> f64 {
        match self.func {
            AtomFn::Sin => self.scale * self.arg(x).cos(),
            AtomFn::Cos => -self.scale * self.arg(x).sin(),
        }
    }

    /// k-th derivative of the underlying sin/cos at `a`, with respect to its argument.
    fn nth_derivative_at(&self, k: usize, a: f64) -> f64 {
        let phase = match self.func {
            AtomFn::Sin => 0,
            AtomFn::Cos => 1,
        };
        match (k + phase) % 4 {
            0 => a.sin(),
            1 => a.cos(),
            2 => -a.sin(),
            _ => -a.cos(),
        }
    }

    /// Taylor polynomial of the atom in the offset variable `y = x - center`
    /// (polynomial over `nvars` variables), to the given degree.
    fn taylor(&self, center: &[f64], degree: u32, nvars: usize) -> Poly {
        let a0 = self.arg(center);
        let y = Poly::var(nvars, self.var);
        let mut out = Poly::zero(nvars);
        let mut fact = 1.0;
        let mut spow = 1.0;
        for k in 0..=degree as usize {
            if k > 0 {
                fact *= k as f64;
                spow *= self.scale;
            }
            let c = self.nth_derivative_at(k, a0) * spow / fact;
            out = out.add(&y.pow(k as u32).scale(c)).expect("same nvars");
        }
        out
    }
}

/// Planar switching surface pair: impacts happen on `S- = {c_minus'x = d_minus, guard(x) >= 0}`
/// and land on `S+ = {c_plus'x = d_plus}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSurface {
    pub c_minus: Vec<f64>,
    pub d_minus: f64,
    pub guard: Poly,
    pub c_plus: Vec<f64>,
    pub d_plus: f64,
}

impl SwitchingSurface {
    /// Signed distance-like residual `c_minus'x - d_minus`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        dot(&self.c_minus, x) - self.d_minus
    }

    pub fn post_residual(&self, x: &[f64]) -> f64 {
        dot(&self.c_plus, x) - self.d_plus
    }

    pub fn guard_value(&self, x: &[f64]) -> f64 {
        self.guard.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPhase {
    /// Right-hand side over `(x, u, atoms)`.
    pub f: Vec<Poly>,
    pub surface: Option<SwitchingSurface>,
    /// Reset map over `x`; identity when absent.
    pub delta: Option<Vec<Poly>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRepr {
    n: usize,
    m: usize,
    phases: Vec<HybridPhase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    atoms: Vec<Atom>,
}

/// Validated hybrid model with cached symbolic Jacobians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct HybridModel {
    n: usize,
    m: usize,
    atoms: Vec<Atom>,
    phases: Vec<HybridPhase>,
    fields: Vec<PolyVec>,
    deltas: Vec<PolyVec>,
    // d f_i / d v_j over all (x, u, atom) variables, per phase.
    field_jac: Vec<Vec<Vec<Poly>>>,
    delta_jac: Vec<Vec<Vec<Poly>>>,
}

impl PartialEq for HybridModel {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.m == other.m && self.atoms == other.atoms && self.phases == other.phases
    }
}

impl From<HybridModel> for ModelRepr {
    fn from(m: HybridModel) -> Self {
        ModelRepr { n: m.n, m: m.m, phases: m.phases, atoms: m.atoms }
    }
}

impl TryFrom<ModelRepr> for HybridModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        HybridModel::new(r.n, r.m, r.phases, r.atoms)
    }
}

impl HybridModel {
    pub fn new(n: usize, m: usize, phases: Vec<HybridPhase>, atoms: Vec<Atom>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model("state dimension must be positive".into()));
        }
        if phases.is_empty() {
            return Err(Error::Model("at least one phase is required".into()));
        }
        for (a, atom) in atoms.iter().enumerate() {
            if atom.var >= n {
                return Err(Error::Model(format!("atom {a} refers to state {} >= n", atom.var)));
            }
        }
        let nv = n + m + atoms.len();
        let mut fields = Vec::new();
        let mut deltas = Vec::new();
        for (k, ph) in phases.iter().enumerate() {
            if ph.f.len() != n {
                return Err(Error::Model(format!("phase {k}: f has {} components, n = {n}", ph.f.len())));
            }
            let f = PolyVec::new(nv, ph.f.clone())
                .map_err(|e| Error::Model(format!("phase {k}: f must be over n+m+atoms = {nv} variables ({e})")))?;
            fields.push(f);
            match &ph.surface {
                Some(s) => {
                    if s.c_minus.len() != n || s.c_plus.len() != n {
                        return Err(Error::Model(format!("phase {k}: surface normals must have length {n}")));
                    }
                    if s.c_minus.iter().all(|&c| c == 0.0) {
                        return Err(Error::ZeroNormal(format!("phase {k} c_minus")));
                    }
                    if s.c_plus.iter().all(|&c| c == 0.0) {
                        return Err(Error::ZeroNormal(format!("phase {k} c_plus")));
                    }
                    if s.guard.nvars() != n {
                        return Err(Error::Model(format!("phase {k}: guard must be over {n} variables")));
                    }
                }
                None => {
                    if phases.len() > 1 {
                        return Err(Error::Model(format!("phase {k} has no exit surface but the model has several phases")));
                    }
                }
            }
            let d = match &ph.delta {
                Some(d) => {
                    if d.len() != n {
                        return Err(Error::Model(format!("phase {k}: delta has {} components", d.len())));
                    }
                    PolyVec::new(n, d.clone()).map_err(|e| Error::Model(format!("phase {k}: delta must be over {n} variables ({e})")))?
                }
                None => PolyVec::identity(n),
            };
            deltas.push(d);
        }
        let field_jac = fields.iter().map(PolyVec::jacobian).collect();
        let delta_jac = deltas.iter().map(PolyVec::jacobian).collect();
        Ok(Self { n, m, atoms, phases, fields, deltas, field_jac, delta_jac })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let repr: ModelRepr = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            if let Some(rest) = message.strip_prefix("unsupported atom: ") {
                let name = rest.split(" at line").next().unwrap_or(rest);
                return Error::UnsupportedAtom(name.to_string());
            }
            Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message }
        })?;
        Self::try_from(repr)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse { location: format!("{}:{}", path.display(), location), message },
            other => other,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn phase(&self, k: usize) -> &HybridPhase {
        &self.phases[k]
    }

    pub fn surface(&self, k: usize) -> Option<&SwitchingSurface> {
        self.phases[k].surface.as_ref()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_hybrid(&self) -> bool {
        self.phases.iter().any(|p| p.surface.is_some())
    }

    pub fn is_polynomial(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn next_phase(&self, k: usize) -> usize {
        (k + 1) % self.phases.len()
    }

    fn extended_point(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n + self.m + self.atoms.len());
        v.extend_from_slice(x);
        if u.is_empty() {
            v.extend(std::iter::repeat_n(0.0, self.m));
        } else {
            v.extend_from_slice(u);
        }
        v.extend(self.atoms.iter().map(|a| a.value(x)));
        v
    }

    fn check_dims(&self, phase: usize, x: &[f64], u: &[f64]) -> Result<()> {
        if phase >= self.phases.len() {
            return Err(Error::Dimension(format!("phase {phase} of {}", self.phases.len())));
        }
        if x.len() != self.n {
            return Err(Error::Dimension(format!("state of length {}, n = {}", x.len(), self.n)));
        }
        if !u.is_empty() && u.len() != self.m {
            return Err(Error::Dimension(format!("input of length {}, m = {}", u.len(), self.m)));
        }
        Ok(())
    }

    /// `f(x, u)` for the given phase; an empty `u` means zero input.
    pub fn eval_field(&self, phase: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(phase, x, u)?;
        Ok(self.field(phase, x, u))
    }

    pub(crate) fn field(&self, phase: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let p = self.extended_point(x, u);
        self.fields[phase].components().iter().map(|c| c.eval(&p)).collect()
    }

    /// Jacobians `(df/dx, df/du)` at `(x, u)`, chain rule through atoms.
    pub fn field_jacobians(&self, phase: usize, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.extended_point(x, u);
        let jac = &self.field_jac[phase];
        let (n, m) = (self.n, self.m);
        let mut jx = DMatrix::zeros(n, n);
        let mut ju = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..n {
                jx[(i, j)] = jac[i][j].eval(&p);
            }
            for j in 0..m {
                ju[(i, j)] = jac[i][n + j].eval(&p);
            }
            for (a, atom) in self.atoms.iter().enumerate() {
                let dpda = jac[i][n + m + a].eval(&p);
                if dpda != 0.0 {
                    jx[(i, atom.var)] += dpda * atom.derivative(x);
                }
            }
        }
        (jx, ju)
    }

    pub fn apply_delta(&self, phase: usize, x: &[f64]) -> Vec<f64> {
        self.deltas[phase].components().iter().map(|c| c.eval(x)).collect()
    }

    pub fn delta_jacobian(&self, phase: usize, x: &[f64]) -> DMatrix<f64> {
        let jac = &self.delta_jac[phase];
        DMatrix::from_fn(self.n, self.n, |i, j| jac[i][j].eval(x))
    }

    pub fn delta_map(&self, phase: usize) -> &PolyVec {
        &self.deltas[phase]
    }

    /// Polynomial right-hand side over `(x, u)`: exact when the model has no
    /// atoms, otherwise the Taylor polynomial of the given degree about `center`
    /// (length `n + m`).
    pub fn polynomial_field(&self, phase: usize, center: &[f64], degree: u32) -> Result<PolyVec> {
        if self.atoms.is_empty() {
            let nv = self.n + self.m;
            let map: Vec<usize> = (0..nv).collect();
            let comps = self.phases[phase].f.iter().map(|p| p.embed(nv, &map)).collect();
            return PolyVec::new(nv, comps);
        }
        taylor_polynomialize(&self.fields[phase], self.n, self.m, &self.atoms, center, degree)
    }
}

/// Taylor polynomial (total degree `degree`, about `center` in `(x, u)`) of a
/// field given as polynomials over `(x, u, atoms)`.
pub fn taylor_polynomialize(field: &PolyVec, n: usize, m: usize, atoms: &[Atom], center: &[f64], degree: u32) -> Result<PolyVec> {
    let nv = n + m;
    if center.len() != nv {
        return Err(Error::Dimension(format!("center of length {}, expected {nv}", center.len())));
    }
    if field.nvars() != nv + atoms.len() {
        return Err(Error::Dimension(format!("field over {} variables, expected {}", field.nvars(), nv + atoms.len())));
    }
    // Substitution in offset coordinates y = (x, u) - center.
    let mut subs: Vec<Poly> = (0..nv).map(|j| Poly::linear(&unit(nv, j), center[j])).collect();
    subs.extend(atoms.iter().map(|a| a.taylor(&center[..n], degree, nv)));
    let shift_back = DVector::from_iterator(nv, center.iter().map(|c| -c));
    let comps = field
        .components()
        .iter()
        .map(|p| {
            let q = p.compose(&subs, nv).truncate(degree);
            q.substitute_affine(&DMatrix::identity(nv, nv), &shift_back)
        })
        .collect::<Result<Vec<_>>>()?;
    PolyVec::new(nv, comps)
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = 1.0;
    v
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
