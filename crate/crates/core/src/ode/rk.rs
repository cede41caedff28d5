//! Adaptive Dormand–Prince 5(4) stepping with cubic Hermite dense output.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step size (infinite when unset).
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, h_max: f64::INFINITY, h_min: 1e-14, max_steps: 10_000_000 }
    }
}

impl Tolerances {
    pub fn tight() -> Self {
        Self { rtol: 1e-12, atol: 1e-14, ..Self::default() }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

/// One accepted step, enough for Hermite interpolation on `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct AcceptedStep<T: Scalar> {
    pub t0: T,
    pub t1: T,
    pub x0: Vec<T>,
    pub x1: Vec<T>,
    pub f0: Vec<T>,
    pub f1: Vec<T>,
}

impl<T: Scalar> AcceptedStep<T> {
    pub fn interpolate(&self, t: T) -> Vec<T> {
        hermite(self.t0, self.t1, &self.x0, &self.x1, &self.f0, &self.f1, t)
    }
}

/// Cubic Hermite interpolant through `(t0, x0, f0)` and `(t1, x1, f1)`.
pub fn hermite<T: Scalar>(t0: T, t1: T, x0: &[T], x1: &[T], f0: &[T], f1: &[T], t: T) -> Vec<T> {
    let h = t1 - t0;
    if h == T::zero() {
        return x0.to_vec();
    }
    let s = (t - t0) / h;
    let two = T::from_f64_lossy(2.0);
    let three = T::from_f64_lossy(3.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    (0..x0.len()).map(|i| h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i]).collect()
}

/// Time derivative of the cubic Hermite interpolant.
pub fn hermite_derivative<T: Scalar>(t0: T, t1: T, x0: &[T], x1: &[T], f0: &[T], f1: &[T], t: T) -> Vec<T> {
    let h = t1 - t0;
    if h == T::zero() {
        return f0.to_vec();
    }
    let s = (t - t0) / h;
    let two = T::from_f64_lossy(2.0);
    let three = T::from_f64_lossy(3.0);
    let six = T::from_f64_lossy(6.0);
    let four = T::from_f64_lossy(4.0);
    let s2 = s * s;
    let d00 = (six * s2 - six * s) / h;
    let d10 = three * s2 - four * s + T::one();
    let d01 = (-six * s2 + six * s) / h;
    let d11 = three * s2 - two * s;
    (0..x0.len()).map(|i| d00 * x0[i] + d10 * f0[i] + d01 * x1[i] + d11 * f1[i]).collect()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// A single Dormand–Prince step of size `h` from `(t, x)` with `k1 = f(t, x)`.
/// Returns the 5th-order solution, `f` at the new point, and the embedded error vector.
pub fn dopri_step<T: Scalar, F>(f: &F, t: T, x: &[T], k1: &[T], h: T) -> (Vec<T>, Vec<T>, Vec<T>)
where
    F: Fn(T, &[T], &mut [T]),
{
    let n = x.len();
    let c = |v: f64| T::from_f64_lossy(v);
    let mut tmp = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut k5 = vec![T::zero(); n];
    let mut k6 = vec![T::zero(); n];
    let mut k7 = vec![T::zero(); n];
    for i in 0..n {
        tmp[i] = x[i] + h * c(A21) * k1[i];
    }
    f(t + c(C2) * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + h * (c(A31) * k1[i] + c(A32) * k2[i]);
    }
    f(t + c(C3) * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * (c(A41) * k1[i] + c(A42) * k2[i] + c(A43) * k3[i]);
    }
    f(t + c(C4) * h, &tmp, &mut k4);
    for i in 0..n {
        tmp[i] = x[i] + h * (c(A51) * k1[i] + c(A52) * k2[i] + c(A53) * k3[i] + c(A54) * k4[i]);
    }
    f(t + c(C5) * h, &tmp, &mut k5);
    for i in 0..n {
        tmp[i] = x[i] + h * (c(A61) * k1[i] + c(A62) * k2[i] + c(A63) * k3[i] + c(A64) * k4[i] + c(A65) * k5[i]);
    }
    f(t + h, &tmp, &mut k6);
    let mut xn = vec![T::zero(); n];
    for i in 0..n {
        xn[i] = x[i] + h * (c(B1) * k1[i] + c(B3) * k3[i] + c(B4) * k4[i] + c(B5) * k5[i] + c(B6) * k6[i]);
    }
    f(t + h, &xn, &mut k7);
    let err = (0..n).map(|i| h * (c(E1) * k1[i] + c(E3) * k3[i] + c(E4) * k4[i] + c(E5) * k5[i] + c(E6) * k6[i] + c(E7) * k7[i])).collect();
    (xn, k7, err)
}

/// Adaptive stepper state.
#[derive(Debug, Clone)]
pub struct Stepper<T: Scalar> {
    pub t: T,
    pub x: Vec<T>,
    pub dx: Vec<T>,
    h: T,
    tol: Tolerances,
    steps: usize,
}

impl<T: Scalar> Stepper<T> {
    pub fn new<F>(f: &F, t0: T, x0: Vec<T>, tol: Tolerances) -> Result<Self>
    where
        F: Fn(T, &[T], &mut [T]),
    {
        let mut dx = vec![T::zero(); x0.len()];
        f(t0, &x0, &mut dx);
        if x0.iter().chain(dx.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t0.to_f64().unwrap_or(f64::NAN) });
        }
        // Initial step from the usual ||x||/||f|| heuristic.
        let sc = |i: usize| T::from_f64_lossy(tol.atol) + T::from_f64_lossy(tol.rtol) * x0[i].abs();
        let d0 = rms((0..x0.len()).map(|i| x0[i] / sc(i)));
        let d1 = rms((0..x0.len()).map(|i| dx[i] / sc(i)));
        let small = T::from_f64_lossy(1e-5);
        let mut h = if d0 < small || d1 < small { T::from_f64_lossy(1e-6) } else { T::from_f64_lossy(0.01) * d0 / d1 };
        h = h.min(T::from_f64_lossy(tol.h_max));
        Ok(Self { t: t0, x: x0, dx, h, tol, steps: 0 })
    }

    /// Take one accepted step without passing `t_limit`.
    pub fn step<F>(&mut self, f: &F, t_limit: T) -> Result<AcceptedStep<T>>
    where
        F: Fn(T, &[T], &mut [T]),
    {
        let t_f64 = |t: T| t.to_f64().unwrap_or(f64::NAN);
        loop {
            self.steps += 1;
            if self.steps > self.tol.max_steps {
                return Err(Error::StepUnderflow { t: t_f64(self.t) });
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(remaining);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h <= T::zero() {
                return Err(Error::StepUnderflow { t: t_f64(self.t) });
            }
            let (xn, fnew, err) = dopri_step(f, self.t, &self.x, &self.dx, h);
            let rtol = T::from_f64_lossy(self.tol.rtol);
            let atol = T::from_f64_lossy(self.tol.atol);
            let en = rms((0..xn.len()).map(|i| err[i] / (atol + rtol * self.x[i].abs().max(xn[i].abs()))));
            if !en.is_finite() || xn.iter().any(|v| !v.is_finite()) {
                if h < T::from_f64_lossy(self.tol.h_min) {
                    return Err(Error::NonFinite { t: t_f64(self.t) });
                }
                self.h = h * T::from_f64_lossy(0.25);
                continue;
            }
            let fac = if en == T::zero() {
                T::from_f64_lossy(5.0)
            } else {
                (T::from_f64_lossy(0.9) * en.powf(T::from_f64_lossy(-0.2))).max(T::from_f64_lossy(0.2)).min(T::from_f64_lossy(5.0))
            };
            if en <= T::one() {
                let step = AcceptedStep {
                    t0: self.t,
                    t1: if last { t_limit } else { self.t + h },
                    x0: std::mem::replace(&mut self.x, xn),
                    x1: Vec::new(),
                    f0: std::mem::replace(&mut self.dx, fnew),
                    f1: Vec::new(),
                };
                self.t = step.t1;
                let hn = if last { self.h.max(h) } else { h * fac };
                self.h = hn.min(T::from_f64_lossy(self.tol.h_max));
                return Ok(AcceptedStep { x1: self.x.clone(), f1: self.dx.clone(), ..step });
            }
            self.h = h * fac;
            if self.h < T::from_f64_lossy(self.tol.h_min) {
                return Err(Error::StepUnderflow { t: t_f64(self.t) });
            }
        }
    }

    /// Restart from a new state (after a reset map); the step size is kept.
    pub fn reset<F>(&mut self, f: &F, t: T, x: Vec<T>)
    where
        F: Fn(T, &[T], &mut [T]),
    {
        let mut dx = vec![T::zero(); x.len()];
        f(t, &x, &mut dx);
        self.t = t;
        self.x = x;
        self.dx = dx;
    }
}

fn rms<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    let mut s = T::zero();
    let mut n = 0usize;
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        return T::zero();
    }
    (s / T::from_usize(n).unwrap()).sqrt()
}

/// Integrate `x' = f(t, x)` from `t0` to `t1` without events.
pub fn solve<T: Scalar, F>(f: &F, t0: T, x0: Vec<T>, t1: T, tol: Tolerances) -> Result<Vec<T>>
where
    F: Fn(T, &[T], &mut [T]),
{
    let mut st = Stepper::new(f, t0, x0, tol)?;
    while st.t < t1 {
        st.step(f, t1)?;
    }
    Ok(st.x)
}
