//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym(m).symmetric_eigenvalues().min()
}

/// Eigenvalues sorted by decreasing modulus.
pub fn eigenvalues_by_modulus(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    ev
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues_by_modulus(m).first().map(|c| c.norm()).unwrap_or(0.0)
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// Solve the discrete Lyapunov-type fixed point `X = L(X) + W` for symmetric
/// `X`, where `L` is linear on symmetric matrices and given as a closure.
pub fn solve_symmetric_fixed_point(dim: usize, lin: impl Fn(&DMatrix<f64>) -> DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let basis = sym_basis(dim);
    let k = basis.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (col, e) in basis.iter().enumerate() {
        let img = e - lin(e);
        for (row, (i, j)) in sym_index(dim).into_iter().enumerate() {
            a[(row, col)] = img[(i, j)];
        }
    }
    let rhs = DVector::from_iterator(k, sym_index(dim).into_iter().map(|(i, j)| w[(i, j)]));
    let sol = a.lu().solve(&rhs)?;
    let mut x = DMatrix::zeros(dim, dim);
    for (c, e) in basis.iter().enumerate() {
        x += e * sol[c];
    }
    Some(x)
}

/// Finite-difference weights for the first derivative at `x0` from the
/// nodes `xs` (Fornberg's recursion).
pub fn fd_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    // c[j][k]: weight of node j for derivative order k (k = 0, 1)
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Seven-point first-derivative stencil at node `i` as `(node, weight)`.
///
/// With `period = Some(T)` the grid is a closed loop whose last node
/// repeats the first; the stencil wraps around and never references the
/// last node. Otherwise it stays inside the grid (one-sided near the ends).
pub fn stencil(ts: &[f64], i: usize, period: Option<f64>) -> Vec<(usize, f64)> {
    let len = ts.len();
    match period {
        Some(t) if len >= 8 => {
            let m = len - 1;
            let i = i % m;
            let offs: Vec<isize> = (-3..=3).collect();
            let nodes: Vec<(usize, f64)> = offs
                .iter()
                .map(|&o| {
                    let j = i as isize + o;
                    let (jj, shift) = if j < 0 {
                        ((j + m as isize) as usize, -t)
                    } else if j >= m as isize {
                        ((j - m as isize) as usize, t)
                    } else {
                        (j as usize, 0.0)
                    };
                    (jj, ts[jj] + shift)
                })
                .collect();
            let xs: Vec<f64> = nodes.iter().map(|n| n.1).collect();
            let w = fd_weights(ts[i], &xs);
            nodes.iter().zip(w).map(|(n, w)| (n.0, w)).collect()
        }
        _ => {
            let width = len.min(7);
            let start = i.saturating_sub(width / 2).min(len - width);
            let w = fd_weights(ts[i], &ts[start..start + width]);
            w.into_iter().enumerate().map(|(k, w)| (start + k, w)).collect()
        }
    }
}

/// Derivative at node `i` of samples `v` on the grid `ts` (see [`stencil`]).
pub fn grid_derivative(ts: &[f64], v: &[DVector<f64>], i: usize, period: Option<f64>) -> DVector<f64> {
    let mut d = DVector::zeros(v[i].len());
    for (k, wk) in stencil(ts, i, period) {
        d += &v[k] * wk;
    }
    d
}

fn sym_index(dim: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..dim {
        for j in 0..=i {
            v.push((i, j));
        }
    }
    v
}

fn sym_basis(dim: usize) -> Vec<DMatrix<f64>> {
    sym_index(dim)
        .into_iter()
        .map(|(i, j)| {
            let mut e = DMatrix::zeros(dim, dim);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_scalar() {
        // p = a^2 p + q
        let x = solve_symmetric_fixed_point(1, |p| p * 0.25, &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert!((x[(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_matrix_matches_series() {
        let psi = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        let x = solve_symmetric_fixed_point(2, |p| psi.transpose() * p * &psi, &w).unwrap();
        let mut series = w.clone();
        let mut term = w.clone();
        for _ in 0..200 {
            term = psi.transpose() * term * &psi;
            series += &term;
        }
        assert!((x - series).norm() < 1e-12);
    }

    #[test]
    fn fd_weights_exact_on_quartics() {
        let xs = [0.0, 0.1, 0.35, 0.4, 0.7];
        let w = fd_weights(0.35, &xs);
        let d: f64 = xs.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((d - 4.0 * 0.35f64.powi(3)).abs() < 1e-10);
        let w = fd_weights(0.0, &xs);
        let d: f64 = xs.iter().zip(&w).map(|(x, w)| w * (2.0 * x - x * x * x)).sum();
        assert!((d - 2.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        assert!((spectral_radius(&r) - 2.0).abs() < 1e-12);
    }
}
