use nalgebra::DMatrix;

use crate::dae::{CompiledDae, DaeError};

/// Fixed-step BDF coefficients `α_0 … α_k` with `Σ α_i x_{n−i} = h f(x_n)`.
pub fn bdf_coefficients(k: usize) -> Vec<f64> {
    match k {
        1 => vec![1.0, -1.0],
        2 => vec![1.5, -2.0, 0.5],
        3 => vec![11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
        4 => vec![25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25],
        5 => vec![137.0 / 60.0, -5.0, 5.0, -10.0 / 3.0, 1.25, -0.2],
        _ => panic!("BDF order must be between 1 and 5, got {k}"),
    }
}

#[derive(Clone, Debug)]
pub struct NewtonMatrixProbe {
    pub h: f64,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    /// `[α₀I − h f_x, −h f_z; g_x, g_z]`
    pub matrix: DMatrix<f64>,
    /// 1-norm condition number; infinite when the matrix is singular.
    pub cond: f64,
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn condition_1(m: &DMatrix<f64>) -> f64 {
    match m.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => norm1(m) * norm1(&inv),
        _ => f64::INFINITY,
    }
}

/// Newton iteration matrix of the `k`-step BDF method applied to the DAE at
/// `(t, x, z)` with step `h`.
pub fn newton_iteration_matrix(
    dae: &CompiledDae,
    t: f64,
    x: &[f64],
    z: &[f64],
    h: f64,
    k: usize,
) -> Result<NewtonMatrixProbe, DaeError> {
    assert!(h > 0.0, "step size must be positive");
    let alpha = bdf_coefficients(k);
    let mut ws = dae.workspace();
    let j = dae.jacobian(t, x, z, &mut ws)?;
    let n = dae.n_diff();
    let mut m = j;
    for r in 0..n {
        for c in 0..m.ncols() {
            m[(r, c)] *= -h;
        }
        m[(r, r)] += alpha[0];
    }
    let cond = condition_1(&m);
    Ok(NewtonMatrixProbe { h, alpha0: alpha[0], alpha, matrix: m, cond })
}

#[derive(Clone, Debug)]
pub struct ConditioningSweep {
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of `log cond` against `log h`.
    pub slope: f64,
}

impl ConditioningSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,cond\n");
        for (h, c) in &self.rows {
            s.push_str(&format!("{h:.16e},{c:.16e}\n"));
        }
        s
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn conditioning_sweep(
    dae: &CompiledDae,
    t: f64,
    x: &[f64],
    z: &[f64],
    hs: &[f64],
    k: usize,
) -> Result<ConditioningSweep, DaeError> {
    let rows = hs
        .iter()
        .map(|&h| newton_iteration_matrix(dae, t, x, z, h, k).map(|p| (h, p.cond)))
        .collect::<Result<Vec<_>, _>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    Ok(ConditioningSweep { slope: ls_slope(&lx, &ly), rows })
}
