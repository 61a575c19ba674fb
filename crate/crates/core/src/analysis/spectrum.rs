use nalgebra::DMatrix;
use num_complex::Complex64;

use super::AnalysisError;
use crate::dae::{numeric_nullity, CompiledDae};
use crate::integrator::OdeModel;

/// `f_x` of an explicit model at `y`.
pub fn state_matrix_ode<M: OdeModel + ?Sized>(model: &mut M, t: f64, y: &[f64]) -> Result<DMatrix<f64>, AnalysisError> {
    let n = model.dim();
    let mut j = DMatrix::zeros(n, n);
    model.jacobian(t, y, &mut j)?;
    Ok(j)
}

/// `A = f_x − f_z g_z⁻¹ g_x` over the differential variables.
pub fn state_matrix(dae: &CompiledDae, t: f64, x: &[f64], z: &[f64]) -> Result<DMatrix<f64>, AnalysisError> {
    let (n, m) = (dae.n_diff(), dae.n_alg());
    let mut ws = dae.workspace();
    let j = dae.jacobian(t, x, z, &mut ws)?;
    let fx = j.view((0, 0), (n, n)).into_owned();
    if m == 0 {
        return Ok(fx);
    }
    let fz = j.view((0, n), (n, m));
    let gx = j.view((n, 0), (m, n));
    let gz = j.view((n, n), (m, m)).into_owned();
    let nullity = numeric_nullity(&gz);
    if nullity > 0 {
        return Err(AnalysisError::SingularGz { nullity });
    }
    let lu = gz.lu();
    let s = lu.solve(&gx.into_owned()).ok_or(AnalysisError::SingularGz { nullity: 1 })?;
    Ok(fx - fz * s)
}

fn to_faer(a: &DMatrix<f64>) -> Result<faer::Mat<f64>, AnalysisError> {
    if a.nrows() != a.ncols() {
        return Err(AnalysisError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]))
}

fn sort_spectrum(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Eigenvalues of a dense real matrix (Hessenberg reduction and shifted
/// QR), sorted by real part then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, AnalysisError> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let m = to_faer(a)?;
    let ev = m.eigenvalues().map_err(|e| AnalysisError::Eigen(format!("{e:?}")))?;
    let mut v: Vec<Complex64> = ev.iter().map(|z| Complex64::new(z.re, z.im)).collect();
    sort_spectrum(&mut v);
    Ok(v)
}

/// Largest `‖Av − λv‖ / (‖A‖‖v‖)` over all eigenpairs (Frobenius norm of
/// `A`).
pub fn eigen_residual(a: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    let m = to_faer(a)?;
    let eig = m.eigen().map_err(|e| AnalysisError::Eigen(format!("{e:?}")))?;
    let (vals, vecs) = (eig.S(), eig.U());
    let n = a.nrows();
    let norm_a = a.norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for k in 0..n {
        let z = vals[k];
        let lam = Complex64::new(z.re, z.im);
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::new(vecs[(i, k)].re, vecs[(i, k)].im)).collect();
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut r = 0.0;
        for i in 0..n {
            let av: Complex64 = (0..n).map(|j| v[j] * a[(i, j)]).sum();
            r += (av - lam * v[i]).norm_sqr();
        }
        worst = worst.max(r.sqrt() / (vn * norm_a));
    }
    Ok(worst)
}

/// Monic characteristic polynomial `λⁿ + c₁λⁿ⁻¹ + … + cₙ` by the
/// Faddeev–LeVerrier recursion; returns `[1, c₁, …, cₙ]`.
pub fn charpoly_coefficients(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m;
        for i in 0..n {
            m[(i, i)] += c[k - 1];
        }
        let am = a * &m;
        c.push(-am.trace() / k as f64);
    }
    c
}

/// Roots of a polynomial given by descending coefficients
/// (Durand–Kerner iteration), sorted like [`eigenvalues`].
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let lead = coeffs[0];
    let c: Vec<f64> = coeffs.iter().map(|v| v / lead).collect();
    let n = c.len() - 1;
    let radius = 1.0 + c[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius).collect();
    let eval = |x: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * x + ci);
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm() / z[i].norm().max(1.0));
        }
        if delta < 1e-15 {
            break;
        }
    }
    // polish each root with Newton on the polynomial
    let deriv: Vec<f64> = c[..n].iter().enumerate().map(|(k, v)| v * (n - k) as f64).collect();
    let deval = |x: Complex64| deriv.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * x + ci);
    for r in z.iter_mut() {
        for _ in 0..3 {
            let d = deval(*r);
            if d.norm() > 0.0 {
                *r -= eval(*r) / d;
            }
        }
    }
    sort_spectrum(&mut z);
    z
}
