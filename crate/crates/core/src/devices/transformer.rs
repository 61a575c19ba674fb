use super::params::TransformerParams;
use super::scalar::Scalar;

pub type Cx<T> = [T; 2];

/// `i3 = i1 − i2`.
pub fn transformer_magnetizing<T: Scalar>(i1: Cx<T>, i2: Cx<T>) -> Cx<T> {
    [i1[0] - i2[0], i1[1] - i2[1]]
}

/// `(X/ω0) di = v − R i ± X i'` for a series RL branch in the RI frame.
pub fn rl_derivative<T: Scalar>(r: f64, x: f64, v: Cx<T>, i: Cx<T>, w0: f64) -> Cx<T> {
    let k = w0 / x;
    [(v[0] - i[0] * r + i[1] * x) * k, (v[1] - i[1] * r - i[0] * x) * k]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct S1Output<T> {
    pub v3: Cx<T>,
    pub di1: Cx<T>,
    pub di2: Cx<T>,
}

/// Reduced transformer with the magnetizing node voltage in closed form.
pub fn s1_rhs<T: Scalar>(p: &TransformerParams, v1: Cx<T>, v2: Cx<T>, i1: Cx<T>, i2: Cx<T>, w0: f64) -> S1Output<T> {
    let den = 1.0 / p.x1 + 1.0 / p.x2 + 1.0 / p.x3;
    let a = p.r3 / p.x3 - p.r1 / p.x1;
    let b = p.r3 / p.x3 - p.r2 / p.x2;
    let v3 = [0, 1].map(|k| (v1[k] / p.x1 + v2[k] / p.x2 + i1[k] * a - i2[k] * b) / den);
    let di1 = rl_derivative(p.r1, p.x1, [v1[0] - v3[0], v1[1] - v3[1]], i1, w0);
    let di2 = rl_derivative(p.r2, p.x2, [v3[0] - v2[0], v3[1] - v2[1]], i2, w0);
    S1Output { v3, di1, di2 }
}

/// Returns `(v3, d/dt i1, d/dt i2)`.
pub fn transformer_reduced_rhs(
    p: &TransformerParams,
    v1: Cx<f64>,
    v2: Cx<f64>,
    i1: Cx<f64>,
    i2: Cx<f64>,
    w0: f64,
) -> (Cx<f64>, Cx<f64>, Cx<f64>) {
    let o = s1_rhs(p, v1, v2, i1, i2, w0);
    (o.v3, o.di1, o.di2)
}
