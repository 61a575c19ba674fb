//! Droop-controlled grid-forming inverter. The filter capacitor sits on the
//! terminal bus, so only the filter inductor current is a device state.

use super::params::GfmParams;
use super::scalar::Scalar;
use super::transformer::{rl_derivative, Cx};

pub const GFM_STATES: usize = 7;
pub const GFM_STATE_NAMES: [&str; GFM_STATES] = ["theta", "pm", "qm", "xid", "xiq", "ifR", "ifI"];

pub const THETA: usize = 0;
pub const PM: usize = 1;
pub const QM: usize = 2;
pub const XID: usize = 3;
pub const XIQ: usize = 4;
pub const IFR: usize = 5;
pub const IFI: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfmInputs {
    pub pref: f64,
    pub qref: f64,
    pub vset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfmOutput<T> {
    pub dx: [T; GFM_STATES],
    /// Converter voltage in the RI frame.
    pub u: Cx<T>,
    /// Current injected into the terminal bus.
    pub injection: Cx<T>,
    pub p: T,
    pub q: T,
}

/// Rotation of an RI phasor into the inverter frame at angle `theta`.
pub fn to_dq<T: Scalar>(v: Cx<T>, s: T, c: T) -> Cx<T> {
    [v[0] * c + v[1] * s, -(v[0] * s) + v[1] * c]
}

pub fn from_dq<T: Scalar>(v: Cx<T>, s: T, c: T) -> Cx<T> {
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

pub fn gfm_rhs<T: Scalar>(p: &GfmParams, x: &[T], v: Cx<T>, inp: GfmInputs, w0: f64) -> GfmOutput<T> {
    let (s, c) = (x[THETA].sin(), x[THETA].cos());
    let i = [x[IFR], x[IFI]];
    let vdq = to_dq(v, s, c);
    let idq = to_dq(i, s, c);
    let pe = v[0] * i[0] + v[1] * i[1];
    let qe = v[1] * i[0] - v[0] * i[1];
    let wg = (x[PM] * -1.0 + inp.pref) * p.mp + 1.0;
    let vstar = (x[QM] * -1.0 + inp.qref) * p.mq + inp.vset;
    let ed = vstar - vdq[0];
    let eq = -vdq[1];
    let ud = vstar + ed * p.kp + x[XID] * p.ki - idq[0] * p.rv;
    let uq = eq * p.kp + x[XIQ] * p.ki - idq[1] * p.rv;
    let u = from_dq([ud, uq], s, c);
    let di = rl_derivative(p.rf, p.xf, [u[0] - v[0], u[1] - v[1]], i, w0);
    let dx = [(wg - 1.0) * w0, (pe - x[PM]) * p.wc, (qe - x[QM]) * p.wc, ed, eq, di[0], di[1]];
    GfmOutput { dx, u, injection: i, p: pe, q: qe }
}
