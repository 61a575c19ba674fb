//! Hand-reduced machine, stator and transformer unit: the two stator KCL
//! constraints and the two magnetizing-node constraints are replaced by a
//! 4×4 linear solve for the magnetizing-node and terminal voltages.

use super::params::{AvrParams, SauerPaiParams, TransformerParams};
use super::scalar::Scalar;
use super::transformer::{rl_derivative, transformer_magnetizing, Cx};

/// Machine states, AVR states, transformer secondary current.
pub const UNIT_STATES: usize = 14;

/// Suffixes of the machine and AVR state names, in layout order.
pub const MACHINE_STATE_NAMES: [&str; 12] =
    ["delta", "omega", "psid", "psiq", "eqp", "edp", "psi1d", "psi2q", "avr_vm", "avr_vr1", "avr_vf", "avr_vr2"];

pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const PSID: usize = 2;
pub const PSIQ: usize = 3;
pub const EQP: usize = 4;
pub const EDP: usize = 5;
pub const PSI1D: usize = 6;
pub const PSI2Q: usize = 7;
pub const VM: usize = 8;
pub const VR1: usize = 9;
pub const VF: usize = 10;
pub const VR2: usize = 11;
pub const I2R: usize = 12;
pub const I2I: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceSolve<T> {
    pub phi_dq: T,
    pub phi_qd: T,
    pub theta: T,
    pub beta_r: T,
    pub beta_i: T,
    pub gamma_d1: T,
    pub gamma_q1: T,
    /// Rows `[r1R, r1I, r2R, r2I]`, unknowns `[v3R, v3I, v1R, v1I]`.
    pub matrix: [[T; 4]; 4],
    pub rhs: [T; 4],
    pub v3: Cx<T>,
    pub v1: Cx<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MachineInternals<T> {
    pub id: T,
    pub iq: T,
    pub i1: Cx<T>,
    pub i3: Cx<T>,
    pub deqp: T,
    pub dedp: T,
    pub dpsi1d: T,
    pub dpsi2q: T,
}

/// Stator currents from flux states.
pub fn stator_currents<T: Scalar>(p: &SauerPaiParams, x: &[T]) -> (T, T) {
    let gd1 = p.gd1();
    let gq1 = p.gq1();
    let id = (-x[PSID] + x[EQP] * gd1 + x[PSI1D] * (1.0 - gd1)) / p.xd_pp;
    let iq = (-x[PSIQ] - x[EDP] * gq1 + x[PSI2Q] * (1.0 - gq1)) / p.xq_pp;
    (id, iq)
}

/// Machine quantities that do not depend on the terminal voltage.
pub fn machine_internals<T: Scalar>(p: &SauerPaiParams, x: &[T]) -> MachineInternals<T> {
    let (id, iq) = stator_currents(p, x);
    let (s, c) = (x[DELTA].sin(), x[DELTA].cos());
    let i1 = [id * s + iq * c, -(id * c) + iq * s];
    let i3 = transformer_magnetizing(i1, [x[I2R], x[I2I]]);
    let (gd1, gd2, gq1, gq2) = (p.gd1(), p.gd2(), p.gq1(), p.gq2());
    let deqp = (-((id * gd1 - x[PSI1D] * gd2 + x[EQP] * gd2) * (p.xd - p.xd_p)) - x[EQP] + x[VF]) / p.td0_p;
    let dedp = ((iq * gq1 - x[PSI2Q] * gq2 - x[EDP] * gq2) * (p.xq - p.xq_p) - x[EDP]) / p.tq0_p;
    let dpsi1d = (-x[PSI1D] + x[EQP] - id * (p.xd_p - p.xl)) / p.td0_pp;
    let dpsi2q = (-x[PSI2Q] - x[EDP] - iq * (p.xq_p - p.xl)) / p.tq0_pp;
    MachineInternals { id, iq, i1, i3, deqp, dedp, dpsi1d, dpsi2q }
}

/// Assembles and solves the interface system for `(v3, v1)` by eliminating
/// `v3` through the diagonal upper-left block (Schur complement).
pub fn solve_interface_voltages<T: Scalar>(
    p: &SauerPaiParams,
    t: &TransformerParams,
    x: &[T],
    v2: Cx<T>,
    w0: f64,
) -> InterfaceSolve<T> {
    let mi = machine_internals(p, x);
    let (id, iq, i1, i3) = (mi.id, mi.iq, mi.i1, mi.i3);
    let i2 = [x[I2R], x[I2I]];
    let (s, c) = (x[DELTA].sin(), x[DELTA].cos());
    let omega = x[OMEGA];
    let gd1 = p.gd1();
    let gq1 = p.gq1();
    let gamma_d1 = (mi.deqp * gd1 + mi.dpsi1d * (1.0 - gd1)) / w0;
    let gamma_q1 = (-(mi.dedp * gq1) + mi.dpsi2q * (1.0 - gq1)) / w0;
    let ddelta = (omega - 1.0) * w0;
    let phi_dq = s * s / p.xd_pp + c * c / p.xq_pp;
    let phi_qd = c * c / p.xd_pp + s * s / p.xq_pp;
    let theta = s * c * (-1.0 / p.xd_pp + 1.0 / p.xq_pp);
    let ad = (gamma_d1 - id * p.ra - omega * x[PSIQ]) * (w0 / p.xd_pp);
    let aq = (gamma_q1 - iq * p.ra + omega * x[PSID]) * (w0 / p.xq_pp);
    let beta_r = (id * ddelta + aq) * c + (-(iq * ddelta) + ad) * s;
    let beta_i = (id * ddelta + aq) * s + (iq * ddelta - ad) * c;

    let r1 = [
        beta_r / w0 + i1[0] * (t.r1 / t.x1) - i1[1],
        beta_i / w0 + i1[1] * (t.r1 / t.x1) + i1[0],
    ];
    let r2 = [
        beta_r / w0 + v2[0] / t.x2 + i2[0] * (t.r2 / t.x2) + i3[0] * (t.r3 / t.x3) - i2[1] - i3[1],
        beta_i / w0 + v2[1] / t.x2 + i2[1] * (t.r2 / t.x2) + i3[1] * (t.r3 / t.x3) + i2[0] + i3[0],
    ];
    let inv_x1 = 1.0 / t.x1;
    let y23 = 1.0 / t.x3 + 1.0 / t.x2;
    let z = T::cst(0.0);
    let b = [[phi_dq + inv_x1, theta], [theta, phi_qd + inv_x1]];
    let d = [[phi_dq, theta], [theta, phi_qd]];
    let matrix = [
        [T::cst(-inv_x1), z, b[0][0], b[0][1]],
        [z, T::cst(-inv_x1), b[1][0], b[1][1]],
        [T::cst(y23), z, d[0][0], d[0][1]],
        [z, T::cst(y23), d[1][0], d[1][1]],
    ];
    let rhs = [r1[0], r1[1], r2[0], r2[1]];

    let kappa = t.x1 * y23;
    let sm = [
        [d[0][0] + b[0][0] * kappa, d[0][1] + b[0][1] * kappa],
        [d[1][0] + b[1][0] * kappa, d[1][1] + b[1][1] * kappa],
    ];
    let sr = [r2[0] + r1[0] * kappa, r2[1] + r1[1] * kappa];
    let det = sm[0][0] * sm[1][1] - sm[0][1] * sm[1][0];
    let v1 = [(sr[0] * sm[1][1] - sr[1] * sm[0][1]) / det, (sm[0][0] * sr[1] - sm[1][0] * sr[0]) / det];
    let v3 = [
        -((r1[0] - (b[0][0] * v1[0] + b[0][1] * v1[1])) * t.x1),
        -((r1[1] - (b[1][0] * v1[0] + b[1][1] * v1[1])) * t.x1),
    ];
    InterfaceSolve { phi_dq, phi_qd, theta, beta_r, beta_i, gamma_d1, gamma_q1, matrix, rhs, v3, v1 }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitOutput<T> {
    pub dx: [T; UNIT_STATES],
    pub v1: Cx<T>,
    pub v3: Cx<T>,
    pub i1: Cx<T>,
    pub i3: Cx<T>,
}

/// Inputs held constant between events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitInputs {
    pub tm: f64,
    pub vref: f64,
}

pub fn unit_rhs<T: Scalar>(
    p: &SauerPaiParams,
    avr: &AvrParams,
    t: &TransformerParams,
    x: &[T],
    v2: Cx<T>,
    inp: UnitInputs,
    w0: f64,
) -> UnitOutput<T> {
    let mi = machine_internals(p, x);
    let sol = solve_interface_voltages(p, t, x, v2, w0);
    let (v1, v3) = (sol.v1, sol.v3);
    let (s, c) = (x[DELTA].sin(), x[DELTA].cos());
    let vd = v1[0] * s - v1[1] * c;
    let vq = v1[0] * c + v1[1] * s;
    let omega = x[OMEGA];
    let z = T::cst(0.0);
    let mut dx = [z; UNIT_STATES];
    dx[DELTA] = (omega - 1.0) * w0;
    let te = x[PSID] * mi.iq - x[PSIQ] * mi.id;
    dx[OMEGA] = (-te - (omega - 1.0) * p.d + inp.tm) / (2.0 * p.h);
    dx[PSID] = (mi.id * p.ra + omega * x[PSIQ] + vd) * w0;
    dx[PSIQ] = (mi.iq * p.ra - omega * x[PSID] + vq) * w0;
    dx[EQP] = mi.deqp;
    dx[EDP] = mi.dedp;
    dx[PSI1D] = mi.dpsi1d;
    dx[PSI2Q] = mi.dpsi2q;
    let vt = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
    let avr_dx = avr_rhs(avr, [x[VM], x[VR1], x[VF], x[VR2]], vt, inp.vref);
    dx[VM..=VR2].copy_from_slice(&avr_dx);
    let di2 = rl_derivative(t.r2, t.x2, [v3[0] - v2[0], v3[1] - v2[1]], [x[I2R], x[I2I]], w0);
    dx[I2R] = di2[0];
    dx[I2I] = di2[1];
    UnitOutput { dx, v1, v3, i1: mi.i1, i3: mi.i3 }
}

/// `[Vm, Vr1, Vf, Vr2]` derivatives for terminal magnitude `vt`.
pub fn avr_rhs<T: Scalar>(a: &AvrParams, s: [T; 4], vt: T, vref: f64) -> [T; 4] {
    let [vm, vr1, vf, vr2] = s;
    let fb = vf * (a.kf / a.tf);
    [
        (vt - vm) / a.tr,
        ((-vm - vr2 - fb + vref) * a.ka - vr1) / a.ta,
        -(vf * a.ke - vr1) / a.te,
        -(fb + vr2) / a.tf,
    ]
}

/// Derivatives of the machine, AVR and transformer-secondary states.
pub fn machine_transformer_reduced_rhs(
    p: &SauerPaiParams,
    t: &TransformerParams,
    avr: &AvrParams,
    x: &[f64; UNIT_STATES],
    v2: Cx<f64>,
    inp: UnitInputs,
    w0: f64,
) -> [f64; UNIT_STATES] {
    unit_rhs(p, avr, t, x, v2, inp, w0).dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Vector4};

    const W0: f64 = 2.0 * std::f64::consts::PI * 60.0;

    fn machine() -> SauerPaiParams {
        SauerPaiParams {
            xd: 0.8958,
            xd_p: 0.1198,
            xd_pp: 0.09,
            xq: 0.8645,
            xq_p: 0.1969,
            xq_pp: 0.1,
            xl: 0.0521,
            ra: 0.003,
            td0_p: 6.0,
            tq0_p: 0.535,
            td0_pp: 0.03,
            tq0_pp: 0.05,
            h: 6.4,
            d: 2.0,
        }
    }

    fn state() -> [f64; UNIT_STATES] {
        [0.7, 1.001, 0.9, -0.4, 0.8, 0.3, 0.85, -0.2, 1.0, 1.7, 1.7, -0.3, 0.9, -0.2]
    }

    #[test]
    fn schur_matches_lu() {
        let p = machine();
        let t = TransformerParams::from_leakage(0.002, 0.0625, 0.3, 30.0);
        let x = state();
        let s = solve_interface_voltages(&p, &t, &x, [1.0, 0.1], W0);
        let a = Matrix4::from_fn(|i, j| s.matrix[i][j]);
        let u = a.lu().solve(&Vector4::from_row_slice(&s.rhs)).unwrap();
        let got = [s.v3[0], s.v3[1], s.v1[0], s.v1[1]];
        for k in 0..4 {
            assert!((u[k] - got[k]).abs() <= 1e-12 * u.amax());
        }
        assert!((s.phi_dq + s.phi_qd - (1.0 / p.xd_pp + 1.0 / p.xq_pp)).abs() < 1e-12);
    }

    #[test]
    fn equal_subtransient_reactances_decouple() {
        let mut p = machine();
        p.xq_pp = p.xd_pp;
        let t = TransformerParams::from_leakage(0.002, 0.0625, 0.3, 30.0);
        let s = solve_interface_voltages(&p, &t, &state(), [1.0, 0.1], W0);
        assert_eq!(s.theta, 0.0);
    }

    #[test]
    fn avr_steady_state() {
        let a = AvrParams::default();
        let vf = 1.8;
        let vm = 1.02;
        let vr1 = a.ke * vf;
        let vr2 = -a.kf / a.tf * vf;
        let vref = vm + vr1 / a.ka;
        let d = avr_rhs(&a, [vm, vr1, vf, vr2], vm, vref);
        assert!(d.iter().all(|v| v.abs() < 1e-14), "{d:?}");
    }
}
