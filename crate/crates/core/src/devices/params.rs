use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid {device} parameters: {reason}")]
pub struct ParamError {
    pub device: &'static str,
    pub reason: String,
}

fn check(ok: bool, device: &'static str, reason: &str) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError { device, reason: reason.to_string() })
    }
}

/// T-equivalent transformer: primary leakage (1), secondary leakage (2) and
/// magnetizing branch (3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub r1: f64,
    pub x1: f64,
    pub r2: f64,
    pub x2: f64,
    pub r3: f64,
    pub x3: f64,
}

impl TransformerParams {
    /// Splits a series leakage reactance evenly and adds a magnetizing branch.
    pub fn from_leakage(r: f64, x: f64, r_m: f64, x_m: f64) -> Self {
        TransformerParams { r1: r / 2.0, x1: x / 2.0, r2: r / 2.0, x2: x / 2.0, r3: r_m, x3: x_m }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.x1 > 0.0 && self.x2 > 0.0 && self.x3 > 0.0, "transformer", "reactances must be positive")?;
        check(self.r1 >= 0.0 && self.r2 >= 0.0 && self.r3 >= 0.0, "transformer", "resistances must be non-negative")
    }
}

/// Sixth-order machine with dynamic stator flux.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SauerPaiParams {
    pub xd: f64,
    pub xd_p: f64,
    pub xd_pp: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub xq_pp: f64,
    pub xl: f64,
    pub ra: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub td0_pp: f64,
    pub tq0_pp: f64,
    /// Inertia constant (s).
    pub h: f64,
    /// Damping (pu torque per pu speed deviation).
    pub d: f64,
}

impl SauerPaiParams {
    pub fn gd1(&self) -> f64 {
        (self.xd_pp - self.xl) / (self.xd_p - self.xl)
    }

    pub fn gd2(&self) -> f64 {
        (1.0 - self.gd1()) / (self.xd_p - self.xl)
    }

    pub fn gq1(&self) -> f64 {
        (self.xq_pp - self.xl) / (self.xq_p - self.xl)
    }

    pub fn gq2(&self) -> f64 {
        (1.0 - self.gq1()) / (self.xq_p - self.xl)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let d = "machine";
        check(self.xd >= self.xd_p && self.xd_p >= self.xd_pp && self.xd_pp > self.xl && self.xl >= 0.0, d, "d-axis reactances out of order")?;
        check(self.xq >= self.xq_p && self.xq_p >= self.xq_pp && self.xq_pp > self.xl, d, "q-axis reactances out of order")?;
        check(self.xd_p > self.xl && self.xq_p > self.xl, d, "transient reactances must exceed leakage")?;
        check(
            self.td0_p > 0.0 && self.tq0_p > 0.0 && self.td0_pp > 0.0 && self.tq0_pp > 0.0 && self.h > 0.0,
            d,
            "time constants must be positive",
        )?;
        check(self.ra >= 0.0 && self.d >= 0.0, d, "resistance and damping must be non-negative")
    }
}

/// Type I exciter with measurement lag and rate feedback, no ceiling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvrParams {
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub tr: f64,
}

impl Default for AvrParams {
    fn default() -> Self {
        AvrParams { ka: 20.0, ta: 0.2, ke: 1.0, te: 0.314, kf: 0.063, tf: 0.35, tr: 0.02 }
    }
}

impl AvrParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(
            self.ta > 0.0 && self.te > 0.0 && self.tf > 0.0 && self.tr > 0.0,
            "avr",
            "time constants must be positive",
        )
    }
}

/// Droop-controlled grid-forming inverter behind an LC filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfmParams {
    /// P-f droop (pu frequency per pu power).
    pub mp: f64,
    /// Q-V droop (pu voltage per pu reactive power).
    pub mq: f64,
    pub kp: f64,
    pub ki: f64,
    /// Virtual resistance of the inner loop.
    pub rv: f64,
    /// Power measurement filter cut-off (rad/s).
    pub wc: f64,
    pub rf: f64,
    pub xf: f64,
    pub bc: f64,
}

impl Default for GfmParams {
    fn default() -> Self {
        GfmParams { mp: 0.05, mq: 0.05, kp: 0.59, ki: 736.0, rv: 0.2, wc: 50.0, rf: 0.005, xf: 0.15, bc: 0.08 }
    }
}

impl GfmParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.xf > 0.0 && self.bc > 0.0, "gfm", "filter reactance and capacitance must be positive")?;
        check(self.wc > 0.0 && self.ki > 0.0, "gfm", "filter cut-off and integral gain must be positive")
    }
}

/// Nominal pi-section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub r: f64,
    pub x: f64,
    /// Half of the total charging susceptance, placed at each end.
    pub b_half: f64,
}

impl LineParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.x > 0.0 && self.r >= 0.0 && self.b_half >= 0.0, "line", "need x > 0, r >= 0, b >= 0")
    }
}

/// Series RL load branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub r: f64,
    pub x: f64,
}

impl LoadParams {
    /// Impedance drawing `p + jq` at 1 pu voltage.
    pub fn from_power(p: f64, q: f64) -> Self {
        let s2 = p * p + q * q;
        LoadParams { r: p / s2, x: q / s2 }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.x > 0.0 && self.r >= 0.0, "load", "need x > 0 and r >= 0")
    }
}
