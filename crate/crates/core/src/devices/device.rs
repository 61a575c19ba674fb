use serde::{Deserialize, Serialize};

use super::params::{AvrParams, GfmParams, LineParams, LoadParams, ParamError, SauerPaiParams, TransformerParams};

/// A device instance attached to named buses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Device {
    /// Pi-section between `from` and `to`.
    Line { name: String, from: String, to: String, params: LineParams },
    /// T-equivalent transformer; `from` is the primary side.
    Transformer { name: String, from: String, to: String, params: TransformerParams },
    /// Constant-impedance load drawing `p + jq` at 1 pu.
    Load { name: String, bus: String, p: f64, q: f64 },
    /// Synchronous machine with exciter, regulated to `v` at `p` output.
    Generator {
        name: String,
        bus: String,
        machine: SauerPaiParams,
        #[serde(default)]
        avr: AvrParams,
        p: f64,
        v: f64,
        #[serde(default)]
        slack: bool,
    },
    /// Grid-forming inverter with LC filter.
    Gfm {
        name: String,
        bus: String,
        #[serde(default)]
        params: GfmParams,
        p: f64,
        v: f64,
    },
    /// Series RL behind a held EMF `e` (RI components).
    Source { name: String, bus: String, r: f64, x: f64, e: [f64; 2] },
    /// Shunt capacitor.
    Shunt { name: String, bus: String, b: f64 },
}

impl Device {
    pub fn name(&self) -> &str {
        match self {
            Device::Line { name, .. }
            | Device::Transformer { name, .. }
            | Device::Load { name, .. }
            | Device::Generator { name, .. }
            | Device::Gfm { name, .. }
            | Device::Source { name, .. }
            | Device::Shunt { name, .. } => name,
        }
    }

    pub fn buses(&self) -> Vec<&str> {
        match self {
            Device::Line { from, to, .. } | Device::Transformer { from, to, .. } => vec![from, to],
            Device::Load { bus, .. }
            | Device::Generator { bus, .. }
            | Device::Gfm { bus, .. }
            | Device::Source { bus, .. }
            | Device::Shunt { bus, .. } => vec![bus],
        }
    }

    /// Shunt susceptance this device places on `bus`.
    pub fn shunt_at(&self, bus: &str) -> f64 {
        match self {
            Device::Line { from, to, params, .. } => {
                params.b_half * ((from == bus) as u8 + (to == bus) as u8) as f64
            }
            Device::Gfm { bus: b, params, .. } if b == bus => params.bc,
            Device::Shunt { bus: b, b: susceptance, .. } if b == bus => *susceptance,
            _ => 0.0,
        }
    }

    pub fn load_params(&self) -> Option<LoadParams> {
        match self {
            Device::Load { p, q, .. } => Some(LoadParams::from_power(*p, *q)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        match self {
            Device::Line { params, .. } => params.validate(),
            Device::Transformer { params, .. } => params.validate(),
            Device::Load { .. } => self.load_params().unwrap().validate(),
            Device::Generator { machine, avr, .. } => machine.validate().and_then(|_| avr.validate()),
            Device::Gfm { params, .. } => params.validate(),
            Device::Source { r, x, .. } => LoadParams { r: *r, x: *x }.validate(),
            Device::Shunt { b, .. } => {
                if *b > 0.0 {
                    Ok(())
                } else {
                    Err(ParamError { device: "shunt", reason: "susceptance must be positive".into() })
                }
            }
        }
    }
}
