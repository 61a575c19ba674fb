//! Network cases, the built-in WSCC 9-bus data and its replicated scaling
//! family, and assembly into raw or composed formulations.

mod composed;
mod fixtures;
mod raw;

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dae::DaeError;
use crate::devices::{AvrParams, Device, GfmParams, LineParams, ParamError, SauerPaiParams, TransformerParams};
use crate::integrator::Event;

pub use composed::{Block, ComposedModel, UnitView};
pub use fixtures::{builtin, builtin_names, fig1_cutset, fig2_loop, fig2_source_value, default_s1_transformer, default_s2_machine, rl_ladder, s1_case, s2_case, Builtin};
pub use raw::{assemble_raw, RawSystem};

pub const DEFAULT_OMEGA0: f64 = 2.0 * PI * 60.0;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("device `{device}` references unknown bus `{bus}`")]
    UnknownBus { device: String, bus: String },
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("bus `{0}` has no shunt capacitance and no reduced-subsystem owner")]
    DanglingBus(String),
    #[error("expected exactly one slack generator, found {0}")]
    Slack(usize),
    #[error("network is not connected: bus `{0}` unreachable")]
    Disconnected(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Dae(#[from] DaeError),
    #[error("case file: {0}")]
    Parse(String),
    #[error("bus `{0}` hosts no load")]
    NoLoad(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub name: String,
    #[serde(default)]
    pub kv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    #[serde(default = "default_mva")]
    pub base_mva: f64,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    pub buses: Vec<Bus>,
    #[serde(default, rename = "device")]
    pub devices: Vec<Device>,
}

fn default_mva() -> f64 {
    100.0
}

fn default_omega0() -> f64 {
    DEFAULT_OMEGA0
}

/// Replication of the base case with random interconnections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingSpec {
    pub n: usize,
    pub seed: u64,
    pub line: LineParams,
}

impl ScalingSpec {
    pub fn new(n: usize) -> Self {
        ScalingSpec { n, seed: DEFAULT_SEED, line: WSCC_LINE_4_6 }
    }

    /// Canonical sizes are powers of two up to 128.
    pub fn is_canonical(&self) -> bool {
        self.n.is_power_of_two() && self.n <= 128
    }
}

const WSCC_LINE_4_6: LineParams = LineParams { r: 0.017, x: 0.092, b_half: 0.079 };

/// Magnetizing branch placed in every transformer.
pub const MAGNETIZING: (f64, f64) = (0.5, 50.0);

impl NetworkCase {
    /// Resolves a bus given by full name, by WSCC number (`8` → `B8`) or by
    /// number within instance 0 of a scaled case (`I0.B8`).
    pub fn resolve_bus(&self, spec: &str) -> Option<&str> {
        let candidates = [spec.to_string(), format!("B{spec}"), format!("I0.{spec}"), format!("I0.B{spec}")];
        candidates.iter().find_map(|c| self.buses.iter().find(|b| &b.name == c).map(|b| b.name.as_str()))
    }

    /// Events scaling every load admittance at `bus` by `1 + fraction` at
    /// `time`.
    pub fn load_step(&self, bus: &str, fraction: f64, time: f64) -> Result<Vec<Event>, BuildError> {
        let name = self.resolve_bus(bus).ok_or_else(|| BuildError::UnknownBus { device: "load step".into(), bus: bus.into() })?;
        let events: Vec<Event> = self
            .devices
            .iter()
            .filter_map(|d| match d {
                Device::Load { name: load, bus: b, .. } if b == name => {
                    Some(Event { time, input: format!("{load}.s"), value: 1.0 + fraction })
                }
                _ => None,
            })
            .collect();
        if events.is_empty() {
            return Err(BuildError::NoLoad(name.into()));
        }
        Ok(events)
    }

    pub fn from_toml(text: &str) -> Result<Self, BuildError> {
        let case: NetworkCase = toml::from_str(text).map_err(|e| BuildError::Parse(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("case serializes")
    }

    pub fn bus_index(&self, name: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.name == name)
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.name() == name)
    }

    pub fn shunt(&self, bus: &str) -> f64 {
        self.devices.iter().map(|d| d.shunt_at(bus)).sum()
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.name.as_str()) {
                return Err(BuildError::Duplicate(b.name.clone()));
            }
        }
        let mut names = HashSet::new();
        for d in &self.devices {
            if !names.insert(d.name()) {
                return Err(BuildError::Duplicate(d.name().to_string()));
            }
            for b in d.buses() {
                if !seen.contains(b) {
                    return Err(BuildError::UnknownBus { device: d.name().into(), bus: b.into() });
                }
            }
            d.validate()?;
        }
        let slacks = self.devices.iter().filter(|d| matches!(d, Device::Generator { slack: true, .. })).count();
        let has_gen = self.devices.iter().any(|d| matches!(d, Device::Generator { .. } | Device::Gfm { .. }));
        if has_gen && slacks != 1 {
            return Err(BuildError::Slack(slacks));
        }
        // connectivity over branch devices
        if self.buses.is_empty() {
            return Ok(());
        }
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for d in &self.devices {
            if let Device::Line { from, to, .. } | Device::Transformer { from, to, .. } = d {
                let (a, b) = (self.bus_index(from).unwrap(), self.bus_index(to).unwrap());
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        let root = find(&mut parent, 0);
        for k in 1..self.buses.len() {
            if find(&mut parent, k) != root {
                return Err(BuildError::Disconnected(self.buses[k].name.clone()));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> DeviceCounts {
        let mut c = DeviceCounts { buses: self.buses.len(), ..Default::default() };
        for d in &self.devices {
            match d {
                Device::Generator { .. } => c.sgs += 1,
                Device::Gfm { .. } => c.inverters += 1,
                Device::Line { .. } => c.lines += 1,
                Device::Transformer { .. } => c.transformers += 1,
                Device::Load { .. } => c.loads += 1,
                _ => {}
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DeviceCounts {
    pub buses: usize,
    pub sgs: usize,
    pub inverters: usize,
    pub lines: usize,
    pub transformers: usize,
    pub loads: usize,
}

/// One row of `counts.csv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountsRow {
    pub case: String,
    pub devices: DeviceCounts,
    pub states: usize,
    pub algebraic: usize,
}

impl CountsRow {
    pub const HEADER: &'static str = "case,buses,states,algebraic,sgs,inverters,lines,transformers";
}

impl fmt::Display for CountsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.devices;
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.case, d.buses, self.states, self.algebraic, d.sgs, d.inverters, d.lines, d.transformers
        )
    }
}

/// Device and variable counts of `case` given a system's state and
/// algebraic variable counts.
pub fn report_counts(case: &NetworkCase, states: usize, algebraic: usize) -> CountsRow {
    CountsRow { case: case.name.clone(), devices: case.counts(), states, algebraic }
}

fn machine(h: f64, xd: f64, xd_p: f64, xd_pp: f64, xq: f64, xq_p: f64, xq_pp: f64, xl: f64, td: f64, tq: f64) -> SauerPaiParams {
    SauerPaiParams {
        xd,
        xd_p,
        xd_pp,
        xq,
        xq_p,
        xq_pp,
        xl,
        ra: 0.0,
        td0_p: td,
        tq0_p: tq,
        td0_pp: 0.03,
        tq0_pp: 0.05,
        h,
        d: 2.0,
    }
}

/// WSCC 9-bus system with the bus-3 machine replaced by a grid-forming
/// inverter. Every transformer carries a magnetizing branch.
pub fn base_case() -> NetworkCase {
    let bus = |n: usize, kv: f64| Bus { name: format!("B{n}"), kv };
    let mut buses = vec![bus(1, 16.5), bus(2, 18.0), bus(3, 13.8)];
    buses.extend((4..=9).map(|n| bus(n, 230.0)));
    let (rm, xm) = MAGNETIZING;
    let tr = |name: &str, from: usize, to: usize, x: f64| Device::Transformer {
        name: name.into(),
        from: format!("B{from}"),
        to: format!("B{to}"),
        params: TransformerParams::from_leakage(0.0, x, rm, xm),
    };
    let line = |a: usize, b: usize, r: f64, x: f64, b_half: f64| Device::Line {
        name: format!("L{a}-{b}"),
        from: format!("B{a}"),
        to: format!("B{b}"),
        params: LineParams { r, x, b_half },
    };
    let load = |n: usize, p: f64, q: f64| Device::Load { name: format!("LD{n}"), bus: format!("B{n}"), p, q };
    let devices = vec![
        Device::Generator {
            name: "G1".into(),
            bus: "B1".into(),
            machine: machine(23.64, 0.146, 0.0608, 0.045, 0.0969, 0.0969, 0.05, 0.0336, 8.96, 0.31),
            avr: AvrParams::default(),
            p: 0.716,
            v: 1.04,
            slack: true,
        },
        Device::Generator {
            name: "G2".into(),
            bus: "B2".into(),
            machine: machine(6.4, 0.8958, 0.1198, 0.09, 0.8645, 0.1969, 0.1, 0.0521, 6.0, 0.535),
            avr: AvrParams::default(),
            p: 1.63,
            v: 1.025,
            slack: false,
        },
        Device::Gfm { name: "GFM3".into(), bus: "B3".into(), params: GfmParams::default(), p: 0.85, v: 1.025 },
        tr("T1", 1, 4, 0.0576),
        tr("T2", 2, 7, 0.0625),
        tr("T3", 3, 9, 0.0586),
        line(4, 5, 0.01, 0.085, 0.088),
        line(4, 6, 0.017, 0.092, 0.079),
        line(5, 7, 0.032, 0.161, 0.153),
        line(6, 9, 0.039, 0.17, 0.179),
        line(7, 8, 0.0085, 0.072, 0.0745),
        line(8, 9, 0.0119, 0.1008, 0.1045),
        load(5, 1.25, 0.5),
        load(6, 0.9, 0.3),
        load(8, 1.0, 0.35),
    ];
    NetworkCase { name: "c1".into(), base_mva: 100.0, omega0: DEFAULT_OMEGA0, buses, devices }
}

/// Prefix used for replica `k` of an `n`-instance case.
pub fn instance_prefix(n: usize, k: usize) -> String {
    if n > 1 {
        format!("I{k}.")
    } else {
        String::new()
    }
}

fn rename(d: &Device, pre: &str) -> Device {
    let p = |s: &String| format!("{pre}{s}");
    let mut d = d.clone();
    match &mut d {
        Device::Line { name, from, to, .. } | Device::Transformer { name, from, to, .. } => {
            *name = p(name);
            *from = p(from);
            *to = p(to);
        }
        Device::Load { name, bus, .. }
        | Device::Generator { name, bus, .. }
        | Device::Gfm { name, bus, .. }
        | Device::Source { name, bus, .. }
        | Device::Shunt { name, bus, .. } => {
            *name = p(name);
            *bus = p(bus);
        }
    }
    d
}

/// Number of interconnection lines for `n` instances.
pub fn interconnect_count(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        2 => 1,
        _ => n,
    }
}

/// `n` renamed replicas of [`base_case`] joined by random lines between
/// load buses: a random spanning tree over instances plus extra lines.
pub fn scale_case(spec: &ScalingSpec) -> NetworkCase {
    let base = base_case();
    let n = spec.n.max(1);
    if n == 1 {
        return base;
    }
    if !spec.is_canonical() {
        log::warn!("n={n} is not a table size; using {} interconnect lines", interconnect_count(n));
    }
    let mut case = NetworkCase {
        name: format!("n{n}"),
        base_mva: base.base_mva,
        omega0: base.omega0,
        buses: Vec::with_capacity(9 * n),
        devices: Vec::with_capacity(base.devices.len() * n + n),
    };
    if let Some(k) = n.checked_ilog2().filter(|_| spec.is_canonical()) {
        case.name = format!("c{}", k + 1);
    }
    for k in 0..n {
        let pre = instance_prefix(n, k);
        case.buses.extend(base.buses.iter().map(|b| Bus { name: format!("{pre}{}", b.name), kv: b.kv }));
        for d in &base.devices {
            let mut r = rename(d, &pre);
            if let Device::Generator { slack, .. } = &mut r {
                *slack = *slack && k == 0;
            }
            case.devices.push(r);
        }
    }
    let load_buses = ["B5", "B6", "B8"];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|k| (order[k], order[rng.gen_range(0..k)])).collect();
    while pairs.len() < interconnect_count(n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut used = HashSet::new();
    for (k, (a, b)) in pairs.into_iter().enumerate() {
        let (ba, bb) = loop {
            let ba = format!("{}{}", instance_prefix(n, a), load_buses[rng.gen_range(0..3)]);
            let bb = format!("{}{}", instance_prefix(n, b), load_buses[rng.gen_range(0..3)]);
            if used.insert((ba.clone(), bb.clone())) {
                break (ba, bb);
            }
        };
        case.devices.push(Device::Line { name: format!("X{k}"), from: ba, to: bb, params: spec.line });
    }
    case
}

/// Canonical case `c1`..`c8` (`n = 2^(k-1)`).
pub fn table_case(id: &str) -> Option<NetworkCase> {
    let k: u32 = id.strip_prefix('c')?.parse().ok()?;
    if !(1..=8).contains(&k) {
        return None;
    }
    Some(scale_case(&ScalingSpec::new(1 << (k - 1))))
}
