//! Small fixtures exposing the two index-2 structures, an index-1
//! reference network, and the two subsystems with hand-derived models.

use crate::dae::SemiExplicitDae;
use crate::devices::{AvrParams, Device, SauerPaiParams, TransformerParams};
use crate::expr::ExpressionGraph;
use crate::structural::{CircuitGraph, EdgeKind};

use super::{assemble_raw, base_case, table_case, BuildError, Bus, NetworkCase, RawSystem, DEFAULT_OMEGA0};

pub enum Builtin {
    Network(NetworkCase),
    Raw(RawSystem),
}

impl Builtin {
    pub fn raw(&self) -> Result<RawSystem, BuildError> {
        match self {
            Builtin::Network(c) => assemble_raw(c),
            Builtin::Raw(r) => Ok(r.clone()),
        }
    }

    pub fn case(&self) -> Option<&NetworkCase> {
        match self {
            Builtin::Network(c) => Some(c),
            Builtin::Raw(_) => None,
        }
    }
}

pub fn builtin_names() -> Vec<&'static str> {
    vec!["wscc9", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "fig1-cutset", "fig2-loop", "rl-ladder", "s1", "s2"]
}

pub fn builtin(name: &str) -> Option<Builtin> {
    Some(match name {
        "wscc9" => Builtin::Network(base_case()),
        "fig1-cutset" => Builtin::Network(fig1_cutset()),
        "fig2-loop" => Builtin::Raw(fig2_loop()),
        "rl-ladder" => Builtin::Raw(rl_ladder()),
        "s1" => Builtin::Network(s1_case(&default_s1_transformer())),
        "s2" => Builtin::Network(s2_case(&default_s2_machine(), &default_s1_transformer())),
        _ => Builtin::Network(table_case(name)?),
    })
}

fn bus(name: &str) -> Bus {
    Bus { name: name.into(), kv: 1.0 }
}

fn source(name: &str, bus: &str, e: [f64; 2]) -> Device {
    Device::Source { name: name.into(), bus: bus.into(), r: 0.01, x: 0.1, e }
}

/// Three inductive branches meeting at an unloaded node.
pub fn fig1_cutset() -> NetworkCase {
    NetworkCase {
        name: "fig1-cutset".into(),
        base_mva: 100.0,
        omega0: DEFAULT_OMEGA0,
        buses: vec![bus("N0")],
        devices: vec![
            source("S1", "N0", [1.0, 0.0]),
            source("S2", "N0", [0.98, -0.1]),
            source("S3", "N0", [0.0, 0.0]),
        ],
    }
}

pub fn default_s1_transformer() -> TransformerParams {
    TransformerParams::from_leakage(0.004, 0.1, 0.5, 50.0)
}

/// Transformer between two capacitive buses, each fed by a source.
pub fn s1_case(t: &TransformerParams) -> NetworkCase {
    NetworkCase {
        name: "s1".into(),
        base_mva: 100.0,
        omega0: DEFAULT_OMEGA0,
        buses: vec![bus("A"), bus("B")],
        devices: vec![
            Device::Shunt { name: "CA".into(), bus: "A".into(), b: 0.2 },
            Device::Shunt { name: "CB".into(), bus: "B".into(), b: 0.2 },
            source("SA", "A", [1.02, 0.05]),
            source("SB", "B", [0.97, -0.1]),
            Device::Transformer { name: "T1".into(), from: "A".into(), to: "B".into(), params: *t },
        ],
    }
}

pub fn default_s2_machine() -> SauerPaiParams {
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

/// Machine with exciter and step-up transformer onto a capacitive bus fed
/// by a source.
pub fn s2_case(m: &SauerPaiParams, t: &TransformerParams) -> NetworkCase {
    NetworkCase {
        name: "s2".into(),
        base_mva: 100.0,
        omega0: DEFAULT_OMEGA0,
        buses: vec![bus("BG"), bus("BH")],
        devices: vec![
            Device::Generator {
                name: "G1".into(),
                bus: "BG".into(),
                machine: *m,
                avr: AvrParams::default(),
                p: 0.5,
                v: 1.0,
                slack: true,
            },
            Device::Transformer { name: "T1".into(), from: "BG".into(), to: "BH".into(), params: *t },
            Device::Shunt { name: "CH".into(), bus: "BH".into(), b: 0.3 },
            source("SH", "BH", [1.0, 0.0]),
        ],
    }
}

/// Capacitor in parallel with an ideal sinusoidal voltage source. The
/// source current is algebraic.
pub fn fig2_loop() -> RawSystem {
    let w0 = DEFAULT_OMEGA0;
    let b = 0.5;
    let mut sys = SemiExplicitDae::new(ExpressionGraph::new(), w0);
    let vr = sys.add_differential("C.vR", None).unwrap();
    let vi = sys.add_differential("C.vI", None).unwrap();
    let ir = sys.add_algebraic("V.iR").unwrap();
    let ii = sys.add_algebraic("V.iI").unwrap();
    let t = sys.time_var();
    let g = &mut sys.graph;
    let (nvr, nvi, nir, nii, nt) = (g.var(vr), g.var(vi), g.var(ir), g.var(ii), g.var(t));
    let a = g.scale(w0 / b, nir);
    let c = g.scale(w0, nvi);
    let fr = g.add(a, c);
    let a = g.scale(w0 / b, nii);
    let c = g.scale(w0, nvr);
    let fi = g.sub(a, c);
    let (fd, fq) = fig2_source(g, nt);
    let gr = g.sub(fd, nvr);
    let gi = g.sub(fq, nvi);
    sys.f = vec![fr, fi];
    sys.push_g(gr, "V loop R");
    sys.push_g(gi, "V loop I");
    sys.validate().expect("fixture is well formed");
    let mut circuit = CircuitGraph::new();
    let n = circuit.add_node("C");
    circuit.add_edge(n, CircuitGraph::GROUND, EdgeKind::Capacitor, "C");
    circuit.add_edge(CircuitGraph::GROUND, n, EdgeKind::VoltageSource, "V");
    RawSystem { sys, circuit }
}

/// Angular frequency of the `fig2-loop` source modulation (rad/s).
pub const FIG2_MOD: f64 = 2.0 * std::f64::consts::PI * 5.0;

/// `F(t) = (1 + 0.1 sin(Ωt), 0.1 cos(Ωt))`.
pub fn fig2_source_value(t: f64) -> [f64; 2] {
    [1.0 + 0.1 * (FIG2_MOD * t).sin(), 0.1 * (FIG2_MOD * t).cos()]
}

fn fig2_source(g: &mut ExpressionGraph, t: crate::expr::NodeId) -> (crate::expr::NodeId, crate::expr::NodeId) {
    let wt = g.scale(FIG2_MOD, t);
    let s = g.sin(wt);
    let c = g.cos(wt);
    let one = g.one();
    let s = g.scale(0.1, s);
    (g.add(one, s), g.scale(0.1, c))
}

/// Source, two RL sections and resistive shunts: index 1.
pub fn rl_ladder() -> RawSystem {
    let w0 = DEFAULT_OMEGA0;
    let (r, x, rg) = (0.01, 0.1, 10.0);
    let mut sys = SemiExplicitDae::new(ExpressionGraph::new(), w0);
    let mut i = Vec::new();
    for n in ["L1.iR", "L1.iI", "L2.iR", "L2.iI"] {
        i.push(sys.add_differential(n, None).unwrap());
    }
    let mut v = Vec::new();
    for n in ["N1.vR", "N1.vI", "N2.vR", "N2.vI"] {
        v.push(sys.add_algebraic(n).unwrap());
    }
    let er = sys.add_input("E.eR", 1.0).unwrap();
    let ei = sys.add_input("E.eI", 0.0).unwrap();
    let g = &mut sys.graph;
    let i: Vec<_> = i.iter().map(|&k| g.var(k)).collect();
    let v: Vec<_> = v.iter().map(|&k| g.var(k)).collect();
    let e = [g.var(er), g.var(ei)];
    let mut f = Vec::new();
    let drops = [[g.sub(e[0], v[0]), g.sub(e[1], v[1])], [g.sub(v[0], v[2]), g.sub(v[1], v[3])]];
    for (k, d) in drops.iter().enumerate() {
        let (own_r, own_i) = (i[2 * k], i[2 * k + 1]);
        for (c, (own, other, sign)) in [(own_r, own_i, 1.0), (own_i, own_r, -1.0)].into_iter().enumerate() {
            let a = g.scale(r, own);
            let b = g.scale(sign * x, other);
            let s = g.sub(d[c], a);
            let s = g.add(s, b);
            f.push(g.scale(w0 / x, s));
        }
    }
    let mut rows = Vec::new();
    for c in 0..2 {
        let a = g.sub(i[c], i[2 + c]);
        let b = g.scale(1.0 / rg, v[c]);
        rows.push(g.sub(a, b));
    }
    for c in 0..2 {
        let b = g.scale(1.0 / rg, v[2 + c]);
        rows.push(g.sub(i[2 + c], b));
    }
    sys.f = f;
    for (k, row) in rows.into_iter().enumerate() {
        sys.push_g(row, format!("N{} KCL {}", k / 2 + 1, ["R", "I"][k % 2]));
    }
    sys.validate().expect("fixture is well formed");
    let mut circuit = CircuitGraph::new();
    let n1 = circuit.add_node("N1");
    let n2 = circuit.add_node("N2");
    circuit.add_edge(CircuitGraph::GROUND, n1, EdgeKind::Inductor, "L1");
    circuit.add_edge(n1, n2, EdgeKind::Inductor, "L2");
    circuit.add_edge(n1, CircuitGraph::GROUND, EdgeKind::Resistive, "R1");
    circuit.add_edge(n2, CircuitGraph::GROUND, EdgeKind::Resistive, "R2");
    RawSystem { sys, circuit }
}
