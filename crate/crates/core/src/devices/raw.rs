//! Raw MNA equations: every inductor current and capacitor voltage is a
//! differential variable, buses without shunt capacitance and transformer
//! magnetizing nodes carry algebraic voltages with pure KCL rows.

use std::collections::HashMap;

use crate::dae::{DaeError, SemiExplicitDae};
use crate::expr::{ExpressionGraph, NodeId, VarId};
use crate::structural::{CircuitGraph, EdgeKind};

use super::device::Device;
use super::gfm::GFM_STATE_NAMES;
use super::machine::MACHINE_STATE_NAMES;
use super::params::{AvrParams, GfmParams, SauerPaiParams, TransformerParams};

type Pair = [NodeId; 2];

struct RawBus {
    v: [VarId; 2],
    b: f64,
    injections: Vec<Pair>,
}

/// Flat system under construction.
pub struct RawContext {
    pub sys: SemiExplicitDae,
    pub circuit: CircuitGraph,
    buses: Vec<RawBus>,
    bus_index: HashMap<String, usize>,
    circuit_index: HashMap<String, usize>,
    f_map: HashMap<VarId, NodeId>,
}

impl RawContext {
    pub fn new(omega0: f64) -> Self {
        RawContext {
            sys: SemiExplicitDae::new(ExpressionGraph::new(), omega0),
            circuit: CircuitGraph::new(),
            buses: Vec::new(),
            bus_index: HashMap::new(),
            circuit_index: HashMap::new(),
            f_map: HashMap::new(),
        }
    }

    /// Registers a bus voltage: differential when `shunt_b > 0`, else
    /// algebraic with a KCL row emitted by [`RawContext::finish`].
    pub fn add_bus(&mut self, name: &str, shunt_b: f64) -> Result<(), DaeError> {
        if self.bus_index.contains_key(name) {
            return Err(DaeError::Malformed(format!("duplicate bus `{name}`")));
        }
        let v = if shunt_b > 0.0 {
            [
                self.sys.add_differential(&format!("{name}.vR"), None)?,
                self.sys.add_differential(&format!("{name}.vI"), None)?,
            ]
        } else {
            [self.sys.add_algebraic(&format!("{name}.vR"))?, self.sys.add_algebraic(&format!("{name}.vI"))?]
        };
        self.bus_index.insert(name.to_string(), self.buses.len());
        self.buses.push(RawBus { v, b: shunt_b, injections: Vec::new() });
        self.circuit_node(name);
        if shunt_b > 0.0 {
            let k = self.circuit_index[name];
            self.circuit.add_edge(k, CircuitGraph::GROUND, EdgeKind::Capacitor, format!("{name}.shunt"));
        }
        Ok(())
    }

    fn circuit_node(&mut self, name: &str) -> usize {
        if let Some(&k) = self.circuit_index.get(name) {
            return k;
        }
        let k = self.circuit.add_node(name);
        self.circuit_index.insert(name.to_string(), k);
        k
    }

    fn bus(&self, name: &str) -> Result<usize, DaeError> {
        self.bus_index.get(name).copied().ok_or_else(|| DaeError::Malformed(format!("unknown bus `{name}`")))
    }

    fn bus_voltage(&mut self, bus: usize) -> Pair {
        let v = self.buses[bus].v;
        [self.sys.graph.var(v[0]), self.sys.graph.var(v[1])]
    }

    fn inject(&mut self, bus: usize, i: Pair) {
        self.buses[bus].injections.push(i);
    }

    fn edge(&mut self, a: &str, b: &str, kind: EdgeKind, device: &str) {
        let (ka, kb) = (self.circuit_node_or_ground(a), self.circuit_node_or_ground(b));
        self.circuit.add_edge(ka, kb, kind, device);
    }

    fn circuit_node_or_ground(&mut self, name: &str) -> usize {
        if name == "gnd" {
            CircuitGraph::GROUND
        } else {
            self.circuit_node(name)
        }
    }

    fn state(&mut self, name: String) -> Result<(VarId, NodeId), DaeError> {
        let v = self.sys.add_differential(&name, None)?;
        Ok((v, self.sys.graph.var(v)))
    }

    fn set_f(&mut self, v: VarId, rhs: NodeId) {
        self.f_map.insert(v, rhs);
    }

    /// Series RL branch current `name{R,I}` driven by `drop = v_from − v_to`.
    fn rl_branch(&mut self, name: &str, r: f64, x: f64, drop: Pair) -> Result<Pair, DaeError> {
        let (vr, ir) = self.state(format!("{name}R"))?;
        let (vi, ii) = self.state(format!("{name}I"))?;
        let w0 = self.sys.omega0;
        let g = &mut self.sys.graph;
        let fr = rl_rhs(g, w0, r, x, drop[0], ir, ii, 1.0);
        let fi = rl_rhs(g, w0, r, x, drop[1], ii, ir, -1.0);
        self.set_f(vr, fr);
        self.set_f(vi, fi);
        Ok([ir, ii])
    }

    /// Appends bus equations and orders `f` by the differential variables.
    pub fn finish(mut self) -> Result<(SemiExplicitDae, CircuitGraph), DaeError> {
        let w0 = self.sys.omega0;
        let names: Vec<String> = {
            let mut v: Vec<(&String, &usize)> = self.bus_index.iter().collect();
            v.sort_by_key(|(_, &k)| k);
            v.into_iter().map(|(n, _)| n.clone()).collect()
        };
        for (k, bus) in self.buses.iter().enumerate() {
            let g = &mut self.sys.graph;
            let sums: Vec<NodeId> =
                (0..2).map(|c| {
                    let terms: Vec<NodeId> = bus.injections.iter().map(|p| p[c]).collect();
                    g.sum(&terms)
                }).collect();
            if bus.b > 0.0 {
                let vr = g.var(bus.v[0]);
                let vi = g.var(bus.v[1]);
                let a = g.scale(w0 / bus.b, sums[0]);
                let c = g.scale(w0, vi);
                let fr = g.add(a, c);
                let a = g.scale(w0 / bus.b, sums[1]);
                let c = g.scale(w0, vr);
                let fi = g.sub(a, c);
                self.f_map.insert(bus.v[0], fr);
                self.f_map.insert(bus.v[1], fi);
            } else {
                self.sys.push_g(sums[0], format!("{} KCL R", names[k]));
                self.sys.push_g(sums[1], format!("{} KCL I", names[k]));
            }
        }
        let mut f = Vec::with_capacity(self.sys.diff_vars.len());
        for v in &self.sys.diff_vars {
            let node = self
                .f_map
                .get(v)
                .copied()
                .ok_or_else(|| DaeError::Malformed(format!("no equation for `{}`", self.sys.graph.variable(*v).name)))?;
            f.push(node);
        }
        self.sys.f = f;
        self.sys.validate()?;
        Ok((self.sys, self.circuit))
    }
}

/// `(ω0/x)(drop − r·i_own ± x·i_other)`.
#[allow(clippy::too_many_arguments)]
fn rl_rhs(g: &mut ExpressionGraph, w0: f64, r: f64, x: f64, drop: NodeId, own: NodeId, other: NodeId, sign: f64) -> NodeId {
    let a = g.scale(r, own);
    let b = g.scale(sign * x, other);
    let d = g.sub(drop, a);
    let s = g.add(d, b);
    g.scale(w0 / x, s)
}

fn pair_sub(g: &mut ExpressionGraph, a: Pair, b: Pair) -> Pair {
    [g.sub(a[0], b[0]), g.sub(a[1], b[1])]
}

fn pair_neg(g: &mut ExpressionGraph, a: Pair) -> Pair {
    [g.neg(a[0]), g.neg(a[1])]
}

/// Appends the device's variables and equations to `ctx`.
pub fn emit_raw_equations(device: &Device, ctx: &mut RawContext) -> Result<(), DaeError> {
    match device {
        Device::Line { name, from, to, params } => {
            let (a, b) = (ctx.bus(from)?, ctx.bus(to)?);
            let (va, vb) = (ctx.bus_voltage(a), ctx.bus_voltage(b));
            let drop = pair_sub(&mut ctx.sys.graph, va, vb);
            let i = ctx.rl_branch(&format!("{name}.i"), params.r, params.x, drop)?;
            let ni = pair_neg(&mut ctx.sys.graph, i);
            ctx.inject(a, ni);
            ctx.inject(b, i);
            ctx.edge(from, to, EdgeKind::Inductor, name);
            if params.b_half > 0.0 {
                ctx.edge(from, "gnd", EdgeKind::Capacitor, name);
                ctx.edge(to, "gnd", EdgeKind::Capacitor, name);
            }
        }
        Device::Transformer { name, from, to, params } => emit_transformer(ctx, name, from, to, params)?,
        Device::Load { name, bus, .. } => {
            let lp = device.load_params().unwrap();
            let k = ctx.bus(bus)?;
            let v = ctx.bus_voltage(k);
            let s = ctx.sys.add_input(&format!("{name}.s"), 1.0)?;
            let g = &mut ctx.sys.graph;
            let s = g.var(s);
            let drop = [g.mul(s, v[0]), g.mul(s, v[1])];
            let i = ctx.rl_branch(&format!("{name}.i"), lp.r, lp.x, drop)?;
            let ni = pair_neg(&mut ctx.sys.graph, i);
            ctx.inject(k, ni);
            ctx.edge(bus, "gnd", EdgeKind::Inductor, name);
        }
        Device::Source { name, bus, r, x, e } => {
            let k = ctx.bus(bus)?;
            let v = ctx.bus_voltage(k);
            let er = ctx.sys.add_input(&format!("{name}.eR"), e[0])?;
            let ei = ctx.sys.add_input(&format!("{name}.eI"), e[1])?;
            let g = &mut ctx.sys.graph;
            let emf = [g.var(er), g.var(ei)];
            let drop = pair_sub(g, emf, v);
            let i = ctx.rl_branch(&format!("{name}.i"), *r, *x, drop)?;
            ctx.inject(k, i);
            ctx.edge("gnd", bus, EdgeKind::Inductor, name);
        }
        Device::Shunt { .. } => {}
        Device::Generator { name, bus, machine, avr, .. } => emit_generator(ctx, name, bus, machine, avr)?,
        Device::Gfm { name, bus, params, .. } => emit_gfm(ctx, name, bus, params)?,
    }
    Ok(())
}

fn emit_transformer(
    ctx: &mut RawContext,
    name: &str,
    from: &str,
    to: &str,
    p: &TransformerParams,
) -> Result<(), DaeError> {
    let (a, b) = (ctx.bus(from)?, ctx.bus(to)?);
    let (v1, v2) = (ctx.bus_voltage(a), ctx.bus_voltage(b));
    let mut states = Vec::new();
    for n in ["i1R", "i1I", "i2R", "i2I", "i3R", "i3I"] {
        states.push(ctx.state(format!("{name}.{n}"))?);
    }
    let v3r = ctx.sys.add_algebraic(&format!("{name}.v3R"))?;
    let v3i = ctx.sys.add_algebraic(&format!("{name}.v3I"))?;
    let w0 = ctx.sys.omega0;
    let g = &mut ctx.sys.graph;
    let v3 = [g.var(v3r), g.var(v3i)];
    let cur = |k: usize| [states[2 * k].1, states[2 * k + 1].1];
    let (i1, i2, i3) = (cur(0), cur(1), cur(2));
    let d1 = pair_sub(g, v1, v3);
    let d2 = pair_sub(g, v3, v2);
    let branches = [(p.r1, p.x1, d1, i1), (p.r2, p.x2, d2, i2), (p.r3, p.x3, v3, i3)];
    let mut rhs = Vec::new();
    for (r, x, d, i) in branches {
        rhs.push(rl_rhs(g, w0, r, x, d[0], i[0], i[1], 1.0));
        rhs.push(rl_rhs(g, w0, r, x, d[1], i[1], i[0], -1.0));
    }
    let mut kcl = Vec::new();
    for c in 0..2 {
        let s = g.sub(i1[c], i2[c]);
        kcl.push(g.sub(s, i3[c]));
    }
    for (k, (v, _)) in states.iter().enumerate() {
        ctx.f_map.insert(*v, rhs[k]);
    }
    ctx.sys.push_g(kcl[0], format!("{name} magnetizing KCL R"));
    ctx.sys.push_g(kcl[1], format!("{name} magnetizing KCL I"));
    let ni1 = pair_neg(&mut ctx.sys.graph, i1);
    ctx.inject(a, ni1);
    ctx.inject(b, i2);
    let m = format!("{name}.m");
    ctx.edge(from, &m, EdgeKind::Inductor, name);
    ctx.edge(&m, to, EdgeKind::Inductor, name);
    ctx.edge(&m, "gnd", EdgeKind::Inductor, name);
    Ok(())
}

fn emit_generator(
    ctx: &mut RawContext,
    name: &str,
    bus: &str,
    p: &SauerPaiParams,
    a: &AvrParams,
) -> Result<(), DaeError> {
    let k = ctx.bus(bus)?;
    let v1 = ctx.bus_voltage(k);
    let mut vars = Vec::new();
    let mut x = Vec::new();
    for n in MACHINE_STATE_NAMES {
        let (v, node) = ctx.state(format!("{name}.{n}"))?;
        vars.push(v);
        x.push(node);
    }
    let tm = ctx.sys.add_input(&format!("{name}.tm"), 0.0)?;
    let vref = ctx.sys.add_input(&format!("{name}.vref"), 1.0)?;
    let w0 = ctx.sys.omega0;
    let g = &mut ctx.sys.graph;
    let (tm, vref) = (g.var(tm), g.var(vref));
    let [delta, omega, psid, psiq, eqp, edp, psi1d, psi2q, vm, vr1, vf, vr2]: [NodeId; 12] = x.try_into().unwrap();
    let (gd1, gd2, gq1, gq2) = (p.gd1(), p.gd2(), p.gq1(), p.gq2());

    let t1 = g.scale(gd1, eqp);
    let t2 = g.scale(1.0 - gd1, psi1d);
    let s = g.sub(t1, psid);
    let s = g.add(s, t2);
    let id = g.scale(1.0 / p.xd_pp, s);
    let t1 = g.scale(gq1, edp);
    let t2 = g.scale(1.0 - gq1, psi2q);
    let s = g.neg(psiq);
    let s = g.sub(s, t1);
    let s = g.add(s, t2);
    let iq = g.scale(1.0 / p.xq_pp, s);

    let sn = g.sin(delta);
    let cs = g.cos(delta);
    let a1 = g.mul(id, sn);
    let a2 = g.mul(iq, cs);
    let ir = g.add(a1, a2);
    let a1 = g.mul(iq, sn);
    let a2 = g.mul(id, cs);
    let ii = g.sub(a1, a2);
    let a1 = g.mul(v1[0], sn);
    let a2 = g.mul(v1[1], cs);
    let vd = g.sub(a1, a2);
    let a1 = g.mul(v1[0], cs);
    let a2 = g.mul(v1[1], sn);
    let vq = g.add(a1, a2);

    let one = g.one();
    let dw = g.sub(omega, one);
    let f_delta = g.scale(w0, dw);

    let a1 = g.mul(psid, iq);
    let a2 = g.mul(psiq, id);
    let te = g.sub(a1, a2);
    let s = g.sub(tm, te);
    let dd = g.scale(p.d, dw);
    let s = g.sub(s, dd);
    let f_omega = g.scale(1.0 / (2.0 * p.h), s);

    let a1 = g.scale(p.ra, id);
    let a2 = g.mul(omega, psiq);
    let s = g.add(a1, a2);
    let s = g.add(s, vd);
    let f_psid = g.scale(w0, s);
    let a1 = g.scale(p.ra, iq);
    let a2 = g.mul(omega, psid);
    let s = g.sub(a1, a2);
    let s = g.add(s, vq);
    let f_psiq = g.scale(w0, s);

    let a1 = g.scale(gd1, id);
    let a2 = g.scale(gd2, psi1d);
    let a3 = g.scale(gd2, eqp);
    let s = g.sub(a1, a2);
    let s = g.add(s, a3);
    let s = g.scale(-(p.xd - p.xd_p), s);
    let s = g.sub(s, eqp);
    let s = g.add(s, vf);
    let f_eqp = g.scale(1.0 / p.td0_p, s);

    let a1 = g.scale(gq1, iq);
    let a2 = g.scale(gq2, psi2q);
    let a3 = g.scale(gq2, edp);
    let s = g.sub(a1, a2);
    let s = g.sub(s, a3);
    let s = g.scale(p.xq - p.xq_p, s);
    let s = g.sub(s, edp);
    let f_edp = g.scale(1.0 / p.tq0_p, s);

    let a1 = g.scale(p.xd_p - p.xl, id);
    let s = g.sub(eqp, psi1d);
    let s = g.sub(s, a1);
    let f_psi1d = g.scale(1.0 / p.td0_pp, s);
    let a1 = g.scale(p.xq_p - p.xl, iq);
    let s = g.neg(psi2q);
    let s = g.sub(s, edp);
    let s = g.sub(s, a1);
    let f_psi2q = g.scale(1.0 / p.tq0_pp, s);

    let a1 = g.mul(v1[0], v1[0]);
    let a2 = g.mul(v1[1], v1[1]);
    let s = g.add(a1, a2);
    let vt = g.sqrt(s);
    let s = g.sub(vt, vm);
    let f_vm = g.scale(1.0 / a.tr, s);
    let fb = g.scale(a.kf / a.tf, vf);
    let s = g.sub(vref, vm);
    let s = g.sub(s, vr2);
    let s = g.sub(s, fb);
    let s = g.scale(a.ka, s);
    let s = g.sub(s, vr1);
    let f_vr1 = g.scale(1.0 / a.ta, s);
    let a1 = g.scale(a.ke, vf);
    let s = g.sub(vr1, a1);
    let f_vf = g.scale(1.0 / a.te, s);
    let s = g.add(fb, vr2);
    let f_vr2 = g.scale(-1.0 / a.tf, s);

    let rhs = [f_delta, f_omega, f_psid, f_psiq, f_eqp, f_edp, f_psi1d, f_psi2q, f_vm, f_vr1, f_vf, f_vr2];
    for (v, r) in vars.into_iter().zip(rhs) {
        ctx.set_f(v, r);
    }
    ctx.inject(k, [ir, ii]);
    ctx.edge("gnd", bus, EdgeKind::Inductor, name);
    Ok(())
}

fn emit_gfm(ctx: &mut RawContext, name: &str, bus: &str, p: &GfmParams) -> Result<(), DaeError> {
    let k = ctx.bus(bus)?;
    let v = ctx.bus_voltage(k);
    let mut vars = Vec::new();
    let mut x = Vec::new();
    for n in GFM_STATE_NAMES {
        let (var, node) = ctx.state(format!("{name}.{n}"))?;
        vars.push(var);
        x.push(node);
    }
    let pref = ctx.sys.add_input(&format!("{name}.pref"), 0.0)?;
    let qref = ctx.sys.add_input(&format!("{name}.qref"), 0.0)?;
    let vset = ctx.sys.add_input(&format!("{name}.vset"), 1.0)?;
    let w0 = ctx.sys.omega0;
    let g = &mut ctx.sys.graph;
    let (pref, qref, vset) = (g.var(pref), g.var(qref), g.var(vset));
    let [theta, pm, qm, xid, xiq, ifr, ifi]: [NodeId; 7] = x.try_into().unwrap();
    let sn = g.sin(theta);
    let cs = g.cos(theta);
    let rot = |g: &mut ExpressionGraph, a: Pair| -> Pair {
        let (t1, t2) = (g.mul(a[0], cs), g.mul(a[1], sn));
        let d = g.add(t1, t2);
        let (t1, t2) = (g.mul(a[1], cs), g.mul(a[0], sn));
        let q = g.sub(t1, t2);
        [d, q]
    };
    let vdq = rot(g, v);
    let idq = rot(g, [ifr, ifi]);
    let a1 = g.mul(v[0], ifr);
    let a2 = g.mul(v[1], ifi);
    let pe = g.add(a1, a2);
    let a1 = g.mul(v[1], ifr);
    let a2 = g.mul(v[0], ifi);
    let qe = g.sub(a1, a2);

    let s = g.sub(pref, pm);
    let f_theta = g.scale(w0 * p.mp, s);
    let s = g.sub(pe, pm);
    let f_pm = g.scale(p.wc, s);
    let s = g.sub(qe, qm);
    let f_qm = g.scale(p.wc, s);
    let s = g.sub(qref, qm);
    let s = g.scale(p.mq, s);
    let vstar = g.add(vset, s);
    let ed = g.sub(vstar, vdq[0]);
    let eq = g.neg(vdq[1]);

    let a1 = g.scale(p.kp, ed);
    let a2 = g.scale(p.ki, xid);
    let a3 = g.scale(p.rv, idq[0]);
    let s = g.add(vstar, a1);
    let s = g.add(s, a2);
    let ud = g.sub(s, a3);
    let a1 = g.scale(p.kp, eq);
    let a2 = g.scale(p.ki, xiq);
    let a3 = g.scale(p.rv, idq[1]);
    let s = g.add(a1, a2);
    let uq = g.sub(s, a3);
    let a1 = g.mul(ud, cs);
    let a2 = g.mul(uq, sn);
    let ur = g.sub(a1, a2);
    let a1 = g.mul(ud, sn);
    let a2 = g.mul(uq, cs);
    let ui = g.add(a1, a2);
    let dr = g.sub(ur, v[0]);
    let di = g.sub(ui, v[1]);
    let f_ifr = rl_rhs(g, w0, p.rf, p.xf, dr, ifr, ifi, 1.0);
    let f_ifi = rl_rhs(g, w0, p.rf, p.xf, di, ifi, ifr, -1.0);

    let rhs = [f_theta, f_pm, f_qm, ed, eq, f_ifr, f_ifi];
    for (var, r) in vars.into_iter().zip(rhs) {
        ctx.set_f(var, r);
    }
    ctx.inject(k, [ifr, ifi]);
    ctx.edge("gnd", bus, EdgeKind::Inductor, name);
    Ok(())
}
