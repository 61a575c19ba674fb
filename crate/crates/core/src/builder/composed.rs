//! Custom formulation: hand-reduced device blocks wired through bus index
//! maps. Every variable is a state; there are no algebraic variables.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::devices::gfm::{gfm_rhs, GfmInputs, GFM_STATES, GFM_STATE_NAMES};
use crate::devices::machine::{unit_rhs, UnitInputs, MACHINE_STATE_NAMES, UNIT_STATES};
use crate::devices::transformer::{rl_derivative, s1_rhs};
use crate::devices::{AvrParams, Device, Dual, GfmParams, LineParams, LoadParams, SauerPaiParams, Scalar, TransformerParams};
use crate::integrator::{Event, ModelError, OdeModel};

use super::{BuildError, NetworkCase};

/// One device block. Indices point at the first of the block's states
/// (`*R`, `*I` pairs are consecutive) or at inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Bus { v: usize, b: f64, injections: Vec<(usize, f64)> },
    Line { i: usize, from: usize, to: usize, p: LineParams },
    Load { i: usize, bus: usize, p: LoadParams, scale: usize },
    Source { i: usize, bus: usize, r: f64, x: f64, emf: usize },
    /// Reduced transformer between two capacitive buses; `i1` at `i`, `i2` at `i + 2`.
    Transformer { i: usize, v1: usize, v2: usize, p: TransformerParams },
    /// Machine, exciter and step-up transformer owning the terminal bus.
    Unit { x: usize, v2: usize, m: SauerPaiParams, avr: AvrParams, t: TransformerParams, inputs: usize },
    Gfm { x: usize, v: usize, p: GfmParams, inputs: usize },
}

impl Block {
    /// `(read, written)` state indices.
    fn footprint(&self) -> (Vec<usize>, Vec<usize>) {
        let r = |a: usize, n: usize| (a..a + n).collect::<Vec<_>>();
        match self {
            Block::Bus { v, injections, .. } => {
                let mut read = r(*v, 2);
                for (i, _) in injections {
                    read.extend(r(*i, 2));
                }
                (read, r(*v, 2))
            }
            Block::Line { i, from, to, .. } => ([r(*i, 2), r(*from, 2), r(*to, 2)].concat(), r(*i, 2)),
            Block::Load { i, bus, .. } | Block::Source { i, bus, .. } => ([r(*i, 2), r(*bus, 2)].concat(), r(*i, 2)),
            Block::Transformer { i, v1, v2, .. } => ([r(*i, 4), r(*v1, 2), r(*v2, 2)].concat(), r(*i, 4)),
            Block::Unit { x, v2, .. } => ([r(*x, UNIT_STATES), r(*v2, 2)].concat(), r(*x, UNIT_STATES)),
            Block::Gfm { x, v, .. } => ([r(*x, GFM_STATES), r(*v, 2)].concat(), r(*x, GFM_STATES)),
        }
    }
}

/// Terminal-side quantities of a unit recovered from its states.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitView {
    pub generator: String,
    pub transformer: String,
    pub bus: String,
    pub v1: [f64; 2],
    pub v3: [f64; 2],
    pub i1: [f64; 2],
    pub i2: [f64; 2],
    pub i3: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct ComposedModel {
    pub names: Vec<String>,
    pub blocks: Vec<Block>,
    pub input_names: Vec<String>,
    pub inputs: Vec<f64>,
    pub omega0: f64,
    unit_names: Vec<(String, String, String)>,
    transformer_names: Vec<String>,
    pattern: Vec<Vec<usize>>,
    colors: Vec<usize>,
    n_colors: usize,
}

struct Layout {
    names: Vec<String>,
    input_names: Vec<String>,
    inputs: Vec<f64>,
}

impl Layout {
    fn states(&mut self, prefix: &str, suffixes: &[&str]) -> usize {
        let at = self.names.len();
        self.names.extend(suffixes.iter().map(|s| format!("{prefix}.{s}")));
        at
    }

    fn inputs(&mut self, prefix: &str, items: &[(&str, f64)]) -> usize {
        let at = self.inputs.len();
        for (s, v) in items {
            self.input_names.push(format!("{prefix}.{s}"));
            self.inputs.push(*v);
        }
        at
    }
}

impl ComposedModel {
    /// Wires hand-reduced device models. Buses without shunt capacitance
    /// must be the terminal of exactly one generator feeding exactly one
    /// transformer primary and nothing else.
    pub fn build(case: &NetworkCase) -> Result<Self, BuildError> {
        case.validate()?;
        let nb = case.buses.len();
        let bus_idx: HashMap<&str, usize> = case.buses.iter().enumerate().map(|(k, b)| (b.name.as_str(), k)).collect();
        let mut shunt = vec![0.0; nb];
        let mut attached: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for (k, d) in case.devices.iter().enumerate() {
            for b in d.buses() {
                let bi = bus_idx[b];
                if !attached[bi].contains(&k) {
                    attached[bi].push(k);
                }
            }
        }
        for (bi, b) in case.buses.iter().enumerate() {
            shunt[bi] = attached[bi].iter().map(|&k| case.devices[k].shunt_at(&b.name)).sum();
        }
        // generator index -> transformer index for terminal buses
        let mut owner_of_transformer: HashMap<usize, usize> = HashMap::new();
        let mut unit_transformer: HashMap<usize, usize> = HashMap::new();
        for bi in 0..nb {
            if shunt[bi] > 0.0 {
                continue;
            }
            let devs = &attached[bi];
            let gens: Vec<usize> =
                devs.iter().copied().filter(|&k| matches!(case.devices[k], Device::Generator { .. })).collect();
            let trs: Vec<usize> = devs
                .iter()
                .copied()
                .filter(|&k| matches!(&case.devices[k], Device::Transformer { from, .. } if bus_idx[from.as_str()] == bi))
                .collect();
            if gens.len() != 1 || trs.len() != 1 || devs.len() != 2 {
                return Err(BuildError::DanglingBus(case.buses[bi].name.clone()));
            }
            if let Device::Transformer { to, .. } = &case.devices[trs[0]] {
                if shunt[bus_idx[to.as_str()]] <= 0.0 {
                    return Err(BuildError::DanglingBus(to.clone()));
                }
            }
            unit_transformer.insert(gens[0], trs[0]);
            owner_of_transformer.insert(trs[0], gens[0]);
        }

        let mut lay = Layout { names: Vec::new(), input_names: Vec::new(), inputs: Vec::new() };
        let mut bus_state = vec![usize::MAX; nb];
        for (bi, b) in case.buses.iter().enumerate() {
            if shunt[bi] > 0.0 {
                bus_state[bi] = lay.states(&b.name, &["vR", "vI"]);
            }
        }
        let bs = |name: &str| bus_state[bus_idx[name]];
        let mut blocks = Vec::new();
        let mut injections: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
        let mut unit_names = Vec::new();
        let mut transformer_names = Vec::new();
        for (k, d) in case.devices.iter().enumerate() {
            match d {
                Device::Line { name, from, to, params } => {
                    let i = lay.states(name, &["iR", "iI"]);
                    injections[bus_idx[from.as_str()]].push((i, -1.0));
                    injections[bus_idx[to.as_str()]].push((i, 1.0));
                    blocks.push(Block::Line { i, from: bs(from), to: bs(to), p: *params });
                }
                Device::Load { name, bus, .. } => {
                    let i = lay.states(name, &["iR", "iI"]);
                    let scale = lay.inputs(name, &[("s", 1.0)]);
                    injections[bus_idx[bus.as_str()]].push((i, -1.0));
                    blocks.push(Block::Load { i, bus: bs(bus), p: d.load_params().unwrap(), scale });
                }
                Device::Source { name, bus, r, x, e } => {
                    let i = lay.states(name, &["iR", "iI"]);
                    let emf = lay.inputs(name, &[("eR", e[0]), ("eI", e[1])]);
                    injections[bus_idx[bus.as_str()]].push((i, 1.0));
                    blocks.push(Block::Source { i, bus: bs(bus), r: *r, x: *x, emf });
                }
                Device::Transformer { name, from, to, params } => {
                    if owner_of_transformer.contains_key(&k) {
                        continue;
                    }
                    let i = lay.states(name, &["i1R", "i1I", "i2R", "i2I"]);
                    injections[bus_idx[from.as_str()]].push((i, -1.0));
                    injections[bus_idx[to.as_str()]].push((i + 2, 1.0));
                    blocks.push(Block::Transformer { i, v1: bs(from), v2: bs(to), p: *params });
                    transformer_names.push(name.clone());
                }
                Device::Generator { name, bus, machine, avr, .. } => {
                    let Some(&t) = unit_transformer.get(&k) else {
                        return Err(BuildError::DanglingBus(d.buses()[0].to_string()));
                    };
                    let Device::Transformer { name: tname, to, params: tp, .. } = &case.devices[t] else {
                        unreachable!()
                    };
                    let x = lay.states(name, &MACHINE_STATE_NAMES);
                    lay.states(tname, &["i2R", "i2I"]);
                    let inputs = lay.inputs(name, &[("tm", 0.0), ("vref", 1.0)]);
                    injections[bus_idx[to.as_str()]].push((x + UNIT_STATES - 2, 1.0));
                    blocks.push(Block::Unit { x, v2: bs(to), m: *machine, avr: *avr, t: *tp, inputs });
                    unit_names.push((name.clone(), tname.clone(), bus.clone()));
                }
                Device::Gfm { name, bus, params, .. } => {
                    let x = lay.states(name, &GFM_STATE_NAMES);
                    let inputs = lay.inputs(name, &[("pref", 0.0), ("qref", 0.0), ("vset", 1.0)]);
                    injections[bus_idx[bus.as_str()]].push((x + 5, 1.0));
                    blocks.push(Block::Gfm { x, v: bs(bus), p: *params, inputs });
                }
                Device::Shunt { .. } => {}
            }
        }
        let mut bus_blocks = Vec::new();
        for bi in 0..nb {
            if shunt[bi] > 0.0 {
                bus_blocks.push(Block::Bus {
                    v: bus_state[bi],
                    b: shunt[bi],
                    injections: std::mem::take(&mut injections[bi]),
                });
            }
        }
        bus_blocks.extend(blocks);
        let mut model = ComposedModel {
            names: lay.names,
            blocks: bus_blocks,
            input_names: lay.input_names,
            inputs: lay.inputs,
            omega0: case.omega0,
            unit_names,
            transformer_names,
            pattern: Vec::new(),
            colors: Vec::new(),
            n_colors: 0,
        };
        model.color();
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.names.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_names.iter().position(|n| n == name)
    }

    pub fn set_input(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        let k = self.input_index(name).ok_or_else(|| ModelError::UnknownInput(name.into()))?;
        self.inputs[k] = value;
        Ok(())
    }

    pub fn n_colors(&self) -> usize {
        self.n_colors
    }

    /// Structural nonzeros of the Jacobian, per row.
    pub fn pattern(&self) -> &[Vec<usize>] {
        &self.pattern
    }

    fn color(&mut self) {
        let n = self.n_states();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for b in &self.blocks {
            let (read, written) = b.footprint();
            for &w in &written {
                rows[w].extend(read.iter().copied());
            }
        }
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &c in row.iter() {
                cols[c].push(r);
            }
        }
        let mut colors = vec![usize::MAX; n];
        let mut mark = vec![usize::MAX; n + 1];
        let mut n_colors = 0;
        for c in 0..n {
            for &r in &cols[c] {
                for &other in &rows[r] {
                    if colors[other] != usize::MAX {
                        mark[colors[other]] = c;
                    }
                }
            }
            let k = (0..).find(|&k| mark[k] != c).unwrap();
            colors[c] = k;
            n_colors = n_colors.max(k + 1);
        }
        self.pattern = rows;
        self.colors = colors;
        self.n_colors = n_colors;
    }

    /// Right-hand side for any scalar type.
    pub fn eval<T: Scalar>(&self, y: &[T], dy: &mut [T]) {
        let w0 = self.omega0;
        let u = &self.inputs;
        let c = |k: usize| [y[k], y[k + 1]];
        for b in &self.blocks {
            match b {
                Block::Bus { v, b, injections } => {
                    let mut s = [T::cst(0.0), T::cst(0.0)];
                    for &(i, sign) in injections {
                        s[0] = s[0] + y[i] * sign;
                        s[1] = s[1] + y[i + 1] * sign;
                    }
                    dy[*v] = s[0] * (w0 / b) + y[v + 1] * w0;
                    dy[v + 1] = s[1] * (w0 / b) - y[*v] * w0;
                }
                Block::Line { i, from, to, p } => {
                    let drop = [y[*from] - y[*to], y[from + 1] - y[to + 1]];
                    let d = rl_derivative(p.r, p.x, drop, c(*i), w0);
                    dy[*i] = d[0];
                    dy[i + 1] = d[1];
                }
                Block::Load { i, bus, p, scale } => {
                    let s = u[*scale];
                    let d = rl_derivative(p.r, p.x, [y[*bus] * s, y[bus + 1] * s], c(*i), w0);
                    dy[*i] = d[0];
                    dy[i + 1] = d[1];
                }
                Block::Source { i, bus, r, x, emf } => {
                    let drop = [-y[*bus] + u[*emf], -y[bus + 1] + u[emf + 1]];
                    let d = rl_derivative(*r, *x, drop, c(*i), w0);
                    dy[*i] = d[0];
                    dy[i + 1] = d[1];
                }
                Block::Transformer { i, v1, v2, p } => {
                    let o = s1_rhs(p, c(*v1), c(*v2), c(*i), c(i + 2), w0);
                    dy[*i] = o.di1[0];
                    dy[i + 1] = o.di1[1];
                    dy[i + 2] = o.di2[0];
                    dy[i + 3] = o.di2[1];
                }
                Block::Unit { x, v2, m, avr, t, inputs } => {
                    let inp = UnitInputs { tm: u[*inputs], vref: u[inputs + 1] };
                    let o = unit_rhs(m, avr, t, &y[*x..x + UNIT_STATES], c(*v2), inp, w0);
                    dy[*x..x + UNIT_STATES].copy_from_slice(&o.dx);
                }
                Block::Gfm { x, v, p, inputs } => {
                    let inp = GfmInputs { pref: u[*inputs], qref: u[inputs + 1], vset: u[inputs + 2] };
                    let o = gfm_rhs(p, &y[*x..x + GFM_STATES], c(*v), inp, w0);
                    dy[*x..x + GFM_STATES].copy_from_slice(&o.dx);
                }
            }
        }
    }

    /// Exact Jacobian: one forward-mode dual sweep per column color.
    pub fn jacobian_dense(&self, y: &[f64], jac: &mut DMatrix<f64>) {
        let n = self.n_states();
        jac.fill(0.0);
        let mut yd: Vec<Dual> = y.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut dd = vec![Dual::new(0.0, 0.0); n];
        for color in 0..self.n_colors {
            for (j, v) in yd.iter_mut().enumerate() {
                v.d = if self.colors[j] == color { 1.0 } else { 0.0 };
            }
            self.eval(&yd, &mut dd);
            for (r, row) in self.pattern.iter().enumerate() {
                for &j in row {
                    if self.colors[j] == color {
                        jac[(r, j)] = dd[r].d;
                    }
                }
            }
        }
    }

    /// Machine terminal and magnetizing quantities per unit.
    pub fn unit_views(&self, y: &[f64]) -> Vec<UnitView> {
        let w0 = self.omega0;
        let mut out = Vec::new();
        let mut k = 0;
        for b in &self.blocks {
            if let Block::Unit { x, v2, m, avr, t, inputs } = b {
                let inp = UnitInputs { tm: self.inputs[*inputs], vref: self.inputs[inputs + 1] };
                let o = unit_rhs(m, avr, t, &y[*x..x + UNIT_STATES], [y[*v2], y[v2 + 1]], inp, w0);
                let (g, tr, bus) = self.unit_names[k].clone();
                out.push(UnitView {
                    generator: g,
                    transformer: tr,
                    bus,
                    v1: o.v1,
                    v3: o.v3,
                    i1: o.i1,
                    i2: [y[x + UNIT_STATES - 2], y[x + UNIT_STATES - 1]],
                    i3: o.i3,
                });
                k += 1;
            }
        }
        out
    }
}

impl ComposedModel {
    /// States plus the quantities the raw formulation keeps as separate
    /// variables: terminal voltages, magnetizing voltages and currents and
    /// machine-side transformer currents.
    pub fn named_values(&self, y: &[f64]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.names.iter().cloned().zip(y.iter().copied()).collect();
        let mut pair = |name: String, v: [f64; 2]| {
            out.push((format!("{name}R"), v[0]));
            out.push((format!("{name}I"), v[1]));
        };
        for u in self.unit_views(y) {
            pair(format!("{}.v", u.bus), u.v1);
            pair(format!("{}.v3", u.transformer), u.v3);
            pair(format!("{}.i1", u.transformer), u.i1);
            pair(format!("{}.i3", u.transformer), u.i3);
        }
        let mut k = 0;
        for b in &self.blocks {
            if let Block::Transformer { i, v1, v2, p } = b {
                let c = |j: usize| [y[j], y[j + 1]];
                let o = s1_rhs(p, c(*v1), c(*v2), c(*i), c(i + 2), self.omega0);
                let name = &self.transformer_names[k];
                pair(format!("{name}.v3"), o.v3);
                pair(format!("{name}.i3"), [y[*i] - y[i + 2], y[i + 1] - y[i + 3]]);
                k += 1;
            }
        }
        out
    }
}

impl OdeModel for ComposedModel {
    fn dim(&self) -> usize {
        self.n_states()
    }

    fn state_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ModelError> {
        self.eval(y, dy);
        match dy.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(ModelError::NonFinite(k)),
            None => Ok(()),
        }
    }

    fn jacobian(&mut self, _t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> Result<(), ModelError> {
        self.jacobian_dense(y, jac);
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    fn time_partial(&mut self, _t: f64, _y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        out.fill(0.0);
        Ok(())
    }

    fn apply_event(&mut self, event: &Event) -> Result<(), ModelError> {
        self.set_input(&event.input, event.value)
    }
}
