//! Consistent operating points: Newton power flow, device back-solve from
//! terminal conditions, and Newton refinement of the composed model.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::builder::{BuildError, ComposedModel, NetworkCase};
use crate::devices::gfm::GFM_STATES;
use crate::devices::{AvrParams, Device, GfmParams, SauerPaiParams};
use crate::builder::assemble_raw;
use crate::integrator::{DaeModel, ModelError, OdeModel};
use crate::reduction::{reference_reduce, ReductionError, ReductionReport, ReferenceOde};

#[derive(Debug, Error)]
pub enum InitError {
    #[error("power flow did not converge in {iterations} iterations (worst mismatch {worst:e} at `{node}`)")]
    NoConvergence { iterations: usize, worst: f64, node: String },
    #[error("device `{0}` is not supported by the power flow")]
    Unsupported(String),
    #[error("non-finite initial value for `{0}`")]
    NonFinite(String),
    #[error("equilibrium Newton stagnated; residual history {0:?}")]
    Stagnation(Vec<f64>),
    #[error("missing initial value for `{0}`")]
    Missing(String),
    #[error("initial-condition file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeType {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    /// Buses followed by transformer magnetizing nodes (`<name>.m`).
    pub nodes: Vec<String>,
    pub voltage: Vec<Complex64>,
    /// Complex power injected by each generator and inverter.
    pub injections: Vec<(String, Complex64)>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn node(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn v(&self, name: &str) -> Complex64 {
        self.voltage[self.node(name).expect("node exists")]
    }
}

struct Network {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    y: DMatrix<Complex64>,
}

fn series(r: f64, x: f64) -> Complex64 {
    Complex64::new(r, x).inv()
}

fn network(case: &NetworkCase) -> Result<Network, InitError> {
    let mut nodes: Vec<String> = case.buses.iter().map(|b| b.name.clone()).collect();
    for d in &case.devices {
        if let Device::Transformer { name, .. } = d {
            nodes.push(format!("{name}.m"));
        }
    }
    let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(k, n)| (n.clone(), k)).collect();
    let n = nodes.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let branch = |y: &mut DMatrix<Complex64>, a: usize, b: usize, ys: Complex64| {
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    };
    for d in &case.devices {
        match d {
            Device::Line { from, to, params, .. } => {
                let (a, b) = (index[from], index[to]);
                branch(&mut y, a, b, series(params.r, params.x));
                y[(a, a)] += Complex64::new(0.0, params.b_half);
                y[(b, b)] += Complex64::new(0.0, params.b_half);
            }
            Device::Transformer { name, from, to, params } => {
                let (a, b, m) = (index[from], index[to], index[&format!("{name}.m")]);
                branch(&mut y, a, m, series(params.r1, params.x1));
                branch(&mut y, m, b, series(params.r2, params.x2));
                y[(m, m)] += series(params.r3, params.x3);
            }
            Device::Load { bus, .. } => {
                let lp = d.load_params().unwrap();
                let k = index[bus];
                y[(k, k)] += series(lp.r, lp.x);
            }
            Device::Gfm { bus, params, .. } => {
                let k = index[bus];
                y[(k, k)] += Complex64::new(0.0, params.bc);
            }
            Device::Shunt { bus, b, .. } => {
                let k = index[bus];
                y[(k, k)] += Complex64::new(0.0, *b);
            }
            Device::Generator { .. } => {}
            Device::Source { name, .. } => return Err(InitError::Unsupported(name.clone())),
        }
    }
    Ok(Network { nodes, index, y })
}

/// Polar Newton-Raphson from a flat start. Generators and inverters are
/// PV nodes (the slack generator fixes the angle reference); loads and
/// shunts are constant admittances, so every other node is PQ with zero
/// injection.
pub fn solve_power_flow(case: &NetworkCase, tol: f64, max_iter: usize) -> Result<PowerFlowSolution, InitError> {
    case.validate()?;
    let net = network(case)?;
    let n = net.nodes.len();
    let mut kind = vec![NodeType::Pq; n];
    let mut vmag = vec![1.0; n];
    let mut pspec = vec![0.0; n];
    let mut sources: Vec<(String, usize)> = Vec::new();
    for d in &case.devices {
        match d {
            Device::Generator { name, bus, p, v, slack, .. } => {
                let k = net.index[bus];
                kind[k] = if *slack { NodeType::Slack } else { NodeType::Pv };
                vmag[k] = *v;
                pspec[k] += p;
                sources.push((name.clone(), k));
            }
            Device::Gfm { name, bus, p, v, .. } => {
                let k = net.index[bus];
                if kind[k] != NodeType::Slack {
                    kind[k] = NodeType::Pv;
                }
                vmag[k] = *v;
                pspec[k] += p;
                sources.push((name.clone(), k));
            }
            _ => {}
        }
    }
    let ang_idx: Vec<usize> = (0..n).filter(|&k| kind[k] != NodeType::Slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&k| kind[k] == NodeType::Pq).collect();
    let na = ang_idx.len();
    let m = na + mag_idx.len();
    let mut theta = vec![0.0; n];
    let voltages = |vmag: &[f64], theta: &[f64]| -> DVector<Complex64> {
        DVector::from_iterator(n, (0..n).map(|k| Complex64::from_polar(vmag[k], theta[k])))
    };
    let mut iterations = 0;
    loop {
        let v = voltages(&vmag, &theta);
        let i = &net.y * &v;
        let s: Vec<Complex64> = (0..n).map(|k| v[k] * i[k].conj()).collect();
        let mut f = DVector::zeros(m);
        for (r, &k) in ang_idx.iter().enumerate() {
            f[r] = s[k].re - pspec[k];
        }
        for (r, &k) in mag_idx.iter().enumerate() {
            f[na + r] = s[k].im;
        }
        let (worst_at, worst) = f.iter().enumerate().fold((0, 0.0f64), |acc, (r, x)| if x.abs() > acc.1 { (r, x.abs()) } else { acc });
        if worst <= tol {
            let injections = sources.iter().map(|(name, k)| (name.clone(), s[*k])).collect();
            return Ok(PowerFlowSolution {
                nodes: net.nodes,
                voltage: v.iter().copied().collect(),
                injections,
                iterations,
                mismatch: worst,
            });
        }
        if iterations >= max_iter {
            let node = if worst_at < na { ang_idx[worst_at] } else { mag_idx[worst_at - na] };
            return Err(InitError::NoConvergence { iterations, worst, node: net.nodes[node].clone() });
        }
        // dS/dθ = j diag(V) conj(diag(I) − Y diag(V)),
        // dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let mut jac = DMatrix::zeros(m, m);
        let unit: Vec<Complex64> = (0..n).map(|k| v[k] / vmag[k]).collect();
        let j = Complex64::i();
        let col_a: HashMap<usize, usize> = ang_idx.iter().enumerate().map(|(c, &k)| (k, c)).collect();
        let col_m: HashMap<usize, usize> = mag_idx.iter().enumerate().map(|(c, &k)| (k, na + c)).collect();
        let rows: Vec<(usize, usize, bool)> = ang_idx
            .iter()
            .enumerate()
            .map(|(r, &k)| (r, k, true))
            .chain(mag_idx.iter().enumerate().map(|(r, &k)| (na + r, k, false)))
            .collect();
        for &(r, a, is_p) in &rows {
            for b in 0..n {
                let yab = net.y[(a, b)];
                let diag_i = if a == b { i[a] } else { Complex64::new(0.0, 0.0) };
                if yab == Complex64::new(0.0, 0.0) && a != b {
                    continue;
                }
                let ds_dth = j * v[a] * (diag_i - yab * v[b]).conj();
                let ds_dv = v[a] * (yab * unit[b]).conj() + if a == b { i[a].conj() * unit[a] } else { Complex64::new(0.0, 0.0) };
                let pick = |z: Complex64| if is_p { z.re } else { z.im };
                if let Some(&c) = col_a.get(&b) {
                    jac[(r, c)] = pick(ds_dth);
                }
                if let Some(&c) = col_m.get(&b) {
                    jac[(r, c)] = pick(ds_dv);
                }
            }
        }
        let dx = jac.lu().solve(&(-f)).ok_or_else(|| InitError::NoConvergence {
            iterations,
            worst,
            node: "singular power-flow Jacobian".into(),
        })?;
        for (c, &k) in ang_idx.iter().enumerate() {
            theta[k] += dx[c];
        }
        for (c, &k) in mag_idx.iter().enumerate() {
            vmag[k] += dx[na + c];
        }
        iterations += 1;
    }
}

/// Machine and exciter states plus `(τm, vref)` for terminal voltage `v`
/// and generated current `i`.
pub fn init_generator(p: &SauerPaiParams, a: &AvrParams, v: Complex64, i: Complex64) -> ([f64; 12], f64, f64) {
    let e = v + Complex64::new(p.ra, p.xq) * i;
    let delta = e.arg();
    let rot = Complex64::from_polar(1.0, -(delta - FRAC_PI_2));
    let (idq, vdq) = (i * rot, v * rot);
    let (id, iq, vd, vq) = (idq.re, idq.im, vdq.re, vdq.im);
    let psiq = -(vd + p.ra * id);
    let psid = vq + p.ra * iq;
    let eqp = psid + p.xd_p * id;
    let edp = -psiq - p.xq_p * iq;
    let psi1d = eqp - (p.xd_p - p.xl) * id;
    let psi2q = -edp - (p.xq_p - p.xl) * iq;
    let vf = eqp + (p.xd - p.xd_p) * id;
    let tm = psid * iq - psiq * id;
    let vm = v.norm();
    let vr1 = a.ke * vf;
    let vr2 = -a.kf / a.tf * vf;
    let vref = vm + vr1 / a.ka;
    ([delta, 1.0, psid, psiq, eqp, edp, psi1d, psi2q, vm, vr1, vf, vr2], tm, vref)
}

/// Inverter states plus `(pref, qref, vset)` for terminal voltage `v` and
/// filter current `i`.
pub fn init_gfm(p: &GfmParams, v: Complex64, i: Complex64) -> ([f64; GFM_STATES], [f64; 3]) {
    let theta = v.arg();
    let s = v * i.conj();
    let rot = Complex64::from_polar(1.0, -theta);
    let u = v + Complex64::new(p.rf, p.xf) * i;
    let (udq, idq) = (u * rot, i * rot);
    let vset = v.norm();
    let xid = (udq.re - vset + p.rv * idq.re) / p.ki;
    let xiq = (udq.im + p.rv * idq.im) / p.ki;
    ([theta, s.re, s.im, xid, xiq, i.re, i.im], [s.re, s.im, vset])
}

/// Named values for states, raw-only variables and inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatingPoint {
    pub values: BTreeMap<String, f64>,
}

impl OperatingPoint {
    pub fn get(&self, name: &str) -> Result<f64, InitError> {
        self.values.get(name).copied().ok_or_else(|| InitError::Missing(name.into()))
    }

    pub fn vector(&self, names: &[String]) -> Result<Vec<f64>, InitError> {
        names.iter().map(|n| self.get(n)).collect()
    }

    fn set_pair(&mut self, name: &str, z: Complex64) {
        self.values.insert(format!("{name}R"), z.re);
        self.values.insert(format!("{name}I"), z.im);
    }

    /// Sets every input of `model` that has a value here.
    pub fn apply_inputs(&self, model: &mut ComposedModel) {
        for (k, n) in model.input_names.iter().enumerate() {
            if let Some(&v) = self.values.get(n) {
                model.inputs[k] = v;
            }
        }
    }

    pub fn inputs_for(&self, names: &[String]) -> Vec<(String, f64)> {
        names.iter().filter_map(|n| self.values.get(n).map(|&v| (n.clone(), v))).collect()
    }

    /// `variable,value` rows in full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,value\n");
        for (k, v) in &self.values {
            writeln!(s, "{k},{v:.16e}").unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, InitError> {
        let mut values = BTreeMap::new();
        for (line, row) in text.lines().enumerate().skip(1) {
            if row.trim().is_empty() {
                continue;
            }
            let (k, v) = row.split_once(',').ok_or(InitError::Parse { line: line + 1, reason: "expected two columns".into() })?;
            let v: f64 = v.trim().parse().map_err(|e| InitError::Parse { line: line + 1, reason: format!("{e}") })?;
            values.insert(k.trim().to_string(), v);
        }
        Ok(OperatingPoint { values })
    }
}

/// Back-solves every device from the power-flow terminal conditions.
pub fn initialize_devices(case: &NetworkCase, pf: &PowerFlowSolution) -> Result<OperatingPoint, InitError> {
    let mut op = OperatingPoint::default();
    for b in &case.buses {
        op.set_pair(&format!("{}.v", b.name), pf.v(&b.name));
    }
    let injection: HashMap<&str, Complex64> = pf.injections.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    for d in &case.devices {
        match d {
            Device::Line { name, from, to, params } => {
                let i = (pf.v(from) - pf.v(to)) * series(params.r, params.x);
                op.set_pair(&format!("{name}.i"), i);
            }
            Device::Transformer { name, from, to, params } => {
                let vm = pf.v(&format!("{name}.m"));
                op.set_pair(&format!("{name}.i1"), (pf.v(from) - vm) * series(params.r1, params.x1));
                op.set_pair(&format!("{name}.i2"), (vm - pf.v(to)) * series(params.r2, params.x2));
                op.set_pair(&format!("{name}.i3"), vm * series(params.r3, params.x3));
                op.set_pair(&format!("{name}.v3"), vm);
            }
            Device::Load { name, bus, .. } => {
                let lp = d.load_params().unwrap();
                op.set_pair(&format!("{name}.i"), pf.v(bus) * series(lp.r, lp.x));
                op.values.insert(format!("{name}.s"), 1.0);
            }
            Device::Generator { name, bus, machine, avr, .. } => {
                let v = pf.v(bus);
                let i = (injection[name.as_str()] / v).conj();
                let (x, tm, vref) = init_generator(machine, avr, v, i);
                for (s, val) in crate::devices::machine::MACHINE_STATE_NAMES.iter().zip(x) {
                    op.values.insert(format!("{name}.{s}"), val);
                }
                op.values.insert(format!("{name}.tm"), tm);
                op.values.insert(format!("{name}.vref"), vref);
            }
            Device::Gfm { name, bus, params, .. } => {
                let v = pf.v(bus);
                let i = (injection[name.as_str()] / v).conj();
                let (x, u) = init_gfm(params, v, i);
                for (s, val) in crate::devices::gfm::GFM_STATE_NAMES.iter().zip(x) {
                    op.values.insert(format!("{name}.{s}"), val);
                }
                for (s, val) in ["pref", "qref", "vset"].iter().zip(u) {
                    op.values.insert(format!("{name}.{s}"), val);
                }
            }
            Device::Shunt { .. } => {}
            Device::Source { name, .. } => return Err(InitError::Unsupported(name.clone())),
        }
    }
    if let Some((k, _)) = op.values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(InitError::NonFinite(k.clone()));
    }
    Ok(op)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineStats {
    pub iterations: usize,
    pub history: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton on `F(y) = 0` with held inputs. Steps use the SVD pseudo-inverse
/// so the rotational null direction of the Jacobian is left untouched.
pub fn refine_equilibrium<M: OdeModel + ?Sized>(
    model: &mut M,
    y0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, RefineStats), InitError> {
    let n = model.dim();
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, n);
    let mut history = Vec::new();
    for it in 0..=max_iter {
        model.rhs(0.0, &y, &mut f)?;
        let r = inf_norm(&f);
        history.push(r);
        if r <= tol {
            return Ok((y, RefineStats { iterations: it, history }));
        }
        if it == max_iter {
            break;
        }
        model.jacobian(0.0, &y, &mut jac)?;
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd
            .solve(&DVector::from_column_slice(&f), 1e-12 * smax)
            .map_err(|e| InitError::Model(ModelError::Singular(e.to_string())))?;
        for k in 0..n {
            y[k] -= step[k];
        }
    }
    Err(InitError::Stagnation(history))
}

/// Result of the full initialization pipeline.
pub struct Initialized {
    pub pf: PowerFlowSolution,
    pub model: ComposedModel,
    pub y0: Vec<f64>,
    pub point: OperatingPoint,
    pub stats: RefineStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    /// Skip the equilibrium Newton (large cases whose Jacobian is too big
    /// for a dense pseudo-inverse).
    pub refine: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions { refine: true, tol: 1e-10, max_iter: 15 }
    }
}

/// Power flow, device back-solve and refinement on the composed model; the
/// returned point holds refined states, recovered raw-only values and
/// inputs.
pub fn initialize(case: &NetworkCase) -> Result<Initialized, InitError> {
    initialize_with(case, InitOptions::default())
}

pub fn initialize_with(case: &NetworkCase, opts: InitOptions) -> Result<Initialized, InitError> {
    let pf = solve_power_flow(case, 1e-10, 50)?;
    let mut point = initialize_devices(case, &pf)?;
    let mut model = ComposedModel::build(case)?;
    point.apply_inputs(&mut model);
    let y = point.vector(&model.names)?;
    let (y0, stats) = if opts.refine {
        refine_equilibrium(&mut model, &y, opts.tol, opts.max_iter)?
    } else {
        let mut f = vec![0.0; y.len()];
        model.rhs(0.0, &y, &mut f)?;
        (y, RefineStats { iterations: 0, history: vec![inf_norm(&f)] })
    };
    for (k, v) in model.named_values(&y0) {
        point.values.insert(k, v);
    }
    Ok(Initialized { pf, model, y0, point, stats })
}

/// Model and state vector from a saved operating point.
pub fn composed_from_point(case: &NetworkCase, point: &OperatingPoint) -> Result<(ComposedModel, Vec<f64>), InitError> {
    let mut model = ComposedModel::build(case)?;
    point.apply_inputs(&mut model);
    let y = point.vector(&model.names)?;
    Ok((model, y))
}

/// Reference-reduced ODE of the case with inputs and states taken from an
/// initialized operating point.
pub fn reference_model(
    case: &NetworkCase,
    point: &OperatingPoint,
) -> Result<(ReferenceOde, ReductionReport, Vec<f64>), InitError> {
    let raw = assemble_raw(case)?;
    let (mut ode, report) = reference_reduce(raw.sys)?;
    let names: Vec<String> = ode.structure.inputs.iter().map(|i| ode.structure.graph.variable(i.var).name.clone()).collect();
    for n in names {
        ode.set_input(&n, point.get(&n)?)?;
    }
    let y0 = point.vector(&ode.state_names())?;
    Ok((ode, report, y0))
}

/// Raw MNA formulation as a mass-matrix model with `y = [x; z]` taken from
/// an initialized operating point.
pub fn raw_model(case: &NetworkCase, point: &OperatingPoint) -> Result<(DaeModel, Vec<f64>), InitError> {
    let mut raw = assemble_raw(case)?;
    for k in 0..raw.sys.inputs.len() {
        let name = raw.sys.name(raw.sys.inputs[k].var).to_string();
        raw.sys.inputs[k].value = point.get(&name)?;
    }
    let model = DaeModel::new(&mut raw.sys);
    let y0 = point.vector(&model.state_names())?;
    Ok((model, y0))
}
