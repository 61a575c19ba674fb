//! Reference index reduction: constraint differentiation and variable
//! recategorization (Phase I), then forward substitution and tearing of the
//! remaining algebraic part into embedded linear solves (Phase II).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dae::{HeldInput, IncidenceMatrix, SemiExplicitDae};
use crate::expr::{ExprError, ExpressionGraph, NodeId, Tape, VarId, VarKind};
use crate::integrator::{Event, ModelError, OdeModel};
use crate::structural::{
    blt_sort, classify_blocks, maximum_matching, structural_index_report, BlockKind, IndexClass,
    StructuralError,
};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("constraint `{0}` has no admissible dependent variable")]
    NoCandidate(String),
    #[error("row {0} is not a zero-row constraint")]
    NotAConstraint(usize),
    #[error("system is still not index-1 after one Phase I pass (q = {0})")]
    NotIndex1(usize),
    #[error("structurally singular torn block in {0:?}")]
    SingularBlock(Vec<String>),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error(transparent)]
    Dae(#[from] crate::dae::DaeError),
}

/// Record of one Phase I pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionPlan {
    /// Indices into the g-equations of the input system.
    pub constraint_rows: Vec<usize>,
    /// Dependent differential variable per constraint.
    pub selected: Vec<VarId>,
    /// Hidden constraints, written over derivative-refs.
    pub hidden: Vec<NodeId>,
    /// Pseudo-derivative symbols, filled by [`recategorize`].
    pub pseudo: Vec<VarId>,
}

/// Zero-row constraints as indices into `sys.g`.
pub fn constraint_rows(sys: &SemiExplicitDae) -> Vec<usize> {
    let n = sys.n_diff();
    structural_index_report(sys).constraint_rows.into_iter().map(|r| r - n).collect()
}

/// Time derivative of every listed constraint with ẋ left as
/// derivative-refs, held inputs bound to zero and `t` bound to one.
pub fn differentiate_constraints(sys: &mut SemiExplicitDae, rows: &[usize]) -> Result<Vec<NodeId>, ReductionError> {
    let mut bindings = HashMap::new();
    for &v in &sys.diff_vars {
        bindings.insert(v, sys.graph.der(v)?);
    }
    let zero = sys.graph.zero();
    for i in &sys.inputs {
        bindings.insert(i.var, zero);
    }
    if let Some(t) = sys.time {
        let one = sys.graph.one();
        bindings.insert(t, one);
    }
    let inc = sys.incidence();
    let n = sys.n_diff();
    let mut hidden = Vec::with_capacity(rows.len());
    for &r in rows {
        if inc.row_cols(n + r).next().is_some() {
            return Err(ReductionError::NotAConstraint(r));
        }
        hidden.push(sys.graph.differentiate_time(sys.g[r], &bindings)?);
    }
    Ok(hidden)
}

/// Coefficient of `v` in `e` if `e` is affine in `v` with a constant
/// coefficient.
fn constant_coefficient(graph: &mut ExpressionGraph, e: NodeId, v: VarId) -> Option<f64> {
    let lf = graph.extract_linear_form(e, &[v])?;
    graph.eval_constant(lf.coefficients[0]).filter(|c| *c != 0.0)
}

/// One dependent differential variable per constraint. Candidates are the
/// variables entering the constraint with a constant coefficient (all of its
/// differential variables if there are none); among them the one used by
/// the fewest equations other than its own f-equation wins, ties going to the lowest index. Constraints
/// sharing variables are handled together, fewest candidates first, so no
/// variable is chosen twice.
pub fn select_dependent_variables(sys: &mut SemiExplicitDae, rows: &[usize]) -> Result<Vec<VarId>, ReductionError> {
    let diff_pos: HashMap<VarId, usize> = sys.diff_vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut uses: HashMap<VarId, usize> = HashMap::new();
    let owners = sys.diff_vars.iter().map(Some).chain(sys.g.iter().map(|_| None));
    let eqs: Vec<(Option<&VarId>, NodeId)> = owners.zip(sys.f.iter().chain(&sys.g).copied()).collect();
    for &(owner, e) in &eqs {
        for v in sys.graph.variables_of(e) {
            if owner != Some(&v) {
                *uses.entry(v).or_default() += 1;
            }
        }
    }
    let mut vars_of: Vec<BTreeSet<VarId>> = Vec::new();
    let mut candidates: Vec<Vec<VarId>> = Vec::new();
    for &r in rows {
        let e = sys.g[r];
        let vs: BTreeSet<VarId> = sys.graph.variables_of(e).into_iter().filter(|v| diff_pos.contains_key(v)).collect();
        let mut c: Vec<VarId> = vs
            .iter()
            .copied()
            .filter(|&v| constant_coefficient(&mut sys.graph, e, v).is_some())
            .collect();
        if c.is_empty() {
            c = vs.iter().copied().collect();
        }
        c.sort_by_key(|v| (uses.get(v).copied().unwrap_or(0), diff_pos[v]));
        vars_of.push(vs);
        candidates.push(c);
    }
    // group constraints that share differential variables
    let k = rows.len();
    let mut group: Vec<usize> = (0..k).collect();
    fn root(g: &mut [usize], mut x: usize) -> usize {
        while g[x] != x {
            g[x] = g[g[x]];
            x = g[x];
        }
        x
    }
    for a in 0..k {
        for b in a + 1..k {
            if !vars_of[a].is_disjoint(&vars_of[b]) {
                let (ra, rb) = (root(&mut group, a), root(&mut group, b));
                if ra != rb {
                    group[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut selected: Vec<Option<VarId>> = vec![None; k];
    let mut taken: BTreeSet<VarId> = BTreeSet::new();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| (root(&mut group.clone(), i), candidates[i].len(), i));
    for i in order {
        match candidates[i].iter().find(|v| !taken.contains(v)) {
            Some(&v) => {
                taken.insert(v);
                selected[i] = Some(v);
            }
            None => return Err(ReductionError::NoCandidate(sys.g_labels[rows[i]].clone())),
        }
    }
    Ok(selected.into_iter().map(|v| v.unwrap()).collect())
}

/// Full Phase I planning: constraint rows, hidden constraints, selection.
pub fn plan_phase_one(sys: &mut SemiExplicitDae) -> Result<ReductionPlan, ReductionError> {
    let rows = constraint_rows(sys);
    let hidden = differentiate_constraints(sys, &rows)?;
    let selected = select_dependent_variables(sys, &rows)?;
    Ok(ReductionPlan { constraint_rows: rows, selected, hidden, pseudo: Vec::new() })
}

/// Moves the selected variables to the algebraic set, introduces their
/// pseudo-derivatives, turns their f-equations into algebraic definitions
/// and appends the hidden constraints with ẋ replaced by f (or by the
/// pseudo-derivative for selected variables).
pub fn recategorize(mut sys: SemiExplicitDae, plan: &mut ReductionPlan) -> Result<SemiExplicitDae, ReductionError> {
    if plan.selected.is_empty() {
        return Ok(sys);
    }
    let sel: HashMap<VarId, usize> = plan.selected.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut pseudo = Vec::with_capacity(sel.len());
    for &v in &plan.selected {
        let name = format!("d${}", sys.name(v));
        pseudo.push(sys.graph.add_variable(&name, VarKind::PseudoDerivative)?);
        sys.graph.set_kind(v, VarKind::Algebraic);
    }
    let mut der_map = HashMap::new();
    for (i, &v) in sys.diff_vars.iter().enumerate() {
        let b = match sel.get(&v) {
            Some(&k) => sys.graph.var(pseudo[k]),
            None => sys.f[i],
        };
        der_map.insert(v, b);
    }
    let none = HashMap::new();
    let hidden: Vec<NodeId> =
        plan.hidden.iter().map(|&h| sys.graph.substitute_with(h, &none, &der_map)).collect();

    let mut defs = vec![None; sel.len()];
    let mut diff_vars = Vec::new();
    let mut f = Vec::new();
    for (i, &v) in sys.diff_vars.iter().enumerate() {
        match sel.get(&v) {
            Some(&k) => defs[k] = Some(sys.f[i]),
            None => {
                diff_vars.push(v);
                f.push(sys.f[i]);
            }
        }
    }
    sys.diff_vars = diff_vars;
    sys.f = f;
    sys.alg_vars.extend(plan.selected.iter().copied());
    sys.alg_vars.extend(pseudo.iter().copied());
    for (k, &r) in plan.constraint_rows.iter().enumerate() {
        let label = format!("hidden {}", sys.g_labels[r]);
        sys.push_g(hidden[k], label);
    }
    for (k, &v) in plan.selected.iter().enumerate() {
        let pd = sys.graph.var(pseudo[k]);
        let def = sys.graph.sub(defs[k].unwrap(), pd);
        let label = format!("d${} definition", sys.name(v));
        sys.push_g(def, label);
    }
    plan.pseudo = pseudo;
    sys.validate()?;
    let rep = structural_index_report(&sys);
    if rep.class == IndexClass::IndexAtLeast2 {
        return Err(ReductionError::NotIndex1(rep.q));
    }
    Ok(sys)
}

/// Phase I in one call.
pub fn phase_one(mut sys: SemiExplicitDae) -> Result<(SemiExplicitDae, ReductionPlan), ReductionError> {
    let mut plan = plan_phase_one(&mut sys)?;
    let out = recategorize(sys, &mut plan)?;
    Ok((out, plan))
}

/// A runtime solve for the tearing variables of one algebraic loop.
#[derive(Clone, Debug)]
pub struct TornBlock {
    pub vars: Vec<VarId>,
    /// Residual equations, affine in `vars` when `linear` is set.
    pub residuals: Vec<NodeId>,
    pub linear: bool,
    /// Row-major `A` for linear blocks; row-major `∂r/∂u` otherwise.
    pub matrix: Vec<NodeId>,
    /// Right-hand side `b` for linear blocks (`A u = b`).
    pub rhs: Vec<NodeId>,
    /// Block size before tearing.
    pub original_size: usize,
}

/// Output of Phase II: an ODE over the remaining differential variables
/// with embedded block solves.
#[derive(Clone, Debug)]
pub struct ReducedStructure {
    pub graph: ExpressionGraph,
    pub states: Vec<VarId>,
    pub f: Vec<NodeId>,
    pub blocks: Vec<TornBlock>,
    /// Variables removed by forward substitution, in solve order, with
    /// their explicit expressions (over states, inputs and torn variables).
    pub eliminated: Vec<(VarId, NodeId)>,
    pub inputs: Vec<HeldInput>,
    pub time: Option<VarId>,
    pub omega0: f64,
    /// BLT block sizes of the index-1 algebraic part before Phase II.
    pub blt_sizes: Vec<usize>,
}

/// Forward substitution of explicit scalar blocks and tearing of the
/// remaining loops. Pseudo-derivatives inside a loop are eliminated through
/// their definitions; the other loop variables become tearing variables.
pub fn phase_two(sys: SemiExplicitDae) -> Result<ReducedStructure, ReductionError> {
    let SemiExplicitDae { mut graph, diff_vars, alg_vars, f, g, inputs, time, omega0, .. } = sys;
    let m = alg_vars.len();
    let col: HashMap<VarId, usize> = alg_vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let rows: Vec<Vec<usize>> = g
        .iter()
        .map(|&e| graph.variables_of(e).into_iter().filter_map(|v| col.get(&v).copied()).collect())
        .collect();
    let inc = IncidenceMatrix::from_rows(0, m, rows);
    let matching = maximum_matching(&inc);
    let mut blt = blt_sort(&inc, &matching)?;
    classify_blocks(&mut graph, &g, &alg_vars, &mut blt);
    let blt_sizes = blt.block_sizes();

    let mut map: HashMap<VarId, NodeId> = HashMap::new();
    let mut eliminated = Vec::new();
    let mut blocks = Vec::new();
    for b in &blt.blocks {
        let vars: Vec<VarId> = b.cols().iter().map(|&c| alg_vars[c]).collect();
        let eqs: Vec<NodeId> = b.rows().iter().map(|&r| graph.substitute(g[r], &map)).collect();
        if b.kind == BlockKind::Scalar {
            if let Some(x) = solve_explicit(&mut graph, eqs[0], vars[0]) {
                map.insert(vars[0], x);
                eliminated.push((vars[0], x));
                continue;
            }
        }
        let block = tear(&mut graph, eqs, vars, &mut map, &mut eliminated)?;
        blocks.push(block);
    }
    let f: Vec<NodeId> = f.iter().map(|&e| graph.substitute(e, &map)).collect();
    // eliminated expressions may reference variables eliminated after them
    // inside the same torn block; resolve against the final map
    let eliminated = eliminated.into_iter().map(|(v, e)| (v, graph.substitute(e, &map))).collect();
    Ok(ReducedStructure { graph, states: diff_vars, f, blocks, eliminated, inputs, time, omega0, blt_sizes })
}

/// `e = c·v + r` with constant nonzero `c` gives `v = −r / c`.
fn solve_explicit(graph: &mut ExpressionGraph, e: NodeId, v: VarId) -> Option<NodeId> {
    let lf = graph.extract_linear_form(e, &[v])?;
    let c = graph.eval_constant(lf.coefficients[0]).filter(|c| *c != 0.0)?;
    let r = lf.remainder;
    Some(if c == -1.0 {
        r
    } else if c == 1.0 {
        graph.neg(r)
    } else {
        let nr = graph.neg(r);
        let cn = graph.constant(c);
        graph.div(nr, cn)
    })
}

fn tear(
    graph: &mut ExpressionGraph,
    mut eqs: Vec<NodeId>,
    mut vars: Vec<VarId>,
    map: &mut HashMap<VarId, NodeId>,
    eliminated: &mut Vec<(VarId, NodeId)>,
) -> Result<TornBlock, ReductionError> {
    let original_size = vars.len();
    loop {
        let mut hit = None;
        'search: for (vi, &v) in vars.iter().enumerate() {
            if graph.variable(v).kind != VarKind::PseudoDerivative {
                continue;
            }
            for (ei, &e) in eqs.iter().enumerate() {
                if let Some(x) = solve_explicit(graph, e, v) {
                    hit = Some((vi, ei, x));
                    break 'search;
                }
            }
        }
        let Some((vi, ei, x)) = hit else { break };
        let v = vars.remove(vi);
        eqs.remove(ei);
        let one: HashMap<VarId, NodeId> = [(v, x)].into_iter().collect();
        for e in eqs.iter_mut() {
            *e = graph.substitute(*e, &one);
        }
        map.insert(v, x);
        eliminated.push((v, x));
    }
    let forms: Option<Vec<_>> = eqs.iter().map(|&e| graph.extract_linear_form(e, &vars)).collect();
    let names = || vars.iter().map(|&v| graph.variable(v).name.clone()).collect::<Vec<_>>();
    match forms {
        Some(forms) => {
            let k = vars.len();
            let adj: Vec<Vec<usize>> = forms
                .iter()
                .map(|lf| (0..k).filter(|&j| graph.const_value(lf.coefficients[j]) != Some(0.0)).collect())
                .collect();
            if crate::structural::matching_from_adjacency(&adj, k).size() < k {
                return Err(ReductionError::SingularBlock(names()));
            }
            let matrix = forms.iter().flat_map(|lf| lf.coefficients.clone()).collect();
            let rhs = forms.iter().map(|lf| graph.neg(lf.remainder)).collect();
            Ok(TornBlock { vars, residuals: eqs, linear: true, matrix, rhs, original_size })
        }
        None => {
            let mut matrix = Vec::new();
            for &e in &eqs {
                for &v in &vars {
                    matrix.push(graph.partial(e, v));
                }
            }
            Ok(TornBlock { vars, residuals: eqs, linear: false, matrix, rhs: Vec::new(), original_size })
        }
    }
}

/// Text summary of a full reference reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionReport {
    pub q: usize,
    pub selected: Vec<String>,
    pub pseudo: Vec<String>,
    pub differential_before: usize,
    pub algebraic_before: usize,
    pub equations_before: usize,
    pub differential_after: usize,
    pub algebraic_after: usize,
    pub equations_after: usize,
    pub blt_sizes: Vec<usize>,
    pub torn_sizes: Vec<(usize, usize)>,
    pub eliminated: usize,
    pub states: usize,
}

impl fmt::Display for ReductionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "constraints q            : {}", self.q)?;
        writeln!(f, "dependent variables      : {}", self.selected.join(", "))?;
        writeln!(f, "pseudo-derivatives       : {}", self.pseudo.join(", "))?;
        writeln!(
            f,
            "phase I   diff/alg/eq    : {}/{}/{} -> {}/{}/{}",
            self.differential_before,
            self.algebraic_before,
            self.equations_before,
            self.differential_after,
            self.algebraic_after,
            self.equations_after
        )?;
        let mut hist: std::collections::BTreeMap<usize, usize> = Default::default();
        for &s in &self.blt_sizes {
            *hist.entry(s).or_default() += 1;
        }
        let h: Vec<String> = hist.iter().map(|(s, c)| format!("{c}x{s}")).collect();
        writeln!(f, "BLT blocks (count x size): {}", h.join(" "))?;
        let t: Vec<String> = self.torn_sizes.iter().map(|(a, b)| format!("{a}->{b}")).collect();
        writeln!(f, "torn loops (before->after): {}", if t.is_empty() { "none".into() } else { t.join(" ") })?;
        writeln!(f, "forward-substituted      : {}", self.eliminated)?;
        write!(f, "ODE states               : {}", self.states)
    }
}

/// Runs Phase I (when needed) and Phase II.
pub fn reference_reduce(raw: SemiExplicitDae) -> Result<(ReferenceOde, ReductionReport), ReductionError> {
    let (db, ab, eb) = (raw.n_diff(), raw.n_alg(), raw.n_eq());
    let (idx1, plan) = phase_one(raw)?;
    let name = |v: &VarId| idx1.name(*v).to_string();
    let selected = plan.selected.iter().map(name).collect();
    let pseudo = plan.pseudo.iter().map(name).collect();
    let (da, aa, ea) = (idx1.n_diff(), idx1.n_alg(), idx1.n_eq());
    let red = phase_two(idx1)?;
    let report = ReductionReport {
        q: plan.constraint_rows.len(),
        selected,
        pseudo,
        differential_before: db,
        algebraic_before: ab,
        equations_before: eb,
        differential_after: da,
        algebraic_after: aa,
        equations_after: ea,
        blt_sizes: red.blt_sizes.clone(),
        torn_sizes: red.blocks.iter().map(|b| (b.original_size, b.vars.len())).collect(),
        eliminated: red.eliminated.len(),
        states: red.states.len(),
    };
    Ok((ReferenceOde::new(red), report))
}

#[derive(Clone, Debug)]
struct CompiledBlock {
    vars: Vec<usize>,
    linear: bool,
    /// Outputs: matrix entries then rhs (linear) or residuals (nonlinear).
    tape: Tape,
}

/// Which matrix a Jacobian tape entry belongs to.
#[derive(Clone, Copy, Debug)]
enum JacPart {
    /// ∂f/∂x
    Fx,
    /// ∂f/∂u
    Fu,
    /// ∂G/∂x
    Gx,
    /// ∂G/∂u
    Gu,
}

/// Runtime ODE built from a [`ReducedStructure`].
#[derive(Clone, Debug)]
pub struct ReferenceOde {
    pub structure: ReducedStructure,
    names: Vec<String>,
    state_slots: Vec<usize>,
    input_slots: Vec<(String, usize, f64)>,
    time_slot: Option<usize>,
    var_count: usize,
    f_tape: Tape,
    blocks: Vec<CompiledBlock>,
    torn: Vec<usize>,
    jac_tape: Tape,
    jac_entries: Vec<(JacPart, usize, usize)>,
    out_tape: Tape,
    out_names: Vec<String>,
    // workspace
    values: Vec<f64>,
    scratch: Vec<f64>,
    buf: Vec<f64>,
}

impl ReferenceOde {
    pub fn new(mut s: ReducedStructure) -> Self {
        let var_count = s.graph.var_count();
        let names = s.states.iter().map(|&v| s.graph.variable(v).name.clone()).collect();
        let state_slots = s.states.iter().map(|v| v.index()).collect();
        let input_slots =
            s.inputs.iter().map(|i| (s.graph.variable(i.var).name.clone(), i.var.index(), i.value)).collect();
        let f_tape = Tape::new(&s.graph, &s.f);
        let mut blocks = Vec::new();
        let mut torn_vars = Vec::new();
        let mut residuals = Vec::new();
        for b in &s.blocks {
            let outs: Vec<NodeId> = if b.linear {
                b.matrix.iter().chain(&b.rhs).copied().collect()
            } else {
                b.matrix.iter().chain(&b.residuals).copied().collect()
            };
            blocks.push(CompiledBlock {
                vars: b.vars.iter().map(|v| v.index()).collect(),
                linear: b.linear,
                tape: Tape::new(&s.graph, &outs),
            });
            torn_vars.extend(b.vars.iter().copied());
            residuals.extend(b.residuals.iter().copied());
        }
        let state_col: HashMap<VarId, usize> = s.states.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let torn_col: HashMap<VarId, usize> = torn_vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut nodes = Vec::new();
        let mut entries = Vec::new();
        let eqs: Vec<(bool, usize, NodeId)> = s
            .f
            .iter()
            .enumerate()
            .map(|(i, &e)| (true, i, e))
            .chain(residuals.iter().enumerate().map(|(i, &e)| (false, i, e)))
            .collect();
        for (is_f, row, e) in eqs {
            for v in s.graph.variables_of(e) {
                let (part, c) = if let Some(&c) = state_col.get(&v) {
                    (if is_f { JacPart::Fx } else { JacPart::Gx }, c)
                } else if let Some(&c) = torn_col.get(&v) {
                    (if is_f { JacPart::Fu } else { JacPart::Gu }, c)
                } else {
                    continue;
                };
                let d = s.graph.partial(e, v);
                if s.graph.const_value(d) == Some(0.0) {
                    continue;
                }
                nodes.push(d);
                entries.push((part, row, c));
            }
        }
        let jac_tape = Tape::new(&s.graph, &nodes);
        let out_nodes: Vec<NodeId> = s.eliminated.iter().map(|p| p.1).collect();
        let out_tape = Tape::new(&s.graph, &out_nodes);
        let out_names = s.eliminated.iter().map(|p| s.graph.variable(p.0).name.clone()).collect();
        let time_slot = s.time.map(|t| t.index());
        ReferenceOde {
            structure: s,
            names,
            state_slots,
            input_slots,
            time_slot,
            var_count,
            f_tape,
            blocks,
            torn: torn_vars.iter().map(|v| v.index()).collect(),
            jac_tape,
            jac_entries: entries,
            out_tape,
            out_names,
            values: vec![0.0; var_count],
            scratch: Vec::new(),
            buf: Vec::new(),
        }
    }

    pub fn n_torn(&self) -> usize {
        self.torn.len()
    }

    pub fn input_value(&self, name: &str) -> Option<f64> {
        self.input_slots.iter().find(|s| s.0 == name).map(|s| s.2)
    }

    pub fn set_input(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match self.input_slots.iter_mut().find(|s| s.0 == name) {
            Some(s) => {
                s.2 = value;
                Ok(())
            }
            None => Err(ModelError::UnknownInput(name.to_string())),
        }
    }

    fn eval_err(e: crate::expr::TapeError) -> ModelError {
        ModelError::Eval(format!("{e:?}"))
    }

    /// Loads `(t, y)` and solves every torn block in order.
    fn solve_algebraic(&mut self, t: f64, y: &[f64]) -> Result<(), ModelError> {
        self.values.resize(self.var_count, 0.0);
        for (k, &s) in self.state_slots.iter().enumerate() {
            self.values[s] = y[k];
        }
        for (_, s, v) in &self.input_slots {
            self.values[*s] = *v;
        }
        if let Some(ts) = self.time_slot {
            self.values[ts] = t;
        }
        for bi in 0..self.blocks.len() {
            let k = self.blocks[bi].vars.len();
            if self.blocks[bi].linear {
                self.buf.resize(k * k + k, 0.0);
                self.blocks[bi]
                    .tape
                    .eval(&self.values, &[], &mut self.scratch, &mut self.buf)
                    .map_err(Self::eval_err)?;
                let u = solve_dense(k, &self.buf[..k * k], &self.buf[k * k..])
                    .ok_or_else(|| ModelError::Singular(self.block_name(bi)))?;
                for (j, &slot) in self.blocks[bi].vars.iter().enumerate() {
                    self.values[slot] = u[j];
                }
            } else {
                self.newton_block(bi)?;
            }
        }
        Ok(())
    }

    fn block_name(&self, bi: usize) -> String {
        let b = &self.structure.blocks[bi];
        let names: Vec<&str> = b.vars.iter().map(|&v| self.structure.graph.variable(v).name.as_str()).collect();
        format!("block [{}]", names.join(", "))
    }

    fn newton_block(&mut self, bi: usize) -> Result<(), ModelError> {
        let k = self.blocks[bi].vars.len();
        for _ in 0..50 {
            self.buf.resize(k * k + k, 0.0);
            self.blocks[bi]
                .tape
                .eval(&self.values, &[], &mut self.scratch, &mut self.buf)
                .map_err(Self::eval_err)?;
            let r: Vec<f64> = self.buf[k * k..].to_vec();
            let du = solve_dense(k, &self.buf[..k * k], &r).ok_or_else(|| ModelError::Singular(self.block_name(bi)))?;
            let mut step = 0.0f64;
            let mut size = 0.0f64;
            for (j, &slot) in self.blocks[bi].vars.iter().enumerate() {
                self.values[slot] -= du[j];
                step = step.max(du[j].abs());
                size = size.max(self.values[slot].abs());
            }
            if step <= 1e-14 * size.max(1.0) {
                return Ok(());
            }
        }
        Err(ModelError::NoConvergence(self.block_name(bi)))
    }

    /// Values of the torn variables followed by the eliminated variables at
    /// `(t, y)`, with their names.
    pub fn algebraic_outputs(&mut self, t: f64, y: &[f64]) -> Result<Vec<(String, f64)>, ModelError> {
        self.solve_algebraic(t, y)?;
        let mut out = Vec::new();
        for (bi, b) in self.structure.blocks.iter().enumerate() {
            for (j, &v) in b.vars.iter().enumerate() {
                out.push((self.structure.graph.variable(v).name.clone(), self.values[self.blocks[bi].vars[j]]));
            }
        }
        let mut vals = vec![0.0; self.out_names.len()];
        self.out_tape.eval(&self.values, &[], &mut self.scratch, &mut vals).map_err(Self::eval_err)?;
        out.extend(self.out_names.iter().cloned().zip(vals));
        Ok(out)
    }
}

/// Dense solve by LU with partial pivoting; `None` when singular.
pub fn solve_dense(k: usize, a_row_major: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    match k {
        0 => Some(Vec::new()),
        1 => {
            let a = a_row_major[0];
            if a == 0.0 {
                None
            } else {
                Some(vec![b[0] / a])
            }
        }
        _ => {
            let a = DMatrix::from_row_slice(k, k, a_row_major);
            let lu = a.lu();
            lu.solve(&DVector::from_column_slice(b)).map(|v| v.as_slice().to_vec())
        }
    }
}

impl OdeModel for ReferenceOde {
    fn dim(&self) -> usize {
        self.state_slots.len()
    }

    fn state_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn is_autonomous(&self) -> bool {
        self.time_slot.is_none()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ModelError> {
        self.solve_algebraic(t, y)?;
        self.f_tape.eval(&self.values, &[], &mut self.scratch, dy).map_err(Self::eval_err)?;
        if let Some(i) = dy.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(())
    }

    /// Exact `f_x − f_u G_u⁻¹ G_x` with `G` the torn residuals.
    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> Result<(), ModelError> {
        self.solve_algebraic(t, y)?;
        let n = self.state_slots.len();
        let m = self.torn.len();
        let mut vals = std::mem::take(&mut self.buf);
        vals.resize(self.jac_entries.len(), 0.0);
        self.jac_tape.eval(&self.values, &[], &mut self.scratch, &mut vals).map_err(Self::eval_err)?;
        jac.fill(0.0);
        let mut fu = DMatrix::zeros(n, m);
        let mut gx = DMatrix::zeros(m, n);
        let mut gu = DMatrix::zeros(m, m);
        for (k, &(part, r, c)) in self.jac_entries.iter().enumerate() {
            let v = vals[k];
            match part {
                JacPart::Fx => jac[(r, c)] += v,
                JacPart::Fu => fu[(r, c)] += v,
                JacPart::Gx => gx[(r, c)] += v,
                JacPart::Gu => gu[(r, c)] += v,
            }
        }
        self.buf = vals;
        if m > 0 {
            let sol = gu.lu().solve(&gx).ok_or_else(|| ModelError::Singular("torn residual Jacobian".into()))?;
            jac.gemm(-1.0, &fu, &sol, 1.0);
        }
        Ok(())
    }

    fn apply_event(&mut self, event: &Event) -> Result<(), ModelError> {
        self.set_input(&event.input, event.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExpressionGraph;

    /// Three inductors from voltage sources into a common node with no
    /// shunt: the current-cutset structure.
    fn cutset() -> SemiExplicitDae {
        let mut s = SemiExplicitDae::new(ExpressionGraph::new(), 1.0);
        let mut cur = Vec::new();
        for k in 1..=3 {
            cur.push(s.add_differential(&format!("i{k}"), None).unwrap());
        }
        let v0 = s.add_algebraic("v0").unwrap();
        let mut src = Vec::new();
        for k in 1..=3 {
            src.push(s.add_input(&format!("e{k}"), k as f64 * 0.1).unwrap());
        }
        for k in 0..3 {
            let e = s.graph.var(src[k]);
            let v = s.graph.var(v0);
            let i = s.graph.var(cur[k]);
            let d = s.graph.sub(e, v);
            let r = s.graph.scale(0.01 * (k + 1) as f64, i);
            let rhs = s.graph.sub(d, r);
            s.f.push(rhs);
        }
        let a = s.graph.var(cur[0]);
        let b = s.graph.var(cur[1]);
        let c = s.graph.var(cur[2]);
        let ab = s.graph.add(a, b);
        let kcl = s.graph.add(ab, c);
        s.push_g(kcl, "kcl v0");
        s
    }

    #[test]
    fn phase_one_bookkeeping_on_scalar_cutset() {
        let s = cutset();
        s.validate().unwrap();
        let (n, m, e) = (s.n_diff(), s.n_alg(), s.n_eq());
        let (r, plan) = phase_one(s).unwrap();
        let q = plan.constraint_rows.len();
        assert_eq!(q, 1);
        assert_eq!(r.n_diff(), n - q);
        assert_eq!(r.n_alg(), m + 2 * q);
        assert_eq!(r.n_eq(), e + q);
        assert_eq!(structural_index_report(&r).class, IndexClass::Index1);
    }

    #[test]
    fn hidden_constraint_is_sum_of_derivatives() {
        let mut s = cutset();
        let rows = constraint_rows(&s);
        let h = differentiate_constraints(&mut s, &rows).unwrap();
        assert_eq!(s.graph.dump(h[0]), "(add (add (der i1) (der i2)) (der i3))");
    }

    #[test]
    fn reduced_cutset_keeps_kcl() {
        let s = cutset();
        let (mut ode, rep) = reference_reduce(s).unwrap();
        assert_eq!(rep.states, 2);
        let y = [0.3, -0.1];
        let mut dy = [0.0; 2];
        ode.rhs(0.0, &y, &mut dy).unwrap();
        let outs: HashMap<String, f64> = ode.algebraic_outputs(0.0, &y).unwrap().into_iter().collect();
        let sel = &rep.selected[0];
        let i_sel = outs[sel];
        let others: f64 = y.iter().sum();
        assert!((i_sel + others).abs() < 1e-15);
    }

    #[test]
    fn forward_substitution_inlines_scalar() {
        // x = 2y as algebraic, ẏ = x
        let mut s = SemiExplicitDae::new(ExpressionGraph::new(), 1.0);
        let y = s.add_differential("y", None).unwrap();
        let x = s.add_algebraic("x").unwrap();
        let xn = s.graph.var(x);
        s.f.push(xn);
        let yn = s.graph.var(y);
        let two_y = s.graph.scale(2.0, yn);
        let g = s.graph.sub(xn, two_y);
        s.push_g(g, "x def");
        let red = phase_two(s).unwrap();
        assert!(red.blocks.is_empty());
        assert_eq!(red.graph.variables_of(red.f[0]).into_iter().collect::<Vec<_>>(), vec![y]);
        assert_eq!(red.graph.evaluate(red.f[0], &[1.5, 0.0]).unwrap(), 3.0);
    }

    #[test]
    fn selection_prefers_least_used_variable() {
        // constraint x1 + x2 = 0 where x2 appears nowhere else
        let mut s = SemiExplicitDae::new(ExpressionGraph::new(), 1.0);
        let x1 = s.add_differential("x1", None).unwrap();
        let x2 = s.add_differential("x2", None).unwrap();
        let x3 = s.add_differential("x3", None).unwrap();
        let z = s.add_algebraic("z").unwrap();
        let (a, b, c, zn) = (s.graph.var(x1), s.graph.var(x2), s.graph.var(x3), s.graph.var(z));
        let f1 = s.graph.add(c, zn);
        let f2 = zn;
        let f3 = s.graph.neg(a);
        s.f.extend([f1, f2, f3]);
        let g = s.graph.add(a, b);
        s.push_g(g, "c");
        let rows = constraint_rows(&s);
        let sel = select_dependent_variables(&mut s, &rows).unwrap();
        assert_eq!(sel, vec![x2]);
    }
}
