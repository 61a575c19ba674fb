//! Semi-explicit DAE container: `ẋ = f(t,x,z)`, `0 = g(t,x,z)`.

use std::collections::HashMap;
use std::fmt;

use fixedbitset::FixedBitSet;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{ExprError, ExpressionGraph, NodeId, Tape, TapeError, VarId, VarKind};

#[derive(Debug, Error)]
pub enum DaeError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("non-finite value in equation {equation} ({label})")]
    NonFinite { equation: usize, label: String },
    #[error("non-finite Jacobian entry at equation {equation}, variable {variable}")]
    NonFiniteJacobian { equation: usize, variable: String },
    #[error("evaluation failed: {0}")]
    Eval(#[from] ExprError),
    #[error("malformed system: {0}")]
    Malformed(String),
}

/// A held external input. Its value can be changed between integration
/// segments (events); its time derivative is zero.
#[derive(Clone, Debug)]
pub struct HeldInput {
    pub var: VarId,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SemiExplicitDae {
    pub graph: ExpressionGraph,
    pub diff_vars: Vec<VarId>,
    pub alg_vars: Vec<VarId>,
    /// One right-hand side per differential variable.
    pub f: Vec<NodeId>,
    pub g: Vec<NodeId>,
    /// Human-readable tag per g-equation.
    pub g_labels: Vec<String>,
    pub inputs: Vec<HeldInput>,
    /// Independent time variable, present when some equation depends on `t`.
    pub time: Option<VarId>,
    pub omega0: f64,
}

impl SemiExplicitDae {
    pub fn new(graph: ExpressionGraph, omega0: f64) -> Self {
        SemiExplicitDae {
            graph,
            diff_vars: Vec::new(),
            alg_vars: Vec::new(),
            f: Vec::new(),
            g: Vec::new(),
            g_labels: Vec::new(),
            inputs: Vec::new(),
            time: None,
            omega0,
        }
    }

    pub fn n_diff(&self) -> usize {
        self.diff_vars.len()
    }

    pub fn n_alg(&self) -> usize {
        self.alg_vars.len()
    }

    pub fn n_eq(&self) -> usize {
        self.f.len() + self.g.len()
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.graph.variable(v).name
    }

    pub fn diff_names(&self) -> Vec<String> {
        self.diff_vars.iter().map(|&v| self.name(v).to_string()).collect()
    }

    pub fn alg_names(&self) -> Vec<String> {
        self.alg_vars.iter().map(|&v| self.name(v).to_string()).collect()
    }

    pub fn input_by_name(&self, name: &str) -> Option<usize> {
        let v = self.graph.var_by_name(name)?;
        self.inputs.iter().position(|i| i.var == v)
    }

    pub fn set_input(&mut self, name: &str, value: f64) -> bool {
        match self.input_by_name(name) {
            Some(k) => {
                self.inputs[k].value = value;
                true
            }
            None => false,
        }
    }

    /// Registers a variable and pushes it onto the matching list.
    pub fn add_differential(&mut self, name: &str, rhs_placeholder: Option<NodeId>) -> Result<VarId, DaeError> {
        let v = self.graph.add_variable(name, VarKind::Differential)?;
        self.diff_vars.push(v);
        if let Some(r) = rhs_placeholder {
            self.f.push(r);
        }
        Ok(v)
    }

    pub fn add_algebraic(&mut self, name: &str) -> Result<VarId, DaeError> {
        let v = self.graph.add_variable(name, VarKind::Algebraic)?;
        self.alg_vars.push(v);
        Ok(v)
    }

    pub fn add_input(&mut self, name: &str, value: f64) -> Result<VarId, DaeError> {
        let v = self.graph.add_variable(name, VarKind::Input)?;
        self.inputs.push(HeldInput { var: v, value });
        Ok(v)
    }

    pub fn time_var(&mut self) -> VarId {
        if let Some(t) = self.time {
            return t;
        }
        let t = self.graph.add_variable("t", VarKind::Input).expect("`t` is reserved");
        self.time = Some(t);
        t
    }

    pub fn push_g(&mut self, eq: NodeId, label: impl Into<String>) {
        self.g.push(eq);
        self.g_labels.push(label.into());
    }

    /// Checks the structural invariants of the container.
    pub fn validate(&self) -> Result<(), DaeError> {
        if self.f.len() != self.diff_vars.len() {
            return Err(DaeError::Malformed(format!(
                "{} f-equations for {} differential variables",
                self.f.len(),
                self.diff_vars.len()
            )));
        }
        if self.n_eq() != self.n_diff() + self.n_alg() {
            return Err(DaeError::Malformed(format!(
                "{} equations for {} variables",
                self.n_eq(),
                self.n_diff() + self.n_alg()
            )));
        }
        if !(self.omega0 > 0.0) {
            return Err(DaeError::Malformed("omega0 must be positive".into()));
        }
        let mut owner: HashMap<VarId, u8> = HashMap::new();
        for &v in &self.diff_vars {
            *owner.entry(v).or_default() += 1;
        }
        for &v in &self.alg_vars {
            *owner.entry(v).or_default() += 1;
        }
        for i in &self.inputs {
            *owner.entry(i.var).or_default() += 1;
        }
        if let Some(t) = self.time {
            *owner.entry(t).or_default() += 1;
        }
        if let Some((v, _)) = owner.iter().find(|(_, &c)| c > 1) {
            return Err(DaeError::Malformed(format!("variable `{}` listed twice", self.name(*v))));
        }
        for &e in self.f.iter().chain(&self.g) {
            for v in self.graph.variables_of(e) {
                if !owner.contains_key(&v) {
                    return Err(DaeError::Malformed(format!(
                        "variable `{}` is referenced but not classified",
                        self.name(v)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Column index in the `[x; z]` layout for each variable.
    pub fn column_map(&self) -> HashMap<VarId, usize> {
        self.diff_vars
            .iter()
            .chain(&self.alg_vars)
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect()
    }

    pub fn equation(&self, row: usize) -> NodeId {
        if row < self.f.len() {
            self.f[row]
        } else {
            self.g[row - self.f.len()]
        }
    }

    pub fn equation_label(&self, row: usize) -> String {
        if row < self.f.len() {
            format!("d/dt {}", self.name(self.diff_vars[row]))
        } else {
            self.g_labels[row - self.f.len()].clone()
        }
    }

    /// Structural incidence B = [I, S{f_z}; 0, S{g_z}].
    pub fn incidence(&self) -> IncidenceMatrix {
        let n = self.n_diff();
        let m = self.n_alg();
        let alg_col: HashMap<VarId, usize> =
            self.alg_vars.iter().enumerate().map(|(i, &v)| (v, n + i)).collect();
        let mut rows = Vec::with_capacity(n + m);
        for (i, &e) in self.f.iter().enumerate() {
            let mut b = FixedBitSet::with_capacity(n + m);
            b.insert(i);
            for v in self.graph.variables_of(e) {
                if let Some(&c) = alg_col.get(&v) {
                    b.insert(c);
                }
            }
            rows.push(b);
        }
        for &e in &self.g {
            let mut b = FixedBitSet::with_capacity(n + m);
            for v in self.graph.variables_of(e) {
                if let Some(&c) = alg_col.get(&v) {
                    b.insert(c);
                }
            }
            rows.push(b);
        }
        IncidenceMatrix { n_diff: n, n_alg: m, rows }
    }

    pub fn summary(&self) -> SystemSummary {
        let inc = self.incidence();
        SystemSummary {
            differential: self.n_diff(),
            algebraic: self.n_alg(),
            f_equations: self.f.len(),
            g_equations: self.g.len(),
            zero_rows: inc.zero_g_rows().len(),
            inputs: self.inputs.len(),
            nodes: self.graph.node_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemSummary {
    pub differential: usize,
    pub algebraic: usize,
    pub f_equations: usize,
    pub g_equations: usize,
    pub zero_rows: usize,
    pub inputs: usize,
    pub nodes: usize,
}

impl fmt::Display for SystemSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "differential variables : {}", self.differential)?;
        writeln!(f, "algebraic variables    : {}", self.algebraic)?;
        writeln!(f, "f-equations            : {}", self.f_equations)?;
        writeln!(f, "g-equations            : {}", self.g_equations)?;
        writeln!(f, "zero-row constraints   : {}", self.zero_rows)?;
        writeln!(f, "held inputs            : {}", self.inputs)?;
        write!(f, "expression nodes       : {}", self.nodes)
    }
}

/// Binary incidence matrix. Rows are equations (f then g); columns are the
/// ẋ-columns followed by the z-columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    pub n_diff: usize,
    pub n_alg: usize,
    pub rows: Vec<FixedBitSet>,
}

impl IncidenceMatrix {
    pub fn from_rows(n_diff: usize, n_alg: usize, rows: Vec<Vec<usize>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|r| {
                let mut b = FixedBitSet::with_capacity(n_diff + n_alg);
                for c in r {
                    b.insert(c);
                }
                b
            })
            .collect();
        IncidenceMatrix { n_diff, n_alg, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_diff + self.n_alg
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].contains(c)
    }

    pub fn row_cols(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[r].ones()
    }

    /// g-rows with no structural entry at all.
    pub fn zero_g_rows(&self) -> Vec<usize> {
        (self.n_diff..self.rows.len())
            .filter(|&r| self.rows[r].is_clear())
            .collect()
    }
}

/// Numeric result of the g_z rank test.
#[derive(Clone, Debug, PartialEq)]
pub enum GzStatus {
    Nonsingular,
    Singular { nullity: usize },
}

/// Relative singular-value threshold for numeric rank.
pub const RANK_TOL: f64 = 1e-10;

pub fn numeric_nullity(m: &DMatrix<f64>) -> usize {
    let n = m.ncols().min(m.nrows());
    if n == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return m.ncols();
    }
    let rank = sv.iter().filter(|&&s| s >= RANK_TOL * smax).count();
    m.ncols() - rank
}

/// Compiled evaluation programs for a system. Immutable and shareable.
#[derive(Clone, Debug)]
pub struct CompiledDae {
    n: usize,
    m: usize,
    var_count: usize,
    cols: Vec<VarId>,
    time: Option<VarId>,
    inputs: Vec<HeldInput>,
    input_names: Vec<String>,
    labels: Vec<String>,
    col_names: Vec<String>,
    eq_tape: Tape,
    jac_tape: Tape,
    /// (row, col) of each output of `jac_tape`.
    jac_entries: Vec<(usize, usize)>,
    /// Outputs of `ft_tape`, one per equation (zeros when time-independent).
    ft_tape: Option<Tape>,
}

/// Per-thread scratch storage.
#[derive(Clone, Debug, Default)]
pub struct EvaluationWorkspace {
    values: Vec<f64>,
    scratch: Vec<f64>,
    out: Vec<f64>,
    pub timestamp: f64,
}

impl CompiledDae {
    pub fn new(sys: &mut SemiExplicitDae) -> Self {
        let n = sys.n_diff();
        let m = sys.n_alg();
        let eqs: Vec<NodeId> = sys.f.iter().chain(&sys.g).copied().collect();
        let cols: Vec<VarId> = sys.diff_vars.iter().chain(&sys.alg_vars).copied().collect();
        let col_of = sys.column_map();
        let mut jac_nodes = Vec::new();
        let mut jac_entries = Vec::new();
        for (r, &e) in eqs.iter().enumerate() {
            for v in sys.graph.variables_of(e) {
                if let Some(&c) = col_of.get(&v) {
                    let d = sys.graph.partial(e, v);
                    if sys.graph.const_value(d) != Some(0.0) {
                        jac_nodes.push(d);
                        jac_entries.push((r, c));
                    }
                }
            }
        }
        let ft_tape = sys.time.map(|t| {
            let nodes: Vec<NodeId> = eqs.iter().map(|&e| sys.graph.partial(e, t)).collect();
            Tape::new(&sys.graph, &nodes)
        });
        let labels = (0..eqs.len()).map(|r| sys.equation_label(r)).collect();
        let col_names = cols.iter().map(|&v| sys.name(v).to_string()).collect();
        CompiledDae {
            n,
            m,
            var_count: sys.graph.var_count(),
            cols,
            time: sys.time,
            inputs: sys.inputs.clone(),
            input_names: sys.inputs.iter().map(|i| sys.name(i.var).to_string()).collect(),
            labels,
            col_names,
            eq_tape: Tape::new(&sys.graph, &eqs),
            jac_tape: Tape::new(&sys.graph, &jac_nodes),
            jac_entries,
            ft_tape,
        }
    }

    pub fn n_diff(&self) -> usize {
        self.n
    }

    pub fn n_alg(&self) -> usize {
        self.m
    }

    pub fn workspace(&self) -> EvaluationWorkspace {
        EvaluationWorkspace {
            values: vec![0.0; self.var_count],
            scratch: Vec::new(),
            out: Vec::new(),
            timestamp: 0.0,
        }
    }

    pub fn set_input(&mut self, var: VarId, value: f64) {
        if let Some(i) = self.inputs.iter_mut().find(|i| i.var == var) {
            i.value = value;
        }
    }

    /// Differential then algebraic variable names.
    pub fn column_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn depends_on_time(&self) -> bool {
        self.ft_tape.is_some()
    }

    pub fn input_value(&self, name: &str) -> Option<f64> {
        self.input_names.iter().position(|n| n == name).map(|k| self.inputs[k].value)
    }

    /// Returns `false` when no input has that name.
    pub fn set_input_named(&mut self, name: &str, value: f64) -> bool {
        match self.input_names.iter().position(|n| n == name) {
            Some(k) => {
                self.inputs[k].value = value;
                true
            }
            None => false,
        }
    }

    fn load(&self, t: f64, x: &[f64], z: &[f64], ws: &mut EvaluationWorkspace) -> Result<(), DaeError> {
        if x.len() != self.n {
            return Err(DaeError::Dimension { what: "x", got: x.len(), expected: self.n });
        }
        if z.len() != self.m {
            return Err(DaeError::Dimension { what: "z", got: z.len(), expected: self.m });
        }
        if ws.values.len() != self.var_count {
            ws.values.resize(self.var_count, 0.0);
        }
        for (k, &v) in self.cols.iter().enumerate() {
            ws.values[v.index()] = if k < self.n { x[k] } else { z[k - self.n] };
        }
        for i in &self.inputs {
            ws.values[i.var.index()] = i.value;
        }
        if let Some(tv) = self.time {
            ws.values[tv.index()] = t;
        }
        ws.timestamp = t;
        Ok(())
    }

    fn tape_error(&self, e: TapeError) -> DaeError {
        match e {
            TapeError::DivisionByZero(n) => {
                DaeError::NonFinite { equation: usize::MAX, label: format!("division by zero at node {n}") }
            }
            other => DaeError::Malformed(format!("{other:?}")),
        }
    }

    /// Stacked `[f(t,x,z); g(t,x,z)]`.
    pub fn rhs(&self, t: f64, x: &[f64], z: &[f64], ws: &mut EvaluationWorkspace, out: &mut [f64]) -> Result<(), DaeError> {
        self.load(t, x, z, ws)?;
        self.eq_tape
            .eval(&ws.values, &[], &mut ws.scratch, out)
            .map_err(|e| self.tape_error(e))?;
        if let Some(r) = out.iter().position(|v| !v.is_finite()) {
            return Err(DaeError::NonFinite { equation: r, label: self.labels[r].clone() });
        }
        Ok(())
    }

    /// `[f − ẋ; g]`.
    pub fn residual(
        &self,
        t: f64,
        x: &[f64],
        z: &[f64],
        xdot: &[f64],
        ws: &mut EvaluationWorkspace,
    ) -> Result<Vec<f64>, DaeError> {
        if xdot.len() != self.n {
            return Err(DaeError::Dimension { what: "xdot", got: xdot.len(), expected: self.n });
        }
        let mut out = vec![0.0; self.n + self.m];
        self.rhs(t, x, z, ws, &mut out)?;
        for i in 0..self.n {
            out[i] -= xdot[i];
        }
        Ok(out)
    }

    /// Dense `[f_x f_z; g_x g_z]`.
    pub fn jacobian(&self, t: f64, x: &[f64], z: &[f64], ws: &mut EvaluationWorkspace) -> Result<DMatrix<f64>, DaeError> {
        let mut j = DMatrix::zeros(self.n + self.m, self.n + self.m);
        self.jacobian_into(t, x, z, ws, &mut j)?;
        Ok(j)
    }

    pub fn jacobian_into(
        &self,
        t: f64,
        x: &[f64],
        z: &[f64],
        ws: &mut EvaluationWorkspace,
        j: &mut DMatrix<f64>,
    ) -> Result<(), DaeError> {
        self.load(t, x, z, ws)?;
        let mut out = std::mem::take(&mut ws.out);
        out.resize(self.jac_entries.len(), 0.0);
        self.jac_tape
            .eval(&ws.values, &[], &mut ws.scratch, &mut out)
            .map_err(|e| self.tape_error(e))?;
        j.fill(0.0);
        for (k, &(r, c)) in self.jac_entries.iter().enumerate() {
            if !out[k].is_finite() {
                return Err(DaeError::NonFiniteJacobian { equation: r, variable: self.col_names[c].clone() });
            }
            j[(r, c)] += out[k];
        }
        ws.out = out;
        Ok(())
    }

    /// Partial derivative of every equation with respect to explicit time.
    pub fn time_partial(&self, t: f64, x: &[f64], z: &[f64], ws: &mut EvaluationWorkspace, out: &mut [f64]) -> Result<(), DaeError> {
        match &self.ft_tape {
            None => {
                out.fill(0.0);
                Ok(())
            }
            Some(tape) => {
                self.load(t, x, z, ws)?;
                tape.eval(&ws.values, &[], &mut ws.scratch, out).map_err(|e| self.tape_error(e))
            }
        }
    }

    /// Numeric rank test on the g_z block.
    pub fn gz_singularity(&self, t: f64, x: &[f64], z: &[f64]) -> Result<GzStatus, DaeError> {
        let mut ws = self.workspace();
        let j = self.jacobian(t, x, z, &mut ws)?;
        let gz = j.view((self.n, self.n), (self.m, self.m)).into_owned();
        Ok(match numeric_nullity(&gz) {
            0 => GzStatus::Nonsingular,
            k => GzStatus::Singular { nullity: k },
        })
    }
}
