//! Hash-consed scalar expression DAG.
//!
//! Every equation of a raw network model lives in one [`ExpressionGraph`].
//! Nodes are appended in topological order (children always carry smaller
//! ids than their parents), so every traversal in this module is a single
//! ascending sweep over the reachable node set.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    Differential,
    Algebraic,
    PseudoDerivative,
    Input,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

/// Operation kinds accepted by [`ExpressionGraph::add_expression`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Constant(f64),
    Variable(VarId),
    Derivative(VarId),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Sqrt,
}

impl OpKind {
    fn arity(self) -> usize {
        match self {
            OpKind::Constant(_) | OpKind::Variable(_) | OpKind::Derivative(_) => 0,
            OpKind::Neg | OpKind::Sin | OpKind::Cos | OpKind::Sqrt => 1,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    /// Bit pattern of the interned constant.
    Const(u64),
    Var(VarId),
    Der(VarId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
}

impl Node {
    fn children(&self) -> [Option<NodeId>; 2] {
        match *self {
            Node::Const(_) | Node::Var(_) | Node::Der(_) => [None, None],
            Node::Neg(a) | Node::Sin(a) | Node::Cos(a) | Node::Sqrt(a) => [Some(a), None],
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                [Some(a), Some(b)]
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("operation {op:?} expects {expected} children, got {got}")]
    Arity { op: OpKind, expected: usize, got: usize },
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("unknown variable id {0}")]
    UnknownVariable(u32),
    #[error("variable `{0}` is already registered")]
    DuplicateVariable(String),
    #[error("no value supplied for variable `{0}`")]
    MissingValue(String),
    #[error("no derivative value supplied for variable `{0}`")]
    MissingDerivative(String),
    #[error("division by zero at node {0}")]
    DivisionByZero(u32),
    #[error("no time-derivative binding for variable `{0}`")]
    UnboundVariable(String),
    #[error("derivative-ref to `{0}`, which is neither differential nor a pseudo-derivative")]
    InvalidDerivativeRef(String),
}

/// Immutable-after-build scalar expression DAG with a variable table.
#[derive(Clone, Debug, Default)]
pub struct ExpressionGraph {
    nodes: Vec<Node>,
    lookup: HashMap<Node, NodeId>,
    vars: Vec<Variable>,
    var_lookup: HashMap<String, VarId>,
}

impl ExpressionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Node {
        self.nodes[id.index()]
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn variable(&self, v: VarId) -> &Variable {
        &self.vars[v.index()]
    }

    pub fn variables(&self) -> impl Iterator<Item = (VarId, &Variable)> {
        self.vars.iter().enumerate().map(|(i, v)| (VarId(i as u32), v))
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.var_lookup.get(name).copied()
    }

    pub fn add_variable(&mut self, name: &str, kind: VarKind) -> Result<VarId, ExprError> {
        if self.var_lookup.contains_key(name) {
            return Err(ExprError::DuplicateVariable(name.to_string()));
        }
        let id = VarId(self.vars.len() as u32);
        self.vars.push(Variable { name: name.to_string(), kind });
        self.var_lookup.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn set_kind(&mut self, v: VarId, kind: VarKind) {
        self.vars[v.index()].kind = kind;
    }

    fn intern(&mut self, node: Node) -> NodeId {
        if let Some(&id) = self.lookup.get(&node) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node);
        self.lookup.insert(node, id);
        id
    }

    /// Checked construction entry point. Applies the same 0/1 identities as
    /// the typed helpers below.
    pub fn add_expression(&mut self, op: OpKind, children: &[NodeId]) -> Result<NodeId, ExprError> {
        if children.len() != op.arity() {
            return Err(ExprError::Arity { op, expected: op.arity(), got: children.len() });
        }
        for c in children {
            if c.index() >= self.nodes.len() {
                return Err(ExprError::UnknownNode(c.0));
            }
        }
        let id = match op {
            OpKind::Constant(c) => self.constant(c),
            OpKind::Variable(v) | OpKind::Derivative(v) if v.index() >= self.vars.len() => {
                return Err(ExprError::UnknownVariable(v.0))
            }
            OpKind::Variable(v) => self.var(v),
            OpKind::Derivative(v) => self.der(v)?,
            OpKind::Add => self.add(children[0], children[1]),
            OpKind::Sub => self.sub(children[0], children[1]),
            OpKind::Mul => self.mul(children[0], children[1]),
            OpKind::Div => self.div(children[0], children[1]),
            OpKind::Neg => self.neg(children[0]),
            OpKind::Sin => self.sin(children[0]),
            OpKind::Cos => self.cos(children[0]),
            OpKind::Sqrt => self.sqrt(children[0]),
        };
        Ok(id)
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        // -0.0 and 0.0 intern to the same node
        let c = if c == 0.0 { 0.0 } else { c };
        self.intern(Node::Const(c.to_bits()))
    }

    pub fn zero(&mut self) -> NodeId {
        self.constant(0.0)
    }

    pub fn one(&mut self) -> NodeId {
        self.constant(1.0)
    }

    pub fn var(&mut self, v: VarId) -> NodeId {
        self.intern(Node::Var(v))
    }

    pub fn var_named(&mut self, name: &str) -> Option<NodeId> {
        let v = self.var_by_name(name)?;
        Some(self.var(v))
    }

    pub fn der(&mut self, v: VarId) -> Result<NodeId, ExprError> {
        match self.vars[v.index()].kind {
            VarKind::Differential | VarKind::PseudoDerivative => Ok(self.intern(Node::Der(v))),
            _ => Err(ExprError::InvalidDerivativeRef(self.vars[v.index()].name.clone())),
        }
    }

    pub fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id.index()] {
            Node::Const(bits) => Some(f64::from_bits(bits)),
            _ => None,
        }
    }

    /// Value of a subtree that references no variables, if it has one.
    pub fn eval_constant(&self, id: NodeId) -> Option<f64> {
        let r = self.reachable(&[id]);
        if r.iter().any(|n| matches!(self.nodes[n.index()], Node::Var(_) | Node::Der(_))) {
            return None;
        }
        self.evaluate(id, &[]).ok()
    }

    fn is_const(&self, id: NodeId, value: f64) -> bool {
        self.const_value(id) == Some(value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(a, 0.0) {
            return b;
        }
        if self.is_const(b, 0.0) {
            return a;
        }
        self.intern(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(b, 0.0) {
            return a;
        }
        if self.is_const(a, 0.0) {
            return self.neg(b);
        }
        self.intern(Node::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(a, 0.0) || self.is_const(b, 0.0) {
            return self.zero();
        }
        if self.is_const(a, 1.0) {
            return b;
        }
        if self.is_const(b, 1.0) {
            return a;
        }
        self.intern(Node::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(b, 1.0) {
            return a;
        }
        if self.is_const(a, 0.0) && !self.is_const(b, 0.0) {
            return a;
        }
        self.intern(Node::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        if self.is_const(a, 0.0) {
            return a;
        }
        self.intern(Node::Neg(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.intern(Node::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.intern(Node::Cos(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.intern(Node::Sqrt(a))
    }

    /// `c * a` with an interned constant.
    pub fn scale(&mut self, c: f64, a: NodeId) -> NodeId {
        let k = self.constant(c);
        self.mul(k, a)
    }

    /// Sum of a list of terms; empty sums are zero.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = self.zero();
        for &t in terms {
            acc = self.add(acc, t);
        }
        acc
    }

    /// All nodes reachable from `roots`, ascending (a valid evaluation order).
    pub fn reachable(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(n) = stack.pop() {
            if seen[n.index()] {
                continue;
            }
            seen[n.index()] = true;
            for c in self.nodes[n.index()].children().into_iter().flatten() {
                if !seen[c.index()] {
                    stack.push(c);
                }
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    /// Variables (by value reference) reachable from a node, sorted.
    pub fn variables_of(&self, root: NodeId) -> BTreeSet<VarId> {
        self.reachable(&[root])
            .into_iter()
            .filter_map(|n| match self.nodes[n.index()] {
                Node::Var(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    /// Variables whose derivative-refs are reachable from a node.
    pub fn derivative_refs_of(&self, root: NodeId) -> BTreeSet<VarId> {
        self.reachable(&[root])
            .into_iter()
            .filter_map(|n| match self.nodes[n.index()] {
                Node::Der(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    /// Evaluate a single node. `values` is indexed by [`VarId`].
    pub fn evaluate(&self, node: NodeId, values: &[f64]) -> Result<f64, ExprError> {
        self.evaluate_with(node, values, &[])
    }

    /// Evaluate with derivative-ref values (also indexed by [`VarId`]).
    pub fn evaluate_with(&self, node: NodeId, values: &[f64], ders: &[f64]) -> Result<f64, ExprError> {
        let tape = Tape::new(self, &[node]);
        let mut scratch = Vec::new();
        let mut out = [0.0];
        tape.eval(values, ders, &mut scratch, &mut out)
            .map_err(|e| self.name_error(e))?;
        Ok(out[0])
    }

    fn name_error(&self, e: TapeError) -> ExprError {
        match e {
            TapeError::MissingValue(v) => ExprError::MissingValue(self.vars[v as usize].name.clone()),
            TapeError::MissingDerivative(v) => {
                ExprError::MissingDerivative(self.vars[v as usize].name.clone())
            }
            TapeError::DivisionByZero(n) => ExprError::DivisionByZero(n),
        }
    }

    /// Total time derivative by the chain rule. `bindings` maps each variable
    /// to an expression for its time derivative.
    pub fn differentiate_time(
        &mut self,
        node: NodeId,
        bindings: &HashMap<VarId, NodeId>,
    ) -> Result<NodeId, ExprError> {
        let order = self.reachable(&[node]);
        let mut d: HashMap<NodeId, NodeId> = HashMap::with_capacity(order.len());
        for n in order {
            let dn = match self.nodes[n.index()] {
                Node::Const(_) => self.zero(),
                Node::Var(v) => match bindings.get(&v) {
                    Some(&b) => b,
                    None => return Err(ExprError::UnboundVariable(self.vars[v.index()].name.clone())),
                },
                Node::Der(v) => {
                    return Err(ExprError::UnboundVariable(format!(
                        "der({})",
                        self.vars[v.index()].name
                    )))
                }
                Node::Add(a, b) => self.add(d[&a], d[&b]),
                Node::Sub(a, b) => self.sub(d[&a], d[&b]),
                Node::Mul(a, b) => self.product_rule(a, b, d[&a], d[&b]),
                Node::Div(a, b) => self.quotient_rule(a, b, d[&a], d[&b]),
                Node::Neg(a) => self.neg(d[&a]),
                Node::Sin(a) => {
                    let c = self.cos(a);
                    self.mul(c, d[&a])
                }
                Node::Cos(a) => {
                    let s = self.sin(a);
                    let ms = self.neg(s);
                    self.mul(ms, d[&a])
                }
                Node::Sqrt(a) => self.sqrt_rule(n, d[&a]),
            };
            d.insert(n, dn);
        }
        Ok(d[&node])
    }

    /// Partial derivative with respect to one variable (value reference).
    /// Derivative-refs are treated as independent symbols.
    pub fn partial(&mut self, node: NodeId, wrt: VarId) -> NodeId {
        let order = self.reachable(&[node]);
        let mut d: HashMap<NodeId, NodeId> = HashMap::with_capacity(order.len());
        let zero = self.zero();
        for n in order {
            let dn = match self.nodes[n.index()] {
                Node::Const(_) | Node::Der(_) => zero,
                Node::Var(v) => {
                    if v == wrt {
                        self.one()
                    } else {
                        zero
                    }
                }
                Node::Add(a, b) => self.add(d[&a], d[&b]),
                Node::Sub(a, b) => self.sub(d[&a], d[&b]),
                Node::Mul(a, b) => self.product_rule(a, b, d[&a], d[&b]),
                Node::Div(a, b) => self.quotient_rule(a, b, d[&a], d[&b]),
                Node::Neg(a) => self.neg(d[&a]),
                Node::Sin(a) => {
                    if d[&a] == zero {
                        zero
                    } else {
                        let c = self.cos(a);
                        self.mul(c, d[&a])
                    }
                }
                Node::Cos(a) => {
                    if d[&a] == zero {
                        zero
                    } else {
                        let s = self.sin(a);
                        let ms = self.neg(s);
                        self.mul(ms, d[&a])
                    }
                }
                Node::Sqrt(a) => {
                    if d[&a] == zero {
                        zero
                    } else {
                        self.sqrt_rule(n, d[&a])
                    }
                }
            };
            d.insert(n, dn);
        }
        d[&node]
    }

    fn product_rule(&mut self, a: NodeId, b: NodeId, da: NodeId, db: NodeId) -> NodeId {
        let l = self.mul(da, b);
        let r = self.mul(a, db);
        self.add(l, r)
    }

    fn quotient_rule(&mut self, a: NodeId, b: NodeId, da: NodeId, db: NodeId) -> NodeId {
        // (da*b - a*db) / b^2, written as da/b - (a*db)/(b*b) so constant
        // denominators stay constant
        let t1 = self.div(da, b);
        let adb = self.mul(a, db);
        let bb = self.mul(b, b);
        let t2 = self.div(adb, bb);
        self.sub(t1, t2)
    }

    fn sqrt_rule(&mut self, sqrt_node: NodeId, da: NodeId) -> NodeId {
        let two = self.constant(2.0);
        let den = self.mul(two, sqrt_node);
        self.div(da, den)
    }

    /// Replace variable references according to `map`, rebuilding only the
    /// affected part of the DAG.
    pub fn substitute(&mut self, node: NodeId, map: &HashMap<VarId, NodeId>) -> NodeId {
        self.substitute_with(node, map, &HashMap::new())
    }

    /// Like [`substitute`](Self::substitute), also replacing derivative-refs
    /// `der(v)` by `ders[v]`.
    pub fn substitute_with(
        &mut self,
        node: NodeId,
        map: &HashMap<VarId, NodeId>,
        ders: &HashMap<VarId, NodeId>,
    ) -> NodeId {
        let order = self.reachable(&[node]);
        let mut s: HashMap<NodeId, NodeId> = HashMap::with_capacity(order.len());
        for n in order {
            let new = match self.nodes[n.index()] {
                Node::Const(_) => n,
                Node::Der(v) => ders.get(&v).copied().unwrap_or(n),
                Node::Var(v) => map.get(&v).copied().unwrap_or(n),
                Node::Add(a, b) => self.add(s[&a], s[&b]),
                Node::Sub(a, b) => self.sub(s[&a], s[&b]),
                Node::Mul(a, b) => self.mul(s[&a], s[&b]),
                Node::Div(a, b) => self.div(s[&a], s[&b]),
                Node::Neg(a) => self.neg(s[&a]),
                Node::Sin(a) => self.sin(s[&a]),
                Node::Cos(a) => self.cos(s[&a]),
                Node::Sqrt(a) => self.sqrt(s[&a]),
            };
            s.insert(n, new);
        }
        s[&node]
    }

    /// Affine decomposition `node = Σ coeffs[k]·over[k] + remainder` where no
    /// coefficient depends on `over`. Returns `None` for anything nonlinear in
    /// `over`, including division by a non-constant whose numerator involves
    /// `over`.
    pub fn extract_linear_form(&mut self, node: NodeId, over: &[VarId]) -> Option<LinearForm> {
        let pos: HashMap<VarId, usize> = over.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let order = self.reachable(&[node]);
        let mut rep: HashMap<NodeId, Rep> = HashMap::with_capacity(order.len());
        let k = over.len();
        for n in order {
            let r = match self.nodes[n.index()] {
                Node::Const(_) | Node::Der(_) => Rep::Indep,
                Node::Var(v) => match pos.get(&v) {
                    Some(&i) => {
                        let mut c = vec![None; k];
                        c[i] = Some(self.one());
                        Rep::Lin(c, self.zero())
                    }
                    None => Rep::Indep,
                },
                Node::Add(a, b) | Node::Sub(a, b) => {
                    let sub = matches!(self.nodes[n.index()], Node::Sub(..));
                    match (rep[&a].clone(), rep[&b].clone()) {
                        (Rep::Indep, Rep::Indep) => Rep::Indep,
                        (ra, rb) => {
                            let (ca, rema) = ra.split(a, k);
                            let (cb, remb) = rb.split(b, k);
                            let mut c = vec![None; k];
                            for i in 0..k {
                                c[i] = match (ca[i], cb[i]) {
                                    (None, None) => None,
                                    (Some(x), None) => Some(x),
                                    (None, Some(y)) => Some(if sub { self.neg(y) } else { y }),
                                    (Some(x), Some(y)) => {
                                        Some(if sub { self.sub(x, y) } else { self.add(x, y) })
                                    }
                                };
                            }
                            let rem = if sub { self.sub(rema, remb) } else { self.add(rema, remb) };
                            Rep::Lin(c, rem)
                        }
                    }
                }
                Node::Mul(a, b) => match (rep[&a].clone(), rep[&b].clone()) {
                    (Rep::Indep, Rep::Indep) => Rep::Indep,
                    (Rep::Lin(c, rem), Rep::Indep) => {
                        let c = c.into_iter().map(|x| x.map(|x| self.mul(x, b))).collect();
                        Rep::Lin(c, self.mul(rem, b))
                    }
                    (Rep::Indep, Rep::Lin(c, rem)) => {
                        let c = c.into_iter().map(|x| x.map(|x| self.mul(a, x))).collect();
                        Rep::Lin(c, self.mul(a, rem))
                    }
                    _ => return None,
                },
                Node::Div(a, b) => match (rep[&a].clone(), rep[&b].clone()) {
                    (Rep::Indep, Rep::Indep) => Rep::Indep,
                    (Rep::Lin(c, rem), Rep::Indep) if self.const_value(b).is_some() => {
                        let c = c.into_iter().map(|x| x.map(|x| self.div(x, b))).collect();
                        Rep::Lin(c, self.div(rem, b))
                    }
                    _ => return None,
                },
                Node::Neg(a) => match rep[&a].clone() {
                    Rep::Indep => Rep::Indep,
                    Rep::Lin(c, rem) => {
                        let c = c.into_iter().map(|x| x.map(|x| self.neg(x))).collect();
                        Rep::Lin(c, self.neg(rem))
                    }
                },
                Node::Sin(a) | Node::Cos(a) | Node::Sqrt(a) => match rep[&a] {
                    Rep::Indep => Rep::Indep,
                    Rep::Lin(..) => return None,
                },
            };
            rep.insert(n, r);
        }
        let (c, rem) = match rep.remove(&node)? {
            Rep::Indep => (vec![None; k], node),
            Rep::Lin(c, rem) => (c, rem),
        };
        let zero = self.zero();
        Some(LinearForm { coefficients: c.into_iter().map(|x| x.unwrap_or(zero)).collect(), remainder: rem })
    }

    /// Prefix-form dump, e.g. `(sub i1R (add i2R i3R))`.
    pub fn dump(&self, node: NodeId) -> String {
        let mut s = String::new();
        self.dump_into(node, &mut s);
        s
    }

    fn dump_into(&self, node: NodeId, s: &mut String) {
        let bin = |name: &str, a: NodeId, b: NodeId, s: &mut String| {
            write!(s, "({name} ").unwrap();
            self.dump_into(a, s);
            s.push(' ');
            self.dump_into(b, s);
            s.push(')');
        };
        let un = |name: &str, a: NodeId, s: &mut String| {
            write!(s, "({name} ").unwrap();
            self.dump_into(a, s);
            s.push(')');
        };
        match self.nodes[node.index()] {
            Node::Const(bits) => write!(s, "{}", f64::from_bits(bits)).unwrap(),
            Node::Var(v) => s.push_str(&self.vars[v.index()].name),
            Node::Der(v) => write!(s, "(der {})", self.vars[v.index()].name).unwrap(),
            Node::Add(a, b) => bin("add", a, b, s),
            Node::Sub(a, b) => bin("sub", a, b, s),
            Node::Mul(a, b) => bin("mul", a, b, s),
            Node::Div(a, b) => bin("div", a, b, s),
            Node::Neg(a) => un("neg", a, s),
            Node::Sin(a) => un("sin", a, s),
            Node::Cos(a) => un("cos", a, s),
            Node::Sqrt(a) => un("sqrt", a, s),
        }
    }
}

#[derive(Clone)]
enum Rep {
    Indep,
    Lin(Vec<Option<NodeId>>, NodeId),
}

impl Rep {
    fn split(self, node: NodeId, k: usize) -> (Vec<Option<NodeId>>, NodeId) {
        match self {
            Rep::Indep => (vec![None; k], node),
            Rep::Lin(c, r) => (c, r),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm {
    pub coefficients: Vec<NodeId>,
    pub remainder: NodeId,
}

#[derive(Clone, Copy, Debug)]
enum Instr {
    Const(f64),
    Var(u32),
    Der(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32, u32),
    Neg(u32),
    Sin(u32),
    Cos(u32),
    Sqrt(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeError {
    MissingValue(u32),
    MissingDerivative(u32),
    DivisionByZero(u32),
}

/// Straight-line program evaluating a fixed set of output nodes.
#[derive(Clone, Debug)]
pub struct Tape {
    instrs: Vec<Instr>,
    outputs: Vec<u32>,
}

impl Tape {
    pub fn new(graph: &ExpressionGraph, outputs: &[NodeId]) -> Self {
        let order = graph.reachable(outputs);
        let mut slot: HashMap<NodeId, u32> = HashMap::with_capacity(order.len());
        let mut instrs = Vec::with_capacity(order.len());
        for (i, &n) in order.iter().enumerate() {
            let s = |x: NodeId| slot[&x];
            let ins = match graph.nodes[n.index()] {
                Node::Const(bits) => Instr::Const(f64::from_bits(bits)),
                Node::Var(v) => Instr::Var(v.0),
                Node::Der(v) => Instr::Der(v.0),
                Node::Add(a, b) => Instr::Add(s(a), s(b)),
                Node::Sub(a, b) => Instr::Sub(s(a), s(b)),
                Node::Mul(a, b) => Instr::Mul(s(a), s(b)),
                Node::Div(a, b) => Instr::Div(s(a), s(b), n.0),
                Node::Neg(a) => Instr::Neg(s(a)),
                Node::Sin(a) => Instr::Sin(s(a)),
                Node::Cos(a) => Instr::Cos(s(a)),
                Node::Sqrt(a) => Instr::Sqrt(s(a)),
            };
            instrs.push(ins);
            slot.insert(n, i as u32);
        }
        let outputs = outputs.iter().map(|o| slot[o]).collect();
        Tape { instrs, outputs }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn eval(
        &self,
        values: &[f64],
        ders: &[f64],
        scratch: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), TapeError> {
        scratch.clear();
        scratch.reserve(self.instrs.len());
        for ins in &self.instrs {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Var(v) => *values.get(v as usize).ok_or(TapeError::MissingValue(v))?,
                Instr::Der(v) => *ders.get(v as usize).ok_or(TapeError::MissingDerivative(v))?,
                Instr::Add(a, b) => scratch[a as usize] + scratch[b as usize],
                Instr::Sub(a, b) => scratch[a as usize] - scratch[b as usize],
                Instr::Mul(a, b) => scratch[a as usize] * scratch[b as usize],
                Instr::Div(a, b, node) => {
                    let den = scratch[b as usize];
                    if den == 0.0 {
                        return Err(TapeError::DivisionByZero(node));
                    }
                    scratch[a as usize] / den
                }
                Instr::Neg(a) => -scratch[a as usize],
                Instr::Sin(a) => scratch[a as usize].sin(),
                Instr::Cos(a) => scratch[a as usize].cos(),
                Instr::Sqrt(a) => scratch[a as usize].sqrt(),
            };
            scratch.push(v);
        }
        for (o, &s) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[s as usize];
        }
        Ok(())
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarKind::Differential => "differential",
            VarKind::Algebraic => "algebraic",
            VarKind::PseudoDerivative => "pseudo-derivative",
            VarKind::Input => "input",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xy() -> (ExpressionGraph, VarId, VarId) {
        let mut g = ExpressionGraph::new();
        let x = g.add_variable("x", VarKind::Differential).unwrap();
        let y = g.add_variable("y", VarKind::Algebraic).unwrap();
        (g, x, y)
    }

    #[test]
    fn hash_consing_shares_identical_subtrees() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let s1 = g.add(a, b);
        let n = g.node_count();
        let s2 = g.add(a, b);
        assert_eq!(s1, s2);
        assert_eq!(g.node_count(), n);
    }

    #[test]
    fn zero_one_identities() {
        let (mut g, x, _) = xy();
        let a = g.var(x);
        let z = g.zero();
        let o = g.one();
        assert_eq!(g.add(a, z), a);
        assert_eq!(g.add(z, a), a);
        assert_eq!(g.mul(a, o), a);
        assert_eq!(g.mul(z, a), z);
        assert_eq!(g.div(a, o), a);
        assert_eq!(g.div(z, a), z);
        assert_eq!(g.neg(z), z);
        let na = g.sub(z, a);
        assert_eq!(g.node(na), Node::Neg(a));
        // no algebraic rewriting beyond 0/1
        let aa = g.sub(a, a);
        assert_eq!(g.node(aa), Node::Sub(a, a));
    }

    #[test]
    fn arity_is_checked() {
        let (mut g, x, _) = xy();
        let a = g.var(x);
        assert!(matches!(g.add_expression(OpKind::Add, &[a]), Err(ExprError::Arity { .. })));
        assert!(matches!(g.add_expression(OpKind::Sin, &[a, a]), Err(ExprError::Arity { .. })));
        assert!(g.add_expression(OpKind::Sin, &[a]).is_ok());
    }

    #[test]
    fn derivative_ref_of_algebraic_is_rejected() {
        let (mut g, x, y) = xy();
        assert!(g.der(x).is_ok());
        assert!(matches!(g.der(y), Err(ExprError::InvalidDerivativeRef(_))));
    }

    #[test]
    fn missing_value_reports_variable_name() {
        let (mut g, _, y) = xy();
        let b = g.var(y);
        let e = g.evaluate(b, &[1.0]).unwrap_err();
        assert_eq!(e, ExprError::MissingValue("y".into()));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let q = g.div(a, b);
        assert!(matches!(g.evaluate(q, &[1.0, 0.0]), Err(ExprError::DivisionByZero(_))));
    }

    #[test]
    fn linear_form_of_kcl() {
        let mut g = ExpressionGraph::new();
        let i1 = g.add_variable("i1", VarKind::Differential).unwrap();
        let i2 = g.add_variable("i2", VarKind::Differential).unwrap();
        let i3 = g.add_variable("i3", VarKind::Differential).unwrap();
        let (a, b, c) = (g.var(i1), g.var(i2), g.var(i3));
        let s = g.add(b, c);
        let kcl = g.sub(a, s);
        let lf = g.extract_linear_form(kcl, &[i3]).unwrap();
        assert_eq!(g.eval_constant(lf.coefficients[0]), Some(-1.0));
        let r = g.evaluate(lf.remainder, &[2.0, 0.5, 99.0]).unwrap();
        assert_eq!(r, 1.5);
    }

    #[test]
    fn linear_form_rejects_products_of_unknowns() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let p = g.mul(a, b);
        assert!(g.extract_linear_form(p, &[x, y]).is_none());
        // but linear in one of them with a state-dependent coefficient
        let lf = g.extract_linear_form(p, &[y]).unwrap();
        assert_eq!(lf.coefficients[0], a);
        let s = g.sin(b);
        assert!(g.extract_linear_form(s, &[y]).is_none());
        let d = g.div(a, b);
        assert!(g.extract_linear_form(d, &[y]).is_none());
    }

    #[test]
    fn time_derivative_uses_bindings() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let s = g.sin(a);
        let e = g.mul(s, b);
        let dx = g.constant(3.0);
        let dy = g.constant(-2.0);
        let bind: HashMap<_, _> = [(x, dx), (y, dy)].into_iter().collect();
        let de = g.differentiate_time(e, &bind).unwrap();
        let (xv, yv) = (0.7, 1.3);
        let got = g.evaluate(de, &[xv, yv]).unwrap();
        let want = xv.cos() * 3.0 * yv + xv.sin() * -2.0;
        assert!((got - want).abs() < 1e-14);
        let missing: HashMap<_, _> = [(x, dx)].into_iter().collect();
        assert_eq!(
            g.differentiate_time(e, &missing),
            Err(ExprError::UnboundVariable("y".into()))
        );
    }

    #[test]
    fn substitute_replaces_only_mapped_vars() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let e = g.mul(a, b);
        let two = g.constant(2.0);
        let rep = g.add(a, two);
        let map: HashMap<_, _> = [(y, rep)].into_iter().collect();
        let s = g.substitute(e, &map);
        assert_eq!(g.evaluate(s, &[3.0, 100.0]).unwrap(), 15.0);
        assert_eq!(g.variables_of(s).into_iter().collect::<Vec<_>>(), vec![x]);
    }

    #[test]
    fn dump_is_prefix() {
        let (mut g, x, y) = xy();
        let a = g.var(x);
        let b = g.var(y);
        let s = g.sub(a, b);
        let c = g.cos(s);
        assert_eq!(g.dump(c), "(cos (sub x y))");
    }

    /// Random expression over two variables, built as a list of ops applied
    /// to earlier nodes.
    fn build(ops: &[(u8, usize, usize)]) -> (ExpressionGraph, VarId, VarId, NodeId) {
        let (mut g, x, y) = xy();
        let mut pool = vec![g.var(x), g.var(y), g.constant(0.5), g.constant(1.5)];
        for &(op, i, j) in ops {
            let a = pool[i % pool.len()];
            let b = pool[j % pool.len()];
            let n = match op % 8 {
                0 => g.add(a, b),
                1 => g.sub(a, b),
                2 => g.mul(a, b),
                3 => {
                    // keep denominators away from zero
                    let t = g.mul(b, b);
                    let one = g.one();
                    let d = g.add(t, one);
                    g.div(a, d)
                }
                4 => g.neg(a),
                5 => g.sin(a),
                6 => g.cos(a),
                _ => {
                    let t = g.mul(a, a);
                    let one = g.one();
                    let d = g.add(t, one);
                    g.sqrt(d)
                }
            };
            pool.push(n);
        }
        let root = *pool.last().unwrap();
        (g, x, y, root)
    }

    fn ops_strategy() -> impl Strategy<Value = Vec<(u8, usize, usize)>> {
        prop::collection::vec((any::<u8>(), 0usize..64, 0usize..64), 1..25)
    }

    proptest! {
        #[test]
        fn children_precede_parents(ops in ops_strategy()) {
            let (g, ..) = build(&ops);
            for i in 0..g.node_count() {
                for c in g.node(NodeId(i as u32)).children().into_iter().flatten() {
                    prop_assert!(c.index() < i);
                }
            }
        }

        #[test]
        fn partial_matches_central_difference(
            ops in ops_strategy(), xv in -1.0f64..1.0, yv in -1.0f64..1.0
        ) {
            let (mut g, x, y, root) = build(&ops);
            let dx = g.partial(root, x);
            let h = 1e-6;
            let f = |g: &ExpressionGraph, a: f64, b: f64| g.evaluate(root, &[a, b]).unwrap();
            let fd = (f(&g, xv + h, yv) - f(&g, xv - h, yv)) / (2.0 * h);
            let an = g.evaluate(dx, &[xv, yv]).unwrap();
            prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {fd} an {an}");
            let dy = g.partial(root, y);
            let fd = (f(&g, xv, yv + h) - f(&g, xv, yv - h)) / (2.0 * h);
            let an = g.evaluate(dy, &[xv, yv]).unwrap();
            prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {fd} an {an}");
        }

        #[test]
        fn time_derivative_is_chain_rule_of_partials(
            ops in ops_strategy(), xv in -1.0f64..1.0, yv in -1.0f64..1.0,
            vx in -2.0f64..2.0, vy in -2.0f64..2.0
        ) {
            let (mut g, x, y, root) = build(&ops);
            let bx = g.constant(vx);
            let by = g.constant(vy);
            let bind: HashMap<_, _> = [(x, bx), (y, by)].into_iter().collect();
            let dt = g.differentiate_time(root, &bind).unwrap();
            let px = g.partial(root, x);
            let py = g.partial(root, y);
            let v = [xv, yv];
            let want = g.evaluate(px, &v).unwrap() * vx + g.evaluate(py, &v).unwrap() * vy;
            let got = g.evaluate(dt, &v).unwrap();
            prop_assert!((want - got).abs() <= 1e-10 * (1.0 + want.abs()));
        }

        #[test]
        fn tape_agrees_with_single_node_evaluation(
            ops in ops_strategy(), xv in -1.0f64..1.0, yv in -1.0f64..1.0
        ) {
            let (g, _, _, root) = build(&ops);
            let all: Vec<NodeId> = (0..g.node_count() as u32).map(NodeId).collect();
            let tape = Tape::new(&g, &all);
            let mut out = vec![0.0; all.len()];
            let mut scratch = Vec::new();
            tape.eval(&[xv, yv], &[], &mut scratch, &mut out).unwrap();
            prop_assert_eq!(out[root.index()], g.evaluate(root, &[xv, yv]).unwrap());
        }

        #[test]
        fn linear_form_reconstructs_expression(
            cx in -3.0f64..3.0, cy in -3.0f64..3.0, xv in -1.0f64..1.0, yv in -1.0f64..1.0
        ) {
            // cx*sin(y)*x + cy*x - x/2 + cos(y), linear in x
            let (mut g, x, y) = xy();
            let (a, b) = (g.var(x), g.var(y));
            let sy = g.sin(b);
            let t1 = g.scale(cx, sy);
            let t1 = g.mul(t1, a);
            let t2 = g.scale(cy, a);
            let two = g.constant(2.0);
            let t3 = g.div(a, two);
            let cyn = g.cos(b);
            let s = g.add(t1, t2);
            let s = g.sub(s, t3);
            let e = g.add(s, cyn);
            let lf = g.extract_linear_form(e, &[x]).unwrap();
            let v = [xv, yv];
            let c = g.evaluate(lf.coefficients[0], &v).unwrap();
            let r = g.evaluate(lf.remainder, &v).unwrap();
            prop_assert!((c * xv + r - g.evaluate(e, &v).unwrap()).abs() < 1e-12);
            prop_assert!(!g.variables_of(lf.coefficients[0]).contains(&x));
            prop_assert!(!g.variables_of(lf.remainder).contains(&x));
        }
    }
}
