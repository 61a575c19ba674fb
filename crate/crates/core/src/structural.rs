//! Structural index analysis and topological index-2 detection.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::dae::{IncidenceMatrix, SemiExplicitDae};
use crate::expr::{ExpressionGraph, NodeId, VarId};

/// Row-to-column assignment of a bipartite matching.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    pub row_to_col: Vec<Option<usize>>,
    pub col_to_row: Vec<Option<usize>>,
}

impl Matching {
    pub fn size(&self) -> usize {
        self.row_to_col.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_perfect(&self) -> bool {
        self.row_to_col.len() == self.col_to_row.len() && self.size() == self.row_to_col.len()
    }

    pub fn unmatched_rows(&self) -> Vec<usize> {
        self.row_to_col
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(r, _)| r)
            .collect()
    }
}

/// Maximum-cardinality matching by augmenting paths (Kuhn). Rows are tried in
/// ascending order and columns lowest-index-first, so results are
/// deterministic.
pub fn maximum_matching(inc: &IncidenceMatrix) -> Matching {
    let adj: Vec<Vec<usize>> = (0..inc.n_rows()).map(|r| inc.row_cols(r).collect()).collect();
    matching_from_adjacency(&adj, inc.n_cols())
}

pub fn matching_from_adjacency(adj: &[Vec<usize>], n_cols: usize) -> Matching {
    let n_rows = adj.len();
    let mut row_to_col = vec![None; n_rows];
    let mut col_to_row: Vec<Option<usize>> = vec![None; n_cols];
    // cheap greedy pass first
    for r in 0..n_rows {
        if let Some(&c) = adj[r].iter().find(|&&c| col_to_row[c].is_none()) {
            row_to_col[r] = Some(c);
            col_to_row[c] = Some(r);
        }
    }
    let mut visited = vec![usize::MAX; n_cols];
    for r in 0..n_rows {
        if row_to_col[r].is_some() {
            continue;
        }
        augment(r, adj, &mut row_to_col, &mut col_to_row, &mut visited, r);
    }
    Matching { row_to_col, col_to_row }
}

/// Iterative depth-first augmenting-path search from a free row.
fn augment(
    root: usize,
    adj: &[Vec<usize>],
    row_to_col: &mut [Option<usize>],
    col_to_row: &mut [Option<usize>],
    visited: &mut [usize],
    stamp: usize,
) -> bool {
    // stack of (row, next adjacency position, column used to enter the row)
    let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(root, 0, None)];
    while let Some(&mut (r, ref mut pos, _)) = stack.last_mut() {
        if *pos >= adj[r].len() {
            stack.pop();
            continue;
        }
        let c = adj[r][*pos];
        *pos += 1;
        if visited[c] == stamp {
            continue;
        }
        visited[c] = stamp;
        match col_to_row[c] {
            None => {
                // flip the path
                let mut col = c;
                while let Some((row, _, entered)) = stack.pop() {
                    let prev = row_to_col[row];
                    row_to_col[row] = Some(col);
                    col_to_row[col] = Some(row);
                    debug_assert_eq!(prev, entered);
                    match entered {
                        Some(e) => col = e,
                        None => break,
                    }
                }
                return true;
            }
            Some(next) => stack.push((next, 0, Some(c))),
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Scalar,
    LinearLoop,
    NonlinearLoop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BltBlock {
    /// (equation row, column) pairs of the block.
    pub pairs: Vec<(usize, usize)>,
    pub kind: BlockKind,
}

impl BltBlock {
    pub fn rows(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn cols(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BltOrder {
    pub blocks: Vec<BltBlock>,
}

impl BltOrder {
    /// Row and column permutations giving block-lower-triangular form.
    pub fn permutation(&self) -> (Vec<usize>, Vec<usize>) {
        let rows = self.blocks.iter().flat_map(|b| b.rows()).collect();
        let cols = self.blocks.iter().flat_map(|b| b.cols()).collect();
        (rows, cols)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructuralError {
    #[error("structurally singular: {} unmatched equation(s) {unmatched:?}", unmatched.len())]
    Singular { unmatched: Vec<usize> },
}

/// Tarjan's SCC over the equation dependency graph induced by a perfect
/// matching. Blocks come out in solve order (dependencies first). Loop
/// blocks are tagged `NonlinearLoop` until [`classify_blocks`] refines them.
pub fn blt_sort(inc: &IncidenceMatrix, matching: &Matching) -> Result<BltOrder, StructuralError> {
    if !matching.is_perfect() {
        return Err(StructuralError::Singular { unmatched: matching.unmatched_rows() });
    }
    let n = inc.n_rows();
    // equation r depends on equation s if r uses the column s is matched to
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            let own = matching.row_to_col[r];
            let mut s: Vec<usize> = inc
                .row_cols(r)
                .filter(|&c| Some(c) != own)
                .filter_map(|c| matching.col_to_row[c])
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let sccs = tarjan_scc(&succ);
    let blocks = sccs
        .into_iter()
        .map(|mut rows| {
            rows.sort_unstable();
            let pairs: Vec<(usize, usize)> =
                rows.iter().map(|&r| (r, matching.row_to_col[r].unwrap())).collect();
            let kind = if pairs.len() == 1 { BlockKind::Scalar } else { BlockKind::NonlinearLoop };
            BltBlock { pairs, kind }
        })
        .collect();
    Ok(BltOrder { blocks })
}

/// Iterative Tarjan. Emits components in reverse topological order of the
/// successor relation, i.e. sinks first.
pub fn tarjan_scc(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = succ.len();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < succ[v].len() {
                let w = succ[v][*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// Marks loop blocks whose equations are affine in the block's own
/// variables as `LinearLoop`. `eqs[row]` and `cols[col]` give the equation
/// node and variable of the incidence layout.
pub fn classify_blocks(graph: &mut ExpressionGraph, eqs: &[NodeId], cols: &[VarId], order: &mut BltOrder) {
    for b in &mut order.blocks {
        if b.kind == BlockKind::Scalar {
            continue;
        }
        let vars: Vec<VarId> = b.cols().iter().map(|&c| cols[c]).collect();
        let linear = b.rows().iter().all(|&r| graph.extract_linear_form(eqs[r], &vars).is_some());
        b.kind = if linear { BlockKind::LinearLoop } else { BlockKind::NonlinearLoop };
    }
}

/// g-rows with no structural dependence on any ẋ or z column.
pub fn detect_constraint_rows(inc: &IncidenceMatrix) -> Vec<usize> {
    inc.zero_g_rows()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexClass {
    Index0,
    Index1,
    IndexAtLeast2,
}

impl fmt::Display for IndexClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexClass::Index0 => "index 0",
            IndexClass::Index1 => "index 1",
            IndexClass::IndexAtLeast2 => "index >= 2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexReport {
    pub class: IndexClass,
    pub q: usize,
    /// Equation rows (f rows first, then g rows) that are pure constraints.
    pub constraint_rows: Vec<usize>,
}

pub fn structural_index_report(sys: &SemiExplicitDae) -> IndexReport {
    let inc = sys.incidence();
    index_report_from_incidence(&inc)
}

pub fn index_report_from_incidence(inc: &IncidenceMatrix) -> IndexReport {
    let constraint_rows = detect_constraint_rows(inc);
    if inc.n_alg == 0 {
        return IndexReport { class: IndexClass::Index0, q: 0, constraint_rows };
    }
    // the f-rows always match their own ẋ column, so only g_z matters
    let n = inc.n_diff;
    let adj: Vec<Vec<usize>> = (n..inc.n_rows())
        .map(|r| inc.row_cols(r).filter(|&c| c >= n).map(|c| c - n).collect())
        .collect();
    let m = matching_from_adjacency(&adj, inc.n_alg);
    let q = adj.len() - m.size();
    let class = if q == 0 { IndexClass::Index1 } else { IndexClass::IndexAtLeast2 };
    IndexReport { class, q, constraint_rows }
}

impl fmt::Display for IndexReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, q={}", self.class, self.q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Inductor,
    Capacitor,
    CurrentSource,
    VoltageSource,
    Resistive,
}

impl EdgeKind {
    fn is_li(self) -> bool {
        matches!(self, EdgeKind::Inductor | EdgeKind::CurrentSource)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub device: String,
}

/// Circuit graph; node 0 is ground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<CircuitEdge>,
}

impl Default for CircuitGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl CircuitGraph {
    pub const GROUND: usize = 0;

    pub fn new() -> Self {
        CircuitGraph { nodes: vec!["gnd".into()], edges: Vec::new() }
    }

    pub fn add_node(&mut self, name: impl Into<String>) -> usize {
        self.nodes.push(name.into());
        self.nodes.len() - 1
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn add_edge(&mut self, from: usize, to: usize, kind: EdgeKind, device: impl Into<String>) {
        assert!(from < self.nodes.len() && to < self.nodes.len(), "edge references unknown node");
        self.edges.push(CircuitEdge { from, to, kind, device: device.into() });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FindingKind {
    LiCutset,
    CvLoop,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingKind::LiCutset => "LI-cutset",
            FindingKind::CvLoop => "CV-loop",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub nodes: Vec<String>,
    pub edges: Vec<usize>,
    pub devices: Vec<String>,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

/// LI-cutsets and CV-loops of a circuit.
pub fn detect_topological_index2(c: &CircuitGraph) -> Vec<Finding> {
    let mut findings = Vec::new();
    let n = c.nodes.len();

    // components of the non-LI subgraph; each one without ground is cut off
    // from the rest of the circuit by inductor/current-source edges only
    let mut dsu = Dsu::new(n);
    for e in c.edges.iter().filter(|e| !e.kind.is_li()) {
        dsu.union(e.from, e.to);
    }
    let ground = dsu.find(CircuitGraph::GROUND);
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 1..n {
        let r = dsu.find(v);
        if r != ground {
            comps.entry(r).or_default().push(v);
        }
    }
    for nodes in comps.values() {
        let boundary: Vec<usize> = c
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| nodes.contains(&e.from) != nodes.contains(&e.to))
            .map(|(i, _)| i)
            .collect();
        if boundary.is_empty() {
            continue;
        }
        findings.push(make_finding(c, FindingKind::LiCutset, nodes, boundary));
    }

    // CV-loops: parallel capacitors between the same node pair act as one
    let mut seen_cap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut cv: Vec<usize> = Vec::new();
    for (i, e) in c.edges.iter().enumerate() {
        let key = (e.from.min(e.to), e.from.max(e.to));
        match e.kind {
            EdgeKind::Capacitor => {
                if let std::collections::btree_map::Entry::Vacant(v) = seen_cap.entry(key) {
                    v.insert(i);
                    cv.push(i);
                }
            }
            EdgeKind::VoltageSource => cv.push(i),
            _ => {}
        }
    }
    let mut dsu = Dsu::new(n);
    let mut tree: Vec<usize> = Vec::new();
    for &i in &cv {
        let e = &c.edges[i];
        if dsu.union(e.from, e.to) {
            tree.push(i);
        } else {
            let mut loop_edges = tree_path(c, &tree, e.from, e.to);
            loop_edges.push(i);
            loop_edges.sort_unstable();
            let mut nodes: Vec<usize> =
                loop_edges.iter().flat_map(|&k| [c.edges[k].from, c.edges[k].to]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            findings.push(make_finding(c, FindingKind::CvLoop, &nodes, loop_edges));
        }
    }
    findings
}

/// Edge path between two nodes in a forest given by edge indices.
fn tree_path(c: &CircuitGraph, tree: &[usize], a: usize, b: usize) -> Vec<usize> {
    let mut prev: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([a]);
    let mut seen = vec![false; c.nodes.len()];
    seen[a] = true;
    while let Some(v) = queue.pop_front() {
        if v == b {
            break;
        }
        for &k in tree {
            let e = &c.edges[k];
            let w = if e.from == v {
                e.to
            } else if e.to == v {
                e.from
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                prev.insert(w, (v, k));
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = b;
    while v != a {
        match prev.get(&v) {
            Some(&(p, k)) => {
                path.push(k);
                v = p;
            }
            None => break,
        }
    }
    path
}

fn make_finding(c: &CircuitGraph, kind: FindingKind, nodes: &[usize], edges: Vec<usize>) -> Finding {
    let mut devices: Vec<String> = edges.iter().map(|&e| c.edges[e].device.clone()).collect();
    devices.sort();
    devices.dedup();
    Finding { kind, nodes: nodes.iter().map(|&v| c.nodes[v].clone()).collect(), edges, devices }
}
