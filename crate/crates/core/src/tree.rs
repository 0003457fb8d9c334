//! Finite event trees, adapted processes and conditional expectations.
//!
//! Nodes are stored in depth-first preorder, so the subtree of a node is a
//! contiguous index range and its leaves are a contiguous slice of the leaf
//! list. Every public map that is "per time-t node" is ordered like
//! [`ScenarioTree::nodes_at`].

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeIdx = usize;

/// Tolerance for the terminal probabilities summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Compensated summation; trees are small and reproducibility matters more
/// than the extra flops.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Serialized tree, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub horizon: usize,
    pub assets: usize,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub time: usize,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// First structural problem found in a tree, market or price system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: Option<String>,
    pub message: String,
}

impl Violation {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            node: None,
            message: message.into(),
        }
    }

    pub fn at(node: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            node: Some(node.into()),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{} (node {n})", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks the structural invariants of a serialized tree and reports the
/// first one that fails.
pub fn validate_tree(spec: &TreeSpec) -> std::result::Result<(), Violation> {
    if spec.horizon < 1 {
        return Err(Violation::new("horizon must be at least 1"));
    }
    if spec.assets < 2 {
        return Err(Violation::new("at least two assets are required"));
    }
    let mut index = HashMap::new();
    for (k, n) in spec.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), k).is_some() {
            return Err(Violation::at(&n.id, "duplicate node id"));
        }
    }
    let roots: Vec<&NodeSpec> = spec.nodes.iter().filter(|n| n.parent.is_none()).collect();
    match roots.len() {
        0 => return Err(Violation::new("tree has no root")),
        1 if roots[0].time != 0 => {
            return Err(Violation::at(&roots[0].id, "root must be at time 0"))
        }
        1 => {}
        _ => return Err(Violation::at(&roots[1].id, "more than one root")),
    }
    let mut child_count = vec![0usize; spec.nodes.len()];
    for n in &spec.nodes {
        if n.time > spec.horizon {
            return Err(Violation::at(&n.id, "node time exceeds horizon"));
        }
        if let Some(p) = &n.parent {
            let Some(&k) = index.get(p.as_str()) else {
                return Err(Violation::at(&n.id, format!("unknown parent `{p}`")));
            };
            if spec.nodes[k].time + 1 != n.time {
                return Err(Violation::at(
                    &n.id,
                    "parent/child times are not consecutive",
                ));
            }
            child_count[k] += 1;
        }
    }
    let mut total = Vec::new();
    for (k, n) in spec.nodes.iter().enumerate() {
        if child_count[k] > 0 {
            continue;
        }
        if n.time < spec.horizon {
            return Err(Violation::at(&n.id, "terminal node before horizon"));
        }
        match n.p {
            None => return Err(Violation::at(&n.id, "terminal node without probability")),
            Some(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(Violation::at(
                    &n.id,
                    format!("terminal probability {p} outside (0, 1]"),
                ))
            }
            Some(p) => total.push(p),
        }
    }
    let sum = kahan_sum(total);
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Violation::new(format!(
            "probabilities sum to {} (expected 1)",
            fmt_short(sum)
        )));
    }
    Ok(())
}

fn fmt_short(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Removes terminal nodes with probability exactly zero and any interior
/// node left without children.
pub fn prune_null_branches(spec: &TreeSpec) -> TreeSpec {
    let had_children: std::collections::HashSet<String> =
        spec.nodes.iter().filter_map(|n| n.parent.clone()).collect();
    let mut nodes = spec.nodes.clone();
    loop {
        let parents: std::collections::HashSet<&str> =
            nodes.iter().filter_map(|n| n.parent.as_deref()).collect();
        let keep: Vec<bool> = nodes
            .iter()
            .map(|n| {
                let terminal = !parents.contains(n.id.as_str());
                let null_leaf = terminal && n.p == Some(0.0);
                let emptied = terminal && had_children.contains(&n.id) && n.parent.is_some();
                !(null_leaf || emptied)
            })
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.iter();
        nodes.retain(|_| *it.next().unwrap());
    }
    TreeSpec {
        horizon: spec.horizon,
        assets: spec.assets,
        nodes,
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    pub time: usize,
    pub parent: Option<NodeIdx>,
    pub children: Vec<NodeIdx>,
    /// Unconditional reference probability of the node.
    pub prob: f64,
    /// Position of this node's leaves in [`ScenarioTree::leaves`].
    pub leaf_range: Range<usize>,
    /// One past the last node index of the subtree.
    pub subtree_end: NodeIdx,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    nodes: Vec<Node>,
    horizon: usize,
    assets: usize,
    leaves: Vec<NodeIdx>,
    by_time: Vec<Vec<NodeIdx>>,
    index: HashMap<String, NodeIdx>,
}

impl ScenarioTree {
    /// Builds a tree after pruning null branches and validating structure.
    pub fn from_spec(spec: &TreeSpec) -> Result<Self> {
        let spec = prune_null_branches(spec);
        validate_tree(&spec).map_err(|v| Error::Tree(v.to_string()))?;

        let pos: HashMap<&str, usize> = spec
            .nodes
            .iter()
            .enumerate()
            .map(|(k, n)| (n.id.as_str(), k))
            .collect();
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); spec.nodes.len()];
        let mut root = 0;
        for (k, n) in spec.nodes.iter().enumerate() {
            match &n.parent {
                Some(p) => kids[pos[p.as_str()]].push(k),
                None => root = k,
            }
        }

        let mut tree = ScenarioTree {
            nodes: Vec::with_capacity(spec.nodes.len()),
            horizon: spec.horizon,
            assets: spec.assets,
            leaves: Vec::new(),
            by_time: vec![Vec::new(); spec.horizon + 1],
            index: HashMap::new(),
        };
        // Iterative preorder keeps input child order.
        let mut stack = vec![(root, None::<NodeIdx>)];
        while let Some((k, parent)) = stack.pop() {
            let idx = tree.nodes.len();
            let n = &spec.nodes[k];
            tree.nodes.push(Node {
                id: n.id.clone(),
                time: n.time,
                parent,
                children: Vec::new(),
                prob: if kids[k].is_empty() { n.p.unwrap_or(0.0) } else { 0.0 },
                leaf_range: 0..0,
                subtree_end: idx + 1,
            });
            if let Some(p) = parent {
                tree.nodes[p].children.push(idx);
            }
            for &c in kids[k].iter().rev() {
                stack.push((c, Some(idx)));
            }
        }
        // Leaf ranges, probabilities and subtree ends bottom-up.
        for idx in (0..tree.nodes.len()).rev() {
            if tree.nodes[idx].children.is_empty() {
                continue;
            }
            let children = tree.nodes[idx].children.clone();
            let prob = kahan_sum(children.iter().map(|&c| tree.nodes[c].prob));
            let last = *children.last().unwrap();
            tree.nodes[idx].prob = prob;
            tree.nodes[idx].subtree_end = tree.nodes[last].subtree_end;
        }
        for idx in 0..tree.nodes.len() {
            if tree.nodes[idx].children.is_empty() {
                let l = tree.leaves.len();
                tree.leaves.push(idx);
                tree.nodes[idx].leaf_range = l..l + 1;
            }
        }
        for idx in (0..tree.nodes.len()).rev() {
            let children = &tree.nodes[idx].children;
            if let (Some(&f), Some(&l)) = (children.first(), children.last()) {
                let r = tree.nodes[f].leaf_range.start..tree.nodes[l].leaf_range.end;
                tree.nodes[idx].leaf_range = r;
            }
        }
        for (idx, n) in tree.nodes.iter().enumerate() {
            tree.by_time[n.time].push(idx);
            tree.index.insert(n.id.clone(), idx);
        }
        Ok(tree)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, n: NodeIdx) -> &Node {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeIdx {
        0
    }

    /// Leaves in depth-first order. Terminal processes are indexed by
    /// position in this slice.
    pub fn leaves(&self) -> &[NodeIdx] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn nodes_at(&self, t: usize) -> &[NodeIdx] {
        &self.by_time[t]
    }

    pub fn lookup(&self, id: &str) -> Result<NodeIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn id(&self, n: NodeIdx) -> &str {
        &self.nodes[n].id
    }

    pub fn is_leaf(&self, n: NodeIdx) -> bool {
        self.nodes[n].children.is_empty()
    }

    /// Leaf positions below `n`.
    pub fn leaf_range(&self, n: NodeIdx) -> Range<usize> {
        self.nodes[n].leaf_range.clone()
    }

    /// Node indices of the subtree rooted at `n`, in preorder.
    pub fn subtree(&self, n: NodeIdx) -> Range<NodeIdx> {
        n..self.nodes[n].subtree_end
    }

    /// P(child | parent).
    pub fn transition_prob(&self, child: NodeIdx) -> f64 {
        match self.nodes[child].parent {
            Some(p) => self.nodes[child].prob / self.nodes[p].prob,
            None => 1.0,
        }
    }

    /// Ancestor of `n` at time `t` (itself when `t` equals its time).
    pub fn ancestor_at(&self, mut n: NodeIdx, t: usize) -> NodeIdx {
        debug_assert!(t <= self.nodes[n].time);
        while self.nodes[n].time > t {
            n = self.nodes[n].parent.expect("non-root has a parent");
        }
        n
    }

    /// Nodes from the time-`from` ancestor of `n` down to `n`.
    pub fn path(&self, n: NodeIdx, from: usize) -> Vec<NodeIdx> {
        let mut out = Vec::with_capacity(self.nodes[n].time + 1);
        let mut cur = n;
        loop {
            out.push(cur);
            if self.nodes[cur].time <= from {
                break;
            }
            cur = self.nodes[cur].parent.expect("non-root has a parent");
        }
        out.reverse();
        out
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t > self.horizon {
            return Err(Error::TimeRange {
                time: t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    pub fn leaf_probs(&self) -> Vec<f64> {
        self.leaves.iter().map(|&l| self.nodes[l].prob).collect()
    }

    /// Expands a per-time-`s` map to a per-leaf vector.
    pub fn lift_to_leaves(&self, values_at_s: &[f64], s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.leaves.len()];
        for (k, &n) in self.by_time[s].iter().enumerate() {
            for l in self.leaf_range(n) {
                out[l] = values_at_s[k];
            }
        }
        out
    }

    /// Position of `n` inside [`Self::nodes_at`] for its own time.
    pub fn position_at_time(&self, n: NodeIdx) -> usize {
        let t = self.nodes[n].time;
        self.by_time[t].binary_search(&n).expect("node listed at its time")
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            horizon: self.horizon,
            assets: self.assets,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    time: n.time,
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    p: n.children.is_empty().then_some(n.prob),
                })
                .collect(),
        }
    }
}

/// One d-vector per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedProcess {
    pub d: usize,
    pub values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn new(tree: &ScenarioTree, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != tree.len() {
            return Err(Error::Dimension(format!(
                "process has {} nodes, tree has {}",
                values.len(),
                tree.len()
            )));
        }
        let d = tree.assets();
        if let Some(v) = values.iter().find(|v| v.len() != d) {
            return Err(Error::Dimension(format!(
                "process vector of length {} in a {d}-asset tree",
                v.len()
            )));
        }
        Ok(Self { d, values })
    }

    pub fn at(&self, n: NodeIdx) -> &[f64] {
        &self.values[n]
    }
}

/// A d-vector claim paid at the horizon, indexed by leaf position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub d: usize,
    pub values: Vec<Vec<f64>>,
}

impl Claim {
    pub fn new(tree: &ScenarioTree, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != tree.num_leaves() {
            return Err(Error::Dimension(format!(
                "claim has {} leaves, tree has {}",
                values.len(),
                tree.num_leaves()
            )));
        }
        let d = tree.assets();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::Dimension(format!("claim vectors must have length {d}")));
        }
        Ok(Self { d, values })
    }

    pub fn zero(tree: &ScenarioTree) -> Self {
        Self {
            d: tree.assets(),
            values: vec![vec![0.0; tree.assets()]; tree.num_leaves()],
        }
    }

    /// Cash-only claim `c ⋅ e1` with a per-leaf amount.
    pub fn cash(tree: &ScenarioTree, amounts: &[f64]) -> Self {
        let d = tree.assets();
        let values = amounts
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; d];
                v[0] = c;
                v
            })
            .collect();
        Self { d, values }
    }

    /// The same vector at every leaf.
    pub fn constant(tree: &ScenarioTree, v: &[f64]) -> Self {
        Self {
            d: tree.assets(),
            values: vec![v.to_vec(); tree.num_leaves()],
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len()
    }

    pub fn add(&self, other: &Claim) -> Claim {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Claim) -> Claim {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Claim {
        Claim {
            d: self.d,
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| k * x).collect())
                .collect(),
        }
    }

    /// Adds a per-leaf cash amount to the first component.
    pub fn add_cash(&self, amounts: &[f64]) -> Claim {
        let mut out = self.clone();
        for (v, c) in out.values.iter_mut().zip(amounts) {
            v[0] += c;
        }
        out
    }

    /// Keeps the claim on the given leaf positions, zero elsewhere.
    pub fn restrict(&self, leaves: Range<usize>) -> Claim {
        let mut out = self.clone();
        for (l, v) in out.values.iter_mut().enumerate() {
            if !leaves.contains(&l) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        out
    }

    fn zip(&self, other: &Claim, f: impl Fn(f64, f64) -> f64) -> Claim {
        Claim {
            d: self.d,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    AbsolutelyContinuous,
    Equivalent,
}

/// Probability weights on the leaves, in leaf order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureQ {
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl MeasureQ {
    pub fn new(tree: &ScenarioTree, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        if weights.len() != tree.num_leaves() {
            return Err(Error::Dimension(format!(
                "measure has {} weights, tree has {} leaves",
                weights.len(),
                tree.num_leaves()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Spec("measure weights must be finite and nonnegative".into()));
        }
        let total = kahan_sum(weights.iter().copied());
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Spec(format!("measure weights sum to {total}")));
        }
        if kind == MeasureKind::Equivalent && weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Spec("equivalent measure needs positive weights".into()));
        }
        Ok(Self { weights, kind })
    }

    /// Normalizes nonnegative weights, clearing tiny negative round-off,
    /// and tags the result by its support.
    pub fn from_unnormalized(tree: &ScenarioTree, weights: &[f64]) -> Result<Self> {
        let clean: Vec<f64> = weights.iter().map(|&w| if w < 0.0 { 0.0 } else { w }).collect();
        let total = kahan_sum(clean.iter().copied());
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Spec("measure has no mass".into()));
        }
        let mut w: Vec<f64> = clean.iter().map(|x| x / total).collect();
        // Push the final rounding residue onto the largest weight.
        let residue = 1.0 - kahan_sum(w.iter().copied());
        if let Some(k) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
            w[k] += residue;
        }
        let kind = if w.iter().all(|&x| x > 0.0) {
            MeasureKind::Equivalent
        } else {
            MeasureKind::AbsolutelyContinuous
        };
        Self::new(tree, w, kind)
    }

    pub fn reference(tree: &ScenarioTree) -> Self {
        Self::from_unnormalized(tree, &tree.leaf_probs()).expect("reference measure is valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    /// Q-mass of a node.
    pub fn mass(&self, tree: &ScenarioTree, n: NodeIdx) -> f64 {
        kahan_sum(self.weights[tree.leaf_range(n)].iter().copied())
    }

    /// E[dQ/dP | F_t] at node `n`.
    pub fn density(&self, tree: &ScenarioTree, n: NodeIdx) -> f64 {
        self.mass(tree, n) / tree.node(n).prob
    }
}

/// ξ̄_{s,σ}(Q) at every time-σ node, with the value 1 where the time-s
/// density vanishes.
pub fn xi_bar(q: &MeasureQ, tree: &ScenarioTree, s: usize, sigma: usize) -> Result<Vec<f64>> {
    tree.check_time(sigma)?;
    if s > sigma {
        return Err(Error::TimeOrder { t: s, s: sigma });
    }
    Ok(tree
        .nodes_at(sigma)
        .iter()
        .map(|&n| xi_bar_node(q, tree, s, n))
        .collect())
}

/// ξ̄_{s,time(n)}(Q) at a single node.
pub fn xi_bar_node(q: &MeasureQ, tree: &ScenarioTree, s: usize, n: NodeIdx) -> f64 {
    let a = tree.ancestor_at(n, s);
    let den = q.density(tree, a);
    if den > 0.0 {
        q.density(tree, n) / den
    } else {
        1.0
    }
}

/// E_Q[x | F_t] at every time-t node, computed as E[ξ̄_{t,T} x | F_t].
pub fn cond_expect(q: &MeasureQ, tree: &ScenarioTree, x: &[f64], t: usize) -> Result<Vec<f64>> {
    tree.check_time(t)?;
    if x.len() != tree.num_leaves() {
        return Err(Error::Dimension(format!(
            "payoff has {} entries, tree has {} leaves",
            x.len(),
            tree.num_leaves()
        )));
    }
    Ok(tree
        .nodes_at(t)
        .iter()
        .map(|&n| cond_expect_node(q, tree, x, n))
        .collect())
}

/// E_Q[x | F_t] at one node `n` (t = time of `n`).
pub fn cond_expect_node(q: &MeasureQ, tree: &ScenarioTree, x: &[f64], n: NodeIdx) -> f64 {
    let t = tree.node(n).time;
    let pn = tree.node(n).prob;
    kahan_sum(tree.leaf_range(n).map(|l| {
        let leaf = tree.leaves()[l];
        tree.node(leaf).prob / pn * xi_bar_node(q, tree, t, leaf) * x[l]
    }))
}
