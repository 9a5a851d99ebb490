//! Finite event trees, stopping times and cash-balance processes.
//!
//! A [`Tree`] is the filtration of a finite probability space: the root is
//! time 0, every edge advances time by one and all leaves sit at the same
//! horizon `T`. Nodes are stored in input order and addressed by [`NodeId`];
//! a pre-order layout is precomputed so that the subtree `x+` of any node is a
//! contiguous slice.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node in a [`Tree`], in input order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One node as it appears in a tree file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub parent: Option<String>,
    /// Probability mass carried by the node itself.
    pub weight: f64,
}

impl NodeRecord {
    pub fn new(id: impl Into<String>, parent: Option<&str>, weight: f64) -> Self {
        NodeRecord {
            id: id.into(),
            parent: parent.map(str::to_owned),
            weight,
        }
    }
}

/// Per-node values produced by evaluating on a stopping time.
pub type NodeValues = BTreeMap<NodeId, f64>;

#[derive(Clone, Debug)]
pub struct Tree {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    time: Vec<usize>,
    weight: Vec<f64>,
    mass: Vec<f64>,
    preorder: Vec<NodeId>,
    position: Vec<usize>,
    subtree_end: Vec<usize>,
    leaves: Vec<NodeId>,
    root: NodeId,
    horizon: usize,
}

impl Tree {
    /// Validates `records` and precomputes children, times, pre-order layout
    /// and subtree masses.
    pub fn build(records: &[NodeRecord]) -> Result<Tree> {
        if records.is_empty() {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let n = records.len();
        let mut index = HashMap::with_capacity(n);
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), NodeId(i)).is_some() {
                return Err(Error::InvalidTree(format!("duplicate node id `{}`", r.id)));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::InvalidTree(format!(
                    "node `{}` has non-positive weight {}",
                    r.id, r.weight
                )));
            }
        }

        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (i, r) in records.iter().enumerate() {
            match &r.parent {
                None => roots.push(NodeId(i)),
                Some(p) => {
                    let pid = *index.get(p).ok_or_else(|| {
                        Error::InvalidTree(format!("node `{}` has missing parent `{}`", r.id, p))
                    })?;
                    parent[i] = Some(pid);
                    children[pid.0].push(NodeId(i));
                }
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::InvalidTree("no root node".into())),
            _ => {
                let names: Vec<_> = roots.iter().map(|r| records[r.0].id.as_str()).collect();
                return Err(Error::InvalidTree(format!("multiple roots: {}", names.join(", "))));
            }
        };

        let mut time = vec![0usize; n];
        let mut preorder = Vec::with_capacity(n);
        let mut position = vec![usize::MAX; n];
        let mut subtree_end = vec![0usize; n];
        // explicit stack of (node, next child cursor)
        let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
        position[root.0] = 0;
        preorder.push(root);
        while let Some(top) = stack.last_mut() {
            let (node, cursor) = *top;
            if cursor < children[node.0].len() {
                top.1 += 1;
                let child = children[node.0][cursor];
                time[child.0] = time[node.0] + 1;
                position[child.0] = preorder.len();
                preorder.push(child);
                stack.push((child, 0));
            } else {
                subtree_end[node.0] = preorder.len();
                stack.pop();
            }
        }
        if preorder.len() != n {
            let stray = (0..n).find(|&i| position[i] == usize::MAX).unwrap_or(0);
            return Err(Error::InvalidTree(format!(
                "node `{}` is not reachable from the root (cycle in parent links)",
                records[stray].id
            )));
        }

        let leaves: Vec<NodeId> = preorder
            .iter()
            .copied()
            .filter(|x| children[x.0].is_empty())
            .collect();
        let horizon = time[leaves[0].0];
        if let Some(bad) = leaves.iter().find(|l| time[l.0] != horizon) {
            return Err(Error::InvalidTree(format!(
                "leaf `{}` has depth {} but leaf `{}` has depth {}",
                records[bad.0].id, time[bad.0], records[leaves[0].0].id, horizon
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidTree("tree has depth 0; at least one period is required".into()));
        }

        let weight: Vec<f64> = records.iter().map(|r| r.weight).collect();
        let mut mass = weight.clone();
        for &x in preorder.iter().rev() {
            if let Some(p) = parent[x.0] {
                mass[p.0] += mass[x.0];
            }
        }

        Ok(Tree {
            labels: records.iter().map(|r| r.id.clone()).collect(),
            index,
            parent,
            children,
            time,
            weight,
            mass,
            preorder,
            position,
            subtree_end,
            leaves,
            root,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Common depth `T` of all leaves.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn node(&self, label: &str) -> Result<NodeId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownNode(label.to_owned()))
    }

    pub fn check(&self, x: NodeId) -> Result<NodeId> {
        if x.0 < self.len() {
            Ok(x)
        } else {
            Err(Error::UnknownNode(x.to_string()))
        }
    }

    pub fn label(&self, x: NodeId) -> &str {
        &self.labels[x.0]
    }

    pub fn parent(&self, x: NodeId) -> Option<NodeId> {
        self.parent[x.0]
    }

    /// Immediate successors `x+1`, in input order.
    pub fn children(&self, x: NodeId) -> &[NodeId] {
        &self.children[x.0]
    }

    pub fn time(&self, x: NodeId) -> usize {
        self.time[x.0]
    }

    pub fn weight(&self, x: NodeId) -> f64 {
        self.weight[x.0]
    }

    pub fn is_leaf(&self, x: NodeId) -> bool {
        self.children[x.0].is_empty()
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).map(NodeId)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder.iter().copied().filter(|&x| !self.is_leaf(x))
    }

    /// All nodes, parents before children.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// The subtree `x+` (x included) in pre-order; `x` is always first.
    pub fn descendants(&self, x: NodeId) -> &[NodeId] {
        &self.preorder[self.position[x.0]..self.subtree_end[x.0]]
    }

    /// Position of `y` inside `descendants(x)`, if `y` lies in `x+`.
    pub fn offset_in(&self, x: NodeId, y: NodeId) -> Option<usize> {
        let (px, py) = (self.position[x.0], self.position[y.0]);
        (px <= py && py < self.subtree_end[x.0]).then(|| py - px)
    }

    /// `y ∈ x+`.
    pub fn is_descendant(&self, x: NodeId, y: NodeId) -> bool {
        self.offset_in(x, y).is_some()
    }

    /// Total weight of `x+`.
    pub fn subtree_mass(&self, x: NodeId) -> f64 {
        self.mass[x.0]
    }

    /// Sum of leaf weights below `x`.
    pub fn leaf_mass(&self, x: NodeId) -> f64 {
        self.descendants(x)
            .iter()
            .filter(|&&y| self.is_leaf(y))
            .map(|&y| self.weight(y))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.mass[self.root.0]
    }

    pub fn records(&self) -> Vec<NodeRecord> {
        (0..self.len())
            .map(|i| NodeRecord {
                id: self.labels[i].clone(),
                parent: self.parent[i].map(|p| self.labels[p.0].clone()),
                weight: self.weight[i],
            })
            .collect()
    }

    /// Same labels and parent structure, weights ignored.
    pub fn same_shape(&self, other: &Tree) -> bool {
        self.labels == other.labels && self.parent == other.parent
    }

    /// Same shape, new node weights.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Tree> {
        if weights.len() != self.len() {
            return Err(Error::Invalid(format!(
                "expected {} weights, got {}",
                self.len(),
                weights.len()
            )));
        }
        let mut records = self.records();
        for (r, &w) in records.iter_mut().zip(weights) {
            r.weight = w;
        }
        Tree::build(&records)
    }

    /// Regular tree with `branching` children per internal node and equal
    /// weight on every node.
    pub fn regular(depth: usize, branching: usize) -> Result<Tree> {
        if branching == 0 {
            return Err(Error::InvalidTree("branching must be positive".into()));
        }
        let mut shape: Vec<Option<usize>> = vec![None];
        let mut level = vec![0usize];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &p in &level {
                for _ in 0..branching {
                    next.push(shape.len());
                    shape.push(Some(p));
                }
            }
            level = next;
        }
        let w = 1.0 / shape.len() as f64;
        let records: Vec<NodeRecord> = shape
            .iter()
            .enumerate()
            .map(|(i, p)| NodeRecord {
                id: format!("n{i}"),
                parent: p.map(|p| format!("n{p}")),
                weight: w,
            })
            .collect();
        Tree::build(&records)
    }

    /// Random tree of the given depth; every internal node gets between
    /// `min(2, max_branching)` and `max_branching` children and weights are
    /// normalised to sum to one.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, depth: usize, max_branching: usize) -> Result<Tree> {
        if max_branching == 0 {
            return Err(Error::InvalidTree("branching must be positive".into()));
        }
        let low = max_branching.min(2);
        let mut parents: Vec<Option<usize>> = vec![None];
        let mut level = vec![0usize];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &p in &level {
                let k = rng.gen_range(low..=max_branching);
                for _ in 0..k {
                    next.push(parents.len());
                    parents.push(Some(p));
                }
            }
            level = next;
        }
        let raw: Vec<f64> = parents.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let records: Vec<NodeRecord> = parents
            .iter()
            .zip(&raw)
            .enumerate()
            .map(|(i, (p, w))| NodeRecord {
                id: format!("n{i}"),
                parent: p.map(|p| format!("n{p}")),
                weight: w / total,
            })
            .collect();
        Tree::build(&records)
    }
}

/// Cumulative cash `K_x` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct CashBalance(Vec<f64>);

impl CashBalance {
    pub fn zeros(tree: &Tree) -> Self {
        CashBalance(vec![0.0; tree.len()])
    }

    pub fn constant(tree: &Tree, c: f64) -> Self {
        CashBalance(vec![c; tree.len()])
    }

    pub fn from_values(tree: &Tree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.len() {
            return Err(Error::Invalid(format!(
                "cash balance has {} values for a tree with {} nodes",
                values.len(),
                tree.len()
            )));
        }
        Ok(CashBalance(values))
    }

    pub fn from_fn(tree: &Tree, f: impl FnMut(NodeId) -> f64) -> Self {
        CashBalance(tree.nodes().map(f).collect())
    }

    /// Build from a label → value map; every node must be present.
    pub fn from_labels(tree: &Tree, map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = vec![f64::NAN; tree.len()];
        for (label, &v) in map {
            values[tree.node(label)?.0] = v;
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Invalid(format!(
                "cash balance missing node `{}`",
                tree.label(NodeId(i))
            )));
        }
        Ok(CashBalance(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `K + a` on `x+`, unchanged elsewhere.
    pub fn shifted_on(&self, tree: &Tree, x: NodeId, a: f64) -> Self {
        let mut out = self.clone();
        for &y in tree.descendants(x) {
            out.0[y.0] += a;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        CashBalance(self.0.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &CashBalance) -> Self {
        CashBalance(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &CashBalance) -> Self {
        CashBalance(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `(1-t) K + t K'`.
    pub fn lerp(&self, other: &CashBalance, t: f64) -> Self {
        CashBalance(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }

    /// Values on `x+` in the tree's pre-order.
    pub fn restrict(&self, tree: &Tree, x: NodeId) -> Vec<f64> {
        tree.descendants(x).iter().map(|y| self.0[y.0]).collect()
    }

    pub fn to_labels(&self, tree: &Tree) -> BTreeMap<String, f64> {
        tree.nodes().map(|x| (tree.label(x).to_owned(), self.0[x.0])).collect()
    }

    pub fn max_abs_diff(&self, other: &CashBalance) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<NodeId> for CashBalance {
    type Output = f64;
    fn index(&self, x: NodeId) -> &f64 {
        &self.0[x.0]
    }
}

impl IndexMut<NodeId> for CashBalance {
    fn index_mut(&mut self, x: NodeId) -> &mut f64 {
        &mut self.0[x.0]
    }
}

/// A stopping time, identified with its graph: an antichain meeting every
/// root-to-leaf path exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoppingTime {
    nodes: Vec<NodeId>,
}

impl StoppingTime {
    pub fn new(tree: &Tree, mut nodes: Vec<NodeId>) -> Result<Self> {
        for &x in &nodes {
            tree.check(x)?;
        }
        nodes.sort();
        nodes.dedup();
        let mut member = vec![false; tree.len()];
        for &x in &nodes {
            member[x.0] = true;
        }
        for &leaf in tree.leaves() {
            let mut hits = 0;
            let mut cur = Some(leaf);
            while let Some(y) = cur {
                hits += usize::from(member[y.0]);
                cur = tree.parent(y);
            }
            if hits != 1 {
                return Err(Error::Invalid(format!(
                    "path to leaf `{}` meets the stopping time {hits} times",
                    tree.label(leaf)
                )));
            }
        }
        Ok(StoppingTime { nodes })
    }

    pub fn root(tree: &Tree) -> Self {
        StoppingTime { nodes: vec![tree.root()] }
    }

    pub fn terminal(tree: &Tree) -> Self {
        let mut nodes = tree.leaves().to_vec();
        nodes.sort();
        StoppingTime { nodes }
    }

    /// `τ_x`: stop at `x` on paths through `x`, at the horizon elsewhere.
    pub fn hitting(tree: &Tree, x: NodeId) -> Result<Self> {
        tree.check(x)?;
        let mut nodes: Vec<NodeId> = tree
            .leaves()
            .iter()
            .copied()
            .filter(|&l| !tree.is_descendant(x, l))
            .collect();
        nodes.push(x);
        nodes.sort();
        Ok(StoppingTime { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains(&self, x: NodeId) -> bool {
        self.nodes.binary_search(&x).is_ok()
    }

    /// `self ≤ later` pathwise.
    pub fn precedes(&self, tree: &Tree, later: &StoppingTime) -> bool {
        later.nodes.iter().all(|&z| {
            let mut cur = Some(z);
            while let Some(y) = cur {
                if self.contains(y) {
                    return true;
                }
                cur = tree.parent(y);
            }
            false
        })
    }

    /// Random stopping time on the subtree of `from`: stop at each visited
    /// node with probability `stop_prob`, always at leaves.
    pub fn random_below<R: Rng + ?Sized>(tree: &Tree, from: NodeId, stop_prob: f64, rng: &mut R) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![from];
        while let Some(x) = stack.pop() {
            if tree.is_leaf(x) || rng.gen_bool(stop_prob) {
                out.push(x);
            } else {
                stack.extend(tree.children(x).iter().rev());
            }
        }
        out
    }

    pub fn random<R: Rng + ?Sized>(tree: &Tree, stop_prob: f64, rng: &mut R) -> Self {
        let mut nodes = Self::random_below(tree, tree.root(), stop_prob, rng);
        nodes.sort();
        StoppingTime { nodes }
    }

    /// A random `σ ≥ self`, refining each node of `self` independently.
    pub fn random_refinement<R: Rng + ?Sized>(&self, tree: &Tree, stop_prob: f64, rng: &mut R) -> Self {
        let mut nodes: Vec<NodeId> = self
            .nodes
            .iter()
            .flat_map(|&z| Self::random_below(tree, z, stop_prob, rng))
            .collect();
        nodes.sort();
        StoppingTime { nodes }
    }

    /// Every stopping time of the subtree rooted at `x`, as node lists.
    pub fn enumerate_below(tree: &Tree, x: NodeId) -> Vec<Vec<NodeId>> {
        let mut out = vec![vec![x]];
        if tree.is_leaf(x) {
            return out;
        }
        let mut combos: Vec<Vec<NodeId>> = vec![Vec::new()];
        for &c in tree.children(x) {
            let below = Self::enumerate_below(tree, c);
            combos = combos
                .iter()
                .flat_map(|prefix| {
                    below.iter().map(move |b| {
                        let mut v = prefix.clone();
                        v.extend_from_slice(b);
                        v
                    })
                })
                .collect();
        }
        out.extend(combos);
        out
    }
}

/// `K` stopped at `σ`: frozen at `K_z` from each `z ∈ σ` onwards.
pub fn stopped_at(tree: &Tree, cash: &CashBalance, sigma: &StoppingTime) -> CashBalance {
    let mut out = cash.clone();
    for &z in sigma.nodes() {
        for &y in tree.descendants(z) {
            out[y] = cash[z];
        }
    }
    out
}

/// `K` before `σ`, and the constant `a_z` from each `z ∈ σ` onwards.
pub fn replace_after(tree: &Tree, cash: &CashBalance, sigma: &StoppingTime, values: &NodeValues) -> Result<CashBalance> {
    let mut out = cash.clone();
    for &z in sigma.nodes() {
        let a = *values.get(&z).ok_or_else(|| {
            Error::Invalid(format!("missing replacement value at `{}`", tree.label(z)))
        })?;
        for &y in tree.descendants(z) {
            out[y] = a;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_node() -> Tree {
        Tree::build(&[
            NodeRecord::new("r", None, 0.2),
            NodeRecord::new("u", Some("r"), 0.4),
            NodeRecord::new("d", Some("r"), 0.4),
        ])
        .unwrap()
    }

    #[test]
    fn smallest_branching_tree() {
        let t = three_node();
        assert_eq!(t.horizon(), 1);
        assert_eq!(t.leaves().len(), 2);
        assert_eq!(t.children(t.root()).len(), 2);
    }

    #[test]
    fn chain_tree() {
        let t = Tree::build(&[
            NodeRecord::new("a", None, 0.5),
            NodeRecord::new("b", Some("a"), 0.25),
            NodeRecord::new("c", Some("b"), 0.25),
        ])
        .unwrap();
        assert_eq!(t.horizon(), 2);
        assert_eq!(t.leaves().len(), 1);
    }

    #[test]
    fn validation_errors() {
        let orphan = Tree::build(&[NodeRecord::new("a", None, 0.5), NodeRecord::new("b", Some("zz"), 0.5)]);
        assert!(matches!(orphan, Err(Error::InvalidTree(m)) if m.contains("missing parent")));
        let dup = Tree::build(&[NodeRecord::new("a", None, 0.5), NodeRecord::new("a", Some("a"), 0.5)]);
        assert!(matches!(dup, Err(Error::InvalidTree(m)) if m.contains("duplicate")));
        let two_roots = Tree::build(&[NodeRecord::new("a", None, 0.5), NodeRecord::new("b", None, 0.5)]);
        assert!(matches!(two_roots, Err(Error::InvalidTree(m)) if m.contains("multiple roots")));
        let uneven = Tree::build(&[
            NodeRecord::new("a", None, 0.25),
            NodeRecord::new("b", Some("a"), 0.25),
            NodeRecord::new("c", Some("a"), 0.25),
            NodeRecord::new("d", Some("b"), 0.25),
        ]);
        assert!(matches!(uneven, Err(Error::InvalidTree(m)) if m.contains("depth")));
        let lone = Tree::build(&[NodeRecord::new("a", None, 1.0)]);
        assert!(lone.is_err());
        let zero = Tree::build(&[NodeRecord::new("a", None, 1.0), NodeRecord::new("b", Some("a"), 0.0)]);
        assert!(zero.is_err());
        let cycle = Tree::build(&[
            NodeRecord::new("a", None, 0.25),
            NodeRecord::new("b", Some("a"), 0.25),
            NodeRecord::new("c", Some("d"), 0.25),
            NodeRecord::new("d", Some("c"), 0.25),
        ]);
        assert!(matches!(cycle, Err(Error::InvalidTree(m)) if m.contains("reachable")));
    }

    #[test]
    fn descendants_examples() {
        let t = three_node();
        let leaf = t.node("u").unwrap();
        assert_eq!(t.descendants(leaf), &[leaf]);
        assert_eq!(t.descendants(t.root()).len(), 3);
        let tri = Tree::regular(2, 3).unwrap();
        assert_eq!(tri.descendants(tri.root()).len(), 13);
        assert!(matches!(t.node("nope"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn subtree_mass_examples() {
        let t = three_node();
        assert!((t.subtree_mass(t.root()) - 1.0).abs() < 1e-15);
        let u = t.node("u").unwrap();
        assert_eq!(t.subtree_mass(u), 0.4);
    }

    #[test]
    fn hitting_stop_examples() {
        let t = Tree::regular(2, 2).unwrap();
        let root = StoppingTime::hitting(&t, t.root()).unwrap();
        assert_eq!(root.nodes(), &[t.root()]);
        let leaf = t.leaves()[0];
        let at_leaf = StoppingTime::hitting(&t, leaf).unwrap();
        assert_eq!(at_leaf.nodes().len(), t.leaves().len());
        let x = t.children(t.root())[0];
        let st = StoppingTime::hitting(&t, x).unwrap();
        assert_eq!(st.nodes().len(), 3);
        assert!(st.contains(x));
        StoppingTime::new(&t, st.nodes().to_vec()).unwrap();
    }

    #[test]
    fn replace_after_examples() {
        let t = Tree::regular(2, 2).unwrap();
        let k = CashBalance::from_fn(&t, |x| x.0 as f64 + 1.0);
        let root = StoppingTime::root(&t);
        let out = replace_after(&t, &k, &root, &NodeValues::from([(t.root(), 7.5)])).unwrap();
        assert_eq!(out, CashBalance::constant(&t, 7.5));

        let leaves = StoppingTime::terminal(&t);
        let values: NodeValues = t.leaves().iter().map(|&l| (l, k[l])).collect();
        assert_eq!(replace_after(&t, &k, &leaves, &values).unwrap(), k);

        let mid = StoppingTime::new(&t, t.children(t.root()).to_vec()).unwrap();
        let zeros: NodeValues = mid.nodes().iter().map(|&z| (z, 0.0)).collect();
        let out = replace_after(&t, &k, &mid, &zeros).unwrap();
        for y in t.nodes() {
            let expected = if t.time(y) == 0 { k[y] } else { 0.0 };
            assert_eq!(out[y], expected);
        }
        assert!(replace_after(&t, &k, &mid, &NodeValues::new()).is_err());
    }

    #[test]
    fn stopping_time_validation() {
        let t = Tree::regular(2, 2).unwrap();
        let c = t.children(t.root())[0];
        assert!(StoppingTime::new(&t, vec![t.root(), c]).is_err());
        assert!(StoppingTime::new(&t, vec![c]).is_err());
    }

    #[test]
    fn enumeration_counts() {
        // N(leaf) = 1, N(x) = 1 + prod N(children)
        let t = Tree::regular(2, 2).unwrap();
        assert_eq!(StoppingTime::enumerate_below(&t, t.root()).len(), 1 + 2 * 2);
        let t3 = Tree::regular(3, 2).unwrap();
        assert_eq!(StoppingTime::enumerate_below(&t3, t3.root()).len(), 1 + 5 * 5);
        for nodes in StoppingTime::enumerate_below(&t3, t3.root()) {
            StoppingTime::new(&t3, nodes).unwrap();
        }
    }

    #[test]
    fn structural_invariants_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let depth = rng.gen_range(1..=4);
            let t = Tree::random(&mut rng, depth, 3).unwrap();
            for x in t.nodes() {
                let mut parts = vec![x];
                for &z in t.children(x) {
                    parts.extend_from_slice(t.descendants(z));
                }
                let mut whole = t.descendants(x).to_vec();
                whole.sort();
                parts.sort();
                assert_eq!(whole, parts);
                let rec: f64 = t.weight(x) + t.children(x).iter().map(|&z| t.subtree_mass(z)).sum::<f64>();
                assert!((rec - t.subtree_mass(x)).abs() < 1e-14);
                StoppingTime::new(&t, StoppingTime::hitting(&t, x).unwrap().nodes().to_vec()).unwrap();
            }
            let tau = StoppingTime::random(&t, 0.4, &mut rng);
            StoppingTime::new(&t, tau.nodes().to_vec()).unwrap();
            let sigma = tau.random_refinement(&t, 0.4, &mut rng);
            StoppingTime::new(&t, sigma.nodes().to_vec()).unwrap();
            assert!(tau.precedes(&t, &sigma));
        }
    }
}
