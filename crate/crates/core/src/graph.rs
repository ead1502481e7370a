//! Symmetric CSR graphs and the topology surgery used by the session
//! protocol and the class augmentation branches.
//!
//! Every [`SparseGraph`] is undirected, deduplicated and carries a
//! self-loop on each node. Operations never mutate a graph in place; they
//! return a new one that satisfies the same invariants.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable symmetric adjacency in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparseGraph {
    /// Builds a graph from an undirected edge list. Edges are symmetrized,
    /// duplicates removed and a self-loop added for every node.
    pub fn from_edges(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Input(format!(
                    "edge ({u},{v}) out of range for {n} nodes"
                )));
            }
        }
        let mut rows: Vec<Vec<usize>> = (0..n).map(|u| vec![u]).collect();
        for &(u, v) in edges {
            if u != v {
                rows[u].push(v);
                rows[v].push(u);
            }
        }
        Ok(Self::from_rows(rows))
    }

    /// Graph whose only edges are self-loops.
    pub fn identity(n: usize) -> Self {
        SparseGraph {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
        }
    }

    /// Block-diagonal stacking: node `i` of `parts[k]` becomes node
    /// `i + sum of earlier part sizes`.
    pub fn disjoint_union(parts: &[&SparseGraph]) -> Self {
        let mut rows = Vec::with_capacity(parts.iter().map(|g| g.n).sum());
        let mut base = 0;
        for g in parts {
            for u in 0..g.n {
                rows.push(g.neighbors(u).iter().map(|&v| v + base).collect());
            }
            base += g.n;
        }
        Self::from_rows(rows)
    }

    /// Edge union of graphs over the same node set.
    pub fn edge_union(parts: &[&SparseGraph]) -> Result<Self> {
        let n = parts.first().map_or(0, |g| g.n);
        if parts.iter().any(|g| g.n != n) {
            return Err(Error::Contract("edge union of graphs with different node counts".into()));
        }
        let rows = (0..n)
            .map(|u| parts.iter().flat_map(|g| g.neighbors(u).iter().copied()).collect())
            .collect();
        Ok(Self::from_rows(rows))
    }

    fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        SparseGraph {
            n,
            row_offsets,
            col_indices,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of stored directed entries, self-loops included.
    pub fn entry_count(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges `(u, v)` with `u < v`, self-loops excluded.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Count of undirected edges excluding self-loops.
    pub fn undirected_edge_count(&self) -> usize {
        (self.col_indices.len() - self.n) / 2
    }

    /// True when `u` has at least one neighbor besides itself.
    pub fn is_connected_node(&self, u: usize) -> bool {
        self.degree(u) > 1
    }

    /// Destination node of every CSR entry, i.e. the row each entry belongs
    /// to. Paired with `col_indices` this enumerates directed edges `v -> u`.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.col_indices.len());
        for u in 0..self.n {
            rows.extend(std::iter::repeat_n(u, self.degree(u)));
        }
        rows
    }

    /// Checks every structural invariant. Used by tests and after decoding.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.row_offsets.len() != self.n + 1 || self.row_offsets[0] != 0 {
            return bad("row offsets length/start".into());
        }
        if *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return bad("last row offset != entry count".into());
        }
        for u in 0..self.n {
            if self.row_offsets[u] > self.row_offsets[u + 1] {
                return bad(format!("row offsets decrease at {u}"));
            }
            let row = self.neighbors(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {u} not strictly sorted"));
            }
            if row.binary_search(&u).is_err() {
                return bad(format!("node {u} lacks a self-loop"));
            }
            for &v in row {
                if v >= self.n {
                    return bad(format!("neighbor {v} of {u} out of range"));
                }
                if !self.has_edge(v, u) {
                    return bad(format!("edge ({u},{v}) not mirrored"));
                }
            }
        }
        Ok(())
    }
}

/// Sorted, duplicate-free node ids of one graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIdSet(Vec<usize>);

impl NodeIdSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        NodeIdSet(ids)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<usize> for NodeIdSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeIdSet::new(iter.into_iter().collect())
    }
}

/// Per-node class id; `None` marks an unlabeled node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(Vec<Option<usize>>);

impl LabelVector {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        LabelVector(labels)
    }

    pub fn from_dense(labels: &[usize]) -> Self {
        LabelVector(labels.iter().map(|&c| Some(c)).collect())
    }

    pub fn get(&self, u: usize) -> Option<usize> {
        self.0.get(u).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.0.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Nodes carrying label `c`, ascending.
    pub fn nodes_of(&self, c: usize) -> Vec<usize> {
        (0..self.0.len()).filter(|&u| self.get(u) == Some(c)).collect()
    }
}

/// Keeps only edges whose two endpoints both carry a label in `subset`.
/// Self-loops always survive, so the node set is unchanged.
pub fn sever_to_class_subset(
    g: &SparseGraph,
    labels: &LabelVector,
    subset: &BTreeSet<usize>,
) -> SparseGraph {
    let inside = |u: usize| labels.get(u).is_some_and(|c| subset.contains(&c));
    let rows = (0..g.node_count())
        .map(|u| {
            g.neighbors(u)
                .iter()
                .copied()
                .filter(|&v| v == u || (inside(u) && inside(v)))
                .collect()
        })
        .collect();
    SparseGraph::from_rows(rows)
}

/// Adds `floor(rate * |E|)` new undirected edges drawn uniformly without
/// replacement from node pairs that are absent in `g`, restricted to nodes
/// that already have at least one non-self-loop edge. When fewer absent
/// pairs exist than requested, all of them are added.
pub fn inject_link_noise<R: Rng + ?Sized>(g: &SparseGraph, rate: f64, rng: &mut R) -> SparseGraph {
    assert!((0.0..=1.0).contains(&rate), "noise rate {rate} outside [0,1]");
    let requested = (rate * g.undirected_edge_count() as f64).floor() as usize;
    if requested == 0 {
        return g.clone();
    }
    let nodes: Vec<usize> = (0..g.node_count())
        .filter(|&u| g.is_connected_node(u))
        .collect();
    let k = nodes.len();
    let total_pairs = k * k.saturating_sub(1) / 2;
    // every edge of a connected node joins two connected nodes
    let pool = total_pairs - g.undirected_edge_count();
    let mut added: Vec<(usize, usize)> = Vec::new();
    if requested >= pool {
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                if !g.has_edge(u, v) {
                    added.push((u, v));
                }
            }
        }
    } else if requested * 2 <= pool {
        let mut seen = HashSet::new();
        while added.len() < requested {
            let a = nodes[rng.random_range(0..k)];
            let b = nodes[rng.random_range(0..k)];
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if !g.has_edge(pair.0, pair.1) && seen.insert(pair) {
                added.push(pair);
            }
        }
    } else {
        // dense regime: enumerate, then partial Fisher-Yates
        let mut absent = Vec::with_capacity(pool);
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                if !g.has_edge(u, v) {
                    absent.push((u, v));
                }
            }
        }
        for i in 0..requested {
            let j = rng.random_range(i..absent.len());
            absent.swap(i, j);
        }
        absent.truncate(requested);
        added = absent;
    }
    let mut rows: Vec<Vec<usize>> = (0..g.node_count()).map(|u| g.neighbors(u).to_vec()).collect();
    for (u, v) in added {
        rows[u].push(v);
        rows[v].push(u);
    }
    SparseGraph::from_rows(rows)
}

/// Subgraph induced on `nodes` (ascending global ids), reindexed densely.
/// Returns the graph and the local-to-global id table.
pub fn induced_subgraph(g: &SparseGraph, nodes: &NodeIdSet) -> (SparseGraph, Vec<usize>) {
    let mut local = vec![usize::MAX; g.node_count()];
    for (i, u) in nodes.iter().enumerate() {
        local[u] = i;
    }
    let rows = nodes
        .iter()
        .map(|u| {
            g.neighbors(u)
                .iter()
                .filter_map(|&v| (local[v] != usize::MAX).then_some(local[v]))
                .collect()
        })
        .collect();
    (SparseGraph::from_rows(rows), nodes.as_slice().to_vec())
}

/// One session's induced subgraph with its id mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionGraph {
    pub graph: SparseGraph,
    /// `local_to_global[i]` is the original id of local node `i`.
    pub local_to_global: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRestriction {
    pub sessions: Vec<SessionGraph>,
    /// Nodes whose label belongs to no session (or that are unlabeled).
    pub dropped: Vec<usize>,
}

/// Splits `g` into one induced subgraph per session class set, removing every
/// link that crosses sessions.
pub fn restrict_to_sessions(
    g: &SparseGraph,
    labels: &LabelVector,
    session_classes: &[BTreeSet<usize>],
) -> Result<SessionRestriction> {
    let mut owner = std::collections::HashMap::new();
    for (s, classes) in session_classes.iter().enumerate() {
        for &c in classes {
            if owner.insert(c, s).is_some() {
                return Err(Error::Input(format!(
                    "class {c} assigned to more than one session"
                )));
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); session_classes.len()];
    let mut dropped = Vec::new();
    for u in 0..g.node_count() {
        match labels.get(u).and_then(|c| owner.get(&c)) {
            Some(&s) => members[s].push(u),
            None => dropped.push(u),
        }
    }
    let sessions = members
        .into_iter()
        .map(|m| {
            let (graph, local_to_global) = induced_subgraph(g, &NodeIdSet::new(m));
            SessionGraph {
                graph,
                local_to_global,
            }
        })
        .collect();
    Ok(SessionRestriction { sessions, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn unions() {
        let a = SparseGraph::from_edges(&[(0, 1)], 2).unwrap();
        let b = SparseGraph::from_edges(&[(0, 2)], 3).unwrap();
        let d = SparseGraph::disjoint_union(&[&a, &b]);
        d.validate().unwrap();
        assert_eq!(d.node_count(), 5);
        assert_eq!(d.undirected_edges(), vec![(0, 1), (2, 4)]);
        assert!(d.has_edge(3, 3));

        let c = SparseGraph::from_edges(&[(1, 2), (0, 2)], 3).unwrap();
        let u = SparseGraph::edge_union(&[&b, &c]).unwrap();
        assert_eq!(u.undirected_edges(), vec![(0, 2), (1, 2)]);
        assert_eq!(u.entry_count(), 3 + 2 * 2);
        assert!(SparseGraph::edge_union(&[&a, &b]).is_err());
    }

    #[test]
    fn build_symmetrizes_and_adds_self_loops() {
        let g = SparseGraph::from_edges(&[(0, 1)], 2).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[0, 1]);
        let dup = SparseGraph::from_edges(&[(0, 1), (1, 0), (0, 1)], 2).unwrap();
        assert_eq!(g, dup);
        let empty = SparseGraph::from_edges(&[], 3).unwrap();
        for u in 0..3 {
            assert_eq!(empty.neighbors(u), &[u]);
        }
    }

    #[test]
    fn build_rejects_out_of_range() {
        assert!(matches!(
            SparseGraph::from_edges(&[(0, 2)], 2),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn identity_has_only_self_loops() {
        let g = SparseGraph::identity(1);
        assert_eq!(g.neighbors(0), &[0]);
        let g = SparseGraph::identity(4);
        assert_eq!(g.undirected_edge_count(), 0);
        assert!((0..4).all(|u| g.degree(u) == 1));
        g.validate().unwrap();
    }

    #[test]
    fn sever_keeps_only_in_subset_links() {
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let labels = LabelVector::from_dense(&[0, 0, 1]);
        let s = sever_to_class_subset(&g, &labels, &set(&[0]));
        assert!(s.has_edge(0, 1));
        assert!(!s.has_edge(1, 2));
        assert_eq!(sever_to_class_subset(&g, &labels, &set(&[0, 1])), g);
        assert_eq!(
            sever_to_class_subset(&g, &labels, &BTreeSet::new()),
            SparseGraph::identity(3)
        );
    }

    #[test]
    fn noise_rate_zero_and_complete_graph_are_noops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        assert_eq!(inject_link_noise(&g, 0.0, &mut rng), g);
        assert_eq!(inject_link_noise(&g, 1.0, &mut rng), g);
    }

    #[test]
    fn noise_on_ten_disjoint_edges_adds_one() {
        let edges: Vec<_> = (0..10).map(|i| (2 * i, 2 * i + 1)).collect();
        let g = SparseGraph::from_edges(&edges, 20).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = inject_link_noise(&g, 0.1, &mut rng);
            assert_eq!(noisy.undirected_edge_count(), 11);
            noisy.validate().unwrap();
            for (u, v) in g.undirected_edges() {
                assert!(noisy.has_edge(u, v));
            }
        }
    }

    #[test]
    fn noise_skips_isolated_nodes() {
        // node 3 has only a self-loop and must stay isolated
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2)], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = inject_link_noise(&g, 1.0, &mut rng);
        assert_eq!(noisy.degree(3), 1);
        assert!(noisy.has_edge(0, 2));
    }

    #[test]
    fn restrict_severs_cross_session_links() {
        let g = SparseGraph::from_edges(&[(0, 1)], 2).unwrap();
        let labels = LabelVector::from_dense(&[0, 1]);
        let r = restrict_to_sessions(&g, &labels, &[set(&[0]), set(&[1])]).unwrap();
        assert!(r.sessions.iter().all(|s| s.graph.undirected_edge_count() == 0));
        let one = restrict_to_sessions(&g, &labels, &[set(&[0, 1])]).unwrap();
        assert_eq!(one.sessions[0].graph, g);
    }

    #[test]
    fn restrict_reports_dropped_nodes() {
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let labels = LabelVector::new(vec![Some(0), Some(5), None]);
        let r = restrict_to_sessions(&g, &labels, &[set(&[0])]).unwrap();
        assert_eq!(r.dropped, vec![1, 2]);
        assert!(restrict_to_sessions(&g, &labels, &[set(&[0]), set(&[0])]).is_err());
    }

    fn arb_labeled_graph() -> impl Strategy<Value = (SparseGraph, LabelVector, usize)> {
        (2usize..14, 1usize..5).prop_flat_map(|(n, classes)| {
            (
                proptest::collection::vec((0..n, 0..n), 0..40),
                proptest::collection::vec(0..classes, n),
            )
                .prop_map(move |(edges, labels)| {
                    (
                        SparseGraph::from_edges(&edges, n).unwrap(),
                        LabelVector::from_dense(&labels),
                        classes,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn operations_preserve_invariants((g, labels, classes) in arb_labeled_graph(), seed in 0u64..1000, rate in 0.0f64..1.0) {
            g.validate().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let subset: BTreeSet<usize> = (0..classes).filter(|c| (seed >> c) & 1 == 1).collect();
            let s = sever_to_class_subset(&g, &labels, &subset);
            s.validate().unwrap();
            let noisy = inject_link_noise(&s, rate, &mut rng);
            noisy.validate().unwrap();
            let added = noisy.undirected_edge_count() - s.undirected_edge_count();
            prop_assert!(added <= (rate * s.undirected_edge_count() as f64).floor() as usize);
        }

        #[test]
        fn partition_union_plus_cut_edges_reconstructs((g, labels, classes) in arb_labeled_graph(), seed in 0u64..1000) {
            // two-block partition of the class space
            let a: BTreeSet<usize> = (0..classes).filter(|c| (seed >> c) & 1 == 1).collect();
            let b: BTreeSet<usize> = (0..classes).filter(|c| !a.contains(c)).collect();
            let mut rebuilt: BTreeSet<(usize, usize)> = BTreeSet::new();
            for part in [&a, &b] {
                rebuilt.extend(sever_to_class_subset(&g, &labels, part).undirected_edges());
            }
            let original: BTreeSet<_> = g.undirected_edges().into_iter().collect();
            let cut: BTreeSet<_> = original
                .iter()
                .copied()
                .filter(|&(u, v)| a.contains(&labels.get(u).unwrap()) != a.contains(&labels.get(v).unwrap()))
                .collect();
            prop_assert!(rebuilt.is_disjoint(&cut));
            rebuilt.extend(cut);
            prop_assert_eq!(rebuilt, original);
        }

        #[test]
        fn restricted_sessions_share_no_edges((g, labels, classes) in arb_labeled_graph()) {
            let sessions: Vec<BTreeSet<usize>> = (0..classes).map(|c| set(&[c])).collect();
            let r = restrict_to_sessions(&g, &labels, &sessions).unwrap();
            for s in &r.sessions {
                s.graph.validate().unwrap();
                for (u, v) in s.graph.undirected_edges() {
                    let (gu, gv) = (s.local_to_global[u], s.local_to_global[v]);
                    prop_assert_eq!(labels.get(gu), labels.get(gv));
                    prop_assert!(g.has_edge(gu, gv));
                }
            }
        }
    }
}
