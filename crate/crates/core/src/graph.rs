//! Directed communication topologies.
//!
//! An edge `(j, i)` means node `i` receives from node `j`. Generators cover
//! the ring, the exponential graph (power-of-two offsets), the complete graph,
//! and the multi-sub-ring: `s` directed sub-rings that share a single root.
//!
//! The multi-sub-ring is one consistent reading of a topology that is usually
//! only named, not defined: the non-root nodes are split into `s` contiguous
//! blocks (ascending index, earlier blocks take the remainder), and each block
//! forms the cycle `root -> b_0 -> ... -> b_last -> root`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid graph size {0}: need at least one node")]
    InvalidSize(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("edge {from} -> {to} references a node outside [0, {n})")]
    NodeOutOfRange { from: usize, to: usize, n: usize },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("node {node} is not reachable from root {root}")]
    NotSpanning { root: usize, node: usize },
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Directed graph on nodes `0..n` with an ordered, duplicate-free edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidSize(n));
        }
        Ok(Self {
            n,
            edges: BTreeSet::new(),
        })
    }

    /// Builds a graph from `(from, to)` pairs. Duplicates are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(n)?;
        for (from, to) in edges {
            if !g.insert_edge(from, to)? {
                return Err(GraphError::DuplicateEdge { from, to });
            }
        }
        Ok(g)
    }

    /// Inserts `from -> to`; returns `false` if the edge was already present.
    pub fn insert_edge(&mut self, from: usize, to: usize) -> Result<bool, GraphError> {
        if from >= self.n || to >= self.n {
            return Err(GraphError::NodeOutOfRange {
                from,
                to,
                n: self.n,
            });
        }
        Ok(self.edges.insert((from, to)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(from, to)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Nodes `j != i` with an edge `j -> i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(from, to)| to == i && from != i)
            .map(|&(from, _)| from)
            .collect()
    }

    /// Nodes `i != j` with an edge `j -> i`, ascending.
    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        self.edges
            .range((j, 0)..(j + 1, 0))
            .filter(|&&(_, to)| to != j)
            .map(|&(_, to)| to)
            .collect()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        // BTreeSet order keeps each list ascending.
        for &(from, to) in &self.edges {
            if from != to {
                adj[from].push(to);
            }
        }
        adj
    }

    /// Edge-reversed graph: every `j -> i` becomes `i -> j`.
    pub fn reverse(&self) -> Self {
        Self {
            n: self.n,
            edges: self.edges.iter().map(|&(from, to)| (to, from)).collect(),
        }
    }

    /// Reachability mask from `root` following edge direction.
    pub fn reachable_from(&self, root: usize) -> Vec<bool> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        if root >= self.n {
            return seen;
        }
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Forward and backward reachability from node 0.
    pub fn is_strongly_connected(&self) -> bool {
        self.reachable_from(0).iter().all(|&r| r)
            && self.reverse().reachable_from(0).iter().all(|&r| r)
    }

    /// Nodes from which every node is reachable (roots of spanning out-trees).
    pub fn spanning_roots(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&r| self.reachable_from(r).iter().all(|&x| x))
            .collect()
    }

    /// Parses the edge-list format: a `n <count>` header, then one `j i`
    /// pair per line. `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut graph: Option<DirectedGraph> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |msg: String| GraphError::Parse { line: line_no, msg };
            match graph.as_mut() {
                None => {
                    if toks.len() != 2 || toks[0] != "n" {
                        return Err(parse_err(format!("expected `n <count>` header, got `{line}`")));
                    }
                    let n: usize = toks[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node count `{}`", toks[1])))?;
                    graph = Some(DirectedGraph::empty(n).map_err(|e| parse_err(e.to_string()))?);
                }
                Some(g) => {
                    if toks.len() != 2 {
                        return Err(parse_err(format!("expected `j i`, got `{line}`")));
                    }
                    let from: usize = toks[0]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node index `{}`", toks[0])))?;
                    let to: usize = toks[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node index `{}`", toks[1])))?;
                    match g.insert_edge(from, to) {
                        Ok(true) => {}
                        Ok(false) => {
                            return Err(parse_err(format!("duplicate edge {from} -> {to}")))
                        }
                        Err(e) => return Err(parse_err(e.to_string())),
                    }
                }
            }
        }
        graph.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing `n <count>` header".into(),
        })
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (from, to) in self.edges() {
            let _ = writeln!(out, "{from} {to}");
        }
        out
    }
}

/// Directed cycle `i -> (i+1) mod n`. A single node has no edges.
pub fn gen_ring(n: usize) -> Result<DirectedGraph, GraphError> {
    let mut g = DirectedGraph::empty(n)?;
    if n > 1 {
        for i in 0..n {
            g.insert_edge(i, (i + 1) % n)?;
        }
    }
    Ok(g)
}

/// Edges `i -> (i + 2^j) mod n` for every power of two below `n`.
pub fn gen_exponential(n: usize) -> Result<DirectedGraph, GraphError> {
    let mut g = DirectedGraph::empty(n)?;
    let mut offset = 1usize;
    while offset < n {
        for i in 0..n {
            g.insert_edge(i, (i + offset) % n)?;
        }
        offset <<= 1;
    }
    Ok(g)
}

/// All ordered pairs of distinct nodes.
pub fn gen_complete(n: usize) -> Result<DirectedGraph, GraphError> {
    let mut g = DirectedGraph::empty(n)?;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g.insert_edge(i, j)?;
            }
        }
    }
    Ok(g)
}

/// Contiguous split of the non-root nodes into `s` blocks whose sizes
/// differ by at most one (earlier blocks are larger).
pub fn sub_ring_blocks(n: usize, s: usize, root: usize) -> Vec<Vec<usize>> {
    let others: Vec<usize> = (0..n).filter(|&i| i != root).collect();
    let base = others.len() / s;
    let extra = others.len() % s;
    let mut blocks = Vec::with_capacity(s);
    let mut start = 0;
    for b in 0..s {
        let len = base + usize::from(b < extra);
        blocks.push(others[start..start + len].to_vec());
        start += len;
    }
    blocks
}

/// Multi-sub-ring on `n` nodes with `s` sub-rings sharing `root`.
///
/// Returns `(g_r, g_c)`; both are the full multi-sub-ring. Use
/// [`extract_spanning_tree`] to derive sparse pull/push trees.
pub fn gen_multi_sub_ring(
    n: usize,
    s: usize,
    root: usize,
) -> Result<(DirectedGraph, DirectedGraph), GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidSize(n));
    }
    if s == 0 || s + 1 > n {
        return Err(GraphError::InvalidParameter(format!(
            "sub-ring count {s} must satisfy 1 <= s <= n - 1 (n = {n})"
        )));
    }
    if root >= n {
        return Err(GraphError::InvalidParameter(format!(
            "root {root} outside [0, {n})"
        )));
    }
    let mut g = DirectedGraph::empty(n)?;
    for block in sub_ring_blocks(n, s, root) {
        let mut prev = root;
        for &node in &block {
            g.insert_edge(prev, node)?;
            prev = node;
        }
        g.insert_edge(prev, root)?;
    }
    Ok((g.clone(), g))
}

/// Breadth-first out-tree of `g` rooted at `root`, visiting neighbours in
/// ascending index order.
pub fn extract_spanning_tree(g: &DirectedGraph, root: usize) -> Result<DirectedGraph, GraphError> {
    if root >= g.n() {
        return Err(GraphError::InvalidParameter(format!(
            "root {root} outside [0, {})",
            g.n()
        )));
    }
    let adj = g.adjacency();
    let mut tree = DirectedGraph::empty(g.n())?;
    let mut seen = vec![false; g.n()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                tree.insert_edge(u, w)?;
                queue.push_back(w);
            }
        }
    }
    if let Some(node) = seen.iter().position(|&s| !s) {
        return Err(GraphError::NotSpanning { root, node });
    }
    Ok(tree)
}

/// In-tree towards `root` built from edges of `g`: every non-root node has
/// exactly one out-edge, and all paths lead to `root`.
pub fn extract_in_tree(g: &DirectedGraph, root: usize) -> Result<DirectedGraph, GraphError> {
    Ok(extract_spanning_tree(&g.reverse(), root)?.reverse())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologySpec {
    Ring { n: usize },
    MultiSubRing { n: usize, sub_rings: usize, root: usize },
    Exponential { n: usize },
    Complete { n: usize },
    Custom { graph: DirectedGraph },
}

impl TopologySpec {
    pub fn n(&self) -> usize {
        match self {
            Self::Ring { n }
            | Self::MultiSubRing { n, .. }
            | Self::Exponential { n }
            | Self::Complete { n } => *n,
            Self::Custom { graph } => graph.n(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Ring { .. } => "ring",
            Self::MultiSubRing { .. } => "multi_sub_ring",
            Self::Exponential { .. } => "exponential",
            Self::Complete { .. } => "complete",
            Self::Custom { .. } => "custom",
        }
    }

    pub fn build(&self) -> Result<DirectedGraph, GraphError> {
        match self {
            Self::Ring { n } => gen_ring(*n),
            Self::MultiSubRing { n, sub_rings, root } => {
                gen_multi_sub_ring(*n, *sub_rings, *root).map(|(g, _)| g)
            }
            Self::Exponential { n } => gen_exponential(*n),
            Self::Complete { n } => gen_complete(*n),
            Self::Custom { graph } => Ok(graph.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edge_vec(g: &DirectedGraph) -> Vec<(usize, usize)> {
        g.edges().collect()
    }

    fn degree_histogram(g: &DirectedGraph) -> (Vec<usize>, Vec<usize>) {
        let mut indeg = vec![0; g.n()];
        let mut outdeg = vec![0; g.n()];
        for (from, to) in g.edges() {
            outdeg[from] += 1;
            indeg[to] += 1;
        }
        (indeg, outdeg)
    }

    #[test]
    fn ring_small_cases() {
        assert_eq!(gen_ring(1).unwrap().edge_count(), 0);
        assert_eq!(edge_vec(&gen_ring(3).unwrap()), vec![(0, 1), (1, 2), (2, 0)]);
        assert_eq!(gen_ring(0), Err(GraphError::InvalidSize(0)));
    }

    #[test]
    fn ring_twenty_degrees() {
        let g = gen_ring(20).unwrap();
        assert_eq!(g.edge_count(), 20);
        let (indeg, outdeg) = degree_histogram(&g);
        assert!(indeg.iter().all(|&d| d == 1));
        assert!(outdeg.iter().all(|&d| d == 1));
    }

    #[test]
    fn exponential_offsets() {
        assert_eq!(edge_vec(&gen_exponential(2).unwrap()), vec![(0, 1), (1, 0)]);
        assert_eq!(gen_exponential(1).unwrap().edge_count(), 0);
        assert!(gen_exponential(0).is_err());
        // brute-force listing of offsets below n
        for (n, expected) in [(8usize, 3usize), (20, 5)] {
            let g = gen_exponential(n).unwrap();
            let offsets: Vec<usize> = (0..n).filter(|o| o.is_power_of_two() && *o < n).collect();
            assert_eq!(offsets.len(), expected);
            let (_, outdeg) = degree_histogram(&g);
            assert!(outdeg.iter().all(|&d| d == expected), "n={n}");
            for i in 0..n {
                for &o in &offsets {
                    assert!(g.has_edge(i, (i + o) % n));
                }
            }
        }
    }

    #[test]
    fn multi_sub_ring_examples() {
        let (g, gc) = gen_multi_sub_ring(5, 2, 0).unwrap();
        assert_eq!(g, gc);
        assert_eq!(
            edge_vec(&g),
            vec![(0, 1), (0, 3), (1, 2), (2, 0), (3, 4), (4, 0)]
        );
        assert!(g.is_strongly_connected());

        let (g, _) = gen_multi_sub_ring(3, 2, 0).unwrap();
        assert_eq!(edge_vec(&g), vec![(0, 1), (0, 2), (1, 0), (2, 0)]);
    }

    #[test]
    fn multi_sub_ring_rejects_bad_parameters() {
        assert!(matches!(
            gen_multi_sub_ring(5, 0, 0),
            Err(GraphError::InvalidParameter(_))
        ));
        assert!(matches!(
            gen_multi_sub_ring(1, 1, 0),
            Err(GraphError::InvalidParameter(_))
        ));
        assert!(matches!(
            gen_multi_sub_ring(5, 5, 0),
            Err(GraphError::InvalidParameter(_))
        ));
        assert!(matches!(
            gen_multi_sub_ring(5, 2, 7),
            Err(GraphError::InvalidParameter(_))
        ));
    }

    #[test]
    fn multi_sub_ring_exhaustive_small_n() {
        for n in 2..=64 {
            for s in 1..n {
                for root in [0, n / 2, n - 1] {
                    let (g, _) = gen_multi_sub_ring(n, s, root).unwrap();
                    assert!(g.is_strongly_connected(), "n={n} s={s} root={root}");
                    assert_eq!(g.edge_count(), n - 1 + s);
                }
            }
        }
    }

    #[test]
    fn spanning_tree_examples() {
        let t = extract_spanning_tree(&gen_ring(3).unwrap(), 0).unwrap();
        assert_eq!(edge_vec(&t), vec![(0, 1), (1, 2)]);
        let t = extract_spanning_tree(&gen_complete(3).unwrap(), 0).unwrap();
        assert_eq!(edge_vec(&t), vec![(0, 1), (0, 2)]);
        let t = extract_spanning_tree(&gen_ring(1).unwrap(), 0).unwrap();
        assert_eq!(t.edge_count(), 0);
    }

    #[test]
    fn spanning_tree_names_unreachable_node() {
        let path = DirectedGraph::from_edges(3, [(1, 2)]).unwrap();
        assert_eq!(
            extract_spanning_tree(&path, 1),
            Err(GraphError::NotSpanning { root: 1, node: 0 })
        );
    }

    #[test]
    fn in_tree_uses_original_edges() {
        let (g, _) = gen_multi_sub_ring(5, 2, 0).unwrap();
        let t = extract_in_tree(&g, 0).unwrap();
        assert_eq!(t.edge_count(), 4);
        assert!(t.edges().all(|(a, b)| g.has_edge(a, b)));
        assert_eq!(t.reverse().spanning_roots(), vec![0]);
    }

    #[test]
    fn connectivity_examples() {
        assert!(gen_ring(4).unwrap().is_strongly_connected());
        let path = DirectedGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert!(!path.is_strongly_connected());
        assert!(DirectedGraph::empty(1).unwrap().is_strongly_connected());
    }

    #[test]
    fn reverse_examples() {
        let g = DirectedGraph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(edge_vec(&g.reverse()), vec![(1, 0)]);
        let r = gen_ring(3).unwrap().reverse();
        assert_eq!(edge_vec(&r), vec![(0, 2), (1, 0), (2, 1)]);
    }

    #[test]
    fn edge_list_parsing() {
        let text = "# custom\nn 3\n0 1 # first\n1 2\n\n2 0\n";
        let g = DirectedGraph::parse_edge_list(text).unwrap();
        assert_eq!(g, gen_ring(3).unwrap());
        assert_eq!(DirectedGraph::parse_edge_list(&g.to_edge_list()).unwrap(), g);

        let err = DirectedGraph::parse_edge_list("n 2\n0 5\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        let err = DirectedGraph::parse_edge_list("n 2\n0 1\n0 1\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 3, .. }));
        assert!(DirectedGraph::parse_edge_list("0 1\n").is_err());
        assert!(DirectedGraph::parse_edge_list("").is_err());
    }

    #[test]
    fn duplicate_edges_rejected() {
        assert_eq!(
            DirectedGraph::from_edges(2, [(0, 1), (0, 1)]),
            Err(GraphError::DuplicateEdge { from: 0, to: 1 })
        );
    }

    fn arb_graph() -> impl Strategy<Value = DirectedGraph> {
        (1usize..12).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..40).prop_map(move |pairs| {
                let mut g = DirectedGraph::empty(n).unwrap();
                for (a, b) in pairs {
                    g.insert_edge(a, b).unwrap();
                }
                g
            })
        })
    }

    proptest! {
        #[test]
        fn reverse_is_involution(g in arb_graph()) {
            prop_assert_eq!(g.reverse().reverse(), g);
        }

        #[test]
        fn spanning_tree_shape(g in arb_graph(), root_seed in 0usize..64) {
            let root = root_seed % g.n();
            match extract_spanning_tree(&g, root) {
                Ok(t) => {
                    prop_assert_eq!(t.edge_count(), g.n() - 1);
                    prop_assert!(t.edges().all(|(a, b)| g.has_edge(a, b)));
                    prop_assert!(t.reachable_from(root).iter().all(|&r| r));
                    for v in 0..g.n() {
                        let indeg = t.edges().filter(|&(_, b)| b == v).count();
                        prop_assert_eq!(indeg, usize::from(v != root));
                    }
                }
                Err(GraphError::NotSpanning { node, .. }) => {
                    prop_assert!(!g.reachable_from(root)[node]);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn generators_emit_valid_indices(n in 1usize..40) {
            for g in [gen_ring(n).unwrap(), gen_exponential(n).unwrap(), gen_complete(n).unwrap()] {
                prop_assert!(g.edges().all(|(a, b)| a < n && b < n));
                prop_assert!(g.edges().all(|(a, b)| a != b));
            }
        }
    }
}
