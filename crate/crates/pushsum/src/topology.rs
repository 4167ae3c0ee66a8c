//! Directed communication graphs.
//!
//! An edge `(j, i)` means node `i` receives messages from node `j`. Self-loops
//! are never stored; the neighbor sets returned by [`DirectedGraph::in_neighbors`]
//! and [`DirectedGraph::out_neighbors`] always contain the node itself.
//!
//! Catalog constructions:
//!
//! * `FullyConnected`: complete digraph.
//! * `DiExp`: `i -> (i + 2^k) mod m` for `0 <= k < ceil(log2 m)`.
//! * `Bipartite`: complete bidirected bipartite graph on the halves
//!   `{0..m/2}` and `{m/2..m}` (even `m` only).
//! * `BTree`: complete binary tree in heap order, parent and child linked both ways.
//! * `DiRing`: directed cycle `i -> i+1`.
//! * `SubRing`: `DiRing` plus the chord `0 -> floor(m/2)`. For `m <= 3` the
//!   chord coincides with a ring edge and the graph equals `DiRing`.
//! * `Star`: hub `0` linked both ways to every leaf.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// Largest node count accepted by the catalog and the spectral analysis.
pub const MAX_NODES: usize = 256;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("{kind} requires {requirement}, got m = {m}")]
    InvalidSize {
        kind: TopologyKind,
        m: usize,
        requirement: &'static str,
    },
    #[error("node count {0} outside 1..={MAX_NODES}")]
    NodeCount(usize),
    #[error("node {node} out of range for m = {m}")]
    NodeOutOfRange { node: usize, m: usize },
    #[error("self-loop on node {0} cannot be stored")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("unknown topology kind `{0}`")]
    UnknownKind(String),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TopologyKind {
    FullyConnected,
    DiExp,
    Bipartite,
    BTree,
    DiRing,
    SubRing,
    Star,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 7] = [
        TopologyKind::FullyConnected,
        TopologyKind::DiExp,
        TopologyKind::Bipartite,
        TopologyKind::BTree,
        TopologyKind::DiRing,
        TopologyKind::SubRing,
        TopologyKind::Star,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::FullyConnected => "FullyConnected",
            TopologyKind::DiExp => "DiExp",
            TopologyKind::Bipartite => "Bipartite",
            TopologyKind::BTree => "BTree",
            TopologyKind::DiRing => "DiRing",
            TopologyKind::SubRing => "SubRing",
            TopologyKind::Star => "Star",
        }
    }

    /// Whether `m` nodes is a valid size for this kind.
    pub fn validate(self, m: usize) -> Result<(), TopologyError> {
        if m == 0 || m > MAX_NODES {
            return Err(TopologyError::NodeCount(m));
        }
        if self == TopologyKind::Bipartite && m % 2 != 0 {
            return Err(TopologyError::InvalidSize {
                kind: self,
                m,
                requirement: "an even node count",
            });
        }
        Ok(())
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "fullyconnected" | "full" | "complete" => Ok(TopologyKind::FullyConnected),
            "diexp" | "exp" | "exponential" => Ok(TopologyKind::DiExp),
            "bipartite" => Ok(TopologyKind::Bipartite),
            "btree" | "binarytree" => Ok(TopologyKind::BTree),
            "diring" | "ring" => Ok(TopologyKind::DiRing),
            "subring" => Ok(TopologyKind::SubRing),
            "star" => Ok(TopologyKind::Star),
            _ => Err(TopologyError::UnknownKind(s.to_string())),
        }
    }
}

/// Directed graph on nodes `0..m` with edges stored as `(source, target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    /// Builds a graph, rejecting self-loops, duplicates and out-of-range endpoints.
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if m == 0 || m > MAX_NODES {
            return Err(TopologyError::NodeCount(m));
        }
        let mut set = BTreeSet::new();
        for &(j, i) in edges {
            for node in [j, i] {
                if node >= m {
                    return Err(TopologyError::NodeOutOfRange { node, m });
                }
            }
            if j == i {
                return Err(TopologyError::SelfLoop(j));
            }
            if !set.insert((j, i)) {
                return Err(TopologyError::DuplicateEdge(j, i));
            }
        }
        Ok(Self { m, edges: set })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Stored edges `(j, i)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.edges.contains(&(j, i))
    }

    fn check_node(&self, i: usize) -> Result<(), TopologyError> {
        if i >= self.m {
            Err(TopologyError::NodeOutOfRange { node: i, m: self.m })
        } else {
            Ok(())
        }
    }

    /// Nodes `j` that `i` receives from, including `i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Result<Vec<usize>, TopologyError> {
        self.check_node(i)?;
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, t)| t == i)
            .map(|&(s, _)| s)
            .chain(std::iter::once(i))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Nodes that receive from `i`, including `i`, ascending.
    pub fn out_neighbors(&self, i: usize) -> Result<Vec<usize>, TopologyError> {
        self.check_node(i)?;
        let mut out: Vec<usize> = self
            .edges
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, t)| t)
            .chain(std::iter::once(i))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Self-exclusive out-degree of every node.
    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for &(j, _) in &self.edges {
            d[j] += 1;
        }
        d
    }

    /// Self-exclusive in-degree of every node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for &(_, i) in &self.edges {
            d[i] += 1;
        }
        d
    }

    /// True iff every node has equal in- and out-degree.
    pub fn is_balanced(&self) -> bool {
        self.in_degrees() == self.out_degrees()
    }

    /// True iff every node reaches every other node.
    pub fn is_strongly_connected(&self) -> bool {
        let mut fwd = vec![Vec::new(); self.m];
        let mut bwd = vec![Vec::new(); self.m];
        for &(j, i) in &self.edges {
            fwd[j].push(i);
            bwd[i].push(j);
        }
        reaches_all(&fwd) && reaches_all(&bwd)
    }

    /// Writes the edge-list text form: `m` on the first line, then `j i` per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.m)?;
        for &(j, i) in &self.edges {
            writeln!(out, "{j} {i}")?;
        }
        Ok(())
    }

    pub fn to_edge_list(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the edge-list text form produced by [`DirectedGraph::write_edge_list`].
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self, TopologyError> {
        let mut m = None;
        let mut edges = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse = |tok: &str| {
                tok.parse::<usize>().map_err(|_| TopologyError::Parse {
                    line: lineno,
                    message: format!("expected a node index, found `{tok}`"),
                })
            };
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            match (m, toks.as_slice()) {
                (None, [count]) => m = Some(parse(count)?),
                (None, _) => {
                    return Err(TopologyError::Parse {
                        line: lineno,
                        message: "first line must hold the node count".into(),
                    })
                }
                (Some(_), [j, i]) => edges.push((parse(j)?, parse(i)?)),
                (Some(_), _) => {
                    return Err(TopologyError::Parse {
                        line: lineno,
                        message: "expected `j i`".into(),
                    })
                }
            }
        }
        let m = m.ok_or(TopologyError::Parse {
            line: 0,
            message: "empty edge list".into(),
        })?;
        Self::new(m, &edges)
    }
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let m = adj.len();
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == m
}

/// Builds the catalog graph of the given kind on `m` nodes.
pub fn build_topology(kind: TopologyKind, m: usize) -> Result<DirectedGraph, TopologyError> {
    kind.validate(m)?;
    let mut edges = BTreeSet::new();
    let both = |a: usize, b: usize, e: &mut BTreeSet<(usize, usize)>| {
        e.insert((a, b));
        e.insert((b, a));
    };
    match kind {
        TopologyKind::FullyConnected => {
            for j in 0..m {
                for i in 0..m {
                    if i != j {
                        edges.insert((j, i));
                    }
                }
            }
        }
        TopologyKind::DiExp => {
            let hops = usize::BITS - (m - 1).leading_zeros();
            for i in 0..m {
                for k in 0..hops {
                    let t = (i + (1usize << k)) % m;
                    if t != i {
                        edges.insert((i, t));
                    }
                }
            }
        }
        TopologyKind::Bipartite => {
            let h = m / 2;
            for a in 0..h {
                for b in h..m {
                    both(a, b, &mut edges);
                }
            }
        }
        TopologyKind::BTree => {
            for child in 1..m {
                both((child - 1) / 2, child, &mut edges);
            }
        }
        TopologyKind::DiRing | TopologyKind::SubRing => {
            if m > 1 {
                for i in 0..m {
                    edges.insert((i, (i + 1) % m));
                }
            }
            if kind == TopologyKind::SubRing && m / 2 != 0 {
                edges.insert((0, m / 2));
            }
        }
        TopologyKind::Star => {
            for leaf in 1..m {
                both(0, leaf, &mut edges);
            }
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    DirectedGraph::new(m, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> Vec<usize> {
        v.to_vec()
    }

    #[test]
    fn fully_connected_three_has_all_ordered_pairs() {
        let g = build_topology(TopologyKind::FullyConnected, 3).unwrap();
        let e: Vec<_> = g.edges().collect();
        assert_eq!(e, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn diring_three_is_successor_cycle() {
        let g = build_topology(TopologyKind::DiRing, 3).unwrap();
        let e: Vec<_> = g.edges().collect();
        assert_eq!(e, vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn diexp_eight_has_power_of_two_hops() {
        let g = build_topology(TopologyKind::DiExp, 8).unwrap();
        for i in 0..8 {
            let mut expect = vec![i, (i + 1) % 8, (i + 2) % 8, (i + 4) % 8];
            expect.sort_unstable();
            assert_eq!(g.out_neighbors(i).unwrap(), expect);
        }
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn diexp_non_power_of_two_uses_ceiling_log() {
        let g = build_topology(TopologyKind::DiExp, 5).unwrap();
        assert_eq!(g.out_neighbors(0).unwrap(), set(&[0, 1, 2, 4]));
        assert_eq!(g.out_neighbors(4).unwrap(), set(&[0, 1, 3, 4]));
    }

    #[test]
    fn bipartite_rejects_odd_size() {
        assert!(matches!(
            build_topology(TopologyKind::Bipartite, 5),
            Err(TopologyError::InvalidSize { .. })
        ));
    }

    #[test]
    fn balance_examples() {
        assert!(build_topology(TopologyKind::DiRing, 5).unwrap().is_balanced());
        assert!(build_topology(TopologyKind::FullyConnected, 4)
            .unwrap()
            .is_balanced());
        assert!(!build_topology(TopologyKind::SubRing, 8).unwrap().is_balanced());
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(build_topology(TopologyKind::DiRing, 4)
            .unwrap()
            .is_strongly_connected());
        let g = DirectedGraph::new(2, &[(0, 1)]).unwrap();
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn neighbor_examples() {
        let ring = build_topology(TopologyKind::DiRing, 3).unwrap();
        assert_eq!(ring.out_neighbors(0).unwrap(), set(&[0, 1]));
        let fc = build_topology(TopologyKind::FullyConnected, 3).unwrap();
        assert_eq!(fc.in_neighbors(1).unwrap(), set(&[0, 1, 2]));
        let star = build_topology(TopologyKind::Star, 5).unwrap();
        assert_eq!(star.out_neighbors(0).unwrap(), set(&[0, 1, 2, 3, 4]));
        assert!(matches!(
            star.in_neighbors(5),
            Err(TopologyError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn constructor_rejects_bad_edges() {
        assert!(matches!(
            DirectedGraph::new(3, &[(1, 1)]),
            Err(TopologyError::SelfLoop(1))
        ));
        assert!(matches!(
            DirectedGraph::new(3, &[(0, 1), (0, 1)]),
            Err(TopologyError::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            DirectedGraph::new(3, &[(0, 3)]),
            Err(TopologyError::NodeOutOfRange { .. })
        ));
        assert!(matches!(
            DirectedGraph::new(0, &[]),
            Err(TopologyError::NodeCount(0))
        ));
    }

    #[test]
    fn subring_chord_unbalances_endpoints() {
        let g = build_topology(TopologyKind::SubRing, 8).unwrap();
        assert!(g.has_edge(0, 4));
        assert_eq!(g.out_degrees()[0], 2);
        assert_eq!(g.in_degrees()[4], 2);
    }

    #[test]
    fn kind_names_parse_back() {
        for kind in TopologyKind::ALL {
            assert_eq!(kind.name().parse::<TopologyKind>().unwrap(), kind);
        }
        assert!("torus".parse::<TopologyKind>().is_err());
    }

    #[test]
    fn edge_list_parse_errors_carry_line_numbers() {
        let err = DirectedGraph::read_edge_list("3\n0 1\n1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }), "{err}");
    }
}
