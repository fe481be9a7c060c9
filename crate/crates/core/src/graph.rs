//! Candidate graph and triplet enumeration.
//!
//! Nodes are the candidates plus one terminal node that marks where a track
//! begins or ends. The terminal is adjacent to every candidate; candidates
//! are adjacent when their world distance is at most the edge length limit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::fsutil;

/// A node of the candidate graph. `Candidate` holds an index into
/// [`CandidateGraph::candidates`]. The terminal orders before every candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Terminal,
    Candidate(u32),
}

impl Node {
    pub fn candidate(self) -> Option<u32> {
        match self {
            Node::Terminal => None,
            Node::Candidate(i) => Some(i),
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Node::Terminal)
    }
}

/// Two incident edges `{a, center}` and `{center, b}` with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub a: Node,
    pub center: u32,
    pub b: Node,
}

impl Triplet {
    /// Canonical form; `None` when both outer nodes coincide.
    pub fn new(x: Node, center: u32, y: Node) -> Option<Triplet> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(Triplet { a: x, center, b: y }),
            std::cmp::Ordering::Greater => Some(Triplet { a: y, center, b: x }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn outer(&self) -> [Node; 2] {
        [self.a, self.b]
    }

    pub fn contains_outer(&self, n: Node) -> bool {
        self.a == n || self.b == n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGraph {
    candidates: Vec<Candidate>,
    /// Candidate-candidate edges as index pairs `(lo, hi)`, sorted.
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
    theta_d: f64,
}

pub fn distance(p: [f64; 3], q: [f64; 3]) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|a| p[a] - q[a]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

impl CandidateGraph {
    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn candidate(&self, i: u32) -> &Candidate {
        &self.candidates[i as usize]
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn theta_d(&self) -> f64 {
        self.theta_d
    }

    /// Candidate-candidate edges; terminal edges are implicit.
    pub fn candidate_edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// All edges including one terminal edge per candidate.
    pub fn edge_count(&self) -> usize {
        self.edges.len() + self.candidates.len()
    }

    /// Candidate neighbors of `i`, ascending.
    pub fn neighbors(&self, i: u32) -> &[u32] {
        &self.adjacency[i as usize]
    }

    /// Degree in the full graph, counting the terminal edge.
    pub fn degree(&self, i: u32) -> usize {
        self.adjacency[i as usize].len() + 1
    }

    pub fn has_edge(&self, x: Node, y: Node) -> bool {
        match (x, y) {
            (Node::Terminal, Node::Terminal) => false,
            (Node::Terminal, Node::Candidate(i)) | (Node::Candidate(i), Node::Terminal) => (i as usize) < self.len(),
            (Node::Candidate(i), Node::Candidate(j)) => {
                (i as usize) < self.len() && self.adjacency[i as usize].binary_search(&j).is_ok()
            }
        }
    }

    pub fn position(&self, n: Node) -> Option<[f64; 3]> {
        n.candidate().map(|i| self.candidates[i as usize].position)
    }

    /// Index of the candidate with the given id.
    pub fn index_of_id(&self, id: u32) -> Option<u32> {
        self.candidates.iter().position(|c| c.id == id).map(|i| i as u32)
    }

    /// Assembles a graph from candidates (any order) and explicit edges given
    /// as candidate ids. Used when reading graph files.
    pub fn from_parts(candidates: Vec<Candidate>, edge_ids: &[(u32, u32)], theta_d: f64) -> Result<Self> {
        let mut candidates = candidates;
        candidates.sort_by(|a, b| a.voxel.cmp(&b.voxel).then(a.id.cmp(&b.id)));
        let index: HashMap<u32, u32> = candidates.iter().enumerate().map(|(i, c)| (c.id, i as u32)).collect();
        if index.len() != candidates.len() {
            return Err(Error::InvalidParam("duplicate candidate ids".into()));
        }
        let mut edges = Vec::with_capacity(edge_ids.len());
        for &(p, q) in edge_ids {
            let (Some(&i), Some(&j)) = (index.get(&p), index.get(&q)) else {
                return Err(Error::InvalidParam(format!("edge ({p}, {q}) references an unknown candidate")));
            };
            if i == j {
                return Err(Error::InvalidParam(format!("self edge on candidate {p}")));
            }
            edges.push((i.min(j), i.max(j)));
        }
        Ok(Self::assemble(candidates, edges, theta_d))
    }

    fn assemble(candidates: Vec<Candidate>, mut edges: Vec<(u32, u32)>, theta_d: f64) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); candidates.len()];
        for &(i, j) in &edges {
            adjacency[i as usize].push(j);
            adjacency[j as usize].push(i);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        CandidateGraph {
            candidates,
            edges,
            adjacency,
            theta_d,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# mtrack graph v1").unwrap();
        writeln!(s, "# theta_d_nm: {}", self.theta_d).unwrap();
        writeln!(s, "# candidates: {}", self.len()).unwrap();
        writeln!(s, "# edges: {}", self.edges.len()).unwrap();
        for c in &self.candidates {
            let [z, y, x] = c.voxel;
            let [pz, py, px] = c.position;
            writeln!(s, "c {} {z} {y} {x} {pz} {py} {px} {}", c.id, c.score).unwrap();
        }
        for &(i, j) in &self.edges {
            writeln!(s, "e {} {}", self.candidates[i as usize].id, self.candidates[j as usize].id).unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |d: String| Error::format("graph file", path, d);
        let mut theta_d = None;
        let mut candidates = Vec::new();
        let mut edges = Vec::new();
        let mut declared = None;
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["#", "theta_d_nm:", v] => theta_d = Some(v.parse::<f64>().map_err(|_| bad(format!("line {}: bad theta_d", n + 1)))?),
                ["#", "candidates:", v] => declared = Some(v.parse::<usize>().map_err(|_| bad(format!("line {}: bad count", n + 1)))?),
                ["#", ..] => {}
                ["c", rest @ ..] if rest.len() == 8 => {
                    let p = |k: usize| rest[k].parse::<f64>().ok();
                    let u = |k: usize| rest[k].parse::<usize>().ok();
                    let c = (|| {
                        Some(Candidate {
                            id: rest[0].parse().ok()?,
                            voxel: [u(1)?, u(2)?, u(3)?],
                            position: [p(4)?, p(5)?, p(6)?],
                            score: rest[7].parse().ok()?,
                        })
                    })();
                    candidates.push(c.ok_or_else(|| bad(format!("line {}: bad candidate", n + 1)))?);
                }
                ["e", a, b] => {
                    let (Ok(a), Ok(b)) = (a.parse(), b.parse()) else {
                        return Err(bad(format!("line {}: bad edge", n + 1)));
                    };
                    edges.push((a, b));
                }
                _ => return Err(bad(format!("line {}: unrecognized record", n + 1))),
            }
        }
        let theta_d = theta_d.ok_or_else(|| bad("missing theta_d".into()))?;
        if declared != Some(candidates.len()) {
            return Err(bad(format!("declared {declared:?} candidates, found {}", candidates.len())));
        }
        Self::from_parts(candidates, &edges, theta_d)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_file_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Connects every pair of candidates within `theta_d` nm (inclusive).
/// Candidates are reordered by voxel (then id), so the result does not depend
/// on input order. Neighbor search uses a uniform hash grid of cell size
/// `theta_d`.
pub fn build_graph(candidates: &[Candidate], theta_d: f64) -> Result<CandidateGraph> {
    if !(theta_d > 0.0) || !theta_d.is_finite() {
        return Err(Error::InvalidParam(format!("edge length limit must be positive, got {theta_d}")));
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_by(|a, b| a.voxel.cmp(&b.voxel).then(a.id.cmp(&b.id)));

    let cell = |p: [f64; 3]| -> [i64; 3] { p.map(|v| (v / theta_d).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        grid.entry(cell(c.position)).or_default().push(i as u32);
    }

    let mut edges = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let k = cell(c.position);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = grid.get(&[k[0] + dz, k[1] + dy, k[2] + dx]) else {
                        continue;
                    };
                    for &j in bucket {
                        if (j as usize) > i && distance(c.position, candidates[j as usize].position) <= theta_d {
                            edges.push((i as u32, j));
                        }
                    }
                }
            }
        }
    }
    Ok(CandidateGraph::assemble(candidates, edges, theta_d))
}

/// Every canonical triplet, grouped by center in ascending order.
/// Per center `j` there are `d(j) * (d(j) - 1) / 2` of them.
pub fn enumerate_triplets(graph: &CandidateGraph) -> Vec<Triplet> {
    let mut out = Vec::new();
    for j in 0..graph.len() as u32 {
        let outer: Vec<Node> = std::iter::once(Node::Terminal)
            .chain(graph.neighbors(j).iter().map(|&k| Node::Candidate(k)))
            .collect();
        for p in 0..outer.len() {
            for q in p + 1..outer.len() {
                out.push(Triplet {
                    a: outer[p],
                    center: j,
                    b: outer[q],
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(id: u32, position: [f64; 3]) -> Candidate {
        Candidate {
            id,
            voxel: [position[0] as usize, position[1] as usize, position[2] as usize],
            position,
            score: 1.0,
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = [at(0, [0.0, 0.0, 0.0]), at(1, [0.0, 0.0, 100.0])];
        let g = build_graph(&c, 90.0).unwrap();
        assert!(g.candidate_edges().is_empty());
        assert_eq!(g.edge_count(), 2);
        let g = build_graph(&c, 120.0).unwrap();
        assert_eq!(g.candidate_edges(), &[(0, 1)]);
        assert_eq!(g.edge_count(), 3);
        let g = build_graph(&c, 100.0).unwrap();
        assert_eq!(g.candidate_edges().len(), 1);
    }

    #[test]
    fn nonpositive_threshold_is_rejected() {
        assert!(build_graph(&[], 0.0).is_err());
        assert!(build_graph(&[], -1.0).is_err());
    }

    #[test]
    fn lone_candidate_has_no_triplets() {
        let g = build_graph(&[at(0, [0.0; 3])], 10.0).unwrap();
        assert!(enumerate_triplets(&g).is_empty());
    }

    #[test]
    fn chain_of_two() {
        let g = build_graph(&[at(0, [0.0; 3]), at(1, [0.0, 0.0, 5.0])], 10.0).unwrap();
        let t = enumerate_triplets(&g);
        let a = Node::Candidate(0);
        let b = Node::Candidate(1);
        assert_eq!(
            t,
            vec![
                Triplet { a: Node::Terminal, center: 0, b },
                Triplet { a: Node::Terminal, center: 1, b: a },
            ]
        );
    }

    #[test]
    fn star_center_has_six_triplets() {
        let c = [
            at(0, [0.0, 0.0, 0.0]),
            at(1, [0.0, 0.0, 10.0]),
            at(2, [0.0, 10.0, 0.0]),
            at(3, [10.0, 0.0, 0.0]),
        ];
        let g = build_graph(&c, 10.0).unwrap();
        assert_eq!(g.degree(0), 4);
        assert_eq!(enumerate_triplets(&g).iter().filter(|t| t.center == 0).count(), 6);
    }

    #[test]
    fn canonical_triplet() {
        let t = Triplet::new(Node::Candidate(3), 1, Node::Terminal).unwrap();
        assert_eq!(t.a, Node::Terminal);
        assert!(Triplet::new(Node::Terminal, 1, Node::Terminal).is_none());
    }

    #[test]
    fn graph_file_round_trip() {
        let c = [at(7, [0.0, 0.0, 0.0]), at(3, [0.0, 0.0, 50.0]), at(5, [0.0, 40.0, 0.0])];
        let g = build_graph(&c, 60.0).unwrap();
        let back = CandidateGraph::parse(&g.to_text(), Path::new("g")).unwrap();
        assert_eq!(back, g);
        assert!(CandidateGraph::parse("# theta_d_nm: 1\n# candidates: 1\n", Path::new("g")).is_err());
    }
}
