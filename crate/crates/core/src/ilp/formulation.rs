//! The two 0-1 programs over a candidate graph.
//!
//! The triplet program has one indicator per triplet and two constraint
//! families: at most one selected triplet per center candidate, and flow
//! conservation on candidate-candidate edges (a triplet at `i` using `j`
//! implies a triplet at `j` using `i`). The legacy program carries separate
//! node, edge and triplet indicators tied together by linking constraints.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::costs::GraphCosts;
use crate::graph::{CandidateGraph, Node, Triplet};
use crate::ilp::problem::{IlpProblem, Relation, Solution};

fn node_name(graph: &CandidateGraph, n: Node) -> String {
    match n {
        Node::Terminal => "S".to_string(),
        Node::Candidate(i) => graph.candidate(i).id.to_string(),
    }
}

pub fn triplet_var_name(graph: &CandidateGraph, t: &Triplet) -> String {
    format!("t_{}_{}_{}", node_name(graph, t.a), graph.candidate(t.center).id, node_name(graph, t.b))
}

/// Triplet program; variable `k` is the indicator of `triplets[k]`.
#[derive(Clone, Debug)]
pub struct TripletIlp {
    pub problem: IlpProblem,
    pub triplets: Vec<Triplet>,
}

impl TripletIlp {
    pub fn selected_triplets(&self, solution: &Solution) -> Vec<Triplet> {
        solution.selected().map(|k| self.triplets[k]).collect()
    }
}

/// Indices of triplets centered at each candidate.
fn triplets_by_center(graph: &CandidateGraph, triplets: &[Triplet]) -> Vec<Vec<usize>> {
    let mut by_center = vec![Vec::new(); graph.len()];
    for (k, t) in triplets.iter().enumerate() {
        by_center[t.center as usize].push(k);
    }
    by_center
}

/// Minimize `sum c_t x_t` subject to
/// `sum_{t centered at j} x_t <= 1` for every candidate `j`, and
/// `sum_{t at i using j} x_t - sum_{t at j using i} x_t = 0` for every
/// candidate-candidate edge `{i, j}`.
///
/// Terminal edges carry no conservation constraint: no triplet is centered
/// at the terminal, so one would forbid every track end.
pub fn build_triplet_ilp(graph: &CandidateGraph, triplets: &[Triplet], costs: &GraphCosts) -> TripletIlp {
    build_pinned_triplet_ilp(graph, triplets, costs, &vec![None; graph.len()])
}

/// Decision for a candidate made elsewhere: the outer nodes of its selected
/// triplet, or `None` when it is not selected.
pub type FixedLinks = Option<[Node; 2]>;

/// Triplet program in which some candidates are already decided.
///
/// Every triplet centered at a decided candidate is pinned by an equality
/// row to its stored value. On a conservation row, the side of a decided
/// candidate is replaced by the known constant, so the row stays correct
/// when the decided triplet itself lies outside this graph. Rows between
/// two decided candidates are dropped. With nothing decided this is exactly
/// [`build_triplet_ilp`].
pub fn build_pinned_triplet_ilp(graph: &CandidateGraph, triplets: &[Triplet], costs: &GraphCosts, fixed: &[Option<FixedLinks>]) -> TripletIlp {
    assert_eq!(triplets.len(), costs.triplet.len());
    assert_eq!(fixed.len(), graph.len());
    let mut problem = IlpProblem::new();
    for (t, &c) in triplets.iter().zip(&costs.triplet) {
        problem.add_var(triplet_var_name(graph, t), c);
    }
    let by_center = triplets_by_center(graph, triplets);
    for ts in &by_center {
        problem.add_constraint(ts.iter().map(|&k| (k, 1)), Relation::Le, 1);
    }
    let fixed_uses = |center: u32, other: u32| -> Option<i32> {
        fixed[center as usize].map(|links| links.is_some_and(|l| l.contains(&Node::Candidate(other))) as i32)
    };
    for &(i, j) in graph.candidate_edges() {
        let using = |center: u32, other: u32| {
            by_center[center as usize]
                .iter()
                .copied()
                .filter(move |&k| triplets[k].contains_outer(Node::Candidate(other)))
        };
        let (fi, fj) = (fixed_uses(i, j), fixed_uses(j, i));
        if fi.is_some() && fj.is_some() {
            continue;
        }
        let mut terms: Vec<(usize, i32)> = Vec::new();
        let mut rhs = 0;
        match fi {
            Some(c) => rhs -= c,
            None => terms.extend(using(i, j).map(|k| (k, 1))),
        }
        match fj {
            Some(c) => rhs += c,
            None => terms.extend(using(j, i).map(|k| (k, -1))),
        }
        problem.add_constraint(terms, Relation::Eq, rhs);
    }
    for (j, f) in fixed.iter().enumerate() {
        let Some(links) = f else { continue };
        for &k in &by_center[j] {
            let on = links.is_some_and(|l| l == triplets[k].outer());
            problem.add_constraint([(k, 1)], Relation::Eq, on as i32);
        }
    }
    TripletIlp {
        problem,
        triplets: triplets.to_vec(),
    }
}

/// How the legacy program prices node and edge indicators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LegacyObjective {
    /// Node, edge and triplet indicators all carry their own costs.
    #[default]
    Full,
    /// Only triplet indicators carry cost; node and edge costs are zero. Under
    /// this pricing the optimum equals that of the triplet program.
    TripletOnly,
}

#[derive(Clone, Debug)]
pub struct LegacyIlp {
    pub problem: IlpProblem,
    pub triplets: Vec<Triplet>,
    /// Variable of each candidate node.
    pub node_vars: Vec<usize>,
    /// Variable of each terminal edge, per candidate.
    pub terminal_edge_vars: Vec<usize>,
    /// Variable of each candidate-candidate edge, aligned with the graph.
    pub edge_vars: Vec<usize>,
    /// Variable of `triplets[k]` is `triplet_offset + k`.
    pub triplet_offset: usize,
}

impl LegacyIlp {
    pub fn selected_triplets(&self, solution: &Solution) -> Vec<Triplet> {
        (0..self.triplets.len())
            .filter(|&k| solution.values[self.triplet_offset + k])
            .map(|k| self.triplets[k])
            .collect()
    }
}

/// Node/edge/triplet program:
///
/// ```text
/// 2 x_i - sum_{e incident to i} x_e = 0           for i in C
/// 2 x_ij - x_i - x_j <= 0                          for {i, j} in E
/// 2 x_ijk - x_ij - x_jk <= 0,  x_ij + x_jk - x_ijk <= 1   for (i, j, k) in T
/// ```
///
/// The terminal has no indicator and no degree constraint; it counts as
/// always selected, so a terminal edge row reads `2 x_Sj - x_j <= 1`.
pub fn build_legacy_ilp(graph: &CandidateGraph, triplets: &[Triplet], costs: &GraphCosts, objective: LegacyObjective) -> LegacyIlp {
    let full = objective == LegacyObjective::Full;
    let mut problem = IlpProblem::new();
    let node_vars: Vec<usize> = (0..graph.len() as u32)
        .map(|i| {
            let c = if full { costs.node(Node::Candidate(i)) } else { 0.0 };
            problem.add_var(format!("n_{}", graph.candidate(i).id), c)
        })
        .collect();
    let terminal_edge_vars: Vec<usize> = (0..graph.len())
        .map(|i| {
            let c = if full { costs.terminal_edge[i] } else { 0.0 };
            problem.add_var(format!("e_S_{}", graph.candidate(i as u32).id), c)
        })
        .collect();
    let edge_vars: Vec<usize> = graph
        .candidate_edges()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let c = if full { costs.edge[k] } else { 0.0 };
            problem.add_var(format!("e_{}_{}", graph.candidate(i).id, graph.candidate(j).id), c)
        })
        .collect();
    let triplet_offset = problem.num_vars();
    for (t, &c) in triplets.iter().zip(&costs.triplet) {
        problem.add_var(triplet_var_name(graph, t), c);
    }

    let edge_index: HashMap<(u32, u32), usize> = graph
        .candidate_edges()
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, edge_vars[k]))
        .collect();
    let edge_var = |x: Node, y: Node| -> usize {
        match (x, y) {
            (Node::Terminal, Node::Candidate(j)) | (Node::Candidate(j), Node::Terminal) => terminal_edge_vars[j as usize],
            (Node::Candidate(i), Node::Candidate(j)) => edge_index[&(i.min(j), i.max(j))],
            _ => unreachable!("no terminal self edge"),
        }
    };

    for i in 0..graph.len() as u32 {
        let mut terms = vec![(node_vars[i as usize], 2), (terminal_edge_vars[i as usize], -1)];
        terms.extend(graph.neighbors(i).iter().map(|&j| (edge_var(Node::Candidate(i), Node::Candidate(j)), -1)));
        problem.add_constraint(terms, Relation::Eq, 0);
    }
    for i in 0..graph.len() {
        problem.add_constraint([(terminal_edge_vars[i], 2), (node_vars[i], -1)], Relation::Le, 1);
    }
    for &(i, j) in graph.candidate_edges() {
        let e = edge_var(Node::Candidate(i), Node::Candidate(j));
        problem.add_constraint([(e, 2), (node_vars[i as usize], -1), (node_vars[j as usize], -1)], Relation::Le, 0);
    }
    for (k, t) in triplets.iter().enumerate() {
        let c = Node::Candidate(t.center);
        let (e1, e2) = (edge_var(t.a, c), edge_var(c, t.b));
        let x = triplet_offset + k;
        problem.add_constraint([(x, 2), (e1, -1), (e2, -1)], Relation::Le, 0);
        problem.add_constraint([(x, -1), (e1, 1), (e2, 1)], Relation::Le, 1);
    }

    LegacyIlp {
        problem,
        triplets: triplets.to_vec(),
        node_vars,
        terminal_edge_vars,
        edge_vars,
        triplet_offset,
    }
}
