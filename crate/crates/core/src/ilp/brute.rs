//! Exhaustive reference solver for small triplet instances.
//!
//! Works directly on the graph, not on an [`IlpProblem`]: every candidate
//! picks one of its triplets or none, and a choice is kept only if each
//! candidate-candidate edge is used from both ends or from neither. All
//! consistent selections are enumerated; no bounding is applied.
//!
//! [`IlpProblem`]: crate::ilp::IlpProblem

use crate::error::{Error, Result};
use crate::graph::{CandidateGraph, Node, Triplet};
use crate::ilp::problem::{Solution, SolveStatus};

/// Largest accepted size of the per-center choice tree, `prod(1 + t_j)`.
pub const BRUTE_FORCE_LIMIT: u128 = 1 << 48;

/// Minimum-cost consistent selection. `values[k]` refers to `triplets[k]`.
pub fn brute_force_solve(graph: &CandidateGraph, triplets: &[Triplet], costs: &[f64]) -> Result<Solution> {
    assert_eq!(triplets.len(), costs.len());
    let n = graph.len();
    let mut by_center: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, t) in triplets.iter().enumerate() {
        by_center[t.center as usize].push(k);
    }
    let tree: u128 = by_center.iter().fold(1u128, |acc, ts| acc.saturating_mul(1 + ts.len() as u128));
    if tree > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(tree));
    }

    struct State<'a> {
        graph: &'a CandidateGraph,
        triplets: &'a [Triplet],
        costs: &'a [f64],
        by_center: Vec<Vec<usize>>,
        choice: Vec<Option<usize>>,
        best: f64,
        best_choice: Vec<Option<usize>>,
    }

    fn uses(st: &State, center: usize, other: u32) -> bool {
        st.choice[center].is_some_and(|k| st.triplets[k].contains_outer(Node::Candidate(other)))
    }

    fn consistent_with_earlier(st: &State, j: usize) -> bool {
        st.graph
            .neighbors(j as u32)
            .iter()
            .filter(|&&i| (i as usize) < j)
            .all(|&i| uses(st, j, i) == uses(st, i as usize, j as u32))
    }

    fn visit(st: &mut State, j: usize, cost: f64) {
        if j == st.choice.len() {
            if cost < st.best {
                st.best = cost;
                st.best_choice.clone_from(&st.choice);
            }
            return;
        }
        let options: Vec<Option<usize>> = std::iter::once(None).chain(st.by_center[j].iter().map(|&k| Some(k))).collect();
        for opt in options {
            st.choice[j] = opt;
            if consistent_with_earlier(st, j) {
                let c = opt.map_or(0.0, |k| st.costs[k]);
                visit(st, j + 1, cost + c);
            }
        }
        st.choice[j] = None;
    }

    let mut st = State {
        graph,
        triplets,
        costs,
        by_center,
        choice: vec![None; n],
        best: f64::INFINITY,
        best_choice: vec![None; n],
    };
    visit(&mut st, 0, 0.0);

    let mut values = vec![false; triplets.len()];
    for k in st.best_choice.iter().flatten() {
        values[*k] = true;
    }
    let objective = values.iter().zip(costs).filter(|(&v, _)| v).map(|(_, c)| c).sum();
    Ok(Solution {
        values,
        objective,
        status: SolveStatus::Optimal,
    })
}
