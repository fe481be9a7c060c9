//! Whole-volume solve: graph, costs, triplet program, exact solution, tracks.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::candidates::Candidate;
use crate::costs::{GraphCosts, SolveParams};
use crate::error::Result;
use crate::graph::{build_graph, enumerate_triplets, CandidateGraph};
use crate::ilp::{build_triplet_ilp, decode_tracks, Backend, ProblemStats, SolveStatus, TrackSet};
use crate::volume::ScoreVolume;

/// Deterministic facts about a solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSummary {
    pub candidates: usize,
    pub edges: usize,
    pub triplets: usize,
    pub problem: ProblemStats,
    pub objective: f64,
    pub status: SolveStatus,
    pub tracks: usize,
    pub opened_cycles: usize,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub graph: CandidateGraph,
    pub tracks: TrackSet,
    pub summary: SolveSummary,
    pub solve_time: Duration,
}

pub fn solve_global(vol: &ScoreVolume, candidates: &[Candidate], params: &SolveParams, backend: &Backend, time_limit: Option<Duration>) -> Result<SolveOutcome> {
    params.validate()?;
    let graph = build_graph(candidates, params.max_edge_length)?;
    let triplets = enumerate_triplets(&graph);
    let costs = GraphCosts::compute(vol, &graph, &triplets, params)?;
    let ilp = build_triplet_ilp(&graph, &triplets, &costs);
    let t0 = Instant::now();
    let solution = backend.solve(&ilp.problem, time_limit)?;
    let solve_time = t0.elapsed();
    let tracks = decode_tracks(&graph, &ilp.selected_triplets(&solution))?;
    let summary = SolveSummary {
        candidates: graph.len(),
        edges: graph.edge_count(),
        triplets: triplets.len(),
        problem: ilp.problem.stats(),
        objective: solution.objective,
        status: solution.status,
        tracks: tracks.len(),
        opened_cycles: tracks.opened_cycles,
    };
    Ok(SolveOutcome {
        graph,
        tracks,
        summary,
        solve_time,
    })
}
