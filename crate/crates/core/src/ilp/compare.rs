//! Side-by-side runs of both programs on random candidate graphs.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::candidates::Candidate;
use crate::costs::{GraphCosts, SolveParams};
use crate::error::{Error, Result};
use crate::graph::{build_graph, enumerate_triplets, CandidateGraph, Triplet};
use crate::ilp::formulation::{build_legacy_ilp, build_triplet_ilp, LegacyObjective};
use crate::ilp::problem::SolveStatus;
use crate::ilp::solver::solve_exact;
use crate::volume::{ScoreVolume, DEFAULT_VOXEL_SIZE};

#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub volume: ScoreVolume,
    pub graph: CandidateGraph,
    pub triplets: Vec<Triplet>,
    pub costs: GraphCosts,
}

/// `n` candidates at distinct uniform voxels of a cube-like box, on uniform
/// random scores. The box is sized so that a candidate away from the border
/// has about `mean_degree` neighbors within `theta_d`.
pub fn random_instance(n: usize, mean_degree: f64, params: &SolveParams, rng: &mut impl Rng) -> Result<RandomInstance> {
    let theta_d = params.max_edge_length;
    let ball = 4.0 / 3.0 * std::f64::consts::PI * theta_d.powi(3);
    let side = ((n.max(1) as f64) * ball / mean_degree.max(1e-3)).cbrt();
    let shape: [usize; 3] = std::array::from_fn(|a| ((side / DEFAULT_VOXEL_SIZE[a]).ceil() as usize).max(1));
    let total: usize = shape.iter().product();
    if total < n {
        return Err(Error::InvalidParam(format!("{n} candidates do not fit in a {shape:?} box")));
    }
    let data: Vec<f32> = (0..total).map(|_| rng.random::<f32>()).collect();
    let volume = ScoreVolume::new(shape, DEFAULT_VOXEL_SIZE, [0.0; 3], data)?;
    let mut taken = std::collections::HashSet::new();
    let mut candidates = Vec::with_capacity(n);
    while candidates.len() < n {
        let v: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..shape[a]));
        if taken.insert(v) {
            candidates.push(Candidate {
                id: candidates.len() as u32,
                voxel: v,
                position: volume.world_of_voxel(v),
                score: volume.get(v),
            });
        }
    }
    let graph = build_graph(&candidates, theta_d)?;
    let triplets = enumerate_triplets(&graph);
    let costs = GraphCosts::compute(&volume, &graph, &triplets, params)?;
    Ok(RandomInstance {
        volume,
        graph,
        triplets,
        costs,
    })
}

#[derive(Clone, Debug)]
pub struct CompareConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub mean_degree: f64,
    pub params: SolveParams,
    pub seed: u64,
    pub time_limit: Option<Duration>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub size: usize,
    pub repetition: usize,
    pub edges: usize,
    pub triplets: usize,
    pub triplet_constraints: usize,
    pub legacy_constraints: usize,
    pub triplet_seconds: f64,
    pub legacy_seconds: f64,
    pub triplet_objective: Option<f64>,
    pub legacy_objective: Option<f64>,
    /// Either solve hit the time limit.
    pub timed_out: bool,
}

impl ComparisonRow {
    pub fn objectives_agree(&self, tol: f64) -> Option<bool> {
        match (self.triplet_objective, self.legacy_objective) {
            (Some(a), Some(b)) if !self.timed_out => Some((a - b).abs() <= tol),
            _ => None,
        }
    }

    pub fn time_ratio(&self) -> f64 {
        self.legacy_seconds / self.triplet_seconds.max(1e-9)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SizeSummary {
    pub size: usize,
    pub median_triplet_seconds: f64,
    pub median_legacy_seconds: f64,
    pub median_ratio: f64,
    pub timeouts: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

impl ComparisonReport {
    pub fn summaries(&self) -> Vec<SizeSummary> {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.size).collect();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|size| {
                let rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.size == size).collect();
                let col = |f: &dyn Fn(&ComparisonRow) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                SizeSummary {
                    size,
                    median_triplet_seconds: col(&|r| r.triplet_seconds),
                    median_legacy_seconds: col(&|r| r.legacy_seconds),
                    median_ratio: col(&|r| r.time_ratio()),
                    timeouts: rows.iter().filter(|r| r.timed_out).count(),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "size,repetition,edges,triplets,triplet_constraints,legacy_constraints,triplet_seconds,legacy_seconds,triplet_objective,legacy_objective,timed_out\n",
        );
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6},{},{},{}",
                r.size,
                r.repetition,
                r.edges,
                r.triplets,
                r.triplet_constraints,
                r.legacy_constraints,
                r.triplet_seconds,
                r.legacy_seconds,
                opt(r.triplet_objective),
                opt(r.legacy_objective),
                r.timed_out
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>6} {:>12} {:>12} {:>10} {:>9}\n",
            "size", "triplet [s]", "legacy [s]", "ratio", "timeouts"
        );
        for m in self.summaries() {
            writeln!(
                s,
                "{:>6} {:>12.4} {:>12.4} {:>10.1} {:>9}",
                m.size, m.median_triplet_seconds, m.median_legacy_seconds, m.median_ratio, m.timeouts
            )
            .unwrap();
        }
        s
    }
}

/// Solves every random instance with both programs. The legacy program uses
/// triplet-only pricing so the two optima are comparable.
pub fn compare_formulations(config: &CompareConfig) -> Result<ComparisonReport> {
    let mut report = ComparisonReport::default();
    for (si, &size) in config.sizes.iter().enumerate() {
        for rep in 0..config.repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((si * config.repetitions + rep) as u64);
            let inst = random_instance(size, config.mean_degree, &config.params, &mut rng)?;
            let tri = build_triplet_ilp(&inst.graph, &inst.triplets, &inst.costs);
            let leg = build_legacy_ilp(&inst.graph, &inst.triplets, &inst.costs, LegacyObjective::TripletOnly);

            let timed = |p| {
                let t0 = Instant::now();
                let r = solve_exact(p, config.time_limit);
                (r, t0.elapsed().as_secs_f64())
            };
            let (tr, tt) = timed(&tri.problem);
            let (lr, lt) = timed(&leg.problem);
            let mut timed_out = false;
            let mut objective = |r: Result<crate::ilp::Solution>| match r {
                Ok(s) => {
                    timed_out |= s.status == SolveStatus::BoundLimit;
                    Ok(Some(s.objective))
                }
                Err(Error::Timeout) => {
                    timed_out = true;
                    Ok(None)
                }
                Err(e) => Err(e),
            };
            let triplet_objective = objective(tr)?;
            let legacy_objective = objective(lr)?;
            report.rows.push(ComparisonRow {
                size,
                repetition: rep,
                edges: inst.graph.edge_count(),
                triplets: inst.triplets.len(),
                triplet_constraints: tri.problem.num_constraints(),
                legacy_constraints: leg.problem.num_constraints(),
                triplet_seconds: tt,
                legacy_seconds: lt,
                triplet_objective,
                legacy_objective,
                timed_out,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_comparison_agrees() {
        let config = CompareConfig {
            sizes: vec![6, 10],
            repetitions: 3,
            mean_degree: 3.0,
            params: SolveParams::default(),
            seed: 1,
            time_limit: None,
        };
        let report = compare_formulations(&config).unwrap();
        assert_eq!(report.rows.len(), 6);
        for r in &report.rows {
            assert_eq!(r.objectives_agree(1e-9), Some(true), "{r:?}");
            assert_eq!(r.triplet_constraints, r.size + (r.edges - r.size));
            assert_eq!(r.legacy_constraints, r.size + r.edges + 2 * r.triplets);
        }
        assert_eq!(report.summaries().len(), 2);
        assert_eq!(report.to_csv().lines().count(), 7);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
