//! Selection costs for nodes, edges and triplets.
//!
//! ```text
//! c_i     = start_cost                 if i is the terminal
//!         = node_prior                 otherwise
//! c_ij    = distance_weight * dist(i, j) + evidence_weight * evid(i, j) + c_i + c_j
//! c_ijk   = curvature_weight * curv(i, j, k) + c_ij + c_jk
//! ```
//!
//! Terms that involve the terminal node have no geometry: `dist`, `evid` and
//! `curv` are all zero there, so the terminal only contributes `start_cost`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{distance, CandidateGraph, Node, Triplet};
use crate::volume::ScoreVolume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveParams {
    /// Cost of beginning or ending a track.
    pub start_cost: f64,
    /// Cost of selecting a candidate; negative to favor selection.
    pub node_prior: f64,
    /// Weight on edge length (per nm).
    pub distance_weight: f64,
    /// Weight on accumulated scores along an edge.
    pub evidence_weight: f64,
    /// Weight on the deviation from a straight continuation (per radian).
    pub curvature_weight: f64,
    /// Candidates farther apart than this (nm) are not connected.
    pub max_edge_length: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Preset::builtin("NMS_GRAD").expect("builtin preset").params
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.start_cost,
            self.node_prior,
            self.distance_weight,
            self.evidence_weight,
            self.curvature_weight,
            self.max_edge_length,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("cost parameters must be finite: {self:?}")));
        }
        if !(self.max_edge_length > 0.0) {
            return Err(Error::InvalidParam(format!("max_edge_length must be positive, got {}", self.max_edge_length)));
        }
        if self.node_prior >= 0.0 {
            log::warn!("node_prior = {} is not negative; nothing favors selecting candidates", self.node_prior);
        }
        Ok(())
    }
}

/// A named parameter set with its block decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    #[serde(flatten)]
    pub params: SolveParams,
    /// Voxels `(z, y, x)`.
    pub block_size: [usize; 3],
    /// Voxels `(z, y, x)`.
    pub context_size: [usize; 3],
}

const PRESETS: &str = include_str!("../presets.toml");

pub const PRESET_NAMES: [&str; 5] = ["NMS_GRAD", "CC_GRAD", "NMS_SM", "NMS_RFC", "Baseline"];

impl Preset {
    /// All shipped presets keyed by model name.
    pub fn all() -> BTreeMap<String, Preset> {
        toml::from_str(PRESETS).expect("shipped presets parse")
    }

    pub fn builtin(name: &str) -> Option<Preset> {
        Self::all().remove(name)
    }

    pub fn parse_file(text: &str) -> Result<BTreeMap<String, Preset>> {
        toml::from_str(text).map_err(|e| Error::InvalidParam(format!("preset file: {e}")))
    }

    pub fn shipped_text() -> &'static str {
        PRESETS
    }
}

pub fn node_cost(n: Node, params: &SolveParams) -> f64 {
    match n {
        Node::Terminal => params.start_cost,
        Node::Candidate(_) => params.node_prior,
    }
}

/// Euclidean distance in nm.
pub fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    distance(p, q)
}

/// Voxels pierced by the straight segment between the centers of `from` and
/// `to`, both endpoints included, each voxel once.
///
/// Grid traversal in the style of Amanatides and Woo, carried out in exact
/// integer arithmetic. The segment crosses the boundary between voxel `k` and
/// `k + 1` on axis `a` at parameter `(2k + 1) / (2 |d_a|)`; when several axes
/// cross at the same parameter the step is taken on all of them at once, so
/// voxels that only touch the segment at an edge or corner are skipped.
/// Voxel-size anisotropy is an affine map and leaves the set unchanged.
pub fn voxel_line(from: [usize; 3], to: [usize; 3]) -> Vec<[usize; 3]> {
    let d: [i64; 3] = std::array::from_fn(|a| to[a] as i64 - from[a] as i64);
    let len: [i64; 3] = d.map(i64::abs);
    let step: [i64; 3] = d.map(i64::signum);
    let mut taken = [0i64; 3];
    let mut cur: [i64; 3] = from.map(|v| v as i64);
    let mut out = Vec::with_capacity((len[0] + len[1] + len[2] + 1) as usize);
    out.push(from);
    loop {
        // next crossing on axis a: (2 taken_a + 1) / (2 len_a); compare as fractions
        let mut best: Option<usize> = None;
        for a in 0..3 {
            if taken[a] == len[a] {
                continue;
            }
            best = match best {
                None => Some(a),
                Some(b) if (2 * taken[a] + 1) * len[b] < (2 * taken[b] + 1) * len[a] => Some(a),
                keep => keep,
            };
        }
        let Some(b) = best else { break };
        let (num, den) = (2 * taken[b] + 1, len[b]);
        for a in 0..3 {
            if taken[a] < len[a] && (2 * taken[a] + 1) * den == num * len[a] {
                taken[a] += 1;
                cur[a] += step[a];
            }
        }
        out.push(cur.map(|v| v as usize));
    }
    out
}

/// Sum of scores along [`voxel_line`], each score clamped to `[0, 1]`.
pub fn evid(vol: &ScoreVolume, from: [usize; 3], to: [usize; 3]) -> Result<f64> {
    for v in [from, to] {
        if !vol.contains_voxel(v.map(|c| c as i64)) {
            return Err(Error::OutOfBounds(v.map(|c| c as i64)));
        }
    }
    Ok(voxel_line(from, to)
        .into_iter()
        .map(|v| vol.get(v).clamp(0.0, 1.0) as f64)
        .sum())
}

/// `pi` minus the angle at `center` between the rays to `p` and `q`.
/// Coincident points make the angle undefined; that case returns 0.
pub fn curv(p: [f64; 3], center: [f64; 3], q: [f64; 3]) -> f64 {
    let u: [f64; 3] = std::array::from_fn(|a| p[a] - center[a]);
    let v: [f64; 3] = std::array::from_fn(|a| q[a] - center[a]);
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if nu == 0.0 || nv == 0.0 {
        log::warn!("degenerate triplet at {center:?}: coincident positions, curvature taken as 0");
        return 0.0;
    }
    let cos = ((u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv)).clamp(-1.0, 1.0);
    PI - cos.acos()
}

/// Triplet curvature with the terminal convention.
pub fn triplet_curv(graph: &CandidateGraph, t: &Triplet) -> f64 {
    match (graph.position(t.a), graph.position(t.b)) {
        (Some(p), Some(q)) => curv(p, graph.candidate(t.center).position, q),
        _ => 0.0,
    }
}

pub fn edge_cost(vol: &ScoreVolume, graph: &CandidateGraph, x: Node, y: Node, params: &SolveParams) -> Result<f64> {
    let geometric = match (x, y) {
        (Node::Candidate(i), Node::Candidate(j)) => {
            let (ci, cj) = (graph.candidate(i), graph.candidate(j));
            params.distance_weight * dist(ci.position, cj.position) + params.evidence_weight * evid(vol, ci.voxel, cj.voxel)?
        }
        _ => 0.0,
    };
    Ok(geometric + node_cost(x, params) + node_cost(y, params))
}

pub fn triplet_cost(vol: &ScoreVolume, graph: &CandidateGraph, t: &Triplet, params: &SolveParams) -> Result<f64> {
    let c = Node::Candidate(t.center);
    Ok(params.curvature_weight * triplet_curv(graph, t) + edge_cost(vol, graph, t.a, c, params)? + edge_cost(vol, graph, c, t.b, params)?)
}

/// All costs of a graph, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCosts {
    pub params: SolveParams,
    /// `c_{S,j}` per candidate index.
    pub terminal_edge: Vec<f64>,
    /// `c_{i,j}` aligned with [`CandidateGraph::candidate_edges`].
    pub edge: Vec<f64>,
    /// `c_{i,j,k}` aligned with the triplet list passed in.
    pub triplet: Vec<f64>,
}

impl GraphCosts {
    pub fn compute(vol: &ScoreVolume, graph: &CandidateGraph, triplets: &[Triplet], params: &SolveParams) -> Result<Self> {
        for c in graph.candidates() {
            if !vol.contains_voxel(c.voxel.map(|v| v as i64)) {
                return Err(Error::OutOfBounds(c.voxel.map(|v| v as i64)));
            }
        }
        let terminal_edge = vec![params.start_cost + params.node_prior; graph.len()];
        let edge = graph
            .candidate_edges()
            .par_iter()
            .map(|&(i, j)| edge_cost(vol, graph, Node::Candidate(i), Node::Candidate(j), params))
            .collect::<Result<Vec<_>>>()?;
        let mut costs = GraphCosts {
            params: *params,
            terminal_edge,
            edge,
            triplet: Vec::new(),
        };
        costs.triplet = triplets
            .iter()
            .map(|t| {
                let c = Node::Candidate(t.center);
                params.curvature_weight * triplet_curv(graph, t) + costs.edge_between(graph, t.a, c) + costs.edge_between(graph, c, t.b)
            })
            .collect();
        Ok(costs)
    }

    /// Cost of an existing edge.
    pub fn edge_between(&self, graph: &CandidateGraph, x: Node, y: Node) -> f64 {
        match (x, y) {
            (Node::Terminal, Node::Candidate(j)) | (Node::Candidate(j), Node::Terminal) => self.terminal_edge[j as usize],
            (Node::Candidate(i), Node::Candidate(j)) => {
                let key = (i.min(j), i.max(j));
                let k = graph.candidate_edges().binary_search(&key).expect("edge exists in graph");
                self.edge[k]
            }
            (Node::Terminal, Node::Terminal) => panic!("no terminal self edge"),
        }
    }

    pub fn node(&self, n: Node) -> f64 {
        node_cost(n, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;
    use crate::graph::build_graph;
    use crate::volume::DEFAULT_VOXEL_SIZE;

    fn nms_grad() -> SolveParams {
        Preset::builtin("NMS_GRAD").unwrap().params
    }

    #[test]
    fn presets_match_shipped_table() {
        let all = Preset::all();
        assert_eq!(all.len(), 5);
        let row = |n: &str| {
            let p = &all[n].params;
            [p.start_cost, p.node_prior, p.distance_weight, p.evidence_weight, p.curvature_weight, p.max_edge_length]
        };
        assert_eq!(row("NMS_GRAD"), [180.0, -80.0, 0.0, 12.0, 14.0, 90.0]);
        assert_eq!(row("CC_GRAD"), [200.0, -70.0, 0.0, 14.0, 14.0, 120.0]);
        assert_eq!(row("NMS_SM"), [180.0, -70.0, 0.0, 14.0, 16.0, 120.0]);
        assert_eq!(row("NMS_RFC"), [180.0, -90.0, 0.0, 12.0, 14.0, 90.0]);
        assert_eq!(row("Baseline"), [60.0, -100.0, 0.0, 12.0, 10.0, 140.0]);
        for p in all.values() {
            assert_eq!(p.block_size, [30, 250, 250]);
            assert_eq!(p.context_size, [50, 450, 450]);
        }
        for n in PRESET_NAMES {
            assert!(all.contains_key(n));
        }
    }

    #[test]
    fn node_costs() {
        assert_eq!(node_cost(Node::Terminal, &nms_grad()), 180.0);
        assert_eq!(node_cost(Node::Candidate(0), &nms_grad()), -80.0);
        assert_eq!(node_cost(Node::Candidate(0), &Preset::builtin("Baseline").unwrap().params), -100.0);
    }

    #[test]
    fn distances() {
        assert_eq!(dist([0.0, 0.0, 0.0], [0.0, 3.0, 4.0]), 5.0);
        assert_eq!(dist([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        let vol = ScoreVolume::zeros([2, 1, 1], DEFAULT_VOXEL_SIZE).unwrap();
        assert_eq!(dist(vol.world_of_voxel([0, 0, 0]), vol.world_of_voxel([1, 0, 0])), 40.0);
    }

    #[test]
    fn evid_single_voxel_and_axis_line() {
        let vol = ScoreVolume::from_fn([1, 1, 8], DEFAULT_VOXEL_SIZE, |[_, _, x]| if (2..7).contains(&x) { 0.5 } else { 0.9 }).unwrap();
        assert_eq!(evid(&vol, [0, 0, 3], [0, 0, 3]).unwrap(), 0.5);
        // explicit enumeration: x = 2, 3, 4, 5, 6
        assert_eq!(evid(&vol, [0, 0, 2], [0, 0, 6]).unwrap(), 2.5);
        assert_eq!(evid(&vol, [0, 0, 6], [0, 0, 2]).unwrap(), 2.5);
    }

    #[test]
    fn evid_clamps_scores() {
        let vol = ScoreVolume::from_fn([1, 1, 3], DEFAULT_VOXEL_SIZE, |[_, _, x]| [1.4, -0.2, 0.5][x]).unwrap();
        assert_eq!(evid(&vol, [0, 0, 0], [0, 0, 2]).unwrap(), 1.5);
    }

    #[test]
    fn evid_out_of_volume() {
        let vol = ScoreVolume::zeros([1, 1, 3], DEFAULT_VOXEL_SIZE).unwrap();
        assert!(matches!(evid(&vol, [0, 0, 0], [0, 0, 3]), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn exact_diagonal_steps_through_corners() {
        assert_eq!(voxel_line([0, 0, 0], [0, 2, 2]), vec![[0, 0, 0], [0, 1, 1], [0, 2, 2]]);
        assert_eq!(voxel_line([0, 0, 0], [3, 3, 3]).len(), 4);
    }

    #[test]
    fn curvature() {
        assert_eq!(curv([0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 0.0, 20.0]), 0.0);
        let right = curv([0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 10.0, 10.0]);
        assert!((right - PI / 2.0).abs() < 1e-12);
        assert!((curv([0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 0.0, 0.0]) - PI).abs() < 1e-12);
        assert_eq!(curv([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]), 0.0);
    }

    fn two_candidate_graph() -> (ScoreVolume, CandidateGraph) {
        let vol = ScoreVolume::from_fn([1, 1, 5], DEFAULT_VOXEL_SIZE, |_| 0.5).unwrap();
        let c = |id, x: usize| Candidate {
            id,
            voxel: [0, 0, x],
            position: vol.world_of_voxel([0, 0, x]),
            score: 0.5,
        };
        let g = build_graph(&[c(0, 0), c(1, 4)], 100.0).unwrap();
        (vol, g)
    }

    #[test]
    fn edge_costs() {
        let (vol, g) = two_candidate_graph();
        let p = nms_grad();
        assert_eq!(edge_cost(&vol, &g, Node::Terminal, Node::Candidate(1), &p).unwrap(), 100.0);
        // evid over 5 voxels of 0.5 = 2.5
        assert_eq!(edge_cost(&vol, &g, Node::Candidate(0), Node::Candidate(1), &p).unwrap(), -130.0);
        let dist_only = SolveParams {
            distance_weight: 1.0,
            evidence_weight: 0.0,
            ..p
        };
        assert_eq!(edge_cost(&vol, &g, Node::Candidate(0), Node::Candidate(1), &dist_only).unwrap(), 16.0 - 160.0);
    }

    #[test]
    fn triplet_costs_compose() {
        let (vol, g) = two_candidate_graph();
        let p = nms_grad();
        let t = Triplet::new(Node::Terminal, 0, Node::Candidate(1)).unwrap();
        assert_eq!(triplet_cost(&vol, &g, &t, &p).unwrap(), 100.0 - 130.0);
        let costs = GraphCosts::compute(&vol, &g, &[t], &p).unwrap();
        assert_eq!(costs.triplet, vec![-30.0]);
    }

    #[test]
    fn right_angle_adds_curvature_weight() {
        let vol = ScoreVolume::zeros([1, 11, 11], [4.0; 3]).unwrap();
        let c = |id, v: [usize; 3]| Candidate {
            id,
            voxel: v,
            position: vol.world_of_voxel(v),
            score: 1.0,
        };
        let g = build_graph(&[c(0, [0, 0, 0]), c(1, [0, 0, 10]), c(2, [0, 10, 10])], 45.0).unwrap();
        let p = nms_grad();
        let t = Triplet::new(Node::Candidate(0), 1, Node::Candidate(2)).unwrap();
        let straight = edge_cost(&vol, &g, Node::Candidate(0), Node::Candidate(1), &p).unwrap()
            + edge_cost(&vol, &g, Node::Candidate(1), Node::Candidate(2), &p).unwrap();
        let extra = triplet_cost(&vol, &g, &t, &p).unwrap() - straight;
        assert!((extra - 14.0 * PI / 2.0).abs() < 1e-9);
        assert!((extra - 21.99).abs() < 0.01);
    }
}
