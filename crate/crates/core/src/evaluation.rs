//! Edge-level scoring of reconstructed tracks against ground truth.
//!
//! Both track sets are resampled at a fixed arc-length spacing, nodes are
//! paired by a distance-capped minimum-cost assignment, and an edge counts
//! as correct when both of its endpoints are paired with nodes of one and
//! the same track on the other side.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::distance;

pub const DEFAULT_SPACING_NM: f64 = 40.0;
pub const DEFAULT_MAX_DIST_NM: f64 = 80.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u32,
    /// World positions in nm, in track order.
    pub nodes: Vec<[f64; 3]>,
}

impl Track {
    pub fn length(&self) -> f64 {
        self.nodes.windows(2).map(|w| distance(w[0], w[1])).sum()
    }

    pub fn translated(&self, by: [f64; 3]) -> Track {
        Track {
            id: self.id,
            nodes: self.nodes.iter().map(|p| std::array::from_fn(|a| p[a] + by[a])).collect(),
        }
    }
}

/// Nodes at arc length `0, s, 2s, ...` plus the last node, which is not
/// repeated when the length is an exact multiple of `s`.
pub fn resample_track(track: &Track, spacing: f64) -> Result<Track> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidParam(format!("spacing must be positive, got {spacing}")));
    }
    let total = track.length();
    if track.nodes.len() < 2 || !(total > 0.0) {
        return Err(Error::InvalidParam(format!("track {} has zero length", track.id)));
    }
    let mut out = vec![track.nodes[0]];
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut k = 1;
    loop {
        let s = k as f64 * spacing;
        if s >= total * (1.0 - 1e-12) {
            break;
        }
        loop {
            let len = distance(track.nodes[seg], track.nodes[seg + 1]);
            if s <= seg_start + len || seg + 2 == track.nodes.len() {
                let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                let (p, q) = (track.nodes[seg], track.nodes[seg + 1]);
                out.push(std::array::from_fn(|a| p[a] + t * (q[a] - p[a])));
                break;
            }
            seg_start += len;
            seg += 1;
        }
        k += 1;
    }
    out.push(*track.nodes.last().unwrap());
    Ok(Track { id: track.id, nodes: out })
}

/// A node of a track list: `(track index, node index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeRef {
    pub track: usize,
    pub node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodePair {
    pub rec: NodeRef,
    pub gt: NodeRef,
    pub distance: f64,
}

fn flatten(tracks: &[Track]) -> Vec<(NodeRef, [f64; 3])> {
    tracks
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| tr.nodes.iter().enumerate().map(move |(k, &p)| (NodeRef { track: t, node: k }, p)))
        .collect()
}

/// Minimum-cost assignment on a dense `rows x cols` matrix with
/// `rows <= cols`; returns the column of every row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // potentials with 1-based sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Pairs nodes of `rec` and `gt` at most `max_dist` apart, maximizing the
/// number of pairs and, among those, minimizing the summed distance. Runs
/// the assignment separately on each connected group of mutually reachable
/// nodes.
pub fn match_nodes(rec: &[Track], gt: &[Track], max_dist: f64) -> Vec<NodePair> {
    let r = flatten(rec);
    let g = flatten(gt);
    if r.is_empty() || g.is_empty() || !(max_dist > 0.0) {
        return Vec::new();
    }
    let cell = |p: [f64; 3]| -> [i64; 3] { p.map(|x| (x / max_dist).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (k, (_, p)) in g.iter().enumerate() {
        grid.entry(cell(*p)).or_default().push(k);
    }
    let mut near: Vec<Vec<usize>> = vec![Vec::new(); r.len()];
    for (i, (_, p)) in r.iter().enumerate() {
        let c = cell(*p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(b) = grid.get(&[c[0] + dz, c[1] + dy, c[2] + dx]) {
                        near[i].extend(b.iter().copied().filter(|&k| distance(*p, g[k].1) <= max_dist));
                    }
                }
            }
        }
        near[i].sort_unstable();
    }

    // connected groups over rec nodes 0..R and gt nodes R..R+G
    let total = r.len() + g.len();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (i, ks) in near.iter().enumerate() {
        for &k in ks {
            let (a, b) = (find(&mut parent, i), find(&mut parent, r.len() + k));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: HashMap<usize, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for i in 0..r.len() {
        if !near[i].is_empty() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().0.push(i);
        }
    }
    for k in 0..g.len() {
        let root = find(&mut parent, r.len() + k);
        if let Some(e) = groups.get_mut(&root) {
            e.1.push(k);
        }
    }
    let mut roots: Vec<usize> = groups.keys().copied().collect();
    roots.sort_unstable();

    let mut pairs = Vec::new();
    for root in roots {
        let (rs, gs) = &groups[&root];
        let gindex: HashMap<usize, usize> = gs.iter().enumerate().map(|(c, &k)| (k, c)).collect();
        let forbidden = max_dist * (rs.len().max(gs.len()) as f64 + 1.0) * 2.0;
        let dense = |transpose: bool| -> Vec<Vec<f64>> {
            let mut m = vec![vec![forbidden; gs.len()]; rs.len()];
            for (a, &i) in rs.iter().enumerate() {
                for &k in &near[i] {
                    m[a][gindex[&k]] = distance(r[i].1, g[k].1);
                }
            }
            if transpose {
                (0..gs.len()).map(|c| (0..rs.len()).map(|a| m[a][c]).collect()).collect()
            } else {
                m
            }
        };
        let mut found: Vec<(usize, usize)> = if rs.len() <= gs.len() {
            hungarian(&dense(false)).into_iter().enumerate().map(|(a, c)| (rs[a], gs[c])).collect()
        } else {
            hungarian(&dense(true)).into_iter().enumerate().map(|(c, a)| (rs[a], gs[c])).collect()
        };
        found.retain(|&(i, k)| near[i].binary_search(&k).is_ok());
        pairs.extend(found.into_iter().map(|(i, k)| NodePair {
            rec: r[i].0,
            gt: g[k].0,
            distance: distance(r[i].1, g[k].1),
        }));
    }
    pairs.sort_by_key(|p| (p.rec, p.gt));
    pairs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackScore {
    pub track_id: u32,
    pub edges: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub spacing_nm: f64,
    pub max_dist_nm: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rec_edges: usize,
    pub rec_correct: usize,
    pub gt_edges: usize,
    pub gt_correct: usize,
    /// No reconstruction edges; precision reported as 0.
    pub precision_undefined: bool,
    /// No ground-truth edges; recall reported as 0.
    pub recall_undefined: bool,
    pub matched_nodes: usize,
    pub pairs: Vec<NodePair>,
    pub rec_tracks: Vec<TrackScore>,
    pub gt_tracks: Vec<TrackScore>,
}

impl MatchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn summary(&self) -> String {
        format!(
            "spacing_nm={} max_dist_nm={} precision={:.4} recall={:.4} f1={:.4} rec_edges={} gt_edges={}",
            self.spacing_nm, self.max_dist_nm, self.precision, self.recall, self.f1, self.rec_edges, self.gt_edges
        )
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Edge precision and recall of already resampled tracks under `pairs`.
pub fn score_edges(rec: &[Track], gt: &[Track], pairs: &[NodePair], spacing: f64, max_dist: f64) -> MatchResult {
    let rec_partner: HashMap<NodeRef, NodeRef> = pairs.iter().map(|p| (p.rec, p.gt)).collect();
    let gt_partner: HashMap<NodeRef, NodeRef> = pairs.iter().map(|p| (p.gt, p.rec)).collect();
    let tally = |tracks: &[Track], partner: &HashMap<NodeRef, NodeRef>| -> Vec<TrackScore> {
        tracks
            .iter()
            .enumerate()
            .map(|(t, tr)| {
                let edges = tr.nodes.len().saturating_sub(1);
                let correct = (0..edges)
                    .filter(|&k| {
                        let a = partner.get(&NodeRef { track: t, node: k });
                        let b = partner.get(&NodeRef { track: t, node: k + 1 });
                        matches!((a, b), (Some(a), Some(b)) if a.track == b.track)
                    })
                    .count();
                TrackScore {
                    track_id: tr.id,
                    edges,
                    correct,
                }
            })
            .collect()
    };
    let rec_tracks = tally(rec, &rec_partner);
    let gt_tracks = tally(gt, &gt_partner);
    let sum = |v: &[TrackScore], f: fn(&TrackScore) -> usize| v.iter().map(f).sum::<usize>();
    let (rec_edges, rec_correct) = (sum(&rec_tracks, |s| s.edges), sum(&rec_tracks, |s| s.correct));
    let (gt_edges, gt_correct) = (sum(&gt_tracks, |s| s.edges), sum(&gt_tracks, |s| s.correct));
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(rec_correct, rec_edges);
    let recall = ratio(gt_correct, gt_edges);
    MatchResult {
        spacing_nm: spacing,
        max_dist_nm: max_dist,
        precision,
        recall,
        f1: f1_score(precision, recall),
        rec_edges,
        rec_correct,
        gt_edges,
        gt_correct,
        precision_undefined: rec_edges == 0,
        recall_undefined: gt_edges == 0,
        matched_nodes: pairs.len(),
        pairs: pairs.to_vec(),
        rec_tracks,
        gt_tracks,
    }
}

/// Resamples both sides, matches nodes and scores edges.
pub fn evaluate(rec: &[Track], gt: &[Track], spacing: f64, max_dist: f64) -> Result<MatchResult> {
    if !(max_dist > 0.0) || !max_dist.is_finite() {
        return Err(Error::InvalidParam(format!("matching distance must be positive, got {max_dist}")));
    }
    let rs = rec.iter().map(|t| resample_track(t, spacing)).collect::<Result<Vec<_>>>()?;
    let gs = gt.iter().map(|t| resample_track(t, spacing)).collect::<Result<Vec<_>>>()?;
    let pairs = match_nodes(&rs, &gs, max_dist);
    Ok(score_edges(&rs, &gs, &pairs, spacing, max_dist))
}

pub const TRACK_HEADER: &str = "track_id,node_index,z_nm,y_nm,x_nm";

pub fn tracks_to_text(tracks: &[Track]) -> String {
    let mut s = format!("{TRACK_HEADER}\n");
    for t in tracks {
        for (k, p) in t.nodes.iter().enumerate() {
            writeln!(s, "{},{k},{},{},{}", t.id, p[0], p[1], p[2]).unwrap();
        }
    }
    s
}

pub fn write_tracks(tracks: &[Track], path: &Path) -> Result<()> {
    fsutil::write_file_atomic(path, tracks_to_text(tracks).as_bytes())
}

/// Parses a track file. Extra columns after the position are ignored.
/// Tracks keep the order of their first record; nodes are ordered by index.
pub fn parse_tracks(text: &str, path: &Path) -> Result<Vec<Track>> {
    let bad = |line: usize, d: String| Error::format("track file", path, format!("line {line}: {d}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.starts_with(TRACK_HEADER) => {}
        _ => return Err(bad(1, format!("expected header {TRACK_HEADER:?}"))),
    }
    let mut order: Vec<u32> = Vec::new();
    let mut nodes: HashMap<u32, Vec<(usize, [f64; 3])>> = HashMap::new();
    for (i, l) in lines {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() < 5 {
            return Err(bad(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let id: u32 = f[0].parse().map_err(|e| bad(i + 1, format!("track id: {e}")))?;
        let k: usize = f[1].parse().map_err(|e| bad(i + 1, format!("node index: {e}")))?;
        let mut p = [0.0f64; 3];
        for a in 0..3 {
            p[a] = f[2 + a].parse().map_err(|e| bad(i + 1, format!("coordinate: {e}")))?;
            if !p[a].is_finite() {
                return Err(bad(i + 1, "non-finite coordinate".into()));
            }
        }
        let entry = nodes.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push((k, p));
    }
    let mut tracks = Vec::with_capacity(order.len());
    for id in order {
        let mut ns = nodes.remove(&id).unwrap();
        ns.sort_by_key(|&(k, _)| k);
        if ns.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::format("track file", path, format!("track {id} repeats a node index")));
        }
        tracks.push(Track {
            id,
            nodes: ns.into_iter().map(|(_, p)| p).collect(),
        });
    }
    Ok(tracks)
}

pub fn read_tracks(path: &Path) -> Result<Vec<Track>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: u32, nodes: &[[f64; 3]]) -> Track {
        Track { id, nodes: nodes.to_vec() }
    }

    #[test]
    fn resample_straight_segment() {
        let t = track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 100.0]]);
        let r = resample_track(&t, 25.0).unwrap();
        let xs: Vec<f64> = r.nodes.iter().map(|p| p[2]).collect();
        assert_eq!(xs, vec![0.0, 25.0, 50.0, 75.0, 100.0]);
        let r = resample_track(&t, 150.0).unwrap();
        assert_eq!(r.nodes.len(), 2);
        let r = resample_track(&t, 30.0).unwrap();
        let xs: Vec<f64> = r.nodes.iter().map(|p| p[2]).collect();
        assert_eq!(xs, vec![0.0, 30.0, 60.0, 90.0, 100.0]);
    }

    #[test]
    fn resample_follows_corners() {
        let t = track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 10.0, 10.0]]);
        let r = resample_track(&t, 15.0).unwrap();
        assert_eq!(r.nodes, vec![[0.0, 0.0, 0.0], [0.0, 5.0, 10.0], [0.0, 10.0, 10.0]]);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(resample_track(&track(0, &[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]), 10.0).is_err());
        assert!(resample_track(&track(0, &[[1.0, 1.0, 1.0]]), 10.0).is_err());
    }

    #[test]
    fn forced_match_picks_nearer_node() {
        let rec = [track(0, &[[0.0, 0.0, 0.0]])];
        let gt = [track(0, &[[0.0, 0.0, 10.0]]), track(1, &[[0.0, 0.0, 20.0]])];
        let pairs = match_nodes(&rec, &gt, 15.0);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].gt, NodeRef { track: 0, node: 0 });
    }

    #[test]
    fn cardinality_before_distance() {
        // a-x is shortest, but a-y plus b-x matches two pairs
        let rec = [track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 20.0]])];
        let gt = [track(0, &[[0.0, 0.0, 5.0], [0.0, 0.0, -9.0]])];
        let pairs = match_nodes(&rec, &gt, 16.0);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn identity_scores_one() {
        let gt = [track(3, &[[0.0, 0.0, 0.0], [0.0, 100.0, 100.0], [40.0, 200.0, 120.0]])];
        let m = evaluate(&gt, &gt, 40.0, 80.0).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert!(m.pairs.iter().all(|p| p.distance == 0.0));
    }

    #[test]
    fn empty_reconstruction_flagged() {
        let gt = [track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 100.0]])];
        let m = evaluate(&[], &gt, 40.0, 80.0).unwrap();
        assert!(m.precision_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn merged_reconstruction_loses_precision() {
        // two gt tracks at x=0..100 (y=0) and x=0..100 (y=30); rec joins them
        let g0 = track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 100.0]]);
        let g1 = track(1, &[[0.0, 30.0, 100.0], [0.0, 30.0, 0.0]]);
        let rec = track(0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 100.0], [0.0, 30.0, 100.0], [0.0, 30.0, 0.0]]);
        let m = evaluate(&[rec], &[g0, g1], 10.0, 1.0).unwrap();
        // the three edges of the 30 nm connector join unmatched nodes
        assert_eq!((m.rec_edges, m.rec_correct), (23, 20));
        assert_eq!(m.recall, 1.0);
        let counted: usize = m.rec_tracks.iter().map(|s| s.correct).sum();
        assert_eq!(counted, m.rec_correct);
    }

    #[test]
    fn hungarian_small() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&c);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
        assert_eq!(total, 5.0);
        let rect = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(hungarian(&rect), vec![1]);
    }

    #[test]
    fn track_file_round_trip() {
        let ts = vec![track(7, &[[0.0, 1.5, 2.0], [40.0, 1.5, 2.25]]), track(2, &[[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])];
        let text = tracks_to_text(&ts);
        assert_eq!(parse_tracks(&text, Path::new("t.csv")).unwrap(), ts);
        assert!(parse_tracks("nope\n", Path::new("t.csv")).is_err());
    }
}
