use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{Track, TRACK_HEADER};
use crate::fsutil;
use crate::graph::{distance, CandidateGraph, Node, Triplet};

/// One decoded chain of candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPath {
    pub candidate_ids: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<TrackPath>,
    /// Closed loops in the selection that were cut open at their longest edge.
    pub opened_cycles: usize,
}

impl TrackSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn to_tracks(&self) -> Vec<Track> {
        self.tracks
            .iter()
            .enumerate()
            .map(|(i, t)| Track {
                id: i as u32,
                nodes: t.positions.clone(),
            })
            .collect()
    }

    /// Track file with an extra `candidate_id` column.
    pub fn to_text(&self) -> String {
        let mut s = format!("{TRACK_HEADER},candidate_id\n");
        for (i, t) in self.tracks.iter().enumerate() {
            for (k, (p, id)) in t.positions.iter().zip(&t.candidate_ids).enumerate() {
                writeln!(s, "{i},{k},{},{},{},{id}", p[0], p[1], p[2]).unwrap();
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_file_atomic(path, self.to_text().as_bytes())
    }

    /// Checks the track invariants: at least two candidates each, no
    /// candidate repeated within or across tracks, and consecutive
    /// candidates joined by a graph edge.
    pub fn validate(&self, graph: &CandidateGraph) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, t) in self.tracks.iter().enumerate() {
            if t.candidate_ids.len() < 2 {
                return Err(Error::Inconsistent(format!("track {i} has fewer than two candidates")));
            }
            for id in &t.candidate_ids {
                if !seen.insert(*id) {
                    return Err(Error::Inconsistent(format!("candidate {id} appears twice")));
                }
            }
            for w in t.candidate_ids.windows(2) {
                let idx = |id: u32| graph.index_of_id(id).ok_or_else(|| Error::Inconsistent(format!("unknown candidate {id}")));
                let (a, b) = (idx(w[0])?, idx(w[1])?);
                if !graph.has_edge(Node::Candidate(a), Node::Candidate(b)) {
                    return Err(Error::Inconsistent(format!("track {i} steps along a non-edge {} - {}", w[0], w[1])));
                }
            }
        }
        Ok(())
    }
}

/// Assembles selected triplets into chains.
///
/// Every selected candidate contributes one triplet naming its two track
/// neighbors; the terminal marks a chain end. Chains are traced from their
/// lower-index end in ascending order. Selections can also contain closed
/// loops, which have no end; each is cut at its longest edge (first one
/// encountered on ties) and reported in `opened_cycles`.
pub fn decode_tracks(graph: &CandidateGraph, selected: &[Triplet]) -> Result<TrackSet> {
    let n = graph.len();
    let mut link: Vec<Option<[Node; 2]>> = vec![None; n];
    for t in selected {
        let c = t.center as usize;
        if c >= n {
            return Err(Error::Inconsistent(format!("triplet centered at unknown candidate index {c}")));
        }
        if link[c].is_some() {
            return Err(Error::Inconsistent(format!("candidate {} has two selected triplets", graph.candidate(t.center).id)));
        }
        link[c] = Some(t.outer());
    }
    for (c, l) in link.iter().enumerate() {
        let Some(l) = l else { continue };
        for nb in l {
            if let Node::Candidate(o) = *nb {
                let back = link[o as usize].is_some_and(|lo| lo.contains(&Node::Candidate(c as u32)));
                if !back {
                    return Err(Error::Inconsistent(format!(
                        "candidate {} links to {} without reciprocation",
                        graph.candidate(c as u32).id,
                        graph.candidate(o).id
                    )));
                }
            }
        }
    }

    let next = |cur: u32, prev: Node| -> Node {
        let [x, y] = link[cur as usize].expect("selected");
        if x == prev {
            y
        } else {
            x
        }
    };
    let path_of = |order: &[u32]| TrackPath {
        candidate_ids: order.iter().map(|&i| graph.candidate(i).id).collect(),
        positions: order.iter().map(|&i| graph.candidate(i).position).collect(),
    };

    let mut visited = vec![false; n];
    let mut set = TrackSet::default();
    for start in 0..n as u32 {
        let Some(l) = link[start as usize] else { continue };
        if visited[start as usize] || !l.contains(&Node::Terminal) {
            continue;
        }
        let mut order = vec![start];
        visited[start as usize] = true;
        let (mut prev, mut cur) = (Node::Terminal, start);
        loop {
            match next(cur, prev) {
                Node::Terminal => break,
                Node::Candidate(nx) => {
                    if visited[nx as usize] {
                        return Err(Error::Inconsistent(format!("candidate {} revisited", graph.candidate(nx).id)));
                    }
                    visited[nx as usize] = true;
                    order.push(nx);
                    prev = Node::Candidate(cur);
                    cur = nx;
                }
            }
        }
        set.tracks.push(path_of(&order));
    }

    for start in 0..n as u32 {
        if visited[start as usize] || link[start as usize].is_none() {
            continue;
        }
        // all links of a cycle are candidates
        let mut cycle = vec![start];
        visited[start as usize] = true;
        let [x, y] = link[start as usize].unwrap();
        let first = x.min(y);
        let (mut prev, mut cur) = (Node::Candidate(start), first.candidate().expect("cycle member"));
        while cur != start {
            visited[cur as usize] = true;
            cycle.push(cur);
            let nx = next(cur, prev).candidate().expect("cycle member");
            prev = Node::Candidate(cur);
            cur = nx;
        }
        let len = cycle.len();
        let pos = |i: usize| graph.candidate(cycle[i % len]).position;
        let cut = (0..len)
            .map(|i| distance(pos(i), pos(i + 1)))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best })
            .0;
        let order: Vec<u32> = (1..=len).map(|k| cycle[(cut + k) % len]).collect();
        set.tracks.push(path_of(&order));
        set.opened_cycles += 1;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;
    use crate::graph::build_graph;

    fn graph(points: &[[f64; 3]], theta_d: f64) -> CandidateGraph {
        let c: Vec<Candidate> = points
            .iter()
            .enumerate()
            .map(|(i, &p)| Candidate {
                id: 100 + i as u32,
                voxel: [p[0] as usize, p[1] as usize, p[2] as usize],
                position: p,
                score: 1.0,
            })
            .collect();
        build_graph(&c, theta_d).unwrap()
    }

    fn t(a: Node, c: u32, b: Node) -> Triplet {
        Triplet::new(a, c, b).unwrap()
    }
    use Node::{Candidate as C, Terminal as S};

    #[test]
    fn empty_selection() {
        let g = graph(&[[0.0, 0.0, 0.0]], 1.0);
        assert!(decode_tracks(&g, &[]).unwrap().is_empty());
    }

    #[test]
    fn chain() {
        let g = graph(&[[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]], 10.0);
        let set = decode_tracks(&g, &[t(S, 0, C(1)), t(C(0), 1, S)]).unwrap();
        assert_eq!(set.tracks.len(), 1);
        assert_eq!(set.tracks[0].candidate_ids, vec![100, 101]);
        set.validate(&g).unwrap();
        assert_eq!(set.to_text(), "track_id,node_index,z_nm,y_nm,x_nm,candidate_id\n0,0,0,0,0,100\n0,1,0,0,5,101\n");
    }

    #[test]
    fn two_disjoint_chains() {
        let g = graph(&[[0.0, 0.0, 0.0], [0.0, 0.0, 5.0], [0.0, 50.0, 0.0], [0.0, 50.0, 5.0]], 10.0);
        let sel = [t(S, 0, C(1)), t(C(0), 1, S), t(S, 2, C(3)), t(C(2), 3, S)];
        let set = decode_tracks(&g, &sel).unwrap();
        assert_eq!(set.tracks.len(), 2);
        assert_eq!(set.tracks[1].candidate_ids, vec![102, 103]);
        set.validate(&g).unwrap();
    }

    #[test]
    fn cycle_cut_at_longest_edge() {
        // triangle with one long side between 0 and 2
        let g = graph(&[[0.0, 0.0, 0.0], [0.0, 3.0, 4.0], [0.0, 0.0, 8.0]], 10.0);
        let sel = [t(C(1), 0, C(2)), t(C(0), 1, C(2)), t(C(0), 2, C(1))];
        let set = decode_tracks(&g, &sel).unwrap();
        assert_eq!(set.opened_cycles, 1);
        let ids = &set.tracks[0].candidate_ids;
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], 101, "the long side 0-2 is dropped: {ids:?}");
    }

    #[test]
    fn inconsistent_selections_fail() {
        let g = graph(&[[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]], 10.0);
        assert!(decode_tracks(&g, &[t(S, 0, C(1))]).is_err());
        assert!(decode_tracks(&g, &[t(S, 0, C(1)), t(S, 0, C(1)), t(C(0), 1, S)]).is_err());
    }
}
