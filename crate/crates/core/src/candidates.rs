//! Sparse candidate extraction by two-pass strided non-maximum suppression.
//!
//! The first pass tiles the volume into non-overlapping windows (stride equal
//! to the window size) and keeps the argmax of every window whose maximum
//! exceeds the threshold. Maxima on window borders can produce clusters of
//! adjacent detections, so a second, greedy pass suppresses every detection
//! that has a stronger retained detection in its neighborhood.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::volume::ScoreVolume;

/// A detection: one voxel hypothesized to lie on a track.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub voxel: [usize; 3],
    /// World position in nm.
    pub position: [f64; 3],
    pub score: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsParams {
    /// Pass-1 window, voxels `(z, y, x)`; also the pass-1 stride.
    pub window1: [usize; 3],
    /// Pass-2 neighborhood extents, voxels `(z, y, x)`.
    pub window2: [usize; 3],
    /// Windows whose maximum is not strictly above this are skipped.
    pub threshold: f32,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            window1: [1, 10, 10],
            window2: [1, 3, 3],
            threshold: 0.5,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if self.window1.contains(&0) || self.window2.contains(&0) {
            return Err(Error::InvalidParam(format!("nms windows must be >= 1, got {:?} / {:?}", self.window1, self.window2)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidParam("nms threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Strided window maxima. Ties inside a window go to the smallest `(z, y, x)`.
/// Boundary windows smaller than `window` are scanned as well.
pub fn nms_pass1(vol: &ScoreVolume, window: [usize; 3], threshold: f32) -> Result<Vec<Candidate>> {
    if vol.is_empty() {
        return Err(Error::EmptyVolume);
    }
    if window.contains(&0) {
        return Err(Error::InvalidParam(format!("nms window must be >= 1, got {window:?}")));
    }
    let shape = vol.shape();
    let counts: [usize; 3] = std::array::from_fn(|a| shape[a].div_ceil(window[a]));
    let n_windows = counts.iter().product::<usize>();

    let maxima: Vec<Option<([usize; 3], f32)>> = (0..n_windows)
        .into_par_iter()
        .map(|w| {
            let wi = [w / (counts[1] * counts[2]), (w / counts[2]) % counts[1], w % counts[2]];
            let lo: [usize; 3] = std::array::from_fn(|a| wi[a] * window[a]);
            let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + window[a]).min(shape[a]));
            let mut best: Option<([usize; 3], f32)> = None;
            for z in lo[0]..hi[0] {
                for y in lo[1]..hi[1] {
                    let row = vol.index_of([z, y, 0]);
                    for x in lo[2]..hi[2] {
                        let s = vol.data()[row + x];
                        if best.is_none_or(|(_, b)| s > b) {
                            best = Some(([z, y, x], s));
                        }
                    }
                }
            }
            best.filter(|&(_, s)| s > threshold)
        })
        .collect();

    Ok(maxima
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (voxel, score))| Candidate {
            id: i as u32,
            voxel,
            position: vol.world_of_voxel(voxel),
            score,
        })
        .collect())
}

/// Greedy suppression in descending score order (ties: smaller voxel first).
/// A candidate survives unless an already retained one lies strictly inside
/// its `window` neighborhood on every axis. Survivors keep their input order.
pub fn nms_pass2(cands: &[Candidate], window: [usize; 3]) -> Vec<Candidate> {
    let w = window.map(|v| v.max(1));
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .score
            .total_cmp(&cands[a].score)
            .then_with(|| cands[a].voxel.cmp(&cands[b].voxel))
    });

    let cell_of = |v: [usize; 3]| -> [i64; 3] { std::array::from_fn(|a| (v[a] / w[a]) as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut keep = vec![false; cands.len()];

    for &i in &order {
        let v = cands[i].voxel;
        let c = cell_of(v);
        let mut suppressed = false;
        'search: for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dz, c[1] + dy, c[2] + dx]) else {
                        continue;
                    };
                    for &j in bucket {
                        let u = cands[j].voxel;
                        if (0..3).all(|a| v[a].abs_diff(u[a]) < w[a]) {
                            suppressed = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if !suppressed {
            keep[i] = true;
            grid.entry(c).or_default().push(i);
        }
    }
    cands
        .iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then(|| c.clone()))
        .collect()
}

/// Both passes; survivors are sorted by voxel and numbered densely from 0.
pub fn extract_candidates(vol: &ScoreVolume, params: &NmsParams) -> Result<Vec<Candidate>> {
    params.validate()?;
    let first = nms_pass1(vol, params.window1, params.threshold)?;
    let mut kept = nms_pass2(&first, params.window2);
    kept.sort_by_key(|c| c.voxel);
    for (i, c) in kept.iter_mut().enumerate() {
        c.id = i as u32;
    }
    Ok(kept)
}

/// Contents of a candidates file.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFile {
    pub source: String,
    pub nms: NmsParams,
    pub voxel_size: [f64; 3],
    pub offset: [f64; 3],
    pub candidates: Vec<Candidate>,
}

const CANDIDATES_MAGIC: &str = "# mtrack candidates v1";

fn fmt3<T: std::fmt::Display>(v: &[T; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn parse3<T: std::str::FromStr>(s: &str) -> Option<[T; 3]> {
    let mut it = s.split_whitespace().map(|t| t.parse::<T>());
    let v = [it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?];
    it.next().is_none().then_some(v)
}

impl CandidateFile {
    pub fn new(source: impl Into<String>, nms: NmsParams, vol: &ScoreVolume, candidates: Vec<Candidate>) -> Self {
        CandidateFile {
            source: source.into(),
            nms,
            voxel_size: vol.voxel_size(),
            offset: vol.offset(),
            candidates,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CANDIDATES_MAGIC}").unwrap();
        writeln!(s, "# source: {}", self.source).unwrap();
        writeln!(s, "# voxel_size_nm: {}", fmt3(&self.voxel_size)).unwrap();
        writeln!(s, "# offset_nm: {}", fmt3(&self.offset)).unwrap();
        writeln!(s, "# window1: {}", fmt3(&self.nms.window1)).unwrap();
        writeln!(s, "# window2: {}", fmt3(&self.nms.window2)).unwrap();
        writeln!(s, "# threshold: {}", self.nms.threshold).unwrap();
        writeln!(s, "id z y x score").unwrap();
        for c in &self.candidates {
            writeln!(s, "{} {} {} {} {}", c.id, c.voxel[0], c.voxel[1], c.voxel[2], c.score).unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::format("candidates file", path, detail);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == CANDIDATES_MAGIC => {}
            _ => return Err(bad("missing header".into())),
        }
        let mut header: HashMap<&str, &str> = HashMap::new();
        let mut records = Vec::new();
        let mut seen_columns = false;
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once(": ").ok_or_else(|| bad(format!("line {}: bad header", n + 1)))?;
                header.insert(k, v);
            } else if line == "id z y x score" {
                seen_columns = true;
            } else if !line.trim().is_empty() {
                if !seen_columns {
                    return Err(bad(format!("line {}: record before column header", n + 1)));
                }
                records.push((n + 1, line));
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing header field {k:?}")));
        let voxel_size: [f64; 3] = parse3(get("voxel_size_nm")?).ok_or_else(|| bad("bad voxel_size_nm".into()))?;
        let offset: [f64; 3] = parse3(get("offset_nm")?).ok_or_else(|| bad("bad offset_nm".into()))?;
        let nms = NmsParams {
            window1: parse3(get("window1")?).ok_or_else(|| bad("bad window1".into()))?,
            window2: parse3(get("window2")?).ok_or_else(|| bad("bad window2".into()))?,
            threshold: get("threshold")?.parse().map_err(|_| bad("bad threshold".into()))?,
        };
        let mut candidates = Vec::with_capacity(records.len());
        for (n, line) in records {
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = (|| {
                if f.len() != 5 {
                    return None;
                }
                let voxel = [f[1].parse().ok()?, f[2].parse().ok()?, f[3].parse().ok()?];
                Some(Candidate {
                    id: f[0].parse().ok()?,
                    voxel,
                    position: std::array::from_fn(|a| offset[a] + voxel[a] as f64 * voxel_size[a]),
                    score: f[4].parse().ok()?,
                })
            })();
            candidates.push(parsed.ok_or_else(|| bad(format!("line {n}: bad record")))?);
        }
        Ok(CandidateFile {
            source: get("source")?.to_string(),
            nms,
            voxel_size,
            offset,
            candidates,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_file_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::DEFAULT_VOXEL_SIZE;

    fn vol_with(shape: [usize; 3], f: impl FnMut([usize; 3]) -> f32) -> ScoreVolume {
        ScoreVolume::from_fn(shape, DEFAULT_VOXEL_SIZE, f).unwrap()
    }

    fn cand(voxel: [usize; 3], score: f32) -> Candidate {
        Candidate {
            id: 0,
            voxel,
            position: [0.0; 3],
            score,
        }
    }

    #[test]
    fn zero_volume_has_no_candidates() {
        let v = ScoreVolume::zeros([1, 10, 10], DEFAULT_VOXEL_SIZE).unwrap();
        assert!(nms_pass1(&v, [1, 10, 10], 0.5).unwrap().is_empty());
        assert!(extract_candidates(&v, &NmsParams::default()).unwrap().is_empty());
    }

    #[test]
    fn single_peak() {
        let v = vol_with([1, 10, 10], |p| if p == [0, 3, 7] { 0.9 } else { 0.0 });
        let c = nms_pass1(&v, [1, 10, 10], 0.5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].voxel, [0, 3, 7]);
        assert_eq!(c[0].position, [0.0, 12.0, 28.0]);
        assert_eq!(c[0].score, 0.9);
    }

    #[test]
    fn threshold_is_strict() {
        let v = vol_with([1, 2, 2], |_| 0.5);
        assert!(nms_pass1(&v, [1, 2, 2], 0.5).unwrap().is_empty());
        let c = nms_pass1(&v, [1, 2, 2], 0.49).unwrap();
        // constant window: tie goes to the smallest voxel
        assert_eq!(c[0].voxel, [0, 0, 0]);
    }

    #[test]
    fn ramp_windows_match_naive_scan() {
        let v = vol_with([1, 20, 20], |[_, y, x]| ((y * 7 + x * 13) % 29) as f32 / 29.0);
        let got = nms_pass1(&v, [1, 10, 10], 0.0).unwrap();
        assert_eq!(got.len(), 4);
        let mut expected = Vec::new();
        for wy in 0..2 {
            for wx in 0..2 {
                let mut best = ([0, 0, 0], f32::MIN);
                for y in wy * 10..wy * 10 + 10 {
                    for x in wx * 10..wx * 10 + 10 {
                        if v.get([0, y, x]) > best.1 {
                            best = ([0, y, x], v.get([0, y, x]));
                        }
                    }
                }
                expected.push(best);
            }
        }
        let got: Vec<_> = got.iter().map(|c| (c.voxel, c.score)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn partial_boundary_windows_are_scanned() {
        let v = vol_with([1, 12, 12], |p| if p == [0, 11, 11] { 1.0 } else { 0.0 });
        let c = nms_pass1(&v, [1, 10, 10], 0.5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].voxel, [0, 11, 11]);
    }

    #[test]
    fn pass2_far_candidates_survive() {
        let out = nms_pass2(&[cand([0, 0, 5], 0.7), cand([0, 20, 5], 0.8)], [1, 3, 3]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn pass2_removes_double_detection() {
        let out = nms_pass2(&[cand([0, 9, 9], 0.8), cand([0, 10, 10], 0.9)], [1, 3, 3]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].voxel, [0, 10, 10]);
    }

    #[test]
    fn pass2_tie_goes_to_smaller_voxel() {
        let out = nms_pass2(&[cand([0, 10, 10], 0.8), cand([0, 9, 9], 0.8)], [1, 3, 3]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].voxel, [0, 9, 9]);
    }

    #[test]
    fn pass2_is_greedy_not_transitive() {
        // chain a - b - c with spacing 2: b strongest removes both neighbors
        let out = nms_pass2(&[cand([0, 0, 0], 0.5), cand([0, 2, 0], 0.9), cand([0, 4, 0], 0.6)], [1, 3, 3]);
        assert_eq!(out.iter().map(|c| c.voxel).collect::<Vec<_>>(), vec![[0, 2, 0]]);
        // a strongest: b removed, c kept since suppressed candidates never suppress
        let out = nms_pass2(&[cand([0, 0, 0], 0.9), cand([0, 2, 0], 0.6), cand([0, 4, 0], 0.5)], [1, 3, 3]);
        assert_eq!(out.iter().map(|c| c.voxel).collect::<Vec<_>>(), vec![[0, 0, 0], [0, 4, 0]]);
    }

    #[test]
    fn extract_assigns_dense_sorted_ids() {
        let v = vol_with([2, 20, 20], |[z, y, x]| if (z, y, x) == (1, 2, 3) || (z, y, x) == (0, 15, 15) { 0.9 } else { 0.0 });
        let c = extract_candidates(&v, &NmsParams::default()).unwrap();
        assert_eq!(c.iter().map(|c| (c.id, c.voxel)).collect::<Vec<_>>(), vec![(0, [0, 15, 15]), (1, [1, 2, 3])]);
    }

    #[test]
    fn invalid_params() {
        let v = ScoreVolume::zeros([1, 1, 1], DEFAULT_VOXEL_SIZE).unwrap();
        let p = NmsParams {
            window1: [0, 1, 1],
            ..NmsParams::default()
        };
        assert!(extract_candidates(&v, &p).is_err());
    }

    #[test]
    fn candidates_file_round_trip() {
        let v = vol_with([1, 20, 20], |[_, y, x]| ((y * 3 + x) % 17) as f32 / 16.0).with_offset([40.0, 8.0, 0.0]);
        let params = NmsParams {
            threshold: 0.1,
            ..NmsParams::default()
        };
        let cands = extract_candidates(&v, &params).unwrap();
        assert!(!cands.is_empty());
        let f = CandidateFile::new("vol", params, &v, cands);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        f.write(&p).unwrap();
        assert_eq!(CandidateFile::read(&p).unwrap(), f);
    }

    #[test]
    fn candidates_file_rejects_garbage() {
        let p = Path::new("x");
        assert!(CandidateFile::parse("hello", p).is_err());
        let text = format!("{CANDIDATES_MAGIC}\n# source: v\nid z y x score\n0 1 2\n");
        assert!(CandidateFile::parse(&text, p).is_err());
    }
}
