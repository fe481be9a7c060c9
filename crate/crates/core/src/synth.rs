//! Synthetic ground truth: smooth random-walk tracks and the score volume
//! a perfect detector would predict for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Track;
use crate::volume::{ScoreVolume, DEFAULT_VOXEL_SIZE};

const TRACK_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const MAX_ATTEMPTS_PER_TRACK: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub shape: [usize; 3],
    pub voxel_size: [f64; 3],
    pub n_tracks: usize,
    /// Largest direction change per step, radians.
    pub max_curvature: f64,
    pub step_nm: f64,
    pub tube_sigma_nm: f64,
    /// Tracks shorter than this are redrawn.
    pub min_length_nm: f64,
    /// A new track is redrawn when it comes closer than this many tube
    /// sigmas to an existing one.
    pub min_separation_sigmas: f64,
    pub noise_sigma: f64,
    /// Fraction of voxels set to 1.
    pub salt_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shape: [30, 1000, 1000],
            voxel_size: DEFAULT_VOXEL_SIZE,
            n_tracks: 20,
            max_curvature: 0.05,
            step_nm: 20.0,
            tube_sigma_nm: 6.0,
            min_length_nm: 800.0,
            min_separation_sigmas: 3.0,
            noise_sigma: 0.05,
            salt_density: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.shape.contains(&0) {
            return Err(Error::EmptyVolume);
        }
        if self.voxel_size.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return bad(format!("voxel size must be positive, got {:?}", self.voxel_size));
        }
        for (name, v) in [("step_nm", self.step_nm), ("tube_sigma_nm", self.tube_sigma_nm)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("max_curvature", self.max_curvature),
            ("min_length_nm", self.min_length_nm),
            ("min_separation_sigmas", self.min_separation_sigmas),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.max_curvature > std::f64::consts::PI {
            return bad(format!("max_curvature must be at most pi, got {}", self.max_curvature));
        }
        if !(0.0..=1.0).contains(&self.salt_density) {
            return bad(format!("salt_density must lie in [0, 1], got {}", self.salt_density));
        }
        Ok(())
    }

    /// World box spanned by voxel centers.
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        ([0.0; 3], std::array::from_fn(|a| (self.shape[a] - 1) as f64 * self.voxel_size[a]))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add(p: [f64; 3], q: [f64; 3], s: f64) -> [f64; 3] {
    std::array::from_fn(|a| p[a] + s * q[a])
}

fn dot(p: [f64; 3], q: [f64; 3]) -> f64 {
    p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
}

fn cross(p: [f64; 3], q: [f64; 3]) -> [f64; 3] {
    [p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]]
}

fn normalized(p: [f64; 3]) -> [f64; 3] {
    let n = dot(p, p).sqrt();
    p.map(|v| v / n)
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = dot(v, v).sqrt();
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

/// Rotates unit `d` by `angle` towards a random perpendicular direction.
fn turn(d: [f64; 3], angle: f64, rng: &mut impl Rng) -> [f64; 3] {
    if angle == 0.0 {
        return d;
    }
    let perp = loop {
        let r = unit_vector(rng);
        let c = cross(d, r);
        if dot(c, c) > 1e-12 {
            break normalized(c);
        }
    };
    normalized(add(d.map(|x| x * angle.cos()), perp, angle.sin()))
}

fn inside(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> bool {
    (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
}

fn walk(from: [f64; 3], dir: [f64; 3], config: &SynthConfig, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let (lo, hi) = config.bounds();
    let mut out = Vec::new();
    let (mut p, mut d) = (from, dir);
    loop {
        let q = add(p, d, config.step_nm);
        if !inside(q, lo, hi) {
            return out;
        }
        out.push(q);
        p = q;
        d = turn(d, rng.random_range(0.0..=config.max_curvature), rng);
    }
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab: [f64; 3] = std::array::from_fn(|k| b[k] - a[k]);
    let ap: [f64; 3] = std::array::from_fn(|k| p[k] - a[k]);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let c = add(a, ab, t);
    crate::graph::distance(p, c)
}

fn too_close(nodes: &[[f64; 3]], others: &[Track], min_dist: f64) -> bool {
    others.iter().any(|t| {
        nodes.iter().any(|&p| {
            t.nodes
                .windows(2)
                .any(|w| point_segment_distance(p, w[0], w[1]) < min_dist)
        })
    })
}

/// Random walks with bounded turning angle, grown in both directions from a
/// uniform start point until they leave the volume. A draw is rejected when
/// it is shorter than the configured minimum or passes too close to an
/// earlier track; after repeated rejections fewer tracks are returned.
pub fn generate_tracks(config: &SynthConfig) -> Result<Vec<Track>> {
    config.validate()?;
    let mut rng = rng_for(config.seed, TRACK_STREAM);
    let (lo, hi) = config.bounds();
    let min_dist = config.min_separation_sigmas * config.tube_sigma_nm;
    let mut tracks: Vec<Track> = Vec::with_capacity(config.n_tracks);
    for _ in 0..config.n_tracks {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS_PER_TRACK {
            let start: [f64; 3] = std::array::from_fn(|a| if hi[a] > lo[a] { rng.random_range(lo[a]..hi[a]) } else { lo[a] });
            let dir = unit_vector(&mut rng);
            let forward = walk(start, dir, config, &mut rng);
            let backward = walk(start, dir.map(|x| -x), config, &mut rng);
            let nodes: Vec<[f64; 3]> = backward.into_iter().rev().chain(std::iter::once(start)).chain(forward).collect();
            if nodes.len() < 2 || (nodes.len() - 1) as f64 * config.step_nm < config.min_length_nm {
                continue;
            }
            if too_close(&nodes, &tracks, min_dist) {
                continue;
            }
            accepted = Some(nodes);
            break;
        }
        match accepted {
            Some(nodes) => tracks.push(Track {
                id: tracks.len() as u32,
                nodes,
            }),
            None => {
                log::warn!("placed {} of {} tracks; no room for more", tracks.len(), config.n_tracks);
                break;
            }
        }
    }
    Ok(tracks)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let w: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| (x / total) as f32).collect()
}

/// Convolves along one axis with zero padding.
fn blur_axis(data: &[f32], shape: [usize; 3], axis: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let [nz, ny, nx] = shape;
    let mut out = vec![0.0f32; data.len()];
    match axis {
        2 => out.par_chunks_mut(nx).zip(data.par_chunks(nx)).for_each(|(o, row)| {
            for (x, ov) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let s = x as i64 + k as i64 - r;
                    if s >= 0 && (s as usize) < nx {
                        acc += w * row[s as usize];
                    }
                }
                *ov = acc;
            }
        }),
        1 => out.par_chunks_mut(ny * nx).zip(data.par_chunks(ny * nx)).for_each(|(o, plane)| {
            for y in 0..ny {
                let orow = &mut o[y * nx..(y + 1) * nx];
                for (k, &w) in kernel.iter().enumerate() {
                    let s = y as i64 + k as i64 - r;
                    if s >= 0 && (s as usize) < ny {
                        let irow = &plane[s as usize * nx..(s as usize + 1) * nx];
                        orow.iter_mut().zip(irow).for_each(|(a, &b)| *a += w * b);
                    }
                }
            }
        }),
        _ => out.par_chunks_mut(ny * nx).enumerate().for_each(|(z, o)| {
            for (k, &w) in kernel.iter().enumerate() {
                let s = z as i64 + k as i64 - r;
                if s >= 0 && (s as usize) < nz {
                    let plane = &data[s as usize * ny * nx..(s as usize + 1) * ny * nx];
                    o.iter_mut().zip(plane).for_each(|(a, &b)| *a += w * b);
                }
            }
        }),
    }
    out
}

/// Marks the voxels nearest to densely sampled track points, smooths with
/// a Gaussian of `tube_sigma_nm` (converted to voxels per axis) and scales
/// the maximum to 1.
pub fn rasterize_scores(tracks: &[Track], config: &SynthConfig) -> Result<ScoreVolume> {
    config.validate()?;
    let shape = config.shape;
    let vs = config.voxel_size;
    let mut data = vec![0.0f32; shape.iter().product()];
    let sample = vs.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    for t in tracks {
        for w in t.nodes.windows(2) {
            let len = crate::graph::distance(w[0], w[1]);
            let steps = (len / sample).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                let p: [f64; 3] = std::array::from_fn(|a| w[0][a] + f * (w[1][a] - w[0][a]));
                let v: [i64; 3] = std::array::from_fn(|a| (p[a] / vs[a]).round() as i64);
                if (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < shape[a]) {
                    data[(v[0] as usize * shape[1] + v[1] as usize) * shape[2] + v[2] as usize] = 1.0;
                }
            }
        }
    }
    for axis in [2, 1, 0] {
        let kernel = gaussian_kernel(config.tube_sigma_nm / vs[axis]);
        data = blur_axis(&data, shape, axis, &kernel);
    }
    let peak = data.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        data.par_iter_mut().for_each(|v| *v /= peak);
    }
    ScoreVolume::new(shape, vs, [0.0; 3], data)
}

/// Adds Gaussian noise, then sets a random fraction of voxels to 1, then
/// clamps to `[0, 1.5]`. Uses its own random stream of the seed.
pub fn add_noise(vol: &ScoreVolume, config: &SynthConfig) -> Result<ScoreVolume> {
    config.validate()?;
    let mut out = vol.clone();
    if config.noise_sigma == 0.0 && config.salt_density == 0.0 {
        return Ok(out);
    }
    let mut rng = rng_for(config.seed, NOISE_STREAM);
    let normal = Normal::new(0.0f32, config.noise_sigma as f32).map_err(|e| Error::InvalidParam(e.to_string()))?;
    for v in out.data_mut() {
        let mut x = *v;
        if config.noise_sigma > 0.0 {
            x += normal.sample(&mut rng);
        }
        if config.salt_density > 0.0 && rng.random_bool(config.salt_density) {
            x = 1.0;
        }
        *v = x.clamp(0.0, 1.5);
    }
    Ok(out)
}

/// Tracks plus the noisy volume.
pub fn synthesize(config: &SynthConfig) -> Result<(Vec<Track>, ScoreVolume)> {
    let tracks = generate_tracks(config)?;
    let clean = rasterize_scores(&tracks, config)?;
    Ok((tracks, add_noise(&clean, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            shape: [5, 100, 100],
            n_tracks: 3,
            min_length_nm: 100.0,
            seed: 3,
            ..Default::default()
        }
    }

    fn turning_angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
        let u = normalized(std::array::from_fn(|k| b[k] - a[k]));
        let v = normalized(std::array::from_fn(|k| c[k] - b[k]));
        dot(u, v).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn no_tracks_gives_zero_volume() {
        let c = SynthConfig { n_tracks: 0, ..small() };
        assert!(generate_tracks(&c).unwrap().is_empty());
        let v = rasterize_scores(&[], &c).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn straight_when_curvature_is_zero() {
        let c = SynthConfig { max_curvature: 0.0, ..small() };
        for t in generate_tracks(&c).unwrap() {
            for w in t.nodes.windows(3) {
                assert!(turning_angle(w[0], w[1], w[2]) < 1e-6);
            }
        }
    }

    #[test]
    fn turning_is_bounded() {
        let c = SynthConfig { max_curvature: 0.2, ..small() };
        let tracks = generate_tracks(&c).unwrap();
        assert!(!tracks.is_empty());
        for t in &tracks {
            for w in t.nodes.windows(3) {
                assert!(turning_angle(w[0], w[1], w[2]) <= 0.2 + 1e-9);
            }
        }
    }

    #[test]
    fn tracks_are_separated() {
        let c = small();
        let tracks = generate_tracks(&c).unwrap();
        let min = c.min_separation_sigmas * c.tube_sigma_nm;
        for (i, t) in tracks.iter().enumerate() {
            assert!(!too_close(&t.nodes, &tracks[..i], min));
        }
    }

    #[test]
    fn deterministic() {
        let c = SynthConfig { noise_sigma: 0.1, salt_density: 0.01, ..small() };
        assert_eq!(synthesize(&c).unwrap(), synthesize(&c).unwrap());
    }

    #[test]
    fn noise_free_is_identity() {
        let c = SynthConfig { noise_sigma: 0.0, salt_density: 0.0, ..small() };
        let v = ScoreVolume::from_fn([2, 3, 4], DEFAULT_VOXEL_SIZE, |p| p[2] as f32 * 0.1).unwrap();
        assert_eq!(add_noise(&v, &c).unwrap(), v);
    }

    #[test]
    fn noise_level_matches_config() {
        let c = SynthConfig { noise_sigma: 0.05, ..small() };
        let v = ScoreVolume::from_fn([4, 100, 100], DEFAULT_VOXEL_SIZE, |_| 0.5).unwrap();
        let n = add_noise(&v, &c).unwrap();
        let d: Vec<f64> = n.data().iter().map(|&x| x as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.05 * 0.05, "{sd}");
    }

    #[test]
    fn centerline_dominates_tube_surface() {
        let c = SynthConfig {
            shape: [5, 60, 60],
            ..Default::default()
        };
        // straight track along x in section 2
        let t = Track {
            id: 0,
            nodes: vec![[80.0, 120.0, 0.0], [80.0, 120.0, 236.0]],
        };
        let v = rasterize_scores(&[t], &c).unwrap();
        assert!((v.max_score() - 1.0).abs() < 1e-6);
        let off = (3.0 * c.tube_sigma_nm / 4.0).round() as usize;
        for x in 0..60 {
            let center = v.get([2, 30, x]);
            assert!(center >= v.get([2, 30 + off, x]) && center >= v.get([2, 30 - off, x]));
        }
        // the ridge: per column, the argmax over y is the track row
        for x in 5..55 {
            let best = (0..60).max_by(|&a, &b| v.get([2, a, x]).total_cmp(&v.get([2, b, x]))).unwrap();
            assert!((best as i64 - 30).abs() <= 1);
        }
    }
}
