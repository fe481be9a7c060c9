//! Score volumes and world-space regions.
//!
//! A volume is stored on disk as a directory holding `meta.json` and
//! `data.raw` (little-endian `f32`, `(z, y, x)` order with `x` fastest).
//! All world coordinates are nanometers; voxel `v` sits at world position
//! `offset + v * voxel_size`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// Default anisotropic voxel size of serial-section TEM, `(z, y, x)` nm.
pub const DEFAULT_VOXEL_SIZE: [f64; 3] = [40.0, 4.0, 4.0];

const META_FILE: &str = "meta.json";
const DATA_FILE: &str = "data.raw";

/// Dense per-voxel scores on a regular anisotropic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume {
    shape: [usize; 3],
    voxel_size: [f64; 3],
    offset: [f64; 3],
    data: Vec<f32>,
}

/// Axis-aligned box in world coordinates, half-open: `[begin, begin + shape)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub begin: [f64; 3],
    pub shape: [f64; 3],
}

impl Roi {
    pub fn new(begin: [f64; 3], shape: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || begin.iter().any(|b| !b.is_finite()) {
            return Err(Error::Roi(format!("roi shape must be positive, got {shape:?}")));
        }
        Ok(Roi { begin, shape })
    }

    pub fn end(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.begin[a] + self.shape[a])
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        let end = self.end();
        (0..3).all(|a| p[a] >= self.begin[a] && p[a] < end[a])
    }

    /// `other` lies entirely inside `self`.
    pub fn contains_roi(&self, other: &Roi) -> bool {
        let (e, oe) = (self.end(), other.end());
        (0..3).all(|a| other.begin[a] >= self.begin[a] && oe[a] <= e[a])
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    shape: [usize; 3],
    voxel_size_nm: [f64; 3],
    offset_nm: [f64; 3],
    dtype: String,
    order: String,
}

impl ScoreVolume {
    pub fn new(shape: [usize; 3], voxel_size: [f64; 3], offset: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::EmptyVolume);
        }
        if voxel_size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParam(format!("voxel size must be positive, got {voxel_size:?}")));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParam(format!("offset must be finite, got {offset:?}")));
        }
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        let vol = ScoreVolume {
            shape,
            voxel_size,
            offset,
            data,
        };
        if let Some(i) = vol.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(vol.voxel_of_index(i)));
        }
        Ok(vol)
    }

    pub fn zeros(shape: [usize; 3], voxel_size: [f64; 3]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, voxel_size, [0.0; 3], vec![0.0; n])
    }

    /// Builds a volume by evaluating `f` at every voxel.
    pub fn from_fn(shape: [usize; 3], voxel_size: [f64; 3], mut f: impl FnMut([usize; 3]) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    data.push(f([z, y, x]));
                }
            }
        }
        Self::new(shape, voxel_size, [0.0; 3], data)
    }

    pub fn with_offset(mut self, offset: [f64; 3]) -> Self {
        self.offset = offset;
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn offset(&self) -> [f64; 3] {
        self.offset
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index_of(&self, v: [usize; 3]) -> usize {
        (v[0] * self.shape[1] + v[1]) * self.shape[2] + v[2]
    }

    pub fn voxel_of_index(&self, i: usize) -> [usize; 3] {
        let x = i % self.shape[2];
        let y = (i / self.shape[2]) % self.shape[1];
        let z = i / (self.shape[1] * self.shape[2]);
        [z, y, x]
    }

    #[inline]
    pub fn get(&self, v: [usize; 3]) -> f32 {
        self.data[self.index_of(v)]
    }

    pub fn contains_voxel(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.shape[a])
    }

    /// World position of a voxel.
    pub fn world_of_voxel(&self, v: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.offset[a] + v[a] as f64 * self.voxel_size[a])
    }

    /// Continuous voxel coordinates of a world point.
    pub fn voxel_coords(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.offset[a]) / self.voxel_size[a])
    }

    /// World region covered by the voxel grid.
    pub fn extent(&self) -> Roi {
        Roi {
            begin: self.offset,
            shape: std::array::from_fn(|a| self.shape[a] as f64 * self.voxel_size[a]),
        }
    }

    /// Number of scores outside `[0, 1]`.
    pub fn out_of_range_count(&self) -> usize {
        self.data.iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count()
    }

    pub fn max_score(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Converts a world roi into a voxel range, requiring grid alignment.
    pub fn voxel_range(&self, roi: &Roi) -> Result<([usize; 3], [usize; 3])> {
        let mut begin = [0usize; 3];
        let mut shape = [0usize; 3];
        for a in 0..3 {
            let b = (roi.begin[a] - self.offset[a]) / self.voxel_size[a];
            let s = roi.shape[a] / self.voxel_size[a];
            let (br, sr) = (b.round(), s.round());
            if (b - br).abs() > 1e-6 || (s - sr).abs() > 1e-6 {
                return Err(Error::Roi(format!("{roi:?} is not aligned to the voxel grid")));
            }
            if br < 0.0 || sr < 1.0 || br + sr > self.shape[a] as f64 {
                return Err(Error::Roi(format!("{roi:?} exceeds the volume extent {:?}", self.extent())));
            }
            begin[a] = br as usize;
            shape[a] = sr as usize;
        }
        Ok((begin, shape))
    }

    /// Copies the scores inside `roi`; the result's offset is `roi.begin`.
    pub fn crop(&self, roi: &Roi) -> Result<ScoreVolume> {
        let (begin, shape) = self.voxel_range(roi)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for z in begin[0]..begin[0] + shape[0] {
            for y in begin[1]..begin[1] + shape[1] {
                let row = self.index_of([z, y, begin[2]]);
                data.extend_from_slice(&self.data[row..row + shape[2]]);
            }
        }
        Ok(ScoreVolume {
            shape,
            voxel_size: self.voxel_size,
            offset: self.world_of_voxel(begin),
            data,
        })
    }

    pub fn load(dir: &Path) -> Result<ScoreVolume> {
        let meta_path = dir.join(META_FILE);
        let data_path = dir.join(DATA_FILE);
        let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_slice(&meta_bytes).map_err(|e| Error::format("volume metadata", &meta_path, e))?;
        if meta.dtype != "float32" {
            return Err(Error::format("volume metadata", &meta_path, format!("unsupported dtype {:?}", meta.dtype)));
        }
        if meta.order != "zyx" {
            return Err(Error::format("volume metadata", &meta_path, format!("unsupported order {:?}", meta.order)));
        }
        let raw = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let expected = meta.shape.iter().product::<usize>();
        if raw.len() % 4 != 0 || raw.len() / 4 != expected {
            return Err(Error::LengthMismatch {
                shape: meta.shape,
                expected,
                found: raw.len() / 4,
            });
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let vol = ScoreVolume::new(meta.shape, meta.voxel_size_nm, meta.offset_nm, data)?;
        let outside = vol.out_of_range_count();
        if outside > 0 {
            log::warn!("{}: {outside} scores lie outside [0, 1]", dir.display());
        }
        Ok(vol)
    }

    /// Writes the container, replacing any existing one at `dir` atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = Meta {
            shape: self.shape,
            voxel_size_nm: self.voxel_size,
            offset_nm: self.offset,
            dtype: "float32".into(),
            order: "zyx".into(),
        };
        let meta_bytes = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
        let mut raw = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        fsutil::replace_dir_atomic(dir, |staging| {
            let m = staging.join(META_FILE);
            fs::write(&m, &meta_bytes).map_err(|e| Error::io(&m, e))?;
            let d = staging.join(DATA_FILE);
            fs::write(&d, &raw).map_err(|e| Error::io(&d, e))
        })
    }
}

pub fn load_volume(dir: &Path) -> Result<ScoreVolume> {
    ScoreVolume::load(dir)
}

pub fn save_volume(vol: &ScoreVolume, dir: &Path) -> Result<()> {
    vol.save(dir)
}
