//! Core data model and file I/O: volumes, masks, feature maps, manifests.
//!
//! Intensities are per-volume min-max normalized to `[0, 1]` on load; a
//! constant volume maps to all zeros. All types are immutable after
//! construction and safe to share read-only across workers.

pub mod manifest;
pub mod oseg;

use std::path::Path;

use crate::error::{Error, Result};

pub use manifest::{DatasetManifest, ManifestEntry, ManifestRole};

/// Spatial metadata of a volume: slice count, slice dims, voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    pub id: String,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Physical units per voxel as (sz, sy, sx).
    pub spacing: [f64; 3],
}

impl VolumeMeta {
    pub fn new(id: impl Into<String>, depth: usize, height: usize, width: usize) -> Result<Self> {
        let meta = VolumeMeta {
            id: id.into(),
            depth,
            height,
            width,
            spacing: [1.0, 1.0, 1.0],
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.spacing = spacing;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::validation("volume depth must be >= 1"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::validation(format!(
                "slice dims must be >= 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::validation(format!(
                "spacing components must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn voxels_per_slice(&self) -> usize {
        self.height * self.width
    }
}

/// An ordered stack of grayscale slices, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub meta: VolumeMeta,
    data: Vec<f32>,
}

impl Volume {
    /// Builds a volume from already-normalized data.
    pub fn new(meta: VolumeMeta, data: Vec<f32>) -> Result<Self> {
        meta.validate()?;
        let expected = meta.depth * meta.voxels_per_slice();
        if data.len() != expected {
            return Err(Error::shape(
                "volume data",
                format!("{expected} voxels"),
                format!("{} voxels", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::validation(
                "volume intensities must be finite and in [0, 1]",
            ));
        }
        Ok(Volume { meta, data })
    }

    /// Builds a volume from raw intensities, min-max normalizing per volume.
    /// A constant volume maps to all zeros.
    pub fn from_raw(meta: VolumeMeta, raw: Vec<f32>) -> Result<Self> {
        meta.validate()?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("raw volume contains non-finite values"));
        }
        let lo = raw.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = raw.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let data = if hi > lo {
            let range = hi - lo;
            raw.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Volume::new(meta, data)
    }

    pub fn slice(&self, d: usize) -> &[f32] {
        let n = self.meta.voxels_per_slice();
        &self.data[d * n..(d + 1) * n]
    }

    pub fn slice_grid(&self, d: usize) -> Grid2 {
        Grid2 {
            h: self.meta.height,
            w: self.meta.width,
            data: self.slice(d).to_vec(),
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Where a mask slice came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceOrigin {
    GroundTruth,
    Reconstructed,
    Absent,
}

/// A per-slice label map with `channels` class channels, values in `[0, 1]`.
///
/// Ground-truth slices contain only `{0, 1}`; reconstructed slices may be
/// soft until binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub meta: VolumeMeta,
    pub channels: usize,
    data: Vec<f32>,
    origin: Vec<SliceOrigin>,
}

impl Mask {
    pub fn new(
        meta: VolumeMeta,
        channels: usize,
        data: Vec<f32>,
        origin: Vec<SliceOrigin>,
    ) -> Result<Self> {
        meta.validate()?;
        if channels < 1 {
            return Err(Error::validation("mask must have at least one channel"));
        }
        let expected = meta.depth * meta.voxels_per_slice() * channels;
        if data.len() != expected {
            return Err(Error::shape(
                "mask data",
                format!("{expected} values"),
                format!("{} values", data.len()),
            ));
        }
        if origin.len() != meta.depth {
            return Err(Error::shape(
                "mask origin",
                format!("{} slices", meta.depth),
                format!("{} slices", origin.len()),
            ));
        }
        let mask = Mask {
            meta,
            channels,
            data,
            origin,
        };
        mask.validate_values()?;
        Ok(mask)
    }

    /// All-background mask with every slice marked absent.
    pub fn empty(meta: VolumeMeta, channels: usize) -> Result<Self> {
        let n = meta.depth * meta.voxels_per_slice() * channels;
        let origin = vec![SliceOrigin::Absent; meta.depth];
        Mask::new(meta, channels, vec![0.0; n], origin)
    }

    fn validate_values(&self) -> Result<()> {
        if self
            .data
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::validation("mask values must be in [0, 1]"));
        }
        let per_slice = self.meta.voxels_per_slice() * self.channels;
        for (d, chunk) in self.data.chunks(per_slice).enumerate() {
            if self.origin[d] == SliceOrigin::GroundTruth
                && chunk.iter().any(|&v| v != 0.0 && v != 1.0)
            {
                return Err(Error::validation(format!(
                    "ground-truth mask slice {d} contains non-binary values"
                )));
            }
        }
        if self.channels > 1 {
            let vox = self.meta.voxels_per_slice();
            for d in 0..self.meta.depth {
                for p in 0..vox {
                    let base = (d * vox + p) * self.channels;
                    let sum: f32 = self.data[base..base + self.channels].iter().sum();
                    if sum > 1.0 + 1e-5 {
                        return Err(Error::validation(format!(
                            "mask channel values at slice {d} pixel {p} sum to {sum} > 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self, d: usize) -> SliceOrigin {
        self.origin[d]
    }

    /// Channel-0 slice as a 2-D grid.
    pub fn slice_grid(&self, d: usize) -> Grid2 {
        self.channel_slice_grid(d, 0)
    }

    pub fn channel_slice_grid(&self, d: usize, c: usize) -> Grid2 {
        let vox = self.meta.voxels_per_slice();
        let mut data = Vec::with_capacity(vox);
        for p in 0..vox {
            data.push(self.data[(d * vox + p) * self.channels + c]);
        }
        Grid2 {
            h: self.meta.height,
            w: self.meta.width,
            data,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel-0 foreground indicator at the 0.5 threshold.
    pub fn binarized(&self, threshold: f32) -> Vec<bool> {
        let vox = self.meta.voxels_per_slice();
        (0..self.meta.depth * vox)
            .map(|p| self.data[p * self.channels] >= threshold)
            .collect()
    }
}

/// Per-slice feature grid produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Input pixels per feature pixel.
    pub stride: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        stride: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "feature map",
                format!("{}x{}x{}", height, width, channels),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature map contains non-finite values"));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn scaled(&self, factor: f32) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            stride: self.stride,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// A 2-D scalar grid; the working currency for slices and per-slice masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Grid2 {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w);
        Grid2 { h, w, data }
    }

    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Grid2 {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

/// Interpolation mode for [`resize_slice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// For intensities.
    Bilinear,
    /// For masks.
    Nearest,
}

/// Resizes a slice grid to `(h, w)` using half-pixel-center sampling.
///
/// A resize to the source size is the identity map.
pub fn resize_slice(src: &Grid2, target: (usize, usize), interp: Interp) -> Result<Grid2> {
    let (th, tw) = target;
    if th < 1 || tw < 1 {
        return Err(Error::validation("resize target dims must be >= 1"));
    }
    let mut out = Vec::with_capacity(th * tw);
    let sy = src.h as f64 / th as f64;
    let sx = src.w as f64 / tw as f64;
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.h - 1) as f64);
        for x in 0..tw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.w - 1) as f64);
            let v = match interp {
                Interp::Bilinear => {
                    let y0 = fy.floor() as usize;
                    let x0 = fx.floor() as usize;
                    let y1 = (y0 + 1).min(src.h - 1);
                    let x1 = (x0 + 1).min(src.w - 1);
                    let dy = (fy - y0 as f64) as f32;
                    let dx = (fx - x0 as f64) as f32;
                    let a = src.get(y0, x0) * (1.0 - dx) + src.get(y0, x1) * dx;
                    let b = src.get(y1, x0) * (1.0 - dx) + src.get(y1, x1) * dx;
                    a * (1.0 - dy) + b * dy
                }
                Interp::Nearest => {
                    let ny = (fy + 0.5).floor().min((src.h - 1) as f64) as usize;
                    let nx = (fx + 0.5).floor().min((src.w - 1) as f64) as usize;
                    src.get(ny, nx)
                }
            };
            out.push(v);
        }
    }
    Ok(Grid2::new(th, tw, out))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let tensor = oseg::read(path)?;
    if tensor.dims.len() != 3 {
        return Err(Error::shape(
            "volume rank",
            "3 (slice, row, col)",
            tensor.dims.len(),
        ));
    }
    let (d, h, w) = (tensor.dims[0], tensor.dims[1], tensor.dims[2]);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".to_string());
    let meta = VolumeMeta::new(id, d, h, w)?;
    let raw = match tensor.payload {
        oseg::Payload::F32(v) => v,
        oseg::Payload::U8(v) => v.into_iter().map(|b| b as f32).collect(),
    };
    Volume::from_raw(meta, raw)
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let tensor = oseg::OsegTensor::new(
        vec![v.meta.depth, v.meta.height, v.meta.width],
        oseg::Payload::F32(v.data.clone()),
    )?;
    oseg::write(path, &tensor)
}

/// Loads a mask and checks its dims against `meta`. Every slice is marked
/// ground-truth, so non-binary payloads are rejected.
pub fn load_mask(path: &Path, meta: &VolumeMeta) -> Result<Mask> {
    let tensor = oseg::read(path)?;
    let (dims, _) = mask_dims(&tensor)?;
    if dims != (meta.depth, meta.height, meta.width) {
        return Err(Error::shape(
            "mask dims",
            format!("{}x{}x{}", meta.depth, meta.height, meta.width),
            format!("{}x{}x{}", dims.0, dims.1, dims.2),
        ));
    }
    mask_from_tensor(tensor, meta.clone())
}

/// Loads a mask without prior shape knowledge; metadata comes from the
/// tensor dims, the id from the file stem.
pub fn load_mask_auto(path: &Path) -> Result<Mask> {
    let tensor = oseg::read(path)?;
    let (dims, _) = mask_dims(&tensor)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mask".to_string());
    let meta = VolumeMeta::new(id, dims.0, dims.1, dims.2)?;
    mask_from_tensor(tensor, meta)
}

fn mask_dims(tensor: &oseg::OsegTensor) -> Result<((usize, usize, usize), usize)> {
    match tensor.dims.len() {
        3 => Ok(((tensor.dims[0], tensor.dims[1], tensor.dims[2]), 1)),
        4 => Ok((
            (tensor.dims[0], tensor.dims[1], tensor.dims[2]),
            tensor.dims[3],
        )),
        n => Err(Error::shape("mask rank", "3 or 4", n)),
    }
}

fn mask_from_tensor(tensor: oseg::OsegTensor, meta: VolumeMeta) -> Result<Mask> {
    let (_, channels) = mask_dims(&tensor)?;
    let data: Vec<f32> = match tensor.payload {
        oseg::Payload::U8(v) => {
            if let Some(bad) = v.iter().find(|&&b| b > 1) {
                return Err(Error::validation(format!(
                    "mask payload contains value {bad}, expected 0 or 1"
                )));
            }
            v.into_iter().map(|b| b as f32).collect()
        }
        oseg::Payload::F32(v) => {
            if v.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::validation(
                    "f32 mask payload must contain only 0.0 and 1.0",
                ));
            }
            v
        }
    };
    let origin = vec![SliceOrigin::GroundTruth; meta.depth];
    Mask::new(meta, channels, data, origin)
}

/// Writes a mask as a u8 OSEG tensor. Values must be binary.
pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(m.data.len());
    for &v in &m.data {
        if v == 0.0 {
            payload.push(0u8);
        } else if v == 1.0 {
            payload.push(1u8);
        } else {
            return Err(Error::validation(format!(
                "cannot save soft mask value {v}; binarize first"
            )));
        }
    }
    let dims = if m.channels == 1 {
        vec![m.meta.depth, m.meta.height, m.meta.width]
    } else {
        vec![m.meta.depth, m.meta.height, m.meta.width, m.channels]
    };
    let tensor = oseg::OsegTensor::new(dims, oseg::Payload::U8(payload))?;
    oseg::write(path, &tensor)
}
