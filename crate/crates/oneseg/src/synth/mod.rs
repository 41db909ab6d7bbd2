//! Synthetic volume generator with exact ground-truth masks.
//!
//! Each volume is a textured background plus a moving, optionally growing
//! foreground shape carrying its own texture. The foreground texture
//! translates rigidly with the shape, so consecutive slices genuinely
//! correspond and the self-learning task is solvable. Masks are exact
//! analytic indicator rasterizations; intensities are textured but the mask
//! is never anti-aliased.
//!
//! The submodule [`oracles`] holds the brute-force reference
//! implementations (dense attention, exhaustive representative scores,
//! exhaustive surface distance) that tests compare production code against.

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voldata::{Mask, SliceOrigin, Volume, VolumeMeta};

pub use oracles::{oracle_assd, oracle_dense_attention, oracle_repscore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Disk,
    Ellipse,
    TwoBlob,
}

impl ShapeFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeFamily::Disk),
            "ellipse" => Ok(ShapeFamily::Ellipse),
            "two-blob" => Ok(ShapeFamily::TwoBlob),
            other => Err(Error::validation(format!(
                "unknown shape `{other}`; expected disk, ellipse, or two-blob"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Disk => "disk",
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::TwoBlob => "two-blob",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub shape: ShapeFamily,
    /// Per-slice shape translation in pixels, (dy, dx).
    pub drift: (f64, f64),
    /// Per-slice base-radius growth in pixels.
    pub growth: f64,
    /// Texture contrast around the region means.
    pub noise_amplitude: f64,
    /// Texture correlation length in pixels.
    pub correlation: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            depth: 12,
            height: 64,
            width: 64,
            shape: ShapeFamily::Disk,
            drift: (0.5, 0.8),
            growth: 0.15,
            noise_amplitude: 0.35,
            correlation: 4,
            seed: 0,
        }
    }
}

/// Shape geometry on one slice: the drifting center and grown base radius.
#[derive(Debug, Clone, Copy)]
struct SliceShape {
    cy: f64,
    cx: f64,
    r: f64,
}

impl SynthConfig {
    /// Base radius of the shape on slice 0, scaled to the slice size.
    pub fn base_radius(&self) -> f64 {
        0.22 * self.height.min(self.width) as f64
    }

    fn slice_shape(&self, d: usize) -> SliceShape {
        let half_span = (self.depth - 1) as f64 / 2.0;
        let cy = self.height as f64 / 2.0 + self.drift.0 * (d as f64 - half_span);
        let cx = self.width as f64 / 2.0 + self.drift.1 * (d as f64 - half_span);
        SliceShape {
            cy,
            cx,
            r: self.base_radius() + self.growth * d as f64,
        }
    }

    /// Largest distance from the shape center to any foreground pixel.
    fn reach(&self, r: f64) -> (f64, f64) {
        match self.shape {
            ShapeFamily::Disk => (r, r),
            ShapeFamily::Ellipse => (0.8 * r, 1.25 * r),
            ShapeFamily::TwoBlob => (0.65 * r, 0.6 * r + 0.65 * r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 4 {
            return Err(Error::validation(format!(
                "synthetic volumes need depth >= 4 for training chains, got {}",
                self.depth
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::validation("synthetic slice dims must be >= 8x8"));
        }
        if !(self.noise_amplitude >= 0.0) || self.noise_amplitude > 1.0 {
            return Err(Error::validation("noise amplitude must be in [0, 1]"));
        }
        if self.correlation < 1 {
            return Err(Error::validation("texture correlation must be >= 1 px"));
        }
        let last_radius = self.base_radius() + self.growth * (self.depth - 1) as f64;
        if last_radius < 2.0 {
            return Err(Error::validation("shape shrinks away before the last slice"));
        }
        for d in 0..self.depth {
            let s = self.slice_shape(d);
            let (ry, rx) = self.reach(s.r);
            let margin = 2.0;
            if s.cy - ry < margin
                || s.cy + ry > (self.height - 1) as f64 - margin
                || s.cx - rx < margin
                || s.cx + rx > (self.width - 1) as f64 - margin
            {
                return Err(Error::validation(format!(
                    "shape leaves the 2 px border margin on slice {d}; reduce drift or growth"
                )));
            }
        }
        Ok(())
    }

    fn inside(&self, shape: SliceShape, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - shape.cy, x - shape.cx);
        match self.shape {
            ShapeFamily::Disk => dy * dy + dx * dx <= shape.r * shape.r,
            ShapeFamily::Ellipse => {
                let (b, a) = (0.8 * shape.r, 1.25 * shape.r);
                (dy / b) * (dy / b) + (dx / a) * (dx / a) <= 1.0
            }
            ShapeFamily::TwoBlob => {
                let (r1, r2) = (0.65 * shape.r, 0.5 * shape.r);
                let off = 0.6 * shape.r;
                let d1 = dy * dy + (dx - off) * (dx - off);
                let d2 = dy * dy + (dx + off) * (dx + off);
                d1 <= r1 * r1 || d2 <= r2 * r2
            }
        }
    }
}

/// Zero-mean, unit-variance periodic noise field: white noise box-blurred
/// three times on the torus.
fn periodic_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, corr: usize) -> Vec<f64> {
    let mut field: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>() - 0.5).collect();
    let radius = (corr / 2).max(1);
    for _ in 0..3 {
        let mut rows = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let sx = (x + w + k - radius) % w;
                    acc += field[y * w + sx];
                }
                rows[y * w + x] = acc / (2 * radius + 1) as f64;
            }
        }
        for x in 0..w {
            for y in 0..h {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let sy = (y + h + k - radius) % h;
                    acc += rows[sy * w + x];
                }
                field[y * w + x] = acc / (2 * radius + 1) as f64;
            }
        }
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let std = var.sqrt().max(1e-12);
    for v in &mut field {
        *v = (*v - mean) / std;
    }
    field
}

/// Bilinear sample of a periodic field at a fractional position.
fn sample_wrapped(field: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let yw = y.rem_euclid(h as f64);
    let xw = x.rem_euclid(w as f64);
    let y0 = yw.floor() as usize % h;
    let x0 = xw.floor() as usize % w;
    let y1 = (y0 + 1) % h;
    let x1 = (x0 + 1) % w;
    let dy = yw - yw.floor();
    let dx = xw - xw.floor();
    let a = field[y0 * w + x0] * (1.0 - dx) + field[y0 * w + x1] * dx;
    let b = field[y1 * w + x0] * (1.0 - dx) + field[y1 * w + x1] * dx;
    a * (1.0 - dy) + b * dy
}

/// Generates one volume and its exact mask, deterministically per seed.
pub fn generate(cfg: &SynthConfig) -> Result<(Volume, Mask)> {
    cfg.validate()?;
    let (d, h, w) = (cfg.depth, cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bg_field = periodic_noise(&mut rng, h, w, cfg.correlation);
    let fg_field = periodic_noise(&mut rng, h, w, cfg.correlation);

    let mut voxels = Vec::with_capacity(d * h * w);
    let mut labels = Vec::with_capacity(d * h * w);
    let base = cfg.slice_shape(0);
    for di in 0..d {
        let shape = cfg.slice_shape(di);
        // foreground texture rides along with the shape center
        let (sy, sx) = (shape.cy - base.cy, shape.cx - base.cx);
        for y in 0..h {
            for x in 0..w {
                let fore = cfg.inside(shape, y as f64, x as f64);
                let v = if fore {
                    0.62 + cfg.noise_amplitude
                        * 0.4
                        * sample_wrapped(&fg_field, h, w, y as f64 - sy, x as f64 - sx)
                } else {
                    0.40 + cfg.noise_amplitude * 0.4 * bg_field[y * w + x]
                };
                voxels.push(v.clamp(0.0, 1.0) as f32);
                labels.push(if fore { 1.0f32 } else { 0.0 });
            }
        }
    }
    let meta = VolumeMeta::new(format!("synth-{}", cfg.seed), d, h, w)?;
    let volume = Volume::new(meta.clone(), voxels)?;
    let mask = Mask::new(meta, 1, labels, vec![SliceOrigin::GroundTruth; d])?;
    Ok((volume, mask))
}
