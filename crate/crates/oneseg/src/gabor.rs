//! Fixed Gabor filter-bank bottleneck.
//!
//! Every slice passes through a bank of S scales x O orientations before it
//! reaches the trainable encoder, biasing the learned features toward edges
//! and texture instead of raw intensity. The bank is built once and never
//! trained.
//!
//! Kernel construction, for orientation angle t and wavelength l:
//!
//! ```text
//! x' =  x cos t + y sin t        y' = -x sin t + y cos t
//! g(x, y) = exp(-(x'^2 + g^2 y'^2) / (2 s^2)) * cos(2 pi x' / l + psi)
//! ```
//!
//! with sigma s = 0.56 l, aspect g = 0.5, phase psi = 0 (cosine part). Each
//! kernel is mean-subtracted so constant regions respond with zero, then
//! scaled to unit L2 norm so all scales contribute comparable response
//! energy downstream.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voldata::Grid2;

pub const SIGMA_RATIO: f64 = 0.56;
pub const ASPECT: f64 = 0.5;
/// Wavelength multiplier between consecutive scales.
pub const SCALE_RATIO: f64 = 2.0;

/// Which part of the complex Gabor response to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaborPart {
    /// Cosine-phase response; linear in the input, usable for training.
    Real,
    /// Quadrature energy sqrt(real^2 + imag^2); not differentiable here,
    /// so feature extraction only.
    Magnitude,
}

impl GaborPart {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(GaborPart::Real),
            "magnitude" => Ok(GaborPart::Magnitude),
            other => Err(Error::validation(format!(
                "unknown gabor part `{other}` (expected real or magnitude)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaborPart::Real => "real",
            GaborPart::Magnitude => "magnitude",
        }
    }
}

/// Bank parameters; see [`build_bank`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaborConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Kernel side length, odd.
    pub kernel: usize,
    /// Wavelength of the finest scale, in pixels.
    pub wavelength: f64,
    pub part: GaborPart,
}

impl Default for GaborConfig {
    fn default() -> Self {
        GaborConfig {
            scales: 4,
            orientations: 8,
            kernel: 9,
            wavelength: 4.0,
            part: GaborPart::Real,
        }
    }
}

/// An immutable bank of zero-mean, unit-norm Gabor kernels.
#[derive(Debug, Clone)]
pub struct GaborBank {
    pub config: GaborConfig,
    /// Scale-major kernels: index s * O + o, each `kernel * kernel` long.
    kernels: Vec<Vec<f32>>,
    /// Sine-phase partners, present only for [`GaborPart::Magnitude`].
    quad: Option<Vec<Vec<f32>>>,
}

impl GaborBank {
    /// Output channels produced per slice.
    pub fn channels(&self) -> usize {
        self.config.scales * self.config.orientations
    }

    pub fn kernel(&self, scale: usize, orientation: usize) -> &[f32] {
        &self.kernels[scale * self.config.orientations + orientation]
    }

    pub fn kernels(&self) -> &[Vec<f32>] {
        &self.kernels
    }

    pub fn wavelength(&self, scale: usize) -> f64 {
        self.config.wavelength * SCALE_RATIO.powi(scale as i32)
    }
}

/// Per-slice bank responses, `height * width * channels` with the channel
/// index fastest; channels are ordered scale-major then orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborStack {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl GaborStack {
    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Builds the filter bank: orientations evenly spaced over `[0, pi)`,
/// wavelengths geometric with ratio 2 starting at `config.wavelength`.
pub fn build_bank(config: &GaborConfig) -> Result<GaborBank> {
    if config.scales < 1 || config.orientations < 1 {
        return Err(Error::validation(
            "gabor bank needs at least one scale and one orientation",
        ));
    }
    if config.kernel % 2 == 0 || config.kernel == 0 {
        return Err(Error::validation(format!(
            "gabor kernel size must be odd, got {}",
            config.kernel
        )));
    }
    if !(config.wavelength > 0.0) || !config.wavelength.is_finite() {
        return Err(Error::validation(format!(
            "gabor base wavelength must be positive, got {}",
            config.wavelength
        )));
    }
    let mut kernels = Vec::with_capacity(config.scales * config.orientations);
    let mut quad = Vec::new();
    for s in 0..config.scales {
        let lambda = config.wavelength * SCALE_RATIO.powi(s as i32);
        for o in 0..config.orientations {
            let theta = o as f64 * std::f64::consts::PI / config.orientations as f64;
            kernels.push(make_kernel(config.kernel, theta, lambda, 0.0));
            if config.part == GaborPart::Magnitude {
                quad.push(make_kernel(
                    config.kernel,
                    theta,
                    lambda,
                    std::f64::consts::FRAC_PI_2,
                ));
            }
        }
    }
    Ok(GaborBank {
        config: config.clone(),
        kernels,
        quad: (config.part == GaborPart::Magnitude).then_some(quad),
    })
}

/// Evaluates one kernel in f64, zero-means it, scales to unit L2 norm, then
/// re-centers after the f32 cast so the final sum stays within 1e-6.
fn make_kernel(k: usize, theta: f64, lambda: f64, psi: f64) -> Vec<f32> {
    let r = (k / 2) as i64;
    let sigma = SIGMA_RATIO * lambda;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut raw = Vec::with_capacity(k * k);
    for y in -r..=r {
        for x in -r..=r {
            let (xf, yf) = (x as f64, y as f64);
            let xr = xf * cos_t + yf * sin_t;
            let yr = -xf * sin_t + yf * cos_t;
            let envelope = (-(xr * xr + ASPECT * ASPECT * yr * yr) / (2.0 * sigma * sigma)).exp();
            raw.push(envelope * (2.0 * std::f64::consts::PI * xr / lambda + psi).cos());
        }
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    for v in &mut raw {
        *v -= mean;
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut raw {
            *v /= norm;
        }
    }
    let mut out: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    let residual = (out.iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64) as f32;
    for v in &mut out {
        *v -= residual;
    }
    out
}

/// Mirrors an out-of-range index back into `[0, n)` with edge duplication:
/// -1 maps to 0, -2 to 1, n to n-1, n+1 to n-2.
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    debug_assert!((0..n).contains(&j), "reflect out of range: kernel wider than slice");
    j as usize
}

/// Same-size 2-D correlation of `src` with one `k * k` kernel under reflect
/// padding.
pub(crate) fn conv2d_reflect(src: &Grid2, kernel: &[f32], k: usize) -> Vec<f32> {
    let r = (k / 2) as i64;
    let mut out = Vec::with_capacity(src.h * src.w);
    for y in 0..src.h as i64 {
        for x in 0..src.w as i64 {
            let mut acc = 0.0f32;
            for ky in 0..k as i64 {
                let sy = reflect_index(y + ky - r, src.h);
                for kx in 0..k as i64 {
                    let sx = reflect_index(x + kx - r, src.w);
                    acc += src.data[sy * src.w + sx as usize] * kernel[(ky * k as i64 + kx) as usize];
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Applies the full bank to one slice, producing the bottleneck stack.
pub fn apply_bottleneck(slice: &Grid2, bank: &GaborBank) -> GaborStack {
    let k = bank.config.kernel;
    let channels = bank.channels();
    let planes: Vec<Vec<f32>> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let real = conv2d_reflect(slice, &bank.kernels[c], k);
            match &bank.quad {
                None => real,
                Some(quad) => {
                    let imag = conv2d_reflect(slice, &quad[c], k);
                    real.iter()
                        .zip(&imag)
                        .map(|(a, b)| (a * a + b * b).sqrt())
                        .collect()
                }
            }
        })
        .collect();
    let mut data = vec![0.0f32; slice.h * slice.w * channels];
    for (c, plane) in planes.iter().enumerate() {
        for (p, &v) in plane.iter().enumerate() {
            data[p * channels + c] = v;
        }
    }
    GaborStack {
        height: slice.h,
        width: slice.w,
        channels,
        data,
    }
}
