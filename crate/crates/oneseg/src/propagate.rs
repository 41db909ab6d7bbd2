//! Bidirectional mask propagation at test time.
//!
//! Starting from the expert-annotated representative slice, the annotation
//! walks outward one slice at a time in both directions. Every step matches
//! the target slice's true image features against the adjacent annotated
//! slice's true image features and soft-copies the adjacent mask; the mask
//! itself stays soft between steps and is only binarized once, after the
//! final upsample to full resolution. Features never come from
//! reconstructed intensities here, only the masks chain.

use rayon::prelude::*;

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::gabor::{apply_bottleneck, GaborBank};
use crate::reconstruct::{reconstruction_factors, soft_copy};
use crate::voldata::{resize_slice, FeatureMap, Grid2, Interp, Mask, SliceOrigin, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// The representative slice itself.
    Source,
    /// Propagated toward higher slice indices.
    Up,
    /// Propagated toward lower slice indices.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceProvenance {
    /// Chain length from the representative slice.
    pub distance: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct PropagationResult {
    /// Binarized full-resolution mask; the representative slice carries the
    /// expert annotation unchanged.
    pub mask: Mask,
    pub provenance: Vec<SliceProvenance>,
}

/// True image features for every slice of a volume, in slice order.
pub fn encode_slices(
    volume: &Volume,
    bank: &GaborBank,
    params: &EncoderParams,
) -> Result<Vec<FeatureMap>> {
    (0..volume.meta.depth)
        .into_par_iter()
        .map(|i| encode(&apply_bottleneck(&volume.slice_grid(i), bank), params))
        .collect()
}

/// One propagation step: factors from the target and reference features,
/// soft copy of the reference mask. The mask grid is pixel-major with
/// `channels` interleaved values per pixel, and stays in [0, 1].
pub fn propagate_step(
    prev_mask_grid: &[f32],
    prev_feat: &FeatureMap,
    tar_feat: &FeatureMap,
    channels: usize,
    window: usize,
) -> Result<Vec<f32>> {
    let factors = reconstruction_factors(tar_feat, prev_feat, window)?;
    soft_copy(&factors, prev_mask_grid, channels)
}

/// Propagates the representative slice's expert mask across the whole
/// volume and binarizes the result at `threshold`.
///
/// `rep_mask` is a single-slice mask matching the volume's slice size. With
/// more than one channel the output is one-hot per pixel: the strongest
/// channel above the threshold wins, otherwise the pixel stays background.
pub fn propagate_volume(
    volume: &Volume,
    rep: usize,
    rep_mask: &Mask,
    params: &EncoderParams,
    bank: &GaborBank,
    window: usize,
    threshold: f32,
) -> Result<PropagationResult> {
    let d = volume.meta.depth;
    if rep >= d {
        return Err(Error::validation(format!(
            "representative index {rep} out of range for depth {d}"
        )));
    }
    if rep_mask.meta.depth != 1
        || rep_mask.meta.height != volume.meta.height
        || rep_mask.meta.width != volume.meta.width
    {
        return Err(Error::shape(
            "representative mask",
            format!("1x{}x{}", volume.meta.height, volume.meta.width),
            format!(
                "{}x{}x{}",
                rep_mask.meta.depth, rep_mask.meta.height, rep_mask.meta.width
            ),
        ));
    }
    if rep_mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::validation("representative mask must be binary"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!(
            "binarization threshold {threshold} outside (0, 1)"
        )));
    }
    let channels = rep_mask.channels;

    let feats = encode_slices(volume, bank, params)?;
    let (gh, gw) = (feats[0].height, feats[0].width);

    // expert mask to the feature grid, nearest so it stays binary
    let mut rep_grid = vec![0.0f32; gh * gw * channels];
    for c in 0..channels {
        let small = resize_slice(
            &rep_mask.channel_slice_grid(0, c),
            (gh, gw),
            Interp::Nearest,
        )?;
        for p in 0..gh * gw {
            rep_grid[p * channels + c] = small.data[p];
        }
    }

    // the two chains are independent; both start at the rep grid mask
    let mut soft: Vec<Option<Vec<f32>>> = vec![None; d];
    for i in rep + 1..d {
        let prev = match &soft[i - 1] {
            Some(m) => m,
            None => &rep_grid,
        };
        soft[i] = Some(propagate_step(prev, &feats[i - 1], &feats[i], channels, window)?);
    }
    for i in (0..rep).rev() {
        let prev = match &soft[i + 1] {
            Some(m) => m,
            None => &rep_grid,
        };
        soft[i] = Some(propagate_step(prev, &feats[i + 1], &feats[i], channels, window)?);
    }

    let (h, w) = (volume.meta.height, volume.meta.width);
    let vox = h * w;
    let mut data = vec![0.0f32; d * vox * channels];
    let mut origin = vec![SliceOrigin::Reconstructed; d];
    let mut provenance = Vec::with_capacity(d);
    for i in 0..d {
        if i == rep {
            let start = i * vox * channels;
            data[start..start + vox * channels].copy_from_slice(rep_mask.data());
            origin[i] = SliceOrigin::GroundTruth;
            provenance.push(SliceProvenance {
                distance: 0,
                direction: Direction::Source,
            });
            continue;
        }
        let grid_mask = soft[i].as_ref().expect("every non-rep slice propagated");
        let mut full = Vec::with_capacity(channels);
        for c in 0..channels {
            let plane: Vec<f32> = (0..gh * gw).map(|p| grid_mask[p * channels + c]).collect();
            full.push(resize_slice(
                &Grid2::new(gh, gw, plane),
                (h, w),
                Interp::Bilinear,
            )?);
        }
        for p in 0..vox {
            let base = (i * vox + p) * channels;
            if channels == 1 {
                data[base] = if full[0].data[p] >= threshold { 1.0 } else { 0.0 };
            } else {
                let mut best = (0usize, threshold);
                let mut hit = false;
                for (c, plane) in full.iter().enumerate() {
                    if plane.data[p] >= best.1 && (!hit || plane.data[p] > best.1) {
                        best = (c, plane.data[p]);
                        hit = true;
                    }
                }
                if hit {
                    data[base + best.0] = 1.0;
                }
            }
        }
        provenance.push(SliceProvenance {
            distance: rep.abs_diff(i),
            direction: if i > rep { Direction::Up } else { Direction::Down },
        });
    }
    let mask = Mask::new(volume.meta.clone(), channels, data, origin)?;
    Ok(PropagationResult { mask, provenance })
}
