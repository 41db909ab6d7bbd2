//! Brute-force reference implementations used only as comparison targets in
//! tests. Everything here is f64, single-threaded, and written for
//! obviousness rather than speed; none of it is called by the production
//! pipeline.

use crate::error::{Error, Result};
use crate::voldata::{FeatureMap, Mask};

/// Dense attention weights between a query and key feature map.
///
/// For every target pixel the full window of logits is formed as f64 channel
/// dot products, entries outside the map are dropped, and a max-subtracted
/// softmax is taken over the remainder. Returns, per target pixel in
/// row-major order, the `(source_pixel, weight)` pairs of its clipped
/// window, window-row-major.
pub fn oracle_dense_attention(
    query: &FeatureMap,
    key: &FeatureMap,
    window: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::validation("attention window must be odd"));
    }
    if query.height != key.height || query.width != key.width || query.channels != key.channels {
        return Err(Error::shape(
            "dense attention oracle",
            format!("{:?}", [query.height, query.width, query.channels]),
            format!("{:?}", [key.height, key.width, key.channels]),
        ));
    }
    let (h, w, c) = (query.height, query.width, query.channels);
    let half = (window / 2) as i64;
    let mut out = Vec::with_capacity(h * w);
    for ty in 0..h as i64 {
        for tx in 0..w as i64 {
            let q = query.at(ty as usize, tx as usize);
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for oy in -half..=half {
                for ox in -half..=half {
                    let (sy, sx) = (ty + oy, tx + ox);
                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let k = key.at(sy as usize, sx as usize);
                    let mut logit = 0.0f64;
                    for ch in 0..c {
                        logit += q[ch] as f64 * k[ch] as f64;
                    }
                    entries.push(((sy as usize) * w + sx as usize, logit));
                }
            }
            let max = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for e in &mut entries {
                e.1 = (e.1 - max).exp();
                denom += e.1;
            }
            for e in &mut entries {
                e.1 /= denom;
            }
            out.push(entries);
        }
    }
    Ok(out)
}

/// Exhaustive representative scores over a member set.
///
/// `members[i]`'s score is the sum, over every member `j` including itself,
/// of the cosine similarity between the flattened feature maps, all in f64.
pub fn oracle_repscore(feats: &[FeatureMap], members: &[usize]) -> Result<Vec<f64>> {
    for &m in members {
        if m >= feats.len() {
            return Err(Error::validation(format!(
                "member index {m} out of range for {} feature maps",
                feats.len()
            )));
        }
    }
    let cosine = |a: &FeatureMap, b: &FeatureMap| -> f64 {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (x, y) in a.data().iter().zip(b.data()) {
            let (x, y) = (*x as f64, *y as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot / (na.sqrt() * nb.sqrt())
    };
    Ok(members
        .iter()
        .map(|&i| members.iter().map(|&j| cosine(&feats[i], &feats[j])).sum())
        .collect())
}

/// Exhaustive average symmetric surface distance between two binary masks.
///
/// Surface voxels are foreground voxels with at least one 6-connected
/// background neighbor, where outside the volume counts as background.
/// Distances are spacing-weighted Euclidean; each surface voxel contributes
/// the square root of its minimum squared distance to the other surface,
/// summed in volume scan order.
pub fn oracle_assd(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<f64> {
    if pred.meta.depth != gt.meta.depth
        || pred.meta.height != gt.meta.height
        || pred.meta.width != gt.meta.width
    {
        return Err(Error::shape(
            "surface distance oracle",
            format!("{:?}", [pred.meta.depth, pred.meta.height, pred.meta.width]),
            format!("{:?}", [gt.meta.depth, gt.meta.height, gt.meta.width]),
        ));
    }
    let dims = (pred.meta.depth, pred.meta.height, pred.meta.width);
    let sa = surface_voxels(&pred.binarized(0.5), dims);
    let sb = surface_voxels(&gt.binarized(0.5), dims);
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::validation(
            "surface distance is undefined for an empty mask",
        ));
    }
    let one_sided = |from: &[(usize, usize, usize)], to: &[(usize, usize, usize)]| -> f64 {
        let mut total = 0.0f64;
        for &(z, y, x) in from {
            let mut best = f64::INFINITY;
            for &(tz, ty, tx) in to {
                let dz = (z as f64 - tz as f64) * spacing[0];
                let dy = (y as f64 - ty as f64) * spacing[1];
                let dx = (x as f64 - tx as f64) * spacing[2];
                let sq = dz * dz + dy * dy + dx * dx;
                if sq < best {
                    best = sq;
                }
            }
            total += best.sqrt();
        }
        total
    };
    Ok((one_sided(&sa, &sb) + one_sided(&sb, &sa)) / (sa.len() + sb.len()) as f64)
}

fn surface_voxels(fg: &[bool], dims: (usize, usize, usize)) -> Vec<(usize, usize, usize)> {
    let (d, h, w) = dims;
    let at = |z: i64, y: i64, x: i64| -> bool {
        if z < 0 || y < 0 || x < 0 || z >= d as i64 || y >= h as i64 || x >= w as i64 {
            return false;
        }
        fg[(z as usize * h + y as usize) * w + x as usize]
    };
    let mut out = Vec::new();
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !at(z, y, x) {
                    continue;
                }
                let exposed = !at(z - 1, y, x)
                    || !at(z + 1, y, x)
                    || !at(z, y - 1, x)
                    || !at(z, y + 1, x)
                    || !at(z, y, x - 1)
                    || !at(z, y, x + 1);
                if exposed {
                    out.push((z as usize, y as usize, x as usize));
                }
            }
        }
    }
    out
}
