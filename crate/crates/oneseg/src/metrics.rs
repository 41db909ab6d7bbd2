//! Volume overlap and surface-distance metrics for predicted masks.
//!
//! Three criteria: DICE overlap, relative absolute volume difference (RAVD,
//! in percent), and average symmetric surface distance (ASSD, in physical
//! units via the voxel spacing). Per-slice DICE is also reported so error
//! accumulation away from the representative slice can be plotted.

use crate::error::{Error, Result};
use crate::voldata::Mask;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub volume_id: String,
    pub dice: f64,
    pub ravd: f64,
    pub assd: f64,
    pub per_slice_dice: Vec<f64>,
}

/// DICE overlap `2|A∩B| / (|A|+|B|)`. Two empty masks agree perfectly and
/// score 1.0.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("dice", a.len(), b.len()));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|y| **y).count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Relative absolute volume difference in percent,
/// `100·||pred| − |gt|| / |gt|`. Undefined for an empty ground truth.
pub fn ravd(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("ravd", gt.len(), pred.len()));
    }
    let vp = pred.iter().filter(|x| **x).count() as f64;
    let vg = gt.iter().filter(|x| **x).count() as f64;
    if vg == 0.0 {
        return Err(Error::validation("ravd is undefined for an empty ground truth"));
    }
    Ok(100.0 * (vp - vg).abs() / vg)
}

/// Average symmetric surface distance.
///
/// Surface voxels are foreground voxels with at least one 6-connected
/// background neighbor (outside the volume counts as background). Each
/// surface voxel of either mask contributes its minimum spacing-weighted
/// Euclidean distance to the other surface; the result is the total divided
/// by the combined surface size. Brute force over all surface pairs, which
/// is the reference algorithm at this scale.
pub fn assd(
    pred: &[bool],
    gt: &[bool],
    dims: (usize, usize, usize),
    spacing: [f64; 3],
) -> Result<f64> {
    let n = dims.0 * dims.1 * dims.2;
    if pred.len() != n || gt.len() != n {
        return Err(Error::shape("assd", n, pred.len().max(gt.len())));
    }
    let sp = surface_points(pred, dims);
    let sg = surface_points(gt, dims);
    if sp.is_empty() || sg.is_empty() {
        return Err(Error::validation("assd is undefined for an empty mask"));
    }
    let total = directed_sum(&sp, &sg, spacing) + directed_sum(&sg, &sp, spacing);
    Ok(total / (sp.len() + sg.len()) as f64)
}

fn surface_points(fg: &[bool], dims: (usize, usize, usize)) -> Vec<(i64, i64, i64)> {
    let (d, h, w) = dims;
    let solid = |z: i64, y: i64, x: i64| -> bool {
        z >= 0
            && y >= 0
            && x >= 0
            && z < d as i64
            && y < h as i64
            && x < w as i64
            && fg[(z as usize * h + y as usize) * w + x as usize]
    };
    let mut pts = Vec::new();
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if solid(z, y, x)
                    && [
                        (z - 1, y, x),
                        (z + 1, y, x),
                        (z, y - 1, x),
                        (z, y + 1, x),
                        (z, y, x - 1),
                        (z, y, x + 1),
                    ]
                    .iter()
                    .any(|&(nz, ny, nx)| !solid(nz, ny, nx))
                {
                    pts.push((z, y, x));
                }
            }
        }
    }
    pts
}

fn directed_sum(from: &[(i64, i64, i64)], to: &[(i64, i64, i64)], spacing: [f64; 3]) -> f64 {
    from.iter()
        .map(|&(z, y, x)| {
            to.iter()
                .map(|&(tz, ty, tx)| {
                    let dz = (z as f64 - tz as f64) * spacing[0];
                    let dy = (y as f64 - ty as f64) * spacing[1];
                    let dx = (x as f64 - tx as f64) * spacing[2];
                    dz * dz + dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum()
}

/// All three volume metrics plus per-slice DICE. Masks are binarized at
/// 0.5; both must be single-channel and share dims.
pub fn evaluate_volume(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<EvalResult> {
    if pred.channels != 1 || gt.channels != 1 {
        return Err(Error::validation("evaluation expects single-channel masks"));
    }
    if pred.meta.depth != gt.meta.depth
        || pred.meta.height != gt.meta.height
        || pred.meta.width != gt.meta.width
    {
        return Err(Error::shape(
            "evaluate_volume",
            format!("{:?}", [gt.meta.depth, gt.meta.height, gt.meta.width]),
            format!("{:?}", [pred.meta.depth, pred.meta.height, pred.meta.width]),
        ));
    }
    let bp = pred.binarized(0.5);
    let bg = gt.binarized(0.5);
    let (d, h, w) = (gt.meta.depth, gt.meta.height, gt.meta.width);
    let per_slice = (0..d)
        .map(|i| dice(&bp[i * h * w..(i + 1) * h * w], &bg[i * h * w..(i + 1) * h * w]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalResult {
        volume_id: pred.meta.id.clone(),
        dice: dice(&bp, &bg)?,
        ravd: ravd(&bp, &bg)?,
        assd: assd(&bp, &bg, (d, h, w), spacing)?,
        per_slice_dice: per_slice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle_assd;
    use crate::voldata::{SliceOrigin, VolumeMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from_bools(d: usize, h: usize, w: usize, fg: &[bool]) -> Mask {
        let meta = VolumeMeta::new("t", d, h, w).unwrap();
        let data = fg.iter().map(|&b| if b { 1.0f32 } else { 0.0 }).collect();
        Mask::new(meta, 1, data, vec![SliceOrigin::GroundTruth; d]).unwrap()
    }

    #[test]
    fn dice_hand_examples() {
        let a = [true, true, true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = [false, false, false, false, true, true];
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // |A|=4, |B|=4, overlap 2
        let c = [false, false, true, true, true, true];
        let d = [true, true, true, true, false, false];
        assert_eq!(dice(&c, &d).unwrap(), 0.5);
        assert_eq!(dice(&[false; 4], &[false; 4]).unwrap(), 1.0);
    }

    #[test]
    fn dice_is_symmetric_and_permutation_invariant() {
        let a = [true, false, true, true, false];
        let b = [true, true, false, true, false];
        assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        let perm = [4usize, 2, 0, 1, 3];
        let ap: Vec<bool> = perm.iter().map(|&i| a[i]).collect();
        let bp: Vec<bool> = perm.iter().map(|&i| b[i]).collect();
        assert_eq!(dice(&a, &b).unwrap(), dice(&ap, &bp).unwrap());
    }

    #[test]
    fn ravd_hand_examples() {
        let gt: Vec<bool> = (0..200).map(|i| i < 100).collect();
        assert_eq!(ravd(&gt, &gt).unwrap(), 0.0);
        let pred: Vec<bool> = (0..200).map(|i| i < 110).collect();
        assert_eq!(ravd(&pred, &gt).unwrap(), 10.0);
        let none = vec![false; 200];
        assert_eq!(ravd(&none, &gt).unwrap(), 100.0);
        assert!(ravd(&gt, &none).is_err());
    }

    #[test]
    fn assd_hand_examples() {
        let dims = (4, 8, 8);
        let n = 4 * 8 * 8;
        let mut a = vec![false; n];
        a[(1 * 8 + 2) * 8 + 2] = true;
        let mut b = vec![false; n];
        b[(1 * 8 + 2) * 8 + 5] = true;
        assert_eq!(assd(&a, &a, dims, [1.0; 3]).unwrap(), 0.0);
        assert_eq!(assd(&a, &b, dims, [1.0; 3]).unwrap(), 3.0);
        assert!(assd(&a, &vec![false; n], dims, [1.0; 3]).is_err());
    }

    #[test]
    fn assd_matches_oracle_on_shifted_cube() {
        let dims = (6, 10, 10);
        let n = 6 * 10 * 10;
        let mut a = vec![false; n];
        let mut b = vec![false; n];
        for z in 1..4 {
            for y in 2..5 {
                for x in 2..5 {
                    a[(z * 10 + y) * 10 + x] = true;
                    b[(z * 10 + y) * 10 + x + 1] = true;
                }
            }
        }
        let ours = assd(&a, &b, dims, [1.0; 3]).unwrap();
        let ma = mask_from_bools(6, 10, 10, &a);
        let mb = mask_from_bools(6, 10, 10, &b);
        let reference = oracle_assd(&ma, &mb, [1.0; 3]).unwrap();
        assert_eq!(ours, reference, "implementations must agree exactly");
        assert!(ours > 0.0);
    }

    #[test]
    fn assd_matches_oracle_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let dims = (3, 8, 8);
            let n = 3 * 8 * 8;
            let mut a = vec![false; n];
            let mut b = vec![false; n];
            for i in 0..n {
                a[i] = rng.random::<f64>() < 0.25;
                b[i] = rng.random::<f64>() < 0.25;
            }
            if !a.iter().any(|&v| v) || !b.iter().any(|&v| v) {
                continue;
            }
            let spacing = [1.0, 0.75, 1.5];
            let ours = assd(&a, &b, dims, spacing).unwrap();
            let reference = oracle_assd(
                &mask_from_bools(3, 8, 8, &a),
                &mask_from_bools(3, 8, 8, &b),
                spacing,
            )
            .unwrap();
            assert_eq!(ours, reference, "trial {trial}");
        }
    }

    #[test]
    fn assd_scales_with_isotropic_spacing() {
        let dims = (4, 8, 8);
        let n = 4 * 8 * 8;
        let mut a = vec![false; n];
        let mut b = vec![false; n];
        a[(1 * 8 + 2) * 8 + 2] = true;
        a[(2 * 8 + 4) * 8 + 3] = true;
        b[(1 * 8 + 5) * 8 + 6] = true;
        let unit = assd(&a, &b, dims, [1.0; 3]).unwrap();
        let scaled = assd(&a, &b, dims, [2.5; 3]).unwrap();
        assert!((scaled - 2.5 * unit).abs() < 1e-12);
    }

    #[test]
    fn assd_is_symmetric() {
        let dims = (3, 8, 8);
        let n = 3 * 8 * 8;
        let mut a = vec![false; n];
        let mut b = vec![false; n];
        a[(0 * 8 + 1) * 8 + 1] = true;
        a[(1 * 8 + 2) * 8 + 3] = true;
        b[(2 * 8 + 4) * 8 + 4] = true;
        assert_eq!(
            assd(&a, &b, dims, [1.0; 3]).unwrap(),
            assd(&b, &a, dims, [1.0; 3]).unwrap()
        );
    }

    #[test]
    fn evaluate_volume_perfect_prediction() {
        let fg: Vec<bool> = (0..4 * 8 * 8)
            .map(|i| {
                let (z, r) = (i / 64, i % 64);
                let (y, x) = (r / 8, r % 8);
                z >= 1 && z <= 2 && (3..5).contains(&y) && (3..5).contains(&x)
            })
            .collect();
        let m = mask_from_bools(4, 8, 8, &fg);
        let r = evaluate_volume(&m, &m, [1.0; 3]).unwrap();
        assert_eq!((r.dice, r.ravd, r.assd), (1.0, 0.0, 0.0));
        assert_eq!(r.per_slice_dice, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn evaluate_volume_rejects_mismatched_dims() {
        let a = mask_from_bools(4, 8, 8, &vec![true; 4 * 8 * 8]);
        let b = mask_from_bools(5, 8, 8, &vec![true; 5 * 8 * 8]);
        assert!(evaluate_volume(&a, &b, [1.0; 3]).is_err());
    }
}
