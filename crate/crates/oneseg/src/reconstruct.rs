//! Patch-restricted attention reconstruction.
//!
//! A target slice is reconstructed from a reference slice by matching
//! features inside a square window around each target pixel: window logits
//! are feature dot products, a softmax turns them into convex weights, and
//! a soft copy pulls the reference payload (features or a mask) through
//! those weights. Windows are clipped at the slice border, so every pixel
//! still carries a full convex combination.
//!
//! Factors are stored sparsely, one entry list per target pixel; nothing
//! here materializes the dense pixel-by-pixel attention matrix.

use crate::error::{Error, Result};
use crate::voldata::FeatureMap;

/// Soft correspondence weights from every target pixel into its window on
/// the reference slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionFactors {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    /// Per target pixel, row-major: `(reference_pixel, weight)` entries in
    /// ascending reference order. Weights are convex per pixel.
    entries: Vec<Vec<(usize, f32)>>,
}

impl AttentionFactors {
    pub fn entries(&self, pixel: usize) -> &[(usize, f32)] {
        &self.entries[pixel]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Computes the attention factors between a target (query) and reference
/// (key) feature map.
///
/// Logits and the softmax are accumulated in f64 before the weights are
/// stored as f32, keeping the factors within cast precision of an all-f64
/// evaluation.
pub fn reconstruction_factors(
    query: &FeatureMap,
    key: &FeatureMap,
    window: usize,
) -> Result<AttentionFactors> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::validation(format!(
            "attention window must be odd, got {window}"
        )));
    }
    if query.height != key.height || query.width != key.width || query.channels != key.channels {
        return Err(Error::shape(
            "reconstruction factors",
            format!("{:?}", [query.height, query.width, query.channels]),
            format!("{:?}", [key.height, key.width, key.channels]),
        ));
    }
    let (h, w, c) = (query.height, query.width, query.channels);
    let half = (window / 2) as i64;
    let mut entries = Vec::with_capacity(h * w);
    let mut scratch: Vec<(usize, f64)> = Vec::with_capacity(window * window);
    for ty in 0..h as i64 {
        for tx in 0..w as i64 {
            let q = query.at(ty as usize, tx as usize);
            scratch.clear();
            for oy in -half..=half {
                let sy = ty + oy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for ox in -half..=half {
                    let sx = tx + ox;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let k = key.at(sy as usize, sx as usize);
                    let mut logit = 0.0f64;
                    for ch in 0..c {
                        logit += q[ch] as f64 * k[ch] as f64;
                    }
                    scratch.push(((sy as usize) * w + sx as usize, logit));
                }
            }
            let max = scratch.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0f64;
            for e in &mut scratch {
                e.1 = (e.1 - max).exp();
                denom += e.1;
            }
            entries.push(
                scratch
                    .iter()
                    .map(|&(s, v)| (s, (v / denom) as f32))
                    .collect(),
            );
        }
    }
    Ok(AttentionFactors {
        height: h,
        width: w,
        window,
        entries,
    })
}

/// Pulls a reference payload through the factors: each output pixel is the
/// weighted sum of its window's reference pixels, channel by channel.
pub fn soft_copy(factors: &AttentionFactors, payload: &[f32], channels: usize) -> Result<Vec<f32>> {
    let pixels = factors.pixels();
    if channels == 0 || payload.len() != pixels * channels {
        return Err(Error::shape(
            "soft copy payload",
            pixels * channels.max(1),
            payload.len(),
        ));
    }
    let mut out = vec![0.0f32; payload.len()];
    for t in 0..pixels {
        for ch in 0..channels {
            let mut acc = 0.0f64;
            for &(s, wgt) in factors.entries(t) {
                acc += wgt as f64 * payload[s * channels + ch] as f64;
            }
            out[t * channels + ch] = acc as f32;
        }
    }
    Ok(out)
}

/// Reconstructs a target payload from a reference slice in one call:
/// factors from the feature maps, then a soft copy of the payload.
pub fn reconstruct_slice(
    query: &FeatureMap,
    key: &FeatureMap,
    payload: &[f32],
    channels: usize,
    window: usize,
) -> Result<Vec<f32>> {
    let factors = reconstruction_factors(query, key, window)?;
    soft_copy(&factors, payload, channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle_dense_attention;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fmap(h: usize, w: usize, c: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, c, 1, data).unwrap()
    }

    fn random_fmap(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        fmap(h, w, c, (0..h * w * c).map(|_| rng.random::<f32>() * 2.0 - 0.7).collect())
    }

    #[test]
    fn factors_match_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for (h, w, c, window) in [(6, 6, 3, 3), (5, 7, 2, 5), (9, 4, 4, 13), (3, 3, 2, 7)] {
            let q = random_fmap(&mut rng, h, w, c);
            let k = random_fmap(&mut rng, h, w, c);
            let ours = reconstruction_factors(&q, &k, window).unwrap();
            let dense = oracle_dense_attention(&q, &k, window).unwrap();
            for pix in 0..h * w {
                let got = ours.entries(pix);
                let want = &dense[pix];
                assert_eq!(got.len(), want.len(), "pixel {pix} entry count");
                for (g, d) in got.iter().zip(want) {
                    assert_eq!(g.0, d.0, "pixel {pix} source order");
                    assert!(
                        (g.1 as f64 - d.1).abs() <= 1e-6,
                        "pixel {pix}: {} vs {}",
                        g.1,
                        d.1
                    );
                }
            }
        }
    }

    #[test]
    fn weights_are_convex_even_at_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let q = random_fmap(&mut rng, 8, 5, 3);
        let k = random_fmap(&mut rng, 8, 5, 3);
        let factors = reconstruction_factors(&q, &k, 13).unwrap();
        for pix in 0..factors.pixels() {
            let entries = factors.entries(pix);
            let sum: f64 = entries.iter().map(|e| e.1 as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-5, "pixel {pix} sums to {sum}");
            assert!(entries.iter().all(|e| e.1 >= 0.0));
            assert!(entries.windows(2).all(|p| p[0].0 < p[1].0));
        }
    }

    #[test]
    fn window_one_factors_are_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let q = random_fmap(&mut rng, 4, 6, 2);
        let k = random_fmap(&mut rng, 4, 6, 2);
        let factors = reconstruction_factors(&q, &k, 1).unwrap();
        let payload: Vec<f32> = (0..24).map(|v| v as f32 * 0.1).collect();
        for pix in 0..24 {
            assert_eq!(factors.entries(pix), &[(pix, 1.0f32)]);
        }
        assert_eq!(soft_copy(&factors, &payload, 1).unwrap(), payload);
    }

    #[test]
    fn equal_features_spread_uniformly() {
        let q = fmap(4, 4, 2, vec![0.3; 32]);
        let factors = reconstruction_factors(&q, &q, 3).unwrap();
        let corner = factors.entries(0);
        assert_eq!(corner.len(), 4);
        for &(_, wgt) in corner {
            assert!((wgt - 0.25).abs() < 1e-6);
        }
        let interior = factors.entries(1 * 4 + 2);
        assert_eq!(interior.len(), 9);
        for &(_, wgt) in interior {
            assert!((wgt - 1.0 / 9.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dominant_logit_becomes_near_one_hot() {
        // query pixel matches exactly one window entry with a huge dot
        // product; everything else is orthogonal
        let h = 3;
        let mut qd = vec![0.0f32; h * h * 2];
        let mut kd = vec![0.0f32; h * h * 2];
        let target = 1 * h + 1;
        let source = 1 * h + 2;
        qd[target * 2] = 10.0;
        kd[source * 2] = 10.0;
        for pix in 0..h * h {
            if pix != source {
                kd[pix * 2 + 1] = 1.0;
            }
        }
        let factors =
            reconstruction_factors(&fmap(h, h, 2, qd), &fmap(h, h, 2, kd), 3).unwrap();
        let hit = factors
            .entries(target)
            .iter()
            .find(|e| e.0 == source)
            .unwrap();
        assert!(hit.1 > 0.999, "dominant weight {}", hit.1);
    }

    #[test]
    fn shifted_features_recover_shifted_payload() {
        // key is the query shifted one pixel right; features are periodic
        // one-hots, so every 5x5 window holds exactly one perfect match and
        // the payload must shift along with it
        let (h, w) = (5, 6);
        let cell = |y: usize, x: usize| -> Vec<f32> {
            let mut v = vec![0.0f32; 25];
            v[(y % 5) * 5 + (x % 5)] = 5.0;
            v
        };
        let mut qd = Vec::new();
        let mut kd = Vec::new();
        for y in 0..h {
            for x in 0..w {
                qd.extend_from_slice(&cell(y, x + 1));
                kd.extend_from_slice(&cell(y, x));
            }
        }
        let q = fmap(h, w, 25, qd);
        let k = fmap(h, w, 25, kd);
        let payload: Vec<f32> = (0..h * w).map(|v| (v % 7) as f32 / 7.0).collect();
        let out = reconstruct_slice(&q, &k, &payload, 1, 5).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                let got = out[y * w + x];
                let want = payload[y * w + x + 1];
                assert!(
                    (got - want).abs() < 1e-3,
                    "pixel ({y},{x}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let q = random_fmap(&mut rng, 4, 4, 2);
        let k = random_fmap(&mut rng, 4, 5, 2);
        assert!(reconstruction_factors(&q, &q, 4).is_err(), "even window");
        assert!(reconstruction_factors(&q, &q, 0).is_err());
        assert!(reconstruction_factors(&q, &k, 3).is_err(), "dim mismatch");
        let factors = reconstruction_factors(&q, &q, 3).unwrap();
        assert!(soft_copy(&factors, &vec![0.0; 5], 1).is_err());
    }

    proptest! {
        #[test]
        fn factors_always_convex(
            h in 2usize..7,
            w in 2usize..7,
            c in 1usize..4,
            half in 0usize..4,
            seed in 0u64..500,
        ) {
            let window = 2 * half + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_fmap(&mut rng, h, w, c);
            let k = random_fmap(&mut rng, h, w, c);
            let factors = reconstruction_factors(&q, &k, window).unwrap();
            for pix in 0..h * w {
                let entries = factors.entries(pix);
                prop_assert!(entries.len() <= window * window);
                prop_assert!(entries.len() <= h * w);
                let sum: f64 = entries.iter().map(|e| e.1 as f64).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-5);
                prop_assert!(entries.windows(2).all(|p| p[0].0 < p[1].0));
            }
        }
    }
}
