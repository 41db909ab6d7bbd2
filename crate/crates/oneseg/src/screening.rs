//! Representative-slice screening.
//!
//! Training volumes are screened so the model learns from informative slice
//! pairs: slice features are clustered with k-means, and within each cluster
//! the slice most similar to the rest of its cluster is kept. The selected
//! indices, in slice order, form consecutive training pairs. At inference
//! the single slice most similar to the whole volume is picked for expert
//! annotation.
//!
//! All similarity accumulation is f64 regardless of the f32 feature storage
//! so that scoring is stable enough to compare against an exhaustive
//! reference to tight tolerances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voldata::FeatureMap;

/// Annotation intervals the screening interval is drawn from, uniformly per
/// volume.
pub const INTERVALS: [usize; 3] = [2, 3, 5];

const KMEANS_MAX_ITERS: usize = 100;

/// How slice similarity is computed from two feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CosineMode {
    /// Cosine between the flattened feature vectors.
    #[default]
    Flat,
    /// Mean over pixels of the per-pixel channel-vector cosine.
    PerPixel,
}

impl CosineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(CosineMode::Flat),
            "pixel" => Ok(CosineMode::PerPixel),
            other => Err(Error::validation(format!(
                "unknown cosine mode `{other}`; expected flat or pixel"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CosineMode::Flat => "flat",
            CosineMode::PerPixel => "pixel",
        }
    }
}

/// Slices selected for annotation on one training volume, in slice order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepresentativeSet {
    pub volume_id: String,
    /// Strictly increasing slice indices.
    pub indices: Vec<usize>,
    /// Annotation interval the cluster count was derived from.
    pub interval: usize,
    /// Cluster count requested from k-means.
    pub k: usize,
}

impl RepresentativeSet {
    /// Consecutive representative pairs used as training pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.indices.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster label per point.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

/// Row-major flattening of a feature map into one vector per slice.
pub fn flatten_features(f: &FeatureMap) -> Vec<f32> {
    f.data().to_vec()
}

/// Cosine similarity between two slices' feature maps. Returns 0 when
/// either side has zero norm.
pub fn sim(a: &FeatureMap, b: &FeatureMap, mode: CosineMode) -> Result<f64> {
    if a.height != b.height || a.width != b.width || a.channels != b.channels {
        return Err(Error::shape(
            "slice similarity",
            format!("{:?}", [a.height, a.width, a.channels]),
            format!("{:?}", [b.height, b.width, b.channels]),
        ));
    }
    let cos = |x: &[f32], y: &[f32]| -> f64 {
        let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
        for (u, v) in x.iter().zip(y) {
            let (u, v) = (*u as f64, *v as f64);
            dot += u * v;
            nx += u * u;
            ny += v * v;
        }
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx.sqrt() * ny.sqrt())
        }
    };
    match mode {
        CosineMode::Flat => Ok(cos(a.data(), b.data())),
        CosineMode::PerPixel => {
            let pixels = a.height * a.width;
            let mut total = 0.0;
            for p in 0..pixels {
                let (y, x) = (p / a.width, p % a.width);
                total += cos(a.at(y, x), b.at(y, x));
            }
            Ok(total / pixels as f64)
        }
    }
}

/// Representative score of slice `i` within a member set: the sum of its
/// similarities to every member, itself included.
pub fn rep_score(
    i: usize,
    members: &[usize],
    feats: &[FeatureMap],
    mode: CosineMode,
) -> Result<f64> {
    if i >= feats.len() {
        return Err(Error::validation(format!("slice index {i} out of range")));
    }
    let mut total = 0.0f64;
    for &j in members {
        if j >= feats.len() {
            return Err(Error::validation(format!("member index {j} out of range")));
        }
        total += sim(&feats[i], &feats[j], mode)?;
    }
    Ok(total)
}

/// Lloyd's k-means with farthest-point seeding, deterministic per seed.
///
/// The first centroid is a seed-drawn point; each further centroid is the
/// unchosen point farthest from its nearest chosen one. Iteration stops when
/// assignments are stable or after 100 rounds. A cluster left empty by an
/// assignment step is reseeded at the point farthest from that cluster's
/// centroid. All ties break toward the lowest index.
pub fn kmeans(points: &[Vec<f32>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "cluster count {k} must be in 1..={n}"
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::validation("points must share a nonzero dimension"));
    }
    let dist2 = |p: &[f32], c: &[f64]| -> f64 {
        let mut acc = 0.0f64;
        for (a, b) in p.iter().zip(c) {
            let d = *a as f64 - b;
            acc += d * d;
        }
        acc
    };
    let as_centroid = |p: &[f32]| -> Vec<f64> { p.iter().map(|v| *v as f64).collect() };

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let mut best = (0usize, -1.0f64);
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let nearest = chosen
                .iter()
                .map(|&c| dist2(&points[i], &as_centroid(&points[c])))
                .fold(f64::INFINITY, f64::min);
            if nearest > best.1 {
                best = (i, nearest);
            }
        }
        chosen.push(best.0);
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| as_centroid(&points[i])).collect();

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (0usize, f64::INFINITY);
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = dist2(p, centroid);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect()
    };

    let mut labels = assign(&centroids);
    let mut iterations = 0;
    let mut last_inertia = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += *v as f64;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            } else {
                let mut best = (usize::MAX, -1.0f64);
                for i in 0..n {
                    if taken.contains(&i) {
                        continue;
                    }
                    let d = dist2(&points[i], &centroids[c]);
                    if d > best.1 {
                        best = (i, d);
                    }
                }
                taken.push(best.0);
                centroids[c] = as_centroid(&points[best.0]);
            }
        }
        let next = assign(&centroids);
        let inertia: f64 = points
            .iter()
            .zip(&next)
            .map(|(p, &l)| dist2(p, &centroids[l]))
            .sum();
        debug_assert!(
            inertia <= last_inertia + 1e-9,
            "k-means inertia increased: {last_inertia} -> {inertia}"
        );
        last_inertia = inertia;
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia: f64 = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centroids[l]))
        .sum();
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

/// Screens a training volume: draws the annotation interval, clusters the
/// slices, and keeps each cluster's best-scoring member.
///
/// Both the interval draw and the k-means seed come from `rng`, so screening
/// is deterministic given the caller's stream position.
pub fn build_representative_set(
    volume_id: &str,
    feats: &[FeatureMap],
    rng: &mut ChaCha8Rng,
    mode: CosineMode,
) -> Result<RepresentativeSet> {
    let interval = INTERVALS[rng.random_range(0..INTERVALS.len())];
    let kmeans_seed: u64 = rng.random();
    build_representative_set_with_interval(volume_id, feats, interval, kmeans_seed, mode)
}

/// Screening with the interval and k-means seed pinned, for deterministic
/// callers and tests.
pub fn build_representative_set_with_interval(
    volume_id: &str,
    feats: &[FeatureMap],
    interval: usize,
    kmeans_seed: u64,
    mode: CosineMode,
) -> Result<RepresentativeSet> {
    let depth = feats.len();
    if depth < 2 {
        return Err(Error::validation("screening needs at least two slices"));
    }
    if interval == 0 {
        return Err(Error::validation("annotation interval must be >= 1"));
    }
    let k = (depth / interval).max(2).min(depth);
    let points: Vec<Vec<f32>> = feats.iter().map(flatten_features).collect();
    let clusters = kmeans(&points, k, kmeans_seed)?;
    let mut indices = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..depth).filter(|&i| clusters.labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut best = (members[0], f64::NEG_INFINITY);
        for &i in &members {
            let score = rep_score(i, &members, feats, mode)?;
            if score > best.1 {
                best = (i, score);
            }
        }
        indices.push(best.0);
    }
    indices.sort_unstable();
    Ok(RepresentativeSet {
        volume_id: volume_id.to_string(),
        indices,
        interval,
        k,
    })
}

/// Picks the annotation slice for a test volume: the slice with the highest
/// representative score over the whole volume, lowest index on ties.
pub fn select_test_slice(feats: &[FeatureMap], mode: CosineMode) -> Result<usize> {
    if feats.is_empty() {
        return Err(Error::validation("cannot select a slice from an empty volume"));
    }
    let all: Vec<usize> = (0..feats.len()).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for &i in &all {
        let score = rep_score(i, &all, feats, mode)?;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}
