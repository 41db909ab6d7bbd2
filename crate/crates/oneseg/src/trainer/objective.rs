//! The training objective as a tape graph.
//!
//! One builder assembles the whole differentiable forward pass for a batch
//! of volumes: real-slice features, teacher-forced reconstructions, the
//! scheduled-sampling chain with re-encoded intermediate reconstructions,
//! and the cycle term. Training records it in f32; the gradient check
//! replays the identical graph in f64.
//!
//! Reconstructions live at the feature grid: the payload of a soft copy is
//! the slice image downsampled to grid resolution, and losses compare
//! against downsampled targets. When a reconstruction feeds a further step
//! (chaining or the backward half of the cycle), it is upsampled, passed
//! through the frozen filter bank, and re-encoded on the tape so gradients
//! flow through.

use std::collections::HashMap;

use crate::diffcore::{ConvSpec, PadMode, Real, Tape, Tensor, VarId};
use crate::encoder::{encode_on_tape, init_encoder, EncoderConfig, EncoderLayer};
use crate::error::{Error, Result};
use crate::gabor::{apply_bottleneck, build_bank, GaborBank, GaborConfig};
use crate::voldata::{resize_slice, Grid2, Interp};

/// Smoothing width of the L1 loss; differences below this are quadratic.
pub const HUBER_DELTA: f64 = 1e-3;

/// Acceptable worst relative error for [`gradcheck_full_objective`].
pub const FULL_OBJECTIVE_TOL: f64 = 1e-5;

/// Per-volume inputs to the objective: everything that is constant on the
/// tape.
#[derive(Debug, Clone)]
pub struct VolumeBatchItem<R: Real> {
    /// Filter-bank responses of each real slice, `[H, W, C_g]`.
    pub stacks: Vec<Tensor<R>>,
    /// Each real slice image downsampled to the feature grid, `[H', W', 1]`.
    pub grids: Vec<Tensor<R>>,
    /// Full slice size `(H, W)`.
    pub full: (usize, usize),
    /// Consecutive representative pairs, in slice order.
    pub pairs: Vec<(usize, usize)>,
}

/// Node ids of the assembled objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub total: VarId,
    pub sche: VarId,
    /// Teacher-forced scheduled-sampling term (ground-truth references).
    pub term1: VarId,
    /// Chained scheduled-sampling term (reconstructed references).
    pub term2: VarId,
    pub cyc: VarId,
    /// Pairs summed into each term, across all volumes of the batch.
    pub pair_count: usize,
}

/// Filter-bank kernels as a conv weight tensor `[C_g, k, k, 1]` for
/// re-encoding reconstructions on the tape.
pub fn gabor_weight_tensor<R: Real>(bank: &GaborBank) -> Tensor<R> {
    let k = bank.config.kernel;
    let mut data = Vec::with_capacity(bank.channels() * k * k);
    for kernel in bank.kernels() {
        data.extend(kernel.iter().map(|v| R::from_f64(*v as f64)));
    }
    Tensor::new(vec![bank.channels(), k, k, 1], data).expect("kernel tensor")
}

/// Records the full training objective for a batch of volumes and returns
/// the loss nodes. `leaves` are the encoder parameters already on the tape.
pub fn objective_on_tape<R: Real>(
    tape: &mut Tape<R>,
    items: &[VolumeBatchItem<R>],
    leaves: &[(VarId, VarId)],
    enc_cfg: &EncoderConfig,
    bank: &GaborBank,
    window: usize,
    alpha1: f64,
    lambda: (f64, f64),
) -> Result<ObjectiveParts> {
    if items.is_empty() {
        return Err(Error::validation("objective needs at least one volume"));
    }
    if !(0.0..=1.0).contains(&alpha1) {
        return Err(Error::validation(format!("alpha1 {alpha1} outside [0, 1]")));
    }
    let delta = R::from_f64(HUBER_DELTA);
    let gabor_w = tape.constant(gabor_weight_tensor::<R>(bank));
    let gabor_spec = ConvSpec {
        stride: 1,
        pad: PadMode::Reflect,
    };

    let mut term1_ids: Vec<VarId> = Vec::new();
    let mut term2_ids: Vec<VarId> = Vec::new();
    let mut cyc_ids: Vec<VarId> = Vec::new();
    let mut pair_count = 0usize;

    for item in items {
        if item.pairs.is_empty() {
            return Err(Error::validation("volume contributes no representative pairs"));
        }
        if item.stacks.len() != item.grids.len() {
            return Err(Error::shape("batch item slices", item.stacks.len(), item.grids.len()));
        }
        pair_count += item.pairs.len();
        let (full_h, full_w) = item.full;

        let mut feat_ids: HashMap<usize, VarId> = HashMap::new();
        let mut grid_ids: HashMap<usize, VarId> = HashMap::new();
        macro_rules! feats {
            ($i:expr) => {{
                let i: usize = $i;
                match feat_ids.get(&i) {
                    Some(&id) => id,
                    None => {
                        if i >= item.stacks.len() {
                            return Err(Error::validation(format!(
                                "pair references slice {i} beyond volume depth {}",
                                item.stacks.len()
                            )));
                        }
                        let s = tape.constant(item.stacks[i].clone());
                        let f = encode_on_tape(tape, s, leaves, enc_cfg)?;
                        feat_ids.insert(i, f);
                        f
                    }
                }
            }};
        }
        macro_rules! grid {
            ($i:expr) => {{
                let i: usize = $i;
                match grid_ids.get(&i) {
                    Some(&id) => id,
                    None => {
                        let g = tape.constant(item.grids[i].clone());
                        grid_ids.insert(i, g);
                        g
                    }
                }
            }};
        }
        macro_rules! re_encode {
            ($recon:expr) => {{
                let up = tape.resize_bilinear($recon, full_h, full_w)?;
                let gab = tape.conv2d(up, gabor_w, None, gabor_spec)?;
                encode_on_tape(tape, gab, leaves, enc_cfg)?
            }};
        }

        // teacher-forced reconstructions, reused by the cycle term
        let mut teacher_recons: Vec<VarId> = Vec::new();
        for &(a, b) in &item.pairs {
            let fa = feats!(a);
            let fb = feats!(b);
            let ga = grid!(a);
            let gb = grid!(b);
            let logits = tape.local_logits(fb, fa, window)?;
            let factors = tape.softmax_rows(logits)?;
            let recon = tape.soft_copy(factors, ga, window)?;
            let l = tape.l1_smooth(recon, gb, delta)?;
            term1_ids.push(l);
            teacher_recons.push(recon);
        }

        // chained reconstructions; the first source is the real first slice
        let mut prev_payload = grid!(item.pairs[0].0);
        let mut prev_feats = feats!(item.pairs[0].0);
        for (k, &(_, b)) in item.pairs.iter().enumerate() {
            let fb = feats!(b);
            let gb = grid!(b);
            let logits = tape.local_logits(fb, prev_feats, window)?;
            let factors = tape.softmax_rows(logits)?;
            let recon = tape.soft_copy(factors, prev_payload, window)?;
            let l = tape.l1_smooth(recon, gb, delta)?;
            term2_ids.push(l);
            if k + 1 < item.pairs.len() {
                prev_payload = recon;
                prev_feats = re_encode!(recon);
            }
        }

        // cycle: re-encode the teacher-forced reconstruction and come back
        for (k, &(a, _)) in item.pairs.iter().enumerate() {
            let recon_fwd = teacher_recons[k];
            let feats_hat = re_encode!(recon_fwd);
            let fa = feats!(a);
            let ga = grid!(a);
            let logits = tape.local_logits(fa, feats_hat, window)?;
            let factors = tape.softmax_rows(logits)?;
            let back = tape.soft_copy(factors, recon_fwd, window)?;
            let l = tape.l1_smooth(back, ga, delta)?;
            cyc_ids.push(l);
        }
    }

    let sum = |tape: &mut Tape<R>, ids: &[VarId]| -> Result<VarId> {
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = tape.add(acc, id)?;
        }
        Ok(acc)
    };
    let term1 = sum(tape, &term1_ids)?;
    let term2 = sum(tape, &term2_ids)?;
    let cyc = sum(tape, &cyc_ids)?;
    let t1w = tape.scale(term1, R::from_f64(alpha1))?;
    let t2w = tape.scale(term2, R::from_f64(1.0 - alpha1))?;
    let sche = tape.add(t1w, t2w)?;
    let sw = tape.scale(sche, R::from_f64(lambda.0))?;
    let cw = tape.scale(cyc, R::from_f64(lambda.1))?;
    let total = tape.add(sw, cw)?;
    Ok(ObjectiveParts {
        total,
        sche,
        term1,
        term2,
        cyc,
        pair_count,
    })
}

/// Records only the teacher-forced term for a batch of volumes, without
/// the chained and cycle branches. Same graph as `term1` of
/// [`objective_on_tape`]; used for the fixed-pair report series where the
/// other branches would only cost time.
pub fn teacher_term_on_tape<R: Real>(
    tape: &mut Tape<R>,
    items: &[VolumeBatchItem<R>],
    leaves: &[(VarId, VarId)],
    enc_cfg: &EncoderConfig,
    window: usize,
) -> Result<(VarId, usize)> {
    if items.is_empty() {
        return Err(Error::validation("objective needs at least one volume"));
    }
    let delta = R::from_f64(HUBER_DELTA);
    let mut ids: Vec<VarId> = Vec::new();
    let mut pair_count = 0usize;
    for item in items {
        if item.pairs.is_empty() {
            return Err(Error::validation("volume contributes no representative pairs"));
        }
        pair_count += item.pairs.len();
        let mut feat_ids: HashMap<usize, VarId> = HashMap::new();
        for &(a, b) in &item.pairs {
            for i in [a, b] {
                if i >= item.stacks.len() {
                    return Err(Error::validation(format!(
                        "pair references slice {i} beyond volume depth {}",
                        item.stacks.len()
                    )));
                }
                if !feat_ids.contains_key(&i) {
                    let s = tape.constant(item.stacks[i].clone());
                    let f = encode_on_tape(tape, s, leaves, enc_cfg)?;
                    feat_ids.insert(i, f);
                }
            }
            let ga = tape.constant(item.grids[a].clone());
            let gb = tape.constant(item.grids[b].clone());
            let logits = tape.local_logits(feat_ids[&b], feat_ids[&a], window)?;
            let factors = tape.softmax_rows(logits)?;
            let recon = tape.soft_copy(factors, ga, window)?;
            ids.push(tape.l1_smooth(recon, gb, delta)?);
        }
    }
    let mut acc = ids[0];
    for &id in &ids[1..] {
        acc = tape.add(acc, id)?;
    }
    Ok((acc, pair_count))
}

/// Prepares a batch item from raw slice images: filter-bank stacks and
/// grid-resolution payload images for every slice.
pub fn batch_item_from_slices<R: Real>(
    slices: &[Grid2],
    bank: &GaborBank,
    enc_cfg: &EncoderConfig,
    pairs: Vec<(usize, usize)>,
) -> Result<VolumeBatchItem<R>> {
    if slices.is_empty() {
        return Err(Error::validation("batch item needs slices"));
    }
    let (h, w) = (slices[0].h, slices[0].w);
    let (gh, gw) = enc_cfg.output_dims(h, w);
    let mut stacks = Vec::with_capacity(slices.len());
    let mut grids = Vec::with_capacity(slices.len());
    for s in slices {
        let stack = apply_bottleneck(s, bank);
        stacks.push(Tensor::new(
            vec![h, w, bank.channels()],
            stack.data.iter().map(|v| R::from_f64(*v as f64)).collect(),
        )?);
        let small = resize_slice(s, (gh, gw), Interp::Bilinear)?;
        grids.push(Tensor::new(
            vec![gh, gw, 1],
            small.data.iter().map(|v| R::from_f64(*v as f64)).collect(),
        )?);
    }
    Ok(VolumeBatchItem {
        stacks,
        grids,
        full: (h, w),
        pairs,
    })
}

/// Finite-difference check of the complete objective on a small two-pair
/// instance in f64. The seed draws the slice contents. Returns the worst
/// relative error over every encoder parameter coordinate.
pub fn gradcheck_full_objective(seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let gabor_cfg = GaborConfig {
        scales: 1,
        orientations: 2,
        kernel: 3,
        wavelength: 4.0,
        part: crate::gabor::GaborPart::Real,
    };
    let bank = build_bank(&gabor_cfg)?;
    let enc_cfg = EncoderConfig {
        layers: vec![EncoderLayer {
            out_channels: 3,
            kernel: 3,
            stride: 2,
        }],
        in_channels: bank.channels(),
        seed: 7,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slices: Vec<Grid2> = (0..3)
        .map(|_| {
            let data: Vec<f32> = (0..36).map(|_| rng.random::<f32>()).collect();
            Grid2::new(6, 6, data)
        })
        .collect();
    let item = batch_item_from_slices::<f64>(&slices, &bank, &enc_cfg, vec![(0, 1), (1, 2)])?;

    let init = init_encoder(&enc_cfg)?;
    let params: Vec<Tensor<f64>> = init
        .weights
        .iter()
        .zip(&init.biases)
        .flat_map(|(w, b)| [w.cast::<f64>(), b.cast::<f64>()])
        .collect();

    let build = move |tape: &mut Tape<f64>, ids: &[VarId]| -> Result<VarId> {
        let leaves: Vec<(VarId, VarId)> = ids.chunks(2).map(|c| (c[0], c[1])).collect();
        let parts = objective_on_tape(
            tape,
            std::slice::from_ref(&item),
            &leaves,
            &enc_cfg,
            &bank,
            3,
            0.7,
            (0.9, 0.1),
        )?;
        Ok(parts.total)
    };
    crate::diffcore::finite_diff_check(&params, 1e-5, &build)
}
