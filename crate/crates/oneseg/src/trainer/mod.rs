//! Self-learning training loop.
//!
//! Before the first step the random init is rescaled so one reference
//! slice's mean feature norm hits [`INIT_FEATURE_NORM`].
//!
//! Each epoch rescreens every training volume (the annotation interval is
//! re-drawn, so chains differ between epochs), then walks the volumes in
//! manifest order in batches. A batch's pair chains are recorded on one
//! tape, the losses of its volumes are added, and a single Adam step
//! follows. The scheduled-sampling weight α1 anneals linearly from 0.9 to
//! 0.5 over all steps of the run; the learning rate halves every epoch.
//!
//! Everything is deterministic given the seed: screening draws come from a
//! dedicated stream, batches keep manifest order, and gradient merging is
//! a fixed-order sum on the tape.

pub mod objective;

pub use objective::{
    batch_item_from_slices, gradcheck_full_objective, objective_on_tape, ObjectiveParts,
    VolumeBatchItem, FULL_OBJECTIVE_TOL, HUBER_DELTA,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor};
use crate::encoder::{encode, init_encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::gabor::{apply_bottleneck, build_bank, GaborBank, GaborConfig, GaborStack};
use crate::screening::{build_representative_set, CosineMode};
use crate::voldata::{resize_slice, Grid2, Interp, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Volumes per optimizer step.
    pub batch_size: usize,
    /// Initial learning rate, halved every epoch.
    pub lr0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Attention window P.
    pub window: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub cosine: CosineMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 2,
            lr0: 1e-4,
            lambda1: 0.9,
            lambda2: 0.1,
            window: 9,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine: CosineMode::Flat,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be >= 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation("initial learning rate must be positive"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || (self.lambda1 + self.lambda2 - 1.0).abs() > 1e-9
        {
            return Err(Error::validation(format!(
                "loss weights must be nonnegative and sum to 1, got {} + {}",
                self.lambda1, self.lambda2
            )));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::validation("attention window must be odd"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Mean per-pixel feature norm the initial encoder is rescaled to before
/// the first step. Fan-in-scaled uniform draws land well below 1 on Gabor
/// input, which flattens the attention softmax toward uniform; a handful
/// of desk-scale steps cannot recover from that, so the factors need
/// contrast from the start. One multiplier per layer realizes the target
/// exactly because the rectifier is positively homogeneous.
pub const INIT_FEATURE_NORM: f64 = 2.0;

fn calibrate_init_scale(params: &mut EncoderParams, stack: &GaborStack) -> Result<()> {
    let feats = encode(stack, params)?;
    let mut sum = 0.0f64;
    for y in 0..feats.height {
        for x in 0..feats.width {
            let sq: f64 = feats.at(y, x).iter().map(|&v| (v as f64) * (v as f64)).sum();
            sum += sq.sqrt();
        }
    }
    let mean = sum / (feats.height * feats.width) as f64;
    if mean <= 0.0 {
        return Ok(());
    }
    let gain = (INIT_FEATURE_NORM / mean).powf(1.0 / params.config.layers.len() as f64) as f32;
    for w in &mut params.weights {
        for v in &mut w.data {
            *v *= gain;
        }
    }
    Ok(())
}

/// Linear α schedule: α1 runs from 0.9 at progress 0 to 0.5 at progress 1,
/// with α1 + α2 = 1 throughout. Both endpoints are computed directly so
/// they are exact in floating point.
pub fn anneal_alpha(progress: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::validation(format!(
            "anneal progress {progress} outside [0, 1]"
        )));
    }
    Ok((0.9 - 0.4 * progress, 0.1 + 0.4 * progress))
}

/// Learning rate for an epoch: `lr0 · 2^(−epoch)`.
pub fn learning_rate(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi(epoch as i32)
}

/// Adam optimizer over an interleaved flat parameter list. Moment state is
/// kept in f64; parameters stay f32.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[&Tensor<f32>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<f32>],
        grads: &[Tensor<f32>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam step", self.m.len(), params.len().max(grads.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            if p.data.len() != g.data.len() {
                return Err(Error::shape("adam gradient", p.data.len(), g.data.len()));
            }
            for i in 0..p.data.len() {
                let gi = g.data[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p.data[i] = (p.data[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub l_sche: f64,
    pub l_cyc: f64,
    pub alpha1: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Teacher-forced reconstruction term per pair on the fixed set of all
    /// adjacent slice pairs, evaluated before the first epoch and again
    /// after every epoch (`epochs + 1` entries). Screening redraws the
    /// training chains each epoch, so the in-training term is not
    /// comparable across epochs; this series is.
    pub teacher: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// One row per epoch; `teacher` is the fixed-pair measurement taken
    /// after that epoch's steps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,l_sche,l_cyc,teacher,alpha1,lr,seconds\n");
        for (e, teacher) in self.epochs.iter().zip(self.teacher.iter().skip(1)) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                e.epoch, e.loss, e.l_sche, e.l_cyc, teacher, e.alpha1, e.lr, e.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

struct PreparedVolume {
    id: String,
    stacks: Vec<GaborStack>,
    grids: Vec<Grid2>,
    full: (usize, usize),
}

fn prepare_volume(v: &Volume, bank: &GaborBank, enc_cfg: &EncoderConfig) -> Result<PreparedVolume> {
    let (h, w) = (v.meta.height, v.meta.width);
    let (gh, gw) = enc_cfg.output_dims(h, w);
    let mut stacks = Vec::with_capacity(v.meta.depth);
    let mut grids = Vec::with_capacity(v.meta.depth);
    for d in 0..v.meta.depth {
        let slice = v.slice_grid(d);
        stacks.push(apply_bottleneck(&slice, bank));
        grids.push(resize_slice(&slice, (gh, gw), Interp::Bilinear)?);
    }
    Ok(PreparedVolume {
        id: v.meta.id.clone(),
        stacks,
        grids,
        full: (h, w),
    })
}

fn make_item(pre: &PreparedVolume, pairs: Vec<(usize, usize)>) -> VolumeBatchItem<f32> {
    VolumeBatchItem {
        stacks: pre
            .stacks
            .iter()
            .map(|s| {
                Tensor::new(vec![s.height, s.width, s.channels], s.data.clone())
                    .expect("stack tensor")
            })
            .collect(),
        grids: pre
            .grids
            .iter()
            .map(|g| Tensor::new(vec![g.h, g.w, 1], g.data.clone()).expect("grid tensor"))
            .collect(),
        full: pre.full,
        pairs,
    }
}

/// Forward-only evaluation of the objective components for a set of
/// prepared batch items with the given parameters.
pub fn evaluate_objective(
    items: &[VolumeBatchItem<f32>],
    params: &EncoderParams,
    bank: &GaborBank,
    window: usize,
    alpha1: f64,
    lambda: (f64, f64),
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let leaves = params.leaves_on_tape(&mut tape);
    let parts = objective_on_tape(
        &mut tape,
        items,
        &leaves,
        &params.config,
        bank,
        window,
        alpha1,
        lambda,
    )?;
    Ok(LossValues {
        total: tape.value(parts.total).data[0] as f64,
        sche: tape.value(parts.sche).data[0] as f64,
        term1: tape.value(parts.term1).data[0] as f64,
        term2: tape.value(parts.term2).data[0] as f64,
        cyc: tape.value(parts.cyc).data[0] as f64,
        pair_count: parts.pair_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub sche: f64,
    pub term1: f64,
    pub term2: f64,
    pub cyc: f64,
    pub pair_count: usize,
}

/// Trains the encoder on a set of volumes and returns the final parameters
/// with the per-epoch report.
pub fn train(
    volumes: &[Volume],
    gabor_cfg: &GaborConfig,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainReport)> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::validation("training needs at least one volume"));
    }
    for v in volumes {
        if v.meta.depth < 2 {
            return Err(Error::validation(format!(
                "volume {} has depth {}; training needs >= 2 slices",
                v.meta.id, v.meta.depth
            )));
        }
    }
    let bank = build_bank(gabor_cfg)?;
    if enc_cfg.in_channels != bank.channels() {
        return Err(Error::shape(
            "encoder input channels",
            bank.channels(),
            enc_cfg.in_channels,
        ));
    }
    let run_cfg = EncoderConfig {
        seed: cfg.seed,
        ..enc_cfg.clone()
    };
    let mut params = init_encoder(&run_cfg)?;

    let pres: Vec<PreparedVolume> = volumes
        .iter()
        .map(|v| prepare_volume(v, &bank, &run_cfg))
        .collect::<Result<_>>()?;
    calibrate_init_scale(&mut params, &pres[0].stacks[pres[0].stacks.len() / 2])?;

    let flat: Vec<&Tensor<f32>> = params
        .weights
        .iter()
        .zip(&params.biases)
        .flat_map(|(w, b)| [w, b])
        .collect();
    let mut adam = Adam::new(&flat, cfg.beta1, cfg.beta2, cfg.eps);
    drop(flat);

    // screening draws come from their own stream so changing unrelated
    // settings cannot shift the representative sets
    let mut screen_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5343_5245_454e);
    let steps_per_epoch = volumes.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut global_step = 0usize;
    let mut report = TrainReport::default();

    let eval_items: Vec<VolumeBatchItem<f32>> = pres
        .iter()
        .map(|pre| {
            let pairs = (0..pre.stacks.len() - 1).map(|i| (i, i + 1)).collect();
            make_item(pre, pairs)
        })
        .collect();
    let fixed_teacher = |params: &EncoderParams| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves = params.leaves_on_tape(&mut tape);
        let (term1, pairs) =
            objective::teacher_term_on_tape(&mut tape, &eval_items, &leaves, &run_cfg, cfg.window)?;
        Ok(tape.value(term1).data[0] as f64 / pairs as f64)
    };
    report.teacher.push(fixed_teacher(&params)?);

    for epoch in 0..cfg.epochs {
        let clock = Instant::now();
        let lr = learning_rate(cfg.lr0, epoch);

        let mut items: Vec<VolumeBatchItem<f32>> = Vec::with_capacity(pres.len());
        for pre in &pres {
            let feats = pre
                .stacks
                .iter()
                .map(|s| encode(s, &params))
                .collect::<Result<Vec<_>>>()?;
            let set = build_representative_set(&pre.id, &feats, &mut screen_rng, cfg.cosine)?;
            let pairs = set.pairs();
            if pairs.is_empty() {
                return Err(Error::validation(format!(
                    "screening of volume {} produced a single representative; no pairs to train on",
                    pre.id
                )));
            }
            items.push(make_item(pre, pairs));
        }

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut steps_done = 0usize;
        for batch in items.chunks(cfg.batch_size) {
            let progress = if total_steps > 1 {
                global_step as f64 / (total_steps - 1) as f64
            } else {
                0.0
            };
            let (a1, _) = anneal_alpha(progress)?;
            let mut tape = Tape::new();
            let leaves = params.leaves_on_tape(&mut tape);
            let parts = objective_on_tape(
                &mut tape,
                batch,
                &leaves,
                &run_cfg,
                &bank,
                cfg.window,
                a1,
                (cfg.lambda1, cfg.lambda2),
            )?;
            let loss = tape.value(parts.total).data[0] as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch} step {steps_done} \
                     (lr {lr:e}); lower the initial learning rate"
                )));
            }
            sums.0 += loss;
            sums.1 += tape.value(parts.sche).data[0] as f64;
            sums.2 += tape.value(parts.cyc).data[0] as f64;
            sums.3 += a1;

            let grads = tape.backward(parts.total)?;
            let gvecs: Vec<Tensor<f32>> = leaves
                .iter()
                .flat_map(|&(w, b)| [w, b])
                .map(|id| {
                    grads[id.index()]
                        .clone()
                        .unwrap_or_else(|| Tensor::zeros(tape.value(id).dims.clone()))
                })
                .collect();
            let mut flat: Vec<&mut Tensor<f32>> = params
                .weights
                .iter_mut()
                .zip(params.biases.iter_mut())
                .flat_map(|(w, b)| [w, b])
                .collect();
            adam.step(&mut flat, &gvecs, lr)?;
            global_step += 1;
            steps_done += 1;
        }

        let n = steps_done as f64;
        report.epochs.push(EpochStats {
            epoch,
            loss: sums.0 / n,
            l_sche: sums.1 / n,
            l_cyc: sums.2 / n,
            alpha1: sums.3 / n,
            lr,
            seconds: clock.elapsed().as_secs_f64(),
        });
        report.teacher.push(fixed_teacher(&params)?);
    }
    Ok((params, report))
}
