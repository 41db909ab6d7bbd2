//! Command-line interface: one `oneseg` executable for the full workflow
//! synth -> train -> screen -> propagate -> evaluate, plus `gradcheck` for
//! the autodiff and `pipeline` to chain everything on generated data.
//!
//! Exit codes: 0 success, 1 bad arguments or invalid inputs, 2 runtime
//! failure. Every run is deterministic given its seed; `--workers 1` is the
//! bit-reproducible reference mode.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{init_encoder, load_checkpoint, save_checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::gabor::{build_bank, GaborBank};
use crate::metrics::{evaluate_volume, EvalResult};
use crate::propagate::{encode_slices, propagate_volume};
use crate::screening::{build_representative_set, select_test_slice};
use crate::synth::generate;
use crate::trainer::{
    gradcheck_full_objective, train, TrainReport, FULL_OBJECTIVE_TOL,
};
use crate::voldata::{
    load_mask, load_mask_auto, load_volume, save_mask, save_volume, DatasetManifest,
    ManifestEntry, ManifestRole, Mask, SliceOrigin, Volume, VolumeMeta,
};

#[derive(Parser)]
#[command(name = "oneseg", version, about = "Slice-correspondence segmentation")]
struct Cli {
    /// key=value config file applied on top of the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages; ONESEG_WORKERS is the fallback.
    /// 1 is the bit-reproducible reference mode.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired synthetic volume and mask files plus a manifest.
    Synth(SynthArgs),
    /// Train the encoder on the volumes listed in a manifest.
    Train(TrainArgs),
    /// Report representative slices for every volume in a manifest.
    Screen(ScreenArgs),
    /// Propagate one annotated slice through a volume.
    Propagate(PropagateArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run synth, train, propagate, and evaluate end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for volumes, masks, and manifest.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of volumes to generate.
    #[arg(long, default_value_t = 4)]
    volumes: usize,
    /// Base seed; volume v draws from seed + v. Defaults to synth.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest of training volumes; mask columns are allowed but unused,
    /// the training signal is the volumes themselves.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Checkpoint output directory.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Also write the per-epoch report CSV here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Overrides train.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.epochs from the config.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoleArg {
    /// Representative sets for slice-pair training.
    Train,
    /// The single slice an expert would annotate.
    Test,
}

#[derive(Args)]
struct ScreenArgs {
    /// Manifest of volumes to screen.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Encoder checkpoint; without one a fresh encoder from encoder.seed
    /// is used, matching how training screens its very first epoch.
    #[arg(long, value_name = "DIR")]
    checkpoint: Option<PathBuf>,
    /// Report format: train emits `id<TAB>i,j,k`, test emits `id<TAB>i`.
    #[arg(long, value_enum, default_value_t = RoleArg::Train)]
    role: RoleArg,
    /// Seed for the interval draw in train role. Defaults to train.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PropagateArgs {
    /// Volume to segment.
    #[arg(long, value_name = "FILE")]
    volume: PathBuf,
    /// Encoder checkpoint directory.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Single-slice expert annotation. Without it the command only prints
    /// the slice index to annotate and writes nothing.
    #[arg(long, value_name = "FILE")]
    mask: Option<PathBuf>,
    /// Slice index the mask annotates; omitted means auto-selected.
    #[arg(long, value_name = "K")]
    rep_index: Option<usize>,
    /// Output path for the propagated mask; required with --mask.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted mask file; repeat for several volumes.
    #[arg(long, value_name = "FILE", required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth mask file, paired with --pred in order.
    #[arg(long, value_name = "FILE", required = true)]
    gt: Vec<PathBuf>,
    /// Voxel spacing as z,y,x.
    #[arg(long, value_name = "Z,Y,X", default_value = "1,1,1")]
    spacing: String,
    /// Write the summary CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write per-slice DICE rows (volume_id,slice,dice) here.
    #[arg(long, value_name = "FILE")]
    per_slice: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the probe tensors.
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

/// Model components that can be switched off to measure their effect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Train without the cycle-consistency term (loss weights 1 and 0).
    NoCycle,
    /// Annotate a random slice instead of the screened representative.
    NoScreening,
}

#[derive(Args)]
struct PipelineArgs {
    /// Output directory for every artifact of the run.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Training volumes to generate.
    #[arg(long, default_value_t = 6)]
    train_volumes: usize,
    /// Test volumes to generate.
    #[arg(long, default_value_t = 2)]
    test_volumes: usize,
    /// Master seed for data, training, and screening.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Overrides train.epochs from the config.
    #[arg(long)]
    epochs: Option<usize>,
    /// Drop a model component.
    #[arg(long, value_enum)]
    ablate: Option<Ablation>,
}

/// Runs the command line and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("oneseg: {e}");
            match e {
                Error::Validation(_) | Error::ShapeMismatch { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    init_workers(cli.workers)?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(args) => cmd_synth(&cfg, &args),
        Command::Train(args) => cmd_train(&cfg, &args),
        Command::Screen(args) => cmd_screen(&cfg, &args),
        Command::Propagate(args) => cmd_propagate(&cfg, &args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Pipeline(args) => run_pipeline(&PipelineOptions {
            out: args.out.clone(),
            cfg: {
                let mut cfg = cfg;
                if let Some(e) = args.epochs {
                    cfg.epochs = e;
                }
                cfg
            },
            train_volumes: args.train_volumes,
            test_volumes: args.test_volumes,
            seed: args.seed,
            ablate: args.ablate,
        })
        .map(|_| ()),
    }
}

fn init_workers(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("ONESEG_WORKERS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                Error::validation(format!("ONESEG_WORKERS `{v}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::validation("worker count must be >= 1"));
    }
    if rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_err()
        && rayon::current_num_threads() != n
    {
        eprintln!(
            "oneseg: thread pool already running with {} workers",
            rayon::current_num_threads()
        );
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    cfg.validate()?;
    if args.volumes == 0 {
        return Err(Error::validation("--volumes must be >= 1"));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let base = args.seed.unwrap_or(cfg.synth.seed);
    let mut entries = Vec::new();
    for v in 0..args.volumes {
        let name = format!("vol{v:03}");
        let (volume, mask) = synth_named(cfg, base + v as u64, &name)?;
        let vol_path = args.out.join(format!("{name}.oseg"));
        let mask_path = args.out.join(format!("{name}_mask.oseg"));
        save_volume(&volume, &vol_path)?;
        save_mask(&mask, &mask_path)?;
        println!("wrote {}", vol_path.display());
        entries.push(ManifestEntry {
            volume: vol_path,
            mask: Some(mask_path),
        });
    }
    let manifest_path = args.out.join("manifest.txt");
    DatasetManifest {
        role: ManifestRole::Train,
        entries,
    }
    .save(&manifest_path)?;
    println!("manifest {}", manifest_path.display());
    Ok(())
}

/// Generates one synthetic volume/mask pair carrying `name` as its id.
fn synth_named(cfg: &RunConfig, seed: u64, name: &str) -> Result<(Volume, Mask)> {
    let mut synth_cfg = cfg.synth.clone();
    synth_cfg.seed = seed;
    let (mut volume, mut mask) = generate(&synth_cfg)?;
    volume.meta.id = name.to_string();
    mask.meta.id = name.to_string();
    Ok((volume, mask))
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&args.data, ManifestRole::Test)?;
    let volumes: Vec<Volume> = manifest
        .entries
        .iter()
        .map(|e| load_volume(&e.volume))
        .collect::<Result<_>>()?;
    let bank = build_bank(&cfg.gabor)?;
    let mut train_cfg = cfg.train_config();
    if let Some(s) = args.seed {
        train_cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    let enc_cfg = cfg.encoder_config(bank.channels());
    let (params, mut report) = train(&volumes, &cfg.gabor, &enc_cfg, &train_cfg)?;
    save_checkpoint(&params, &args.checkpoint)?;
    report.checkpoint = Some(args.checkpoint.clone());
    for e in &report.epochs {
        println!(
            "epoch {}: loss {:.6} sche {:.6} cyc {:.6} lr {}",
            e.epoch, e.loss, e.l_sche, e.l_cyc, e.lr
        );
    }
    if let Some(path) = &args.report {
        report.write_csv(path)?;
    }
    println!("checkpoint {}", args.checkpoint.display());
    Ok(())
}

/// Loads the checkpoint, or initializes a fresh encoder when none is
/// given, and checks it against the configured Gabor bank.
fn encoder_for(cfg: &RunConfig, checkpoint: Option<&Path>, bank: &GaborBank) -> Result<EncoderParams> {
    let params = match checkpoint {
        Some(dir) => load_checkpoint(dir)?,
        None => init_encoder(&cfg.encoder_config(bank.channels()))?,
    };
    if params.config.in_channels != bank.channels() {
        return Err(Error::shape(
            "encoder input channels vs Gabor bank",
            bank.channels(),
            params.config.in_channels,
        ));
    }
    Ok(params)
}

fn cmd_screen(cfg: &RunConfig, args: &ScreenArgs) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&args.data, ManifestRole::Test)?;
    let bank = build_bank(&cfg.gabor)?;
    let params = encoder_for(cfg, args.checkpoint.as_deref(), &bank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(cfg.train_seed));
    for entry in &manifest.entries {
        let volume = load_volume(&entry.volume)?;
        let feats = encode_slices(&volume, &bank, &params)?;
        match args.role {
            RoleArg::Train => {
                let set = build_representative_set(&volume.meta.id, &feats, &mut rng, cfg.cosine)?;
                let indices: Vec<String> = set.indices.iter().map(|i| i.to_string()).collect();
                println!("{}\t{}", volume.meta.id, indices.join(","));
            }
            RoleArg::Test => {
                let rep = select_test_slice(&feats, cfg.cosine)?;
                println!("{}\t{rep}", volume.meta.id);
            }
        }
    }
    Ok(())
}

fn cmd_propagate(cfg: &RunConfig, args: &PropagateArgs) -> Result<()> {
    cfg.validate()?;
    let volume = load_volume(&args.volume)?;
    let bank = build_bank(&cfg.gabor)?;
    let params = encoder_for(cfg, Some(&args.checkpoint), &bank)?;
    let Some(mask_path) = &args.mask else {
        // phase 1: name the slice to annotate, write nothing
        let feats = encode_slices(&volume, &bank, &params)?;
        println!("{}", select_test_slice(&feats, cfg.cosine)?);
        return Ok(());
    };
    let out = args.out.as_ref().ok_or_else(|| {
        Error::validation("--out is required when propagating with --mask")
    })?;
    let rep = match args.rep_index {
        Some(k) => k,
        None => {
            let feats = encode_slices(&volume, &bank, &params)?;
            let k = select_test_slice(&feats, cfg.cosine)?;
            println!("rep {k}");
            k
        }
    };
    let rep_meta = VolumeMeta::new(
        volume.meta.id.clone(),
        1,
        volume.meta.height,
        volume.meta.width,
    )?;
    let rep_mask = load_mask(mask_path, &rep_meta)?;
    let result = propagate_volume(
        &volume,
        rep,
        &rep_mask,
        &params,
        &bank,
        cfg.patch,
        cfg.threshold,
    )?;
    save_mask(&result.mask, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_spacing(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "spacing `{s}` must be three comma-separated numbers"
        )));
    }
    let mut spacing = [0.0f64; 3];
    for (i, p) in parts.iter().enumerate() {
        spacing[i] = p
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad spacing component `{p}`")))?;
        if !(spacing[i] > 0.0 && spacing[i].is_finite()) {
            return Err(Error::validation(format!(
                "spacing component `{p}` must be > 0"
            )));
        }
    }
    Ok(spacing)
}

fn summary_csv(rows: &[EvalResult]) -> String {
    let mut out = String::from("volume_id,dice,ravd,assd\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.volume_id, r.dice, r.ravd, r.assd));
    }
    out
}

fn per_slice_csv(rows: &[EvalResult]) -> String {
    let mut out = String::from("volume_id,slice,dice\n");
    for r in rows {
        for (d, dice) in r.per_slice_dice.iter().enumerate() {
            out.push_str(&format!("{},{d},{dice}\n", r.volume_id));
        }
    }
    out
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.pred.len() != args.gt.len() {
        return Err(Error::validation(format!(
            "{} --pred files but {} --gt files",
            args.pred.len(),
            args.gt.len()
        )));
    }
    let spacing = parse_spacing(&args.spacing)?;
    let mut rows = Vec::new();
    for (pred_path, gt_path) in args.pred.iter().zip(&args.gt) {
        let pred = load_mask_auto(pred_path)?;
        let gt = load_mask_auto(gt_path)?;
        rows.push(evaluate_volume(&pred, &gt, spacing)?);
    }
    let csv = summary_csv(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.per_slice {
        std::fs::write(path, per_slice_csv(&rows)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut all_ok = true;
    for report in crate::diffcore::gradcheck_suite(args.seed) {
        let ok = report.passed();
        all_ok &= ok;
        println!(
            "{:<16} max_rel_err {:>10.3e}  tol {:.0e}  {}",
            report.name,
            report.max_rel_err,
            report.tolerance,
            if ok { "ok" } else { "FAIL" }
        );
    }
    let full = gradcheck_full_objective(args.seed)?;
    let ok = full <= FULL_OBJECTIVE_TOL;
    all_ok &= ok;
    println!(
        "{:<16} max_rel_err {:>10.3e}  tol {:.0e}  {}",
        "full-objective",
        full,
        FULL_OBJECTIVE_TOL,
        if ok { "ok" } else { "FAIL" }
    );
    if all_ok {
        Ok(())
    } else {
        Err(Error::Numeric(
            "gradient check failed; see report above".to_string(),
        ))
    }
}

/// Everything `pipeline` needs; the acceptance tests drive this directly.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub out: PathBuf,
    pub cfg: RunConfig,
    pub train_volumes: usize,
    pub test_volumes: usize,
    pub seed: u64,
    pub ablate: Option<Ablation>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: TrainReport,
    /// One row per test volume, in generation order.
    pub summary: Vec<EvalResult>,
}

/// Chains synth -> train -> propagate -> evaluate under one seed and
/// writes every artifact below `opts.out`:
///
/// ```text
/// out/run_config.txt     effective configuration
/// out/data/              generated volumes, masks, manifests
/// out/ckpt/              trained encoder
/// out/train_report.csv   per-epoch losses
/// out/preds/             propagated masks for the test volumes
/// out/summary.csv        volume_id,dice,ravd,assd
/// ```
pub fn run_pipeline(opts: &PipelineOptions) -> Result<PipelineOutcome> {
    let mut cfg = opts.cfg.clone();
    if opts.ablate == Some(Ablation::NoCycle) {
        cfg.lambda1 = 1.0;
        cfg.lambda2 = 0.0;
    }
    cfg.train_seed = opts.seed;
    cfg.validate()?;
    if opts.train_volumes == 0 || opts.test_volumes == 0 {
        return Err(Error::validation(
            "pipeline needs >= 1 training and >= 1 test volume",
        ));
    }

    let out = &opts.out;
    let data_dir = out.join("data");
    let ckpt_dir = out.join("ckpt");
    let preds_dir = out.join("preds");
    for dir in [out, &data_dir, &ckpt_dir, &preds_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let config_path = out.join("run_config.txt");
    std::fs::write(&config_path, cfg.echo()).map_err(|e| Error::io(&config_path, e))?;

    // data: test volumes draw from an offset so adding training volumes
    // never changes the test set
    let mut train_volumes = Vec::new();
    let mut train_entries = Vec::new();
    for v in 0..opts.train_volumes {
        let name = format!("train{v:03}");
        let (volume, mask) = synth_named(&cfg, opts.seed + v as u64, &name)?;
        let vol_path = data_dir.join(format!("{name}.oseg"));
        let mask_path = data_dir.join(format!("{name}_mask.oseg"));
        save_volume(&volume, &vol_path)?;
        save_mask(&mask, &mask_path)?;
        train_entries.push(ManifestEntry {
            volume: vol_path,
            mask: Some(mask_path),
        });
        train_volumes.push(volume);
    }
    let mut test_pairs = Vec::new();
    let mut test_entries = Vec::new();
    for v in 0..opts.test_volumes {
        let name = format!("test{v:03}");
        let (volume, mask) = synth_named(&cfg, opts.seed + 10_000 + v as u64, &name)?;
        let vol_path = data_dir.join(format!("{name}.oseg"));
        let mask_path = data_dir.join(format!("{name}_mask.oseg"));
        save_volume(&volume, &vol_path)?;
        save_mask(&mask, &mask_path)?;
        test_entries.push(ManifestEntry {
            volume: vol_path,
            mask: Some(mask_path),
        });
        test_pairs.push((volume, mask));
    }
    DatasetManifest {
        role: ManifestRole::Train,
        entries: train_entries,
    }
    .save(&data_dir.join("train.txt"))?;
    DatasetManifest {
        role: ManifestRole::Test,
        entries: test_entries,
    }
    .save(&data_dir.join("test.txt"))?;
    println!(
        "synth: {} training + {} test volumes in {}",
        opts.train_volumes,
        opts.test_volumes,
        data_dir.display()
    );

    // train
    let bank = build_bank(&cfg.gabor)?;
    let train_cfg = cfg.train_config();
    let enc_cfg = cfg.encoder_config(bank.channels());
    let (params, mut report) = train(&train_volumes, &cfg.gabor, &enc_cfg, &train_cfg)?;
    save_checkpoint(&params, &ckpt_dir)?;
    report.checkpoint = Some(ckpt_dir.clone());
    report.write_csv(&out.join("train_report.csv"))?;
    for e in &report.epochs {
        println!(
            "train: epoch {} loss {:.6} sche {:.6} cyc {:.6}",
            e.epoch, e.loss, e.l_sche, e.l_cyc
        );
    }

    // propagate each test volume from one ground-truth slice, then score
    let mut pick_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7069_636b);
    let mut summary = Vec::new();
    for (volume, gt) in &test_pairs {
        let rep = if opts.ablate == Some(Ablation::NoScreening) {
            pick_rng.random_range(0..volume.meta.depth)
        } else {
            let feats = encode_slices(volume, &bank, &params)?;
            select_test_slice(&feats, cfg.cosine)?
        };
        let rep_mask = single_slice_mask(gt, rep)?;
        let result = propagate_volume(
            volume,
            rep,
            &rep_mask,
            &params,
            &bank,
            cfg.patch,
            cfg.threshold,
        )?;
        save_mask(
            &result.mask,
            &preds_dir.join(format!("{}_pred.oseg", volume.meta.id)),
        )?;
        let row = evaluate_volume(&result.mask, gt, [1.0, 1.0, 1.0])?;
        println!(
            "eval: {} rep {} dice {:.4} ravd {:.2} assd {:.4}",
            row.volume_id, rep, row.dice, row.ravd, row.assd
        );
        summary.push(row);
    }
    let summary_path = out.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(&summary))
        .map_err(|e| Error::io(&summary_path, e))?;
    println!("summary {}", summary_path.display());
    Ok(PipelineOutcome { report, summary })
}

/// Cuts slice `d` out of a volume mask as a standalone one-slice mask.
fn single_slice_mask(mask: &Mask, d: usize) -> Result<Mask> {
    if d >= mask.meta.depth {
        return Err(Error::validation(format!(
            "slice {d} out of range for depth {}",
            mask.meta.depth
        )));
    }
    let meta = VolumeMeta::new(
        mask.meta.id.clone(),
        1,
        mask.meta.height,
        mask.meta.width,
    )?;
    let stride = mask.meta.voxels_per_slice() * mask.channels;
    let data = mask.data()[d * stride..(d + 1) * stride].to_vec();
    Mask::new(meta, mask.channels, data, vec![SliceOrigin::GroundTruth])
}
