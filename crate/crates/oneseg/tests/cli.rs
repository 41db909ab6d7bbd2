//! Binary-level contract: exit codes, the two-phase propagate workflow,
//! and the files each subcommand leaves behind.

use std::path::Path;
use std::process::{Command, Output};

use oneseg::voldata::{load_mask_auto, save_mask, Mask, SliceOrigin, VolumeMeta};

/// Config small enough that training in a test is instant.
const TINY_CFG: &str = "\
gabor.scales=1
gabor.orientations=2
gabor.kernel=5
encoder.layers=4:2
recon.patch=3
train.epochs=1
train.batch=1
synth.depth=4
synth.height=16
synth.width=16
synth.drift_y=0.2
synth.drift_x=0.2
synth.growth=0.05
synth.correlation=2
";

fn oneseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneseg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn oneseg")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn usage_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&oneseg(dir.path(), &["--help"]), 0);
    assert_code(&oneseg(dir.path(), &["--version"]), 0);

    let unknown = oneseg(dir.path(), &["frobnicate"]);
    assert_code(&unknown, 1);
    assert!(!String::from_utf8_lossy(&unknown.stderr).is_empty());

    // missing required flag
    assert_code(&oneseg(dir.path(), &["synth"]), 1);
    // invalid worker count
    assert_code(&oneseg(dir.path(), &["--workers", "0", "gradcheck"]), 1);
    // config file with an unknown key
    std::fs::write(dir.path().join("bad.cfg"), "no.such.key=1\n").unwrap();
    assert_code(
        &oneseg(dir.path(), &["--config", "bad.cfg", "synth", "--out", "d"]),
        1,
    );
}

#[test]
fn corrupt_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.oseg"), b"not a tensor").unwrap();
    let out = oneseg(
        dir.path(),
        &["evaluate", "--pred", "junk.oseg", "--gt", "junk.oseg"],
    );
    assert_code(&out, 2);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY_CFG).unwrap();
    for out_dir in ["a", "b"] {
        let out = oneseg(
            dir.path(),
            &[
                "--config", "tiny.cfg", "synth", "--out", out_dir, "--volumes", "2", "--seed",
                "3",
            ],
        );
        assert_code(&out, 0);
    }
    for name in ["vol000.oseg", "vol000_mask.oseg", "vol001.oseg", "manifest.txt"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn gradcheck_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = oneseg(dir.path(), &["gradcheck", "--seed", "3"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("full-objective"), "{text}");
    assert!(text.contains("conv2d"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn file_workflow_train_screen_propagate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.cfg"), TINY_CFG).unwrap();
    let cfg = &["--config", "tiny.cfg"][..];

    let out = oneseg(
        root,
        &[cfg, &["synth", "--out", "data", "--volumes", "2", "--seed", "1"][..]].concat(),
    );
    assert_code(&out, 0);

    let out = oneseg(
        root,
        &[
            cfg,
            &[
                "train",
                "--data",
                "data/manifest.txt",
                "--checkpoint",
                "ckpt",
                "--report",
                "report.csv",
            ][..],
        ]
        .concat(),
    );
    assert_code(&out, 0);
    assert!(root.join("ckpt/params.txt").exists());
    let report = std::fs::read_to_string(root.join("report.csv")).unwrap();
    assert!(report.starts_with("epoch,loss,l_sche,l_cyc,teacher,alpha1,lr,seconds\n"));
    assert_eq!(report.lines().count(), 2, "{report}");

    // screening reports: train role lists pair sources, test role one index
    let out = oneseg(
        root,
        &[
            cfg,
            &["screen", "--data", "data/manifest.txt", "--checkpoint", "ckpt"][..],
        ]
        .concat(),
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let (id, indices) = line.split_once('\t').expect("tab-separated");
        assert!(id.starts_with("vol"), "{line}");
        assert!(indices.split(',').count() >= 2, "{line}");
        for i in indices.split(',') {
            assert!(i.parse::<usize>().unwrap() < 4, "{line}");
        }
    }
    let out = oneseg(
        root,
        &[
            cfg,
            &[
                "screen",
                "--data",
                "data/manifest.txt",
                "--checkpoint",
                "ckpt",
                "--role",
                "test",
            ][..],
        ]
        .concat(),
    );
    assert_code(&out, 0);
    for line in stdout(&out).lines() {
        let (_, idx) = line.split_once('\t').unwrap();
        assert!(idx.parse::<usize>().unwrap() < 4, "{line}");
    }

    // propagate phase 1: names the slice, writes nothing
    let out = oneseg(
        root,
        &[
            cfg,
            &["propagate", "--volume", "data/vol000.oseg", "--checkpoint", "ckpt"][..],
        ]
        .concat(),
    );
    assert_code(&out, 0);
    let rep: usize = stdout(&out).trim().parse().expect("bare slice index");
    assert!(rep < 4);
    assert!(!root.join("pred.oseg").exists());

    // cut the annotation for that slice out of the ground truth
    let gt = load_mask_auto(&root.join("data/vol000_mask.oseg")).unwrap();
    let vox = gt.meta.height * gt.meta.width;
    let slice = gt.data()[rep * vox..(rep + 1) * vox].to_vec();
    let rep_meta = VolumeMeta::new("rep", 1, gt.meta.height, gt.meta.width).unwrap();
    let rep_mask = Mask::new(rep_meta, 1, slice, vec![SliceOrigin::GroundTruth]).unwrap();
    save_mask(&rep_mask, &root.join("rep.oseg")).unwrap();

    // --mask without --out is refused before anything is written
    let out = oneseg(
        root,
        &[
            cfg,
            &[
                "propagate",
                "--volume",
                "data/vol000.oseg",
                "--checkpoint",
                "ckpt",
                "--mask",
                "rep.oseg",
            ][..],
        ]
        .concat(),
    );
    assert_code(&out, 1);

    // phase 2: propagate the annotation
    let rep_s = rep.to_string();
    let out = oneseg(
        root,
        &[
            cfg,
            &[
                "propagate",
                "--volume",
                "data/vol000.oseg",
                "--checkpoint",
                "ckpt",
                "--mask",
                "rep.oseg",
                "--rep-index",
                &rep_s,
                "--out",
                "pred.oseg",
            ][..],
        ]
        .concat(),
    );
    assert_code(&out, 0);
    let pred = load_mask_auto(&root.join("pred.oseg")).unwrap();
    assert_eq!(
        (pred.meta.depth, pred.meta.height, pred.meta.width),
        (4, 16, 16)
    );
    assert_eq!(pred.slice_grid(rep).data, rep_mask.slice_grid(0).data);

    // evaluate: summary row plus optional per-slice rows
    let out = oneseg(
        root,
        &[
            "evaluate",
            "--pred",
            "pred.oseg",
            "--gt",
            "data/vol000_mask.oseg",
            "--per-slice",
            "slices.csv",
        ],
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.starts_with("volume_id,dice,ravd,assd\n"), "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("pred,"), "{text}");
    let slices = std::fs::read_to_string(root.join("slices.csv")).unwrap();
    assert!(slices.starts_with("volume_id,slice,dice\n"));
    assert_eq!(slices.lines().count(), 1 + 4, "{slices}");

    // mismatched pred/gt counts are a usage error
    let out = oneseg(
        root,
        &[
            "evaluate",
            "--pred",
            "pred.oseg",
            "--pred",
            "pred.oseg",
            "--gt",
            "data/vol000_mask.oseg",
        ],
    );
    assert_code(&out, 1);
}
