//! Acceptance gate: nine criteria, one pass/fail line each.
//!
//! Every criterion runs even if an earlier one fails; the test panics at
//! the end when any line reads FAIL. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines as they
//! are produced.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use oneseg::cli::{run_pipeline, Ablation, PipelineOptions};
use oneseg::config::RunConfig;
use oneseg::diffcore::gradcheck_suite;
use oneseg::metrics::{assd, dice, ravd};
use oneseg::reconstruct::reconstruction_factors;
use oneseg::screening::{
    build_representative_set_with_interval, flatten_features, kmeans, rep_score,
    select_test_slice, CosineMode, INTERVALS,
};
use oneseg::synth::{oracle_assd, oracle_dense_attention, oracle_repscore};
use oneseg::trainer::{
    anneal_alpha, gradcheck_full_objective, learning_rate, FULL_OBJECTIVE_TOL,
};
use oneseg::voldata::oseg::{self, OsegTensor, Payload};
use oneseg::voldata::{FeatureMap, Mask, SliceOrigin, VolumeMeta};

/// Ok carries a short detail string for the PASS line.
type C = std::result::Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_features(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    let data = (0..h * w * c).map(|_| rng.random::<f32>() * 3.0 - 1.5).collect();
    FeatureMap::new(h, w, c, 1, data).expect("random feature map")
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_attention_normalization() -> C {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA77E);
    for trial in 0..1000 {
        let h = rng.random_range(1..=10);
        let w = rng.random_range(1..=10);
        let c = rng.random_range(1..=5);
        let window = [1usize, 3, 5, 7, 13][rng.random_range(0..5)];
        let query = random_features(&mut rng, h, w, c);
        let key = random_features(&mut rng, h, w, c);
        let got = reconstruction_factors(&query, &key, window).map_err(err)?;
        let want = oracle_dense_attention(&query, &key, window).map_err(err)?;
        for pixel in 0..h * w {
            let ge = got.entries(pixel);
            let we = &want[pixel];
            if ge.len() != we.len() {
                return Err(format!(
                    "trial {trial} pixel {pixel}: {} entries vs oracle {}",
                    ge.len(),
                    we.len()
                ));
            }
            let mut sum = 0.0f64;
            for (&(gs, gw), &(ws, ww)) in ge.iter().zip(we) {
                if gs != ws {
                    return Err(format!(
                        "trial {trial} pixel {pixel}: source {gs} vs oracle {ws}"
                    ));
                }
                let diff = (gw as f64 - ww).abs();
                if diff > 1e-6 {
                    return Err(format!(
                        "trial {trial} pixel {pixel} source {gs}: weight off by {diff:.3e}"
                    ));
                }
                sum += gw as f64;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(format!(
                    "trial {trial} pixel {pixel}: weights sum to {sum}"
                ));
            }
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    if dt >= 10.0 {
        return Err(format!("1000 instances took {dt:.1} s, budget 10 s"));
    }
    Ok(format!("1000 instances in {dt:.2} s"))
}

fn c2_gradient_correctness() -> C {
    let clock = Instant::now();
    let reports = gradcheck_suite(0x5eed);
    let mut worst_primitive = 0.0f64;
    for r in &reports {
        if !r.passed() {
            return Err(format!(
                "{}: max rel err {:.3e} > {:.0e}",
                r.name, r.max_rel_err, r.tolerance
            ));
        }
        if r.name != "attention_chain" {
            if r.max_rel_err > 1e-6 {
                return Err(format!(
                    "primitive {} at {:.3e}, bound 1e-6",
                    r.name, r.max_rel_err
                ));
            }
            worst_primitive = worst_primitive.max(r.max_rel_err);
        }
    }
    let full = gradcheck_full_objective(1234).map_err(err)?;
    if full > FULL_OBJECTIVE_TOL {
        return Err(format!(
            "full objective at {full:.3e}, bound {FULL_OBJECTIVE_TOL:.0e}"
        ));
    }
    let dt = clock.elapsed().as_secs_f64();
    if dt >= 60.0 {
        return Err(format!("took {dt:.1} s, budget 60 s"));
    }
    Ok(format!(
        "{} checks, worst primitive {worst_primitive:.1e}, full objective {full:.1e}, {dt:.1} s",
        reports.len()
    ))
}

fn c3_screening_oracle_equivalence() -> C {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C0E);
    for trial in 0..200 {
        let depth = rng.random_range(2..=16);
        let h = rng.random_range(2..=5);
        let w = rng.random_range(2..=5);
        let c = rng.random_range(1..=4);
        let feats: Vec<FeatureMap> =
            (0..depth).map(|_| random_features(&mut rng, h, w, c)).collect();
        let interval = INTERVALS[rng.random_range(0..INTERVALS.len())];
        let kmeans_seed: u64 = rng.random();

        let set = build_representative_set_with_interval(
            "v", &feats, interval, kmeans_seed, CosineMode::Flat,
        )
        .map_err(err)?;

        let k = (depth / interval).max(2).min(depth);
        if set.k != k {
            return Err(format!("trial {trial}: k {} vs expected {k}", set.k));
        }
        let points: Vec<Vec<f32>> = feats.iter().map(flatten_features).collect();
        let clusters = kmeans(&points, k, kmeans_seed).map_err(err)?;
        let mut expect = Vec::new();
        for cluster in 0..k {
            let members: Vec<usize> =
                (0..depth).filter(|&i| clusters.labels[i] == cluster).collect();
            if members.is_empty() {
                continue;
            }
            let scores = oracle_repscore(&feats, &members).map_err(err)?;
            let mut best = 0usize;
            for i in 1..members.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            expect.push(members[best]);
            for (slot, &m) in members.iter().enumerate() {
                let prod = rep_score(m, &members, &feats, CosineMode::Flat).map_err(err)?;
                let diff = (prod - scores[slot]).abs();
                if diff > 1e-9 {
                    return Err(format!(
                        "trial {trial} slice {m}: rep_score off oracle by {diff:.3e}"
                    ));
                }
            }
        }
        expect.sort_unstable();
        if expect != set.indices {
            return Err(format!(
                "trial {trial}: representatives {:?} vs brute force {:?}",
                set.indices, expect
            ));
        }

        let pick = select_test_slice(&feats, CosineMode::Flat).map_err(err)?;
        let all: Vec<usize> = (0..depth).collect();
        let scores = oracle_repscore(&feats, &all).map_err(err)?;
        let mut best = 0usize;
        for i in 1..depth {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        if pick != best {
            return Err(format!("trial {trial}: test slice {pick} vs brute force {best}"));
        }
    }
    Ok("200 volumes".into())
}

fn scale_features(feats: &[FeatureMap], c: f64) -> Vec<FeatureMap> {
    feats
        .iter()
        .map(|f| {
            let data = f.data().iter().map(|&v| (v as f64 * c) as f32).collect();
            FeatureMap::new(f.height, f.width, f.channels, f.stride, data).unwrap()
        })
        .collect()
}

/// Power-of-two factors scale f32 values exactly (same mantissa, shifted
/// exponent), so the full screening stack including k-means is provably
/// invariant and checked for it. Arbitrary factors round every coordinate
/// by up to 2^-24, which can flip k-means labels at near-tied cluster
/// boundaries; the cosine-argmax stages have no such boundaries and are
/// checked under arbitrary factors too.
fn c4_screening_scale_invariance() -> C {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA1E);
    for trial in 0..100 {
        // depth 2 would tie the test-slice argmax structurally: both
        // slices score 1 + sim(0, 1) exactly, leaving rounding to decide
        let depth = rng.random_range(3..=12);
        let h = rng.random_range(2..=5);
        let w = rng.random_range(2..=5);
        let ch = rng.random_range(1..=3);
        let feats: Vec<FeatureMap> =
            (0..depth).map(|_| random_features(&mut rng, h, w, ch)).collect();
        let mode = if trial % 3 == 0 { CosineMode::PerPixel } else { CosineMode::Flat };
        let interval = INTERVALS[rng.random_range(0..INTERVALS.len())];
        let kmeans_seed: u64 = rng.random();

        let pow2 = 2f64.powi(rng.random_range(-12..13));
        let a = build_representative_set_with_interval("v", &feats, interval, kmeans_seed, mode)
            .map_err(err)?;
        let b = build_representative_set_with_interval(
            "v",
            &scale_features(&feats, pow2),
            interval,
            kmeans_seed,
            mode,
        )
        .map_err(err)?;
        if a.indices != b.indices {
            return Err(format!(
                "trial {trial} (c = {pow2:.3e}): {:?} vs {:?}",
                a.indices, b.indices
            ));
        }

        let free = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);
        let reference = select_test_slice(&feats, mode).map_err(err)?;
        for c in [pow2, free] {
            let pick = select_test_slice(&scale_features(&feats, c), mode).map_err(err)?;
            if pick != reference {
                return Err(format!(
                    "trial {trial} (c = {c:.3e}): test slice {pick} vs {reference}"
                ));
            }
        }
    }
    Ok("100 trials".into())
}

fn c5_scheduler_endpoints() -> C {
    let start = anneal_alpha(0.0).map_err(err)?;
    if start != (0.9, 0.1) {
        return Err(format!("anneal_alpha(0) = {start:?}"));
    }
    let end = anneal_alpha(1.0).map_err(err)?;
    if end != (0.5, 0.5) {
        return Err(format!("anneal_alpha(1) = {end:?}"));
    }
    for epoch in 0..=10usize {
        let lr = learning_rate(1e-4, epoch);
        let want = 1e-4 * 0.5f64.powi(epoch as i32);
        if lr != want {
            return Err(format!("lr at epoch {epoch}: {lr:e} vs {want:e}"));
        }
    }
    if learning_rate(1e-4, 0) != 1e-4
        || learning_rate(1e-4, 1) != 5e-5
        || learning_rate(1e-4, 2) != 2.5e-5
    {
        return Err("lr sequence does not match exact literals".into());
    }
    Ok(String::new())
}

fn c6_metric_oracles() -> C {
    let same = [true, true, false, true];
    if dice(&same, &same).map_err(err)? != 1.0 {
        return Err("identical masks should score dice 1.0".into());
    }
    if dice(&[true, true, false, false], &[false, false, true, true]).map_err(err)? != 0.0 {
        return Err("disjoint masks should score dice 0.0".into());
    }
    let a = [true, true, true, true, false, false];
    let b = [true, true, false, false, true, true];
    if dice(&a, &b).map_err(err)? != 0.5 {
        return Err("|A|=4, |B|=4, overlap 2 should score dice 0.5".into());
    }
    if dice(&[false, false], &[false, false]).map_err(err)? != 1.0 {
        return Err("two empty masks should score dice 1.0".into());
    }

    if ravd(&same, &same).map_err(err)? != 0.0 {
        return Err("equal volumes should score ravd 0".into());
    }
    let mut pred = vec![false; 256];
    let mut gt = vec![false; 256];
    pred.iter_mut().take(110).for_each(|v| *v = true);
    gt.iter_mut().take(100).for_each(|v| *v = true);
    if ravd(&pred, &gt).map_err(err)? != 10.0 {
        return Err("|pred| 110 vs |gt| 100 should score ravd 10".into());
    }
    if ravd(&vec![false; 256], &gt).map_err(err)? != 100.0 {
        return Err("empty prediction should score ravd 100".into());
    }

    let cube = {
        let mut m = vec![false; 27];
        m[13] = true;
        m
    };
    if assd(&cube, &cube, (3, 3, 3), [1.0; 3]).map_err(err)? != 0.0 {
        return Err("identical masks should score assd 0".into());
    }
    let mut p = vec![false; 5];
    let mut g = vec![false; 5];
    p[0] = true;
    g[3] = true;
    if assd(&p, &g, (1, 1, 5), [1.0; 3]).map_err(err)? != 3.0 {
        return Err("single voxels 3 apart should score assd 3".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xA55D);
    for trial in 0..50 {
        let d = rng.random_range(2..=4);
        let h = rng.random_range(8..=10);
        let w = rng.random_range(8..=10);
        let n = d * h * w;
        let mut pb: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let mut gb: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        pb[0] = true;
        gb[n - 1] = true;
        let spacing = if trial % 2 == 0 { [1.0; 3] } else { [2.0, 0.7, 1.3] };
        let prod = assd(&pb, &gb, (d, h, w), spacing).map_err(err)?;

        let to_mask = |fg: &[bool], id: &str| -> Result<Mask, String> {
            let meta = VolumeMeta::new(id, d, h, w).map_err(err)?;
            let data = fg.iter().map(|&v| if v { 1.0f32 } else { 0.0 }).collect();
            Mask::new(meta, 1, data, vec![SliceOrigin::GroundTruth; d]).map_err(err)
        };
        let oracle =
            oracle_assd(&to_mask(&pb, "p")?, &to_mask(&gb, "g")?, spacing).map_err(err)?;
        if prod.to_bits() != oracle.to_bits() {
            return Err(format!(
                "trial {trial}: assd {prod} vs oracle {oracle} (not bit-identical)"
            ));
        }
    }
    Ok("hand examples exact, 50 cross-checked masks bit-identical".into())
}

fn c7_end_to_end() -> C {
    let clock = Instant::now();
    let tmp = TempDir::new().map_err(err)?;
    let full = run_pipeline(&PipelineOptions {
        out: tmp.path().join("full"),
        cfg: RunConfig::default(),
        train_volumes: 6,
        test_volumes: 2,
        seed: 1,
        ablate: None,
    })
    .map_err(err)?;

    let teacher = &full.report.teacher;
    let (first, last) = match (teacher.first(), teacher.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err("empty teacher series".into()),
    };
    if !(first > last) {
        return Err(format!("teacher term {first} -> {last} did not decrease"));
    }
    let dices: Vec<f64> = full.summary.iter().map(|r| r.dice).collect();
    let full_median = median(&dices);
    if full_median < 0.85 {
        return Err(format!("median dice {full_median:.4} below 0.85 ({dices:?})"));
    }

    let ablated = run_pipeline(&PipelineOptions {
        out: tmp.path().join("ablated"),
        cfg: RunConfig::default(),
        train_volumes: 6,
        test_volumes: 2,
        seed: 1,
        ablate: Some(Ablation::NoScreening),
    })
    .map_err(err)?;
    let abl_dices: Vec<f64> = ablated.summary.iter().map(|r| r.dice).collect();
    let abl_median = median(&abl_dices);
    if abl_median > full_median {
        return Err(format!(
            "no-screening median dice {abl_median:.4} above full model {full_median:.4}"
        ));
    }

    let dt = clock.elapsed().as_secs_f64();
    if dt >= 900.0 {
        return Err(format!("took {dt:.0} s, budget 900 s"));
    }
    Ok(format!(
        "median dice {full_median:.3} full / {abl_median:.3} ablated, teacher {first:.4} -> {last:.4}, {dt:.0} s"
    ))
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<(), String> {
    let mut entries: Vec<_> = std::fs::read_dir(root.join(rel))
        .map_err(err)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let sub = rel.join(e.file_name());
        if e.file_type().map_err(err)?.is_dir() {
            collect_files(root, &sub, out)?;
        } else {
            out.push(sub);
        }
    }
    Ok(())
}

/// The report CSV's wall-clock column, the only legitimately varying
/// artifact byte, is the last field of every row.
fn strip_last_field(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

fn c8_determinism() -> C {
    let tmp = TempDir::new().map_err(err)?;
    let cfg_path = tmp.path().join("cfg.txt");
    std::fs::write(
        &cfg_path,
        "train.epochs=3\nsynth.depth=8\nsynth.height=48\nsynth.width=48\n\
         synth.drift_y=0.3\nsynth.drift_x=0.3\nsynth.growth=0.1\n",
    )
    .map_err(err)?;

    let out = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &out {
        let result = Command::new(env!("CARGO_BIN_EXE_oneseg"))
            .args([
                "pipeline",
                "--out",
                dir.to_str().unwrap(),
                "--seed",
                "7",
                "--workers",
                "1",
                "--train-volumes",
                "3",
                "--test-volumes",
                "1",
                "--config",
                cfg_path.to_str().unwrap(),
            ])
            .output()
            .map_err(err)?;
        if !result.status.success() {
            return Err(format!(
                "pipeline run failed: {}",
                String::from_utf8_lossy(&result.stderr)
            ));
        }
    }

    let mut files = [Vec::new(), Vec::new()];
    for i in 0..2 {
        collect_files(&out[i], Path::new(""), &mut files[i])?;
    }
    if files[0] != files[1] {
        return Err(format!(
            "file sets differ: {:?} vs {:?}",
            files[0], files[1]
        ));
    }
    let mut compared = 0usize;
    for rel in &files[0] {
        let a = std::fs::read(out[0].join(rel)).map_err(err)?;
        let b = std::fs::read(out[1].join(rel)).map_err(err)?;
        let same = if rel.file_name().is_some_and(|n| n == "train_report.csv") {
            strip_last_field(&String::from_utf8_lossy(&a))
                == strip_last_field(&String::from_utf8_lossy(&b))
        } else {
            a == b
        };
        if !same {
            return Err(format!("{} differs between runs", rel.display()));
        }
        compared += 1;
    }
    Ok(format!("{compared} artifacts byte-identical"))
}

fn c9_format_round_trips() -> C {
    let tmp = TempDir::new().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x05E6);
    for trial in 0..100 {
        let rank = if rng.random::<bool>() { 3 } else { 4 };
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6)).collect();
        let n: usize = dims.iter().product();
        let payload = if rng.random::<bool>() {
            Payload::F32((0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
        } else {
            Payload::U8((0..n).map(|_| rng.random::<u8>()).collect())
        };
        let tensor = OsegTensor::new(dims.clone(), payload).map_err(err)?;

        let p1 = tmp.path().join(format!("{trial}_a.oseg"));
        let p2 = tmp.path().join(format!("{trial}_b.oseg"));
        oseg::write(&p1, &tensor).map_err(err)?;
        let bytes1 = std::fs::read(&p1).map_err(err)?;
        let back = oseg::read(&p1).map_err(err)?;
        oseg::write(&p2, &back).map_err(err)?;
        let bytes2 = std::fs::read(&p2).map_err(err)?;

        if bytes1 != bytes2 {
            return Err(format!("trial {trial}: rewrite is not byte-identical"));
        }
        if back.dims != tensor.dims {
            return Err(format!("trial {trial}: dims {:?} vs {:?}", back.dims, tensor.dims));
        }
        let equal = match (&tensor.payload, &back.payload) {
            (Payload::F32(x), Payload::F32(y)) => {
                x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits())
            }
            (Payload::U8(x), Payload::U8(y)) => x == y,
            _ => false,
        };
        if !equal {
            return Err(format!("trial {trial}: payload changed across the round trip"));
        }
    }
    Ok("100 tensors".into())
}

#[test]
fn acceptance() {
    let criteria: [(usize, &str, fn() -> C); 9] = [
        (1, "attention normalization", c1_attention_normalization),
        (2, "gradient correctness", c2_gradient_correctness),
        (3, "screening oracle equivalence", c3_screening_oracle_equivalence),
        (4, "screening scale invariance", c4_screening_scale_invariance),
        (5, "scheduler endpoints", c5_scheduler_endpoints),
        (6, "metric oracles", c6_metric_oracles),
        (7, "end-to-end synthetic run", c7_end_to_end),
        (8, "determinism", c8_determinism),
        (9, "format round-trips", c9_format_round_trips),
    ];
    let mut failed = Vec::new();
    for (n, name, criterion) in criteria {
        match criterion() {
            Ok(detail) if detail.is_empty() => println!("criterion {n} ({name}): PASS"),
            Ok(detail) => println!("criterion {n} ({name}): PASS ({detail})"),
            Err(reason) => {
                println!("criterion {n} ({name}): FAIL - {reason}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
