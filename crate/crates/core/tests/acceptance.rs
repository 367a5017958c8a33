//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see them.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cssr_core::checkpoint::Checkpoint;
use cssr_core::ddgan::GeneratorConfig;
use cssr_core::durcan::{DuRcan, DuRcanConfig};
use cssr_core::gradsuite;
use cssr_core::losses::{smoothed_labels, LabelKind, LossWeights};
use cssr_core::metrics::{psnr, ssim, Plane};
use cssr_core::nn::{Durb, DurbConfig, ResBlock};
use cssr_core::rectify::{estimate_homography_dlt, ransac_homography, Correspondence, Homography, RansacOptions};
use cssr_core::trainer::{iteration_rng, sample_batch, IterLog, TrainConfig, Trainer};
use cssr_core::{ParamStore, Tape, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn parameter_counts() -> Outcome {
    let targets = [
        ("durcan-6_s", 1_978_000.0),
        ("durcan-6", 3_518_000.0),
        ("durcan-12", 5_453_000.0),
        ("durcan-18", 9_878_000.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, want) in targets {
        let n = DuRcan::<f32>::seeded(DuRcanConfig::preset(name).unwrap(), 0).unwrap().count_parameters();
        let dev = (n as f64 - want) / want;
        pass &= dev.abs() <= 0.02;
        parts.push(format!("{name}={n} ({:+.3}%)", 100.0 * dev));
    }
    outcome(pass, parts.join(", "))
}

fn gradient_suite() -> Outcome {
    let results = gradsuite::run_all(0).unwrap();
    let ops: Vec<_> = results.iter().filter(|r| r.name.starts_with("op/")).collect();
    let nets: Vec<_> = results.iter().filter(|r| !r.name.starts_with("op/")).collect();
    let worst = |rs: &[&gradsuite::SuiteResult]| rs.iter().map(|r| r.report.max_rel_error()).fold(0.0, f64::max);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    outcome(
        failed.is_empty(),
        format!(
            "{} op checks worst {:.1e} (< {:.0e}), {} composed checks worst {:.1e} (< {:.0e}){}",
            ops.len(),
            worst(&ops),
            gradsuite::OP_TOLERANCE,
            nets.len(),
            worst(&nets),
            gradsuite::NETWORK_TOLERANCE,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn architecture_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f32>::uniform([2, 8, 6, 6], -2.0, 2.0, &mut rng);
    let res = Tensor::<f32>::uniform([2, 8, 6, 6], -2.0, 2.0, &mut rng);

    let mut store = ParamStore::<f32>::new();
    let rb = ResBlock::new(&mut store, "rb", 8, &mut rng).unwrap();
    store.zero_values();
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = rb.forward(&mut tape, &store, v).unwrap();
    let rb_ok = tape.value(y) == &x;

    let schedule = DuRcanConfig::preset("durcan-18").unwrap().kernel_schedule;
    let mut store = ParamStore::<f32>::new();
    let durbs: Vec<_> = schedule
        .iter()
        .enumerate()
        .map(|(i, &[l, s])| {
            let cfg = DurbConfig {
                channels: 8,
                kernel_large: l,
                kernel_small: s,
            };
            Durb::new(&mut store, &format!("durb.{i}"), cfg, &mut rng).unwrap()
        })
        .collect();
    store.zero_values();
    let mut tape = Tape::new();
    let (mut h, mut r) = (tape.constant(x.clone()), tape.constant(res.clone()));
    for d in &durbs {
        (h, r) = d.forward(&mut tape, &store, h, r).unwrap();
    }
    let durb_ok = tape.value(h) == &x && tape.value(r) == &res;

    // pixel shuffle against its index-map inverse
    let p = Tensor::<f32>::uniform([2, 12, 3, 5], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let s = tape.pixel_shuffle(pv, 2).unwrap();
    let sv = tape.value(s);
    let back = Tensor::from_fn([2, 12, 3, 5], |[n, c, y, x]| sv.at([n, c / 4, 2 * y + (c % 4) / 2, 2 * x + c % 2]));
    let ps_ok = back == p;

    let ups = GeneratorConfig::default().upsample_count();
    outcome(
        rb_ok && durb_ok && ps_ok && ups == 1,
        format!(
            "res_block identity {rb_ok}, {}-DuRB stack identity {durb_ok}, pixel_shuffle round trip {ps_ok}, upsample blocks for N=3 S=4: {ups}",
            durbs.len()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let a = Plane::from_fn(16, 16, |x, y| (x * 9 + y * 3) as f64);
    let b = Plane::from_fn(16, 16, |x, y| (x * 9 + y * 3) as f64 + 5.0);
    let p5 = psnr(&a, &b).unwrap();
    let zero = Plane::from_fn(16, 16, |_, _| 0.0);
    let full = Plane::from_fn(16, 16, |_, _| 255.0);
    let p255 = psnr(&zero, &full).unwrap();
    let s_const = ssim(&zero, &full).unwrap();
    // scikit-image structural_similarity, Gaussian weights, sigma 1.5, population covariance
    let ra = Plane::from_fn(16, 16, |x, y| (10 * x + 5 * y) as f64);
    let rb = Plane::from_fn(16, 16, |x, y| (12 * x + 3 * y + 7) as f64);
    let s_ref = ssim(&ra, &rb).unwrap();
    let pass = (p5 - 34.1514).abs() < 1e-4
        && p255 == 0.0
        && (s_const - 1.0e-4).abs() < 1e-6
        && (s_ref - 0.9712345540578349).abs() < 1e-6;
    outcome(
        pass,
        format!(
            "PSNR(err 5)={p5:.4} dB, PSNR(0 vs 255)={p255} dB, SSIM(0 vs 255)={s_const:.4e}, SSIM reference gap {:.1e}",
            (s_ref - 0.9712345540578349).abs()
        ),
    )
}

fn rectification() -> Outcome {
    let h = Homography::from_matrix([[1.05, 0.08, 12.0], [-0.06, 0.97, -7.5], [2e-4, -1.5e-4, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let corrs: Vec<_> = (0..200)
        .map(|i| {
            let src = [rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)];
            let mut dst = h.apply(src).unwrap();
            if i >= 140 {
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r: f64 = rng.random_range(15.0..60.0);
                dst = [dst[0] + r * ang.cos(), dst[1] + r * ang.sin()];
            }
            Correspondence { src, dst }
        })
        .collect();
    let (est, inliers) = ransac_homography(&corrs, &RansacOptions::default()).unwrap();
    let exact_set = inliers == (0..140).collect::<Vec<_>>();
    let refit = inliers.iter().map(|&i| est.transfer_error(&corrs[i])).fold(0.0, f64::max);
    let four: Vec<_> = [[3.0, 5.0], [250.0, 11.0], [240.0, 200.0], [17.0, 190.0]]
        .iter()
        .map(|&s| Correspondence { src: s, dst: h.apply(s).unwrap() })
        .collect();
    let dlt = estimate_homography_dlt(&four).unwrap();
    let dlt_err = four.iter().map(|c| dlt.transfer_error(c)).fold(0.0, f64::max);
    outcome(
        exact_set && refit < 0.5 && dlt_err < 1e-8,
        format!(
            "70% inliers: exact inlier set {exact_set}, refit transfer error {refit:.2e} px; 4-point DLT error {dlt_err:.2e} px"
        ),
    )
}

fn toy_training(before: &common::ToyScore, after: &common::ToyScore, secs: f64) -> Outcome {
    let ratio = after.l_sr / before.l_sr;
    let margin = after.psnr_model - after.psnr_bicubic;
    outcome(
        ratio <= 0.5 && margin >= 1.0,
        format!(
            "L_SR {:.4} -> {:.4} ({:.1}% of initial), PSNR {:.2} dB vs bicubic {:.2} dB ({margin:+.2} dB), {secs:.0} s",
            before.l_sr,
            after.l_sr,
            100.0 * ratio,
            after.psnr_model,
            after.psnr_bicubic
        ),
    )
}

fn joint_loop_contract() -> Outcome {
    let data = common::toy_dataset();
    let cfg = TrainConfig {
        batch: 100,
        ..common::micro_config()
    };
    let mut generated = 0;
    for i in 0..100 {
        generated += sample_batch(&data, &cfg, &mut iteration_rng(11, i)).unwrap().generated.iter().filter(|&&g| g).count();
    }
    let frac = generated as f64 / 10_000.0;
    let d = TrainConfig::default();
    let (lr_before, lr_at) = (d.lr_at(49_999), d.lr_at(50_000));
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let real = smoothed_labels::<f64, _>(LabelKind::Real, 10_000, &w, &mut rng);
    let fake = smoothed_labels::<f64, _>(LabelKind::Fake, 10_000, &w, &mut rng);
    let labels_ok = real.data().iter().all(|v| (0.8..=1.0).contains(v)) && fake.data().iter().all(|v| (0.0..=0.2).contains(v));
    outcome(
        (frac - 0.2).abs() <= 0.02 && lr_before == 1e-4 && lr_at == 5e-5 && labels_ok,
        format!(
            "generated fraction {frac:.4} over 10000 draws, lr(49999)={lr_before:e} lr(50000)={lr_at:e}, labels in [0,0.2]/[0.8,1]: {labels_ok}"
        ),
    )
}

fn laplacian_ablation(with_lap: &common::ToyScore, l1_only: &common::ToyScore) -> Outcome {
    let ratio = with_lap.laplacian_error / l1_only.laplacian_error;
    outcome(
        ratio <= 1.02,
        format!(
            "Laplacian-response error {:.5} (eta 6e-3) vs {:.5} (L1 only), ratio {ratio:.4}",
            with_lap.laplacian_error, l1_only.laplacian_error
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let cfg = common::micro_config();
    let run = |n: u64| {
        let mut t = Trainer::new(cfg.clone(), common::toy_dataset()).unwrap();
        let rows = t.run(n, None, &mut std::io::sink()).unwrap();
        (t, rows)
    };
    let gap = |a: &[IterLog], b: &[IterLog]| {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| [x.loss_d - y.loss_d, x.loss_g - y.loss_g, x.loss_sr - y.loss_sr])
            .fold(0.0f64, |m, d| m.max(d.abs()))
    };
    let (full, a) = run(6);
    let (_, b) = run(6);
    let repeat_gap = gap(&a, &b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.cssr");
    let ckpt = full.checkpoint();
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let bitwise = loaded.entries.len() == ckpt.entries.len()
        && loaded.entries.iter().zip(&ckpt.entries).all(|((n0, t0), (n1, t1))| {
            n0 == n1 && t0.shape() == t1.shape() && t0.data().iter().zip(t1.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });

    let (half, first) = run(3);
    let mut resumed = Trainer::new(cfg.clone(), common::toy_dataset()).unwrap();
    resumed.restore(&Checkpoint::decode(&half.checkpoint().encode()).unwrap()).unwrap();
    let rest = resumed.run(6, None, &mut std::io::sink()).unwrap();
    let joined: Vec<_> = first.into_iter().chain(rest).collect();
    let resume_gap = gap(&a, &joined);
    outcome(
        repeat_gap <= 1e-12 && bitwise && resume_gap <= 1e-6 && joined.len() == a.len(),
        format!("repeat-run log gap {repeat_gap:.1e}, checkpoint bitwise {bitwise}, resume log gap {resume_gap:.1e}"),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!("criterion {n} {}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
        results.push((n, name, o));
    };
    record(1, "parameter-count audit", parameter_counts());
    record(2, "gradient suite", gradient_suite());
    record(3, "architecture identities", architecture_identities());
    record(4, "metric oracles", metric_oracles());
    record(5, "rectification", rectification());

    let t = Instant::now();
    let (before, with_lap) = common::toy_run(common::toy_config(6e-3));
    let secs = t.elapsed().as_secs_f64();
    let (_, l1_only) = common::toy_run(common::toy_config(0.0));
    record(6, "toy end-to-end training", toy_training(&before, &with_lap, secs));
    record(7, "joint-loop contract", joint_loop_contract());
    record(8, "Laplacian-loss ablation", laplacian_ablation(&with_lap, &l1_only));
    record(9, "determinism and persistence", determinism_and_persistence());

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
