mod common;

use std::fs;

use cssr_core::checkpoint::Checkpoint;
use cssr_core::trainer::{
    iteration_rng, mix_probability, sample_batch, train_joint, IterLog, TrainConfig, Trainer, LOG_HEADER,
};
use cssr_core::{Error, Tape};

use common::{micro_config, toy_dataset};

fn run(cfg: &TrainConfig, iters: u64) -> (Trainer, Vec<IterLog>) {
    let mut t = Trainer::new(cfg.clone(), toy_dataset()).unwrap();
    let rows = t.run(iters, None, &mut std::io::sink()).unwrap();
    (t, rows)
}

fn assert_logs_close(a: &[IterLog], b: &[IterLog], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.iter, y.iter);
        for (p, q) in [(x.loss_d, y.loss_d), (x.loss_g, y.loss_g), (x.loss_sr, y.loss_sr), (x.lr, y.lr)] {
            assert!((p - q).abs() <= tol, "iter {}: {p} vs {q}", x.iter);
        }
    }
}

#[test]
fn identical_seeds_reproduce_the_loss_log() {
    let cfg = micro_config();
    let (_, a) = run(&cfg, 4);
    let (_, b) = run(&cfg, 4);
    assert_logs_close(&a, &b, 1e-12);
    let (_, c) = run(&TrainConfig { seed: 1, ..cfg }, 4);
    assert_ne!(a[0].loss_sr, c[0].loss_sr);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = micro_config();
    let (full, rows) = run(&cfg, 6);

    let (half, first) = run(&cfg, 3);
    let bytes = half.checkpoint().encode();
    let mut resumed = Trainer::new(cfg.clone(), toy_dataset()).unwrap();
    resumed.restore(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.iter, 3);
    let second = resumed.run(6, None, &mut std::io::sink()).unwrap();

    let joined: Vec<_> = first.into_iter().chain(second).collect();
    assert_logs_close(&rows, &joined, 1e-6);
    for (a, b) in full.durcan.store.iter().zip(resumed.durcan.store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn restoration_step_leaves_generator_gradients_zero() {
    let cfg = micro_config();
    let mut t = Trainer::new(cfg.clone(), toy_dataset()).unwrap();
    let batch = sample_batch(&t.data, &cfg, &mut iteration_rng(0, 0)).unwrap();
    let mut gtape = Tape::new();
    let hr = gtape.constant(batch.hr.clone());
    let glr = t.generator.forward(&mut gtape, hr).unwrap();
    let glr = gtape.value(glr).clone();

    let (tape, loss) = t.restoration_tape(&batch, &glr).unwrap();
    let grads = tape.backward(loss).unwrap();
    t.generator.store.accumulate(&tape, &grads);
    t.durcan.store.accumulate(&tape, &grads);
    assert!(t.generator.store.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    assert!(t.durcan.store.iter().any(|p| p.grad.data().iter().any(|&g| g != 0.0)));
}

#[test]
fn generated_fraction_follows_mixing_rate() {
    assert!((mix_probability(0.25) - 0.2).abs() < 1e-15);
    let data = toy_dataset();
    for (gamma, want) in [(0.25, 0.2), (0.0, 0.0)] {
        let cfg = TrainConfig { mix_gamma: gamma, batch: 100, ..micro_config() };
        let mut generated = 0;
        for i in 0..100 {
            let b = sample_batch(&data, &cfg, &mut iteration_rng(7, i)).unwrap();
            assert_eq!(b.generated.len(), 100);
            generated += b.generated.iter().filter(|&&g| g).count();
        }
        let frac = generated as f64 / 10_000.0;
        assert!((frac - want).abs() <= 0.02, "gamma {gamma}: {frac}");
    }
}

#[test]
fn learning_rate_halves_on_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(49_999), 1e-4);
    assert_eq!(cfg.lr_at(50_000), 5e-5);
    assert_eq!(cfg.lr_at(100_000), 2.5e-5);
}

#[test]
fn frozen_prefixes_do_not_move() {
    let cfg = TrainConfig { freeze: vec!["durb.".into()], ..micro_config() };
    let before = Trainer::new(cfg.clone(), toy_dataset()).unwrap();
    let (after, _) = run(&cfg, 2);
    for (a, b) in before.durcan.store.iter().zip(after.durcan.store.iter()) {
        if a.name.starts_with("durb.") {
            assert_eq!(a.value, b.value, "{}", a.name);
        } else if a.name.ends_with(".weight") {
            assert_ne!(a.value, b.value, "{}", a.name);
        }
    }
}

#[test]
fn non_finite_loss_names_the_term() {
    let mut t = Trainer::new(micro_config(), toy_dataset()).unwrap();
    for p in t.durcan.store.iter_mut() {
        p.value.fill(f32::NAN);
    }
    match t.step() {
        Err(Error::Numeric(msg)) => assert!(msg.contains("L_SR"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn train_joint_writes_log_and_checkpoints_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { max_iters: 2, checkpoint_every: 1, ..micro_config() };
    train_joint(&cfg, toy_dataset(), dir.path(), None).unwrap();
    let log = fs::read_to_string(dir.path().join("loss_log.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some(LOG_HEADER));
    assert_eq!(log.lines().count(), 3);
    for name in ["ckpt_00000001.cssr", "ckpt_00000002.cssr", "final.cssr", "durcan.cssr"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let durcan = Checkpoint::load(dir.path().join("durcan.cssr")).unwrap();
    assert!(durcan.entries.iter().all(|(n, _)| n.starts_with("durcan.")));

    let more = TrainConfig { max_iters: 3, ..cfg.clone() };
    let rows = train_joint(&more, toy_dataset(), dir.path(), Some(&dir.path().join("final.cssr"))).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].iter, 2);
    let log = fs::read_to_string(dir.path().join("loss_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let other = TrainConfig { durcan: cfg.durcan.clone().with_channels(8).with_reduction(4), ..more };
    let err = train_joint(&other, toy_dataset(), dir.path(), Some(&dir.path().join("final.cssr"))).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}
