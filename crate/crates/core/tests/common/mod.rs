#![allow(dead_code)]

use cssr_core::ddgan::{DiscriminatorConfig, GeneratorConfig};
use cssr_core::degradation::{degrade, synthetic_hr, DegradationParams};
use cssr_core::durcan::DuRcanConfig;
use cssr_core::losses::{laplacian_loss, restoration_loss, LossWeights};
use cssr_core::metrics::{psnr, rgb_to_y};
use cssr_core::rectify::upscale_bicubic;
use cssr_core::trainer::{Dataset, TrainConfig, Trainer};
use cssr_core::{DuRcan32, ImageBuffer, Tape, Tensor};

pub const TOY_PAIRS: usize = 4;
pub const TOY_HR_SIZE: usize = 96;
pub const TOY_ITERS: u64 = 500;

/// Synthetic 96×96 HR images and their degraded 24×24 counterparts.
pub fn toy_pairs() -> Vec<(ImageBuffer, ImageBuffer)> {
    (0..TOY_PAIRS as u64)
        .map(|i| {
            let hr = synthetic_hr(TOY_HR_SIZE, TOY_HR_SIZE, i);
            let p = DegradationParams {
                seed: i,
                ..DegradationParams::default()
            };
            let lr = degrade(&hr, &p).unwrap();
            (hr, lr)
        })
        .collect()
}

pub fn toy_dataset() -> Dataset {
    Dataset::new(toy_pairs(), 4).unwrap()
}

/// durcan-6_s at 8 channels with a narrow degradation GAN.
pub fn toy_config(eta: f64) -> TrainConfig {
    let crop = 12;
    TrainConfig {
        lr: 2e-3,
        batch: 8,
        crop,
        max_iters: TOY_ITERS,
        checkpoint_every: 0,
        weights: LossWeights {
            eta,
            ..LossWeights::default()
        },
        durcan: DuRcanConfig::preset("durcan-6_s").unwrap().with_channels(8).with_reduction(4),
        generator: GeneratorConfig::tiny(4),
        discriminator: DiscriminatorConfig {
            input_size: crop,
            widths: vec![4],
            dense: 8,
            final_size: crop / 2,
            leaky_slope: 0.2,
        },
        ..TrainConfig::default()
    }
}

/// Smaller, faster variant for contract tests that do not judge quality.
pub fn micro_config() -> TrainConfig {
    TrainConfig {
        batch: 2,
        durcan: DuRcanConfig::new(vec![[3, 3]]).with_channels(4).with_reduction(2),
        ..toy_config(6e-3)
    }
}

#[derive(Clone, Debug)]
pub struct ToyScore {
    /// `L_SR` over the full training pairs.
    pub l_sr: f64,
    /// Mean absolute Laplacian-response error against the HR images.
    pub laplacian_error: f64,
    /// Mean luma PSNR of the model output.
    pub psnr_model: f64,
    /// Mean luma PSNR of bicubic upsampling.
    pub psnr_bicubic: f64,
}

pub fn score(net: &DuRcan32, pairs: &[(ImageBuffer, ImageBuffer)], weights: &LossWeights) -> ToyScore {
    let lr = Tensor::stack_batch(&pairs.iter().map(|(_, l)| l.to_tensor::<f32>()).collect::<Vec<_>>()).unwrap();
    let hr = Tensor::stack_batch(&pairs.iter().map(|(h, _)| h.to_tensor::<f32>()).collect::<Vec<_>>()).unwrap();
    let sr = net.infer(&lr).unwrap();
    let mut tape = Tape::<f32>::new();
    let (s, h) = (tape.constant(sr), tape.constant(hr));
    let l_sr = restoration_loss(&mut tape, s, h, weights).unwrap();
    let lap = laplacian_loss(&mut tape, s, h).unwrap();
    let n = pairs.len() as f64;
    let mut psnr_model = 0.0;
    let mut psnr_bicubic = 0.0;
    for (hr, lr) in pairs {
        let y = rgb_to_y(hr);
        psnr_model += psnr(&rgb_to_y(&net.super_resolve(lr).unwrap()), &y).unwrap() / n;
        psnr_bicubic += psnr(&rgb_to_y(&upscale_bicubic(lr, 4).unwrap()), &y).unwrap() / n;
    }
    ToyScore {
        l_sr: tape.value(l_sr).data()[0] as f64,
        laplacian_error: tape.value(lap).data()[0] as f64,
        psnr_model,
        psnr_bicubic,
    }
}

/// Train `cfg` on the toy pairs; returns the scores before and after.
pub fn toy_run(cfg: TrainConfig) -> (ToyScore, ToyScore) {
    let pairs = toy_pairs();
    let weights = cfg.weights;
    let iters = cfg.max_iters;
    let mut t = Trainer::new(cfg, Dataset::new(pairs.clone(), 4).unwrap()).unwrap();
    let before = score(&t.durcan, &pairs, &weights);
    t.run(iters, None, &mut std::io::sink()).unwrap();
    (before, score(&t.durcan, &pairs, &weights))
}
