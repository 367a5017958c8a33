//! Joint training of the degradation GAN and the restoration network.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::ConfigFile;
use crate::ddgan::{relativistic_pair, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::degradation::{read_manifest, DatasetPair};
use crate::durcan::{DuRcan, DuRcanConfig};
use crate::error::{config_err, shape_err, Error, Result};
use crate::image::ImageBuffer;
use crate::losses::{
    content_loss, discriminator_loss, generator_adv_loss, generator_loss, restoration_loss, Labels, LossWeights,
    RandomConvExtractor, EXTRACTOR_SEED,
};
use crate::optim::{halving_lr, Adam, AdamConfig};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub halve_every: u64,
    pub adam: AdamConfig,
    pub batch: usize,
    /// LR-side crop; the HR crop is `crop * scale`.
    pub crop: usize,
    pub scale: usize,
    /// Generated-to-real mixing rate; a sample is generated with probability `gamma / (1 + gamma)`.
    pub mix_gamma: f64,
    pub weights: LossWeights,
    pub max_iters: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub durcan: DuRcanConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// DuRCAN parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub extractor_seed: u64,
    /// Dataset manifest (`hr<TAB>lr` per line).
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            halve_every: 50_000,
            adam: AdamConfig::default(),
            batch: 16,
            crop: 48,
            scale: 4,
            mix_gamma: 0.25,
            weights: LossWeights::default(),
            max_iters: 200_000,
            seed: 0,
            checkpoint_every: 5_000,
            durcan: DuRcanConfig::preset("durcan-12").expect("built-in preset"),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            freeze: Vec::new(),
            extractor_seed: EXTRACTOR_SEED,
            data: None,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "data",
    "lr",
    "halve_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch",
    "crop",
    "scale",
    "mix_gamma",
    "eta",
    "lambda",
    "alpha",
    "beta",
    "max_iters",
    "seed",
    "checkpoint_every",
    "arch",
    "durcan_channels",
    "durcan_reduction",
    "gen_base_channels",
    "gen_widths",
    "gen_decoder_channels",
    "disc_widths",
    "disc_dense",
    "freeze",
    "extractor_seed",
];

impl TrainConfig {
    /// Build from a config file; absent keys keep their defaults, unknown keys
    /// are rejected. Relative `data` paths resolve against `base`.
    pub fn from_config(c: &ConfigFile, base: &Path) -> Result<Self> {
        c.reject_unknown(TRAIN_KEYS)?;
        let d = TrainConfig::default();
        let scale = c.get_or("scale", d.scale)?;
        let crop = c.get_or("crop", d.crop)?;
        let mut durcan = DuRcanConfig::preset(&c.get_or("arch", "durcan-12".to_string())?)?;
        durcan.channels = c.get_or("durcan_channels", durcan.channels)?;
        durcan.reduction = c.get_or("durcan_reduction", durcan.reduction)?;
        durcan.scale = scale;
        let gd = GeneratorConfig::default();
        let gen_widths = c.get_list("gen_widths")?.unwrap_or(gd.channel_schedule);
        let generator = GeneratorConfig {
            base_channels: c.get_or("gen_base_channels", gd.base_channels)?,
            contracting_groups: gen_widths.len(),
            scale,
            channel_schedule: gen_widths,
            decoder_channels: c.get_or("gen_decoder_channels", gd.decoder_channels)?,
        };
        let dd = DiscriminatorConfig::default();
        let disc_widths: Vec<usize> = c.get_list("disc_widths")?.unwrap_or(dd.widths);
        let stages = disc_widths.len();
        if stages >= usize::BITS as usize || crop % (1 << stages) != 0 {
            return Err(config_err!("crop {crop} cannot be halved {stages} times"));
        }
        let discriminator = DiscriminatorConfig {
            input_size: crop,
            final_size: crop >> stages,
            widths: disc_widths,
            dense: c.get_or("disc_dense", dd.dense)?,
            leaky_slope: dd.leaky_slope,
        };
        let weights = LossWeights {
            eta: c.get_or("eta", d.weights.eta)?,
            lambda: c.get_or("lambda", d.weights.lambda)?,
            alpha: c.get_or("alpha", d.weights.alpha)?,
            beta: c.get_or("beta", d.weights.beta)?,
        };
        let cfg = TrainConfig {
            lr: c.get_or("lr", d.lr)?,
            halve_every: c.get_or("halve_every", d.halve_every)?,
            adam: AdamConfig {
                beta1: c.get_or("adam_beta1", d.adam.beta1)?,
                beta2: c.get_or("adam_beta2", d.adam.beta2)?,
                eps: c.get_or("adam_eps", d.adam.eps)?,
            },
            batch: c.get_or("batch", d.batch)?,
            crop,
            scale,
            mix_gamma: c.get_or("mix_gamma", d.mix_gamma)?,
            weights,
            max_iters: c.get_or("max_iters", d.max_iters)?,
            seed: c.get_or("seed", d.seed)?,
            checkpoint_every: c.get_or("checkpoint_every", d.checkpoint_every)?,
            durcan,
            generator,
            discriminator,
            freeze: c.get_list("freeze")?.unwrap_or_default(),
            extractor_seed: c.get_or("extractor_seed", d.extractor_seed)?,
            data: c.get::<PathBuf>("data")?.map(|p| base.join(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_gamma) {
            return Err(config_err!("mix_gamma {} outside [0, 1]", self.mix_gamma));
        }
        if self.batch == 0 || self.crop == 0 {
            return Err(config_err!("batch and crop must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(config_err!("learning rate must be positive"));
        }
        self.weights.validate()?;
        self.durcan.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.durcan.scale != self.scale || self.generator.scale != self.scale {
            return Err(config_err!("network scales disagree with scale = {}", self.scale));
        }
        if self.discriminator.input_size != self.crop {
            return Err(config_err!(
                "discriminator input {} differs from crop {}",
                self.discriminator.input_size,
                self.crop
            ));
        }
        let div = 1usize << self.generator.contracting_groups;
        if !(self.crop * self.scale).is_multiple_of(div) {
            return Err(config_err!(
                "HR crop {} is not divisible by {div}",
                self.crop * self.scale
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        halving_lr(self.lr, iter, self.halve_every)
    }

    pub fn mix_probability(&self) -> f64 {
        mix_probability(self.mix_gamma)
    }

    fn trainable(&self, name: &str) -> bool {
        !self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// `gamma / (1 + gamma)`.
pub fn mix_probability(gamma: f64) -> f64 {
    gamma / (1.0 + gamma)
}

/// In-memory HR/LR pairs.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<(ImageBuffer, ImageBuffer)>,
    pub scale: usize,
}

impl Dataset {
    pub fn new(pairs: Vec<(ImageBuffer, ImageBuffer)>, scale: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("dataset is empty".into()));
        }
        for (i, (hr, lr)) in pairs.iter().enumerate() {
            if lr.width() * scale != hr.width() || lr.height() * scale != hr.height() {
                return Err(shape_err!(
                    "pair {i}: LR {:?} is not HR {:?} / {scale}",
                    lr.dims(),
                    hr.dims()
                ));
            }
        }
        Ok(Dataset { pairs, scale })
    }

    pub fn from_manifest(path: &Path, scale: usize) -> Result<Self> {
        let pairs = read_manifest(path)?
            .into_iter()
            .map(|DatasetPair { hr, lr }| Ok((ImageBuffer::read(hr)?, ImageBuffer::read(lr)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, scale)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Quarter turns clockwise followed by an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Augment {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Augment {
            quarter_turns: rng.random_range(0..4),
            flip: rng.random(),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let mut out = img.clone();
        for _ in 0..self.quarter_turns {
            out = out.rotate90();
        }
        if self.flip {
            out = out.flip_horizontal();
        }
        out
    }
}

/// Apply one random rotation/flip to both images of a pair.
pub fn augment<R: Rng + ?Sized>(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    scale: usize,
    rng: &mut R,
) -> Result<(ImageBuffer, ImageBuffer, Augment)> {
    if lr.width() * scale != hr.width() || lr.height() * scale != hr.height() {
        return Err(shape_err!("LR {:?} is not HR {:?} / {scale}", lr.dims(), hr.dims()));
    }
    let a = Augment::random(rng);
    Ok((a.apply(hr), a.apply(lr), a))
}

/// An aligned mini-batch. `generated[i]` marks samples whose LR is to be
/// replaced by the generator output on `hr[i]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub generated: Vec<bool>,
}

/// Draw `cfg.batch` geometrically aligned random crops with augmentation.
pub fn sample_batch<R: Rng + ?Sized>(data: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    if data.is_empty() {
        return Err(Error::Contract("dataset is empty".into()));
    }
    let (c, s) = (cfg.crop, cfg.scale);
    let p_gen = cfg.mix_probability();
    let mut lrs = Vec::with_capacity(cfg.batch);
    let mut hrs = Vec::with_capacity(cfg.batch);
    let mut generated = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let (hr, lr) = &data.pairs[rng.random_range(0..data.len())];
        if lr.width() < c || lr.height() < c {
            return Err(shape_err!("crop {c} exceeds LR image {:?}", lr.dims()));
        }
        let x = rng.random_range(0..=lr.width() - c);
        let y = rng.random_range(0..=lr.height() - c);
        let lr_crop = lr.crop(x, y, c, c)?;
        let hr_crop = hr.crop(x * s, y * s, c * s, c * s)?;
        let (hr_aug, lr_aug, _) = augment(&hr_crop, &lr_crop, s, rng)?;
        lrs.push(lr_aug.to_tensor());
        hrs.push(hr_aug.to_tensor());
        generated.push(rng.random::<f64>() < p_gen);
    }
    Ok(Batch {
        lr: Tensor::stack_batch(&lrs)?,
        hr: Tensor::stack_batch(&hrs)?,
        generated,
    })
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterLog {
    pub iter: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_sr: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iter\tL_D\tL_G\tL_SR\tlr";

impl IterLog {
    pub fn row(&self) -> String {
        format!(
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:e}",
            self.iter, self.loss_d, self.loss_g, self.loss_sr, self.lr
        )
    }
}

fn finite(name: &str, iter: u64, v: f32) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Numeric(format!("{name} is {v} at iteration {iter}")));
    }
    Ok(v as f64)
}

/// Seeded RNG for iteration `iter`: a resumed run draws the same stream.
pub fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub data: Dataset,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub durcan: DuRcan<f32>,
    pub opt_gen: Adam<f32>,
    pub opt_disc: Adam<f32>,
    pub opt_durcan: Adam<f32>,
    pub extractor: RandomConvExtractor<f32>,
    /// Number of completed iterations.
    pub iter: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.scale != cfg.scale {
            return Err(config_err!("dataset scale {} differs from {}", data.scale, cfg.scale));
        }
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        init.set_stream(u64::MAX);
        let generator = Generator::new(cfg.generator.clone(), &mut init)?;
        let discriminator = Discriminator::new(cfg.discriminator.clone(), &mut init)?;
        let durcan = DuRcan::new(cfg.durcan.clone(), &mut init)?;
        let opt_gen = Adam::new(&generator.store, cfg.adam);
        let opt_disc = Adam::new(&discriminator.store, cfg.adam);
        let opt_durcan = Adam::new(&durcan.store, cfg.adam);
        let extractor = RandomConvExtractor::new(cfg.extractor_seed);
        Ok(Trainer {
            cfg,
            data,
            generator,
            discriminator,
            durcan,
            opt_gen,
            opt_disc,
            opt_durcan,
            extractor,
            iter: 0,
        })
    }

    /// One D → G → DuRCAN update.
    pub fn step(&mut self) -> Result<IterLog> {
        let it = self.iter;
        let lr = self.cfg.lr_at(it);
        let w = self.cfg.weights;
        let mut rng = iteration_rng(self.cfg.seed, it);
        let batch = sample_batch(&self.data, &self.cfg, &mut rng)?;
        let n = self.cfg.batch;

        // generator forward, kept for the generator update below
        let mut gtape = Tape::new();
        let hr_g = gtape.constant(batch.hr.clone());
        let glr = self.generator.forward(&mut gtape, hr_g)?;
        let glr_value = gtape.value(glr).clone();

        // (1) discriminator
        let labels = Labels::<f32>::sample(n, &w, &mut rng);
        let loss_d = {
            let mut tape = Tape::new();
            let real = tape.constant(batch.lr.clone());
            let fake = tape.constant(glr_value.clone());
            let cr = self.discriminator.logits(&mut tape, real)?;
            let cf = self.discriminator.logits(&mut tape, fake)?;
            let (dr, df) = relativistic_pair(&mut tape, cr, cf)?;
            let loss = discriminator_loss(&mut tape, dr, df, &labels)?;
            let v = finite("L_D", it, tape.value(loss).data()[0])?;
            let grads = tape.backward(loss)?;
            self.discriminator.store.accumulate(&tape, &grads);
            self.opt_disc.step(&mut self.discriminator.store, lr)?;
            self.discriminator.store.zero_grad();
            v
        };

        // (2) generator
        let labels = Labels::<f32>::sample(n, &w, &mut rng);
        let loss_g = {
            let tape = &mut gtape;
            tape.freeze_store(&self.discriminator.store);
            let real = tape.constant(batch.lr.clone());
            let cr = self.discriminator.logits(tape, real)?;
            let cf = self.discriminator.logits(tape, glr)?;
            let (dr, df) = relativistic_pair(tape, cr, cf)?;
            let adv = generator_adv_loss(tape, dr, df, &labels)?;
            let content = content_loss(tape, glr, real, &self.extractor)?;
            let loss = generator_loss(tape, content, adv, &w)?;
            let v = finite("L_G", it, tape.value(loss).data()[0])?;
            let grads = tape.backward(loss)?;
            self.generator.store.accumulate(tape, &grads);
            self.opt_gen.step(&mut self.generator.store, lr)?;
            self.generator.store.zero_grad();
            v
        };
        drop(gtape);

        // (3) restoration on the mixed batch
        let loss_sr = {
            let (tape, loss) = self.restoration_tape(&batch, &glr_value)?;
            let v = finite("L_SR", it, tape.value(loss).data()[0])?;
            let grads = tape.backward(loss)?;
            self.durcan.store.accumulate(&tape, &grads);
            let cfg = &self.cfg;
            self.opt_durcan
                .step_masked(&mut self.durcan.store, lr, |name| cfg.trainable(name))?;
            self.durcan.store.zero_grad();
            v
        };

        self.iter += 1;
        Ok(IterLog {
            iter: it,
            loss_d,
            loss_g,
            loss_sr,
            lr,
        })
    }

    /// Restoration loss on the mixed batch. Generated LRs enter as constants,
    /// so nothing on this tape reaches the generator.
    pub fn restoration_tape(&self, batch: &Batch, generated_lr: &Tensor<f32>) -> Result<(Tape<f32>, crate::autodiff::Var)> {
        let mut tape = Tape::new();
        let x = tape.constant(mix_batch(batch, generated_lr));
        let y = tape.constant(batch.hr.clone());
        let sr = self.durcan.forward_unit(&mut tape, x)?;
        let loss = restoration_loss(&mut tape, sr, y, &self.cfg.weights)?;
        Ok((tape, loss))
    }

    /// Run until `self.iter == until`, writing log rows to `log` and periodic
    /// checkpoints to `out_dir`.
    pub fn run(&mut self, until: u64, out_dir: Option<&Path>, log: &mut dyn Write) -> Result<Vec<IterLog>> {
        let mut rows = Vec::new();
        while self.iter < until {
            let row = self.step()?;
            writeln!(log, "{}", row.row()).map_err(|e| Error::io("<loss log>", e))?;
            rows.push(row);
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && self.iter.is_multiple_of(self.cfg.checkpoint_every) {
                    self.checkpoint()
                        .save(dir.join(format!("ckpt_{:08}.cssr", self.iter)))?;
                }
            }
        }
        Ok(rows)
    }

    /// Full training state: all three networks, optimizer moments and the
    /// iteration counter.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push_store("gen.", &self.generator.store);
        c.push_store("disc.", &self.discriminator.store);
        c.push_store("durcan.", &self.durcan.store);
        for (name, opt) in [("gen", &self.opt_gen), ("disc", &self.opt_disc), ("durcan", &self.opt_durcan)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                c.push(format!("opt.{name}.{i}.m"), m);
                c.push(format!("opt.{name}.{i}.v"), v);
            }
            c.push(format!("state.{name}.t"), &Tensor::<f32>::from_vec([1, 1, 1, 4], split_u64(opt.t)).expect("4 digits"));
        }
        c.push("state.iter", &Tensor::<f32>::from_vec([1, 1, 1, 4], split_u64(self.iter)).expect("4 digits"));
        c
    }

    /// Restore a [`Trainer::checkpoint`]. Every network is checked against the
    /// manifest before anything is modified.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        let manifest = c.manifest();
        let filtered = |p: &str| manifest.iter().filter(|e| e.name.starts_with(p)).cloned().collect::<Vec<_>>();
        crate::checkpoint::check_store(&filtered("gen."), "gen.", &self.generator.store)?;
        crate::checkpoint::check_store(&filtered("disc."), "disc.", &self.discriminator.store)?;
        crate::checkpoint::check_store(&filtered("durcan."), "durcan.", &self.durcan.store)?;
        let get = |name: &str| c.get(name).ok_or_else(|| shape_err!("checkpoint lacks {name}"));
        let read_u64 = |name: &str| -> Result<u64> {
            let t = get(name)?;
            if t.len() != 4 {
                return Err(shape_err!("{name} must hold 4 values"));
            }
            Ok(join_u64(t.data()))
        };
        let mut moments = Vec::new();
        for (name, store) in [
            ("gen", &self.generator.store),
            ("disc", &self.discriminator.store),
            ("durcan", &self.durcan.store),
        ] {
            let mut ms = Vec::new();
            let mut vs = Vec::new();
            for (i, p) in store.iter().enumerate() {
                let m = get(&format!("opt.{name}.{i}.m"))?;
                let v = get(&format!("opt.{name}.{i}.v"))?;
                if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                    return Err(shape_err!("optimizer moments for {name}.{} have the wrong shape", p.name));
                }
                ms.push(m.clone());
                vs.push(v.clone());
            }
            moments.push((ms, vs, read_u64(&format!("state.{name}.t"))?));
        }
        let iter = read_u64("state.iter")?;

        c.restore_store("gen.", &mut self.generator.store)?;
        c.restore_store("disc.", &mut self.discriminator.store)?;
        c.restore_store("durcan.", &mut self.durcan.store)?;
        for (opt, (m, v, t)) in [&mut self.opt_gen, &mut self.opt_disc, &mut self.opt_durcan]
            .into_iter()
            .zip(moments)
        {
            opt.m = m;
            opt.v = v;
            opt.t = t;
        }
        self.iter = iter;
        Ok(())
    }
}

/// Counters are stored as four 16-bit digits, each exact in `f32`.
fn split_u64(v: u64) -> Vec<f32> {
    (0..4).rev().map(|k| ((v >> (16 * k)) & 0xffff) as f32).collect()
}

fn join_u64(d: &[f32]) -> u64 {
    d.iter().fold(0u64, |acc, &x| (acc << 16) | x as u64)
}

/// Replace the LR of every generated-flagged sample by the generator output.
pub fn mix_batch(batch: &Batch, generated_lr: &Tensor<f32>) -> Tensor<f32> {
    let mut out = batch.lr.clone();
    let per = out.len() / out.batch().max(1);
    for (i, &g) in batch.generated.iter().enumerate() {
        if g {
            out.data_mut()[i * per..(i + 1) * per].copy_from_slice(&generated_lr.data()[i * per..(i + 1) * per]);
        }
    }
    out
}

/// Train from a config, writing `loss_log.tsv`, periodic checkpoints,
/// `final.cssr` (full state) and `durcan.cssr` (restoration network only).
pub fn train_joint(cfg: &TrainConfig, data: Dataset, out_dir: &Path, resume: Option<&Path>) -> Result<Vec<IterLog>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    if let Some(path) = resume {
        trainer.restore(&Checkpoint::load(path)?)?;
    }
    let log_path = out_dir.join("loss_log.tsv");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if resume.is_none() {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let rows = trainer.run(cfg.max_iters, Some(out_dir), &mut log)?;
    trainer.checkpoint().save(out_dir.join("final.cssr"))?;
    durcan_checkpoint(&trainer.durcan.store).save(out_dir.join("durcan.cssr"))?;
    Ok(rows)
}

/// Inference checkpoint holding only `durcan.*` entries.
pub fn durcan_checkpoint(store: &ParamStore<f32>) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.push_store("durcan.", store);
    c
}
