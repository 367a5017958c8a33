//! High-to-low degradation GAN: an encoder-decoder generator mapping HR images
//! to degraded LR images, and a relativistic discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{require_shape, shape_of, Checkpoint, ManifestEntry};
use crate::autodiff::{Activation, Padding, Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::{Conv2d, ResBlock, UpsampleBlock};
use crate::param::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Width of the head convolution.
    pub base_channels: usize,
    /// Number of contracting groups `N`.
    pub contracting_groups: usize,
    /// Downscaling factor `S`; a power of two with `log2 S <= N`.
    pub scale: usize,
    /// Width of each contracting group; the bottleneck uses the last one.
    pub channel_schedule: Vec<usize>,
    /// Width of every decoder stage.
    pub decoder_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 64,
            contracting_groups: 3,
            scale: 4,
            channel_schedule: vec![64, 128, 256],
            decoder_channels: 64,
        }
    }
}

impl GeneratorConfig {
    /// Uniform narrow widths, handy for tests and toy runs.
    pub fn tiny(width: usize) -> Self {
        GeneratorConfig {
            base_channels: width,
            contracting_groups: 3,
            scale: 4,
            channel_schedule: vec![width; 3],
            decoder_channels: width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_power_of_two() {
            return Err(config_err!("generator scale {} is not a power of two", self.scale));
        }
        let log_s = self.scale.trailing_zeros() as usize;
        if self.contracting_groups < log_s {
            return Err(config_err!(
                "{} contracting groups cannot downscale by {}",
                self.contracting_groups,
                self.scale
            ));
        }
        if self.channel_schedule.len() != self.contracting_groups {
            return Err(config_err!(
                "channel schedule has {} entries for {} groups",
                self.channel_schedule.len(),
                self.contracting_groups
            ));
        }
        if self.base_channels == 0 || self.decoder_channels == 0 || self.channel_schedule.contains(&0) {
            return Err(config_err!("generator widths must be positive"));
        }
        Ok(())
    }

    /// Recover the configuration from the `<prefix>*` entries of a checkpoint manifest.
    pub fn from_manifest(manifest: &[ManifestEntry], prefix: &str) -> Result<Self> {
        let base_channels = require_shape(manifest, prefix, "head.weight")?[0];
        let channel_schedule: Vec<usize> = (0..)
            .map_while(|i| shape_of(manifest, prefix, &format!("enc.{i}.rb0.conv1.weight")).map(|s| s[0]))
            .collect();
        let ups: Vec<usize> = (0..)
            .map_while(|j| shape_of(manifest, prefix, &format!("dec.{j}.conv.weight")).map(|s| s[0]))
            .collect();
        if channel_schedule.len() < ups.len() {
            return Err(shape_err!("generator checkpoint has more decoder than encoder stages"));
        }
        let cfg = GeneratorConfig {
            base_channels,
            contracting_groups: channel_schedule.len(),
            scale: 1 << (channel_schedule.len() - ups.len()),
            channel_schedule,
            // without a decoder stage the width is unused
            decoder_channels: ups.first().map_or(base_channels, |&c| c / 4),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `N - log2 S` pixel-shuffle stages in the expansive path.
    pub fn upsample_count(&self) -> usize {
        self.contracting_groups - self.scale.trailing_zeros() as usize
    }
}

#[derive(Clone, Debug)]
struct EncoderGroup {
    entry: Option<Conv2d>,
    blocks: [ResBlock; 2],
}

/// Encoder-decoder HR→LR generator with a sigmoid output in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar> {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<T>,
    head: Conv2d,
    groups: Vec<EncoderGroup>,
    bottleneck: [ResBlock; 2],
    decoder: Vec<UpsampleBlock>,
    tail: Conv2d,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let s = &mut store;
        let head = Conv2d::new(s, "head", 3, cfg.base_channels, 3, rng)?;
        let mut groups = Vec::with_capacity(cfg.contracting_groups);
        let mut width = cfg.base_channels;
        for (i, &w) in cfg.channel_schedule.iter().enumerate() {
            let entry = if w != width {
                Some(Conv2d::new(s, &format!("enc.{i}.entry"), width, w, 3, rng)?)
            } else {
                None
            };
            let blocks = [
                ResBlock::new(s, &format!("enc.{i}.rb0"), w, rng)?,
                ResBlock::new(s, &format!("enc.{i}.rb1"), w, rng)?,
            ];
            groups.push(EncoderGroup { entry, blocks });
            width = w;
        }
        let bottleneck = [
            ResBlock::new(s, "bottleneck.rb0", width, rng)?,
            ResBlock::new(s, "bottleneck.rb1", width, rng)?,
        ];
        let n = cfg.contracting_groups;
        let mut decoder = Vec::with_capacity(cfg.upsample_count());
        for j in 0..cfg.upsample_count() {
            let skip = cfg.channel_schedule[n - 1 - j];
            decoder.push(UpsampleBlock::new(
                s,
                &format!("dec.{j}"),
                width + skip,
                cfg.decoder_channels,
                2,
                rng,
            )?);
            width = cfg.decoder_channels;
        }
        let tail = Conv2d::new(s, "tail", width, 3, 3, rng)?;
        Ok(Generator {
            cfg,
            store,
            head,
            groups,
            bottleneck,
            decoder,
            tail,
        })
    }

    /// Rebuild a generator from the `<prefix>*` entries of a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let cfg = GeneratorConfig::from_manifest(&ckpt.manifest(), prefix)?;
        let mut g = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        ckpt.restore_store(prefix, &mut g.store)?;
        Ok(g)
    }

    /// `X_GLR = G(Y)`: `(b, 3, H, W)` in, `(b, 3, H/S, W/S)` out, values in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape<T>, y: Var) -> Result<Var> {
        self.forward_with(tape, &self.store, y)
    }

    /// Forward pass with parameters taken from `s` (same layout as `self.store`).
    pub fn forward_with(&self, tape: &mut Tape<T>, s: &ParamStore<T>, y: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(y).shape();
        let div = 1usize << self.cfg.contracting_groups;
        if c != 3 {
            return Err(shape_err!("generator expects 3 input channels, got {c}"));
        }
        if h % div != 0 || w % div != 0 {
            return Err(shape_err!("generator input {h}x{w} not divisible by {div}"));
        }
        let mut x = self.head.forward(tape, s, y)?;
        let mut skips = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            if let Some(entry) = &g.entry {
                x = entry.forward(tape, s, x)?;
            }
            for rb in &g.blocks {
                x = rb.forward(tape, s, x)?;
            }
            x = tape.maxpool2(x)?;
            skips.push(x);
        }
        for rb in &self.bottleneck {
            x = rb.forward(tape, s, x)?;
        }
        // each decoder stage pairs with the encoder output of equal resolution
        for (j, up) in self.decoder.iter().enumerate() {
            let skip = skips[skips.len() - 1 - j];
            let cat = tape.channel_concat(&[x, skip])?;
            x = up.forward(tape, s, cat)?;
        }
        let out = self.tail.forward(tape, s, x)?;
        Ok(tape.sigmoid(out))
    }

    pub fn num_upsample_blocks(&self) -> usize {
        self.decoder.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Spatial size of the (square) LR crops it scores.
    pub input_size: usize,
    /// Width of each stride-1/stride-2 conv pair; every pair halves the resolution.
    pub widths: Vec<usize>,
    /// Hidden width of the dense head.
    pub dense: usize,
    /// Resolution entering the dense head.
    pub final_size: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_size: 48,
            widths: vec![64, 128, 256],
            dense: 1024,
            final_size: 6,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny(input_size: usize, width: usize) -> Self {
        let mut stages = 0;
        let mut s = input_size;
        while s > 6 && s.is_multiple_of(2) {
            s /= 2;
            stages += 1;
        }
        DiscriminatorConfig {
            input_size,
            widths: vec![width; stages],
            dense: 2 * width,
            final_size: s,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.final_size == 0 || self.input_size != self.final_size << self.widths.len() {
            return Err(config_err!(
                "discriminator input {} is not {} halved {} times",
                self.input_size,
                self.final_size,
                self.widths.len()
            ));
        }
        if self.dense == 0 || self.widths.contains(&0) {
            return Err(config_err!("discriminator widths must be positive"));
        }
        Ok(())
    }
}

/// SRGAN-style discriminator without batch normalization. Dense layers are
/// realized as convolutions spanning the whole final feature map.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    pub cfg: DiscriminatorConfig,
    pub store: ParamStore<T>,
    convs: Vec<Conv2d>,
    dense1: Conv2d,
    dense2: Conv2d,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let s = &mut store;
        let mut convs = Vec::new();
        let mut width = 3;
        for (i, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv2d::new(s, &format!("stage.{i}.conv"), width, w, 3, rng)?);
            convs.push(Conv2d::with_geometry(
                s,
                &format!("stage.{i}.down"),
                w,
                w,
                3,
                Padding::Explicit(1),
                2,
                rng,
            )?);
            width = w;
        }
        let dense1 = Conv2d::with_geometry(
            s,
            "dense1",
            width,
            cfg.dense,
            cfg.final_size,
            Padding::Explicit(0),
            1,
            rng,
        )?;
        let dense2 = Conv2d::new(s, "dense2", cfg.dense, 1, 1, rng)?;
        Ok(Discriminator {
            cfg,
            store,
            convs,
            dense1,
            dense2,
        })
    }

    /// Raw (pre-sigmoid) logits `C(x)`, shape `(b, 1, 1, 1)`.
    pub fn logits(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.logits_with(tape, &self.store, x)
    }

    pub fn logits_with(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(x).shape();
        let n = self.cfg.input_size;
        if c != 3 || h != n || w != n {
            return Err(shape_err!("discriminator expects (b, 3, {n}, {n}), got (_, {c}, {h}, {w})"));
        }
        let act = Activation::LeakyRelu(self.cfg.leaky_slope);
        let mut x = x;
        for conv in &self.convs {
            x = conv.forward(tape, s, x)?;
            x = tape.activation(x, act);
        }
        x = self.dense1.forward(tape, s, x)?;
        x = tape.activation(x, act);
        self.dense2.forward(tape, s, x)
    }
}

/// `sigmoid(target_i - mean(opposite))` for every element of `target`.
pub fn relativistic_score<T: Scalar>(tape: &mut Tape<T>, target: Var, opposite: Var) -> Result<Var> {
    if tape.value(opposite).is_empty() {
        return Err(Error::Contract("relativistic score needs a non-empty opposite batch".into()));
    }
    let avg = tape.mean(opposite);
    let diff = tape.sub_scalar(target, avg)?;
    Ok(tape.sigmoid(diff))
}

/// Relativistic scores for both directions: `(D(real, fake), D(fake, real))`.
pub fn relativistic_pair<T: Scalar>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<(Var, Var)> {
    let real = relativistic_score(tape, real_logits, fake_logits)?;
    let fake = relativistic_score(tape, fake_logits, real_logits)?;
    Ok((real, fake))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn upsample_block_count_formula() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.upsample_count(), 1);
        let g = Generator::<f32>::new(GeneratorConfig::tiny(2), &mut rng(0)).unwrap();
        assert_eq!(g.num_upsample_blocks(), 1);
        let s8 = GeneratorConfig { scale: 8, ..GeneratorConfig::tiny(2) };
        assert_eq!(s8.upsample_count(), 0);
        assert_eq!(Generator::<f32>::new(s8, &mut rng(0)).unwrap().num_upsample_blocks(), 0);
        let bad = GeneratorConfig { scale: 16, ..GeneratorConfig::tiny(2) };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = GeneratorConfig { scale: 3, ..GeneratorConfig::tiny(2) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generator_config_recovered_from_manifest() {
        let mixed = GeneratorConfig {
            channel_schedule: vec![4, 8, 8],
            decoder_channels: 6,
            ..GeneratorConfig::tiny(2)
        };
        for cfg in [GeneratorConfig::default(), mixed, GeneratorConfig { scale: 2, ..GeneratorConfig::tiny(3) }] {
            let g = Generator::<f32>::new(cfg.clone(), &mut rng(4)).unwrap();
            let mut ckpt = Checkpoint::new();
            ckpt.push_store("gen.", &g.store);
            assert_eq!(GeneratorConfig::from_manifest(&ckpt.manifest(), "gen.").unwrap(), cfg);
            let back = Generator::<f32>::from_checkpoint(&ckpt, "gen.").unwrap();
            assert!(back.store.iter().zip(g.store.iter()).all(|(a, b)| a.value == b.value));
        }
        assert!(GeneratorConfig::from_manifest(&[], "gen.").is_err());
    }

    #[test]
    fn default_generator_shape_contract() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), &mut rng(1)).unwrap();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::uniform([1, 3, 96, 96], 0.0, 1.0, &mut rng(2)));
        let out = g.forward(&mut tape, y).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), [1, 3, 24, 24]);
        assert!(v.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn generator_scale_eight_and_bad_dims() {
        let cfg = GeneratorConfig { scale: 8, ..GeneratorConfig::tiny(2) };
        let g = Generator::<f64>::new(cfg, &mut rng(1)).unwrap();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::zeros([2, 3, 16, 24]));
        let out = g.forward(&mut tape, y).unwrap();
        assert_eq!(tape.value(out).shape(), [2, 3, 2, 3]);
        let bad = tape.constant(Tensor::zeros([1, 3, 12, 16]));
        assert!(matches!(g.forward(&mut tape, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_logits_shape_and_zero() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut rng(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform([4, 3, 48, 48], 0.0, 1.0, &mut rng(3)));
        let l = d.logits(&mut tape, x).unwrap();
        assert_eq!(tape.value(l).shape(), [4, 1, 1, 1]);
        assert!(tape.value(l).all_finite());
        let wrong = tape.constant(Tensor::zeros([1, 3, 24, 24]));
        assert!(matches!(d.logits(&mut tape, wrong), Err(Error::Shape(_))));

        let mut z = Discriminator::<f64>::new(DiscriminatorConfig::tiny(12, 2), &mut rng(0)).unwrap();
        z.store.zero_values();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform([3, 3, 12, 12], 0.0, 1.0, &mut rng(3)));
        let l = z.logits(&mut tape, x).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn relativistic_score_cases() {
        let mut tape = Tape::<f64>::new();
        let t = tape.constant(Tensor::from_f64([2, 1, 1, 1], &[0.5, 2.0]).unwrap());
        let o = tape.constant(Tensor::from_f64([2, 1, 1, 1], &[-1.0, 1.0]).unwrap());
        let s = relativistic_score(&mut tape, t, o).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert_eq!(tape.value(s).data()[0], 1.0 / (1.0 + (-0.5f64).exp()));
        assert!((tape.value(s).data()[1] - expected).abs() < 1e-15);
        assert!((expected - 0.880797).abs() < 1e-6);

        let same = tape.constant(Tensor::from_f64([1, 1, 1, 1], &[0.0]).unwrap());
        let half = relativistic_score(&mut tape, same, o).unwrap();
        assert_eq!(tape.value(half).data(), &[0.5]);

        let empty = tape.constant(Tensor::zeros([0, 1, 1, 1]));
        assert!(matches!(relativistic_score(&mut tape, t, empty), Err(Error::Contract(_))));
    }
}
