//! Dual residual channel attention network: the low-to-high restoration model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{require_shape, shape_of, Checkpoint, ManifestEntry};
use crate::autodiff::{Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::image::ImageBuffer;
use crate::nn::{Conv2d, Durb, DurbConfig, Rcab, RcabConfig, UpsampleBlock};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DuRcanConfig {
    /// `[large, small]` kernel pair per DuRB.
    pub kernel_schedule: Vec<[usize; 2]>,
    pub channels: usize,
    pub scale: usize,
    pub reduction: usize,
}

pub const PRESETS: [&str; 4] = ["durcan-6_s", "durcan-6", "durcan-12", "durcan-18"];

impl DuRcanConfig {
    pub fn new(kernel_schedule: Vec<[usize; 2]>) -> Self {
        DuRcanConfig {
            kernel_schedule,
            channels: 64,
            scale: 4,
            reduction: 16,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let schedule: Vec<[usize; 2]> = match name {
            "durcan-6_s" => vec![[3, 3], [5, 3], [7, 5], [7, 5], [7, 3], [5, 3]],
            "durcan-6" => vec![[5, 3], [7, 5], [11, 7], [11, 7], [11, 5], [7, 5]],
            "durcan-12" => vec![
                [5, 3],
                [5, 3],
                [7, 3],
                [7, 5],
                [11, 5],
                [11, 7],
                [11, 7],
                [11, 5],
                [7, 5],
                [7, 3],
                [5, 3],
                [5, 3],
            ],
            "durcan-18" => [[5, 3], [7, 5], [11, 7], [11, 7], [11, 5], [7, 5]]
                .iter()
                .flat_map(|&k| [k; 3])
                .collect(),
            other => {
                return Err(config_err!(
                    "unknown architecture '{other}' (expected one of {})",
                    PRESETS.join(", ")
                ))
            }
        };
        Ok(Self::new(schedule))
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    /// Recover the configuration from the `<prefix>*` entries of a checkpoint manifest.
    pub fn from_manifest(manifest: &[ManifestEntry], prefix: &str) -> Result<Self> {
        let channels = require_shape(manifest, prefix, "head.weight")?[0];
        let hidden = require_shape(manifest, prefix, "rcab_bg.squeeze.weight")?[0];
        let mut kernel_schedule = Vec::new();
        while let Some(l) = shape_of(manifest, prefix, &format!("durb.{}.large.weight", kernel_schedule.len())) {
            let s = require_shape(manifest, prefix, &format!("durb.{}.small.weight", kernel_schedule.len()))?;
            kernel_schedule.push([l[2], s[2]]);
        }
        let stages = (0..).take_while(|i| shape_of(manifest, prefix, &format!("upsample.{i}.conv.weight")).is_some()).count();
        if hidden == 0 || channels % hidden != 0 {
            return Err(shape_err!("attention width {hidden} does not divide {channels} channels"));
        }
        let cfg = DuRcanConfig {
            kernel_schedule,
            channels,
            scale: 1 << stages,
            reduction: channels / hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        self.kernel_schedule.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_schedule.is_empty() {
            return Err(config_err!("DuRCAN needs at least one DuRB"));
        }
        if self.scale < 2 || !self.scale.is_power_of_two() {
            return Err(config_err!("DuRCAN scale {} is not a power of two >= 2", self.scale));
        }
        self.rcab().validate()?;
        for cfg in self.durbs() {
            cfg.validate()?;
        }
        Ok(())
    }

    fn rcab(&self) -> RcabConfig {
        RcabConfig {
            channels: self.channels,
            reduction: self.reduction,
        }
    }

    fn durbs(&self) -> impl Iterator<Item = DurbConfig> + '_ {
        self.kernel_schedule.iter().map(|&[l, s]| DurbConfig {
            channels: self.channels,
            kernel_large: l,
            kernel_small: s,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DuRcan<T: Scalar> {
    pub cfg: DuRcanConfig,
    pub store: ParamStore<T>,
    head: Conv2d,
    rcab_bg: Rcab,
    durbs: Vec<Durb>,
    rcab_ed: Rcab,
    conv_ed: Conv2d,
    upsample: Vec<UpsampleBlock>,
    tail: Conv2d,
}

impl<T: Scalar> DuRcan<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DuRcanConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut store = ParamStore::new();
        let s = &mut store;
        let head = Conv2d::new(s, "head", 3, c, 3, rng)?;
        let rcab_bg = Rcab::new(s, "rcab_bg", cfg.rcab(), rng)?;
        let durbs = cfg
            .durbs()
            .enumerate()
            .map(|(i, d)| Durb::new(s, &format!("durb.{i}"), d, rng))
            .collect::<Result<Vec<_>>>()?;
        let rcab_ed = Rcab::new(s, "rcab_ed", cfg.rcab(), rng)?;
        let conv_ed = Conv2d::new(s, "conv_ed", c, c, 3, rng)?;
        let stages = cfg.scale.trailing_zeros() as usize;
        let upsample = (0..stages)
            .map(|i| UpsampleBlock::new(s, &format!("upsample.{i}"), c, c, 2, rng))
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::new(s, "tail", c, 3, 3, rng)?;
        Ok(DuRcan {
            cfg,
            store,
            head,
            rcab_bg,
            durbs,
            rcab_ed,
            conv_ed,
            upsample,
            tail,
        })
    }

    /// [`DuRcan::new`] with a ChaCha8 stream seeded by `seed`.
    pub fn seeded(cfg: DuRcanConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Rebuild a network from the `<prefix>*` entries of a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let cfg = DuRcanConfig::from_manifest(&ckpt.manifest(), prefix)?;
        let mut net = Self::seeded(cfg, 0)?;
        ckpt.restore_store(prefix, &mut net.store)?;
        Ok(net)
    }

    pub fn preset<R: Rng + ?Sized>(name: &str, rng: &mut R) -> Result<Self> {
        Self::new(DuRcanConfig::preset(name)?, rng)
    }

    /// Signed-range forward: input in `[-1, 1]`, output `(b, 3, sh, sw)` in `(-1, 1)`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.forward_with(tape, &self.store, x)
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = tape.value(x).channels();
        if c != 3 {
            return Err(shape_err!("DuRCAN expects 3 input channels, got {c}"));
        }
        let f_sf = self.head.forward(tape, s, x)?;
        let f_ca1 = self.rcab_bg.forward(tape, s, f_sf)?;
        let (mut h, mut res) = (f_ca1, f_ca1);
        for durb in &self.durbs {
            (h, res) = durb.forward(tape, s, h, res)?;
        }
        let f_ca2 = self.rcab_ed.forward(tape, s, h)?;
        let ed = self.conv_ed.forward(tape, s, f_ca2)?;
        let mut up = tape.add(ed, res)?;
        for block in &self.upsample {
            up = block.forward(tape, s, up)?;
        }
        let out = self.tail.forward(tape, s, up)?;
        Ok(tape.tanh(out))
    }

    /// Unit-range forward: maps `[0, 1]` input to `[-1, 1]`, runs the network and
    /// maps the result back to `[0, 1]`.
    pub fn forward_unit(&self, tape: &mut Tape<T>, x01: Var) -> Result<Var> {
        self.forward_unit_with(tape, &self.store, x01)
    }

    pub fn forward_unit_with(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x01: Var) -> Result<Var> {
        let x = to_signed(tape, x01);
        let y = self.forward_with(tape, s, x)?;
        Ok(to_unit(tape, y))
    }

    /// Super-resolve a `[0, 1]` batch without recording gradients.
    pub fn infer(&self, x01: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        tape.freeze_store(&self.store);
        let x = tape.constant(x01.clone());
        let y = self.forward_unit(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn super_resolve(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let out = self.infer(&img.to_tensor())?;
        ImageBuffer::from_tensor(&out, 0)
    }

    pub fn count_parameters(&self) -> usize {
        self.store.count()
    }

    /// Parameter totals per top-level block, with DuRBs listed individually.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in self.store.iter() {
            let parts: Vec<&str> = p.name.split('.').collect();
            let depth = if matches!(parts[0], "durb" | "upsample") { 2 } else { 1 };
            let key = parts[..depth.min(parts.len())].join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += p.value.len(),
                None => out.push((key, p.value.len())),
            }
        }
        out
    }
}

/// `2x - 1`
pub fn to_signed<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let shift = tape.constant(Tensor::scalar(T::of(0.5)));
    let centered = tape
        .sub_scalar(x, shift)
        .expect("scalar shift always broadcasts");
    tape.scale(centered, 2.0)
}

/// `(y + 1) / 2`
pub fn to_unit<T: Scalar>(tape: &mut Tape<T>, y: Var) -> Var {
    let shift = tape.constant(Tensor::scalar(T::of(-1.0)));
    let shifted = tape
        .sub_scalar(y, shift)
        .expect("scalar shift always broadcasts");
    tape.scale(shifted, 0.5)
}
