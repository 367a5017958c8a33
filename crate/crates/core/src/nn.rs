//! Reusable building blocks: convolution layer, residual block, sub-pixel
//! upsample block, channel attention block and dual residual block.

use rand::Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolution layer with bias. Weight `[out, in, k, k]`, bias `[1, out, 1, 1]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: Padding,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    /// Stride-1, same-padded layer with an odd square kernel.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(config_err!("{name}: same padding needs an odd kernel, got {kernel}"));
        }
        Self::with_geometry(store, name, in_channels, out_channels, kernel, Padding::Same, 1, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geometry<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(config_err!("{name}: zero-sized convolution"));
        }
        let weight = store.add_conv_weight(
            format!("{name}.weight"),
            [out_channels, in_channels, kernel, kernel],
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1]))?;
        Ok(Conv2d {
            weight,
            bias,
            padding,
            stride,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d_strided(x, w, Some(b), self.padding, self.stride)
    }

    /// `out * in * k * k + out`.
    pub fn param_count(&self, kernel: usize) -> usize {
        self.out_channels * self.in_channels * kernel * kernel + self.out_channels
    }
}

fn expect_channels<T: Scalar>(tape: &Tape<T>, x: Var, channels: usize, what: &str) -> Result<()> {
    let c = tape.value(x).channels();
    if c != channels {
        return Err(shape_err!("{what} expects {channels} channels, got {c}"));
    }
    Ok(())
}

/// `x + conv(relu(conv(x)))` with 3×3 kernels and no normalization.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub channels: usize,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, rng)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, rng)?,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.channels, "res_block")?;
        let h = self.conv1.forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, store, h)?;
        tape.add(h, x)
    }
}

/// `relu(pixel_shuffle(conv(x), r))`: conv maps `in -> out * r^2` channels.
#[derive(Clone, Debug)]
pub struct UpsampleBlock {
    pub conv: Conv2d,
    pub scale: usize,
}

impl UpsampleBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        scale: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if scale == 0 {
            return Err(config_err!("{name}: upsample scale must be positive"));
        }
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            in_channels,
            out_channels * scale * scale,
            3,
            rng,
        )?;
        Ok(UpsampleBlock { conv, scale })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.conv.in_channels, "upsample_block")?;
        let h = self.conv.forward(tape, store, x)?;
        let h = tape.pixel_shuffle(h, self.scale)?;
        Ok(tape.relu(h))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RcabConfig {
    pub channels: usize,
    pub reduction: usize,
}

impl RcabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(config_err!(
                "RCAB channels {} must be a positive multiple of reduction {}",
                self.channels,
                self.reduction
            ));
        }
        Ok(())
    }
}

/// Channel attention: `x * sigmoid(W1(relu(W0(avgpool(x)))))`, with `W0`/`W1`
/// 1×1 convolutions squeezing to `channels / reduction` and back.
#[derive(Clone, Debug)]
pub struct Rcab {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
    pub cfg: RcabConfig,
}

impl Rcab {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: RcabConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let hidden = cfg.channels / cfg.reduction;
        Ok(Rcab {
            squeeze: Conv2d::new(store, &format!("{name}.squeeze"), cfg.channels, hidden, 1, rng)?,
            excite: Conv2d::new(store, &format!("{name}.excite"), hidden, cfg.channels, 1, rng)?,
            cfg,
        })
    }

    /// The `(b, c, 1, 1)` attention weights, each in `(0, 1)`.
    pub fn attention<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.cfg.channels, "rcab")?;
        let pooled = tape.global_avg_pool(x);
        let h = self.squeeze.forward(tape, store, pooled)?;
        let h = tape.relu(h);
        let h = self.excite.forward(tape, store, h)?;
        Ok(tape.sigmoid(h))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = self.attention(tape, store, x)?;
        tape.channel_scale(x, w)
    }
}

/// Allowed dual-kernel sizes.
pub const DURB_KERNELS: [usize; 4] = [3, 5, 7, 11];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DurbConfig {
    pub channels: usize,
    pub kernel_large: usize,
    pub kernel_small: usize,
}

impl DurbConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |k: usize| DURB_KERNELS.contains(&k);
        if !ok(self.kernel_large) || !ok(self.kernel_small) {
            return Err(config_err!(
                "DuRB kernels [{}, {}] must be in {:?}",
                self.kernel_large,
                self.kernel_small,
                DURB_KERNELS
            ));
        }
        if self.kernel_large < self.kernel_small {
            return Err(config_err!(
                "DuRB large kernel {} smaller than small kernel {}",
                self.kernel_large,
                self.kernel_small
            ));
        }
        if self.channels == 0 {
            return Err(config_err!("DuRB needs at least one channel"));
        }
        Ok(())
    }
}

/// Dual residual block threading a feature stream `x` and a residual stream `res`:
///
/// ```text
/// x_c      = conv3(relu(conv3(x))) + x
/// res_next = relu(C_large(x_c)) + res
/// x_next   = relu(C_small(res_next)) + x
/// ```
#[derive(Clone, Debug)]
pub struct Durb {
    pub inner1: Conv2d,
    pub inner2: Conv2d,
    pub large: Conv2d,
    pub small: Conv2d,
    pub cfg: DurbConfig,
}

impl Durb {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: DurbConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Durb {
            inner1: Conv2d::new(store, &format!("{name}.inner1"), c, c, 3, rng)?,
            inner2: Conv2d::new(store, &format!("{name}.inner2"), c, c, 3, rng)?,
            large: Conv2d::new(store, &format!("{name}.large"), c, c, cfg.kernel_large, rng)?,
            small: Conv2d::new(store, &format!("{name}.small"), c, c, cfg.kernel_small, rng)?,
            cfg,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        res: Var,
    ) -> Result<(Var, Var)> {
        if tape.value(x).shape() != tape.value(res).shape() {
            return Err(shape_err!(
                "durb streams differ: x {:?} vs res {:?}",
                tape.value(x).shape(),
                tape.value(res).shape()
            ));
        }
        expect_channels(tape, x, self.cfg.channels, "durb")?;
        let h = self.inner1.forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.inner2.forward(tape, store, h)?;
        let xc = tape.add(h, x)?;

        let m = self.large.forward(tape, store, xc)?;
        let m = tape.relu(m);
        let res_next = tape.add(m, res)?;

        let n = self.small.forward(tape, store, res_next)?;
        let n = tape.relu(n);
        let x_next = tape.add(n, x)?;
        Ok((x_next, res_next))
    }

    /// Closed-form parameter count of one block.
    pub fn param_count(cfg: &DurbConfig) -> usize {
        let c = cfg.channels;
        let conv = |k: usize| c * c * k * k + c;
        2 * conv(3) + conv(cfg.kernel_large) + conv(cfg.kernel_small)
    }
}
