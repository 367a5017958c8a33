//! Gradient verification suite: every differentiable op on its own, then the
//! network blocks, both networks and every loss, all in `f64` against central
//! differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{finite_diff_check, GradCheckOptions, GradReport};
use crate::autodiff::{Activation, Padding, Tape, Var};
use crate::ddgan::{relativistic_pair, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::durcan::{DuRcan, DuRcanConfig};
use crate::error::Result;
use crate::losses::{
    content_loss, discriminator_loss, generator_adv_loss, generator_loss, l1_loss, laplacian_loss,
    restoration_loss, Labels, LossWeights, RandomConvExtractor,
};
use crate::nn::{Durb, DurbConfig, Rcab, RcabConfig, ResBlock, UpsampleBlock};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const OP_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

const WEIGHT_SEED: u64 = 0x77;

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradReport,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn line(&self) -> String {
        format!(
            "{}\t{:<34}\tmax_rel_err={:.3e}\ttol={:.0e}\tchecked={}\tskipped={}",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.report.max_rel_error(),
            self.report.tolerance,
            self.report.checked(),
            self.report.skipped()
        )
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sum(y * R)` with `R` a fixed random tensor of `y`'s shape, so every output
/// element reaches the loss with its own weight.
fn weighted(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let r = Tensor::uniform(tape.value(y).shape(), -1.0, 1.0, &mut rng(WEIGHT_SEED));
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

struct Input {
    name: &'static str,
    shape: Shape,
    lo: f64,
    hi: f64,
}

fn input(name: &'static str, shape: Shape) -> Input {
    Input {
        name,
        shape,
        lo: -1.0,
        hi: 1.0,
    }
}

fn check_op<F>(name: &str, seed: u64, inputs: &[Input], f: F) -> Result<SuiteResult>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let ids = inputs
        .iter()
        .map(|i| store.add(i.name, Tensor::uniform(i.shape, i.lo, i.hi, &mut r)))
        .collect::<Result<Vec<ParamId>>>()?;
    let opts = GradCheckOptions {
        tolerance: OP_TOLERANCE,
        seed,
        ..Default::default()
    };
    let report = finite_diff_check(
        &mut store,
        |t, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
            let y = f(t, &vars)?;
            weighted(t, y)
        },
        &opts,
    )?;
    Ok(SuiteResult {
        name: format!("op/{name}"),
        report,
    })
}

/// Each primitive at [`OP_TOLERANCE`].
pub fn op_checks(seed: u64) -> Result<Vec<SuiteResult>> {
    let x = || input("x", [2, 3, 5, 5]);
    let unary = |name: &str, a: Activation| check_op(name, seed, &[x()], move |t, v| Ok(t.activation(v[0], a)));
    Ok(vec![
        check_op("conv2d", seed, &[x(), input("w", [4, 3, 3, 3]), input("b", [1, 4, 1, 1])], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), Padding::Same)
        })?,
        check_op(
            "conv2d_strided",
            seed,
            &[input("x", [2, 3, 6, 6]), input("w", [2, 3, 3, 3]), input("b", [1, 2, 1, 1])],
            |t, v| t.conv2d_strided(v[0], v[1], Some(v[2]), Padding::Explicit(1), 2),
        )?,
        check_op("conv2d_valid", seed, &[x(), input("w", [2, 3, 5, 5])], |t, v| {
            t.conv2d(v[0], v[1], None, Padding::Explicit(0))
        })?,
        unary("relu", Activation::Relu)?,
        unary("leaky_relu", Activation::LeakyRelu(0.2))?,
        unary("sigmoid", Activation::Sigmoid)?,
        unary("tanh", Activation::Tanh)?,
        check_op("maxpool2", seed, &[input("x", [2, 3, 6, 6])], |t, v| t.maxpool2(v[0]))?,
        check_op("global_avg_pool", seed, &[x()], |t, v| Ok(t.global_avg_pool(v[0])))?,
        check_op("pixel_shuffle", seed, &[input("x", [1, 8, 3, 3])], |t, v| t.pixel_shuffle(v[0], 2))?,
        check_op("add", seed, &[x(), input("y", [2, 3, 5, 5])], |t, v| t.add(v[0], v[1]))?,
        check_op("sub", seed, &[x(), input("y", [2, 3, 5, 5])], |t, v| t.sub(v[0], v[1]))?,
        check_op("mul", seed, &[x(), input("y", [2, 3, 5, 5])], |t, v| t.mul(v[0], v[1]))?,
        check_op("channel_concat", seed, &[x(), input("y", [2, 2, 5, 5])], |t, v| t.channel_concat(v))?,
        check_op("channel_scale", seed, &[x(), input("s", [2, 3, 1, 1])], |t, v| {
            t.channel_scale(v[0], v[1])
        })?,
        check_op("scale", seed, &[x()], |t, v| Ok(t.scale(v[0], -1.7)))?,
        check_op("sub_scalar", seed, &[x(), input("s", [1, 1, 1, 1])], |t, v| t.sub_scalar(v[0], v[1]))?,
        check_op("abs", seed, &[x()], |t, v| Ok(t.abs(v[0])))?,
        check_op("sum", seed, &[x()], |t, v| {
            let q = t.mul(v[0], v[0])?;
            Ok(t.sum(q))
        })?,
        check_op("mean", seed, &[x()], |t, v| {
            let q = t.mul(v[0], v[0])?;
            Ok(t.mean(q))
        })?,
        check_op(
            "bce",
            seed,
            &[Input {
                name: "p",
                shape: [4, 1, 1, 1],
                lo: 0.05,
                hi: 0.95,
            }],
            |t, v| t.bce(v[0], Tensor::from_f64([4, 1, 1, 1], &[0.9, 0.1, 0.85, 0.0])?),
        )?,
    ])
}

fn network_opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        tolerance: NETWORK_TOLERANCE,
        max_elements: Some(12),
        seed,
        ..Default::default()
    }
}

fn check_network<F>(name: &str, seed: u64, store: &mut ParamStore<f64>, loss: F) -> Result<SuiteResult>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let report = finite_diff_check(store, loss, &network_opts(seed))?;
    Ok(SuiteResult {
        name: name.to_string(),
        report,
    })
}

fn bind(tape: &mut Tape<f64>, store: &ParamStore<f64>, name: &str) -> Var {
    let id = store.find(name).expect("suite input registered");
    tape.param(store, id)
}

/// Blocks, networks and losses at [`NETWORK_TOLERANCE`].
pub fn network_checks(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    let mut r = rng(seed);
    let w = LossWeights {
        eta: 0.5,
        lambda: 0.3,
        ..LossWeights::default()
    };

    {
        let mut s = ParamStore::new();
        let block = ResBlock::new(&mut s, "rb", 2, &mut r)?;
        s.add("x", Tensor::uniform([1, 2, 5, 5], -1.0, 1.0, &mut r))?;
        out.push(check_network("block/res_block", seed, &mut s, |t, s| {
            let x = bind(t, s, "x");
            let y = block.forward(t, s, x)?;
            weighted(t, y)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let block = Rcab::new(&mut s, "rcab", RcabConfig { channels: 4, reduction: 2 }, &mut r)?;
        s.add("x", Tensor::uniform([2, 4, 3, 3], -1.0, 1.0, &mut r))?;
        out.push(check_network("block/rcab", seed, &mut s, |t, s| {
            let x = bind(t, s, "x");
            let y = block.forward(t, s, x)?;
            weighted(t, y)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let cfg = DurbConfig {
            channels: 2,
            kernel_large: 5,
            kernel_small: 3,
        };
        let block = Durb::new(&mut s, "durb", cfg, &mut r)?;
        s.add("x", Tensor::uniform([1, 2, 5, 5], -1.0, 1.0, &mut r))?;
        s.add("res", Tensor::uniform([1, 2, 5, 5], -1.0, 1.0, &mut r))?;
        out.push(check_network("block/durb", seed, &mut s, |t, s| {
            let x = bind(t, s, "x");
            let res = bind(t, s, "res");
            let (xn, rn) = block.forward(t, s, x, res)?;
            let both = t.channel_concat(&[xn, rn])?;
            weighted(t, both)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let block = UpsampleBlock::new(&mut s, "up", 2, 2, 2, &mut r)?;
        s.add("x", Tensor::uniform([1, 2, 3, 3], -1.0, 1.0, &mut r))?;
        out.push(check_network("block/upsample", seed, &mut s, |t, s| {
            let x = bind(t, s, "x");
            let y = block.forward(t, s, x)?;
            weighted(t, y)
        })?);
    }

    let hr = Tensor::uniform([2, 3, 16, 16], 0.0, 1.0, &mut r);
    let lr = Tensor::uniform([2, 3, 4, 4], 0.0, 1.0, &mut r);
    let labels = Labels::<f64>::sample(2, &w, &mut r);

    let mut generator = Generator::<f64>::new(GeneratorConfig::tiny(2), &mut r)?;
    let mut disc = Discriminator::<f64>::new(DiscriminatorConfig::tiny(4, 2), &mut r)?;
    {
        let mut s = std::mem::take(&mut generator.store);
        out.push(check_network("network/generator", seed, &mut s, |t, s| {
            let y = t.constant(hr.clone());
            let g = generator.forward_with(t, s, y)?;
            weighted(t, g)
        })?);
        generator.store = s;
    }
    {
        let real = lr.clone();
        let fake = Tensor::uniform([2, 3, 4, 4], 0.0, 1.0, &mut r);
        let mut s = std::mem::take(&mut disc.store);
        out.push(check_network("network/discriminator+L_D", seed, &mut s, |t, s| {
            let xr = t.constant(real.clone());
            let xf = t.constant(fake.clone());
            let lr_ = disc.logits_with(t, s, xr)?;
            let lf = disc.logits_with(t, s, xf)?;
            let (dr, df) = relativistic_pair(t, lr_, lf)?;
            discriminator_loss(t, dr, df, &labels)
        })?);
        disc.store = s;
    }
    {
        let extractor = RandomConvExtractor::<f64>::new(seed);
        let mut s = std::mem::take(&mut generator.store);
        out.push(check_network("network/generator+L_G", seed, &mut s, |t, s| {
            t.freeze_store(&disc.store);
            let y = t.constant(hr.clone());
            let target = t.constant(lr.clone());
            let g = generator.forward_with(t, s, y)?;
            let content = content_loss(t, g, target, &extractor)?;
            let lr_ = disc.logits_with(t, &disc.store, target)?;
            let lf = disc.logits_with(t, &disc.store, g)?;
            let (dr, df) = relativistic_pair(t, lr_, lf)?;
            let adv = generator_adv_loss(t, dr, df, &labels)?;
            generator_loss(t, content, adv, &w)
        })?);
        generator.store = s;
    }
    {
        let cfg = DuRcanConfig {
            channels: 4,
            scale: 4,
            reduction: 2,
            ..DuRcanConfig::new(vec![[5, 3], [3, 3]])
        };
        let mut net = DuRcan::<f64>::new(cfg, &mut r)?;
        let mut s = std::mem::take(&mut net.store);
        out.push(check_network("network/durcan+L_SR", seed, &mut s, |t, s| {
            let x = t.constant(lr.clone());
            let target = t.constant(hr.clone());
            let sr = net.forward_unit_with(t, s, x)?;
            restoration_loss(t, sr, target, &w)
        })?);
    }

    let pair = |r: &mut ChaCha8Rng| -> Result<ParamStore<f64>> {
        let mut s = ParamStore::new();
        s.add("a", Tensor::uniform([1, 3, 8, 8], 0.0, 1.0, r))?;
        s.add("b", Tensor::uniform([1, 3, 8, 8], 0.0, 1.0, r))?;
        Ok(s)
    };
    let mut s = pair(&mut r)?;
    out.push(check_network("loss/l1", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "a"), bind(t, s, "b"));
        l1_loss(t, a, b)
    })?);
    let mut s = pair(&mut r)?;
    out.push(check_network("loss/laplacian", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "a"), bind(t, s, "b"));
        laplacian_loss(t, a, b)
    })?);
    let mut s = pair(&mut r)?;
    out.push(check_network("loss/restoration", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "a"), bind(t, s, "b"));
        restoration_loss(t, a, b, &w)
    })?);
    let extractor = RandomConvExtractor::<f64>::default();
    let mut s = pair(&mut r)?;
    out.push(check_network("loss/content", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "a"), bind(t, s, "b"));
        content_loss(t, a, b, &extractor)
    })?);

    let mut s = ParamStore::new();
    s.add("real", Tensor::uniform([3, 1, 1, 1], -2.0, 2.0, &mut r))?;
    s.add("fake", Tensor::uniform([3, 1, 1, 1], -2.0, 2.0, &mut r))?;
    let labels3 = Labels::<f64>::sample(3, &w, &mut r);
    out.push(check_network("loss/discriminator", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "real"), bind(t, s, "fake"));
        let (dr, df) = relativistic_pair(t, a, b)?;
        discriminator_loss(t, dr, df, &labels3)
    })?);
    out.push(check_network("loss/generator_adversarial", seed, &mut s, |t, s| {
        let (a, b) = (bind(t, s, "real"), bind(t, s, "fake"));
        let (dr, df) = relativistic_pair(t, a, b)?;
        generator_adv_loss(t, dr, df, &labels3)
    })?);
    Ok(out)
}

pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut all = op_checks(seed)?;
    all.extend(network_checks(seed)?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for r in op_checks(3).unwrap() {
            assert!(r.passed(), "{}", r.line());
            assert_eq!(r.report.skipped(), 0, "{}", r.line());
        }
    }

    #[test]
    fn networks_and_losses_match_finite_differences() {
        for r in network_checks(3).unwrap() {
            assert!(r.passed(), "{}\n{:?}", r.line(), r.report.params);
        }
    }
}
