//! Objective functions for both networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::nn::Conv2d;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Laplacian weight in the restoration loss.
    pub eta: f64,
    /// Adversarial weight in the generator loss.
    pub lambda: f64,
    /// Fake labels are drawn from `[0, alpha]`.
    pub alpha: f64,
    /// Real labels are drawn from `[beta, 1]`.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            eta: 6e-3,
            lambda: 1e-3,
            alpha: 0.2,
            beta: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha && self.alpha < self.beta && self.beta <= 1.0) {
            return Err(config_err!(
                "label ranges need 0 <= alpha < beta <= 1 (alpha = {}, beta = {})",
                self.alpha,
                self.beta
            ));
        }
        if !(self.eta >= 0.0 && self.lambda >= 0.0) {
            return Err(config_err!("eta and lambda must be non-negative"));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(shape_err!("{what}: {sa:?} vs {sb:?}"));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, a, b, "l1_loss")?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// 4-neighbour Laplacian stencil.
pub const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// Per-channel Laplacian filtering with zero padding.
pub fn laplacian<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let c = tape.value(x).channels();
    let kernel = Tensor::from_fn([c, c, 3, 3], |[o, i, y, x]| {
        if o == i {
            T::of(LAPLACIAN[y][x])
        } else {
            T::zero()
        }
    });
    let w = tape.constant(kernel);
    tape.conv2d(x, w, None, Padding::Same)
        .expect("kernel is built to match the input")
}

pub fn laplacian_loss<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var) -> Result<Var> {
    same_shape(tape, sr, hr, "laplacian_loss")?;
    let a = laplacian(tape, sr);
    let b = laplacian(tape, hr);
    l1_loss(tape, a, b)
}

/// `L1 + eta * Laplacian`.
pub fn restoration_loss<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var, w: &LossWeights) -> Result<Var> {
    let l1 = l1_loss(tape, sr, hr)?;
    if w.eta == 0.0 {
        return Ok(l1);
    }
    let lap = laplacian_loss(tape, sr, hr)?;
    let lap = tape.scale(lap, w.eta);
    tape.add(l1, lap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Fake,
}

/// `n` labels shaped `(n, 1, 1, 1)`: fake ones uniform on `[0, alpha]`, real
/// ones uniform on `[beta, 1]`.
pub fn smoothed_labels<T: Scalar, R: Rng + ?Sized>(
    kind: LabelKind,
    n: usize,
    w: &LossWeights,
    rng: &mut R,
) -> Tensor<T> {
    let (lo, hi) = match kind {
        LabelKind::Real => (w.beta, 1.0),
        LabelKind::Fake => (0.0, w.alpha),
    };
    Tensor::from_fn([n, 1, 1, 1], |_| T::of(lo + (hi - lo) * rng.random::<f64>()))
}

/// One draw of real and fake labels for a mini-batch.
#[derive(Clone, Debug)]
pub struct Labels<T> {
    pub real: Tensor<T>,
    pub fake: Tensor<T>,
}

impl<T: Scalar> Labels<T> {
    pub fn sample<R: Rng + ?Sized>(n: usize, w: &LossWeights, rng: &mut R) -> Self {
        Labels {
            real: smoothed_labels(LabelKind::Real, n, w, rng),
            fake: smoothed_labels(LabelKind::Fake, n, w, rng),
        }
    }

    pub fn hard(n: usize) -> Self {
        Labels {
            real: Tensor::ones([n, 1, 1, 1]),
            fake: Tensor::zeros([n, 1, 1, 1]),
        }
    }
}

/// `BCE(real labels, D(real, fake)) + BCE(fake labels, D(fake, real))`.
pub fn discriminator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    real_scores: Var,
    fake_scores: Var,
    labels: &Labels<T>,
) -> Result<Var> {
    let r = tape.bce(real_scores, labels.real.clone())?;
    let f = tape.bce(fake_scores, labels.fake.clone())?;
    tape.add(r, f)
}

/// [`discriminator_loss`] with the two label sets swapped.
pub fn generator_adv_loss<T: Scalar>(
    tape: &mut Tape<T>,
    real_scores: Var,
    fake_scores: Var,
    labels: &Labels<T>,
) -> Result<Var> {
    let r = tape.bce(real_scores, labels.fake.clone())?;
    let f = tape.bce(fake_scores, labels.real.clone())?;
    tape.add(r, f)
}

/// Frozen feature network used by the perceptual term of the content loss.
pub trait FeatureExtractor<T: Scalar> {
    fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn features(&self, _tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Ok(x)
    }
}

pub const EXTRACTOR_SEED: u64 = 0x5eed_19;
pub const EXTRACTOR_WIDTHS: [usize; 5] = [16, 16, 32, 32, 32];

/// Stack of five 3×3 conv + relu layers with fixed random weights.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor<T: Scalar> {
    store: ParamStore<T>,
    layers: Vec<Conv2d>,
}

impl<T: Scalar> RandomConvExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = 3;
        for (i, &w) in EXTRACTOR_WIDTHS.iter().enumerate() {
            layers.push(
                Conv2d::new(&mut store, &format!("layer.{i}"), width, w, 3, &mut rng)
                    .expect("fixed extractor layout is valid"),
            );
            width = w;
        }
        RandomConvExtractor { store, layers }
    }
}

impl<T: Scalar> Default for RandomConvExtractor<T> {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.freeze_store(&self.store);
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, &self.store, h)?;
            h = tape.relu(h);
        }
        Ok(h)
    }
}

/// `L1(sr, hr) + L1(phi(sr), phi(hr))`.
pub fn content_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    tape: &mut Tape<T>,
    sr: Var,
    hr: Var,
    extractor: &E,
) -> Result<Var> {
    let pixel = l1_loss(tape, sr, hr)?;
    let fs = extractor.features(tape, sr)?;
    let fh = extractor.features(tape, hr)?;
    let perceptual = l1_loss(tape, fs, fh)?;
    tape.add(pixel, perceptual)
}

/// `L_con + lambda * L_G^a`.
pub fn generator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    content: Var,
    adversarial: Var,
    w: &LossWeights,
) -> Result<Var> {
    let adv = tape.scale(adversarial, w.lambda);
    tape.add(content, adv)
}
