//! Camera-screen single-image super-resolution.
//!
//! A dense-tensor reverse-mode engine ([`Tape`]) drives two networks trained
//! jointly: a high-to-low degradation GAN ([`ddgan`]) that synthesizes
//! degraded low-resolution images, and a dual residual channel attention
//! network ([`durcan`]) that restores them. Supporting modules cover the
//! synthetic degradation model, multi-shot rectification, quality metrics,
//! checkpoints and configuration files.
//!
//! Networks are generic over the element type; [`f32`] is used for training
//! and [`f64`] for gradient verification. Concrete aliases are provided below.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod ddgan;
pub mod degradation;
pub mod durcan;
pub mod error;
pub mod gradsuite;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod param;
pub mod rectify;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use autodiff::gradcheck::{finite_diff_check, GradCheckOptions, GradReport};
pub use autodiff::{Activation, Gradients, Padding, Tape, Var};
pub use error::{Error, Result};

pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;







pub use ddgan::{Discriminator, Generator};
pub use image::ImageBuffer;

pub type Generator32 = Generator<f32>;
pub type Generator64 = Generator<f64>;
pub type Discriminator32 = Discriminator<f32>;
pub type Discriminator64 = Discriminator<f64>;
pub use durcan::{DuRcan, DuRcanConfig};

pub type DuRcan32 = DuRcan<f32>;
pub type DuRcan64 = DuRcan<f64>;
