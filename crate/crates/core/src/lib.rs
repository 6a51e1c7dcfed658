//! Watermarking the intermediate diffusion process of DDPM-style generative models.
//!
//! The watermark is embedded in the noised training sequence up to a watermark step `t_A`,
//! reappears in the average of reverse-process states at `t_A`, and is absent from the final
//! samples. The crate covers the schedule coefficients, the modified forward and reverse
//! processes, a small trainable denoiser, contour-based verification, and numeric kernels for
//! the usual generative-quality metrics.
//!
//! Image tensors, processes and models are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod data;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nac;
pub mod oracle;
pub mod plot;
pub mod reverse;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod vanilla;
pub mod verification;
pub mod watermark;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Scalar;
pub use schedule::{F1Mode, VarianceSchedule};
pub use watermark::WatermarkSpec;

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type WatermarkSpec32 = WatermarkSpec<f32>;
pub type WatermarkSpec64 = WatermarkSpec<f64>;
pub type TrainingPair32 = forward::TrainingPair<f32>;
pub type TrainingPair64 = forward::TrainingPair<f64>;
pub type TrajectoryBatch32 = reverse::TrajectoryBatch<f32>;
pub type TrajectoryBatch64 = reverse::TrajectoryBatch<f64>;
pub type ConvDenoiser32 = denoiser::ConvDenoiser<f32>;
pub type ConvDenoiser64 = denoiser::ConvDenoiser<f64>;
pub type Checkpoint32 = denoiser::Checkpoint<f32>;
pub type Checkpoint64 = denoiser::Checkpoint<f64>;
