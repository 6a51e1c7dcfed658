//! Noise-prediction networks and their training.

mod checkpoint;
mod conv;
mod linear;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use conv::{ConvConfig, ConvDenoiser};
pub use linear::LinearDenoiser;
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    ema_update, mse_loss, train, zero_watermark_config, LossRecord, TrainConfig, TrainOutcome,
    T_BUCKETS,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Scalar;

/// Forward contract: `(image, step) -> predicted noise` of the same shape.
pub trait Denoiser<S: Scalar> {
    fn predict(&self, x: &Image<S>, t: usize) -> Result<Image<S>>;

    fn predict_batch(&self, xs: &[Image<S>], ts: &[usize]) -> Result<Vec<Image<S>>> {
        xs.iter().zip(ts).map(|(x, &t)| self.predict(x, t)).collect()
    }
}

/// Identifies an architecture and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub id: String,
    pub hyper: serde_json::Value,
}

/// A denoiser whose parameters live in one flat vector.
pub trait TrainableDenoiser<S: Scalar>: Denoiser<S> {
    fn params(&self) -> &[S];

    fn params_mut(&mut self) -> &mut [S];

    fn descriptor(&self) -> ArchDescriptor;

    /// Adds `weight * d/dθ sum((pred - target)^2)` into `grad` and returns the sum of squared
    /// errors for this sample.
    fn accumulate_gradient(
        &self,
        x: &Image<S>,
        t: usize,
        target: &Image<S>,
        weight: S,
        grad: &mut [S],
    ) -> Result<S>;
}

/// Adapts a closure into a [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<S, F> Denoiser<S> for FnDenoiser<F>
where
    S: Scalar,
    F: Fn(&Image<S>, usize) -> Image<S>,
{
    fn predict(&self, x: &Image<S>, t: usize) -> Result<Image<S>> {
        Ok((self.0)(x, t))
    }
}

impl<S: Scalar, D: Denoiser<S> + ?Sized> Denoiser<S> for &D {
    fn predict(&self, x: &Image<S>, t: usize) -> Result<Image<S>> {
        (**self).predict(x, t)
    }
}
