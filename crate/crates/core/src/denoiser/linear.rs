use serde_json::json;

use super::{ArchDescriptor, Denoiser, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// `eps = a * x + b`, elementwise. Two parameters; used for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDenoiser<S> {
    params: [S; 2],
}

impl<S: Scalar> LinearDenoiser<S> {
    pub fn new(a: S, b: S) -> Self {
        Self { params: [a, b] }
    }
}

impl<S: Scalar> Denoiser<S> for LinearDenoiser<S> {
    fn predict(&self, x: &Image<S>, _t: usize) -> Result<Image<S>> {
        let [a, b] = self.params;
        Ok(x.map(|v| a * v + b))
    }
}

impl<S: Scalar> TrainableDenoiser<S> for LinearDenoiser<S> {
    fn params(&self) -> &[S] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            id: "linear".into(),
            hyper: json!({}),
        }
    }

    fn accumulate_gradient(
        &self,
        x: &Image<S>,
        t: usize,
        target: &Image<S>,
        weight: S,
        grad: &mut [S],
    ) -> Result<S> {
        if grad.len() != 2 {
            return Err(Error::Incongruent(grad.len(), 2));
        }
        let pred = self.predict(x, t)?;
        pred.ensure_same_shape(target)?;
        let two = S::of(2.0);
        let mut sse = S::zero();
        for ((&p, &y), &xv) in pred.data().iter().zip(target.data()).zip(x.data()) {
            let r = p - y;
            sse = sse + r * r;
            grad[0] = grad[0] + weight * two * r * xv;
            grad[1] = grad[1] + weight * two * r;
        }
        Ok(sse)
    }
}
