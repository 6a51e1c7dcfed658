//! Plain DDPM, kept separate from the watermarked path so reductions can be checked against
//! it step for step.

use rand::Rng;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{normal_image, normal_like, standard_normal};
use crate::scalar::Scalar;
use crate::schedule::VarianceSchedule;

/// `(x_t, eps)` with `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn training_pair<S: Scalar, R: Rng + ?Sized>(
    x0: &Image<S>,
    t: usize,
    schedule: &VarianceSchedule,
    rng: &mut R,
) -> Result<(Image<S>, Image<S>)> {
    schedule.check_step(t, 1)?;
    let eps = normal_like(rng, x0);
    let ab = schedule.alpha_bar(t);
    let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    let xt = x0.zip_map(&eps, |x, e| a * x + b * e)?;
    Ok((xt, eps))
}

/// One ancestral step: `x_t / sqrt(a_t) - beta_t / (sqrt(1 - ab_t) sqrt(a_t)) eps + sigma_t z`.
pub fn step<S: Scalar, R: Rng + ?Sized>(
    x_t: &Image<S>,
    eps: &Image<S>,
    t: usize,
    schedule: &VarianceSchedule,
    rng: &mut R,
) -> Result<Image<S>> {
    schedule.check_step(t, 1)?;
    let beta = schedule.beta(t);
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let inv_sqrt_a = S::of(1.0 / a.sqrt());
    let eps_coef = S::of(beta / ((1.0 - ab).sqrt() * a.sqrt()));
    let var = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab);
    let mut out = x_t.zip_map(eps, |x, e| inv_sqrt_a * x - eps_coef * e)?;
    if var > 0.0 {
        let sd = S::of(var.sqrt());
        for v in out.data_mut() {
            *v = *v + sd * standard_normal::<S, _>(rng);
        }
    }
    Ok(out)
}

/// Full ancestral sampler; returns the `t = 0` batch.
pub fn sample<S, D, R>(
    denoiser: &D,
    schedule: &VarianceSchedule,
    shape: (usize, usize, usize),
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Image<S>>>
where
    S: Scalar,
    D: Denoiser<S> + ?Sized,
    R: Rng + ?Sized,
{
    let (c, h, w) = shape;
    let mut xs: Vec<Image<S>> = (0..batch_size).map(|_| normal_image(rng, c, h, w)).collect();
    for t in (1..=schedule.steps()).rev() {
        let eps: Vec<Image<S>> = xs
            .iter()
            .map(|x| denoiser.predict(x, t))
            .collect::<Result<_>>()?;
        for (x, e) in xs.iter_mut().zip(&eps) {
            if e.shape() != x.shape() {
                return Err(Error::ShapeMismatch {
                    expected: x.shape(),
                    got: e.shape(),
                });
            }
            *x = step(x, e, t, schedule, rng)?;
        }
    }
    Ok(xs)
}
