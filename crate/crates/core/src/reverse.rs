//! Modified reverse posterior and the sampling loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::{mean_image, Image};
use crate::rng::{normal_image, standard_normal};
use crate::scalar::Scalar;
use crate::schedule::{F1Mode, VarianceSchedule};
use crate::watermark::WatermarkSpec;

/// Which posterior variance the sampler uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `gamma^2 (1 - a_t)(1 - ab_{t-1}) / (1 - ab_t)`.
    #[default]
    GammaSquared,
    /// Plain DDPM variance, without the `gamma^2` factor.
    Vanilla,
}

/// Posterior mean and variance of `x_{t-1}'` given `x_t'` and a noise estimate.
/// The mean does not depend on `gamma` or the sigma mode.
pub fn posterior_params<S: Scalar>(
    x_t_prime: &Image<S>,
    eps_hat: &Image<S>,
    t: usize,
    schedule: &VarianceSchedule,
    gamma: f64,
    sigma_mode: SigmaMode,
) -> Result<(Image<S>, f64)> {
    schedule.check_step(t, 1)?;
    if !(gamma.is_finite() && gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Input(format!("gamma = {gamma} outside (0, 1]")));
    }
    if !x_t_prime.is_finite() || !eps_hat.is_finite() {
        return Err(Error::NonFinite(format!("posterior inputs at t = {t}")));
    }
    // beta_t in place of 1 - a_t.
    let beta = schedule.beta(t);
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let c_x = S::of(1.0 / a.sqrt());
    let c_eps = S::of(beta / ((1.0 - ab).sqrt() * a.sqrt()));
    let mu = x_t_prime.zip_map(eps_hat, |x, e| c_x * x - c_eps * e)?;
    let base = beta * (1.0 - ab_prev) / (1.0 - ab);
    let var = match sigma_mode {
        SigmaMode::GammaSquared => gamma * gamma * base,
        SigmaMode::Vanilla => base,
    };
    Ok((mu, var))
}

/// `mu' + sigma' z`; no noise is drawn when the variance is zero.
pub fn reverse_step<S: Scalar, R: Rng + ?Sized>(
    x_t_prime: &Image<S>,
    eps_hat: &Image<S>,
    t: usize,
    schedule: &VarianceSchedule,
    gamma: f64,
    sigma_mode: SigmaMode,
    rng: &mut R,
) -> Result<Image<S>> {
    let (mut mu, var) = posterior_params(x_t_prime, eps_hat, t, schedule, gamma, sigma_mode)?;
    if var > 0.0 {
        let sd = S::of(var.sqrt());
        for v in mu.data_mut() {
            *v = *v + sd * standard_normal::<S, _>(rng);
        }
    }
    Ok(mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    pub batch_size: usize,
    /// Steps whose states are recorded; `T` is the initial noise and `0` the uncorrected output.
    pub snapshot_steps: BTreeSet<usize>,
    pub sigma_mode: SigmaMode,
    /// Clamp gamma-divided finals to `[-1, 1]`.
    pub clamp: bool,
}

impl SamplerOptions {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            snapshot_steps: BTreeSet::new(),
            sigma_mode: SigmaMode::default(),
            clamp: true,
        }
    }

    pub fn with_snapshots(mut self, steps: impl IntoIterator<Item = usize>) -> Self {
        self.snapshot_steps = steps.into_iter().collect();
        self
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.sigma_mode = mode;
        self
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch<S> {
    pub finals: Vec<Image<S>>,
    pub snapshots: BTreeMap<usize, Vec<Image<S>>>,
    pub seed: Option<u64>,
    pub sigma_mode: SigmaMode,
}

impl<S: Scalar> TrajectoryBatch<S> {
    pub fn snapshot(&self, t: usize) -> Option<&[Image<S>]> {
        self.snapshots.get(&t).map(Vec::as_slice)
    }

    pub fn average_at(&self, t: usize) -> Result<Image<S>> {
        let batch = self
            .snapshot(t)
            .ok_or_else(|| Error::Input(format!("no snapshot recorded at step {t}")))?;
        average_snapshot(batch)
    }

    pub fn average_finals(&self) -> Result<Image<S>> {
        average_snapshot(&self.finals)
    }
}

/// Run the reverse chain from standard normal noise down to `t = 0`.
///
/// Noise is consumed in a fixed order: the initial batch element by element, then one image
/// per element for each step with nonzero variance. In zero-f1 mode the outputs are divided
/// by `gamma` (and optionally clamped).
pub fn sample<S, D, R>(
    denoiser: &D,
    schedule: &VarianceSchedule,
    spec: &WatermarkSpec<S>,
    options: &SamplerOptions,
    rng: &mut R,
) -> Result<TrajectoryBatch<S>>
where
    S: Scalar,
    D: Denoiser<S> + ?Sized,
    R: Rng + ?Sized,
{
    let steps = schedule.steps();
    if let Some(&bad) = options.snapshot_steps.iter().find(|&&s| s > steps) {
        return Err(Error::StepOutOfRange {
            step: bad,
            lo: 0,
            hi: steps,
        });
    }
    let (c, h, w) = spec.pattern().shape();
    let mut xs: Vec<Image<S>> = (0..options.batch_size)
        .map(|_| normal_image(rng, c, h, w))
        .collect();
    let mut snapshots = BTreeMap::new();
    if options.snapshot_steps.contains(&steps) {
        snapshots.insert(steps, xs.clone());
    }
    for t in (1..=steps).rev() {
        let mut next = Vec::with_capacity(xs.len());
        for x in &xs {
            let eps = denoiser.predict(x, t)?;
            if eps.shape() != x.shape() {
                return Err(Error::ShapeMismatch {
                    expected: x.shape(),
                    got: eps.shape(),
                });
            }
            next.push(eps);
        }
        for (x, eps) in xs.iter_mut().zip(&next) {
            *x = reverse_step(x, eps, t, schedule, spec.gamma(), options.sigma_mode, rng)?;
        }
        if options.snapshot_steps.contains(&(t - 1)) {
            snapshots.insert(t - 1, xs.clone());
        }
    }
    let finals = match spec.f1_mode() {
        F1Mode::Theorem => xs,
        F1Mode::Zero => {
            let g = S::of(spec.gamma());
            let (lo, hi) = (-S::one(), S::one());
            xs.into_iter()
                .map(|x| {
                    x.map(|v| {
                        let v = v / g;
                        if options.clamp {
                            v.max(lo).min(hi)
                        } else {
                            v
                        }
                    })
                })
                .collect()
        }
    };
    Ok(TrajectoryBatch {
        finals,
        snapshots,
        seed: None,
        sigma_mode: options.sigma_mode,
    })
}

/// Elementwise mean of the snapshot batch (`x_avg`).
pub fn average_snapshot<S: Scalar>(batch: &[Image<S>]) -> Result<Image<S>> {
    mean_image(batch)
}
