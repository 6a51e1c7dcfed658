//! Watermarked forward process: the noised sequence `x_t'` and the regression targets `eps''`
//! for the embedding stage (`t <= t_A`) and the simulation stage (`t > t_A`).
//!
//! With `b_t = f1(t) x0 + f2(t) x_A` and `x_0' = gamma x0 + (1 - gamma) b_0`,
//!
//! ```text
//! x_t'  = sqrt(ab_t) x_0' + gamma sqrt(1 - ab_t) eps' + (1 - gamma)(b_t - sqrt(ab_t) b_0)
//! eps'' = gamma eps' + (1 - gamma) K x_A
//! ```
//!
//! and past `t_A` the sequence continues as plain diffusion from `x_{t_A}'`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::normal_like;
use crate::scalar::Scalar;
use crate::schedule::VarianceSchedule;
use crate::watermark::{ScaleMode, WatermarkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Embedding,
    Simulation,
}

impl Stage {
    pub fn of(t: usize, t_a: usize) -> Stage {
        if t <= t_a {
            Stage::Embedding
        } else {
            Stage::Simulation
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair<S> {
    pub x_t_prime: Image<S>,
    pub t: usize,
    /// `eps''`, what the denoiser regresses onto.
    pub target: Image<S>,
    pub stage: Stage,
    /// Noise injected at this step.
    pub eps_prime: Image<S>,
}

/// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`, for `0 <= t <= T`.
pub fn diffuse_vanilla<S: Scalar>(
    x0: &Image<S>,
    t: usize,
    eps: &Image<S>,
    schedule: &VarianceSchedule,
) -> Result<Image<S>> {
    schedule.check_step(t, 0)?;
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    x0.zip_map(eps, |x, e| sa * x + sb * e)
}

/// `b_t` for the given spec and (already scaled) pattern.
pub fn interpolant<S: Scalar>(
    x0: &Image<S>,
    scaled_pattern: &Image<S>,
    t: usize,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<Image<S>> {
    crate::watermark::compute_bt(
        x0,
        scaled_pattern,
        schedule.f1(t, spec.f1_mode())?,
        schedule.f2(t)?,
    )
}

/// `x_0' = gamma x0 + (1 - gamma) b_0`: `x0` in theorem mode, `gamma x0` in zero mode.
pub fn watermarked_origin<S: Scalar>(
    x0: &Image<S>,
    scaled_pattern: &Image<S>,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<Image<S>> {
    let b0 = interpolant(x0, scaled_pattern, 0, spec, schedule)?;
    let g = S::of(spec.gamma());
    let omg = S::of(1.0 - spec.gamma());
    x0.zip_map(&b0, |x, b| g * x + omg * b)
}

/// Embedding-stage pair at `t <= t_A` from explicit noise and scaled pattern.
pub fn diffuse_embedding<S: Scalar>(
    x0: &Image<S>,
    t: usize,
    eps_prime: &Image<S>,
    scaled_pattern: &Image<S>,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<TrainingPair<S>> {
    schedule.check_step(t, 0)?;
    if t > spec.t_a() {
        return Err(Error::Stage(format!(
            "embedding stage requested at t = {t} > t_A = {}",
            spec.t_a()
        )));
    }
    x0.ensure_same_shape(eps_prime)?;
    x0.ensure_same_shape(scaled_pattern)?;

    let gamma = spec.gamma();
    let ab = schedule.alpha_bar(t);
    let sa = S::of(ab.sqrt());
    let noise_coef = S::of(gamma * (1.0 - ab).sqrt());
    let g = S::of(gamma);
    let omg = S::of(1.0 - gamma);
    let target_coef = S::of((1.0 - gamma) * schedule.k());

    let f1_0 = S::of(schedule.f1(0, spec.f1_mode())?);
    let f2_0 = S::of(schedule.f2(0)?);
    let f1_t = S::of(schedule.f1(t, spec.f1_mode())?);
    let f2_t = S::of(schedule.f2(t)?);

    let n = x0.len();
    let mut x_t = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for ((&x, &e), &a) in x0.data().iter().zip(eps_prime.data()).zip(scaled_pattern.data()) {
        let b0 = f1_0 * x + f2_0 * a;
        let bt = f1_t * x + f2_t * a;
        let origin = g * x + omg * b0;
        x_t.push(sa * origin + noise_coef * e + omg * (bt - sa * b0));
        target.push(g * e + target_coef * a);
    }
    let (c, h, w) = x0.shape();
    Ok(TrainingPair {
        x_t_prime: Image::from_vec(c, h, w, x_t)?,
        t,
        target: Image::from_vec(c, h, w, target)?,
        stage: Stage::Embedding,
        eps_prime: eps_prime.clone(),
    })
}

/// Simulation-stage pair: plain diffusion from `x_{t_A}'` to `t >= t_A`; the target is the
/// injected noise itself.
pub fn diffuse_simulation<S: Scalar>(
    x_ta_prime: &Image<S>,
    t: usize,
    eps_prime: &Image<S>,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<TrainingPair<S>> {
    schedule.check_step(t, 1)?;
    if t < spec.t_a() {
        return Err(Error::Stage(format!(
            "simulation stage requested at t = {t} < t_A = {}",
            spec.t_a()
        )));
    }
    let ratio = schedule.alpha_bar(t) / schedule.alpha_bar(spec.t_a());
    let (keep, noise) = (S::of(ratio.sqrt()), S::of((1.0 - ratio).sqrt()));
    let x_t = x_ta_prime.zip_map(eps_prime, |x, e| keep * x + noise * e)?;
    Ok(TrainingPair {
        x_t_prime: x_t,
        t,
        target: eps_prime.clone(),
        stage: Stage::of(t, spec.t_a()),
        eps_prime: eps_prime.clone(),
    })
}

/// Full pair construction from explicit noises. `anchor_noise` builds `x_{t_A}'` and is only
/// read when `t > t_A`; `pattern_scale` multiplies the raw pattern.
pub fn build_pair_from_noise<S: Scalar>(
    x0: &Image<S>,
    t: usize,
    eps_prime: &Image<S>,
    anchor_noise: &Image<S>,
    pattern_scale: f64,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<TrainingPair<S>> {
    schedule.check_step(t, 1)?;
    let scaled = spec.scaled_pattern(pattern_scale);
    if t <= spec.t_a() {
        diffuse_embedding(x0, t, eps_prime, &scaled, spec, schedule)
    } else {
        let anchor = diffuse_embedding(x0, spec.t_a(), anchor_noise, &scaled, spec, schedule)?;
        diffuse_simulation(&anchor.x_t_prime, t, eps_prime, spec, schedule)
    }
}

fn reference_max<S: Scalar>(
    x0s: &[&Image<S>],
    noises: &[&Image<S>],
    t: usize,
    schedule: &VarianceSchedule,
) -> f64 {
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0s.iter()
        .zip(noises)
        .flat_map(|(x, e)| x.data().iter().zip(e.data()))
        .map(|(x, e)| (sa * x.as_f64() + sb * e.as_f64()).abs())
        .fold(0.0, f64::max)
}

/// One training pair with fresh noise from `rng`. Dynamic scaling uses this sample alone as
/// the reference batch.
pub fn build_training_pair<S: Scalar, R: Rng + ?Sized>(
    x0: &Image<S>,
    t: usize,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
    rng: &mut R,
) -> Result<TrainingPair<S>> {
    let mut pairs = build_training_batch(&[x0], &[t], spec, schedule, rng)?;
    Ok(pairs.pop().expect("one pair per input"))
}

/// Pairs for a minibatch. Noise is drawn element by element (`eps'`, then the anchor noise
/// when `t > t_A`). Under [`ScaleMode::Batch`] element `i` is scaled against every minibatch
/// sample noised to its embedding step `min(t_i, t_A)`.
pub fn build_training_batch<S: Scalar, R: Rng + ?Sized>(
    x0s: &[&Image<S>],
    ts: &[usize],
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
    rng: &mut R,
) -> Result<Vec<TrainingPair<S>>> {
    if x0s.len() != ts.len() {
        return Err(Error::Input(format!(
            "{} samples but {} steps",
            x0s.len(),
            ts.len()
        )));
    }
    let mut eps = Vec::with_capacity(x0s.len());
    let mut anchors = Vec::with_capacity(x0s.len());
    for (x0, &t) in x0s.iter().zip(ts) {
        schedule.check_step(t, 1)?;
        x0.ensure_same_shape(spec.pattern())?;
        let e = normal_like(rng, x0);
        let anchor = if t > spec.t_a() {
            Some(normal_like(rng, x0))
        } else {
            None
        };
        eps.push(e);
        anchors.push(anchor);
    }
    // Noise that places each sample at its embedding step.
    let embed_noise: Vec<&Image<S>> = eps
        .iter()
        .zip(&anchors)
        .map(|(e, a)| a.as_ref().unwrap_or(e))
        .collect();

    let mut out = Vec::with_capacity(x0s.len());
    for i in 0..x0s.len() {
        let tau = ts[i].min(spec.t_a());
        let reference = match spec.scale_mode() {
            ScaleMode::Batch => reference_max(x0s, &embed_noise, tau, schedule),
            ScaleMode::PerSample => reference_max(&x0s[i..=i], &embed_noise[i..=i], tau, schedule),
            ScaleMode::Static(_) => 0.0,
        };
        let scale = spec.scale_for(reference)?;
        out.push(build_pair_from_noise(
            x0s[i],
            ts[i],
            &eps[i],
            embed_noise[i],
            scale,
            spec,
            schedule,
        )?);
    }
    Ok(out)
}

/// One step of the watermarked recursion:
/// `sqrt(a_t) x_{t-1}' + gamma sqrt(1 - a_t) eps + (1 - gamma)(b_t - sqrt(a_t) b_{t-1})`.
pub fn recursive_step<S: Scalar>(
    x_prev_prime: &Image<S>,
    t: usize,
    eps: &Image<S>,
    x0: &Image<S>,
    scaled_pattern: &Image<S>,
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
) -> Result<Image<S>> {
    schedule.check_step(t, 1)?;
    x_prev_prime.ensure_same_shape(eps)?;
    x_prev_prime.ensure_same_shape(x0)?;
    let bt = interpolant(x0, scaled_pattern, t, spec, schedule)?;
    let b_prev = interpolant(x0, scaled_pattern, t - 1, spec, schedule)?;
    let a = schedule.alpha(t);
    let sa = S::of(a.sqrt());
    let noise_coef = S::of(spec.gamma() * (1.0 - a).sqrt());
    let omg = S::of(1.0 - spec.gamma());
    let data = x_prev_prime
        .data()
        .iter()
        .zip(eps.data())
        .zip(bt.data().iter().zip(b_prev.data()))
        .map(|((&x, &e), (&b, &bp))| sa * x + noise_coef * e + omg * (b - sa * bp))
        .collect();
    let (c, h, w) = x0.shape();
    Image::from_vec(c, h, w, data)
}

/// Uniform step in `[1, T]`.
pub fn sample_step<R: Rng + ?Sized>(schedule: &VarianceSchedule, rng: &mut R) -> usize {
    rng.random_range(1..=schedule.steps())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::schedule::F1Mode;

    fn four_step() -> VarianceSchedule {
        VarianceSchedule::from_betas(&[0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    fn scalar_spec(x_a: f64, gamma: f64, t_a: usize, mode: F1Mode) -> WatermarkSpec<f64> {
        WatermarkSpec::new(Image::scalar(x_a), gamma, t_a, mode, &four_step())
            .unwrap()
            .with_scale_mode(ScaleMode::Static(1.0))
    }

    #[test]
    fn vanilla_edge_cases() {
        let s = four_step();
        let x0 = Image::scalar(0.5);
        let e = Image::scalar(1.0);
        assert_eq!(diffuse_vanilla(&x0, 0, &e, &s).unwrap(), x0);
        let zero = Image::scalar(0.0);
        let v = diffuse_vanilla(&x0, 2, &zero, &s).unwrap();
        assert_eq!(v.data()[0], 0.5 * s.alpha_bar(2).sqrt());
        assert!(diffuse_vanilla(&x0, 5, &e, &s).is_err());
        assert!(diffuse_vanilla(&x0, 1, &Image::zeros(1, 1, 2), &s).is_err());
    }

    #[test]
    fn embedding_rejects_simulation_steps() {
        let s = four_step();
        let spec = scalar_spec(1.0, 0.8, 2, F1Mode::Theorem);
        let x = Image::scalar(0.1);
        assert!(matches!(
            diffuse_embedding(&x, 3, &x, &x, &spec, &s),
            Err(Error::Stage(_))
        ));
        assert!(matches!(
            diffuse_simulation(&x, 1, &x, &spec, &s),
            Err(Error::Stage(_))
        ));
    }

    #[test]
    fn simulation_boundary_is_identity() {
        let s = four_step();
        let spec = scalar_spec(1.0, 0.8, 2, F1Mode::Zero);
        let x = Image::scalar(0.7);
        let p = diffuse_simulation(&x, 2, &Image::scalar(5.0), &spec, &s).unwrap();
        assert_eq!(p.x_t_prime, x);
        assert_eq!(p.stage, Stage::Embedding);

        let p = diffuse_simulation(&x, 4, &Image::scalar(0.0), &spec, &s).unwrap();
        let ratio = s.alpha_bar(4) / s.alpha_bar(2);
        assert!((p.x_t_prime.data()[0] - 0.7 * ratio.sqrt()).abs() < 1e-15);
        assert_eq!(p.stage, Stage::Simulation);
    }

    #[test]
    fn origin_depends_on_f1_mode() {
        let s = four_step();
        let x0 = Image::scalar(0.5);
        let a = Image::scalar(3.0);
        let th = scalar_spec(1.0, 0.8, 2, F1Mode::Theorem);
        let zero = scalar_spec(1.0, 0.8, 2, F1Mode::Zero);
        assert_eq!(watermarked_origin(&x0, &a, &th, &s).unwrap(), x0);
        assert!((watermarked_origin(&x0, &a, &zero, &s).unwrap().data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn stage_partition() {
        for t in 1..=4 {
            let st = Stage::of(t, 2);
            assert_eq!(st == Stage::Embedding, t <= 2);
        }
    }

    #[test]
    fn boundary_step_is_embedding() {
        let s = four_step();
        let spec = scalar_spec(1.0, 0.8, 2, F1Mode::Zero);
        let mut rng = rng_from_seed(3);
        let p = build_training_pair(&Image::scalar(0.2), 2, &spec, &s, &mut rng).unwrap();
        assert_eq!(p.stage, Stage::Embedding);
        let p = build_training_pair(&Image::scalar(0.2), 3, &spec, &s, &mut rng).unwrap();
        assert_eq!(p.stage, Stage::Simulation);
        assert_eq!(p.target, p.eps_prime);
    }
}
