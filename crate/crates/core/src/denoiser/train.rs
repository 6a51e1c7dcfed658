use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, OptimizerKind, Optimizer, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::forward::{build_training_batch, sample_step};
use crate::image::Image;
use crate::rng::{streams, substream};
use crate::scalar::Scalar;
use crate::schedule::VarianceSchedule;
use crate::watermark::WatermarkSpec;

/// Number of equal-width step buckets in the loss log.
pub const T_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// `None` disables EMA.
    pub ema_rate: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            steps: 3000,
            batch_size: 16,
            ema_rate: None,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(r) = self.ema_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("EMA rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// One row of the loss log: mean loss of the batch elements whose step fell in `t_bucket`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub t_bucket: usize,
    pub loss: f64,
}

pub struct TrainOutcome<S, M> {
    pub model: M,
    pub checkpoint: Checkpoint<S>,
    /// Minibatch mean loss per optimisation step.
    pub step_losses: Vec<f64>,
    pub log: Vec<LossRecord>,
}

impl<S, M> TrainOutcome<S, M> {
    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,t_bucket,loss")?;
        for r in &self.log {
            writeln!(out, "{},{},{:e}", r.step, r.t_bucket, r.loss)?;
        }
        Ok(())
    }
}

/// Mean squared error over all elements.
pub fn mse_loss<S: Scalar>(pred: &Image<S>, target: &Image<S>) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let r = a.as_f64() - b.as_f64();
            r * r
        })
        .sum::<f64>()
        / n)
}

/// `ema ← rate · ema + (1 − rate) · params`.
pub fn ema_update<S: Scalar>(params: &[S], ema: &mut [S], rate: f64) -> Result<()> {
    if params.len() != ema.len() {
        return Err(Error::Incongruent(params.len(), ema.len()));
    }
    let (r, q) = (S::of(rate), S::of(1.0 - rate));
    for (e, &p) in ema.iter_mut().zip(params) {
        *e = r * *e + q * p;
    }
    Ok(())
}

/// The zero-watermark baseline: identical pipeline, blank pattern.
pub fn zero_watermark_config<S: Scalar>(spec: &WatermarkSpec<S>) -> WatermarkSpec<S> {
    spec.zeroed()
}

fn bucket(t: usize, steps: usize) -> usize {
    ((t - 1) * T_BUCKETS / steps).min(T_BUCKETS - 1)
}

/// Minibatch training on `(x_t', t) -> eps''` pairs.
///
/// Minibatch indices come from the data stream of `config.seed`, steps and noise from the
/// noise stream, so a fixed seed reproduces the run exactly.
pub fn train<S, M>(
    mut model: M,
    dataset: &[Image<S>],
    spec: &WatermarkSpec<S>,
    schedule: &VarianceSchedule,
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome<S, M>>
where
    S: Scalar,
    M: TrainableDenoiser<S>,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    for x in dataset {
        x.ensure_same_shape(spec.pattern())?;
    }
    let mut data_rng = substream(config.seed, streams::TRAIN_DATA);
    let mut noise_rng = substream(config.seed, streams::TRAIN_NOISE);
    let n_params = model.params().len();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, n_params);
    let mut ema = config.ema_rate.map(|_| model.params().to_vec());
    let pixels = dataset[0].len();
    let weight = S::of(1.0 / (config.batch_size * pixels) as f64);

    let mut grad = vec![S::zero(); n_params];
    let mut step_losses = Vec::with_capacity(config.steps);
    let mut log = Vec::new();
    for step in 0..config.steps {
        let x0s: Vec<&Image<S>> = (0..config.batch_size)
            .map(|_| &dataset[data_rng.random_range(0..dataset.len())])
            .collect();
        let ts: Vec<usize> = (0..config.batch_size)
            .map(|_| sample_step(schedule, &mut noise_rng))
            .collect();
        let pairs = build_training_batch(&x0s, &ts, spec, schedule, &mut noise_rng)?;

        grad.fill(S::zero());
        let mut bucket_sum = [0.0f64; T_BUCKETS];
        let mut bucket_n = [0usize; T_BUCKETS];
        let mut total = 0.0;
        for pair in &pairs {
            let sse = model
                .accumulate_gradient(&pair.x_t_prime, pair.t, &pair.target, weight, &mut grad)?
                .as_f64();
            let loss = sse / pixels as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    t: pair.t,
                    loss,
                });
            }
            let b = bucket(pair.t, schedule.steps());
            bucket_sum[b] += loss;
            bucket_n[b] += 1;
            total += loss;
        }
        optimizer.apply(model.params_mut(), &grad);
        if let (Some(ema), Some(rate)) = (ema.as_mut(), config.ema_rate) {
            ema_update(model.params(), ema, rate)?;
        }
        let mean = total / pairs.len() as f64;
        step_losses.push(mean);
        for b in 0..T_BUCKETS {
            if bucket_n[b] > 0 {
                log.push(LossRecord {
                    step,
                    t_bucket: b,
                    loss: bucket_sum[b] / bucket_n[b] as f64,
                });
            }
        }
        on_step(step, mean);
    }

    let checkpoint = Checkpoint {
        arch: model.descriptor(),
        params: model.params().to_vec(),
        ema,
        schedule_fingerprint: schedule.fingerprint(),
        watermark: spec.to_record(),
        step: config.steps,
    };
    Ok(TrainOutcome {
        model,
        checkpoint,
        step_losses,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::LinearDenoiser;
    use crate::schedule::F1Mode;

    #[test]
    fn ema_limits() {
        let p = [1.0f64, -2.0];
        let mut e = [5.0, 5.0];
        ema_update(&p, &mut e, 0.0).unwrap();
        assert_eq!(e, p);
        let mut e = [5.0, 5.0];
        ema_update(&p, &mut e, 1.0).unwrap();
        assert_eq!(e, [5.0, 5.0]);
        assert!(ema_update(&p, &mut [0.0], 0.5).is_err());
    }

    #[test]
    fn ema_geometric_convergence() {
        let p = [1.0f64];
        let mut e = [0.0f64];
        for _ in 0..1000 {
            ema_update(&p, &mut e, 0.999).unwrap();
        }
        let closed = 1.0 - 0.999f64.powi(1000);
        assert!((e[0] - closed).abs() < 1e-12);
        assert!((e[0] - 0.6323).abs() < 1e-4);
    }

    #[test]
    fn zero_steps_keep_initialisation() {
        let sched = VarianceSchedule::linear(10, 1e-3, 0.2).unwrap();
        let spec = WatermarkSpec::new(Image::<f64>::filled(1, 2, 2, 1.0), 0.8, 5, F1Mode::Zero, &sched)
            .unwrap();
        let config = TrainConfig {
            steps: 0,
            ema_rate: Some(0.9),
            ..TrainConfig::default()
        };
        let model = LinearDenoiser::new(0.3, -0.1);
        let out = train(model.clone(), &[Image::zeros(1, 2, 2)], &spec, &sched, &config, |_, _| {})
            .unwrap();
        assert_eq!(out.checkpoint.params, vec![0.3, -0.1]);
        assert_eq!(out.checkpoint.ema, Some(vec![0.3, -0.1]));
        assert!(out.step_losses.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 1e-3;
        c.ema_rate = Some(1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let sched = VarianceSchedule::linear(10, 1e-3, 0.2).unwrap();
        let spec = WatermarkSpec::new(Image::<f64>::zeros(1, 1, 1), 1.0, 10, F1Mode::Theorem, &sched)
            .unwrap();
        let model = LinearDenoiser::new(f64::INFINITY, 0.0);
        let config = TrainConfig {
            steps: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let err = train(model, &[Image::scalar(0.5)], &spec, &sched, &config, |_, _| {})
            .err()
            .unwrap();
        assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }));
    }
}
