//! Variance schedule and the scalar coefficient families derived from it.
//!
//! Step indices are 1-based (`1..=T`); index 0 is the clean-data convention with
//! `alpha_bar[0] = 1`. All coefficients are stored in f64 regardless of the tensor scalar type.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How `f1(t)` (the weight of `x0` inside `b_t`) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// `f1(t) = sqrt(alpha_bar_t)`, so `b_0 = x0`.
    Theorem,
    /// `f1 ≡ 0`: the model learns `gamma * x0` and samples are divided by gamma.
    #[default]
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    k: f64,
    /// Unnormalised `S(t)`; `f2(t) = K * S(t)`.
    s_table: Vec<f64>,
    f2_table: Vec<f64>,
    argmax_s: usize,
}

impl VarianceSchedule {
    /// Linear beta schedule, inclusive of both endpoints.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::Schedule("beta bounds must be finite".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        Self::from_betas(&betas)
    }

    /// Build from explicit `beta[1..=T]`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0 && **b < 1.0))
        {
            return Err(Error::Schedule(format!("beta[{}] = {b} outside (0, 1)", i + 1)));
        }
        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        alpha.push(1.0);
        alpha_bar.push(1.0);
        for &b in betas {
            let a = 1.0 - b;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(alpha_bar.last().unwrap() * a);
        }

        let s_table = s_table(&alpha, &alpha_bar)?;
        let (argmax_s, max_s) = s_table
            .iter()
            .copied()
            .enumerate()
            .skip(1)
            .fold((1, f64::NEG_INFINITY), |best, (t, s)| {
                if s > best.1 {
                    (t, s)
                } else {
                    best
                }
            });
        let k = 1.0 / max_s;
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Schedule(format!("scaling constant K = {k} is not usable")));
        }
        let f2_table = s_table.iter().map(|s| k * s).collect();

        Ok(Self {
            steps,
            beta,
            alpha,
            alpha_bar,
            k,
            s_table,
            f2_table,
            argmax_s,
        })
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `beta[t]`, `1 <= t <= T` (0 at the `t = 0` convention).
    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Scaling constant `K = 1 / max_t S(t)`.
    #[inline]
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Step at which `S(t)` (and therefore `f2`) peaks.
    pub fn argmax_f2(&self) -> usize {
        self.argmax_s
    }

    pub fn f2_table(&self) -> &[f64] {
        &self.f2_table
    }

    pub fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps {
            return Err(Error::StepOutOfRange {
                step: t,
                lo,
                hi: self.steps,
            });
        }
        Ok(())
    }

    pub fn f1(&self, t: usize, mode: F1Mode) -> Result<f64> {
        self.check_step(t, 0)?;
        Ok(match mode {
            F1Mode::Theorem => self.alpha_bar[t].sqrt(),
            F1Mode::Zero => 0.0,
        })
    }

    /// Cached `f2(t)`.
    pub fn f2(&self, t: usize) -> Result<f64> {
        self.check_step(t, 0)?;
        Ok(self.f2_table[t])
    }

    /// `h(t) = (1 - alpha_t) / sqrt(1 - alpha_bar_t) * K`.
    pub fn h(&self, t: usize) -> Result<f64> {
        self.check_step(t, 1)?;
        Ok((1.0 - self.alpha[t]) / (1.0 - self.alpha_bar[t]).sqrt() * self.k)
    }

    /// `f2(t) = sqrt(alpha_bar_t) * sum_{i=1..t} h(i) / sqrt(alpha_bar_i)`, summed from scratch.
    pub fn f2_direct(&self, t: usize) -> Result<f64> {
        self.check_step(t, 0)?;
        let mut acc = 0.0;
        for i in 1..=t {
            acc += self.h(i)? / self.alpha_bar[i].sqrt();
        }
        Ok(self.alpha_bar[t].sqrt() * acc)
    }

    /// Hex SHA-256 over the beta array and K; identifies a schedule in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.steps as u64).to_le_bytes());
        for b in self.betas() {
            hasher.update(b.to_le_bytes());
        }
        hasher.update(self.k.to_le_bytes());
        let mut out = String::with_capacity(64);
        for byte in hasher.finalize() {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    /// CSV dump with columns `t,beta,alpha,alpha_bar,f1_theorem,f2` for `t = 0..=T`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,beta,alpha,alpha_bar,f1_theorem,f2")?;
        for t in 0..=self.steps {
            writeln!(
                out,
                "{t},{:e},{:e},{:e},{:e},{:e}",
                self.beta[t],
                self.alpha[t],
                self.alpha_bar[t],
                self.alpha_bar[t].sqrt(),
                self.f2_table[t]
            )?;
        }
        Ok(())
    }
}

/// Running `S(t) = sqrt(alpha_bar_t) * sum_{i<=t} (1 - alpha_i) / (sqrt(alpha_bar_i) sqrt(1 - alpha_bar_i))`.
fn s_table(alpha: &[f64], alpha_bar: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(alpha.len());
    out.push(0.0);
    let mut acc = 0.0;
    for t in 1..alpha.len() {
        let one_minus = 1.0 - alpha_bar[t];
        if one_minus <= 0.0 {
            return Err(Error::DegenerateSchedule { step: t });
        }
        acc += (1.0 - alpha[t]) / (alpha_bar[t].sqrt() * one_minus.sqrt());
        out.push(alpha_bar[t].sqrt() * acc);
    }
    Ok(out)
}

/// Standalone `K` for a schedule.
pub fn compute_k(schedule: &VarianceSchedule) -> f64 {
    schedule.k()
}
