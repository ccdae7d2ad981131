//! Noise schedule and the forward (corruption) process.
//!
//! One forward step draws
//! `x_t ~ N(sqrt(alpha_t) * x_{t-1}, (1 - alpha_t) I)`. Composing steps
//! `1..=t` gives the closed-form marginal
//! `x_t ~ N(sqrt(alpha_bar_t) * x_0, (1 - alpha_bar_t) I)` with
//! `alpha_bar_t = prod_{s <= t} alpha_s`, which training uses to jump
//! straight to any step.
//!
//! Steps are numbered `1..=steps()`. Noise is always supplied by the caller.

use ndarray::{Array, ArrayBase, Data, Dimension, ScalarOperand, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::digest::Fingerprint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step `alpha_t` and the cached cumulative products `alpha_bar_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_t = 1 - beta_t` with `beta_t` linear from `beta_start` (t = 1)
    /// to `beta_end` (t = steps).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule betas must satisfy 0 < start <= end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let denom = steps.saturating_sub(1).max(1) as f64;
        let alpha = (0..steps)
            .map(|i| 1.0 - (beta_start + (beta_end - beta_start) * i as f64 / denom))
            .collect();
        Self::from_alphas(alpha)
    }

    /// Arbitrary per-step alphas, each in `(0, 1]`.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha {a} outside (0, 1]")));
        }
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange {
                t,
                steps: self.steps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check(t)?])
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.alpha(t)?)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Stable fingerprint of the per-step values.
    pub fn digest(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str("noise-schedule").u64(self.steps() as u64);
        for a in &self.alpha {
            fp.f64(*a);
        }
        fp.finish()
    }

    /// One forward step: `sqrt(alpha_t) * x_prev + sqrt(1 - alpha_t) * noise`.
    pub fn forward_step<F, S1, S2, D>(
        &self,
        x_prev: &ArrayBase<S1, D>,
        t: usize,
        noise: &ArrayBase<S2, D>,
    ) -> Result<Array<F, D>>
    where
        F: Float + ScalarOperand,
        S1: Data<Elem = F>,
        S2: Data<Elem = F>,
        D: Dimension,
    {
        let a = self.alpha(t)?;
        affine(x_prev, a.sqrt(), noise, (1.0 - a).sqrt())
    }

    /// Closed-form jump from `x0` to step `t`:
    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise`.
    pub fn marginal<F, S1, S2, D>(
        &self,
        x0: &ArrayBase<S1, D>,
        t: usize,
        noise: &ArrayBase<S2, D>,
    ) -> Result<Array<F, D>>
    where
        F: Float + ScalarOperand,
        S1: Data<Elem = F>,
        S2: Data<Elem = F>,
        D: Dimension,
    {
        let ab = self.alpha_bar(t)?;
        affine(x0, ab.sqrt(), noise, (1.0 - ab).sqrt())
    }

    /// Log-density of a forward chain `x_1..x_T` given `x_0`, as the sum of
    /// the per-step Gaussian transition log-densities. `chain[t - 1]` holds
    /// `x_t`. Every step must have `alpha_t < 1`.
    pub fn chain_log_density(&self, x0: &[f64], chain: &[Vec<f64>]) -> Result<f64> {
        if chain.len() != self.steps() {
            return Err(Error::Contract(format!(
                "chain has {} states, schedule has {} steps",
                chain.len(),
                self.steps()
            )));
        }
        let mut total = 0.0;
        let mut prev = x0;
        for (i, x) in chain.iter().enumerate() {
            if x.len() != x0.len() {
                return Err(Error::Contract("chain state length differs from x0".into()));
            }
            let a = self.alpha[i];
            let var = 1.0 - a;
            if var <= 0.0 {
                return Err(Error::NumericalDegeneracy(format!(
                    "step {} has zero variance",
                    i + 1
                )));
            }
            for (xv, pv) in x.iter().zip(prev) {
                let r = xv - a.sqrt() * pv;
                total += -0.5 * (r * r / var + (2.0 * std::f64::consts::PI * var).ln());
            }
            prev = x;
        }
        Ok(total)
    }
}

fn affine<F, S1, S2, D>(
    x: &ArrayBase<S1, D>,
    cx: f64,
    noise: &ArrayBase<S2, D>,
    cn: f64,
) -> Result<Array<F, D>>
where
    F: Float + ScalarOperand,
    S1: Data<Elem = F>,
    S2: Data<Elem = F>,
    D: Dimension,
{
    if x.shape() != noise.shape() {
        return Err(Error::Contract(format!(
            "noise shape {:?} differs from signal shape {:?}",
            noise.shape(),
            x.shape()
        )));
    }
    let cx = F::from(cx).expect("coefficient representable");
    let cn = F::from(cn).expect("coefficient representable");
    Ok(Zip::from(x)
        .and(noise)
        .map_collect(|&a, &n| cx * a + cn * n))
}
