//! Noise schedule tables and the forward (noising) process.
//!
//! Tables are 1-indexed by step `t in 1..=T`: `beta[t]` is the per-step
//! variance, `alpha[t] = 1 - beta[t]`, `alpha_bar[t]` the running product,
//! and `sigma[t]` the reverse-step noise scale. `sigma_t^2` is the posterior
//! variance `beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)` with
//! `alpha_bar_0 := 1`, which forces `sigma_1 = 0`: the final reverse step is
//! deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.len() {
            return Err(Error::StepOutOfRange {
                t,
                t_max: self.len(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }
}

pub fn build_schedule(
    kind: ScheduleKind,
    t_count: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<Schedule> {
    if t_count < 1 {
        return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Constant => vec![beta_start; t_count],
        ScheduleKind::Linear => (0..t_count)
            .map(|i| {
                if t_count == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64
                }
            })
            .collect(),
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_count);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    let mut sigmas = Vec::with_capacity(t_count);
    for t in 1..=t_count {
        let prev_bar = if t == 1 { 1.0 } else { alpha_bars[t - 2] };
        let var = betas[t - 1] * (1.0 - prev_bar) / (1.0 - alpha_bars[t - 1]);
        sigmas.push(if t == 1 { 0.0 } else { var.sqrt() });
    }
    Ok(Schedule {
        betas,
        alphas,
        alpha_bars,
        sigmas,
    })
}

/// Default schedule parameters for a given step count: the usual 1000-step
/// linear range rescaled so the terminal `alpha_bar` is comparable, capped
/// below 1 for very short schedules.
pub fn default_beta_range(t_count: usize) -> (f64, f64) {
    let scale = 1000.0 / t_count as f64;
    let end = (0.02 * scale).min(0.5);
    ((1e-4 * scale).min(end), end)
}

/// Closed-form noising: `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_closed(x0: &[f64], t: usize, eps: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(Error::DimMismatch {
            expected: x0.len(),
            got: eps.len(),
            context: "forward_closed noise".into(),
        });
    }
    let ab = sched.alpha_bar(t);
    let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| ca * x + cb * e).collect())
}

/// One noising step: `sqrt(alpha_t) x_{t-1} + sqrt(beta_t) noise`.
pub fn forward_step(x_prev: &[f64], t: usize, sched: &Schedule, noise: &[f64]) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if x_prev.len() != noise.len() {
        return Err(Error::DimMismatch {
            expected: x_prev.len(),
            got: noise.len(),
            context: "forward_step noise".into(),
        });
    }
    let (ca, cb) = (sched.alpha(t).sqrt(), sched.beta(t).sqrt());
    Ok(x_prev
        .iter()
        .zip(noise)
        .map(|(x, n)| ca * x + cb * n)
        .collect())
}
