//! Reverse-process ancestral sampling and a denoiser-derived relevance
//! diagnostic.
//!
//! The recurrence `x_{t-1} = (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) /
//! sqrt(a_t) + sigma_t eta` is shared by both training modes; what differs
//! is only what the denoiser learned. A coordinate the denoiser leaves at
//! zero is never denoised, so it stays an exact linear combination of
//! independent normals with a variance the schedule predicts.

use crate::error::{Error, Result};
use crate::net::DenoiserNet;
use crate::rng::RngStream;
use crate::schedule::{forward_closed, Schedule};
use crate::train::TrainMode;

/// Samples produced by one generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBatch {
    /// One row per sample, `D` columns.
    pub w: Vec<Vec<f64>>,
    pub seed: u64,
    pub stream_id: u64,
    pub t_count: usize,
    /// Training mode of the checkpoint the samples came from, when known.
    pub mode: Option<TrainMode>,
}

/// The update itself, on raw table values.
fn ancestral_update(x: f64, alpha: f64, alpha_bar: f64, sigma: f64, eps_hat: f64, eta: f64) -> f64 {
    (x - (1.0 - alpha) / (1.0 - alpha_bar).sqrt() * eps_hat) / alpha.sqrt() + sigma * eta
}

/// One reverse step `x_t -> x_{t-1}`. At `t = 1` the noise term vanishes
/// (`sigma_1 = 0`), so the final step is deterministic.
pub fn ancestral_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &Schedule,
    eta: &[f64],
) -> Result<Vec<f64>> {
    if t < 1 || t > sched.len() {
        return Err(Error::StepOutOfRange {
            t,
            t_max: sched.len(),
        });
    }
    if eps_hat.len() != x_t.len() || eta.len() != x_t.len() {
        return Err(Error::DimMismatch {
            expected: x_t.len(),
            got: eps_hat.len().min(eta.len()),
            context: "ancestral_step".into(),
        });
    }
    let (alpha, alpha_bar, sigma) = (sched.alpha(t), sched.alpha_bar(t), sched.sigma(t));
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(eta)
        .map(|((x, e), n)| ancestral_update(*x, alpha, alpha_bar, sigma, *e, *n))
        .collect())
}

/// Ancestral sampling: start from standard normal noise, denoise down to
/// the generated sample. Per-sample streams are derived from `stream`, so
/// the batch is reproducible from `(seed, stream_id)` alone.
pub fn generate(
    net: &DenoiserNet,
    sched: &Schedule,
    n: usize,
    stream: &RngStream,
) -> Result<GeneratedBatch> {
    if n < 1 {
        return Err(Error::InvalidArgument("generate needs n >= 1".into()));
    }
    let dim = net.data_dim();
    let t_count = sched.len();
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = stream.derive(i as u64);
        let mut x = s.normals(dim);
        for t in (1..=t_count).rev() {
            let eps_hat = net.eval(&x, t)?;
            let eta = if t > 1 {
                s.normals(dim)
            } else {
                vec![0.0; dim]
            };
            x = ancestral_step(&x, t, &eps_hat, sched, &eta)?;
            if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "sample {i}, coordinate {bad}, after reverse step t={t}"
                )));
            }
        }
        w.push(x);
    }
    Ok(GeneratedBatch {
        w,
        seed: stream.seed(),
        stream_id: stream.stream_id(),
        t_count,
        mode: None,
    })
}

/// Variance a coordinate ends with when the denoiser outputs zero there:
/// `v_{t-1} = v_t / alpha_t + sigma_t^2` iterated from `v_T = 1`.
pub fn undenoised_terminal_variance(sched: &Schedule) -> f64 {
    let mut v = 1.0;
    for t in (1..=sched.len()).rev() {
        v = v / sched.alpha(t) + sched.sigma(t) * sched.sigma(t);
    }
    v
}

/// Mean absolute denoiser response per coordinate over noised unit-scale
/// probes at random steps. Coordinates the denoiser was trained to ignore
/// score near zero.
pub fn relevance_from_denoiser(
    net: &DenoiserNet,
    sched: &Schedule,
    probes: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    if probes < 1 {
        return Err(Error::InvalidArgument("relevance needs probes >= 1".into()));
    }
    let dim = net.data_dim();
    let mut scores = vec![0.0; dim];
    for p in 0..probes {
        let mut s = stream.derive(p as u64);
        let t = s.uniform_step(sched.len());
        let x0 = s.normals(dim);
        let eps = s.normals(dim);
        let x_t = forward_closed(&x0, t, &eps, sched)?;
        let eps_hat = net.eval(&x_t, t)?;
        for (acc, e) in scores.iter_mut().zip(&eps_hat) {
            *acc += e.abs();
        }
    }
    for v in &mut scores {
        *v /= probes as f64;
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};
    use crate::stats;

    #[test]
    fn ancestral_update_hand_value() {
        // alpha = 0.99, alpha_bar = 0.5, x = 1, eps_hat = 1, eta = 0:
        // (1 - 0.01/sqrt(0.5)) / sqrt(0.99)
        let got = ancestral_update(1.0, 0.99, 0.5, 0.3, 1.0, 0.0);
        let want = (1.0 - 0.01 / 0.5f64.sqrt()) / 0.99f64.sqrt();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.990_824_434_168_838).abs() < 1e-12);
    }

    #[test]
    fn zero_prediction_rescales_only() {
        let sched = build_schedule(ScheduleKind::Constant, 4, 0.1, 0.1).unwrap();
        let x = vec![0.8, -0.4];
        let out = ancestral_step(&x, 3, &[0.0, 0.0], &sched, &[0.0, 0.0]).unwrap();
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - xi / sched.alpha(3).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn final_step_ignores_eta() {
        let sched = build_schedule(ScheduleKind::Constant, 4, 0.1, 0.1).unwrap();
        let x = vec![0.5];
        let a = ancestral_step(&x, 1, &[0.2], &sched, &[0.0]).unwrap();
        let b = ancestral_step(&x, 1, &[0.2], &sched, &[123.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_range_checked() {
        let sched = build_schedule(ScheduleKind::Constant, 4, 0.1, 0.1).unwrap();
        assert!(ancestral_step(&[0.0], 0, &[0.0], &sched, &[0.0]).is_err());
        assert!(ancestral_step(&[0.0], 5, &[0.0], &sched, &[0.0]).is_err());
    }

    #[test]
    fn zero_net_single_step_is_rescaled_noise() {
        let sched = build_schedule(ScheduleKind::Constant, 1, 0.1, 0.1).unwrap();
        let net = DenoiserNet::zeros(2, &[4], 4).unwrap();
        let stream = RngStream::new(5, 0);
        let batch = generate(&net, &sched, 3, &stream).unwrap();
        for (i, row) in batch.w.iter().enumerate() {
            let mut s = stream.derive(i as u64);
            let x_t = s.normals(2);
            for (w, x) in row.iter().zip(&x_t) {
                assert!((w - x / sched.alpha(1).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let sched = build_schedule(ScheduleKind::Linear, 6, 0.05, 0.2).unwrap();
        let mut init = RngStream::new(8, 1);
        let net = DenoiserNet::init(3, &[6], 4, &mut init).unwrap();
        let a = generate(&net, &sched, 5, &RngStream::new(9, 2)).unwrap();
        let b = generate(&net, &sched, 5, &RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_net_terminal_variance_matches_recursion() {
        // 5000 samples, small schedule: the empirical variance of each
        // coordinate must match the v_{t-1} = v_t/alpha_t + sigma_t^2
        // recursion within 3 standard errors.
        let sched = build_schedule(ScheduleKind::Linear, 40, 0.002, 0.05).unwrap();
        let net = DenoiserNet::zeros(4, &[8], 4).unwrap();
        let n = 5000;
        let batch = generate(&net, &sched, n, &RngStream::new(17, 0)).unwrap();
        let predicted = undenoised_terminal_variance(&sched);
        let se = predicted * (2.0 / (n as f64 - 1.0)).sqrt();
        for j in 0..4 {
            let col: Vec<f64> = batch.w.iter().map(|r| r[j]).collect();
            let var = stats::variance(&col);
            assert!(
                (var - predicted).abs() < 3.0 * se,
                "coord {j}: var {var}, predicted {predicted}, 3se {}",
                3.0 * se
            );
            // exact Gaussianity: standardized KS below the 1% critical value
            let ks = stats::ks_statistic(&col, true).unwrap();
            assert!(ks < 1.63 / (n as f64).sqrt(), "coord {j}: ks {ks}");
        }
    }

    #[test]
    fn zero_net_relevance_scores_are_zero() {
        let sched = build_schedule(ScheduleKind::Linear, 6, 0.05, 0.2).unwrap();
        let net = DenoiserNet::zeros(3, &[6], 4).unwrap();
        let scores = relevance_from_denoiser(&net, &sched, 10, &RngStream::new(1, 0)).unwrap();
        assert_eq!(scores, vec![0.0; 3]);
    }

    #[test]
    fn relevance_scores_nonnegative() {
        let sched = build_schedule(ScheduleKind::Linear, 6, 0.05, 0.2).unwrap();
        let mut init = RngStream::new(2, 0);
        let net = DenoiserNet::init(3, &[6], 4, &mut init).unwrap();
        let scores = relevance_from_denoiser(&net, &sched, 25, &RngStream::new(3, 0)).unwrap();
        assert!(scores.iter().all(|v| *v >= 0.0));
    }
}
