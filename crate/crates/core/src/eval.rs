//! Evaluation: mask-recovery AUC, per-coordinate moments and normality of
//! generated samples, and cross-correlation between irrelevant and relevant
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::error::{Error, Result};
use crate::net::{DenoiserNet, MaskEncoderNet};
use crate::rng::RngStream;
use crate::sampler::{generate, undenoised_terminal_variance};
use crate::schedule::Schedule;
use crate::stats;
use crate::vib::mask_distribution;

/// Probability that a uniformly random (relevant, irrelevant) coordinate
/// pair is ordered correctly by the mask; ties count one half.
pub fn mask_auc(mask_mean: &[f64], truth: &[u8]) -> Result<f64> {
    if mask_mean.len() != truth.len() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: mask_mean.len(),
            context: "mask_auc".into(),
        });
    }
    let relevant: Vec<f64> = mask_mean
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t == 1)
        .map(|(m, _)| *m)
        .collect();
    let irrelevant: Vec<f64> = mask_mean
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t == 0)
        .map(|(m, _)| *m)
        .collect();
    if relevant.is_empty() || irrelevant.is_empty() {
        return Err(Error::InvalidArgument(
            "mask_auc needs both relevant and irrelevant coordinates".into(),
        ));
    }
    let mut acc = 0.0;
    for r in &relevant {
        for i in &irrelevant {
            acc += if r > i {
                1.0
            } else if r == i {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(acc / (relevant.len() * irrelevant.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateStats {
    pub coordinate: usize,
    pub relevant: bool,
    pub mask_mean: f64,
    pub mean: f64,
    pub var: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// KS statistic against the standard normal after standardization.
    pub ks_standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mask_auc: f64,
    pub per_coordinate: Vec<CoordinateStats>,
    /// Largest |Pearson correlation| between any irrelevant and any
    /// relevant coordinate of the generated batch.
    pub max_abs_cross_corr: f64,
    /// Schedule-predicted variance of a coordinate the denoiser ignores.
    pub predicted_irrelevant_var: f64,
    pub n_generated: usize,
}

impl EvalReport {
    pub fn mask_means(&self) -> Vec<f64> {
        self.per_coordinate.iter().map(|c| c.mask_mean).collect()
    }
}

/// Mean clamped mask over a set of inputs.
pub fn mean_mask(mask_net: &MaskEncoderNet, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("mean_mask needs rows".into()));
    }
    let dim = mask_net.data_dim();
    let mut acc = vec![0.0; dim];
    for row in rows {
        let (mu_raw, xi) = mask_net.eval(row)?;
        let (mask, _) = mask_distribution(&mu_raw, &xi, row)?;
        for (a, m) in acc.iter_mut().zip(&mask.mean) {
            *a += m;
        }
    }
    for a in &mut acc {
        *a /= rows.len() as f64;
    }
    Ok(acc)
}

/// Full evaluation of a trained model against the dataset it was trained
/// on: mask AUC over held-out rows, generated-sample statistics, and the
/// irrelevant-coordinate diagnostics.
pub fn evaluate(
    denoiser: &DenoiserNet,
    mask_net: &MaskEncoderNet,
    sched: &Schedule,
    dataset: &SyntheticDataset,
    n_gen: usize,
    stream: &RngStream,
) -> Result<EvalReport> {
    if denoiser.data_dim() != dataset.d_input() {
        return Err(Error::DimMismatch {
            expected: dataset.d_input(),
            got: denoiser.data_dim(),
            context: "checkpoint vs dataset dimension".into(),
        });
    }
    let held_out = dataset.held_out_x();
    let rows = if held_out.is_empty() {
        &dataset.x[..]
    } else {
        held_out
    };
    let mask = mean_mask(mask_net, rows)?;
    let auc = mask_auc(&mask, &dataset.truth_mask)?;

    let batch = generate(denoiser, sched, n_gen, stream)?;
    let dim = dataset.d_input();
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|j| batch.w.iter().map(|r| r[j]).collect())
        .collect();

    let per_coordinate: Vec<CoordinateStats> = (0..dim)
        .map(|j| -> Result<CoordinateStats> {
            let col = &columns[j];
            Ok(CoordinateStats {
                coordinate: j,
                relevant: dataset.truth_mask[j] == 1,
                mask_mean: mask[j],
                mean: stats::mean(col),
                var: stats::variance(col),
                skewness: stats::skewness(col),
                excess_kurtosis: stats::excess_kurtosis(col),
                ks_standardized: stats::ks_statistic(col, true)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut max_corr = 0.0f64;
    for i in dataset.irrelevant_coords() {
        for r in dataset.relevant_coords() {
            max_corr = max_corr.max(stats::pearson(&columns[i], &columns[r]).abs());
        }
    }

    Ok(EvalReport {
        mask_auc: auc,
        per_coordinate,
        max_abs_cross_corr: max_corr,
        predicted_irrelevant_var: undenoised_terminal_variance(sched),
        n_generated: n_gen,
    })
}
