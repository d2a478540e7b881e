//! Synthetic benchmark datasets with known ground-truth relevant
//! coordinates.
//!
//! Relevant coordinates carry a visibly non-Gaussian (bimodal) marginal so
//! distribution recovery is testable; irrelevant coordinates are i.i.d.
//! standard normal. The signal is a seeded linear or centered-quadratic map
//! of the relevant block plus observation noise.

use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, DatasetSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Mixture component offset and spread of each relevant coordinate.
pub const MIX_MEAN: f64 = 1.5;
pub const MIX_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub n: usize,
    pub d_input: usize,
    pub d_signal: usize,
    pub k: usize,
    pub signal_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub x: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    /// Indicator per coordinate: 1 where the coordinate carries signal.
    pub truth_mask: Vec<u8>,
    pub meta: DatasetMeta,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn d_input(&self) -> usize {
        self.meta.d_input
    }

    pub fn d_signal(&self) -> usize {
        self.meta.d_signal
    }

    pub fn relevant_coords(&self) -> Vec<usize> {
        self.truth_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == 1)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn irrelevant_coords(&self) -> Vec<usize> {
        self.truth_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == 0)
            .map(|(j, _)| j)
            .collect()
    }

    /// First row index of the held-out tail (last 20% of rows).
    pub fn held_out_start(&self) -> usize {
        self.n() - self.n() / 5
    }

    pub fn train_rows(&self) -> usize {
        self.held_out_start()
    }

    pub fn held_out_x(&self) -> &[Vec<f64>] {
        &self.x[self.held_out_start()..]
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self
            .x
            .iter()
            .chain(self.s.iter())
            .all(|row| row.iter().all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("generated dataset".into()))
        }
    }
}

fn check_linear_args(n: usize, d_input: usize, k: usize, d_signal: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidArgument("dataset needs n >= 1".into()));
    }
    if k < 1 || k >= d_input {
        return Err(Error::InvalidArgument(format!(
            "dataset needs 1 <= k < D, got k={k} D={d_input}"
        )));
    }
    if d_signal < 1 || d_signal > k {
        return Err(Error::InvalidArgument(format!(
            "dataset needs 1 <= d <= k, got d={d_signal} k={k}"
        )));
    }
    Ok(())
}

/// Seeded mixing matrix with unit-norm rows, shared by both signal maps.
pub(crate) fn mixing_matrix(stream: &mut RngStream, d_signal: usize, k: usize) -> Vec<Vec<f64>> {
    (0..d_signal)
        .map(|_| {
            let mut row = stream.normals(k);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut row {
                *v /= norm;
            }
            row
        })
        .collect()
}

/// Seeded choice of which coordinates carry signal.
fn relevant_subset(stream: &mut RngStream, d_input: usize, k: usize) -> Vec<usize> {
    let mut coords = stream.choose_indices(d_input, k);
    coords.sort_unstable();
    coords
}

/// One draw of the relevant block: per-coordinate equal-weight two-component
/// Gaussian mixture with means +-MIX_MEAN and spread MIX_STD.
fn draw_relevant_block(stream: &mut RngStream, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let sign = if stream.coin() { 1.0 } else { -1.0 };
            sign * MIX_MEAN + MIX_STD * stream.normal()
        })
        .collect()
}

enum SignalMap {
    Linear,
    /// `s_j = sum_i B_ji z_i^2 - c_j`, centered via `E[z^2]`.
    CenteredQuadratic,
}

#[allow(clippy::too_many_arguments)]
fn generate_masked(
    generator: &str,
    map: SignalMap,
    seed: u64,
    n: usize,
    d_input: usize,
    k: usize,
    d_signal: usize,
    signal_noise: f64,
) -> Result<SyntheticDataset> {
    check_linear_args(n, d_input, k, d_signal)?;
    let base = RngStream::new(seed, 0);
    let mut matrix_stream = base.derive(1);
    let mut coord_stream = base.derive(2);
    let mut row_stream = base.derive(3);

    let mixing = mixing_matrix(&mut matrix_stream, d_signal, k);
    let coords = relevant_subset(&mut coord_stream, d_input, k);
    let mut truth_mask = vec![0u8; d_input];
    for &c in &coords {
        truth_mask[c] = 1;
    }
    // E[z^2] of the mixture, for centering the quadratic map
    let second_moment = MIX_MEAN * MIX_MEAN + MIX_STD * MIX_STD;

    let mut x = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let z = draw_relevant_block(&mut row_stream, k);
        let mut row = vec![0.0; d_input];
        let mut zi = z.iter();
        for (j, v) in row.iter_mut().enumerate() {
            *v = if truth_mask[j] == 1 {
                *zi.next().expect("relevant block size")
            } else {
                row_stream.normal()
            };
        }
        let mut sig = Vec::with_capacity(d_signal);
        for mix_row in &mixing {
            let clean = match map {
                SignalMap::Linear => mix_row.iter().zip(&z).map(|(a, zi)| a * zi).sum::<f64>(),
                SignalMap::CenteredQuadratic => mix_row
                    .iter()
                    .zip(&z)
                    .map(|(b, zi)| b * (zi * zi - second_moment))
                    .sum::<f64>(),
            };
            sig.push(clean + signal_noise * row_stream.normal());
        }
        x.push(row);
        s.push(sig);
    }

    let ds = SyntheticDataset {
        x,
        s,
        truth_mask,
        meta: DatasetMeta {
            generator: generator.into(),
            n,
            d_input,
            d_signal,
            k,
            signal_noise,
            seed,
        },
    };
    ds.check_finite()?;
    Ok(ds)
}

pub fn gen_linear_dataset(
    seed: u64,
    n: usize,
    d_input: usize,
    k: usize,
    d_signal: usize,
    signal_noise: f64,
) -> Result<SyntheticDataset> {
    generate_masked(
        "linear",
        SignalMap::Linear,
        seed,
        n,
        d_input,
        k,
        d_signal,
        signal_noise,
    )
}

pub fn gen_nonlinear_dataset(
    seed: u64,
    n: usize,
    d_input: usize,
    k: usize,
    d_signal: usize,
    signal_noise: f64,
) -> Result<SyntheticDataset> {
    generate_masked(
        "nonlinear",
        SignalMap::CenteredQuadratic,
        seed,
        n,
        d_input,
        k,
        d_signal,
        signal_noise,
    )
}

/// Scalar two-mode mixture sanity task: `x ~ 1/2 N(-2, 0.5^2) + 1/2 N(+2,
/// 0.5^2)`, dummy zero signal.
pub fn gen_gmm_dataset(seed: u64, n: usize) -> Result<SyntheticDataset> {
    if n < 1 {
        return Err(Error::InvalidArgument("dataset needs n >= 1".into()));
    }
    let mut stream = RngStream::new(seed, 0).derive(3);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let sign = if stream.coin() { 1.0 } else { -1.0 };
        x.push(vec![sign * 2.0 + 0.5 * stream.normal()]);
    }
    Ok(SyntheticDataset {
        s: vec![vec![0.0]; n],
        x,
        truth_mask: vec![1],
        meta: DatasetMeta {
            generator: "gmm".into(),
            n,
            d_input: 1,
            d_signal: 1,
            k: 1,
            signal_noise: 0.0,
            seed,
        },
    })
}

/// Regenerate the dataset a config describes.
pub fn dataset_from_config(cfg: &TrainConfig) -> Result<SyntheticDataset> {
    dataset_from_spec(&cfg.dataset, cfg.dataset_seed(), cfg.d_input, cfg.d_signal)
}

pub fn dataset_from_spec(
    spec: &DatasetSpec,
    seed: u64,
    d_input: usize,
    d_signal: usize,
) -> Result<SyntheticDataset> {
    match spec.kind {
        DatasetKind::Linear => {
            gen_linear_dataset(seed, spec.n, d_input, spec.k, d_signal, spec.signal_noise)
        }
        DatasetKind::Nonlinear => {
            gen_nonlinear_dataset(seed, spec.n, d_input, spec.k, d_signal, spec.signal_noise)
        }
        DatasetKind::Gmm => gen_gmm_dataset(seed, spec.n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn linear_dataset_shapes_and_mask() {
        let ds = gen_linear_dataset(7, 100, 8, 3, 2, 0.1).unwrap();
        assert_eq!(ds.n(), 100);
        assert_eq!(ds.x[0].len(), 8);
        assert_eq!(ds.s[0].len(), 2);
        assert_eq!(ds.truth_mask.iter().map(|&m| m as usize).sum::<usize>(), 3);
        assert_eq!(ds.relevant_coords().len(), 3);
        assert_eq!(ds.held_out_start(), 80);
    }

    #[test]
    fn linear_dataset_is_deterministic() {
        let a = gen_linear_dataset(7, 50, 8, 3, 2, 0.1).unwrap();
        let b = gen_linear_dataset(7, 50, 8, 3, 2, 0.1).unwrap();
        assert_eq!(a, b);
        let c = gen_linear_dataset(8, 50, 8, 3, 2, 0.1).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn noiseless_signal_is_function_of_relevant_block() {
        // k = D-1, d = 1, signal_noise = 0: reconstruct the seeded mixing
        // matrix and verify s = A z exactly; perturbing irrelevant
        // coordinates cannot change the reconstruction.
        let ds = gen_linear_dataset(11, 40, 5, 4, 1, 0.0).unwrap();
        let mut matrix_stream = RngStream::new(11, 0).derive(1);
        let mixing = mixing_matrix(&mut matrix_stream, 1, 4);
        let coords = ds.relevant_coords();
        for (row, sig) in ds.x.iter().zip(&ds.s) {
            let mut shuffled = row.clone();
            for j in ds.irrelevant_coords() {
                shuffled[j] = -999.0;
            }
            for r in [row, &shuffled] {
                let z: Vec<f64> = coords.iter().map(|&j| r[j]).collect();
                let want: f64 = mixing[0].iter().zip(&z).map(|(a, zi)| a * zi).sum();
                assert!((sig[0] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn irrelevant_coordinates_look_standard_normal() {
        let ds = gen_linear_dataset(13, 10_000, 8, 3, 2, 0.1).unwrap();
        for j in ds.irrelevant_coords() {
            let col: Vec<f64> = ds.x.iter().map(|r| r[j]).collect();
            let var = stats::variance(&col);
            assert!((0.94..=1.06).contains(&var), "coord {j}: var {var}");
        }
    }

    #[test]
    fn relevant_coordinates_are_platykurtic() {
        // mixture with means +-1.5, std 0.5: excess kurtosis is -1.62
        let ds = gen_linear_dataset(13, 10_000, 8, 3, 2, 0.1).unwrap();
        for j in ds.relevant_coords() {
            let col: Vec<f64> = ds.x.iter().map(|r| r[j]).collect();
            let kurt = stats::excess_kurtosis(&col);
            assert!(kurt < 0.0, "coord {j}: excess kurtosis {kurt}");
            assert!((kurt + 1.62).abs() < 0.15, "coord {j}: {kurt}");
        }
    }

    #[test]
    fn nonlinear_signal_is_centered() {
        let ds = gen_nonlinear_dataset(17, 10_000, 8, 3, 2, 0.1).unwrap();
        for col in 0..2 {
            let vals: Vec<f64> = ds.s.iter().map(|r| r[col]).collect();
            let m = stats::mean(&vals);
            assert!(m.abs() < 0.06, "col {col}: mean {m}");
        }
    }

    #[test]
    fn nonlinear_reproducible_without_noise() {
        let a = gen_nonlinear_dataset(19, 30, 6, 2, 1, 0.0).unwrap();
        let b = gen_nonlinear_dataset(19, 30, 6, 2, 1, 0.0).unwrap();
        assert_eq!(a.s, b.s);
    }

    #[test]
    fn gmm_moments() {
        let ds = gen_gmm_dataset(23, 2000).unwrap();
        let xs: Vec<f64> = ds.x.iter().map(|r| r[0]).collect();
        let m = stats::mean(&xs);
        let v = stats::variance(&xs);
        let pos = xs.iter().filter(|x| **x > 0.0).count() as f64 / xs.len() as f64;
        assert!(m.abs() < 0.1, "mean {m}");
        assert!((v - 4.25).abs() < 0.2, "var {v}");
        assert!((pos - 0.5).abs() < 0.03, "positive fraction {pos}");
        assert_eq!(ds.truth_mask, vec![1]);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(gen_linear_dataset(1, 10, 4, 4, 1, 0.1).is_err()); // k = D
        assert!(gen_linear_dataset(1, 10, 4, 0, 1, 0.1).is_err()); // k = 0
        assert!(gen_linear_dataset(1, 10, 4, 2, 3, 0.1).is_err()); // d > k
        assert!(gen_linear_dataset(1, 0, 4, 2, 1, 0.1).is_err()); // n = 0
    }
}
