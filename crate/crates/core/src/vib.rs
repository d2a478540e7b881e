//! Information-bottleneck machinery.
//!
//! The mask encoder's raw outputs become a relevance mask `M = clamp_[0,1]`
//! and a per-coordinate Gaussian over the bottleneck variable:
//! `mean = M .* x`, `var = max(softplus(xi .* x), VAR_FLOOR)`. Sampling uses
//! the reparameterization trick, the prior is the standard normal, and the
//! bound combines the closed-form KL with a Gaussian-decoder MSE term.

use crate::error::{Error, Result};
use crate::mlp::MlpCache;
use crate::net::{MaskEncoderNet, SignalDecoderNet};

/// Lower bound on the bottleneck variance; keeps the KL finite when the
/// logit-path product is very negative.
pub const VAR_FLOOR: f64 = 1e-6;

/// Per-feature relevance weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMask {
    pub mean: Vec<f64>,
}

/// Diagonal Gaussian over the bottleneck variable.
#[derive(Debug, Clone, PartialEq)]
pub struct XsDistribution {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VibBreakdown {
    pub kl: f64,
    pub signal_mse: f64,
    /// `kl + (beta_ib / 2) * signal_mse`
    pub total: f64,
    pub mask: RelevanceMask,
}

/// Overflow-safe `ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Overflow-safe logistic function (the derivative of softplus).
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Derivative convention: 1 on `[0, 1]` (boundaries included), 0 outside.
fn clamp01_grad(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Mask and bottleneck distribution from the raw encoder outputs.
pub fn mask_distribution(
    mu_raw: &[f64],
    xi: &[f64],
    x: &[f64],
) -> Result<(RelevanceMask, XsDistribution)> {
    if mu_raw.len() != x.len() || xi.len() != x.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            got: mu_raw.len().min(xi.len()),
            context: "mask_distribution".into(),
        });
    }
    let mask: Vec<f64> = mu_raw.iter().map(|&m| clamp01(m)).collect();
    let mean: Vec<f64> = mask.iter().zip(x).map(|(m, xv)| m * xv).collect();
    let var: Vec<f64> = xi
        .iter()
        .zip(x)
        .map(|(l, xv)| softplus(l * xv).max(VAR_FLOOR))
        .collect();
    Ok((RelevanceMask { mean: mask }, XsDistribution { mean, var }))
}

/// `mean + sqrt(var) .* eta`.
pub fn reparam_sample(dist: &XsDistribution, eta: &[f64]) -> Vec<f64> {
    assert_eq!(dist.mean.len(), eta.len(), "reparam_sample dimensions");
    dist.mean
        .iter()
        .zip(&dist.var)
        .zip(eta)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect()
}

/// `KL(N(mean, diag(var)) || N(0, I)) = 1/2 sum(mean^2 + var - ln var - 1)`.
pub fn kl_to_standard_normal(dist: &XsDistribution) -> Result<f64> {
    let mut total = 0.0;
    for (m, v) in dist.mean.iter().zip(&dist.var) {
        if *v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kl_to_standard_normal: non-positive variance {v}"
            )));
        }
        total += 0.5 * (m * m + v - v.ln() - 1.0);
    }
    Ok(total.max(0.0))
}

fn check_vib_dims(
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x: &[f64],
    s: &[f64],
    eta: &[f64],
    beta_ib: f64,
) -> Result<()> {
    if beta_ib < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta_ib must be >= 0, got {beta_ib}"
        )));
    }
    if x.len() != mask_net.data_dim() || eta.len() != x.len() {
        return Err(Error::DimMismatch {
            expected: mask_net.data_dim(),
            got: x.len().min(eta.len()),
            context: "vib input".into(),
        });
    }
    if s.len() != sig_net.signal_dim() {
        return Err(Error::DimMismatch {
            expected: sig_net.signal_dim(),
            got: s.len(),
            context: "vib signal".into(),
        });
    }
    Ok(())
}

/// Bound value for one `(x, s)` pair with a fixed reparameterization draw.
pub fn vib_loss(
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x: &[f64],
    s: &[f64],
    beta_ib: f64,
    eta: &[f64],
) -> Result<VibBreakdown> {
    check_vib_dims(mask_net, sig_net, x, s, eta, beta_ib)?;
    Ok(vib_forward(mask_net, sig_net, x, s, eta)?.breakdown(beta_ib))
}

/// One encoder + decoder pass with everything the backward pass needs.
pub(crate) struct VibForward {
    pub mu_raw: Vec<f64>,
    pub xi: Vec<f64>,
    pub mask: RelevanceMask,
    pub dist: XsDistribution,
    pub kl: f64,
    pub signal_mse: f64,
    residual: Vec<f64>,
    mask_cache: MlpCache,
    sig_cache: MlpCache,
}

impl VibForward {
    pub fn breakdown(&self, beta_ib: f64) -> VibBreakdown {
        VibBreakdown {
            kl: self.kl,
            signal_mse: self.signal_mse,
            total: self.kl + 0.5 * beta_ib * self.signal_mse,
            mask: self.mask.clone(),
        }
    }
}

pub(crate) fn vib_forward(
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x: &[f64],
    s: &[f64],
    eta: &[f64],
) -> Result<VibForward> {
    check_vib_dims(mask_net, sig_net, x, s, eta, 0.0)?;
    let (mu_raw, xi, mask_cache) = mask_net.eval_cached(x)?;
    let (mask, dist) = mask_distribution(&mu_raw, &xi, x)?;
    let x_s = reparam_sample(&dist, eta);
    let kl = kl_to_standard_normal(&dist)?;
    let (pred, sig_cache) = sig_net.eval_cached(&x_s)?;
    let residual: Vec<f64> = pred.iter().zip(s).map(|(p, sv)| p - sv).collect();
    let signal_mse = residual.iter().map(|r| r * r).sum();
    Ok(VibForward {
        mu_raw,
        xi,
        mask,
        dist,
        kl,
        signal_mse,
        residual,
        mask_cache,
        sig_cache,
    })
}

/// Accumulate parameter gradients of `weight * (kl + (beta_ib/2) * mse)`
/// through the cached pass. `d_mask_extra`, when present, is an additional
/// unweighted loss gradient with respect to the mask entries (the joint
/// objective's denoising target also gates through the mask) and is
/// backpropagated through the same encoder pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn vib_backward(
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    fwd: &VibForward,
    x: &[f64],
    eta: &[f64],
    beta_ib: f64,
    weight: f64,
    d_mask_extra: Option<&[f64]>,
    d_mask_params: &mut [f64],
    d_sig_params: &mut [f64],
) {
    let dim = x.len();
    // decoder: d(weight * beta/2 * mse)/d pred = weight * beta * residual
    let d_pred: Vec<f64> = fwd.residual.iter().map(|r| weight * beta_ib * r).collect();
    let d_xs = sig_net.backward(&fwd.sig_cache, &d_pred, d_sig_params);

    // chain into the distribution parameters
    let mut d_head = vec![0.0; 2 * dim];
    for j in 0..dim {
        let d_mean = weight * fwd.dist.mean[j] + d_xs[j];
        let d_var = weight * 0.5 * (1.0 - 1.0 / fwd.dist.var[j])
            + d_xs[j] * eta[j] / (2.0 * fwd.dist.var[j].sqrt());
        let mut d_mask_j = d_mean * x[j];
        if let Some(extra) = d_mask_extra {
            d_mask_j += extra[j];
        }
        d_head[j] = d_mask_j * clamp01_grad(fwd.mu_raw[j]);
        let z = fwd.xi[j] * x[j];
        let d_z = if softplus(z) >= VAR_FLOOR {
            d_var * sigmoid(z)
        } else {
            0.0
        };
        d_head[dim + j] = d_z * x[j];
    }
    mask_net.backward(&fwd.mask_cache, &d_head, d_mask_params);
}

/// Same bound as [`vib_loss`] with gradients of
/// `weight * (kl + (beta_ib/2) * mse)` accumulated into
/// `d_mask_params` / `d_sig_params`.
#[allow(clippy::too_many_arguments)]
pub fn vib_loss_with_grad(
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x: &[f64],
    s: &[f64],
    beta_ib: f64,
    eta: &[f64],
    weight: f64,
    d_mask_extra: Option<&[f64]>,
    d_mask_params: &mut [f64],
    d_sig_params: &mut [f64],
) -> Result<VibBreakdown> {
    check_vib_dims(mask_net, sig_net, x, s, eta, beta_ib)?;
    let fwd = vib_forward(mask_net, sig_net, x, s, eta)?;
    vib_backward(
        mask_net,
        sig_net,
        &fwd,
        x,
        eta,
        beta_ib,
        weight,
        d_mask_extra,
        d_mask_params,
        d_sig_params,
    );
    Ok(fwd.breakdown(beta_ib))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, merge_reports, LossProbe};
    use crate::rng::RngStream;
    use crate::stats;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn mask_distribution_arithmetic() {
        let (mask, dist) = mask_distribution(&[0.5], &[0.0], &[2.0]).unwrap();
        assert_eq!(mask.mean, vec![0.5]);
        assert_eq!(dist.mean, vec![1.0]);

        let (mask, dist) = mask_distribution(&[1.7], &[0.0], &[3.0]).unwrap();
        assert_eq!(mask.mean, vec![1.0]);
        assert_eq!(dist.mean, vec![3.0]);

        // xi .* x = 0 -> softplus(0) = ln 2
        assert!((dist.var[0] - LN2).abs() < 1e-15);
    }

    #[test]
    fn variance_floor_engages() {
        let (_, dist) = mask_distribution(&[0.0], &[-100.0], &[1.0]).unwrap();
        assert_eq!(dist.var[0], VAR_FLOOR);
    }

    #[test]
    fn reparam_at_zero_eta_is_mean() {
        let dist = XsDistribution {
            mean: vec![1.25, -0.5],
            var: vec![2.0, 0.3],
        };
        assert_eq!(reparam_sample(&dist, &[0.0, 0.0]), dist.mean);
    }

    #[test]
    fn reparam_arithmetic() {
        let dist = XsDistribution {
            mean: vec![0.0],
            var: vec![4.0],
        };
        assert_eq!(reparam_sample(&dist, &[1.5]), vec![3.0]);
    }

    #[test]
    fn reparam_moments_match_distribution() {
        let dist = XsDistribution {
            mean: vec![0.7],
            var: vec![2.3],
        };
        let n = 100_000;
        let mut stream = RngStream::new(2024, 1);
        let draws: Vec<f64> = (0..n)
            .map(|_| reparam_sample(&dist, &stream.normals(1))[0])
            .collect();
        let se_mean = (dist.var[0] / n as f64).sqrt();
        let se_var = dist.var[0] * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((stats::mean(&draws) - 0.7).abs() < 3.0 * se_mean);
        assert!((stats::variance(&draws) - 2.3).abs() < 3.0 * se_var);
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        let dist = XsDistribution {
            mean: vec![0.0; 5],
            var: vec![1.0; 5],
        };
        assert_eq!(kl_to_standard_normal(&dist).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_variance_shifted_mean() {
        let dist = XsDistribution {
            mean: vec![1.0],
            var: vec![1.0],
        };
        assert!((kl_to_standard_normal(&dist).unwrap() - 0.5).abs() < 1e-15);
    }

    fn mc_kl_estimate(mean: f64, var: f64, n: usize, stream: &mut RngStream) -> f64 {
        // E_{z ~ N(mean, var)}[log p(z) - log q(z)] with q = N(0,1);
        // z = mean + sqrt(var) u gives log-ratio -ln(var)/2 - u^2/2 + z^2/2.
        let sd = var.sqrt();
        let mut acc = 0.0;
        for _ in 0..n {
            let u = stream.normal();
            let z = mean + sd * u;
            acc += -0.5 * var.ln() - 0.5 * u * u + 0.5 * z * z;
        }
        acc / n as f64
    }

    #[test]
    fn kl_matches_monte_carlo_for_e_variance() {
        let dist = XsDistribution {
            mean: vec![0.0],
            var: vec![std::f64::consts::E],
        };
        let closed = kl_to_standard_normal(&dist).unwrap();
        assert!((closed - (std::f64::consts::E - 2.0) / 2.0).abs() < 1e-12);
        let mut stream = RngStream::new(99, 0);
        let mc = mc_kl_estimate(0.0, std::f64::consts::E, 1_000_000, &mut stream);
        assert!((closed - mc).abs() < 1e-2, "closed {closed} mc {mc}");
    }

    #[test]
    fn kl_rejects_non_positive_variance() {
        let dist = XsDistribution {
            mean: vec![0.0],
            var: vec![0.0],
        };
        assert!(kl_to_standard_normal(&dist).is_err());
    }

    #[test]
    fn vib_loss_with_zero_beta_is_kl() {
        let mut stream = RngStream::new(3, 0);
        let mask_net = MaskEncoderNet::init(4, &[6], &mut stream).unwrap();
        let sig_net = SignalDecoderNet::init(4, &[6], 2, &mut stream).unwrap();
        let x = stream.normals(4);
        let s = stream.normals(2);
        let eta = stream.normals(4);
        let b = vib_loss(&mask_net, &sig_net, &x, &s, 0.0, &eta).unwrap();
        assert_eq!(b.total, b.kl);
    }

    #[test]
    fn vib_loss_zero_networks_closed_form() {
        let dim = 4;
        let mask_net = MaskEncoderNet::zeros(dim, &[6]);
        let sig_net = SignalDecoderNet::zeros(dim, &[6], 1);
        let x = vec![0.0; dim];
        let s = vec![0.0; 1];
        let eta = vec![0.3; dim];
        let b = vib_loss(&mask_net, &sig_net, &x, &s, 2.0, &eta).unwrap();
        assert_eq!(b.mask.mean, vec![0.0; dim]);
        assert_eq!(b.signal_mse, 0.0);
        // per coordinate: mean 0, var ln 2
        let want_kl = dim as f64 / 2.0 * (LN2 - LN2.ln() - 1.0);
        assert!((b.kl - want_kl).abs() < 1e-12, "kl {} want {want_kl}", b.kl);
        // numeric cross-check of the same closed form
        let per_dim = 0.5 * (0.0 + LN2 - LN2.ln() - 1.0);
        assert!((b.kl - dim as f64 * per_dim).abs() < 1e-12);
    }

    #[test]
    fn vib_gradients_match_finite_differences() {
        let mut stream = RngStream::new(41, 0);
        let mask_net = MaskEncoderNet::init(4, &[6], &mut stream).unwrap();
        let sig_net = SignalDecoderNet::init(4, &[6], 2, &mut stream).unwrap();
        let x = stream.normals(4);
        let s = stream.normals(2);
        let eta = stream.normals(4);
        let beta_ib = 3.0;

        let mask_probe = LossProbe {
            name: "vib/mask",
            value: Box::new(|p| {
                let mut n = mask_net.clone();
                n.set_params(p.clone())?;
                Ok(vib_loss(&n, &sig_net, &x, &s, beta_ib, &eta)?.total)
            }),
            grad: Box::new(|p| {
                let mut n = mask_net.clone();
                n.set_params(p.clone())?;
                let mut gm = vec![0.0; p.len()];
                let mut gs = vec![0.0; sig_net.params().len()];
                vib_loss_with_grad(
                    &n, &sig_net, &x, &s, beta_ib, &eta, 1.0, None, &mut gm, &mut gs,
                )?;
                Ok(gm)
            }),
        };
        let sig_probe = LossProbe {
            name: "vib/signal",
            value: Box::new(|p| {
                let mut n = sig_net.clone();
                n.set_params(p.clone())?;
                Ok(vib_loss(&mask_net, &n, &x, &s, beta_ib, &eta)?.total)
            }),
            grad: Box::new(|p| {
                let mut n = sig_net.clone();
                n.set_params(p.clone())?;
                let mut gm = vec![0.0; mask_net.params().len()];
                let mut gs = vec![0.0; p.len()];
                vib_loss_with_grad(
                    &mask_net, &n, &x, &s, beta_ib, &eta, 1.0, None, &mut gm, &mut gs,
                )?;
                Ok(gs)
            }),
        };
        let rep_m = grad_check(mask_net.params(), &mask_probe, 1e-5, &mut stream).unwrap();
        let rep_s = grad_check(sig_net.params(), &sig_probe, 1e-5, &mut stream).unwrap();
        let merged = merge_reports("vib_loss", &[("mask", rep_m), ("signal", rep_s)]);
        assert!(merged.global_max_rel_err < 1e-5, "{merged}");
    }

    proptest! {
        #[test]
        fn mask_and_variance_stay_bounded(
            mu_raw in proptest::collection::vec(-10.0f64..10.0, 1..8),
            xi_seed in proptest::collection::vec(-50.0f64..50.0, 1..8),
            x_seed in proptest::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let dim = mu_raw.len().min(xi_seed.len()).min(x_seed.len());
            let (mask, dist) = mask_distribution(
                &mu_raw[..dim], &xi_seed[..dim], &x_seed[..dim]).unwrap();
            for m in &mask.mean {
                prop_assert!((0.0..=1.0).contains(m));
            }
            for v in &dist.var {
                prop_assert!(*v >= VAR_FLOOR);
            }
            let kl = kl_to_standard_normal(&dist).unwrap();
            prop_assert!(kl >= 0.0);
        }

        #[test]
        fn shrinking_mean_never_increases_kl(
            mean in proptest::collection::vec(-3.0f64..3.0, 1..6),
            var in proptest::collection::vec(0.05f64..4.0, 1..6),
            c in 0.0f64..1.0,
        ) {
            let dim = mean.len().min(var.len());
            let full = XsDistribution { mean: mean[..dim].to_vec(), var: var[..dim].to_vec() };
            let shrunk = XsDistribution {
                mean: full.mean.iter().map(|m| c * m).collect(),
                var: full.var.clone(),
            };
            prop_assert!(
                kl_to_standard_normal(&shrunk).unwrap()
                    <= kl_to_standard_normal(&full).unwrap() + 1e-12
            );
        }
    }
}
