//! Training objectives: the plain denoising loss, the masked variant, and
//! the joint objective coupling masked denoising with the bottleneck bound.
//!
//! Gradient variants accumulate into caller-owned buffers so per-sample
//! contributions sum in a fixed order across a batch.

use crate::error::{Error, Result};
use crate::net::{DenoiserNet, MaskEncoderNet, SignalDecoderNet};
use crate::schedule::{forward_closed, Schedule};
use crate::vib::{vib_backward, vib_forward, RelevanceMask};

/// Components of the joint objective at one step:
/// `total = denoise + lambda * (kl + (beta_ib/2) * signal_mse)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub step: u64,
    pub denoise: f64,
    pub kl: f64,
    pub signal_mse: f64,
    pub total: f64,
}

/// Gradient buffers for the three networks, in their parameter layouts.
#[derive(Debug, Clone)]
pub struct JointGrads {
    pub denoiser: Vec<f64>,
    pub mask_encoder: Vec<f64>,
    pub signal_decoder: Vec<f64>,
}

impl JointGrads {
    pub fn zeros(
        denoiser: &DenoiserNet,
        mask_encoder: &MaskEncoderNet,
        signal_decoder: &SignalDecoderNet,
    ) -> Self {
        JointGrads {
            denoiser: vec![0.0; denoiser.params().len()],
            mask_encoder: vec![0.0; mask_encoder.params().len()],
            signal_decoder: vec![0.0; signal_decoder.params().len()],
        }
    }

    pub fn clear(&mut self) {
        self.denoiser.iter_mut().for_each(|g| *g = 0.0);
        self.mask_encoder.iter_mut().for_each(|g| *g = 0.0);
        self.signal_decoder.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, c: f64) {
        self.denoiser.iter_mut().for_each(|g| *g *= c);
        self.mask_encoder.iter_mut().for_each(|g| *g *= c);
        self.signal_decoder.iter_mut().for_each(|g| *g *= c);
    }
}

fn check_denoise_dims(net: &DenoiserNet, x0: &[f64], eps: &[f64]) -> Result<()> {
    if x0.len() != net.data_dim() || eps.len() != net.data_dim() {
        return Err(Error::DimMismatch {
            expected: net.data_dim(),
            got: x0.len().min(eps.len()),
            context: "denoising loss input".into(),
        });
    }
    Ok(())
}

/// Shared core: `||eps .* mask - predicted||^2` on the fully noised sample
/// (the mask gates the target only, never the denoiser input). With
/// gradients, `d_theta` receives `d loss / d denoiser params` and `d_mask`,
/// when given, `d loss / d mask`.
fn denoise_core(
    net: &DenoiserNet,
    mask: Option<&RelevanceMask>,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
    mut grads: Option<(&mut [f64], Option<&mut [f64]>)>,
) -> Result<f64> {
    check_denoise_dims(net, x0, eps)?;
    if let Some(m) = mask {
        if m.mean.len() != x0.len() {
            return Err(Error::DimMismatch {
                expected: x0.len(),
                got: m.mean.len(),
                context: "denoising mask".into(),
            });
        }
    }
    let x_t = forward_closed(x0, t, eps, sched)?;
    let target: Vec<f64> = match mask {
        Some(m) => eps.iter().zip(&m.mean).map(|(e, mm)| e * mm).collect(),
        None => eps.to_vec(),
    };

    if let Some((d_theta, d_mask)) = grads.as_mut() {
        let (pred, cache) = net.eval_cached(&x_t, t)?;
        let loss = target
            .iter()
            .zip(&pred)
            .map(|(tg, p)| (tg - p) * (tg - p))
            .sum();
        let d_pred: Vec<f64> = target
            .iter()
            .zip(&pred)
            .map(|(tg, p)| 2.0 * (p - tg))
            .collect();
        net.backward(&cache, &d_pred, d_theta);
        if let Some(dm) = d_mask {
            for j in 0..x0.len() {
                dm[j] += 2.0 * (target[j] - pred[j]) * eps[j];
            }
        }
        Ok(loss)
    } else {
        let pred = net.eval(&x_t, t)?;
        Ok(target
            .iter()
            .zip(&pred)
            .map(|(tg, p)| (tg - p) * (tg - p))
            .sum())
    }
}

/// `||eps - predicted noise||^2` on the closed-form noised sample.
pub fn ddpm_loss(
    net: &DenoiserNet,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
) -> Result<f64> {
    denoise_core(net, None, x0, t, eps, sched, None)
}

pub fn ddpm_loss_with_grad(
    net: &DenoiserNet,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
    d_theta: &mut [f64],
) -> Result<f64> {
    denoise_core(net, None, x0, t, eps, sched, Some((d_theta, None)))
}

/// Masked target variant: only coordinates the mask deems relevant carry
/// noise to predict; elsewhere the target is zero.
pub fn masked_denoise_loss(
    net: &DenoiserNet,
    mask: &RelevanceMask,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
) -> Result<f64> {
    denoise_core(net, Some(mask), x0, t, eps, sched, None)
}

#[allow(clippy::too_many_arguments)]
pub fn masked_denoise_loss_with_grad(
    net: &DenoiserNet,
    mask: &RelevanceMask,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
    d_theta: &mut [f64],
    d_mask: Option<&mut [f64]>,
) -> Result<f64> {
    denoise_core(net, Some(mask), x0, t, eps, sched, Some((d_theta, d_mask)))
}

/// Denoising error restricted to a fixed coordinate set:
/// `sum_{j in coords} (eps_j - predicted_j)^2`. Used for cross-mode
/// convergence comparison, where the raw masked loss would shrink with the
/// mask instead of with denoising quality.
pub fn restricted_denoise_loss(
    net: &DenoiserNet,
    coords: &[usize],
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &Schedule,
) -> Result<f64> {
    check_denoise_dims(net, x0, eps)?;
    let x_t = forward_closed(x0, t, eps, sched)?;
    let pred = net.eval(&x_t, t)?;
    Ok(coords
        .iter()
        .map(|&j| (eps[j] - pred[j]) * (eps[j] - pred[j]))
        .sum())
}

/// The joint objective for one `(x0, s)` pair at a fixed `(t, eps, eta)`.
/// One mask-encoder pass supplies the mask to the denoising target and the
/// `(kl, mse)` pair to the bottleneck term.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    denoiser: &DenoiserNet,
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x0: &[f64],
    s: &[f64],
    t: usize,
    eps: &[f64],
    eta: &[f64],
    lambda_vib: f64,
    beta_ib: f64,
    sched: &Schedule,
) -> Result<LossBreakdown> {
    joint_core(
        denoiser, mask_net, sig_net, x0, s, t, eps, eta, lambda_vib, beta_ib, sched, None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn joint_loss_with_grad(
    denoiser: &DenoiserNet,
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x0: &[f64],
    s: &[f64],
    t: usize,
    eps: &[f64],
    eta: &[f64],
    lambda_vib: f64,
    beta_ib: f64,
    sched: &Schedule,
    grads: &mut JointGrads,
) -> Result<LossBreakdown> {
    joint_core(
        denoiser,
        mask_net,
        sig_net,
        x0,
        s,
        t,
        eps,
        eta,
        lambda_vib,
        beta_ib,
        sched,
        Some(grads),
    )
}

#[allow(clippy::too_many_arguments)]
fn joint_core(
    denoiser: &DenoiserNet,
    mask_net: &MaskEncoderNet,
    sig_net: &SignalDecoderNet,
    x0: &[f64],
    s: &[f64],
    t: usize,
    eps: &[f64],
    eta: &[f64],
    lambda_vib: f64,
    beta_ib: f64,
    sched: &Schedule,
    grads: Option<&mut JointGrads>,
) -> Result<LossBreakdown> {
    if lambda_vib < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda_vib must be >= 0, got {lambda_vib}"
        )));
    }
    if beta_ib < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta_ib must be >= 0, got {beta_ib}"
        )));
    }
    let fwd = vib_forward(mask_net, sig_net, x0, s, eta)?;

    let (denoise, kl, mse) = match grads {
        Some(g) => {
            let mut d_mask = vec![0.0; x0.len()];
            let denoise = denoise_core(
                denoiser,
                Some(&fwd.mask),
                x0,
                t,
                eps,
                sched,
                Some((&mut g.denoiser, Some(&mut d_mask))),
            )?;
            vib_backward(
                mask_net,
                sig_net,
                &fwd,
                x0,
                eta,
                beta_ib,
                lambda_vib,
                Some(&d_mask),
                &mut g.mask_encoder,
                &mut g.signal_decoder,
            );
            (denoise, fwd.kl, fwd.signal_mse)
        }
        None => {
            let denoise = denoise_core(denoiser, Some(&fwd.mask), x0, t, eps, sched, None)?;
            (denoise, fwd.kl, fwd.signal_mse)
        }
    };

    Ok(LossBreakdown {
        step: 0,
        denoise,
        kl,
        signal_mse: mse,
        total: denoise + lambda_vib * (kl + 0.5 * beta_ib * mse),
    })
}
