//! The training loop: per-sample noise draws from derived streams, batch
//! averaging in fixed order, one joint Adam update per step.
//!
//! Two modes share the loop. `xddpm` optimizes the joint objective over all
//! three networks; `ddpm-baseline` trains the denoiser alone on the plain
//! objective with the mask machinery inert. For cross-mode convergence
//! comparison the trace additionally records, at logging steps, the
//! denoising error restricted to the ground-truth relevant coordinates
//! (the raw masked loss shrinks when the mask does, so it cannot compare
//! across modes); the smoothed column and threshold search use that metric
//! whenever the dataset carries ground truth.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::SyntheticDataset;
use crate::error::{Error, Result};
use crate::loss::{
    ddpm_loss_with_grad, joint_loss_with_grad, restricted_denoise_loss, JointGrads, LossBreakdown,
};
use crate::net::{DenoiserNet, MaskEncoderNet, SignalDecoderNet};
use crate::optim::OptimizerState;
use crate::rng::RngStream;
use crate::schedule::{build_schedule, Schedule};

/// EMA decay for the smoothed convergence metric.
pub const EMA_DECAY: f64 = 0.99;

const SALT_INIT: u64 = 1;
const SALT_DATA: u64 = 2;
const SALT_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "xddpm")]
    Xddpm,
    #[serde(rename = "ddpm-baseline")]
    DdpmBaseline,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Xddpm => "xddpm",
            TrainMode::DdpmBaseline => "ddpm-baseline",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xddpm" => Ok(TrainMode::Xddpm),
            "ddpm-baseline" => Ok(TrainMode::DdpmBaseline),
            other => Err(Error::InvalidArgument(format!(
                "mode must be 'xddpm' or 'ddpm-baseline', got '{other}'"
            ))),
        }
    }
}

/// Networks, optimizer state, and schedule for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub denoiser: DenoiserNet,
    pub mask_encoder: MaskEncoderNet,
    pub signal_decoder: SignalDecoderNet,
    pub optimizer: OptimizerState,
    pub schedule: Schedule,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_stream = RngStream::new(cfg.seed, 0).derive(SALT_INIT);
        let denoiser = DenoiserNet::init(
            cfg.d_input,
            &cfg.hidden,
            cfg.time_embed_width,
            &mut init_stream,
        )?;
        let mask_encoder = MaskEncoderNet::init(cfg.d_input, &cfg.hidden, &mut init_stream)?;
        let signal_decoder =
            SignalDecoderNet::init(cfg.d_input, &cfg.hidden, cfg.d_signal, &mut init_stream)?;
        let optimizer = OptimizerState::zeros(
            denoiser.params().len(),
            mask_encoder.params().len(),
            signal_decoder.params().len(),
        );
        let schedule =
            build_schedule(cfg.schedule_kind, cfg.t_count, cfg.beta_start, cfg.beta_end)?;
        Ok(TrainState {
            denoiser,
            mask_encoder,
            signal_decoder,
            optimizer,
            schedule,
        })
    }
}

/// One logged row of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub breakdown: LossBreakdown,
    /// Denoising error on ground-truth relevant coordinates, when known.
    pub restricted_denoise: Option<f64>,
    pub ema_denoise: f64,
    pub wall_ms: u64,
}

impl TraceRow {
    /// The metric the EMA smooths: restricted error when ground truth is
    /// available, the training denoise term otherwise.
    pub fn comparison_denoise(&self) -> f64 {
        self.restricted_denoise.unwrap_or(self.breakdown.denoise)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    /// Recompute the EMA column from the rows; `rows[i].ema_denoise` always
    /// equals this sequence.
    pub fn recompute_ema(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut ema = f64::NAN;
        for row in &self.rows {
            let metric = row.comparison_denoise();
            ema = if ema.is_nan() {
                metric
            } else {
                EMA_DECAY * ema + (1.0 - EMA_DECAY) * metric
            };
            out.push(ema);
        }
        out
    }

    /// First logged step whose smoothed metric is at or below `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.ema_denoise <= threshold)
            .map(|r| r.breakdown.step)
    }
}

struct SampleDraw {
    t: usize,
    eps: Vec<f64>,
    eta: Vec<f64>,
}

fn draw_sample_noise(
    stream: &mut RngStream,
    t_count: usize,
    dim: usize,
    mode: TrainMode,
) -> SampleDraw {
    let t = stream.uniform_step(t_count);
    let eps = stream.normals(dim);
    let eta = match mode {
        TrainMode::Xddpm => stream.normals(dim),
        TrainMode::DdpmBaseline => Vec::new(),
    };
    SampleDraw { t, eps, eta }
}

/// Average the joint (or baseline) loss and gradients over one batch.
/// Sample order is fixed, so the reduction is layout-independent.
#[allow(clippy::too_many_arguments)]
fn batch_pass(
    state: &TrainState,
    cfg: &TrainConfig,
    dataset: &SyntheticDataset,
    mode: TrainMode,
    indices: &[usize],
    noise_base: &RngStream,
    grads: &mut JointGrads,
    restricted_coords: Option<&[usize]>,
) -> Result<(LossBreakdown, Option<f64>)> {
    grads.clear();
    let mut denoise = 0.0;
    let mut kl = 0.0;
    let mut mse = 0.0;
    let mut total = 0.0;
    let mut restricted_acc = 0.0;
    for (i, &row) in indices.iter().enumerate() {
        let mut noise = noise_base.derive(i as u64);
        let draw = draw_sample_noise(&mut noise, cfg.t_count, cfg.d_input, mode);
        let x0 = &dataset.x[row];
        let b = match mode {
            TrainMode::Xddpm => joint_loss_with_grad(
                &state.denoiser,
                &state.mask_encoder,
                &state.signal_decoder,
                x0,
                &dataset.s[row],
                draw.t,
                &draw.eps,
                &draw.eta,
                cfg.lambda_vib,
                cfg.beta_ib,
                &state.schedule,
                grads,
            )?,
            TrainMode::DdpmBaseline => {
                let d = ddpm_loss_with_grad(
                    &state.denoiser,
                    x0,
                    draw.t,
                    &draw.eps,
                    &state.schedule,
                    &mut grads.denoiser,
                )?;
                LossBreakdown {
                    step: 0,
                    denoise: d,
                    kl: 0.0,
                    signal_mse: 0.0,
                    total: d,
                }
            }
        };
        denoise += b.denoise;
        kl += b.kl;
        mse += b.signal_mse;
        total += b.total;
        if let Some(coords) = restricted_coords {
            restricted_acc += restricted_denoise_loss(
                &state.denoiser,
                coords,
                x0,
                draw.t,
                &draw.eps,
                &state.schedule,
            )?;
        }
    }
    let scale = 1.0 / indices.len() as f64;
    grads.scale(scale);
    Ok((
        LossBreakdown {
            step: 0,
            denoise: denoise * scale,
            kl: kl * scale,
            signal_mse: mse * scale,
            total: total * scale,
        },
        restricted_coords.map(|_| restricted_acc * scale),
    ))
}

/// One optimization step over a given batch. Returns the pre-update batch
/// loss. Aborts with diagnostics on non-finite loss or parameters.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    dataset: &SyntheticDataset,
    mode: TrainMode,
    indices: &[usize],
    noise_base: &RngStream,
    grads: &mut JointGrads,
) -> Result<LossBreakdown> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (breakdown, _) = batch_pass(state, cfg, dataset, mode, indices, noise_base, grads, None)?;
    apply_update(state, cfg, mode, grads, breakdown)
}

fn apply_update(
    state: &mut TrainState,
    cfg: &TrainConfig,
    mode: TrainMode,
    grads: &JointGrads,
    mut breakdown: LossBreakdown,
) -> Result<LossBreakdown> {
    let step = state.optimizer.step + 1;
    breakdown.step = step;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at step {step} (denoise {}, kl {}, signal_mse {})",
            breakdown.denoise, breakdown.kl, breakdown.signal_mse
        )));
    }
    state.optimizer.step = step;
    state.optimizer.denoiser.update(
        state.denoiser.params_mut().values_mut(),
        &grads.denoiser,
        cfg.lr,
        step,
    );
    if mode == TrainMode::Xddpm {
        state.optimizer.mask_encoder.update(
            state.mask_encoder.params_mut().values_mut(),
            &grads.mask_encoder,
            cfg.lr,
            step,
        );
        state.optimizer.signal_decoder.update(
            state.signal_decoder.params_mut().values_mut(),
            &grads.signal_decoder,
            cfg.lr,
            step,
        );
    }
    for (name, params) in [
        ("denoiser", state.denoiser.params()),
        ("mask_encoder", state.mask_encoder.params()),
        ("signal_decoder", state.signal_decoder.params()),
    ] {
        if let Some(block) = params.first_non_finite_block() {
            return Err(Error::NonFinite(format!(
                "{name} parameters, block '{block}', after update at step {step}"
            )));
        }
    }
    Ok(breakdown)
}

/// Run `steps` optimization steps, continuing from the state's step
/// counter; logs every `log_every` steps plus the final step.
pub fn run_training(
    state: &mut TrainState,
    cfg: &TrainConfig,
    dataset: &SyntheticDataset,
    mode: TrainMode,
    steps: u64,
) -> Result<TrainTrace> {
    if dataset.d_input() != cfg.d_input || dataset.d_signal() != cfg.d_signal {
        return Err(Error::DimMismatch {
            expected: cfg.d_input,
            got: dataset.d_input(),
            context: "dataset dimensions vs config".into(),
        });
    }
    if dataset.n() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset size {} is smaller than batch_size {}",
            dataset.n(),
            cfg.batch_size
        )));
    }
    let train_rows = dataset.train_rows().max(1);
    let relevant = dataset.relevant_coords();
    let restricted_coords = if relevant.is_empty() || relevant.len() == dataset.d_input() {
        // without a proper two-class ground truth the restricted metric
        // equals (or degenerates to) the plain loss; skip it
        None
    } else {
        Some(relevant)
    };

    let base = RngStream::new(cfg.seed, 0);
    let started = Instant::now();
    let mut trace = TrainTrace::default();
    let mut grads = JointGrads::zeros(&state.denoiser, &state.mask_encoder, &state.signal_decoder);
    let mut ema = f64::NAN;

    let first = state.optimizer.step + 1;
    let last = state.optimizer.step + steps;
    for step in first..=last {
        let mut data_stream = base.derive2(SALT_DATA, step);
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| data_stream.uniform_index(train_rows))
            .collect();
        let noise_base = base.derive2(SALT_NOISE, step);

        let log_now = step % cfg.log_every == 0 || step == last;
        let (pre_update, restricted) = batch_pass(
            state,
            cfg,
            dataset,
            mode,
            &indices,
            &noise_base,
            &mut grads,
            if log_now {
                restricted_coords.as_deref()
            } else {
                None
            },
        )?;
        let breakdown = apply_update(state, cfg, mode, &grads, pre_update)?;

        if log_now {
            let metric = restricted.unwrap_or(breakdown.denoise);
            ema = if ema.is_nan() {
                metric
            } else {
                EMA_DECAY * ema + (1.0 - EMA_DECAY) * metric
            };
            trace.rows.push(TraceRow {
                breakdown,
                restricted_denoise: restricted,
                ema_denoise: ema,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(trace)
}

/// Fresh state, full run.
pub fn train_loop(
    cfg: &TrainConfig,
    dataset: &SyntheticDataset,
    mode: TrainMode,
) -> Result<(TrainState, TrainTrace)> {
    let mut state = TrainState::init(cfg)?;
    let trace = run_training(&mut state, cfg, dataset, mode, cfg.total_steps)?;
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetKind, DatasetSpec};
    use crate::data::dataset_from_config;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 42,
            d_input: 6,
            d_signal: 1,
            t_count: 10,
            hidden: vec![8],
            time_embed_width: 4,
            batch_size: 8,
            total_steps: 30,
            log_every: 5,
            dataset: DatasetSpec {
                kind: DatasetKind::Linear,
                n: 64,
                k: 2,
                signal_noise: 0.1,
                seed: Some(3),
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_state_and_empty_trace() {
        let cfg = TrainConfig {
            total_steps: 0,
            ..tiny_config()
        };
        let ds = dataset_from_config(&cfg).unwrap();
        let (state, trace) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        assert!(trace.rows.is_empty());
        assert_eq!(state.optimizer.step, 0);
        let fresh = TrainState::init(&cfg).unwrap();
        assert_eq!(state.denoiser.params(), fresh.denoiser.params());
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = TrainConfig {
            lr: f64::MIN_POSITIVE,
            total_steps: 3,
            ..tiny_config()
        };
        let ds = dataset_from_config(&cfg).unwrap();
        let init = TrainState::init(&cfg).unwrap();
        let (state, trace) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        assert_eq!(trace.rows.last().unwrap().breakdown.step, 3);
        // a denormal learning rate moves parameters by ~1e-308: bit-equal
        // after rounding for parameters of magnitude ~1e-1
        for (a, b) in state
            .denoiser
            .params()
            .values()
            .iter()
            .zip(init.denoiser.params().values())
        {
            assert!((a - b).abs() < 1e-300);
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let cfg = tiny_config();
        let ds = dataset_from_config(&cfg).unwrap();
        let (_, ta) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        let (_, tb) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        assert_eq!(ta.rows.len(), tb.rows.len());
        for (a, b) in ta.rows.iter().zip(&tb.rows) {
            assert_eq!(a.breakdown, b.breakdown);
            assert_eq!(a.restricted_denoise, b.restricted_denoise);
            assert_eq!(a.ema_denoise.to_bits(), b.ema_denoise.to_bits());
        }
    }

    #[test]
    fn baseline_mode_reports_inert_mask_terms() {
        let cfg = tiny_config();
        let ds = dataset_from_config(&cfg).unwrap();
        let init = TrainState::init(&cfg).unwrap();
        let (state, trace) = train_loop(&cfg, &ds, TrainMode::DdpmBaseline).unwrap();
        for row in &trace.rows {
            assert_eq!(row.breakdown.kl, 0.0);
            assert_eq!(row.breakdown.signal_mse, 0.0);
            assert_eq!(row.breakdown.total, row.breakdown.denoise);
        }
        // mask machinery untouched
        assert_eq!(state.mask_encoder.params(), init.mask_encoder.params());
        assert_eq!(state.signal_decoder.params(), init.signal_decoder.params());
        // denoiser trained
        assert_ne!(state.denoiser.params(), init.denoiser.params());
    }

    #[test]
    fn trace_ema_is_recomputable_from_rows() {
        let cfg = tiny_config();
        let ds = dataset_from_config(&cfg).unwrap();
        let (_, trace) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        let ema = trace.recompute_ema();
        for (row, e) in trace.rows.iter().zip(ema) {
            assert_eq!(row.ema_denoise.to_bits(), e.to_bits());
        }
    }

    #[test]
    fn steps_to_threshold_edge_cases() {
        let cfg = tiny_config();
        let ds = dataset_from_config(&cfg).unwrap();
        let (_, trace) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        let first_step = trace.rows[0].breakdown.step;
        assert_eq!(trace.steps_to_threshold(f64::INFINITY), Some(first_step));
        assert_eq!(trace.steps_to_threshold(-1.0), None);
    }

    #[test]
    fn small_dataset_rejected() {
        let cfg = TrainConfig {
            batch_size: 100,
            dataset: DatasetSpec {
                kind: DatasetKind::Linear,
                n: 50,
                k: 2,
                signal_noise: 0.1,
                seed: Some(1),
            },
            ..tiny_config()
        };
        let ds = dataset_from_config(&cfg).unwrap();
        assert!(train_loop(&cfg, &ds, TrainMode::Xddpm).is_err());
    }

    #[test]
    fn logging_includes_final_step() {
        let cfg = TrainConfig {
            total_steps: 23,
            log_every: 10,
            ..tiny_config()
        };
        let ds = dataset_from_config(&cfg).unwrap();
        let (_, trace) = train_loop(&cfg, &ds, TrainMode::Xddpm).unwrap();
        let steps: Vec<u64> = trace.rows.iter().map(|r| r.breakdown.step).collect();
        assert_eq!(steps, vec![10, 20, 23]);
    }
}
