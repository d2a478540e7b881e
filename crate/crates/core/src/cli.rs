//! Command implementations behind the binary: train, sample, evaluate,
//! gradcheck, compare-speed. Each command locks its output directory,
//! writes its artifacts, and records them in a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{load_config, TrainConfig};
use crate::data::{dataset_from_config, SyntheticDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::gradcheck::{grad_check, merge_reports, GradReport, LossProbe};
use crate::loss::{ddpm_loss, ddpm_loss_with_grad, joint_loss, joint_loss_with_grad, JointGrads};
use crate::net::{DenoiserNet, MaskEncoderNet, SignalDecoderNet};
use crate::rng::{mix_seed, RngStream};
use crate::sampler::{generate, undenoised_terminal_variance};
use crate::train::{train_loop, TrainMode, TrainTrace};
use crate::vib::{vib_loss, vib_loss_with_grad};

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_H: f64 = 1e-5;

const SALT_SAMPLE: u64 = 0x5a4d;
const SALT_EVAL: u64 = 0xe7a1;
const SALT_GRADCHECK: u64 = 0x6c4d;

/// Exclusive claim on an output directory for the duration of a command.
struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutDirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory '{}' is locked by another run (remove {} if stale)",
                out_dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// SHA-256 of the resolved config's canonical JSON.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::new(), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub config: Option<TrainConfig>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub artifacts: Vec<String>,
}

struct ManifestBuilder {
    manifest: RunManifest,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    fn new(out_dir: &Path, seed: u64, cfg: Option<&TrainConfig>) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command_line: std::env::args().collect(),
                seed,
                config_hash: cfg.map(config_hash),
                config: cfg.cloned(),
                started_unix_ms: unix_ms(),
                finished_unix_ms: 0,
                artifacts: Vec::new(),
            },
            out_dir: out_dir.to_path_buf(),
        }
    }

    fn add(&mut self, path: &Path) {
        self.manifest.artifacts.push(path.display().to_string());
    }

    fn finish(mut self) -> Result<()> {
        let path = self.out_dir.join("manifest.json");
        self.manifest.finished_unix_ms = unix_ms();
        self.manifest.artifacts.push(path.display().to_string());
        let text =
            serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// `trace.csv`: one row per logged step.
pub fn trace_to_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("step,denoise,kl,signal_mse,total,ema_denoise,wall_ms\n");
    for row in &trace.rows {
        let b = &row.breakdown;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            b.step, b.denoise, b.kl, b.signal_mse, b.total, row.ema_denoise, row.wall_ms
        );
    }
    out
}

/// Trace CSV with the wall-clock column removed; wall time is the one
/// column that cannot reproduce across runs.
pub fn trace_csv_without_wall(content: &str) -> String {
    content
        .lines()
        .map(|line| match line.rfind(',') {
            Some(idx) => &line[..idx],
            None => line,
        })
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        })
}

fn samples_to_csv(w: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in w {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

fn per_coordinate_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "coordinate,relevant,mask_mean,mean,var,skewness,excess_kurtosis,ks_standardized\n",
    );
    for c in &report.per_coordinate {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.coordinate,
            u8::from(c.relevant),
            c.mask_mean,
            c.mean,
            c.var,
            c.skewness,
            c.excess_kurtosis,
            c.ks_standardized
        );
    }
    out
}

fn mask_means_csv(report: &EvalReport) -> String {
    let mut out = String::from("coordinate,mask_mean\n");
    for c in &report.per_coordinate {
        let _ = writeln!(out, "{},{}", c.coordinate, c.mask_mean);
    }
    out
}

/// Train one model and write `checkpoint.json`, `trace.csv`,
/// `manifest.json`. On a numerical abort a diagnostic `abort.json` is
/// written and the error propagates (exit code 2).
pub fn run_train(config_path: &Path, mode: TrainMode, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, cfg.seed, Some(&cfg));
    let dataset = dataset_from_config(&cfg)?;

    match train_loop(&cfg, &dataset, mode) {
        Ok((state, trace)) => {
            let ckpt_path = out_dir.join("checkpoint.json");
            Checkpoint::from_state(&cfg, mode, &state).save(&ckpt_path)?;
            manifest.add(&ckpt_path);
            let trace_path = out_dir.join("trace.csv");
            write_file(&trace_path, &trace_to_csv(&trace))?;
            manifest.add(&trace_path);
            manifest.finish()
        }
        Err(err) => {
            let abort_path = out_dir.join("abort.json");
            let diag = serde_json::json!({
                "error": err.to_string(),
                "mode": mode.to_string(),
            });
            write_file(&abort_path, &serde_json::to_string_pretty(&diag).unwrap())?;
            manifest.add(&abort_path);
            manifest.finish()?;
            Err(err)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleSidecar {
    seed: u64,
    mode: TrainMode,
    #[serde(rename = "T")]
    t_count: usize,
    n: usize,
    #[serde(rename = "D")]
    d_input: usize,
    checkpoint: String,
    predicted_undenoised_var: f64,
}

/// Generate `n` samples from a checkpoint into `samples.csv` (one row per
/// sample) plus a JSON sidecar.
pub fn run_sample(
    checkpoint_path: &Path,
    n: usize,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let state = ckpt.to_state()?;
    let seed = seed.unwrap_or_else(|| mix_seed(ckpt.config.seed, SALT_SAMPLE));
    let _lock = OutDirLock::acquire(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, seed, Some(&ckpt.config));

    let stream = RngStream::new(seed, 0);
    let mut batch = generate(&state.denoiser, &state.schedule, n, &stream)?;
    batch.mode = Some(ckpt.mode);

    let csv_path = out_dir.join("samples.csv");
    write_file(&csv_path, &samples_to_csv(&batch.w))?;
    manifest.add(&csv_path);

    let sidecar = SampleSidecar {
        seed,
        mode: ckpt.mode,
        t_count: batch.t_count,
        n,
        d_input: ckpt.config.d_input,
        checkpoint: checkpoint_path.display().to_string(),
        predicted_undenoised_var: undenoised_terminal_variance(&state.schedule),
    };
    let sidecar_path = out_dir.join("samples.json");
    write_file(
        &sidecar_path,
        &serde_json::to_string_pretty(&sidecar).unwrap(),
    )?;
    manifest.add(&sidecar_path);
    manifest.finish()
}

/// Evaluate a checkpoint against its (regenerated) dataset; writes
/// `report.json`, `per_coordinate.csv`, `mask_means.csv`.
pub fn run_eval(
    checkpoint_path: &Path,
    config_override: Option<&Path>,
    n_gen: usize,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let state = ckpt.to_state()?;
    let cfg = match config_override {
        Some(path) => load_config(path)?,
        None => ckpt.config.clone(),
    };
    let seed = seed.unwrap_or_else(|| mix_seed(cfg.seed, SALT_EVAL));
    let _lock = OutDirLock::acquire(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, seed, Some(&cfg));
    let dataset = dataset_from_config(&cfg)?;

    let report = evaluate(
        &state.denoiser,
        &state.mask_encoder,
        &state.schedule,
        &dataset,
        n_gen,
        &RngStream::new(seed, 0),
    )?;

    let report_path = out_dir.join("report.json");
    write_file(
        &report_path,
        &serde_json::to_string_pretty(&report).map_err(|e| Error::json(&report_path, e))?,
    )?;
    manifest.add(&report_path);
    let coord_path = out_dir.join("per_coordinate.csv");
    write_file(&coord_path, &per_coordinate_csv(&report))?;
    manifest.add(&coord_path);
    let mask_path = out_dir.join("mask_means.csv");
    write_file(&mask_path, &mask_means_csv(&report))?;
    manifest.add(&mask_path);
    manifest.finish()
}

/// Gradient-check fixture: a model from the config plus one fixed draw of
/// inputs and noise.
struct GradcheckFixture {
    denoiser: DenoiserNet,
    mask_net: MaskEncoderNet,
    sig_net: SignalDecoderNet,
    sched: crate::schedule::Schedule,
    x0: Vec<f64>,
    s: Vec<f64>,
    t: usize,
    eps: Vec<f64>,
    eta: Vec<f64>,
    lambda_vib: f64,
    beta_ib: f64,
}

impl GradcheckFixture {
    fn build(cfg: &TrainConfig) -> Result<Self> {
        let state = crate::train::TrainState::init(cfg)?;
        let mut stream = RngStream::new(cfg.seed, 0).derive(SALT_GRADCHECK);
        let t = stream.uniform_step(cfg.t_count);
        Ok(GradcheckFixture {
            denoiser: state.denoiser,
            mask_net: state.mask_encoder,
            sig_net: state.signal_decoder,
            sched: state.schedule,
            x0: stream.normals(cfg.d_input),
            s: stream.normals(cfg.d_signal),
            t,
            eps: stream.normals(cfg.d_input),
            eta: stream.normals(cfg.d_input),
            lambda_vib: cfg.lambda_vib,
            beta_ib: cfg.beta_ib,
        })
    }
}

fn corrupt_grad(g: &mut [f64]) {
    if let Some(v) = g.first_mut() {
        *v += 1e-2 * (1.0 + v.abs());
    }
}

/// Check the analytic gradients of all three losses on the configured
/// model against central differences. Returns the three merged reports.
pub fn gradcheck_reports(cfg: &TrainConfig, corrupt: bool) -> Result<Vec<GradReport>> {
    let f = GradcheckFixture::build(cfg)?;
    let mut stream = RngStream::new(cfg.seed, 0).derive(SALT_GRADCHECK + 1);

    let ddpm_probe = LossProbe {
        name: "ddpm_loss",
        value: Box::new(|p| {
            let mut n = f.denoiser.clone();
            n.set_params(p.clone())?;
            ddpm_loss(&n, &f.x0, f.t, &f.eps, &f.sched)
        }),
        grad: Box::new(|p| {
            let mut n = f.denoiser.clone();
            n.set_params(p.clone())?;
            let mut g = vec![0.0; p.len()];
            ddpm_loss_with_grad(&n, &f.x0, f.t, &f.eps, &f.sched, &mut g)?;
            if corrupt {
                corrupt_grad(&mut g);
            }
            Ok(g)
        }),
    };
    let ddpm_report = grad_check(f.denoiser.params(), &ddpm_probe, GRADCHECK_H, &mut stream)?;

    let vib_mask_probe = LossProbe {
        name: "vib_loss",
        value: Box::new(|p| {
            let mut n = f.mask_net.clone();
            n.set_params(p.clone())?;
            Ok(vib_loss(&n, &f.sig_net, &f.x0, &f.s, f.beta_ib, &f.eta)?.total)
        }),
        grad: Box::new(|p| {
            let mut n = f.mask_net.clone();
            n.set_params(p.clone())?;
            let mut gm = vec![0.0; p.len()];
            let mut gs = vec![0.0; f.sig_net.params().len()];
            vib_loss_with_grad(
                &n, &f.sig_net, &f.x0, &f.s, f.beta_ib, &f.eta, 1.0, None, &mut gm, &mut gs,
            )?;
            if corrupt {
                corrupt_grad(&mut gm);
            }
            Ok(gm)
        }),
    };
    let vib_sig_probe = LossProbe {
        name: "vib_loss",
        value: Box::new(|p| {
            let mut n = f.sig_net.clone();
            n.set_params(p.clone())?;
            Ok(vib_loss(&f.mask_net, &n, &f.x0, &f.s, f.beta_ib, &f.eta)?.total)
        }),
        grad: Box::new(|p| {
            let mut n = f.sig_net.clone();
            n.set_params(p.clone())?;
            let mut gm = vec![0.0; f.mask_net.params().len()];
            let mut gs = vec![0.0; p.len()];
            vib_loss_with_grad(
                &f.mask_net,
                &n,
                &f.x0,
                &f.s,
                f.beta_ib,
                &f.eta,
                1.0,
                None,
                &mut gm,
                &mut gs,
            )?;
            if corrupt {
                corrupt_grad(&mut gs);
            }
            Ok(gs)
        }),
    };
    let vib_report = merge_reports(
        "vib_loss",
        &[
            (
                "mask_encoder",
                grad_check(
                    f.mask_net.params(),
                    &vib_mask_probe,
                    GRADCHECK_H,
                    &mut stream,
                )?,
            ),
            (
                "signal_decoder",
                grad_check(f.sig_net.params(), &vib_sig_probe, GRADCHECK_H, &mut stream)?,
            ),
        ],
    );

    let joint_value = |d: &DenoiserNet, m: &MaskEncoderNet, g: &SignalDecoderNet| -> Result<f64> {
        Ok(joint_loss(
            d,
            m,
            g,
            &f.x0,
            &f.s,
            f.t,
            &f.eps,
            &f.eta,
            f.lambda_vib,
            f.beta_ib,
            &f.sched,
        )?
        .total)
    };
    let joint_grads =
        |d: &DenoiserNet, m: &MaskEncoderNet, g: &SignalDecoderNet| -> Result<JointGrads> {
            let mut grads = JointGrads::zeros(d, m, g);
            joint_loss_with_grad(
                d,
                m,
                g,
                &f.x0,
                &f.s,
                f.t,
                &f.eps,
                &f.eta,
                f.lambda_vib,
                f.beta_ib,
                &f.sched,
                &mut grads,
            )?;
            Ok(grads)
        };

    let joint_theta = LossProbe {
        name: "joint_loss",
        value: Box::new(|p| {
            let mut n = f.denoiser.clone();
            n.set_params(p.clone())?;
            joint_value(&n, &f.mask_net, &f.sig_net)
        }),
        grad: Box::new(|p| {
            let mut n = f.denoiser.clone();
            n.set_params(p.clone())?;
            let mut g = joint_grads(&n, &f.mask_net, &f.sig_net)?.denoiser;
            if corrupt {
                corrupt_grad(&mut g);
            }
            Ok(g)
        }),
    };
    let joint_mask = LossProbe {
        name: "joint_loss",
        value: Box::new(|p| {
            let mut n = f.mask_net.clone();
            n.set_params(p.clone())?;
            joint_value(&f.denoiser, &n, &f.sig_net)
        }),
        grad: Box::new(|p| {
            let mut n = f.mask_net.clone();
            n.set_params(p.clone())?;
            let mut g = joint_grads(&f.denoiser, &n, &f.sig_net)?.mask_encoder;
            if corrupt {
                corrupt_grad(&mut g);
            }
            Ok(g)
        }),
    };
    let joint_sig = LossProbe {
        name: "joint_loss",
        value: Box::new(|p| {
            let mut n = f.sig_net.clone();
            n.set_params(p.clone())?;
            joint_value(&f.denoiser, &f.mask_net, &n)
        }),
        grad: Box::new(|p| {
            let mut n = f.sig_net.clone();
            n.set_params(p.clone())?;
            let mut g = joint_grads(&f.denoiser, &f.mask_net, &n)?.signal_decoder;
            if corrupt {
                corrupt_grad(&mut g);
            }
            Ok(g)
        }),
    };
    let joint_report = merge_reports(
        "joint_loss",
        &[
            (
                "denoiser",
                grad_check(f.denoiser.params(), &joint_theta, GRADCHECK_H, &mut stream)?,
            ),
            (
                "mask_encoder",
                grad_check(f.mask_net.params(), &joint_mask, GRADCHECK_H, &mut stream)?,
            ),
            (
                "signal_decoder",
                grad_check(f.sig_net.params(), &joint_sig, GRADCHECK_H, &mut stream)?,
            ),
        ],
    );

    Ok(vec![ddpm_report, vib_report, joint_report])
}

/// Print gradient reports for the three losses; error (exit code 2) unless
/// every relative error is below the tolerance.
pub fn run_gradcheck(config_path: &Path, corrupt: bool) -> Result<()> {
    let cfg = load_config(config_path)?;
    let reports = gradcheck_reports(&cfg, corrupt)?;
    let mut all_pass = true;
    for rep in &reports {
        print!("{rep}");
        let pass = rep.passes(GRADCHECK_TOL);
        println!("  -> {}", if pass { "PASS" } else { "FAIL" });
        all_pass &= pass;
    }
    if all_pass {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check exceeded tolerance {GRADCHECK_TOL}"
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeedReport {
    pub threshold: f64,
    pub steps_xddpm: Option<u64>,
    pub steps_ddpm: Option<u64>,
    /// `steps_xddpm / steps_ddpm`; null unless both runs reached the
    /// threshold.
    pub ratio: Option<f64>,
    pub trace_xddpm: String,
    pub trace_ddpm: String,
}

/// Train both modes on identical data and seeds, compare steps to the
/// configured smoothed-loss threshold, and write `speed.json` plus both
/// traces and checkpoints.
pub fn run_compare_speed(config_path: &Path, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, cfg.seed, Some(&cfg));
    let dataset = dataset_from_config(&cfg)?;

    let mut traces: Vec<(TrainMode, PathBuf, Option<u64>)> = Vec::new();
    for mode in [TrainMode::Xddpm, TrainMode::DdpmBaseline] {
        let (state, trace) = train_loop(&cfg, &dataset, mode)?;
        let tag = match mode {
            TrainMode::Xddpm => "xddpm",
            TrainMode::DdpmBaseline => "ddpm",
        };
        let trace_path = out_dir.join(format!("trace_{tag}.csv"));
        write_file(&trace_path, &trace_to_csv(&trace))?;
        manifest.add(&trace_path);
        let ckpt_path = out_dir.join(format!("checkpoint_{tag}.json"));
        Checkpoint::from_state(&cfg, mode, &state).save(&ckpt_path)?;
        manifest.add(&ckpt_path);
        traces.push((
            mode,
            trace_path,
            trace.steps_to_threshold(cfg.loss_threshold),
        ));
    }

    let steps_xddpm = traces[0].2;
    let steps_ddpm = traces[1].2;
    let ratio = match (steps_xddpm, steps_ddpm) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    };
    let report = SpeedReport {
        threshold: cfg.loss_threshold,
        steps_xddpm,
        steps_ddpm,
        ratio,
        trace_xddpm: traces[0].1.display().to_string(),
        trace_ddpm: traces[1].1.display().to_string(),
    };
    let speed_path = out_dir.join("speed.json");
    write_file(&speed_path, &serde_json::to_string_pretty(&report).unwrap())?;
    manifest.add(&speed_path);
    manifest.finish()?;
    println!(
        "steps to threshold {}: masked {:?}, baseline {:?}, ratio {:?}",
        report.threshold, report.steps_xddpm, report.steps_ddpm, report.ratio
    );
    Ok(())
}

/// Parse a samples.csv produced by `run_sample`.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|v| {
                    v.parse::<f64>().map_err(|e| {
                        Error::Config(format!("bad number '{v}' in {}: {e}", path.display()))
                    })
                })
                .collect()
        })
        .collect()
}

/// Regenerate the dataset a checkpoint was trained on.
pub fn dataset_of_checkpoint(ckpt: &Checkpoint) -> Result<SyntheticDataset> {
    dataset_from_config(&ckpt.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_csv_strips_wall_column() {
        let content =
            "step,denoise,kl,signal_mse,total,ema_denoise,wall_ms\n1,0.5,0.1,0.2,0.8,0.5,123\n";
        let stripped = trace_csv_without_wall(content);
        assert_eq!(
            stripped,
            "step,denoise,kl,signal_mse,total,ema_denoise\n1,0.5,0.1,0.2,0.8,0.5\n"
        );
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn lock_prevents_concurrent_use() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutDirLock::acquire(dir.path()).unwrap();
        let second = OutDirLock::acquire(dir.path());
        assert!(second.is_err());
        drop(lock);
        assert!(OutDirLock::acquire(dir.path()).is_ok());
    }
}
