//! Run configuration: JSON with documented defaults, unknown keys rejected,
//! every validation error naming the offending key.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{default_beta_range, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Linear,
    Nonlinear,
    Gmm,
}

/// Everything needed to regenerate a dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "defaults::dataset_n")]
    pub n: usize,
    /// Number of ground-truth relevant coordinates (linear/nonlinear).
    #[serde(default = "defaults::dataset_k")]
    pub k: usize,
    #[serde(default = "defaults::signal_noise")]
    pub signal_noise: f64,
    /// Dataset seed; derived from the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Linear,
            n: defaults::dataset_n(),
            k: defaults::dataset_k(),
            signal_noise: defaults::signal_noise(),
            seed: None,
        }
    }
}

/// Resolved run configuration. JSON keys use the short schedule/data names
/// (`T`, `D`, `d`); everything else is snake_case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(rename = "D")]
    pub d_input: usize,
    #[serde(rename = "d")]
    pub d_signal: usize,
    #[serde(rename = "T")]
    pub t_count: usize,
    pub schedule_kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: Vec<usize>,
    pub time_embed_width: usize,
    pub lambda_vib: f64,
    pub beta_ib: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub loss_threshold: f64,
    pub log_every: u64,
    pub dataset: DatasetSpec,
}

mod defaults {
    pub fn dataset_n() -> usize {
        8000
    }
    pub fn dataset_k() -> usize {
        4
    }
    pub fn signal_noise() -> f64 {
        0.1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t_count = 200;
        let (beta_start, beta_end) = default_beta_range(t_count);
        TrainConfig {
            seed: 0,
            d_input: 16,
            d_signal: 2,
            t_count,
            schedule_kind: ScheduleKind::Linear,
            beta_start,
            beta_end,
            hidden: vec![64, 64],
            time_embed_width: 16,
            lambda_vib: 1.0,
            beta_ib: 10.0,
            lr: 1e-3,
            batch_size: 64,
            total_steps: 10_000,
            loss_threshold: 3.0,
            log_every: 10,
            dataset: DatasetSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Seed for dataset generation: explicit if given, otherwise derived
    /// from the run seed.
    pub fn dataset_seed(&self) -> u64 {
        self.dataset
            .seed
            .unwrap_or_else(|| rng::mix_seed(self.seed, 0x5eed_da7a))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.d_input < 1 {
            return bad("D", format!("must be >= 1, got {}", self.d_input));
        }
        if self.d_signal < 1 || self.d_signal > self.d_input {
            return bad(
                "d",
                format!(
                    "needs 1 <= d <= D, got d={} D={}",
                    self.d_signal, self.d_input
                ),
            );
        }
        if self.t_count < 1 {
            return bad("T", format!("must be >= 1, got {}", self.t_count));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return bad(
                "beta_start/beta_end",
                format!(
                    "needs 0 < beta_start <= beta_end < 1, got {}..{}",
                    self.beta_start, self.beta_end
                ),
            );
        }
        if self.time_embed_width < 2 || !self.time_embed_width.is_multiple_of(2) {
            return bad(
                "time_embed_width",
                format!("must be even and >= 2, got {}", self.time_embed_width),
            );
        }
        if self.lambda_vib < 0.0 || !self.lambda_vib.is_finite() {
            return bad(
                "lambda_vib",
                format!("must be >= 0, got {}", self.lambda_vib),
            );
        }
        if self.beta_ib < 0.0 || !self.beta_ib.is_finite() {
            return bad("beta_ib", format!("must be >= 0, got {}", self.beta_ib));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.log_every < 1 {
            return bad("log_every", "must be >= 1".into());
        }
        if !self.loss_threshold.is_finite() && self.loss_threshold != f64::INFINITY {
            return bad(
                "loss_threshold",
                format!("must not be NaN, got {}", self.loss_threshold),
            );
        }
        if self.dataset.n < 1 {
            return bad("dataset.n", "must be >= 1".into());
        }
        match self.dataset.kind {
            DatasetKind::Gmm => {
                if self.d_input != 1 || self.d_signal != 1 {
                    return bad("dataset.kind", "gmm requires D = 1 and d = 1".into());
                }
            }
            DatasetKind::Linear | DatasetKind::Nonlinear => {
                if self.dataset.k < 1 || self.dataset.k >= self.d_input {
                    return bad(
                        "dataset.k",
                        format!(
                            "needs 1 <= k < D, got k={} D={}",
                            self.dataset.k, self.d_input
                        ),
                    );
                }
                if self.d_signal > self.dataset.k {
                    return bad(
                        "d",
                        format!(
                            "needs d <= dataset.k, got d={} k={}",
                            self.d_signal, self.dataset.k
                        ),
                    );
                }
            }
        }
        Ok(())
    }
}

/// The keys `load_config` accepts at the top level, for unknown-key errors
/// and for default notices.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "D",
    "d",
    "T",
    "schedule_kind",
    "beta_start",
    "beta_end",
    "hidden",
    "time_embed_width",
    "lambda_vib",
    "beta_ib",
    "lr",
    "batch_size",
    "total_steps",
    "loss_threshold",
    "log_every",
    "dataset",
];

/// Parse a config file. Unknown keys are rejected; absent keys fall back to
/// the documented defaults and are reported in the returned notice list.
/// The default `beta_start`/`beta_end` depend on the resolved `T`.
pub fn parse_config(text: &str, origin: &Path) -> Result<(TrainConfig, Vec<String>)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("config root must be a JSON object".into()))?;

    let known: BTreeSet<&str> = KNOWN_KEYS.iter().copied().collect();
    for key in obj.keys() {
        if !known.contains(key.as_str()) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
    }

    let mut cfg = TrainConfig::default();
    let mut notices: Vec<String> = Vec::new();
    let mut explicit_beta = (false, false);

    macro_rules! field {
        ($key:literal, $target:expr) => {
            match obj.get($key) {
                Some(v) => {
                    $target = serde_json::from_value(v.clone())
                        .map_err(|e| Error::Config(format!("{}: {e}", $key)))?;
                }
                None => notices.push(format!("using default for '{}'", $key)),
            }
        };
    }

    field!("seed", cfg.seed);
    field!("D", cfg.d_input);
    field!("d", cfg.d_signal);
    field!("T", cfg.t_count);
    field!("schedule_kind", cfg.schedule_kind);
    field!("hidden", cfg.hidden);
    field!("time_embed_width", cfg.time_embed_width);
    field!("lambda_vib", cfg.lambda_vib);
    field!("beta_ib", cfg.beta_ib);
    field!("lr", cfg.lr);
    field!("batch_size", cfg.batch_size);
    field!("total_steps", cfg.total_steps);
    field!("loss_threshold", cfg.loss_threshold);
    field!("log_every", cfg.log_every);
    field!("dataset", cfg.dataset);
    if let Some(v) = obj.get("beta_start") {
        cfg.beta_start = serde_json::from_value(v.clone())
            .map_err(|e| Error::Config(format!("beta_start: {e}")))?;
        explicit_beta.0 = true;
    }
    if let Some(v) = obj.get("beta_end") {
        cfg.beta_end = serde_json::from_value(v.clone())
            .map_err(|e| Error::Config(format!("beta_end: {e}")))?;
        explicit_beta.1 = true;
    }

    // beta defaults track the configured T
    let (b0, b1) = default_beta_range(cfg.t_count);
    if !explicit_beta.0 {
        cfg.beta_start = b0;
        notices.push("using default for 'beta_start'".into());
    }
    if !explicit_beta.1 {
        cfg.beta_end = b1;
        notices.push("using default for 'beta_end'".into());
    }

    cfg.validate()?;
    Ok((cfg, notices))
}

/// Load and validate a config file, logging default notices to stderr.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (cfg, notices) = parse_config(&text, path)?;
    for n in &notices {
        eprintln!("note: {n}");
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(TrainConfig, Vec<String>)> {
        parse_config(text, Path::new("test.json"))
    }

    #[test]
    fn empty_object_gives_all_defaults() {
        let (cfg, notices) = parse("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert!(notices.len() >= 17);
    }

    #[test]
    fn negative_lambda_names_the_key() {
        let err = parse(r#"{"lambda_vib": -1}"#).unwrap_err().to_string();
        assert!(err.contains("lambda_vib"), "{err}");
    }

    #[test]
    fn partial_config_keeps_other_defaults() {
        let (cfg, _) = parse(r#"{"T": 100, "D": 16}"#).unwrap();
        assert_eq!(cfg.t_count, 100);
        assert_eq!(cfg.d_input, 16);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
        // beta defaults rescale with T
        let (b0, b1) = default_beta_range(100);
        assert_eq!(cfg.beta_start, b0);
        assert_eq!(cfg.beta_end, b1);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse(r#"{"learning_rate": 0.1}"#).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(parse("{").is_err());
    }

    #[test]
    fn gmm_requires_scalar_dims() {
        let err = parse(r#"{"dataset": {"kind": "gmm"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("gmm"), "{err}");
        let ok = parse(r#"{"D": 1, "d": 1, "dataset": {"kind": "gmm"}}"#);
        assert!(ok.is_ok());
    }

    #[test]
    fn dataset_k_bounds_checked() {
        let err = parse(r#"{"D": 4, "d": 1, "dataset": {"kind": "linear", "k": 4}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("dataset.k"), "{err}");
    }

    #[test]
    fn dataset_seed_defaults_deterministically() {
        let (a, _) = parse(r#"{"seed": 5}"#).unwrap();
        let (b, _) = parse(r#"{"seed": 5}"#).unwrap();
        assert_eq!(a.dataset_seed(), b.dataset_seed());
        let (c, _) = parse(r#"{"seed": 6}"#).unwrap();
        assert_ne!(a.dataset_seed(), c.dataset_seed());
        let (d, _) = parse(r#"{"dataset": {"kind": "linear", "seed": 99}}"#).unwrap();
        assert_eq!(d.dataset_seed(), 99);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        // the serialized form uses the short key names
        assert!(text.contains("\"D\":16"));
        assert!(text.contains("\"T\":200"));
    }
}
