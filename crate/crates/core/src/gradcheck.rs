//! Central-difference gradient checking.
//!
//! Analytic gradients for every loss in this crate are hand-written, so each
//! one is validated against `(L(p+h) - L(p-h)) / 2h` on a random coordinate
//! subset per block. Relative error uses `|a-n| / max(1e-8, |a|, |n|)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::RngStream;

/// Coordinates probed per block (all coordinates if the block is smaller).
pub const PROBES_PER_BLOCK: usize = 200;

pub type ValueFn<'a> = Box<dyn Fn(&ParamVector) -> Result<f64> + 'a>;
pub type GradFn<'a> = Box<dyn Fn(&ParamVector) -> Result<Vec<f64>> + 'a>;

/// A named scalar loss of the parameters, with its analytic gradient.
pub struct LossProbe<'a> {
    pub name: &'a str,
    pub value: ValueFn<'a>,
    pub grad: GradFn<'a>,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub loss_name: String,
    pub per_block_max_rel_err: BTreeMap<String, f64>,
    pub global_max_rel_err: f64,
    pub h: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.global_max_rel_err < tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{}: global max rel err {:.3e} (h = {:.1e})",
            self.loss_name, self.global_max_rel_err, self.h
        )?;
        for (name, err) in &self.per_block_max_rel_err {
            writeln!(f, "  {name}: {err:.3e}")?;
        }
        Ok(())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (1e-8f64).max(a.abs()).max(n.abs())
}

/// Check `probe`'s analytic gradient at `params` against central differences
/// with step `h`, probing a seeded random subset of coordinates per block.
pub fn grad_check(
    params: &ParamVector,
    probe: &LossProbe,
    h: f64,
    stream: &mut RngStream,
) -> Result<GradReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "grad_check step h = {h} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = (probe.grad)(params)?;
    if analytic.len() != params.len() {
        return Err(Error::DimMismatch {
            expected: params.len(),
            got: analytic.len(),
            context: format!("analytic gradient of {}", probe.name),
        });
    }

    let mut per_block = BTreeMap::new();
    let mut global: f64 = 0.0;
    let mut work = params.clone();

    let blocks: Vec<(String, usize, usize)> = params
        .layout()
        .iter_offsets()
        .map(|(b, off)| (b.name.clone(), off, b.len()))
        .collect();

    for (name, off, len) in blocks {
        if analytic[off..off + len].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "analytic gradient of {} in block '{name}'",
                probe.name
            )));
        }
        let coords: Vec<usize> = if len <= PROBES_PER_BLOCK {
            (0..len).collect()
        } else {
            stream.choose_indices(len, PROBES_PER_BLOCK)
        };
        let mut block_max: f64 = 0.0;
        for c in coords {
            let idx = off + c;
            let orig = params.values()[idx];
            work.values_mut()[idx] = orig + h;
            let plus = (probe.value)(&work)?;
            work.values_mut()[idx] = orig - h;
            let minus = (probe.value)(&work)?;
            work.values_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {} at finite-difference probe in block '{name}'",
                    probe.name
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            block_max = block_max.max(rel_err(analytic[idx], numeric));
        }
        global = global.max(block_max);
        per_block.insert(name, block_max);
    }

    Ok(GradReport {
        loss_name: probe.name.to_string(),
        per_block_max_rel_err: per_block,
        global_max_rel_err: global,
        h,
    })
}

/// Merge per-network reports of one loss into a single report, prefixing
/// block names with each part's label.
pub fn merge_reports(loss_name: &str, parts: &[(&str, GradReport)]) -> GradReport {
    let mut per_block = BTreeMap::new();
    let mut global: f64 = 0.0;
    let mut h = 0.0;
    for (label, rep) in parts {
        h = rep.h;
        global = global.max(rep.global_max_rel_err);
        for (name, err) in &rep.per_block_max_rel_err {
            per_block.insert(format!("{label}.{name}"), *err);
        }
    }
    GradReport {
        loss_name: loss_name.to_string(),
        per_block_max_rel_err: per_block,
        global_max_rel_err: global,
        h,
    }
}
