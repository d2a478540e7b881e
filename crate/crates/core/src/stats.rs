//! Plain sample statistics and the Kolmogorov-Smirnov normality statistic.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Central moment of order `k` (n denominator).
fn central_moment(xs: &[f64], m: f64, k: u32) -> f64 {
    xs.iter().map(|x| (x - m).powi(k as i32)).sum::<f64>() / xs.len() as f64
}

pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let m2 = central_moment(xs, m, 2);
    central_moment(xs, m, 3) / m2.powf(1.5)
}

pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let m2 = central_moment(xs, m, 2);
    central_moment(xs, m, 4) / (m2 * m2) - 3.0
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    // unwrap: N(0,1) parameters are always valid
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Two-sided KS statistic of `samples` against the standard normal CDF:
/// `sup_x |F_n(x) - Phi(x)|`. With `standardize`, the sample mean is
/// subtracted and the sample standard deviation divided out first.
pub fn ks_statistic(samples: &[f64], standardize: bool) -> Result<f64> {
    if samples.len() < 20 {
        return Err(Error::InvalidArgument(format!(
            "ks_statistic needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    let mut xs = samples.to_vec();
    if standardize {
        let m = mean(&xs);
        let sd = variance(&xs).sqrt();
        if sd == 0.0 || !sd.is_finite() {
            return Err(Error::InvalidArgument(
                "ks_statistic: zero or non-finite sample variance under standardize".into(),
            ));
        }
        for x in &mut xs {
            *x = (*x - m) / sd;
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample in ks_statistic"));
    let n = xs.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let phi = standard_normal_cdf(x);
        let lo = phi - i as f64 / n;
        let hi = (i + 1) as f64 / n - phi;
        sup = sup.max(lo).max(hi);
    }
    Ok(sup)
}
