//! Ancestor selection.

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Independent categorical draw per particle.
    #[default]
    Multinomial,
    /// One shared offset, stratified over `K` equal slices.
    Systematic,
}

/// `log Σ exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Normalized weights from log weights.
pub fn normalize(log_w: &[f64]) -> Result<Vec<f64>, Error> {
    let z = log_sum_exp(log_w);
    if !z.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize weights with log-sum {z}")));
    }
    Ok(log_w.iter().map(|v| (v - z).exp()).collect())
}

/// `(Σw)² / Σw²` from log weights.
pub fn ess(log_w: &[f64]) -> f64 {
    match normalize(log_w) {
        Ok(w) => 1.0 / w.iter().map(|v| v * v).sum::<f64>(),
        Err(_) => 0.0,
    }
}

/// Index `i` with `cdf[i-1] <= u < cdf[i]`, skipping zero-weight entries.
fn search(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    let mut i = i.min(cdf.len() - 1);
    // Round-off may leave the last cumulative sum below u; step back to mass.
    while i > 0 && cdf[i] == cdf[i - 1] {
        i -= 1;
    }
    i
}

/// Ancestors from one uniform per particle (`uniforms[k]` in `[0, 1)`).
pub fn resample(log_w: &[f64], uniforms: &[f64], scheme: Resampling) -> Result<Vec<usize>, Error> {
    let w = normalize(log_w)?;
    let mut cdf = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for v in &w {
        acc += v;
        cdf.push(acc);
    }
    let k = uniforms.len();
    Ok(match scheme {
        Resampling::Multinomial => uniforms.iter().map(|&u| search(&cdf, u * acc)).collect(),
        Resampling::Systematic => (0..k).map(|i| search(&cdf, (i as f64 + uniforms[0]) / k as f64 * acc)).collect(),
    })
}

/// One categorical draw.
pub fn categorical(log_w: &[f64], u: f64) -> Result<usize, Error> {
    Ok(resample(log_w, &[u], Resampling::Multinomial)?[0])
}
