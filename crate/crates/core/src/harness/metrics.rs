//! Image-quality metrics on speed-of-sound maps.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("maps differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("mask has {got} entries, map has {expected}")]
    MaskMismatch { expected: usize, got: usize },
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("every axis needs at least {WINDOW} cells for SSIM, shape {0:?}")]
    TooSmall(Vec<usize>),
}

pub const WINDOW: usize = 7;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Parameters recorded alongside every SSIM value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMean {
    pub name: String,
    pub cells: usize,
    pub recon: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub ssim: f64,
    pub ssim_params: SsimParams,
    pub region_means: Vec<RegionMean>,
}

fn check(recon: &[f64], truth: &[f64], shape: &[usize]) -> Result<(), MetricsError> {
    let n: usize = shape.iter().product();
    if recon.len() != n || truth.len() != n {
        return Err(MetricsError::ShapeMismatch(vec![recon.len()], vec![truth.len(), n]));
    }
    Ok(())
}

fn check_mask(mask: &[bool], n: usize) -> Result<(), MetricsError> {
    if mask.len() != n {
        return Err(MetricsError::MaskMismatch { expected: n, got: mask.len() });
    }
    if !mask.contains(&true) {
        return Err(MetricsError::EmptyMask);
    }
    Ok(())
}

/// Root-mean-square difference, optionally over the masked cells only.
pub fn rmse(recon: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    if recon.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch(vec![recon.len()], vec![truth.len()]));
    }
    if let Some(m) = mask {
        check_mask(m, recon.len())?;
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for n in 0..recon.len() {
        if mask.is_none_or(|m| m[n]) {
            sum += (recon[n] - truth[n]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok((sum / count as f64).sqrt())
}

pub fn masked_mean(values: &[f64], mask: &[bool]) -> Result<f64, MetricsError> {
    check_mask(mask, values.len())?;
    let (s, c) = values.iter().zip(mask).filter(|p| *p.1).fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    Ok(s / c as f64)
}

/// Normalized 1D Gaussian weights of length `WINDOW`.
pub fn gaussian_weights() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = (-(i as f64 - r).powi(2) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

/// Weighted average over every full window, separable along each axis.
/// Output has shape `shape[q] - WINDOW + 1` per axis.
fn window_mean(field: &[f64], shape: &[usize], w: &[f64; WINDOW]) -> (Vec<f64>, Vec<usize>) {
    let mut data = field.to_vec();
    let mut cur = shape.to_vec();
    for q in 0..cur.len() {
        let outer: usize = cur[..q].iter().product();
        let inner: usize = cur[q + 1..].iter().product();
        let (n_in, n_out) = (cur[q], cur[q] - WINDOW + 1);
        let mut out = vec![0.0; outer * n_out * inner];
        for a in 0..outer {
            for i in 0..n_out {
                for b in 0..inner {
                    let mut s = 0.0;
                    for (t, wt) in w.iter().enumerate() {
                        s += wt * data[(a * n_in + i + t) * inner + b];
                    }
                    out[(a * n_out + i) * inner + b] = s;
                }
            }
        }
        data = out;
        cur[q] = n_out;
    }
    (data, cur)
}

/// Mean SSIM over all full Gaussian windows; the dynamic range is the truth
/// max minus min (1 for a constant truth).
pub fn ssim(recon: &[f64], truth: &[f64], shape: &[usize]) -> Result<(f64, SsimParams), MetricsError> {
    check(recon, truth, shape)?;
    if shape.iter().any(|&n| n < WINDOW) {
        return Err(MetricsError::TooSmall(shape.to_vec()));
    }
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let (c1, c2) = ((K1 * range).powi(2), (K2 * range).powi(2));
    let w = gaussian_weights();
    let prod = |f: &dyn Fn(f64, f64) -> f64| recon.iter().zip(truth).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mx, _) = window_mean(recon, shape, &w);
    let (my, _) = window_mean(truth, shape, &w);
    let (mxx, _) = window_mean(&prod(&|x, _| x * x), shape, &w);
    let (myy, _) = window_mean(&prod(&|_, y| y * y), shape, &w);
    let (mxy, _) = window_mean(&prod(&|x, y| x * y), shape, &w);
    let mut total = 0.0;
    for n in 0..mx.len() {
        let (vx, vy, cxy) = (mxx[n] - mx[n] * mx[n], myy[n] - my[n] * my[n], mxy[n] - mx[n] * my[n]);
        total += (2.0 * mx[n] * my[n] + c1) * (2.0 * cxy + c2) / ((mx[n] * mx[n] + my[n] * my[n] + c1) * (vx + vy + c2));
    }
    let params = SsimParams { window: WINDOW, sigma: SIGMA, k1: K1, k2: K2, dynamic_range: range };
    Ok((total / mx.len() as f64, params))
}

/// RMSE (over `mask` if given), SSIM over the whole map, and means over
/// each named region.
pub fn evaluate(recon: &[f64], truth: &[f64], shape: &[usize], mask: Option<&[bool]>, regions: &[(String, Vec<bool>)]) -> Result<Metrics, MetricsError> {
    check(recon, truth, shape)?;
    let rmse = rmse(recon, truth, mask)?;
    let (ssim, ssim_params) = ssim(recon, truth, shape)?;
    let region_means = regions
        .iter()
        .map(|(name, m)| {
            Ok(RegionMean { name: name.clone(), cells: m.iter().filter(|b| **b).count(), recon: masked_mean(recon, m)?, truth: masked_mean(truth, m)? })
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(Metrics { rmse, ssim, ssim_params, region_means })
}
