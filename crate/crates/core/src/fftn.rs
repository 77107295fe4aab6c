//! Row-major N-dimensional FFT built from 1D `rustfft` passes, with
//! pruning for zero-padded convolution: lines that are known to be zero
//! (forward) or whose output is discarded (inverse) are skipped.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

/// Per-call scratch for [`FftNd`].
#[derive(Debug, Default)]
pub(crate) struct FftScratch {
    lines: Vec<C64>,
    fft: Vec<C64>,
}

/// Number of columns gathered per batch on strided axes.
const BATCH: usize = 32;

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { shape: shape.to_vec(), forward, inverse }
    }

    /// Forward transform. `support[q]` bounds the non-zero input along axis
    /// `q`; pass the full shape for an unpruned transform.
    pub fn forward(&self, data: &mut [C64], support: &[usize], scratch: &mut FftScratch) {
        for q in (0..self.shape.len()).rev() {
            self.axis_pass(data, q, support, &self.forward[q], scratch);
        }
    }

    /// Unnormalized inverse transform; only output inside `support` is
    /// guaranteed to be correct.
    pub fn inverse(&self, data: &mut [C64], support: &[usize], scratch: &mut FftScratch) {
        for q in 0..self.shape.len() {
            self.axis_pass(data, q, support, &self.inverse[q], scratch);
        }
    }

    /// Transforms every line along axis `q` whose indices on axes `< q` lie
    /// inside `support`.
    fn axis_pass(
        &self,
        data: &mut [C64],
        q: usize,
        support: &[usize],
        fft: &Arc<dyn Fft<f64>>,
        scratch: &mut FftScratch,
    ) {
        let n = self.shape[q];
        if n == 1 {
            return;
        }
        let inner: usize = self.shape[q + 1..].iter().product();
        let block = n * inner;
        let outer_axes = &self.shape[..q];
        let outer_support = &support[..q];
        let scratch_len = fft.get_inplace_scratch_len();
        if scratch.fft.len() < scratch_len {
            scratch.fft.resize(scratch_len, C64::new(0.0, 0.0));
        }

        let mut idx = vec![0usize; q];
        loop {
            if idx.iter().zip(outer_support).all(|(i, s)| i < s) {
                let base = outer_offset(&idx, outer_axes) * block;
                let chunk = &mut data[base..base + block];
                if inner == 1 {
                    fft.process_with_scratch(chunk, &mut scratch.fft[..scratch_len]);
                } else {
                    let mut col = 0;
                    while col < inner {
                        let width = BATCH.min(inner - col);
                        scratch.lines.resize(width * n, C64::new(0.0, 0.0));
                        for k in 0..n {
                            let row = &chunk[k * inner + col..k * inner + col + width];
                            for (c, v) in row.iter().enumerate() {
                                scratch.lines[c * n + k] = *v;
                            }
                        }
                        fft.process_with_scratch(&mut scratch.lines[..width * n], &mut scratch.fft[..scratch_len]);
                        for k in 0..n {
                            let row = &mut chunk[k * inner + col..k * inner + col + width];
                            for (c, v) in row.iter_mut().enumerate() {
                                *v = scratch.lines[c * n + k];
                            }
                        }
                        col += width;
                    }
                }
            }
            if !advance(&mut idx, outer_axes) {
                break;
            }
        }
    }
}

fn outer_offset(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Odometer increment; returns false after the last index.
fn advance(idx: &mut [usize], shape: &[usize]) -> bool {
    for q in (0..idx.len()).rev() {
        idx[q] += 1;
        if idx[q] < shape[q] {
            return true;
        }
        idx[q] = 0;
    }
    false
}

/// Smallest `n >= min` whose only prime factors are 2, 3 and 5.
pub(crate) fn smooth_size(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}
